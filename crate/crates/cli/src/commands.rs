use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use manip2nav_core::camera::CameraFile;
use manip2nav_core::io;
use manip2nav_core::kinematics::{BasePose, KinematicChain};
use manip2nav_core::manip_map::{
    build_workspace_map, project_to_pixel_prior, Aabb, ActionGrid, MapBuildOptions, DEFAULT_PRIOR_FLOOR,
};
use manip2nav_core::metrics::{
    aggregate_and_export, move_distance_curve, step_edges, success_rate_curve, EpisodeRecord, NamedCurve, RunSummary,
};
use manip2nav_core::rl::{evaluate, read_log, train as train_run, QFunction, TrainOptions, Variant};
use manip2nav_core::simenv::{TaskConfig, TaskEnv};
use manip2nav_core::Error;

use crate::config::LoadedRun;
use crate::{CompareArgs, EvalArgs, Failure, MapgenArgs, TrainArgs};

type Outcome = Result<(), Failure>;

fn config<T>(r: anyhow::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Config)
}

fn runtime<T>(r: anyhow::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Runtime)
}

fn parse_region(text: &str) -> anyhow::Result<Aabb> {
    let v: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("region {text:?} is not six numbers"))?;
    if v.len() != 6 {
        bail!("region {text:?} needs six numbers, got {}", v.len());
    }
    Ok(Aabb::new([v[0], v[1], v[2]], [v[3], v[4], v[5]]))
}

pub fn mapgen(args: MapgenArgs) -> Outcome {
    let (chain, camera, task, region, opts, grid) = config((|| {
        let chain = KinematicChain::load(&args.chain)?;
        let camera = CameraFile::load(&args.camera)?;
        camera.intrinsics()?;
        let task = args.task.as_deref().map(TaskConfig::load).transpose()?;
        let region = args.region.as_deref().map(parse_region).transpose()?.unwrap_or_else(Aabb::default_region);
        if !(region.volume() > 0.0) {
            bail!("region must have positive volume");
        }
        if !(args.cell_size > 0.0) || args.samples == 0 {
            bail!("cell size and samples must be positive");
        }
        let stride = args
            .stride
            .or(task.as_ref().map(|t| t.action_stride))
            .unwrap_or(TaskConfig::new(manip2nav_core::simenv::TaskKind::Reach).action_stride);
        let grid = ActionGrid::new(camera.width, camera.height, stride)?;
        let opts = MapBuildOptions {
            cell_size: args.cell_size,
            samples_per_cell: args.samples,
            seed: args.seed,
            ..MapBuildOptions::default()
        };
        Ok((chain, camera, task, region, opts, grid))
    })())?;

    runtime((|| {
        let map = build_workspace_map(&chain, &region, &opts)?;
        io::ensure_dir(&args.out)?;
        map.save(&args.out.join("map.json"))?;
        println!("feasible cells: {} of {}", map.feasible_count(), map.len());
        match map.score_range() {
            Some((lo, hi)) => println!("score range: [{lo:.6}, {hi:.6}]"),
            None => println!("score range: none"),
        }
        let base = BasePose::default();
        match project_to_pixel_prior(&map, &camera.camera_at(&base)?, &base, grid, DEFAULT_PRIOR_FLOOR) {
            Ok(prior) => {
                io::write_bytes(&args.out.join("prior.csv"), prior.to_csv().as_bytes())?;
                let rgb = match &task {
                    Some(t) => {
                        let mut env = TaskEnv::new(t.clone(), chain.clone(), &camera)?;
                        prior.overlay_rgb(&env.reset(args.seed).rgb)
                    }
                    None => prior.heatmap_rgb(),
                };
                io::write_ppm(&args.out.join("prior_overlay.ppm"), camera.width, camera.height, &rgb)?;
                println!(
                    "prior: {} of {} bins supported",
                    prior.support.iter().filter(|s| **s).count(),
                    prior.len()
                );
            }
            Err(Error::EmptyPrior) => eprintln!("warning: no feasible cell projects into the image; prior not written"),
            Err(e) => return Err(e.into()),
        }
        Ok(())
    })())
}

pub fn train(args: TrainArgs) -> Outcome {
    let (run, prior, variants, seeds) = config((|| {
        let mut run = LoadedRun::load(&args.config)?;
        if let Some(out) = &args.out {
            run.out = out.clone();
        }
        if let Some(steps) = args.total_steps {
            run.trainer.total_steps = steps;
        }
        let variants = match args.variant {
            Some(v) => vec![v],
            None => run.variants.clone(),
        };
        let seeds = match args.seed {
            Some(s) => vec![s],
            None => run.seeds.clone(),
        };
        let prior = if variants.iter().any(|v| v.uses_prior()) {
            let p = run.prior()?;
            if p.is_none() {
                let v = variants.iter().find(|v| v.uses_prior()).expect("checked above");
                bail!("variant {v} needs a map file in {}", run.path.display());
            }
            p
        } else {
            None
        };
        for v in &variants {
            run.setup(*v, prior.as_ref())?;
        }
        Ok((run, prior, variants, seeds))
    })())?;

    runtime((|| {
        let mut summaries = Vec::new();
        for &variant in &variants {
            let setup = run.setup(variant, prior.as_ref())?;
            for &seed in &seeds {
                let dir = run.run_dir(variant, seed);
                let opts = TrainOptions {
                    out_dir: Some(dir.clone()),
                    resume: args.resume,
                    stop_after: args.stop_after,
                };
                let outcome = train_run(&run.trainer, variant, seed, &setup, &opts)
                    .with_context(|| format!("training {variant} seed {seed}"))?;
                let s = &outcome.summary;
                println!(
                    "{} {} seed {}: steps {} episodes {} success {:.3} move {:.3} threshold {}{}",
                    s.task,
                    s.variant,
                    s.seed,
                    s.total_steps,
                    s.episodes,
                    s.final_success_rate,
                    s.final_mean_move_distance,
                    s.steps_to_threshold.map_or("-".to_string(), |t| t.to_string()),
                    if outcome.completed { "" } else { " (stopped)" },
                );
                summaries.push(outcome.summary);
            }
        }
        let task_dir = run.out.join(run.task.task.name());
        io::write_json(&task_dir.join("summaries.json"), &summaries)?;
        Ok(())
    })())
}

pub fn eval(args: EvalArgs) -> Outcome {
    let (q, variant, setup, run) = config((|| {
        if args.episodes == 0 {
            bail!("--episodes must be at least 1");
        }
        let mut run = LoadedRun::load(&args.config)?;
        if let Some(task) = args.task {
            run.task.task = task;
        }
        let (q, meta) = QFunction::load(&args.checkpoint)?;
        let variant = match (args.variant, meta.variant.as_deref()) {
            (Some(v), _) => v,
            (None, Some(name)) => name.parse()?,
            (None, None) => bail!("{} records no variant; pass --variant", args.checkpoint.display()),
        };
        let grid = run.grid()?;
        let expected = (run.trainer.feature.len + grid.len(), grid.len());
        if (q.arch.input(), q.arch.output()) != expected {
            return Err(anyhow!(Error::ShapeMismatch {
                expected: format!("input {} / output {} (config {})", expected.0, expected.1, args.config.display()),
                found: format!(
                    "input {} / output {} (checkpoint {})",
                    q.arch.input(),
                    q.arch.output(),
                    args.checkpoint.display()
                ),
            }));
        }
        // Greedy evaluation never samples the prior.
        let mut setup = run.setup(Variant::Ddqn, None)?;
        setup.task = run.task.clone();
        Ok((q, variant, setup, run))
    })())?;

    runtime((|| {
        let report = evaluate(&q, variant, &setup, &run.trainer.feature, args.episodes, args.seed)?;
        let json = serde_json::to_string_pretty(&report)?;
        println!("{json}");
        let out = args.out.clone().unwrap_or_else(|| {
            let dir = args.checkpoint.parent().unwrap_or(Path::new("."));
            dir.join(format!("eval_{}_seed{}.json", report.task, args.seed))
        });
        io::write_json(&out, &report)?;
        Ok(())
    })())
}

struct RunData {
    summary: RunSummary,
    records: Vec<EpisodeRecord>,
}

pub fn compare(args: CompareArgs) -> Outcome {
    let runs = config((|| {
        if args.window == 0 || args.bins == 0 {
            bail!("--window and --bins must be positive");
        }
        let mut task: Option<String> = None;
        let mut runs: Vec<(Variant, RunData)> = Vec::new();
        for path in &args.configs {
            let run = LoadedRun::load(path)?;
            let name = run.task.task.name().to_string();
            match &task {
                Some(t) if *t != name => bail!("{} is a {name} run, earlier runs are {t}", path.display()),
                _ => task = Some(name),
            }
            for &variant in &run.variants {
                for &seed in &run.seeds {
                    let dir = run.run_dir(variant, seed);
                    let summary = RunSummary::load(&dir.join("summary.json"))?;
                    let records = read_log(&dir.join("log.csv"))?;
                    runs.push((variant, RunData { summary, records }));
                }
            }
        }
        if runs.len() < 2 {
            bail!("need at least two run summaries, found {}", runs.len());
        }
        Ok(runs)
    })())?;

    runtime((|| {
        // Each (config, seed) run is its own series.
        let mut by_variant: BTreeMap<Variant, Vec<EpisodeRecord>> = BTreeMap::new();
        let mut thresholds: BTreeMap<Variant, Vec<(u64, Option<u64>, u64)>> = BTreeMap::new();
        for (series, (variant, data)) in runs.iter().enumerate() {
            by_variant.entry(*variant).or_default().extend(data.records.iter().map(|r| EpisodeRecord {
                seed: series as u64,
                ..r.clone()
            }));
            thresholds.entry(*variant).or_default().push((
                data.summary.seed,
                data.summary.steps_to_threshold,
                data.summary.total_steps,
            ));
        }
        let all: Vec<EpisodeRecord> = by_variant.values().flatten().cloned().collect();
        let edges = step_edges(&all, args.bins);
        let mut curves = Vec::new();
        for (variant, records) in &by_variant {
            curves.push(NamedCurve {
                variant: variant.name().to_string(),
                metric: "success_rate".into(),
                curve: success_rate_curve(records, args.window, &edges),
            });
            curves.push(NamedCurve {
                variant: variant.name().to_string(),
                metric: "move_distance".into(),
                curve: move_distance_curve(records, args.window, &edges),
            });
        }
        aggregate_and_export(&curves, &args.out)?;
        let mut table = String::from("variant,runs,reached,mean_steps_to_threshold\n");
        println!("{:<10} {:>5} {:>8} {:>12}", "variant", "runs", "reached", "mean steps");
        for (variant, rows) in &thresholds {
            let reached: Vec<u64> = rows.iter().filter_map(|r| r.1).collect();
            // Runs that never reach the threshold count at their full length.
            let mean = rows.iter().map(|r| r.1.unwrap_or(r.2) as f64).sum::<f64>() / rows.len() as f64;
            table.push_str(&format!("{},{},{},{}\n", variant.name(), rows.len(), reached.len(), mean));
            println!("{:<10} {:>5} {:>8} {:>12.1}", variant.name(), rows.len(), reached.len(), mean);
        }
        io::write_bytes(&args.out.join("steps_to_threshold.csv"), table.as_bytes())?;
        Ok(())
    })())
}
