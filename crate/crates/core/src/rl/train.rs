//! Lock-step rollout over several environments feeding one learner, plus
//! greedy evaluation.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::policy::{loss_and_grad, select_action, LossConfig};
use super::qnet::{Architecture, CheckpointMeta, QFunction};
use super::replay::{EncodedState, ReplayBuffer, Transition};
use super::{TrainerConfig, Variant};
use crate::affordance::{encode_state, extract_affordance, mask_to_bins, FeatureSpec};
use crate::camera::CameraFile;
use crate::error::{Error, Result};
use crate::io;
use crate::kinematics::KinematicChain;
use crate::manip_map::{ActionGrid, PixelPrior};
use crate::metrics::{EpisodeRecord, RunSummary};
use crate::seeding::{split_seed, stream};
use crate::simenv::{Observation, StepResult, TaskConfig, TaskEnv, TaskKind};

/// Everything a run needs besides the trainer settings.
#[derive(Clone, Debug)]
pub struct TrainSetup {
    pub task: TaskConfig,
    pub chain: KinematicChain,
    pub camera: CameraFile,
    pub prior: Option<PixelPrior>,
}

impl TrainSetup {
    pub fn grid(&self) -> Result<ActionGrid> {
        ActionGrid::new(self.camera.width, self.camera.height, self.task.action_stride)
    }

    pub fn env(&self) -> Result<TaskEnv> {
        TaskEnv::new(self.task.clone(), self.chain.clone(), &self.camera)
    }

    pub fn architecture(&self, cfg: &TrainerConfig) -> Result<Architecture> {
        let mut layers = vec![cfg.feature.len + self.grid()?.len()];
        layers.extend(&cfg.hidden);
        layers.push(self.grid()?.len());
        Architecture::new(layers)
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Where checkpoints, logs and the summary go; nothing is written if absent.
    pub out_dir: Option<PathBuf>,
    /// Continue from `state.json` and `qnet.bin` in `out_dir` when present.
    pub resume: bool,
    /// Stop (as if interrupted) once this many global steps are done.
    pub stop_after: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub summary: RunSummary,
    pub records: Vec<EpisodeRecord>,
    pub q: QFunction,
    /// Actions outside a non-empty affordance candidate set.
    pub mask_violations: u64,
    /// False when the run stopped early because of `stop_after`.
    pub completed: bool,
}

pub fn encode(obs: &Observation, task: TaskKind, grid: &ActionGrid, feature: &FeatureSpec) -> Result<EncodedState> {
    Ok(EncodedState {
        feature: encode_state(obs, feature).values,
        aff_bins: mask_to_bins(&extract_affordance(obs, task), grid)?,
    })
}

const STATE_SCHEMA: &str = "trainstate-v1";
const LOG_HEADER: &str = "global_step,episode,variant,seed,success,move_distance,reward,loss,kl,epsilon\n";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TrainState {
    schema: String,
    task: String,
    variant: Variant,
    seed: u64,
    global_step: u64,
    episodes: u64,
    updates: u64,
}

fn check_setup(cfg: &TrainerConfig, variant: Variant, setup: &TrainSetup) -> Result<()> {
    cfg.validate()?;
    setup.task.validate()?;
    match (variant.uses_prior(), &setup.prior) {
        (true, None) => return Err(Error::Config(format!("variant {variant} needs a manipulability prior"))),
        (false, Some(_)) => return Err(Error::Config(format!("variant {variant} takes no prior"))),
        _ => {}
    }
    if let Some(p) = &setup.prior {
        let grid = setup.grid()?;
        if p.grid != grid {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{} bins", grid.bins_x(), grid.bins_y()),
                found: format!("{}x{} bins", p.grid.bins_x(), p.grid.bins_y()),
            });
        }
    }
    Ok(())
}

/// Episode records of a training log written by [`train`].
pub fn read_log(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let bad = || Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            column: 0,
            message: "malformed log row".into(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(bad());
        }
        records.push(EpisodeRecord {
            global_step: f[0].parse().map_err(|_| bad())?,
            episode: f[1].parse().map_err(|_| bad())?,
            variant: f[2].to_string(),
            seed: f[3].parse().map_err(|_| bad())?,
            success: f[4] == "1",
            move_distance: f[5].parse().map_err(|_| bad())?,
            reward: f[6].parse().map_err(|_| bad())?,
        });
    }
    Ok(records)
}

struct Worker {
    env: TaskEnv,
    env_rng: ChaCha8Rng,
    actor_rng: ChaCha8Rng,
    state: Arc<EncodedState>,
    episode_return: f64,
}

fn worker_rng(seed: u64, stream_id: u64, start_step: u64) -> ChaCha8Rng {
    let base = split_seed(seed, stream_id);
    ChaCha8Rng::seed_from_u64(if start_step == 0 { base } else { split_seed(base, start_step) })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Runs one (variant, seed) training job.
pub fn train(cfg: &TrainerConfig, variant: Variant, seed: u64, setup: &TrainSetup, opts: &TrainOptions) -> Result<TrainOutcome> {
    check_setup(cfg, variant, setup)?;
    let task = setup.task.task;
    let grid = setup.grid()?;
    let arch = setup.architecture(cfg)?;
    let prior = setup.prior.as_ref();
    let meta = CheckpointMeta {
        variant: Some(variant.name().to_string()),
        task: Some(task.name().to_string()),
        feature_len: Some(cfg.feature.len),
        global_step: 0,
    };

    let mut q = QFunction::init(arch.clone(), split_seed(seed, stream::NETWORK_INIT));
    let mut global_step = 0u64;
    let mut episodes = 0u64;
    let mut updates = 0u64;
    let mut records = Vec::new();
    let mut log = String::from(LOG_HEADER);

    if let (true, Some(dir)) = (opts.resume, &opts.out_dir) {
        let state_path = dir.join("state.json");
        if state_path.exists() {
            let state: TrainState = io::read_json(&state_path)?;
            if state.variant != variant || state.seed != seed || state.task != task.name() {
                return Err(Error::Config(format!("{} belongs to a different run", state_path.display())));
            }
            let (loaded, _) = QFunction::load(&dir.join("qnet.bin"))?;
            if loaded.arch != arch {
                return Err(Error::ShapeMismatch {
                    expected: format!("{:?}", arch.layers),
                    found: format!("{:?}", loaded.arch.layers),
                });
            }
            q = loaded;
            global_step = state.global_step;
            episodes = state.episodes;
            updates = state.updates;
            let log_path = dir.join("log.csv");
            records = read_log(&log_path)?;
            log = std::fs::read_to_string(&log_path).map_err(|e| Error::io(&log_path, e))?;
        }
    }
    let start_step = global_step;

    let mut workers = (0..cfg.env_count)
        .map(|i| {
            let mut env = setup.env()?;
            let mut env_rng = worker_rng(seed, stream::ENV_BASE + i as u64, start_step);
            let obs = env.reset(env_rng.random()).clone();
            Ok(Worker {
                state: Arc::new(encode(&obs, task, &grid, &cfg.feature)?),
                env,
                env_rng,
                actor_rng: worker_rng(seed, stream::ACTOR_BASE + i as u64, start_step),
                episode_return: 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut learner_rng = worker_rng(seed, stream::LEARNER, start_step);
    let mut replay = ReplayBuffer::new(cfg.buffer_capacity)?;
    let loss_cfg = LossConfig {
        gamma: cfg.gamma,
        lambda: cfg.effective_lambda(variant),
        tau: cfg.tau,
    };
    let warmup = cfg.warmup.max(cfg.batch_size);
    let limit = opts.stop_after.map_or(cfg.total_steps, |s| s.min(cfg.total_steps));
    let mut window: VecDeque<bool> = records
        .iter()
        .rev()
        .take(cfg.success_window)
        .rev()
        .map(|r| r.success)
        .collect();
    let mut reached = cfg.stop_at_threshold && threshold_met(&window, cfg);
    let mut last_loss: Option<f64> = None;
    let mut last_kl: Option<f64> = None;
    let mut mask_violations = 0u64;

    while global_step < limit && !reached {
        let active = workers.len().min((limit - global_step) as usize);
        let mut actions = Vec::with_capacity(active);
        for (i, w) in workers[..active].iter_mut().enumerate() {
            let eps = cfg.epsilon_at(global_step + i as u64);
            let a = select_action(&q, &w.state, prior, eps, variant, &mut w.actor_rng);
            if variant.uses_affordance() && w.state.aff_bins.iter().any(|b| *b) && !w.state.aff_bins[a] {
                mask_violations += 1;
            }
            actions.push((a, eps));
        }
        let results: Vec<Result<StepResult>> = workers[..active]
            .par_iter_mut()
            .zip(&actions)
            .map(|(w, (a, _))| w.env.step(*a))
            .collect();
        for ((w, (a, eps)), result) in workers[..active].iter_mut().zip(actions).zip(results) {
            let result = result?;
            global_step += 1;
            let next = Arc::new(encode(&result.obs, task, &grid, &cfg.feature)?);
            replay.push(Transition {
                s: w.state.clone(),
                a,
                r: result.reward,
                s_next: next.clone(),
                done: result.done,
            });
            w.episode_return += result.reward;
            w.state = next;

            if global_step % cfg.train_every == 0 && replay.len() >= warmup {
                let batch = replay.sample(cfg.batch_size, &mut learner_rng).expect("warmup covers a batch");
                let mut out = loss_and_grad(&q, &batch, prior, &loss_cfg, variant);
                if let Some(max_norm) = cfg.max_grad_norm {
                    let norm = out.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                    if norm > max_norm {
                        let scale = max_norm / norm;
                        out.grad.iter_mut().for_each(|g| *g *= scale);
                    }
                }
                q.sgd_step(&out.grad, cfg.learning_rate);
                updates += 1;
                if updates % cfg.target_sync == 0 {
                    q.sync_target();
                }
                last_loss = Some(out.loss);
                last_kl = variant.uses_prior().then_some(out.kl);
            }

            if result.done {
                episodes += 1;
                let move_distance = result.info.move_distance.unwrap_or(0.0);
                let record = EpisodeRecord {
                    global_step,
                    episode: episodes,
                    variant: variant.name().to_string(),
                    seed,
                    success: result.reach,
                    move_distance,
                    reward: w.episode_return,
                };
                writeln!(
                    log,
                    "{},{},{},{},{},{},{},{},{},{}",
                    global_step,
                    episodes,
                    variant.name(),
                    seed,
                    u8::from(result.reach),
                    move_distance,
                    w.episode_return,
                    fmt_opt(last_loss),
                    fmt_opt(last_kl),
                    eps
                )
                .expect("write to string");
                records.push(record);
                window.push_back(result.reach);
                if window.len() > cfg.success_window {
                    window.pop_front();
                }
                if cfg.stop_at_threshold && threshold_met(&window, cfg) {
                    reached = true;
                }
                w.episode_return = 0.0;
                let obs = w.env.reset(w.env_rng.random()).clone();
                w.state = Arc::new(encode(&obs, task, &grid, &cfg.feature)?);
            }
        }
    }

    let completed = reached || global_step >= cfg.total_steps;
    let summary = RunSummary::from_records(
        task.name(),
        variant.name(),
        seed,
        global_step,
        &records,
        cfg.success_window,
        cfg.success_threshold,
    );
    if let Some(dir) = &opts.out_dir {
        io::ensure_dir(dir)?;
        q.save(&dir.join("qnet.bin"), &CheckpointMeta { global_step, ..meta })?;
        io::write_bytes(&dir.join("log.csv"), log.as_bytes())?;
        io::write_json(
            &dir.join("state.json"),
            &TrainState {
                schema: STATE_SCHEMA.to_string(),
                task: task.name().to_string(),
                variant,
                seed,
                global_step,
                episodes,
                updates,
            },
        )?;
        summary.save(&dir.join("summary.json"))?;
    }
    Ok(TrainOutcome {
        summary,
        records,
        q,
        mask_violations,
        completed,
    })
}

fn threshold_met(window: &VecDeque<bool>, cfg: &TrainerConfig) -> bool {
    window.len() == cfg.success_window
        && window.iter().filter(|s| **s).count() as f64 / cfg.success_window as f64 >= cfg.success_threshold - 1e-12
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub variant: String,
    pub seed: u64,
    pub episodes: usize,
    pub success_rate: f64,
    /// Mean over successful episodes; 0 when none succeeded.
    pub mean_move_distance: f64,
    pub mask_violations: u64,
    pub steps: u64,
}

/// Greedy episodes on freshly seeded layouts.
pub fn evaluate(
    q: &QFunction,
    variant: Variant,
    setup: &TrainSetup,
    feature: &FeatureSpec,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let grid = setup.grid()?;
    let expected_in = feature.len + grid.len();
    if q.arch.input() != expected_in || q.arch.output() != grid.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("input {expected_in}, output {}", grid.len()),
            found: format!("input {}, output {}", q.arch.input(), q.arch.output()),
        });
    }
    let task = setup.task.task;
    let mut env = setup.env()?;
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, stream::EVAL));
    let mut successes = 0usize;
    let mut distance = 0.0;
    let mut violations = 0u64;
    let mut steps = 0u64;
    for _ in 0..episodes {
        let mut state = encode(env.reset(rng.random()), task, &grid, feature)?;
        loop {
            let a = select_action(q, &state, None, 0.0, variant, &mut rng);
            if variant.uses_affordance() && state.aff_bins.iter().any(|b| *b) && !state.aff_bins[a] {
                violations += 1;
            }
            let r = env.step(a)?;
            steps += 1;
            if r.done {
                if r.reach {
                    successes += 1;
                    distance += r.info.move_distance.unwrap_or(0.0);
                }
                break;
            }
            state = encode(&r.obs, task, &grid, feature)?;
        }
    }
    Ok(EvalReport {
        task: task.name().to_string(),
        variant: variant.name().to_string(),
        seed,
        episodes,
        success_rate: successes as f64 / episodes as f64,
        mean_move_distance: if successes > 0 { distance / successes as f64 } else { 0.0 },
        mask_violations: violations,
        steps,
    })
}
