use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use manip2nav_core::camera::CameraFile;
use manip2nav_core::io::read_json;
use manip2nav_core::kinematics::{BasePose, KinematicChain};
use manip2nav_core::manip_map::{project_to_pixel_prior, ActionGrid, PixelPrior, WorkspaceMap, DEFAULT_PRIOR_FLOOR};
use manip2nav_core::rl::{TrainSetup, TrainerConfig, Variant};
use manip2nav_core::simenv::TaskConfig;
use serde::{Deserialize, Serialize};

pub const RUN_SCHEMA: &str = "run-v1";

/// Paths are relative to the directory holding the run config.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    pub chain: PathBuf,
    pub camera: PathBuf,
    pub task: PathBuf,
    pub trainer: PathBuf,
    #[serde(default)]
    pub map: Option<PathBuf>,
    pub out: PathBuf,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub variants: Option<Vec<Variant>>,
}

/// A run config with every referenced file parsed.
pub struct LoadedRun {
    pub path: PathBuf,
    pub chain: KinematicChain,
    pub camera: CameraFile,
    pub task: TaskConfig,
    pub trainer: TrainerConfig,
    pub map: Option<WorkspaceMap>,
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl LoadedRun {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let run: RunConfig = read_json(path)?;
        if run.schema != RUN_SCHEMA {
            bail!("{}: expected schema {RUN_SCHEMA}, found {}", path.display(), run.schema);
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let trainer = TrainerConfig::load(&resolve(base, &run.trainer))?;
        let task = TaskConfig::load(&resolve(base, &run.task))?;
        let camera = CameraFile::load(&resolve(base, &run.camera))?;
        camera.intrinsics()?;
        let chain = KinematicChain::load(&resolve(base, &run.chain))?;
        let map = run.map.as_ref().map(|m| WorkspaceMap::load(&resolve(base, m))).transpose()?;
        let seeds = run.seeds.clone().unwrap_or_else(|| trainer.seeds.clone());
        let variants = run.variants.clone().unwrap_or_else(|| Variant::ALL.to_vec());
        if seeds.is_empty() || variants.is_empty() {
            bail!("{}: seed and variant lists must be non-empty", path.display());
        }
        Ok(LoadedRun {
            path: path.to_path_buf(),
            out: resolve(base, &run.out),
            chain,
            camera,
            task,
            trainer,
            map,
            seeds,
            variants,
        })
    }

    pub fn grid(&self) -> anyhow::Result<ActionGrid> {
        Ok(ActionGrid::new(self.camera.width, self.camera.height, self.task.action_stride)?)
    }

    /// Pixel prior of the map seen from the start pose, if a map is configured.
    pub fn prior(&self) -> anyhow::Result<Option<PixelPrior>> {
        let Some(map) = &self.map else {
            return Ok(None);
        };
        let base = BasePose::default();
        let prior = project_to_pixel_prior(map, &self.camera.camera_at(&base)?, &base, self.grid()?, DEFAULT_PRIOR_FLOOR)
            .with_context(|| format!("{}: map yields no usable prior", self.path.display()))?;
        Ok(Some(prior))
    }

    pub fn setup(&self, variant: Variant, prior: Option<&PixelPrior>) -> anyhow::Result<TrainSetup> {
        let prior = if variant.uses_prior() {
            match prior {
                Some(p) => Some(p.clone()),
                None => bail!("variant {variant} needs a map file in {}", self.path.display()),
            }
        } else {
            None
        };
        Ok(TrainSetup {
            task: self.task.clone(),
            chain: self.chain.clone(),
            camera: self.camera.clone(),
            prior,
        })
    }

    pub fn run_dir(&self, variant: Variant, seed: u64) -> PathBuf {
        self.out
            .join(self.task.task.name())
            .join(variant.name())
            .join(format!("seed_{seed}"))
    }
}
