use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::io;
use crate::kinematics::{BasePose, JointConfig, KinematicChain};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Reach,
    Door,
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Reach => "reach",
            TaskKind::Door => "door",
        }
    }

    /// Class of the object the arm is meant to touch.
    pub fn affordance_class(&self) -> ClassTag {
        match self {
            TaskKind::Reach => ClassTag::Target,
            TaskKind::Door => ClassTag::Door,
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "reach" => Ok(TaskKind::Reach),
            "door" => Ok(TaskKind::Door),
            other => Err(Error::invalid(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ClassTag {
    Floor,
    Table,
    Target,
    Door,
    Wall,
}

/// World-axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxShape {
    pub center: Vector3<f64>,
    pub half_extents: Vector3<f64>,
}

impl BoxShape {
    pub fn from_bounds(min: [f64; 3], max: [f64; 3]) -> Self {
        let min = Vector3::from(min);
        let max = Vector3::from(max);
        BoxShape {
            center: (min + max) * 0.5,
            half_extents: (max - min) * 0.5,
        }
    }

    pub fn min(&self) -> Vector3<f64> {
        self.center - self.half_extents
    }

    pub fn max(&self) -> Vector3<f64> {
        self.center + self.half_extents
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let mut out = [Vector3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let s = Vector3::new(
                if i & 1 == 0 { -1.0 } else { 1.0 },
                if i & 2 == 0 { -1.0 } else { 1.0 },
                if i & 4 == 0 { -1.0 } else { 1.0 },
            );
            *c = self.center + self.half_extents.component_mul(&s);
        }
        out
    }

    /// Distance from `p` to the box surface (0 on the surface).
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        let d = (p - self.center).abs() - self.half_extents;
        let outside = d.map(|v| v.max(0.0)).norm();
        let inside = d.max().min(0.0);
        (outside + inside).abs()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub id: u16,
    pub class_tag: ClassTag,
    pub shape: BoxShape,
    pub color: [u8; 3],
}

impl SceneObject {
    pub fn new(id: u16, class_tag: ClassTag, shape: BoxShape, color: [u8; 3]) -> Result<Self> {
        if shape.half_extents.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::invalid("box half-extents must be positive"));
        }
        Ok(SceneObject {
            id,
            class_tag,
            shape,
            color,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobotState {
    pub base: BasePose,
    pub chain: KinematicChain,
    pub q: JointConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldScene {
    pub objects: Vec<SceneObject>,
    pub robot: RobotState,
    pub camera: CameraModel,
}

impl WorldScene {
    pub fn object(&self, id: u16) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn first_of(&self, class: ClassTag) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.class_tag == class)
    }

    pub fn validate(&self, task: TaskKind) -> Result<()> {
        let mut ids: Vec<u16> = self.objects.iter().map(|o| o.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) || ids.first() == Some(&0) {
            return Err(Error::invalid("object ids must be unique and non-zero"));
        }
        let tagged = self
            .objects
            .iter()
            .filter(|o| o.class_tag == task.affordance_class())
            .count();
        if tagged != 1 {
            return Err(Error::invalid(format!(
                "{} scene needs exactly one {:?} object, found {tagged}",
                task.name(),
                task.affordance_class()
            )));
        }
        Ok(())
    }
}

/// Sliding door on a +y prismatic track with a closing spring.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoorState {
    pub displacement: f64,
    pub max_displacement: f64,
    pub held: bool,
}

impl DoorState {
    pub fn closed(max_displacement: f64) -> Self {
        DoorState {
            displacement: 0.0,
            max_displacement,
            held: false,
        }
    }

    pub fn hold_at(&mut self, displacement: f64) {
        self.displacement = displacement.clamp(0.0, self.max_displacement);
        self.held = true;
    }

    /// Unheld doors spring back shut.
    pub fn release(&mut self) {
        self.held = false;
        self.displacement = 0.0;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w1: 1.0,
            w2: 1.0,
            w3: 10.0,
            w4: 5.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReachGeometry {
    /// Range for the x of the table's near edge.
    pub table_front_x: [f64; 2],
    pub table_depth: f64,
    pub table_y: [f64; 2],
    pub table_height: f64,
    /// Range for the lateral center of the target panel.
    pub target_center_y: [f64; 2],
    pub target_half_width: f64,
    pub target_height: f64,
}

impl Default for ReachGeometry {
    fn default() -> Self {
        ReachGeometry {
            table_front_x: [0.70, 0.80],
            table_depth: 0.8,
            table_y: [0.2, 1.0],
            table_height: 0.4,
            target_center_y: [0.30, 0.45],
            target_half_width: 0.12,
            target_height: 0.24,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DoorGeometry {
    /// Range for the x of the door's near face.
    pub door_x: [f64; 2],
    pub half_width: f64,
    pub height: f64,
    pub thickness: f64,
    pub max_displacement: f64,
    /// Lateral gap between the closed door's +y edge and the occluding wall.
    pub wall_gap: f64,
}

impl Default for DoorGeometry {
    fn default() -> Self {
        DoorGeometry {
            door_x: [0.86, 0.92],
            half_width: 0.45,
            height: 2.0,
            thickness: 0.04,
            max_displacement: 0.9,
            wall_gap: 0.0,
        }
    }
}

pub const TASK_SCHEMA: &str = "task-v1";

/// Task description file, schema `task-v1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub schema: String,
    pub task: TaskKind,
    /// Pixels per action bin along each image axis.
    #[serde(default = "defaults::stride")]
    pub action_stride: usize,
    #[serde(default = "defaults::horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub weights: RewardWeights,
    /// Horizontal hand distance beyond which balance is penalized (m).
    #[serde(default = "defaults::stability_margin")]
    pub stability_margin: f64,
    /// Cap on the base-advance sweep (m).
    #[serde(default = "defaults::corridor")]
    pub corridor: f64,
    #[serde(default = "defaults::sweep_step")]
    pub sweep_step: f64,
    /// Door success when visible door width < this fraction of the closed width.
    #[serde(default = "defaults::door_threshold")]
    pub door_threshold_fraction: f64,
    #[serde(default)]
    pub reach: ReachGeometry,
    #[serde(default)]
    pub door: DoorGeometry,
}

mod defaults {
    pub fn stride() -> usize {
        20
    }
    pub fn horizon() -> usize {
        5
    }
    pub fn stability_margin() -> f64 {
        0.9
    }
    pub fn corridor() -> f64 {
        3.0
    }
    pub fn sweep_step() -> f64 {
        0.01
    }
    pub fn door_threshold() -> f64 {
        0.15
    }
}

impl TaskConfig {
    pub fn new(task: TaskKind) -> Self {
        TaskConfig {
            schema: TASK_SCHEMA.to_string(),
            task,
            action_stride: defaults::stride(),
            horizon: defaults::horizon(),
            weights: RewardWeights::default(),
            stability_margin: defaults::stability_margin(),
            corridor: defaults::corridor(),
            sweep_step: defaults::sweep_step(),
            door_threshold_fraction: defaults::door_threshold(),
            reach: ReachGeometry::default(),
            door: DoorGeometry::default(),
        }
    }

    /// Desk-scale variant: 4-pixel bins for a 128x96 render.
    pub fn desk(task: TaskKind) -> Self {
        TaskConfig {
            action_stride: 4,
            ..Self::new(task)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != TASK_SCHEMA {
            return Err(Error::invalid(format!(
                "expected schema {TASK_SCHEMA:?}, found {:?}",
                self.schema
            )));
        }
        let weights = [self.weights.w1, self.weights.w2, self.weights.w3, self.weights.w4];
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("reward weights must be finite"));
        }
        if self.action_stride == 0 || self.horizon == 0 {
            return Err(Error::invalid("action_stride and horizon must be positive"));
        }
        if !(self.stability_margin > 0.0 && self.corridor >= 0.0 && self.sweep_step > 0.0) {
            return Err(Error::invalid("stability_margin and sweep_step must be positive"));
        }
        if !(self.door_threshold_fraction > 0.0 && self.door_threshold_fraction <= 1.0) {
            return Err(Error::invalid("door_threshold_fraction must be in (0, 1]"));
        }
        let ordered = |r: [f64; 2]| r[0] <= r[1];
        if !(ordered(self.reach.table_front_x)
            && ordered(self.reach.table_y)
            && ordered(self.reach.target_center_y)
            && ordered(self.door.door_x))
        {
            return Err(Error::invalid("geometry ranges must be ordered [low, high]"));
        }
        if !(self.door.max_displacement >= 0.0) {
            return Err(Error::invalid("door max_displacement must be non-negative"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: TaskConfig = io::read_json(path)?;
        cfg.validate()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }
}

pub mod ids {
    pub const FLOOR: u16 = 1;
    pub const TABLE: u16 = 2;
    pub const TARGET: u16 = 3;
    pub const DOOR: u16 = 4;
    pub const WALL_LEFT: u16 = 5;
    pub const WALL_RIGHT: u16 = 6;
}

pub(crate) mod colors {
    pub const FLOOR: [u8; 3] = [120, 120, 115];
    pub const TABLE: [u8; 3] = [140, 95, 60];
    pub const TARGET: [u8; 3] = [40, 200, 60];
    pub const DOOR: [u8; 3] = [150, 150, 155];
    pub const WALL: [u8; 3] = [215, 205, 180];
}

/// Sampled task layout for one episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Layout {
    Reach {
        table_front_x: f64,
        target_center_y: f64,
    },
    Door {
        door_x: f64,
    },
}

impl Layout {
    pub fn sample(cfg: &TaskConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pick = |r: [f64; 2]| if r[1] > r[0] { rng.random_range(r[0]..=r[1]) } else { r[0] };
        match cfg.task {
            TaskKind::Reach => Layout::Reach {
                table_front_x: pick(cfg.reach.table_front_x),
                target_center_y: pick(cfg.reach.target_center_y),
            },
            TaskKind::Door => Layout::Door {
                door_x: pick(cfg.door.door_x),
            },
        }
    }
}

fn floor_object() -> SceneObject {
    SceneObject {
        id: ids::FLOOR,
        class_tag: ClassTag::Floor,
        shape: BoxShape::from_bounds([-10.0, -10.0, -0.1], [20.0, 10.0, 0.0]),
        color: colors::FLOOR,
    }
}

/// Static objects for a layout. The door is placed at `door_displacement`.
pub fn build_objects(cfg: &TaskConfig, layout: &Layout, door_displacement: f64) -> Vec<SceneObject> {
    let mut objects = vec![floor_object()];
    match *layout {
        Layout::Reach {
            table_front_x,
            target_center_y,
        } => {
            let g = &cfg.reach;
            objects.push(SceneObject {
                id: ids::TABLE,
                class_tag: ClassTag::Table,
                shape: BoxShape::from_bounds(
                    [table_front_x, g.table_y[0], 0.0],
                    [table_front_x + g.table_depth, g.table_y[1], g.table_height],
                ),
                color: colors::TABLE,
            });
            objects.push(SceneObject {
                id: ids::TARGET,
                class_tag: ClassTag::Target,
                shape: BoxShape::from_bounds(
                    [table_front_x - 0.01, target_center_y - g.target_half_width, g.table_height],
                    [
                        table_front_x,
                        target_center_y + g.target_half_width,
                        g.table_height + g.target_height,
                    ],
                ),
                color: colors::TARGET,
            });
        }
        Layout::Door { door_x } => {
            let g = &cfg.door;
            let wall_height = g.height + 0.5;
            objects.push(SceneObject {
                id: ids::DOOR,
                class_tag: ClassTag::Door,
                shape: BoxShape::from_bounds(
                    [door_x, -g.half_width + door_displacement, 0.0],
                    [door_x + g.thickness, g.half_width + door_displacement, g.height],
                ),
                color: colors::DOOR,
            });
            // The +y wall stands just in front of the door track so an opened
            // door slides behind it.
            objects.push(SceneObject {
                id: ids::WALL_LEFT,
                class_tag: ClassTag::Wall,
                shape: BoxShape::from_bounds(
                    [door_x - 0.03, g.half_width + g.wall_gap, 0.0],
                    [door_x - 0.005, g.half_width + g.wall_gap + 3.0, wall_height],
                ),
                color: colors::WALL,
            });
            objects.push(SceneObject {
                id: ids::WALL_RIGHT,
                class_tag: ClassTag::Wall,
                shape: BoxShape::from_bounds(
                    [door_x, -g.half_width - 3.0, 0.0],
                    [door_x + g.thickness, -g.half_width, wall_height],
                ),
                color: colors::WALL,
            });
        }
    }
    objects
}
