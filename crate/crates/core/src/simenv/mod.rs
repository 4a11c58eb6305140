//! Quasi-static Reach and Door worlds: scene construction, rendering,
//! pixel-action execution, reward and base-advance measurement.

mod render;
mod scene;

pub use render::{render_objects, render_observation, Observation, SKY_COLOR, SKY_ID};
pub use scene::{
    build_objects, ids, BoxShape, ClassTag, DoorGeometry, DoorState, Layout, ReachGeometry, RewardWeights,
    RobotState, SceneObject, TaskConfig, TaskKind, WorldScene, TASK_SCHEMA,
};

use nalgebra::{Point3, Vector3};

use crate::camera::CameraFile;
use crate::error::{Error, Result};
use crate::kinematics::{solve_ik, BasePose, IkOptions, JointConfig, KinematicChain, Pose3};
use crate::manip_map::ActionGrid;

#[derive(Clone, Debug, PartialEq, Default)]
pub struct StepInfo {
    pub ik_failed: bool,
    pub balance_violated: bool,
    /// Present only when the step reached the task condition.
    pub move_distance: Option<f64>,
    /// Door task only.
    pub door_visible_px: Option<usize>,
    pub door_displacement: Option<f64>,
    /// Back-projected world target of the action, when the pixel had depth.
    pub hand_target: Option<Vector3<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub reach: bool,
    pub done: bool,
    pub info: StepInfo,
}

/// Inputs of the four-term reward.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct RewardTerms {
    pub ik_failed: bool,
    /// Horizontal distance from the hand target to the base center, when the
    /// arm actually moved there.
    pub hand_horizontal_distance: Option<f64>,
    pub arm_success: bool,
    pub reach: bool,
    pub move_distance: f64,
}

/// `w1 r_ik + w2 r_balance + w3 r_arm + w4 (r_move * reach)`.
pub fn compute_reward(terms: &RewardTerms, weights: &RewardWeights, stability_margin: f64) -> f64 {
    let r_ik = if terms.ik_failed { -1.0 } else { 0.0 };
    let r_balance = terms
        .hand_horizontal_distance
        .map(|h| -((h - stability_margin) / stability_margin).clamp(0.0, 1.0))
        .unwrap_or(0.0);
    let r_arm = if terms.arm_success { 1.0 } else { 0.0 };
    let r_move = if terms.reach { terms.move_distance } else { 0.0 };
    weights.w1 * r_ik + weights.w2 * r_balance + weights.w3 * r_arm + weights.w4 * r_move
}

/// Pixel width of the bounding box of door pixels, 0 if none are visible.
pub fn door_visible_length(obs: &Observation) -> usize {
    let mut lo = usize::MAX;
    let mut hi = 0;
    for v in 0..obs.height {
        for u in 0..obs.width {
            if obs.class_at(obs.pixel_index(u, v)) == Some(ClassTag::Door) {
                lo = lo.min(u);
                hi = hi.max(u);
            }
        }
    }
    if lo == usize::MAX {
        0
    } else {
        hi - lo + 1
    }
}

/// World point expressed in the arm-root frame of a robot at `base`.
pub fn world_to_arm_root(chain: &KinematicChain, base: &BasePose, world: &Vector3<f64>) -> Vector3<f64> {
    let root = base.to_isometry() * chain.base_mount();
    (root.inverse() * Point3::from(*world)).coords
}

/// Deterministic IK seeds for a position target: the optional warm start, an
/// "aim" configuration pointing the shoulder at the target, then the
/// joint-range midpoint and the clamped zero configuration.
pub fn ik_seeds(chain: &KinematicChain, target_root: &Vector3<f64>, warm: Option<&JointConfig>) -> Vec<JointConfig> {
    let mut seeds = Vec::with_capacity(4);
    if let Some(w) = warm {
        seeds.push(w.clone());
    }
    let n = chain.dof();
    if n >= 3 {
        let mut aim = JointConfig::zeros(n);
        aim.0[0] = target_root.y.atan2(target_root.x);
        aim.0[1] = -0.6;
        aim.0[2] = 1.2;
        chain.clamp(&mut aim);
        seeds.push(aim);
    }
    seeds.push(chain.neutral());
    let mut zero = JointConfig::zeros(n);
    chain.clamp(&mut zero);
    seeds.push(zero);
    seeds
}

pub fn reach_position(
    chain: &KinematicChain,
    target_root: &Vector3<f64>,
    warm: Option<&JointConfig>,
    opts: &IkOptions,
) -> Option<JointConfig> {
    if target_root.norm() > chain.max_reach() {
        return None;
    }
    let target = Pose3::from_position(*target_root);
    ik_seeds(chain, target_root, warm).into_iter().find_map(|seed| {
        solve_ik(chain, &target, &seed, opts)
            .expect("seed length matches chain")
            .into_solution()
            .map(|s| s.q)
    })
}

/// Largest forward base displacement `d` in `[0, cap]`, tested every `step`
/// meters from 0, such that the fixed world hand position stays reachable at
/// every tested displacement. Translation only.
pub fn base_advance_sweep(
    chain: &KinematicChain,
    base: &BasePose,
    hand_world: &Pose3,
    step: f64,
    cap: f64,
    opts: &IkOptions,
) -> f64 {
    let mut warm: Option<JointConfig> = None;
    let mut reached = 0.0;
    let n_steps = (cap / step + 1e-9).floor() as usize;
    for k in 0..=n_steps {
        let d = k as f64 * step;
        let target = world_to_arm_root(chain, &base.advanced(d), &hand_world.position);
        match reach_position(chain, &target, warm.as_ref(), opts) {
            Some(q) => {
                warm = Some(q);
                reached = d;
            }
            None => break,
        }
    }
    reached
}

/// One task instance. Owned by a single worker at a time.
#[derive(Clone, Debug)]
pub struct TaskEnv {
    cfg: TaskConfig,
    grid: ActionGrid,
    ik: IkOptions,
    scene: WorldScene,
    layout: Layout,
    door: DoorState,
    door_reference_px: usize,
    steps: usize,
    obs: Observation,
}

impl TaskEnv {
    pub fn new(cfg: TaskConfig, chain: KinematicChain, camera: &CameraFile) -> Result<Self> {
        cfg.validate()?;
        let base = BasePose::default();
        let camera_model = camera.camera_at(&base)?;
        let grid = ActionGrid::new(camera.width, camera.height, cfg.action_stride)?;
        let q = chain.neutral();
        let scene = WorldScene {
            objects: Vec::new(),
            robot: RobotState { base, chain, q },
            camera: camera_model,
        };
        let obs = Observation::empty(camera.width, camera.height);
        let door = DoorState::closed(cfg.door.max_displacement);
        let mut env = TaskEnv {
            layout: Layout::sample(&cfg, 0),
            cfg,
            grid,
            ik: IkOptions::default(),
            scene,
            door,
            door_reference_px: 0,
            steps: 0,
            obs,
        };
        env.reset(0);
        env.scene.validate(env.cfg.task)?;
        Ok(env)
    }

    pub fn config(&self) -> &TaskConfig {
        &self.cfg
    }

    pub fn task(&self) -> TaskKind {
        self.cfg.task
    }

    pub fn grid(&self) -> ActionGrid {
        self.grid
    }

    pub fn scene(&self) -> &WorldScene {
        &self.scene
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn observation(&self) -> &Observation {
        &self.obs
    }

    pub fn door(&self) -> DoorState {
        self.door
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn ik_options(&self) -> &IkOptions {
        &self.ik
    }

    /// Closed-door pixel width measured at reset.
    pub fn door_reference_px(&self) -> usize {
        self.door_reference_px
    }

    pub fn door_threshold_px(&self) -> f64 {
        self.cfg.door_threshold_fraction * self.door_reference_px as f64
    }

    /// Rebuild the scene for a fresh episode. Deterministic per seed.
    pub fn reset(&mut self, seed: u64) -> &Observation {
        self.layout = Layout::sample(&self.cfg, seed);
        self.door = DoorState::closed(self.cfg.door.max_displacement);
        self.steps = 0;
        self.scene.robot.base = BasePose::default();
        self.scene.robot.q = self.scene.robot.chain.neutral();
        self.scene.camera = self.scene.camera.at_base(&self.scene.robot.base);
        self.rebuild();
        if self.cfg.task == TaskKind::Door {
            self.door_reference_px = door_visible_length(&self.obs);
        }
        &self.obs
    }

    fn rebuild(&mut self) {
        self.scene.objects = build_objects(&self.cfg, &self.layout, self.door.displacement);
        self.obs = render_observation(&self.scene);
    }

    /// Force the door to a displacement (held) and re-render. Used by probes
    /// and tests; the learning loop only moves the door through `step`.
    pub fn set_door(&mut self, displacement: f64, held: bool) -> &Observation {
        if held {
            self.door.hold_at(displacement);
        } else {
            self.door.release();
        }
        self.rebuild();
        &self.obs
    }

    /// Reach condition for a back-projected world target.
    fn inside_target(&self, p: &Vector3<f64>) -> bool {
        let Some(target) = self.scene.first_of(ClassTag::Target) else {
            return false;
        };
        let (lo, hi) = (target.shape.min(), target.shape.max());
        let eps = 1e-9;
        p.y >= lo.y - eps && p.y <= hi.y + eps && p.z >= lo.z - eps && p.z <= hi.z + eps
    }

    pub fn step(&mut self, bin: usize) -> Result<StepResult> {
        if bin >= self.grid.len() {
            return Err(Error::invalid(format!("action bin {bin} out of range ({})", self.grid.len())));
        }
        self.steps += 1;
        let (px, py) = self.grid.center_pixel(bin);
        let pix = self.obs.pixel_index(px, py);
        let depth = self.obs.depth[pix];
        let hit_class = self.obs.class_at(pix);

        let robot = &self.scene.robot;
        let mut info = StepInfo::default();
        let mut solution = None;
        if depth.is_finite() {
            let world = self
                .scene
                .camera
                .backproject(px as f64 + 0.5, py as f64 + 0.5, depth)?;
            info.hand_target = Some(world);
            let target_root = world_to_arm_root(&robot.chain, &robot.base, &world);
            solution = reach_position(&robot.chain, &target_root, None, &self.ik);
        }
        info.ik_failed = solution.is_none();
        if let Some(q) = &solution {
            self.scene.robot.q = q.clone();
        }

        let hand_distance = match (&solution, info.hand_target) {
            (Some(_), Some(p)) => {
                let base = &self.scene.robot.base;
                Some(((p.x - base.x).powi(2) + (p.y - base.y).powi(2)).sqrt())
            }
            _ => None,
        };
        info.balance_violated = hand_distance.is_some_and(|h| h > self.cfg.stability_margin);

        let reach = match self.cfg.task {
            TaskKind::Reach => solution.is_some() && info.hand_target.is_some_and(|p| self.inside_target(&p)),
            TaskKind::Door => {
                match (solution.is_some(), hit_class, info.hand_target) {
                    (true, Some(ClassTag::Door), Some(p)) => {
                        // The door's trailing (-y) edge is pushed to the hand.
                        self.door.hold_at(p.y + self.cfg.door.half_width);
                    }
                    _ => self.door.release(),
                }
                self.rebuild();
                let visible = door_visible_length(&self.obs);
                info.door_visible_px = Some(visible);
                info.door_displacement = Some(self.door.displacement);
                self.door.held && (visible as f64) < self.door_threshold_px()
            }
        };

        let mut move_distance = 0.0;
        if reach {
            let hand = Pose3::from_position(info.hand_target.expect("reach implies a target"));
            move_distance = base_advance_sweep(
                &self.scene.robot.chain,
                &self.scene.robot.base,
                &hand,
                self.cfg.sweep_step,
                self.cfg.corridor,
                &self.ik,
            );
            info.move_distance = Some(move_distance);
        }

        let reward = compute_reward(
            &RewardTerms {
                ik_failed: info.ik_failed,
                hand_horizontal_distance: hand_distance,
                arm_success: reach,
                reach,
                move_distance,
            },
            &self.cfg.weights,
            self.cfg.stability_margin,
        );
        let done = reach || self.steps >= self.cfg.horizon;
        Ok(StepResult {
            obs: self.obs.clone(),
            reward,
            reach,
            done,
            info,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::default_arm;

    #[test]
    fn reward_examples() {
        let w = RewardWeights {
            w1: 1.0,
            w2: 1.0,
            w3: 1.0,
            w4: 1.0,
        };
        let failed = RewardTerms {
            ik_failed: true,
            ..Default::default()
        };
        assert_eq!(compute_reward(&failed, &w, 0.9), -1.0);
        let reached = RewardTerms {
            arm_success: true,
            reach: true,
            move_distance: 0.8,
            hand_horizontal_distance: Some(0.5),
            ..Default::default()
        };
        assert!((compute_reward(&reached, &w, 0.9) - 1.8).abs() < 1e-15);
        let gated = RewardTerms {
            reach: false,
            move_distance: 2.5,
            ..Default::default()
        };
        assert_eq!(compute_reward(&gated, &w, 0.9), 0.0);
    }

    #[test]
    fn balance_penalty_saturates() {
        let w = RewardWeights {
            w1: 0.0,
            w2: 1.0,
            w3: 0.0,
            w4: 0.0,
        };
        let at = |h| {
            compute_reward(
                &RewardTerms {
                    hand_horizontal_distance: Some(h),
                    ..Default::default()
                },
                &w,
                0.9,
            )
        };
        assert_eq!(at(0.5), 0.0);
        assert!((at(1.35) + 0.5).abs() < 1e-12);
        assert_eq!(at(5.0), -1.0);
    }

    fn env(task: TaskKind) -> TaskEnv {
        TaskEnv::new(TaskConfig::desk(task), default_arm(), &CameraFile::forward(128, 96)).unwrap()
    }

    #[test]
    fn sky_bin_fails_ik() {
        let mut env = env(TaskKind::Reach);
        // Top-left bin looks above the horizon.
        assert!(env.observation().depth[0].is_infinite());
        let r = env.step(0).unwrap();
        assert!(r.info.ik_failed);
        assert!(!r.reach);
        assert!(r.info.hand_target.is_none());
        assert_eq!(r.reward, -1.0);
    }

    #[test]
    fn out_of_range_bin_is_error() {
        let mut env = env(TaskKind::Reach);
        let n = env.grid().len();
        assert!(env.step(n).is_err());
    }

    #[test]
    fn horizon_ends_episode() {
        let mut env = env(TaskKind::Reach);
        for k in 1..=5 {
            let r = env.step(0).unwrap();
            assert_eq!(r.done, k == 5);
        }
    }

    #[test]
    fn door_starts_closed_and_visible() {
        let mut env = env(TaskKind::Door);
        for seed in 0..5 {
            let obs = env.reset(seed).clone();
            assert_eq!(env.door().displacement, 0.0);
            assert!(obs.count_class(ClassTag::Door) > 0);
            assert_eq!(door_visible_length(&obs), env.door_reference_px());
        }
    }
}
