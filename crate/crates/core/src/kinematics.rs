//! Serial-chain kinematics: forward kinematics, geometric Jacobians,
//! damped-least-squares inverse kinematics and the Yoshikawa manipulability
//! measure `w = sqrt(det(J J^T))`.
//!
//! All poses returned here are expressed in the arm-root frame. The chain's
//! `base_mount` maps that frame into the robot base frame.

use std::path::Path;

use nalgebra::{
    DMatrix, DVector, Isometry3, Matrix6xX, Translation3, Unit, UnitQuaternion, Vector3,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

const AXIS_NORM_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointSpec {
    pub kind: JointKind,
    pub axis: Unit<Vector3<f64>>,
    /// Transform from the parent frame to this joint's frame at zero displacement.
    pub origin: Isometry3<f64>,
    pub lower: f64,
    pub upper: f64,
}

impl JointSpec {
    pub fn new(
        kind: JointKind,
        axis: Vector3<f64>,
        origin: Isometry3<f64>,
        lower: f64,
        upper: f64,
    ) -> Result<Self> {
        if (axis.norm() - 1.0).abs() > AXIS_NORM_TOL {
            return Err(Error::invalid(format!(
                "joint axis must have unit norm, got {}",
                axis.norm()
            )));
        }
        if !(lower <= upper) {
            return Err(Error::invalid(format!(
                "joint limits out of order: [{lower}, {upper}]"
            )));
        }
        Ok(JointSpec {
            kind,
            axis: Unit::new_unchecked(axis),
            origin,
            lower,
            upper,
        })
    }

    pub fn revolute(axis: Vector3<f64>, origin: Isometry3<f64>, lower: f64, upper: f64) -> Result<Self> {
        Self::new(JointKind::Revolute, axis, origin, lower, upper)
    }

    fn motion(&self, value: f64) -> Isometry3<f64> {
        match self.kind {
            JointKind::Revolute => Isometry3::from_parts(
                Translation3::identity(),
                UnitQuaternion::from_axis_angle(&self.axis, value),
            ),
            JointKind::Prismatic => Isometry3::from_parts(
                Translation3::from(self.axis.into_inner() * value),
                UnitQuaternion::identity(),
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KinematicChain {
    joints: Vec<JointSpec>,
    base_mount: Isometry3<f64>,
    tool: Isometry3<f64>,
}

impl KinematicChain {
    pub fn new(joints: Vec<JointSpec>, base_mount: Isometry3<f64>, tool: Isometry3<f64>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::invalid("kinematic chain needs at least one joint"));
        }
        Ok(KinematicChain {
            joints,
            base_mount,
            tool,
        })
    }

    /// Planar chain of revolute joints about +z with links along +x.
    pub fn planar(lengths: &[f64]) -> Result<Self> {
        if lengths.is_empty() || lengths.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::invalid("planar chain needs non-negative link lengths"));
        }
        let mut joints = Vec::with_capacity(lengths.len());
        let mut offset = 0.0;
        for &len in lengths {
            joints.push(JointSpec::revolute(
                Vector3::z(),
                Isometry3::translation(offset, 0.0, 0.0),
                -std::f64::consts::PI,
                std::f64::consts::PI,
            )?);
            offset = len;
        }
        Self::new(
            joints,
            Isometry3::identity(),
            Isometry3::translation(offset, 0.0, 0.0),
        )
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[JointSpec] {
        &self.joints
    }

    pub fn base_mount(&self) -> &Isometry3<f64> {
        &self.base_mount
    }

    pub fn tool(&self) -> &Isometry3<f64> {
        &self.tool
    }

    /// Upper bound on the distance from the arm root to the end effector.
    pub fn max_reach(&self) -> f64 {
        let links: f64 = self
            .joints
            .iter()
            .map(|j| j.origin.translation.vector.norm())
            .sum();
        let prismatic: f64 = self
            .joints
            .iter()
            .filter(|j| j.kind == JointKind::Prismatic)
            .map(|j| j.lower.abs().max(j.upper.abs()))
            .sum();
        links + prismatic + self.tool.translation.vector.norm()
    }

    pub fn within_limits(&self, q: &JointConfig) -> bool {
        q.len() == self.dof()
            && self
                .joints
                .iter()
                .zip(q.values())
                .all(|(j, v)| *v >= j.lower && *v <= j.upper)
    }

    pub fn clamp(&self, q: &mut JointConfig) {
        for (j, v) in self.joints.iter().zip(q.0.iter_mut()) {
            *v = v.clamp(j.lower, j.upper);
        }
    }

    /// Midpoint of every joint range.
    pub fn neutral(&self) -> JointConfig {
        JointConfig(self.joints.iter().map(|j| 0.5 * (j.lower + j.upper)).collect())
    }

    fn check_len(&self, q: &JointConfig) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::invalid(format!(
                "joint vector has length {}, chain has {} joints",
                q.len(),
                self.dof()
            )));
        }
        Ok(())
    }

    /// Per-joint frames (after the fixed origin, before the joint motion) and
    /// the end-effector frame, all in the arm-root frame.
    fn frames(&self, q: &JointConfig) -> (Vec<Isometry3<f64>>, Isometry3<f64>) {
        let mut t = Isometry3::identity();
        let mut frames = Vec::with_capacity(self.dof());
        for (joint, &value) in self.joints.iter().zip(q.values()) {
            t *= joint.origin;
            frames.push(t);
            t *= joint.motion(value);
        }
        (frames, t * self.tool)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ChainFile = io::read_json(path)?;
        file.into_chain().map_err(|e| match e {
            Error::InvalidArgument(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct JointConfig(pub Vec<f64>);

impl JointConfig {
    pub fn zeros(n: usize) -> Self {
        JointConfig(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for JointConfig {
    fn from(v: Vec<f64>) -> Self {
        JointConfig(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose3 {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose3 {
    pub fn from_position(position: Vector3<f64>) -> Self {
        Pose3 {
            position,
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Pose3 {
            position: iso.translation.vector,
            orientation: iso.rotation,
        }
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }
}

/// Planar base placement. `yaw` is kept in (-pi, pi].
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct BasePose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl BasePose {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        BasePose {
            x,
            y,
            yaw: wrap_angle(yaw),
        }
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::new(Vector3::new(self.x, self.y, 0.0), Vector3::z() * self.yaw)
    }

    /// Translate along the base's own heading.
    pub fn advanced(&self, distance: f64) -> Self {
        BasePose::new(
            self.x + distance * self.yaw.cos(),
            self.y + distance * self.yaw.sin(),
            self.yaw,
        )
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

pub fn forward_kinematics(chain: &KinematicChain, q: &JointConfig) -> Result<Pose3> {
    chain.check_len(q)?;
    let (_, ee) = chain.frames(q);
    Ok(Pose3::from_isometry(&ee))
}

/// Geometric Jacobian in the arm-root frame. Rows 0..3 are linear velocity,
/// rows 3..6 angular velocity.
pub fn jacobian(chain: &KinematicChain, q: &JointConfig) -> Result<Matrix6xX<f64>> {
    chain.check_len(q)?;
    Ok(jacobian_unchecked(chain, q).1)
}

fn jacobian_unchecked(chain: &KinematicChain, q: &JointConfig) -> (Isometry3<f64>, Matrix6xX<f64>) {
    let (frames, ee) = chain.frames(q);
    let p_ee = ee.translation.vector;
    let mut jac = Matrix6xX::zeros(chain.dof());
    for (i, (joint, frame)) in chain.joints.iter().zip(&frames).enumerate() {
        let axis = frame.rotation * joint.axis.into_inner();
        let mut col = jac.column_mut(i);
        match joint.kind {
            JointKind::Revolute => {
                let lever = p_ee - frame.translation.vector;
                col.fixed_rows_mut::<3>(0).copy_from(&axis.cross(&lever));
                col.fixed_rows_mut::<3>(3).copy_from(&axis);
            }
            JointKind::Prismatic => {
                col.fixed_rows_mut::<3>(0).copy_from(&axis);
            }
        }
    }
    (ee, jac)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManipulabilityMode {
    Full,
    PositionOnly,
}

/// `sqrt(det(J_m J_m^T))` for the selected Jacobian rows. When the chain has
/// fewer joints than task rows the Gram matrix `J_m^T J_m` is used instead, so
/// the value is always the product of the singular values of `J_m`.
pub fn manipulability(chain: &KinematicChain, q: &JointConfig, mode: ManipulabilityMode) -> Result<f64> {
    let jac = jacobian(chain, q)?;
    let jm: DMatrix<f64> = match mode {
        ManipulabilityMode::Full => DMatrix::from_iterator(6, jac.ncols(), jac.iter().copied()),
        ManipulabilityMode::PositionOnly => {
            let rows = jac.fixed_rows::<3>(0);
            DMatrix::from_iterator(3, rows.ncols(), rows.iter().copied())
        }
    };
    Ok(gram_volume(&jm))
}

pub(crate) fn gram_volume(jm: &DMatrix<f64>) -> f64 {
    // |det R| of the QR factor of the tall orientation equals sqrt(det(J J^T)).
    let tall = if jm.nrows() <= jm.ncols() { jm.transpose() } else { jm.clone() };
    if tall.ncols() == 0 {
        return 1.0;
    }
    tall.qr().r().diagonal().iter().map(|d| d.abs()).product()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IkOptions {
    /// Levenberg damping factor; the normal equations use its square.
    pub damping: f64,
    pub max_iterations: usize,
    pub position_tolerance: f64,
    /// 0 selects position-only IK.
    pub orientation_weight: f64,
    pub orientation_tolerance: f64,
    /// Largest joint-space step norm per iteration.
    pub max_step: f64,
}

impl Default for IkOptions {
    fn default() -> Self {
        IkOptions {
            damping: 1e-2,
            max_iterations: 200,
            position_tolerance: 1e-4,
            orientation_weight: 0.0,
            orientation_tolerance: 1e-3,
            max_step: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IkSolution {
    pub q: JointConfig,
    pub position_error: f64,
    pub orientation_error: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum IkOutcome {
    Solved(IkSolution),
    Failed { position_error: f64, iterations: usize },
}

impl IkOutcome {
    pub fn solution(&self) -> Option<&IkSolution> {
        match self {
            IkOutcome::Solved(s) => Some(s),
            IkOutcome::Failed { .. } => None,
        }
    }

    pub fn into_solution(self) -> Option<IkSolution> {
        match self {
            IkOutcome::Solved(s) => Some(s),
            IkOutcome::Failed { .. } => None,
        }
    }

    pub fn is_solved(&self) -> bool {
        matches!(self, IkOutcome::Solved(_))
    }
}

// Iterations without a 1e-9 m improvement before giving up early.
const IK_STALL_WINDOW: usize = 40;

/// Damped least squares: `dq = J^T (J J^T + damping^2 I)^-1 e`, clamped to the
/// joint limits after every step. Non-convergence is a value, not an error.
pub fn solve_ik(
    chain: &KinematicChain,
    target: &Pose3,
    seed: &JointConfig,
    opts: &IkOptions,
) -> Result<IkOutcome> {
    chain.check_len(seed)?;
    let with_orientation = opts.orientation_weight > 0.0;
    let rows = if with_orientation { 6 } else { 3 };
    let n = chain.dof();
    let lambda2 = opts.damping * opts.damping;

    let mut q = seed.clone();
    chain.clamp(&mut q);
    let mut best = f64::INFINITY;
    let mut last_improvement = 0;

    for iteration in 0..=opts.max_iterations {
        let (ee, jac) = jacobian_unchecked(chain, &q);
        let pos_err = target.position - ee.translation.vector;
        let rot_err = (target.orientation * ee.rotation.inverse()).scaled_axis();
        let pos_norm = pos_err.norm();
        let rot_norm = rot_err.norm();

        let converged = pos_norm <= opts.position_tolerance
            && (!with_orientation || rot_norm <= opts.orientation_tolerance);
        if converged {
            return Ok(IkOutcome::Solved(IkSolution {
                q,
                position_error: pos_norm,
                orientation_error: rot_norm,
                iterations: iteration,
            }));
        }

        let merit = pos_norm + opts.orientation_weight * rot_norm;
        if merit < best - 1e-9 {
            best = merit;
            last_improvement = iteration;
        }
        if iteration == opts.max_iterations || iteration - last_improvement > IK_STALL_WINDOW {
            return Ok(IkOutcome::Failed {
                position_error: pos_norm,
                iterations: iteration,
            });
        }

        let mut jm = DMatrix::<f64>::zeros(rows, n);
        let mut err = DVector::<f64>::zeros(rows);
        jm.view_mut((0, 0), (3, n)).copy_from(&jac.fixed_rows::<3>(0));
        err.fixed_rows_mut::<3>(0).copy_from(&pos_err);
        if with_orientation {
            jm.view_mut((3, 0), (3, n))
                .copy_from(&(jac.fixed_rows::<3>(3) * opts.orientation_weight));
            err.fixed_rows_mut::<3>(3)
                .copy_from(&(rot_err * opts.orientation_weight));
        }

        let mut normal = &jm * jm.transpose();
        for i in 0..rows {
            normal[(i, i)] += lambda2;
        }
        let Some(chol) = normal.cholesky() else {
            return Ok(IkOutcome::Failed {
                position_error: pos_norm,
                iterations: iteration,
            });
        };
        let mut dq = jm.transpose() * chol.solve(&err);
        let step = dq.norm();
        if step > opts.max_step {
            dq *= opts.max_step / step;
        }
        for (v, d) in q.0.iter_mut().zip(dq.iter()) {
            *v += d;
        }
        chain.clamp(&mut q);
    }
    unreachable!("loop returns on its last iteration")
}

/// Chain description file, schema `chain-v1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainFile {
    pub schema: String,
    pub joints: Vec<JointEntry>,
    pub base_mount: MountEntry,
    /// End-effector offset from the last joint frame.
    #[serde(default)]
    pub tool_xyz: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointEntry {
    pub kind: JointKind,
    pub axis: [f64; 3],
    pub origin_xyz: [f64; 3],
    pub origin_rpy: [f64; 3],
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct MountEntry {
    pub xyz: [f64; 3],
    pub rpy: [f64; 3],
}

impl MountEntry {
    pub fn to_isometry(&self) -> Isometry3<f64> {
        xyz_rpy(self.xyz, self.rpy)
    }
}

pub const CHAIN_SCHEMA: &str = "chain-v1";

/// URDF convention: rotation = Rz(yaw) * Ry(pitch) * Rx(roll).
pub fn xyz_rpy(xyz: [f64; 3], rpy: [f64; 3]) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::new(xyz[0], xyz[1], xyz[2]),
        UnitQuaternion::from_euler_angles(rpy[0], rpy[1], rpy[2]),
    )
}

impl ChainFile {
    pub fn into_chain(self) -> Result<KinematicChain> {
        if self.schema != CHAIN_SCHEMA {
            return Err(Error::invalid(format!(
                "expected schema {CHAIN_SCHEMA:?}, found {:?}",
                self.schema
            )));
        }
        let joints = self
            .joints
            .iter()
            .map(|j| {
                JointSpec::new(
                    j.kind,
                    Vector3::from(j.axis),
                    xyz_rpy(j.origin_xyz, j.origin_rpy),
                    j.lower,
                    j.upper,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        KinematicChain::new(
            joints,
            self.base_mount.to_isometry(),
            Isometry3::translation(self.tool_xyz[0], self.tool_xyz[1], self.tool_xyz[2]),
        )
    }

    /// The six-joint arm used by the bundled tasks: shoulder yaw/pitch, elbow
    /// pitch, wrist roll/pitch/roll; 0.34 + 0.40 + 0.24 m links, mounted 0.3 m
    /// above and 0.2 m ahead of the base origin.
    pub fn default_arm() -> Self {
        use std::f64::consts::PI;
        let joint = |axis: [f64; 3], x: f64, lower: f64, upper: f64| JointEntry {
            kind: JointKind::Revolute,
            axis,
            origin_xyz: [x, 0.0, 0.0],
            origin_rpy: [0.0; 3],
            lower,
            upper,
        };
        ChainFile {
            schema: CHAIN_SCHEMA.to_string(),
            joints: vec![
                joint([0.0, 0.0, 1.0], 0.0, -PI, PI),
                joint([0.0, 1.0, 0.0], 0.0, -PI, 0.52),
                joint([0.0, 1.0, 0.0], 0.34, 0.0, PI),
                joint([1.0, 0.0, 0.0], 0.40, -2.79, 2.79),
                joint([0.0, 1.0, 0.0], 0.0, -1.83, 1.83),
                joint([1.0, 0.0, 0.0], 0.0, -2.87, 2.87),
            ],
            base_mount: MountEntry {
                xyz: [0.2, 0.0, 0.3],
                rpy: [0.0; 3],
            },
            tool_xyz: [0.24, 0.0, 0.0],
        }
    }
}

pub fn default_arm() -> KinematicChain {
    ChainFile::default_arm()
        .into_chain()
        .expect("built-in arm description is valid")
}
