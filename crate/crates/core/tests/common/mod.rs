#![allow(dead_code)]

use manip2nav_core::kinematics::{JointConfig, JointKind, JointSpec, KinematicChain};
use nalgebra::{Isometry3, Matrix3, Matrix4, Translation3, Unit, UnitQuaternion, Vector3};
use rand::Rng;

pub fn random_unit<R: Rng>(rng: &mut R) -> Unit<Vector3<f64>> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm() > 0.2 && v.norm() < 1.0 {
            return Unit::new_normalize(v);
        }
    }
}

pub fn random_isometry<R: Rng>(rng: &mut R, reach: f64) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::new(
            rng.random_range(-reach..reach),
            rng.random_range(-reach..reach),
            rng.random_range(-reach..reach),
        ),
        UnitQuaternion::from_euler_angles(
            rng.random_range(-3.0..3.0),
            rng.random_range(-1.5..1.5),
            rng.random_range(-3.0..3.0),
        ),
    )
}

/// Chain of 1..=7 joints with random axes, offsets and joint kinds.
pub fn random_chain<R: Rng>(rng: &mut R) -> KinematicChain {
    let n = rng.random_range(1..=7);
    let joints = (0..n)
        .map(|_| {
            let kind = if rng.random_bool(0.8) { JointKind::Revolute } else { JointKind::Prismatic };
            let (lo, hi) = match kind {
                JointKind::Revolute => (-3.0, 3.0),
                JointKind::Prismatic => (-0.5, 0.5),
            };
            JointSpec::new(kind, random_unit(rng).into_inner(), random_isometry(rng, 0.3), lo, hi).unwrap()
        })
        .collect();
    KinematicChain::new(joints, random_isometry(rng, 0.3), random_isometry(rng, 0.2)).unwrap()
}

pub fn random_config<R: Rng>(chain: &KinematicChain, rng: &mut R) -> JointConfig {
    JointConfig(chain.joints().iter().map(|j| rng.random_range(j.lower..=j.upper)).collect())
}

/// Rodrigues rotation about a unit axis.
fn rodrigues(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = axis.cross_matrix();
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

/// End-effector transform as a product of 4x4 matrices.
pub fn fk_oracle(chain: &KinematicChain, q: &JointConfig) -> Matrix4<f64> {
    let mut t = Matrix4::<f64>::identity();
    for (j, &v) in chain.joints().iter().zip(q.values().iter()) {
        t *= j.origin.to_homogeneous();
        let mut m = Matrix4::<f64>::identity();
        match j.kind {
            JointKind::Revolute => m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rodrigues(&j.axis, v)),
            JointKind::Prismatic => m.fixed_view_mut::<3, 1>(0, 3).copy_from(&(j.axis.into_inner() * v)),
        }
        t *= m;
    }
    t * chain.tool().to_homogeneous()
}
