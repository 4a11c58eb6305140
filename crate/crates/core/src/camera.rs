//! Ideal pinhole camera: `[u v 1]^T ~ K [R | t] [x y z 1]^T` and the
//! depth-assisted inverse.
//!
//! Pixel `(i, j)` covers `[i, i+1) x [j, j+1)` in continuous image
//! coordinates; its center is `(i + 0.5, j + 0.5)`.

use std::path::Path;

use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::kinematics::{xyz_rpy, BasePose};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let intr = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::invalid("principal point must lie inside the image"));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn in_bounds(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// World-to-camera transform `p_cam = R p_world + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraExtrinsics {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraExtrinsics {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if ortho > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("extrinsic rotation must be a proper orthonormal matrix"));
        }
        Ok(CameraExtrinsics {
            rotation: Rotation3::from_matrix_unchecked(rotation),
            translation,
        })
    }

    pub fn identity() -> Self {
        CameraExtrinsics {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Extrinsics for a camera whose optical frame sits at `camera_in_world`.
    pub fn from_camera_pose(camera_in_world: &Isometry3<f64>) -> Self {
        let inv = camera_in_world.inverse();
        CameraExtrinsics {
            rotation: inv.rotation.to_rotation_matrix(),
            translation: inv.translation.vector,
        }
    }

    pub fn to_camera(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p_world + self.translation
    }

    pub fn to_world(&self, p_cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p_cam - self.translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Projection {
    /// Integer pixel containing the projected point.
    pub fn pixel(&self) -> (usize, usize) {
        (self.u.floor() as usize, self.v.floor() as usize)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraExtrinsics,
    /// Optical frame (z forward, x right, y down) expressed in the robot base frame.
    pub mount: Isometry3<f64>,
}

impl CameraModel {
    pub fn new(intrinsics: CameraIntrinsics, mount: Isometry3<f64>, base: &BasePose) -> Self {
        CameraModel {
            intrinsics,
            extrinsics: CameraExtrinsics::from_camera_pose(&(base.to_isometry() * mount)),
            mount,
        }
    }

    /// Camera with explicit world extrinsics and an identity mount.
    pub fn from_extrinsics(intrinsics: CameraIntrinsics, extrinsics: CameraExtrinsics) -> Self {
        CameraModel {
            intrinsics,
            extrinsics,
            mount: Isometry3::identity(),
        }
    }

    /// Same camera carried by a base at `base`.
    pub fn at_base(&self, base: &BasePose) -> Self {
        Self::new(self.intrinsics, self.mount, base)
    }

    /// Projection without the image-bounds filter. `None` only when the point
    /// is not strictly in front of the camera.
    pub fn project_unbounded(&self, p_world: &Vector3<f64>) -> Option<Projection> {
        let pc = self.extrinsics.to_camera(p_world);
        if !(pc.z > 0.0) {
            return None;
        }
        let k = &self.intrinsics;
        Some(Projection {
            u: k.fx * pc.x / pc.z + k.cx,
            v: k.fy * pc.y / pc.z + k.cy,
            depth: pc.z,
        })
    }

    /// Pixel coordinates and camera-frame depth, or `None` when the point is
    /// behind the camera or lands outside `[0, width) x [0, height)`.
    pub fn project(&self, p_world: &Vector3<f64>) -> Option<Projection> {
        self.project_unbounded(p_world)
            .filter(|p| self.intrinsics.in_bounds(p.u, p.v))
    }

    pub fn backproject(&self, u: f64, v: f64, depth: f64) -> Result<Vector3<f64>> {
        if !(depth > 0.0) || !depth.is_finite() {
            return Err(Error::invalid(format!("backprojection depth must be positive, got {depth}")));
        }
        if !self.intrinsics.in_bounds(u, v) {
            return Err(Error::invalid(format!("pixel ({u}, {v}) is outside the image")));
        }
        Ok(self.extrinsics.to_world(&self.ray_camera(u, v).scale(depth)))
    }

    /// Camera-frame ray through `(u, v)` normalized to unit depth.
    pub fn ray_camera(&self, u: f64, v: f64) -> Vector3<f64> {
        let k = &self.intrinsics;
        Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0)
    }

    /// World-frame ray through `(u, v)`: points are `origin + t * dir` with
    /// `t` equal to camera depth.
    pub fn ray_world(&self, u: f64, v: f64) -> (Point3<f64>, Vector3<f64>) {
        let dir = self.extrinsics.rotation.transpose() * self.ray_camera(u, v);
        (Point3::from(self.extrinsics.center()), dir)
    }
}

pub const CAMERA_SCHEMA: &str = "camera-v1";

/// Camera description file, schema `camera-v1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    pub schema: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub mount_xyz: [f64; 3],
    pub mount_rpy: [f64; 3],
}

impl CameraFile {
    /// Forward-facing camera 0.6 m above the base origin, pitched 15 degrees
    /// down, 90 degree horizontal field of view.
    pub fn forward(width: usize, height: usize) -> Self {
        use std::f64::consts::FRAC_PI_2;
        let tilt = 15f64.to_radians();
        let f = width as f64 / 2.0;
        CameraFile {
            schema: CAMERA_SCHEMA.to_string(),
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            mount_xyz: [0.0, 0.0, 0.6],
            mount_rpy: [-FRAC_PI_2 - tilt, 0.0, -FRAC_PI_2],
        }
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
    }

    pub fn mount(&self) -> Isometry3<f64> {
        xyz_rpy(self.mount_xyz, self.mount_rpy)
    }

    pub fn camera_at(&self, base: &BasePose) -> Result<CameraModel> {
        Ok(CameraModel::new(self.intrinsics()?, self.mount(), base))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: CameraFile = io::read_json(path)?;
        if file.schema != CAMERA_SCHEMA {
            return Err(Error::Config(format!(
                "{}: expected schema {CAMERA_SCHEMA:?}, found {:?}",
                path.display(),
                file.schema
            )));
        }
        file.intrinsics()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(file)
    }
}
