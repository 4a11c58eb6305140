//! Z-buffered rasterization of axis-aligned boxes into RGB, metric depth and
//! object-id planes. Each box covers the pixel rectangle spanned by its
//! projected corners; inside it every pixel center is ray-tested against the
//! box and kept when nearer than the current depth.

use std::path::Path;

use crate::camera::CameraModel;
use crate::error::Result;
use crate::io;

use super::scene::{ClassTag, SceneObject, WorldScene};

pub const SKY_ID: u16 = 0;
pub const SKY_COLOR: [u8; 3] = [135, 190, 235];

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub rgb: Vec<u8>,
    /// Camera-frame depth in meters; `f64::INFINITY` where nothing is hit.
    pub depth: Vec<f64>,
    /// Object id per pixel; `SKY_ID` where nothing is hit.
    pub ids: Vec<u16>,
    /// Class of each object id present in the scene (index = id).
    pub classes: Vec<Option<ClassTag>>,
}

impl Observation {
    pub fn empty(width: usize, height: usize) -> Self {
        let n = width * height;
        Observation {
            width,
            height,
            rgb: SKY_COLOR.iter().copied().cycle().take(n * 3).collect(),
            depth: vec![f64::INFINITY; n],
            ids: vec![SKY_ID; n],
            classes: vec![None],
        }
    }

    pub fn pixel_index(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    pub fn class_at(&self, idx: usize) -> Option<ClassTag> {
        self.classes.get(self.ids[idx] as usize).copied().flatten()
    }

    pub fn count_id(&self, id: u16) -> usize {
        self.ids.iter().filter(|i| **i == id).count()
    }

    pub fn count_class(&self, class: ClassTag) -> usize {
        (0..self.ids.len()).filter(|&i| self.class_at(i) == Some(class)).count()
    }

    /// PPM (rgb), 16-bit PGM depth in millimeters (0 for sky) and 8-bit PGM ids.
    pub fn save_frames(&self, dir: &Path, prefix: &str) -> Result<()> {
        io::ensure_dir(dir)?;
        io::write_ppm(&dir.join(format!("{prefix}_rgb.ppm")), self.width, self.height, &self.rgb)?;
        let depth_mm: Vec<u16> = self
            .depth
            .iter()
            .map(|d| if d.is_finite() { (d * 1000.0).round().clamp(0.0, 65535.0) as u16 } else { 0 })
            .collect();
        io::write_pgm16(&dir.join(format!("{prefix}_depth.pgm")), self.width, self.height, &depth_mm)?;
        let ids: Vec<u8> = self.ids.iter().map(|i| (*i).min(255) as u8).collect();
        io::write_pgm8(&dir.join(format!("{prefix}_ids.pgm")), self.width, self.height, &ids)
    }
}

/// Entry parameter and entry face axis of a ray against an axis-aligned box.
fn ray_box(origin: &[f64; 3], dir: &[f64; 3], min: &[f64; 3], max: &[f64; 3]) -> Option<(f64, usize)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut axis = 0;
    for a in 0..3 {
        if dir[a].abs() < 1e-300 {
            if origin[a] < min[a] || origin[a] > max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (t0, t1) = {
            let t0 = (min[a] - origin[a]) * inv;
            let t1 = (max[a] - origin[a]) * inv;
            if t0 <= t1 { (t0, t1) } else { (t1, t0) }
        };
        if t0 > t_near {
            t_near = t0;
            axis = a;
        }
        t_far = t_far.min(t1);
        if t_near > t_far {
            return None;
        }
    }
    (t_near > 0.0).then_some((t_near, axis))
}

fn shade(color: [u8; 3], axis: usize, dir_component: f64) -> [u8; 3] {
    // Top faces brightest, side faces dimmer, undersides darkest.
    let factor = match (axis, dir_component < 0.0) {
        (2, true) => 1.0,
        (2, false) => 0.5,
        (0, _) => 0.85,
        _ => 0.7,
    };
    color.map(|c| (f64::from(c) * factor).round() as u8)
}

/// Pixel rectangle `[u0, u1) x [v0, v1)` that may contain the box.
fn screen_bounds(cam: &CameraModel, obj: &SceneObject) -> (usize, usize, usize, usize) {
    let (w, h) = (cam.intrinsics.width, cam.intrinsics.height);
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for corner in obj.shape.corners() {
        let pc = cam.extrinsics.to_camera(&corner);
        if pc.z <= 1e-9 {
            // Straddles the image plane: fall back to the full frame.
            return (0, w, 0, h);
        }
        let k = &cam.intrinsics;
        let u = k.fx * pc.x / pc.z + k.cx;
        let v = k.fy * pc.y / pc.z + k.cy;
        lo = (lo.0.min(u), lo.1.min(v));
        hi = (hi.0.max(u), hi.1.max(v));
    }
    let clamp = |x: f64, n: usize| x.max(0.0).min(n as f64) as usize;
    (
        clamp(lo.0.floor() - 1.0, w),
        clamp(hi.0.ceil() + 1.0, w),
        clamp(lo.1.floor() - 1.0, h),
        clamp(hi.1.ceil() + 1.0, h),
    )
}

pub fn render_objects(cam: &CameraModel, objects: &[SceneObject]) -> Observation {
    let (w, h) = (cam.intrinsics.width, cam.intrinsics.height);
    let mut obs = Observation::empty(w, h);
    let max_id = objects.iter().map(|o| o.id as usize).max().unwrap_or(0);
    obs.classes = vec![None; max_id + 1];
    for obj in objects {
        obs.classes[obj.id as usize] = Some(obj.class_tag);
    }
    let origin: [f64; 3] = cam.extrinsics.center().into();
    for obj in objects {
        let (min, max): ([f64; 3], [f64; 3]) = (obj.shape.min().into(), obj.shape.max().into());
        let (u0, u1, v0, v1) = screen_bounds(cam, obj);
        for v in v0..v1 {
            for u in u0..u1 {
                let (_, dir) = cam.ray_world(u as f64 + 0.5, v as f64 + 0.5);
                let dir: [f64; 3] = dir.into();
                let Some((t, axis)) = ray_box(&origin, &dir, &min, &max) else {
                    continue;
                };
                let idx = v * w + u;
                if t < obs.depth[idx] {
                    obs.depth[idx] = t;
                    obs.ids[idx] = obj.id;
                    obs.rgb[idx * 3..idx * 3 + 3].copy_from_slice(&shade(obj.color, axis, dir[axis]));
                }
            }
        }
    }
    obs
}

pub fn render_observation(scene: &WorldScene) -> Observation {
    render_objects(&scene.camera, &scene.objects)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{CameraExtrinsics, CameraIntrinsics};
    use crate::simenv::scene::BoxShape;
    use nalgebra::Vector3;

    fn axis_camera() -> CameraModel {
        let k = CameraIntrinsics::new(100.0, 100.0, 64.0, 48.0, 128, 96).unwrap();
        CameraModel::from_extrinsics(k, CameraExtrinsics::identity())
    }

    fn panel(id: u16, center: [f64; 3], half: [f64; 3]) -> SceneObject {
        SceneObject {
            id,
            class_tag: ClassTag::Wall,
            shape: BoxShape {
                center: Vector3::from(center),
                half_extents: Vector3::from(half),
            },
            color: [200, 0, 0],
        }
    }

    #[test]
    fn empty_scene_is_sky() {
        let obs = render_objects(&axis_camera(), &[]);
        assert!(obs.depth.iter().all(|d| d.is_infinite()));
        assert!(obs.ids.iter().all(|i| *i == SKY_ID));
    }

    #[test]
    fn nearest_surface_wins() {
        let near = panel(1, [0.0, 0.0, 2.0], [0.2, 0.2, 0.01]);
        let far = panel(2, [0.0, 0.0, 4.0], [1.0, 1.0, 0.01]);
        for objects in [vec![near.clone(), far.clone()], vec![far, near]] {
            let obs = render_objects(&axis_camera(), &objects);
            let center = obs.pixel_index(64, 48);
            assert_eq!(obs.ids[center], 1);
            assert!((obs.depth[center] - 1.99).abs() < 1e-12);
            assert_eq!(obs.ids[obs.pixel_index(64 + 15, 48)], 2);
        }
    }

    #[test]
    fn ray_box_entry_face() {
        let hit = ray_box(&[0.0, 0.0, 0.0], &[0.0, 0.0, 1.0], &[-1.0, -1.0, 2.0], &[1.0, 1.0, 3.0]);
        assert_eq!(hit, Some((2.0, 2)));
        assert!(ray_box(&[0.0, 0.0, 0.0], &[0.0, 0.0, -1.0], &[-1.0, -1.0, 2.0], &[1.0, 1.0, 3.0]).is_none());
    }
}
