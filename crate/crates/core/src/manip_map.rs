//! Offline manipulability map over end-effector positions and its projection
//! into a floored, normalized prior over image-space action bins.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::io;
use crate::kinematics::{
    manipulability, solve_ik, BasePose, IkOptions, JointConfig, KinematicChain, ManipulabilityMode, Pose3,
};
use crate::seeding::split_seed;

/// Score stored for cells with no IK solution. Zero is a legitimate
/// (singular) score, so the sentinel is negative.
pub const INFEASIBLE: f64 = -1.0;

/// Default per-bin probability floor.
pub const DEFAULT_PRIOR_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Aabb { min, max }
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|i| (self.max[i] - self.min[i]).max(0.0)).product()
    }

    /// Region in front of the default arm that the forward camera can see.
    pub fn default_region() -> Self {
        Aabb::new([0.0, -0.9, 0.0], [1.2, 0.9, 1.2])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkspaceMap {
    /// Minimum corner of the grid in the robot base frame.
    pub origin: Vector3<f64>,
    pub cell_size: f64,
    pub dims: [usize; 3],
    /// Row-major over `(x, y, z)`, `z` fastest. `INFEASIBLE` marks IK failures.
    pub scores: Vec<f64>,
}

impl WorkspaceMap {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.dims[1] + iy) * self.dims[2] + iz
    }

    pub fn cell_center(&self, idx: usize) -> Vector3<f64> {
        let nz = self.dims[2];
        let ny = self.dims[1];
        let iz = idx % nz;
        let iy = (idx / nz) % ny;
        let ix = idx / (nz * ny);
        self.origin + Vector3::new(ix as f64 + 0.5, iy as f64 + 0.5, iz as f64 + 0.5) * self.cell_size
    }

    pub fn is_feasible(&self, idx: usize) -> bool {
        self.scores[idx] >= 0.0
    }

    pub fn feasible_count(&self) -> usize {
        self.scores.iter().filter(|s| **s >= 0.0).count()
    }

    /// `(min, max)` over feasible cells.
    pub fn score_range(&self) -> Option<(f64, f64)> {
        self.scores.iter().filter(|s| **s >= 0.0).fold(None, |acc, &s| match acc {
            None => Some((s, s)),
            Some((lo, hi)) => Some((lo.min(s), hi.max(s))),
        })
    }

    pub fn feasible_cells(&self) -> impl Iterator<Item = (Vector3<f64>, f64)> + '_ {
        (0..self.len())
            .filter(|&i| self.is_feasible(i))
            .map(|i| (self.cell_center(i), self.scores[i]))
    }

    pub fn to_file(&self) -> MapFile {
        MapFile {
            schema: MAP_SCHEMA.to_string(),
            origin: self.origin.into(),
            cell_size: self.cell_size,
            dims: self.dims,
            scores: self.scores.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, &self.to_file())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: MapFile = io::read_json(path)?;
        file.into_map()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

pub const MAP_SCHEMA: &str = "wmap-v1";

/// Map file, schema `wmap-v1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapFile {
    pub schema: String,
    pub origin: [f64; 3],
    pub cell_size: f64,
    pub dims: [usize; 3],
    pub scores: Vec<f64>,
}

impl MapFile {
    pub fn into_map(self) -> Result<WorkspaceMap> {
        if self.schema != MAP_SCHEMA {
            return Err(Error::invalid(format!(
                "expected schema {MAP_SCHEMA:?}, found {:?}",
                self.schema
            )));
        }
        if !(self.cell_size > 0.0) {
            return Err(Error::invalid("cell_size must be positive"));
        }
        if self.dims.iter().product::<usize>() != self.scores.len() {
            return Err(Error::invalid("score array length does not match dims"));
        }
        if self.scores.iter().any(|s| !s.is_finite() || (*s < 0.0 && *s != INFEASIBLE)) {
            return Err(Error::invalid("scores must be finite and non-negative or the sentinel"));
        }
        Ok(WorkspaceMap {
            origin: Vector3::from(self.origin),
            cell_size: self.cell_size,
            dims: self.dims,
            scores: self.scores,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapBuildOptions {
    pub cell_size: f64,
    pub samples_per_cell: usize,
    pub seed: u64,
    pub mode: ManipulabilityMode,
    pub ik: IkOptions,
}

impl Default for MapBuildOptions {
    fn default() -> Self {
        MapBuildOptions {
            cell_size: 0.05,
            samples_per_cell: 3,
            seed: 0,
            mode: ManipulabilityMode::PositionOnly,
            ik: IkOptions::default(),
        }
    }
}

/// Grid the region (robot base frame) and score every cell center by the best
/// manipulability among IK solutions found from random seeds.
pub fn build_workspace_map(
    chain: &KinematicChain,
    region: &Aabb,
    opts: &MapBuildOptions,
) -> Result<WorkspaceMap> {
    if !(region.volume() > 0.0) {
        return Err(Error::invalid("workspace region must have positive volume"));
    }
    if !(opts.cell_size > 0.0) {
        return Err(Error::invalid("cell size must be positive"));
    }
    if opts.samples_per_cell == 0 {
        return Err(Error::invalid("need at least one IK seed per cell"));
    }
    let mut dims = [0usize; 3];
    for (axis, dim) in dims.iter_mut().enumerate() {
        *dim = ((region.max[axis] - region.min[axis]) / opts.cell_size).ceil().max(1.0) as usize;
    }
    let mut map = WorkspaceMap {
        origin: Vector3::from(region.min),
        cell_size: opts.cell_size,
        dims,
        scores: Vec::new(),
    };
    let root_inv = chain.base_mount().inverse();
    let reach = chain.max_reach();

    let scores: Vec<f64> = (0..dims.iter().product::<usize>())
        .into_par_iter()
        .map(|idx| {
            let target = root_inv * nalgebra::Point3::from(map.cell_center(idx));
            if target.coords.norm() > reach {
                return INFEASIBLE;
            }
            let target = Pose3::from_position(target.coords);
            let mut rng = ChaCha8Rng::seed_from_u64(split_seed(opts.seed, idx as u64));
            let mut best = INFEASIBLE;
            for _ in 0..opts.samples_per_cell {
                let seed = random_config(chain, &mut rng);
                let outcome = solve_ik(chain, &target, &seed, &opts.ik).expect("seed length matches chain");
                if let Some(sol) = outcome.solution() {
                    let w = manipulability(chain, &sol.q, opts.mode).expect("solution length matches chain");
                    best = best.max(w);
                }
            }
            best
        })
        .collect();
    map.scores = scores;
    Ok(map)
}

pub fn random_config<R: Rng>(chain: &KinematicChain, rng: &mut R) -> JointConfig {
    JointConfig(
        chain
            .joints()
            .iter()
            .map(|j| if j.upper > j.lower { rng.random_range(j.lower..=j.upper) } else { j.lower })
            .collect(),
    )
}

/// Binning of the image into `stride x stride` pixel action bins.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionGrid {
    pub image_width: usize,
    pub image_height: usize,
    pub stride: usize,
}

impl ActionGrid {
    pub fn new(image_width: usize, image_height: usize, stride: usize) -> Result<Self> {
        if stride == 0 || image_width == 0 || image_height == 0 {
            return Err(Error::invalid("action grid needs a positive stride and image size"));
        }
        Ok(ActionGrid {
            image_width,
            image_height,
            stride,
        })
    }

    pub fn bins_x(&self) -> usize {
        self.image_width.div_ceil(self.stride)
    }

    pub fn bins_y(&self) -> usize {
        self.image_height.div_ceil(self.stride)
    }

    pub fn len(&self) -> usize {
        self.bins_x() * self.bins_y()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bin_of_pixel(&self, px: usize, py: usize) -> usize {
        (py / self.stride) * self.bins_x() + px / self.stride
    }

    pub fn bin_coords(&self, bin: usize) -> (usize, usize) {
        (bin % self.bins_x(), bin / self.bins_x())
    }

    /// Pixel executed for a bin: the bin center clamped into the image.
    pub fn center_pixel(&self, bin: usize) -> (usize, usize) {
        let (bx, by) = self.bin_coords(bin);
        let half = self.stride / 2;
        (
            (bx * self.stride + half).min(self.image_width - 1),
            (by * self.stride + half).min(self.image_height - 1),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PixelPrior {
    pub grid: ActionGrid,
    pub probs: Vec<f64>,
    pub support: Vec<bool>,
    /// Per-bin max of projected cell scores (0 for unsupported bins).
    pub raw_scores: Vec<f64>,
    pub floor: f64,
}

impl PixelPrior {
    pub fn uniform(grid: ActionGrid) -> Self {
        let n = grid.len();
        PixelPrior {
            grid,
            probs: vec![1.0 / n as f64; n],
            support: vec![false; n],
            raw_scores: vec![0.0; n],
            floor: 1.0 / n as f64,
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn lookup(&self, bin: usize) -> Result<f64> {
        prior_lookup(self, bin)
    }

    /// Prior restricted to `candidates` and renormalized. Falls back to the
    /// full prior when no candidate is set.
    pub fn restricted(&self, candidates: &[bool]) -> Vec<f64> {
        let mass: f64 = self.probs.iter().zip(candidates).filter(|(_, c)| **c).map(|(p, _)| p).sum();
        if mass <= 0.0 {
            return self.probs.clone();
        }
        self.probs
            .iter()
            .zip(candidates)
            .map(|(p, c)| if *c { p / mass } else { 0.0 })
            .collect()
    }

    /// CSV export: `bin_x,bin_y,prob,supported`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_x,bin_y,prob,supported\n");
        for (bin, (p, s)) in self.probs.iter().zip(&self.support).enumerate() {
            let (bx, by) = self.grid.bin_coords(bin);
            writeln!(out, "{bx},{by},{p:e},{}", u8::from(*s)).expect("writing to a String");
        }
        out
    }

    /// RGB heat image at full image resolution: bins colored by probability
    /// relative to the largest bin, unsupported bins dark.
    pub fn heatmap_rgb(&self) -> Vec<u8> {
        let (w, h) = (self.grid.image_width, self.grid.image_height);
        let max = self.probs.iter().cloned().fold(0.0, f64::max);
        let mut rgb = vec![0u8; w * h * 3];
        for py in 0..h {
            for px in 0..w {
                let bin = self.grid.bin_of_pixel(px, py);
                let color = if self.support[bin] && max > 0.0 {
                    io::heat_color(self.probs[bin] / max)
                } else {
                    [20, 20, 30]
                };
                rgb[(py * w + px) * 3..(py * w + px) * 3 + 3].copy_from_slice(&color);
            }
        }
        rgb
    }

    /// Heat map blended over a rendered frame on supported bins.
    pub fn overlay_rgb(&self, frame: &[u8]) -> Vec<u8> {
        let heat = self.heatmap_rgb();
        let (w, h) = (self.grid.image_width, self.grid.image_height);
        let mut out = frame.to_vec();
        for py in 0..h {
            for px in 0..w {
                if self.support[self.grid.bin_of_pixel(px, py)] {
                    let o = (py * w + px) * 3;
                    for c in 0..3 {
                        out[o + c] = ((u16::from(frame[o + c]) + 2 * u16::from(heat[o + c])) / 3) as u8;
                    }
                }
            }
        }
        out
    }
}

pub fn prior_lookup(prior: &PixelPrior, bin: usize) -> Result<f64> {
    prior
        .probs
        .get(bin)
        .copied()
        .ok_or_else(|| Error::invalid(format!("bin {bin} out of range (have {})", prior.len())))
}

/// Project feasible cells (base frame) through the camera carried at `base`,
/// keep the per-bin maximum score, normalize supported bins to
/// `1 - floor * B` and add the floor everywhere.
pub fn project_to_pixel_prior(
    map: &WorkspaceMap,
    cam: &CameraModel,
    base: &BasePose,
    grid: ActionGrid,
    floor: f64,
) -> Result<PixelPrior> {
    if grid.image_width != cam.intrinsics.width || grid.image_height != cam.intrinsics.height {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", cam.intrinsics.width, cam.intrinsics.height),
            found: format!("{}x{}", grid.image_width, grid.image_height),
        });
    }
    let cam = cam.at_base(base);
    let to_world = base.to_isometry();
    let mut raw = vec![f64::NEG_INFINITY; grid.len()];
    for (center, score) in map.feasible_cells() {
        let world = to_world * nalgebra::Point3::from(center);
        if let Some(p) = cam.project(&world.coords) {
            let (px, py) = p.pixel();
            let bin = grid.bin_of_pixel(px, py);
            raw[bin] = raw[bin].max(score);
        }
    }
    normalize_scores(grid, &raw, floor)
}

/// Build a prior from per-bin raw scores; `-inf` marks unsupported bins.
pub fn normalize_scores(grid: ActionGrid, raw: &[f64], floor: f64) -> Result<PixelPrior> {
    let n = grid.len();
    if raw.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n.to_string(),
            found: raw.len().to_string(),
        });
    }
    if !(floor >= 0.0) || floor * n as f64 >= 1.0 {
        return Err(Error::invalid(format!("prior floor {floor} too large for {n} bins")));
    }
    let support: Vec<bool> = raw.iter().map(|s| s.is_finite()).collect();
    let supported = support.iter().filter(|s| **s).count();
    if supported == 0 {
        return Err(Error::EmptyPrior);
    }
    let raw_scores: Vec<f64> = raw.iter().map(|s| if s.is_finite() { *s } else { 0.0 }).collect();
    let total: f64 = raw_scores.iter().sum();
    let mass = 1.0 - floor * n as f64;
    let probs = raw_scores
        .iter()
        .zip(&support)
        .map(|(s, sup)| {
            let share = match (*sup, total > 0.0) {
                (false, _) => 0.0,
                (true, true) => s / total,
                (true, false) => 1.0 / supported as f64,
            };
            floor + mass * share
        })
        .collect();
    Ok(PixelPrior {
        grid,
        probs,
        support,
        raw_scores,
        floor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{CameraExtrinsics, CameraIntrinsics};

    fn grid4() -> ActionGrid {
        ActionGrid::new(4, 1, 1).unwrap()
    }

    #[test]
    fn proportional_normalization() {
        let raw = [1.0, 1.0, 2.0, f64::NEG_INFINITY];
        let prior = normalize_scores(grid4(), &raw, 0.0).unwrap();
        assert_eq!(prior.probs, vec![0.25, 0.25, 0.5, 0.0]);
        assert_eq!(prior.support, vec![true, true, true, false]);
    }

    #[test]
    fn equal_scores_give_uniform_support() {
        let raw = [3.0, f64::NEG_INFINITY, 3.0, 3.0];
        let prior = normalize_scores(grid4(), &raw, 0.0).unwrap();
        for b in [0, 2, 3] {
            assert!((prior.probs[b] - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn floor_bins_and_lookup() {
        let raw = [1.0, f64::NEG_INFINITY, 5.0, 0.0];
        let prior = normalize_scores(grid4(), &raw, 0.01).unwrap();
        assert_eq!(prior_lookup(&prior, 1).unwrap(), 0.01);
        let max_bin = (0..4).max_by(|a, b| prior.probs[*a].total_cmp(&prior.probs[*b])).unwrap();
        assert_eq!(max_bin, 2);
        assert!((prior.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(prior_lookup(&prior, 4), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn all_unsupported_is_empty_prior() {
        let raw = [f64::NEG_INFINITY; 4];
        assert!(matches!(normalize_scores(grid4(), &raw, 0.0), Err(Error::EmptyPrior)));
    }

    #[test]
    fn floor_must_leave_mass() {
        assert!(normalize_scores(grid4(), &[1.0; 4], 0.25).is_err());
    }

    #[test]
    fn grid_geometry() {
        let g = ActionGrid::new(640, 480, 20).unwrap();
        assert_eq!((g.bins_x(), g.bins_y(), g.len()), (32, 24, 768));
        let g = ActionGrid::new(10, 7, 4).unwrap();
        assert_eq!((g.bins_x(), g.bins_y()), (3, 2));
        assert_eq!(g.center_pixel(2), (9, 2));
        assert_eq!(g.center_pixel(5), (9, 6));
        // every pixel lands in exactly one bin, and each bin's center maps back to it
        let mut counts = vec![0; g.len()];
        for y in 0..7 {
            for x in 0..10 {
                counts[g.bin_of_pixel(x, y)] += 1;
            }
        }
        assert_eq!(counts.iter().sum::<usize>(), 70);
        for b in 0..g.len() {
            let (x, y) = g.center_pixel(b);
            assert_eq!(g.bin_of_pixel(x, y), b);
        }
    }

    #[test]
    fn unreachable_region_is_all_sentinel() {
        let chain = crate::kinematics::KinematicChain::planar(&[1.0, 1.0]).unwrap();
        let region = Aabb::new([5.0, 5.0, -0.1], [5.5, 5.5, 0.1]);
        let map = build_workspace_map(&chain, &region, &MapBuildOptions { cell_size: 0.1, ..Default::default() }).unwrap();
        assert!(!map.is_empty());
        assert!(map.scores.iter().all(|s| *s == INFEASIBLE));
        let k = CameraIntrinsics::new(10.0, 10.0, 5.0, 5.0, 10, 10).unwrap();
        let cam = CameraModel::from_extrinsics(k, CameraExtrinsics::identity());
        let grid = ActionGrid::new(10, 10, 2).unwrap();
        assert!(matches!(
            project_to_pixel_prior(&map, &cam, &BasePose::default(), grid, 1e-4),
            Err(Error::EmptyPrior)
        ));
    }

    #[test]
    fn empty_region_rejected() {
        let chain = crate::kinematics::default_arm();
        let region = Aabb::new([0.0, 0.0, 0.0], [1.0, 0.0, 1.0]);
        assert!(matches!(
            build_workspace_map(&chain, &region, &MapBuildOptions::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn map_file_validation() {
        let mut file = WorkspaceMap {
            origin: Vector3::zeros(),
            cell_size: 0.1,
            dims: [1, 1, 2],
            scores: vec![0.5, INFEASIBLE],
        }
        .to_file();
        assert!(file.clone().into_map().is_ok());
        file.scores[0] = -0.5;
        assert!(file.clone().into_map().is_err());
        file.scores = vec![0.5];
        assert!(file.into_map().is_err());
    }

    #[test]
    fn csv_has_one_row_per_bin() {
        let prior = PixelPrior::uniform(ActionGrid::new(8, 4, 4).unwrap());
        let csv = prior.to_csv();
        assert_eq!(csv.lines().count(), 1 + 2);
        assert!(csv.starts_with("bin_x,bin_y,prob,supported\n0,0,5e-1,0"));
    }
}
