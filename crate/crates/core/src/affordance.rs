//! Observation-derived inputs of the policy: the affordance mask read off the
//! id plane, a pooled fixed-length state feature, and the per-bin view of the
//! mask used by the action space.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::manip_map::ActionGrid;
use crate::simenv::{Observation, TaskKind};

pub const DEFAULT_FEATURE_LEN: usize = 348;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AffordanceMask {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
}

impl AffordanceMask {
    pub fn empty(width: usize, height: usize) -> Self {
        AffordanceMask {
            width,
            height,
            mask: vec![false; width * height],
        }
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|m| *m)
    }

    pub fn union(&self, other: &AffordanceMask) -> Result<AffordanceMask> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", self.width, self.height),
                found: format!("{}x{}", other.width, other.height),
            });
        }
        Ok(AffordanceMask {
            width: self.width,
            height: self.height,
            mask: self.mask.iter().zip(&other.mask).map(|(a, b)| *a || *b).collect(),
        })
    }

    /// 8-bit PGM, 255 where masked.
    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let pixels: Vec<u8> = self.mask.iter().map(|m| if *m { 255 } else { 0 }).collect();
        io::write_pgm8(path, self.width, self.height, &pixels)
    }
}

/// Pixels whose object class is the task's manipulable class.
pub fn extract_affordance(obs: &Observation, task: TaskKind) -> AffordanceMask {
    let class = task.affordance_class();
    AffordanceMask {
        width: obs.width,
        height: obs.height,
        mask: (0..obs.ids.len()).map(|i| obs.class_at(i) == Some(class)).collect(),
    }
}

/// A bin is set when at least one of its pixels is masked.
pub fn mask_to_bins(mask: &AffordanceMask, grid: &ActionGrid) -> Result<Vec<bool>> {
    if (mask.width, mask.height) != (grid.image_width, grid.image_height) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", grid.image_width, grid.image_height),
            found: format!("{}x{}", mask.width, mask.height),
        });
    }
    let mut bins = vec![false; grid.len()];
    for v in 0..mask.height {
        for u in 0..mask.width {
            if mask.mask[v * mask.width + u] {
                bins[grid.bin_of_pixel(u, v)] = true;
            }
        }
    }
    Ok(bins)
}

/// Patch grid and output length of the pooling encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub patch_cols: usize,
    pub patch_rows: usize,
    pub len: usize,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            patch_cols: 10,
            patch_rows: 8,
            len: DEFAULT_FEATURE_LEN,
        }
    }
}

impl FeatureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.patch_cols == 0 || self.patch_rows == 0 || self.len == 0 {
            return Err(Error::Config("feature patch grid and length must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateFeature {
    pub values: Vec<f64>,
}

impl StateFeature {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per patch: mean R, G, B in [0, 1] and mean inverse depth (0 for sky),
/// flattened row-major over patches, then zero-padded or truncated.
pub fn encode_state(obs: &Observation, spec: &FeatureSpec) -> StateFeature {
    let mut values = Vec::with_capacity(spec.patch_cols * spec.patch_rows * 4);
    for pr in 0..spec.patch_rows {
        let (v0, v1) = (pr * obs.height / spec.patch_rows, (pr + 1) * obs.height / spec.patch_rows);
        for pc in 0..spec.patch_cols {
            let (u0, u1) = (pc * obs.width / spec.patch_cols, (pc + 1) * obs.width / spec.patch_cols);
            let mut sums = [0.0; 4];
            let mut n = 0usize;
            for v in v0..v1 {
                for u in u0..u1 {
                    let i = v * obs.width + u;
                    for c in 0..3 {
                        sums[c] += f64::from(obs.rgb[i * 3 + c]);
                    }
                    let d = obs.depth[i];
                    if d.is_finite() {
                        sums[3] += 1.0 / d;
                    }
                    n += 1;
                }
            }
            let n = n.max(1) as f64;
            values.extend_from_slice(&[sums[0] / (255.0 * n), sums[1] / (255.0 * n), sums[2] / (255.0 * n), sums[3] / n]);
        }
    }
    values.resize(spec.len, 0.0);
    StateFeature { values }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sky_feature() {
        let obs = Observation::empty(40, 32);
        let f = encode_state(&obs, &FeatureSpec::default());
        assert_eq!(f.len(), DEFAULT_FEATURE_LEN);
        let sky = crate::simenv::SKY_COLOR;
        for p in 0..80 {
            for c in 0..3 {
                assert!((f.values[p * 4 + c] - f64::from(sky[c]) / 255.0).abs() < 1e-15);
            }
            assert_eq!(f.values[p * 4 + 3], 0.0);
        }
        assert!(f.values[320..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn truncation() {
        let obs = Observation::empty(40, 32);
        let spec = FeatureSpec {
            len: 10,
            ..FeatureSpec::default()
        };
        assert_eq!(encode_state(&obs, &spec).len(), 10);
    }

    #[test]
    fn bins_of_masks() {
        let grid = ActionGrid::new(16, 8, 4).unwrap();
        let mut mask = AffordanceMask::empty(16, 8);
        assert!(mask_to_bins(&mask, &grid).unwrap().iter().all(|b| !b));
        mask.mask[5 * 16 + 9] = true;
        let bins = mask_to_bins(&mask, &grid).unwrap();
        assert_eq!(bins.iter().filter(|b| **b).count(), 1);
        assert!(bins[grid.bin_of_pixel(9, 5)]);
        mask.mask.iter_mut().for_each(|m| *m = true);
        assert!(mask_to_bins(&mask, &grid).unwrap().iter().all(|b| *b));
    }

    #[test]
    fn shape_mismatch() {
        let grid = ActionGrid::new(16, 8, 4).unwrap();
        assert!(mask_to_bins(&AffordanceMask::empty(8, 8), &grid).is_err());
    }
}
