//! Episode records, sliding-window learning curves aggregated across seeds,
//! and run summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

pub const DEFAULT_WINDOW: usize = 50;
pub const DEFAULT_THRESHOLD: f64 = 0.85;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// Global step at which the episode ended.
    pub global_step: u64,
    pub episode: u64,
    pub variant: String,
    pub seed: u64,
    pub success: bool,
    /// Base-advance distance; 0 for failed episodes.
    pub move_distance: f64,
    pub reward: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub x: Vec<u64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl LearningCurve {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// CSV with header `step,mean,stderr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,mean,stderr\n");
        for i in 0..self.x.len() {
            writeln!(out, "{},{:e},{:e}", self.x[i], self.mean[i], self.stderr[i]).expect("write to string");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut curve = LearningCurve::default();
        for (n, line) in text.lines().enumerate().skip(1) {
            let bad = || Error::Config(format!("malformed curve row {}: {line:?}", n + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(bad());
            }
            curve.x.push(f[0].parse().map_err(|_| bad())?);
            curve.mean.push(f[1].parse().map_err(|_| bad())?);
            curve.stderr.push(f[2].parse().map_err(|_| bad())?);
        }
        Ok(curve)
    }
}

/// Sample standard deviation over `sqrt(n)`; 0 for fewer than two values.
pub fn standard_error(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    var.sqrt() / (n as f64).sqrt()
}

/// Records of one run ordered by (global_step, episode).
fn sorted(records: &[&EpisodeRecord]) -> Vec<EpisodeRecord> {
    let mut v: Vec<EpisodeRecord> = records.iter().map(|r| (*r).clone()).collect();
    v.sort_by_key(|r| (r.global_step, r.episode));
    v
}

/// `(global_step, mean of value over the last window episodes)` once a full
/// window is available.
pub fn sliding_window(records: &[EpisodeRecord], window: usize, value: impl Fn(&EpisodeRecord) -> f64) -> Vec<(u64, f64)> {
    if window == 0 || records.len() < window {
        return Vec::new();
    }
    let vals: Vec<f64> = records.iter().map(&value).collect();
    (window - 1..records.len())
        .map(|end| {
            let sum: f64 = vals[end + 1 - window..=end].iter().sum();
            (records[end].global_step, sum / window as f64)
        })
        .collect()
}

fn by_seed(records: &[EpisodeRecord]) -> BTreeMap<u64, Vec<&EpisodeRecord>> {
    let mut groups: BTreeMap<u64, Vec<&EpisodeRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.seed).or_default().push(r);
    }
    groups
}

/// Evenly spaced step edges `width, 2 width, ...` covering the last record.
pub fn step_edges(records: &[EpisodeRecord], count: usize) -> Vec<u64> {
    let max = records.iter().map(|r| r.global_step).max().unwrap_or(0);
    if max == 0 || count == 0 {
        return Vec::new();
    }
    let width = max.div_ceil(count as u64).max(1);
    (1..=max.div_ceil(width)).map(|k| k * width).collect()
}

fn curve(records: &[EpisodeRecord], window: usize, edges: &[u64], value: impl Fn(&EpisodeRecord) -> f64 + Copy) -> LearningCurve {
    let series: Vec<Vec<(u64, f64)>> = by_seed(records)
        .values()
        .map(|rs| sliding_window(&sorted(rs), window, value))
        .collect();
    let mut out = LearningCurve::default();
    for &edge in edges {
        let at_edge: Vec<f64> = series
            .iter()
            .filter_map(|s| s.iter().take_while(|(step, _)| *step <= edge).last().map(|(_, v)| *v))
            .collect();
        if at_edge.is_empty() {
            continue;
        }
        out.x.push(edge);
        out.mean.push(at_edge.iter().sum::<f64>() / at_edge.len() as f64);
        out.stderr.push(standard_error(&at_edge));
    }
    out
}

/// Per-seed sliding success fraction, averaged across seeds at each edge.
/// Edges where no seed has a full window yet are omitted.
pub fn success_rate_curve(records: &[EpisodeRecord], window: usize, edges: &[u64]) -> LearningCurve {
    curve(records, window, edges, |r| if r.success { 1.0 } else { 0.0 })
}

/// As `success_rate_curve`, averaging move distance with failures as 0.
pub fn move_distance_curve(records: &[EpisodeRecord], window: usize, edges: &[u64]) -> LearningCurve {
    curve(records, window, edges, |r| if r.success { r.move_distance } else { 0.0 })
}

/// First global step at which a full window reaches `threshold` success.
pub fn steps_to_threshold(records: &[EpisodeRecord], window: usize, threshold: f64) -> Option<u64> {
    let refs: Vec<&EpisodeRecord> = records.iter().collect();
    sliding_window(&sorted(&refs), window, |r| if r.success { 1.0 } else { 0.0 })
        .into_iter()
        .find(|(_, v)| *v >= threshold - 1e-12)
        .map(|(s, _)| s)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedCurve {
    pub variant: String,
    pub metric: String,
    pub curve: LearningCurve,
}

/// Writes `<metric>_<variant>.csv` for every curve into `dir`.
pub fn aggregate_and_export(curves: &[NamedCurve], dir: &Path) -> Result<Vec<PathBuf>> {
    io::ensure_dir(dir)?;
    curves
        .iter()
        .map(|c| {
            let path = dir.join(format!("{}_{}.csv", c.metric, c.variant));
            io::write_bytes(&path, c.curve.to_csv().as_bytes())?;
            Ok(path)
        })
        .collect()
}

pub const SUMMARY_SCHEMA: &str = "summary-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: String,
    pub task: String,
    pub variant: String,
    pub seed: u64,
    pub total_steps: u64,
    pub episodes: u64,
    /// Success fraction over the last window (or all episodes if fewer).
    pub final_success_rate: f64,
    /// Mean move distance over the same episodes, failures counted as 0.
    pub final_mean_move_distance: f64,
    pub steps_to_threshold: Option<u64>,
}

impl RunSummary {
    pub fn from_records(
        task: &str,
        variant: &str,
        seed: u64,
        total_steps: u64,
        records: &[EpisodeRecord],
        window: usize,
        threshold: f64,
    ) -> Self {
        let refs: Vec<&EpisodeRecord> = records.iter().collect();
        let ordered = sorted(&refs);
        let tail = &ordered[ordered.len().saturating_sub(window.max(1))..];
        let n = tail.len().max(1) as f64;
        RunSummary {
            schema: SUMMARY_SCHEMA.to_string(),
            task: task.to_string(),
            variant: variant.to_string(),
            seed,
            total_steps,
            episodes: records.len() as u64,
            final_success_rate: tail.iter().filter(|r| r.success).count() as f64 / n,
            final_mean_move_distance: tail.iter().filter(|r| r.success).map(|r| r.move_distance).sum::<f64>() / n,
            steps_to_threshold: steps_to_threshold(records, window, threshold),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        io::read_json(path)
    }
}
