//! Dense tanh scorer with online and target parameter vectors, batched
//! forward/backward passes and the `qnet-v1` checkpoint format.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

pub const QNET_SCHEMA: &str = "qnet-v1";

/// Row-major `c (m x n) = a (m x k) * b (k x n)` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass slices covering the strided extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Layer widths `[input, hidden.., output]`; parameters of layer `l` are its
/// `out x in` weight matrix (row-major) followed by its bias.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub layers: Vec<usize>,
}

impl Architecture {
    pub fn new(layers: Vec<usize>) -> Result<Self> {
        if layers.len() < 2 || layers.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {layers:?}")));
        }
        Ok(Architecture { layers })
    }

    pub fn input(&self) -> usize {
        self.layers[0]
    }

    pub fn output(&self) -> usize {
        *self.layers.last().expect("at least two layers")
    }

    pub fn param_count(&self) -> usize {
        self.layers.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = vec![0];
        for w in self.layers.windows(2) {
            off.push(off.last().unwrap() + w[1] * w[0] + w[1]);
        }
        off
    }
}

/// Activations kept for the backward pass.
pub struct ForwardCache {
    batch: usize,
    /// Layer inputs: the network input, then each hidden activation.
    acts: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

pub fn forward(arch: &Architecture, params: &[f64], input: &[f64], batch: usize) -> ForwardCache {
    debug_assert_eq!(input.len(), batch * arch.input());
    let offsets = arch.offsets();
    let n_layers = arch.layers.len() - 1;
    let mut acts = Vec::with_capacity(n_layers);
    let mut x = input.to_vec();
    for l in 0..n_layers {
        let (fan_in, fan_out) = (arch.layers[l], arch.layers[l + 1]);
        let w = &params[offsets[l]..offsets[l] + fan_out * fan_in];
        let b = &params[offsets[l] + fan_out * fan_in..offsets[l + 1]];
        let mut z: Vec<f64> = (0..batch).flat_map(|_| b.iter().copied()).collect();
        gemm(batch, fan_in, fan_out, &x, fan_in, 1, w, 1, fan_in, 1.0, &mut z);
        if l + 1 < n_layers {
            z.iter_mut().for_each(|v| *v = v.tanh());
        }
        acts.push(std::mem::replace(&mut x, z));
    }
    ForwardCache { batch, acts, output: x }
}

/// Gradient of a scalar loss given its gradient w.r.t. the outputs.
pub fn backward(arch: &Architecture, params: &[f64], cache: &ForwardCache, d_output: &[f64]) -> Vec<f64> {
    let offsets = arch.offsets();
    let n_layers = arch.layers.len() - 1;
    let batch = cache.batch;
    let mut grad = vec![0.0; arch.param_count()];
    let mut dz = d_output.to_vec();
    for l in (0..n_layers).rev() {
        let (fan_in, fan_out) = (arch.layers[l], arch.layers[l + 1]);
        let a = &cache.acts[l];
        let (gw, gb) = grad[offsets[l]..offsets[l + 1]].split_at_mut(fan_out * fan_in);
        gemm(fan_out, batch, fan_in, &dz, 1, fan_out, a, fan_in, 1, 0.0, gw);
        for row in dz.chunks_exact(fan_out) {
            for (g, d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
        if l > 0 {
            let w = &params[offsets[l]..offsets[l] + fan_out * fan_in];
            let mut da = vec![0.0; batch * fan_in];
            gemm(batch, fan_out, fan_in, &dz, fan_out, 1, w, fan_in, 1, 0.0, &mut da);
            for (d, act) in da.iter_mut().zip(a) {
                *d *= 1.0 - act * act;
            }
            dz = da;
        }
    }
    grad
}

#[derive(Clone, Debug, PartialEq)]
pub struct QFunction {
    pub arch: Architecture,
    pub online: Vec<f64>,
    pub target: Vec<f64>,
}

impl QFunction {
    /// Glorot-uniform weights, zero biases; target equals online.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut online = Vec::with_capacity(arch.param_count());
        for w in arch.layers.windows(2) {
            let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
            online.extend((0..w[0] * w[1]).map(|_| rng.random_range(-limit..limit)));
            online.extend(std::iter::repeat_n(0.0, w[1]));
        }
        QFunction {
            target: online.clone(),
            online,
            arch,
        }
    }

    pub fn from_params(arch: Architecture, online: Vec<f64>) -> Result<Self> {
        if online.len() != arch.param_count() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", arch.param_count()),
                found: format!("{} parameters", online.len()),
            });
        }
        Ok(QFunction {
            target: online.clone(),
            online,
            arch,
        })
    }

    pub fn n_actions(&self) -> usize {
        self.arch.output()
    }

    pub fn q_online(&self, input: &[f64], batch: usize) -> Vec<f64> {
        forward(&self.arch, &self.online, input, batch).output
    }

    pub fn q_target(&self, input: &[f64], batch: usize) -> Vec<f64> {
        forward(&self.arch, &self.target, input, batch).output
    }

    pub fn sync_target(&mut self) {
        self.target.copy_from_slice(&self.online);
    }

    pub fn sgd_step(&mut self, grad: &[f64], learning_rate: f64) {
        for (p, g) in self.online.iter_mut().zip(grad) {
            *p -= learning_rate * g;
        }
    }

    pub fn save(&self, path: &Path, meta: &CheckpointMeta) -> Result<()> {
        let header = CheckpointHeader {
            schema: QNET_SCHEMA.to_string(),
            layers: self.arch.layers.clone(),
            meta: meta.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Config(e.to_string()))?;
        let mut bytes = Vec::with_capacity(8 + json.len() + 8 * self.online.len());
        bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&json);
        for p in &self.online {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        io::write_bytes(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            column: 0,
            message: msg.to_string(),
        };
        if bytes.len() < 8 {
            return Err(bad("truncated checkpoint header"));
        }
        let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(8..8 + hlen).ok_or_else(|| bad("truncated checkpoint header"))?;
        let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| Error::parse(path, &e))?;
        if header.schema != QNET_SCHEMA {
            return Err(bad(&format!("expected schema {QNET_SCHEMA}, found {}", header.schema)));
        }
        let arch = Architecture::new(header.layers)?;
        let data = &bytes[8 + hlen..];
        if data.len() != 8 * arch.param_count() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters for layers {:?}", arch.param_count(), arch.layers),
                found: format!("{} bytes of parameters", data.len()),
            });
        }
        let online = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((QFunction::from_params(arch, online)?, header.meta))
    }
}

/// Descriptive fields stored next to the layer shapes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    #[serde(default)]
    pub variant: Option<String>,
    #[serde(default)]
    pub task: Option<String>,
    #[serde(default)]
    pub feature_len: Option<usize>,
    #[serde(default)]
    pub global_step: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    schema: String,
    layers: Vec<usize>,
    #[serde(flatten)]
    meta: CheckpointMeta,
}
