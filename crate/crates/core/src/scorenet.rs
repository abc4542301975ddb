//! Fully-connected denoiser `D_θ(φ̃; ψ, σ)` with hand-written backprop.
//!
//! Input is `concat(φ̃, ψ, log₁₀σ)`, hidden layers use ReLU and the output
//! layer a sigmoid, so every output lies strictly inside `(0, 1)`.
//!
//! Parameters live in one flat vector laid out layer by layer, weights
//! (row-major, `out × in`) before biases. The checkpoint file stores exactly
//! this vector after a short header:
//!
//! ```text
//! SALDC1\n
//! <d0> <d1> ... <dL>\n
//! <little-endian f64 × num_params>
//! ```

use std::io::Write as _;
use std::path::Path;

use crate::channel::EnvironmentSetting;
use crate::error::{Error, Result};
use crate::numerics::RngState;

pub const CHECKPOINT_MAGIC: &[u8] = b"SALDC1\n";

/// Hidden widths used when none are configured.
pub const DEFAULT_HIDDEN: [usize; 5] = [64; 5];

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserParams {
    dims: Vec<usize>,
    n_p: usize,
    values: Vec<f64>,
}

/// Cached activations of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// `activations[0]` is the network input, `activations[l]` the output of
    /// layer `l`.
    activations: Vec<Vec<f64>>,
    /// Pre-activations of every layer.
    pre: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn input(&self) -> &[f64] {
        &self.activations[0]
    }

    pub fn output(&self) -> &[f64] {
        self.activations.last().unwrap()
    }
}

fn layer_sizes(dims: &[usize]) -> impl Iterator<Item = (usize, usize)> + '_ {
    dims.windows(2).map(|w| (w[0], w[1]))
}

fn param_count(dims: &[usize]) -> usize {
    layer_sizes(dims).map(|(i, o)| i * o + o).sum()
}

/// Logistic function, kept strictly inside `(0, 1)` even where it would round
/// to an endpoint.
fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

impl DenoiserParams {
    /// All-zero parameters for the given layer dims; `denoise` then returns 0.5
    /// everywhere.
    pub fn zeros(dims: &[usize], n_p: usize) -> Result<Self> {
        Self::from_values(dims, n_p, vec![0.0; param_count(dims)])
    }

    pub fn from_values(dims: &[usize], n_p: usize, values: Vec<f64>) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!("layer dims must be positive, got {dims:?}")));
        }
        if *dims.last().unwrap() != n_p || dims[0] < n_p + 1 {
            return Err(Error::DimensionMismatch(format!(
                "dims {dims:?} cannot map (φ̃, ψ, σ) with N_p = {n_p} onto N_p outputs"
            )));
        }
        if values.len() != param_count(dims) {
            return Err(Error::DimensionMismatch(format!(
                "{} parameter values for dims {dims:?}, expected {}",
                values.len(),
                param_count(dims)
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("parameters must be finite".into()));
        }
        Ok(Self {
            dims: dims.to_vec(),
            n_p,
            values,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn n_p(&self) -> usize {
        self.n_p
    }

    pub fn dim_psi(&self) -> usize {
        self.dims[0] - self.n_p - 1
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// `(weights, biases)` slices of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (off, n_in, n_out) = self.layer_offset(l);
        let w_end = off + n_in * n_out;
        (&self.values[off..w_end], &self.values[w_end..w_end + n_out])
    }

    fn layer_offset(&self, l: usize) -> (usize, usize, usize) {
        let off = param_count(&self.dims[..=l]);
        (off, self.dims[l], self.dims[l + 1])
    }

    /// Assemble the network input `concat(φ̃, ψ, log₁₀σ)`.
    pub fn input_vector(&self, phi_noisy: &[f64], psi: &[f64], sigma: f64) -> Result<Vec<f64>> {
        if phi_noisy.len() != self.n_p || psi.len() != self.dim_psi() {
            return Err(Error::DimensionMismatch(format!(
                "denoiser expects N_p = {} and dim ψ = {}, got {} and {}",
                self.n_p,
                self.dim_psi(),
                phi_noisy.len(),
                psi.len()
            )));
        }
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
        }
        let mut x = Vec::with_capacity(self.dims[0]);
        x.extend_from_slice(phi_noisy);
        x.extend_from_slice(psi);
        x.push(sigma.log10());
        Ok(x)
    }

    /// Forward pass from a prepared input vector.
    pub fn forward(&self, input: Vec<f64>) -> Result<ForwardTrace> {
        if input.len() != self.dims[0] {
            return Err(Error::DimensionMismatch(format!(
                "input has {} entries, network expects {}",
                input.len(),
                self.dims[0]
            )));
        }
        let n_layers = self.num_layers();
        let mut activations = Vec::with_capacity(n_layers + 1);
        let mut pre = Vec::with_capacity(n_layers);
        activations.push(input);
        for l in 0..n_layers {
            let (w, b) = self.layer(l);
            let a = &activations[l];
            let n_in = a.len();
            let z: Vec<f64> = b
                .iter()
                .enumerate()
                .map(|(o, bo)| bo + w[o * n_in..(o + 1) * n_in].iter().zip(a).map(|(x, y)| x * y).sum::<f64>())
                .collect();
            let out = if l + 1 == n_layers {
                z.iter().map(|&v| sigmoid(v)).collect()
            } else {
                z.iter().map(|&v| v.max(0.0)).collect()
            };
            pre.push(z);
            activations.push(out);
        }
        Ok(ForwardTrace { activations, pre })
    }

    /// Gradient of `g_outᵀ·output` with respect to every parameter, laid out
    /// like [`values`](Self::values).
    pub fn backward(&self, trace: &ForwardTrace, g_out: &[f64]) -> Result<Vec<f64>> {
        let n_layers = self.num_layers();
        if trace.pre.len() != n_layers || trace.activations[0].len() != self.dims[0] {
            return Err(Error::DimensionMismatch("trace does not match the network".into()));
        }
        if g_out.len() != self.n_p {
            return Err(Error::DimensionMismatch(format!(
                "output gradient has {} entries, expected {}",
                g_out.len(),
                self.n_p
            )));
        }
        let mut grad = vec![0.0; self.values.len()];
        let out = trace.output();
        let mut delta: Vec<f64> = g_out.iter().zip(out).map(|(g, s)| g * s * (1.0 - s)).collect();
        for l in (0..n_layers).rev() {
            let (off, n_in, n_out) = self.layer_offset(l);
            let a = &trace.activations[l];
            for o in 0..n_out {
                let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (g, x) in row.iter_mut().zip(a) {
                    *g = delta[o] * x;
                }
                grad[off + n_in * n_out + o] = delta[o];
            }
            if l > 0 {
                let (w, _) = self.layer(l);
                let z = &trace.pre[l - 1];
                delta = (0..n_in)
                    .map(|i| {
                        if z[i] > 0.0 {
                            (0..n_out).map(|o| w[o * n_in + i] * delta[o]).sum()
                        } else {
                            0.0
                        }
                    })
                    .collect();
            }
        }
        Ok(grad)
    }
}

/// Xavier-uniform weights, zero biases. Layer dims are
/// `[N_p + dim ψ + 1, hidden..., N_p]`.
pub fn init_denoiser(n_p: usize, dim_psi: usize, hidden: &[usize], rng: &mut RngState) -> Result<DenoiserParams> {
    if n_p == 0 || hidden.iter().any(|&h| h == 0) {
        return Err(Error::InvalidArgument("widths must be positive".into()));
    }
    let mut dims = vec![n_p + dim_psi + 1];
    dims.extend_from_slice(hidden);
    dims.push(n_p);
    let mut values = Vec::with_capacity(param_count(&dims));
    for (n_in, n_out) in layer_sizes(&dims) {
        let bound = (6.0 / (n_in + n_out) as f64).sqrt();
        values.extend((0..n_in * n_out).map(|_| bound * (2.0 * rng.uniform01() - 1.0)));
        values.extend(std::iter::repeat_n(0.0, n_out));
    }
    DenoiserParams::from_values(&dims, n_p, values)
}

/// Forward pass on `(φ̃, ψ, σ)`; returns `φ̂` and the trace for `backward`.
pub fn denoise(
    theta: &DenoiserParams,
    phi_noisy: &[f64],
    psi: &EnvironmentSetting,
    sigma: f64,
) -> Result<(Vec<f64>, ForwardTrace)> {
    let trace = theta.forward(theta.input_vector(phi_noisy, psi.as_slice(), sigma)?)?;
    Ok((trace.output().to_vec(), trace))
}

/// Parameter gradients for upstream gradient `g_out = ∂Loss/∂φ̂`.
pub fn backward(theta: &DenoiserParams, trace: &ForwardTrace, g_out: &[f64]) -> Result<Vec<f64>> {
    theta.backward(trace, g_out)
}

/// Anything that maps `(φ̃, ψ, σ)` to a denoised configuration. Lets the
/// Langevin sampler run on stubs and exact oracles as well as the network.
pub trait Denoise: Sync {
    fn n_params(&self) -> usize;
    fn apply(&self, phi_noisy: &[f64], psi: &EnvironmentSetting, sigma: f64) -> Result<Vec<f64>>;
}

impl Denoise for DenoiserParams {
    fn n_params(&self) -> usize {
        self.n_p
    }

    fn apply(&self, phi_noisy: &[f64], psi: &EnvironmentSetting, sigma: f64) -> Result<Vec<f64>> {
        Ok(denoise(self, phi_noisy, psi, sigma)?.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    /// `θ ← θ − η·g`.
    Sgd,
    /// Adam with the usual `(0.9, 0.999, 1e-8)` constants.
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(format!("unknown optimizer `{other}`")),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        })
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, num_params: usize) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam => (vec![0.0; num_params], vec![0.0; num_params]),
        };
        Self { kind, lr, step: 0, m, v }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Apply one descent step with gradient `grad`.
    pub fn update(&mut self, theta: &mut DenoiserParams, grad: &[f64]) {
        assert_eq!(grad.len(), theta.num_params(), "gradient length");
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in theta.values.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                let c1 = 1.0 - B1.powi(self.step as i32);
                let c2 = 1.0 - B2.powi(self.step as i32);
                for i in 0..grad.len() {
                    self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
                    self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
                    theta.values[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
                }
            }
        }
    }
}

pub fn save_checkpoint(theta: &DenoiserParams, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(64 + 8 * theta.num_params());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    let dims: Vec<String> = theta.dims.iter().map(|d| d.to_string()).collect();
    bytes.extend_from_slice(dims.join(" ").as_bytes());
    bytes.push(b'\n');
    for v in &theta.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Load a checkpoint; the output layer width is taken as `N_p`.
pub fn load_checkpoint(path: &Path) -> Result<DenoiserParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}

/// Load a checkpoint and require specific layer dims.
pub fn load_checkpoint_expecting(path: &Path, dims: &[usize]) -> Result<DenoiserParams> {
    let theta = load_checkpoint(path)?;
    if theta.dims != dims {
        return Err(Error::DimMismatchOnLoad(format!(
            "file has dims {:?}, expected {dims:?}",
            theta.dims
        )));
    }
    Ok(theta)
}

fn parse_checkpoint(bytes: &[u8]) -> Result<DenoiserParams> {
    if bytes.len() < CHECKPOINT_MAGIC.len() {
        return Err(if CHECKPOINT_MAGIC.starts_with(bytes) {
            Error::TruncatedFile("file ends inside the magic string".into())
        } else {
            Error::BadMagic
        });
    }
    if &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic);
    }
    let rest = &bytes[CHECKPOINT_MAGIC.len()..];
    let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
        return Err(Error::TruncatedFile("missing dims line".into()));
    };
    let line = std::str::from_utf8(&rest[..nl]).map_err(|_| Error::DimMismatchOnLoad("dims line is not UTF-8".into()))?;
    let dims: Vec<usize> = line
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::DimMismatchOnLoad(format!("cannot parse dims line `{line}`")))?;
    if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
        return Err(Error::DimMismatchOnLoad(format!("invalid dims {dims:?}")));
    }
    let data = &rest[nl + 1..];
    let expected = 8 * param_count(&dims);
    if data.len() < expected {
        return Err(Error::TruncatedFile(format!(
            "{} payload bytes, dims {dims:?} need {expected}",
            data.len()
        )));
    }
    if data.len() > expected {
        return Err(Error::DimMismatchOnLoad(format!(
            "{} payload bytes, dims {dims:?} need {expected}",
            data.len()
        )));
    }
    let values = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let n_p = *dims.last().unwrap();
    DenoiserParams::from_values(&dims, n_p, values).map_err(|e| Error::DimMismatchOnLoad(e.to_string()))
}
