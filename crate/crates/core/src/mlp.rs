//! Dense tanh networks with hand-written backpropagation.
//!
//! Parameters live in a flat [`ParamVector`]. Layer `l` contributes its weight
//! matrix (`out x in`, row-major) followed by its bias vector; layers appear in
//! order. Heads that need extra parameters (the policy's log-std vector)
//! append them after the last layer.
//!
//! Batches are row-major `n x width` slices.

use std::io::{Read, Write};
use std::ops::{Deref, DerefMut};
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub output: OutputActivation,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, output: OutputActivation) -> Result<Self> {
        if layer_sizes.is_empty() || layer_sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer sizes must be non-empty and positive, got {layer_sizes:?}"
            )));
        }
        Ok(MlpSpec {
            layer_sizes,
            output,
        })
    }

    /// `input -> hidden... -> output` with tanh hidden layers.
    pub fn with_hidden(input: usize, hidden: &[usize], output: usize, act: OutputActivation) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Self::new(sizes, act)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// `(weight offset, bias offset, fan_in, fan_out)` for every layer.
    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.layer_sizes.windows(2).map(move |w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let w_off = offset;
            let b_off = w_off + fan_in * fan_out;
            offset = b_off + fan_out;
            (w_off, b_off, fan_in, fan_out)
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(n: usize) -> Self {
        ParamVector(vec![0.0; n])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &[f64]) {
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += scale * b;
        }
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &[f64]) -> ParamVector {
        ParamVector(self.0.iter().zip(other).map(|(a, b)| a - b).collect())
    }

    /// Rescales to unit L2 norm. Returns `false` (and leaves the vector at
    /// zero) when the norm is zero or not finite.
    pub fn normalize(&mut self) -> bool {
        let n = self.norm();
        if n > 0.0 && n.is_finite() {
            self.0.iter_mut().for_each(|x| *x /= n);
            true
        } else {
            self.0.iter_mut().for_each(|x| *x = 0.0);
            false
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

/// Orthogonal initialization: hidden layers get `hidden_gain`, the final layer
/// `output_gain`, biases start at zero.
pub fn init_params(spec: &MlpSpec, hidden_gain: f64, output_gain: f64, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = vec![0.0; spec.param_count()];
    let last = spec.num_layers().saturating_sub(1);
    for (l, (w_off, _, fan_in, fan_out)) in spec.layers().enumerate() {
        let gain = if l == last { output_gain } else { hidden_gain };
        let w = orthogonal(fan_out, fan_in, gain, &mut rng);
        params[w_off..w_off + fan_in * fan_out].copy_from_slice(&w);
    }
    ParamVector(params)
}

/// Row-major `rows x cols` matrix with orthonormal rows or columns, scaled by
/// `gain`.
pub fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if gain == 0.0 {
        return vec![0.0; rows * cols];
    }
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let a = DMatrix::<f64>::from_fn(tall, short, |_, _| randn(rng));
    let qr = a.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            // `q` is tall x short; transpose when the layer is wide.
            let v = if rows >= cols { q[(i, j)] } else { q[(j, i)] };
            out[i * cols + j] = gain * v;
        }
    }
    out
}

/// Activations of every layer, input included.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub batch: usize,
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().unwrap()
    }

    pub fn into_output(mut self) -> Vec<f64> {
        self.activations.pop().unwrap()
    }
}

pub fn forward(spec: &MlpSpec, params: &[f64], input: &[f64]) -> Result<ForwardCache> {
    let width = spec.input_dim();
    if input.len() % width != 0 {
        return Err(Error::dims("mlp input width", width, input.len() % width));
    }
    if params.len() < spec.param_count() {
        return Err(Error::dims("mlp params", spec.param_count(), params.len()));
    }
    let batch = input.len() / width;
    let mut activations = Vec::with_capacity(spec.num_layers() + 1);
    activations.push(input.to_vec());
    let last = spec.num_layers().saturating_sub(1);
    for (l, (w_off, b_off, fan_in, fan_out)) in spec.layers().enumerate() {
        let w = &params[w_off..b_off];
        let b = &params[b_off..b_off + fan_out];
        let x = activations.last().unwrap();
        let mut y = vec![0.0; batch * fan_out];
        for n in 0..batch {
            let xr = &x[n * fan_in..(n + 1) * fan_in];
            let yr = &mut y[n * fan_out..(n + 1) * fan_out];
            for (o, (yo, wr)) in yr.iter_mut().zip(w.chunks_exact(fan_in)).enumerate() {
                let acc = b[o] + wr.iter().zip(xr).map(|(a, c)| a * c).sum::<f64>();
                *yo = if l < last {
                    tanh(acc)
                } else {
                    match spec.output {
                        OutputActivation::Identity => acc,
                        OutputActivation::Sigmoid => sigmoid(acc),
                    }
                };
            }
        }
        activations.push(y);
    }
    Ok(ForwardCache { batch, activations })
}

/// Gradients of a scalar loss whose gradient with respect to the network
/// outputs is `upstream`. Returns `(parameter gradient, input gradient)`.
pub fn backward(spec: &MlpSpec, params: &[f64], cache: &ForwardCache, upstream: &[f64]) -> Result<(ParamVector, Vec<f64>)> {
    backward_impl(spec, params, cache, upstream, true)
}

/// Parameter gradient only; skips the input gradient.
pub fn backward_params(spec: &MlpSpec, params: &[f64], cache: &ForwardCache, upstream: &[f64]) -> Result<ParamVector> {
    Ok(backward_impl(spec, params, cache, upstream, false)?.0)
}

fn backward_impl(spec: &MlpSpec, params: &[f64], cache: &ForwardCache, upstream: &[f64], need_input: bool) -> Result<(ParamVector, Vec<f64>)> {
    let batch = cache.batch;
    if upstream.len() != batch * spec.output_dim() {
        return Err(Error::dims("mlp upstream gradient", batch * spec.output_dim(), upstream.len()));
    }
    if cache.activations.len() != spec.layer_sizes.len() {
        return Err(Error::dims("forward cache layers", spec.layer_sizes.len(), cache.activations.len()));
    }
    let mut grad = vec![0.0; spec.param_count()];
    let layers: Vec<_> = spec.layers().collect();
    let last = layers.len().saturating_sub(1);

    // Gradient with respect to the current layer's outputs (post-activation).
    let mut delta = upstream.to_vec();
    for (l, &(w_off, b_off, fan_in, fan_out)) in layers.iter().enumerate().rev() {
        let y = &cache.activations[l + 1];
        let x = &cache.activations[l];
        // Through the activation to the pre-activation.
        for (d, &yv) in delta.iter_mut().zip(y) {
            *d *= if l < last {
                1.0 - yv * yv
            } else {
                match spec.output {
                    OutputActivation::Identity => 1.0,
                    OutputActivation::Sigmoid => yv * (1.0 - yv),
                }
            };
        }
        let w = &params[w_off..b_off];
        let (gw, rest) = grad[w_off..].split_at_mut(fan_in * fan_out);
        let gb = &mut rest[..fan_out];
        let want_dx = l > 0 || need_input;
        let mut dx = vec![0.0; if want_dx { batch * fan_in } else { 0 }];
        for n in 0..batch {
            let xr = &x[n * fan_in..(n + 1) * fan_in];
            let dr = &delta[n * fan_out..(n + 1) * fan_out];
            for (o, &d) in dr.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let gwr = &mut gw[o * fan_in..(o + 1) * fan_in];
                gwr.iter_mut().zip(xr).for_each(|(g, xi)| *g += d * xi);
                if want_dx {
                    let wr = &w[o * fan_in..(o + 1) * fan_in];
                    let dxr = &mut dx[n * fan_in..(n + 1) * fan_in];
                    dxr.iter_mut().zip(wr).for_each(|(g, wi)| *g += d * wi);
                }
            }
        }
        delta = dx;
    }
    Ok((ParamVector(grad), delta))
}

/// `tanh` through a single `exp`; within a few ulps of the libm version
/// away from zero and within 1e-16 absolute near it.
pub fn tanh(x: f64) -> f64 {
    let a = x.abs();
    if a > 20.0 {
        return 1f64.copysign(x);
    }
    let e = (-2.0 * a).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

/// One standard-normal draw.
pub fn randn<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Log density of a diagonal Gaussian.
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((&mu, &ls), &a)| {
            let z = (a - mu) * (-ls).exp();
            -0.5 * z * z - ls - 0.5 * LN_2PI
        })
        .sum()
}

pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| 0.5 + 0.5 * LN_2PI + ls).sum()
}

/// Adds `scale * d logp / d mean` and `scale * d logp / d log_std` into the
/// output buffers.
pub fn gaussian_log_prob_grad(
    mean: &[f64],
    log_std: &[f64],
    action: &[f64],
    scale: f64,
    d_mean: &mut [f64],
    d_log_std: &mut [f64],
) {
    for j in 0..mean.len() {
        let inv_var = (-2.0 * log_std[j]).exp();
        let diff = action[j] - mean[j];
        d_mean[j] += scale * diff * inv_var;
        d_log_std[j] += scale * (diff * diff * inv_var - 1.0);
    }
}

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;

/// Diagonal-Gaussian policy: an MLP produces the action mean, a
/// state-independent log-std vector follows the network parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub net: MlpSpec,
}

impl GaussianPolicy {
    pub fn new(obs_dim: usize, hidden: &[usize], act_dim: usize) -> Result<Self> {
        Ok(GaussianPolicy {
            net: MlpSpec::with_hidden(obs_dim, hidden, act_dim, OutputActivation::Identity)?,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count() + self.act_dim()
    }

    /// Hidden gain sqrt(2), mean-head gain 0.01, log-std zero.
    pub fn init(&self, seed: u64) -> ParamVector {
        let mut p = init_params(&self.net, std::f64::consts::SQRT_2, 0.01, seed);
        p.0.extend(std::iter::repeat_n(0.0, self.act_dim()));
        p
    }

    pub fn log_std<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.net.param_count()..self.param_count()]
    }

    /// Clamps the log-std entries into `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub fn project(&self, params: &mut [f64]) {
        let n = self.net.param_count();
        params[n..self.param_count()]
            .iter_mut()
            .for_each(|v| *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX));
    }

    pub fn mean(&self, params: &[f64], obs: &[f64]) -> Result<ForwardCache> {
        if params.len() != self.param_count() {
            return Err(Error::dims("policy params", self.param_count(), params.len()));
        }
        forward(&self.net, params, obs)
    }
}

/// Adam with bias correction; `step` performs gradient descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "adam state size");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Scales `grad` down so its L2 norm is at most `max_norm`.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) {
    let n = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if n > max_norm && n.is_finite() {
        let s = max_norm / n;
        grad.iter_mut().for_each(|g| *g *= s);
    }
}

/// Central finite-difference gradient of `f` at `x`.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise `|a - b| / max(|a|, |b|, floor)`. The floor keeps
/// entries that are zero up to rounding from dominating.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    const FLOOR: f64 = 1e-6;
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(FLOOR))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `(head name, max relative error)`; MLP heads report parameter and
    /// input gradients separately.
    pub heads: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.heads.iter().map(|h| h.1).fold(0.0, f64::max)
    }
}

const FD_STEP: f64 = 1e-5;

/// Analytic vs. central finite-difference gradients for an MLP with the given
/// layer sizes, under both output activations, and for the Gaussian policy
/// head built on the same sizes. The loss is a fixed random linear functional
/// of the outputs so every output contributes.
pub fn grad_check(layer_sizes: &[usize], seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = 3;
    let mut heads = Vec::new();
    for act in [OutputActivation::Identity, OutputActivation::Sigmoid] {
        let spec = MlpSpec::new(layer_sizes.to_vec(), act)?;
        // Random parameters (not the near-zero output init) so every path is exercised.
        let params: Vec<f64> = (0..spec.param_count())
            .map(|_| 0.5 * randn(&mut rng))
            .collect();
        let input: Vec<f64> = (0..batch * spec.input_dim())
            .map(|_| randn(&mut rng))
            .collect();
        let weights: Vec<f64> = (0..batch * spec.output_dim())
            .map(|_| randn(&mut rng))
            .collect();
        let loss = |p: &[f64], x: &[f64]| -> f64 {
            let out = forward(&spec, p, x).expect("shapes checked").into_output();
            out.iter().zip(&weights).map(|(o, w)| o * w).sum()
        };
        let cache = forward(&spec, &params, &input)?;
        let (gp, gx) = backward(&spec, &params, &cache, &weights)?;
        let np = numeric_gradient(|p| loss(p, &input), &params, FD_STEP);
        let nx = numeric_gradient(|x| loss(&params, x), &input, FD_STEP);
        let name = match act {
            OutputActivation::Identity => "mlp/identity",
            OutputActivation::Sigmoid => "mlp/sigmoid",
        };
        heads.push((format!("{name}/params"), max_relative_error(&gp, &np)));
        heads.push((format!("{name}/input"), max_relative_error(&gx, &nx)));
    }

    // Gaussian head: loss = sum over the batch of log pi(a | s).
    let input_dim = layer_sizes[0];
    let act_dim = *layer_sizes.last().unwrap();
    let policy = GaussianPolicy {
        net: MlpSpec::new(layer_sizes.to_vec(), OutputActivation::Identity)?,
    };
    let mut params: Vec<f64> = (0..policy.param_count())
        .map(|_| 0.5 * randn(&mut rng))
        .collect();
    let n_net = policy.net.param_count();
    for ls in &mut params[n_net..] {
        *ls *= 0.5;
    }
    let obs: Vec<f64> = (0..batch * input_dim).map(|_| randn(&mut rng)).collect();
    let actions: Vec<f64> = (0..batch * act_dim).map(|_| randn(&mut rng)).collect();
    let logp_sum = |p: &[f64]| -> f64 {
        let mean = policy.mean(p, &obs).expect("shapes checked").into_output();
        let ls = policy.log_std(p);
        (0..batch)
            .map(|n| gaussian_log_prob(&mean[n * act_dim..(n + 1) * act_dim], ls, &actions[n * act_dim..(n + 1) * act_dim]))
            .sum()
    };
    let cache = policy.mean(&params, &obs)?;
    let mean = cache.output().to_vec();
    let mut d_mean = vec![0.0; batch * act_dim];
    let mut d_ls = vec![0.0; act_dim];
    for n in 0..batch {
        gaussian_log_prob_grad(
            &mean[n * act_dim..(n + 1) * act_dim],
            policy.log_std(&params),
            &actions[n * act_dim..(n + 1) * act_dim],
            1.0,
            &mut d_mean[n * act_dim..(n + 1) * act_dim],
            &mut d_ls,
        );
    }
    let (mut g, _) = backward(&policy.net, &params, &cache, &d_mean)?;
    g.0.extend_from_slice(&d_ls);
    let ng = numeric_gradient(logp_sum, &params, FD_STEP);
    heads.push(("policy/gaussian".to_string(), max_relative_error(&g, &ng)));

    Ok(GradCheckReport { heads })
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"QDPV";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes `spec` and `params` in the little-endian checkpoint layout:
///
/// ```text
/// magic "QDPV" | u32 version | u32 n_sizes | n_sizes x u32 layer size
/// | u32 output activation (0 identity, 1 sigmoid) | u64 n_params | n_params x f64
/// ```
///
/// `n_params` may exceed the network's own count when head extras follow.
pub fn write_checkpoint<W: Write>(mut out: W, spec: &MlpSpec, params: &[f64]) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(spec.layer_sizes.len() as u32).to_le_bytes())?;
    for &s in &spec.layer_sizes {
        out.write_all(&(s as u32).to_le_bytes())?;
    }
    let act: u32 = match spec.output {
        OutputActivation::Identity => 0,
        OutputActivation::Sigmoid => 1,
    };
    out.write_all(&act.to_le_bytes())?;
    out.write_all(&(params.len() as u64).to_le_bytes())?;
    for p in params {
        out.write_all(&p.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<(MlpSpec, ParamVector)> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::InvalidArgument("not a parameter checkpoint".into()));
    }
    let version = read_u32(&mut input)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::InvalidArgument(format!("unsupported checkpoint version {version}")));
    }
    let n_sizes = read_u32(&mut input)? as usize;
    let sizes = (0..n_sizes)
        .map(|_| read_u32(&mut input).map(|s| s as usize))
        .collect::<Result<Vec<_>>>()?;
    let output = match read_u32(&mut input)? {
        0 => OutputActivation::Identity,
        1 => OutputActivation::Sigmoid,
        other => return Err(Error::InvalidArgument(format!("unknown output activation code {other}"))),
    };
    let spec = MlpSpec::new(sizes, output)?;
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    let n = u64::from_le_bytes(buf) as usize;
    if n < spec.param_count() {
        return Err(Error::dims("checkpoint params", spec.param_count(), n));
    }
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        input.read_exact(&mut buf)?;
        params.push(f64::from_le_bytes(buf));
    }
    Ok((spec, ParamVector(params)))
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn save_checkpoint(path: &Path, spec: &MlpSpec, params: &[f64]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_checkpoint(std::io::BufWriter::new(f), spec, params)
}

pub fn load_checkpoint(path: &Path) -> Result<(MlpSpec, ParamVector)> {
    let f = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Straightforward second implementation used as an oracle.
    fn naive_forward(sizes: &[usize], act: OutputActivation, p: &[f64], x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut off = 0;
        for l in 0..sizes.len() - 1 {
            let (fi, fo) = (sizes[l], sizes[l + 1]);
            let mut next = Vec::new();
            for o in 0..fo {
                let mut s = p[off + fi * fo + o];
                for i in 0..fi {
                    s += p[off + o * fi + i] * cur[i];
                }
                next.push(if l + 2 < sizes.len() {
                    s.tanh()
                } else if act == OutputActivation::Sigmoid {
                    1.0 / (1.0 + (-s).exp())
                } else {
                    s
                });
            }
            off += fi * fo + fo;
            cur = next;
        }
        cur
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let spec = MlpSpec::new(vec![4, 8, 8, 2], OutputActivation::Identity).unwrap();
        let a = init_params(&spec, 2f64.sqrt(), 0.01, 7);
        let b = init_params(&spec, 2f64.sqrt(), 0.01, 7);
        assert_eq!(a, b);
        for (_, b_off, _, fo) in spec.layers() {
            assert!(a[b_off..b_off + fo].iter().all(|&v| v == 0.0));
        }
        assert_ne!(a, init_params(&spec, 2f64.sqrt(), 0.01, 8));
    }

    #[test]
    fn square_hidden_layer_is_scaled_orthogonal() {
        let spec = MlpSpec::new(vec![6, 6, 6, 1], OutputActivation::Identity).unwrap();
        let p = init_params(&spec, 2f64.sqrt(), 0.01, 3);
        let (w_off, b_off, ..) = spec.layers().nth(1).unwrap();
        let w = DMatrix::from_row_slice(6, 6, &p[w_off..b_off]);
        let wtw = w.transpose() * &w;
        let target = DMatrix::<f64>::identity(6, 6) * 2.0;
        assert!((wtw - target).abs().max() < 1e-8);
    }

    #[test]
    fn wide_and_tall_layers_have_orthonormal_rows_or_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = DMatrix::from_row_slice(3, 7, &orthogonal(3, 7, 1.0, &mut rng));
        assert!((&w * w.transpose() - DMatrix::<f64>::identity(3, 3)).abs().max() < 1e-10);
        let w = DMatrix::from_row_slice(7, 3, &orthogonal(7, 3, 1.0, &mut rng));
        assert!((w.transpose() * &w - DMatrix::<f64>::identity(3, 3)).abs().max() < 1e-10);
    }

    #[test]
    fn zero_params_give_zero_output_and_sigmoid_half() {
        let spec = MlpSpec::new(vec![3, 5, 2], OutputActivation::Identity).unwrap();
        let p = vec![0.0; spec.param_count()];
        let out = forward(&spec, &p, &[1.0, -2.0, 3.0, 0.5, 0.5, 0.5]).unwrap();
        assert!(out.output().iter().all(|&v| v == 0.0));
        let spec = MlpSpec::new(vec![3, 5, 2], OutputActivation::Sigmoid).unwrap();
        let out = forward(&spec, &p, &[1.0, -2.0, 3.0]).unwrap();
        assert!(out.output().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for act in [OutputActivation::Identity, OutputActivation::Sigmoid] {
            let sizes = [4, 7, 5, 3];
            let spec = MlpSpec::new(sizes.to_vec(), act).unwrap();
            let p: Vec<f64> = (0..spec.param_count()).map(|_| randn(&mut rng)).collect();
            let x: Vec<f64> = (0..8).map(|_| randn(&mut rng)).collect();
            let out = forward(&spec, &p, &x).unwrap();
            for n in 0..2 {
                let want = naive_forward(&sizes, act, &p, &x[n * 4..(n + 1) * 4]);
                for (a, b) in out.output()[n * 3..(n + 1) * 3].iter().zip(&want) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn forward_rejects_bad_width() {
        let spec = MlpSpec::new(vec![3, 2], OutputActivation::Identity).unwrap();
        assert!(forward(&spec, &[0.0; 8], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let spec = MlpSpec::new(vec![3, 4, 2], OutputActivation::Identity).unwrap();
        let p = init_params(&spec, 1.0, 1.0, 1);
        let cache = forward(&spec, &p, &[0.3, -0.2, 0.9]).unwrap();
        let (g, gx) = backward(&spec, &p, &cache, &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(gx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_sum_loss_gradient() {
        // out = W x + b, loss = sum(out): dW[o][i] = sum_n x_n[i], db[o] = n.
        let spec = MlpSpec::new(vec![2, 3], OutputActivation::Identity).unwrap();
        let p = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.0, 0.0, 0.0];
        let x = [1.0, 2.0, -3.0, 0.5];
        let cache = forward(&spec, &p, &x).unwrap();
        let (g, _) = backward(&spec, &p, &cache, &[1.0; 6]).unwrap();
        assert_eq!(&g[..6], &[-2.0, 2.5, -2.0, 2.5, -2.0, 2.5]);
        assert_eq!(&g[6..], &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn grad_check_passes_for_all_heads() {
        let report = grad_check(&[4, 6, 5, 3], 5).unwrap();
        assert_eq!(report.heads.len(), 5);
        assert!(report.max_error() < 1e-4, "{report:?}");
        assert_eq!(report, grad_check(&[4, 6, 5, 3], 5).unwrap());
    }

    #[test]
    fn degenerate_network_without_parameters() {
        let report = grad_check(&[3], 1).unwrap();
        for (name, err) in &report.heads {
            if name.ends_with("/params") && name.starts_with("mlp/") {
                assert_eq!(*err, 0.0, "{name}");
            }
        }
        assert!(report.max_error() < 1e-4);
    }

    #[test]
    fn gaussian_head_closed_forms() {
        let d = 3;
        let mean = vec![0.4, -1.0, 2.0];
        let ls = vec![0.0; d];
        let lp = gaussian_log_prob(&mean, &ls, &mean);
        assert!((lp - (-(d as f64) / 2.0 * (2.0 * std::f64::consts::PI).ln())).abs() < 1e-12);
        let h = gaussian_entropy(&[0.0]);
        assert!((h - 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()).abs() < 1e-12);
        assert!((h - 1.418_938_533_204_672_7).abs() < 1e-12);
        let mut dm = vec![0.0; d];
        let mut dl = vec![0.0; d];
        gaussian_log_prob_grad(&mean, &ls, &mean, 1.0, &mut dm, &mut dl);
        assert!(dm.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn adam_with_zero_lr_is_a_no_op() {
        let mut adam = Adam::new(3, 0.0);
        let mut p = vec![1.0, 2.0, 3.0];
        adam.step(&mut p, &[0.5, -0.5, 1.0]);
        assert_eq!(p, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let spec = MlpSpec::new(vec![5, 16, 2], OutputActivation::Identity).unwrap();
        let policy = GaussianPolicy { net: spec.clone() };
        let p = policy.init(9);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &spec, &p).unwrap();
        let (spec2, p2) = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(spec, spec2);
        assert_eq!(p, p2);
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
        assert!(read_checkpoint(&b"nope"[..]).is_err());
    }

    proptest! {
        #[test]
        fn normalize_gives_unit_or_zero(v in prop::collection::vec(-1e3f64..1e3, 1..20)) {
            let mut p = ParamVector(v);
            if p.normalize() {
                prop_assert!((p.norm() - 1.0).abs() < 1e-12);
            } else {
                prop_assert!(p.iter().all(|&x| x == 0.0));
            }
        }

        #[test]
        fn forward_is_pure(seed in 0u64..1000) {
            let spec = MlpSpec::new(vec![3, 4, 2], OutputActivation::Sigmoid).unwrap();
            let p = init_params(&spec, 1.0, 1.0, seed);
            let x = [0.1, seed as f64 * 1e-3, -0.7];
            let a = forward(&spec, &p, &x).unwrap().into_output();
            let b = forward(&spec, &p, &x).unwrap().into_output();
            prop_assert_eq!(a, b);
        }
    }
}
