//! Fixed-topology multilayer perceptrons with analytic backpropagation, a
//! Gaussian policy head, and first-order optimizers.
//!
//! Networks are plain value objects in double precision: tanh hidden layers,
//! a linear output layer, and explicit batched forward/backward passes. The
//! policy head emits a state-dependent mean and bounded log standard
//! deviation.

pub mod linalg;

use serde::{Deserialize, Serialize};

use crate::rng::SimRng;
use crate::{Error, Result};

/// Lower/upper bounds on the policy head's log standard deviation.
pub const LOG_SIGMA_MIN: f64 = -5.0;
pub const LOG_SIGMA_MAX: f64 = 2.0;
/// Guard inside the tanh-squash log-det correction.
pub const SQUASH_EPS: f64 = 1e-6;

const LN_2PI: f64 = 1.8378770664093453;

/// Feed-forward perceptron: tanh hidden layers, linear output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    dims: Vec<usize>,
    /// Layer l weights, row-major (dims[l+1] x dims[l]).
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Cached activations from a batched forward pass.
///
/// `acts[0]` is the input batch; `acts[l + 1]` is layer l's post-activation
/// output. tanh derivatives are recovered from the outputs.
#[derive(Debug, Clone)]
pub struct BatchCache {
    pub acts: Vec<Vec<f64>>,
    pub batch: usize,
}

impl BatchCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache has at least the input")
    }
}

/// Parameter gradients matching an [`Mlp`]'s shape.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn zero(&mut self) {
        for w in &mut self.weights {
            w.fill(0.0);
        }
        for b in &mut self.biases {
            b.fill(0.0);
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            linalg::axpy(a, 1.0, b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            linalg::axpy(a, 1.0, b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for w in &mut self.weights {
            for v in w.iter_mut() {
                *v *= k;
            }
        }
        for b in &mut self.biases {
            for v in b.iter_mut() {
                *v *= k;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

impl Mlp {
    /// Xavier-uniform initialization; the final layer is additionally scaled
    /// by `final_scale` (policies use 0.01 to start near-deterministic).
    pub fn new(dims: &[usize], rng: &mut SimRng, final_scale: f64) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let scale = if l == dims.len() - 2 { final_scale } else { 1.0 };
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.uniform(-limit, limit) * scale)
                .collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Self {
            dims: dims.to_vec(),
            weights,
            biases,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// Batched forward pass caching every activation for backprop.
    pub fn forward_batch(&self, input: &[f64], batch: usize) -> Result<BatchCache> {
        if input.len() != batch * self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "forward input len {} != batch {} x input_dim {}",
                input.len(),
                batch,
                self.input_dim()
            )));
        }
        let mut acts = Vec::with_capacity(self.n_layers() + 1);
        acts.push(input.to_vec());
        let mut w_t_buf = Vec::new();
        for l in 0..self.n_layers() {
            let (k, n) = (self.dims[l], self.dims[l + 1]);
            w_t_buf.resize(k * n, 0.0);
            linalg::transpose(&mut w_t_buf, &self.weights[l], n, k);
            let mut out = vec![0.0; batch * n];
            linalg::linear_forward(&mut out, &acts[l], &w_t_buf, &self.biases[l], batch, k, n);
            if l + 1 < self.n_layers() {
                linalg::tanh_slice(&mut out);
            }
            acts.push(out);
        }
        Ok(BatchCache { acts, batch })
    }

    /// Single-sample forward without keeping the cache.
    pub fn forward_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(input, 1)?.output().to_vec())
    }

    /// Reverse-mode gradients for the batch in `cache`.
    ///
    /// `d_output` is dL/d(output), shape (batch x output_dim). Parameter
    /// gradients are accumulated into `grads`; the input gradient is
    /// returned when `want_input_grad` is set.
    pub fn backward_batch(
        &self,
        cache: &BatchCache,
        d_output: &[f64],
        grads: &mut Gradients,
        want_input_grad: bool,
    ) -> Result<Option<Vec<f64>>> {
        self.backward_batch_impl(cache, d_output, Some(grads), want_input_grad)
    }

    /// Input gradient only, skipping the parameter-gradient work (used when a
    /// frozen network sits inside another network's loss).
    pub fn input_gradient(&self, cache: &BatchCache, d_output: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .backward_batch_impl(cache, d_output, None, true)?
            .expect("input gradient requested"))
    }

    fn backward_batch_impl(
        &self,
        cache: &BatchCache,
        d_output: &[f64],
        mut grads: Option<&mut Gradients>,
        want_input_grad: bool,
    ) -> Result<Option<Vec<f64>>> {
        if cache.acts.len() != self.n_layers() + 1 {
            return Err(Error::Usage(
                "backward called with a cache from a different network".into(),
            ));
        }
        let batch = cache.batch;
        if d_output.len() != batch * self.output_dim() {
            return Err(Error::ShapeMismatch(format!(
                "backward d_output len {} != batch {} x output_dim {}",
                d_output.len(),
                batch,
                self.output_dim()
            )));
        }
        let mut d_cur = d_output.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (k, n) = (self.dims[l], self.dims[l + 1]);
            // Output layer is linear; hidden layers need the tanh factor.
            if l + 1 < self.n_layers() {
                let y = &cache.acts[l + 1];
                for (d, &yi) in d_cur.iter_mut().zip(y) {
                    *d *= 1.0 - yi * yi;
                }
            }
            if let Some(g) = grads.as_deref_mut() {
                linalg::param_grad(
                    &mut g.weights[l],
                    &mut g.biases[l],
                    &d_cur,
                    &cache.acts[l],
                    batch,
                    n,
                    k,
                );
            }
            if l > 0 || want_input_grad {
                let mut dx = vec![0.0; batch * k];
                linalg::input_grad(&mut dx, &d_cur, &self.weights[l], batch, n, k);
                d_cur = dx;
            }
        }
        Ok(if want_input_grad { Some(d_cur) } else { None })
    }

    /// Flat views of all parameter tensors, interleaved [w0, b0, w1, b1, ...].
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Mutable access for tests and finite-difference probes.
    pub fn weights_mut(&mut self) -> &mut Vec<Vec<f64>> {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut Vec<Vec<f64>> {
        &mut self.biases
    }

    /// Polyak blend: self <- (1 - tau) * self + tau * online.
    pub fn blend_from(&mut self, online: &Mlp, tau: f64) -> Result<()> {
        if self.dims != online.dims {
            return Err(Error::ShapeMismatch(
                "target/online network dims differ".into(),
            ));
        }
        for (t, o) in self
            .weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .zip(online.weights.iter().chain(online.biases.iter()))
        {
            for (tv, ov) in t.iter_mut().zip(o) {
                *tv = (1.0 - tau) * *tv + tau * ov;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Gaussian policy head
// ---------------------------------------------------------------------------

/// Univariate Gaussian policy: an MLP trunk whose two outputs are the action
/// mean and a clamped log standard deviation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub net: Mlp,
}

/// Mean/σ pair with the raw (pre-clamp) log σ kept for gradient masking.
#[derive(Debug, Clone, Copy)]
pub struct PolicyHead {
    pub mean: f64,
    pub sigma: f64,
    pub log_sigma_raw: f64,
}

impl PolicyHead {
    pub fn log_sigma(&self) -> f64 {
        self.log_sigma_raw.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX)
    }

    /// Gradient of the clamped log σ w.r.t. the raw head output.
    pub fn clamp_mask(&self) -> f64 {
        if (LOG_SIGMA_MIN..=LOG_SIGMA_MAX).contains(&self.log_sigma_raw) {
            1.0
        } else {
            0.0
        }
    }
}

impl GaussianPolicy {
    pub fn new(obs_dim: usize, hidden: &[usize], rng: &mut SimRng) -> Self {
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(2);
        let mut net = Mlp::new(&dims, rng, 0.01);
        // Start with sigma around 0.6 rather than 1.0; full-width steering
        // noise at every step makes the first rollouts needlessly crashy.
        net.biases_mut().last_mut().expect("has layers")[1] = -0.5;
        Self { net }
    }

    pub fn head_from_output(out: &[f64]) -> PolicyHead {
        let log_sigma_raw = out[1];
        let sigma = log_sigma_raw.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX).exp();
        PolicyHead {
            mean: out[0],
            sigma,
            log_sigma_raw,
        }
    }

    pub fn head(&self, obs: &[f64]) -> Result<PolicyHead> {
        Ok(Self::head_from_output(&self.net.forward_one(obs)?))
    }

    /// Draw `action = mean + sigma * noise` and score it under the Gaussian.
    pub fn sample(&self, obs: &[f64], noise: f64) -> Result<(f64, f64)> {
        let h = self.head(obs)?;
        let action = h.mean + h.sigma * noise;
        Ok((action, gaussian_log_prob(action, h.mean, h.sigma)))
    }

    /// Draw a tanh-squashed action in (-1, 1) with the change-of-variables
    /// log-probability correction.
    pub fn squashed_sample(&self, obs: &[f64], noise: f64) -> Result<(f64, f64)> {
        let h = self.head(obs)?;
        let pre = h.mean + h.sigma * noise;
        let action = pre.tanh();
        let log_prob = gaussian_log_prob(pre, h.mean, h.sigma) - (1.0 - action * action + SQUASH_EPS).ln();
        Ok((action, log_prob))
    }
}

/// Log density of a univariate Gaussian.
pub fn gaussian_log_prob(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * LN_2PI
}

/// Differential entropy of a univariate Gaussian with deviation `sigma`.
pub fn policy_entropy(sigma: f64) -> f64 {
    sigma.ln() + 0.5 * (1.0 + LN_2PI)
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// First-order update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptAlgo {
    Adam,
    Sgd,
}

/// Per-network optimizer state; moment buffers are laid out like
/// [w0, b0, w1, b1, ...].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerState {
    pub algorithm: OptAlgo,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(algorithm: OptAlgo, learning_rate: f64, net: &Mlp) -> Self {
        assert!(learning_rate > 0.0);
        let shapes: Vec<usize> = net
            .weights
            .iter()
            .zip(&net.biases)
            .flat_map(|(w, b)| [w.len(), b.len()])
            .collect();
        let zeros = || shapes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        Self {
            algorithm,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Apply one update: SGD moves parameters by -lr * g exactly; Adam runs
    /// the bias-corrected moment update.
    pub fn apply(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        let tensors = net.tensors_mut();
        let gslices: Vec<&[f64]> = grads
            .weights
            .iter()
            .zip(&grads.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect();
        if tensors.len() != gslices.len() || tensors.len() != self.m.len() {
            return Err(Error::ShapeMismatch(
                "optimizer/net/gradient tensor counts differ".into(),
            ));
        }
        self.step += 1;
        match self.algorithm {
            OptAlgo::Sgd => {
                for (t, g) in tensors.into_iter().zip(gslices) {
                    if t.len() != g.len() {
                        return Err(Error::ShapeMismatch("sgd tensor size mismatch".into()));
                    }
                    linalg::axpy(t, -self.learning_rate, g);
                }
            }
            OptAlgo::Adam => {
                let b1t = 1.0 - self.beta1.powi(self.step as i32);
                let b2t = 1.0 - self.beta2.powi(self.step as i32);
                for ((t, g), (m, v)) in tensors
                    .into_iter()
                    .zip(gslices)
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                {
                    if t.len() != g.len() {
                        return Err(Error::ShapeMismatch("adam tensor size mismatch".into()));
                    }
                    for i in 0..t.len() {
                        m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                        v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                        let mhat = m[i] / b1t;
                        let vhat = v[i] / b2t;
                        t[i] -= self.learning_rate * mhat / (vhat.sqrt() + self.epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}
