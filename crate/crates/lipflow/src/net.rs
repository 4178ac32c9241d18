//! The discriminator: a depth-D fully connected scalar network φ: R^d → R
//! with a global Lipschitz bound L enforced by per-layer spectral
//! normalization.
//!
//! Every weight matrix is rescaled to spectral norm L^{1/D}. Since the
//! activation derivative stays in [0, 1], the product of layer norms
//! certifies |φ(x) − φ(y)| ≤ L·|x − y| for the whole network.
//!
//! Gradients with respect to both parameters and inputs are exact
//! (backpropagation); the input gradient ∇φ is the particle velocity field
//! used by [`crate::transport`].

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::exec::{self, Exec};

/// Smoothing width 2^{-4} used when a run opts into the smooth rectifier.
pub const DEFAULT_SMOOTH_EPS: f64 = 0.0625;

/// Iteration floor for certification-grade spectral normalization. The cap
/// is sized so that even a narrow spectral gap leaves the σ estimate within
/// ~1e-5 relative (warm starts make later calls exit at the floor).
const CERT_MIN_ITERS: usize = 20;
const CERT_MAX_ITERS: usize = 4000;
const CERT_REL_TOL: f64 = 1e-13;

/// Smoothed rectifier: C^1 (in fact C^3) replacement for ReLU.
///
/// Piecewise: 0 for x ≤ 0, `x²/(4ε) + (ε/2π²)(cos(πx/ε) − 1)` for
/// 0 < x < 2ε, and `x − ε` for x ≥ 2ε.
pub fn smooth_relu(x: f64, eps: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x < 2.0 * eps {
        x * x / (4.0 * eps) + eps / (2.0 * PI * PI) * ((PI * x / eps).cos() - 1.0)
    } else {
        x - eps
    }
}

/// Derivative of [`smooth_relu`]; continuous and contained in [0, 1].
pub fn smooth_relu_deriv(x: f64, eps: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x < 2.0 * eps {
        x / (2.0 * eps) - (PI * x / eps).sin() / (2.0 * PI)
    } else {
        1.0
    }
}

/// Hidden-layer activation. The derivative of either kind stays in [0, 1],
/// which is what makes spectral normalization certify the Lipschitz bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    SmoothRelu { eps: f64 },
}

impl Activation {
    #[inline]
    pub fn value(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::SmoothRelu { eps } => smooth_relu(x, eps),
        }
    }

    #[inline]
    pub fn deriv(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::SmoothRelu { eps } => smooth_relu_deriv(x, eps),
        }
    }
}

/// One dense layer: weight (in × out), bias (out), and the cached leading
/// right-singular-vector estimate for warm-started power iteration.
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub sn_state: Array1<f64>,
}

impl LayerParams {
    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }
}

/// Outcome of a spectral normalization call.
#[derive(Debug, Clone, Copy)]
pub struct SpectralReport {
    /// Power-iteration estimate of the spectral norm before rescaling.
    pub sigma: f64,
    /// The weight matrix was (numerically) zero; it was left unchanged.
    pub degenerate: bool,
}

fn vec_norm(v: ArrayView1<'_, f64>) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One power-iteration sweep on WᵀW; returns the current σ estimate and
/// refines `v` (unit right-singular-vector estimate) in place.
fn power_step(w: &Array2<f64>, v: &mut Array1<f64>) -> f64 {
    let u = w.dot(v);
    let un = vec_norm(u.view());
    if un < 1e-300 {
        return 0.0;
    }
    let u = u / un;
    let mut vn = w.t().dot(&u);
    let s = vec_norm(vn.view());
    if s < 1e-300 {
        return 0.0;
    }
    vn /= s;
    *v = vn;
    s
}

/// Rescale `layer.weight` to spectral norm `target_norm` using
/// `power_iters` warm-started power iterations. The singular-vector cache
/// is updated in place so the next call starts converged.
///
/// A zero weight matrix is left unchanged and flagged in the report.
pub fn spectral_normalize(
    layer: &mut LayerParams,
    target_norm: f64,
    power_iters: usize,
) -> Result<SpectralReport> {
    if power_iters == 0 {
        return Err(Error::invalid("spectral_normalize requires power_iters >= 1"));
    }
    if !(target_norm > 0.0) || !target_norm.is_finite() {
        return Err(Error::invalid(format!(
            "target spectral norm must be positive and finite, got {target_norm}"
        )));
    }
    let mut sigma = 0.0;
    for _ in 0..power_iters {
        sigma = power_step(&layer.weight, &mut layer.sn_state);
    }
    if sigma == 0.0 {
        return Ok(SpectralReport {
            sigma,
            degenerate: true,
        });
    }
    layer.weight *= target_norm / sigma;
    Ok(SpectralReport {
        sigma,
        degenerate: false,
    })
}

/// Certification-grade normalization: iterate until the σ estimate has
/// converged (at least [`CERT_MIN_ITERS`] sweeps), then rescale. Used at
/// initialization and before any Lipschitz-certified evaluation, so the
/// true layer norm matches the target to near machine precision.
fn spectral_normalize_certified(layer: &mut LayerParams, target_norm: f64) -> SpectralReport {
    let mut sigma = 0.0;
    let mut prev = f64::NAN;
    for it in 0..CERT_MAX_ITERS {
        sigma = power_step(&layer.weight, &mut layer.sn_state);
        if sigma == 0.0 {
            return SpectralReport {
                sigma,
                degenerate: true,
            };
        }
        if it + 1 >= CERT_MIN_ITERS && ((sigma - prev).abs() <= CERT_REL_TOL * sigma) {
            break;
        }
        prev = sigma;
    }
    layer.weight *= target_norm / sigma;
    SpectralReport {
        sigma,
        degenerate: false,
    }
}

/// The L-Lipschitz feed-forward scalar discriminator, with the shift
/// variable ν of the variational objective co-stored so the optimizer can
/// update it together with the weights.
#[derive(Debug, Clone)]
pub struct DiscriminatorNet {
    pub layers: Vec<LayerParams>,
    pub activation: Activation,
    /// Global Lipschitz bound L. `f64::INFINITY` disables spectral
    /// normalization entirely (the unregularized regime of the stability
    /// study).
    pub lipschitz_bound: f64,
    /// Variational shift ν, initialized to 0.
    pub nu: f64,
}

/// Build a discriminator with the given hidden/output widths (the final
/// width must be 1) and rescale every layer to spectral norm L^{1/D}.
/// Deterministic given `seed`.
pub fn init_network(
    input_dim: usize,
    widths: &[usize],
    lipschitz_bound: f64,
    activation: Activation,
    seed: u64,
) -> Result<DiscriminatorNet> {
    if !(lipschitz_bound > 0.0) {
        return Err(Error::invalid(format!(
            "Lipschitz bound must be > 0, got {lipschitz_bound}"
        )));
    }
    if input_dim == 0 {
        return Err(Error::invalid("input dimension must be >= 1"));
    }
    if widths.is_empty() {
        return Err(Error::invalid("widths must be nonempty"));
    }
    if *widths.last().unwrap() != 1 {
        return Err(Error::invalid(format!(
            "final width must be 1 (scalar output), got {}",
            widths.last().unwrap()
        )));
    }
    if widths.iter().any(|&w| w == 0) {
        return Err(Error::invalid("zero-width layer"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = widths.len();
    let mut layers = Vec::with_capacity(depth);
    let mut fan_in = input_dim;
    for &fan_out in widths {
        let scale = 1.0 / (fan_in as f64).sqrt();
        let weight = Array2::from_shape_fn((fan_in, fan_out), |_| {
            rng.sample::<f64, _>(rand_distr::StandardNormal) * scale
        });
        let bias = Array1::zeros(fan_out);
        let mut sn_state =
            Array1::from_shape_fn(fan_out, |_| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let n = vec_norm(sn_state.view());
        sn_state /= n;
        layers.push(LayerParams {
            weight,
            bias,
            sn_state,
        });
        fan_in = fan_out;
    }

    let mut net = DiscriminatorNet {
        layers,
        activation,
        lipschitz_bound,
        nu: 0.0,
    };
    net.certify();
    Ok(net)
}

/// Activation traces from a forward pass, consumed by [`DiscriminatorNet::backward`].
pub struct ForwardCache {
    input: Array2<f64>,
    /// Pre-activations z^l for every layer.
    pre: Vec<Array2<f64>>,
    /// Activated outputs a^l for hidden layers (layers 1..D−1).
    post: Vec<Array2<f64>>,
}

/// Exact gradients from one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    /// ∇_x φ weighted by the per-row output gradient (M × d).
    pub inputs: Array2<f64>,
}

impl DiscriminatorNet {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    /// Per-layer spectral-norm budget L^{1/D}.
    pub fn layer_target_norm(&self) -> f64 {
        self.lipschitz_bound.powf(1.0 / self.depth() as f64)
    }

    pub fn spectral_norm_enabled(&self) -> bool {
        self.lipschitz_bound.is_finite()
    }

    /// One warm-started power-iteration sweep per layer (the per-training-step
    /// projection of Algorithm-style spectral normalization). No-op when the
    /// bound is infinite.
    pub fn renormalize(&mut self) {
        if !self.spectral_norm_enabled() {
            return;
        }
        let target = self.layer_target_norm();
        for layer in &mut self.layers {
            // 1 iteration; warm start makes this accurate after the first call
            let _ = spectral_normalize(layer, target, 1);
        }
    }

    /// Converged normalization of every layer; run before a net is used for
    /// Lipschitz-certified evaluation (particle velocities, final
    /// divergence reports).
    pub fn certify(&mut self) {
        if !self.spectral_norm_enabled() {
            return;
        }
        let target = self.layer_target_norm();
        for layer in &mut self.layers {
            spectral_normalize_certified(layer, target);
        }
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    /// φ evaluated on a batch of points (one row per point).
    pub fn forward(&self, x: ArrayView2<'_, f64>, exec: Exec) -> Result<Array1<f64>> {
        self.check_input(x)?;
        let chunks = exec::map_row_chunks(x, exec, |_, c| self.forward_chunk_values(c));
        let mut out = Array1::zeros(x.nrows());
        let mut row = 0;
        for c in chunks {
            out.slice_mut(ndarray::s![row..row + c.len()]).assign(&c);
            row += c.len();
        }
        Ok(out)
    }

    fn forward_chunk_values(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        let depth = self.depth();
        let mut a = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weight);
            z += &layer.bias;
            if l + 1 < depth {
                a = z.mapv(|t| self.activation.value(t));
            } else {
                a = z;
            }
        }
        a.index_axis(Axis(1), 0).to_owned()
    }

    /// Forward pass that keeps the activation traces needed for backprop.
    pub fn forward_cached(
        &self,
        x: ArrayView2<'_, f64>,
        exec: Exec,
    ) -> Result<(Array1<f64>, ForwardCache)> {
        self.check_input(x)?;
        let depth = self.depth();
        let n = x.nrows();

        let mut pre: Vec<Array2<f64>> = self
            .layers
            .iter()
            .map(|l| Array2::zeros((n, l.output_dim())))
            .collect();
        let mut post: Vec<Array2<f64>> = self.layers[..depth - 1]
            .iter()
            .map(|l| Array2::zeros((n, l.output_dim())))
            .collect();

        let chunk_results = exec::map_row_chunks(x, exec, |start, c| {
            let mut local_pre = Vec::with_capacity(depth);
            let mut local_post = Vec::with_capacity(depth - 1);
            let mut a = c.to_owned();
            for (l, layer) in self.layers.iter().enumerate() {
                let mut z = a.dot(&layer.weight);
                z += &layer.bias;
                if l + 1 < depth {
                    a = z.mapv(|t| self.activation.value(t));
                    local_post.push(a.clone());
                } else {
                    a = z.clone();
                }
                local_pre.push(z);
            }
            (start, local_pre, local_post)
        });

        for (start, local_pre, local_post) in chunk_results {
            for (l, zp) in local_pre.into_iter().enumerate() {
                let rows = zp.nrows();
                pre[l]
                    .slice_mut(ndarray::s![start..start + rows, ..])
                    .assign(&zp);
            }
            for (l, ap) in local_post.into_iter().enumerate() {
                let rows = ap.nrows();
                post[l]
                    .slice_mut(ndarray::s![start..start + rows, ..])
                    .assign(&ap);
            }
        }

        let values = pre[depth - 1].index_axis(Axis(1), 0).to_owned();
        Ok((
            values,
            ForwardCache {
                input: x.to_owned(),
                pre,
                post,
            },
        ))
    }

    /// Backpropagate a per-row objective gradient through the cached pass.
    /// Returns parameter gradients plus the input gradients (rows of
    /// `out_grad[i] · ∇_x φ(x_i)`).
    pub fn backward(&self, cache: &ForwardCache, out_grad: ArrayView1<'_, f64>) -> Result<Gradients> {
        self.backward_exec(cache, out_grad, Exec::Seq)
    }

    pub fn backward_exec(
        &self,
        cache: &ForwardCache,
        out_grad: ArrayView1<'_, f64>,
        exec: Exec,
    ) -> Result<Gradients> {
        let n = cache.input.nrows();
        if out_grad.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: out_grad.len(),
            });
        }
        let depth = self.depth();

        struct ChunkGrads {
            start: usize,
            weights: Vec<Array2<f64>>,
            biases: Vec<Array1<f64>>,
            inputs: Array2<f64>,
        }

        let chunk_results = exec::map_row_chunks(cache.input.view(), exec, |start, xin| {
            let rows = xin.nrows();
            let range = ndarray::s![start..start + rows, ..];
            // δ^D: gradient w.r.t. the linear output column
            let mut delta =
                Array2::from_shape_fn((rows, 1), |(i, _)| out_grad[start + i]);

            let mut gw: Vec<Array2<f64>> = Vec::with_capacity(depth);
            let mut gb: Vec<Array1<f64>> = Vec::with_capacity(depth);
            let mut inputs = Array2::zeros((0, 0));

            for l in (0..depth).rev() {
                let a_prev = if l == 0 {
                    xin.to_owned()
                } else {
                    cache.post[l - 1].slice(range).to_owned()
                };
                gw.push(a_prev.t().dot(&delta));
                gb.push(delta.sum_axis(Axis(0)));
                let back = delta.dot(&self.layers[l].weight.t());
                if l == 0 {
                    inputs = back;
                } else {
                    let z_prev = cache.pre[l - 1].slice(range);
                    delta = back;
                    delta.zip_mut_with(&z_prev, |d, &z| *d *= self.activation.deriv(z));
                }
            }
            gw.reverse();
            gb.reverse();
            ChunkGrads {
                start,
                weights: gw,
                biases: gb,
                inputs,
            }
        });

        let mut weights: Vec<Array2<f64>> = self
            .layers
            .iter()
            .map(|l| Array2::zeros(l.weight.raw_dim()))
            .collect();
        let mut biases: Vec<Array1<f64>> = self
            .layers
            .iter()
            .map(|l| Array1::zeros(l.bias.raw_dim()))
            .collect();
        let mut inputs = Array2::zeros((n, self.input_dim()));

        // chunk-ordered reduction keeps the result independent of the driver
        for cg in chunk_results {
            for (acc, g) in weights.iter_mut().zip(&cg.weights) {
                *acc += g;
            }
            for (acc, g) in biases.iter_mut().zip(&cg.biases) {
                *acc += g;
            }
            let rows = cg.inputs.nrows();
            inputs
                .slice_mut(ndarray::s![cg.start..cg.start + rows, ..])
                .assign(&cg.inputs);
        }

        Ok(Gradients {
            weights,
            biases,
            inputs,
        })
    }

    /// ∇_x φ for every row of `x`. This is the particle velocity field
    /// (negated by the integrators); it never allocates parameter gradients.
    pub fn input_gradients(&self, x: ArrayView2<'_, f64>, exec: Exec) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let depth = self.depth();
        let d = self.input_dim();
        let chunks = exec::map_row_chunks(x, exec, |_, c| {
            let rows = c.nrows();
            // local forward keeping pre-activations
            let mut pre: Vec<Array2<f64>> = Vec::with_capacity(depth - 1);
            let mut a = c.to_owned();
            for (l, layer) in self.layers.iter().enumerate() {
                let mut z = a.dot(&layer.weight);
                z += &layer.bias;
                if l + 1 < depth {
                    a = z.mapv(|t| self.activation.value(t));
                    pre.push(z);
                }
            }
            let mut delta = Array2::ones((rows, 1));
            for l in (0..depth).rev() {
                let back = delta.dot(&self.layers[l].weight.t());
                if l == 0 {
                    return back;
                }
                delta = back;
                delta.zip_mut_with(&pre[l - 1], |dv, &z| *dv *= self.activation.deriv(z));
            }
            unreachable!()
        });
        let mut out = Array2::zeros((x.nrows(), d));
        let mut row = 0;
        for c in chunks {
            let rows = c.nrows();
            out.slice_mut(ndarray::s![row..row + rows, ..]).assign(&c);
            row += rows;
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Adam (ascent direction: the inner problem is a maximization)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators, one per parameter tensor plus ν.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub cfg: AdamConfig,
    step: u64,
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    m_nu: f64,
    v_nu: f64,
}

impl AdamState {
    pub fn new(net: &DiscriminatorNet, cfg: AdamConfig) -> Self {
        AdamState {
            cfg,
            step: 0,
            m_w: net
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weight.raw_dim()))
                .collect(),
            v_w: net
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weight.raw_dim()))
                .collect(),
            m_b: net
                .layers
                .iter()
                .map(|l| Array1::zeros(l.bias.raw_dim()))
                .collect(),
            v_b: net
                .layers
                .iter()
                .map(|l| Array1::zeros(l.bias.raw_dim()))
                .collect(),
            m_nu: 0.0,
            v_nu: 0.0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

fn adam_update_inplace(
    theta: &mut f64,
    g: f64,
    m: &mut f64,
    v: &mut f64,
    cfg: &AdamConfig,
    bc1: f64,
    bc2: f64,
) {
    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
    let mh = *m / bc1;
    let vh = *v / bc2;
    // ascent
    *theta += cfg.learning_rate * mh / (vh.sqrt() + cfg.eps);
}

/// One Adam ascent step on (W, b, ν), followed by the per-step spectral
/// re-projection of every layer.
pub fn adam_step(
    net: &mut DiscriminatorNet,
    grads: &Gradients,
    nu_grad: f64,
    state: &mut AdamState,
) {
    state.step += 1;
    let cfg = state.cfg;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);

    for (l, layer) in net.layers.iter_mut().enumerate() {
        ndarray::Zip::from(&mut layer.weight)
            .and(&grads.weights[l])
            .and(&mut state.m_w[l])
            .and(&mut state.v_w[l])
            .for_each(|t, &g, m, v| adam_update_inplace(t, g, m, v, &cfg, bc1, bc2));
        ndarray::Zip::from(&mut layer.bias)
            .and(&grads.biases[l])
            .and(&mut state.m_b[l])
            .and(&mut state.v_b[l])
            .for_each(|t, &g, m, v| adam_update_inplace(t, g, m, v, &cfg, bc1, bc2));
    }
    let mut nu = net.nu;
    adam_update_inplace(
        &mut nu,
        nu_grad,
        &mut state.m_nu,
        &mut state.v_nu,
        &cfg,
        bc1,
        bc2,
    );
    net.nu = nu;

    net.renormalize();
}

// ---------------------------------------------------------------------------
// Certification helper
// ---------------------------------------------------------------------------

/// Max of |φ(x) − φ(y)| / |x − y| over `pairs` uniform pairs inside the box
/// [lo, hi]^d. Used to spot-check the certified Lipschitz bound.
pub fn empirical_lipschitz_ratio(
    net: &DiscriminatorNet,
    lo: &[f64],
    hi: &[f64],
    pairs: usize,
    seed: u64,
    exec: Exec,
) -> Result<f64> {
    let d = net.input_dim();
    if lo.len() != d || hi.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: lo.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Array2::zeros((2 * pairs, d));
    for mut row in points.rows_mut() {
        for (j, p) in row.iter_mut().enumerate() {
            *p = rng.gen_range(lo[j]..hi[j]);
        }
    }
    let phi = net.forward(points.view(), exec)?;
    let ratios = exec::map_indices(pairs, exec, |i| {
        let x = points.row(2 * i);
        let y = points.row(2 * i + 1);
        let dist = x
            .iter()
            .zip(y.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if dist < 1e-12 {
            0.0
        } else {
            (phi[2 * i] - phi[2 * i + 1]).abs() / dist
        }
    });
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

// ---------------------------------------------------------------------------
// Checkpoint serialization
// ---------------------------------------------------------------------------

/// Self-describing checkpoint blob. Weights are row-major 64-bit floats;
/// JSON encoding round-trips them exactly (shortest-representation float
/// formatting). An unbounded net stores `lipschitz_bound: null`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetCheckpoint {
    pub format: String,
    pub lipschitz_bound: Option<f64>,
    pub nu: f64,
    pub activation: Activation,
    pub layers: Vec<LayerCheckpoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerCheckpoint {
    pub input_dim: usize,
    pub output_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub const CHECKPOINT_FORMAT: &str = "lipflow-net-v1";

impl DiscriminatorNet {
    pub fn to_checkpoint(&self) -> NetCheckpoint {
        NetCheckpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            lipschitz_bound: if self.lipschitz_bound.is_finite() {
                Some(self.lipschitz_bound)
            } else {
                None
            },
            nu: self.nu,
            activation: self.activation,
            layers: self
                .layers
                .iter()
                .map(|l| LayerCheckpoint {
                    input_dim: l.input_dim(),
                    output_dim: l.output_dim(),
                    weight: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }

    /// Rebuild a net from a checkpoint. The power-iteration cache is not
    /// persisted; it is re-seeded deterministically and re-converges on the
    /// first normalization.
    pub fn from_checkpoint(ckpt: &NetCheckpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::invalid(format!(
                "unknown checkpoint format {:?}",
                ckpt.format
            )));
        }
        if ckpt.layers.is_empty() {
            return Err(Error::invalid("checkpoint has no layers"));
        }
        let mut layers = Vec::with_capacity(ckpt.layers.len());
        for (i, lc) in ckpt.layers.iter().enumerate() {
            if lc.weight.len() != lc.input_dim * lc.output_dim {
                return Err(Error::invalid(format!(
                    "layer {i}: weight length {} != {}x{}",
                    lc.weight.len(),
                    lc.input_dim,
                    lc.output_dim
                )));
            }
            if lc.bias.len() != lc.output_dim {
                return Err(Error::invalid(format!("layer {i}: bias length mismatch")));
            }
            let weight =
                Array2::from_shape_vec((lc.input_dim, lc.output_dim), lc.weight.clone())
                    .expect("shape checked above");
            let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
            let mut sn_state = Array1::from_shape_fn(lc.output_dim, |_| {
                rng.sample::<f64, _>(rand_distr::StandardNormal)
            });
            let n = vec_norm(sn_state.view());
            sn_state /= n;
            layers.push(LayerParams {
                weight,
                bias: Array1::from_vec(lc.bias.clone()),
                sn_state,
            });
        }
        Ok(DiscriminatorNet {
            layers,
            activation: ckpt.activation,
            lipschitz_bound: ckpt.lipschitz_bound.unwrap_or(f64::INFINITY),
            nu: ckpt.nu,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_checkpoint())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ckpt: NetCheckpoint = serde_json::from_str(s)?;
        Self::from_checkpoint(&ckpt)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_json(&s)
    }
}
