//! f-divergence generators, Legendre conjugates, and the variational
//! objective estimated on empirical samples.
//!
//! The estimator maximized by the inner loop is
//!
//! ```text
//! mean(φ on P) − [ ν + mean( f*(φ(X) − ν) ) over Q ]
//! ```
//!
//! with three ν-handling modes: joint gradient ascent on ν (the default),
//! the analytic Donsker–Varadhan elimination for KL, and no ν at all for
//! the degenerate IPM (1-Wasserstein) pairing where f* is the identity.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::net::{adam_step, AdamConfig, AdamState, DiscriminatorNet};
use crate::particle::ParticleSet;

/// Estimates whose magnitude passes this cap are declared diverged; together
/// with conjugate overflow this is the bookkeeping that classifies unstable
/// runs deterministically.
pub const DIVERGENCE_CAP: f64 = 1e9;

/// Choice of generator f.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "f", rename_all = "snake_case")]
pub enum FDivKind {
    /// f(x) = x log x, conjugate f*(y) = e^{y−1}.
    Kl,
    /// f(x) = (x^α − 1)/(α(α−1)) for α > 1.
    Alpha { alpha: f64 },
    /// Integral probability metric pairing (conjugate = identity); the
    /// estimator becomes mean(φ on P) − mean(φ on Q).
    Ipm,
}

/// How the shift variable ν is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuMode {
    /// ν co-trained with the network weights.
    Joint,
    /// Donsker–Varadhan: valid for KL only, ν eliminated analytically.
    Analytic,
    /// No ν (IPM only).
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FDivSpec {
    pub kind: FDivKind,
    pub nu_mode: NuMode,
}

impl FDivSpec {
    pub fn new(kind: FDivKind, nu_mode: NuMode) -> Result<Self> {
        if let FDivKind::Alpha { alpha } = kind {
            if !(alpha > 1.0) || !alpha.is_finite() {
                return Err(Error::invalid(format!(
                    "alpha-divergence requires alpha > 1, got {alpha}"
                )));
            }
        }
        match (kind, nu_mode) {
            (FDivKind::Kl, NuMode::Analytic) => {}
            (_, NuMode::Analytic) => {
                return Err(Error::invalid("analytic nu mode is only valid for KL"))
            }
            (FDivKind::Ipm, NuMode::None) => {}
            (FDivKind::Ipm, _) => {
                return Err(Error::invalid("IPM mode requires nu_mode = none"))
            }
            (_, NuMode::None) => {
                return Err(Error::invalid("nu_mode = none is only valid for IPM"))
            }
            _ => {}
        }
        Ok(FDivSpec { kind, nu_mode })
    }

    pub fn kl() -> Self {
        FDivSpec {
            kind: FDivKind::Kl,
            nu_mode: NuMode::Joint,
        }
    }

    pub fn kl_analytic() -> Self {
        FDivSpec {
            kind: FDivKind::Kl,
            nu_mode: NuMode::Analytic,
        }
    }

    pub fn alpha(alpha: f64) -> Result<Self> {
        FDivSpec::new(FDivKind::Alpha { alpha }, NuMode::Joint)
    }

    pub fn ipm() -> Self {
        FDivSpec {
            kind: FDivKind::Ipm,
            nu_mode: NuMode::None,
        }
    }
}

/// Generator value f(x) for x ≥ 0. f(1) = 0 for every kind.
pub fn f_value(kind: FDivKind, x: f64) -> Result<f64> {
    if x < 0.0 {
        return Err(Error::invalid(format!("f is defined on x >= 0, got {x}")));
    }
    match kind {
        FDivKind::Kl => Ok(if x == 0.0 { 0.0 } else { x * x.ln() }),
        FDivKind::Alpha { alpha } => Ok((x.powf(alpha) - 1.0) / (alpha * (alpha - 1.0))),
        FDivKind::Ipm => Err(Error::invalid(
            "IPM pairing has no generator function; only the conjugate is defined",
        )),
    }
}

/// Legendre conjugate f*(y) = sup_{x ≥ 0} { xy − f(x) }.
///
/// KL: e^{y−1}. Alpha (α > 1): the sup is attained at x = ((α−1)y)^{1/(α−1)}
/// for y > 0 and at x = 0 otherwise, giving
/// `((α−1)y)^{α/(α−1)}/α + 1/(α(α−1))` on y > 0 and the constant
/// `1/(α(α−1))` on y ≤ 0. IPM: identity.
pub fn f_conjugate(kind: FDivKind, y: f64) -> f64 {
    match kind {
        FDivKind::Kl => (y - 1.0).exp(),
        FDivKind::Alpha { alpha } => {
            let floor = 1.0 / (alpha * (alpha - 1.0));
            if y <= 0.0 {
                floor
            } else {
                ((alpha - 1.0) * y).powf(alpha / (alpha - 1.0)) / alpha + floor
            }
        }
        FDivKind::Ipm => y,
    }
}

/// Derivative of the conjugate, (f*)'(y) = argmax of the Legendre sup.
pub fn f_conjugate_deriv(kind: FDivKind, y: f64) -> f64 {
    match kind {
        FDivKind::Kl => (y - 1.0).exp(),
        FDivKind::Alpha { alpha } => {
            if y <= 0.0 {
                0.0
            } else {
                ((alpha - 1.0) * y).powf(1.0 / (alpha - 1.0))
            }
        }
        FDivKind::Ipm => 1.0,
    }
}

/// The estimator value together with its two expectation terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    /// ep_term − eq_term.
    pub divergence_estimate: f64,
    /// mean(φ) over the P samples.
    pub ep_term: f64,
    /// ν + mean(f*(φ − ν)) over the Q samples (analytic mode: log mean exp).
    pub eq_term: f64,
    /// The shift actually used (analytic mode reports the minimizer).
    pub nu_star: f64,
}

fn mean(v: ArrayView1<'_, f64>) -> f64 {
    v.sum() / v.len() as f64
}

/// Numerically stable log(mean(exp(x))).
fn log_mean_exp(v: ArrayView1<'_, f64>) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s = v.iter().map(|x| (x - max).exp()).sum::<f64>() / v.len() as f64;
    max + s.ln()
}

fn check_estimate(est: f64, worst: f64) -> Result<f64> {
    if !est.is_finite() || est.abs() > DIVERGENCE_CAP {
        return Err(Error::Diverged {
            magnitude: if est.is_finite() { est.abs() } else { worst },
        });
    }
    Ok(est)
}

/// Evaluate the variational objective on frozen φ values.
///
/// Signals [`Error::Diverged`] when the conjugate overflows or the estimate
/// magnitude passes [`DIVERGENCE_CAP`].
pub fn objective(
    spec: &FDivSpec,
    phi_p: ArrayView1<'_, f64>,
    phi_q: ArrayView1<'_, f64>,
    nu: f64,
) -> Result<ObjectiveValue> {
    if phi_p.is_empty() || phi_q.is_empty() {
        return Err(Error::EmptySample("objective needs nonempty samples".into()));
    }
    let ep = mean(phi_p);
    let (eq, nu_star, worst) = match spec.nu_mode {
        NuMode::Analytic => {
            let lse = log_mean_exp(phi_q);
            (lse, lse - 1.0, lse.abs())
        }
        NuMode::None => (mean(phi_q), 0.0, 0.0),
        NuMode::Joint => {
            let mut worst: f64 = 0.0;
            let mut sum = 0.0;
            for &y in phi_q {
                let v = f_conjugate(spec.kind, y - nu);
                if !v.is_finite() {
                    return Err(Error::Diverged {
                        magnitude: (y - nu).abs(),
                    });
                }
                worst = worst.max(v.abs());
                sum += v;
            }
            (nu + sum / phi_q.len() as f64, nu, worst)
        }
    };
    let est = check_estimate(ep - eq, worst.max(ep.abs()))?;
    Ok(ObjectiveValue {
        divergence_estimate: est,
        ep_term: ep,
        eq_term: eq,
        nu_star,
    })
}

/// Gradients of the objective with respect to the φ outputs and ν.
#[derive(Debug, Clone)]
pub struct ObjectiveGrads {
    /// ∂obj/∂φ(Y_i), length M.
    pub p: Array1<f64>,
    /// ∂obj/∂φ(X_j), length N.
    pub q: Array1<f64>,
    /// ∂obj/∂ν (0 in analytic and IPM modes).
    pub nu: f64,
}

/// Chain-rule seeds for backpropagation through the discriminator.
pub fn objective_output_gradients(
    spec: &FDivSpec,
    phi_p: ArrayView1<'_, f64>,
    phi_q: ArrayView1<'_, f64>,
    nu: f64,
) -> Result<ObjectiveGrads> {
    if phi_p.is_empty() || phi_q.is_empty() {
        return Err(Error::EmptySample("gradients need nonempty samples".into()));
    }
    let m = phi_p.len() as f64;
    let n = phi_q.len() as f64;
    let p = Array1::from_elem(phi_p.len(), 1.0 / m);

    let (q, nu_grad) = match spec.nu_mode {
        NuMode::Analytic => {
            // −softmax over the Q values
            let max = phi_q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(Error::Diverged { magnitude: max.abs() });
            }
            let w: Array1<f64> = phi_q.mapv(|y| (y - max).exp());
            let z = w.sum();
            (w.mapv(|v| -v / z), 0.0)
        }
        NuMode::None => (Array1::from_elem(phi_q.len(), -1.0 / n), 0.0),
        NuMode::Joint => {
            let mut q = Array1::zeros(phi_q.len());
            let mut deriv_sum = 0.0;
            for (j, &y) in phi_q.iter().enumerate() {
                let d = f_conjugate_deriv(spec.kind, y - nu);
                if !d.is_finite() {
                    return Err(Error::Diverged {
                        magnitude: (y - nu).abs(),
                    });
                }
                q[j] = -d / n;
                deriv_sum += d;
            }
            (q, -1.0 + deriv_sum / n)
        }
    };
    Ok(ObjectiveGrads { p, q, nu: nu_grad })
}

/// Run ascent steps of the inner problem on the concatenated (P, Q) batch.
/// The discriminator and optimizer state persist across calls, which is how
/// the outer transport loop warm-starts.
pub fn train_discriminator(
    net: &mut DiscriminatorNet,
    state: &mut AdamState,
    spec: &FDivSpec,
    p: ArrayView2<'_, f64>,
    q: ArrayView2<'_, f64>,
    steps: usize,
    exec: Exec,
) -> Result<()> {
    let m = p.nrows();
    let n = q.nrows();
    let d = p.ncols();
    if q.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: q.ncols(),
        });
    }
    let mut cat = ndarray::Array2::zeros((m + n, d));
    cat.slice_mut(ndarray::s![..m, ..]).assign(&p);
    cat.slice_mut(ndarray::s![m.., ..]).assign(&q);

    for _ in 0..steps {
        let (phi, cache) = net.forward_cached(cat.view(), exec)?;
        let (phi_p, phi_q) = phi.view().split_at(ndarray::Axis(0), m);
        let og = objective_output_gradients(spec, phi_p, phi_q, net.nu)?;
        let mut out_grad = Array1::zeros(m + n);
        out_grad.slice_mut(ndarray::s![..m]).assign(&og.p);
        out_grad.slice_mut(ndarray::s![m..]).assign(&og.q);
        let grads = net.backward_exec(&cache, out_grad.view(), exec)?;
        adam_step(net, &grads, og.nu, state);
    }
    Ok(())
}

/// Objective of the current net on the given clouds.
pub fn evaluate_objective(
    net: &DiscriminatorNet,
    spec: &FDivSpec,
    p: ArrayView2<'_, f64>,
    q: ArrayView2<'_, f64>,
    exec: Exec,
) -> Result<ObjectiveValue> {
    let phi_p = net.forward(p, exec)?;
    let phi_q = net.forward(q, exec)?;
    objective(spec, phi_p.view(), phi_q.view(), net.nu)
}

/// Train φ for `inner_steps` ascent steps (spectral re-projection after each)
/// and return the resulting divergence estimate together with the trained
/// net. This is the standalone estimator of D̂_f^{Γ_L}(P̂‖Q̂).
pub fn estimate_divergence(
    spec: &FDivSpec,
    mut net: DiscriminatorNet,
    p: &ParticleSet,
    q: &ParticleSet,
    inner_steps: usize,
    adam: AdamConfig,
    exec: Exec,
) -> Result<(ObjectiveValue, DiscriminatorNet)> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    let mut state = AdamState::new(&net, adam);
    train_discriminator(&mut net, &mut state, spec, p.view(), q.view(), inner_steps, exec)?;
    net.certify();
    let value = evaluate_objective(&net, spec, p.view(), q.view(), exec)?;
    Ok((value, net))
}
