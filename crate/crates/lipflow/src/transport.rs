//! The particle-transport engine: alternate discriminator ascent with
//! explicit particle moves along −∇φ, log divergence and kinetic energy,
//! checkpoint the per-step discriminators, and replay recorded vector
//! fields on fresh particles.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fdiv::{evaluate_objective, train_discriminator, FDivSpec};
use crate::net::{init_network, Activation, AdamConfig, AdamState, DiscriminatorNet};
pub use crate::particle::{ParticleSet, Role};

/// Anything that yields ∇φ on a batch of points. The engine uses the
/// trained discriminator; tests use closed-form fields.
pub trait PotentialField {
    fn grad(&self, x: ArrayView2<'_, f64>, exec: Exec) -> Result<Array2<f64>>;
}

impl PotentialField for DiscriminatorNet {
    fn grad(&self, x: ArrayView2<'_, f64>, exec: Exec) -> Result<Array2<f64>> {
        self.input_gradients(x, exec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Euler,
    Heun,
}

/// Discriminator architecture knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Layer widths including the final scalar output.
    pub widths: Vec<usize>,
    pub activation: Activation,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            widths: vec![32, 32, 32, 1],
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportConfig {
    /// Time step Δt.
    pub dt: f64,
    /// Outer particle updates.
    pub n_max: usize,
    /// Inner discriminator ascent steps per outer step.
    pub m_max: usize,
    /// Lipschitz bound L; `f64::INFINITY` disables spectral normalization.
    pub lipschitz_bound: f64,
    pub fdiv: FDivSpec,
    pub integrator: Integrator,
    /// Keep one discriminator across the whole run (fresh inner steps each
    /// outer step). When false the net is re-initialized every outer step.
    pub warm_start: bool,
    /// Store the discriminator every k-th step; 0 disables checkpointing.
    /// Replay requires 1.
    pub checkpoint_every: usize,
    /// Stop when the kinetic energy falls below this threshold.
    pub stop_ke: f64,
    pub seed: u64,
    /// Force the sequential driver; runs become bit-for-bit reproducible.
    pub deterministic: bool,
    pub net: NetConfig,
    pub adam: AdamConfig,
}

impl TransportConfig {
    /// Defaults: Δt = 0.2/L (the CFL-style coupling), stop_ke = 1e−6·L²,
    /// warm start on, no checkpoints.
    pub fn new(lipschitz_bound: f64, fdiv: FDivSpec) -> Self {
        let dt = if lipschitz_bound.is_finite() {
            0.2 / lipschitz_bound
        } else {
            0.2
        };
        let stop_ke = if lipschitz_bound.is_finite() {
            1e-6 * lipschitz_bound * lipschitz_bound
        } else {
            0.0
        };
        TransportConfig {
            dt,
            n_max: 1000,
            m_max: 10,
            lipschitz_bound,
            fdiv,
            integrator: Integrator::Euler,
            warm_start: true,
            checkpoint_every: 0,
            stop_ke,
            seed: 0,
            deterministic: false,
            net: NetConfig::default(),
            adam: AdamConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::invalid("dt must be > 0"));
        }
        if self.n_max < 1 {
            return Err(Error::invalid("n_max must be >= 1"));
        }
        if self.m_max < 1 {
            return Err(Error::invalid("m_max must be >= 1"));
        }
        if !(self.lipschitz_bound > 0.0) {
            return Err(Error::invalid("Lipschitz bound must be > 0"));
        }
        if !(self.stop_ke >= 0.0) {
            return Err(Error::invalid("stop_ke must be >= 0"));
        }
        Ok(())
    }
}

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Hit the n_max cap.
    NMax,
    /// Kinetic energy fell below the threshold.
    KeThreshold,
    /// The objective left the representable range.
    Diverged,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::NMax => "n_max",
            Termination::KeThreshold => "ke_threshold",
            Termination::Diverged => "diverged",
        }
    }
}

/// One logged step. `div` and `ke` describe the state *before* the move of
/// step `step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub div: f64,
    pub ke: f64,
    pub max_speed: f64,
    /// Seconds since run start; excluded from the wire format and from
    /// determinism comparisons.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub records: Vec<StepRecord>,
    pub termination: Termination,
}

impl TrajectoryLog {
    /// JSON-lines wire format, one record per step:
    /// `{"step":n,"t":…,"div":…,"ke":…,"max_speed":…}`.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        #[derive(Serialize)]
        struct Wire {
            step: usize,
            t: f64,
            div: f64,
            ke: f64,
            max_speed: f64,
        }
        for r in &self.records {
            let wire = Wire {
                step: r.step,
                t: r.t,
                div: r.div,
                ke: r.ke,
                max_speed: r.max_speed,
            };
            serde_json::to_writer(&mut w, &wire)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

/// A stored per-step discriminator. Heun steps also store the corrector
/// net trained at the predicted state.
#[derive(Debug, Clone)]
pub struct CheckpointEntry {
    pub step: usize,
    pub net: DiscriminatorNet,
    pub corrector: Option<DiscriminatorNet>,
}

#[derive(Debug, Clone, Default)]
pub struct CheckpointRing {
    pub entries: Vec<CheckpointEntry>,
}

impl CheckpointRing {
    fn push(&mut self, entry: CheckpointEntry) {
        if let Some(last) = self.entries.last() {
            assert!(entry.step > last.step, "checkpoint steps must increase");
        }
        self.entries.push(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Write the ring as `<dir>/step_<n>` JSON blobs (Heun correctors as
    /// `step_<n>_corrector`).
    pub fn save_to_dir(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for entry in &self.entries {
            entry.net.save(&dir.join(format!("step_{}", entry.step)))?;
            if let Some(corr) = &entry.corrector {
                corr.save(&dir.join(format!("step_{}_corrector", entry.step)))?;
            }
        }
        Ok(())
    }

    pub fn load_from_dir(dir: &std::path::Path) -> Result<Self> {
        let mut steps: Vec<usize> = Vec::new();
        for entry in std::fs::read_dir(dir)? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(num) = name.strip_prefix("step_") {
                if let Ok(n) = num.parse::<usize>() {
                    steps.push(n);
                }
            }
        }
        steps.sort_unstable();
        let mut ring = CheckpointRing::default();
        for n in steps {
            let net = DiscriminatorNet::load(&dir.join(format!("step_{n}")))?;
            let corr_path = dir.join(format!("step_{n}_corrector"));
            let corrector = if corr_path.exists() {
                Some(DiscriminatorNet::load(&corr_path)?)
            } else {
                None
            };
            ring.push(CheckpointEntry {
                step: n,
                net,
                corrector,
            });
        }
        Ok(ring)
    }
}

/// Result bundle of a transport run. On a diverged termination the
/// particles are the last finite state.
#[derive(Debug, Clone)]
pub struct GpaRun {
    pub particles: ParticleSet,
    pub log: TrajectoryLog,
    pub checkpoints: CheckpointRing,
}

// ---------------------------------------------------------------------------
// Integrators
// ---------------------------------------------------------------------------

/// Forward Euler: Y ← Y − Δt·∇φ(Y).
pub fn euler_step(
    positions: ArrayView2<'_, f64>,
    field: &impl PotentialField,
    dt: f64,
    exec: Exec,
) -> Result<Array2<f64>> {
    let grads = field.grad(positions, exec)?;
    Ok(apply_euler(positions, &grads, dt))
}

fn apply_euler(positions: ArrayView2<'_, f64>, grads: &Array2<f64>, dt: f64) -> Array2<f64> {
    let mut out = positions.to_owned();
    out.zip_mut_with(grads, |y, &g| *y -= dt * g);
    out
}

/// Heun predictor/corrector:
/// Y ← Y − Δt/2·(∇φ_t(Y) + ∇φ_{t+1}(Ŷ)) with Ŷ the Euler-predicted state.
/// Equals Euler exactly when the gradient field is constant.
pub fn heun_step(
    positions: ArrayView2<'_, f64>,
    field_now: &impl PotentialField,
    field_pred: &impl PotentialField,
    dt: f64,
    exec: Exec,
) -> Result<Array2<f64>> {
    let g1 = field_now.grad(positions, exec)?;
    let pred = apply_euler(positions, &g1, dt);
    let g2 = field_pred.grad(pred.view(), exec)?;
    let mut out = positions.to_owned();
    ndarray::Zip::from(&mut out)
        .and(&g1)
        .and(&g2)
        .for_each(|y, &a, &b| *y -= 0.5 * dt * (a + b));
    Ok(out)
}

fn speed_stats(grads: &Array2<f64>) -> (f64, f64) {
    let mut ke = 0.0;
    let mut max_speed: f64 = 0.0;
    for row in grads.rows() {
        let sq: f64 = row.iter().map(|g| g * g).sum();
        ke += sq;
        max_speed = max_speed.max(sq.sqrt());
    }
    (ke / grads.nrows() as f64, max_speed)
}

/// Mean squared gradient norm over the particles: the regularized Fisher
/// information, interpreted as total kinetic energy. Bounded by L².
pub fn kinetic_energy(
    particles: &ParticleSet,
    field: &impl PotentialField,
    exec: Exec,
) -> Result<f64> {
    let grads = field.grad(particles.view(), exec)?;
    Ok(speed_stats(&grads).0)
}

// ---------------------------------------------------------------------------
// The outer loop
// ---------------------------------------------------------------------------

/// Run the full transport loop. See [`gpa_run_observed`] for a variant with
/// a per-step observer.
pub fn gpa_run(
    source: &ParticleSet,
    target: &ParticleSet,
    cfg: &TransportConfig,
) -> Result<GpaRun> {
    gpa_run_observed(source, target, cfg, |_, _| {})
}

/// Like [`gpa_run`], invoking `observer(step, positions)` for every logged
/// step with the pre-move particle state (the CLI uses this to write
/// snapshots).
pub fn gpa_run_observed(
    source: &ParticleSet,
    target: &ParticleSet,
    cfg: &TransportConfig,
    mut observer: impl FnMut(usize, ArrayView2<'_, f64>),
) -> Result<GpaRun> {
    cfg.validate()?;
    if source.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: source.dim(),
            got: target.dim(),
        });
    }
    let exec = Exec::from_deterministic(cfg.deterministic);
    let dim = source.dim();

    let mut net = init_network(
        dim,
        &cfg.net.widths,
        cfg.lipschitz_bound,
        cfg.net.activation,
        cfg.seed,
    )?;
    let mut adam = AdamState::new(&net, cfg.adam);

    let mut y = source.positions.clone();
    let target_pos = target.view();
    let mut records: Vec<StepRecord> = Vec::with_capacity(cfg.n_max.min(1 << 20));
    let mut ring = CheckpointRing::default();
    let mut termination = Termination::NMax;
    let started = Instant::now();

    'outer: for n in 0..cfg.n_max {
        if !cfg.warm_start && n > 0 {
            net = init_network(
                dim,
                &cfg.net.widths,
                cfg.lipschitz_bound,
                cfg.net.activation,
                cfg.seed.wrapping_add(n as u64),
            )?;
            adam = AdamState::new(&net, cfg.adam);
        }

        match train_discriminator(
            &mut net,
            &mut adam,
            &cfg.fdiv,
            y.view(),
            target_pos,
            cfg.m_max,
            exec,
        ) {
            Ok(()) => {}
            Err(e) if e.is_diverged() => {
                termination = Termination::Diverged;
                break 'outer;
            }
            Err(e) => return Err(e),
        }
        net.certify();

        let value = match evaluate_objective(&net, &cfg.fdiv, y.view(), target_pos, exec) {
            Ok(v) => v,
            Err(e) if e.is_diverged() => {
                termination = Termination::Diverged;
                break 'outer;
            }
            Err(e) => return Err(e),
        };

        let grads = net.input_gradients(y.view(), exec)?;
        if grads.iter().any(|g| !g.is_finite()) {
            termination = Termination::Diverged;
            break 'outer;
        }
        let (ke, max_speed) = speed_stats(&grads);
        records.push(StepRecord {
            step: n,
            t: n as f64 * cfg.dt,
            div: value.divergence_estimate,
            ke,
            max_speed,
            wall_time: started.elapsed().as_secs_f64(),
        });
        observer(n, y.view());

        if ke < cfg.stop_ke {
            termination = Termination::KeThreshold;
            break 'outer;
        }

        // move, checkpointing the fields actually applied
        let mut corrector = None;
        let y_next = match cfg.integrator {
            Integrator::Euler => apply_euler(y.view(), &grads, cfg.dt),
            Integrator::Heun => {
                let pred = apply_euler(y.view(), &grads, cfg.dt);
                let mut corr_net = net.clone();
                let mut corr_adam = adam.clone();
                match train_discriminator(
                    &mut corr_net,
                    &mut corr_adam,
                    &cfg.fdiv,
                    pred.view(),
                    target_pos,
                    cfg.m_max,
                    exec,
                ) {
                    Ok(()) => {}
                    Err(e) if e.is_diverged() => {
                        termination = Termination::Diverged;
                        break 'outer;
                    }
                    Err(e) => return Err(e),
                }
                corr_net.certify();
                let g2 = corr_net.input_gradients(pred.view(), exec)?;
                if g2.iter().any(|g| !g.is_finite()) {
                    termination = Termination::Diverged;
                    break 'outer;
                }
                let mut out = y.clone();
                ndarray::Zip::from(&mut out)
                    .and(&grads)
                    .and(&g2)
                    .for_each(|yy, &a, &b| *yy -= 0.5 * cfg.dt * (a + b));
                corrector = Some(corr_net);
                out
            }
        };

        if cfg.checkpoint_every > 0 && n % cfg.checkpoint_every == 0 {
            ring.push(CheckpointEntry {
                step: n,
                net: net.clone(),
                corrector,
            });
        }
        y = y_next;
    }

    let particles = ParticleSet {
        positions: y,
        role: Role::Generated,
        seed: source.seed,
    };
    Ok(GpaRun {
        particles,
        log: TrajectoryLog {
            records,
            termination,
        },
        checkpoints: ring,
    })
}

/// Transport fresh particles through the recorded per-step vector fields
/// with the same integrator and Δt. Requires a ring recorded with
/// `checkpoint_every = 1`.
pub fn replay(
    checkpoints: &CheckpointRing,
    fresh: &ParticleSet,
    cfg: &TransportConfig,
) -> Result<ParticleSet> {
    if checkpoints.is_empty() {
        return Err(Error::MissingCheckpoints {
            expected: 0,
            found: None,
        });
    }
    for (i, entry) in checkpoints.entries.iter().enumerate() {
        if entry.step != i {
            return Err(Error::MissingCheckpoints {
                expected: i,
                found: Some(entry.step),
            });
        }
    }
    let exec = Exec::from_deterministic(cfg.deterministic);
    let mut y = fresh.positions.clone();
    for entry in &checkpoints.entries {
        y = match cfg.integrator {
            Integrator::Euler => euler_step(y.view(), &entry.net, cfg.dt, exec)?,
            Integrator::Heun => {
                let corr = entry.corrector.as_ref().ok_or_else(|| {
                    Error::invalid(format!(
                        "heun replay needs a corrector net at step {}",
                        entry.step
                    ))
                })?;
                heun_step(y.view(), &entry.net, corr, cfg.dt, exec)?
            }
        };
    }
    Ok(ParticleSet {
        positions: y,
        role: Role::Generated,
        seed: fresh.seed,
    })
}

// ---------------------------------------------------------------------------
// Dissipation diagnostics
// ---------------------------------------------------------------------------

/// Windowed comparison of the divergence decay rate −ΔD̂/Δt against the
/// kinetic energy (the decay-rate identity of the continuous flow).
#[derive(Debug, Clone)]
pub struct DissipationReport {
    pub window: usize,
    pub dt: f64,
    /// Mean divergence per window.
    pub div_means: Vec<f64>,
    /// Mean kinetic energy per window.
    pub ke_means: Vec<f64>,
    pub checks: Vec<DissipationWindowCheck>,
}

#[derive(Debug, Clone, Copy)]
pub struct DissipationWindowCheck {
    pub start_step: usize,
    /// −ΔD̂/Δt between consecutive windows (the numerator).
    pub decay_rate: f64,
    /// Kinetic energy averaged over the window pair (the denominator).
    pub mean_ke: f64,
    pub rel_discrepancy: f64,
}

impl DissipationReport {
    /// Largest increase between consecutive window means (0 when the
    /// windowed divergence is non-increasing).
    pub fn max_windowed_increase(&self) -> f64 {
        self.div_means
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    pub fn div_range(&self) -> f64 {
        let max = self.div_means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.div_means.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }
}

pub fn dissipation_check(log: &TrajectoryLog, window: usize) -> Result<DissipationReport> {
    if window < 1 {
        return Err(Error::invalid("window must be >= 1"));
    }
    if log.records.len() < 2 * window || log.records.len() < 2 {
        return Err(Error::invalid(format!(
            "log too short ({} records) for window {window}",
            log.records.len()
        )));
    }
    let dt = log.records[1].t - log.records[0].t;
    let n_windows = log.records.len() / window;
    let mut div_means = Vec::with_capacity(n_windows);
    let mut ke_means = Vec::with_capacity(n_windows);
    for k in 0..n_windows {
        let chunk = &log.records[k * window..(k + 1) * window];
        div_means.push(chunk.iter().map(|r| r.div).sum::<f64>() / window as f64);
        ke_means.push(chunk.iter().map(|r| r.ke).sum::<f64>() / window as f64);
    }
    let mut checks = Vec::with_capacity(n_windows.saturating_sub(1));
    for k in 0..n_windows - 1 {
        let decay_rate = (div_means[k] - div_means[k + 1]) / (window as f64 * dt);
        let mean_ke = 0.5 * (ke_means[k] + ke_means[k + 1]);
        let rel_discrepancy = (decay_rate - mean_ke).abs() / mean_ke.abs().max(1e-12);
        checks.push(DissipationWindowCheck {
            start_step: log.records[k * window].step,
            decay_rate,
            mean_ke,
            rel_discrepancy,
        });
    }
    Ok(DissipationReport {
        window,
        dt,
        div_means,
        ke_means,
        checks,
    })
}
