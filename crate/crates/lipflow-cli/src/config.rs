//! TOML experiment configuration: `[source]`/`[target]` distribution tables,
//! `[transport]` engine settings, optional `[latent]`, `[outputs]`, `[eval]`
//! and `[sweep]` sections.

use serde::Deserialize;
use std::path::{Path, PathBuf};

use lipflow::datasets::{self, DistSpec};
use lipflow::fdiv::{FDivKind, FDivSpec, NuMode};
use lipflow::net::{Activation, AdamConfig, DEFAULT_SMOOTH_EPS};
use lipflow::transport::{Integrator, NetConfig, TransportConfig};
use lipflow::{Error, ParticleSet, Result, Role};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub source: toml::Table,
    pub target: toml::Table,
    pub transport: TransportToml,
    #[serde(default)]
    pub latent: Option<LatentToml>,
    #[serde(default)]
    pub outputs: OutputsToml,
    #[serde(default)]
    pub eval: Option<EvalToml>,
    #[serde(default)]
    pub sweep: Option<SweepToml>,
}

/// One side of the experiment: either a synthetic `DistSpec` table with a
/// sample count, or `kind = "csv"` with a path.
#[derive(Debug)]
pub enum SideSpec {
    Dist { spec: DistSpec, n: usize, seed: Option<u64> },
    Csv { path: PathBuf, has_header: bool },
}

fn parse_side(table: &toml::Table, side: &str) -> Result<SideSpec> {
    let kind = table
        .get("kind")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::invalid(format!("[{side}] needs a string `kind`")))?;
    if kind == "csv" {
        let path = table
            .get("path")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::invalid(format!("[{side}] csv needs `path`")))?;
        let has_header = table
            .get("has_header")
            .and_then(|v| v.as_bool())
            .unwrap_or(true);
        return Ok(SideSpec::Csv {
            path: PathBuf::from(path),
            has_header,
        });
    }
    let n = table
        .get("n")
        .and_then(|v| v.as_integer())
        .ok_or_else(|| Error::invalid(format!("[{side}] needs a sample count `n`")))?;
    if n < 1 {
        return Err(Error::invalid(format!("[{side}] n must be >= 1")));
    }
    let seed = table.get("seed").and_then(|v| v.as_integer()).map(|s| s as u64);
    let mut spec_table = table.clone();
    spec_table.remove("n");
    spec_table.remove("seed");
    let spec: DistSpec = toml::Value::Table(spec_table)
        .try_into()
        .map_err(|e| Error::invalid(format!("[{side}]: {e}")))?;
    spec.validate()?;
    Ok(SideSpec::Dist {
        spec,
        n: n as usize,
        seed,
    })
}

impl SideSpec {
    /// Produce the particle cloud, resolving relative CSV paths against
    /// the config directory.
    pub fn realize(&self, base: &Path, role: Role, fallback_seed: u64) -> Result<ParticleSet> {
        match self {
            SideSpec::Dist { spec, n, seed } => {
                let ps = datasets::sample(spec, *n, seed.unwrap_or(fallback_seed))?;
                Ok(ps.with_role(role))
            }
            SideSpec::Csv { path, has_header } => {
                let full = if path.is_absolute() {
                    path.clone()
                } else {
                    base.join(path)
                };
                Ok(datasets::load_csv(&full, *has_header)?.with_role(role))
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportToml {
    pub l: f64,
    pub f: String,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub nu_mode: Option<String>,
    #[serde(default)]
    pub dt: Option<f64>,
    pub n_max: usize,
    pub m_max: usize,
    #[serde(default = "default_integrator")]
    pub integrator: String,
    #[serde(default = "default_true")]
    pub warm_start: bool,
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub stop_ke: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub deterministic: bool,
    #[serde(default)]
    pub discriminator: DiscriminatorToml,
}

fn default_integrator() -> String {
    "euler".into()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorToml {
    #[serde(default = "default_widths")]
    pub widths: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: String,
    #[serde(default = "default_smooth_eps")]
    pub smooth_eps: f64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
}

impl Default for DiscriminatorToml {
    fn default() -> Self {
        DiscriminatorToml {
            widths: default_widths(),
            activation: default_activation(),
            smooth_eps: default_smooth_eps(),
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
        }
    }
}

fn default_widths() -> Vec<usize> {
    vec![32, 32, 32, 1]
}

fn default_activation() -> String {
    "relu".into()
}

fn default_smooth_eps() -> f64 {
    DEFAULT_SMOOTH_EPS
}

fn default_lr() -> f64 {
    1e-3
}

fn default_beta1() -> f64 {
    0.5
}

fn default_beta2() -> f64 {
    0.999
}

pub fn parse_fdiv(f: &str, alpha: Option<f64>, nu_mode: Option<&str>) -> Result<FDivSpec> {
    let kind = match f {
        "kl" => FDivKind::Kl,
        "alpha" => FDivKind::Alpha {
            alpha: alpha.ok_or_else(|| Error::invalid("f = \"alpha\" needs `alpha`"))?,
        },
        "ipm" => FDivKind::Ipm,
        other => return Err(Error::invalid(format!("unknown f-divergence {other:?}"))),
    };
    let nu = match nu_mode {
        Some("joint") => NuMode::Joint,
        Some("analytic") => NuMode::Analytic,
        Some("none") => NuMode::None,
        None => match kind {
            FDivKind::Ipm => NuMode::None,
            _ => NuMode::Joint,
        },
        Some(other) => return Err(Error::invalid(format!("unknown nu_mode {other:?}"))),
    };
    FDivSpec::new(kind, nu)
}

impl TransportToml {
    pub fn to_transport_config(&self) -> Result<TransportConfig> {
        let fdiv = parse_fdiv(&self.f, self.alpha, self.nu_mode.as_deref())?;
        let mut cfg = TransportConfig::new(self.l, fdiv);
        if let Some(dt) = self.dt {
            cfg.dt = dt;
        }
        cfg.n_max = self.n_max;
        cfg.m_max = self.m_max;
        cfg.integrator = match self.integrator.as_str() {
            "euler" => Integrator::Euler,
            "heun" => Integrator::Heun,
            other => return Err(Error::invalid(format!("unknown integrator {other:?}"))),
        };
        cfg.warm_start = self.warm_start;
        cfg.checkpoint_every = self.checkpoint_every;
        if let Some(ke) = self.stop_ke {
            cfg.stop_ke = ke;
        }
        cfg.seed = self.seed;
        cfg.deterministic = self.deterministic;
        cfg.net = NetConfig {
            widths: self.discriminator.widths.clone(),
            activation: match self.discriminator.activation.as_str() {
                "relu" => Activation::Relu,
                "smooth_relu" => Activation::SmoothRelu {
                    eps: self.discriminator.smooth_eps,
                },
                other => return Err(Error::invalid(format!("unknown activation {other:?}"))),
            },
        };
        cfg.adam = AdamConfig {
            learning_rate: self.discriminator.learning_rate,
            beta1: self.discriminator.beta1,
            beta2: self.discriminator.beta2,
            ..AdamConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentToml {
    pub dim: usize,
    #[serde(default = "default_eval_steps")]
    pub eval_inner_steps: usize,
}

fn default_eval_steps() -> usize {
    500
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsToml {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Write `snapshots/step_<n>.csv` every k-th step; 0 disables.
    #[serde(default)]
    pub snapshot_every: usize,
}

impl Default for OutputsToml {
    fn default() -> Self {
        OutputsToml {
            dir: None,
            snapshot_every: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalToml {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default = "default_eval_iters")]
    pub max_iters: usize,
    #[serde(default = "default_eval_tol")]
    pub tolerance: f64,
    #[serde(default = "default_true")]
    pub debiased: bool,
}

fn default_eval_iters() -> usize {
    5000
}

fn default_eval_tol() -> f64 {
    1e-9
}

impl EvalToml {
    pub fn to_sinkhorn_config(&self) -> lipflow::metrics::SinkhornConfig {
        lipflow::metrics::SinkhornConfig {
            epsilon: self.epsilon,
            max_iters: self.max_iters,
            tolerance: self.tolerance,
            debiased: self.debiased,
        }
    }
}

/// Grid for the stability-sweep harness; cells are the cartesian product of
/// `l`, `dt`, and the f-variants (alpha values expand `f = "alpha"`).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepToml {
    pub l: Vec<f64>,
    pub dt: Vec<f64>,
    pub f: Vec<String>,
    #[serde(default)]
    pub alpha: Vec<f64>,
}

pub fn load_config(path: &Path) -> Result<(ExperimentConfig, SideSpec, SideSpec)> {
    let text = std::fs::read_to_string(path)?;
    let cfg: ExperimentConfig =
        toml::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    let source = parse_side(&cfg.source, "source")?;
    let target = parse_side(&cfg.target, "target")?;
    Ok((cfg, source, target))
}
