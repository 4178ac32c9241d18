//! `lipflow`: configuration-driven particle-transport experiments.
//!
//! Subcommands: `run`, `datagen`, `eval`, `replay`, `sweep`. Exit codes:
//! 0 clean, 1 usage/configuration error, 2 run terminated "diverged"
//! (partial artifacts are still written).

mod config;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use config::{load_config, parse_fdiv, ExperimentConfig, SideSpec};
use lipflow::datasets::{save_csv, sierpinski_targets, swiss_roll, Square};
use lipflow::latent::{latent_gpa, LatentGpaOptions, LatentGpaRun};
use lipflow::metrics::{exact_w1_small, sinkhorn_w2, SinkhornConfig};
use lipflow::transport::{
    gpa_run_observed, replay, CheckpointRing, GpaRun, Termination, TrajectoryLog,
};
use lipflow::{Error, Exec, ParticleSet, Result, Role};

#[derive(Parser)]
#[command(
    name = "lipflow",
    about = "Particle transport along Lipschitz-regularized divergence flows",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run(RunArgs),
    /// Generate a synthetic dataset as CSV.
    Datagen {
        #[command(subcommand)]
        what: DatagenCommand,
    },
    /// Compare two particle CSVs (Sinkhorn W2 proxy, exact W1 when feasible).
    Eval(EvalArgs),
    /// Transport fresh source particles through recorded vector fields.
    Replay(ReplayArgs),
    /// Run a (L, dt, f, alpha) grid and tabulate stability per cell.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the transport seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Force single-threaded, bit-reproducible execution.
    #[arg(long)]
    deterministic: bool,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the latent dimension (enables the latent pipeline).
    #[arg(long)]
    latent_dim: Option<usize>,
}

#[derive(Subcommand)]
enum DatagenCommand {
    /// Level-k carpet targets: exactly 8^k particles, one per retained cell.
    Sierpinski {
        #[arg(long)]
        level: u32,
        /// Bounding square as `origin,side` (e.g. `0,10`).
        #[arg(long, default_value = "0,10", value_parser = parse_square)]
        bbox: Square,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// 2D spiral samples, uniform in the arc parameter.
    SwissRoll {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample the `[source]` or `[target]` table of a config file.
    FromConfig {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = ["source", "target"])]
        side: String,
        /// Override the sample count.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct EvalArgs {
    /// First CSV (e.g. transported particles).
    #[arg(long)]
    a: PathBuf,
    /// Second CSV (e.g. target particles).
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Directory of recorded per-step discriminators (`ckpt/`).
    #[arg(long)]
    ckpt_dir: PathBuf,
    /// Config whose `[source]` table and `[transport]` settings produced
    /// the recording.
    #[arg(long)]
    config: PathBuf,
    /// Number of fresh source particles to transport.
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output CSV, one row per grid cell.
    #[arg(long)]
    out: PathBuf,
    /// Base seed; cell k runs with seed base + k.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    deterministic: bool,
}

fn parse_square(s: &str) -> std::result::Result<Square, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err("expected `origin,side`".into());
    }
    let origin: f64 = parts[0].trim().parse().map_err(|e| format!("{e}"))?;
    let side: f64 = parts[1].trim().parse().map_err(|e| format!("{e}"))?;
    if side <= 0.0 {
        return Err("side must be > 0".into());
    }
    Ok(Square {
        origin: [origin, origin],
        side,
    })
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("LIPFLOW_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Datagen { what } => cmd_datagen(what).map(|()| ExitCode::SUCCESS),
        Command::Eval(args) => cmd_eval(args).map(|()| ExitCode::SUCCESS),
        Command::Replay(args) => cmd_replay(args).map(|()| ExitCode::SUCCESS),
        Command::Sweep(args) => cmd_sweep(args).map(|()| ExitCode::SUCCESS),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct LatentSummary {
    dim: usize,
    ambient_estimate: f64,
    latent_estimate: f64,
    target_reconstruction_error: f64,
    inequality_checked: bool,
    explained_variance_ratio: f64,
}

#[derive(Serialize)]
struct Summary {
    final_div: Option<f64>,
    final_ke: Option<f64>,
    termination: String,
    steps: usize,
    wall_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_sinkhorn_w2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    latent: Option<LatentSummary>,
}

fn write_run_artifacts(
    out_dir: &Path,
    log: &TrajectoryLog,
    particles: &ParticleSet,
    checkpoints: &CheckpointRing,
    sinkhorn: Option<f64>,
    latent: Option<LatentSummary>,
    wall_time_s: f64,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut jsonl = std::fs::File::create(out_dir.join("trajectory.jsonl"))?;
    log.write_jsonl(&mut jsonl)?;
    save_csv(particles.view(), &out_dir.join("final_particles.csv"))?;
    if !checkpoints.is_empty() {
        checkpoints.save_to_dir(&out_dir.join("ckpt"))?;
    }
    let last = log.records.last();
    let summary = Summary {
        final_div: last.map(|r| r.div),
        final_ke: last.map(|r| r.ke),
        termination: log.termination.as_str().to_string(),
        steps: log.records.len(),
        wall_time_s,
        final_sinkhorn_w2: sinkhorn,
        latent,
    };
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let (cfg, source_spec, target_spec) = load_config(&args.config)?;
    let base = args
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));

    let mut transport = cfg.transport.to_transport_config()?;
    if let Some(seed) = args.seed {
        transport.seed = seed;
    }
    if args.deterministic {
        transport.deterministic = true;
    }

    let out_dir = args
        .out
        .clone()
        .or_else(|| cfg.outputs.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir)?;

    let seed = transport.seed;
    let source = source_spec.realize(&base, Role::Source, seed)?;
    let target = target_spec.realize(&base, Role::Target, seed.wrapping_add(1))?;

    let latent_dim = args.latent_dim.or(cfg.latent.as_ref().map(|l| l.dim));
    let started = std::time::Instant::now();

    let (log, particles, checkpoints, latent_summary) = if let Some(dim) = latent_dim {
        let opts = LatentGpaOptions {
            eval_inner_steps: cfg
                .latent
                .as_ref()
                .map(|l| l.eval_inner_steps)
                .unwrap_or(500),
        };
        let LatentGpaRun {
            decoded,
            latent_log,
            latent_checkpoints,
            map,
            dpi,
        } = latent_gpa(&source, &target, dim, &transport, &opts)?;
        let summary = LatentSummary {
            dim,
            ambient_estimate: dpi.ambient_estimate,
            latent_estimate: dpi.latent_estimate,
            target_reconstruction_error: dpi.target_reconstruction_error,
            inequality_checked: dpi.inequality_checked,
            explained_variance_ratio: lipflow::latent::explained_variance_ratio(&map),
        };
        std::fs::write(out_dir.join("latent_map.json"), map.to_json()?)?;
        (latent_log, decoded, latent_checkpoints, Some(summary))
    } else {
        let snapshot_every = cfg.outputs.snapshot_every;
        let snap_dir = out_dir.join("snapshots");
        if snapshot_every > 0 {
            std::fs::create_dir_all(&snap_dir)?;
        }
        let mut snapshot_err = None;
        let GpaRun {
            particles,
            log,
            checkpoints,
        } = gpa_run_observed(&source, &target, &transport, |step, positions| {
            if snapshot_every > 0 && step % snapshot_every == 0 && snapshot_err.is_none() {
                if let Err(e) = save_csv(positions, &snap_dir.join(format!("step_{step}.csv"))) {
                    snapshot_err = Some(e);
                }
            }
        })?;
        if let Some(e) = snapshot_err {
            return Err(e);
        }
        (log, particles, checkpoints, None)
    };
    let wall_time_s = started.elapsed().as_secs_f64();

    // optional evaluation of the final cloud against the target
    let sinkhorn = match &cfg.eval {
        Some(eval) if eval.enabled && log.termination != Termination::Diverged => {
            let r = sinkhorn_w2(
                particles.view(),
                target.view(),
                &eval.to_sinkhorn_config(),
                Exec::from_deterministic(transport.deterministic),
            )?;
            Some(r.value)
        }
        _ => None,
    };

    write_run_artifacts(
        &out_dir,
        &log,
        &particles,
        &checkpoints,
        sinkhorn,
        latent_summary,
        wall_time_s,
    )?;

    println!(
        "{}: {} steps, termination {}, artifacts in {}",
        args.config.display(),
        log.records.len(),
        log.termination.as_str(),
        out_dir.display()
    );
    if log.termination == Termination::Diverged {
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// datagen / eval / replay / sweep
// ---------------------------------------------------------------------------

fn cmd_datagen(what: DatagenCommand) -> Result<()> {
    match what {
        DatagenCommand::Sierpinski {
            level,
            bbox,
            seed,
            out,
        } => {
            let ps = sierpinski_targets(level, &bbox, seed)?;
            save_csv(ps.view(), &out)?;
            println!("wrote {} particles to {}", ps.len(), out.display());
        }
        DatagenCommand::SwissRoll { n, noise, seed, out } => {
            let ps = swiss_roll(n, noise, seed)?;
            save_csv(ps.view(), &out)?;
            println!("wrote {} particles to {}", ps.len(), out.display());
        }
        DatagenCommand::FromConfig {
            config,
            side,
            n,
            seed,
            out,
        } => {
            let (_, source_spec, target_spec) = load_config(&config)?;
            let base = config
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from("."));
            let chosen = if side == "source" { source_spec } else { target_spec };
            let chosen = override_count(chosen, n);
            let ps = chosen.realize(&base, Role::Source, seed.unwrap_or(0))?;
            save_csv(ps.view(), &out)?;
            println!("wrote {} particles to {}", ps.len(), out.display());
        }
    }
    Ok(())
}

fn override_count(spec: SideSpec, n: Option<usize>) -> SideSpec {
    match (spec, n) {
        (SideSpec::Dist { spec, seed, .. }, Some(n)) => SideSpec::Dist { spec, n, seed },
        (other, _) => other,
    }
}

#[derive(Serialize)]
struct EvalReport {
    sinkhorn_w2: f64,
    converged: bool,
    iterations: usize,
    epsilon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    exact_w1: Option<f64>,
    a_count: usize,
    b_count: usize,
    dim: usize,
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let a = lipflow::datasets::load_csv(&args.a, true)?;
    let b = lipflow::datasets::load_csv(&args.b, true)?;
    let cfg = SinkhornConfig {
        epsilon: args.epsilon,
        ..SinkhornConfig::default()
    };
    let r = sinkhorn_w2(a.view(), b.view(), &cfg, Exec::Par)?;
    let exact_w1 = if a.len() == b.len() && a.len() <= 256 {
        Some(exact_w1_small(a.view(), b.view())?)
    } else {
        None
    };
    let report = EvalReport {
        sinkhorn_w2: r.value,
        converged: r.converged,
        iterations: r.iterations,
        epsilon: r.epsilon,
        exact_w1,
        a_count: a.len(),
        b_count: b.len(),
        dim: a.dim(),
    };
    let json = serde_json::to_string_pretty(&report)?;
    match args.out {
        Some(path) => std::fs::write(path, json)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> Result<()> {
    let (cfg, source_spec, _) = load_config(&args.config)?;
    let base = args
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let transport = cfg.transport.to_transport_config()?;

    if args.n == 0 {
        // header-only CSV with the source dimensionality
        let probe = source_spec.realize(&base, Role::Source, 0)?;
        let empty = ndarray::Array2::<f64>::zeros((0, probe.dim()));
        save_csv(empty.view(), &args.out)?;
        println!("wrote 0 particles to {}", args.out.display());
        return Ok(());
    }

    let seed = args.seed.unwrap_or(transport.seed.wrapping_add(0x5eed));
    let fresh = match override_count(source_spec, Some(args.n)) {
        spec @ SideSpec::Dist { .. } => spec.realize(&base, Role::Source, seed)?,
        SideSpec::Csv { .. } => {
            return Err(Error::invalid(
                "replay needs a synthetic [source] to draw fresh particles from",
            ))
        }
    };
    let ring = CheckpointRing::load_from_dir(&args.ckpt_dir)?;
    let generated = replay(&ring, &fresh, &transport)?;
    save_csv(generated.view(), &args.out)?;
    println!(
        "replayed {} fields on {} particles -> {}",
        ring.len(),
        generated.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    use rayon::prelude::*;

    let (cfg, source_spec, target_spec) = load_config(&args.config)?;
    let sweep = cfg
        .sweep
        .clone()
        .ok_or_else(|| Error::invalid("config has no [sweep] section"))?;
    let base = args
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));

    let base_seed = args.seed.unwrap_or(cfg.transport.seed);
    let source = source_spec.realize(&base, Role::Source, base_seed)?;
    let target = target_spec.realize(&base, Role::Target, base_seed.wrapping_add(1))?;

    // expand the grid
    let mut variants: Vec<(String, Option<f64>)> = Vec::new();
    for f in &sweep.f {
        if f == "alpha" {
            for &a in &sweep.alpha {
                variants.push(("alpha".into(), Some(a)));
            }
        } else {
            variants.push((f.clone(), None));
        }
    }
    let mut cells = Vec::new();
    for &l in &sweep.l {
        for &dt in &sweep.dt {
            for (f, alpha) in &variants {
                cells.push((l, dt, f.clone(), *alpha));
            }
        }
    }

    struct Row {
        l: f64,
        dt: f64,
        f: String,
        alpha: Option<f64>,
        termination: &'static str,
        steps: usize,
        final_div: Option<f64>,
        final_ke: Option<f64>,
    }

    let rows: Vec<Result<Row>> = cells
        .par_iter()
        .enumerate()
        .map(|(k, (l, dt, f, alpha))| {
            let mut transport = cfg.transport.to_transport_config()?;
            transport.lipschitz_bound = *l;
            transport.dt = *dt;
            transport.fdiv = parse_fdiv(f, *alpha, None)?;
            transport.seed = base_seed.wrapping_add(k as u64);
            transport.checkpoint_every = 0;
            let run = lipflow::transport::gpa_run(&source, &target, &transport)?;
            let last = run.log.records.last();
            Ok(Row {
                l: *l,
                dt: *dt,
                f: f.clone(),
                alpha: *alpha,
                termination: run.log.termination.as_str(),
                steps: run.log.records.len(),
                final_div: last.map(|r| r.div),
                final_ke: last.map(|r| r.ke),
            })
        })
        .collect();

    let mut out = String::from("l,dt,f,alpha,termination,steps,final_div,final_ke\n");
    for row in rows {
        let row = row?;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.l,
            row.dt,
            row.f,
            row.alpha.map_or(String::new(), |a| a.to_string()),
            row.termination,
            row.steps,
            row.final_div.map_or(String::new(), |v| v.to_string()),
            row.final_ke.map_or(String::new(), |v| v.to_string()),
        ));
    }
    std::fs::write(&args.out, out)?;
    println!("wrote {} sweep rows to {}", cells.len(), args.out.display());
    Ok(())
}
