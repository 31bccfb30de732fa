//! Command-line front end: `run`, `correlations`, and `noise-check`.
//!
//! File outputs use the configured `output_path` as a stem:
//! `<stem>.csv` (results), `<stem>.meta.json` (resolved config + run
//! metadata), `<stem>.ckpt` (binary checkpoint, when enabled).

use std::io::Write as _;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{parse_config, RunConfig};
use crate::correlation::KernelTable;
use crate::ensemble::{
    run_ensemble_with, ObservableKind, ObservableRequest, RunOptions, RunOutcome,
};
use crate::error::{Result, ScleError};
use crate::noise::{build_noise_plan_with, even_probes, empirical_correlations_streaming};

#[derive(Parser)]
#[command(name = "scle", about = "Stochastic trajectory ensembles for open quantum systems")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a trajectory ensemble and write results CSV + metadata JSON.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads; the result is identical for any value.
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides the config's master_seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Dump the tabulated bath correlation kernels as CSV on stdout.
    Correlations {
        #[arg(long)]
        config: PathBuf,
    },
    /// Statistically verify the synthesized noise against all five target
    /// kernels; CSV on stdout, summary on stderr, nonzero exit on failure.
    NoiseCheck {
        #[arg(long)]
        config: PathBuf,
        /// Number of noise realizations.
        #[arg(long)]
        samples: u64,
        /// Probe points per axis on the half-step grid.
        #[arg(long, default_value_t = 16)]
        probes: usize,
    },
}

pub fn main_with_args<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)
        .map_err(|e| ScleError::Usage(e.to_string()))?;
    match cli.command {
        Command::Run { config, workers, seed } => cmd_run(&config, workers, seed),
        Command::Correlations { config } => cmd_correlations(&config),
        Command::NoiseCheck { config, samples, probes } => {
            cmd_noise_check(&config, samples, probes)
        }
    }
}

fn load_config(path: &PathBuf) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ScleError::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

fn requests_for(
    model: &crate::dynamics::OperatorBasisModel,
    names: &[String],
) -> Result<Vec<ObservableRequest>> {
    names
        .iter()
        .map(|name| match name.as_str() {
            "coupling_energy" => Ok(ObservableRequest::coupling_energy(model)),
            "bath_displacement" => Ok(ObservableRequest::bath_displacement(model)),
            "identity" => Ok(ObservableRequest::system("identity", model.identity_coeffs.clone())),
            other => model
                .observable(other)
                .map(|c| ObservableRequest::system(other, c.clone()))
                .ok_or_else(|| {
                    ScleError::Config(format!(
                        "model '{}' has no observable named '{other}'",
                        model.name
                    ))
                }),
        })
        .collect()
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn cmd_run(config_path: &PathBuf, workers: Option<usize>, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(config_path)?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    let model = cfg.build_model()?;
    let requests = requests_for(&model, &cfg.observables)?;
    let kernels = KernelTable::build(&cfg.spec, cfg.beta, &cfg.grid)?;
    let mut plan = build_noise_plan_with(&kernels, cfg.chi_construction.into())?;
    if requests.iter().all(|r| r.kind == ObservableKind::System) {
        plan = plan.without_bath_channel();
    }

    let ckpt_path = PathBuf::from(format!("{}.ckpt", cfg.output_path));
    let options = RunOptions {
        checkpoint_path: cfg.checkpoint_every.map(|_| ckpt_path.clone()),
        checkpoint_every: cfg.checkpoint_every,
        resume_from: cfg.checkpoint_every.and_then(|_| ckpt_path.exists().then(|| ckpt_path.clone())),
        stop_after: None,
        fingerprint: cfg.fingerprint(),
    };

    let run = || {
        run_ensemble_with(&model, &plan, cfg.trajectories, cfg.master_seed, &requests, &options)
    };
    let outcome = match workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| ScleError::Run(format!("thread pool: {e}")))?;
            pool.install(run)?
        }
        None => run()?,
    };
    let result = match outcome {
        RunOutcome::Complete(r) => r,
        RunOutcome::Interrupted { .. } => unreachable!("no stop requested"),
    };

    // Results CSV.
    let csv_path = format!("{}.csv", cfg.output_path);
    let mut csv = String::from("t");
    for req in &requests {
        csv.push_str(&format!(",Re_{0},Im_{0},stderr_{0}", req.name));
    }
    csv.push('\n');
    for (k, &t) in result.times.iter().enumerate() {
        csv.push_str(&fmt(t));
        for series in &result.observables {
            csv.push(',');
            csv.push_str(&fmt(series.mean[k].re));
            csv.push(',');
            csv.push_str(&fmt(series.mean[k].im));
            csv.push(',');
            csv.push_str(&fmt(series.stderr[k]));
        }
        csv.push('\n');
    }
    std::fs::write(&csv_path, csv)?;

    // Self-describing metadata.
    let meta = serde_json::json!({
        "config": cfg.resolved_json(),
        "trajectories_accumulated": result.n_trajectories,
        "trajectories_rejected": result.rejected,
        "master_seed": result.master_seed,
        "results_csv": csv_path,
    });
    let meta_path = format!("{}.meta.json", cfg.output_path);
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)? + "\n")?;

    // Completed runs leave no stale checkpoint behind.
    if ckpt_path.exists() {
        let _ = std::fs::remove_file(&ckpt_path);
    }
    eprintln!(
        "wrote {csv_path} and {meta_path} ({} trajectories, {} rejected)",
        result.n_trajectories, result.rejected
    );
    Ok(())
}

pub fn cmd_correlations(config_path: &PathBuf) -> Result<()> {
    let cfg = load_config(config_path)?;
    let kernels = KernelTable::build(&cfg.spec, cfg.beta, &cfg.grid)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    writeln!(
        out,
        "t,Re_alpha,Im_alpha,Re_alphaT,Im_alphaT,Re_alphaTilde,Im_alphaTilde"
    )?;
    for j in 0..cfg.grid.n_half_points() {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt(cfg.grid.lag(j)),
            fmt(kernels.alpha[j].re),
            fmt(kernels.alpha[j].im),
            fmt(kernels.alpha_t[j].re),
            fmt(kernels.alpha_t[j].im),
            fmt(kernels.alpha_tilde[j].re),
            fmt(kernels.alpha_tilde[j].im),
        )?;
    }
    Ok(())
}

pub fn cmd_noise_check(config_path: &PathBuf, samples: u64, probes: usize) -> Result<()> {
    let cfg = load_config(config_path)?;
    let kernels = KernelTable::build(&cfg.spec, cfg.beta, &cfg.grid)?;
    let plan = build_noise_plan_with(&kernels, cfg.chi_construction.into())?;
    let probe_idx = even_probes(&plan, probes);
    let estimates =
        empirical_correlations_streaming(&plan, cfg.master_seed, samples, &probe_idx)?;

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    writeln!(
        out,
        "kernel,tau,target_re,target_im,estimate_re,estimate_im,stderr,z"
    )?;
    let p = probe_idx.len();
    let mut all_pass = true;
    for est in &estimates {
        for i in 0..p {
            for j in 0..p {
                let idx = i * p + j;
                let tau = cfg.grid.lag(probe_idx[i]) - cfg.grid.lag(probe_idx[j]);
                let dev = (est.estimate[idx] - est.target[idx]).norm();
                let z = if est.stderr[idx] > 0.0 { dev / est.stderr[idx] } else { 0.0 };
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    est.pair.name(),
                    fmt(tau),
                    fmt(est.target[idx].re),
                    fmt(est.target[idx].im),
                    fmt(est.estimate[idx].re),
                    fmt(est.estimate[idx].im),
                    fmt(est.stderr[idx]),
                    fmt(z),
                )?;
            }
        }
        let ok = est.passes(5.0);
        all_pass &= ok;
        eprintln!(
            "{:<12} max |z| = {:>8.3}  {}",
            est.pair.name(),
            est.max_z(),
            if ok { "pass" } else { "FAIL" }
        );
    }
    if all_pass {
        eprintln!("noise-check: all 5 kernels within 5 sigma ({samples} samples)");
        Ok(())
    } else {
        Err(ScleError::Run(
            "noise-check: at least one kernel outside the 5 sigma band".into(),
        ))
    }
}
