use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mvp_cli::commands::{self, PlotKind};
use mvp_cli::rundir::default_root;
use mvp_cli::{CliError, CliResult, RunConfig};

/// One-step mean velocity policies: density fitting, offline-to-online
/// training, theory probes and gradient checks.
#[derive(Parser, Debug)]
#[command(name = "mvp", version)]
struct Cli {
    /// TOML file with any subset of the configuration keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set lambda=0.5`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit mean-flow and flow-matching models to a toy density.
    Fit2d {
        /// dirac, gaussian, gmm2 or checkerboard.
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Offline pre-training followed by online fine-tuning.
    Train {
        /// bandit or reach.
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        offline_steps: Option<usize>,
        #[arg(long)]
        online_steps: Option<usize>,
        /// Offline dataset file written by `make-dataset`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Generate the offline dataset inside the run directory.
        #[arg(long)]
        make_dataset: bool,
    },
    /// Evaluate the checkpoints of a training run.
    Eval {
        run: PathBuf,
        /// Checkpoint directory inside the run: offline or final.
        #[arg(long, default_value = "final")]
        checkpoint: String,
    },
    /// Best-of-N gain, multiplicity and boundary probes.
    Theory,
    /// Finite-difference and cross-mode derivative checks.
    Gradcheck {
        #[arg(long)]
        configs: Option<usize>,
        /// Scales the GELU derivative; negative-control fixture.
        #[arg(long, hide = true)]
        fault_gelu_derivative: Option<f64>,
    },
    /// Learning-curve SVG from one or more runs.
    Plot {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "return")]
        kind: PlotKind,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the scripted offline dataset as JSONL.
    MakeDataset {
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn push<T: ToString>(sets: &mut Vec<String>, key: &str, value: &Option<T>) {
    if let Some(v) = value {
        sets.push(format!("{key}={}", toml_literal(&v.to_string())));
    }
}

fn toml_literal(v: &str) -> String {
    if v.parse::<f64>().is_ok() || v == "true" || v == "false" {
        v.to_string()
    } else {
        toml::Value::String(v.to_string()).to_string()
    }
}

fn load_config(cli: &Cli, fallback: Option<&Path>) -> CliResult<RunConfig> {
    let base = match (&cli.config, fallback) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(p)) if p.exists() => RunConfig::load(p)?,
        _ => RunConfig::default(),
    };
    let mut sets = cli.sets.clone();
    push(&mut sets, "seed", &cli.seed);
    match &cli.command {
        Command::Fit2d {
            target,
            steps,
            lambda,
        } => {
            push(&mut sets, "target", target);
            push(&mut sets, "fit_steps", steps);
            push(&mut sets, "lambda", lambda);
        }
        Command::Train {
            env,
            offline_steps,
            online_steps,
            dataset,
            ..
        } => {
            push(&mut sets, "env", env);
            push(&mut sets, "offline_steps", offline_steps);
            push(&mut sets, "online_steps", online_steps);
            push(
                &mut sets,
                "dataset",
                &dataset.as_ref().map(|p| p.display().to_string()),
            );
        }
        Command::Gradcheck { configs, .. } => push(&mut sets, "gradcheck_configs", configs),
        Command::MakeDataset { env, .. } => push(&mut sets, "env", env),
        _ => {}
    }
    base.with_overrides(&sets)
}

fn run(cli: &Cli) -> CliResult<()> {
    let root = default_root();
    match &cli.command {
        Command::Fit2d { .. } => {
            let (dir, report) = commands::fit2d(&load_config(cli, None)?, &root)?;
            for m in &report.models {
                let lambda = m.lambda.map_or(String::new(), |l| format!(" λ={l}"));
                println!(
                    "{}{lambda}: energy distance {:.5}, mean error {:?}",
                    m.model, m.distance.energy_distance, m.distance.mean_error
                );
                if let Some(mse) = m.oracle_mse {
                    println!(
                        "  oracle mse {mse:.3e}, boundary error {:.3e}",
                        m.boundary_error.unwrap_or(f64::NAN)
                    );
                }
            }
            println!("{}", dir.path().display());
        }
        Command::Train { make_dataset, .. } => {
            let (dir, summary) = commands::train(&load_config(cli, None)?, &root, *make_dataset)?;
            if let Some(e) = summary.final_eval {
                println!(
                    "final evaluation: success {:.3}, return {:.4}",
                    e.success_rate, e.mean_return
                );
            }
            println!("{}", dir.path().display());
        }
        Command::Eval { run, checkpoint } => {
            let cfg = load_config(cli, Some(&run.join("config.toml")))?;
            let (dir, s) = commands::eval(&cfg, run, checkpoint, &root)?;
            println!(
                "success {:.3}, return {:.4}, latency {:.1} µs (Euler T={}: {:.1} µs, speedup {:.2}x)",
                s.one_step.success_rate, s.one_step.mean_return, s.one_step.latency_us, cfg.euler_steps, s.euler_latency_us, s.speedup
            );
            println!("{}", dir.path().display());
        }
        Command::Theory => {
            let (dir, summary) = commands::theory(&load_config(cli, None)?, &root)?;
            for (probe, pass) in &summary.probes {
                println!("{probe}: {}", if *pass { "pass" } else { "FAIL" });
            }
            println!("{}", dir.path().display());
            summary.into_result()?;
        }
        Command::Gradcheck {
            fault_gelu_derivative,
            ..
        } => {
            let cfg = load_config(cli, None)?;
            if let Some(scale) = fault_gelu_derivative {
                mvp_core::autodiff::kernels::set_gelu_derivative_fault(*scale);
            }
            let report = commands::gradcheck(&cfg)?;
            for e in &report.entries {
                println!(
                    "{:<36} max rel err {:.3e} (tolerance {:.0e}, {} configs) {}",
                    e.component,
                    e.max_rel_err,
                    e.tolerance,
                    e.configs,
                    if e.pass() { "ok" } else { "FAIL" }
                );
            }
            if !report.pass() {
                return Err(CliError::Failed("gradient check failed".into()));
            }
        }
        Command::Plot { runs, kind, out } => {
            let path = commands::plot(runs, *kind, out.as_deref())?;
            println!("{}", path.display());
        }
        Command::MakeDataset { out, .. } => {
            let path = commands::make_dataset(&load_config(cli, None)?, out.as_deref(), &root)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
