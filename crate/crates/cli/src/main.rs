use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use intentrec::harness::{self, RunConfig};
use intentrec::recommender::Variant;
use intentrec::Error;

#[derive(Parser)]
#[command(name = "intentrec", version, about = "Latent intent recommender: simulate, train, analyze")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate users and write the dataset CSV.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `simulator.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on a dataset, writing checkpoints and metrics.csv.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the top-level `seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        variant: Option<Variant>,
        /// Continue from the latest checkpoint in `--out`.
        #[arg(long)]
        resume: bool,
    },
    /// Surprise report, intent probe and held-out log-likelihood.
    Analyze {
        /// Directory written by `train`.
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every parameter gradient.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, hide = true)]
        inject_fault: Option<f64>,
    },
}

fn load(path: Option<&Path>) -> intentrec::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> intentrec::Result<bool> {
    match cli.command {
        Command::Generate { config, out, seed } => {
            let mut c = load(config.as_deref())?;
            if let Some(s) = seed {
                c.simulator.seed = s;
            }
            let rows = harness::cmd_generate(&c, &out)?;
            println!("wrote {rows} rows to {}", out.display());
        }
        Command::Train { config, data, out, seed, variant, resume } => {
            let mut c = load(config.as_deref())?;
            if let Some(s) = seed {
                c.seed = s;
            }
            if let Some(v) = variant {
                c.variant = v;
            }
            let summary = harness::cmd_train(&c, &data, &out, resume)?;
            if let Some(last) = summary.metrics.last() {
                println!(
                    "step {}: total {:.6} rec {:.6} kl {:.6}; {} checkpoints in {}",
                    last.step,
                    last.total_loss,
                    last.rec_loss,
                    last.kl,
                    summary.checkpoints.len(),
                    out.display()
                );
            }
        }
        Command::Analyze { checkpoints, data, out } => {
            let s = harness::cmd_analyze(&checkpoints, &data, &out)?;
            for row in s.surprise.iter().filter(|r| r.training_step == s.final_step) {
                let mean = row.mean_kl.map_or("-".to_string(), |m| format!("{m:.6}"));
                println!("{:>16}  mean_kl {mean}  n {}", row.cohort, row.count);
            }
            for p in &s.probes {
                println!(
                    "probe {:>14}: accuracy {:.4} baseline {:.4}",
                    p.features, p.result.accuracy, p.result.baseline
                );
            }
            println!("held-out next-item log-likelihood {:.6}", s.log_likelihood);
        }
        Command::Gradcheck { config, seed, inject_fault } => {
            let mut c = load(config.as_deref())?;
            if let Some(s) = seed {
                c.seed = s;
            }
            let s = harness::cmd_gradcheck(&c, inject_fault)?;
            for t in &s.tensors {
                println!(
                    "{:<40} {:>6} {:.3e}  (analytic {:+.6e}, numeric {:+.6e})",
                    t.name, t.elements, t.max_relative_error, t.worst.0, t.worst.1
                );
            }
            let verdict = if s.passed() { "PASS" } else { "FAIL" };
            println!(
                "{verdict}: max relative error {:.3e} (tolerance {:.0e})",
                s.max_relative_error,
                harness::GRADCHECK_TOLERANCE
            );
            return Ok(s.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
