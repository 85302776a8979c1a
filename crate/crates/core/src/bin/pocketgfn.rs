use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pocketgfn::app::{cmd_evaluate, cmd_sample, cmd_selfcheck, cmd_train, Overrides, RunConfig, SelfcheckOptions};
use pocketgfn::error::{EXIT_CONFIG, EXIT_PARTIAL, EXIT_RUNTIME};
use pocketgfn::policy::ConditioningMode;
use pocketgfn::reward::{EvaluationReport, RewardWeights};
use pocketgfn::{Error, Result};

#[derive(Parser)]
#[command(name = "pocketgfn", version, about = "Pocket-conditioned fragment GFlowNet")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Conditioning mode: baseline or trioformer.
    #[arg(long)]
    mode: Option<ConditioningMode>,
    /// Reward weights as `w_ds,w_qed,w_sa`.
    #[arg(long)]
    weights: Option<RewardWeights>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write checkpoint.json and metrics.jsonl.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Sample unique molecules per pocket from a checkpoint.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Unique molecules per pocket; defaults to the config value.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Score molecule files, one per sampling set, and print mean ± SE.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, num_args = 1.., required = true)]
        molecules: Vec<PathBuf>,
    },
    /// Run the built-in verification suites.
    Selfcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1500)]
        steps: usize,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
}

fn load(common: &Common, steps: Option<usize>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    cfg.apply(&Overrides {
        seed: common.seed,
        steps,
        mode: common.mode,
        weights: common.weights,
    });
    Ok(cfg)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Train { common, steps } => {
            let cfg = load(&common, steps)?;
            let out_dir = common.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
            let every = (cfg.trainer.steps / 20).max(1);
            let outcome = cmd_train(&cfg, &out_dir, |m| {
                if (m.step + 1) % every == 0 {
                    eprintln!(
                        "step {:>6}  loss {:>10.4}  reward {:.4}  log_Z {:.3}",
                        m.step + 1,
                        m.loss,
                        m.mean_reward,
                        m.log_z_mean
                    );
                }
            })?;
            println!("checkpoint: {}", outcome.checkpoint.display());
            println!("metrics: {}", outcome.metrics_log.display());
            Ok(0)
        }
        Command::Sample { common, checkpoint, n } => {
            let cfg = load(&common, None)?;
            let out = common.out.clone().unwrap_or_else(|| cfg.out_dir.join("molecules.jsonl"));
            let n = n.unwrap_or(cfg.evaluation.molecules_per_pocket);
            let seed = cfg.trainer.seed;
            let outcome = cmd_sample(&cfg, &checkpoint, n, seed, common.mode, &out)?;
            println!("{} molecules written to {}", outcome.records.len(), out.display());
            for (pocket, found) in &outcome.shortfalls {
                eprintln!("warning: pocket {pocket}: only {found} of {n} unique molecules found");
            }
            Ok(if outcome.is_partial() { EXIT_PARTIAL as u8 } else { 0 })
        }
        Command::Evaluate { common, molecules } => {
            let cfg = load(&common, None)?;
            let report = cmd_evaluate(&cfg, &molecules)?;
            println!("{}", EvaluationReport::table_header());
            println!("{}", report.table_row(&cfg.model.mode.to_string()));
            if let Some(out) = &common.out {
                let text = serde_json::to_string_pretty(&report)?;
                std::fs::write(out, text + "\n").map_err(|e| Error::io(out, e))?;
            }
            Ok(0)
        }
        Command::Selfcheck { seed, steps, samples } => {
            let opts = SelfcheckOptions {
                seed,
                train_steps: steps,
                samples,
            };
            let results = cmd_selfcheck(&opts, |r| {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            });
            let failed = results.iter().filter(|r| !r.passed).count();
            println!("{} of {} suites passed", results.len() - failed, results.len());
            Ok(if failed == 0 { 0 } else { EXIT_RUNTIME as u8 })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code().clamp(EXIT_RUNTIME, EXIT_CONFIG) as u8)
        }
    }
}
