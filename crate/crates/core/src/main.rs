use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use xferbench::ledger::RunLedger;
use xferbench::manifest::Manifest;
use xferbench::plan::summarize;
use xferbench::report::{analyze, render_svgs, write_csvs, AnalyzeOptions};
use xferbench::study::{generate_cohorts, run_study, StudyConfig};
use xferbench::transferscore::{EigenMethod, DEFAULT_ALPHA, SENSITIVITY_ALPHAS};

#[derive(Parser)]
#[command(name = "xferbench", version, about = "Transfer benchmark for single-channel sleep stage scorers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic cohort of every channel in a manifest.
    Gen {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run or resume the FS/DT/FT study, appending to a ledger.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long, default_value_t = 3)]
        repeats: u32,
        /// Worker threads (0 = one per core).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Stop after writing this many records.
        #[arg(long)]
        max_records: Option<usize>,
    },
    /// Compute impact, pairwise, transferability and generalization tables.
    Analyze {
        #[arg(long)]
        ledger: PathBuf,
        /// Dead band in percent.
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
        /// Use power iteration instead of the column-average approximation.
        #[arg(long)]
        exact: bool,
        /// Also write W for alpha = 0.5, 1 and 2.
        #[arg(long)]
        sensitivity: bool,
    },
    /// Render SVG figures for the CSV tables in a directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Print source, target and pair counts for a manifest.
    VerifyPlan {
        #[arg(long)]
        manifest: PathBuf,
    },
}

type AnyError = Box<dyn std::error::Error>;

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), AnyError> {
    match cli.command {
        Command::Gen { manifest, out } => {
            let m = Manifest::load(&manifest)?;
            let ids = generate_cohorts(&m, &out)?;
            println!("wrote {} cohorts to {}", ids.len(), out.display());
        }
        Command::Run { manifest, ledger, repeats, jobs, seed, max_records } => {
            let mut cfg = StudyConfig::new(Manifest::load(&manifest)?, ledger);
            cfg.repeats = repeats;
            cfg.jobs = jobs;
            cfg.seed = seed;
            cfg.record_limit = max_records;
            let out = run_study(&cfg)?;
            println!(
                "pretrained {} models, wrote {} records, {} remaining",
                out.pretrained, out.written, out.remaining
            );
        }
        Command::Analyze { ledger, alpha, out, exact, sensitivity } => {
            if !(alpha.is_finite() && alpha >= 0.0) {
                return Err(format!("alpha must be a finite non-negative number, got {alpha}").into());
            }
            let l = RunLedger::read(&ledger)?;
            let opts = AnalyzeOptions {
                alpha,
                method: if exact { EigenMethod::PowerIteration } else { EigenMethod::ColumnAverage },
                sensitivity: if sensitivity { SENSITIVITY_ALPHAS.to_vec() } else { Vec::new() },
            };
            let a = analyze(&l, &opts)?;
            let files = write_csvs(&a, &out)?;
            for row in &a.impact.rows {
                match row.r {
                    Some(r) => println!("{:<62} n={:<3} r={r:.2}%", row.group.to_string(), row.n_pairs),
                    None => println!("{:<62} n=0   (empty)", row.group.to_string()),
                }
            }
            println!("wrote {} tables to {}", files.len(), out.display());
        }
        Command::Report { out } => {
            let files = render_svgs(&out)?;
            println!("wrote {} figures to {}", files.len(), out.display());
        }
        Command::VerifyPlan { manifest } => {
            let m = Manifest::load(&manifest)?;
            print!("{}", summarize(&m.universe(), m.pairing_rule())?);
        }
    }
    Ok(())
}
