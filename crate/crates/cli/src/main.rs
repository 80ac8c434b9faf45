//! `tanglefl`: run simulated federated-learning experiments over the DAG
//! ledger, audit their artifacts and recompute their reports.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tanglefl::config::{validate_config, AdversarySpec, ExperimentConfig, OutputFormat, Overrides};
use tanglefl::experiment::{render_report, report_from_logs, run_experiment, run_sweep, verify_experiment};
use tanglefl::metrics::MetricsReport;
use tanglefl::par::Execution;

const EXIT_INVALID_CONFIG: u8 = 2;
const EXIT_INTEGRITY: u8 = 3;

#[derive(Parser)]
#[command(name = "tanglefl", version, about = "DAG-ledger federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment configuration.
    Run(RunArgs),
    /// Run the configuration at several round counts (default 10, 30, 50).
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Round counts to sweep.
        #[arg(long = "sweep-rounds", value_delimiter = ',', default_values_t = [10usize, 30, 50])]
        sweep_rounds: Vec<usize>,
    },
    /// Audit persisted ledger snapshots and off-chain blobs.
    Verify {
        /// Experiment directory (`<out>/<exp_id>`).
        dir: PathBuf,
        #[arg(long)]
        format: Option<OutputFormat>,
    },
    /// Recompute an experiment's report from its event logs.
    Report {
        dir: PathBuf,
        #[arg(long)]
        format: Option<OutputFormat>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    exp_id: Option<String>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    clients: Option<usize>,
    /// Seconds between milestones.
    #[arg(long)]
    milestone_interval: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// `kind:count`, e.g. `random-weights:4`. Repeatable.
    #[arg(long = "adversary")]
    adversaries: Vec<AdversarySpec>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `csv` or `structured`.
    #[arg(long)]
    format: Option<OutputFormat>,
    /// Run everything on the calling thread.
    #[arg(long)]
    sequential: bool,
    /// Weight updates by sample count only.
    #[arg(long)]
    no_reputation: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig, tanglefl::config::ConfigError> {
        let overrides = Overrides {
            exp_id: self.exp_id.clone(),
            rounds: self.rounds,
            repeats: self.repeats,
            n_clients: self.clients,
            milestone_interval_s: self.milestone_interval,
            alpha: self.alpha,
            threshold: self.threshold,
            seed: self.seed,
            adversaries: (!self.adversaries.is_empty()).then(|| self.adversaries.clone()),
            out: self.out.clone(),
            format: self.format,
            execution: self.sequential.then_some(Execution::Sequential),
            reputation_weighting: self.no_reputation.then_some(false),
        };
        validate_config(self.config.as_deref(), &overrides)
    }
}

fn summary_line(r: &MetricsReport) -> String {
    let pct = r.variability_pct.map_or("n/a".to_owned(), |p| format!("{p:.2}%"));
    let std = r.tps_std.map_or("n/a".to_owned(), |s| format!("{s:.3}"));
    format!(
        "{}: rounds={} repeats={} tps_mean={:.3} tps_std={} variability={} delay_p50={:.2}s delay_max={:.2}s",
        r.exp_id, r.rounds, r.repeats, r.tps_mean, std, pct, r.delay_quantiles.p50, r.delay_quantiles.max
    )
}

fn resolve_or_exit(args: &RunArgs) -> Result<ExperimentConfig, ExitCode> {
    args.resolve().map_err(|e| {
        eprintln!("error: invalid config: {e}");
        ExitCode::from(EXIT_INVALID_CONFIG)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run(args) => {
            let cfg = match resolve_or_exit(&args) {
                Ok(c) => c,
                Err(code) => return Ok(code),
            };
            let report = run_experiment(&cfg)?;
            println!("{}", summary_line(&report));
            println!("artifacts: {}", cfg.out.join(&cfg.exp_id).display());
        }
        Command::Sweep { run, sweep_rounds } => {
            let cfg = match resolve_or_exit(&run) {
                Ok(c) => c,
                Err(code) => return Ok(code),
            };
            if sweep_rounds.contains(&0) {
                eprintln!("error: invalid config: invalid value for `rounds`: must be >= 1");
                return Ok(ExitCode::from(EXIT_INVALID_CONFIG));
            }
            let (_, reports) = run_sweep(&cfg, &sweep_rounds)?;
            for r in &reports {
                println!("{}", summary_line(r));
            }
            println!("sweep summary: {}", cfg.out.join(format!("{}.sweep.json", cfg.exp_id)).display());
        }
        Command::Verify { dir, format } => {
            let audit = verify_experiment(&dir)?;
            if format == Some(OutputFormat::Structured) {
                println!("{}", serde_json::to_string_pretty(&audit)?);
            } else {
                for v in &audit.violations {
                    println!("{}: {v}", v.class());
                }
                println!(
                    "checked {} repeats, {} blocks, {} anchors, {} blobs: {} violations",
                    audit.repeats,
                    audit.blocks,
                    audit.anchors,
                    audit.blobs,
                    audit.violations.len()
                );
            }
            if !audit.is_clean() {
                return Ok(ExitCode::from(EXIT_INTEGRITY));
            }
        }
        Command::Report { dir, format } => {
            let report = report_from_logs(&dir)?;
            std::io::stdout().write_all(&render_report(&report, format.unwrap_or_default()))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
