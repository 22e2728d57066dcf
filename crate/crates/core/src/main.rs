use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fets::harness::aggregate::{aggregate, load_runs, write_summary};
use fets::harness::compare::{compare, load_run, Window};
use fets::harness::report::write_report;
use fets::harness::run::resolve_out_dir;
use fets::harness::{run, RunConfig};
use fets::FetsError;

#[derive(Parser)]
#[command(name = "fets", version, about = "Free-energy subspace selection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a run configuration.
    Run {
        config: PathBuf,
        /// Seeds executed in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Output directory (overrides run.out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarise run directories per run id and episode.
    Aggregate {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Output file; standard output when absent.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Render charts and a markdown index from an aggregate.
    Report {
        aggregate: PathBuf,
        /// Output directory; defaults to `report` next to the aggregate.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Acceptance summary to tabulate.
        #[arg(long)]
        acceptance: Option<PathBuf>,
        /// Exit with status 3 when a chart has no data.
        #[arg(long)]
        strict: bool,
    },
    /// One-sided paired signed-rank test that A exceeds B.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value = "acc_reward")]
        metric: String,
        /// Half-open episode window START:END.
        #[arg(long, default_value = "0:50")]
        window: Window,
        /// Method to take from A when it holds several.
        #[arg(long)]
        method_a: Option<String>,
        /// Method to take from B when it holds several.
        #[arg(long)]
        method_b: Option<String>,
    },
    /// Check a configuration without running it.
    Validate { config: PathBuf },
}

enum Failure {
    Validation(FetsError),
    Runtime(FetsError),
    Strict(Vec<String>),
}

impl From<FetsError> for Failure {
    fn from(e: FetsError) -> Self {
        match e {
            FetsError::Validation { .. } | FetsError::Parse { .. } => Failure::Validation(e),
            other => Failure::Runtime(other),
        }
    }
}

fn load_config(path: &std::path::Path) -> Result<RunConfig, Failure> {
    let cfg = RunConfig::load(path).map_err(|e| match e {
        FetsError::Io { .. } => Failure::Validation(e),
        other => Failure::from(other),
    })?;
    cfg.validate().map_err(Failure::Validation)?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, jobs, out } => {
            let cfg = load_config(&config)?;
            let dir = resolve_out_dir(&cfg, out.as_deref());
            let manifest = run(&cfg, &dir, jobs).map_err(Failure::Runtime)?;
            println!("wrote {} runs to {}", manifest.runs.len(), dir.display());
        }
        Command::Aggregate { dirs, out } => {
            let rows = aggregate(&load_runs(&dirs)?);
            match out {
                Some(path) => {
                    let f = std::fs::File::create(&path).map_err(|e| Failure::Runtime(FetsError::Io { path: path.clone(), source: e }))?;
                    write_summary(f, &rows)?;
                }
                None => write_summary(std::io::stdout().lock(), &rows)?,
            }
        }
        Command::Report {
            aggregate,
            out,
            acceptance,
            strict,
        } => {
            let rows = fets::harness::aggregate::read_summary(&aggregate)?;
            let acc = match acceptance {
                Some(p) => Some(std::fs::read_to_string(&p).map_err(|e| Failure::Runtime(FetsError::Io { path: p, source: e }))?),
                None => None,
            };
            let dir = out.unwrap_or_else(|| aggregate.parent().unwrap_or(std::path::Path::new(".")).join("report"));
            let outcome = write_report(&rows, acc.as_deref(), &dir)?;
            println!("wrote {} charts to {}", outcome.charts.len(), dir.display());
            for g in &outcome.gaps {
                eprintln!("note: no data for {g}");
            }
            if strict && !outcome.gaps.is_empty() {
                return Err(Failure::Strict(outcome.gaps));
            }
        }
        Command::Compare {
            a,
            b,
            metric,
            window,
            method_a,
            method_b,
        } => {
            let ra = load_run(&a, method_a.as_deref())?;
            let rb = load_run(&b, method_b.as_deref())?;
            let t = compare(&ra, &rb, &metric, window).map_err(Failure::Runtime)?;
            println!("metric {metric} window {}:{}", window.start, window.end);
            println!("pairs {} W+ {} p {}", t.n_nonzero, t.w_plus, t.p_value);
        }
        Command::Validate { config } => {
            load_config(&config)?;
            println!("{}: ok", config.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Strict(gaps)) => {
            eprintln!("error: strict mode, {} chart(s) without data", gaps.len());
            ExitCode::from(3)
        }
    }
}
