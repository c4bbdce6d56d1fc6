//! `ckpt-curator`: train toy runs, score and stop them, average checkpoints,
//! decompose bias and variance, and emit report CSVs.
//!
//! Exit codes: 0 on success, 1 on operational errors (one
//! `error: <kind>: <detail>` line on stderr), 2 on usage errors and on any
//! `report` failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ckpt_curator::averaging::{resolve_plan, run_averaging, Scheme};
use ckpt_curator::bv_oracle::{run_oracle, CURVES_FILE};
use ckpt_curator::layout::verify_run;
use ckpt_curator::ledger::{approbivt_score, EpochRecord, Ledger, Metric};
use ckpt_curator::report::{ablation_for_run, curves};
use ckpt_curator::stopping::{find_stop_point, trailing_run_length, DEFAULT_PATIENCE};
use ckpt_curator::trainer::{train_run, TrainConfig, LEDGER_FILE};
use ckpt_curator::Error;

const SEED_ENV: &str = "CKPT_CURATOR_SEED";

#[derive(Parser)]
#[command(name = "ckpt-curator", version, about = "Score, stop and average training checkpoints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the toy model, writing checkpoints, ledger.csv and config.resolved.
    TrainToy {
        /// Flat `key = value` config file; omitted keys take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output run directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Print the tradeoff score (SUTL + validation loss).
    Score {
        #[arg(long, required_unless_present = "ledger", requires = "val")]
        sutl: Option<f64>,
        #[arg(long, required_unless_present = "ledger", requires = "sutl")]
        val: Option<f64>,
        /// Print `epoch,score` for every ledger row instead.
        #[arg(long, conflicts_with_all = ["sutl", "val"])]
        ledger: Option<PathBuf>,
    },
    /// Apply the stopping rule to a ledger column.
    StopCheck {
        #[arg(long)]
        ledger: PathBuf,
        /// `approbivt` or `val`.
        #[arg(long, default_value = "approbivt")]
        metric: String,
        /// Consecutive non-decreasing steps that trigger a stop.
        #[arg(long, default_value_t = DEFAULT_PATIENCE)]
        patience: usize,
    },
    /// Average checkpoints of a run under a selection scheme.
    Average {
        #[arg(long)]
        run: PathBuf,
        /// `lk`, `kbvl` or `kbabvt`.
        #[arg(long)]
        scheme: String,
        #[arg(short = 'k', long = "k")]
        k: usize,
        /// Only epochs up to this one are eligible.
        #[arg(long)]
        endpoint: Option<u64>,
    },
    /// Monte Carlo bias-variance decomposition over independently trained replicas.
    Decompose {
        #[arg(long, default_value_t = 10)]
        replicas: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Emit report CSVs.
    Report {
        #[command(subcommand)]
        kind: ReportKind,
    },
    /// Check that a run directory's ledger, checkpoints and digests agree.
    Verify {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Args)]
struct SeedArg {
    /// Overrides the config seed (and the CKPT_CURATOR_SEED variable).
    #[arg(long, env = SEED_ENV)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum ReportKind {
    /// Loss curves with the tradeoff column and a summary footer.
    Curves {
        /// Run directory (reads its ledger.csv) or a ledger file.
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PATIENCE)]
        patience: usize,
        /// Output file; defaults to `<run>/curves.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Average-and-evaluate grid over endpoints, k values and schemes.
    Ablation {
        #[arg(long)]
        run: PathBuf,
        /// Comma-separated endpoint epochs; `stop` adds both stop points.
        #[arg(long, value_delimiter = ',', required = true)]
        endpoints: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        ks: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "lk,kbvl,kbabvt")]
        schemes: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_PATIENCE)]
        patience: usize,
        /// Output file; defaults to `<run>/ablation.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

type CmdResult = Result<(), Error>;

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig, Error> {
    let mut config = match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn ledger_path(run: &Path) -> PathBuf {
    if run.is_dir() {
        run.join(LEDGER_FILE)
    } else {
        run.to_path_buf()
    }
}

fn write_output(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn train_toy(config: Option<&Path>, out: &Path, seed: Option<u64>) -> CmdResult {
    let config = load_config(config, seed)?;
    let ledger = train_run(&config, out)?;
    let last = ledger.last_epoch().unwrap_or(0);
    let stop = find_stop_point(&ledger.series(Metric::ApproBiVT), config.patience);
    println!("epochs={last}");
    match stop {
        Some(i) => println!("stopped epoch={}", ledger.records()[i].epoch),
        None => println!("stopped max_epochs={}", config.max_epochs),
    }
    println!("run={}", out.display());
    Ok(())
}

fn score(sutl: Option<f64>, val: Option<f64>, ledger: Option<&Path>) -> CmdResult {
    if let Some(path) = ledger {
        let ledger = Ledger::load_csv(path)?;
        println!("epoch,approbivt");
        for r in ledger.records() {
            println!("{},{}", r.epoch, r.approbivt());
        }
        return Ok(());
    }
    let (sutl, val) = (sutl.unwrap_or_default(), val.unwrap_or_default());
    let record = EpochRecord::new(1, 0.0, sutl, val);
    println!("{}", approbivt_score(&record));
    Ok(())
}

fn stop_check(ledger: &Path, metric: &str, patience: usize) -> CmdResult {
    if patience == 0 {
        return Err(Error::ZeroPatience);
    }
    let metric: Metric = metric.parse()?;
    let ledger = Ledger::load_csv(ledger)?;
    let series = ledger.series(metric);
    match find_stop_point(&series, patience) {
        Some(i) => println!("STOP epoch={}", ledger.records()[i].epoch),
        None => println!("CONTINUE run_length={}", trailing_run_length(&series)),
    }
    Ok(())
}

fn average(run: &Path, scheme: &str, k: usize, endpoint: Option<u64>) -> CmdResult {
    let scheme: Scheme = scheme.parse()?;
    let ledger = Ledger::load_csv(run.join(LEDGER_FILE))?;
    let plan = resolve_plan(&ledger, scheme, k, endpoint)?;
    let meta = run_averaging(run, &plan)?;
    let epochs: Vec<String> = plan.resolved_epochs.iter().map(u64::to_string).collect();
    println!("epochs={}", epochs.join(","));
    println!("output={}", meta.path.display());
    println!("digest={:016x}", meta.content_digest);
    Ok(())
}

fn decompose(replicas: usize, config: Option<&Path>, out: &Path, seed: Option<u64>) -> CmdResult {
    let config = load_config(config, seed)?;
    let run = run_oracle(&config, replicas)?;
    run.write(out)?;
    println!("epochs={}", run.curves.len());
    println!("output={}", out.join(CURVES_FILE).display());
    Ok(())
}

fn report(kind: &ReportKind) -> CmdResult {
    match kind {
        ReportKind::Curves { run, patience, out } => {
            let ledger = Ledger::load_csv(ledger_path(run))?;
            let c = curves(&ledger, *patience)?;
            let out = out.clone().unwrap_or_else(|| {
                if run.is_dir() { run.join("curves.csv") } else { run.with_file_name("curves.csv") }
            });
            write_output(&out, &c.to_csv())?;
            let s = c.summary;
            println!("val_loss_argmin_epoch={}", s.val_loss_argmin);
            println!("approbivt_argmin_epoch={}", s.approbivt_argmin);
            println!("output={}", out.display());
        }
        ReportKind::Ablation {
            run,
            endpoints,
            ks,
            schemes,
            patience,
            out,
        } => {
            let ledger = Ledger::load_csv(run.join(LEDGER_FILE))?;
            let mut eps = Vec::new();
            for e in endpoints {
                if e == "stop" {
                    for m in [Metric::ValLoss, Metric::ApproBiVT] {
                        let stop = find_stop_point(&ledger.series(m), *patience)
                            .map(|i| ledger.records()[i].epoch)
                            .or(ledger.last_epoch());
                        eps.extend(stop);
                    }
                } else {
                    eps.push(e.parse().map_err(|_| {
                        Error::InvalidConfig(format!("endpoint `{e}` is not an epoch"))
                    })?);
                }
            }
            let schemes = schemes
                .iter()
                .map(|s| s.parse())
                .collect::<Result<Vec<Scheme>, _>>()?;
            let grid = ablation_for_run(run, &eps, ks, &schemes)?;
            let out = out.clone().unwrap_or_else(|| run.join("ablation.csv"));
            write_output(&out, &grid.to_csv())?;
            print!("{}", grid.to_csv());
            println!("output={}", out.display());
        }
    }
    Ok(())
}

fn verify(run: &Path) -> CmdResult {
    let report = verify_run(run)?;
    if report.is_ok() {
        println!("OK");
        Ok(())
    } else {
        for p in &report.problems {
            println!("{p}");
        }
        Err(Error::InconsistentRun(format!(
            "{} problem(s) in {}",
            report.problems.len(),
            run.display()
        )))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (result, failure_code) = match &cli.command {
        Command::TrainToy { config, out, seed } => (train_toy(config.as_deref(), out, seed.seed), 1),
        Command::Score { sutl, val, ledger } => (score(*sutl, *val, ledger.as_deref()), 1),
        Command::StopCheck {
            ledger,
            metric,
            patience,
        } => (stop_check(ledger, metric, *patience), 1),
        Command::Average {
            run,
            scheme,
            k,
            endpoint,
        } => (average(run, scheme, *k, *endpoint), 1),
        Command::Decompose {
            replicas,
            config,
            out,
            seed,
        } => (decompose(*replicas, config.as_deref(), out, seed.seed), 1),
        Command::Report { kind } => (report(kind), 2),
        Command::Verify { run } => (verify(run), 1),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let detail = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {}", e.kind(), detail);
            ExitCode::from(failure_code)
        }
    }
}
