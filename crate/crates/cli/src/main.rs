//! `epf`: ingest price data, generate synthetic markets, run trading
//! backtests and summarize their result bundles.
//!
//! Exit status: 0 on success, 1 when a run fails, 2 on bad arguments,
//! configuration or input data.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use epf_core::backtest_engine::report::{read_bundle, write_bundle};
use epf_core::backtest_engine::{run_backtest, run_single_model, BacktestConfig};
use epf_core::eval_metrics::Alpha;
use epf_core::market_data::{ingest_csv, synth_generate, IngestSchema, MarketSeries, Regime};
use epf_core::prob_models::ModelSpec;
use epf_core::{Error, Result};

#[derive(Parser)]
#[command(name = "epf", version, about = "Probabilistic electricity price forecasting and battery trading backtests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate an hourly CSV and write it as a normalized dense dataset.
    Ingest {
        /// Raw hourly CSV.
        input: PathBuf,
        /// Where to write the normalized CSV.
        output: PathBuf,
        #[command(flatten)]
        schema: SchemaArgs,
    },
    /// Write a synthetic hourly dataset.
    Synth {
        /// Number of days to generate.
        #[arg(long, default_value_t = 700)]
        days: usize,
        /// Generator seed.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Volatility profile: low, high or spiky.
        #[arg(long, default_value = "low")]
        regime: Regime,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full selection-and-trading backtest and write a report bundle.
    Backtest {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Report directory.
        #[arg(long, env = "EPF_REPORT_DIR", default_value = "report")]
        out: PathBuf,
    },
    /// Trade every out-of-sample day with one fixed model, without selection.
    Single {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Model tag, e.g. `jsu@364`, `hs@avg`, `qra-h` or `cp@avg*2`.
        #[arg(long)]
        model: ModelSpec,
        /// Prediction interval level, e.g. `0.8` or `80`.
        #[arg(long)]
        alpha: Alpha,
        /// Also write the daily ledger to this CSV file.
        #[arg(long)]
        ledger: Option<PathBuf>,
    },
    /// Summarize a report bundle: best metric per alpha, checksum warnings.
    Report {
        /// Report directory written by `epf backtest`.
        dir: PathBuf,
    },
    /// Print the default configuration file.
    DefaultConfig,
}

#[derive(Args)]
struct SchemaArgs {
    /// Name of the timestamp column.
    #[arg(long, default_value = "timestamp")]
    timestamp_column: String,
    /// Name of the price column.
    #[arg(long, default_value = "price")]
    price_column: String,
    /// Name of the day-ahead load forecast column.
    #[arg(long, default_value = "load_forecast")]
    load_column: String,
    /// Field delimiter (single character).
    #[arg(long, default_value_t = ',')]
    delimiter: char,
}

impl SchemaArgs {
    fn schema(&self) -> Result<IngestSchema> {
        if !self.delimiter.is_ascii() {
            return Err(Error::Argument(format!("delimiter {:?} is not a single-byte character", self.delimiter)));
        }
        Ok(IngestSchema {
            timestamp_column: self.timestamp_column.clone(),
            price_column: self.price_column.clone(),
            load_column: self.load_column.clone(),
            delimiter: self.delimiter as u8,
            ..IngestSchema::default()
        })
    }
}

#[derive(Args)]
struct DataArgs {
    /// Hourly dataset (CSV with timestamp, price and load_forecast columns).
    #[arg(conflicts_with = "synthetic", required_unless_present = "synthetic")]
    dataset: Option<PathBuf>,
    /// Use a synthetic dataset of this many days instead of a file.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Volatility profile of the synthetic dataset.
    #[arg(long, default_value = "low", requires = "synthetic")]
    regime: Regime,
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file of `key = value` lines; see `epf default-config`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed. The seed also drives the synthetic
    /// generator.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides how often (in days) models are recalibrated.
    #[arg(long)]
    recalibrate_every: Option<usize>,
}

impl RunArgs {
    fn config(&self) -> Result<BacktestConfig> {
        let mut cfg = match &self.config {
            Some(path) => BacktestConfig::parse(&std::fs::read_to_string(path).map_err(|e| io_context(path, e))?)?,
            None => BacktestConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(k) = self.recalibrate_every {
            cfg.recalibrate_every = k;
        }
        Ok(cfg)
    }
}

fn io_context(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn load_data(data: &DataArgs, seed: u64) -> Result<MarketSeries> {
    match (&data.dataset, data.synthetic) {
        (_, Some(days)) => synth_generate(days, seed, data.regime),
        (Some(path), None) => {
            if !path.exists() {
                return Err(io_context(path, std::io::ErrorKind::NotFound.into()));
            }
            ingest_csv(path, &IngestSchema::default())
        }
        (None, None) => Err(Error::Argument("give a dataset path or --synthetic DAYS".into())),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "undefined".into())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { input, output, schema } => {
            let series = ingest_csv(&input, &schema.schema()?)?;
            series.export_csv(&output).map_err(|e| match e {
                Error::Io(io) => io_context(&output, io),
                e => e,
            })?;
            println!(
                "{} days, {} to {}",
                series.n_days(),
                series.start_date(),
                series.date_of(series.n_days() - 1)
            );
        }
        Command::Synth { days, seed, regime, out } => {
            let series = synth_generate(days, seed, regime)?;
            series.export_csv(&out)?;
            println!("{days} {regime} days written to {}", out.display());
        }
        Command::Backtest { data, run, out } => {
            let started = chrono::Utc::now();
            let cfg = run.config()?;
            cfg.validate()?;
            let series = load_data(&data, cfg.seed)?;
            let report = run_backtest(&series, &cfg)?;
            let manifest = write_bundle(&out, &series, &cfg, &report, started)?;
            println!(
                "{} trading days, {} strategies; run {} written to {}",
                report.trading_days.len(),
                report.strategies.len(),
                manifest["run_id"],
                out.display()
            );
            if !report.pool_failures.is_empty() {
                eprintln!("warning: {} pool member calibrations failed; see manifest", report.pool_failures.len());
            }
        }
        Command::Single {
            data,
            run,
            model,
            alpha,
            ledger,
        } => {
            let cfg = run.config()?;
            cfg.validate()?;
            let series = load_data(&data, cfg.seed)?;
            let summary = run_single_model(&series, &cfg, model, alpha)?;
            if let Some(path) = ledger {
                summary.ledger.write_csv(std::fs::File::create(&path).map_err(|e| io_context(&path, e))?)?;
            }
            println!("model {} alpha {}", summary.model_id, summary.alpha);
            println!("days           {}", summary.ledger.entries.len());
            println!("total cash     {:.4}", summary.total_cash);
            println!("total volume   {:.4}", summary.total_volume);
            println!("profit per MWh {}", opt(summary.profit_per_mwh));
        }
        Command::Report { dir } => {
            let bundle = read_bundle(&dir)?;
            for w in &bundle.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(id) = bundle.manifest.get("run_id") {
                println!("run {id}");
            }
            println!("{:>6}  {:<16}  {:>14}", "alpha", "best metric", "profit/MWh");
            for (alpha, metric, profit) in bundle.best_by_alpha() {
                println!("{:>6}  {:<16}  {:>14.4}", alpha.to_string(), metric.to_string(), profit);
            }
        }
        Command::DefaultConfig => print!("{}", BacktestConfig::default().to_text()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
