//! On-disk result bundle of a backtest run.
//!
//! `manifest.txt` holds `key = value` lines: run metadata, the configuration
//! snapshot under `config.`, and a SHA-256 per data file under `file.`.
//! `run_id` hashes the configuration, dataset and version only, so two runs
//! of the same inputs share it while their timestamps differ.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{BacktestConfig, BacktestReport};
use crate::bess_trading::{ledger_record, LEDGER_HEADER};
use crate::error::{Error, Result};
use crate::eval_metrics::{write_metric_table, Alpha};
use crate::market_data::MarketSeries;
use crate::model_selector::{write_selection_log, Metric};

pub const MANIFEST: &str = "manifest.txt";
pub const PROFITS: &str = "profits_by_metric.csv";
pub const SELECTION_LOG: &str = "selection_log.csv";
pub const LEDGERS: &str = "ledgers.csv";
pub const BENCHMARK_LEDGER: &str = "benchmark_ledger.csv";
pub const METRIC_TABLE: &str = "metric_table.csv";
pub const MODEL_SUMMARY: &str = "model_summary.csv";

/// Data files in write order.
pub const DATA_FILES: [&str; 6] = [PROFITS, SELECTION_LOG, LEDGERS, BENCHMARK_LEDGER, METRIC_TABLE, MODEL_SUMMARY];

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Fingerprint of a series: SHA-256 of its comma-separated export.
pub fn dataset_fingerprint(series: &MarketSeries) -> Result<String> {
    let mut buf = Vec::new();
    series.write_csv(&mut buf, b',')?;
    Ok(sha256_hex(&buf))
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn profits_csv(report: &BacktestReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["alpha", "metric", "profit_per_mwh", "total_cash", "total_volume"])?;
    for s in &report.strategies {
        w.write_record([
            s.alpha.to_string(),
            s.metric.to_string(),
            opt_f64(s.profit_per_mwh()),
            s.ledger.total_cash().to_string(),
            s.ledger.total_volume().to_string(),
        ])?;
    }
    into_bytes(w)
}

fn ledgers_csv(report: &BacktestReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["metric", "alpha"];
    header.extend(LEDGER_HEADER);
    w.write_record(&header)?;
    for s in &report.strategies {
        for e in &s.ledger.entries {
            let mut row = vec![s.metric.to_string(), s.alpha.to_string()];
            row.extend(ledger_record(e));
            w.write_record(&row)?;
        }
    }
    into_bytes(w)
}

/// Per model and alpha: out-of-sample means of every metric and how often
/// the model was selected across all metrics.
fn model_summary_csv(report: &BacktestReport) -> Result<Vec<u8>> {
    let first = report.trading_days.first().copied().unwrap_or(usize::MAX);
    let mut sums: BTreeMap<(usize, Alpha), ([f64; 6], usize)> = BTreeMap::new();
    for s in report.scores.iter().filter(|s| s.day >= first) {
        let m = report.model_ids.iter().position(|id| *id == s.model_id).expect("registered model");
        let entry = sums.entry((m, s.alpha)).or_insert(([0.0; 6], 0));
        for (acc, metric) in entry.0.iter_mut().zip(Metric::ALL) {
            *acc += metric.of(s);
        }
        entry.1 += 1;
    }
    let mut chosen: BTreeMap<(&str, Alpha), usize> = BTreeMap::new();
    for s in &report.strategies {
        for sel in &s.selections {
            *chosen.entry((sel.chosen_model.as_str(), s.alpha)).or_default() += 1;
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["model_id".to_string(), "alpha".into()];
    header.extend(Metric::ALL.iter().map(|m| format!("mean_{m}")));
    header.push("times_selected".into());
    w.write_record(&header)?;
    for ((m, alpha), (acc, n)) in &sums {
        let id = &report.model_ids[*m];
        let mut row = vec![id.clone(), alpha.to_string()];
        row.extend(acc.iter().map(|a| (a / *n as f64).to_string()));
        row.push(chosen.get(&(id.as_str(), *alpha)).copied().unwrap_or(0).to_string());
        w.write_record(&row)?;
    }
    into_bytes(w)
}

fn into_bytes(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn bundle_files(report: &BacktestReport) -> Result<Vec<(&'static str, Vec<u8>)>> {
    let mut selection = Vec::new();
    let all: Vec<_> = report.strategies.iter().flat_map(|s| s.selections.iter().cloned()).collect();
    write_selection_log(&mut selection, &report.model_ids, &all)?;
    let mut benchmark = Vec::new();
    report.benchmark.write_csv(&mut benchmark)?;
    let mut metrics = Vec::new();
    write_metric_table(&mut metrics, &report.scores)?;
    Ok(vec![
        (PROFITS, profits_csv(report)?),
        (SELECTION_LOG, selection),
        (LEDGERS, ledgers_csv(report)?),
        (BENCHMARK_LEDGER, benchmark),
        (METRIC_TABLE, metrics),
        (MODEL_SUMMARY, model_summary_csv(report)?),
    ])
}

/// Writes the bundle into `dir`, creating it if needed. Returns the manifest
/// entries.
pub fn write_bundle(
    dir: &Path,
    series: &MarketSeries,
    cfg: &BacktestConfig,
    report: &BacktestReport,
    started: chrono::DateTime<chrono::Utc>,
) -> Result<BTreeMap<String, String>> {
    fs::create_dir_all(dir)?;
    let config_text = cfg.to_text();
    let fingerprint = dataset_fingerprint(series)?;
    let version = env!("CARGO_PKG_VERSION");
    let mut manifest = BTreeMap::new();
    manifest.insert(
        "run_id".to_string(),
        sha256_hex(format!("{version}\n{fingerprint}\n{config_text}").as_bytes())[..16].to_string(),
    );
    manifest.insert("version".into(), version.into());
    manifest.insert("seed".into(), cfg.seed.to_string());
    manifest.insert("dataset_sha256".into(), fingerprint);
    manifest.insert("dataset_days".into(), series.n_days().to_string());
    manifest.insert("trading_days".into(), report.trading_days.len().to_string());
    if let (Some(a), Some(b)) = (report.trading_days.first(), report.trading_days.last()) {
        manifest.insert("trading_span".into(), format!("{a}..={b}"));
    }
    manifest.insert("pool_failures".into(), report.pool_failures.len().to_string());
    manifest.insert("degenerate_benchmark_days".into(), report.degenerate_days.to_string());
    manifest.insert("started_at".into(), started.to_rfc3339());
    manifest.insert("finished_at".into(), chrono::Utc::now().to_rfc3339());
    for line in config_text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            manifest.insert(format!("config.{}", k.trim()), v.trim().to_string());
        }
    }
    for (name, bytes) in bundle_files(report)? {
        fs::write(dir.join(name), &bytes)?;
        manifest.insert(format!("file.{name}"), sha256_hex(&bytes));
    }
    let mut out = fs::File::create(dir.join(MANIFEST))?;
    for (k, v) in &manifest {
        writeln!(out, "{k} = {v}")?;
    }
    Ok(manifest)
}

/// One row of `profits_by_metric.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfitRow {
    pub alpha: Alpha,
    pub metric: Metric,
    pub profit_per_mwh: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Bundle {
    pub manifest: BTreeMap<String, String>,
    pub profits: Vec<ProfitRow>,
    /// Missing files and checksum mismatches.
    pub warnings: Vec<String>,
}

impl Bundle {
    /// Per alpha, the metric with the highest profit. Ties keep the first
    /// metric in file order.
    pub fn best_by_alpha(&self) -> Vec<(Alpha, Metric, f64)> {
        let mut best: BTreeMap<Alpha, (Metric, f64)> = BTreeMap::new();
        for r in &self.profits {
            let Some(p) = r.profit_per_mwh else { continue };
            match best.get(&r.alpha) {
                Some((_, b)) if *b >= p => {}
                _ => {
                    best.insert(r.alpha, (r.metric, p));
                }
            }
        }
        best.into_iter().map(|(a, (m, p))| (a, m, p)).collect()
    }
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

pub fn read_bundle(dir: &Path) -> Result<Bundle> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.exists() {
        return Err(Error::Argument(format!("{} contains no {MANIFEST}", dir.display())));
    }
    let mut manifest = BTreeMap::new();
    for (i, line) in fs::read_to_string(&manifest_path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| parse_error(i + 1, format!("expected `key = value`, got {line:?}")))?;
        manifest.insert(k.to_string(), v.to_string());
    }
    let mut warnings = Vec::new();
    for name in DATA_FILES {
        let Some(expected) = manifest.get(&format!("file.{name}")) else {
            warnings.push(format!("{name}: no checksum in manifest"));
            continue;
        };
        match fs::read(dir.join(name)) {
            Ok(bytes) if sha256_hex(&bytes) == *expected => {}
            Ok(_) => warnings.push(format!("{name}: checksum mismatch")),
            Err(_) => warnings.push(format!("{name}: missing")),
        }
    }
    let mut profits = Vec::new();
    if let Ok(bytes) = fs::read(dir.join(PROFITS)) {
        let mut r = csv::Reader::from_reader(bytes.as_slice());
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let field = |j: usize| rec.get(j).ok_or_else(|| parse_error(line, format!("missing column {j}")));
            let alpha: Alpha = field(0)?.parse().map_err(|e: Error| parse_error(line, e.to_string()))?;
            let metric: Metric = field(1)?.parse().map_err(|e: Error| parse_error(line, e.to_string()))?;
            let p = field(2)?;
            let profit_per_mwh = if p.is_empty() {
                None
            } else {
                Some(p.parse::<f64>().map_err(|e| parse_error(line, e.to_string()))?)
            };
            profits.push(ProfitRow {
                alpha,
                metric,
                profit_per_mwh,
            });
        }
    }
    Ok(Bundle {
        manifest,
        profits,
        warnings,
    })
}
