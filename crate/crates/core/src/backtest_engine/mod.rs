//! Rolling out-of-sample experiment: pool point forecasts, probabilistic
//! models, daily scores, rolling selection and battery trading.
//!
//! Day arithmetic with `W = warm_up()`:
//!
//! * pool forecasts exist from day `first_point_day()`;
//! * probabilistic forecasts and scores exist from day `first_scored_day()`;
//! * the out-of-sample span is days `W..n_days`; on each day `d` of it the
//!   scores through `d` select the model that trades day `d + 1`, so trading
//!   covers `W + 1..n_days`, i.e. `n_days - W - 1` days.
//!
//! Every forecast for day `d` is computed from a [`ForecastInput`] whose
//! history ends at `d - 1`, so no realized price of day `d` or later can leak
//! into it.

mod config;
pub mod report;

use std::collections::BTreeMap;

use rayon::prelude::*;

pub use config::{parse_alphas, BacktestConfig};

use crate::bess_trading::{build_orders, benchmark_orders, profit_per_mwh, settle, BatteryState, StrategyConfig, TradeLedger};
use crate::error::{Error, Result};
use crate::eval_metrics::{daily_scores, Alpha, DailySpScores};
use crate::market_data::{MarketSeries, HOURS};
use crate::model_selector::{Metric, ScoreStore, SelectionOutcome};
use crate::point_model::{ForecastInput, PointForecastSet, PoolModel};
use crate::prob_models::{calibrate_registry, make_quantile_forecast, CalibrationData, ModelSpec, ProbSettings, QuantileForecast};

/// Battery level at the start of every ledger.
pub const INITIAL_STATE: BatteryState = BatteryState::HALF;

/// A pool member that failed to calibrate for the forecasts of `day`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolFailure {
    pub day: usize,
    pub window_length: usize,
    pub message: String,
}

/// Everything forecast for one day.
#[derive(Debug, Clone, PartialEq)]
pub struct DayForecasts {
    pub day: usize,
    pub pool: PointForecastSet,
    /// Per registry model, the 24 hourly quantile forecasts.
    pub models: Vec<Vec<QuantileForecast>>,
}

/// Start of the recalibration block that contains `day`.
fn anchor(day: usize, first: usize, every: usize) -> usize {
    first + (day - first) / every * every
}

/// Pool forecasts for `days`, keyed by day. Pools are refitted on the
/// trailing window that ends the day before each block anchor.
fn pool_forecasts(series: &MarketSeries, cfg: &BacktestConfig, days: &[usize]) -> Result<(BTreeMap<usize, PointForecastSet>, Vec<PoolFailure>)> {
    let first = cfg.first_point_day();
    let mut blocks: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &d in days {
        if d < first || d >= series.n_days() {
            return Err(Error::InsufficientHistory(format!("no pool forecast for day {d}")));
        }
        blocks.entry(anchor(d, first, cfg.recalibrate_every)).or_default().push(d);
    }
    let blocks: Vec<(usize, Vec<usize>)> = blocks.into_iter().collect();
    let results = blocks
        .par_iter()
        .map(|(a, ds)| {
            let pool = PoolModel::calibrate(series, a - 1, &cfg.pool_window_lengths).map_err(|e| e.at(*a, "point-calibration"))?;
            if pool.params.is_empty() {
                return Err(Error::Fit(format!("every pool member failed: {:?}", pool.failures)).at(*a, "point-calibration"));
            }
            let mut out = Vec::with_capacity(ds.len());
            let mut failures = Vec::new();
            for &d in ds {
                let input = ForecastInput::new(series, d).map_err(|e| e.at(d, "point-forecast"))?;
                out.push((d, pool.forecast(&input).map_err(|e| e.at(d, "point-forecast"))?));
                failures.extend(pool.failures.iter().map(|(w, m)| PoolFailure {
                    day: d,
                    window_length: *w,
                    message: m.clone(),
                }));
            }
            Ok((out, failures))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut map = BTreeMap::new();
    let mut failures = Vec::new();
    for (sets, fails) in results {
        map.extend(sets);
        failures.extend(fails);
    }
    Ok((map, failures))
}

/// Quantile forecasts of `registry` for each of `days` (all at or after
/// `first_scored_day()`), in day order.
fn model_forecasts(
    series: &MarketSeries,
    cfg: &BacktestConfig,
    registry: &[ModelSpec],
    days: &[usize],
) -> Result<(Vec<DayForecasts>, Vec<PoolFailure>)> {
    let first = cfg.first_scored_day();
    let mut blocks: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &d in days {
        if d < first {
            return Err(Error::InsufficientHistory(format!("day {d} precedes the first scored day {first}")));
        }
        blocks.entry(anchor(d, first, cfg.recalibrate_every)).or_default().push(d);
    }
    let mut needed: Vec<usize> = Vec::new();
    for (a, ds) in &blocks {
        needed.extend(a - cfg.prob_window..*a);
        needed.extend(ds);
    }
    needed.sort_unstable();
    needed.dedup();
    let (pools, failures) = pool_forecasts(series, cfg, &needed)?;
    let settings = ProbSettings {
        bandwidth: cfg.sqra_bandwidth,
    };
    let blocks: Vec<(usize, Vec<usize>)> = blocks.into_iter().collect();
    let per_block = blocks
        .par_iter()
        .map(|(a, ds)| {
            let history: Vec<PointForecastSet> = (a - cfg.prob_window..*a).map(|d| pools[&d].clone()).collect();
            let realized: Vec<[f64; HOURS]> = (a - cfg.prob_window..*a).map(|d| *series.day_prices(d)).collect();
            let data = CalibrationData {
                forecasts: &history,
                realized: &realized,
            };
            let models = calibrate_registry(registry, &data, &settings).map_err(|e| e.at(*a, "prob-calibration"))?;
            ds.iter()
                .map(|&d| {
                    let pool = pools[&d].clone();
                    let fc = models
                        .iter()
                        .map(|m| make_quantile_forecast(m, &pool).map_err(|e| e.at(d, "prob-forecast")))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(DayForecasts { day: d, pool, models: fc })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((per_block.into_iter().flatten().collect(), failures))
}

/// All registry forecasts for day `d`, computed exactly as inside
/// [`run_backtest`].
pub fn forecast_day(series: &MarketSeries, cfg: &BacktestConfig, d: usize) -> Result<DayForecasts> {
    cfg.validate()?;
    if d >= series.n_days() {
        return Err(Error::Bounds(format!("day {d} beyond the {}-day series", series.n_days())));
    }
    let (mut out, _) = model_forecasts(series, cfg, &cfg.model_registry, &[d])?;
    Ok(out.remove(0))
}

/// One (metric, alpha) trading run.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyRun {
    pub metric: Metric,
    pub alpha: Alpha,
    pub ledger: TradeLedger,
    pub selections: Vec<SelectionOutcome>,
}

impl StrategyRun {
    pub fn profit_per_mwh(&self) -> Option<f64> {
        profit_per_mwh(&self.ledger).ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub model_ids: Vec<String>,
    pub alphas: Vec<Alpha>,
    /// Days traded, in order.
    pub trading_days: Vec<usize>,
    /// In `Metric::ALL` order, alphas innermost.
    pub strategies: Vec<StrategyRun>,
    /// Price-taker trades at the extremes of the pool-average forecast.
    pub benchmark: TradeLedger,
    pub scores: Vec<DailySpScores>,
    pub pool_failures: Vec<PoolFailure>,
    pub degenerate_days: usize,
}

impl BacktestReport {
    pub fn strategy(&self, metric: Metric, alpha: Alpha) -> Option<&StrategyRun> {
        self.strategies.iter().find(|s| s.metric == metric && s.alpha == alpha)
    }
}

fn check(series: &MarketSeries, cfg: &BacktestConfig) -> Result<Vec<usize>> {
    cfg.validate_for(series.n_days())?;
    Ok((cfg.warm_up() + 1..series.n_days()).collect())
}

fn trade(
    d: usize,
    forecasts: &[QuantileForecast],
    state: BatteryState,
    prices: &[f64; HOURS],
    strategy: &StrategyConfig,
) -> Result<crate::bess_trading::LedgerEntry> {
    let median: [f64; HOURS] = std::array::from_fn(|h| forecasts[h].median());
    let (hours, _) = crate::bess_trading::choose_hours(&median);
    let orders = build_orders(&forecasts[hours.h1 - 1], &forecasts[hours.h2 - 1], state, &median, strategy)
        .map_err(|e| e.at(d, "orders"))?;
    settle(d, &orders, prices, state, strategy).map_err(|e| e.at(d, "settlement"))
}

pub fn run_backtest(series: &MarketSeries, cfg: &BacktestConfig) -> Result<BacktestReport> {
    let trading_days = check(series, cfg)?;
    let model_ids = cfg.model_ids();
    let scored: Vec<usize> = (cfg.first_scored_day()..series.n_days()).collect();
    let (forecasts, pool_failures) = model_forecasts(series, cfg, &cfg.model_registry, &scored)?;
    let by_day: BTreeMap<usize, &DayForecasts> = forecasts.iter().map(|f| (f.day, f)).collect();

    let score_rows = forecasts
        .par_iter()
        .map(|f| {
            let prices = series.day_prices(f.day);
            let mut rows = Vec::new();
            for (id, fc) in model_ids.iter().zip(&f.models) {
                rows.extend(daily_scores(f.day, id, fc, prices, &cfg.alphas).map_err(|e| e.at(f.day, "scoring"))?);
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<DailySpScores> = score_rows.into_iter().flatten().collect();
    let mut store = ScoreStore::new(model_ids.clone());
    for s in &scores {
        store.record(s)?;
    }

    let combos: Vec<(Metric, Alpha)> = Metric::ALL
        .iter()
        .flat_map(|&m| cfg.alphas.iter().map(move |&a| (m, a)))
        .collect();
    let strategies = combos
        .par_iter()
        .map(|&(metric, alpha)| {
            let strategy = StrategyConfig {
                sell_timing: cfg.sell_timing,
                ..StrategyConfig::new(alpha)
            };
            let mut ledger = TradeLedger::default();
            let mut selections = Vec::with_capacity(trading_days.len());
            let mut state = INITIAL_STATE;
            for &d in &trading_days {
                let sel = store
                    .select(d, metric, alpha, cfg.metric_window, cfg.coverage_ranking)
                    .map_err(|e| e.at(d, "selection"))?;
                let m = model_ids.iter().position(|id| *id == sel.chosen_model).expect("registered model");
                let entry = trade(d, &by_day[&d].models[m], state, series.day_prices(d), &strategy)?;
                state = entry.end_state;
                ledger.push(entry);
                selections.push(sel);
            }
            Ok(StrategyRun {
                metric,
                alpha,
                ledger,
                selections,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let bench_cfg = StrategyConfig::new(cfg.alphas[0]);
    let mut benchmark = TradeLedger::default();
    let mut degenerate_days = 0;
    for &d in &trading_days {
        let orders = benchmark_orders(&by_day[&d].pool.mean());
        degenerate_days += usize::from(orders.degenerate_hours);
        benchmark.push(settle(d, &orders, series.day_prices(d), INITIAL_STATE, &bench_cfg).map_err(|e| e.at(d, "benchmark"))?);
    }

    Ok(BacktestReport {
        model_ids,
        alphas: cfg.alphas.clone(),
        trading_days,
        strategies,
        benchmark,
        scores,
        pool_failures,
        degenerate_days,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerSummary {
    pub model_id: String,
    pub alpha: Alpha,
    pub ledger: TradeLedger,
    pub total_cash: f64,
    pub total_volume: f64,
    pub profit_per_mwh: Option<f64>,
}

/// Trades every out-of-sample day with one fixed model, no selection.
pub fn run_single_model(series: &MarketSeries, cfg: &BacktestConfig, model: ModelSpec, alpha: Alpha) -> Result<LedgerSummary> {
    let trading_days = check(series, cfg)?;
    let (forecasts, _) = model_forecasts(series, cfg, &[model], &trading_days)?;
    let strategy = StrategyConfig {
        sell_timing: cfg.sell_timing,
        ..StrategyConfig::new(alpha)
    };
    let mut ledger = TradeLedger::default();
    let mut state = INITIAL_STATE;
    for f in &forecasts {
        let entry = trade(f.day, &f.models[0], state, series.day_prices(f.day), &strategy)?;
        state = entry.end_state;
        ledger.push(entry);
    }
    Ok(LedgerSummary {
        model_id: model.to_string(),
        alpha,
        total_cash: ledger.total_cash(),
        total_volume: ledger.total_volume(),
        profit_per_mwh: profit_per_mwh(&ledger).ok(),
        ledger,
    })
}
