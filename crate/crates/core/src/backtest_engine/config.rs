//! Backtest configuration and its flat `key = value` file format.
//!
//! ```text
//! # lines starting with '#' are comments
//! point_window = 364
//! prob_window = 182
//! metric_window = 30
//! alphas = 50:98:2          # or a list: 0.5, 0.8, 98%
//! models = hs@364, cp@364, jsu@364, hs@avg, cp@avg, jsu@avg, qra, sqra, qra-h
//! pool_windows = 56, 84, 112, 182, 364
//! seed = 1
//! coverage_ranking = proximity   # or maximize
//! coverage_all_target = 0.8      # optional, default alpha
//! coverage_hours_target = 0.81   # optional, default ((1 + alpha) / 2)^2
//! sell_timing = before_h2        # or before_h1
//! recalibrate_every = 1
//! sqra_bandwidth = auto          # or a positive number
//! ```

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::eval_metrics::Alpha;
use crate::model_selector::{CoverageRanking, DEFAULT_METRIC_WINDOW};
use crate::point_model::{DEFAULT_POOL_WINDOWS, MAX_LAG};
use crate::prob_models::{BaseForecast, Bandwidth, Method, ModelSpec, MIN_ERROR_SAMPLE};
use crate::bess_trading::SellTiming;

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestConfig {
    pub point_window: usize,
    pub prob_window: usize,
    pub metric_window: usize,
    pub alphas: Vec<Alpha>,
    pub model_registry: Vec<ModelSpec>,
    pub pool_window_lengths: Vec<usize>,
    pub seed: u64,
    pub coverage_ranking: CoverageRanking,
    pub sell_timing: SellTiming,
    /// Models are refitted every this many days and reused in between.
    pub recalibrate_every: usize,
    pub sqra_bandwidth: Bandwidth,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            point_window: 364,
            prob_window: 182,
            metric_window: DEFAULT_METRIC_WINDOW,
            alphas: Alpha::default_grid(),
            model_registry: ModelSpec::default_registry(),
            pool_window_lengths: DEFAULT_POOL_WINDOWS.to_vec(),
            seed: 1,
            coverage_ranking: CoverageRanking::default(),
            sell_timing: SellTiming::BeforeH2,
            recalibrate_every: 1,
            sqra_bandwidth: Bandwidth::RuleOfThumb,
        }
    }
}

impl BacktestConfig {
    /// First day with a pool forecast.
    pub fn first_point_day(&self) -> usize {
        MAX_LAG + self.point_window
    }

    /// First day with probabilistic forecasts and scores.
    pub fn first_scored_day(&self) -> usize {
        self.first_point_day() + self.prob_window
    }

    /// Days consumed before the out-of-sample span:
    /// lag + point window + probabilistic window + metric window.
    pub fn warm_up(&self) -> usize {
        self.first_scored_day() + self.metric_window
    }

    pub fn model_ids(&self) -> Vec<String> {
        self.model_registry.iter().map(|m| m.to_string()).collect()
    }

    /// Every violated constraint, not just the first.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.pool_window_lengths.is_empty() {
            errs.push("pool_windows must not be empty".to_string());
        }
        let longest = self.pool_window_lengths.iter().copied().max().unwrap_or(0);
        if self.point_window < longest {
            errs.push(format!("point_window ({}) is shorter than the longest pool window ({longest})", self.point_window));
        }
        if let Some(w) = self.pool_window_lengths.iter().find(|&&w| w < crate::point_model::MIN_CALIBRATION_DAYS) {
            errs.push(format!("pool window {w} is shorter than the {}-day calibration minimum", crate::point_model::MIN_CALIBRATION_DAYS));
        }
        if self.prob_window < MIN_ERROR_SAMPLE {
            errs.push(format!("prob_window ({}) must be at least {MIN_ERROR_SAMPLE} days", self.prob_window));
        }
        if self.metric_window == 0 {
            errs.push("metric_window must be positive".into());
        }
        if self.alphas.is_empty() {
            errs.push("alphas must not be empty".into());
        }
        if self.model_registry.is_empty() {
            errs.push("models must not be empty".into());
        }
        let ids = self.model_ids();
        for (i, id) in ids.iter().enumerate() {
            if ids[..i].contains(id) {
                errs.push(format!("model {id} is listed twice"));
            }
        }
        for m in &self.model_registry {
            if let (Method::Hs | Method::Cp | Method::Jsu, BaseForecast::Window(w)) = (m.method, m.base) {
                if !self.pool_window_lengths.contains(&w) {
                    errs.push(format!("model {m} is centred on a {w}-day pool member that is not in pool_windows"));
                }
            }
        }
        if self.recalibrate_every == 0 {
            errs.push("recalibrate_every must be positive".into());
        }
        if let Bandwidth::Fixed(h) = self.sqra_bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                errs.push(format!("sqra_bandwidth {h} must be positive"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Validates against a dataset of `n_days`: the warm-up plus at least one
    /// trading day must fit.
    pub fn validate_for(&self, n_days: usize) -> Result<()> {
        let mut errs = match self.validate() {
            Ok(()) => Vec::new(),
            Err(Error::Config(e)) => e,
            Err(e) => return Err(e),
        };
        if self.warm_up() + 2 > n_days {
            errs.push(format!(
                "dataset has {n_days} days but warm-up needs {} (lag {MAX_LAG} + point {} + prob {} + metric {}) plus 2 out-of-sample days",
                self.warm_up(),
                self.point_window,
                self.prob_window,
                self.metric_window
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Parses the key-value format, reporting every bad line at once.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = BacktestConfig::default();
        let mut errs = Vec::new();
        let mut all_target = None;
        let mut hours_target = None;
        let mut maximize = false;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                errs.push(format!("line {}: expected key = value", n + 1));
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            let res: std::result::Result<(), String> = (|| {
                let num = |v: &str| v.parse::<usize>().map_err(|_| format!("'{v}' is not a non-negative integer"));
                match key {
                    "point_window" => cfg.point_window = num(value)?,
                    "prob_window" => cfg.prob_window = num(value)?,
                    "metric_window" => cfg.metric_window = num(value)?,
                    "recalibrate_every" => cfg.recalibrate_every = num(value)?,
                    "seed" => cfg.seed = value.parse().map_err(|_| format!("'{value}' is not a seed"))?,
                    "alphas" => cfg.alphas = parse_alphas(value).map_err(|e| e.to_string())?,
                    "models" => {
                        cfg.model_registry = list(value)
                            .map(|t| t.parse::<ModelSpec>().map_err(|e| e.to_string()))
                            .collect::<std::result::Result<_, _>>()?
                    }
                    "pool_windows" => cfg.pool_window_lengths = list(value).map(num).collect::<std::result::Result<_, _>>()?,
                    "coverage_ranking" => {
                        maximize = match value {
                            "proximity" => false,
                            "maximize" => true,
                            _ => return Err(format!("'{value}' is not proximity or maximize")),
                        }
                    }
                    "coverage_all_target" => all_target = Some(prob(value)?),
                    "coverage_hours_target" => hours_target = Some(prob(value)?),
                    "sell_timing" => cfg.sell_timing = value.parse().map_err(|e: Error| e.to_string())?,
                    "sqra_bandwidth" => {
                        cfg.sqra_bandwidth = if value == "auto" {
                            Bandwidth::RuleOfThumb
                        } else {
                            Bandwidth::Fixed(value.parse().map_err(|_| format!("'{value}' is not auto or a number"))?)
                        }
                    }
                    _ => return Err(format!("unknown key '{key}'")),
                }
                Ok(())
            })();
            if let Err(e) = res {
                errs.push(format!("line {}: {key}: {e}", n + 1));
            }
        }
        cfg.coverage_ranking = if maximize {
            if hours_target.is_some() {
                errs.push("coverage_hours_target has no effect with coverage_ranking = maximize".into());
            }
            CoverageRanking::MaximizeHours
        } else {
            CoverageRanking::Proximity {
                coverage_all_target: all_target,
                coverage_hours_target: hours_target,
            }
        };
        if maximize && all_target.is_some() {
            errs.push("coverage_all_target has no effect with coverage_ranking = maximize".into());
        }
        if let Err(Error::Config(more)) = cfg.validate() {
            errs.extend(more);
        }
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Canonical text form; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let join = |v: Vec<String>| v.join(", ");
        let mut s = String::new();
        let _ = writeln!(s, "point_window = {}", self.point_window);
        let _ = writeln!(s, "prob_window = {}", self.prob_window);
        let _ = writeln!(s, "metric_window = {}", self.metric_window);
        let _ = writeln!(s, "alphas = {}", join(self.alphas.iter().map(|a| a.to_string()).collect()));
        let _ = writeln!(s, "models = {}", join(self.model_ids()));
        let _ = writeln!(s, "pool_windows = {}", join(self.pool_window_lengths.iter().map(|w| w.to_string()).collect()));
        let _ = writeln!(s, "seed = {}", self.seed);
        match self.coverage_ranking {
            CoverageRanking::MaximizeHours => {
                let _ = writeln!(s, "coverage_ranking = maximize");
            }
            CoverageRanking::Proximity { coverage_all_target, coverage_hours_target } => {
                let _ = writeln!(s, "coverage_ranking = proximity");
                if let Some(t) = coverage_all_target {
                    let _ = writeln!(s, "coverage_all_target = {t}");
                }
                if let Some(t) = coverage_hours_target {
                    let _ = writeln!(s, "coverage_hours_target = {t}");
                }
            }
        }
        let _ = writeln!(s, "sell_timing = {}", self.sell_timing);
        let _ = writeln!(s, "recalibrate_every = {}", self.recalibrate_every);
        match self.sqra_bandwidth {
            Bandwidth::RuleOfThumb => {
                let _ = writeln!(s, "sqra_bandwidth = auto");
            }
            Bandwidth::Fixed(h) => {
                let _ = writeln!(s, "sqra_bandwidth = {h}");
            }
        }
        s
    }
}

fn list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|t| !t.is_empty())
}

fn prob(v: &str) -> std::result::Result<f64, String> {
    match v.parse::<f64>() {
        Ok(x) if (0.0..=1.0).contains(&x) => Ok(x),
        _ => Err(format!("'{v}' is not a probability")),
    }
}

/// `lo:hi:step` in percent, or a comma list.
pub fn parse_alphas(value: &str) -> Result<Vec<Alpha>> {
    let parts: Vec<&str> = value.split(':').map(str::trim).collect();
    if parts.len() == 3 {
        let n = |s: &str| s.parse::<u32>().map_err(|_| Error::Argument(format!("invalid alpha range '{value}'")));
        let (lo, hi, step) = (n(parts[0])?, n(parts[1])?, n(parts[2])?);
        if step == 0 || lo > hi {
            return Err(Error::Argument(format!("invalid alpha range '{value}'")));
        }
        return (lo..=hi).step_by(step as usize).map(Alpha::from_percent).collect();
    }
    let alphas: Vec<Alpha> = list(value).map(str::parse).collect::<Result<_>>()?;
    if alphas.is_empty() {
        return Err(Error::Argument("empty alpha list".into()));
    }
    Ok(alphas)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = BacktestConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.warm_up(), 7 + 364 + 182 + 30);
        assert_eq!(BacktestConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(BacktestConfig::parse("").unwrap(), cfg);
    }

    #[test]
    fn parses_every_key() {
        let text = "point_window = 200\nprob_window=120\nmetric_window = 10 # short\nalphas = 0.5, 80%\n\
                    models = hs@avg, qra*2\npool_windows = 56,112\nseed = 9\ncoverage_ranking = proximity\n\
                    coverage_hours_target = 0.7\nsell_timing = before_h1\nrecalibrate_every = 7\nsqra_bandwidth = 2.5\n";
        let cfg = BacktestConfig::parse(text).unwrap();
        assert_eq!(cfg.point_window, 200);
        assert_eq!(cfg.metric_window, 10);
        assert_eq!(cfg.alphas.iter().map(|a| a.percent()).collect::<Vec<_>>(), vec![50, 80]);
        assert_eq!(cfg.model_ids(), vec!["hs@avg", "qra*2"]);
        assert_eq!(cfg.sell_timing, SellTiming::BeforeH1);
        assert_eq!(cfg.sqra_bandwidth, Bandwidth::Fixed(2.5));
        assert_eq!(
            cfg.coverage_ranking,
            CoverageRanking::Proximity { coverage_all_target: None, coverage_hours_target: Some(0.7) }
        );
        assert_eq!(BacktestConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn alpha_range_has_25_levels() {
        assert_eq!(parse_alphas("50:98:2").unwrap().len(), 25);
        assert!(parse_alphas("51:98:2").is_err());
    }

    #[test]
    fn reports_all_errors_at_once() {
        let err = BacktestConfig::parse("point_window = x\nbogus = 1\nalphas = 0.51\nmodels = hs@999\nno equals sign").unwrap_err();
        let Error::Config(lines) = err else { panic!("expected config error") };
        assert_eq!(lines.len(), 5, "{lines:?}");
    }

    #[test]
    fn semantic_errors_are_collected() {
        let cfg = BacktestConfig {
            point_window: 100,
            prob_window: 50,
            metric_window: 0,
            ..BacktestConfig::default()
        };
        let Err(Error::Config(lines)) = cfg.validate() else { panic!() };
        assert_eq!(lines.len(), 3, "{lines:?}");
    }

    #[test]
    fn dataset_too_short() {
        let cfg = BacktestConfig::default();
        assert!(cfg.validate_for(700).is_ok());
        assert!(matches!(cfg.validate_for(584), Err(Error::Config(_))));
        let long_metric = BacktestConfig { metric_window: 200, ..cfg };
        assert!(matches!(long_metric.validate_for(700), Err(Error::Config(_))));
    }
}
