//! Rolling metric histories per model and best-model selection.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval_metrics::{Alpha, DailySpScores};

pub const DEFAULT_METRIC_WINDOW: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    PinballAll,
    PinballBuySell,
    PinballSell,
    PinballBuy,
    CoverageAll,
    CoverageHours,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::PinballAll,
        Metric::PinballBuySell,
        Metric::PinballSell,
        Metric::PinballBuy,
        Metric::CoverageAll,
        Metric::CoverageHours,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Metric::PinballAll => "pinball_all",
            Metric::PinballBuySell => "pinball_buysell",
            Metric::PinballSell => "pinball_sell",
            Metric::PinballBuy => "pinball_buy",
            Metric::CoverageAll => "coverage_all",
            Metric::CoverageHours => "coverage_hours",
        }
    }

    pub fn of(self, scores: &DailySpScores) -> f64 {
        match self {
            Metric::PinballAll => scores.pinball_all,
            Metric::PinballBuySell => scores.pinball_buysell,
            Metric::PinballSell => scores.pinball_sell,
            Metric::PinballBuy => scores.pinball_buy,
            Metric::CoverageAll => scores.coverage_all,
            Metric::CoverageHours => scores.coverage_hours,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.tag() == s.trim())
            .ok_or_else(|| Error::Argument(format!("unknown metric '{s}'")))
    }
}

/// How coverage metrics are ranked. Pinball metrics always use argmin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoverageRanking {
    /// Closest to a target: `alpha` for coverage_all and `((1 + alpha) / 2)^2`
    /// for coverage_hours unless overridden.
    Proximity {
        coverage_all_target: Option<f64>,
        coverage_hours_target: Option<f64>,
    },
    /// coverage_all by proximity to `alpha`, coverage_hours by maximum.
    MaximizeHours,
}

impl Default for CoverageRanking {
    fn default() -> Self {
        CoverageRanking::Proximity {
            coverage_all_target: None,
            coverage_hours_target: None,
        }
    }
}

/// Daily scores of one (model, metric, alpha).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub model_id: String,
    pub metric: Metric,
    pub alpha: Alpha,
    scores: BTreeMap<usize, f64>,
}

impl MetricSeries {
    pub fn new(model_id: &str, metric: Metric, alpha: Alpha) -> Self {
        MetricSeries {
            model_id: model_id.to_string(),
            metric,
            alpha,
            scores: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, day: usize, score: f64) -> Result<()> {
        if self.scores.insert(day, score).is_some() {
            return Err(Error::InvariantViolation(format!(
                "second {} score for model {} on day {day}",
                self.metric, self.model_id
            )));
        }
        Ok(())
    }

    pub fn get(&self, day: usize) -> Option<f64> {
        self.scores.get(&day).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Mean score over days `end_day + 1 - window ..= end_day`; every one of
/// them must be present.
pub fn rolling_average(series: &MetricSeries, end_day: usize, window: usize) -> Result<f64> {
    if window == 0 {
        return Err(Error::Argument("metric window must be positive".into()));
    }
    let first = (end_day + 1).checked_sub(window).ok_or_else(|| {
        Error::InsufficientHistory(format!("{window}-day window cannot end on day {end_day}"))
    })?;
    let mut total = 0.0;
    for d in first..=end_day {
        total += series.get(d).ok_or_else(|| {
            Error::InsufficientHistory(format!(
                "model {} has no {} score for day {d}",
                series.model_id, series.metric
            ))
        })?;
    }
    Ok(total / window as f64)
}

fn ranking_key(metric: Metric, alpha: Alpha, ranking: CoverageRanking, average: f64) -> f64 {
    let a = alpha.value();
    let nominal_hours = (0.5 * (1.0 + a)).powi(2);
    match (metric, ranking) {
        (Metric::CoverageAll, CoverageRanking::Proximity { coverage_all_target, .. }) => {
            (average - coverage_all_target.unwrap_or(a)).abs()
        }
        (Metric::CoverageAll, CoverageRanking::MaximizeHours) => (average - a).abs(),
        (Metric::CoverageHours, CoverageRanking::Proximity { coverage_hours_target, .. }) => {
            (average - coverage_hours_target.unwrap_or(nominal_hours)).abs()
        }
        (Metric::CoverageHours, CoverageRanking::MaximizeHours) => -average,
        _ => average,
    }
}

/// Index of the best entry of `averages` (registry order). Ties go to the
/// earliest entry.
pub fn select_best(averages: &[f64], metric: Metric, alpha: Alpha, ranking: CoverageRanking) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &avg) in averages.iter().enumerate() {
        if !avg.is_finite() {
            continue;
        }
        let key = ranking_key(metric, alpha, ranking, avg);
        if best.is_none_or(|(_, k)| key < k) {
            best = Some((i, key));
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::Argument(format!("no model has a valid {metric} average")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    /// Day whose trading uses the chosen model.
    pub day: usize,
    pub metric: Metric,
    pub alpha: Alpha,
    pub chosen_model: String,
    /// `(model, rolling average)` in registry order.
    pub score_table: Vec<(String, f64)>,
}

/// Append-only store of daily scores for a fixed model registry.
#[derive(Debug, Clone)]
pub struct ScoreStore {
    models: Vec<String>,
    series: BTreeMap<(usize, Metric, Alpha), MetricSeries>,
}

impl ScoreStore {
    pub fn new(models: Vec<String>) -> Self {
        ScoreStore {
            models,
            series: BTreeMap::new(),
        }
    }

    pub fn models(&self) -> &[String] {
        &self.models
    }

    pub fn record(&mut self, scores: &DailySpScores) -> Result<()> {
        let m = self
            .models
            .iter()
            .position(|id| *id == scores.model_id)
            .ok_or_else(|| Error::Argument(format!("model {} is not registered", scores.model_id)))?;
        for metric in Metric::ALL {
            self.series
                .entry((m, metric, scores.alpha))
                .or_insert_with(|| MetricSeries::new(&scores.model_id, metric, scores.alpha))
                .insert(scores.day, metric.of(scores))?;
        }
        Ok(())
    }

    pub fn series(&self, model: &str, metric: Metric, alpha: Alpha) -> Option<&MetricSeries> {
        let m = self.models.iter().position(|id| id == model)?;
        self.series.get(&(m, metric, alpha))
    }

    /// Picks the model for `trade_day` from the window ending the day
    /// before.
    pub fn select(
        &self,
        trade_day: usize,
        metric: Metric,
        alpha: Alpha,
        window: usize,
        ranking: CoverageRanking,
    ) -> Result<SelectionOutcome> {
        let end = trade_day
            .checked_sub(1)
            .ok_or_else(|| Error::InsufficientHistory("no day precedes day 0".into()))?;
        let mut table = Vec::with_capacity(self.models.len());
        for (m, id) in self.models.iter().enumerate() {
            let series = self
                .series
                .get(&(m, metric, alpha))
                .ok_or_else(|| Error::InsufficientHistory(format!("no {metric} scores for model {id}")))?;
            table.push((id.clone(), rolling_average(series, end, window)?));
        }
        let averages: Vec<f64> = table.iter().map(|(_, a)| *a).collect();
        let i = select_best(&averages, metric, alpha, ranking)?;
        Ok(SelectionOutcome {
            day: trade_day,
            metric,
            alpha,
            chosen_model: self.models[i].clone(),
            score_table: table,
        })
    }
}

/// Selection log: `day,metric,alpha,chosen_model` then one average column
/// per registered model.
pub fn write_selection_log<W: Write>(out: W, models: &[String], log: &[SelectionOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["day".to_string(), "metric".into(), "alpha".into(), "chosen_model".into()];
    header.extend(models.iter().cloned());
    w.write_record(&header)?;
    for s in log {
        let mut row = vec![s.day.to_string(), s.metric.to_string(), s.alpha.to_string(), s.chosen_model.clone()];
        row.extend(s.score_table.iter().map(|(_, a)| a.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval_metrics::TradingHours;
    use proptest::prelude::*;

    fn a(p: u32) -> Alpha {
        Alpha::from_percent(p).unwrap()
    }

    fn series(values: &[f64]) -> MetricSeries {
        let mut s = MetricSeries::new("m", Metric::PinballAll, a(80));
        for (d, v) in values.iter().enumerate() {
            s.insert(d, *v).unwrap();
        }
        s
    }

    #[test]
    fn rolling_average_examples() {
        assert_eq!(rolling_average(&series(&[4.0; 40]), 39, 30).unwrap(), 4.0);
        let ramp: Vec<f64> = (1..=30).map(f64::from).collect();
        assert_eq!(rolling_average(&series(&ramp), 29, 30).unwrap(), 15.5);
        assert!(rolling_average(&series(&ramp), 28, 30).is_err());
        assert!(rolling_average(&series(&ramp), 30, 30).is_err());
    }

    #[test]
    fn duplicate_day_is_rejected() {
        let mut s = series(&[1.0]);
        assert!(s.insert(0, 2.0).is_err());
    }

    #[test]
    fn selection_examples() {
        let ranking = CoverageRanking::default();
        assert_eq!(select_best(&[1.0, 0.5], Metric::PinballAll, a(80), ranking).unwrap(), 1);
        assert_eq!(select_best(&[0.95, 0.89], Metric::CoverageAll, a(90), ranking).unwrap(), 1);
        assert_eq!(select_best(&[0.3, 0.3, 0.1], Metric::PinballSell, a(80), ranking).unwrap(), 2);
        assert_eq!(select_best(&[0.3, 0.3], Metric::PinballSell, a(80), ranking).unwrap(), 0);
        assert!(select_best(&[], Metric::PinballAll, a(80), ranking).is_err());
    }

    #[test]
    fn coverage_hours_modes() {
        // nominal joint target at 80% is 0.81
        let avgs = [0.95, 0.80];
        assert_eq!(select_best(&avgs, Metric::CoverageHours, a(80), CoverageRanking::default()).unwrap(), 1);
        assert_eq!(select_best(&avgs, Metric::CoverageHours, a(80), CoverageRanking::MaximizeHours).unwrap(), 0);
        let custom = CoverageRanking::Proximity {
            coverage_all_target: None,
            coverage_hours_target: Some(1.0),
        };
        assert_eq!(select_best(&avgs, Metric::CoverageHours, a(80), custom).unwrap(), 0);
    }

    #[test]
    fn store_selects_from_previous_window() {
        let models = vec!["x".to_string(), "y".to_string()];
        let mut store = ScoreStore::new(models.clone());
        for d in 0..40 {
            for (id, v) in [("x", 1.0), ("y", if d < 35 { 2.0 } else { 0.0 })] {
                store
                    .record(&DailySpScores {
                        day: d,
                        model_id: id.into(),
                        alpha: a(80),
                        hours: TradingHours { h1: 1, h2: 2 },
                        pinball_all: v,
                        pinball_buysell: v,
                        pinball_sell: v,
                        pinball_buy: v,
                        coverage_all: 0.8,
                        coverage_hours: 1.0,
                    })
                    .unwrap();
            }
        }
        let s = store.select(30, Metric::PinballAll, a(80), 30, CoverageRanking::default()).unwrap();
        assert_eq!(s.chosen_model, "x");
        assert_eq!(s.score_table, vec![("x".into(), 1.0), ("y".into(), 2.0)]);
        assert!(store.select(29, Metric::PinballAll, a(80), 30, CoverageRanking::default()).is_err());
        // y's recent zeros pull its 4-day average below x
        let s = store.select(40, Metric::PinballAll, a(80), 4, CoverageRanking::default()).unwrap();
        assert_eq!(s.chosen_model, "y");
        let mut buf = Vec::new();
        write_selection_log(&mut buf, &models, &[s]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "day,metric,alpha,chosen_model,x,y");
    }

    #[test]
    fn metric_tags_round_trip() {
        for m in Metric::ALL {
            assert_eq!(m.tag().parse::<Metric>().unwrap(), m);
        }
    }

    proptest! {
        #[test]
        fn rolling_average_matches_brute_force(values in prop::collection::vec(-10.0..10.0f64, 30..80), w in 1usize..30) {
            let s = series(&values);
            let end = values.len() - 1;
            let brute = values[values.len() - w..].iter().sum::<f64>() / w as f64;
            prop_assert!((rolling_average(&s, end, w).unwrap() - brute).abs() < 1e-12);
        }

        #[test]
        fn argmin_is_shift_invariant(avgs in prop::collection::vec(0.0..10.0f64, 1..9), shift in -5.0..5.0f64) {
            let shifted: Vec<f64> = avgs.iter().map(|v| v + shift).collect();
            let r = CoverageRanking::default();
            // shifting can merge near-equal values in floating point; compare on exact gaps only
            let i = select_best(&avgs, Metric::PinballAll, a(80), r).unwrap();
            let j = select_best(&shifted, Metric::PinballAll, a(80), r).unwrap();
            prop_assert!(i == j || (avgs[i] - avgs[j]).abs() < 1e-12);
        }
    }
}
