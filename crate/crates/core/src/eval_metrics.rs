//! Pinball loss, interval hits and the six daily statistical-performance
//! scores used to rank probabilistic models.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::bess_trading::choose_hours;
use crate::error::{Error, Result};
use crate::market_data::HOURS;
use crate::prob_models::{QuantileForecast, N_QUANTILES};

/// Prediction-interval level in whole percent. Even values in `2..=98` only,
/// so that both `(1 - a) / 2` and `(1 + a) / 2` are percentiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Alpha(u8);

impl Alpha {
    pub fn from_percent(percent: u32) -> Result<Self> {
        if !percent.is_multiple_of(2) || !(2..=98).contains(&percent) {
            return Err(Error::Argument(format!(
                "alpha {percent}% does not put both interval bounds on the percentile grid"
            )));
        }
        Ok(Alpha(percent as u8))
    }

    pub fn percent(self) -> u32 {
        u32::from(self.0)
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 100.0
    }

    /// Percentile of the lower bound, `(1 - a) / 2`.
    pub fn lower_percent(self) -> usize {
        (100 - usize::from(self.0)) / 2
    }

    /// Percentile of the upper bound, `(1 + a) / 2`.
    pub fn upper_percent(self) -> usize {
        (100 + usize::from(self.0)) / 2
    }

    /// 50, 52, .., 98.
    pub fn default_grid() -> Vec<Alpha> {
        (50..=98).step_by(2).map(|p| Alpha(p as u8)).collect()
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

impl FromStr for Alpha {
    type Err = Error;

    /// Accepts `0.8`, `80` or `80%`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().trim_end_matches('%');
        let v: f64 = t.parse().map_err(|_| Error::Argument(format!("invalid alpha '{s}'")))?;
        let percent = if v < 1.0 { v * 100.0 } else { v };
        let rounded = percent.round();
        if (percent - rounded).abs() > 1e-9 || rounded < 0.0 {
            return Err(Error::Argument(format!("alpha '{s}' is not a whole percent")));
        }
        Alpha::from_percent(rounded as u32)
    }
}

pub fn pinball(q: f64, price: f64, forecast_q: f64) -> f64 {
    let indicator = if price < forecast_q { 1.0 } else { 0.0 };
    (q - indicator) * (price - forecast_q)
}

/// 1 when `price` lies in the closed interval `[lower, upper]`.
pub fn pi_hit(price: f64, lower: f64, upper: f64) -> Result<u8> {
    if lower > upper {
        return Err(Error::Argument(format!("interval bounds reversed: [{lower}, {upper}]")));
    }
    Ok(u8::from(lower <= price && price <= upper))
}

/// Buy and sell hours of a day: the earliest minimum and maximum of the
/// median forecast.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TradingHours {
    pub h1: usize,
    pub h2: usize,
}

fn check_day(forecasts: &[QuantileForecast]) -> Result<()> {
    if forecasts.len() != HOURS {
        return Err(Error::Argument(format!("expected 24 hourly forecasts, got {}", forecasts.len())));
    }
    if let Some((i, f)) = forecasts.iter().enumerate().find(|(i, f)| f.hour != i + 1) {
        return Err(Error::Argument(format!("forecast in slot {} is for hour {}", i + 1, f.hour)));
    }
    Ok(())
}

/// Mean pinball over all 24 hours and 99 percentiles.
pub fn sp_pinball_all(forecasts: &[QuantileForecast], prices: &[f64; HOURS]) -> Result<f64> {
    check_day(forecasts)?;
    let mut total = 0.0;
    for (f, &p) in forecasts.iter().zip(prices) {
        for (k, &v) in f.values().iter().enumerate() {
            total += pinball((k + 1) as f64 / 100.0, p, v);
        }
    }
    Ok(total / (HOURS * N_QUANTILES) as f64)
}

/// Pinball of the bid quantile `(1 + a) / 2` at the buy hour.
pub fn sp_pinball_buy(fc_h1: &QuantileForecast, price_h1: f64, alpha: Alpha) -> f64 {
    let k = alpha.upper_percent();
    pinball(k as f64 / 100.0, price_h1, fc_h1.at_percent(k))
}

/// Pinball of the offer quantile `(1 - a) / 2` at the sell hour.
pub fn sp_pinball_sell(fc_h2: &QuantileForecast, price_h2: f64, alpha: Alpha) -> f64 {
    let k = alpha.lower_percent();
    pinball(k as f64 / 100.0, price_h2, fc_h2.at_percent(k))
}

pub fn sp_pinball_buysell(fc_h1: &QuantileForecast, fc_h2: &QuantileForecast, price_h1: f64, price_h2: f64, alpha: Alpha) -> f64 {
    0.5 * (sp_pinball_buy(fc_h1, price_h1, alpha) + sp_pinball_sell(fc_h2, price_h2, alpha))
}

/// Share of hours whose price falls in the closed level-`alpha` interval.
pub fn sp_coverage_all(forecasts: &[QuantileForecast], prices: &[f64; HOURS], alpha: Alpha) -> Result<f64> {
    check_day(forecasts)?;
    let mut hits = 0u32;
    for (f, &p) in forecasts.iter().zip(prices) {
        hits += u32::from(pi_hit(p, f.at_percent(alpha.lower_percent()), f.at_percent(alpha.upper_percent()))?);
    }
    Ok(f64::from(hits) / HOURS as f64)
}

/// 1 when the buy-hour price is strictly below its bid quantile and the
/// sell-hour price strictly above its offer quantile.
pub fn sp_coverage_hours(fc_h1: &QuantileForecast, fc_h2: &QuantileForecast, price_h1: f64, price_h2: f64, alpha: Alpha) -> u8 {
    u8::from(price_h1 < fc_h1.at_percent(alpha.upper_percent()) && price_h2 > fc_h2.at_percent(alpha.lower_percent()))
}

/// The six scores of one model on one day at one interval level.
#[derive(Debug, Clone, PartialEq)]
pub struct DailySpScores {
    pub day: usize,
    pub model_id: String,
    pub alpha: Alpha,
    pub hours: TradingHours,
    pub pinball_all: f64,
    pub pinball_buysell: f64,
    pub pinball_sell: f64,
    pub pinball_buy: f64,
    pub coverage_all: f64,
    pub coverage_hours: f64,
}

/// Scores for every level in `alphas`. The trading hours come from the
/// model's own median forecast.
pub fn daily_scores(
    day: usize,
    model_id: &str,
    forecasts: &[QuantileForecast],
    prices: &[f64; HOURS],
    alphas: &[Alpha],
) -> Result<Vec<DailySpScores>> {
    check_day(forecasts)?;
    let pinball_all = sp_pinball_all(forecasts, prices)?;
    let median: [f64; HOURS] = std::array::from_fn(|h| forecasts[h].median());
    let (hours, _) = choose_hours(&median);
    let (f1, f2) = (&forecasts[hours.h1 - 1], &forecasts[hours.h2 - 1]);
    let (p1, p2) = (prices[hours.h1 - 1], prices[hours.h2 - 1]);
    alphas
        .iter()
        .map(|&alpha| {
            let buy = sp_pinball_buy(f1, p1, alpha);
            let sell = sp_pinball_sell(f2, p2, alpha);
            Ok(DailySpScores {
                day,
                model_id: model_id.to_string(),
                alpha,
                hours,
                pinball_all,
                pinball_buysell: 0.5 * (buy + sell),
                pinball_sell: sell,
                pinball_buy: buy,
                coverage_all: sp_coverage_all(forecasts, prices, alpha)?,
                coverage_hours: f64::from(sp_coverage_hours(f1, f2, p1, p2, alpha)),
            })
        })
        .collect()
}

/// Metric table: `day,model_id,alpha,pinball_all,pinball_buysell,pinball_sell,pinball_buy,coverage_all,coverage_hours`.
pub fn write_metric_table<W: Write>(out: W, rows: &[DailySpScores]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "day",
        "model_id",
        "alpha",
        "pinball_all",
        "pinball_buysell",
        "pinball_sell",
        "pinball_buy",
        "coverage_all",
        "coverage_hours",
    ])?;
    for r in rows {
        w.write_record([
            r.day.to_string(),
            r.model_id.clone(),
            r.alpha.to_string(),
            r.pinball_all.to_string(),
            r.pinball_buysell.to_string(),
            r.pinball_sell.to_string(),
            r.pinball_buy.to_string(),
            r.coverage_all.to_string(),
            r.coverage_hours.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
