//! Parsimonious autoregressive expert model for hourly day-ahead prices.
//!
//! For every hour a separate linear regression explains the price with the
//! same-hour prices one, two and seven days back, yesterday's last price,
//! yesterday's maximum and minimum, the day-ahead load forecast and seven
//! weekday dummies. The dummies span the intercept, so there is no separate
//! constant column.
//!
//! A pool of such models, each calibrated on a different trailing window
//! length, supplies the point forecasts that the averaging methods in
//! [`crate::prob_models`] use as regressors.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::market_data::{window, MarketSeries, WindowView, HOURS};

pub const N_COEFFICIENTS: usize = 14;

/// Oldest lag used by the model, in days.
pub const MAX_LAG: usize = 7;

/// Minimum number of usable calibration days per hourly regression.
pub const MIN_CALIBRATION_DAYS: usize = 30;

/// Default pool of calibration window lengths.
pub const DEFAULT_POOL_WINDOWS: [usize; 5] = [56, 84, 112, 182, 364];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertFeatures {
    pub y_lag1: f64,
    pub y_lag2: f64,
    pub y_lag7: f64,
    pub y_eod: f64,
    pub y_max_prev: f64,
    pub y_min_prev: f64,
    pub load: f64,
    pub weekday: [f64; 7],
}

impl ExpertFeatures {
    pub fn as_array(&self) -> [f64; N_COEFFICIENTS] {
        let mut out = [0.0; N_COEFFICIENTS];
        out[..7].copy_from_slice(&[
            self.y_lag1,
            self.y_lag2,
            self.y_lag7,
            self.y_eod,
            self.y_max_prev,
            self.y_min_prev,
            self.load,
        ]);
        out[7..].copy_from_slice(&self.weekday);
        out
    }
}

fn assemble(
    prev: &[f64; HOURS],
    prev2: &[f64; HOURS],
    prev7: &[f64; HOURS],
    load: f64,
    weekday_index: usize,
    hour: usize,
) -> ExpertFeatures {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &p in prev {
        lo = lo.min(p);
        hi = hi.max(p);
    }
    let mut weekday = [0.0; 7];
    weekday[weekday_index] = 1.0;
    ExpertFeatures {
        y_lag1: prev[hour - 1],
        y_lag2: prev2[hour - 1],
        y_lag7: prev7[hour - 1],
        y_eod: prev[HOURS - 1],
        y_max_prev: hi,
        y_min_prev: lo,
        load,
        weekday,
    }
}

fn check_hour(hour: usize) -> Result<()> {
    if (1..=HOURS).contains(&hour) {
        Ok(())
    } else {
        Err(Error::Argument(format!("hour {hour} outside 1..=24")))
    }
}

/// Features for an in-sample target day `d`, reading any day up to `d`.
pub fn build_features(series: &MarketSeries, d: usize, h: usize) -> Result<ExpertFeatures> {
    check_hour(h)?;
    if d < MAX_LAG {
        return Err(Error::InsufficientHistory(format!(
            "day {d} has no one-week lag (need day >= {MAX_LAG})"
        )));
    }
    if d >= series.n_days() {
        return Err(Error::Bounds(format!("day {d} beyond series of {} days", series.n_days())));
    }
    Ok(assemble(
        series.day_prices(d - 1),
        series.day_prices(d - 2),
        series.day_prices(d - 7),
        series.load(d, h),
        series.weekday_index(d),
        h,
    ))
}

fn features_in_view(view: &WindowView<'_>, d: usize, h: usize) -> Result<ExpertFeatures> {
    Ok(assemble(
        view.prices(d - 1)?,
        view.prices(d - 2)?,
        view.prices(d - 7)?,
        view.loads(d)?[h - 1],
        view.weekday_index(d),
        h,
    ))
}

/// Everything the model may see when forecasting day `target_day`: realized
/// prices up to the previous day and the day-ahead load forecast of the
/// target day. Realized prices of the target day are not reachable.
#[derive(Debug, Clone, Copy)]
pub struct ForecastInput<'a> {
    history: WindowView<'a>,
    target_day: usize,
    loads: [f64; HOURS],
    weekday_index: usize,
}

impl<'a> ForecastInput<'a> {
    pub fn new(series: &'a MarketSeries, target_day: usize) -> Result<Self> {
        if target_day < MAX_LAG {
            return Err(Error::InsufficientHistory(format!(
                "cannot forecast day {target_day}: need {MAX_LAG} days of history"
            )));
        }
        if target_day >= series.n_days() {
            return Err(Error::Bounds(format!(
                "target day {target_day} beyond series of {} days",
                series.n_days()
            )));
        }
        Ok(Self {
            history: window(series, target_day - 1, target_day)?,
            target_day,
            loads: *series.day_loads(target_day),
            weekday_index: series.weekday_index(target_day),
        })
    }

    pub fn target_day(&self) -> usize {
        self.target_day
    }

    pub fn history(&self) -> &WindowView<'a> {
        &self.history
    }

    pub fn features(&self, h: usize) -> Result<ExpertFeatures> {
        check_hour(h)?;
        let d = self.target_day;
        Ok(assemble(
            self.history.prices(d - 1)?,
            self.history.prices(d - 2)?,
            self.history.prices(d - 7)?,
            self.loads[h - 1],
            self.weekday_index,
            h,
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertModelParams {
    pub hour: usize,
    pub coefficients: [f64; N_COEFFICIENTS],
    pub calibration_window_length: usize,
}

pub fn predict(params: &ExpertModelParams, features: &ExpertFeatures) -> f64 {
    params
        .coefficients
        .iter()
        .zip(features.as_array())
        .map(|(b, x)| b * x)
        .sum()
}

/// Full output of one hourly regression, kept for diagnostics.
#[derive(Debug, Clone)]
pub struct HourlyFit {
    pub params: ExpertModelParams,
    pub days: Vec<usize>,
    pub design: DMatrix<f64>,
    pub target: DVector<f64>,
    pub fitted: DVector<f64>,
    /// Whether the ridge fallback was needed.
    pub regularized: bool,
}

impl HourlyFit {
    pub fn residuals(&self) -> DVector<f64> {
        &self.target - &self.fitted
    }
}

/// Least squares via column-scaled Householder QR. Returns `None` for the
/// coefficient vector if the design is rank deficient.
fn qr_least_squares(design: &DMatrix<f64>, target: &DVector<f64>, scale: &[f64]) -> Option<DVector<f64>> {
    let mut scaled = design.clone();
    for (j, s) in scale.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / s);
    }
    let qr = scaled.qr();
    let r = qr.r();
    let max_diag = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if r.diagonal().iter().any(|v| v.abs() <= 1e-10 * max_diag) {
        return None;
    }
    let qty = qr.q().transpose() * target;
    let z = r.solve_upper_triangular(&qty)?;
    Some(DVector::from_iterator(z.len(), z.iter().zip(scale).map(|(z, s)| z / s)))
}

/// Ridge fallback on the scaled design, penalty 1e-8 times the mean diagonal
/// of the scaled Gram matrix.
fn ridge_least_squares(design: &DMatrix<f64>, target: &DVector<f64>, scale: &[f64]) -> Option<DVector<f64>> {
    let mut scaled = design.clone();
    for (j, s) in scale.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / s);
    }
    let p = scaled.ncols();
    let mut gram = scaled.transpose() * &scaled;
    let penalty = 1e-8 * gram.trace() / p as f64;
    if !(penalty > 0.0) {
        return None;
    }
    for j in 0..p {
        gram[(j, j)] += penalty;
    }
    let z = gram.cholesky()?.solve(&(scaled.transpose() * target));
    Some(DVector::from_iterator(p, z.iter().zip(scale).map(|(z, s)| z / s)))
}

/// Calibrates the hour-`h` regression on the days of `window`, dropping days
/// whose one-week lag falls before the start of the data.
pub fn fit_hour(window: &WindowView<'_>, h: usize) -> Result<HourlyFit> {
    check_hour(h)?;
    let days: Vec<usize> = window.days().filter(|&d| d >= MAX_LAG).collect();
    if days.len() < MIN_CALIBRATION_DAYS {
        return Err(Error::InsufficientHistory(format!(
            "hour {h}: {} usable calibration days, need {MIN_CALIBRATION_DAYS}",
            days.len()
        )));
    }
    let n = days.len();
    let mut design = DMatrix::zeros(n, N_COEFFICIENTS);
    let mut target = DVector::zeros(n);
    for (row, &d) in days.iter().enumerate() {
        let f = features_in_view(window, d, h)?.as_array();
        for (j, v) in f.iter().enumerate() {
            design[(row, j)] = *v;
        }
        target[row] = window.prices(d)?[h - 1];
    }

    // Columns that are identically zero (a weekday absent from a short
    // window) get unit scale and are caught by the rank check.
    let scale: Vec<f64> = (0..N_COEFFICIENTS)
        .map(|j| {
            let m = design.column(j).amax();
            if m > 0.0 { m } else { 1.0 }
        })
        .collect();
    let (beta, regularized) = match qr_least_squares(&design, &target, &scale) {
        Some(b) => (b, false),
        None => match ridge_least_squares(&design, &target, &scale) {
            Some(b) => (b, true),
            None => {
                return Err(Error::Calibration {
                    hour: h,
                    message: "design matrix is rank deficient even with ridge penalty".into(),
                })
            }
        },
    };
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Calibration {
            hour: h,
            message: "non-finite coefficient".into(),
        });
    }
    let fitted = &design * &beta;
    let mut coefficients = [0.0; N_COEFFICIENTS];
    coefficients.copy_from_slice(beta.as_slice());
    Ok(HourlyFit {
        params: ExpertModelParams {
            hour: h,
            coefficients,
            calibration_window_length: window.len(),
        },
        days,
        design,
        target,
        fitted,
        regularized,
    })
}

pub fn calibrate(window: &WindowView<'_>, h: usize) -> Result<ExpertModelParams> {
    fit_hour(window, h).map(|f| f.params)
}

/// Point forecasts of one day from every pool member, one row per member.
#[derive(Debug, Clone, PartialEq)]
pub struct PointForecastSet {
    pub day: usize,
    pub window_lengths: Vec<usize>,
    pub values: Vec<[f64; HOURS]>,
}

impl PointForecastSet {
    pub fn n_variants(&self) -> usize {
        self.values.len()
    }

    /// Row of the member calibrated on `length` days.
    pub fn variant(&self, length: usize) -> Option<&[f64; HOURS]> {
        self.window_lengths
            .iter()
            .position(|&l| l == length)
            .map(|i| &self.values[i])
    }

    /// Equal-weight average of all members.
    pub fn mean(&self) -> [f64; HOURS] {
        let mut out = [0.0; HOURS];
        for row in &self.values {
            for h in 0..HOURS {
                out[h] += row[h];
            }
        }
        let n = self.values.len() as f64;
        out.map(|v| v / n)
    }
}

/// A calibrated pool: 24 hourly models for each window length.
#[derive(Debug, Clone)]
pub struct PoolModel {
    pub window_lengths: Vec<usize>,
    pub params: Vec<Vec<ExpertModelParams>>,
    /// Members that failed to calibrate, with the reason.
    pub failures: Vec<(usize, String)>,
}

impl PoolModel {
    /// Calibrates every member on the trailing window that ends at `end_day`.
    /// A member whose calibration fails is dropped and reported in
    /// `failures`.
    pub fn calibrate(series: &MarketSeries, end_day: usize, window_lengths: &[usize]) -> Result<Self> {
        if window_lengths.is_empty() {
            return Err(Error::Argument("empty pool of window lengths".into()));
        }
        let mut pool = PoolModel {
            window_lengths: Vec::new(),
            params: Vec::new(),
            failures: Vec::new(),
        };
        for &len in window_lengths {
            let member = window(series, end_day, len)
                .and_then(|w| (1..=HOURS).map(|h| calibrate(&w, h)).collect::<Result<Vec<_>>>());
            match member {
                Ok(params) => {
                    pool.window_lengths.push(len);
                    pool.params.push(params);
                }
                Err(e) => pool.failures.push((len, e.to_string())),
            }
        }
        Ok(pool)
    }

    pub fn forecast(&self, input: &ForecastInput<'_>) -> Result<PointForecastSet> {
        let features = (1..=HOURS).map(|h| input.features(h)).collect::<Result<Vec<_>>>()?;
        let values = self
            .params
            .iter()
            .map(|member| {
                let mut row = [0.0; HOURS];
                for (h, p) in member.iter().enumerate() {
                    row[h] = predict(p, &features[h]);
                }
                row
            })
            .collect();
        Ok(PointForecastSet {
            day: input.target_day(),
            window_lengths: self.window_lengths.clone(),
            values,
        })
    }

    /// Coefficient dump: `hour,window_length,b1..b14`.
    pub fn write_coefficients_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["hour".to_string(), "window_length".to_string()];
        header.extend((1..=N_COEFFICIENTS).map(|j| format!("b{j}")));
        w.write_record(&header)?;
        for (len, member) in self.window_lengths.iter().zip(&self.params) {
            for p in member {
                let mut row = vec![p.hour.to_string(), len.to_string()];
                row.extend(p.coefficients.iter().map(|c| c.to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Calibrates each pool member on the window ending the day before `d` and
/// forecasts all 24 hours of day `d`.
pub fn forecast_pool(series: &MarketSeries, d: usize, window_lengths: &[usize]) -> Result<(PointForecastSet, Vec<(usize, String)>)> {
    let longest = window_lengths.iter().copied().max().unwrap_or(0);
    if d < longest {
        return Err(Error::InsufficientHistory(format!(
            "day {d} precedes the longest pool window of {longest} days"
        )));
    }
    let pool = PoolModel::calibrate(series, d - 1, window_lengths)?;
    let input = ForecastInput::new(series, d)?;
    let set = pool.forecast(&input)?;
    Ok((set, pool.failures))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{synth_generate, Regime};
    use chrono::NaiveDate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constant_series(n: usize, price: f64, load: f64) -> MarketSeries {
        MarketSeries::new(
            NaiveDate::from_ymd_opt(2020, 1, 6).unwrap(),
            vec![[price; HOURS]; n],
            vec![[load; HOURS]; n],
        )
        .unwrap()
    }

    fn true_betas() -> Vec<[f64; N_COEFFICIENTS]> {
        (0..HOURS)
            .map(|h| {
                let hf = h as f64;
                [
                    0.35 + 0.005 * hf,
                    0.15,
                    0.1,
                    0.05,
                    0.06,
                    0.04,
                    0.01,
                    3.0 + 0.1 * hf,
                    4.0,
                    4.5,
                    3.5,
                    2.0,
                    -1.0,
                    -2.0,
                ]
            })
            .collect()
    }

    /// Series produced exactly by the expert recursion with zero noise.
    fn expert_series(n: usize, seed: u64) -> MarketSeries {
        let betas = true_betas();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = NaiveDate::from_ymd_opt(2020, 1, 6).unwrap();
        let mut prices: Vec<[f64; HOURS]> = Vec::new();
        let loads: Vec<[f64; HOURS]> = (0..n)
            .map(|_| std::array::from_fn(|_| rng.random_range(500.0..1500.0)))
            .collect();
        for d in 0..n {
            if d < MAX_LAG {
                prices.push(std::array::from_fn(|_| rng.random_range(20.0..60.0)));
                continue;
            }
            let partial = MarketSeries::new(start, {
                let mut p = prices.clone();
                p.push([0.0; HOURS]);
                p
            }, loads[..=d].to_vec())
            .unwrap();
            let row = std::array::from_fn(|h| {
                let f = build_features(&partial, d, h + 1).unwrap().as_array();
                betas[h].iter().zip(f).map(|(b, x)| b * x).sum()
            });
            prices.push(row);
        }
        MarketSeries::new(start, prices, loads).unwrap()
    }

    #[test]
    fn constant_series_features() {
        let s = constant_series(20, 50.0, 100.0);
        let f = build_features(&s, 12, 5).unwrap();
        for v in [f.y_lag1, f.y_lag2, f.y_lag7, f.y_eod, f.y_max_prev, f.y_min_prev] {
            assert_eq!(v, 50.0);
        }
        assert_eq!(f.load, 100.0);
        assert_eq!(f.weekday.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn lag_seven_reads_day_zero() {
        let mut prices = vec![[1.0; HOURS]; 10];
        prices[0][0] = 99.0;
        let s = MarketSeries::new(NaiveDate::from_ymd_opt(2020, 1, 6).unwrap(), prices, vec![[1.0; HOURS]; 10]).unwrap();
        assert_eq!(build_features(&s, 7, 1).unwrap().y_lag7, 99.0);
        assert!(matches!(build_features(&s, 6, 1), Err(Error::InsufficientHistory(_))));
    }

    #[test]
    fn previous_day_extremes() {
        let mut prices = vec![[0.0; HOURS]; 10];
        prices[8] = std::array::from_fn(|h| 10.0 * (h + 1) as f64);
        let s = MarketSeries::new(NaiveDate::from_ymd_opt(2020, 1, 6).unwrap(), prices, vec![[1.0; HOURS]; 10]).unwrap();
        let f = build_features(&s, 9, 3).unwrap();
        assert_eq!((f.y_max_prev, f.y_min_prev, f.y_eod), (240.0, 10.0, 240.0));
    }

    #[test]
    fn recovers_zero_noise_coefficients() {
        let s = expert_series(400, 7);
        let truth = true_betas();
        let w = window(&s, 399, 364).unwrap();
        for h in [1, 8, 19, 23] {
            let fit = fit_hour(&w, h).unwrap();
            assert!(!fit.regularized);
            for (est, t) in fit.params.coefficients.iter().zip(truth[h - 1]) {
                assert!((est - t).abs() < 1e-6, "hour {h}: {est} vs {t}");
            }
        }
        // At hour 24 the same-hour lag and the end-of-day price coincide, so
        // only their sum is identified; the ridge fallback still reproduces
        // the data.
        let fit = fit_hour(&w, 24).unwrap();
        assert!(fit.regularized);
        let c = fit.params.coefficients;
        assert!((c[0] + c[3] - truth[23][0] - truth[23][3]).abs() < 1e-5);
        let r = fit.residuals();
        assert!(r.amax() < 1e-5 * fit.target.amax());
    }

    #[test]
    fn constant_prices_are_reproduced() {
        for c in [50.0, -12.5] {
            let s = constant_series(120, c, 100.0);
            let w = window(&s, 119, 100).unwrap();
            let fit = fit_hour(&w, 4).unwrap();
            assert!(fit.regularized);
            for v in fit.fitted.iter() {
                assert!((v - c).abs() < 1e-6 * c.abs().max(1.0), "{v} vs {c}");
            }
        }
    }

    #[test]
    fn short_window_is_rejected() {
        let s = synth_generate(60, 1, Regime::LowVolatility).unwrap();
        let w = window(&s, 35, 35).unwrap();
        assert!(matches!(calibrate(&w, 1), Err(Error::InsufficientHistory(_))));
    }

    #[test]
    fn predict_is_a_dot_product() {
        let s = constant_series(10, 50.0, 100.0);
        let mut f = build_features(&s, 8, 1).unwrap();
        let mut params = ExpertModelParams {
            hour: 1,
            coefficients: [0.0; N_COEFFICIENTS],
            calibration_window_length: 1,
        };
        assert_eq!(predict(&params, &f), 0.0);
        params.coefficients[3] = 1.0;
        f.y_eod = 77.0;
        assert_eq!(predict(&params, &f), 77.0);
    }

    #[test]
    fn in_sample_prediction_matches_fitted() {
        let s = synth_generate(300, 4, Regime::HighVolatility).unwrap();
        let w = window(&s, 299, 200).unwrap();
        let fit = fit_hour(&w, 17).unwrap();
        for (row, &d) in fit.days.iter().enumerate().step_by(37) {
            let p = predict(&fit.params, &build_features(&s, d, 17).unwrap());
            assert!((p - fit.fitted[row]).abs() < 1e-9 * p.abs().max(1.0));
        }
    }

    #[test]
    fn residuals_are_orthogonal_to_design() {
        let s = synth_generate(400, 9, Regime::Spiky).unwrap();
        let w = window(&s, 399, 364).unwrap();
        for h in 1..=HOURS {
            let fit = fit_hour(&w, h).unwrap();
            let r = fit.residuals();
            for j in 0..N_COEFFICIENTS {
                let col = fit.design.column(j);
                let scale = col.norm() * fit.target.norm();
                assert!(col.dot(&r).abs() < 1e-8 * scale, "hour {h} column {j}");
            }
        }
    }

    #[test]
    fn prediction_is_linear_in_continuous_features() {
        let s = synth_generate(200, 2, Regime::LowVolatility).unwrap();
        let params = calibrate(&window(&s, 199, 150).unwrap(), 10).unwrap();
        let f1 = build_features(&s, 150, 10).unwrap();
        let f2 = build_features(&s, 170, 10).unwrap();
        let (a, b) = (0.7, -1.3);
        let strip = |f: &ExpertFeatures| ExpertFeatures { weekday: [0.0; 7], ..*f };
        let (g1, g2) = (strip(&f1), strip(&f2));
        let arr1 = g1.as_array();
        let arr2 = g2.as_array();
        let comb = ExpertFeatures {
            y_lag1: a * arr1[0] + b * arr2[0],
            y_lag2: a * arr1[1] + b * arr2[1],
            y_lag7: a * arr1[2] + b * arr2[2],
            y_eod: a * arr1[3] + b * arr2[3],
            y_max_prev: a * arr1[4] + b * arr2[4],
            y_min_prev: a * arr1[5] + b * arr2[5],
            load: a * arr1[6] + b * arr2[6],
            weekday: [0.0; 7],
        };
        let lhs = predict(&params, &comb);
        let rhs = a * predict(&params, &g1) + b * predict(&params, &g2);
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn shifted_constant_series_fits_shifted_constant() {
        let base = constant_series(120, 30.0, 200.0);
        let shifted = constant_series(120, 30.0 + 15.0, 200.0);
        for (s, c) in [(&base, 30.0), (&shifted, 45.0)] {
            let fit = fit_hour(&window(s, 119, 90).unwrap(), 12).unwrap();
            assert!(fit.fitted.iter().all(|v| (v - c).abs() < 1e-6 * c));
        }
    }

    #[test]
    fn pool_shapes_and_agreement() {
        let s = synth_generate(400, 3, Regime::LowVolatility).unwrap();
        let (set, failures) = forecast_pool(&s, 380, &[364]).unwrap();
        assert!(failures.is_empty());
        assert_eq!((set.n_variants(), set.day), (1, 380));

        let exact = expert_series(420, 13);
        let (set, _) = forecast_pool(&exact, 410, &[56, 112, 364]).unwrap();
        for h in 0..HOURS {
            let first = set.values[0][h];
            for row in &set.values[1..] {
                assert!((row[h] - first).abs() < 1e-6 * first.abs().max(1.0));
            }
        }
    }

    #[test]
    fn pool_members_differ_on_spiky_data() {
        let s = synth_generate(420, 21, Regime::Spiky).unwrap();
        let (set, _) = forecast_pool(&s, 400, &[56, 364]).unwrap();
        assert!(set.values[0].iter().zip(&set.values[1]).any(|(a, b)| a != b));
        assert!(forecast_pool(&s, 300, &[364]).is_err());
    }

    #[test]
    fn forecast_input_cannot_see_target_day_prices() {
        let s = synth_generate(30, 3, Regime::LowVolatility).unwrap();
        let input = ForecastInput::new(&s, 20).unwrap();
        assert!(input.history().prices(20).is_err());
        assert_eq!(input.features(5).unwrap(), build_features(&s, 20, 5).unwrap());
    }

    #[test]
    fn coefficient_dump_has_one_row_per_hour_and_member() {
        let s = synth_generate(200, 3, Regime::LowVolatility).unwrap();
        let pool = PoolModel::calibrate(&s, 199, &[56, 84]).unwrap();
        let mut buf = Vec::new();
        pool.write_coefficients_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * HOURS);
        assert!(text.starts_with("hour,window_length,b1,"));
    }
}
