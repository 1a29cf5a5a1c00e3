//! Probabilistic forecasts as 99 percentiles built on top of point forecasts.
//!
//! Five methods are available: historical simulation (`hs`), conformal
//! prediction (`cp`), Johnson SU errors (`jsu`), quantile regression averaging
//! (`qra`) and its kernel-smoothed variant (`sqra`). HS, CP and JSU are
//! calibrated per hour on the errors of one base point forecast; QRA and SQRA
//! regress realized prices on the whole pool of point forecasts.

pub mod empirical;
pub mod johnson;
pub mod qra;
pub mod sqra;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::market_data::HOURS;
use crate::point_model::PointForecastSet;
use crate::stats::std_dev;

pub use empirical::{cp_half_width, cp_quantiles, hs_quantiles};
pub use johnson::{jsu_fit, jsu_quantile, jsu_quantiles, JsuParams};
pub use qra::{solve_quantile_grid, solve_quantile_regression, Design};
pub use sqra::{default_bandwidth, fit_smoothed};

pub const N_QUANTILES: usize = 99;

/// Minimum number of errors in an [`ErrorSample`].
pub const MIN_ERROR_SAMPLE: usize = 100;

/// Percentile orders 1..=99.
pub fn quantile_percents() -> [usize; N_QUANTILES] {
    std::array::from_fn(|i| i + 1)
}

/// Quantile levels 0.01..=0.99.
pub fn quantile_levels() -> [f64; N_QUANTILES] {
    quantile_percents().map(|k| k as f64 / 100.0)
}

/// Values at percentiles 1..=99, index `k - 1` for percentile `k`.
pub type QuantileCurve = [f64; N_QUANTILES];

/// 99 non-decreasing finite quantiles for one (day, hour).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileForecast {
    pub day: usize,
    pub hour: usize,
    values: QuantileCurve,
}

impl QuantileForecast {
    /// Rearranges `values` into non-decreasing order.
    pub fn new(day: usize, hour: usize, mut values: QuantileCurve) -> Result<Self> {
        if !(1..=HOURS).contains(&hour) {
            return Err(Error::Argument(format!("hour {hour} outside 1..=24")));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvariantViolation(format!(
                "non-finite quantile {v} on day {day} hour {hour}"
            )));
        }
        values.sort_by(f64::total_cmp);
        Ok(QuantileForecast { day, hour, values })
    }

    pub fn values(&self) -> &QuantileCurve {
        &self.values
    }

    /// Value at percentile `k` in 1..=99.
    pub fn at_percent(&self, k: usize) -> f64 {
        self.values[k - 1]
    }

    pub fn median(&self) -> f64 {
        self.values[49]
    }
}

/// Point-forecast errors (realized minus forecast) of one calibration window.
#[derive(Debug, Clone)]
pub struct ErrorSample {
    residuals: Vec<f64>,
    sorted: Vec<f64>,
    sorted_abs: Vec<f64>,
}

impl ErrorSample {
    pub fn new(residuals: Vec<f64>) -> Result<Self> {
        if residuals.len() < MIN_ERROR_SAMPLE {
            return Err(Error::SampleSize {
                needed: MIN_ERROR_SAMPLE,
                got: residuals.len(),
            });
        }
        if residuals.iter().any(|r| !r.is_finite()) {
            return Err(Error::Argument("non-finite forecast error".into()));
        }
        let mut sorted = residuals.clone();
        sorted.sort_by(f64::total_cmp);
        let mut sorted_abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
        sorted_abs.sort_by(f64::total_cmp);
        Ok(ErrorSample {
            residuals,
            sorted,
            sorted_abs,
        })
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn sorted_abs(&self) -> &[f64] {
        &self.sorted_abs
    }

    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Hs,
    Cp,
    Jsu,
    Qra,
    Sqra,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Hs => "hs",
            Method::Cp => "cp",
            Method::Jsu => "jsu",
            Method::Qra => "qra",
            Method::Sqra => "sqra",
        }
    }

    fn uses_pool(self) -> bool {
        matches!(self, Method::Qra | Method::Sqra)
    }
}

/// Which point forecast HS, CP and JSU are centred on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaseForecast {
    /// The pool member calibrated on this many days.
    Window(usize),
    /// Equal-weight average of the pool.
    Average,
}

/// How QRA and SQRA use the 24 hours of the calibration window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QraPooling {
    /// One regression per quantile over all (day, hour) pairs.
    Pooled,
    /// One regression per (hour, quantile).
    PerHour,
}

/// A registry entry.
///
/// Tag grammar: `method[-h][@base][*factor]`, for example `hs@364`,
/// `jsu@avg`, `qra`, `sqra-h`, `cp@avg*2`. `-h` selects per-hour estimation
/// for `qra`/`sqra`; `@base` picks the point forecast for `hs`/`cp`/`jsu`;
/// `*factor` widens every curve around its median by `factor` (used to build
/// deliberately mis-calibrated models).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    pub method: Method,
    pub base: BaseForecast,
    pub pooling: QraPooling,
    pub spread_factor: f64,
}

impl ModelSpec {
    pub fn new(method: Method, base: BaseForecast) -> Self {
        ModelSpec {
            method,
            base,
            pooling: QraPooling::Pooled,
            spread_factor: 1.0,
        }
    }

    pub fn with_pooling(mut self, pooling: QraPooling) -> Self {
        self.pooling = pooling;
        self
    }

    pub fn inflated(mut self, factor: f64) -> Self {
        self.spread_factor = factor;
        self
    }

    /// The nine-model default registry.
    pub fn default_registry() -> Vec<ModelSpec> {
        [
            "hs@364", "cp@364", "jsu@364", "hs@avg", "cp@avg", "jsu@avg", "qra", "sqra", "qra-h",
        ]
        .iter()
        .map(|t| t.parse().expect("valid built-in tag"))
        .collect()
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.method.tag())?;
        if self.method.uses_pool() {
            if self.pooling == QraPooling::PerHour {
                f.write_str("-h")?;
            }
        } else {
            match self.base {
                BaseForecast::Window(len) => write!(f, "@{len}")?,
                BaseForecast::Average => f.write_str("@avg")?,
            }
        }
        if self.spread_factor != 1.0 {
            write!(f, "*{}", self.spread_factor)?;
        }
        Ok(())
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::Argument(format!("invalid model tag '{s}': {why}"));
        let (rest, factor) = match s.split_once('*') {
            Some((r, f)) => {
                let v: f64 = f.trim().parse().map_err(|_| bad("spread factor is not a number"))?;
                if !(v > 0.0 && v.is_finite()) {
                    return Err(bad("spread factor must be positive"));
                }
                (r, v)
            }
            None => (s, 1.0),
        };
        let (head, base) = match rest.split_once('@') {
            Some((h, b)) => (h, Some(b.trim())),
            None => (rest, None),
        };
        let (name, per_hour) = match head.trim().strip_suffix("-h") {
            Some(n) => (n, true),
            None => (head.trim(), false),
        };
        let method = match name.to_ascii_lowercase().as_str() {
            "hs" => Method::Hs,
            "cp" => Method::Cp,
            "jsu" => Method::Jsu,
            "qra" => Method::Qra,
            "sqra" => Method::Sqra,
            _ => return Err(bad("unknown method")),
        };
        if method.uses_pool() && base.is_some() {
            return Err(bad("qra and sqra use the whole pool and take no @base"));
        }
        if !method.uses_pool() && per_hour {
            return Err(bad("-h applies to qra and sqra only"));
        }
        let base = match base {
            None | Some("avg") => BaseForecast::Average,
            Some(b) => BaseForecast::Window(b.parse().map_err(|_| bad("base must be 'avg' or a window length"))?),
        };
        let pooling = if per_hour { QraPooling::PerHour } else { QraPooling::Pooled };
        Ok(ModelSpec::new(method, base).with_pooling(pooling).inflated(factor))
    }
}

/// SQRA bandwidth choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// `1.06 * sd * m^(-1/5)` of the pool-average errors.
    RuleOfThumb,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbSettings {
    pub bandwidth: Bandwidth,
}

impl Default for ProbSettings {
    fn default() -> Self {
        ProbSettings {
            bandwidth: Bandwidth::RuleOfThumb,
        }
    }
}

/// Calibration inputs: the pool forecasts issued for each day of the
/// probabilistic window and the prices later realized on those days.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationData<'a> {
    pub forecasts: &'a [PointForecastSet],
    pub realized: &'a [[f64; HOURS]],
}

#[derive(Debug, Clone)]
enum Fitted {
    Hs(Vec<ErrorSample>),
    Cp(Vec<ErrorSample>),
    Jsu(Vec<JsuParams>),
    /// One coefficient set per group: 1 when pooled, 24 when per hour. Each
    /// set holds 99 vectors `[intercept, b_1, ..]` over `columns`.
    Regression { columns: Vec<usize>, coefficients: Vec<Vec<Vec<f64>>> },
}

/// Calibration artifacts of one registry model.
#[derive(Debug, Clone)]
pub struct CalibratedModel {
    pub spec: ModelSpec,
    fitted: Fitted,
}

fn base_values(set: &PointForecastSet, base: BaseForecast) -> Result<[f64; HOURS]> {
    match base {
        BaseForecast::Average => {
            if set.n_variants() == 0 {
                return Err(Error::Argument(format!("empty point-forecast pool on day {}", set.day)));
            }
            Ok(set.mean())
        }
        BaseForecast::Window(len) => set.variant(len).copied().ok_or_else(|| {
            Error::Argument(format!("pool on day {} has no {len}-day member", set.day))
        }),
    }
}

/// Pool members present on every day of the calibration window.
fn common_columns(forecasts: &[PointForecastSet]) -> Vec<usize> {
    let Some(first) = forecasts.first() else { return Vec::new() };
    first
        .window_lengths
        .iter()
        .copied()
        .filter(|len| forecasts.iter().all(|f| f.variant(*len).is_some()))
        .collect()
}

fn regressors(set: &PointForecastSet, columns: &[usize], h: usize) -> Result<Vec<f64>> {
    let mut row = Vec::with_capacity(columns.len() + 1);
    row.push(1.0);
    for &len in columns {
        let v = set
            .variant(len)
            .ok_or_else(|| Error::Argument(format!("pool on day {} has no {len}-day member", set.day)))?;
        row.push(v[h]);
    }
    Ok(row)
}

/// QRA design with an intercept column. `hours` selects the 0-based hours
/// included (all 24 when pooled).
pub fn regression_data(data: &CalibrationData<'_>, columns: &[usize], hours: &[usize]) -> Result<(Design, Vec<f64>)> {
    let mut rows = Vec::with_capacity(data.forecasts.len() * hours.len());
    let mut y = Vec::with_capacity(rows.capacity());
    for (set, realized) in data.forecasts.iter().zip(data.realized) {
        for &h in hours {
            rows.push(regressors(set, columns, h)?);
            y.push(realized[h]);
        }
    }
    Ok((Design::from_rows(&rows)?, y))
}

/// 99 QRA coefficient vectors on `design`.
pub fn qra_fit(design: &Design, y: &[f64]) -> Result<Vec<Vec<f64>>> {
    if design.n_rows() < 10 * (design.n_cols() - 1).max(1) {
        return Err(Error::SampleSize {
            needed: 10 * (design.n_cols() - 1).max(1),
            got: design.n_rows(),
        });
    }
    Ok(solve_quantile_grid(design, y)?.into_iter().map(|s| s.coefficients).collect())
}

/// 99 SQRA coefficient vectors, each started from the matching QRA solution.
pub fn sqra_fit(design: &Design, y: &[f64], bandwidth: Bandwidth) -> Result<Vec<Vec<f64>>> {
    sqra_fit_from(design, y, bandwidth, &qra_fit(design, y)?)
}

/// As [`sqra_fit`], with the 99 QRA solutions already computed.
pub fn sqra_fit_from(design: &Design, y: &[f64], bandwidth: Bandwidth, qra: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if qra.len() != N_QUANTILES {
        return Err(Error::Argument(format!("{} starting points for {N_QUANTILES} quantiles", qra.len())));
    }
    let h = match bandwidth {
        Bandwidth::Fixed(h) => h,
        Bandwidth::RuleOfThumb => {
            // errors of the equal-weight pool average as the residual proxy
            let errs: Vec<f64> = design
                .rows()
                .zip(y)
                .map(|(r, yi)| yi - r[1..].iter().sum::<f64>() / (r.len() - 1) as f64)
                .collect();
            let sd = std_dev(&errs);
            if !(sd > 0.0) {
                return Err(Error::Fit("zero error spread; bandwidth undefined".into()));
            }
            default_bandwidth(sd, y.len())
        }
    };
    quantile_levels()
        .par_iter()
        .zip(qra.par_iter())
        .map(|(&q, start)| fit_smoothed(design, y, q, h, Some(start)).map(|s| s.coefficients))
        .collect()
}

/// Fits `spec` on the probabilistic calibration window.
pub fn calibrate_model(spec: ModelSpec, data: &CalibrationData<'_>, settings: &ProbSettings) -> Result<CalibratedModel> {
    calibrate_with(spec, data, settings, None)
}

/// Fits every spec of a registry on the same window, in order. Identical
/// to calling [`calibrate_model`] per spec, but the QRA solutions of each
/// pooling mode are computed once and shared by QRA and SQRA entries.
pub fn calibrate_registry(specs: &[ModelSpec], data: &CalibrationData<'_>, settings: &ProbSettings) -> Result<Vec<CalibratedModel>> {
    let mut qra_cache: Vec<(QraPooling, CalibratedModel)> = Vec::new();
    let mut out = Vec::with_capacity(specs.len());
    for &spec in specs {
        if !matches!(spec.method, Method::Qra | Method::Sqra) {
            out.push(calibrate_model(spec, data, settings)?);
            continue;
        }
        let cached = match qra_cache.iter().position(|(p, _)| *p == spec.pooling) {
            Some(i) => i,
            None => {
                let qra_spec = ModelSpec::new(Method::Qra, BaseForecast::Average).with_pooling(spec.pooling);
                qra_cache.push((spec.pooling, calibrate_model(qra_spec, data, settings)?));
                qra_cache.len() - 1
            }
        };
        let qra = &qra_cache[cached].1;
        out.push(match spec.method {
            Method::Qra => CalibratedModel {
                spec,
                fitted: qra.fitted.clone(),
            },
            _ => calibrate_with(spec, data, settings, Some(qra))?,
        });
    }
    Ok(out)
}

/// `qra` is a calibrated QRA model with the same pooling as `spec`, used as
/// the SQRA starting point.
fn calibrate_with(
    spec: ModelSpec,
    data: &CalibrationData<'_>,
    settings: &ProbSettings,
    qra: Option<&CalibratedModel>,
) -> Result<CalibratedModel> {
    if data.forecasts.len() != data.realized.len() {
        return Err(Error::Argument("forecast and realized histories differ in length".into()));
    }
    if data.forecasts.is_empty() {
        return Err(Error::SampleSize { needed: 1, got: 0 });
    }
    let fitted = match spec.method {
        Method::Hs | Method::Cp | Method::Jsu => {
            let mut per_hour: Vec<Vec<f64>> = (0..HOURS).map(|_| Vec::with_capacity(data.forecasts.len())).collect();
            for (set, realized) in data.forecasts.iter().zip(data.realized) {
                let base = base_values(set, spec.base)?;
                for h in 0..HOURS {
                    per_hour[h].push(realized[h] - base[h]);
                }
            }
            let samples = per_hour.into_iter().map(ErrorSample::new).collect::<Result<Vec<_>>>()?;
            match spec.method {
                Method::Hs => Fitted::Hs(samples),
                Method::Cp => Fitted::Cp(samples),
                _ => Fitted::Jsu(
                    samples
                        .par_iter()
                        .enumerate()
                        .map(|(h, s)| {
                            jsu_fit(s).map_err(|e| Error::Calibration {
                                hour: h + 1,
                                message: e.to_string(),
                            })
                        })
                        .collect::<Result<Vec<_>>>()?,
                ),
            }
        }
        Method::Qra | Method::Sqra => {
            let columns = common_columns(data.forecasts);
            if columns.is_empty() {
                return Err(Error::Argument("no pool member is available on every calibration day".into()));
            }
            let groups: Vec<Vec<usize>> = match spec.pooling {
                QraPooling::Pooled => vec![(0..HOURS).collect()],
                QraPooling::PerHour => (0..HOURS).map(|h| vec![h]).collect(),
            };
            let starts = match qra.map(|m| &m.fitted) {
                Some(Fitted::Regression { columns: c, coefficients }) if *c == columns => Some(coefficients),
                _ => None,
            };
            let coefficients = groups
                .par_iter()
                .enumerate()
                .map(|(g, hours)| {
                    let (design, y) = regression_data(data, &columns, hours)?;
                    match (spec.method, starts) {
                        (Method::Qra, _) => qra_fit(&design, &y),
                        (_, Some(starts)) => sqra_fit_from(&design, &y, settings.bandwidth, &starts[g]),
                        (_, None) => sqra_fit(&design, &y, settings.bandwidth),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Fitted::Regression { columns, coefficients }
        }
    };
    Ok(CalibratedModel { spec, fitted })
}

fn inflate(curve: &mut QuantileCurve, factor: f64) {
    if factor == 1.0 {
        return;
    }
    let centre = curve[49];
    for v in curve.iter_mut() {
        *v = centre + factor * (*v - centre);
    }
}

impl CalibratedModel {
    /// Raw curve for hour `h` (0-based) before rearrangement.
    pub fn raw_curve(&self, pool: &PointForecastSet, h: usize) -> Result<QuantileCurve> {
        let spec = self.spec;
        Ok(match &self.fitted {
            Fitted::Hs(s) => hs_quantiles(base_values(pool, spec.base)?[h], &s[h]),
            Fitted::Cp(s) => cp_quantiles(base_values(pool, spec.base)?[h], &s[h]),
            Fitted::Jsu(p) => jsu_quantiles(base_values(pool, spec.base)?[h], &p[h]),
            Fitted::Regression { columns, coefficients } => {
                let x = regressors(pool, columns, h)?;
                let set = if coefficients.len() == 1 { &coefficients[0] } else { &coefficients[h] };
                std::array::from_fn(|k| qra::dot(&x, &set[k]))
            }
        })
    }
}

/// Quantile forecasts for all 24 hours of the pool's day: method curve,
/// rearranged by sorting, then widened by the model's spread factor.
pub fn make_quantile_forecast(model: &CalibratedModel, pool: &PointForecastSet) -> Result<Vec<QuantileForecast>> {
    (0..HOURS)
        .map(|h| {
            let mut curve = model.raw_curve(pool, h)?;
            curve.sort_by(f64::total_cmp);
            inflate(&mut curve, model.spec.spread_factor);
            QuantileForecast::new(pool.day, h + 1, curve)
        })
        .collect()
}
