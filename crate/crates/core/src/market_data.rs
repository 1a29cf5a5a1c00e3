//! Hourly day-ahead market data: ingestion, dense storage, windowing and a
//! synthetic generator for desk-scale experiments.
//!
//! Everything downstream works on a strict `days x 24` grid. Hours are
//! numbered 1-24 at the API surface and days are 0-based indices from the
//! start of the dataset.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const HOURS: usize = 24;

/// Minimum number of complete days a dataset must hold to support the
/// default 364 + 182 + 1 day rolling experiment.
pub const MIN_DATASET_DAYS: usize = 547;

/// One observation on the hourly grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HourlyRecord {
    pub day_index: usize,
    /// 1..=24
    pub hour: usize,
    pub price: f64,
    pub load_forecast: f64,
}

/// Dense, calendar-aligned matrix of hourly prices and day-ahead load
/// forecasts. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSeries {
    start_date: NaiveDate,
    prices: Vec<[f64; HOURS]>,
    loads: Vec<[f64; HOURS]>,
}

impl MarketSeries {
    pub fn new(
        start_date: NaiveDate,
        prices: Vec<[f64; HOURS]>,
        loads: Vec<[f64; HOURS]>,
    ) -> Result<Self> {
        if prices.len() != loads.len() {
            return Err(Error::Argument(format!(
                "price matrix has {} days but load matrix has {}",
                prices.len(),
                loads.len()
            )));
        }
        if prices.is_empty() {
            return Err(Error::Argument("market series must hold at least one day".into()));
        }
        for (d, (p, l)) in prices.iter().zip(&loads).enumerate() {
            for h in 0..HOURS {
                if !p[h].is_finite() {
                    return Err(Error::Integrity(format!("non-finite price at day {d}, hour {}", h + 1)));
                }
                if !l[h].is_finite() || l[h] < 0.0 {
                    return Err(Error::Integrity(format!(
                        "load forecast must be finite and non-negative at day {d}, hour {}",
                        h + 1
                    )));
                }
            }
        }
        Ok(Self {
            start_date,
            prices,
            loads,
        })
    }

    pub fn n_days(&self) -> usize {
        self.prices.len()
    }

    pub fn start_date(&self) -> NaiveDate {
        self.start_date
    }

    /// ISO weekday of day 0, Monday = 1 ... Sunday = 7.
    pub fn start_weekday(&self) -> u8 {
        self.start_date.weekday().number_from_monday() as u8
    }

    /// Weekday of `day` as a 0-based dummy index (Monday = 0).
    pub fn weekday_index(&self, day: usize) -> usize {
        (self.start_weekday() as usize - 1 + day) % 7
    }

    pub fn date_of(&self, day: usize) -> NaiveDate {
        self.start_date + Duration::days(day as i64)
    }

    pub fn day_prices(&self, day: usize) -> &[f64; HOURS] {
        &self.prices[day]
    }

    pub fn day_loads(&self, day: usize) -> &[f64; HOURS] {
        &self.loads[day]
    }

    /// Price at `(day, hour)` with `hour` in 1..=24.
    pub fn price(&self, day: usize, hour: usize) -> f64 {
        self.prices[day][hour - 1]
    }

    pub fn load(&self, day: usize, hour: usize) -> f64 {
        self.loads[day][hour - 1]
    }

    pub fn records(&self) -> impl Iterator<Item = HourlyRecord> + '_ {
        (0..self.n_days()).flat_map(move |d| {
            (1..=HOURS).map(move |h| HourlyRecord {
                day_index: d,
                hour: h,
                price: self.price(d, h),
                load_forecast: self.load(d, h),
            })
        })
    }

    /// Copy of the series with one day's prices replaced.
    pub fn with_day_prices(&self, day: usize, prices: [f64; HOURS]) -> Result<Self> {
        let mut out = self.clone();
        if day >= out.n_days() {
            return Err(Error::Bounds(format!("day {day} beyond series of {} days", out.n_days())));
        }
        out.prices[day] = prices;
        Self::new(out.start_date, out.prices, out.loads)
    }

    /// First `n_days` days of the series.
    pub fn truncated(&self, n_days: usize) -> Result<Self> {
        if n_days == 0 || n_days > self.n_days() {
            return Err(Error::Bounds(format!(
                "cannot truncate {} days to {n_days}",
                self.n_days()
            )));
        }
        Ok(Self {
            start_date: self.start_date,
            prices: self.prices[..n_days].to_vec(),
            loads: self.loads[..n_days].to_vec(),
        })
    }

    /// Writes the normalized dense CSV (`timestamp,price,load_forecast`).
    pub fn write_csv<W: Write>(&self, out: W, delimiter: u8) -> Result<()> {
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(out);
        w.write_record(["timestamp", "price", "load_forecast"])?;
        for rec in self.records() {
            let ts = self
                .date_of(rec.day_index)
                .and_hms_opt(rec.hour as u32 - 1, 0, 0)
                .expect("hour in range");
            w.write_record([
                ts.format("%Y-%m-%dT%H:%M:%S").to_string(),
                rec.price.to_string(),
                rec.load_forecast.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn export_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file), b',')
    }
}

/// Read-only view over a contiguous range of days. Any day at or before
/// `last_day` may be read (lags reach back before `first_day`); nothing after
/// `last_day` is reachable, which is how forecasting code is kept causal.
#[derive(Debug, Clone, Copy)]
pub struct WindowView<'a> {
    series: &'a MarketSeries,
    first_day: usize,
    last_day: usize,
}

impl<'a> WindowView<'a> {
    pub fn first_day(&self) -> usize {
        self.first_day
    }

    pub fn last_day(&self) -> usize {
        self.last_day
    }

    pub fn len(&self) -> usize {
        self.last_day - self.first_day + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn days(&self) -> std::ops::RangeInclusive<usize> {
        self.first_day..=self.last_day
    }

    fn check(&self, day: usize) -> Result<()> {
        if day > self.last_day {
            Err(Error::Bounds(format!(
                "day {day} lies after the end of the visible history (day {})",
                self.last_day
            )))
        } else {
            Ok(())
        }
    }

    pub fn prices(&self, day: usize) -> Result<&'a [f64; HOURS]> {
        self.check(day)?;
        Ok(self.series.day_prices(day))
    }

    pub fn loads(&self, day: usize) -> Result<&'a [f64; HOURS]> {
        self.check(day)?;
        Ok(self.series.day_loads(day))
    }

    pub fn weekday_index(&self, day: usize) -> usize {
        self.series.weekday_index(day)
    }
}

/// View covering exactly `length` days that ends at `end_day`.
pub fn window(series: &MarketSeries, end_day: usize, length: usize) -> Result<WindowView<'_>> {
    if length == 0 {
        return Err(Error::Bounds("window length must be positive".into()));
    }
    if end_day >= series.n_days() {
        return Err(Error::Bounds(format!(
            "end day {end_day} beyond series of {} days",
            series.n_days()
        )));
    }
    if end_day + 1 < length {
        return Err(Error::Bounds(format!(
            "window of {length} days ending at day {end_day} starts before day 0"
        )));
    }
    Ok(WindowView {
        series,
        first_day: end_day + 1 - length,
        last_day: end_day,
    })
}

/// Column mapping and parsing options for [`ingest_csv`].
#[derive(Debug, Clone)]
pub struct IngestSchema {
    pub timestamp_column: String,
    pub price_column: String,
    pub load_column: String,
    pub delimiter: u8,
    /// Datasets shorter than this are rejected.
    pub min_days: usize,
}

impl Default for IngestSchema {
    fn default() -> Self {
        Self {
            timestamp_column: "timestamp".into(),
            price_column: "price".into(),
            load_column: "load_forecast".into(),
            delimiter: b',',
            min_days: MIN_DATASET_DAYS,
        }
    }
}

fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(raw) {
        return Some(dt.naive_local());
    }
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(raw, f).ok())
}

fn parse_number(raw: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("{what} {raw:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("{what} {raw:?} is not finite"),
        });
    }
    Ok(v)
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &IngestSchema) -> Result<MarketSeries> {
    let file = std::fs::File::open(path)?;
    ingest_reader(std::io::BufReader::new(file), schema)
}

/// Parses hourly rows into a dense series.
///
/// A single missing hour (the spring DST transition, or an isolated gap) is
/// filled with the mean of its neighbours on the continuous timeline; repeated
/// hours (autumn DST) are averaged. Two or more consecutive missing hours are
/// an integrity error.
pub fn ingest_reader<R: Read>(reader: R, schema: &IngestSchema) -> Result<MarketSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let col = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column {name:?}"),
        })
    };
    let (ts_col, price_col, load_col) = (
        col(&schema.timestamp_column)?,
        col(&schema.price_column)?,
        col(&schema.load_column)?,
    );

    // (date) -> per-hour accumulated (price sum, load sum, count)
    let mut cells: BTreeMap<NaiveDate, [(f64, f64, u32); HOURS]> = BTreeMap::new();
    for result in rdr.records() {
        let record = result.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| {
            record.get(i).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing field {}", i + 1),
            })
        };
        let raw_ts = field(ts_col)?;
        let ts = parse_timestamp(raw_ts).ok_or_else(|| Error::Parse {
            line,
            message: format!("unrecognised timestamp {raw_ts:?}"),
        })?;
        let price = parse_number(field(price_col)?, line, "price")?;
        let load = parse_number(field(load_col)?, line, "load forecast")?;
        if load < 0.0 {
            return Err(Error::Parse {
                line,
                message: format!("negative load forecast {load}"),
            });
        }
        let slot = &mut cells.entry(ts.date()).or_insert([(0.0, 0.0, 0); HOURS])[ts.hour() as usize];
        slot.0 += price;
        slot.1 += load;
        slot.2 += 1;
    }

    let (Some(&first), Some(&last)) = (cells.keys().next(), cells.keys().next_back()) else {
        return Err(Error::InsufficientData {
            needed: schema.min_days.max(1),
            got: 0,
        });
    };
    let n_days = (last - first).num_days() as usize + 1;
    let mut flat: Vec<Option<(f64, f64)>> = Vec::with_capacity(n_days * HOURS);
    for d in 0..n_days {
        let date = first + Duration::days(d as i64);
        match cells.get(&date) {
            Some(day) => flat.extend(day.iter().map(|&(p, l, c)| {
                (c > 0).then(|| (p / c as f64, l / c as f64))
            })),
            None => flat.extend(std::iter::repeat_n(None, HOURS)),
        }
    }

    let mut i = 0;
    while i < flat.len() {
        if flat[i].is_some() {
            i += 1;
            continue;
        }
        let run_start = i;
        while i < flat.len() && flat[i].is_none() {
            i += 1;
        }
        let run = i - run_start;
        let date = first + Duration::days((run_start / HOURS) as i64);
        if run > 1 {
            return Err(Error::Integrity(format!(
                "{run} consecutive hours missing starting {date} hour {}",
                run_start % HOURS
            )));
        }
        let prev = run_start.checked_sub(1).and_then(|j| flat[j]);
        let next = flat.get(run_start + 1).copied().flatten();
        flat[run_start] = match (prev, next) {
            (Some(a), Some(b)) => Some(((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0)),
            (Some(a), None) | (None, Some(a)) => Some(a),
            (None, None) => unreachable!("isolated gap has a neighbour"),
        };
    }

    if n_days < schema.min_days {
        return Err(Error::InsufficientData {
            needed: schema.min_days,
            got: n_days,
        });
    }

    let mut prices = vec![[0.0; HOURS]; n_days];
    let mut loads = vec![[0.0; HOURS]; n_days];
    for (k, cell) in flat.into_iter().enumerate() {
        let (p, l) = cell.expect("gaps filled");
        prices[k / HOURS][k % HOURS] = p;
        loads[k / HOURS][k % HOURS] = l;
    }
    MarketSeries::new(first, prices, loads)
}

/// Volatility profile of the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    LowVolatility,
    HighVolatility,
    Spiky,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::LowVolatility => "low",
            Regime::HighVolatility => "high",
            Regime::Spiky => "spiky",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" | "low-volatility" => Ok(Regime::LowVolatility),
            "high" | "high-volatility" => Ok(Regime::HighVolatility),
            "spiky" => Ok(Regime::Spiky),
            other => Err(Error::Argument(format!(
                "unknown regime {other:?} (expected low, high or spiky)"
            ))),
        }
    }
}

struct RegimeProfile {
    level: f64,
    level_persistence: f64,
    level_innovation: f64,
    amplitude: f64,
    hourly_sd: f64,
    spike_probability: f64,
}

impl Regime {
    fn profile(self) -> RegimeProfile {
        match self {
            Regime::LowVolatility => RegimeProfile {
                level: 40.0,
                level_persistence: 0.9,
                level_innovation: 2.5,
                amplitude: 12.0,
                hourly_sd: 2.0,
                spike_probability: 0.0,
            },
            Regime::HighVolatility => RegimeProfile {
                level: 70.0,
                level_persistence: 0.95,
                level_innovation: 9.0,
                amplitude: 30.0,
                hourly_sd: 7.0,
                spike_probability: 0.0,
            },
            Regime::Spiky => RegimeProfile {
                level: 50.0,
                level_persistence: 0.9,
                level_innovation: 4.0,
                amplitude: 18.0,
                hourly_sd: 3.5,
                spike_probability: 0.006,
            },
        }
    }
}

/// Stylised intraday shape: night trough around hour 4, morning and evening peaks.
fn daily_shape(hour: usize) -> f64 {
    let h = hour as f64;
    -0.6 * (2.0 * std::f64::consts::PI * (h - 4.0) / 24.0).cos()
        + 0.5 * (-(h - 19.0).powi(2) / 8.0).exp()
        + 0.35 * (-(h - 9.0).powi(2) / 6.0).exp()
}

const WEEKDAY_SHIFT: [f64; 7] = [0.0, 1.0, 1.0, 0.5, -1.0, -6.0, -10.0];

/// Deterministic synthetic market: sinusoidal daily shape, weekly level
/// shift, autoregressive daily level and hourly noise, plus regime-specific
/// spikes. Day 0 is 2015-01-01.
pub fn synth_generate(n_days: usize, seed: u64, regime: Regime) -> Result<MarketSeries> {
    if n_days == 0 {
        return Err(Error::Argument("n_days must be at least 1".into()));
    }
    let p = regime.profile();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let start = NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid date");
    let start_weekday = start.weekday().num_days_from_monday() as usize;

    let mut level_dev = 0.0;
    let mut hourly_noise = 0.0;
    let mut prices = Vec::with_capacity(n_days);
    let mut loads = Vec::with_capacity(n_days);
    for d in 0..n_days {
        let weekday = (start_weekday + d) % 7;
        level_dev = p.level_persistence * level_dev + p.level_innovation * std_normal.sample(&mut rng);
        let mut day_p = [0.0; HOURS];
        let mut day_l = [0.0; HOURS];
        for h in 1..=HOURS {
            let shape = daily_shape(h);
            let load_noise = 600.0 * std_normal.sample(&mut rng);
            let load = 50_000.0 * (1.0 + 0.22 * shape) - 250.0 * WEEKDAY_SHIFT[weekday].abs() + load_noise;
            hourly_noise = 0.6 * hourly_noise + p.hourly_sd * std_normal.sample(&mut rng);
            let mut price = p.level
                + level_dev
                + WEEKDAY_SHIFT[weekday] * p.amplitude / 12.0
                + p.amplitude * shape
                + 0.0015 * load_noise
                + hourly_noise;
            if p.spike_probability > 0.0 && rng.random::<f64>() < p.spike_probability {
                let magnitude = rng.random_range(6.0..15.0) * p.hourly_sd * 3.0;
                price += if rng.random::<f64>() < 0.3 { -magnitude } else { magnitude };
            }
            day_p[h - 1] = price;
            day_l[h - 1] = load.max(0.0);
        }
        prices.push(day_p);
        loads.push(day_l);
    }
    MarketSeries::new(start, prices, loads)
}
