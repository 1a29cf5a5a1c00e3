//! Quantile-based battery trading, the price-taker benchmark and settlement.
//!
//! The battery holds 0, 1 or 2 blocks at each day boundary. Each day one
//! limit bid (buy) is placed at the cheapest forecast hour `h1` and one limit
//! offer (sell) at the dearest hour `h2`. An empty battery additionally buys
//! at market before `h2`; a full one additionally sells at market.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval_metrics::{Alpha, TradingHours};
use crate::market_data::HOURS;
use crate::prob_models::QuantileForecast;

pub const SELL_FACTOR: f64 = 0.9;
pub const BUY_FACTOR: f64 = 1.0 / 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BatteryState(u8);

impl BatteryState {
    pub const EMPTY: BatteryState = BatteryState(0);
    pub const HALF: BatteryState = BatteryState(1);
    pub const FULL: BatteryState = BatteryState(2);

    pub fn new(level: i32) -> Result<Self> {
        if (0..=2).contains(&level) {
            Ok(BatteryState(level as u8))
        } else {
            Err(Error::InvariantViolation(format!("battery level {level} outside {{0, 1, 2}}")))
        }
    }

    pub fn level(self) -> i32 {
        i32::from(self.0)
    }
}

impl fmt::Display for BatteryState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Where a full battery's extra market sale may go.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SellTiming {
    BeforeH2,
    BeforeH1,
}

impl FromStr for SellTiming {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "before_h2" => Ok(SellTiming::BeforeH2),
            "before_h1" => Ok(SellTiming::BeforeH1),
            other => Err(Error::Argument(format!("unknown sell timing '{other}' (before_h2 | before_h1)"))),
        }
    }
}

impl fmt::Display for SellTiming {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SellTiming::BeforeH2 => "before_h2",
            SellTiming::BeforeH1 => "before_h1",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyConfig {
    pub alpha: Alpha,
    pub sell_factor: f64,
    pub buy_factor: f64,
    pub transaction_mwh: f64,
    pub capacity_mwh: f64,
    pub sell_timing: SellTiming,
}

impl StrategyConfig {
    pub fn new(alpha: Alpha) -> Self {
        StrategyConfig {
            alpha,
            sell_factor: SELL_FACTOR,
            buy_factor: BUY_FACTOR,
            transaction_mwh: 1.0,
            capacity_mwh: 2.5,
            sell_timing: SellTiming::BeforeH2,
        }
    }
}

/// Limit price of an order; `Unlimited` always executes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Limit {
    Price(f64),
    Unlimited,
}

impl fmt::Display for Limit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Limit::Price(p) => write!(f, "{p}"),
            Limit::Unlimited => f.write_str("market"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DailyOrders {
    pub hours: TradingHours,
    /// Buy at `h1`; `None` when a full battery cannot fit another block.
    pub bid: Option<Limit>,
    /// Sell at `h2`; `None` when an empty battery has nothing to sell.
    pub offer: Option<Limit>,
    pub forced_buy_hour: Option<usize>,
    pub forced_sell_hour: Option<usize>,
    /// The median curve was flat, so `h2` is the best hour other than `h1`.
    pub degenerate_hours: bool,
    /// A forced order was required but no eligible hour existed.
    pub forced_skipped: bool,
}

fn argmin_earliest<I: Iterator<Item = usize>>(hours: I, v: &[f64; HOURS]) -> Option<usize> {
    hours.fold(None, |best: Option<usize>, h| match best {
        Some(b) if v[b - 1] <= v[h - 1] => Some(b),
        _ => Some(h),
    })
}

fn argmax_earliest<I: Iterator<Item = usize>>(hours: I, v: &[f64; HOURS]) -> Option<usize> {
    hours.fold(None, |best: Option<usize>, h| match best {
        Some(b) if v[b - 1] >= v[h - 1] => Some(b),
        _ => Some(h),
    })
}

/// `h1` = earliest minimum, `h2` = earliest maximum. On a flat curve both
/// coincide; `h2` then becomes the earliest maximum among the other hours and
/// the day is flagged degenerate.
pub fn choose_hours(median: &[f64; HOURS]) -> (TradingHours, bool) {
    let h1 = argmin_earliest(1..=HOURS, median).expect("24 hours");
    let h2 = argmax_earliest(1..=HOURS, median).expect("24 hours");
    if h1 != h2 {
        return (TradingHours { h1, h2 }, false);
    }
    let h2 = argmax_earliest((1..=HOURS).filter(|&h| h != h1), median).expect("23 hours");
    (TradingHours { h1, h2 }, true)
}

/// Orders of the quantile strategy. `median` is the median forecast of all
/// 24 hours; `qf_h1` and `qf_h2` are the forecasts of the chosen hours.
pub fn build_orders(
    qf_h1: &QuantileForecast,
    qf_h2: &QuantileForecast,
    state: BatteryState,
    median: &[f64; HOURS],
    config: &StrategyConfig,
) -> Result<DailyOrders> {
    let (hours, degenerate) = choose_hours(median);
    if (qf_h1.hour, qf_h2.hour) != (hours.h1, hours.h2) {
        return Err(Error::Argument(format!(
            "forecasts for hours ({}, {}) do not match trading hours ({}, {})",
            qf_h1.hour, qf_h2.hour, hours.h1, hours.h2
        )));
    }
    let alpha = config.alpha;
    let mut orders = DailyOrders {
        hours,
        bid: Some(Limit::Price(qf_h1.at_percent(alpha.upper_percent()))),
        offer: Some(Limit::Price(qf_h2.at_percent(alpha.lower_percent()))),
        forced_buy_hour: None,
        forced_sell_hour: None,
        degenerate_hours: degenerate,
        forced_skipped: false,
    };
    let eligible = |limit: usize| (1..limit).filter(move |&h| h != hours.h1 && h != hours.h2);
    match state.level() {
        0 => {
            orders.forced_buy_hour = argmin_earliest(eligible(hours.h2), median);
            if orders.forced_buy_hour.is_none() {
                orders.forced_skipped = true;
                orders.offer = None;
            }
        }
        2 => {
            let limit = match config.sell_timing {
                SellTiming::BeforeH2 => hours.h2,
                SellTiming::BeforeH1 => hours.h1,
            };
            orders.forced_sell_hour = argmax_earliest(eligible(limit), median);
            if orders.forced_sell_hour.is_none() {
                orders.forced_skipped = true;
                orders.bid = None;
            }
        }
        _ => {}
    }
    Ok(orders)
}

/// Price-taker orders at the extreme hours of a point forecast.
pub fn benchmark_orders(point_forecast: &[f64; HOURS]) -> DailyOrders {
    let (hours, degenerate) = choose_hours(point_forecast);
    DailyOrders {
        hours,
        bid: Some(Limit::Unlimited),
        offer: Some(Limit::Unlimited),
        forced_buy_hour: None,
        forced_sell_hour: None,
        degenerate_hours: degenerate,
        forced_skipped: false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEntry {
    pub day: usize,
    pub orders: DailyOrders,
    pub bid_accepted: bool,
    pub offer_accepted: bool,
    pub cash_flow: f64,
    pub volume_bought: f64,
    pub volume_sold: f64,
    pub start_state: BatteryState,
    pub end_state: BatteryState,
}

/// Executes one day. Bids clear when the realized price is at or below the
/// limit, offers when it is at or above. Cash accumulates in the order
/// offer, bid, forced buy, forced sell.
pub fn settle(
    day: usize,
    orders: &DailyOrders,
    prices: &[f64; HOURS],
    state: BatteryState,
    config: &StrategyConfig,
) -> Result<LedgerEntry> {
    let price = |h: usize| prices[h - 1];
    let TradingHours { h1, h2 } = orders.hours;
    let bid_accepted = match orders.bid {
        Some(Limit::Price(b)) => price(h1) <= b,
        Some(Limit::Unlimited) => true,
        None => false,
    };
    let offer_accepted = match orders.offer {
        Some(Limit::Price(o)) => price(h2) >= o,
        Some(Limit::Unlimited) => true,
        None => false,
    };
    let (mut cash, mut bought, mut sold, mut level) = (0.0, 0.0, 0.0, state.level());
    if offer_accepted {
        cash += config.sell_factor * price(h2);
        sold += config.sell_factor * config.transaction_mwh;
        level -= 1;
    }
    if bid_accepted {
        cash -= config.buy_factor * price(h1);
        bought += config.buy_factor * config.transaction_mwh;
        level += 1;
    }
    if let Some(h) = orders.forced_buy_hour {
        cash -= config.buy_factor * price(h);
        bought += config.buy_factor * config.transaction_mwh;
        level += 1;
    }
    if let Some(h) = orders.forced_sell_hour {
        cash += config.sell_factor * price(h);
        sold += config.sell_factor * config.transaction_mwh;
        level -= 1;
    }
    let end_state = BatteryState::new(level)
        .map_err(|e| Error::InvariantViolation(format!("day {day}: {e}")))?;
    Ok(LedgerEntry {
        day,
        orders: *orders,
        bid_accepted,
        offer_accepted,
        cash_flow: cash,
        volume_bought: bought,
        volume_sold: sold,
        start_state: state,
        end_state,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TradeLedger {
    pub entries: Vec<LedgerEntry>,
}

impl TradeLedger {
    pub fn push(&mut self, entry: LedgerEntry) {
        self.entries.push(entry);
    }

    pub fn total_cash(&self) -> f64 {
        self.entries.iter().map(|e| e.cash_flow).sum()
    }

    pub fn total_volume(&self) -> f64 {
        self.entries.iter().map(|e| e.volume_bought + e.volume_sold).sum()
    }

    pub fn final_state(&self) -> Option<BatteryState> {
        self.entries.last().map(|e| e.end_state)
    }

    /// Write the ledger as CSV, one row per day.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(LEDGER_HEADER)?;
        for e in &self.entries {
            w.write_record(ledger_record(e))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One ledger row in `LEDGER_HEADER` order.
pub fn ledger_record(e: &LedgerEntry) -> [String; 14] {
    let opt = |v: Option<usize>| v.map(|h| h.to_string()).unwrap_or_default();
    let lim = |v: Option<Limit>| v.map(|l| l.to_string()).unwrap_or_default();
    [
        e.day.to_string(),
        e.orders.hours.h1.to_string(),
        e.orders.hours.h2.to_string(),
        lim(e.orders.bid),
        lim(e.orders.offer),
        u8::from(e.bid_accepted).to_string(),
        u8::from(e.offer_accepted).to_string(),
        opt(e.orders.forced_buy_hour),
        opt(e.orders.forced_sell_hour),
        e.cash_flow.to_string(),
        e.volume_bought.to_string(),
        e.volume_sold.to_string(),
        e.start_state.to_string(),
        e.end_state.to_string(),
    ]
}

pub const LEDGER_HEADER: [&str; 14] = [
    "day",
    "h1",
    "h2",
    "bid",
    "offer",
    "bid_accepted",
    "offer_accepted",
    "forced_buy_hour",
    "forced_sell_hour",
    "cash_flow",
    "volume_bought",
    "volume_sold",
    "start_state",
    "end_state",
];

/// Total cash divided by total traded energy, bought plus sold.
pub fn profit_per_mwh(ledger: &TradeLedger) -> Result<f64> {
    let volume = ledger.total_volume();
    if volume <= 0.0 {
        return Err(Error::UndefinedMetric("no energy traded".into()));
    }
    Ok(ledger.total_cash() / volume)
}
