//! Synthetic signals and prices with controlled statistical properties.
//!
//! Every ticker draws from its own ChaCha stream seeded from the run seed
//! and the ticker name, so output does not depend on which other tickers
//! are generated or on the worker count.

use chrono::{Datelike, Days, NaiveDate, NaiveTime, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{holding_return, Bar, PriceSeries, PriceUniverse, TradingCalendar};
use crate::par::{self, Workers};
use crate::signal_store::{SignalRecord, MAX_HORIZON};

/// Creation time stamped on generated signals: after the close, before the
/// next open.
pub const CREATION_TIME: NaiveTime = match NaiveTime::from_hms_opt(16, 30, 0) {
    Some(t) => t,
    None => unreachable!(),
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    /// Probability that a direction matches the realized sign. `None`
    /// draws directions independently of prices.
    pub target_accuracy: Option<f64>,
    pub horizons: Vec<u8>,
    pub seed: u64,
    pub flat_share: f64,
    /// Holding period (sessions after entry) whose realized sign calibrated
    /// signals are matched against.
    pub calibration_holding: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            target_accuracy: None,
            horizons: vec![1],
            seed: 0,
            flat_share: 0.0,
            calibration_holding: 0,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.target_accuracy.is_some_and(|p| !unit(p)) {
            return Err(Error::InvalidParams("target_accuracy outside [0, 1]".into()));
        }
        if !unit(self.flat_share) {
            return Err(Error::InvalidParams("flat_share outside [0, 1]".into()));
        }
        if self.horizons.is_empty() || self.horizons.iter().any(|h| !(1..=MAX_HORIZON).contains(h)) {
            return Err(Error::InvalidParams(format!(
                "horizons must be a non-empty subset of 1..={MAX_HORIZON}"
            )));
        }
        Ok(())
    }
}

/// Seed of `name`'s stream under `seed` (FNV-1a over the name, mixed with the seed).
pub fn stream_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn rng_for(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, name))
}

fn magnitude(rng: &mut ChaCha8Rng) -> f64 {
    // two decimals, away from zero
    (rng.random_range(0.2..3.6) * 100.0_f64).round() / 100.0
}

fn ticker_signals(
    series: &PriceSeries,
    calendar: &TradingCalendar,
    spec: &GeneratorSpec,
) -> Vec<SignalRecord> {
    let mut rng = rng_for(spec.seed, &series.ticker);
    let sessions = calendar.sessions();
    let mut out = Vec::new();
    for day in series.dates() {
        let Some(i) = calendar.index_of(day) else { continue };
        for &h in &spec.horizons {
            let Some(&target) = sessions.get(i + usize::from(h)) else { continue };
            // draws happen in a fixed order whether or not they are used
            let flat = rng.random_bool(spec.flat_share);
            let coin_up = rng.random_bool(0.5);
            let agree = rng.random::<f64>();
            let size = magnitude(&mut rng);
            let up = match spec.target_accuracy {
                None => coin_up,
                Some(p) => match holding_return(series, day, spec.calibration_holding) {
                    Ok(r) if r != 0.0 => (r > 0.0) == (agree < p),
                    _ => coin_up,
                },
            };
            let forecast = if flat {
                0.0
            } else if up {
                size
            } else {
                -size
            };
            out.push(SignalRecord {
                created_at: day.and_time(CREATION_TIME),
                ticker: series.ticker.clone(),
                target_date: target,
                forecast_return: forecast,
                horizon: h,
            });
        }
    }
    out
}

/// Signals whose directions ignore prices: one per session and horizon for
/// every ticker, with equal up/down probability.
pub fn random_signals(prices: &PriceUniverse, spec: &GeneratorSpec, workers: Workers) -> Result<Vec<SignalRecord>> {
    let spec = GeneratorSpec {
        target_accuracy: None,
        ..spec.clone()
    };
    generate(prices, &spec, workers)
}

/// Signals whose direction matches the realized sign of the
/// `calibration_holding` return with probability `target_accuracy`.
/// Signals whose realized return is zero or unavailable get a fair coin.
pub fn calibrated_signals(prices: &PriceUniverse, spec: &GeneratorSpec, workers: Workers) -> Result<Vec<SignalRecord>> {
    if spec.target_accuracy.is_none() {
        return Err(Error::InvalidParams("calibrated signals need a target_accuracy".into()));
    }
    generate(prices, spec, workers)
}

/// Dispatches on `spec.target_accuracy`.
pub fn generate(prices: &PriceUniverse, spec: &GeneratorSpec, workers: Workers) -> Result<Vec<SignalRecord>> {
    spec.validate()?;
    let series: Vec<&PriceSeries> = prices.series.values().collect();
    let per_ticker = par::map(&series, workers, |s| ticker_signals(s, &prices.calendar, spec));
    Ok(per_ticker.into_iter().flatten().collect())
}

/// Parameters of a synthetic one-factor market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarketSpec {
    pub n_tickers: usize,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub seed: u64,
    /// Daily factor volatility, fraction.
    pub market_vol: f64,
    /// Daily idiosyncratic volatility, fraction.
    pub idio_vol: f64,
    /// Overnight gap volatility, fraction.
    pub gap_vol: f64,
    pub beta_range: (f64, f64),
    /// Each ticker's history starts up to this fraction of the calendar late.
    pub late_start: f64,
}

impl Default for MarketSpec {
    fn default() -> Self {
        MarketSpec {
            n_tickers: 20,
            start: NaiveDate::from_ymd_opt(2021, 7, 1).unwrap(),
            end: NaiveDate::from_ymd_opt(2025, 6, 30).unwrap(),
            seed: 0,
            market_vol: 0.01,
            idio_vol: 0.015,
            gap_vol: 0.005,
            beta_range: (0.3, 1.7),
            late_start: 0.0,
        }
    }
}

pub const BENCHMARK_TICKER: &str = "BENCH";

/// Weekdays from `start` to `end`.
pub fn weekday_calendar(start: NaiveDate, end: NaiveDate) -> TradingCalendar {
    let mut days = Vec::new();
    let mut d = start;
    while d <= end {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            days.push(d);
        }
        d = d + Days::new(1);
    }
    TradingCalendar::new(days)
}

fn ticker_name(i: usize) -> String {
    format!("T{i:04}")
}

/// A zero-drift symmetric random-walk market: each stock's open-to-close
/// log return is `beta * factor + noise`, so up and down sessions are
/// equally likely at every holding period. Returns the universe and the
/// factor's own price series as benchmark.
pub fn synthetic_market(spec: &MarketSpec, workers: Workers) -> Result<(PriceUniverse, PriceSeries)> {
    if spec.n_tickers == 0 || spec.end < spec.start {
        return Err(Error::InvalidParams("empty synthetic market".into()));
    }
    let calendar = weekday_calendar(spec.start, spec.end);
    let dates = calendar.sessions().to_vec();
    let normal = |sd: f64| Normal::new(0.0, sd).map_err(|e| Error::InvalidParams(e.to_string()));
    let (factor_d, idio_d, gap_d) = (normal(spec.market_vol)?, normal(spec.idio_vol)?, normal(spec.gap_vol)?);

    let mut rng = rng_for(spec.seed, BENCHMARK_TICKER);
    let factor: Vec<f64> = dates.iter().map(|_| factor_d.sample(&mut rng)).collect();
    let mut level = 100.0;
    let bench_bars = dates
        .iter()
        .zip(&factor)
        .map(|(d, f)| {
            let open = level;
            level *= f.exp();
            let (hi, lo) = (open.max(level), open.min(level));
            Bar::new(*d, open, hi, lo, level, None).expect("positive finite prices")
        })
        .collect();
    let benchmark = PriceSeries::new(BENCHMARK_TICKER, bench_bars)?;

    let idx: Vec<usize> = (0..spec.n_tickers).collect();
    let series = par::map(&idx, workers, |&i| {
        let name = ticker_name(i);
        let mut rng = rng_for(spec.seed, &name);
        let beta = rng.random_range(spec.beta_range.0..=spec.beta_range.1);
        let skip = (rng.random::<f64>() * spec.late_start * dates.len() as f64) as usize;
        let mut close = rng.random_range(20.0..200.0);
        let bars: Vec<Bar> = dates
            .iter()
            .zip(&factor)
            .skip(skip.min(dates.len().saturating_sub(1)))
            .map(|(d, f)| {
                let open: f64 = close * gap_d.sample(&mut rng).exp();
                close = open * (beta * f + idio_d.sample(&mut rng)).exp();
                let wick = spec.idio_vol * 0.5;
                let high = open.max(close) * (wick * rng.random::<f64>()).exp();
                let low = open.min(close) * (-wick * rng.random::<f64>()).exp();
                Bar::new(*d, open, high, low, close, None).expect("positive finite prices")
            })
            .collect();
        PriceSeries::new(&name, bars)
    });
    let series = series.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((PriceUniverse::from_series(series), benchmark))
}
