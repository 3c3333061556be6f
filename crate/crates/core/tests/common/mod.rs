#![allow(dead_code)]

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sigbt::market_data::{Bar, PriceSeries};
use sigbt::signal_store::{Direction, StreamSignal};
use sigbt::trade_sim::{ExecParams, Side};

pub fn d(y: i32, m: u32, day: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, day).unwrap()
}

/// `n` consecutive weekdays starting at `start` (or the next weekday).
pub fn weekdays(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut day = start;
    while out.len() < n {
        if !matches!(day.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(day);
        }
        day = day + Days::new(1);
    }
    out
}

/// Random walk of consistent OHLC bars, with occasional flat bars and
/// repeated prices so threshold equalities occur.
pub fn random_bars(rng: &mut ChaCha8Rng, dates: &[NaiveDate]) -> Vec<Bar> {
    let mut close: f64 = rng.random_range(10.0..200.0);
    dates
        .iter()
        .map(|&date| {
            if rng.random_bool(0.05) {
                return Bar::new(date, close, close, close, close, None).unwrap();
            }
            let open = close * (1.0 + rng.random_range(-0.01..0.01));
            close = open * (1.0 + rng.random_range(-0.03..0.03));
            let high = open.max(close) * (1.0 + rng.random_range(0.0..0.02));
            let low = open.min(close) * (1.0 - rng.random_range(0.0..0.02));
            Bar::new(date, open, high, low, close, None).unwrap()
        })
        .collect()
}

pub fn random_series(rng: &mut ChaCha8Rng, ticker: &str, dates: &[NaiveDate]) -> PriceSeries {
    PriceSeries::new(ticker, random_bars(rng, dates)).unwrap()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleTrade {
    pub entry: NaiveDate,
    pub exit: NaiveDate,
    pub ret: f64,
    pub reason: &'static str,
    pub holding: usize,
}

/// Day-by-day reference for a single trade, from raw (date, O, H, L, C)
/// rows. `None` when no session follows `signal_day`.
pub fn oracle_trade(
    rows: &[(NaiveDate, f64, f64, f64, f64)],
    signal_day: NaiveDate,
    long: bool,
    mhp: usize,
    pt: f64,
    sl: f64,
    stop_first: bool,
) -> Option<OracleTrade> {
    let mut e = None;
    for (i, row) in rows.iter().enumerate() {
        if row.0 > signal_day {
            e = Some(i);
            break;
        }
    }
    let e = e?;
    let o = rows[e].1;
    let mut k = 0;
    loop {
        let day = e + k;
        if day >= rows.len() {
            let (date, _, _, _, c) = rows[rows.len() - 1];
            let r = if long { (c - o) / o } else { (o - c) / o };
            return Some(OracleTrade { entry: rows[e].0, exit: date, ret: r, reason: "truncated", holding: rows.len() - 1 - e });
        }
        let (date, _, h, l, c) = rows[day];
        let (hit_pt, hit_sl) = if long {
            ((h - o) / o >= pt, (l - o) / o <= sl)
        } else {
            ((o - l) / o >= pt, (h - o) / o >= sl.abs())
        };
        let stop = hit_sl && (stop_first || !hit_pt);
        if stop {
            return Some(OracleTrade { entry: rows[e].0, exit: date, ret: sl, reason: "stop_loss", holding: k });
        }
        if hit_pt {
            return Some(OracleTrade { entry: rows[e].0, exit: date, ret: pt, reason: "profit_taker", holding: k });
        }
        if k == mhp {
            let r = if long { (c - o) / o } else { (o - c) / o };
            return Some(OracleTrade { entry: rows[e].0, exit: date, ret: r, reason: "expiry", holding: k });
        }
        k += 1;
    }
}

/// Sequential single-position replay on top of the per-trade oracle.
pub fn oracle_stream(
    rows: &[(NaiveDate, f64, f64, f64, f64)],
    stream: &[StreamSignal],
    side: Side,
    p: &ExecParams,
    stop_first: bool,
    single: bool,
) -> Vec<OracleTrade> {
    let mut out: Vec<OracleTrade> = Vec::new();
    let mut last_exit: Option<NaiveDate> = None;
    for s in stream {
        let wanted = match s.direction {
            Direction::Flat => false,
            Direction::Long => side != Side::Short,
            Direction::Short => side != Side::Long,
        };
        if !wanted {
            continue;
        }
        let Some(t) = oracle_trade(rows, s.signal_day, s.direction == Direction::Long, p.mhp, p.pt, p.sl, stop_first) else {
            continue;
        };
        if single && last_exit.is_some_and(|x| t.entry <= x) {
            continue;
        }
        last_exit = Some(t.exit);
        out.push(t);
    }
    out
}

pub fn rows_of(series: &PriceSeries) -> Vec<(NaiveDate, f64, f64, f64, f64)> {
    series
        .bars()
        .iter()
        .map(|b| (b.date, b.open, b.high, b.low, b.close))
        .collect()
}

/// Largest `cum[i] - cum[j]` over `i <= j`, by exhaustive search.
pub fn brute_mdd(cum: &[f64]) -> f64 {
    let mut best = 0.0_f64;
    for i in 0..cum.len() {
        for j in i..cum.len() {
            let dd = cum[i] - cum[j];
            if dd > best {
                best = dd;
            }
        }
    }
    best
}

/// Annualized Sharpe with an explicit two-pass variance.
pub fn two_pass_sharpe(x: &[f64], rf_annual: f64, ppy: f64) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return None;
    }
    Some((mean - rf_annual / ppy) / var.sqrt() * ppy.sqrt())
}

/// Kolmogorov-Smirnov distance between the sample and Uniform(0, 1).
pub fn ks_uniform(sample: &[f64]) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &p)| ((i + 1) as f64 / n - p).max(p - i as f64 / n))
        .fold(0.0, f64::max)
}

/// Standard normal CDF by composite Simpson quadrature of the density.
pub fn normal_cdf(x: f64) -> f64 {
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let (a, b) = if x >= 0.0 { (0.0, x) } else { (x, 0.0) };
    let n = 20_000;
    let h = (b - a) / n as f64;
    let mut s = pdf(a) + pdf(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * pdf(a + i as f64 * h);
    }
    let area = s * h / 3.0;
    if x >= 0.0 {
        0.5 + area
    } else {
        0.5 - area
    }
}
