//! Single-trade exit simulation and signal streams.
//!
//! A trade enters at the open of the first session after the signal day and
//! scans sessions `e ..= e + mhp`. Thresholds are simple returns on the entry
//! open: a profit-taker hit books exactly `pt`, a stop-loss hit books exactly
//! `sl`, otherwise the trade exits at the close of `e + mhp`. With daily bars
//! the intraday order of high and low is unknown, so a day that breaches both
//! is resolved by [`TieBreak`].

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{Bar, PriceSeries};
use crate::perf_metrics::DailySeries;
use crate::signal_store::{Direction, StreamSignal};

/// Profit-taker, stop-loss and maximum holding period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecParams {
    pub mhp: usize,
    pub pt: f64,
    pub sl: f64,
}

impl ExecParams {
    pub fn new(mhp: usize, pt: f64, sl: f64) -> Result<Self> {
        let p = ExecParams { mhp, pt, sl };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mhp < 1 {
            return Err(Error::InvalidParams("mhp must be >= 1".into()));
        }
        if !(self.pt > 0.0 && self.pt.is_finite()) {
            return Err(Error::InvalidParams(format!("pt {} must be > 0", self.pt)));
        }
        if !(self.sl < 0.0 && self.sl.is_finite()) {
            return Err(Error::InvalidParams(format!("sl {} must be < 0", self.sl)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    StopFirst,
    ProfitFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitReason {
    ProfitTaker,
    StopLoss,
    Expiry,
    Truncated,
}

impl ExitReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ExitReason::ProfitTaker => "profit_taker",
            ExitReason::StopLoss => "stop_loss",
            ExitReason::Expiry => "expiry",
            ExitReason::Truncated => "truncated",
        }
    }
}

impl fmt::Display for ExitReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which signal directions a stream or book trades.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Long,
    Short,
    Both,
}

impl Side {
    pub fn admits(self, direction: Direction) -> bool {
        matches!(
            (self, direction),
            (Side::Long, Direction::Long)
                | (Side::Short, Direction::Short)
                | (Side::Both, Direction::Long | Direction::Short)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Long => "long",
            Side::Short => "short",
            Side::Both => "both",
        }
    }

    /// Label used for a ticker's trading strategy.
    pub fn strategy_label(self) -> &'static str {
        match self {
            Side::Long => "long_only",
            Side::Short => "short_only",
            Side::Both => "both",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "long" | "long_only" => Ok(Side::Long),
            "short" | "short_only" => Ok(Side::Short),
            "both" => Ok(Side::Both),
            other => Err(Error::Schema(format!("unknown side `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overlap {
    /// Signals arriving while a position is open on the ticker are skipped.
    #[default]
    SinglePosition,
    AllowOverlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeResult {
    pub ticker: String,
    pub direction: Direction,
    pub entry_date: NaiveDate,
    pub exit_date: NaiveDate,
    /// Fractional return on the entry open, sign-adjusted for shorts.
    pub trade_return: f64,
    pub exit_reason: ExitReason,
    pub realized_holding: usize,
}

/// Exit of a position opened at `bars[entry].open`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Exit {
    pub index: usize,
    pub ret: f64,
    pub reason: ExitReason,
}

/// Scans sessions `entry ..= entry + mhp` for the first threshold breach.
pub(crate) fn scan(
    bars: &[Bar],
    entry: usize,
    direction: Direction,
    params: &ExecParams,
    tiebreak: TieBreak,
) -> Exit {
    let open = bars[entry].open;
    let horizon_end = entry + params.mhp;
    let last = horizon_end.min(bars.len() - 1);
    let long = direction == Direction::Long;

    for (d, bar) in bars.iter().enumerate().take(last + 1).skip(entry) {
        let up = (bar.high - open) / open;
        let down = (bar.low - open) / open;
        let (profit, stop) = if long {
            (up >= params.pt, down <= params.sl)
        } else {
            (-down >= params.pt, up >= -params.sl)
        };
        match (profit, stop, tiebreak) {
            (true, true, TieBreak::StopFirst) | (false, true, _) => {
                return Exit { index: d, ret: params.sl, reason: ExitReason::StopLoss }
            }
            (true, _, _) => return Exit { index: d, ret: params.pt, reason: ExitReason::ProfitTaker },
            (false, false, _) => {}
        }
    }

    let close = bars[last].close;
    let ret = if long { (close - open) / open } else { (open - close) / open };
    let reason = if last == horizon_end {
        ExitReason::Expiry
    } else {
        ExitReason::Truncated
    };
    Exit { index: last, ret, reason }
}

/// Simulates one position opened on the session after `signal_day`.
pub fn simulate_trade(
    series: &PriceSeries,
    signal_day: NaiveDate,
    direction: Direction,
    params: &ExecParams,
    tiebreak: TieBreak,
) -> Result<TradeResult> {
    if direction == Direction::Flat {
        return Err(Error::InvalidParams("cannot trade a flat signal".into()));
    }
    let entry = series.entry_index_after(signal_day).ok_or_else(|| Error::NoEntry {
        ticker: series.ticker.clone(),
        day: signal_day,
    })?;
    let bars = series.bars();
    let x = scan(bars, entry, direction, params, tiebreak);
    Ok(TradeResult {
        ticker: series.ticker.clone(),
        direction,
        entry_date: bars[entry].date,
        exit_date: bars[x.index].date,
        trade_return: x.ret,
        exit_reason: x.reason,
        realized_holding: x.index - entry,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SkipReason {
    NoEntry,
    PositionOpen,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedSignal {
    pub signal_day: NaiveDate,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamOutcome {
    pub trades: Vec<TradeResult>,
    pub skipped: Vec<SkippedSignal>,
    /// Percent returns on the ticker's sessions, each trade booked on its exit date.
    pub daily: DailySeries,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamOptions {
    pub overlap: Overlap,
    pub tiebreak: TieBreak,
}

/// Runs an ordered signal stream through [`simulate_trade`].
///
/// Under [`Overlap::SinglePosition`] a new position may open only on a
/// session strictly after the previous exit date.
pub fn simulate_stream(
    series: &PriceSeries,
    signals: &[StreamSignal],
    params: &ExecParams,
    policy: Side,
    options: StreamOptions,
) -> StreamOutcome {
    let (trades, skipped) = simulate_trades(series, signals, params, policy, options);
    let daily = DailySeries::from_trades(series.dates(), &trades, true);
    StreamOutcome {
        trades,
        skipped,
        daily,
    }
}

/// [`simulate_stream`] without building the daily series.
pub fn simulate_trades(
    series: &PriceSeries,
    signals: &[StreamSignal],
    params: &ExecParams,
    policy: Side,
    options: StreamOptions,
) -> (Vec<TradeResult>, Vec<SkippedSignal>) {
    let mut trades: Vec<TradeResult> = Vec::new();
    let mut skipped = Vec::new();
    let mut busy_until: Option<NaiveDate> = None;

    for sig in signals {
        if !policy.admits(sig.direction) {
            continue;
        }
        if options.overlap == Overlap::SinglePosition {
            if let (Some(until), Some(entry)) =
                (busy_until, series.entry_index_after(sig.signal_day))
            {
                if series.bars()[entry].date <= until {
                    skipped.push(SkippedSignal {
                        signal_day: sig.signal_day,
                        reason: SkipReason::PositionOpen,
                    });
                    continue;
                }
            }
        }
        match simulate_trade(series, sig.signal_day, sig.direction, params, options.tiebreak) {
            Ok(trade) => {
                busy_until = Some(trade.exit_date);
                trades.push(trade);
            }
            Err(_) => skipped.push(SkippedSignal {
                signal_day: sig.signal_day,
                reason: SkipReason::NoEntry,
            }),
        }
    }
    (trades, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::Bar;

    fn day(i: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 1, 1).unwrap() + chrono::Days::new(u64::from(i))
    }

    fn series(bars: &[(f64, f64, f64, f64)]) -> PriceSeries {
        let bars = bars
            .iter()
            .enumerate()
            .map(|(i, &(o, h, l, c))| Bar::new(day(i as u32), o, h, l, c, None).unwrap())
            .collect();
        PriceSeries::new("T", bars).unwrap()
    }

    #[test]
    fn flat_path_expires_at_zero() {
        let s = series(&[(100.0, 100.0, 100.0, 100.0); 6]);
        let p = ExecParams::new(3, 0.01, -0.02).unwrap();
        for dir in [Direction::Long, Direction::Short] {
            let t = simulate_trade(&s, day(0), dir, &p, TieBreak::StopFirst).unwrap();
            assert_eq!(t.exit_reason, ExitReason::Expiry);
            assert_eq!(t.trade_return, 0.0);
            assert_eq!(t.realized_holding, 3);
            assert_eq!(t.entry_date, day(1));
            assert_eq!(t.exit_date, day(4));
        }
    }

    #[test]
    fn profit_taker_books_pt_exactly() {
        let s = series(&[
            (99.0, 99.0, 99.0, 99.0),
            (100.0, 100.5, 99.5, 100.0),
            (100.0, 104.0, 99.0, 103.0),
            (103.0, 103.0, 103.0, 103.0),
        ]);
        let p = ExecParams::new(2, 0.038, -0.04).unwrap();
        let t = simulate_trade(&s, day(0), Direction::Long, &p, TieBreak::StopFirst).unwrap();
        assert_eq!(t.exit_reason, ExitReason::ProfitTaker);
        assert_eq!(t.trade_return.to_bits(), 0.038f64.to_bits());
        assert_eq!(t.exit_date, day(2));
        assert_eq!(t.realized_holding, 1);
    }

    #[test]
    fn same_day_breach_uses_tiebreak() {
        let s = series(&[(100.0, 100.0, 100.0, 100.0), (100.0, 105.0, 95.0, 100.0)]);
        let p = ExecParams::new(1, 0.02, -0.02).unwrap();
        let stop = simulate_trade(&s, day(0), Direction::Long, &p, TieBreak::StopFirst).unwrap();
        assert_eq!(stop.exit_reason, ExitReason::StopLoss);
        assert_eq!(stop.trade_return, -0.02);
        assert_eq!(stop.realized_holding, 0);
        let prof = simulate_trade(&s, day(0), Direction::Short, &p, TieBreak::ProfitFirst).unwrap();
        assert_eq!(prof.exit_reason, ExitReason::ProfitTaker);
        assert_eq!(prof.trade_return, 0.02);
    }

    #[test]
    fn short_expiry_is_negated() {
        let s = series(&[
            (100.0, 100.0, 100.0, 100.0),
            (100.0, 100.5, 99.5, 100.4),
            (100.4, 100.8, 100.0, 100.6),
        ]);
        let p = ExecParams::new(1, 0.05, -0.05).unwrap();
        let t = simulate_trade(&s, day(0), Direction::Short, &p, TieBreak::StopFirst).unwrap();
        assert_eq!(t.exit_reason, ExitReason::Expiry);
        assert!((t.trade_return + 0.006).abs() < 1e-12);
    }

    #[test]
    fn truncated_and_no_entry() {
        let s = series(&[(100.0, 100.0, 100.0, 100.0), (100.0, 101.0, 100.0, 101.0)]);
        let p = ExecParams::new(5, 0.05, -0.05).unwrap();
        let t = simulate_trade(&s, day(0), Direction::Long, &p, TieBreak::StopFirst).unwrap();
        assert_eq!(t.exit_reason, ExitReason::Truncated);
        assert_eq!(t.realized_holding, 0);
        assert!((t.trade_return - 0.01).abs() < 1e-12);
        assert!(matches!(
            simulate_trade(&s, day(1), Direction::Long, &p, TieBreak::StopFirst),
            Err(Error::NoEntry { .. })
        ));
        assert!(simulate_trade(&s, day(0), Direction::Flat, &p, TieBreak::StopFirst).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(ExecParams::new(0, 0.01, -0.01).is_err());
        assert!(ExecParams::new(1, 0.0, -0.01).is_err());
        assert!(ExecParams::new(1, 0.01, 0.0).is_err());
    }

    #[test]
    fn stream_single_position_skips_overlap() {
        let s = series(&[(100.0, 100.0, 100.0, 100.0); 8]);
        let p = ExecParams::new(3, 0.01, -0.01).unwrap();
        let sigs = [
            StreamSignal {
                signal_day: day(0),
                direction: Direction::Long,
            },
            StreamSignal {
                signal_day: day(1),
                direction: Direction::Long,
            },
        ];
        let out = simulate_stream(&s, &sigs, &p, Side::Both, StreamOptions::default());
        assert_eq!(out.trades.len(), 1);
        assert_eq!(out.skipped[0].reason, SkipReason::PositionOpen);

        let opts = StreamOptions {
            overlap: Overlap::AllowOverlap,
            ..Default::default()
        };
        let out = simulate_stream(&s, &sigs, &p, Side::Both, opts);
        assert_eq!(out.trades.len(), 2);
    }

    #[test]
    fn stream_without_signals_is_all_zero() {
        let s = series(&[(100.0, 101.0, 99.0, 100.0); 5]);
        let p = ExecParams::new(1, 0.01, -0.01).unwrap();
        let out = simulate_stream(&s, &[], &p, Side::Both, StreamOptions::default());
        assert!(out.trades.is_empty());
        assert_eq!(out.daily.values(), &[0.0; 5]);
    }

    #[test]
    fn policy_filters_directions() {
        let s = series(&[(100.0, 100.0, 100.0, 100.0); 8]);
        let p = ExecParams::new(1, 0.01, -0.01).unwrap();
        let sigs = [
            StreamSignal {
                signal_day: day(0),
                direction: Direction::Short,
            },
            StreamSignal {
                signal_day: day(3),
                direction: Direction::Flat,
            },
        ];
        let out = simulate_stream(&s, &sigs, &p, Side::Long, StreamOptions::default());
        assert!(out.trades.is_empty() && out.skipped.is_empty());
        let out = simulate_stream(&s, &sigs, &p, Side::Short, StreamOptions::default());
        assert_eq!(out.trades.len(), 1);
    }
}
