//! Risk and return analytics on non-compounded percent return streams.
//!
//! Daily returns are percent of a fixed notional; cumulative PnL is their
//! running sum and drawdowns are in percentage points of that notional.
//! Undefined statistics (zero variance, empty input) are `None`.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trade_sim::{ExitReason, TradeResult};
use crate::signal_store::Direction;

pub const PERIODS_PER_YEAR: f64 = 252.0;

/// Annualization and risk-free settings shared by the ratio functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    /// Annual risk-free rate in percent.
    pub rf_annual: f64,
    pub periods_per_year: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            rf_annual: 0.0,
            periods_per_year: PERIODS_PER_YEAR,
        }
    }
}

/// Percent returns on strictly increasing dates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DailySeries {
    dates: Vec<NaiveDate>,
    values: Vec<f64>,
}

impl DailySeries {
    pub fn new(dates: Vec<NaiveDate>, values: Vec<f64>) -> Result<Self> {
        if dates.len() != values.len() {
            return Err(Error::InvalidParams(format!(
                "{} dates for {} values",
                dates.len(),
                values.len()
            )));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParams("dates must be strictly increasing".into()));
        }
        Ok(DailySeries { dates, values })
    }

    pub fn zeros(dates: impl IntoIterator<Item = NaiveDate>) -> Self {
        let dates: Vec<NaiveDate> = dates.into_iter().collect();
        let values = vec![0.0; dates.len()];
        DailySeries { dates, values }
    }

    /// Books each trade's return (as percent) on its exit date.
    ///
    /// Trades exiting on a date outside `dates` are dropped.
    pub fn from_trades(
        dates: impl IntoIterator<Item = NaiveDate>,
        trades: &[TradeResult],
        include_truncated: bool,
    ) -> Self {
        let mut s = DailySeries::zeros(dates);
        for t in trades {
            if !include_truncated && t.exit_reason == ExitReason::Truncated {
                continue;
            }
            s.add_on(t.exit_date, 100.0 * t.trade_return);
        }
        s
    }

    /// Adds `value` to the entry on `date`; returns false if the date is absent.
    pub fn add_on(&mut self, date: NaiveDate, value: f64) -> bool {
        match self.dates.binary_search(&date) {
            Ok(i) => {
                self.values[i] += value;
                true
            }
            Err(_) => false,
        }
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NaiveDate, f64)> + '_ {
        self.dates.iter().copied().zip(self.values.iter().copied())
    }

    pub fn scaled(&self, factor: f64) -> DailySeries {
        DailySeries {
            dates: self.dates.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    /// Entries with `start <= date < end`.
    pub fn split_at(&self, split: NaiveDate) -> (DailySeries, DailySeries) {
        let k = self.dates.partition_point(|d| *d < split);
        (
            DailySeries {
                dates: self.dates[..k].to_vec(),
                values: self.values[..k].to_vec(),
            },
            DailySeries {
                dates: self.dates[k..].to_vec(),
                values: self.values[k..].to_vec(),
            },
        )
    }

    /// Date-wise sum over the union of dates.
    pub fn sum<'a>(parts: impl IntoIterator<Item = &'a DailySeries>) -> DailySeries {
        let mut acc: BTreeMap<NaiveDate, f64> = BTreeMap::new();
        for p in parts {
            for (d, v) in p.iter() {
                *acc.entry(d).or_insert(0.0) += v;
            }
        }
        let (dates, values) = acc.into_iter().unzip();
        DailySeries { dates, values }
    }

    /// Values of `self` and `other` on their common dates.
    pub fn align(&self, other: &BTreeMap<NaiveDate, f64>) -> (Vec<f64>, Vec<f64>) {
        self.iter()
            .filter_map(|(d, v)| other.get(&d).map(|o| (v, *o)))
            .unzip()
    }
}

/// Running PnL curve of a daily series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnlSeries {
    pub dates: Vec<NaiveDate>,
    pub daily_return: Vec<f64>,
    pub cum_pnl: Vec<f64>,
    pub hwm: Vec<f64>,
    pub drawdown: Vec<f64>,
}

impl PnlSeries {
    pub fn final_value(&self) -> f64 {
        self.cum_pnl.last().copied().unwrap_or(0.0)
    }

    pub fn peak(&self) -> f64 {
        self.hwm.last().copied().unwrap_or(0.0)
    }
}

pub fn cum_pnl(daily: &DailySeries) -> PnlSeries {
    let n = daily.len();
    let mut cum = Vec::with_capacity(n);
    let mut hwm = Vec::with_capacity(n);
    let mut dd = Vec::with_capacity(n);
    let mut running = 0.0;
    let mut peak = f64::NEG_INFINITY;
    for &r in daily.values() {
        running += r;
        peak = peak.max(running);
        cum.push(running);
        hwm.push(peak);
        dd.push(peak - running);
    }
    PnlSeries {
        dates: daily.dates().to_vec(),
        daily_return: daily.values().to_vec(),
        cum_pnl: cum,
        hwm,
        drawdown: dd,
    }
}

pub fn max_drawdown(series: &PnlSeries) -> f64 {
    max_drawdown_of(&series.cum_pnl)
}

/// Largest drop from a running peak of a cumulative curve.
pub fn max_drawdown_of(cum: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for &c in cum {
        peak = peak.max(c);
        worst = worst.max(peak - c);
    }
    worst
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation, `None` for fewer than two points or no spread.
fn sample_std(x: &[f64]) -> Option<f64> {
    if x.len() < 2 || x.iter().all(|v| v.to_bits() == x[0].to_bits()) {
        return None;
    }
    let m = mean(x);
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64;
    (var > 0.0).then(|| var.sqrt())
}

/// Annualized Sharpe ratio of daily returns.
pub fn ann_sharpe(daily: &[f64], cfg: MetricsConfig) -> Option<f64> {
    let sd = sample_std(daily)?;
    let excess = mean(daily) - cfg.rf_annual / cfg.periods_per_year;
    Some(excess / sd * cfg.periods_per_year.sqrt())
}

/// Trailing-window Sharpe; `None` until the window fills or where undefined.
pub fn rolling_sharpe(daily: &[f64], window: usize, cfg: MetricsConfig) -> Vec<Option<f64>> {
    assert!(window >= 2, "rolling window must be >= 2");
    (0..daily.len())
        .map(|i| {
            (i + 1 >= window)
                .then(|| ann_sharpe(&daily[i + 1 - window..=i], cfg))
                .flatten()
        })
        .collect()
}

/// Pearson correlation with sample moments.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let sa = sample_std(a)?;
    let sb = sample_std(b)?;
    let (ma, mb) = (mean(a), mean(b));
    let cov = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / (a.len() - 1) as f64;
    Some((cov / (sa * sb)).clamp(-1.0, 1.0))
}

pub fn rolling_corr(a: &[f64], b: &[f64], window: usize) -> Vec<Option<f64>> {
    assert!(window >= 2, "rolling window must be >= 2");
    assert_eq!(a.len(), b.len(), "rolling_corr needs aligned series");
    (0..a.len())
        .map(|i| {
            (i + 1 >= window)
                .then(|| pearson(&a[i + 1 - window..=i], &b[i + 1 - window..=i]))
                .flatten()
        })
        .collect()
}

/// Slope of `stock` on `benchmark`: sample covariance over sample variance.
pub fn beta(stock: &[f64], benchmark: &[f64]) -> Option<f64> {
    assert_eq!(stock.len(), benchmark.len());
    sample_std(benchmark)?;
    let n = stock.len();
    let (ms, mb) = (mean(stock), mean(benchmark));
    let cov = stock
        .iter()
        .zip(benchmark)
        .map(|(s, b)| (s - ms) * (b - mb))
        .sum::<f64>()
        / (n - 1) as f64;
    let var = benchmark.iter().map(|b| (b - mb) * (b - mb)).sum::<f64>() / (n - 1) as f64;
    Some(cov / var)
}

/// Returns `(sortino, downside_deviation)`; sortino is `None` when no return
/// falls below `target`.
pub fn sortino_and_downside(daily: &[f64], target: f64, periods: f64) -> (Option<f64>, f64) {
    if daily.is_empty() {
        return (None, 0.0);
    }
    let n = daily.len() as f64;
    let dd = (daily
        .iter()
        .map(|r| (r - target).min(0.0).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    if daily.len() < 2 || dd == 0.0 {
        return (None, dd);
    }
    let excess = daily.iter().map(|r| r - target).sum::<f64>() / n;
    (Some(excess / dd * periods.sqrt()), dd)
}

/// Return, risk and trade statistics for one leg.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LegStats {
    pub n_trades: usize,
    pub cum_return: f64,
    pub peak_cum_return: f64,
    pub sharpe: Option<f64>,
    pub mdd: f64,
    pub mean_holding: Option<f64>,
    pub max_holding: Option<usize>,
    pub win_rate: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TradeAggregates {
    pub long: LegStats,
    pub short: LegStats,
    pub combined: LegStats,
}

fn leg_stats<'a>(
    trades: impl Iterator<Item = &'a TradeResult> + Clone,
    dates: &[NaiveDate],
    cfg: MetricsConfig,
) -> LegStats {
    let owned: Vec<TradeResult> = trades.cloned().collect();
    let n = owned.len();
    let daily = DailySeries::from_trades(dates.iter().copied(), &owned, true);
    let pnl = cum_pnl(&daily);
    let wins = owned.iter().filter(|t| t.trade_return > 0.0).count();
    LegStats {
        n_trades: n,
        cum_return: pnl.final_value(),
        peak_cum_return: pnl.peak().max(0.0),
        sharpe: ann_sharpe(daily.values(), cfg),
        mdd: max_drawdown(&pnl),
        mean_holding: (n > 0)
            .then(|| owned.iter().map(|t| t.realized_holding as f64).sum::<f64>() / n as f64),
        max_holding: owned.iter().map(|t| t.realized_holding).max(),
        win_rate: (n > 0).then(|| 100.0 * wins as f64 / n as f64),
    }
}

/// Per-side and combined statistics with exit-date attribution on `dates`.
pub fn trade_aggregates(
    trades: &[TradeResult],
    dates: &[NaiveDate],
    cfg: MetricsConfig,
) -> TradeAggregates {
    let long = trades.iter().filter(|t| t.direction == Direction::Long);
    let short = trades.iter().filter(|t| t.direction == Direction::Short);
    TradeAggregates {
        long: leg_stats(long, dates, cfg),
        short: leg_stats(short, dates, cfg),
        combined: leg_stats(trades.iter(), dates, cfg),
    }
}

/// Headline statistics of a return stream.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RiskSummary {
    pub final_cum_return: f64,
    pub peak_cum_return: f64,
    pub mdd: f64,
    pub ann_sharpe: Option<f64>,
    pub correlation_to_benchmark: Option<f64>,
    pub n_trades: usize,
    pub win_rate: Option<f64>,
    pub mean_holding: Option<f64>,
    pub max_holding: Option<usize>,
}

pub fn risk_summary(
    daily: &DailySeries,
    trades: &[TradeResult],
    benchmark: Option<&BTreeMap<NaiveDate, f64>>,
    cfg: MetricsConfig,
) -> RiskSummary {
    let pnl = cum_pnl(daily);
    let n = trades.len();
    let correlation_to_benchmark = benchmark.and_then(|b| {
        let (x, y) = daily.align(b);
        pearson(&x, &y)
    });
    RiskSummary {
        final_cum_return: pnl.final_value(),
        peak_cum_return: pnl.peak().max(0.0),
        mdd: max_drawdown(&pnl),
        ann_sharpe: ann_sharpe(daily.values(), cfg),
        correlation_to_benchmark,
        n_trades: n,
        win_rate: (n > 0).then(|| {
            100.0 * trades.iter().filter(|t| t.trade_return > 0.0).count() as f64 / n as f64
        }),
        mean_holding: (n > 0)
            .then(|| trades.iter().map(|t| t.realized_holding as f64).sum::<f64>() / n as f64),
        max_holding: trades.iter().map(|t| t.realized_holding).max(),
    }
}

/// Benchmark close-to-close returns in percent, keyed by date.
pub fn benchmark_returns(bench: &crate::market_data::PriceSeries) -> BTreeMap<NaiveDate, f64> {
    bench
        .close_returns()
        .into_iter()
        .map(|(d, r)| (d, 100.0 * r))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn days(n: usize) -> Vec<NaiveDate> {
        let start = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
        (0..n).map(|i| start + chrono::Days::new(i as u64)).collect()
    }

    fn series(values: &[f64]) -> DailySeries {
        DailySeries::new(days(values.len()), values.to_vec()).unwrap()
    }

    #[test]
    fn cum_pnl_is_additive() {
        let p = cum_pnl(&series(&[0.0, 0.0, 0.0]));
        assert_eq!(p.cum_pnl, vec![0.0; 3]);
        assert_eq!(p.drawdown, vec![0.0; 3]);
        let p = cum_pnl(&series(&[1.0, -0.5, 2.0]));
        assert_eq!(p.cum_pnl, vec![1.0, 0.5, 2.5]);
        assert_eq!(p.hwm, vec![1.0, 1.0, 2.5]);
        assert_eq!(p.drawdown, vec![0.0, 0.5, 0.0]);
    }

    #[test]
    fn mdd_cases() {
        assert_eq!(max_drawdown_of(&[0.0, 1.0, 1.0, 3.0]), 0.0);
        assert_eq!(max_drawdown_of(&[0.0, 10.0, 4.0, 12.0]), 6.0);
        assert_eq!(max_drawdown_of(&[]), 0.0);
    }

    #[test]
    fn sharpe_undefined_on_constant() {
        let cfg = MetricsConfig::default();
        assert_eq!(ann_sharpe(&[0.1; 30], cfg), None);
        assert_eq!(ann_sharpe(&[1.0], cfg), None);
        assert!(rolling_sharpe(&[0.3; 10], 3, cfg).iter().all(Option::is_none));
    }

    #[test]
    fn rolling_sharpe_full_window_matches_whole() {
        let x = [0.5, -0.2, 0.1, 0.7, -0.4];
        let cfg = MetricsConfig::default();
        let r = rolling_sharpe(&x, 5, cfg);
        assert_eq!(r[..4], [None; 4]);
        assert_eq!(r[4], ann_sharpe(&x, cfg));
    }

    #[test]
    fn corr_of_self_and_negation() {
        let a = [0.5, -0.2, 0.1, 0.7, -0.4, 0.9];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        for c in rolling_corr(&a, &a, 3).into_iter().flatten() {
            assert!((c - 1.0).abs() < 1e-12);
        }
        for c in rolling_corr(&a, &neg, 3).into_iter().flatten() {
            assert!((c + 1.0).abs() < 1e-12);
        }
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
    }

    #[test]
    fn beta_cases() {
        let m = [0.5, -0.2, 0.1, 0.7, -0.4];
        let two: Vec<f64> = m.iter().map(|v| 2.0 * v).collect();
        assert!((beta(&m, &m).unwrap() - 1.0).abs() < 1e-12);
        assert!((beta(&two, &m).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(beta(&m, &[0.1; 5]), None);
    }

    #[test]
    fn sortino_cases() {
        let (s, dd) = sortino_and_downside(&[0.1, 0.2, 0.3], 0.0, 252.0);
        assert_eq!((s, dd), (None, 0.0));
        let x = 0.8;
        let (_, dd) = sortino_and_downside(&[x, -x, x, -x], 0.0, 252.0);
        assert!((dd - x / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn win_rate_and_empty_side() {
        use crate::trade_sim::ExitReason;
        let d = days(5);
        let mk = |i: usize, r: f64| TradeResult {
            ticker: "T".into(),
            direction: Direction::Long,
            entry_date: d[i],
            exit_date: d[i],
            trade_return: r,
            exit_reason: ExitReason::Expiry,
            realized_holding: 0,
        };
        let trades = [mk(0, 0.01), mk(1, -0.01), mk(2, 0.02)];
        let agg = trade_aggregates(&trades, &d, MetricsConfig::default());
        assert!((agg.long.win_rate.unwrap() - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(agg.short.n_trades, 0);
        assert_eq!(agg.short.win_rate, None);
        assert!((agg.combined.cum_return - 2.0).abs() < 1e-12);
        assert!((agg.long.mdd - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_unsorted_dates() {
        let mut d = days(3);
        d.swap(0, 1);
        assert!(DailySeries::new(d, vec![0.0; 3]).is_err());
    }
}
