//! Directional accuracy over holding periods 0..=10 and proportion tests
//! against a baseline hit rate.
//!
//! Accuracy of a side at holding period `h` is the share of that side's
//! signals whose holding return has the matching strict sign; a realized
//! return of exactly zero is a miss for both sides. Flat signals never enter
//! a denominator but do count towards the `pct_*` shares.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::market_data::{holding_return, PriceSeries, PriceUniverse};
use crate::scenario_grid::OptimalConfig;
use crate::signal_store::{AdmittedSignals, Direction, StreamSignal};
use crate::trade_sim::Side;

pub const MAX_HOLDING: usize = 10;

fn std_normal() -> Normal {
    Normal::standard()
}

/// Two-sided critical value `z_{alpha/2}` for a confidence `level`.
pub fn z_critical(level: f64) -> f64 {
    std_normal().inverse_cdf(0.5 + level / 2.0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    #[default]
    TwoSided,
    /// H1: accuracy above the baseline.
    Greater,
    /// H1: accuracy below the baseline.
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZTest {
    pub se0: f64,
    pub z: f64,
    pub p_value: f64,
}

/// z-test of an observed proportion against `p0`; `None` when `n = 0`.
pub fn ztest_vs_baseline(p_hat: f64, n: usize, p0: f64, tail: Tail) -> Option<ZTest> {
    if n == 0 || !(p0 > 0.0 && p0 < 1.0) {
        return None;
    }
    let se0 = (p0 * (1.0 - p0) / n as f64).sqrt();
    let z = (p_hat - p0) / se0;
    let phi = std_normal();
    let p_value = match tail {
        Tail::TwoSided => (2.0 * phi.cdf(-z.abs())).min(1.0),
        Tail::Greater => phi.cdf(-z),
        Tail::Less => phi.cdf(z),
    };
    Some(ZTest { se0, z, p_value })
}

/// Normal-approximation interval `p_hat -/+ z * sqrt(p_hat (1 - p_hat) / n)`,
/// clamped to `[0, 1]`; `None` when `n = 0`.
pub fn wald_ci(p_hat: f64, n: usize, level: f64) -> Option<(f64, f64)> {
    wald_ci_with(p_hat, n, z_critical(level))
}

/// [`wald_ci`] with an explicit critical value (e.g. the rounded 1.96).
pub fn wald_ci_with(p_hat: f64, n: usize, z: f64) -> Option<(f64, f64)> {
    if n == 0 {
        return None;
    }
    let se = (p_hat * (1.0 - p_hat) / n as f64).sqrt();
    Some(((p_hat - z * se).max(0.0), (p_hat + z * se).min(1.0)))
}

/// Proportion test record attached to an accuracy row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatTest {
    pub p_hat: f64,
    pub n: usize,
    pub p0: f64,
    pub se0: f64,
    pub z: f64,
    pub p_value: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatsOptions {
    pub p0: f64,
    pub level: f64,
    pub tail: Tail,
    pub deadband: f64,
    /// Signal horizon used for tickers without an optimal config.
    pub default_horizon: u8,
}

impl Default for StatsOptions {
    fn default() -> Self {
        StatsOptions {
            p0: 0.5,
            level: 0.95,
            tail: Tail::TwoSided,
            deadband: 0.0,
            default_horizon: 1,
        }
    }
}

pub fn stat_test(p_hat: f64, n: usize, opts: &StatsOptions) -> Option<StatTest> {
    let z = ztest_vs_baseline(p_hat, n, opts.p0, opts.tail)?;
    let (ci_lower, ci_upper) = wald_ci(p_hat, n, opts.level)?;
    Some(StatTest {
        p_hat,
        n,
        p0: opts.p0,
        se0: z.se0,
        z: z.z,
        p_value: z.p_value,
        ci_lower,
        ci_upper,
    })
}

/// Hit count of one side at one holding period.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitCount {
    pub hits: usize,
    pub n: usize,
    /// Signals of the side whose holding return could not be computed.
    pub skipped: usize,
}

impl HitCount {
    /// Accuracy in percent, `None` for an empty denominator.
    pub fn percent(&self) -> Option<f64> {
        (self.n > 0).then(|| 100.0 * self.hits as f64 / self.n as f64)
    }

    pub fn proportion(&self) -> Option<f64> {
        (self.n > 0).then(|| self.hits as f64 / self.n as f64)
    }
}

fn is_hit(direction: Direction, realized: f64) -> bool {
    match direction {
        Direction::Long => realized > 0.0,
        Direction::Short => realized < 0.0,
        Direction::Flat => false,
    }
}

/// Directional accuracy of `side` (`Both` pools long and short) at holding period `h`.
pub fn directional_accuracy(
    signals: &[StreamSignal],
    series: &PriceSeries,
    side: Side,
    h: usize,
) -> HitCount {
    let mut count = HitCount::default();
    for s in signals.iter().filter(|s| side.admits(s.direction)) {
        match holding_return(series, s.signal_day, h) {
            Ok(r) => {
                count.n += 1;
                if is_hit(s.direction, r) {
                    count.hits += 1;
                }
            }
            Err(_) => count.skipped += 1,
        }
    }
    count
}

/// Per-side block of an accuracy row.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SideAccuracy {
    /// Accuracy percent at holding periods 0..=10.
    pub by_holding: Vec<Option<f64>>,
    pub counts: Vec<HitCount>,
    pub avg: Option<f64>,
    pub max: Option<f64>,
    pub min: Option<f64>,
    /// Share of all signals (flat included) on this side, percent.
    pub pct: Option<f64>,
    pub best_day: Option<usize>,
    /// Number of signals on this side.
    pub n: usize,
}

impl SideAccuracy {
    fn compute(signals: &[StreamSignal], series: &PriceSeries, side: Side) -> Self {
        let counts: Vec<HitCount> = (0..=MAX_HOLDING)
            .map(|h| directional_accuracy(signals, series, side, h))
            .collect();
        let by_holding: Vec<Option<f64>> = counts.iter().map(HitCount::percent).collect();
        let defined: Vec<(usize, f64)> = by_holding
            .iter()
            .enumerate()
            .filter_map(|(h, v)| v.map(|v| (h, v)))
            .collect();
        let avg = (!defined.is_empty())
            .then(|| defined.iter().map(|(_, v)| v).sum::<f64>() / defined.len() as f64);
        // first holding period attaining the maximum
        let best = defined
            .iter()
            .copied()
            .reduce(|best, cur| if cur.1 > best.1 { cur } else { best });
        let min = defined.iter().map(|(_, v)| *v).reduce(f64::min);
        let n = signals.iter().filter(|s| side.admits(s.direction)).count();
        let pct = (!signals.is_empty()).then(|| 100.0 * n as f64 / signals.len() as f64);
        SideAccuracy {
            by_holding,
            counts,
            avg,
            max: best.map(|b| b.1),
            min,
            pct,
            best_day: best.map(|b| b.0),
            n,
        }
    }

    /// Hit count at the best holding period.
    pub fn best_count(&self) -> Option<HitCount> {
        self.best_day.map(|h| self.counts[h])
    }
}

/// One ticker's accuracy summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub ticker: String,
    pub horizon: u8,
    pub long: SideAccuracy,
    pub short: SideAccuracy,
    /// Side and holding period the test below refers to.
    pub test_side: Option<Side>,
    pub test_holding: Option<usize>,
    pub test: Option<StatTest>,
}

impl AccuracyRow {
    pub fn side(&self, side: Side) -> &SideAccuracy {
        match side {
            Side::Short => &self.short,
            _ => &self.long,
        }
    }
}

/// Builds the row for one ticker and signal horizon. The test uses `side`
/// (or, for `Both`/`None`, the side with the higher best accuracy) at its
/// best holding period.
pub fn accuracy_row(
    ticker: &str,
    horizon: u8,
    signals: &[StreamSignal],
    series: &PriceSeries,
    side: Option<Side>,
    opts: &StatsOptions,
) -> AccuracyRow {
    let long = SideAccuracy::compute(signals, series, Side::Long);
    let short = SideAccuracy::compute(signals, series, Side::Short);
    let test_side = match side {
        Some(Side::Long) => Some(Side::Long),
        Some(Side::Short) => Some(Side::Short),
        _ => match (long.max, short.max) {
            (Some(l), Some(s)) => Some(if s > l { Side::Short } else { Side::Long }),
            (Some(_), None) => Some(Side::Long),
            (None, Some(_)) => Some(Side::Short),
            (None, None) => None,
        },
    };
    let chosen = test_side.map(|s| if s == Side::Short { &short } else { &long });
    let test_holding = chosen.and_then(|c| c.best_day);
    let test = chosen
        .and_then(SideAccuracy::best_count)
        .and_then(|c| stat_test(c.proportion()?, c.n, opts));
    AccuracyRow {
        ticker: ticker.to_string(),
        horizon,
        long,
        short,
        test_side,
        test_holding,
        test,
    }
}

/// Accuracy rows for every ticker with signals, plus diagnostics for the
/// tickers that were omitted.
pub fn accuracy_table(
    universe: &PriceUniverse,
    signals: &AdmittedSignals,
    configs: &BTreeMap<String, OptimalConfig>,
    opts: &StatsOptions,
) -> (Vec<AccuracyRow>, Vec<String>) {
    let mut rows = Vec::new();
    let mut diagnostics = Vec::new();
    for (ticker, series) in &universe.series {
        let config = configs.get(ticker);
        let horizon = config.map_or(opts.default_horizon, |c| c.period_signal);
        let stream = signals.stream(ticker, horizon, opts.deadband);
        if stream.is_empty() {
            diagnostics.push(format!("{ticker}: no signals at horizon {horizon}, omitted"));
            continue;
        }
        rows.push(accuracy_row(
            ticker,
            horizon,
            &stream,
            series,
            config.map(|c| c.strategy),
            opts,
        ));
    }
    (rows, diagnostics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub std: Option<f64>,
    pub min: f64,
    pub max: f64,
    pub pct_below_1: f64,
    pub pct_below_5: f64,
    pub pct_below_10: f64,
}

/// Descriptive statistics of p-values, optionally restricted to one side.
pub fn pvalue_summary(tests: &[(Side, StatTest)], side: Option<Side>) -> Option<PValueSummary> {
    let mut p: Vec<f64> = tests
        .iter()
        .filter(|(s, _)| side.is_none_or(|want| *s == want))
        .map(|(_, t)| t.p_value)
        .collect();
    if p.is_empty() {
        return None;
    }
    p.sort_by(f64::total_cmp);
    let n = p.len();
    let mean = p.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        p[n / 2]
    } else {
        (p[n / 2 - 1] + p[n / 2]) / 2.0
    };
    let std = (n > 1).then(|| {
        (p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    });
    let below = |cut: f64| 100.0 * p.iter().filter(|v| **v < cut).count() as f64 / n as f64;
    Some(PValueSummary {
        count: n,
        mean,
        median,
        std,
        min: p[0],
        max: p[n - 1],
        pct_below_1: below(0.01),
        pct_below_5: below(0.05),
        pct_below_10: below(0.10),
    })
}

/// Tests of each row paired with the side they were run on.
pub fn row_tests(rows: &[AccuracyRow]) -> Vec<(Side, StatTest)> {
    rows.iter()
        .filter_map(|r| Some((r.test_side?, r.test?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiPoint {
    pub rank: usize,
    pub ticker: String,
    /// Percent.
    pub accuracy: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub n: usize,
}

/// Best-day accuracy of `side` per ticker with its Wald interval, ordered
/// from lowest to highest accuracy (ties by ticker).
pub fn ci_plot_data(rows: &[AccuracyRow], side: Side, level: f64) -> Vec<CiPoint> {
    let mut points: Vec<CiPoint> = rows
        .iter()
        .filter_map(|r| {
            let block = r.side(side);
            let count = block.best_count()?;
            let p = count.proportion()?;
            let (lo, hi) = wald_ci(p, count.n, level)?;
            Some(CiPoint {
                rank: 0,
                ticker: r.ticker.clone(),
                accuracy: 100.0 * p,
                ci_lower: 100.0 * lo,
                ci_upper: 100.0 * hi,
                n: count.n,
            })
        })
        .collect();
    points.sort_by(|a, b| a.accuracy.total_cmp(&b.accuracy).then(a.ticker.cmp(&b.ticker)));
    for (i, p) in points.iter_mut().enumerate() {
        p.rank = i + 1;
    }
    points
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_accuracy_table<W: std::io::Write>(
    writer: W,
    rows: &[AccuracyRow],
) -> crate::error::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["ticker".to_string()];
    for name in ["long", "short"] {
        header.extend((0..=MAX_HOLDING).map(|h| format!("{name}_{h}")));
        for field in ["avg", "max", "min", "pct", "best_day"] {
            header.push(format!("{field}_{name}"));
        }
    }
    header.extend(
        [
            "n_long",
            "n_short",
            "p_value_vs_50%",
            "ci_lower",
            "ci_upper",
            "period_signal",
            "test_side",
            "test_holding",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.ticker.clone()];
        for block in [&r.long, &r.short] {
            rec.extend(block.by_holding.iter().map(|v| opt(*v)));
            rec.push(opt(block.avg));
            rec.push(opt(block.max));
            rec.push(opt(block.min));
            rec.push(opt(block.pct));
            rec.push(opt(block.best_day));
        }
        rec.push(r.long.n.to_string());
        rec.push(r.short.n.to_string());
        rec.push(opt(r.test.map(|t| t.p_value)));
        rec.push(opt(r.test.map(|t| t.ci_lower)));
        rec.push(opt(r.test.map(|t| t.ci_upper)));
        rec.push(r.horizon.to_string());
        rec.push(opt(r.test_side));
        rec.push(opt(r.test_holding));
        w.write_record(&rec)?;
    }
    w.flush()
        .map_err(|e| crate::error::Error::io("<accuracy writer>", e))?;
    Ok(())
}

pub fn write_ci_plot<W: std::io::Write>(writer: W, points: &[CiPoint]) -> crate::error::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["rank", "ticker", "accuracy_pct", "ci_lower_pct", "ci_upper_pct", "n"])?;
    for p in points {
        w.write_record([
            p.rank.to_string(),
            p.ticker.clone(),
            p.accuracy.to_string(),
            p.ci_lower.to_string(),
            p.ci_upper.to_string(),
            p.n.to_string(),
        ])?;
    }
    w.flush()
        .map_err(|e| crate::error::Error::io("<ci writer>", e))?;
    Ok(())
}
