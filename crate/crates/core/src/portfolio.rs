//! Walk-forward long/short portfolio construction.
//!
//! Each step calibrates on a trailing window of whole calendar quarters,
//! ranks the tickers on metrics computed strictly inside that window, and
//! trades the selected watch lists over the following quarter. A name only
//! trades when a live signal agrees with the side it was selected for.
//! Positions still open on the last session of the trading quarter are
//! closed there (flagged `truncated`).

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{PriceSeries, PriceUniverse, TradingCalendar};
use crate::par::{self, Workers};
use crate::perf_metrics::{
    ann_sharpe, benchmark_returns, beta, cum_pnl, max_drawdown, risk_summary, rolling_corr,
    rolling_sharpe, sortino_and_downside, DailySeries, MetricsConfig, RiskSummary,
};
use crate::scenario_grid::{run_grid, select_optimal, Criterion, GridOptions, GridSpec, OptimalConfig};
use crate::signal_stats::directional_accuracy;
use crate::signal_store::{AdmittedSignals, StreamSignal};
use crate::trade_sim::{simulate_stream, Side, StreamOptions, TradeResult};

/// A calendar quarter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Quarter {
    pub year: i32,
    /// 1..=4
    pub q: u8,
}

impl Quarter {
    pub fn new(year: i32, q: u8) -> Result<Self> {
        if !(1..=4).contains(&q) {
            return Err(Error::InvalidParams(format!("quarter {q} outside 1..=4")));
        }
        Ok(Quarter { year, q })
    }

    pub fn of(date: NaiveDate) -> Self {
        Quarter {
            year: date.year(),
            q: (date.month0() / 3 + 1) as u8,
        }
    }

    pub fn start(self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.year, u32::from(self.q - 1) * 3 + 1, 1).unwrap()
    }

    pub fn end(self) -> NaiveDate {
        self.next().start().pred_opt().unwrap()
    }

    pub fn next(self) -> Self {
        self.plus(1)
    }

    pub fn plus(self, n: i32) -> Self {
        let idx = self.year * 4 + i32::from(self.q) - 1 + n;
        Quarter {
            year: idx.div_euclid(4),
            q: (idx.rem_euclid(4) + 1) as u8,
        }
    }

    /// Number of quarters from `self` to `other`, inclusive.
    pub fn span_to(self, other: Quarter) -> i32 {
        (other.year * 4 + i32::from(other.q)) - (self.year * 4 + i32::from(self.q)) + 1
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-Q{}", self.year, self.q)
    }
}

impl FromStr for Quarter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParams(format!("quarter `{s}` is not YYYY-Qn"));
        let (y, q) = s.split_once("-Q").ok_or_else(bad)?;
        Quarter::new(y.parse().map_err(|_| bad())?, q.parse().map_err(|_| bad())?)
    }
}

impl Serialize for Quarter {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Quarter {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RebalanceStep {
    pub calibration_first: Quarter,
    pub calibration_last: Quarter,
    pub trading: Quarter,
}

impl RebalanceStep {
    pub fn calibration_window(&self) -> (NaiveDate, NaiveDate) {
        (self.calibration_first.start(), self.calibration_last.end())
    }

    pub fn trading_window(&self) -> (NaiveDate, NaiveDate) {
        (self.trading.start(), self.trading.end())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RebalanceSchedule {
    pub steps: Vec<RebalanceStep>,
}

/// Quarters spanned by a calendar's first and last session.
pub fn calendar_quarters(calendar: &TradingCalendar) -> Option<(Quarter, Quarter)> {
    let s = calendar.sessions();
    Some((Quarter::of(*s.first()?), Quarter::of(*s.last()?)))
}

/// Steps of `window_quarters` calibration quarters followed by one trading
/// quarter, advancing one quarter at a time until `end`.
pub fn build_schedule(start: Quarter, end: Quarter, window_quarters: usize) -> Result<RebalanceSchedule> {
    let span = start.span_to(end).max(0) as usize;
    if window_quarters == 0 || span < window_quarters + 1 {
        return Err(Error::InsufficientSpan { quarters: span });
    }
    let w = window_quarters as i32;
    let steps = (0..=(span - window_quarters - 1) as i32)
        .map(|k| RebalanceStep {
            calibration_first: start.plus(k),
            calibration_last: start.plus(k + w - 1),
            trading: start.plus(k + w),
        })
        .collect();
    Ok(RebalanceSchedule { steps })
}

/// [`build_schedule`] over the quarters covered by `calendar`, optionally
/// narrowed by explicit bounds.
pub fn build_schedule_for(
    calendar: &TradingCalendar,
    start: Option<Quarter>,
    end: Option<Quarter>,
    window_quarters: usize,
) -> Result<RebalanceSchedule> {
    let (first, last) =
        calendar_quarters(calendar).ok_or(Error::InsufficientSpan { quarters: 0 })?;
    build_schedule(start.unwrap_or(first), end.unwrap_or(last), window_quarters)
}

/// Signals whose entry session (next calendar session) lies in `[start, end]`.
fn stream_in_window(
    signals: &AdmittedSignals,
    calendar: &TradingCalendar,
    config: &OptimalConfig,
    deadband: f64,
    window: (NaiveDate, NaiveDate),
) -> Vec<StreamSignal> {
    signals
        .stream(&config.ticker, config.period_signal, deadband)
        .into_iter()
        .filter(|s| {
            calendar
                .next_session(s.signal_day)
                .is_ok_and(|e| (window.0..=window.1).contains(&e))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PortfolioOptions {
    pub deadband: f64,
    pub stream: StreamOptions,
    pub metrics: MetricsConfig,
    /// Count trades cut at the calibration window's end in calibration metrics.
    pub include_truncated_calibration: bool,
    pub combine: LegCombine,
    /// Regime split for the before/after summaries.
    pub split_date: NaiveDate,
    pub rolling_window: usize,
    pub workers: usize,
}

impl Default for PortfolioOptions {
    fn default() -> Self {
        PortfolioOptions {
            deadband: 0.0,
            stream: StreamOptions::default(),
            metrics: MetricsConfig::default(),
            include_truncated_calibration: false,
            combine: LegCombine::Sum,
            split_date: NaiveDate::from_ymd_opt(2025, 1, 1).unwrap(),
            rolling_window: 90,
            workers: 0,
        }
    }
}

/// How the long and short legs form the combined stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LegCombine {
    #[default]
    Sum,
    Average,
}

impl LegCombine {
    pub fn leg_weight(self) -> f64 {
        match self {
            LegCombine::Sum => 1.0,
            LegCombine::Average => 0.5,
        }
    }
}

/// Calibration-window statistics of one ticker traded on one side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub ticker: String,
    pub side: Side,
    pub sharpe: Option<f64>,
    pub mdd: f64,
    pub final_cum_return: f64,
    pub sortino: Option<f64>,
    pub downside_risk: f64,
    /// Percent, at the config's signal horizon and its mhp as holding period.
    pub accuracy: Option<f64>,
    pub beta: Option<f64>,
    /// Trades in the window.
    pub n_observations: usize,
    /// Set when the window produced no trades.
    pub flagged: bool,
}

/// Metrics of `config` replayed over `window` only; bars and signals outside
/// the window are never read.
#[allow(clippy::too_many_arguments)]
pub fn calibration_metrics(
    series: &PriceSeries,
    calendar: &TradingCalendar,
    signals: &AdmittedSignals,
    config: &OptimalConfig,
    side: Side,
    window: (NaiveDate, NaiveDate),
    benchmark: Option<&BTreeMap<NaiveDate, f64>>,
    opts: &PortfolioOptions,
) -> MetricRecord {
    let clipped = series.clip(window.0, window.1);
    let stream = stream_in_window(signals, calendar, config, opts.deadband, window);
    let outcome = simulate_stream(&clipped, &stream, &config.params, side, opts.stream);
    let trades: Vec<TradeResult> = outcome
        .trades
        .into_iter()
        .filter(|t| {
            opts.include_truncated_calibration
                || t.exit_reason != crate::trade_sim::ExitReason::Truncated
        })
        .collect();
    let daily = DailySeries::from_trades(clipped.dates(), &trades, true);
    let pnl = cum_pnl(&daily);
    let (sortino, downside_risk) =
        sortino_and_downside(daily.values(), 0.0, opts.metrics.periods_per_year);
    let holding = config.params.mhp.min(crate::signal_stats::MAX_HOLDING);
    let accuracy = directional_accuracy(&stream, &clipped, side, holding).percent();
    let beta = benchmark.and_then(|b| {
        let stock: BTreeMap<NaiveDate, f64> = clipped
            .close_returns()
            .into_iter()
            .map(|(d, r)| (d, 100.0 * r))
            .collect();
        let (x, y): (Vec<f64>, Vec<f64>) = stock
            .iter()
            .filter_map(|(d, v)| b.get(d).map(|m| (*v, *m)))
            .unzip();
        (x.len() >= 2).then(|| beta(&x, &y)).flatten()
    });
    MetricRecord {
        ticker: series.ticker.clone(),
        side,
        sharpe: ann_sharpe(daily.values(), opts.metrics),
        mdd: max_drawdown(&pnl),
        final_cum_return: pnl.final_value(),
        sortino,
        downside_risk,
        accuracy,
        beta,
        n_observations: trades.len(),
        flagged: trades.is_empty(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMetric {
    Sharpe,
    Mdd,
    FinalCumReturn,
    Sortino,
    Beta,
    DownsideRisk,
    Accuracy,
}

impl RankMetric {
    pub fn value(self, r: &MetricRecord) -> Option<f64> {
        match self {
            RankMetric::Sharpe => r.sharpe,
            RankMetric::Mdd => Some(r.mdd),
            RankMetric::FinalCumReturn => Some(r.final_cum_return),
            RankMetric::Sortino => r.sortino,
            RankMetric::Beta => r.beta,
            RankMetric::DownsideRisk => Some(r.downside_risk),
            RankMetric::Accuracy => r.accuracy,
        }
    }

    /// Risk measures rank ascending, return measures descending.
    pub fn default_order(self) -> RankOrder {
        match self {
            RankMetric::Mdd | RankMetric::Beta | RankMetric::DownsideRisk => RankOrder::Ascending,
            _ => RankOrder::Descending,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankOrder {
    Ascending,
    Descending,
}

/// Drop names whose beta is above (or below) `bound`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaFilter {
    pub bound: f64,
    pub exclude_above: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionRule {
    pub min_observations: usize,
    pub beta_filter: Option<BetaFilter>,
    pub min_sharpe: Option<f64>,
    pub rank_metric: RankMetric,
    /// Defaults to the metric's natural polarity.
    pub rank_order: Option<RankOrder>,
    pub top_n: usize,
}

impl Default for SelectionRule {
    /// Lowest-MDD 20 names per side after dropping beta > 1.
    fn default() -> Self {
        SelectionRule {
            min_observations: 10,
            beta_filter: Some(BetaFilter {
                bound: 1.0,
                exclude_above: true,
            }),
            min_sharpe: None,
            rank_metric: RankMetric::Mdd,
            rank_order: None,
            top_n: 20,
        }
    }
}

impl SelectionRule {
    fn passes(&self, r: &MetricRecord) -> bool {
        if r.flagged || r.n_observations < self.min_observations {
            return false;
        }
        if let Some(f) = self.beta_filter {
            // an undefined beta cannot be shown to pass the filter
            let Some(b) = r.beta else { return false };
            if (f.exclude_above && b > f.bound) || (!f.exclude_above && b < f.bound) {
                return false;
            }
        }
        if let Some(floor) = self.min_sharpe {
            if r.sharpe.is_none_or(|s| s < floor) {
                return false;
            }
        }
        true
    }
}

/// Rank-ordered watch lists for one trading quarter.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Book {
    pub long: Vec<String>,
    pub short: Vec<String>,
    pub diagnostics: Vec<String>,
}

/// Filters, ranks and truncates the records of each side.
pub fn select_book(records: &[MetricRecord], rule: &SelectionRule) -> Result<Book> {
    if rule.top_n == 0 {
        return Err(Error::InvalidParams("top_n must be >= 1".into()));
    }
    let order = rule.rank_order.unwrap_or(rule.rank_metric.default_order());
    let mut book = Book::default();
    for side in [Side::Long, Side::Short] {
        let mut pool: Vec<&MetricRecord> = records
            .iter()
            .filter(|r| r.side == side && rule.passes(r))
            .collect();
        pool.sort_by(|a, b| {
            let (va, vb) = (rule.rank_metric.value(a), rule.rank_metric.value(b));
            let primary = match (va, vb) {
                (Some(x), Some(y)) => match order {
                    RankOrder::Ascending => x.total_cmp(&y),
                    RankOrder::Descending => y.total_cmp(&x),
                },
                (Some(_), None) => Ordering::Less,
                (None, Some(_)) => Ordering::Greater,
                (None, None) => Ordering::Equal,
            };
            primary.then(a.ticker.cmp(&b.ticker))
        });
        let picked: Vec<String> = pool
            .iter()
            .take(rule.top_n)
            .map(|r| r.ticker.clone())
            .collect();
        if picked.len() < rule.top_n {
            book.diagnostics.push(format!(
                "{side} book has {} of {} names",
                picked.len(),
                rule.top_n
            ));
        }
        match side {
            Side::Long => book.long = picked,
            _ => book.short = picked,
        }
    }
    Ok(book)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    #[default]
    Equal,
    /// Weight of rank `r` proportional to `k + 1 - r`.
    LinearDecay,
}

impl WeightScheme {
    /// Weights for a book of `k` names; they sum to 1.
    pub fn weights(self, k: usize) -> Vec<f64> {
        if k == 0 {
            return Vec::new();
        }
        match self {
            WeightScheme::Equal => vec![1.0 / k as f64; k],
            WeightScheme::LinearDecay => {
                let total = (k * (k + 1) / 2) as f64;
                (1..=k).map(|r| (k + 1 - r) as f64 / total).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accrual {
    /// Financing charged on every session of the run.
    #[default]
    WholeRun,
    /// Financing charged only on sessions with an open position.
    ActiveSessions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LeverageSpec {
    pub multiplier: f64,
    /// Annual cost of capital, percent.
    pub annual_cost: f64,
    pub accrual: Accrual,
}

impl Default for LeverageSpec {
    fn default() -> Self {
        LeverageSpec {
            multiplier: 1.0,
            annual_cost: 0.0,
            accrual: Accrual::WholeRun,
        }
    }
}

/// Scales each daily return by the multiplier and subtracts
/// `(multiplier - 1) * annual_cost / periods_per_year` on charged sessions.
/// `active` marks the sessions with open positions for
/// [`Accrual::ActiveSessions`].
pub fn apply_leverage(
    daily: &DailySeries,
    spec: &LeverageSpec,
    periods_per_year: f64,
    active: Option<&[bool]>,
) -> Result<DailySeries> {
    if spec.multiplier.is_nan() || spec.multiplier < 1.0 {
        return Err(Error::InvalidParams("leverage multiplier must be >= 1".into()));
    }
    if let Some(mask) = active {
        if mask.len() != daily.len() {
            return Err(Error::InvalidParams("activity mask length mismatch".into()));
        }
    }
    let charge = (spec.multiplier - 1.0) * spec.annual_cost / periods_per_year;
    let values = daily
        .values()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let charged = match spec.accrual {
                Accrual::WholeRun => true,
                Accrual::ActiveSessions => active.is_some_and(|m| m[i]),
            };
            let levered = r * spec.multiplier;
            if charged && charge != 0.0 {
                levered - charge
            } else {
                levered
            }
        })
        .collect();
    DailySeries::new(daily.dates().to_vec(), values)
}

/// A trade taken by the portfolio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookTrade {
    pub quarter: Quarter,
    pub side: Side,
    pub rank: usize,
    pub weight: f64,
    pub trade: TradeResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub long: DailySeries,
    pub short: DailySeries,
    pub combined: DailySeries,
    pub trades: Vec<BookTrade>,
}

/// Everything the walk-forward needs besides the rules.
pub struct Universe<'a> {
    pub prices: &'a PriceUniverse,
    pub signals: &'a AdmittedSignals,
    pub benchmark: Option<&'a PriceSeries>,
    pub configs: ConfigSource<'a>,
}

/// Where each step's per-ticker execution configs come from.
pub enum ConfigSource<'a> {
    /// Supplied once for the whole run.
    Fixed(&'a BTreeMap<String, OptimalConfig>),
    /// Re-optimized on every calibration window.
    PerStep {
        grid: &'a GridSpec,
        sides: &'a [Side],
        criterion: Criterion,
        min_trades: usize,
        grid_options: &'a GridOptions,
    },
}

/// Trades one quarter's books. Each name trades only signals matching its
/// book side with its own config; its daily returns are scaled by its weight.
pub fn run_step(
    book: &Book,
    quarter: Quarter,
    prices: &PriceUniverse,
    signals: &AdmittedSignals,
    configs: &BTreeMap<String, OptimalConfig>,
    weights: WeightScheme,
    opts: &PortfolioOptions,
) -> StepOutcome {
    let window = (quarter.start(), quarter.end());
    let dates: Vec<NaiveDate> = prices.calendar.between(window.0, window.1).to_vec();

    let mut jobs: Vec<(Side, usize, f64, &str)> = Vec::new();
    for (side, names) in [(Side::Long, &book.long), (Side::Short, &book.short)] {
        for (rank, (name, w)) in names.iter().zip(weights.weights(names.len())).enumerate() {
            jobs.push((side, rank + 1, w, name.as_str()));
        }
    }
    let per_name = par::map(&jobs, Workers(opts.workers), |&(side, rank, weight, name)| {
        let (Some(series), Some(config)) = (prices.get(name), configs.get(name)) else {
            return (side, DailySeries::zeros(dates.iter().copied()), Vec::new());
        };
        let clipped = series.clip(window.0, window.1);
        let stream = stream_in_window(signals, &prices.calendar, config, opts.deadband, window);
        let outcome = simulate_stream(&clipped, &stream, &config.params, side, opts.stream);
        let mut daily = DailySeries::zeros(dates.iter().copied());
        for t in &outcome.trades {
            daily.add_on(t.exit_date, 100.0 * t.trade_return * weight);
        }
        let trades = outcome
            .trades
            .into_iter()
            .map(|trade| BookTrade {
                quarter,
                side,
                rank,
                weight,
                trade,
            })
            .collect::<Vec<_>>();
        (side, daily, trades)
    });

    let mut long = DailySeries::zeros(dates.iter().copied());
    let mut short = DailySeries::zeros(dates.iter().copied());
    let mut trades = Vec::new();
    for (side, daily, t) in per_name {
        let leg = if side == Side::Long { &mut long } else { &mut short };
        for (d, v) in daily.iter() {
            leg.add_on(d, v);
        }
        trades.extend(t);
    }
    let combined = combine_legs(&long, &short, opts.combine);
    StepOutcome {
        long,
        short,
        combined,
        trades,
    }
}

fn combine_legs(long: &DailySeries, short: &DailySeries, how: LegCombine) -> DailySeries {
    let w = how.leg_weight();
    DailySeries::sum([&long.scaled(w), &short.scaled(w)])
}

/// Per-step record of what was selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: RebalanceStep,
    pub book: Book,
    pub long_weights: Vec<f64>,
    pub short_weights: Vec<f64>,
    pub metrics: Vec<MetricRecord>,
    pub configs: Vec<OptimalConfig>,
}

/// Return, risk and trade statistics of one leg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegReport {
    pub summary: RiskSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSummary {
    pub long: RiskSummary,
    pub short: RiskSummary,
    pub combined: RiskSummary,
    pub levered: Option<RiskSummary>,
    pub before_split: RiskSummary,
    pub after_split: RiskSummary,
    pub split_date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioRun {
    pub steps: Vec<StepRecord>,
    pub long: DailySeries,
    pub short: DailySeries,
    pub combined: DailySeries,
    pub levered: Option<DailySeries>,
    pub trades: Vec<BookTrade>,
    pub rolling_sharpe: Vec<Option<f64>>,
    pub rolling_corr: Vec<Option<f64>>,
    pub summary: PortfolioSummary,
}

fn step_configs(
    universe: &Universe<'_>,
    step: &RebalanceStep,
    workers: Workers,
) -> Vec<OptimalConfig> {
    let window = step.calibration_window();
    match &universe.configs {
        ConfigSource::Fixed(map) => map.values().cloned().collect(),
        ConfigSource::PerStep {
            grid,
            sides,
            criterion,
            min_trades,
            grid_options,
        } => {
            let tickers: Vec<&PriceSeries> = universe.prices.series.values().collect();
            let calibration =
                universe
                    .signals
                    .entering_between(&universe.prices.calendar, window.0, window.1);
            par::map(&tickers, workers, |series| {
                let clipped = series.clip(window.0, window.1);
                let results = run_grid(&clipped, &calibration, grid, sides, grid_options);
                select_optimal(&results, *criterion, *min_trades, window).ok()
            })
            .into_iter()
            .flatten()
            .collect()
        }
    }
}

/// Records of every (ticker, side) the configs assign, on one window.
fn step_metrics(
    universe: &Universe<'_>,
    configs: &[OptimalConfig],
    window: (NaiveDate, NaiveDate),
    bench: Option<&BTreeMap<NaiveDate, f64>>,
    opts: &PortfolioOptions,
) -> Vec<MetricRecord> {
    let mut jobs: Vec<(&OptimalConfig, Side)> = Vec::new();
    for c in configs {
        match c.strategy {
            Side::Both => {
                jobs.push((c, Side::Long));
                jobs.push((c, Side::Short));
            }
            side => jobs.push((c, side)),
        }
    }
    par::map(&jobs, Workers(opts.workers), |&(config, side)| {
        let series = universe.prices.get(&config.ticker)?;
        Some(calibration_metrics(
            series,
            &universe.prices.calendar,
            universe.signals,
            config,
            side,
            window,
            bench,
            opts,
        ))
    })
    .into_iter()
    .flatten()
    .collect()
}

/// Runs every step of `schedule` and assembles streams and summaries.
pub fn run_walk_forward(
    universe: &Universe<'_>,
    schedule: &RebalanceSchedule,
    rule: &SelectionRule,
    weights: WeightScheme,
    leverage: &LeverageSpec,
    opts: &PortfolioOptions,
) -> Result<PortfolioRun> {
    let bench = universe.benchmark.map(benchmark_returns);
    let workers = Workers(opts.workers);

    let mut steps = Vec::with_capacity(schedule.steps.len());
    let mut outcomes = Vec::with_capacity(schedule.steps.len());
    for step in &schedule.steps {
        let configs = step_configs(universe, step, workers);
        let window = step.calibration_window();
        let metrics = step_metrics(universe, &configs, window, bench.as_ref(), opts);
        let book = select_book(&metrics, rule)?;
        let config_map: BTreeMap<String, OptimalConfig> = configs
            .iter()
            .map(|c| (c.ticker.clone(), c.clone()))
            .collect();
        let outcome = run_step(
            &book,
            step.trading,
            universe.prices,
            universe.signals,
            &config_map,
            weights,
            opts,
        );
        steps.push(StepRecord {
            step: step.clone(),
            long_weights: weights.weights(book.long.len()),
            short_weights: weights.weights(book.short.len()),
            book,
            metrics,
            configs,
        });
        outcomes.push(outcome);
    }

    let long = DailySeries::sum(outcomes.iter().map(|o| &o.long));
    let short = DailySeries::sum(outcomes.iter().map(|o| &o.short));
    let combined = DailySeries::sum(outcomes.iter().map(|o| &o.combined));
    let trades: Vec<BookTrade> = outcomes.into_iter().flat_map(|o| o.trades).collect();

    let leg_trades = |side: Side| -> Vec<TradeResult> {
        trades
            .iter()
            .filter(|t| t.side == side)
            .map(|t| t.trade.clone())
            .collect()
    };
    let all_trades: Vec<TradeResult> = trades.iter().map(|t| t.trade.clone()).collect();
    let cfg = opts.metrics;

    let levered = if leverage.multiplier != 1.0 || leverage.annual_cost != 0.0 {
        let active: Vec<bool> = combined
            .dates()
            .iter()
            .map(|d| {
                all_trades
                    .iter()
                    .any(|t| t.entry_date <= *d && *d <= t.exit_date)
            })
            .collect();
        Some(apply_leverage(
            &combined,
            leverage,
            cfg.periods_per_year,
            Some(&active),
        )?)
    } else {
        None
    };

    let (before, after) = combined.split_at(opts.split_date);
    let trades_before: Vec<TradeResult> = all_trades
        .iter()
        .filter(|t| t.exit_date < opts.split_date)
        .cloned()
        .collect();
    let trades_after: Vec<TradeResult> = all_trades
        .iter()
        .filter(|t| t.exit_date >= opts.split_date)
        .cloned()
        .collect();

    let (rolling_sharpe_series, rolling_corr_series) = rolling_series(&combined, bench.as_ref(), opts);

    let summary = PortfolioSummary {
        long: risk_summary(&long, &leg_trades(Side::Long), bench.as_ref(), cfg),
        short: risk_summary(&short, &leg_trades(Side::Short), bench.as_ref(), cfg),
        combined: risk_summary(&combined, &all_trades, bench.as_ref(), cfg),
        levered: levered
            .as_ref()
            .map(|l| risk_summary(l, &all_trades, bench.as_ref(), cfg)),
        before_split: risk_summary(&before, &trades_before, bench.as_ref(), cfg),
        after_split: risk_summary(&after, &trades_after, bench.as_ref(), cfg),
        split_date: opts.split_date,
    };

    Ok(PortfolioRun {
        steps,
        long,
        short,
        combined,
        levered,
        trades,
        rolling_sharpe: rolling_sharpe_series,
        rolling_corr: rolling_corr_series,
        summary,
    })
}

/// Rolling Sharpe of `daily` and rolling correlation with the benchmark,
/// both aligned to `daily`'s dates (benchmark gaps count as undefined).
pub fn rolling_series(
    daily: &DailySeries,
    bench: Option<&BTreeMap<NaiveDate, f64>>,
    opts: &PortfolioOptions,
) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    let window = opts.rolling_window.max(2);
    let sharpe = rolling_sharpe(daily.values(), window, opts.metrics);
    let corr = match bench {
        Some(b) => {
            let m: Vec<f64> = daily
                .dates()
                .iter()
                .map(|d| b.get(d).copied().unwrap_or(0.0))
                .collect();
            rolling_corr(daily.values(), &m, window)
        }
        None => vec![None; daily.len()],
    };
    (sharpe, corr)
}

/// Rank-by-quarter matrix of one side's book membership.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnoverGrid {
    pub quarters: Vec<Quarter>,
    /// `rows[r][q]` is the rank-`r + 1` ticker of quarter `q`.
    pub rows: Vec<Vec<Option<String>>>,
}

pub fn turnover_grid(run: &PortfolioRun, side: Side) -> TurnoverGrid {
    let books: Vec<&Vec<String>> = run
        .steps
        .iter()
        .map(|s| match side {
            Side::Short => &s.book.short,
            _ => &s.book.long,
        })
        .collect();
    let depth = books.iter().map(|b| b.len()).max().unwrap_or(0);
    let rows = (0..depth)
        .map(|r| books.iter().map(|b| b.get(r).cloned()).collect())
        .collect();
    TurnoverGrid {
        quarters: run.steps.iter().map(|s| s.step.trading).collect(),
        rows,
    }
}

pub fn write_turnover<W: std::io::Write>(writer: W, grid: &TurnoverGrid) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["rank".to_string()];
    header.extend(grid.quarters.iter().map(Quarter::to_string));
    w.write_record(&header)?;
    for (r, row) in grid.rows.iter().enumerate() {
        let mut rec = vec![(r + 1).to_string()];
        rec.extend(row.iter().map(|c| c.clone().unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<turnover writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(s: &str) -> Quarter {
        s.parse().unwrap()
    }

    #[test]
    fn quarter_arithmetic() {
        assert_eq!(q("2021-Q3").plus(6), q("2023-Q1"));
        assert_eq!(q("2023-Q1").plus(-1), q("2022-Q4"));
        assert_eq!(q("2021-Q3").span_to(q("2025-Q2")), 16);
        assert_eq!(q("2024-Q1").end(), NaiveDate::from_ymd_opt(2024, 3, 31).unwrap());
        assert_eq!(Quarter::of(NaiveDate::from_ymd_opt(2024, 12, 31).unwrap()), q("2024-Q4"));
        assert!("2024-Q5".parse::<Quarter>().is_err());
    }

    #[test]
    fn schedule_span() {
        let s = build_schedule(q("2021-Q3"), q("2025-Q2"), 6).unwrap();
        assert_eq!(s.steps[0].trading, q("2023-Q1"));
        assert_eq!(s.steps[0].calibration_first, q("2021-Q3"));
        assert_eq!(s.steps[0].calibration_last, q("2022-Q4"));
        assert_eq!(s.steps.last().unwrap().trading, q("2025-Q2"));
        assert_eq!(s.steps.len(), 10);

        let seven = build_schedule(q("2020-Q1"), q("2021-Q3"), 6).unwrap();
        assert_eq!(seven.steps.len(), 1);
        let nine = build_schedule(q("2020-Q1"), q("2022-Q1"), 6).unwrap();
        assert_eq!(nine.steps.len(), 3);
        for w in nine.steps.windows(2) {
            assert_eq!(w[0].trading.next(), w[1].trading);
            assert_eq!(w[0].calibration_first.next(), w[1].calibration_first);
        }
        assert!(matches!(
            build_schedule(q("2020-Q1"), q("2021-Q2"), 6),
            Err(Error::InsufficientSpan { quarters: 6 })
        ));
    }

    #[test]
    fn weights_sum_to_one() {
        for k in 1..25 {
            for scheme in [WeightScheme::Equal, WeightScheme::LinearDecay] {
                let w = scheme.weights(k);
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            let lin = WeightScheme::LinearDecay.weights(k);
            assert!(lin.windows(2).all(|p| p[0] > p[1]));
        }
        assert!(WeightScheme::Equal.weights(0).is_empty());
    }

    fn record(t: &str, side: Side, mdd: f64, beta: Option<f64>) -> MetricRecord {
        MetricRecord {
            ticker: t.into(),
            side,
            sharpe: Some(1.0),
            mdd,
            final_cum_return: 1.0,
            sortino: None,
            downside_risk: 0.0,
            accuracy: None,
            beta,
            n_observations: 50,
            flagged: false,
        }
    }

    #[test]
    fn book_rank_and_filters() {
        let rule = SelectionRule {
            top_n: 1,
            ..Default::default()
        };
        let recs = [
            record("A", Side::Long, 5.0, Some(0.5)),
            record("B", Side::Long, 2.0, Some(0.9)),
            record("C", Side::Long, 1.0, Some(1.5)),
            record("D", Side::Short, 3.0, Some(0.2)),
        ];
        let book = select_book(&recs, &rule).unwrap();
        assert_eq!(book.long, ["B"]);
        assert_eq!(book.short, ["D"]);

        let wide = SelectionRule {
            top_n: 5,
            beta_filter: None,
            ..Default::default()
        };
        let book = select_book(&recs, &wide).unwrap();
        assert_eq!(book.long, ["C", "B", "A"]);
        assert_eq!(book.diagnostics.len(), 2);
        assert!(select_book(&recs, &SelectionRule { top_n: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn leverage_linearity() {
        let dates: Vec<NaiveDate> = (0..252)
            .map(|i| NaiveDate::from_ymd_opt(2024, 1, 1).unwrap() + chrono::Days::new(i))
            .collect();
        let vals: Vec<f64> = (0..252).map(|i| ((i * 37) % 11) as f64 * 0.1 - 0.5).collect();
        let base = DailySeries::new(dates, vals).unwrap();
        let same = apply_leverage(&base, &LeverageSpec::default(), 252.0, None).unwrap();
        assert_eq!(same, base);
        let spec = LeverageSpec {
            multiplier: 2.0,
            annual_cost: 4.0,
            accrual: Accrual::WholeRun,
        };
        let lev = apply_leverage(&base, &spec, 252.0, None).unwrap();
        let base_final: f64 = base.values().iter().sum();
        let lev_final: f64 = lev.values().iter().sum();
        assert!((lev_final - (2.0 * base_final - 4.0)).abs() < 1e-9);
        assert!(apply_leverage(&base, &LeverageSpec { multiplier: 0.5, ..spec }, 252.0, None).is_err());
    }
}
