//! PT/SL/MHP scenario grid, per-scenario metrics and optimal-config selection.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{Bar, PriceSeries, PriceUniverse, DATE_FORMAT};
use crate::par::{self, Workers};
use crate::perf_metrics::{ann_sharpe, max_drawdown_of, MetricsConfig};
use crate::signal_store::{AdmittedSignals, Direction, StreamSignal, MAX_HORIZON};
use crate::trade_sim::{
    scan, ExecParams, ExitReason, Overlap, Side, StreamOptions,
};

/// Axis values of the scenario grid; each axis sorted and duplicate-free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub mhp_values: Vec<usize>,
    pub pt_values: Vec<f64>,
    pub sl_values: Vec<f64>,
}

fn strictly_ascending<T: PartialOrd>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

/// `count` values `(start + step * i) / 10_000` for `i in 0..count`.
fn ladder(start: i64, step: i64, count: usize) -> Vec<f64> {
    (0..count as i64)
        .map(|i| (start + step * i) as f64 / 10_000.0)
        .collect()
}

impl GridSpec {
    pub fn new(mhp_values: Vec<usize>, pt_values: Vec<f64>, sl_values: Vec<f64>) -> Result<Self> {
        let g = GridSpec {
            mhp_values,
            pt_values,
            sl_values,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mhp_values.is_empty() || self.pt_values.is_empty() || self.sl_values.is_empty() {
            return Err(Error::InvalidParams("grid axes must be non-empty".into()));
        }
        if !strictly_ascending(&self.mhp_values)
            || !strictly_ascending(&self.pt_values)
            || !strictly_ascending(&self.sl_values)
        {
            return Err(Error::InvalidParams(
                "grid axes must be sorted without duplicates".into(),
            ));
        }
        for p in self.points() {
            p.validate()?;
        }
        Ok(())
    }

    /// MHP 1..=10, PT 0.001 step 0.0005 and SL -0.04 step 0.005, upper
    /// endpoints excluded: 10 x 38 x 6 = 2,280 points.
    pub fn default_grid() -> Self {
        GridSpec {
            mhp_values: (1..=10).collect(),
            pt_values: ladder(10, 5, 38),
            sl_values: ladder(-400, 50, 6),
        }
    }

    /// Same ranges with the upper endpoints 0.02 and -0.01 included.
    pub fn inclusive_grid() -> Self {
        GridSpec {
            mhp_values: (1..=10).collect(),
            pt_values: ladder(10, 5, 39),
            sl_values: ladder(-400, 50, 7),
        }
    }

    pub fn len(&self) -> usize {
        self.mhp_values.len() * self.pt_values.len() * self.sl_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Points in (mhp, pt, sl) lexicographic order.
    pub fn points(&self) -> impl Iterator<Item = ExecParams> + '_ {
        self.mhp_values.iter().flat_map(move |&mhp| {
            self.pt_values.iter().flat_map(move |&pt| {
                self.sl_values
                    .iter()
                    .map(move |&sl| ExecParams { mhp, pt, sl })
            })
        })
    }
}

pub fn default_grid() -> GridSpec {
    GridSpec::default_grid()
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::default_grid()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub ticker: String,
    pub horizon: u8,
    pub side: Side,
    pub params: ExecParams,
    /// Percent.
    pub cum_return: f64,
    pub sharpe: Option<f64>,
    /// Percentage points.
    pub mdd: f64,
    pub n_trades: usize,
    /// Percent of trades with a strictly positive return.
    pub win_rate: Option<f64>,
}

impl ScenarioResult {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.ticker
            .cmp(&other.ticker)
            .then(self.horizon.cmp(&other.horizon))
            .then(self.side.cmp(&other.side))
            .then(self.params.mhp.cmp(&other.params.mhp))
            .then(self.params.pt.total_cmp(&other.params.pt))
            .then(self.params.sl.total_cmp(&other.params.sl))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridOptions {
    pub horizons: Vec<u8>,
    pub deadband: f64,
    pub include_truncated: bool,
    pub stream: StreamOptions,
    pub metrics: MetricsConfig,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            horizons: (1..=MAX_HORIZON).collect(),
            deadband: 0.0,
            include_truncated: false,
            stream: StreamOptions::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

/// Metrics of one stream under `params`, without materializing trades.
/// Agrees with booking the trades of [`crate::trade_sim::simulate_trades`].
fn fast_metrics(
    bars: &[Bar],
    entries: &[(usize, Direction)],
    params: &ExecParams,
    opts: &GridOptions,
    daily: &mut Vec<f64>,
    cum: &mut Vec<f64>,
) -> (f64, Option<f64>, f64, usize, Option<f64>) {
    daily.clear();
    daily.resize(bars.len(), 0.0);
    let single = opts.stream.overlap == Overlap::SinglePosition;
    let mut busy: Option<usize> = None;
    let (mut n, mut wins) = (0usize, 0usize);
    for &(entry, dir) in entries {
        if single && busy.is_some_and(|b| entry <= b) {
            continue;
        }
        let x = scan(bars, entry, dir, params, opts.stream.tiebreak);
        busy = Some(x.index);
        if !opts.include_truncated && x.reason == ExitReason::Truncated {
            continue;
        }
        daily[x.index] += 100.0 * x.ret;
        n += 1;
        if x.ret > 0.0 {
            wins += 1;
        }
    }
    cum.clear();
    let mut running = 0.0;
    for r in daily.iter() {
        running += r;
        cum.push(running);
    }
    let win_rate = (n > 0).then(|| 100.0 * wins as f64 / n as f64);
    (running, ann_sharpe(daily, opts.metrics), max_drawdown_of(cum), n, win_rate)
}

fn evaluate(
    series: &PriceSeries,
    horizon: u8,
    side: Side,
    stream: &[StreamSignal],
    grid: &GridSpec,
    opts: &GridOptions,
) -> Vec<ScenarioResult> {
    let entries: Vec<(usize, Direction)> = stream
        .iter()
        .filter(|s| side.admits(s.direction))
        .filter_map(|s| Some((series.entry_index_after(s.signal_day)?, s.direction)))
        .collect();
    let (mut daily, mut cum) = (Vec::new(), Vec::new());
    grid.points()
        .map(|params| {
            let (cum_return, sharpe, mdd, n_trades, win_rate) =
                fast_metrics(series.bars(), &entries, &params, opts, &mut daily, &mut cum);
            ScenarioResult {
                ticker: series.ticker.clone(),
                horizon,
                side,
                params,
                cum_return,
                sharpe,
                mdd,
                n_trades,
                win_rate,
            }
        })
        .collect()
}

/// Every (horizon, side, grid point) scenario of one ticker, sorted by key.
pub fn run_grid(
    series: &PriceSeries,
    signals: &AdmittedSignals,
    grid: &GridSpec,
    sides: &[Side],
    opts: &GridOptions,
) -> Vec<ScenarioResult> {
    let mut out = Vec::new();
    for &h in &opts.horizons {
        let stream = signals.stream(&series.ticker, h, opts.deadband);
        for &side in sides {
            out.extend(evaluate(series, h, side, &stream, grid, opts));
        }
    }
    out.sort_by(ScenarioResult::key_cmp);
    out
}

/// [`run_grid`] over every ticker of `universe`, sharded by
/// (ticker, horizon, side) across `workers`. Output is sorted by key and does
/// not depend on the worker count.
pub fn run_grid_universe(
    universe: &PriceUniverse,
    signals: &AdmittedSignals,
    grid: &GridSpec,
    sides: &[Side],
    opts: &GridOptions,
    workers: Workers,
) -> Vec<ScenarioResult> {
    struct Task<'a> {
        series: &'a PriceSeries,
        horizon: u8,
        side: Side,
    }
    let mut tasks = Vec::new();
    for series in universe.series.values() {
        for &horizon in &opts.horizons {
            for &side in sides {
                tasks.push(Task {
                    series,
                    horizon,
                    side,
                });
            }
        }
    }
    let chunks = par::map(&tasks, workers, |t| {
        let stream = signals.stream(&t.series.ticker, t.horizon, opts.deadband);
        evaluate(t.series, t.horizon, t.side, &stream, grid, opts)
    });
    let mut out: Vec<ScenarioResult> = chunks.into_iter().flatten().collect();
    out.sort_by(ScenarioResult::key_cmp);
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    #[default]
    MaxSharpe,
    MinMdd,
    MaxCumReturn,
}

/// The execution configuration chosen for one ticker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalConfig {
    pub ticker: String,
    pub strategy: Side,
    pub period_signal: u8,
    pub params: ExecParams,
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
}

fn sharpe_key(s: &ScenarioResult) -> f64 {
    s.sharpe.unwrap_or(f64::NEG_INFINITY)
}

/// Total order where `Less` means `a` is the better scenario.
pub fn compare_scenarios(a: &ScenarioResult, b: &ScenarioResult, criterion: Criterion) -> Ordering {
    let primary = match criterion {
        Criterion::MaxSharpe => sharpe_key(b).total_cmp(&sharpe_key(a)),
        Criterion::MinMdd => a.mdd.total_cmp(&b.mdd),
        Criterion::MaxCumReturn => b.cum_return.total_cmp(&a.cum_return),
    };
    let secondary = match criterion {
        Criterion::MinMdd => sharpe_key(b).total_cmp(&sharpe_key(a)),
        _ => Ordering::Equal,
    };
    primary
        .then(secondary)
        .then(a.mdd.total_cmp(&b.mdd))
        .then(b.cum_return.total_cmp(&a.cum_return))
        .then(a.params.mhp.cmp(&b.params.mhp))
        .then(b.params.pt.total_cmp(&a.params.pt))
        .then(b.params.sl.total_cmp(&a.params.sl))
        .then(a.horizon.cmp(&b.horizon))
        .then(a.side.cmp(&b.side))
        .then(a.ticker.cmp(&b.ticker))
}

/// Best scenario among those with at least `min_trades` trades.
pub fn select_optimal(
    results: &[ScenarioResult],
    criterion: Criterion,
    min_trades: usize,
    window: (NaiveDate, NaiveDate),
) -> Result<OptimalConfig> {
    let best = results
        .iter()
        .filter(|r| r.n_trades >= min_trades)
        .min_by(|a, b| compare_scenarios(a, b, criterion))
        .ok_or_else(|| Error::NoQualifyingScenario {
            ticker: results.first().map(|r| r.ticker.clone()).unwrap_or_default(),
            min_trades,
        })?;
    Ok(OptimalConfig {
        ticker: best.ticker.clone(),
        strategy: best.side,
        period_signal: best.horizon,
        params: best.params,
        window_start: window.0,
        window_end: window.1,
    })
}

/// Splits sorted universe results per ticker and selects each optimum.
/// Tickers without a qualifying scenario are returned as errors.
pub fn select_all(
    results: &[ScenarioResult],
    criterion: Criterion,
    min_trades: usize,
    windows: &BTreeMap<String, (NaiveDate, NaiveDate)>,
) -> (Vec<OptimalConfig>, Vec<Error>) {
    let mut configs = Vec::new();
    let mut errors = Vec::new();
    for chunk in results.chunk_by(|a, b| a.ticker == b.ticker) {
        let ticker = &chunk[0].ticker;
        let Some(window) = windows.get(ticker) else {
            continue;
        };
        match select_optimal(chunk, criterion, min_trades, *window) {
            Ok(c) => configs.push(c),
            Err(e) => errors.push(e),
        }
    }
    (configs, errors)
}

fn opt_str(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_scenarios<W: std::io::Write>(writer: W, results: &[ScenarioResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "ticker", "horizon", "side", "mhp", "pt", "sl", "cum_return", "sharpe", "mdd",
        "n_trades", "win_rate",
    ])?;
    for r in results {
        w.write_record([
            r.ticker.clone(),
            r.horizon.to_string(),
            r.side.to_string(),
            r.params.mhp.to_string(),
            r.params.pt.to_string(),
            r.params.sl.to_string(),
            r.cum_return.to_string(),
            opt_str(r.sharpe),
            r.mdd.to_string(),
            r.n_trades.to_string(),
            opt_str(r.win_rate),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<scenario writer>", e))?;
    Ok(())
}

pub fn write_optimal<W: std::io::Write>(writer: W, configs: &[OptimalConfig]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "ticker", "strategy", "period_signal", "mhp", "pt", "sl", "window_start", "window_end",
    ])?;
    for c in configs {
        w.write_record([
            c.ticker.clone(),
            c.strategy.strategy_label().to_string(),
            c.period_signal.to_string(),
            c.params.mhp.to_string(),
            c.params.pt.to_string(),
            c.params.sl.to_string(),
            c.window_start.format(DATE_FORMAT).to_string(),
            c.window_end.format(DATE_FORMAT).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<optimal writer>", e))?;
    Ok(())
}

/// Reads an optimal-config file; `#` lines are comments.
pub fn read_optimal<R: std::io::Read>(reader: R) -> Result<Vec<OptimalConfig>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| Error::MalformedRow {
            line,
            reason: format!("bad {what}"),
        };
        let f = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
        let date = |i: usize, what: &str| {
            NaiveDate::parse_from_str(f(i), DATE_FORMAT).map_err(|_| bad(what))
        };
        let params = ExecParams::new(
            f(3).parse().map_err(|_| bad("mhp"))?,
            f(4).parse().map_err(|_| bad("pt"))?,
            f(5).parse().map_err(|_| bad("sl"))?,
        )?;
        let period_signal: u8 = f(2).parse().map_err(|_| bad("period_signal"))?;
        if !(1..=MAX_HORIZON).contains(&period_signal) {
            return Err(Error::HorizonOutOfRange {
                line,
                horizon: i64::from(period_signal),
            });
        }
        out.push(OptimalConfig {
            ticker: f(0).to_string(),
            strategy: f(1).parse()?,
            period_signal,
            params,
            window_start: date(6, "window_start")?,
            window_end: date(7, "window_end")?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(sharpe: Option<f64>, mdd: f64, cum: f64, n: usize) -> ScenarioResult {
        ScenarioResult {
            ticker: "T".into(),
            horizon: 1,
            side: Side::Long,
            params: ExecParams {
                mhp: 1,
                pt: 0.01,
                sl: -0.02,
            },
            cum_return: cum,
            sharpe,
            mdd,
            n_trades: n,
            win_rate: None,
        }
    }

    fn window() -> (NaiveDate, NaiveDate) {
        (
            NaiveDate::from_ymd_opt(2021, 7, 1).unwrap(),
            NaiveDate::from_ymd_opt(2022, 12, 31).unwrap(),
        )
    }

    #[test]
    fn default_grid_has_2280_points() {
        let g = default_grid();
        assert_eq!(
            (g.mhp_values.len(), g.pt_values.len(), g.sl_values.len()),
            (10, 38, 6)
        );
        assert_eq!(g.len(), 2280);
        assert_eq!(g.points().count(), 2280);
        assert_eq!(g.pt_values[0], 0.001);
        assert_eq!(g.pt_values[1], 0.0015);
        assert_eq!(*g.pt_values.last().unwrap(), 0.0195);
        assert_eq!(g.sl_values, vec![-0.04, -0.035, -0.03, -0.025, -0.02, -0.015]);
        g.validate().unwrap();
    }

    #[test]
    fn inclusive_grid_has_2730_points() {
        let g = GridSpec::inclusive_grid();
        assert_eq!(g.len(), 2730);
        assert_eq!(g.points().count(), 10 * 39 * 7);
        assert_eq!(*g.pt_values.last().unwrap(), 0.02);
        assert_eq!(*g.sl_values.last().unwrap(), -0.01);
    }

    #[test]
    fn singleton_and_invalid_specs() {
        let g = GridSpec::new(vec![1], vec![0.01], vec![-0.02]).unwrap();
        assert_eq!(g.points().count(), 1);
        assert!(GridSpec::new(vec![], vec![0.01], vec![-0.02]).is_err());
        assert!(GridSpec::new(vec![2, 1], vec![0.01], vec![-0.02]).is_err());
        assert!(GridSpec::new(vec![1], vec![0.01, 0.01], vec![-0.02]).is_err());
        assert!(GridSpec::new(vec![1], vec![0.01], vec![0.02]).is_err());
    }

    #[test]
    fn select_single_and_tiebreak() {
        let only = [scenario(Some(1.0), 2.0, 3.0, 40)];
        let c = select_optimal(&only, Criterion::MaxSharpe, 30, window()).unwrap();
        assert_eq!(c.params, only[0].params);

        let a = scenario(Some(1.5), 5.0, 3.0, 40);
        let mut b = scenario(Some(1.5), 3.0, 1.0, 40);
        b.params.pt = 0.005;
        let c = select_optimal(&[a, b.clone()], Criterion::MaxSharpe, 30, window()).unwrap();
        assert_eq!(c.params, b.params);
    }

    #[test]
    fn min_trades_gate() {
        let rs = [scenario(Some(9.0), 0.0, 9.0, 3), scenario(Some(0.1), 1.0, 0.1, 31)];
        let c = select_optimal(&rs, Criterion::MaxSharpe, 30, window()).unwrap();
        assert_eq!(c.params, rs[1].params);
        assert!(matches!(
            select_optimal(&rs[..1], Criterion::MaxSharpe, 30, window()),
            Err(Error::NoQualifyingScenario { .. })
        ));
    }

    #[test]
    fn undefined_sharpe_ranks_last() {
        let rs = [scenario(None, 0.0, 5.0, 40), scenario(Some(-3.0), 9.0, -2.0, 40)];
        let c = select_optimal(&rs, Criterion::MaxSharpe, 0, window()).unwrap();
        assert_eq!(c.params, rs[1].params);
        assert_eq!(c.strategy, Side::Long);
    }

    #[test]
    fn optimal_file_round_trip() {
        let cfg = OptimalConfig {
            ticker: "CVLT".into(),
            strategy: Side::Long,
            period_signal: 3,
            params: ExecParams {
                mhp: 6,
                pt: 0.0195,
                sl: -0.035,
            },
            window_start: window().0,
            window_end: window().1,
        };
        let mut buf = b"# comment\n".to_vec();
        write_optimal(&mut buf, std::slice::from_ref(&cfg)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("CVLT,long_only,3,6,0.0195,-0.035,2021-07-01,2022-12-31"));
        assert_eq!(read_optimal(buf.as_slice()).unwrap(), vec![cfg]);
    }

    /// Reference: book materialized trades on the session axis.
    fn scenario_metrics(
        trades: &[crate::trade_sim::TradeResult],
        dates: &[NaiveDate],
        include_truncated: bool,
        cfg: MetricsConfig,
    ) -> (f64, Option<f64>, f64, usize, Option<f64>) {
        let mut daily = vec![0.0; dates.len()];
        let mut n = 0usize;
        let mut wins = 0usize;
        for t in trades {
            if !include_truncated && t.exit_reason == ExitReason::Truncated {
                continue;
            }
            if let Ok(i) = dates.binary_search(&t.exit_date) {
                daily[i] += 100.0 * t.trade_return;
            }
            n += 1;
            if t.trade_return > 0.0 {
                wins += 1;
            }
        }
        let mut cum = Vec::with_capacity(daily.len());
        let mut running = 0.0;
        for r in &daily {
            running += r;
            cum.push(running);
        }
        let win_rate = (n > 0).then(|| 100.0 * wins as f64 / n as f64);
        (
            running,
            ann_sharpe(&daily, cfg),
            max_drawdown_of(&cum),
            n,
            win_rate,
        )
    }

    #[test]
    fn fast_path_matches_materialized_trades() {
        use crate::trade_sim::{simulate_trades, TieBreak, TradeResult};
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut date = NaiveDate::from_ymd_opt(2022, 1, 3).unwrap();
        let mut close: f64 = 50.0;
        let mut bars = Vec::new();
        for _ in 0..160 {
            let open = close * (1.0 + rng.random_range(-0.01..0.01));
            close = open * (1.0 + rng.random_range(-0.03..0.03));
            let high = open.max(close) * (1.0 + rng.random_range(0.0..0.02));
            let low = open.min(close) * (1.0 - rng.random_range(0.0..0.02));
            bars.push(Bar::new(date, open, high, low, close, None).unwrap());
            date = date.succ_opt().unwrap();
        }
        let series = PriceSeries::new("T", bars).unwrap();
        let dates: Vec<NaiveDate> = series.dates().collect();
        let mut stream = Vec::new();
        for &signal_day in &dates {
            if rng.random_bool(0.4) {
                let direction = [Direction::Long, Direction::Flat, Direction::Short][rng.random_range(0..3)];
                stream.push(StreamSignal { signal_day, direction });
            }
        }
        let grid = GridSpec {
            mhp_values: vec![1, 3, 10],
            pt_values: vec![0.001, 0.01, 0.02],
            sl_values: vec![-0.04, -0.01],
        };
        for overlap in [Overlap::SinglePosition, Overlap::AllowOverlap] {
            for tiebreak in [TieBreak::StopFirst, TieBreak::ProfitFirst] {
                for include_truncated in [false, true] {
                    let opts = GridOptions {
                        include_truncated,
                        stream: StreamOptions { overlap, tiebreak },
                        ..GridOptions::default()
                    };
                    for side in [Side::Long, Side::Short, Side::Both] {
                        let fast = evaluate(&series, 1, side, &stream, &grid, &opts);
                        for (got, params) in fast.iter().zip(grid.points()) {
                            let (trades, _): (Vec<TradeResult>, _) =
                                simulate_trades(&series, &stream, &params, side, opts.stream);
                            let want =
                                scenario_metrics(&trades, &dates, include_truncated, opts.metrics);
                            assert_eq!(got.params, params);
                            assert_eq!(
                                (got.cum_return, got.sharpe, got.mdd, got.n_trades, got.win_rate),
                                want
                            );
                        }
                    }
                }
            }
        }
    }
}
