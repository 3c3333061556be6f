use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use serde::Serialize;

use sigbt::market_data::{ingest_benchmark, ingest_prices, write_prices, PriceSeries, PriceUniverse};
use sigbt::par::Workers;
use sigbt::perf_metrics::{benchmark_returns, cum_pnl, risk_summary, RiskSummary};
use sigbt::portfolio::{
    build_schedule_for, run_walk_forward, turnover_grid, write_turnover, BookTrade, ConfigSource,
    PortfolioRun, Universe,
};
use sigbt::scenario_grid::{read_optimal, run_grid_universe, select_all, write_optimal, write_scenarios, OptimalConfig};
use sigbt::signal_stats::{
    accuracy_table, ci_plot_data, pvalue_summary, row_tests, write_accuracy_table, write_ci_plot,
    PValueSummary, StatTest,
};
use sigbt::signal_store::{load_signals, write_signals, AdmittedSignals, MAX_HORIZON};
use sigbt::synth::{generate, synthetic_market, GeneratorSpec, MarketSpec};
use sigbt::trade_sim::{simulate_stream, Side, TradeResult};

use crate::artifacts::Artifacts;
use crate::config::RunConfig;
use crate::{warn, InputError};

const PCT: &str = "units: returns, PnL and drawdowns in percent of notional; pt/sl and trade_return as fractions; sharpe annualized";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Loaded inputs shared by the analysis commands.
pub struct Data {
    pub prices: PriceUniverse,
    pub signals: AdmittedSignals,
    pub loaded_signals: usize,
    pub quarantined: Vec<(sigbt::signal_store::SignalRecord, sigbt::signal_store::LeakageViolation)>,
    pub benchmark: Option<PriceSeries>,
}

impl Data {
    pub fn load(cfg: &RunConfig, need_signals: bool) -> anyhow::Result<Self> {
        let path = cfg.require(&cfg.inputs.prices, "price")?;
        let prices = ingest_prices(path, &cfg.inputs.columns)?;
        for r in &prices.rejected {
            warn(&format!(
                "price row {} ({} {}) rejected: {}",
                r.line, r.ticker, r.date, r.violation
            ));
        }
        let (signals, loaded_signals, quarantined) = match &cfg.inputs.signals {
            Some(p) => {
                let set = load_signals(p)?;
                let (ok, bad) = set.admit(&prices.calendar, cfg.inputs.session_open);
                if !bad.is_empty() {
                    warn(&format!("{} signals quarantined by the leakage check", bad.len()));
                }
                (ok, set.len(), bad)
            }
            None if need_signals => return Err(InputError("no signal file given".into()).into()),
            None => (AdmittedSignals::default(), 0, Vec::new()),
        };
        let benchmark = match &cfg.inputs.benchmark {
            Some(p) => Some(ingest_benchmark(p, &cfg.inputs.columns)?),
            None => None,
        };
        Ok(Data {
            prices,
            signals,
            loaded_signals,
            quarantined,
            benchmark,
        })
    }

    fn bench_returns(&self) -> Option<BTreeMap<NaiveDate, f64>> {
        self.benchmark.as_ref().map(benchmark_returns)
    }
}

pub fn load_optimal(cfg: &RunConfig) -> anyhow::Result<Option<BTreeMap<String, OptimalConfig>>> {
    let Some(path) = &cfg.inputs.optimal else { return Ok(None) };
    let file = std::fs::File::open(path)
        .map_err(|e| InputError(format!("cannot open {}: {e}", path.display())))?;
    Ok(Some(
        read_optimal(file)?
            .into_iter()
            .map(|c| (c.ticker.clone(), c))
            .collect(),
    ))
}

#[derive(Serialize)]
struct IngestReport {
    tickers: usize,
    bars: usize,
    sessions: usize,
    first_session: Option<NaiveDate>,
    last_session: Option<NaiveDate>,
    rejected_rows: usize,
    signals_loaded: usize,
    signals_admitted: usize,
    signals_quarantined: usize,
    benchmark: Option<String>,
}

pub fn ingest(cfg: &RunConfig, art: &mut Artifacts) -> anyhow::Result<()> {
    let data = Data::load(cfg, false)?;
    let sessions = data.prices.calendar.sessions();
    let report = IngestReport {
        tickers: data.prices.series.len(),
        bars: data.prices.series.values().map(|s| s.len()).sum(),
        sessions: sessions.len(),
        first_session: sessions.first().copied(),
        last_session: sessions.last().copied(),
        rejected_rows: data.prices.rejected.len(),
        signals_loaded: data.loaded_signals,
        signals_admitted: data.signals.len(),
        signals_quarantined: data.quarantined.len(),
        benchmark: data.benchmark.as_ref().map(|b| b.ticker.clone()),
    };
    art.csv("rejected_rows.csv", &[], |buf| {
        let mut w = csv_writer(buf);
        w.write_record(["line", "ticker", "date", "reason"])?;
        for r in &data.prices.rejected {
            w.write_record([r.line.to_string(), r.ticker.clone(), r.date.to_string(), r.violation.to_string()])?;
        }
        flush(w)
    })?;
    art.csv("quarantined_signals.csv", &[], |buf| {
        let mut w = csv_writer(buf);
        w.write_record(["created_at", "ticker", "target_date", "forecast_return", "horizon", "reasons"])?;
        for (r, v) in &data.quarantined {
            w.write_record([
                r.created_at.format(sigbt::signal_store::TIMESTAMP_FORMAT).to_string(),
                r.ticker.clone(),
                r.target_date.to_string(),
                r.forecast_return.to_string(),
                r.horizon.to_string(),
                v.to_string(),
            ])?;
        }
        flush(w)
    })?;
    art.json("ingest.json", None, &report)
}

fn csv_writer(buf: &mut Vec<u8>) -> csv::Writer<&mut Vec<u8>> {
    csv::Writer::from_writer(buf)
}

fn flush<W: Write>(mut w: csv::Writer<W>) -> sigbt::Result<()> {
    w.flush()
        .map_err(|e| sigbt::Error::Io { path: "<artifact>".into(), source: e })
}

#[derive(Serialize)]
struct SynthReport {
    synthetic_market: bool,
    tickers: usize,
    signals: usize,
    generator: GeneratorSpec,
    market: Option<MarketSpec>,
}

pub fn synth(cfg: &RunConfig, art: &mut Artifacts, workers: Workers) -> anyhow::Result<()> {
    let market_spec = MarketSpec {
        seed: cfg.seed,
        ..cfg.synth.market.clone()
    };
    let (prices, generated) = match &cfg.inputs.prices {
        Some(p) => (ingest_prices(p, &cfg.inputs.columns)?, false),
        None => {
            let (u, bench) = synthetic_market(&market_spec, workers)?;
            art.csv("prices.csv", &[], |buf| write_prices(buf, u.series.values()))?;
            art.csv("benchmark.csv", &[], |buf| write_prices(buf, [&bench]))?;
            (u, true)
        }
    };
    let spec = GeneratorSpec {
        seed: cfg.seed,
        ..cfg.synth.generator.clone()
    };
    let records = generate(&prices, &spec, workers)?;
    art.csv(
        "signals.csv",
        &["units: forecast_return in percent"],
        |buf| write_signals(buf, &records),
    )?;
    art.json(
        "synth.json",
        None,
        &SynthReport {
            synthetic_market: generated,
            tickers: prices.series.len(),
            signals: records.len(),
            generator: spec,
            market: generated.then_some(market_spec),
        },
    )
}

#[derive(Serialize)]
struct GridReport {
    points_per_series: usize,
    rows: usize,
    selected: usize,
    unselected: Vec<String>,
}

pub fn grid(cfg: &RunConfig, data: &Data, art: &mut Artifacts, workers: Workers) -> anyhow::Result<Vec<OptimalConfig>> {
    let g = &cfg.grid;
    let results = run_grid_universe(&data.prices, &data.signals, &g.spec, &g.sides, &g.options, workers);
    let windows: BTreeMap<String, (NaiveDate, NaiveDate)> = data
        .prices
        .series
        .iter()
        .filter_map(|(t, s)| Some((t.clone(), (s.bars().first()?.date, s.bars().last()?.date))))
        .collect();
    let (configs, errors) = select_all(&results, g.criterion, g.min_trades, &windows);
    for e in &errors {
        warn(&e.to_string());
    }
    art.csv(
        "scenarios.csv",
        &["units: cum_return and mdd in percent; pt, sl and win_rate as fractions; sharpe annualized"],
        |buf| write_scenarios(buf, &results),
    )?;
    art.csv("optimal.csv", &["units: pt and sl as fractions; mhp in sessions"], |buf| {
        write_optimal(buf, &configs)
    })?;
    art.json(
        "grid.json",
        None,
        &GridReport {
            points_per_series: g.spec.len(),
            rows: results.len(),
            selected: configs.len(),
            unselected: errors.iter().map(ToString::to_string).collect(),
        },
    )?;
    Ok(configs)
}

#[derive(Serialize)]
pub struct StatsReport {
    rows: usize,
    diagnostics: Vec<String>,
    pvalues_all: Option<PValueSummary>,
    pvalues_long: Option<PValueSummary>,
    pvalues_short: Option<PValueSummary>,
    tests: Vec<TickerTest>,
}

#[derive(Serialize)]
struct TickerTest {
    ticker: String,
    side: Side,
    holding: usize,
    test: StatTest,
}

pub fn stats(
    cfg: &RunConfig,
    data: &Data,
    configs: &BTreeMap<String, OptimalConfig>,
    art: &mut Artifacts,
) -> anyhow::Result<StatsReport> {
    let opts = &cfg.stats;
    let (rows, diagnostics) = accuracy_table(&data.prices, &data.signals, configs, opts);
    if rows.is_empty() {
        warn("no signals to evaluate; the accuracy table is empty");
    }
    let tests = row_tests(&rows);
    art.csv(
        "accuracy.csv",
        &["units: accuracies, pct and CI bounds in percent; holding periods in sessions after entry"],
        |buf| write_accuracy_table(buf, &rows),
    )?;
    for (side, name) in [(Side::Long, "ci_long.csv"), (Side::Short, "ci_short.csv")] {
        let points = ci_plot_data(&rows, side, opts.level);
        art.csv(name, &["units: percent"], |buf| write_ci_plot(buf, &points))?;
    }
    let report = StatsReport {
        rows: rows.len(),
        diagnostics,
        pvalues_all: pvalue_summary(&tests, None),
        pvalues_long: pvalue_summary(&tests, Some(Side::Long)),
        pvalues_short: pvalue_summary(&tests, Some(Side::Short)),
        tests: rows
            .iter()
            .filter_map(|r| {
                Some(TickerTest {
                    ticker: r.ticker.clone(),
                    side: r.test_side?,
                    holding: r.test_holding?,
                    test: r.test?,
                })
            })
            .collect(),
    };
    art.json("stats.json", Some("p_hat, se0 and CI bounds as proportions; pct_below_* in percent"), &report)?;
    Ok(report)
}

fn write_trades<'a>(buf: &mut Vec<u8>, trades: impl IntoIterator<Item = &'a TradeResult>) -> sigbt::Result<()> {
    let mut w = csv_writer(buf);
    w.write_record([
        "ticker", "direction", "entry_date", "exit_date", "trade_return", "exit_reason", "realized_holding",
    ])?;
    for t in trades {
        w.write_record([
            t.ticker.clone(),
            format!("{:?}", t.direction).to_lowercase(),
            t.entry_date.to_string(),
            t.exit_date.to_string(),
            t.trade_return.to_string(),
            t.exit_reason.to_string(),
            t.realized_holding.to_string(),
        ])?;
    }
    flush(w)
}

#[derive(Serialize)]
pub struct BacktestEntry {
    ticker: String,
    config: OptimalConfig,
    summary: RiskSummary,
}

pub fn backtest(
    cfg: &RunConfig,
    data: &Data,
    configs: &BTreeMap<String, OptimalConfig>,
    art: &mut Artifacts,
) -> anyhow::Result<Vec<BacktestEntry>> {
    let bench = data.bench_returns();
    let tickers: Vec<&String> = if cfg.backtest.tickers.is_empty() {
        data.prices.series.keys().collect()
    } else {
        cfg.backtest.tickers.iter().collect()
    };
    let mut entries = Vec::new();
    let mut daily_rows = Vec::new();
    let mut all_trades = Vec::new();
    for ticker in tickers {
        let series = data
            .prices
            .get(ticker)
            .ok_or_else(|| InputError(format!("ticker {ticker} not in the price file")))?;
        let config = match &cfg.backtest.fixed {
            Some(f) => OptimalConfig {
                ticker: ticker.clone(),
                strategy: f.side,
                period_signal: f.horizon,
                params: f.params,
                window_start: series.bars().first().map_or(NaiveDate::MIN, |b| b.date),
                window_end: series.bars().last().map_or(NaiveDate::MIN, |b| b.date),
            },
            None => match configs.get(ticker) {
                Some(c) => c.clone(),
                None => {
                    warn(&format!("{ticker}: no execution config, skipped"));
                    continue;
                }
            },
        };
        let stream = data
            .signals
            .stream(ticker, config.period_signal, cfg.grid.options.deadband);
        let outcome = simulate_stream(series, &stream, &config.params, config.strategy, cfg.grid.options.stream);
        let summary = risk_summary(&outcome.daily, &outcome.trades, bench.as_ref(), cfg.portfolio.metrics);
        let pnl = cum_pnl(&outcome.daily);
        let mut bench_cum = 0.0;
        for (i, d) in pnl.dates.iter().enumerate() {
            bench_cum += bench.as_ref().and_then(|b| b.get(d)).copied().unwrap_or(0.0);
            daily_rows.push([
                ticker.clone(),
                d.to_string(),
                pnl.daily_return[i].to_string(),
                pnl.cum_pnl[i].to_string(),
                pnl.drawdown[i].to_string(),
                if bench.is_some() { bench_cum.to_string() } else { String::new() },
            ]);
        }
        all_trades.extend(outcome.trades);
        entries.push(BacktestEntry {
            ticker: ticker.clone(),
            config,
            summary,
        });
    }
    art.csv("backtest_daily.csv", &[PCT], |buf| {
        let mut w = csv_writer(buf);
        w.write_record([
            "ticker", "date", "daily_return_pct", "cum_pnl_pct", "drawdown_pct", "benchmark_cum_pct",
        ])?;
        for r in &daily_rows {
            w.write_record(r)?;
        }
        flush(w)
    })?;
    art.csv("backtest_trades.csv", &[PCT], |buf| write_trades(buf, &all_trades))?;
    art.json("backtest.json", Some(PCT), &entries)?;
    Ok(entries)
}

#[derive(Serialize)]
struct StepSummary {
    trading_quarter: String,
    calibration_first: String,
    calibration_last: String,
    long: Vec<String>,
    short: Vec<String>,
    diagnostics: Vec<String>,
}

#[derive(Serialize)]
pub struct PortfolioReport {
    summary: sigbt::portfolio::PortfolioSummary,
    steps: Vec<StepSummary>,
}

pub fn portfolio(
    cfg: &RunConfig,
    data: &Data,
    configs: Option<&BTreeMap<String, OptimalConfig>>,
    art: &mut Artifacts,
) -> anyhow::Result<PortfolioReport> {
    let s = &cfg.schedule;
    let schedule = build_schedule_for(&data.prices.calendar, s.start, s.end, s.window_quarters)?;
    let source = match (configs, s.reoptimize) {
        (Some(map), false) => ConfigSource::Fixed(map),
        (_, true) => ConfigSource::PerStep {
            grid: &cfg.grid.spec,
            sides: &cfg.grid.sides,
            criterion: cfg.grid.criterion,
            min_trades: cfg.grid.min_trades,
            grid_options: &cfg.grid.options,
        },
        (None, false) => {
            return Err(InputError(
                "portfolio needs an optimal file or schedule.reoptimize = true".into(),
            )
            .into())
        }
    };
    let universe = Universe {
        prices: &data.prices,
        signals: &data.signals,
        benchmark: data.benchmark.as_ref(),
        configs: source,
    };
    let mut opts = cfg.portfolio.clone();
    opts.workers = cfg.workers;
    let run = run_walk_forward(&universe, &schedule, &cfg.selection, cfg.weights, &cfg.leverage, &opts)?;
    write_portfolio(&run, art)?;
    let report = PortfolioReport {
        summary: run.summary.clone(),
        steps: run
            .steps
            .iter()
            .map(|s| StepSummary {
                trading_quarter: s.step.trading.to_string(),
                calibration_first: s.step.calibration_first.to_string(),
                calibration_last: s.step.calibration_last.to_string(),
                long: s.book.long.clone(),
                short: s.book.short.clone(),
                diagnostics: s.book.diagnostics.clone(),
            })
            .collect(),
    };
    art.json("portfolio.json", Some(PCT), &report)?;
    Ok(report)
}

fn write_portfolio(run: &PortfolioRun, art: &mut Artifacts) -> anyhow::Result<()> {
    let combined_pnl = cum_pnl(&run.combined);
    let levered_pnl = run.levered.as_ref().map(cum_pnl);
    art.csv("portfolio_daily.csv", &[PCT, "rolling windows in sessions, ending on the row's date"], |buf| {
        let mut w = csv_writer(buf);
        w.write_record([
            "date", "long_pct", "short_pct", "combined_pct", "combined_cum_pct", "combined_drawdown_pct",
            "levered_pct", "levered_cum_pct", "rolling_sharpe", "rolling_corr",
        ])?;
        for (i, d) in run.combined.dates().iter().enumerate() {
            let at = |s: &sigbt::perf_metrics::DailySeries| {
                s.dates().binary_search(d).map(|k| s.values()[k]).unwrap_or(0.0)
            };
            w.write_record([
                d.to_string(),
                at(&run.long).to_string(),
                at(&run.short).to_string(),
                run.combined.values()[i].to_string(),
                combined_pnl.cum_pnl[i].to_string(),
                combined_pnl.drawdown[i].to_string(),
                run.levered.as_ref().map(|l| l.values()[i].to_string()).unwrap_or_default(),
                levered_pnl.as_ref().map(|l| l.cum_pnl[i].to_string()).unwrap_or_default(),
                opt(run.rolling_sharpe[i]),
                opt(run.rolling_corr[i]),
            ])?;
        }
        flush(w)
    })?;
    art.csv("portfolio_trades.csv", &[PCT, "weight as a fraction of the leg"], |buf| {
        write_book_trades(buf, &run.trades)
    })?;
    art.csv("books.csv", &["weight as a fraction of the leg"], |buf| {
        let mut w = csv_writer(buf);
        w.write_record(["quarter", "side", "rank", "ticker", "weight"])?;
        for s in &run.steps {
            for (side, names, weights) in [
                ("long", &s.book.long, &s.long_weights),
                ("short", &s.book.short, &s.short_weights),
            ] {
                for (r, (t, wt)) in names.iter().zip(weights).enumerate() {
                    w.write_record([
                        s.step.trading.to_string(),
                        side.to_string(),
                        (r + 1).to_string(),
                        t.clone(),
                        wt.to_string(),
                    ])?;
                }
            }
        }
        flush(w)
    })?;
    art.csv(
        "calibration_metrics.csv",
        &["units: sharpe annualized; mdd, final_cum_return, downside_risk and accuracy in percent"],
        |buf| {
            let mut w = csv_writer(buf);
            w.write_record([
                "quarter", "ticker", "side", "sharpe", "mdd", "final_cum_return", "sortino", "downside_risk",
                "accuracy", "beta", "n_observations", "flagged",
            ])?;
            for s in &run.steps {
                for m in &s.metrics {
                    w.write_record([
                        s.step.trading.to_string(),
                        m.ticker.clone(),
                        m.side.to_string(),
                        opt(m.sharpe),
                        m.mdd.to_string(),
                        m.final_cum_return.to_string(),
                        opt(m.sortino),
                        m.downside_risk.to_string(),
                        opt(m.accuracy),
                        opt(m.beta),
                        m.n_observations.to_string(),
                        m.flagged.to_string(),
                    ])?;
                }
            }
            flush(w)
        },
    )?;
    for side in [Side::Long, Side::Short] {
        let grid = turnover_grid(run, side);
        art.csv(&format!("turnover_{side}.csv"), &[], |buf| write_turnover(buf, &grid))?;
    }
    Ok(())
}

fn write_book_trades(buf: &mut Vec<u8>, trades: &[BookTrade]) -> sigbt::Result<()> {
    let mut w = csv_writer(buf);
    w.write_record([
        "quarter", "side", "rank", "weight", "ticker", "direction", "entry_date", "exit_date", "trade_return",
        "exit_reason", "realized_holding",
    ])?;
    for b in trades {
        let t = &b.trade;
        w.write_record([
            b.quarter.to_string(),
            b.side.to_string(),
            b.rank.to_string(),
            b.weight.to_string(),
            t.ticker.clone(),
            format!("{:?}", t.direction).to_lowercase(),
            t.entry_date.to_string(),
            t.exit_date.to_string(),
            t.trade_return.to_string(),
            t.exit_reason.to_string(),
            t.realized_holding.to_string(),
        ])?;
    }
    flush(w)
}

#[derive(Serialize)]
struct Bundle<'a> {
    inputs: BTreeMap<String, String>,
    grid_configs: usize,
    stats: &'a StatsReport,
    backtest: &'a [BacktestEntry],
    portfolio: Option<&'a PortfolioReport>,
    artifacts: BTreeMap<String, String>,
}

/// Full pipeline: grid, stats and backtest on the grid's configs, then the
/// walk-forward portfolio (re-optimized per step unless an optimal file is
/// given), bundled into `report.json`.
pub fn report(cfg: &RunConfig, art: &mut Artifacts, workers: Workers) -> anyhow::Result<()> {
    let data = Data::load(cfg, true)?;
    let fixed = load_optimal(cfg)?;
    let found = grid(cfg, &data, art, workers)?;
    let found: BTreeMap<String, OptimalConfig> =
        found.into_iter().map(|c| (c.ticker.clone(), c)).collect();
    let configs = fixed.as_ref().unwrap_or(&found);
    let st = stats(cfg, &data, configs, art)?;
    let bt = backtest(cfg, &data, configs, art)?;
    let mut pcfg = cfg.clone();
    if fixed.is_none() {
        pcfg.schedule.reoptimize = true;
    }
    let pf = match portfolio(&pcfg, &data, fixed.as_ref(), art) {
        Ok(r) => Some(r),
        Err(e) if e.downcast_ref::<sigbt::Error>().is_some_and(|e| matches!(e, sigbt::Error::InsufficientSpan { .. })) => {
            warn(&format!("portfolio skipped: {e}"));
            None
        }
        Err(e) => return Err(e),
    };
    let mut inputs = BTreeMap::new();
    for (name, path) in [
        ("prices", &cfg.inputs.prices),
        ("signals", &cfg.inputs.signals),
        ("benchmark", &cfg.inputs.benchmark),
        ("optimal", &cfg.inputs.optimal),
    ] {
        if let Some(p) = path {
            inputs.insert(name.to_string(), file_sha256(p)?);
        }
    }
    let artifacts = art.written().iter().cloned().collect();
    let bundle = Bundle {
        inputs,
        grid_configs: found.len(),
        stats: &st,
        backtest: &bt,
        portfolio: pf.as_ref(),
        artifacts,
    };
    art.json("report.json", Some(PCT), &bundle)
}

fn file_sha256(path: &std::path::Path) -> anyhow::Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).map_err(|e| InputError(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Horizons accepted on the command line.
pub fn check_horizons(h: &[u8]) -> anyhow::Result<()> {
    if h.iter().any(|h| !(1..=MAX_HORIZON).contains(h)) {
        return Err(InputError(format!("horizons must lie in 1..={MAX_HORIZON}")).into());
    }
    Ok(())
}
