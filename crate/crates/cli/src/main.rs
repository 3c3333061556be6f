//! `sigbt`: reproducible backtesting pipelines over price and signal files.

mod artifacts;
mod commands;
mod config;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;

use sigbt::par::Workers;
use sigbt::portfolio::{Quarter, RankMetric, WeightScheme};
use sigbt::scenario_grid::Criterion;
use sigbt::signal_stats::Tail;
use sigbt::trade_sim::Side;

use artifacts::Artifacts;
use commands::Data;
use config::RunConfig;

/// A problem with the run's inputs or configuration (exit code 1).
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

pub fn warn(msg: &str) {
    eprintln!("warning: {msg}");
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|e| e.to_string())
}

#[derive(Parser)]
#[command(name = "sigbt", version, about = "Backtest and evaluate directional equity signals")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    prices: Option<PathBuf>,
    #[arg(long, global = true)]
    signals: Option<PathBuf>,
    #[arg(long, global = true)]
    benchmark: Option<PathBuf>,
    /// Per-ticker execution configs written by `grid`.
    #[arg(long, global = true)]
    optimal: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate price, benchmark and signal files.
    Ingest,
    /// Generate signals (and a synthetic market when no prices are given).
    Synth {
        #[arg(long)]
        target_accuracy: Option<f64>,
        #[arg(long)]
        n_tickers: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        horizons: Vec<u8>,
        #[arg(long)]
        flat_share: Option<f64>,
        /// Holding period the calibrated sign refers to.
        #[arg(long)]
        holding: Option<usize>,
    },
    /// Scenario grid and per-ticker optimal configs.
    Grid {
        #[arg(long, value_parser = parse_enum::<Criterion>)]
        criterion: Option<Criterion>,
        #[arg(long)]
        min_trades: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        horizons: Vec<u8>,
        #[arg(long, value_delimiter = ',')]
        sides: Vec<Side>,
    },
    /// Accuracy tables, significance tests and CI plot data.
    Stats {
        #[arg(long)]
        level: Option<f64>,
        #[arg(long, value_parser = parse_enum::<Tail>)]
        tail: Option<Tail>,
        #[arg(long)]
        deadband: Option<f64>,
        /// Signal horizon for tickers without an optimal config.
        #[arg(long)]
        horizon: Option<u8>,
    },
    /// Per-ticker risk/return report under each ticker's config.
    Backtest {
        #[arg(long, value_delimiter = ',')]
        tickers: Vec<String>,
    },
    /// Walk-forward long/short portfolio.
    Portfolio {
        #[arg(long)]
        top_n: Option<usize>,
        #[arg(long, value_parser = parse_enum::<RankMetric>)]
        rank_metric: Option<RankMetric>,
        #[arg(long, value_parser = parse_enum::<WeightScheme>)]
        weights: Option<WeightScheme>,
        #[arg(long)]
        leverage: Option<f64>,
        /// Annual cost of leverage, percent.
        #[arg(long)]
        cost: Option<f64>,
        #[arg(long)]
        start: Option<Quarter>,
        #[arg(long)]
        end: Option<Quarter>,
        #[arg(long)]
        reoptimize: bool,
        #[arg(long)]
        split_date: Option<NaiveDate>,
    },
    /// Grid, stats, backtest and portfolio in one bundle.
    Report,
}

fn build_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if cfg.out.as_os_str().is_empty() {
        cfg.out = PathBuf::from("out");
    }
    for (slot, flag) in [
        (&mut cfg.inputs.prices, &cli.prices),
        (&mut cfg.inputs.signals, &cli.signals),
        (&mut cfg.inputs.benchmark, &cli.benchmark),
        (&mut cfg.inputs.optimal, &cli.optimal),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    match &cli.command {
        Command::Synth {
            target_accuracy,
            n_tickers,
            horizons,
            flat_share,
            holding,
        } => {
            let g = &mut cfg.synth.generator;
            if target_accuracy.is_some() {
                g.target_accuracy = *target_accuracy;
            }
            if !horizons.is_empty() {
                commands::check_horizons(horizons)?;
                g.horizons.clone_from(horizons);
            }
            if let Some(f) = flat_share {
                g.flat_share = *f;
            }
            if let Some(h) = holding {
                g.calibration_holding = *h;
            }
            if let Some(n) = n_tickers {
                cfg.synth.market.n_tickers = *n;
            }
        }
        Command::Grid {
            criterion,
            min_trades,
            horizons,
            sides,
        } => {
            if let Some(c) = criterion {
                cfg.grid.criterion = *c;
            }
            if let Some(m) = min_trades {
                cfg.grid.min_trades = *m;
            }
            if !horizons.is_empty() {
                commands::check_horizons(horizons)?;
                cfg.grid.options.horizons.clone_from(horizons);
            }
            if !sides.is_empty() {
                cfg.grid.sides.clone_from(sides);
            }
        }
        Command::Stats {
            level,
            tail,
            deadband,
            horizon,
        } => {
            let s = &mut cfg.stats;
            if let Some(l) = level {
                s.level = *l;
            }
            if let Some(t) = tail {
                s.tail = *t;
            }
            if let Some(d) = deadband {
                s.deadband = *d;
            }
            if let Some(h) = horizon {
                commands::check_horizons(&[*h])?;
                s.default_horizon = *h;
            }
        }
        Command::Backtest { tickers } => {
            if !tickers.is_empty() {
                cfg.backtest.tickers.clone_from(tickers);
            }
        }
        Command::Portfolio {
            top_n,
            rank_metric,
            weights,
            leverage,
            cost,
            start,
            end,
            reoptimize,
            split_date,
        } => {
            if let Some(n) = top_n {
                cfg.selection.top_n = *n;
            }
            if rank_metric.is_some() {
                cfg.selection.rank_metric = rank_metric.unwrap();
                cfg.selection.rank_order = None;
            }
            if let Some(w) = weights {
                cfg.weights = *w;
            }
            if let Some(m) = leverage {
                cfg.leverage.multiplier = *m;
            }
            if let Some(c) = cost {
                cfg.leverage.annual_cost = *c;
            }
            if start.is_some() {
                cfg.schedule.start = *start;
            }
            if end.is_some() {
                cfg.schedule.end = *end;
            }
            if *reoptimize {
                cfg.schedule.reoptimize = true;
            }
            if let Some(d) = split_date {
                cfg.portfolio.split_date = *d;
            }
        }
        Command::Ingest | Command::Report => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = build_config(&cli)?;
    let workers = Workers(cfg.workers);
    let mut art = Artifacts::new(&cfg.out, cfg.hash())?;
    match cli.command {
        Command::Ingest => commands::ingest(&cfg, &mut art),
        Command::Synth { .. } => commands::synth(&cfg, &mut art, workers),
        Command::Grid { .. } => {
            let data = Data::load(&cfg, true)?;
            commands::grid(&cfg, &data, &mut art, workers).map(drop)
        }
        Command::Stats { .. } => {
            let data = Data::load(&cfg, false)?;
            let configs = commands::load_optimal(&cfg)?.unwrap_or_default();
            commands::stats(&cfg, &data, &configs, &mut art).map(drop)
        }
        Command::Backtest { .. } => {
            let data = Data::load(&cfg, true)?;
            let configs = commands::load_optimal(&cfg)?.unwrap_or_default();
            if configs.is_empty() && cfg.backtest.fixed.is_none() {
                return Err(InputError("backtest needs an optimal file or [backtest.fixed]".into()).into());
            }
            commands::backtest(&cfg, &data, &configs, &mut art).map(drop)
        }
        Command::Portfolio { .. } => {
            let data = Data::load(&cfg, true)?;
            let configs: Option<BTreeMap<_, _>> = commands::load_optimal(&cfg)?;
            commands::portfolio(&cfg, &data, configs.as_ref(), &mut art).map(drop)
        }
        Command::Report => commands::report(&cfg, &mut art, workers),
    }
}

/// 1 for bad inputs or configuration, 2 for failures during computation.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<sigbt::Error>() {
            return if e.is_input_error() { 1 } else { 2 };
        }
        if cause.is::<InputError>() {
            return 1;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let record = serde_json::json!({
                "error": {
                    "kind": if code == 1 { "input" } else { "computation" },
                    "exit_code": code,
                    "message": format!("{e:#}"),
                }
            });
            eprintln!("{record}");
            ExitCode::from(code)
        }
    }
}
