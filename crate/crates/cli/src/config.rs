use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sigbt::market_data::ColumnMapping;
use sigbt::portfolio::{LeverageSpec, PortfolioOptions, Quarter, SelectionRule, WeightScheme};
use sigbt::scenario_grid::{Criterion, GridOptions, GridSpec};
use sigbt::signal_stats::StatsOptions;
use sigbt::signal_store::SessionOpen;
use sigbt::synth::{GeneratorSpec, MarketSpec};
use sigbt::trade_sim::{ExecParams, Side};

use crate::InputError;

/// Everything a run depends on besides the input files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub inputs: Inputs,
    pub grid: GridSection,
    pub stats: StatsOptions,
    pub backtest: BacktestSection,
    pub schedule: ScheduleSection,
    pub selection: SelectionRule,
    pub weights: WeightScheme,
    pub leverage: LeverageSpec,
    pub portfolio: PortfolioOptions,
    pub synth: SynthSection,
    /// 0 uses every core. Does not affect output.
    pub workers: usize,
    /// Overrides the market and generator seeds of `synth`.
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub prices: Option<PathBuf>,
    pub signals: Option<PathBuf>,
    pub benchmark: Option<PathBuf>,
    /// Per-ticker execution configs, as written by `grid`.
    pub optimal: Option<PathBuf>,
    pub columns: ColumnMapping,
    pub session_open: SessionOpen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub spec: GridSpec,
    pub sides: Vec<Side>,
    pub criterion: Criterion,
    pub min_trades: usize,
    pub options: GridOptions,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            spec: GridSpec::default(),
            sides: vec![Side::Long, Side::Short, Side::Both],
            criterion: Criterion::default(),
            min_trades: 30,
            options: GridOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestSection {
    /// Empty means every ticker.
    pub tickers: Vec<String>,
    /// When set, replaces the optimal file for every ticker.
    pub fixed: Option<FixedConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedConfig {
    pub horizon: u8,
    pub side: Side,
    pub params: ExecParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub start: Option<Quarter>,
    pub end: Option<Quarter>,
    pub window_quarters: usize,
    /// Re-run the grid on every calibration window instead of using the
    /// optimal file.
    pub reoptimize: bool,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            start: None,
            end: None,
            window_quarters: 6,
            reoptimize: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    /// Generate a synthetic market when no price file is given.
    pub market: MarketSpec,
    pub generator: GeneratorSpec,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| InputError(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| InputError(format!("invalid config {}: {e}", path.display())).into())
    }

    /// SHA-256 of the canonical JSON form, with the fields that cannot change
    /// output (`out`, `workers`) blanked.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.workers = 0;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn require<'a>(&self, path: &'a Option<PathBuf>, what: &str) -> anyhow::Result<&'a Path> {
        path.as_deref()
            .ok_or_else(|| InputError(format!("no {what} file given")).into())
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.grid
            .spec
            .validate()
            .map_err(|e| InputError(format!("grid: {e}")))?;
        if self.grid.sides.is_empty() {
            return Err(InputError("grid.sides is empty".into()).into());
        }
        self.synth
            .generator
            .validate()
            .map_err(|e| InputError(format!("synth.generator: {e}")))?;
        if let Some(f) = &self.backtest.fixed {
            f.params
                .validate()
                .map_err(|e| InputError(format!("backtest.fixed: {e}")))?;
        }
        Ok(())
    }
}
