//! Daily OHLC ingestion, the trading calendar and elementary return lookups.
//!
//! Prices are assumed to be split/dividend adjusted upstream; nothing here
//! adjusts them. A ticker may be missing sessions that other tickers have, so
//! "k sessions after entry" always walks the ticker's own bars.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// One daily OHLC observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: Option<f64>,
}

/// Reason a row failed the bar invariants.
#[derive(Debug, Clone, PartialEq)]
pub enum BarViolation {
    NonPositive(&'static str),
    NotFinite(&'static str),
    HighBelow(&'static str),
    LowAbove(&'static str),
    NegativeVolume,
}

impl fmt::Display for BarViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BarViolation::NonPositive(field) => write!(f, "{field} must be > 0"),
            BarViolation::NotFinite(field) => write!(f, "{field} is not finite"),
            BarViolation::HighBelow(field) => write!(f, "high < {field}"),
            BarViolation::LowAbove(field) => write!(f, "low > {field}"),
            BarViolation::NegativeVolume => write!(f, "volume must be >= 0"),
        }
    }
}

impl Bar {
    pub fn new(
        date: NaiveDate,
        open: f64,
        high: f64,
        low: f64,
        close: f64,
        volume: Option<f64>,
    ) -> Result<Self, BarViolation> {
        let bar = Bar {
            date,
            open,
            high,
            low,
            close,
            volume,
        };
        bar.validate()?;
        Ok(bar)
    }

    pub fn validate(&self) -> Result<(), BarViolation> {
        for (name, v) in [
            ("open", self.open),
            ("high", self.high),
            ("low", self.low),
            ("close", self.close),
        ] {
            if !v.is_finite() {
                return Err(BarViolation::NotFinite(name));
            }
            if v <= 0.0 {
                return Err(BarViolation::NonPositive(name));
            }
        }
        if self.high < self.open {
            return Err(BarViolation::HighBelow("open"));
        }
        if self.high < self.close {
            return Err(BarViolation::HighBelow("close"));
        }
        if self.low > self.open {
            return Err(BarViolation::LowAbove("open"));
        }
        if self.low > self.close {
            return Err(BarViolation::LowAbove("close"));
        }
        if let Some(v) = self.volume {
            if v.is_nan() || v < 0.0 {
                return Err(BarViolation::NegativeVolume);
            }
        }
        Ok(())
    }
}

/// Validated, date-ordered bars of one symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub ticker: String,
    bars: Vec<Bar>,
}

/// The benchmark index shares the price-series representation.
pub type BenchmarkSeries = PriceSeries;

impl PriceSeries {
    /// Builds a series, sorting bars by date and rejecting duplicates.
    pub fn new(ticker: impl Into<String>, mut bars: Vec<Bar>) -> Result<Self> {
        let ticker = ticker.into();
        bars.sort_by_key(|b| b.date);
        if let Some(w) = bars.windows(2).find(|w| w[0].date == w[1].date) {
            return Err(Error::DuplicateBar {
                ticker,
                date: w[0].date,
            });
        }
        Ok(PriceSeries { ticker, bars })
    }

    pub fn bars(&self) -> &[Bar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.bars.iter().map(|b| b.date)
    }

    /// Index of the first bar strictly after `day`, if any.
    pub fn entry_index_after(&self, day: NaiveDate) -> Option<usize> {
        let idx = self.bars.partition_point(|b| b.date <= day);
        (idx < self.bars.len()).then_some(idx)
    }

    pub fn index_of(&self, day: NaiveDate) -> Option<usize> {
        self.bars.binary_search_by_key(&day, |b| b.date).ok()
    }

    pub fn bar_on(&self, day: NaiveDate) -> Option<&Bar> {
        self.index_of(day).map(|i| &self.bars[i])
    }

    /// Bars with `start <= date <= end`.
    pub fn clip(&self, start: NaiveDate, end: NaiveDate) -> PriceSeries {
        let lo = self.bars.partition_point(|b| b.date < start);
        let hi = self.bars.partition_point(|b| b.date <= end);
        PriceSeries {
            ticker: self.ticker.clone(),
            bars: self.bars[lo..hi.max(lo)].to_vec(),
        }
    }

    /// Close-to-close simple returns keyed by the later date.
    pub fn close_returns(&self) -> BTreeMap<NaiveDate, f64> {
        self.bars
            .windows(2)
            .map(|w| (w[1].date, w[1].close / w[0].close - 1.0))
            .collect()
    }
}

/// Ordered set of trading sessions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TradingCalendar {
    sessions: Vec<NaiveDate>,
}

impl TradingCalendar {
    pub fn new(mut sessions: Vec<NaiveDate>) -> Self {
        sessions.sort_unstable();
        sessions.dedup();
        TradingCalendar { sessions }
    }

    /// Sorted union of every bar date of `series`.
    pub fn from_series<'a>(series: impl IntoIterator<Item = &'a PriceSeries>) -> Self {
        let mut days: Vec<NaiveDate> = series.into_iter().flat_map(|s| s.dates()).collect();
        days.sort_unstable();
        days.dedup();
        TradingCalendar { sessions: days }
    }

    pub fn sessions(&self) -> &[NaiveDate] {
        &self.sessions
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn contains(&self, day: NaiveDate) -> bool {
        self.sessions.binary_search(&day).is_ok()
    }

    pub fn index_of(&self, day: NaiveDate) -> Option<usize> {
        self.sessions.binary_search(&day).ok()
    }

    /// Smallest session strictly greater than `day`.
    pub fn next_session(&self, day: NaiveDate) -> Result<NaiveDate> {
        let idx = self.sessions.partition_point(|s| *s <= day);
        self.sessions.get(idx).copied().ok_or(Error::NoneAfter(day))
    }

    /// Index of the last session on or before `day`.
    pub fn session_at_or_before(&self, day: NaiveDate) -> Option<usize> {
        self.sessions.partition_point(|s| *s <= day).checked_sub(1)
    }

    /// Sessions with `start <= date <= end`.
    pub fn between(&self, start: NaiveDate, end: NaiveDate) -> &[NaiveDate] {
        let lo = self.sessions.partition_point(|s| *s < start);
        let hi = self.sessions.partition_point(|s| *s <= end);
        &self.sessions[lo..hi.max(lo)]
    }
}

/// Smallest session of `calendar` strictly after `day`.
pub fn next_session(calendar: &TradingCalendar, day: NaiveDate) -> Result<NaiveDate> {
    calendar.next_session(day)
}

/// Simple return from the open of the first session after `signal_day` to the
/// close `h` sessions later (`h = 0` is the entry day's open-to-close).
pub fn holding_return(series: &PriceSeries, signal_day: NaiveDate, h: usize) -> Result<f64> {
    let entry = series.entry_index_after(signal_day).ok_or_else(|| Error::NoEntry {
        ticker: series.ticker.clone(),
        day: signal_day,
    })?;
    let bars = series.bars();
    let exit = bars.get(entry + h).ok_or_else(|| Error::InsufficientHistory {
        ticker: series.ticker.clone(),
        needed: h + 1,
        available: bars.len() - entry,
    })?;
    Ok(exit.close / bars[entry].open - 1.0)
}

/// Column names used to read a price file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMapping {
    pub ticker: String,
    pub date: String,
    pub open: String,
    pub high: String,
    pub low: String,
    pub close: String,
    pub volume: String,
    pub delimiter: char,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            ticker: "ticker".into(),
            date: "date".into(),
            open: "open".into(),
            high: "high".into(),
            low: "low".into(),
            close: "close".into(),
            volume: "volume".into(),
            delimiter: ',',
        }
    }
}

/// A row rejected for violating the bar invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct RowDiagnostic {
    pub line: u64,
    pub ticker: String,
    pub date: NaiveDate,
    pub violation: BarViolation,
}

impl fmt::Display for RowDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "line {}: {} {}: {}",
            self.line, self.ticker, self.date, self.violation
        )
    }
}

/// Result of ingesting a price file.
#[derive(Debug, Clone, Default)]
pub struct PriceUniverse {
    pub series: BTreeMap<String, PriceSeries>,
    pub calendar: TradingCalendar,
    pub rejected: Vec<RowDiagnostic>,
}

impl PriceUniverse {
    pub fn from_series(series: impl IntoIterator<Item = PriceSeries>) -> Self {
        let series: BTreeMap<String, PriceSeries> =
            series.into_iter().map(|s| (s.ticker.clone(), s)).collect();
        let calendar = TradingCalendar::from_series(series.values());
        PriceUniverse {
            series,
            calendar,
            rejected: Vec::new(),
        }
    }

    pub fn get(&self, ticker: &str) -> Option<&PriceSeries> {
        self.series.get(ticker)
    }

    pub fn tickers(&self) -> impl Iterator<Item = &str> {
        self.series.keys().map(String::as_str)
    }

    /// Turns the first rejected row into an error.
    pub fn into_strict(self) -> Result<Self> {
        match self.rejected.first() {
            Some(d) => Err(Error::OhlcInconsistent {
                line: d.line,
                ticker: d.ticker.clone(),
                date: d.date,
                reason: d.violation.to_string(),
            }),
            None => Ok(self),
        }
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
}

fn parse_price(raw: &str, field: &str, line: u64) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|_| Error::MalformedRow {
        line,
        reason: format!("{field} `{raw}` is not a number"),
    })
}

/// Reads a delimited price file, one row per (ticker, date).
///
/// Rows that parse but break the OHLC invariants are collected in
/// [`PriceUniverse::rejected`]; unparseable rows and duplicate (ticker, date)
/// pairs abort ingestion.
pub fn ingest_prices(source: impl AsRef<Path>, schema: &ColumnMapping) -> Result<PriceUniverse> {
    let path = source.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_prices(file, schema)
}

pub fn read_prices<R: std::io::Read>(reader: R, schema: &ColumnMapping) -> Result<PriceUniverse> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let ci = column(&headers, &schema.ticker)?;
    let di = column(&headers, &schema.date)?;
    let oi = column(&headers, &schema.open)?;
    let hi = column(&headers, &schema.high)?;
    let li = column(&headers, &schema.low)?;
    let cli = column(&headers, &schema.close)?;
    let vi = headers.iter().position(|h| h.trim() == schema.volume);

    let mut per_ticker: BTreeMap<String, Vec<Bar>> = BTreeMap::new();
    let mut rejected = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize, name: &str| {
            rec.get(i).ok_or_else(|| Error::MalformedRow {
                line,
                reason: format!("missing {name}"),
            })
        };
        let ticker = field(ci, "ticker")?.trim().to_string();
        if ticker.is_empty() {
            return Err(Error::MalformedRow {
                line,
                reason: "empty ticker".into(),
            });
        }
        let raw_date = field(di, "date")?;
        let date = NaiveDate::parse_from_str(raw_date.trim(), DATE_FORMAT).map_err(|_| {
            Error::MalformedRow {
                line,
                reason: format!("date `{raw_date}` is not YYYY-MM-DD"),
            }
        })?;
        let open = parse_price(field(oi, "open")?, "open", line)?;
        let high = parse_price(field(hi, "high")?, "high", line)?;
        let low = parse_price(field(li, "low")?, "low", line)?;
        let close = parse_price(field(cli, "close")?, "close", line)?;
        let volume = match vi.and_then(|i| rec.get(i)).map(str::trim) {
            None | Some("") => None,
            Some(v) => Some(parse_price(v, "volume", line)?),
        };
        match Bar::new(date, open, high, low, close, volume) {
            Ok(bar) => per_ticker.entry(ticker).or_default().push(bar),
            Err(violation) => rejected.push(RowDiagnostic {
                line,
                ticker,
                date,
                violation,
            }),
        }
    }

    let series = per_ticker
        .into_iter()
        .map(|(t, bars)| PriceSeries::new(t, bars))
        .collect::<Result<Vec<_>>>()?;
    let mut universe = PriceUniverse::from_series(series);
    universe.rejected = rejected;
    Ok(universe)
}

/// Reads a single-symbol benchmark file with the price-file schema.
pub fn ingest_benchmark(
    source: impl AsRef<Path>,
    schema: &ColumnMapping,
) -> Result<BenchmarkSeries> {
    let universe = ingest_prices(source, schema)?.into_strict()?;
    let mut it = universe.series.into_values();
    match (it.next(), it.next()) {
        (Some(s), None) => Ok(s),
        (None, _) => Err(Error::Schema("benchmark file has no rows".into())),
        (Some(_), Some(_)) => Err(Error::Schema(
            "benchmark file must contain exactly one symbol".into(),
        )),
    }
}

/// Writes bars in the canonical price-file layout.
pub fn write_prices<W: std::io::Write>(
    writer: W,
    series: impl IntoIterator<Item = impl std::borrow::Borrow<PriceSeries>>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["ticker", "date", "open", "high", "low", "close", "volume"])?;
    for s in series {
        let s = s.borrow();
        for b in s.bars() {
            w.write_record([
                s.ticker.clone(),
                b.date.format(DATE_FORMAT).to_string(),
                b.open.to_string(),
                b.high.to_string(),
                b.low.to_string(),
                b.close.to_string(),
                b.volume.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<price writer>", e))?;
    Ok(())
}
