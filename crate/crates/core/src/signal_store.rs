//! Multi-horizon forecast records, the ternary direction code and the
//! ex-ante timestamp contract.
//!
//! A record created on day `t` (normally after the close) forecasts the
//! sessions `t+1 ..= t+10`; `target_date` must be exactly `horizon` sessions
//! after the creation session and `created_at` must precede that session's
//! open. Records that fail the check are quarantined by [`SignalSet::admit`]
//! and never reach the simulator.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Neg, Range};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{TradingCalendar, DATE_FORMAT};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M";
pub const MAX_HORIZON: u8 = 10;

/// One timestamped forecast. `forecast_return` is in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalRecord {
    pub created_at: NaiveDateTime,
    pub ticker: String,
    pub target_date: NaiveDate,
    pub forecast_return: f64,
    pub horizon: u8,
}

impl SignalRecord {
    pub fn created_date(&self) -> NaiveDate {
        self.created_at.date()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    Short,
    Flat,
    Long,
}

impl Direction {
    pub fn code(self) -> i8 {
        match self {
            Direction::Long => 1,
            Direction::Flat => 0,
            Direction::Short => -1,
        }
    }

    pub fn sign(self) -> f64 {
        f64::from(self.code())
    }
}

impl Neg for Direction {
    type Output = Direction;

    fn neg(self) -> Direction {
        match self {
            Direction::Long => Direction::Short,
            Direction::Flat => Direction::Flat,
            Direction::Short => Direction::Long,
        }
    }
}

/// Maps a forecast (percent) to a direction with a symmetric deadband.
///
/// Anything inside `[-deadband, deadband]` is flat, so with the default
/// deadband of 0 only an exact zero forecast is flat.
pub fn direction_of(forecast_return: f64, deadband: f64) -> Direction {
    debug_assert!(deadband >= 0.0);
    if forecast_return > deadband {
        Direction::Long
    } else if forecast_return < -deadband {
        Direction::Short
    } else {
        Direction::Flat
    }
}

/// Exchange open time used by the leakage check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionOpen(pub NaiveTime);

impl Default for SessionOpen {
    fn default() -> Self {
        SessionOpen(NaiveTime::from_hms_opt(9, 30, 0).unwrap())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeakageReason {
    /// `created_at` is not before the target session's open.
    CreatedAfterOpen,
    /// `target_date` is not `horizon` sessions after the creation session.
    HorizonMismatch { expected: Option<NaiveDate> },
    /// `target_date` is not a session of the calendar.
    TargetNotSession,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageViolation {
    pub reasons: Vec<LeakageReason>,
}

impl fmt::Display for LeakageViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .reasons
            .iter()
            .map(|r| match r {
                LeakageReason::CreatedAfterOpen => "created after target open".to_string(),
                LeakageReason::HorizonMismatch {
                    expected: Some(day),
                } => format!("horizon/date mismatch (expected {day})"),
                LeakageReason::HorizonMismatch { expected: None } => {
                    "horizon/date mismatch (calendar too short)".to_string()
                }
                LeakageReason::TargetNotSession => "target is not a session".to_string(),
            })
            .collect();
        f.write_str(&parts.join("; "))
    }
}

/// Checks the ex-ante contract of one record against `calendar`.
pub fn leakage_check(
    record: &SignalRecord,
    calendar: &TradingCalendar,
    open: SessionOpen,
) -> Result<(), LeakageViolation> {
    let mut reasons = Vec::new();
    if record.created_at >= record.target_date.and_time(open.0) {
        reasons.push(LeakageReason::CreatedAfterOpen);
    }
    if !calendar.contains(record.target_date) {
        reasons.push(LeakageReason::TargetNotSession);
    }
    let expected = calendar
        .session_at_or_before(record.created_date())
        .and_then(|i| calendar.sessions().get(i + usize::from(record.horizon)))
        .copied();
    if expected != Some(record.target_date) {
        reasons.push(LeakageReason::HorizonMismatch { expected });
    }
    if reasons.is_empty() {
        Ok(())
    } else {
        Err(LeakageViolation { reasons })
    }
}

/// Loaded, de-duplicated records indexed by creation and by target.
#[derive(Debug, Clone, Default)]
pub struct SignalSet {
    records: Vec<SignalRecord>,
    by_creation: BTreeMap<(String, NaiveDate, u8), usize>,
    by_target: BTreeMap<(String, NaiveDate), Vec<usize>>,
}

impl SignalSet {
    pub fn new(mut records: Vec<SignalRecord>) -> Result<Self> {
        records.sort_by(|a, b| {
            (&a.ticker, a.created_at, a.horizon).cmp(&(&b.ticker, b.created_at, b.horizon))
        });
        let mut by_creation = BTreeMap::new();
        let mut by_target: BTreeMap<(String, NaiveDate), Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if !(1..=MAX_HORIZON).contains(&r.horizon) {
                return Err(Error::HorizonOutOfRange {
                    line: 0,
                    horizon: i64::from(r.horizon),
                });
            }
            let key = (r.ticker.clone(), r.created_date(), r.horizon);
            if by_creation.insert(key, i).is_some() {
                return Err(Error::DuplicateSignal {
                    ticker: r.ticker.clone(),
                    created: r.created_date(),
                    horizon: r.horizon,
                });
            }
            by_target
                .entry((r.ticker.clone(), r.target_date))
                .or_default()
                .push(i);
        }
        Ok(SignalSet {
            records,
            by_creation,
            by_target,
        })
    }

    pub fn records(&self) -> &[SignalRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, ticker: &str, created: NaiveDate, horizon: u8) -> Option<&SignalRecord> {
        self.by_creation
            .get(&(ticker.to_string(), created, horizon))
            .map(|&i| &self.records[i])
    }

    pub fn targeting(&self, ticker: &str, target: NaiveDate) -> Vec<&SignalRecord> {
        self.by_target
            .get(&(ticker.to_string(), target))
            .map(|ix| ix.iter().map(|&i| &self.records[i]).collect())
            .unwrap_or_default()
    }

    /// Splits records into those passing [`leakage_check`] and a quarantine.
    pub fn admit(
        &self,
        calendar: &TradingCalendar,
        open: SessionOpen,
    ) -> (AdmittedSignals, Vec<(SignalRecord, LeakageViolation)>) {
        let mut ok = Vec::with_capacity(self.records.len());
        let mut quarantined = Vec::new();
        for r in &self.records {
            match leakage_check(r, calendar, open) {
                Ok(()) => ok.push(r.clone()),
                Err(v) => quarantined.push((r.clone(), v)),
            }
        }
        (AdmittedSignals::from_sorted(ok), quarantined)
    }
}

/// A directional signal as seen by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamSignal {
    pub signal_day: NaiveDate,
    pub direction: Direction,
}

/// Records that passed the leakage check, sorted by (ticker, created, horizon).
#[derive(Debug, Clone, Default)]
pub struct AdmittedSignals {
    records: Vec<SignalRecord>,
    tickers: BTreeMap<String, Range<usize>>,
}

impl AdmittedSignals {
    fn from_sorted(records: Vec<SignalRecord>) -> Self {
        let mut tickers: BTreeMap<String, Range<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            tickers
                .entry(r.ticker.clone())
                .and_modify(|rg| rg.end = i + 1)
                .or_insert(i..i + 1);
        }
        AdmittedSignals { records, tickers }
    }

    pub fn records(&self) -> &[SignalRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn tickers(&self) -> impl Iterator<Item = &str> {
        self.tickers.keys().map(String::as_str)
    }

    pub fn for_ticker(&self, ticker: &str) -> &[SignalRecord] {
        self.tickers
            .get(ticker)
            .map_or(&[][..], |rg| &self.records[rg.clone()])
    }

    /// One signal per creation day for `ticker` at `horizon`, in creation order.
    pub fn stream(&self, ticker: &str, horizon: u8, deadband: f64) -> Vec<StreamSignal> {
        self.for_ticker(ticker)
            .iter()
            .filter(|r| r.horizon == horizon)
            .map(|r| StreamSignal {
                signal_day: r.created_date(),
                direction: direction_of(r.forecast_return, deadband),
            })
            .collect()
    }

    /// Records created within `start ..= end`.
    pub fn created_between(&self, start: NaiveDate, end: NaiveDate) -> AdmittedSignals {
        let kept = self
            .records
            .iter()
            .filter(|r| (start..=end).contains(&r.created_date()))
            .cloned()
            .collect();
        AdmittedSignals::from_sorted(kept)
    }

    /// Records whose entry session (the calendar session after creation)
    /// lies within `start ..= end`.
    pub fn entering_between(
        &self,
        calendar: &TradingCalendar,
        start: NaiveDate,
        end: NaiveDate,
    ) -> AdmittedSignals {
        let kept = self
            .records
            .iter()
            .filter(|r| {
                calendar
                    .next_session(r.created_date())
                    .is_ok_and(|e| (start..=end).contains(&e))
            })
            .cloned()
            .collect();
        AdmittedSignals::from_sorted(kept)
    }
}

/// Reads a signal file (`created_at,ticker,target_date,forecast_return,horizon`).
pub fn load_signals(source: impl AsRef<Path>) -> Result<SignalSet> {
    let path = source.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_signals(file)
}

pub fn read_signals<R: std::io::Read>(reader: R) -> Result<SignalSet> {
    const COLUMNS: [&str; 5] = [
        "created_at",
        "ticker",
        "target_date",
        "forecast_return",
        "horizon",
    ];
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return SignalSet::new(Vec::new());
    }
    let idx: Vec<usize> = COLUMNS
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h.trim() == *name)
                .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut seen: BTreeMap<(String, NaiveDate, u8), u64> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |k: usize| {
            rec.get(idx[k]).map(str::trim).ok_or_else(|| Error::MalformedRow {
                line,
                reason: format!("missing {}", COLUMNS[k]),
            })
        };
        let bad = |what: &str, raw: &str| Error::MalformedRow {
            line,
            reason: format!("{what} `{raw}` cannot be parsed"),
        };
        let raw = get(0)?;
        let created_at =
            NaiveDateTime::parse_from_str(raw, TIMESTAMP_FORMAT).map_err(|_| bad("created_at", raw))?;
        let ticker = get(1)?.to_string();
        let raw = get(2)?;
        let target_date =
            NaiveDate::parse_from_str(raw, DATE_FORMAT).map_err(|_| bad("target_date", raw))?;
        let raw = get(3)?;
        let forecast_return = raw
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| bad("forecast_return", raw))?;
        let raw = get(4)?;
        let horizon: i64 = raw.parse().map_err(|_| bad("horizon", raw))?;
        if !(1..=i64::from(MAX_HORIZON)).contains(&horizon) {
            return Err(Error::HorizonOutOfRange { line, horizon });
        }
        let horizon = horizon as u8;
        let key = (ticker.clone(), created_at.date(), horizon);
        if seen.insert(key, line).is_some() {
            return Err(Error::DuplicateSignal {
                ticker,
                created: created_at.date(),
                horizon,
            });
        }
        records.push(SignalRecord {
            created_at,
            ticker,
            target_date,
            forecast_return,
            horizon,
        });
    }
    SignalSet::new(records)
}

/// Writes records in the signal-file layout, forecasts to four decimals.
pub fn write_signals<'a, W: std::io::Write>(
    writer: W,
    records: impl IntoIterator<Item = &'a SignalRecord>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "created_at",
        "ticker",
        "target_date",
        "forecast_return",
        "horizon",
    ])?;
    for r in records {
        w.write_record([
            r.created_at.format(TIMESTAMP_FORMAT).to_string(),
            r.ticker.clone(),
            r.target_date.format(DATE_FORMAT).to_string(),
            format!("{:.4}", r.forecast_return),
            r.horizon.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<signal writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, DATE_FORMAT).unwrap()
    }

    fn ts(s: &str) -> NaiveDateTime {
        NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT).unwrap()
    }

    /// US sessions around the 2021 Independence Day holiday.
    fn july_2021() -> TradingCalendar {
        TradingCalendar::new(
            [
                "2021-06-25", "2021-06-28", "2021-06-29", "2021-06-30", "2021-07-01",
                "2021-07-02", "2021-07-06", "2021-07-07", "2021-07-08", "2021-07-09",
                "2021-07-12", "2021-07-13", "2021-07-14",
            ]
            .iter()
            .map(|s| d(s))
            .collect(),
        )
    }

    const AAPL_TABLE: &str = "created_at,ticker,target_date,forecast_return,horizon
2021-06-28 21:30,AAPL,2021-06-29,+0.5835,1
2021-06-28 21:30,AAPL,2021-06-30,-3.5856,2
2021-06-28 21:30,AAPL,2021-07-01,+1.1635,3
2021-06-28 21:30,AAPL,2021-07-02,-1.2820,4
2021-06-28 21:30,AAPL,2021-07-06,-0.5109,5
2021-06-28 21:30,AAPL,2021-07-07,-0.5405,6
2021-06-28 21:30,AAPL,2021-07-08,-0.2841,7
2021-06-28 21:30,AAPL,2021-07-09,-0.3977,8
2021-06-28 21:30,AAPL,2021-07-12,-0.4024,9
2021-06-28 21:30,AAPL,2021-07-13,-0.2335,10
";

    #[test]
    fn loads_the_aapl_prediction_set() {
        let set = read_signals(AAPL_TABLE.as_bytes()).unwrap();
        assert_eq!(set.len(), 10);
        let horizons: Vec<u8> = set.records().iter().map(|r| r.horizon).collect();
        assert_eq!(horizons, (1..=10).collect::<Vec<_>>());
        assert_eq!(set.records()[0].target_date, d("2021-06-29"));
        assert_eq!(set.records()[9].target_date, d("2021-07-13"));
        assert_eq!(set.targeting("AAPL", d("2021-07-06")).len(), 1);

        let (admitted, quarantined) = set.admit(&july_2021(), SessionOpen::default());
        assert!(quarantined.is_empty(), "{quarantined:?}");
        assert_eq!(admitted.len(), 10);
        // the ten target dates are the next ten sessions in order
        let cal = july_2021();
        let start = cal.index_of(d("2021-06-28")).unwrap();
        for (k, r) in admitted.records().iter().enumerate() {
            assert_eq!(r.target_date, cal.sessions()[start + k + 1]);
        }
    }

    #[test]
    fn empty_file_is_empty_set() {
        assert!(read_signals("".as_bytes()).unwrap().is_empty());
        let header_only = "created_at,ticker,target_date,forecast_return,horizon\n";
        assert!(read_signals(header_only.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn duplicate_and_range_errors() {
        let dup = "created_at,ticker,target_date,forecast_return,horizon
2021-06-28 21:30,AAPL,2021-06-29,0.5,1
2021-06-28 22:00,AAPL,2021-06-29,0.7,1
";
        assert!(matches!(
            read_signals(dup.as_bytes()),
            Err(Error::DuplicateSignal { .. })
        ));
        let range = "created_at,ticker,target_date,forecast_return,horizon
2021-06-28 21:30,AAPL,2021-06-29,0.5,11
";
        assert!(matches!(
            read_signals(range.as_bytes()),
            Err(Error::HorizonOutOfRange { horizon: 11, .. })
        ));
        let schema = "when,ticker,target_date,forecast_return,horizon\n";
        assert!(matches!(read_signals(schema.as_bytes()), Err(Error::Schema(_))));
    }

    #[test]
    fn direction_codes() {
        assert_eq!(direction_of(0.5835, 0.0), Direction::Long);
        assert_eq!(direction_of(-0.2335, 0.0), Direction::Short);
        assert_eq!(direction_of(0.0, 0.0), Direction::Flat);
        assert_eq!(direction_of(0.0, 1.0), Direction::Flat);
        assert_eq!(direction_of(0.5, 1.0), Direction::Flat);
        assert_eq!(direction_of(-1.0, 1.0), Direction::Flat);
        assert_eq!(Direction::Short.code(), -1);
    }

    fn rec(created: &str, target: &str, horizon: u8) -> SignalRecord {
        SignalRecord {
            created_at: ts(created),
            ticker: "AAPL".into(),
            target_date: d(target),
            forecast_return: 1.0,
            horizon,
        }
    }

    #[test]
    fn leakage_cases() {
        let cal = july_2021();
        let open = SessionOpen::default();
        assert!(leakage_check(&rec("2021-06-28 21:30", "2021-06-29", 1), &cal, open).is_ok());

        let v = leakage_check(&rec("2021-06-29 10:00", "2021-06-29", 1), &cal, open).unwrap_err();
        assert!(v.reasons.contains(&LeakageReason::CreatedAfterOpen));

        let v = leakage_check(&rec("2021-06-28 21:30", "2021-07-01", 1), &cal, open).unwrap_err();
        assert_eq!(
            v.reasons,
            vec![LeakageReason::HorizonMismatch {
                expected: Some(d("2021-06-29"))
            }]
        );
    }

    #[test]
    fn horizon_offsets_enumerated() {
        // For every creation session and horizon, exactly one target passes.
        let cal = july_2021();
        let open = SessionOpen::default();
        let sessions = cal.sessions();
        for (ci, created) in sessions.iter().enumerate() {
            for h in 1..=MAX_HORIZON {
                let passing: Vec<NaiveDate> = sessions
                    .iter()
                    .copied()
                    .filter(|t| {
                        let r = SignalRecord {
                            created_at: created.and_hms_opt(21, 30, 0).unwrap(),
                            ticker: "X".into(),
                            target_date: *t,
                            forecast_return: 1.0,
                            horizon: h,
                        };
                        leakage_check(&r, &cal, open).is_ok()
                    })
                    .collect();
                let expected: Vec<NaiveDate> =
                    sessions.get(ci + usize::from(h)).copied().into_iter().collect();
                assert_eq!(passing, expected, "created {created} h {h}");
            }
        }
    }

    #[test]
    fn weekend_creation_belongs_to_friday() {
        let cal = july_2021();
        // Saturday 2021-07-10: Friday's session + 1 = Monday 07-12
        let r = rec("2021-07-10 12:00", "2021-07-12", 1);
        assert!(leakage_check(&r, &cal, SessionOpen::default()).is_ok());
    }

    #[test]
    fn quarantine_keeps_violations_out() {
        let mut text = AAPL_TABLE.to_string();
        text.push_str("2021-07-01 10:00,AAPL,2021-07-01,0.3,1\n");
        let set = read_signals(text.as_bytes()).unwrap();
        let (admitted, quarantined) = set.admit(&july_2021(), SessionOpen::default());
        assert_eq!(admitted.len(), 10);
        assert_eq!(quarantined.len(), 1);
        assert_eq!(admitted.stream("AAPL", 1, 0.0).len(), 1);
    }

    #[test]
    fn write_then_read() {
        let set = read_signals(AAPL_TABLE.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_signals(&mut buf, set.records()).unwrap();
        let again = read_signals(buf.as_slice()).unwrap();
        assert_eq!(again.records(), set.records());
    }
}
