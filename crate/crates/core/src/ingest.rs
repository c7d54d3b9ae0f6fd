//! Parsing of ticketing logs, event calendars, day-type calendars and the
//! network manifest, plus aggregation of logs into 96-slot daily vectors.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of quarter-hour slots in a day.
pub const SLOTS_PER_DAY: usize = 96;

/// Timestamp layout used by the events file.
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";
pub const DATE_FORMAT: &str = "%Y-%m-%d";

pub const TICKETING_HEADER: [&str; 5] = ["station_id", "date", "slot", "fare_class", "count"];
pub const EVENTS_HEADER: [&str; 4] = ["station_id", "start", "end", "category"];
pub const CALENDAR_HEADER: [&str; 8] = [
    "date",
    "holiday",
    "dec24",
    "dec31",
    "christmas_school_holiday",
    "summer_uni_1",
    "summer_uni_2",
    "renovation",
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: header mismatch: expected `{expected}`, found `{found}`")]
    Header {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("unknown fare class `{0}`")]
    UnknownFareClass(String),
    #[error("manifest: {0}")]
    Manifest(String),
}

impl IngestError {
    fn row(line: u64, message: impl Into<String>) -> Self {
        IngestError::Row {
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// Ticket or pass category. `All` is the slot-wise sum of the four others.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FareClass {
    #[serde(rename = "SMP")]
    Smp,
    #[serde(rename = "RMP")]
    Rmp,
    #[serde(rename = "BT")]
    Bt,
    #[serde(rename = "OP")]
    Op,
    #[serde(rename = "ALL")]
    All,
}

impl FareClass {
    /// The four concrete classes, in canonical order.
    pub const CONCRETE: [FareClass; 4] = [FareClass::Smp, FareClass::Rmp, FareClass::Bt, FareClass::Op];

    pub fn as_str(self) -> &'static str {
        match self {
            FareClass::Smp => "SMP",
            FareClass::Rmp => "RMP",
            FareClass::Bt => "BT",
            FareClass::Op => "OP",
            FareClass::All => "ALL",
        }
    }
}

impl fmt::Display for FareClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FareClass {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "SMP" => Ok(FareClass::Smp),
            "RMP" => Ok(FareClass::Rmp),
            "BT" => Ok(FareClass::Bt),
            "OP" => Ok(FareClass::Op),
            "ALL" => Ok(FareClass::All),
            other => Err(IngestError::UnknownFareClass(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TicketingRecord {
    pub station_id: String,
    pub date: NaiveDate,
    pub slot: usize,
    pub fare_class: FareClass,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub station_id: String,
    pub start: NaiveDateTime,
    pub end: Option<NaiveDateTime>,
    pub category: String,
}

/// Special-day flags of one calendar date, in the calendar file's column order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayFlags {
    pub holiday: bool,
    pub dec24: bool,
    pub dec31: bool,
    pub christmas_school_holiday: bool,
    pub summer_uni_1: bool,
    pub summer_uni_2: bool,
    pub renovation: bool,
}

impl DayFlags {
    pub const NAMES: [&'static str; 7] = [
        "holiday",
        "dec24",
        "dec31",
        "christmas_school_holiday",
        "summer_uni_1",
        "summer_uni_2",
        "renovation",
    ];

    pub fn to_array(self) -> [bool; 7] {
        [
            self.holiday,
            self.dec24,
            self.dec31,
            self.christmas_school_holiday,
            self.summer_uni_1,
            self.summer_uni_2,
            self.renovation,
        ]
    }

    pub fn from_array(a: [bool; 7]) -> Self {
        DayFlags {
            holiday: a[0],
            dec24: a[1],
            dec31: a[2],
            christmas_school_holiday: a[3],
            summer_uni_1: a[4],
            summer_uni_2: a[5],
            renovation: a[6],
        }
    }

    pub fn any(self) -> bool {
        self.to_array().iter().any(|&b| b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarDay {
    pub date: NaiveDate,
    pub flags: DayFlags,
}

/// Calendar keyed by date; at most one record per date.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Calendar {
    days: BTreeMap<NaiveDate, CalendarDay>,
}

impl Calendar {
    pub fn from_days(days: impl IntoIterator<Item = CalendarDay>) -> std::result::Result<Self, String> {
        let mut map = BTreeMap::new();
        for day in days {
            validate_calendar_day(&day)?;
            if map.insert(day.date, day).is_some() {
                return Err(format!("duplicate calendar date {}", day.date));
            }
        }
        Ok(Calendar { days: map })
    }

    pub fn get(&self, date: NaiveDate) -> Option<&CalendarDay> {
        self.days.get(&date)
    }

    pub fn days(&self) -> impl Iterator<Item = &CalendarDay> {
        self.days.values()
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    /// First date not covered in `range`, if any.
    pub fn first_gap(&self, range: &DateRange) -> Option<NaiveDate> {
        range.iter().find(|d| !self.days.contains_key(d))
    }
}

fn validate_calendar_day(day: &CalendarDay) -> std::result::Result<(), String> {
    let (m, d) = (day.date.month(), day.date.day());
    if day.flags.dec24 && (m, d) != (12, 24) {
        return Err(format!("dec24 flag set on {}", day.date));
    }
    if day.flags.dec31 && (m, d) != (12, 31) {
        return Err(format!("dec31 flag set on {}", day.date));
    }
    Ok(())
}

/// Inclusive range of calendar dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        DateRange { start, end }
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }

    pub fn len(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (self.end - self.start).num_days() as usize + 1
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = NaiveDate> {
        let end = self.end;
        self.start.iter_days().take_while(move |d| *d <= end)
    }

    pub fn overlaps(&self, other: &DateRange) -> bool {
        !self.is_empty() && !other.is_empty() && self.start <= other.end && other.start <= self.end
    }
}

impl fmt::Display for DateRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

impl FromStr for DateRange {
    type Err = String;

    /// Parses `YYYY-MM-DD..YYYY-MM-DD` (both ends inclusive).
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s
            .split_once("..")
            .ok_or_else(|| format!("expected START..END, got `{s}`"))?;
        let start = NaiveDate::parse_from_str(a.trim(), DATE_FORMAT).map_err(|e| format!("{a}: {e}"))?;
        let end = NaiveDate::parse_from_str(b.trim(), DATE_FORMAT).map_err(|e| format!("{b}: {e}"))?;
        Ok(DateRange { start, end })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StationEntry {
    pub id: String,
    #[serde(default)]
    pub hosts_events: bool,
}

/// Station list and event category vocabulary.
///
/// The order of stations flagged `hosts_events` and the order of categories
/// fix the column layout of the event feature blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkManifest {
    pub stations: Vec<StationEntry>,
    pub categories: Vec<String>,
}

impl NetworkManifest {
    pub const DEFAULT_STATIONS: usize = 68;
    pub const DEFAULT_EVENT_STATIONS: usize = 29;
    pub const DEFAULT_CATEGORIES: usize = 10;

    /// A manifest with generated identifiers; the first `n_event_stations`
    /// stations host events.
    pub fn generated(n_stations: usize, n_event_stations: usize, categories: Vec<String>) -> Self {
        let stations = (0..n_stations)
            .map(|i| StationEntry {
                id: format!("S{i:03}"),
                hosts_events: i < n_event_stations,
            })
            .collect();
        NetworkManifest { stations, categories }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let manifest: NetworkManifest =
            serde_json::from_str(&text).map_err(|e| IngestError::Manifest(format!("{}: {e}", path.display())))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for s in &self.stations {
            if !seen.insert(s.id.as_str()) {
                return Err(IngestError::Manifest(format!("duplicate station `{}`", s.id)));
            }
        }
        let mut cats = BTreeSet::new();
        for c in &self.categories {
            if !cats.insert(c.as_str()) {
                return Err(IngestError::Manifest(format!("duplicate category `{c}`")));
            }
        }
        if self.categories.is_empty() {
            return Err(IngestError::Manifest("category vocabulary is empty".into()));
        }
        Ok(())
    }

    pub fn station_ids(&self) -> Vec<String> {
        self.stations.iter().map(|s| s.id.clone()).collect()
    }

    pub fn event_stations(&self) -> Vec<&str> {
        self.stations
            .iter()
            .filter(|s| s.hosts_events)
            .map(|s| s.id.as_str())
            .collect()
    }

    pub fn event_station_index(&self, id: &str) -> Option<usize> {
        self.stations
            .iter()
            .filter(|s| s.hosts_events)
            .position(|s| s.id == id)
    }

    pub fn category_index(&self, label: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == label)
    }

    /// Stable digest of the manifest, used to key cached feature matrices.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("manifest serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

fn open_csv(path: &Path, expected: &[&str]) -> Result<csv::Reader<std::fs::File>> {
    let csv_err = |source| IngestError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?;
    let found: Vec<&str> = headers.iter().collect();
    if found != expected {
        return Err(IngestError::Header {
            path: path.to_path_buf(),
            expected: expected.join(","),
            found: found.join(","),
        });
    }
    Ok(reader)
}

fn records(
    path: &Path,
    reader: &mut csv::Reader<std::fs::File>,
    width: usize,
) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|source| IngestError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != width {
            return Err(IngestError::row(
                line,
                format!("expected {width} fields, found {}", rec.len()),
            ));
        }
        rows.push((line, rec));
    }
    Ok(rows)
}

fn parse_date(line: u64, s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, DATE_FORMAT).map_err(|e| IngestError::row(line, format!("bad date `{s}`: {e}")))
}

fn parse_timestamp(line: u64, s: &str) -> Result<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .map_err(|e| IngestError::row(line, format!("bad timestamp `{s}`: {e}")))
}

/// Parses one ticketing row (without header handling).
pub fn parse_ticketing_row(line: u64, fields: &[&str]) -> Result<TicketingRecord> {
    if fields.len() != 5 {
        return Err(IngestError::row(line, format!("expected 5 fields, found {}", fields.len())));
    }
    let station_id = fields[0].to_string();
    if station_id.is_empty() {
        return Err(IngestError::row(line, "empty station_id"));
    }
    let date = parse_date(line, fields[1])?;
    let slot: usize = fields[2]
        .parse()
        .map_err(|_| IngestError::row(line, format!("bad slot `{}`", fields[2])))?;
    if slot >= SLOTS_PER_DAY {
        return Err(IngestError::row(line, format!("slot out of range: {slot}")));
    }
    let fare_class: FareClass = fields[3].parse()?;
    let count: u64 = fields[4]
        .parse()
        .map_err(|_| IngestError::row(line, format!("bad count `{}`", fields[4])))?;
    Ok(TicketingRecord {
        station_id,
        date,
        slot,
        fare_class,
        count,
    })
}

/// Reads a ticketing CSV. Rows sharing (station, date, slot, fare class) are
/// summed; output is sorted by that key.
pub fn parse_ticketing_csv(path: &Path) -> Result<Vec<TicketingRecord>> {
    let mut reader = open_csv(path, &TICKETING_HEADER)?;
    let mut merged: BTreeMap<(String, NaiveDate, usize, FareClass), u64> = BTreeMap::new();
    for (line, rec) in records(path, &mut reader, 5)? {
        let fields: Vec<&str> = rec.iter().collect();
        let r = parse_ticketing_row(line, &fields)?;
        *merged.entry((r.station_id, r.date, r.slot, r.fare_class)).or_default() += r.count;
    }
    Ok(merged
        .into_iter()
        .map(|((station_id, date, slot, fare_class), count)| TicketingRecord {
            station_id,
            date,
            slot,
            fare_class,
            count,
        })
        .collect())
}

pub fn parse_event_row(line: u64, fields: &[&str]) -> Result<EventRecord> {
    if fields.len() != 4 {
        return Err(IngestError::row(line, format!("expected 4 fields, found {}", fields.len())));
    }
    let start = parse_timestamp(line, fields[1])?;
    let end = if fields[2].is_empty() {
        None
    } else {
        Some(parse_timestamp(line, fields[2])?)
    };
    if let Some(end) = end {
        if end <= start {
            return Err(IngestError::row(line, "end before start"));
        }
    }
    if fields[3].is_empty() {
        return Err(IngestError::row(line, "empty category"));
    }
    Ok(EventRecord {
        station_id: fields[0].to_string(),
        start,
        end,
        category: fields[3].to_string(),
    })
}

/// Reads an events CSV, preserving file order. An empty `end` field means the
/// end time is unknown.
pub fn parse_events_csv(path: &Path) -> Result<Vec<EventRecord>> {
    let mut reader = open_csv(path, &EVENTS_HEADER)?;
    records(path, &mut reader, 4)?
        .into_iter()
        .map(|(line, rec)| {
            let fields: Vec<&str> = rec.iter().collect();
            parse_event_row(line, &fields)
        })
        .collect()
}

/// Reads a calendar CSV with 0/1 flag columns.
pub fn parse_calendar_csv(path: &Path) -> Result<Calendar> {
    let mut reader = open_csv(path, &CALENDAR_HEADER)?;
    let mut days = Vec::new();
    for (line, rec) in records(path, &mut reader, 8)? {
        let date = parse_date(line, &rec[0])?;
        let mut flags = [false; 7];
        for (i, flag) in flags.iter_mut().enumerate() {
            *flag = match &rec[i + 1] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(IngestError::row(
                        line,
                        format!("flag `{}` must be 0 or 1, found `{other}`", CALENDAR_HEADER[i + 1]),
                    ))
                }
            };
        }
        days.push(CalendarDay {
            date,
            flags: DayFlags::from_array(flags),
        });
    }
    Calendar::from_days(days).map_err(|m| IngestError::row(0, m))
}

/// Checks events against the manifest vocabularies.
pub fn validate_events(events: &[EventRecord], manifest: &NetworkManifest) -> Result<()> {
    for e in events {
        if manifest.category_index(&e.category).is_none() {
            return Err(IngestError::Manifest(format!("unknown event category `{}`", e.category)));
        }
        if manifest.event_station_index(&e.station_id).is_none() {
            return Err(IngestError::Manifest(format!(
                "station `{}` is not flagged hosts_events",
                e.station_id
            )));
        }
    }
    Ok(())
}

/// One station-day of entries for a fare class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailyDemand {
    pub station_id: String,
    pub date: NaiveDate,
    pub fare_class: FareClass,
    /// Always `SLOTS_PER_DAY` long.
    pub counts: Vec<u64>,
}

impl DailyDemand {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Dense, date-aligned demand for a set of stations and classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandSet {
    pub range: DateRange,
    pub stations: Vec<String>,
    /// Concrete classes plus `All`.
    pub classes: Vec<FareClass>,
    entries: BTreeMap<(String, NaiveDate, FareClass), Vec<u64>>,
    /// Stations without a single entry in the range.
    pub warnings: Vec<String>,
}

impl DemandSet {
    pub fn get(&self, station: &str, date: NaiveDate, class: FareClass) -> Option<&[u64]> {
        self.entries
            .get(&(station.to_string(), date, class))
            .map(|v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = DailyDemand> + '_ {
        self.entries.iter().map(|((s, d, c), counts)| DailyDemand {
            station_id: s.clone(),
            date: *d,
            fare_class: *c,
            counts: counts.clone(),
        })
    }

    /// Row-per-date target matrix (`dates.len() × 96`) for one station and class.
    pub fn targets(&self, station: &str, class: FareClass, dates: &[NaiveDate]) -> ndarray::Array2<f64> {
        let mut y = ndarray::Array2::zeros((dates.len(), SLOTS_PER_DAY));
        for (i, d) in dates.iter().enumerate() {
            if let Some(counts) = self.get(station, *d, class) {
                for (j, &c) in counts.iter().enumerate() {
                    y[[i, j]] = c as f64;
                }
            }
        }
        y
    }

    /// Regenerates one ticketing record per non-zero concrete-class slot.
    pub fn to_records(&self) -> Vec<TicketingRecord> {
        let mut out = Vec::new();
        for ((s, d, c), counts) in &self.entries {
            if *c == FareClass::All {
                continue;
            }
            for (slot, &count) in counts.iter().enumerate() {
                if count > 0 {
                    out.push(TicketingRecord {
                        station_id: s.clone(),
                        date: *d,
                        slot,
                        fare_class: *c,
                        count,
                    });
                }
            }
        }
        out
    }
}

/// Aggregates records into one 96-slot vector per (station, date, class) in
/// `range`, filling gaps with zeros and synthesizing the `All` class.
///
/// Records already carrying the `All` class are ignored: it is always
/// recomputed from the concrete classes.
pub fn aggregate_daily(records: &[TicketingRecord], stations: &[String], range: DateRange) -> DemandSet {
    let mut entries: BTreeMap<(String, NaiveDate, FareClass), Vec<u64>> = BTreeMap::new();
    for s in stations {
        for d in range.iter() {
            for c in FareClass::CONCRETE.iter().chain(std::iter::once(&FareClass::All)) {
                entries.insert((s.clone(), d, *c), vec![0; SLOTS_PER_DAY]);
            }
        }
    }
    let mut covered = BTreeSet::new();
    for r in records {
        if r.fare_class == FareClass::All || !range.contains(r.date) {
            continue;
        }
        let key = (r.station_id.clone(), r.date, r.fare_class);
        if let Some(v) = entries.get_mut(&key) {
            v[r.slot] += r.count;
            covered.insert(r.station_id.clone());
            let all = entries
                .get_mut(&(r.station_id.clone(), r.date, FareClass::All))
                .expect("ALL vector allocated alongside class vectors");
            all[r.slot] += r.count;
        }
    }
    let warnings = stations
        .iter()
        .filter(|s| !covered.contains(*s))
        .map(|s| format!("station {s} has no ticketing entries in {range}"))
        .collect();
    let mut classes = FareClass::CONCRETE.to_vec();
    classes.push(FareClass::All);
    DemandSet {
        range,
        stations: stations.to_vec(),
        classes,
        entries,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, DATE_FORMAT).unwrap()
    }

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn ticketing_row_maps_fields() {
        let r = parse_ticketing_row(2, &["S001", "2015-01-05", "32", "SMP", "41"]).unwrap();
        assert_eq!(r.station_id, "S001");
        assert_eq!(r.date, d("2015-01-05"));
        assert_eq!(r.slot, 32);
        assert_eq!(r.fare_class, FareClass::Smp);
        assert_eq!(r.count, 41);
    }

    #[test]
    fn duplicate_keys_are_summed() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "t.csv",
            "station_id,date,slot,fare_class,count\nS1,2015-01-05,3,OP,3\nS1,2015-01-05,3,OP,4\n",
        );
        let recs = parse_ticketing_csv(&p).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].count, 7);
    }

    #[test]
    fn slot_96_is_rejected_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "t.csv",
            "station_id,date,slot,fare_class,count\nS1,2015-01-05,3,OP,3\nS1,2015-01-05,96,OP,4\n",
        );
        let err = parse_ticketing_csv(&p).unwrap_err();
        match err {
            IngestError::Row { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("slot out of range"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_fare_class_names_value() {
        let err = parse_ticketing_row(2, &["S1", "2015-01-05", "3", "XYZ", "1"]).unwrap_err();
        assert!(err.to_string().contains("XYZ"));
    }

    #[test]
    fn bad_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "t.csv", "station,date,slot,fare_class,count\n");
        assert!(matches!(parse_ticketing_csv(&p), Err(IngestError::Header { .. })));
    }

    #[test]
    fn event_without_end() {
        let e = parse_event_row(2, &["S010", "2017-11-29 19:30:00", "", "hockey"]).unwrap();
        assert_eq!(e.end, None);
        assert_eq!(e.category, "hockey");
    }

    #[test]
    fn overnight_event_spans_two_dates() {
        let e = parse_event_row(2, &["S020", "2017-03-04 18:00:00", "2017-03-05 05:00:00", "other"]).unwrap();
        assert_eq!(e.start.date(), d("2017-03-04"));
        assert_eq!(e.end.unwrap().date(), d("2017-03-05"));
    }

    #[test]
    fn event_end_before_start() {
        let err = parse_event_row(7, &["S010", "2017-01-18 21:30:00", "2017-01-18 19:30:00", "hockey"]).unwrap_err();
        assert_eq!(err.to_string(), "line 7: end before start");
    }

    #[test]
    fn events_file_keeps_order_and_reports_bad_timestamp() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "e.csv",
            "station_id,start,end,category\nS2,2017-01-02 10:00:00,,a\nS1,2017-01-01 10:00:00,2017-01-01 11:00:00,b\n",
        );
        let ev = parse_events_csv(&p).unwrap();
        assert_eq!(ev[0].station_id, "S2");
        assert_eq!(ev[1].station_id, "S1");
        let bad = write(&dir, "b.csv", "station_id,start,end,category\nS2,2017-01-02T10:00,,a\n");
        let err = parse_events_csv(&bad).unwrap_err();
        assert!(matches!(err, IngestError::Row { line: 2, .. }), "{err}");
    }

    #[test]
    fn calendar_parses_and_checks_month_day() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "c.csv",
            "date,holiday,dec24,dec31,christmas_school_holiday,summer_uni_1,summer_uni_2,renovation\n\
             2015-12-24,0,1,0,1,0,0,0\n2015-12-25,1,0,0,1,0,0,0\n",
        );
        let cal = parse_calendar_csv(&p).unwrap();
        assert_eq!(cal.len(), 2);
        assert!(cal.get(d("2015-12-24")).unwrap().flags.dec24);
        let bad = write(
            &dir,
            "b.csv",
            "date,holiday,dec24,dec31,christmas_school_holiday,summer_uni_1,summer_uni_2,renovation\n\
             2015-12-23,0,1,0,0,0,0,0\n",
        );
        assert!(parse_calendar_csv(&bad).is_err());
    }

    fn rec(s: &str, date: &str, slot: usize, c: FareClass, count: u64) -> TicketingRecord {
        TicketingRecord {
            station_id: s.into(),
            date: d(date),
            slot,
            fare_class: c,
            count,
        }
    }

    #[test]
    fn single_record_placement() {
        let range = DateRange::new(d("2015-01-01"), d("2015-01-01"));
        let set = aggregate_daily(&[rec("S1", "2015-01-01", 0, FareClass::Smp, 5)], &["S1".into()], range);
        let mut expected = vec![0; 96];
        expected[0] = 5;
        assert_eq!(set.get("S1", d("2015-01-01"), FareClass::Smp).unwrap(), &expected[..]);
        assert_eq!(set.get("S1", d("2015-01-01"), FareClass::All).unwrap(), &expected[..]);
    }

    #[test]
    fn classes_add_into_all() {
        let range = DateRange::new(d("2015-01-01"), d("2015-01-01"));
        let set = aggregate_daily(
            &[
                rec("S1", "2015-01-01", 0, FareClass::Smp, 5),
                rec("S1", "2015-01-01", 0, FareClass::Op, 2),
            ],
            &["S1".into()],
            range,
        );
        assert_eq!(set.get("S1", d("2015-01-01"), FareClass::All).unwrap()[0], 7);
    }

    #[test]
    fn empty_aggregation_is_dense_zero() {
        let range = DateRange::new(d("2015-01-01"), d("2015-01-02"));
        let set = aggregate_daily(&[], &["S1".into()], range);
        assert_eq!(set.len(), 10);
        assert!(set.iter().all(|dd| dd.counts.iter().all(|&c| c == 0)));
        assert_eq!(set.warnings.len(), 1);
    }

    #[test]
    fn date_range_parse_and_len() {
        let r: DateRange = "2015-01-01..2015-12-31".parse().unwrap();
        assert_eq!(r.len(), 365);
        assert!("2015-01-01".parse::<DateRange>().is_err());
    }
}
