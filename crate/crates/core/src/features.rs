//! Calendar and event encodings, and the D1–D4 design matrices built from them.
//!
//! Block layout (fixed order A, B, C, D):
//! * A: month one-hot without January (11) + day-of-week one-hot without Monday (6)
//! * B: the seven special-day flags
//! * C: per event-hosting station, three 96-slot count vectors (start, end, period)
//! * D: block C broken out per event category
//!
//! Matrices are stored row-compressed because blocks C and D are almost
//! entirely zero.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Weekday};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Calendar, CalendarDay, DateRange, DayFlags, EventRecord, NetworkManifest, SLOTS_PER_DAY};

pub const BLOCK_A_WIDTH: usize = 11 + 6;
pub const BLOCK_B_WIDTH: usize = 7;
/// Start, end and period.
pub const FACETS: usize = 3;
const SLOT_SECONDS: i64 = 15 * 60;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("station `{0}` is not flagged hosts_events in the manifest")]
    NotEventStation(String),
    #[error("unknown event category `{0}`")]
    UnknownCategory(String),
    #[error("date {0} is missing from the calendar")]
    MissingCalendarDate(NaiveDate),
    #[error("empty date range")]
    EmptyRange,
    #[error("feature cache: {0}")]
    Cache(String),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureSetId {
    D1,
    D2,
    D3,
    D4,
}

impl FeatureSetId {
    pub const ALL: [FeatureSetId; 4] = [FeatureSetId::D1, FeatureSetId::D2, FeatureSetId::D3, FeatureSetId::D4];

    pub fn has_calendar_flags(self) -> bool {
        self >= FeatureSetId::D2
    }

    pub fn has_events(self) -> bool {
        self >= FeatureSetId::D3
    }

    pub fn has_categories(self) -> bool {
        self == FeatureSetId::D4
    }

    /// Number of columns for `event_stations` hosting stations and
    /// `categories` event categories.
    pub fn width(self, event_stations: usize, categories: usize) -> usize {
        let c = SLOTS_PER_DAY * FACETS * event_stations;
        match self {
            FeatureSetId::D1 => BLOCK_A_WIDTH,
            FeatureSetId::D2 => BLOCK_A_WIDTH + BLOCK_B_WIDTH,
            FeatureSetId::D3 => BLOCK_A_WIDTH + BLOCK_B_WIDTH + c,
            FeatureSetId::D4 => BLOCK_A_WIDTH + BLOCK_B_WIDTH + c + c * categories,
        }
    }
}

impl fmt::Display for FeatureSetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FeatureSetId::D1 => "D1",
            FeatureSetId::D2 => "D2",
            FeatureSetId::D3 => "D3",
            FeatureSetId::D4 => "D4",
        };
        f.write_str(s)
    }
}

impl FromStr for FeatureSetId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "D1" => Ok(FeatureSetId::D1),
            "D2" => Ok(FeatureSetId::D2),
            "D3" => Ok(FeatureSetId::D3),
            "D4" => Ok(FeatureSetId::D4),
            other => Err(format!("unknown feature set `{other}` (expected D1..D4)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Facet {
    Start,
    End,
    Period,
}

impl Facet {
    pub const ALL: [Facet; 3] = [Facet::Start, Facet::End, Facet::Period];

    fn index(self) -> usize {
        match self {
            Facet::Start => 0,
            Facet::End => 1,
            Facet::Period => 2,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Facet::Start => "start",
            Facet::End => "end",
            Facet::Period => "period",
        }
    }
}

const WEEKDAY_NAMES: [&str; 7] = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"];

/// Structured meaning of one design-matrix column.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ColumnLabel {
    /// Month number 2..=12.
    Month(u32),
    /// Days from Monday, 1..=6.
    DayOfWeek(u32),
    Flag(usize),
    Event { station: String, facet: Facet, slot: usize },
    Category { station: String, category: String, facet: Facet, slot: usize },
}

impl fmt::Display for ColumnLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnLabel::Month(m) => write!(f, "A/month={m:02}"),
            ColumnLabel::DayOfWeek(d) => write!(f, "A/dow={}", WEEKDAY_NAMES[*d as usize]),
            ColumnLabel::Flag(i) => write!(f, "B/{}", DayFlags::NAMES[*i]),
            ColumnLabel::Event { station, facet, slot } => write!(f, "C/{station}/{}/{slot}", facet.as_str()),
            ColumnLabel::Category {
                station,
                category,
                facet,
                slot,
            } => write!(f, "D/{station}/{category}/{}/{slot}", facet.as_str()),
        }
    }
}

impl FromStr for ColumnLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let bad = || format!("unclassifiable column `{s}`");
        let facet = |f: &str| match f {
            "start" => Ok(Facet::Start),
            "end" => Ok(Facet::End),
            "period" => Ok(Facet::Period),
            _ => Err(bad()),
        };
        let slot = |x: &str| x.parse::<usize>().ok().filter(|v| *v < SLOTS_PER_DAY).ok_or_else(bad);
        let parts: Vec<&str> = s.split('/').collect();
        match parts.as_slice() {
            ["A", rest] => {
                if let Some(m) = rest.strip_prefix("month=") {
                    let m: u32 = m.parse().map_err(|_| bad())?;
                    if (2..=12).contains(&m) {
                        return Ok(ColumnLabel::Month(m));
                    }
                } else if let Some(d) = rest.strip_prefix("dow=") {
                    if let Some(i) = WEEKDAY_NAMES.iter().position(|n| *n == d).filter(|i| *i > 0) {
                        return Ok(ColumnLabel::DayOfWeek(i as u32));
                    }
                }
                Err(bad())
            }
            ["B", name] => DayFlags::NAMES
                .iter()
                .position(|n| n == name)
                .map(ColumnLabel::Flag)
                .ok_or_else(bad),
            ["C", station, f, sl] => Ok(ColumnLabel::Event {
                station: station.to_string(),
                facet: facet(f)?,
                slot: slot(sl)?,
            }),
            ["D", station, cat, f, sl] => Ok(ColumnLabel::Category {
                station: station.to_string(),
                category: cat.to_string(),
                facet: facet(f)?,
                slot: slot(sl)?,
            }),
            _ => Err(bad()),
        }
    }
}

/// Month (January dropped) and day-of-week (Monday dropped) one-hots.
pub fn encode_block_a(date: NaiveDate) -> [f64; BLOCK_A_WIDTH] {
    let mut out = [0.0; BLOCK_A_WIDTH];
    let month = date.month();
    if month > 1 {
        out[(month - 2) as usize] = 1.0;
    }
    let dow = date.weekday().num_days_from_monday();
    if dow > 0 {
        out[11 + dow as usize - 1] = 1.0;
    }
    out
}

pub fn encode_block_b(day: &CalendarDay) -> [f64; BLOCK_B_WIDTH] {
    let mut out = [0.0; BLOCK_B_WIDTH];
    for (o, f) in out.iter_mut().zip(day.flags.to_array()) {
        *o = if f { 1.0 } else { 0.0 };
    }
    out
}

/// Event encoding parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingOptions {
    /// Assumed duration for events whose end time is unknown.
    pub default_event_minutes: i64,
}

impl Default for EncodingOptions {
    fn default() -> Self {
        EncodingOptions {
            default_event_minutes: 120,
        }
    }
}

/// End of the event's occupied interval; falls back to the default duration.
pub fn effective_end(event: &EventRecord, opts: &EncodingOptions) -> NaiveDateTime {
    event
        .end
        .unwrap_or(event.start + Duration::minutes(opts.default_event_minutes))
}

fn seconds_into(date: NaiveDate, t: NaiveDateTime) -> i64 {
    (t - date.and_hms_opt(0, 0, 0).expect("midnight exists")).num_seconds()
}

/// Quarter-hour slot containing `t` (slot 0 = 00:00–00:15).
pub fn slot_of(t: NaiveDateTime) -> usize {
    (seconds_into(t.date(), t) / SLOT_SECONDS) as usize
}

/// Last slot occupied by an interval ending at `end` (exclusive): the slot
/// containing the instant just before `end`.
pub fn last_slot_before(end: NaiveDateTime) -> (NaiveDate, usize) {
    let last = end - Duration::seconds(1);
    (last.date(), slot_of(last))
}

/// Slot counts contributed by one event to one date.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventFootprint {
    pub start: Option<usize>,
    pub end: Option<usize>,
    /// Half-open slot range `[first, last + 1)` of the clipped period.
    pub period: Option<(usize, usize)>,
}

impl EventFootprint {
    pub fn is_empty(&self) -> bool {
        self.start.is_none() && self.end.is_none() && self.period.is_none()
    }
}

/// Footprint of `event` on `date`, clipping overnight events to the day.
pub fn event_footprint(event: &EventRecord, date: NaiveDate, opts: &EncodingOptions) -> EventFootprint {
    let day_start = date.and_hms_opt(0, 0, 0).expect("midnight exists");
    let day_end = day_start + Duration::days(1);
    let eff_end = effective_end(event, opts);
    let mut fp = EventFootprint::default();
    if event.start.date() == date {
        fp.start = Some(slot_of(event.start));
    }
    if let Some(end) = event.end {
        let (end_date, slot) = last_slot_before(end);
        if end_date == date {
            fp.end = Some(slot);
        }
    }
    let a = event.start.max(day_start);
    let b = eff_end.min(day_end);
    if a < b {
        let first = (seconds_into(date, a) / SLOT_SECONDS) as usize;
        let last_excl = ((seconds_into(date, b) + SLOT_SECONDS - 1) / SLOT_SECONDS) as usize;
        fp.period = Some((first, last_excl.min(SLOTS_PER_DAY)));
    }
    fp
}

/// Dates an event touches (start date through the date of its last instant).
pub fn event_dates(event: &EventRecord, opts: &EncodingOptions) -> Vec<NaiveDate> {
    let end = effective_end(event, opts) - Duration::seconds(1);
    let last = end.date().max(event.start.date());
    event.start.date().iter_days().take_while(|d| *d <= last).collect()
}

fn add_footprint(out: &mut [f64], base: usize, fp: &EventFootprint) {
    let facet = |f: Facet| base + f.index() * SLOTS_PER_DAY;
    if let Some(s) = fp.start {
        out[facet(Facet::Start) + s] += 1.0;
    }
    if let Some(s) = fp.end {
        out[facet(Facet::End) + s] += 1.0;
    }
    if let Some((a, b)) = fp.period {
        for s in a..b {
            out[facet(Facet::Period) + s] += 1.0;
        }
    }
}

fn station_index(manifest: &NetworkManifest, id: &str) -> Result<usize> {
    manifest
        .event_station_index(id)
        .ok_or_else(|| FeatureError::NotEventStation(id.to_string()))
}

/// Start/end/period counts per event-hosting station for one date.
pub fn encode_block_c(
    events: &[EventRecord],
    date: NaiveDate,
    manifest: &NetworkManifest,
    opts: &EncodingOptions,
) -> Result<Vec<f64>> {
    let e = manifest.event_stations().len();
    let mut out = vec![0.0; SLOTS_PER_DAY * FACETS * e];
    for ev in events {
        let k = station_index(manifest, &ev.station_id)?;
        let fp = event_footprint(ev, date, opts);
        add_footprint(&mut out, k * FACETS * SLOTS_PER_DAY, &fp);
    }
    Ok(out)
}

/// Block C broken out by category: layout station-major, then category,
/// then facet, then slot.
pub fn encode_block_d(
    events: &[EventRecord],
    date: NaiveDate,
    manifest: &NetworkManifest,
    opts: &EncodingOptions,
) -> Result<Vec<f64>> {
    let e = manifest.event_stations().len();
    let k_cat = manifest.categories.len();
    let mut out = vec![0.0; SLOTS_PER_DAY * FACETS * e * k_cat];
    for ev in events {
        let k = station_index(manifest, &ev.station_id)?;
        let c = manifest
            .category_index(&ev.category)
            .ok_or_else(|| FeatureError::UnknownCategory(ev.category.clone()))?;
        let fp = event_footprint(ev, date, opts);
        add_footprint(&mut out, (k * k_cat + c) * FACETS * SLOTS_PER_DAY, &fp);
    }
    Ok(out)
}

/// Column labels of a feature set, in layout order.
pub fn column_labels(set_id: FeatureSetId, manifest: &NetworkManifest) -> Vec<ColumnLabel> {
    let mut labels: Vec<ColumnLabel> = (2..=12).map(ColumnLabel::Month).collect();
    labels.extend((1..=6).map(ColumnLabel::DayOfWeek));
    if set_id.has_calendar_flags() {
        labels.extend((0..BLOCK_B_WIDTH).map(ColumnLabel::Flag));
    }
    let stations = manifest.event_stations();
    if set_id.has_events() {
        for st in &stations {
            for facet in Facet::ALL {
                for slot in 0..SLOTS_PER_DAY {
                    labels.push(ColumnLabel::Event {
                        station: st.to_string(),
                        facet,
                        slot,
                    });
                }
            }
        }
    }
    if set_id.has_categories() {
        for st in &stations {
            for cat in &manifest.categories {
                for facet in Facet::ALL {
                    for slot in 0..SLOTS_PER_DAY {
                        labels.push(ColumnLabel::Category {
                            station: st.to_string(),
                            category: cat.clone(),
                            facet,
                            slot,
                        });
                    }
                }
            }
        }
    }
    labels
}

/// Row-compressed real matrix with labelled columns and one row per date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub set_id: Option<FeatureSetId>,
    pub dates: Vec<NaiveDate>,
    pub column_names: Vec<String>,
    width: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl FeatureMatrix {
    /// Builds from dense rows; zeros are not stored.
    pub fn from_dense(x: &Array2<f64>, column_names: Option<Vec<String>>) -> Self {
        let (n, w) = x.dim();
        let names = column_names.unwrap_or_else(|| (0..w).map(|j| format!("x{j}")).collect());
        assert_eq!(names.len(), w, "one name per column");
        let mut m = FeatureMatrix::empty(None, names);
        for i in 0..n {
            m.push_row(x.row(i).iter().copied().enumerate(), None);
        }
        m
    }

    fn empty(set_id: Option<FeatureSetId>, column_names: Vec<String>) -> Self {
        FeatureMatrix {
            set_id,
            dates: Vec::new(),
            width: column_names.len(),
            column_names,
            indptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    fn push_row(&mut self, entries: impl Iterator<Item = (usize, f64)>, date: Option<NaiveDate>) {
        for (j, v) in entries {
            debug_assert!(j < self.width);
            if v != 0.0 {
                self.indices.push(j as u32);
                self.values.push(v);
            }
        }
        self.indptr.push(self.indices.len());
        if let Some(d) = date {
            self.dates.push(d);
        }
    }

    pub fn n_rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices (ascending) and values of the non-zeros in row `i`.
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (idx, vals) = self.row(i);
        match idx.binary_search(&(j as u32)) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut x = Array2::zeros((self.n_rows(), self.width));
        for i in 0..self.n_rows() {
            let (idx, vals) = self.row(i);
            for (&j, &v) in idx.iter().zip(vals) {
                x[[i, j as usize]] = v;
            }
        }
        x
    }

    /// Matrix restricted to the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut m = FeatureMatrix::empty(self.set_id, self.column_names.clone());
        for &i in rows {
            let (idx, vals) = self.row(i);
            m.push_row(idx.iter().map(|&j| j as usize).zip(vals.iter().copied()), None);
            if !self.dates.is_empty() {
                m.dates.push(self.dates[i]);
            }
        }
        m
    }

    /// Rows whose date lies in `range`.
    pub fn rows_in(&self, range: &DateRange) -> Vec<usize> {
        self.dates
            .iter()
            .enumerate()
            .filter(|(_, d)| range.contains(**d))
            .map(|(i, _)| i)
            .collect()
    }

    /// Structured labels of all columns.
    pub fn labels(&self) -> std::result::Result<Vec<ColumnLabel>, String> {
        self.column_names.iter().map(|n| n.parse()).collect()
    }
}

/// Identity of a cached feature matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheKey {
    pub set_id: FeatureSetId,
    pub manifest_digest: String,
    pub range: DateRange,
    pub options: EncodingOptions,
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    version: u32,
    key: CacheKey,
    matrix: FeatureMatrix,
}

const CACHE_VERSION: u32 = 1;

pub fn save_cache(path: &Path, key: &CacheKey, matrix: &FeatureMatrix) -> Result<()> {
    let file = CacheFile {
        version: CACHE_VERSION,
        key: key.clone(),
        matrix: matrix.clone(),
    };
    let bytes = rmp_serde::to_vec_named(&file).map_err(|e| FeatureError::Cache(e.to_string()))?;
    crate::io::write_atomic(path, &bytes).map_err(|e| FeatureError::Cache(format!("{}: {e}", path.display())))
}

/// Loads a cached matrix, returning `None` when the file's key differs.
pub fn load_cache(path: &Path, key: &CacheKey) -> Result<Option<FeatureMatrix>> {
    let (file_key, m) = read_cache(path)?;
    Ok(if &file_key == key { Some(m) } else { None })
}

pub fn read_cache(path: &Path) -> Result<(CacheKey, FeatureMatrix)> {
    let bytes = std::fs::read(path).map_err(|e| FeatureError::Cache(format!("{}: {e}", path.display())))?;
    let file: CacheFile = rmp_serde::from_slice(&bytes).map_err(|e| FeatureError::Cache(e.to_string()))?;
    if file.version != CACHE_VERSION {
        return Err(FeatureError::Cache(format!("unsupported cache version {}", file.version)));
    }
    Ok((file.key, file.matrix))
}

/// Builds the design matrix of `set_id` with one row per date in `range`.
pub fn build_design_matrix(
    calendar: &Calendar,
    events: &[EventRecord],
    manifest: &NetworkManifest,
    range: &DateRange,
    set_id: FeatureSetId,
    opts: &EncodingOptions,
) -> Result<FeatureMatrix> {
    if range.is_empty() {
        return Err(FeatureError::EmptyRange);
    }
    let mut by_date: BTreeMap<NaiveDate, Vec<EventRecord>> = BTreeMap::new();
    if set_id.has_events() {
        for ev in events {
            station_index(manifest, &ev.station_id)?;
            if set_id.has_categories() && manifest.category_index(&ev.category).is_none() {
                return Err(FeatureError::UnknownCategory(ev.category.clone()));
            }
            for d in event_dates(ev, opts) {
                if range.contains(d) {
                    by_date.entry(d).or_default().push(ev.clone());
                }
            }
        }
    }
    let names = column_labels(set_id, manifest).iter().map(|l| l.to_string()).collect();
    let mut m = FeatureMatrix::empty(Some(set_id), names);
    let c_offset = BLOCK_A_WIDTH + BLOCK_B_WIDTH;
    let c_width = FeatureSetId::D3.width(manifest.event_stations().len(), 0) - c_offset;
    const NO_EVENTS: &[EventRecord] = &[];
    for date in range.iter() {
        let day = calendar.get(date).ok_or(FeatureError::MissingCalendarDate(date))?;
        let mut row: Vec<(usize, f64)> = encode_block_a(date).into_iter().enumerate().collect();
        if set_id.has_calendar_flags() {
            row.extend(
                encode_block_b(day)
                    .into_iter()
                    .enumerate()
                    .map(|(j, v)| (BLOCK_A_WIDTH + j, v)),
            );
        }
        let day_events = by_date.get(&date).map(|v| v.as_slice()).unwrap_or(NO_EVENTS);
        if set_id.has_events() && !day_events.is_empty() {
            let c = encode_block_c(day_events, date, manifest, opts)?;
            row.extend(c.into_iter().enumerate().map(|(j, v)| (c_offset + j, v)));
            if set_id.has_categories() {
                let dblk = encode_block_d(day_events, date, manifest, opts)?;
                row.extend(dblk.into_iter().enumerate().map(|(j, v)| (c_offset + c_width + j, v)));
            }
        }
        m.push_row(row.into_iter(), Some(date));
    }
    Ok(m)
}

/// Weekday of a row in block-A encoding (ignores the rest of the row).
pub fn weekday_from_block_a(a: &[f64]) -> Weekday {
    let pos = a[11..17].iter().position(|&v| v != 0.0).map(|p| p + 1).unwrap_or(0);
    Weekday::try_from(pos as u8).expect("0..7 is a weekday")
}
