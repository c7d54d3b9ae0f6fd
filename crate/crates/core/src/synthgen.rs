//! Deterministic synthetic network with planted calendar, event and trend
//! structure, written in the same file formats that ingestion reads.
//!
//! The mean entry count of a (station, date, slot) is
//!
//! ```text
//! profile[slot] × dow × month × Π flag multipliers × growth^(year − first year)
//! ```
//!
//! split across fare classes by `base_shares`, plus a post-event surge that
//! starts in the slot containing the event end and is split by
//! `event_shares`. Counts are Poisson draws around the class means, or the
//! rounded means when noise is off.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, NaiveTime, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{
    aggregate_daily, Calendar, CalendarDay, DateRange, DayFlags, DemandSet, EventRecord, FareClass, NetworkManifest,
    TicketingRecord, CALENDAR_HEADER, DATE_FORMAT, EVENTS_HEADER, SLOTS_PER_DAY, TICKETING_HEADER, TIMESTAMP_FORMAT,
};
use crate::models::params::derive_seed;

const EVENT_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error("writing {path}: {message}")]
    Write { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseLaw {
    /// Counts are the rounded means.
    None,
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_stations: usize,
    pub n_event_stations: usize,
    pub n_categories: usize,
    pub range: DateRange,
    /// One 96-slot mean profile per station.
    pub profiles: Vec<Vec<f64>>,
    /// Monday first.
    pub dow_multipliers: [f64; 7],
    /// January first.
    pub month_multipliers: [f64; 12],
    /// In calendar flag order; `flag_multipliers[0]` is the holiday multiplier.
    pub flag_multipliers: [f64; 7],
    /// SMP, RMP, BT, OP shares of regular demand.
    pub base_shares: [f64; 4],
    /// SMP, RMP, BT, OP shares of post-event surges.
    pub event_shares: [f64; 4],
    /// Expected events per event-hosting station per week.
    pub events_per_week: f64,
    /// Passengers added to the slots following an event end; first entry
    /// lands in the slot containing the end.
    pub spike: Vec<f64>,
    /// Fraction of events written without an end time; their true duration
    /// is `default_event_minutes`.
    pub missing_end_fraction: f64,
    pub default_event_minutes: i64,
    /// Per-station yearly growth multiplier.
    pub yearly_growth: Vec<f64>,
    pub noise: NoiseLaw,
    pub seed: u64,
}

/// Two-peak weekday profile peaking around 08:00 and 17:00.
pub fn commuter_profile(scale: f64) -> Vec<f64> {
    (0..SLOTS_PER_DAY)
        .map(|s| {
            let h = s as f64 / 4.0;
            let bump = |c: f64, w: f64| (-(h - c) * (h - c) / (2.0 * w * w)).exp();
            let open = if (5.0..=24.0).contains(&h) || h < 1.0 { 1.0 } else { 0.05 };
            scale * open * (0.15 + bump(8.0, 1.2) + 0.8 * bump(17.0, 1.5) + 0.2 * bump(12.5, 2.0))
        })
        .collect()
}

impl SynthConfig {
    /// Config with commuter-like profiles and documented defaults.
    pub fn new(n_stations: usize, n_event_stations: usize, n_categories: usize, range: DateRange, seed: u64) -> Self {
        SynthConfig {
            n_stations,
            n_event_stations,
            n_categories,
            range,
            profiles: (0..n_stations).map(|s| commuter_profile(120.0 + 40.0 * (s % 5) as f64)).collect(),
            dow_multipliers: [1.0, 1.02, 1.04, 1.03, 0.98, 0.55, 0.45],
            month_multipliers: [0.9, 0.92, 0.96, 1.0, 1.0, 0.95, 0.82, 0.85, 1.05, 1.04, 1.02, 0.93],
            flag_multipliers: [0.5, 0.6, 0.65, 0.8, 0.95, 0.9, 1.0],
            base_shares: [0.4, 0.2, 0.15, 0.25],
            event_shares: [0.0, 0.0, 0.2, 0.8],
            events_per_week: 0.5,
            spike: vec![100.0; 4],
            missing_end_fraction: 0.1,
            default_event_minutes: 120,
            yearly_growth: vec![1.0; n_stations],
            noise: NoiseLaw::Poisson,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.n_event_stations > self.n_stations {
            return bad("more event stations than stations".into());
        }
        if self.n_event_stations > 0 && self.n_categories == 0 {
            return bad("event stations need at least one category".into());
        }
        if self.range.is_empty() {
            return bad(format!("empty date range {}", self.range));
        }
        if self.profiles.len() != self.n_stations || self.profiles.iter().any(|p| p.len() != SLOTS_PER_DAY) {
            return bad(format!("need {} profiles of {SLOTS_PER_DAY} slots", self.n_stations));
        }
        if self.yearly_growth.len() != self.n_stations {
            return bad(format!("need {} yearly growth multipliers", self.n_stations));
        }
        for shares in [&self.base_shares, &self.event_shares] {
            if (shares.iter().sum::<f64>() - 1.0).abs() > 1e-9 || shares.iter().any(|s| *s < 0.0) {
                return bad(format!("fare-class shares {shares:?} must be >= 0 and sum to 1"));
            }
        }
        let positive = self
            .dow_multipliers
            .iter()
            .chain(&self.month_multipliers)
            .chain(&self.flag_multipliers)
            .chain(&self.yearly_growth)
            .all(|m| *m > 0.0 && m.is_finite());
        if !positive {
            return bad("all multipliers must be > 0".into());
        }
        if self.profiles.iter().flatten().chain(&self.spike).any(|v| !(*v >= 0.0)) {
            return bad("profiles and spike must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.missing_end_fraction) || !(self.events_per_week >= 0.0) {
            return bad("event rate must be >= 0 and missing-end fraction in [0, 1]".into());
        }
        if self.default_event_minutes <= 0 {
            return bad("default event duration must be positive".into());
        }
        Ok(())
    }

    pub fn manifest(&self) -> NetworkManifest {
        NetworkManifest::generated(
            self.n_stations,
            self.n_event_stations,
            (0..self.n_categories).map(category_name).collect(),
        )
    }
}

pub fn category_name(i: usize) -> String {
    const NAMES: [&str; 10] = [
        "concert", "hockey", "festival", "theatre", "soccer", "conference", "opera", "comedy", "circus", "fair",
    ];
    match NAMES.get(i) {
        Some(n) => n.to_string(),
        None => format!("category{i}"),
    }
}

/// Fixed-date and rule-based holidays of a year.
fn is_holiday(d: NaiveDate) -> bool {
    let (m, day) = (d.month(), d.day());
    let nth_weekday = |wd: Weekday, n: u32| d.weekday() == wd && (day - 1) / 7 + 1 == n;
    matches!((m, day), (1, 1) | (6, 24) | (7, 1) | (12, 25) | (12, 26))
        || (m == 9 && nth_weekday(Weekday::Mon, 1))
        || (m == 10 && nth_weekday(Weekday::Mon, 2))
        || (m == 5 && d.weekday() == Weekday::Mon && (18..=24).contains(&day))
}

pub fn calendar_flags(d: NaiveDate) -> DayFlags {
    let (m, day) = (d.month(), d.day());
    DayFlags {
        holiday: is_holiday(d),
        dec24: (m, day) == (12, 24),
        dec31: (m, day) == (12, 31),
        christmas_school_holiday: (m == 12 && day >= 22) || (m == 1 && day <= 4),
        summer_uni_1: m == 5 || m == 6,
        summer_uni_2: m == 7 || m == 8,
        renovation: false,
    }
}

/// Exact per-class means keyed by station, date and class.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub means: BTreeMap<String, BTreeMap<NaiveDate, BTreeMap<FareClass, Vec<f64>>>>,
}

impl GroundTruth {
    pub fn get(&self, station: &str, date: NaiveDate, class: FareClass) -> Option<&[f64]> {
        self.means.get(station)?.get(&date)?.get(&class).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub manifest: NetworkManifest,
    pub calendar: Calendar,
    /// As written to the events file (some ends may be missing).
    pub events: Vec<EventRecord>,
    pub ticketing: Vec<TicketingRecord>,
    pub truth: GroundTruth,
}

impl SynthData {
    pub fn demand(&self) -> DemandSet {
        aggregate_daily(&self.ticketing, &self.manifest.station_ids(), self.calendar_range())
    }

    pub fn calendar_range(&self) -> DateRange {
        let first = self.calendar.days().next().expect("non-empty calendar").date;
        let last = self.calendar.days().last().expect("non-empty calendar").date;
        DateRange::new(first, last)
    }
}

/// Planted events with their true end, before the end may be blanked.
fn plant_events(cfg: &SynthConfig, manifest: &NetworkManifest) -> Vec<(EventRecord, NaiveDateTime)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, EVENT_STREAM));
    let p_day = (cfg.events_per_week / 7.0).min(1.0);
    let mut out = Vec::new();
    for date in cfg.range.iter() {
        for station in manifest.event_stations() {
            if !(rng.gen::<f64>() < p_day) {
                continue;
            }
            let category = rng.gen_range(0..cfg.n_categories);
            let missing_end = rng.gen::<f64>() < cfg.missing_end_fraction;
            // Ends fall on quarter hours between 21:00 and 23:00.
            let end_slot = rng.gen_range(84..=92u32);
            let minutes = if missing_end {
                cfg.default_event_minutes
            } else {
                90 + 30 * (category % 4) as i64
            };
            let end = date.and_time(NaiveTime::from_hms_opt(end_slot / 4, (end_slot % 4) * 15, 0).unwrap());
            let start = end - Duration::minutes(minutes);
            out.push((
                EventRecord {
                    station_id: station.to_string(),
                    start,
                    end: (!missing_end).then_some(end),
                    category: category_name(category),
                },
                end,
            ));
        }
    }
    out
}

fn draw(mean: f64, noise: NoiseLaw, rng: &mut ChaCha8Rng) -> u64 {
    match noise {
        NoiseLaw::None => mean.round() as u64,
        NoiseLaw::Poisson if mean > 0.0 => Poisson::new(mean).expect("positive mean").sample(rng) as u64,
        NoiseLaw::Poisson => 0,
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let manifest = cfg.manifest();
    let calendar = Calendar::from_days(cfg.range.iter().map(|date| CalendarDay {
        date,
        flags: calendar_flags(date),
    }))
    .map_err(SynthError::Config)?;

    let planted = plant_events(cfg, &manifest);
    let mut surges: BTreeMap<(String, NaiveDate), Vec<f64>> = BTreeMap::new();
    for (ev, end) in &planted {
        let slot0 = crate::features::slot_of(*end);
        let surge = surges
            .entry((ev.station_id.clone(), end.date()))
            .or_insert_with(|| vec![0.0; SLOTS_PER_DAY]);
        for (k, mass) in cfg.spike.iter().enumerate() {
            if let Some(v) = surge.get_mut(slot0 + k) {
                *v += mass;
            }
        }
    }

    let first_year = cfg.range.start.year();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, NOISE_STREAM));
    let mut truth = GroundTruth::default();
    let mut ticketing = Vec::new();
    for (s, station) in manifest.station_ids().into_iter().enumerate() {
        let per_date = truth.means.entry(station.clone()).or_default();
        for date in cfg.range.iter() {
            let flags = calendar_flags(date).to_array();
            let mut level = cfg.dow_multipliers[date.weekday().num_days_from_monday() as usize]
                * cfg.month_multipliers[date.month0() as usize]
                * cfg.yearly_growth[s].powi(date.year() - first_year);
            for (on, m) in flags.iter().zip(&cfg.flag_multipliers) {
                if *on {
                    level *= m;
                }
            }
            let surge = surges.get(&(station.clone(), date));
            let mut all = vec![0.0; SLOTS_PER_DAY];
            let per_class = per_date.entry(date).or_default();
            for (c, class) in FareClass::CONCRETE.into_iter().enumerate() {
                let means: Vec<f64> = (0..SLOTS_PER_DAY)
                    .map(|t| {
                        cfg.base_shares[c] * cfg.profiles[s][t] * level
                            + surge.map_or(0.0, |v| cfg.event_shares[c] * v[t])
                    })
                    .collect();
                for (t, m) in means.iter().enumerate() {
                    all[t] += m;
                    let count = draw(*m, cfg.noise, &mut rng);
                    if count > 0 {
                        ticketing.push(TicketingRecord {
                            station_id: station.clone(),
                            date,
                            slot: t,
                            fare_class: class,
                            count,
                        });
                    }
                }
                per_class.insert(class, means);
            }
            per_class.insert(FareClass::All, all);
        }
    }

    Ok(SynthData {
        manifest,
        calendar,
        events: planted.into_iter().map(|(e, _)| e).collect(),
        ticketing,
        truth,
    })
}

fn csv_bytes(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn ticketing_csv(records: &[TicketingRecord]) -> Vec<u8> {
    csv_bytes(
        &TICKETING_HEADER,
        records.iter().map(|r| {
            vec![
                r.station_id.clone(),
                r.date.format(DATE_FORMAT).to_string(),
                r.slot.to_string(),
                r.fare_class.to_string(),
                r.count.to_string(),
            ]
        }),
    )
}

pub fn events_csv(events: &[EventRecord]) -> Vec<u8> {
    csv_bytes(
        &EVENTS_HEADER,
        events.iter().map(|e| {
            vec![
                e.station_id.clone(),
                e.start.format(TIMESTAMP_FORMAT).to_string(),
                e.end.map(|t| t.format(TIMESTAMP_FORMAT).to_string()).unwrap_or_default(),
                e.category.clone(),
            ]
        }),
    )
}

pub fn calendar_csv(calendar: &Calendar) -> Vec<u8> {
    csv_bytes(
        &CALENDAR_HEADER,
        calendar.days().map(|d| {
            std::iter::once(d.date.format(DATE_FORMAT).to_string())
                .chain(d.flags.to_array().iter().map(|f| u8::from(*f).to_string()))
                .collect()
        }),
    )
}

pub const TICKETING_FILE: &str = "ticketing.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const CALENDAR_FILE: &str = "calendar.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const FILES: [&str; 5] = [TICKETING_FILE, EVENTS_FILE, CALENDAR_FILE, MANIFEST_FILE, GROUND_TRUTH_FILE];

/// Writes the five data files into `dir`.
pub fn write_files(data: &SynthData, dir: &Path) -> Result<()> {
    let files: [(&str, Vec<u8>); 5] = [
        (TICKETING_FILE, ticketing_csv(&data.ticketing)),
        (EVENTS_FILE, events_csv(&data.events)),
        (CALENDAR_FILE, calendar_csv(&data.calendar)),
        (MANIFEST_FILE, pretty_json(&data.manifest)),
        (GROUND_TRUTH_FILE, pretty_json(&data.truth)),
    ];
    for (name, bytes) in files {
        let path = dir.join(name);
        crate::io::write_atomic(&path, &bytes).map_err(|e| SynthError::Write {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    }
    Ok(())
}

fn pretty_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("serializable");
    out.push(b'\n');
    out
}
