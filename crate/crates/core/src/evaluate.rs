//! Error metrics, year-over-year trend correction, and sliced reporting.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{event_dates, EncodingOptions};
use crate::ingest::{DateRange, DemandSet, EventRecord, FareClass};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("observation and prediction shapes differ ({0} vs {1})")]
    ShapeMismatch(usize, usize),
    #[error("no points")]
    NoPoints,
    #[error("threshold excludes all points (v = {0})")]
    ThresholdExcludesAll(f64),
    #[error("MAPE threshold must be >= 0, got {0}")]
    NegativeThreshold(f64),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("year {0} has no demand data")]
    YearMissing(i32),
    #[error("zero mean demand in year {year} for station {station}, class {class}")]
    ZeroDenominator { station: String, class: FareClass, year: i32 },
    #[error("no trend factor for station {0}, class {1}")]
    MissingFactor(String, FareClass),
}

pub type Result<T> = std::result::Result<T, EvalError>;

fn check(y: &[f64], yhat: &[f64]) -> std::result::Result<(), MetricError> {
    if y.len() != yhat.len() {
        return Err(MetricError::ShapeMismatch(y.len(), yhat.len()));
    }
    if y.is_empty() {
        return Err(MetricError::NoPoints);
    }
    Ok(())
}

/// Root mean squared error pooled over all points.
pub fn rmse(y: &[f64], yhat: &[f64]) -> std::result::Result<f64, MetricError> {
    check(y, yhat)?;
    let sse: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / y.len() as f64).sqrt())
}

/// Mean absolute error pooled over all points.
pub fn mae(y: &[f64], yhat: &[f64]) -> std::result::Result<f64, MetricError> {
    check(y, yhat)?;
    let sae: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum();
    Ok(sae / y.len() as f64)
}

/// Mean absolute percentage error over points whose observation exceeds `v`,
/// averaged over the retained points, in percent.
pub fn mape_at(y: &[f64], yhat: &[f64], v: f64) -> std::result::Result<f64, MetricError> {
    if !(v >= 0.0) {
        return Err(MetricError::NegativeThreshold(v));
    }
    if y.len() != yhat.len() {
        return Err(MetricError::ShapeMismatch(y.len(), yhat.len()));
    }
    let (sum, count) = y
        .iter()
        .zip(yhat)
        .filter(|(a, _)| **a > v)
        .fold((0.0, 0usize), |(s, c), (a, b)| (s + ((a - b) / a).abs(), c + 1));
    if count == 0 {
        return Err(MetricError::ThresholdExcludesAll(v));
    }
    Ok(100.0 * sum / count as f64)
}

/// Default headline MAPE threshold.
pub const DEFAULT_MAPE_THRESHOLD: f64 = 150.0;

/// Thresholds 0, 5, .., 300.
pub fn sweep_thresholds() -> Vec<f64> {
    (0..=60).map(|i| i as f64 * 5.0).collect()
}

/// Per (station, fare class) multiplicative year-over-year factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendTable {
    pub year_a: i32,
    pub year_b: i32,
    factors: BTreeMap<String, BTreeMap<FareClass, f64>>,
}

impl TrendTable {
    pub fn factor(&self, station: &str, class: FareClass) -> Option<f64> {
        self.factors.get(station).and_then(|m| m.get(&class)).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, FareClass, f64)> {
        self.factors
            .iter()
            .flat_map(|(s, m)| m.iter().map(move |(c, f)| (s.as_str(), *c, *f)))
    }
}

fn year_mean(demand: &DemandSet, station: &str, class: FareClass, year: i32) -> (f64, usize) {
    let mut sum = 0.0;
    let mut slots = 0usize;
    for d in demand.range.iter().filter(|d| d.year() == year) {
        if let Some(c) = demand.get(station, d, class) {
            sum += c.iter().sum::<u64>() as f64;
            slots += c.len();
        }
    }
    (if slots > 0 { sum / slots as f64 } else { 0.0 }, slots)
}

/// Ratio of mean slot counts, `year_b` over `year_a`, per station and class.
/// Stations in `excluded` get factor 1.
pub fn compute_trend_table(
    demand: &DemandSet,
    year_a: i32,
    year_b: i32,
    excluded: &BTreeSet<String>,
) -> Result<TrendTable> {
    for y in [year_a, year_b] {
        if !demand.range.iter().any(|d| d.year() == y) {
            return Err(EvalError::YearMissing(y));
        }
    }
    let mut factors: BTreeMap<String, BTreeMap<FareClass, f64>> = BTreeMap::new();
    for station in &demand.stations {
        let per_class = factors.entry(station.clone()).or_default();
        for &class in &demand.classes {
            if excluded.contains(station) {
                per_class.insert(class, 1.0);
                continue;
            }
            let (mean_a, _) = year_mean(demand, station, class, year_a);
            let (mean_b, _) = year_mean(demand, station, class, year_b);
            if mean_a == 0.0 || mean_b == 0.0 {
                return Err(EvalError::ZeroDenominator {
                    station: station.clone(),
                    class,
                    year: if mean_a == 0.0 { year_a } else { year_b },
                });
            }
            per_class.insert(class, mean_b / mean_a);
        }
    }
    Ok(TrendTable {
        year_a,
        year_b,
        factors,
    })
}

/// Multiplies predictions by the (station, class) factor.
pub fn apply_trend(yhat: &Array2<f64>, table: &TrendTable, station: &str, class: FareClass) -> Result<Array2<f64>> {
    let f = table
        .factor(station, class)
        .ok_or_else(|| EvalError::MissingFactor(station.to_string(), class))?;
    Ok(yhat.mapv(|v| (v * f).max(0.0)))
}

/// (station, date) pairs touched by at least one event.
pub fn event_pair_filter(
    events: &[EventRecord],
    range: &DateRange,
    opts: &EncodingOptions,
) -> BTreeSet<(String, NaiveDate)> {
    events
        .iter()
        .flat_map(|e| {
            event_dates(e, opts)
                .into_iter()
                .filter(|d| range.contains(*d))
                .map(move |d| (e.station_id.clone(), d))
        })
        .collect()
}

/// Observations and predictions of one station and class over a set of days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationForecast {
    pub station_id: String,
    pub fare_class: FareClass,
    pub dates: Vec<NaiveDate>,
    /// days × slots
    pub observed: Array2<f64>,
    pub predicted: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PeriodFilter {
    All,
    Event,
    NonEvent,
}

impl fmt::Display for PeriodFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PeriodFilter::All => "all",
            PeriodFilter::Event => "event",
            PeriodFilter::NonEvent => "non-event",
        })
    }
}

impl FromStr for PeriodFilter {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "all" => Ok(PeriodFilter::All),
            "event" => Ok(PeriodFilter::Event),
            "non-event" | "nonevent" => Ok(PeriodFilter::NonEvent),
            other => Err(format!("unknown period `{other}` (expected all, event, non-event)")),
        }
    }
}

/// Which stations a report pools.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StationSelector {
    All,
    EventHosting,
    Station(String),
}

impl fmt::Display for StationSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StationSelector::All => f.write_str("all"),
            StationSelector::EventHosting => f.write_str("event-hosting"),
            StationSelector::Station(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scope {
    pub split: String,
    pub stations: StationSelector,
    pub fare_class: FareClass,
    pub period: PeriodFilter,
    pub feature_set: String,
    pub family: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub scope: Scope,
    pub rmse: f64,
    pub mae: f64,
    /// (threshold, MAPE in percent); `None` when the threshold filters out
    /// every point of a non-empty slice.
    pub mape_at: Vec<(f64, Option<f64>)>,
    pub n_points: usize,
}

/// Shared context for a family of report slices.
#[derive(Debug, Clone)]
pub struct SliceContext<'a> {
    pub split: String,
    pub feature_set: String,
    pub family: String,
    pub event_pairs: &'a BTreeSet<(String, NaiveDate)>,
    pub event_stations: &'a BTreeSet<String>,
    pub thresholds: Vec<f64>,
}

impl SliceContext<'_> {
    fn station_matches(&self, sel: &StationSelector, station: &str) -> bool {
        match sel {
            StationSelector::All => true,
            StationSelector::EventHosting => self.event_stations.contains(station),
            StationSelector::Station(s) => s == station,
        }
    }

    fn period_matches(&self, period: PeriodFilter, station: &str, date: NaiveDate) -> bool {
        match period {
            PeriodFilter::All => true,
            PeriodFilter::Event => self.event_pairs.contains(&(station.to_string(), date)),
            PeriodFilter::NonEvent => !self.event_pairs.contains(&(station.to_string(), date)),
        }
    }

    /// Flattened (observed, predicted) points of a slice.
    pub fn points(
        &self,
        forecasts: &[StationForecast],
        stations: &StationSelector,
        class: FareClass,
        period: PeriodFilter,
    ) -> (Vec<f64>, Vec<f64>) {
        let mut y = Vec::new();
        let mut yhat = Vec::new();
        for f in forecasts
            .iter()
            .filter(|f| f.fare_class == class && self.station_matches(stations, &f.station_id))
        {
            for (i, d) in f.dates.iter().enumerate() {
                if self.period_matches(period, &f.station_id, *d) {
                    y.extend(f.observed.row(i).iter());
                    yhat.extend(f.predicted.row(i).iter());
                }
            }
        }
        (y, yhat)
    }

    /// Report for one slice. An empty slice is an error.
    pub fn report(
        &self,
        forecasts: &[StationForecast],
        stations: StationSelector,
        class: FareClass,
        period: PeriodFilter,
    ) -> std::result::Result<EvaluationReport, MetricError> {
        let (y, yhat) = self.points(forecasts, &stations, class, period);
        if y.is_empty() {
            let v = self.thresholds.first().copied().unwrap_or(DEFAULT_MAPE_THRESHOLD);
            return Err(mape_at(&y, &yhat, v).expect_err("empty slice"));
        }
        let mut mapes = Vec::with_capacity(self.thresholds.len());
        for &v in &self.thresholds {
            mapes.push((
                v,
                match mape_at(&y, &yhat, v) {
                    Ok(m) => Some(m),
                    Err(MetricError::ThresholdExcludesAll(_)) => None,
                    Err(e) => return Err(e),
                },
            ));
        }
        Ok(EvaluationReport {
            scope: Scope {
                split: self.split.clone(),
                stations,
                fare_class: class,
                period,
                feature_set: self.feature_set.clone(),
                family: self.family.clone(),
            },
            rmse: rmse(&y, &yhat)?,
            mae: mae(&y, &yhat)?,
            mape_at: mapes,
            n_points: y.len(),
        })
    }

    /// MAPE as a function of the threshold over one slice.
    pub fn mape_sweep(
        &self,
        forecasts: &[StationForecast],
        stations: &StationSelector,
        class: FareClass,
        period: PeriodFilter,
        thresholds: &[f64],
    ) -> Vec<(f64, Option<f64>)> {
        let (y, yhat) = self.points(forecasts, stations, class, period);
        thresholds.iter().map(|&v| (v, mape_at(&y, &yhat, v).ok())).collect()
    }
}

/// Standard report family for every fare class present in `forecasts`:
/// global, event and non-event over event-hosting stations, and per station.
///
/// With `period = None` all slices are produced and empty event slices are
/// skipped; with `Some(p)` only slices of period `p` are produced and an
/// empty slice is an error.
pub fn evaluate_run(
    forecasts: &[StationForecast],
    ctx: &SliceContext<'_>,
    period: Option<PeriodFilter>,
) -> std::result::Result<Vec<EvaluationReport>, MetricError> {
    let classes: BTreeSet<FareClass> = forecasts.iter().map(|f| f.fare_class).collect();
    let stations: Vec<String> = {
        let mut seen = BTreeSet::new();
        forecasts
            .iter()
            .filter(|f| seen.insert(f.station_id.clone()))
            .map(|f| f.station_id.clone())
            .collect()
    };
    let mut out = Vec::new();
    for class in classes {
        let wanted = |p: PeriodFilter| period.map_or(true, |q| q == p);
        if wanted(PeriodFilter::All) {
            out.push(ctx.report(forecasts, StationSelector::All, class, PeriodFilter::All)?);
        }
        let has_event_stations = forecasts.iter().any(|f| ctx.event_stations.contains(&f.station_id));
        for p in [PeriodFilter::Event, PeriodFilter::NonEvent] {
            if !wanted(p) {
                continue;
            }
            match ctx.report(forecasts, StationSelector::EventHosting, class, p) {
                Ok(r) => out.push(r),
                Err(e) if period.is_some() => return Err(e),
                Err(_) => {}
            }
            if period.is_some() && !has_event_stations {
                return Err(MetricError::NoPoints);
            }
        }
        for s in &stations {
            let p = period.unwrap_or(PeriodFilter::All);
            match ctx.report(forecasts, StationSelector::Station(s.clone()), class, p) {
                Ok(r) => out.push(r),
                Err(e) if period.is_none() => return Err(e),
                Err(_) => {}
            }
        }
    }
    Ok(out)
}

/// CSV with one row per report.
pub fn reports_to_csv(reports: &[EvaluationReport]) -> String {
    let thresholds: Vec<f64> = reports
        .first()
        .map(|r| r.mape_at.iter().map(|(v, _)| *v).collect())
        .unwrap_or_default();
    let mut s = String::from("split,feature_set,family,fare_class,stations,period,n_points,rmse,mae");
    for v in &thresholds {
        s.push_str(&format!(",mape@{v}"));
    }
    s.push('\n');
    for r in reports {
        let sc = &r.scope;
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{:.6},{:.6}",
            sc.split, sc.feature_set, sc.family, sc.fare_class, sc.stations, sc.period, r.n_points, r.rmse, r.mae
        ));
        for (_, m) in &r.mape_at {
            match m {
                Some(m) => s.push_str(&format!(",{m:.6}")),
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    s
}

/// Reports nested as split → fare class → list.
pub fn reports_to_json(reports: &[EvaluationReport]) -> serde_json::Value {
    let mut nested: BTreeMap<String, BTreeMap<String, Vec<&EvaluationReport>>> = BTreeMap::new();
    for r in reports {
        nested
            .entry(r.scope.split.clone())
            .or_default()
            .entry(r.scope.fare_class.to_string())
            .or_default()
            .push(r);
    }
    serde_json::to_value(nested).expect("reports serialize")
}
