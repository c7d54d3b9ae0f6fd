//! Run settings: a TOML file overridden by command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use ridership::evaluate::{PeriodFilter, DEFAULT_MAPE_THRESHOLD};
use ridership::features::{EncodingOptions, FeatureSetId};
use ridership::ingest::{DateRange, FareClass};
use ridership::models::{HyperValue, ModelFamily};

use crate::Cli;

/// Keys accepted in the config file; every one is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub workdir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub features: Option<String>,
    pub model: Option<String>,
    pub fare_class: Option<Vec<String>>,
    pub stations: Option<Vec<String>>,
    pub train_range: Option<String>,
    pub test_range: Option<String>,
    pub default_event_duration: Option<i64>,
    pub grid: Option<PathBuf>,
    pub budget: Option<String>,
    pub mape_thresholds: Option<Vec<f64>>,
    pub period: Option<String>,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub trend: TrendConfig,
    #[serde(default)]
    pub params: BTreeMap<String, toml::Value>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub ticketing: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub calendar: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrendConfig {
    pub enabled: Option<bool>,
    pub exclude: Option<Vec<String>>,
    pub years: Option<[i32; 2]>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Fully resolved settings shared by all commands.
#[derive(Debug, Clone, Serialize)]
pub struct Settings {
    pub workdir: PathBuf,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub features: FeatureSetId,
    pub model: ModelFamily,
    pub fare_classes: Vec<FareClass>,
    pub stations: Option<Vec<String>>,
    pub train_range: DateRange,
    pub test_range: DateRange,
    pub encoding: EncodingOptions,
    pub grid: Option<PathBuf>,
    #[serde(with = "humantime_serde_opt")]
    pub budget: Option<Duration>,
    pub mape_thresholds: Vec<f64>,
    pub period: Option<PeriodFilter>,
    pub ticketing: PathBuf,
    pub events: PathBuf,
    pub calendar: PathBuf,
    pub manifest: PathBuf,
    pub trend: bool,
    pub trend_exclude: Vec<String>,
    pub trend_years: Option<[i32; 2]>,
    pub params: BTreeMap<String, HyperValue>,
}

mod humantime_serde_opt {
    use std::time::Duration;

    pub fn serialize<S: serde::Serializer>(d: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        match d {
            Some(d) => s.serialize_str(&humantime::format_duration(*d).to_string()),
            None => s.serialize_none(),
        }
    }
}

pub fn hyper_value(v: &toml::Value) -> Result<HyperValue> {
    Ok(match v {
        toml::Value::Boolean(b) => HyperValue::Bool(*b),
        toml::Value::Integer(i) => HyperValue::Int(*i),
        toml::Value::Float(f) => HyperValue::Float(*f),
        toml::Value::String(s) => HyperValue::Str(s.clone()),
        other => bail!("unsupported hyperparameter value `{other}`"),
    })
}

/// Parses `name=value`, reading the value as bool, integer, float or string.
pub fn parse_param(s: &str) -> Result<(String, HyperValue)> {
    let (name, value) = s.split_once('=').with_context(|| format!("expected NAME=VALUE, got `{s}`"))?;
    let value = value.trim();
    let v = if let Ok(b) = value.parse::<bool>() {
        HyperValue::Bool(b)
    } else if let Ok(i) = value.parse::<i64>() {
        HyperValue::Int(i)
    } else if let Ok(f) = value.parse::<f64>() {
        HyperValue::Float(f)
    } else {
        HyperValue::Str(value.to_string())
    };
    Ok((name.trim().to_string(), v))
}

fn parse_range(s: &str, what: &str) -> Result<DateRange> {
    let r: DateRange = s.parse().map_err(|e: String| anyhow::anyhow!("{what}: {e}"))?;
    if r.is_empty() {
        bail!("{what} {r} is empty");
    }
    Ok(r)
}

impl Settings {
    pub fn resolve(cli: &Cli) -> Result<Settings> {
        let file = match &cli.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let workdir = cli.workdir.clone().or(file.workdir).unwrap_or_else(|| PathBuf::from("work"));
        let data = workdir.join("data");
        let features = cli
            .features
            .clone()
            .or(file.features)
            .unwrap_or_else(|| "D4".into())
            .parse::<FeatureSetId>()
            .map_err(anyhow::Error::msg)?;
        let model = cli
            .model
            .clone()
            .or(file.model)
            .unwrap_or_else(|| "rf".into())
            .parse::<ModelFamily>()
            .map_err(anyhow::Error::msg)?;
        let fare_classes = match (&cli.fare_class, file.fare_class) {
            (Some(c), _) if !c.is_empty() => c.clone(),
            (_, Some(c)) => c,
            _ => vec!["ALL".into()],
        }
        .iter()
        .map(|c| c.parse::<FareClass>().map_err(anyhow::Error::msg))
        .collect::<Result<Vec<_>>>()?;
        let train_range = parse_range(
            cli.train_range.as_deref().or(file.train_range.as_deref()).unwrap_or("2015-01-01..2016-12-31"),
            "train range",
        )?;
        let test_range = parse_range(
            cli.test_range.as_deref().or(file.test_range.as_deref()).unwrap_or("2017-01-01..2017-12-31"),
            "test range",
        )?;
        if train_range.overlaps(&test_range) {
            bail!("config violation: train range {train_range} and test range {test_range} overlap");
        }
        let minutes = cli.default_event_duration.or(file.default_event_duration).unwrap_or(120);
        if minutes <= 0 {
            bail!("config violation: default event duration must be positive, got {minutes}");
        }
        let budget = match cli.budget.as_deref().or(file.budget.as_deref()) {
            None | Some("none") | Some("unlimited") => None,
            Some(s) => Some(humantime::parse_duration(s).with_context(|| format!("budget `{s}`"))?),
        };
        let mape_thresholds = if !cli.mape_threshold.is_empty() {
            cli.mape_threshold.clone()
        } else {
            file.mape_thresholds.unwrap_or_else(|| vec![DEFAULT_MAPE_THRESHOLD])
        };
        if let Some(v) = mape_thresholds.iter().find(|v| !(**v >= 0.0)) {
            bail!("config violation: MAPE threshold must be >= 0, got {v}");
        }
        let period = cli
            .period
            .clone()
            .or(file.period)
            .map(|p| p.parse::<PeriodFilter>().map_err(anyhow::Error::msg))
            .transpose()?;
        let trend = if cli.trend {
            true
        } else if cli.no_trend {
            false
        } else {
            file.trend.enabled.unwrap_or(false)
        };
        let trend_years = match &cli.trend_years {
            Some(y) if y.len() == 2 => Some([y[0], y[1]]),
            Some(y) => bail!("--trend-years takes two years A,B, got {} values", y.len()),
            None => file.trend.years,
        };
        let mut params = BTreeMap::new();
        for (k, v) in &file.params {
            params.insert(k.clone(), hyper_value(v)?);
        }
        for p in &cli.param {
            let (k, v) = parse_param(p)?;
            params.insert(k, v);
        }
        Ok(Settings {
            seed: cli.seed.or(file.seed).unwrap_or(0),
            jobs: cli.jobs.or(file.jobs),
            features,
            model,
            fare_classes,
            stations: cli.stations.clone().filter(|s| !s.is_empty()).or(file.stations),
            train_range,
            test_range,
            encoding: EncodingOptions {
                default_event_minutes: minutes,
            },
            grid: cli.grid.clone().or(file.grid),
            budget,
            mape_thresholds,
            period,
            ticketing: cli.ticketing.clone().or(file.paths.ticketing).unwrap_or_else(|| data.join("ticketing.csv")),
            events: cli.events.clone().or(file.paths.events).unwrap_or_else(|| data.join("events.csv")),
            calendar: cli.calendar.clone().or(file.paths.calendar).unwrap_or_else(|| data.join("calendar.csv")),
            manifest: cli.manifest.clone().or(file.paths.manifest).unwrap_or_else(|| data.join("manifest.json")),
            trend,
            trend_exclude: if cli.trend_exclude.is_empty() {
                file.trend.exclude.unwrap_or_default()
            } else {
                cli.trend_exclude.clone()
            },
            trend_years,
            params,
            workdir,
        })
    }

    /// `{family}-{feature set}`, the name of a run's artifact directory.
    pub fn run_name(&self) -> String {
        format!("{}-{}", self.model, self.features)
    }

    /// Years compared by the trend factor: explicit, or the last two years
    /// of the training range.
    pub fn trend_years(&self) -> [i32; 2] {
        use chrono::Datelike;
        self.trend_years.unwrap_or_else(|| {
            let b = self.train_range.end.year();
            [b - 1, b]
        })
    }
}
