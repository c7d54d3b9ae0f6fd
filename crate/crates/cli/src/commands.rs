use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use ridership::evaluate::{
    compute_trend_table, evaluate_run, event_pair_filter, reports_to_csv, reports_to_json, sweep_thresholds,
    EvaluationReport, PeriodFilter, SliceContext, StationForecast, StationSelector, TrendTable,
};
use ridership::features::{build_design_matrix, load_cache, read_cache, save_cache, CacheKey, FeatureMatrix};
use ridership::importance::{aggregate_importance, feature_importances};
use ridership::ingest::{
    aggregate_daily, parse_calendar_csv, parse_events_csv, parse_ticketing_csv, validate_events, Calendar, DateRange,
    DemandSet, EventRecord, FareClass, NetworkManifest,
};
use ridership::models::{FittedModel, HyperValue, RegressorSpec};
use ridership::pipeline::{forecast, task_seed, tasks, train_models, with_jobs, Task};
use ridership::synthgen::{generate, write_files, NoiseLaw, SynthConfig};
use ridership::tuning::{grid_search, GridSpec, TuningResult};

use crate::artifacts::{read_json, read_msgpack, require, write_json, write_msgpack, write_text, Execution, Layout};
use crate::config::{hyper_value, Settings};
use crate::{report, Cli, Command, SynthArgs};

pub fn run(cli: &Cli) -> Result<()> {
    let settings = Settings::resolve(cli)?;
    let layout = Layout::new(&settings.workdir);
    let jobs = settings.jobs;
    let go = || -> Result<()> {
        match &cli.command {
            Command::Synth(args) => synth(&settings, &layout, args),
            Command::Ingest => ingest(&settings, &layout),
            Command::Features => features(&settings, &layout),
            Command::Tune => tune(&settings, &layout),
            Command::Train { tuned } => train(&settings, &layout, *tuned),
            Command::Predict => predict(&settings, &layout),
            Command::Evaluate => evaluate(&settings, &layout),
            Command::Importance => importance(&settings, &layout),
            Command::Report => report::run(&settings, &layout),
        }
    };
    with_jobs(jobs, go)?
}

fn synth(settings: &Settings, layout: &Layout, args: &SynthArgs) -> Result<()> {
    let mut exec = Execution::start("synth");
    let range: DateRange = args.range.parse().map_err(anyhow::Error::msg)?;
    let mut cfg = SynthConfig::new(args.n_stations, args.n_event_stations, args.n_categories, range, settings.seed);
    cfg.yearly_growth = vec![args.growth; args.n_stations];
    if let Some(r) = args.events_per_week {
        cfg.events_per_week = r;
    }
    cfg.noise = match args.noise.as_str() {
        "poisson" => NoiseLaw::Poisson,
        "none" => NoiseLaw::None,
        other => bail!("unknown noise law `{other}` (expected poisson or none)"),
    };
    let out = args.out.clone().unwrap_or_else(|| layout.data_dir());
    let data = generate(&cfg)?;
    write_files(&data, &out)?;
    info!(
        "synthetic data: {} stations ({} with events), {} days, {} events, {} ticketing rows -> {}",
        cfg.n_stations,
        cfg.n_event_stations,
        range.len(),
        data.events.len(),
        data.ticketing.len(),
        out.display()
    );
    for f in ridership::synthgen::FILES {
        exec.output(&out.join(f));
    }
    exec.finish(layout, "synth", settings.seed, &cfg)
}

fn ingest(settings: &Settings, layout: &Layout) -> Result<()> {
    let mut exec = Execution::start("ingest");
    for p in [&settings.manifest, &settings.calendar, &settings.events, &settings.ticketing] {
        if !p.exists() {
            bail!("missing input {} (run `ridership synth` or pass its path)", p.display());
        }
        exec.input(p);
    }
    let manifest = NetworkManifest::load(&settings.manifest)?;
    manifest.validate()?;
    let calendar = parse_calendar_csv(&settings.calendar)?;
    let events = parse_events_csv(&settings.events)?;
    validate_events(&events, &manifest)?;
    let records = parse_ticketing_csv(&settings.ticketing)?;
    let range = calendar_range(&calendar)?;
    if let Some(gap) = calendar.first_gap(&range) {
        bail!("calendar has a gap: {gap} is missing between {} and {}", range.start, range.end);
    }
    let known: BTreeSet<String> = manifest.station_ids().into_iter().collect();
    let unknown = records.iter().filter(|r| !known.contains(&r.station_id)).count();
    if unknown > 0 {
        warn!("{unknown} ticketing records name stations absent from the manifest and were ignored");
    }
    let demand = aggregate_daily(&records, &manifest.station_ids(), range);
    for w in &demand.warnings {
        warn!("{w}");
    }
    info!(
        "ingested {} ticketing records, {} events, {} calendar days, {} stations",
        records.len(),
        events.len(),
        calendar.len(),
        demand.stations.len()
    );
    write_msgpack(&layout.demand(), &demand)?;
    write_msgpack(&layout.events(), &events)?;
    write_msgpack(&layout.calendar(), &calendar)?;
    write_json(&layout.manifest(), &manifest)?;
    for p in [layout.demand(), layout.events(), layout.calendar(), layout.manifest()] {
        exec.output(&p);
    }
    exec.finish(layout, "ingest", settings.seed, settings)
}

fn calendar_range(calendar: &Calendar) -> Result<DateRange> {
    let first = calendar.days().next().context("calendar is empty")?.date;
    let last = calendar.days().last().context("calendar is empty")?.date;
    Ok(DateRange::new(first, last))
}

struct Ingested {
    manifest: NetworkManifest,
    calendar: Calendar,
    events: Vec<EventRecord>,
}

fn load_ingested(layout: &Layout) -> Result<Ingested> {
    Ok(Ingested {
        manifest: read_json(&layout.manifest(), "ingest")?,
        calendar: read_msgpack(&layout.calendar(), "ingest")?,
        events: read_msgpack(&layout.events(), "ingest")?,
    })
}

fn load_demand(layout: &Layout) -> Result<DemandSet> {
    read_msgpack(&layout.demand(), "ingest")
}

fn cache_key(settings: &Settings, inputs: &Ingested) -> Result<CacheKey> {
    Ok(CacheKey {
        set_id: settings.features,
        manifest_digest: inputs.manifest.digest(),
        range: calendar_range(&inputs.calendar)?,
        options: settings.encoding,
    })
}

fn features(settings: &Settings, layout: &Layout) -> Result<()> {
    let mut exec = Execution::start("features");
    let inputs = load_ingested(layout)?;
    for p in [layout.manifest(), layout.calendar(), layout.events()] {
        exec.input(&p);
    }
    let key = cache_key(settings, &inputs)?;
    let path = layout.features(settings.features);
    let cached = if path.exists() { load_cache(&path, &key)? } else { None };
    let m = match cached {
        Some(m) => {
            info!("feature matrix {} is up to date", path.display());
            m
        }
        None => {
            let m = build_design_matrix(
                &inputs.calendar,
                &inputs.events,
                &inputs.manifest,
                &key.range,
                settings.features,
                &settings.encoding,
            )?;
            save_cache(&path, &key, &m)?;
            m
        }
    };
    info!(
        "design matrix {}: {} rows x {} columns ({} non-zeros)",
        settings.features,
        m.n_rows(),
        m.width(),
        m.nnz()
    );
    exec.output(&path);
    exec.finish(layout, &format!("features-{}", settings.features), settings.seed, settings)
}

/// Design matrix restricted to `range`, after checking it is current and
/// covers the range.
fn design_rows(settings: &Settings, layout: &Layout, inputs: &Ingested, range: &DateRange, what: &str) -> Result<FeatureMatrix> {
    let path = layout.features(settings.features);
    require(&path, &format!("features --features {}", settings.features))?;
    let (key, m) = read_cache(&path)?;
    if key != cache_key(settings, inputs)? {
        bail!(
            "feature matrix {} is stale (inputs or encoding options changed); rerun `ridership features`",
            path.display()
        );
    }
    if let Some(gap) = inputs.calendar.first_gap(range) {
        bail!("config violation: {what} {range} is not covered by the calendar ({gap} missing)");
    }
    Ok(m.select_rows(&m.rows_in(range)))
}

fn run_tasks(settings: &Settings, manifest: &NetworkManifest) -> Result<Vec<Task>> {
    let all = manifest.station_ids();
    let stations = match &settings.stations {
        None => all,
        Some(sel) => {
            if let Some(bad) = sel.iter().find(|s| !all.contains(s)) {
                bail!("unknown station `{bad}`");
            }
            // Keep manifest order regardless of the selection order.
            all.into_iter().filter(|s| sel.contains(s)).collect()
        }
    };
    Ok(tasks(&stations, &settings.fare_classes))
}

#[derive(Serialize, Deserialize)]
struct TuningArtifact {
    station_id: String,
    fare_class: FareClass,
    feature_set: String,
    result: TuningResult,
}

fn load_grid(settings: &Settings) -> Result<GridSpec> {
    let family = settings.model;
    let Some(path) = &settings.grid else {
        return GridSpec::reference(family).with_context(|| format!("{family} has no hyperparameters to tune"));
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading grid {}", path.display()))?;
    let table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing grid {}", path.display()))?;
    let axes_table = table
        .get(family.as_str())
        .and_then(|v| v.as_table())
        .with_context(|| format!("grid {} has no [{family}] table", path.display()))?;
    let mut axes = Vec::new();
    for (name, values) in axes_table {
        let values = match values {
            toml::Value::Array(vs) => vs.iter().map(hyper_value).collect::<Result<Vec<HyperValue>>>()?,
            single => vec![hyper_value(single)?],
        };
        axes.push((name.clone(), values));
    }
    Ok(GridSpec::new(family, axes)?)
}

fn tune(settings: &Settings, layout: &Layout) -> Result<()> {
    let mut exec = Execution::start("tune");
    let inputs = load_ingested(layout)?;
    let demand = load_demand(layout)?;
    let x = design_rows(settings, layout, &inputs, &settings.train_range, "train range")?;
    exec.input(&layout.features(settings.features));
    let grid = load_grid(settings)?.with_budget(settings.budget);
    if let Some(p) = &settings.grid {
        exec.input(p);
    }
    let run = settings.run_name();
    for (i, task) in run_tasks(settings, &inputs.manifest)?.iter().enumerate() {
        let grid = grid.clone().with_seed(task_seed(settings.seed, i));
        let y = demand.targets(&task.station_id, task.fare_class, &x.dates);
        let result = grid_search(&grid, &x, &y)?;
        let best = result.cv_scores.iter().find(|s| s.spec == result.best_spec);
        info!(
            "{} {}: best {} (CV RMSE {}), {}/{} grid points{}",
            task.station_id,
            task.fare_class,
            result.best_spec.label(),
            best.map_or("n/a".into(), |s| format!("{:.4}", s.mean_rmse)),
            result.cv_scores.len(),
            grid.len(),
            if result.exhausted { ", budget exhausted" } else { "" }
        );
        let path = layout.tuning(&run, &task.station_id, task.fare_class);
        write_json(
            &path,
            &TuningArtifact {
                station_id: task.station_id.clone(),
                fare_class: task.fare_class,
                feature_set: settings.features.to_string(),
                result,
            },
        )?;
        exec.output(&path);
    }
    exec.finish(layout, &format!("tune-{run}"), settings.seed, settings)
}

fn train(settings: &Settings, layout: &Layout, tuned: bool) -> Result<()> {
    let mut exec = Execution::start("train");
    let inputs = load_ingested(layout)?;
    let demand = load_demand(layout)?;
    let x = design_rows(settings, layout, &inputs, &settings.train_range, "train range")?;
    exec.input(&layout.features(settings.features));
    exec.input(&layout.demand());
    let run = settings.run_name();
    let tasks = run_tasks(settings, &inputs.manifest)?;
    let specs = tasks
        .iter()
        .map(|t| {
            if tuned {
                let path = layout.tuning(&run, &t.station_id, t.fare_class);
                exec.input(&path);
                let a: TuningArtifact = read_json(&path, "tune")?;
                Ok(a.result.best_spec)
            } else {
                let spec = RegressorSpec {
                    family: settings.model,
                    hyperparameters: settings.params.clone(),
                    seed: 0,
                };
                spec.validate()?;
                Ok(spec)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let models = train_models(&specs, settings.seed, &x, &demand, &tasks)?;
    for m in &models {
        for w in m.warnings() {
            warn!("{} {}: {w}", m.station_id(), m.fare_class());
        }
        let path = layout.model(&run, m.station_id(), m.fare_class());
        m.save(&path)?;
        exec.output(&path);
    }
    info!("trained {} {} models on {} days ({} features)", models.len(), run, x.n_rows(), x.width());
    exec.finish(layout, &format!("train-{run}"), settings.seed, settings)
}

#[derive(Serialize, Deserialize)]
pub struct PredictionSet {
    pub run: String,
    pub split: String,
    pub range: DateRange,
    pub trend: Option<TrendTable>,
    pub forecasts: Vec<StationForecast>,
}

fn predictions_csv(p: &PredictionSet) -> String {
    let mut s = String::from("station_id,fare_class,date,slot,observed,predicted\n");
    for f in &p.forecasts {
        for (i, d) in f.dates.iter().enumerate() {
            for slot in 0..f.observed.ncols() {
                s.push_str(&format!(
                    "{},{},{},{},{},{:.4}\n",
                    f.station_id,
                    f.fare_class,
                    d,
                    slot,
                    f.observed[[i, slot]],
                    f.predicted[[i, slot]]
                ));
            }
        }
    }
    s
}

fn predict(settings: &Settings, layout: &Layout) -> Result<()> {
    let mut exec = Execution::start("predict");
    let inputs = load_ingested(layout)?;
    let demand = load_demand(layout)?;
    let x = design_rows(settings, layout, &inputs, &settings.test_range, "test range")?;
    exec.input(&layout.features(settings.features));
    let run = settings.run_name();
    let models = run_tasks(settings, &inputs.manifest)?
        .iter()
        .map(|t| {
            let path = layout.model(&run, &t.station_id, t.fare_class);
            require(&path, &format!("train --model {} --features {}", settings.model, settings.features))?;
            exec.input(&path);
            Ok(FittedModel::load(&path, Some(x.width()))?)
        })
        .collect::<Result<Vec<_>>>()?;
    let trend = if settings.trend {
        let [a, b] = settings.trend_years();
        if let Some(bad) = settings
            .trend_exclude
            .iter()
            .find(|s| !demand.stations.contains(s))
        {
            bail!("unknown station `{bad}` in trend exclusions");
        }
        let excluded: BTreeSet<String> = settings.trend_exclude.iter().cloned().collect();
        let table = compute_trend_table(&demand, a, b, &excluded)?;
        info!("trend factors {a}->{b} computed for {} stations", demand.stations.len());
        Some(table)
    } else {
        None
    };
    let forecasts = forecast(&models, &x, &demand, trend.as_ref())?;
    let set = PredictionSet {
        run: run.clone(),
        split: "test".into(),
        range: settings.test_range,
        trend,
        forecasts,
    };
    write_msgpack(&layout.predictions(&run), &set)?;
    write_text(&layout.predictions_csv(&run), &predictions_csv(&set))?;
    info!("predicted {} days for {} models", x.n_rows(), models.len());
    exec.output(&layout.predictions(&run));
    exec.output(&layout.predictions_csv(&run));
    exec.finish(layout, &format!("predict-{run}"), settings.seed, settings)
}

#[derive(Serialize, Deserialize)]
pub struct SweepCurve {
    pub fare_class: FareClass,
    pub stations: StationSelector,
    pub period: PeriodFilter,
    pub points: Vec<(f64, Option<f64>)>,
}

fn evaluate(settings: &Settings, layout: &Layout) -> Result<()> {
    let mut exec = Execution::start("evaluate");
    let inputs = load_ingested(layout)?;
    let run = settings.run_name();
    let path = layout.predictions(&run);
    let set: PredictionSet = read_msgpack(&path, &format!("predict --model {} --features {}", settings.model, settings.features))?;
    exec.input(&path);
    let pairs = event_pair_filter(&inputs.events, &set.range, &settings.encoding);
    let hosts: BTreeSet<String> = inputs.manifest.event_stations().iter().map(|s| s.to_string()).collect();
    let ctx = SliceContext {
        split: set.split.clone(),
        feature_set: settings.features.to_string(),
        family: settings.model.to_string(),
        event_pairs: &pairs,
        event_stations: &hosts,
        thresholds: settings.mape_thresholds.clone(),
    };
    let reports = evaluate_run(&set.forecasts, &ctx, settings.period)?;
    let classes: BTreeSet<FareClass> = set.forecasts.iter().map(|f| f.fare_class).collect();
    let mut curves = Vec::new();
    for class in classes {
        let mut slices = vec![(StationSelector::All, PeriodFilter::All)];
        if set.forecasts.iter().any(|f| hosts.contains(&f.station_id)) {
            slices.push((StationSelector::EventHosting, PeriodFilter::Event));
            slices.push((StationSelector::EventHosting, PeriodFilter::NonEvent));
        }
        for (stations, period) in slices {
            let points = ctx.mape_sweep(&set.forecasts, &stations, class, period, &sweep_thresholds());
            curves.push(SweepCurve {
                fare_class: class,
                stations,
                period,
                points,
            });
        }
    }
    for r in reports.iter().filter(|r| !matches!(r.scope.stations, StationSelector::Station(_))) {
        info!(
            "{} {} {} {}: RMSE {:.4}, MAE {:.4}, n = {}",
            run, r.scope.fare_class, r.scope.stations, r.scope.period, r.rmse, r.mae, r.n_points
        );
    }
    let outs = [
        (layout.report(&format!("eval-{run}.csv")), reports_to_csv(&reports).into_bytes()),
        (layout.report(&format!("eval-{run}.json")), pretty(&reports_to_json(&reports))?),
        (layout.report(&format!("mape-sweep-{run}.json")), pretty(&curves)?),
    ];
    for (p, bytes) in outs {
        ridership::io::write_atomic(&p, &bytes).with_context(|| format!("writing {}", p.display()))?;
        exec.output(&p);
    }
    exec.finish(layout, &format!("evaluate-{run}"), settings.seed, settings)
}

fn pretty<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

/// Flattens an `eval-*.json` file back into reports.
pub fn read_reports(path: &Path) -> Result<Vec<EvaluationReport>> {
    let nested: BTreeMap<String, BTreeMap<String, Vec<EvaluationReport>>> = read_json(path, "evaluate")?;
    Ok(nested.into_values().flat_map(|m| m.into_values().flatten()).collect())
}

fn importance(settings: &Settings, layout: &Layout) -> Result<()> {
    let mut exec = Execution::start("importance");
    let inputs = load_ingested(layout)?;
    let run = settings.run_name();
    let mut rollups: BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>> = BTreeMap::new();
    let mut rollup_csv = String::from("station_id,fare_class,group,percent\n");
    for t in run_tasks(settings, &inputs.manifest)? {
        let path = layout.model(&run, &t.station_id, t.fare_class);
        require(&path, &format!("train --model {} --features {}", settings.model, settings.features))?;
        exec.input(&path);
        let model = FittedModel::load(&path, None)?;
        let vec = feature_importances(&model).with_context(|| format!("{} {}", t.station_id, t.fare_class))?;
        let groups = aggregate_importance(&vec)?;
        let out = layout.report(&format!("importance/{run}/{}-{}.csv", t.station_id, t.fare_class));
        write_text(&out, &vec.to_csv())?;
        exec.output(&out);
        let top: Vec<String> = groups
            .iter()
            .filter(|g| g.1 >= 1.0)
            .map(|(g, p)| format!("{g} {p:.1}%"))
            .collect();
        info!("{} {}: {}", t.station_id, t.fare_class, top.join(", "));
        for (g, p) in &groups {
            rollup_csv.push_str(&format!("{},{},{g},{p:.6}\n", t.station_id, t.fare_class));
        }
        rollups
            .entry(t.station_id.clone())
            .or_default()
            .insert(t.fare_class.to_string(), groups.into_iter().collect());
    }
    let json_path = layout.report(&format!("importance-{run}.json"));
    let csv_path = layout.report(&format!("importance-{run}.csv"));
    write_json(&json_path, &rollups)?;
    write_text(&csv_path, &rollup_csv)?;
    exec.output(&json_path);
    exec.output(&csv_path);
    exec.finish(layout, &format!("importance-{run}"), settings.seed, settings)
}
