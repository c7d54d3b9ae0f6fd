//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use chrono::{NaiveDate, NaiveDateTime};
use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ridership::evaluate::{
    apply_trend, compute_trend_table, event_pair_filter, mae, mape_at, rmse, MetricError, PeriodFilter, SliceContext,
    StationForecast, StationSelector,
};
use ridership::features::{build_design_matrix, encode_block_c, EncodingOptions, FeatureMatrix, FeatureSetId};
use ridership::importance::{aggregate_importance, feature_importances};
use ridership::ingest::{
    Calendar, CalendarDay, DateRange, DayFlags, EventRecord, FareClass, NetworkManifest, SLOTS_PER_DAY,
};
use ridership::models::{self, ModelError, ModelFamily, ModelParams, RegressorSpec};
use ridership::pipeline::{forecast, tasks, train_models};
use ridership::synthgen::{generate, SynthConfig, SynthData};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn d(s: &str) -> NaiveDate {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
}

fn dt(s: &str) -> NaiveDateTime {
    NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S").unwrap()
}

fn plain_calendar(range: &DateRange) -> Calendar {
    Calendar::from_days(range.iter().map(|date| CalendarDay {
        date,
        flags: DayFlags::default(),
    }))
    .unwrap()
}

fn random_dense(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen::<f64>())
}

// ---------------------------------------------------------------- 1

fn dimension_exactness() -> Outcome {
    let cats: Vec<String> = (0..10).map(|i| format!("cat{i}")).collect();
    let manifest = NetworkManifest::generated(68, 29, cats);
    let range = DateRange::new(d("2017-01-01"), d("2017-01-07"));
    let cal = plain_calendar(&range);
    let events = vec![EventRecord {
        station_id: "S003".into(),
        start: dt("2017-01-03 19:00:00"),
        end: Some(dt("2017-01-03 22:00:00")),
        category: "cat7".into(),
    }];
    let mut widths = Vec::new();
    for (set, want) in FeatureSetId::ALL.into_iter().zip([17, 24, 8376, 91896]) {
        let m = build_design_matrix(&cal, &events, &manifest, &range, set, &EncodingOptions::default())
            .map_err(|e| e.to_string())?;
        ensure!(m.width() == want, "{set}: width {} != {want}", m.width());
        ensure!(m.column_names.len() == want, "{set}: {} column names", m.column_names.len());
        widths.push(m.width().to_string());
    }
    Ok(format!("widths {}", widths.join(" / ")))
}

// ---------------------------------------------------------------- 2

fn event_encoding_fidelity() -> Outcome {
    let manifest = NetworkManifest::generated(1, 1, vec!["sport".into()]);
    let ev = EventRecord {
        station_id: "S000".into(),
        start: dt("2017-01-18 00:00:00"),
        end: Some(dt("2017-01-18 00:45:00")),
        category: "sport".into(),
    };
    let c = encode_block_c(&[ev], d("2017-01-18"), &manifest, &EncodingOptions::default()).map_err(|e| e.to_string())?;
    let mut start = [0.0; SLOTS_PER_DAY];
    start[0] = 1.0;
    let mut end = [0.0; SLOTS_PER_DAY];
    end[2] = 1.0;
    let mut period = [0.0; SLOTS_PER_DAY];
    period[..3].fill(1.0);
    ensure!(c[..96] == start[..], "start facet {:?}", &c[..4]);
    ensure!(c[96..192] == end[..], "end facet {:?}", &c[96..100]);
    ensure!(c[192..288] == period[..], "period facet {:?}", &c[192..196]);
    Ok("start [1,0,..], end [0,0,1,0,..], period [1,1,1,0,..]".into())
}

// ---------------------------------------------------------------- 3

fn brute_rmse(y: &Array2<f64>, p: &Array2<f64>) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for i in 0..y.nrows() {
        for j in 0..y.ncols() {
            s += (y[[i, j]] - p[[i, j]]).powi(2);
            n += 1;
        }
    }
    (s / n as f64).sqrt()
}

fn brute_mae(y: &Array2<f64>, p: &Array2<f64>) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for i in 0..y.nrows() {
        for j in 0..y.ncols() {
            s += (y[[i, j]] - p[[i, j]]).abs();
            n += 1;
        }
    }
    s / n as f64
}

fn brute_mape(y: &Array2<f64>, p: &Array2<f64>, v: f64) -> Option<f64> {
    let mut s = 0.0;
    let mut n = 0usize;
    for i in 0..y.nrows() {
        for j in 0..y.ncols() {
            if y[[i, j]] > v {
                s += ((y[[i, j]] - p[[i, j]]) / y[[i, j]]).abs();
                n += 1;
            }
        }
    }
    (n > 0).then(|| 100.0 * s / n as f64)
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
    for inst in 0..100 {
        let (days, slots) = (rng.gen_range(1..8), rng.gen_range(1..SLOTS_PER_DAY + 1));
        // Integer observations make ties with the threshold common.
        let y = Array2::from_shape_fn((days, slots), |_| rng.gen_range(0..300) as f64);
        let p = Array2::from_shape_fn((days, slots), |_| rng.gen::<f64>() * 300.0);
        let (yf, pf): (Vec<f64>, Vec<f64>) = (y.iter().copied().collect(), p.iter().copied().collect());
        let r = rmse(&yf, &pf).map_err(|e| e.to_string())?;
        ensure!(close(r, brute_rmse(&y, &p)), "instance {inst}: rmse {r} vs {}", brute_rmse(&y, &p));
        let m = mae(&yf, &pf).map_err(|e| e.to_string())?;
        ensure!(close(m, brute_mae(&y, &p)), "instance {inst}: mae {m} vs {}", brute_mae(&y, &p));
        let max_y = yf.iter().cloned().fold(0.0, f64::max);
        let at_value = yf[rng.gen_range(0..yf.len())];
        for v in [0.0, 150.0, at_value, max_y, max_y + 1.0] {
            match (mape_at(&yf, &pf, v), brute_mape(&y, &p, v)) {
                (Ok(a), Some(b)) => ensure!(close(a, b), "instance {inst}: mape@{v} {a} vs {b}"),
                (Err(MetricError::ThresholdExcludesAll(_)), None) => {}
                (a, b) => return Err(format!("instance {inst}: mape@{v} {a:?} vs oracle {b:?}")),
            }
        }
    }
    // points exactly at v are excluded, negative v is rejected, empty input errors
    ensure!(matches!(mape_at(&[150.0], &[0.0], 150.0), Err(MetricError::ThresholdExcludesAll(_))), "y == v kept");
    ensure!(mape_at(&[1.0], &[1.0], -1.0).is_err(), "negative threshold accepted");
    ensure!(matches!(rmse(&[], &[]), Err(MetricError::NoPoints)), "empty rmse accepted");
    Ok("100 instances agree to 1e-12".into())
}

// ---------------------------------------------------------------- 4

fn ha_oracle() -> Outcome {
    let mut cfg = SynthConfig::new(2, 1, 2, DateRange::new(d("2015-01-01"), d("2016-06-30")), 4);
    cfg.events_per_week = 1.0;
    let data = generate(&cfg).map_err(|e| e.to_string())?;
    let demand = data.demand();
    let opts = EncodingOptions::default();
    let train = DateRange::new(d("2015-01-01"), d("2015-12-31"));
    let test = DateRange::new(d("2016-01-01"), d("2016-06-30"));
    let mut checked = 0usize;
    for set in [FeatureSetId::D1, FeatureSetId::D2] {
        let xtr = build_design_matrix(&data.calendar, &data.events, &data.manifest, &train, set, &opts)
            .map_err(|e| e.to_string())?;
        let xte = build_design_matrix(&data.calendar, &data.events, &data.manifest, &test, set, &opts)
            .map_err(|e| e.to_string())?;
        let y = demand.targets("S001", FareClass::All, &xtr.dates);
        let model = models::fit(&RegressorSpec::new(ModelFamily::Ha), &xtr, &y).map_err(|e| e.to_string())?;
        let key = |x: &FeatureMatrix, i: usize| -> Vec<u64> { (0..x.width()).map(|j| x.get(i, j).to_bits()).collect() };
        for x in [&xtr, &xte] {
            let pred = model.predict(x).map_err(|e| e.to_string())?;
            for i in 0..x.n_rows() {
                let k = key(x, i);
                let mut sum = vec![0.0; SLOTS_PER_DAY];
                let mut count = 0usize;
                for r in 0..xtr.n_rows() {
                    if key(&xtr, r) == k {
                        for s in 0..SLOTS_PER_DAY {
                            sum[s] += y[[r, s]];
                        }
                        count += 1;
                    }
                }
                if count == 0 {
                    continue;
                }
                for s in 0..SLOTS_PER_DAY {
                    let want = sum[s] / count as f64;
                    ensure!(pred[[i, s]] == want, "{set} row {i} slot {s}: {} != {want}", pred[[i, s]]);
                }
                checked += 1;
            }
        }
    }
    for set in [FeatureSetId::D3, FeatureSetId::D4] {
        let x = build_design_matrix(&data.calendar, &data.events, &data.manifest, &train, set, &opts)
            .map_err(|e| e.to_string())?;
        let y = demand.targets("S000", FareClass::All, &x.dates);
        match models::fit(&RegressorSpec::new(ModelFamily::Ha), &x, &y) {
            Err(ModelError::HaInfeasible(s)) if s == set => {}
            other => return Err(format!("{set}: expected infeasibility error, got {:?}", other.map(|_| ()))),
        }
    }
    Ok(format!("{checked} rows match the group-by mean exactly; D3/D4 rejected"))
}

// ---------------------------------------------------------------- 5

fn elastic_net_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, p) = (50, 8);
    let xd = random_dense(&mut rng, n, p);
    let truth: Vec<f64> = (0..p).map(|j| j as f64 - 3.5).collect();
    let y = Array2::from_shape_fn((n, 1), |(i, _)| {
        20.0 + (0..p).map(|j| xd[[i, j]] * truth[j]).sum::<f64>() + 0.1 * (rng.gen::<f64>() - 0.5)
    });
    let x = FeatureMatrix::from_dense(&xd, None);

    // normal equations with an intercept column
    let a = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { xd[[i, j - 1]] });
    let b = DVector::from_fn(n, |i, _| y[[i, 0]]);
    let ata = a.transpose() * &a;
    let beta = ata.cholesky().ok_or("normal matrix not positive definite")?.solve(&(a.transpose() * b));

    let spec = RegressorSpec::new(ModelFamily::Lr)
        .with("alpha", 0.0)
        .with("tol", 1e-12)
        .with("max_iter", 100_000i64);
    let model = models::fit(&spec, &x, &y).map_err(|e| e.to_string())?;
    let ModelParams::Lr(net) = model.params() else {
        return Err("not a linear model".into());
    };
    let coef = net.coefficients();
    let mut worst: f64 = (net.intercepts()[0] - beta[0]).abs();
    for j in 0..p {
        worst = worst.max((coef[[j, 0]] - beta[j + 1]).abs());
    }
    ensure!(worst <= 1e-6, "max coefficient deviation {worst:e}");

    let spec = RegressorSpec::new(ModelFamily::Lr).with("alpha", 0.01).with("tol", 1e-10);
    let model = models::fit(&spec, &x, &y).map_err(|e| e.to_string())?;
    let ModelParams::Lr(net) = model.params() else {
        return Err("not a linear model".into());
    };
    let obj = &net.outputs()[0].objective;
    ensure!(obj.len() > 1, "no sweeps recorded");
    for (s, w) in obj.windows(2).enumerate() {
        ensure!(w[1] <= w[0] + 1e-12 * w[0].abs(), "objective rose at sweep {s}: {} -> {}", w[0], w[1]);
    }

    let model = models::fit(&RegressorSpec::new(ModelFamily::Lr).with("alpha", 1e6), &x, &y).map_err(|e| e.to_string())?;
    let ModelParams::Lr(net) = model.params() else {
        return Err("not a linear model".into());
    };
    let mean = y.mean().unwrap();
    ensure!(net.outputs()[0].coef.is_empty(), "large alpha kept {} coefficients", net.outputs()[0].coef.len());
    ensure!((net.intercepts()[0] - mean).abs() < 1e-9, "intercept {} != mean {mean}", net.intercepts()[0]);
    Ok(format!("max deviation {worst:.1e}; {} monotone sweeps; intercept-only collapse", obj.len() - 1))
}

// ---------------------------------------------------------------- 6

fn tree_forest_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let xd = random_dense(&mut rng, 120, 5);
    let y = random_dense(&mut rng, 120, 3) * 50.0;
    let x = FeatureMatrix::from_dense(&xd, None);

    let single = RegressorSpec::new(ModelFamily::Rf)
        .with("n_estimators", 1i64)
        .with("bootstrap", false)
        .with("max_features", "auto");
    let fitted = models::fit(&single, &x, &y).map_err(|e| e.to_string())?;
    let err = (&fitted.predict(&x).map_err(|e| e.to_string())? - &y).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
    ensure!(err == 0.0, "single tree training error {err}");

    let spec = RegressorSpec::new(ModelFamily::Rf).with("n_estimators", 20i64).with_seed(11);
    let forest = models::fit(&spec, &x, &y).map_err(|e| e.to_string())?;
    let xt = FeatureMatrix::from_dense(&random_dense(&mut rng, 40, 5), None);
    let pred = forest.predict_raw(&xt).map_err(|e| e.to_string())?;
    let trees = forest.trees().ok_or("forest without trees")?;
    let mut mean = Array2::<f64>::zeros(pred.raw_dim());
    for t in &trees {
        mean = mean + t.predict(&xt);
    }
    mean /= trees.len() as f64;
    let gap = (&pred - &mean).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
    ensure!(gap <= 1e-12, "forest vs tree mean gap {gap:e}");

    let again = models::fit(&spec, &x, &y).map_err(|e| e.to_string())?;
    ensure!(again == forest, "refit with the same seed differs");
    ensure!(
        again.predict(&xt).map_err(|e| e.to_string())? == forest.predict(&xt).map_err(|e| e.to_string())?,
        "predictions differ across identical fits"
    );
    Ok(format!("zero training error; mean-of-trees gap {gap:.1e}; deterministic"))
}

// ---------------------------------------------------------------- 7

fn gbdt_property() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let xd = random_dense(&mut rng, 100, 4);
    let y = Array2::from_shape_fn((100, 2), |(i, k)| 10.0 * xd[[i, k]] + xd[[i, 3]] * 5.0 + rng.gen::<f64>());
    let x = FeatureMatrix::from_dense(&xd, None);
    let spec = RegressorSpec::new(ModelFamily::Gbdt)
        .with("n_estimators", 40i64)
        .with("max_depth", 3i64)
        .with("learning_rate", 0.2);
    let m = models::fit(&spec, &x, &y).map_err(|e| e.to_string())?;
    let ModelParams::Gbdt(g) = m.params() else {
        return Err("not a boosting model".into());
    };
    let losses = g.stage_losses(x.n_rows());
    ensure!(losses.len() == 41, "{} stage losses", losses.len());
    for (s, w) in losses.windows(2).enumerate() {
        ensure!(w[1] <= w[0] * (1.0 + 1e-12), "loss rose at stage {}: {} -> {}", s + 1, w[0], w[1]);
    }

    let zero = models::fit(&RegressorSpec::new(ModelFamily::Gbdt).with("n_estimators", 0i64), &x, &y)
        .map_err(|e| e.to_string())?;
    let pred = zero.predict(&xt_like(&x)).map_err(|e| e.to_string())?;
    let means: Array1<f64> = y.mean_axis(Axis(0)).unwrap();
    for row in pred.rows() {
        for (a, b) in row.iter().zip(&means) {
            ensure!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "zero-stage prediction {a} != column mean {b}");
        }
    }
    Ok(format!("loss {:.3} -> {:.3} non-increasing; 0 stages = column means", losses[0], losses[40]))
}

fn xt_like(x: &FeatureMatrix) -> FeatureMatrix {
    x.select_rows(&(0..x.n_rows()).rev().take(10).collect::<Vec<_>>())
}

// ---------------------------------------------------------------- 8

fn importance_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let xd = random_dense(&mut rng, 150, 6);
    let y = Array2::from_shape_fn((150, 2), |(i, k)| 20.0 * xd[[i, 1]] + 5.0 * xd[[i, 4]] * k as f64 + rng.gen::<f64>());
    let x = FeatureMatrix::from_dense(&xd, None);
    for family in [ModelFamily::Rf, ModelFamily::Gbdt] {
        let m = models::fit(&RegressorSpec::new(family).with("n_estimators", 15i64), &x, &y).map_err(|e| e.to_string())?;
        let imp = feature_importances(&m).map_err(|e| e.to_string())?;
        let total: f64 = imp.values.iter().sum();
        ensure!((total - 1.0).abs() <= 1e-9, "{family}: importances sum to {total}");
        ensure!(imp.values.iter().all(|v| *v >= 0.0), "{family}: negative importance");
    }

    // only column 2 carries signal; the others are constant
    let xd = Array2::from_shape_fn((80, 5), |(i, j)| if j == 2 { (i % 7) as f64 } else { 1.0 });
    let y = Array2::from_shape_fn((80, 1), |(i, _)| 3.0 * (i % 7) as f64);
    let m = models::fit(
        &RegressorSpec::new(ModelFamily::Rf).with("n_estimators", 10i64),
        &FeatureMatrix::from_dense(&xd, None),
        &y,
    )
    .map_err(|e| e.to_string())?;
    let imp = feature_importances(&m).map_err(|e| e.to_string())?;
    ensure!((imp.values[2] - 1.0).abs() <= 1e-12, "informative feature got {}", imp.values[2]);

    let mut cfg = SynthConfig::new(3, 2, 3, DateRange::new(d("2015-01-01"), d("2015-12-31")), 8);
    cfg.events_per_week = 1.0;
    let data = generate(&cfg).map_err(|e| e.to_string())?;
    let x = build_design_matrix(
        &data.calendar,
        &data.events,
        &data.manifest,
        &data.calendar_range(),
        FeatureSetId::D4,
        &EncodingOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let y = data.demand().targets("S000", FareClass::All, &x.dates);
    let m = models::fit(&RegressorSpec::new(ModelFamily::Rf).with("n_estimators", 10i64), &x, &y).map_err(|e| e.to_string())?;
    let groups = aggregate_importance(&feature_importances(&m).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let pct: f64 = groups.iter().map(|g| g.1).sum();
    ensure!((pct - 100.0).abs() <= 1e-9, "group rollup sums to {pct}");
    Ok(format!("sum 1; single feature = 1.0; rollup over {} groups = 100", groups.len()))
}

// ---------------------------------------------------------------- shared end-to-end runs

fn train_test() -> (DateRange, DateRange) {
    (
        DateRange::new(d("2015-01-01"), d("2016-12-31")),
        DateRange::new(d("2017-01-01"), d("2017-12-31")),
    )
}

fn synth(seed: u64, growth: f64) -> SynthData {
    let mut cfg = SynthConfig::new(5, 2, 3, DateRange::new(d("2015-01-01"), d("2017-12-31")), seed);
    cfg.yearly_growth = vec![growth; 5];
    generate(&cfg).expect("valid config")
}

fn run_rf(data: &SynthData, set: FeatureSetId, stations: &[String], classes: &[FareClass], trend: bool, seed: u64) -> Vec<StationForecast> {
    let (train, test) = train_test();
    let opts = EncodingOptions::default();
    let xtr = build_design_matrix(&data.calendar, &data.events, &data.manifest, &train, set, &opts).unwrap();
    let xte = build_design_matrix(&data.calendar, &data.events, &data.manifest, &test, set, &opts).unwrap();
    let demand = data.demand();
    let ts = tasks(stations, classes);
    let spec = RegressorSpec::new(ModelFamily::Rf).with("n_estimators", 50i64);
    let models = train_models(&vec![spec; ts.len()], seed, &xtr, &demand, &ts).unwrap();
    let table = trend.then(|| compute_trend_table(&demand, 2015, 2016, &BTreeSet::new()).unwrap());
    forecast(&models, &xte, &demand, table.as_ref()).unwrap()
}

struct EventRun {
    /// (class, period) -> RMSE over event-hosting stations
    rmse: Vec<((FareClass, PeriodFilter), f64)>,
}

impl EventRun {
    fn get(&self, class: FareClass, period: PeriodFilter) -> f64 {
        self.rmse.iter().find(|(k, _)| *k == (class, period)).unwrap().1
    }
}

/// RF on D2 and D4 for seeds 0..3 over the event-hosting stations.
fn event_runs() -> &'static Vec<(u64, EventRun, EventRun)> {
    static RUNS: OnceLock<Vec<(u64, EventRun, EventRun)>> = OnceLock::new();
    RUNS.get_or_init(|| {
        (0..3u64)
            .map(|seed| {
                let data = synth(seed, 1.0);
                let (_, test) = train_test();
                let pairs = event_pair_filter(&data.events, &test, &EncodingOptions::default());
                let hosts: Vec<String> = data.manifest.event_stations().iter().map(|s| s.to_string()).collect();
                let host_set: BTreeSet<String> = hosts.iter().cloned().collect();
                let classes = [FareClass::All, FareClass::Op, FareClass::Smp];
                let run = |set: FeatureSetId| {
                    let f = run_rf(&data, set, &hosts, &classes, false, seed);
                    let ctx = SliceContext {
                        split: "test".into(),
                        feature_set: set.to_string(),
                        family: "rf".into(),
                        event_pairs: &pairs,
                        event_stations: &host_set,
                        thresholds: vec![150.0],
                    };
                    let mut rmse = Vec::new();
                    for class in classes {
                        for period in [PeriodFilter::Event, PeriodFilter::NonEvent] {
                            let r = ctx.report(&f, StationSelector::EventHosting, class, period).unwrap();
                            rmse.push(((class, period), r.rmse));
                        }
                    }
                    EventRun { rmse }
                };
                (seed, run(FeatureSetId::D2), run(FeatureSetId::D4))
            })
            .collect()
    })
}

// ---------------------------------------------------------------- 9

fn trend_factor() -> Outcome {
    let data = synth(9, 1.1);
    let demand = data.demand();
    let excluded: BTreeSet<String> = ["S004".to_string()].into();
    let table = compute_trend_table(&demand, 2015, 2016, &excluded).map_err(|e| e.to_string())?;
    for station in demand.stations.iter() {
        for class in [FareClass::Smp, FareClass::Rmp, FareClass::Bt, FareClass::Op, FareClass::All] {
            let mean = |year: i32| {
                let dates: Vec<NaiveDate> = demand.range.iter().filter(|d| chrono::Datelike::year(d) == year).collect();
                demand.targets(station, class, &dates).mean().unwrap()
            };
            let want = if excluded.contains(station) { 1.0 } else { mean(2016) / mean(2015) };
            let got = table.factor(station, class).ok_or("missing factor")?;
            ensure!((got - want).abs() <= 1e-12 * want, "{station}/{class}: factor {got} vs direct {want}");
        }
    }
    let f = table.factor("S000", FareClass::All).unwrap();
    ensure!((f - 1.1).abs() < 0.02, "planted growth 1.1 recovered as {f}");

    let stations = demand.stations.clone();
    let plain = run_rf(&data, FeatureSetId::D2, &stations, &[FareClass::All], false, 9);
    let pooled = |fs: &[StationForecast]| -> f64 {
        let y: Vec<f64> = fs.iter().flat_map(|f| f.observed.iter().copied()).collect();
        let p: Vec<f64> = fs.iter().flat_map(|f| f.predicted.iter().copied()).collect();
        rmse(&y, &p).unwrap()
    };
    let base = pooled(&plain);
    let full = compute_trend_table(&demand, 2015, 2016, &BTreeSet::new()).map_err(|e| e.to_string())?;
    let scaled: Vec<StationForecast> = plain
        .iter()
        .map(|f| StationForecast {
            predicted: apply_trend(&f.predicted, &full, &f.station_id, f.fare_class).unwrap(),
            ..f.clone()
        })
        .collect();
    let with = pooled(&scaled);
    ensure!(with < base, "trend RMSE {with:.3} not below {base:.3}");
    Ok(format!("ratio matches direct means; factor {f:.3}; RMSE {base:.3} -> {with:.3}"))
}

// ---------------------------------------------------------------- 10

fn event_signal() -> Outcome {
    let mut lines = Vec::new();
    let mut passed = 0;
    for (seed, d2, d4) in event_runs() {
        let (e2, e4) = (d2.get(FareClass::All, PeriodFilter::Event), d4.get(FareClass::All, PeriodFilter::Event));
        let (n2, n4) = (d2.get(FareClass::All, PeriodFilter::NonEvent), d4.get(FareClass::All, PeriodFilter::NonEvent));
        let gain = 1.0 - e4 / e2;
        let drift = (n4 - n2).abs() / n2;
        let ok = gain >= 0.15 && drift < 0.10;
        passed += ok as usize;
        lines.push(format!(
            "seed {seed}: event {e2:.2}->{e4:.2} ({:.0}% lower), non-event {n2:.2}->{n4:.2} ({:.1}% apart){}",
            100.0 * gain,
            100.0 * drift,
            if ok { "" } else { " [miss]" }
        ));
    }
    let msg = format!("{passed}/3 seeds; {}", lines.join("; "));
    if passed >= 2 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------- 11

fn fare_class_signal() -> Outcome {
    let mut lines = Vec::new();
    let (mut op_wins, mut smp_ok) = (0, 0);
    for (seed, d2, d4) in event_runs() {
        let (o2, o4) = (d2.get(FareClass::Op, PeriodFilter::Event), d4.get(FareClass::Op, PeriodFilter::Event));
        let (s2, s4) = (d2.get(FareClass::Smp, PeriodFilter::Event), d4.get(FareClass::Smp, PeriodFilter::Event));
        let smp_change = (s4 - s2).abs() / s2;
        op_wins += (o4 < o2) as usize;
        smp_ok += (smp_change < 0.10) as usize;
        lines.push(format!(
            "seed {seed}: OP {o2:.2}->{o4:.2}, SMP {s2:.2}->{s4:.2} ({:.1}%)",
            100.0 * smp_change
        ));
    }
    let msg = format!("OP wins {op_wins}/3, SMP stable {smp_ok}/3; {}", lines.join("; "));
    if op_wins >= 2 && smp_ok == 3 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------- 12

const GRID: &str = "[rf]\nn_estimators = [5, 10]\nmin_samples_leaf = [1]\n";

fn chain(root: &Path) -> Result<(), String> {
    let bin = env!("CARGO_BIN_EXE_ridership");
    let grid = root.join("grid.toml");
    std::fs::write(&grid, GRID).map_err(|e| e.to_string())?;
    let common = [
        "--workdir".to_string(),
        root.join("work").display().to_string(),
        "--seed".into(),
        "42".into(),
        "--features".into(),
        "D4".into(),
        "--model".into(),
        "rf".into(),
        "--fare-class".into(),
        "ALL,OP".into(),
        "--train-range".into(),
        "2015-01-01..2016-12-31".into(),
        "--test-range".into(),
        "2017-01-01..2017-03-31".into(),
    ];
    let steps: Vec<Vec<String>> = vec![
        vec!["synth".into(), "--n-stations".into(), "3".into(), "--n-event-stations".into(), "1".into(),
             "--n-categories".into(), "2".into(), "--range".into(), "2015-01-01..2017-03-31".into()],
        vec!["ingest".into()],
        vec!["features".into()],
        vec!["tune".into(), "--grid".into(), grid.display().to_string()],
        vec!["train".into(), "--tuned".into()],
        vec!["predict".into(), "--trend".into()],
        vec!["evaluate".into()],
        vec!["importance".into()],
        vec!["report".into()],
    ];
    for step in steps {
        let out = Command::new(bin)
            .args(&step)
            .args(&common)
            .env("RUST_LOG", "warn")
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(
            out.status.success(),
            "`{}` failed: {}",
            step[0],
            String::from_utf8_lossy(&out.stderr)
        );
    }
    Ok(())
}

fn files_under(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(p) = stack.pop() {
        for e in std::fs::read_dir(&p).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn pipeline_determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    chain(a.path())?;
    chain(b.path())?;
    let ra = files_under(&a.path().join("work/reports"));
    let rb = files_under(&b.path().join("work/reports"));
    ensure!(!ra.is_empty(), "no reports written");
    ensure!(
        ra.iter().map(|f| &f.0).collect::<Vec<_>>() == rb.iter().map(|f| &f.0).collect::<Vec<_>>(),
        "report file sets differ"
    );
    for ((name, x), (_, y)) in ra.iter().zip(&rb) {
        ensure!(x == y, "{name} differs between runs");
    }
    for sub in ["predictions", "models"] {
        ensure!(
            files_under(&a.path().join("work").join(sub)) == files_under(&b.path().join("work").join(sub)),
            "{sub} differ between runs"
        );
    }
    Ok(format!("{} report files byte-identical across two runs", ra.len()))
}

// ---------------------------------------------------------------- driver

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 12] = [
        ("dimension exactness", Duration::from_secs(1), dimension_exactness),
        ("event-encoding fidelity", Duration::from_secs(1), event_encoding_fidelity),
        ("metric oracles", Duration::from_secs(5), metric_oracles),
        ("HA oracle", Duration::from_secs(5), ha_oracle),
        ("elastic-net oracle", Duration::from_secs(5), elastic_net_oracle),
        ("tree/forest oracles", Duration::from_secs(10), tree_forest_oracles),
        ("GBDT property", Duration::from_secs(10), gbdt_property),
        ("importance identities", Duration::from_secs(10), importance_identities),
        ("trend factor", Duration::from_secs(30), trend_factor),
        ("event signal (D4 vs D2)", Duration::from_secs(300), event_signal),
        ("per-fare-class signal", Duration::from_secs(300), fare_class_signal),
        ("pipeline determinism", Duration::from_secs(300), pipeline_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || *f == n.to_string()) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = t.elapsed();
        let outcome = match outcome {
            Ok(_) if elapsed > *limit => Err(format!("took {:.2}s, limit {}s", elapsed.as_secs_f64(), limit.as_secs())),
            o => o,
        };
        let (tag, detail) = match &outcome {
            Ok(m) => ("PASS", m),
            Err(m) => ("FAIL", m),
        };
        println!("{tag} criterion {n} ({name}, {:.2}s): {detail}", elapsed.as_secs_f64());
        failures += outcome.is_err() as usize;
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
