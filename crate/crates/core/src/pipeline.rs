//! Per-station training and forecasting over a shared design matrix.

use ndarray::Array2;
use rayon::prelude::*;
use thiserror::Error;

use crate::evaluate::{apply_trend, EvalError, StationForecast, TrendTable};
use crate::features::FeatureMatrix;
use crate::ingest::{DemandSet, FareClass};
use crate::models::params::derive_seed;
use crate::models::{self, FittedModel, ModelError, RegressorSpec};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("thread pool: {0}")]
    Pool(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// One (station, fare class) fitting task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub station_id: String,
    pub fare_class: FareClass,
}

/// Tasks in manifest station order, classes in the given order.
pub fn tasks(stations: &[String], classes: &[FareClass]) -> Vec<Task> {
    stations
        .iter()
        .flat_map(|s| {
            classes.iter().map(move |c| Task {
                station_id: s.clone(),
                fare_class: *c,
            })
        })
        .collect()
}

/// Seed of the `index`-th task, derived from the run seed.
pub fn task_seed(run_seed: u64, index: usize) -> u64 {
    derive_seed(run_seed, index as u64)
}

/// Runs `f` on a pool of `jobs` threads, or on the global pool for `None`.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| PipelineError::Pool(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Targets of one task aligned with the rows of `x`.
pub fn targets_for(demand: &DemandSet, task: &Task, x: &FeatureMatrix) -> Array2<f64> {
    demand.targets(&task.station_id, task.fare_class, &x.dates)
}

/// Fits one model per task on the training design matrix `x`; `specs[i]`
/// is used for `tasks[i]`, with its seed replaced by the task seed.
pub fn train_models(
    specs: &[RegressorSpec],
    run_seed: u64,
    x: &FeatureMatrix,
    demand: &DemandSet,
    tasks: &[Task],
) -> Result<Vec<FittedModel>> {
    assert_eq!(specs.len(), tasks.len(), "one spec per task");
    tasks
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let spec = specs[i].clone().with_seed(task_seed(run_seed, i));
            let y = targets_for(demand, t, x);
            Ok(models::fit(&spec, x, &y)?.with_scope(&t.station_id, t.fare_class))
        })
        .collect()
}

/// Predictions of every model on `x`, paired with the observed demand and
/// optionally scaled by the trend table.
pub fn forecast(
    models: &[FittedModel],
    x: &FeatureMatrix,
    demand: &DemandSet,
    trend: Option<&TrendTable>,
) -> Result<Vec<StationForecast>> {
    models
        .par_iter()
        .map(|m| {
            let mut predicted = m.predict(x)?;
            if let Some(t) = trend {
                predicted = apply_trend(&predicted, t, m.station_id(), m.fare_class())?;
            }
            Ok(StationForecast {
                station_id: m.station_id().to_string(),
                fare_class: m.fare_class(),
                dates: x.dates.clone(),
                observed: demand.targets(m.station_id(), m.fare_class(), &x.dates),
                predicted,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{build_design_matrix, EncodingOptions, FeatureSetId};
    use crate::ingest::DateRange;
    use crate::models::ModelFamily;
    use crate::synthgen::{generate, NoiseLaw, SynthConfig};
    use chrono::NaiveDate;

    #[test]
    fn seeds_are_per_task_and_models_scoped() {
        let d = |s: &str| NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap();
        let mut cfg = SynthConfig::new(2, 1, 2, DateRange::new(d("2015-01-01"), d("2015-04-30")), 3);
        cfg.noise = NoiseLaw::None;
        let data = generate(&cfg).unwrap();
        let demand = data.demand();
        let x = build_design_matrix(
            &data.calendar,
            &data.events,
            &data.manifest,
            &cfg.range,
            FeatureSetId::D2,
            &EncodingOptions::default(),
        )
        .unwrap();
        let t = tasks(&data.manifest.station_ids(), &[FareClass::All, FareClass::Op]);
        assert_eq!(t.len(), 4);
        let specs = vec![RegressorSpec::new(ModelFamily::Rf).with("n_estimators", 4i64); t.len()];
        let a = with_jobs(Some(2), || train_models(&specs, 9, &x, &demand, &t)).unwrap().unwrap();
        let b = with_jobs(Some(1), || train_models(&specs, 9, &x, &demand, &t)).unwrap().unwrap();
        assert_eq!(a, b);
        assert_eq!(a[1].station_id(), "S000");
        assert_eq!(a[1].fare_class(), FareClass::Op);
        assert_ne!(a[0].spec().seed, a[1].spec().seed);
        let f = forecast(&a, &x, &demand, None).unwrap();
        assert_eq!(f[0].observed, demand.targets("S000", FareClass::All, &x.dates));
        assert_eq!(f[0].predicted.dim(), (x.n_rows(), 96));
    }
}
