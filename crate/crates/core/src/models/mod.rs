//! Multi-output regressors behind one fit/predict contract.

pub mod enet;
pub mod forest;
pub mod gbdt;
pub mod ha;
pub mod params;
pub mod tree;

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureMatrix, FeatureSetId};
use crate::ingest::FareClass;

pub use enet::ElasticNet;
pub use forest::RandomForest;
pub use gbdt::GradientBoosting;
pub use ha::HistoricalAverage;
pub use params::{GbdtParams, HyperValue, LrParams, MaxFeatures, ModelFamily, RegressorSpec, RfParams, TreeParams};
pub use tree::RegressionTree;

/// Version tag written into every model file.
pub const MODEL_FORMAT: &str = "ridership-model/1";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("historical average infeasible for high-dimensional feature sets ({0})")]
    HaInfeasible(FeatureSetId),
    #[error("input width {found} does not match training width {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid hyperparameter `{name}`: {reason}")]
    InvalidHyperparameter { name: String, reason: String },
    #[error("unknown hyperparameter `{name}` for family {family}")]
    UnknownHyperparameter { family: ModelFamily, name: String },
    #[error("model file {path}: {message}")]
    Format { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelParams {
    Ha(HistoricalAverage),
    Lr(ElasticNet),
    Rf(RandomForest),
    Gbdt(GradientBoosting),
}

/// A trained per-station regressor. Immutable once fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    format: String,
    spec: RegressorSpec,
    feature_set: Option<FeatureSetId>,
    station_id: String,
    fare_class: FareClass,
    column_names: Vec<String>,
    n_outputs: usize,
    params: ModelParams,
    warnings: Vec<String>,
}

/// Fits `spec` on design matrix `x` and targets `y` (rows × outputs).
pub fn fit(spec: &RegressorSpec, x: &FeatureMatrix, y: &Array2<f64>) -> Result<FittedModel> {
    spec.validate()?;
    if x.n_rows() != y.nrows() || x.n_rows() == 0 {
        return Err(ModelError::Shape(format!(
            "X has {} rows, Y has {} rows (need equal and >= 1)",
            x.n_rows(),
            y.nrows()
        )));
    }
    if y.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(ModelError::Shape("targets must be finite and non-negative".into()));
    }
    let mut warnings = Vec::new();
    let params = match spec.family {
        ModelFamily::Ha => {
            if let Some(set) = x.set_id.filter(|s| s.has_events()) {
                return Err(ModelError::HaInfeasible(set));
            }
            ModelParams::Ha(HistoricalAverage::fit(x, y.view()))
        }
        ModelFamily::Lr => {
            let p = LrParams::from_spec(spec)?;
            let m = ElasticNet::fit(x, y.view(), &p);
            let bad = m.unconverged_outputs();
            if !bad.is_empty() {
                warnings.push(format!(
                    "coordinate descent did not converge within {} sweeps for {} of {} outputs",
                    p.max_iter,
                    bad.len(),
                    y.ncols()
                ));
            }
            ModelParams::Lr(m)
        }
        ModelFamily::Rf => {
            let p = RfParams::from_spec(spec)?;
            ModelParams::Rf(RandomForest::fit(x, y.view(), &p, spec.seed))
        }
        ModelFamily::Gbdt => {
            let p = GbdtParams::from_spec(spec)?;
            ModelParams::Gbdt(GradientBoosting::fit(x, y.view(), &p, spec.seed))
        }
    };
    Ok(FittedModel {
        format: MODEL_FORMAT.to_string(),
        spec: spec.clone(),
        feature_set: x.set_id,
        station_id: String::new(),
        fare_class: FareClass::All,
        column_names: x.column_names.clone(),
        n_outputs: y.ncols(),
        params,
        warnings,
    })
}

impl FittedModel {
    /// Tags the model with the station and fare class it was trained for.
    pub fn with_scope(mut self, station_id: &str, fare_class: FareClass) -> Self {
        self.station_id = station_id.to_string();
        self.fare_class = fare_class;
        self
    }

    pub fn spec(&self) -> &RegressorSpec {
        &self.spec
    }

    pub fn feature_set(&self) -> Option<FeatureSetId> {
        self.feature_set
    }

    pub fn station_id(&self) -> &str {
        &self.station_id
    }

    pub fn fare_class(&self) -> FareClass {
        self.fare_class
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn width(&self) -> usize {
        self.column_names.len()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Predictions before clipping; may be negative for LR and GBDT.
    pub fn predict_raw(&self, x: &FeatureMatrix) -> Result<Array2<f64>> {
        if x.width() != self.width() {
            return Err(ModelError::WidthMismatch {
                expected: self.width(),
                found: x.width(),
            });
        }
        Ok(match &self.params {
            ModelParams::Ha(m) => m.predict(x),
            ModelParams::Lr(m) => m.predict(x),
            ModelParams::Rf(m) => m.predict(x),
            ModelParams::Gbdt(m) => m.predict(x),
        })
    }

    /// Predictions clipped to be non-negative (rows × outputs).
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Array2<f64>> {
        let mut p = self.predict_raw(x)?;
        p.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
        Ok(p)
    }

    /// Trees of a split-based model; `None` for HA and LR.
    pub fn trees(&self) -> Option<Vec<&RegressionTree>> {
        match &self.params {
            ModelParams::Rf(f) => Some(f.trees().iter().collect()),
            ModelParams::Gbdt(g) => Some(g.trees().collect()),
            _ => None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let err = |message: String| ModelError::Format {
            path: path.display().to_string(),
            message,
        };
        let bytes = rmp_serde::to_vec_named(self).map_err(|e| err(e.to_string()))?;
        crate::io::write_atomic(path, &bytes).map_err(|e| err(e.to_string()))
    }

    /// Loads a model; when `expected_width` is given, refuses a mismatch.
    pub fn load(path: &Path, expected_width: Option<usize>) -> Result<FittedModel> {
        let err = |message: String| ModelError::Format {
            path: path.display().to_string(),
            message,
        };
        let bytes = std::fs::read(path).map_err(|e| err(e.to_string()))?;
        let model: FittedModel = rmp_serde::from_slice(&bytes).map_err(|e| err(e.to_string()))?;
        if model.format != MODEL_FORMAT {
            return Err(err(format!("unsupported format tag `{}`", model.format)));
        }
        if let Some(w) = expected_width {
            if w != model.width() {
                return Err(ModelError::WidthMismatch {
                    expected: model.width(),
                    found: w,
                });
            }
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy() -> (FeatureMatrix, Array2<f64>) {
        let x = FeatureMatrix::from_dense(&array![[0.0, 1.0], [1.0, 0.0], [1.0, 1.0], [0.0, 0.0]], None);
        let y = array![[1.0, 2.0], [3.0, 0.0], [5.0, 1.0], [0.0, 4.0]];
        (x, y)
    }

    #[test]
    fn every_family_predicts_finite_shape() {
        let (x, y) = toy();
        for f in ModelFamily::ALL {
            let spec = match f {
                ModelFamily::Rf | ModelFamily::Gbdt => RegressorSpec::new(f).with("n_estimators", 5i64),
                _ => RegressorSpec::new(f),
            };
            let m = fit(&spec, &x, &y).unwrap();
            let p = m.predict(&x).unwrap();
            assert_eq!(p.dim(), (4, 2));
            assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }

    #[test]
    fn width_mismatch_reports_both() {
        let (x, y) = toy();
        let m = fit(&RegressorSpec::new(ModelFamily::Ha), &x, &y).unwrap();
        let wide = FeatureMatrix::from_dense(&array![[0.0, 1.0, 2.0]], None);
        let err = m.predict(&wide).unwrap_err().to_string();
        assert!(err.contains('3') && err.contains('2'), "{err}");
    }

    #[test]
    fn negative_predictions_clipped() {
        let x = FeatureMatrix::from_dense(&array![[0.0], [1.0], [2.0]], None);
        let y = array![[4.0], [2.0], [0.0]];
        let spec = RegressorSpec::new(ModelFamily::Lr).with("alpha", 0.0);
        let m = fit(&spec, &x, &y).unwrap();
        let probe = FeatureMatrix::from_dense(&array![[5.0]], None);
        assert!(m.predict_raw(&probe).unwrap()[[0, 0]] < 0.0);
        assert_eq!(m.predict(&probe).unwrap()[[0, 0]], 0.0);
    }

    #[test]
    fn rejects_bad_targets() {
        let (x, _) = toy();
        let y = array![[1.0], [-1.0], [0.0], [0.0]];
        assert!(matches!(fit(&RegressorSpec::new(ModelFamily::Ha), &x, &y), Err(ModelError::Shape(_))));
    }

    #[test]
    fn save_load_roundtrip_and_width_guard() {
        let (x, y) = toy();
        let spec = RegressorSpec::new(ModelFamily::Rf).with("n_estimators", 3i64).with_seed(4);
        let m = fit(&spec, &x, &y).unwrap().with_scope("S001", FareClass::Op);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.model");
        m.save(&path).unwrap();
        let back = FittedModel::load(&path, Some(2)).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.station_id(), "S001");
        assert!(matches!(
            FittedModel::load(&path, Some(3)),
            Err(ModelError::WidthMismatch { expected: 2, found: 3 })
        ));
    }
}
