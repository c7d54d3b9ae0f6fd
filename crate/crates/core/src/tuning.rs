//! Grid search with k-fold cross-validation under a wall-clock budget.

use std::time::{Duration, Instant};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluate::rmse;
use crate::features::FeatureMatrix;
use crate::models::params::derive_seed;
use crate::models::{self, HyperValue, ModelError, ModelFamily, RegressorSpec};

pub const DEFAULT_FOLDS: usize = 5;
const MIN_ROWS: usize = 5;
/// Seed stream reserved for fold assignment.
const FOLD_STREAM: u64 = 0xF01D;

#[derive(Debug, Error)]
pub enum TuningError {
    #[error("empty grid")]
    EmptyGrid,
    #[error("grid axis `{0}` has no values")]
    EmptyAxis(String),
    #[error("need at least {MIN_ROWS} rows for cross-validation, got {0}")]
    TooFewRows(usize),
    #[error("cannot split {n} rows into {k} folds")]
    FoldCount { n: usize, k: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, TuningError>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldStrategy {
    /// Rows shuffled uniformly at random before being dealt into folds.
    #[default]
    Random,
    /// Contiguous blocks of rows in their original (date) order.
    Blocked,
}

/// Splits `0..n` into `k` disjoint folds whose sizes differ by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    split_folds(n, k, seed, FoldStrategy::Random)
}

pub fn split_folds(n: usize, k: usize, seed: u64, strategy: FoldStrategy) -> Result<Vec<Vec<usize>>> {
    if k < 2 || n < k {
        return Err(TuningError::FoldCount { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    if strategy == FoldStrategy::Random {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut at = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut fold = order[at..at + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        at += size;
    }
    Ok(folds)
}

/// Hyperparameter grid for one family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub family: ModelFamily,
    /// Axes in declaration order; enumeration varies the last axis fastest.
    pub axes: Vec<(String, Vec<HyperValue>)>,
    /// `None` means no limit.
    pub budget: Option<Duration>,
    pub seed: u64,
    pub folds: usize,
    pub strategy: FoldStrategy,
}

impl GridSpec {
    /// Validates every axis value against the family's domain.
    pub fn new(family: ModelFamily, axes: Vec<(String, Vec<HyperValue>)>) -> Result<GridSpec> {
        if axes.is_empty() {
            return Err(TuningError::EmptyGrid);
        }
        for (name, values) in &axes {
            if values.is_empty() {
                return Err(TuningError::EmptyAxis(name.clone()));
            }
            for v in values {
                RegressorSpec::new(family).with(name, v.clone()).validate()?;
            }
        }
        Ok(GridSpec {
            family,
            axes,
            budget: None,
            seed: 0,
            folds: DEFAULT_FOLDS,
            strategy: FoldStrategy::Random,
        })
    }

    pub fn with_budget(mut self, budget: Option<Duration>) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// The tested-values table of the reference study; `None` for HA, which
    /// has nothing to tune.
    pub fn reference(family: ModelFamily) -> Option<GridSpec> {
        let ints = |v: &[i64]| v.iter().map(|&x| HyperValue::Int(x)).collect::<Vec<_>>();
        let axes = match family {
            ModelFamily::Ha => return None,
            ModelFamily::Lr => vec![
                ("alpha".to_string(), vec![0.1.into(), 1.0.into(), 10.0.into()]),
                ("l1_ratio".to_string(), vec![0.25.into(), 0.5.into(), 0.75.into(), 1.0.into()]),
                ("normalise".to_string(), vec![true.into(), false.into()]),
            ],
            ModelFamily::Rf | ModelFamily::Gbdt => vec![
                ("n_estimators".to_string(), ints(&[100, 150, 200])),
                ("min_samples_split".to_string(), ints(&[2, 5, 10])),
                ("min_samples_leaf".to_string(), ints(&[1, 5, 10])),
                ("max_features".to_string(), vec!["auto".into()]),
            ],
        };
        Some(GridSpec::new(family, axes).expect("reference grid is valid"))
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Specs in cartesian-product order.
    pub fn specs(&self) -> Vec<RegressorSpec> {
        let mut out = vec![RegressorSpec::new(self.family).with_seed(self.seed)];
        for (name, values) in &self.axes {
            out = out
                .into_iter()
                .flat_map(|s| values.iter().map(move |v| s.clone().with(name, v.clone())))
                .collect();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub spec: RegressorSpec,
    pub mean_rmse: f64,
    pub fold_rmse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub best_spec: RegressorSpec,
    /// Evaluated specs in enumeration order.
    pub cv_scores: Vec<CvScore>,
    /// The budget ran out before every spec was evaluated.
    pub exhausted: bool,
}

/// Mean over folds of the validation RMSE pooled over all outputs.
pub fn cross_validate(spec: &RegressorSpec, x: &FeatureMatrix, y: &Array2<f64>, folds: &[Vec<usize>]) -> Result<CvScore> {
    let mut fold_rmse = Vec::with_capacity(folds.len());
    for (f, held_out) in folds.iter().enumerate() {
        let train: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, rows)| rows.iter().copied())
            .collect();
        let mut train = train;
        train.sort_unstable();
        let model = models::fit(spec, &x.select_rows(&train), &y.select(Axis(0), &train))?;
        let pred = model.predict(&x.select_rows(held_out))?;
        let obs = y.select(Axis(0), held_out);
        let score = rmse(obs.as_slice().expect("standard layout"), pred.as_slice().expect("standard layout"))
            .expect("folds are non-empty");
        fold_rmse.push(score);
    }
    let mean_rmse = fold_rmse.iter().sum::<f64>() / fold_rmse.len() as f64;
    Ok(CvScore {
        spec: spec.clone(),
        mean_rmse,
        fold_rmse,
    })
}

/// Evaluates grid points in order until the grid or the budget runs out.
/// The budget is only checked between grid points.
pub fn grid_search(grid: &GridSpec, x: &FeatureMatrix, y: &Array2<f64>) -> Result<TuningResult> {
    let specs = grid.specs();
    if grid.axes.is_empty() || specs.is_empty() {
        return Err(TuningError::EmptyGrid);
    }
    if x.n_rows() < MIN_ROWS {
        return Err(TuningError::TooFewRows(x.n_rows()));
    }
    let folds = split_folds(x.n_rows(), grid.folds, derive_seed(grid.seed, FOLD_STREAM), grid.strategy)?;
    let start = Instant::now();
    let mut cv_scores = Vec::new();
    for spec in &specs {
        if grid.budget.is_some_and(|b| start.elapsed() >= b) {
            break;
        }
        cv_scores.push(cross_validate(spec, x, y, &folds)?);
    }
    let exhausted = cv_scores.len() < specs.len();
    // Strict comparison keeps the earliest spec among ties.
    let best = cv_scores
        .iter()
        .fold(None::<&CvScore>, |best, s| match best {
            Some(b) if b.mean_rmse <= s.mean_rmse => Some(b),
            _ => Some(s),
        })
        .map(|s| s.spec.clone());
    Ok(TuningResult {
        best_spec: best.unwrap_or_else(|| RegressorSpec::new(grid.family).with_seed(grid.seed)),
        cv_scores,
        exhausted,
    })
}
