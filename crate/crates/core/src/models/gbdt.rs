//! Squared-loss gradient boosting, one boosted sequence per output column.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::params::{derive_seed, GbdtParams};
use super::tree::RegressionTree;
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedOutput {
    pub init: f64,
    pub stages: Vec<RegressionTree>,
    /// Training sum of squared residuals after 0, 1, .., n stages.
    pub train_sse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoosting {
    learning_rate: f64,
    outputs: Vec<BoostedOutput>,
}

impl GradientBoosting {
    pub fn fit(x: &FeatureMatrix, y: ArrayView2<f64>, params: &GbdtParams, seed: u64) -> GradientBoosting {
        let n = x.n_rows();
        let weights = vec![1u32; n];
        let outputs = (0..y.ncols())
            .into_par_iter()
            .map(|k| {
                let target = y.column(k);
                let init = target.sum() / n as f64;
                let mut fitted = Array1::from_elem(n, init);
                let mut residual: Array2<f64> = (&target - &fitted).insert_axis(Axis(1));
                let mut train_sse = vec![residual.iter().map(|r| r * r).sum::<f64>()];
                let mut stages = Vec::with_capacity(params.n_estimators);
                for m in 0..params.n_estimators {
                    let stream = (k as u64) << 32 | m as u64;
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream));
                    let tree = RegressionTree::fit(x, residual.view(), &weights, &params.tree, &mut rng);
                    for i in 0..n {
                        fitted[i] += params.learning_rate * tree.predict_row(x, i)[0];
                        residual[[i, 0]] = target[i] - fitted[i];
                    }
                    train_sse.push(residual.iter().map(|r| r * r).sum());
                    stages.push(tree);
                }
                BoostedOutput {
                    init,
                    stages,
                    train_sse,
                }
            })
            .collect();
        GradientBoosting {
            learning_rate: params.learning_rate,
            outputs,
        }
    }

    pub fn outputs(&self) -> &[BoostedOutput] {
        &self.outputs
    }

    pub fn trees(&self) -> impl Iterator<Item = &RegressionTree> {
        self.outputs.iter().flat_map(|o| o.stages.iter())
    }

    /// Pooled training MSE after each stage (index 0 = base model).
    pub fn stage_losses(&self, n_rows: usize) -> Vec<f64> {
        let stages = self.outputs.first().map_or(0, |o| o.train_sse.len());
        (0..stages)
            .map(|s| self.outputs.iter().map(|o| o.train_sse[s]).sum::<f64>() / (n_rows * self.outputs.len()) as f64)
            .collect()
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Array2<f64> {
        let mut out = Array2::zeros((x.n_rows(), self.outputs.len()));
        for (k, o) in self.outputs.iter().enumerate() {
            for i in 0..x.n_rows() {
                let boost: f64 = o.stages.iter().map(|t| t.predict_row(x, i)[0]).sum();
                out[[i, k]] = o.init + self.learning_rate * boost;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::params::TreeParams;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn zero_stages_is_column_mean() {
        let x = FeatureMatrix::from_dense(&array![[0.0], [1.0], [2.0]], None);
        let y = array![[1.0, 10.0], [2.0, 20.0], [6.0, 30.0]];
        let params = GbdtParams {
            n_estimators: 0,
            ..Default::default()
        };
        let g = GradientBoosting::fit(&x, y.view(), &params, 0);
        let p = g.predict(&x);
        for row in p.rows() {
            assert_eq!(row.to_vec(), vec![3.0, 20.0]);
        }
    }

    #[test]
    fn one_full_stage_interpolates() {
        let x = FeatureMatrix::from_dense(&array![[0.0], [1.0]], None);
        let y = array![[4.0], [10.0]];
        let params = GbdtParams {
            n_estimators: 1,
            learning_rate: 1.0,
            tree: TreeParams::default(),
        };
        let g = GradientBoosting::fit(&x, y.view(), &params, 0);
        let p = g.predict(&x);
        assert!((p[[0, 0]] - 4.0).abs() < 1e-12 && (p[[1, 0]] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn stage_losses_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xd = Array2::from_shape_fn((30, 5), |_| rng.gen::<f64>());
        let y = Array2::from_shape_fn((30, 2), |(i, k)| xd[[i, k]] * 3.0 + rng.gen::<f64>());
        let x = FeatureMatrix::from_dense(&xd, None);
        let params = GbdtParams {
            n_estimators: 25,
            tree: TreeParams {
                min_samples_leaf: 3,
                ..Default::default()
            },
            ..Default::default()
        };
        let g = GradientBoosting::fit(&x, y.view(), &params, 3);
        let losses = g.stage_losses(30);
        assert_eq!(losses.len(), 26);
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{w:?}");
        }
    }
}
