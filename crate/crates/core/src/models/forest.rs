//! Bagged forest of multi-output regression trees.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::params::{derive_seed, RfParams};
use super::tree::RegressionTree;
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<RegressionTree>,
}

impl RandomForest {
    /// Tree `t` draws its bootstrap sample and feature subsets from a seed
    /// derived from `(seed, t)`, so results do not depend on scheduling.
    pub fn fit(x: &FeatureMatrix, y: ArrayView2<f64>, params: &RfParams, seed: u64) -> RandomForest {
        let n = x.n_rows();
        let trees = (0..params.n_estimators)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
                let weights = if params.bootstrap {
                    let mut w = vec![0u32; n];
                    for _ in 0..n {
                        w[rng.gen_range(0..n)] += 1;
                    }
                    w
                } else {
                    vec![1u32; n]
                };
                RegressionTree::fit(x, y, &weights, &params.tree, &mut rng)
            })
            .collect();
        RandomForest { trees }
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    /// Mean of the trees' predictions.
    pub fn predict(&self, x: &FeatureMatrix) -> Array2<f64> {
        let m = self.trees[0].n_outputs();
        let mut out = Array2::zeros((x.n_rows(), m));
        for i in 0..x.n_rows() {
            let mut row = out.row_mut(i);
            for t in &self.trees {
                for (o, v) in row.iter_mut().zip(t.predict_row(x, i)) {
                    *o += *v;
                }
            }
            row.mapv_inplace(|s| s / self.trees.len() as f64);
        }
        out
    }
}
