//! Mean-decrease-impurity importance for tree ensembles and its rollup into
//! date, event and category groups.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::ColumnLabel;
use crate::ingest::DayFlags;
use crate::models::tree::NodeKind;
use crate::models::{FittedModel, ModelFamily, RegressionTree};

#[derive(Debug, Error, PartialEq)]
pub enum ImportanceError {
    #[error("node {0} is a leaf")]
    Leaf(usize),
    #[error("feature importance is only defined for tree ensembles, not {0}")]
    NotTreeBased(ModelFamily),
    #[error("no splits")]
    NoSplits,
    #[error("{0}")]
    Unclassifiable(String),
}

pub type Result<T> = std::result::Result<T, ImportanceError>;

/// `w_j C_j - w_left C_left - w_right C_right` for internal node `j`.
pub fn node_importance(tree: &RegressionTree, node: usize) -> Result<f64> {
    tree.node_impurity_decrease(node).ok_or(ImportanceError::Leaf(node))
}

/// Per-feature share of the tree's total impurity decrease; `None` when the
/// total is zero (a stump or only zero-gain splits).
pub fn tree_importances(tree: &RegressionTree, n_features: usize) -> Option<Vec<f64>> {
    let mut acc = vec![0.0; n_features];
    for (j, node) in tree.nodes().iter().enumerate() {
        if let NodeKind::Split { feature, .. } = node.kind {
            acc[feature] += tree.node_impurity_decrease(j).expect("split node");
        }
    }
    let total: f64 = acc.iter().sum();
    (total > 0.0).then(|| acc.into_iter().map(|v| v / total).collect())
}

/// Mean over trees of the per-tree normalized importances.
pub fn ensemble_importances(trees: &[&RegressionTree], n_features: usize) -> Result<Vec<f64>> {
    let per_tree: Vec<Vec<f64>> = trees
        .par_iter()
        .filter_map(|t| tree_importances(t, n_features))
        .collect();
    if per_tree.is_empty() {
        return Err(ImportanceError::NoSplits);
    }
    let mut mean = vec![0.0; n_features];
    for v in &per_tree {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let total: f64 = mean.iter().sum();
    Ok(mean.into_iter().map(|v| v / total).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector {
    pub column_names: Vec<String>,
    /// Non-negative, sums to 1.
    pub values: Vec<f64>,
}

impl ImportanceVector {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("feature,importance\n");
        for (n, v) in self.column_names.iter().zip(&self.values) {
            s.push_str(&format!("{n},{v:.12}\n"));
        }
        s
    }
}

pub fn feature_importances(model: &FittedModel) -> Result<ImportanceVector> {
    let trees = model
        .trees()
        .ok_or(ImportanceError::NotTreeBased(model.spec().family))?;
    let values = ensemble_importances(&trees, model.width())?;
    Ok(ImportanceVector {
        column_names: model.column_names().to_vec(),
        values,
    })
}

pub const GROUP_MONTH: &str = "month";
pub const GROUP_DAY_OF_WEEK: &str = "day_of_week";
pub const GROUP_EVENT: &str = "event";
pub const GROUP_CATEGORY: &str = "category";

fn group_of(label: &ColumnLabel) -> &'static str {
    match label {
        ColumnLabel::Month(_) => GROUP_MONTH,
        ColumnLabel::DayOfWeek(_) => GROUP_DAY_OF_WEEK,
        ColumnLabel::Flag(i) => DayFlags::NAMES[*i],
        ColumnLabel::Event { .. } => GROUP_EVENT,
        ColumnLabel::Category { .. } => GROUP_CATEGORY,
    }
}

/// Group names in reporting order.
pub fn group_names() -> Vec<&'static str> {
    let mut g = vec![GROUP_MONTH, GROUP_DAY_OF_WEEK];
    g.extend(DayFlags::NAMES);
    g.extend([GROUP_EVENT, GROUP_CATEGORY]);
    g
}

/// Percentage per group, in reporting order, for groups with at least one
/// column. Sums to 100.
pub fn aggregate_importance(vec: &ImportanceVector) -> Result<Vec<(String, f64)>> {
    let names = group_names();
    let mut sums = vec![0.0; names.len()];
    let mut present = vec![false; names.len()];
    for (name, v) in vec.column_names.iter().zip(&vec.values) {
        let label: ColumnLabel = name.parse().map_err(ImportanceError::Unclassifiable)?;
        let g = names.iter().position(|n| *n == group_of(&label)).expect("known group");
        sums[g] += v;
        present[g] = true;
    }
    let total: f64 = sums.iter().sum();
    if !(total > 0.0) {
        return Err(ImportanceError::NoSplits);
    }
    Ok(names
        .into_iter()
        .zip(sums)
        .zip(present)
        .filter(|(_, p)| *p)
        .map(|((n, s), _)| (n.to_string(), 100.0 * s / total))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{column_labels, FeatureMatrix, FeatureSetId};
    use crate::ingest::NetworkManifest;
    use crate::models::params::TreeParams;
    use crate::models::{fit, RegressorSpec};
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tree(x: &Array2<f64>, y: &Array2<f64>) -> RegressionTree {
        let fm = FeatureMatrix::from_dense(x, None);
        RegressionTree::fit(&fm, y.view(), &vec![1; x.nrows()], &TreeParams::default(), &mut ChaCha8Rng::seed_from_u64(0))
    }

    #[test]
    fn perfect_two_row_split() {
        let t = tree(&array![[0.0], [1.0]], &array![[2.0, 0.0], [6.0, 4.0]]);
        // Total SSE of the root: (2² + 2²) + (2² + 2²) = 16.
        assert!((node_importance(&t, 0).unwrap() - 16.0).abs() < 1e-12);
        assert_eq!(node_importance(&t, 1), Err(ImportanceError::Leaf(1)));
    }

    #[test]
    fn hand_computed_ratios() {
        // Feature 0 separates {0,1} from {2,3}; feature 1 then separates
        // within each half.
        let x = array![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
        let y = array![[0.0], [2.0], [10.0], [12.0]];
        let t = tree(&x, &y);
        let mean = 6.0;
        let root: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
        let children = 2.0 + 2.0; // each half has SSE (1² + 1²)
        let expected_f0 = root - children;
        let expected_f1 = children;
        let imp = tree_importances(&t, 2).unwrap();
        assert!((imp[0] - expected_f0 / root).abs() < 1e-12);
        assert!((imp[1] - expected_f1 / root).abs() < 1e-12);
    }

    #[test]
    fn single_informative_feature_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((40, 4), |_| rng.gen_range(0..5) as f64);
        let y = Array2::from_shape_fn((40, 3), |(i, k)| if x[[i, 2]] > 1.5 { 50.0 + k as f64 } else { 5.0 });
        let fm = FeatureMatrix::from_dense(&x, None);
        let rf = fit(&RegressorSpec::new(ModelFamily::Rf).with("n_estimators", 10i64), &fm, &y).unwrap();
        let v = feature_importances(&rf).unwrap();
        assert!((v.values.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((v.values[2] - 1.0).abs() < 1e-12, "{:?}", v.values);

        let ha = fit(&RegressorSpec::new(ModelFamily::Ha), &fm, &y).unwrap();
        assert_eq!(feature_importances(&ha), Err(ImportanceError::NotTreeBased(ModelFamily::Ha)));
        let flat = Array2::from_elem((40, 3), 7.0);
        let stump = fit(&RegressorSpec::new(ModelFamily::Rf).with("n_estimators", 3i64), &fm, &flat).unwrap();
        assert_eq!(feature_importances(&stump), Err(ImportanceError::NoSplits));
    }

    #[test]
    fn rollup_groups() {
        let m = NetworkManifest::generated(3, 2, vec!["a".into(), "b".into(), "c".into()]);
        let names: Vec<String> = column_labels(FeatureSetId::D4, &m).iter().map(|l| l.to_string()).collect();
        let n = names.len();
        assert_eq!(n, 2328);
        let uniform = ImportanceVector {
            column_names: names.clone(),
            values: vec![1.0 / n as f64; n],
        };
        let r = aggregate_importance(&uniform).unwrap();
        let get = |g: &str| r.iter().find(|(n, _)| n == g).unwrap().1;
        assert!((r.iter().map(|x| x.1).sum::<f64>() - 100.0).abs() < 1e-9);
        assert!((get("month") - 100.0 * 11.0 / n as f64).abs() < 1e-9);
        assert!((get("day_of_week") - 100.0 * 6.0 / n as f64).abs() < 1e-9);
        assert!((get("holiday") - 100.0 / n as f64).abs() < 1e-9);
        assert!((get("event") - 100.0 * 576.0 / n as f64).abs() < 1e-9);
        assert!((get("category") - 100.0 * 1728.0 / n as f64).abs() < 1e-9);

        let mut on_c = vec![0.0; n];
        on_c[30] = 0.5;
        on_c[40] = 0.5;
        assert!(names[30].starts_with("C/") && names[40].starts_with("C/"));
        let r = aggregate_importance(&ImportanceVector { column_names: names, values: on_c }).unwrap();
        assert_eq!(r.iter().find(|(g, _)| g == "event").unwrap().1, 100.0);

        let bad = ImportanceVector {
            column_names: vec!["x0".into()],
            values: vec![1.0],
        };
        assert!(aggregate_importance(&bad).unwrap_err().to_string().contains("unclassifiable"));
    }
}
