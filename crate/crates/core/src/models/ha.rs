//! Historical average: slot-wise mean of training days with the same feature key.
//!
//! Keys unseen in training fall back to coarser keys: special-day flags are
//! ignored first, then the month, then the day of week, ending at the global
//! slot-wise mean.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::features::{ColumnLabel, FeatureMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Level {
    /// Columns that make up the key at this level.
    columns: Vec<usize>,
    /// (key, slot-wise mean); key = bit patterns of the key columns.
    table: Vec<(Vec<u64>, Vec<f64>)>,
}

impl Level {
    fn lookup(&self, key: &[u64]) -> Option<&[f64]> {
        self.table
            .binary_search_by(|(k, _)| k.as_slice().cmp(key))
            .ok()
            .map(|p| self.table[p].1.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalAverage {
    levels: Vec<Level>,
}

fn key_of(x: &FeatureMatrix, i: usize, columns: &[usize]) -> Vec<u64> {
    columns.iter().map(|&j| x.get(i, j).to_bits()).collect()
}

/// Column subsets for each fallback level, finest first.
fn fallback_columns(x: &FeatureMatrix) -> Vec<Vec<usize>> {
    let all: Vec<usize> = (0..x.width()).collect();
    let Ok(labels) = x.labels() else {
        return vec![all, Vec::new()];
    };
    let pick = |keep: &dyn Fn(&ColumnLabel) -> bool| -> Vec<usize> {
        labels
            .iter()
            .enumerate()
            .filter(|(_, l)| keep(l))
            .map(|(j, _)| j)
            .collect()
    };
    let calendar = pick(&|l| matches!(l, ColumnLabel::Month(_) | ColumnLabel::DayOfWeek(_)));
    let dow = pick(&|l| matches!(l, ColumnLabel::DayOfWeek(_)));
    let mut levels = vec![all, calendar, dow, Vec::new()];
    levels.dedup();
    levels
}

impl HistoricalAverage {
    pub fn fit(x: &FeatureMatrix, y: ArrayView2<f64>) -> HistoricalAverage {
        let levels = fallback_columns(x)
            .into_iter()
            .map(|columns| {
                let mut groups: BTreeMap<Vec<u64>, (Vec<f64>, usize)> = BTreeMap::new();
                for i in 0..x.n_rows() {
                    let entry = groups
                        .entry(key_of(x, i, &columns))
                        .or_insert_with(|| (vec![0.0; y.ncols()], 0));
                    for (s, v) in entry.0.iter_mut().zip(y.row(i)) {
                        *s += v;
                    }
                    entry.1 += 1;
                }
                let table = groups
                    .into_iter()
                    .map(|(k, (sums, count))| (k, sums.into_iter().map(|s| s / count as f64).collect()))
                    .collect();
                Level { columns, table }
            })
            .collect();
        HistoricalAverage { levels }
    }

    /// Fallback level (0 = exact key) used for row `i`.
    pub fn level_for(&self, x: &FeatureMatrix, i: usize) -> usize {
        self.levels
            .iter()
            .position(|l| l.lookup(&key_of(x, i, &l.columns)).is_some())
            .expect("the global level always matches")
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Array2<f64> {
        let m = self.levels[0].table.first().map_or(0, |(_, v)| v.len());
        let mut out = Array2::zeros((x.n_rows(), m));
        for i in 0..x.n_rows() {
            let lvl = &self.levels[self.level_for(x, i)];
            let mean = lvl.lookup(&key_of(x, i, &lvl.columns)).expect("level matched");
            for (o, v) in out.row_mut(i).iter_mut().zip(mean) {
                *o = *v;
            }
        }
        out
    }
}
