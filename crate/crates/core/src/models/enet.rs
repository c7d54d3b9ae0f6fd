//! Elastic-net linear regression by cyclic coordinate descent.
//!
//! Each output column is solved independently for
//!
//! ```text
//! (1/2n)·‖y − Xw − b‖² + alpha·l1_ratio·‖w‖₁ + (alpha/2)·(1 − l1_ratio)·‖w‖²
//! ```
//!
//! Columns are centred implicitly so sparse inputs stay sparse: the residual
//! is kept as a sparse-updated vector plus one scalar offset.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::params::LrParams;
use crate::features::FeatureMatrix;

/// Column-compressed copy of the columns that have at least one non-zero.
struct Columns {
    n_rows: usize,
    /// (original column index, rows, values, mean, scale, scaled centred norm²)
    cols: Vec<Column>,
}

struct Column {
    index: usize,
    rows: Vec<u32>,
    vals: Vec<f64>,
    mean: f64,
    scale: f64,
    norm2: f64,
}

impl Columns {
    fn new(x: &FeatureMatrix, normalise: bool) -> Columns {
        let n = x.n_rows();
        let mut rows: Vec<Vec<u32>> = vec![Vec::new(); x.width()];
        let mut vals: Vec<Vec<f64>> = vec![Vec::new(); x.width()];
        for i in 0..n {
            let (idx, v) = x.row(i);
            for (&j, &val) in idx.iter().zip(v) {
                rows[j as usize].push(i as u32);
                vals[j as usize].push(val);
            }
        }
        let cols = rows
            .into_iter()
            .zip(vals)
            .enumerate()
            .filter(|(_, (r, _))| !r.is_empty())
            .map(|(index, (rows, vals))| {
                let sum: f64 = vals.iter().sum();
                let sq: f64 = vals.iter().map(|v| v * v).sum();
                let mean = sum / n as f64;
                let centred = (sq - n as f64 * mean * mean).max(0.0);
                let scale = if normalise && centred > 0.0 { 1.0 / centred.sqrt() } else { 1.0 };
                Column {
                    index,
                    rows,
                    vals,
                    mean,
                    scale,
                    norm2: centred * scale * scale,
                }
            })
            .collect();
        Columns { n_rows: n, cols }
    }
}

/// Result of solving one output column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSolution {
    pub intercept: f64,
    /// Non-zero coefficients in the original feature scale.
    pub coef: Vec<(u32, f64)>,
    pub n_sweeps: usize,
    pub converged: bool,
    /// Objective value after each sweep (index 0 = before the first sweep).
    #[serde(skip)]
    pub objective: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticNet {
    n_features: usize,
    outputs: Vec<ColumnSolution>,
}

impl ElasticNet {
    pub fn fit(x: &FeatureMatrix, y: ArrayView2<f64>, params: &LrParams) -> ElasticNet {
        let cols = Columns::new(x, params.normalise);
        let outputs = (0..y.ncols())
            .into_par_iter()
            .map(|k| solve_column(&cols, y.column(k), params))
            .collect();
        ElasticNet {
            n_features: x.width(),
            outputs,
        }
    }

    pub fn outputs(&self) -> &[ColumnSolution] {
        &self.outputs
    }

    /// Dense coefficient matrix, features × outputs.
    pub fn coefficients(&self) -> Array2<f64> {
        let mut w = Array2::zeros((self.n_features, self.outputs.len()));
        for (k, o) in self.outputs.iter().enumerate() {
            for &(j, v) in &o.coef {
                w[[j as usize, k]] = v;
            }
        }
        w
    }

    pub fn intercepts(&self) -> Vec<f64> {
        self.outputs.iter().map(|o| o.intercept).collect()
    }

    pub fn unconverged_outputs(&self) -> Vec<usize> {
        self.outputs
            .iter()
            .enumerate()
            .filter(|(_, o)| !o.converged)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Array2<f64> {
        let mut dense_coef = vec![0.0; self.n_features];
        let mut out = Array2::zeros((x.n_rows(), self.outputs.len()));
        for (k, o) in self.outputs.iter().enumerate() {
            for &(j, v) in &o.coef {
                dense_coef[j as usize] = v;
            }
            for i in 0..x.n_rows() {
                let (idx, vals) = x.row(i);
                let dot: f64 = idx.iter().zip(vals).map(|(&j, &v)| dense_coef[j as usize] * v).sum();
                out[[i, k]] = o.intercept + dot;
            }
            for &(j, _) in &o.coef {
                dense_coef[j as usize] = 0.0;
            }
        }
        out
    }
}

fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

struct Residual {
    sparse: Vec<f64>,
    offset: f64,
    sparse_sum: f64,
}

impl Residual {
    fn at(&self, i: usize) -> f64 {
        self.sparse[i] + self.offset
    }

    fn sum(&self) -> f64 {
        self.sparse_sum + self.sparse.len() as f64 * self.offset
    }

    fn norm2(&self) -> f64 {
        self.sparse.iter().map(|r| (r + self.offset).powi(2)).sum()
    }

    /// `Σ_i x̃_ij R_i` for the implicitly centred, scaled column.
    fn dot(&self, c: &Column) -> f64 {
        let raw: f64 = c.rows.iter().zip(&c.vals).map(|(&i, &v)| v * self.at(i as usize)).sum();
        c.scale * (raw - c.mean * self.sum())
    }

    /// `R -= delta · x̃_j`.
    fn axpy(&mut self, delta: f64, c: &Column) {
        for (&i, &v) in c.rows.iter().zip(&c.vals) {
            let d = delta * c.scale * v;
            self.sparse[i as usize] -= d;
            self.sparse_sum -= d;
        }
        self.offset += delta * c.scale * c.mean;
    }
}

fn solve_column(cols: &Columns, y: ArrayView1<f64>, p: &LrParams) -> ColumnSolution {
    let n = cols.n_rows as f64;
    let y_mean = y.sum() / n;
    let y_c: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let y_norm2: f64 = y_c.iter().map(|v| v * v).sum();
    let l1 = n * p.alpha * p.l1_ratio;
    let l2 = n * p.alpha * (1.0 - p.l1_ratio);

    let mut beta = vec![0.0; cols.cols.len()];
    let mut r = Residual {
        sparse_sum: y_c.iter().sum(),
        sparse: y_c.clone(),
        offset: 0.0,
    };
    let objective = |r: &Residual, beta: &[f64]| {
        let l1n: f64 = beta.iter().map(|b| b.abs()).sum();
        let l2n: f64 = beta.iter().map(|b| b * b).sum();
        r.norm2() / (2.0 * n) + p.alpha * p.l1_ratio * l1n + 0.5 * p.alpha * (1.0 - p.l1_ratio) * l2n
    };
    let mut trace = vec![objective(&r, &beta)];
    let mut converged = false;
    let mut sweeps = 0;

    while sweeps < p.max_iter {
        let mut w_max: f64 = 0.0;
        let mut d_max: f64 = 0.0;
        for (j, c) in cols.cols.iter().enumerate() {
            if c.norm2 + l2 == 0.0 {
                continue;
            }
            let old = beta[j];
            let rho = r.dot(c) + c.norm2 * old;
            let new = soft_threshold(rho, l1) / (c.norm2 + l2);
            if new != old {
                r.axpy(new - old, c);
                beta[j] = new;
            }
            d_max = d_max.max((new - old).abs());
            w_max = w_max.max(new.abs());
        }
        sweeps += 1;
        trace.push(objective(&r, &beta));

        let small_step = w_max == 0.0 || d_max / w_max < p.tol;
        if !(small_step || sweeps == p.max_iter) {
            continue;
        }
        if l1 == 0.0 && l2 == 0.0 {
            // Plain least squares has no bounded dual; stop once steps vanish.
            if w_max == 0.0 || d_max <= 16.0 * f64::EPSILON * w_max {
                converged = true;
                break;
            }
            continue;
        }
        if duality_gap(cols, &r, &beta, &y_c, l1, l2) < p.tol * y_norm2 {
            converged = true;
            break;
        }
    }

    let mut intercept = y_mean;
    let mut coef = Vec::new();
    for (c, &b) in cols.cols.iter().zip(&beta) {
        if b != 0.0 {
            let w = b * c.scale;
            intercept -= w * c.mean;
            coef.push((c.index as u32, w));
        }
    }
    ColumnSolution {
        intercept,
        coef,
        n_sweeps: sweeps,
        converged,
        objective: trace,
    }
}

/// Gap of the n-scaled problem `½‖R‖² + l1‖β‖₁ + ½·l2‖β‖²`.
fn duality_gap(cols: &Columns, r: &Residual, beta: &[f64], y_c: &[f64], l1: f64, l2: f64) -> f64 {
    let r_norm2 = r.norm2();
    let w_norm2: f64 = beta.iter().map(|b| b * b).sum();
    let r_dot_y: f64 = y_c.iter().enumerate().map(|(i, y)| r.at(i) * y).sum();
    let xtr: Vec<f64> = cols.cols.iter().map(|c| r.dot(c)).collect();
    if l1 == 0.0 {
        // Ridge: dual point θ = R.
        let xtr2: f64 = xtr.iter().map(|v| v * v).sum();
        return r_norm2 + 0.5 * l2 * w_norm2 - r_dot_y + xtr2 / (2.0 * l2);
    }
    let dual_norm = xtr
        .iter()
        .zip(beta)
        .map(|(g, b)| (g - l2 * b).abs())
        .fold(0.0, f64::max);
    let (scale, mut gap) = if dual_norm > l1 {
        let s = l1 / dual_norm;
        (s, 0.5 * (r_norm2 + r_norm2 * s * s))
    } else {
        (1.0, r_norm2)
    };
    let l1_norm: f64 = beta.iter().map(|b| b.abs()).sum();
    gap += l1 * l1_norm - scale * r_dot_y + 0.5 * l2 * (1.0 + scale * scale) * w_norm2;
    gap
}
