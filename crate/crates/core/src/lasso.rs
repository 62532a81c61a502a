//! Coordinate-descent lasso with warm-started regularization paths and k-fold
//! cross-validation.
//!
//! The objective, on internally standardized columns (centered, unit
//! population variance) and a centered response, is
//!
//! ```text
//! (1 / 2n) * ||y - Z b||^2 + lambda * ||b||_1
//! ```
//!
//! with an unpenalized intercept. Coefficients are reported on the original
//! column scale. Updates use the covariance form: the Gram matrix `Z'Z / n` is
//! formed once per fit and each coordinate step costs O(p).

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::regression::{fmt_num, ColumnKind, DesignMatrix};
use crate::{rng, Error, Result};

/// Sign-preserving shrinkage toward zero: `sign(z) * max(|z| - gamma, 0)`.
#[inline]
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    debug_assert!(gamma >= 0.0, "threshold must be non-negative");
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LassoOptions {
    /// Convergence threshold on the largest coefficient change in a sweep
    /// (standardized scale).
    pub tol: f64,
    /// Maximum number of coordinate sweeps per grid point.
    pub max_iter: usize,
    /// Keep the objective value after every sweep.
    #[serde(skip)]
    pub record_objective: bool,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            tol: 1e-7,
            max_iter: 10_000,
            record_objective: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub lambda: f64,
    /// Non-intercept design columns, in design order.
    pub terms: Vec<String>,
    /// Coefficients on the original column scale.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub n_nonzero: usize,
    /// Per-term (mean, scale) used internally; scale 0 marks a dropped constant column.
    pub standardization: Vec<(f64, f64)>,
    pub converged: bool,
    pub n_iterations: usize,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub objective_trace: Vec<f64>,
}

impl LassoFit {
    /// Prediction from the non-intercept column values of one row.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(row)
                .map(|(b, x)| b * x)
                .sum::<f64>()
    }

    /// Predictions for every row of a design with the same columns.
    pub fn predict(&self, x: &DesignMatrix) -> Vec<f64> {
        let cols = non_intercept_columns(x);
        (0..x.n_rows)
            .map(|i| {
                self.intercept
                    + cols
                        .iter()
                        .zip(&self.coefficients)
                        .filter(|(_, b)| **b != 0.0)
                        .map(|(&j, b)| b * x.values[(i, j)])
                        .sum::<f64>()
            })
            .collect()
    }

    pub fn coefficient(&self, term: &str) -> Option<f64> {
        self.terms
            .iter()
            .position(|t| t == term)
            .map(|i| self.coefficients[i])
    }

    /// Standardized-scale coefficients.
    pub fn standardized_coefficients(&self) -> Vec<f64> {
        self.coefficients
            .iter()
            .zip(&self.standardization)
            .map(|(b, (_, s))| b * s)
            .collect()
    }

    /// Tab-delimited `term, coefficient` table, intercept first.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "term\tcoefficient\n(intercept)\t{}\n",
            fmt_num(self.intercept)
        );
        for (t, b) in self.terms.iter().zip(&self.coefficients) {
            out.push_str(&format!("{t}\t{}\n", fmt_num(*b)));
        }
        out
    }
}

fn non_intercept_columns(x: &DesignMatrix) -> Vec<usize> {
    (0..x.n_cols())
        .filter(|&j| x.columns[j].kind != ColumnKind::Intercept)
        .collect()
}

/// Standardized problem in covariance form.
struct Problem {
    terms: Vec<String>,
    /// Per non-intercept column (mean, scale); scale 0 for dropped constants.
    standardization: Vec<(f64, f64)>,
    /// Positions (in `terms`) of the columns that enter the fit.
    active_cols: Vec<usize>,
    gram: DMatrix<f64>,
    xty: Vec<f64>,
    y_mean: f64,
    yy: f64,
}

impl Problem {
    fn new(x: &DesignMatrix, y: &[f64]) -> Result<Self> {
        let n = x.n_rows;
        if n == 0 {
            return Err(Error::Data("lasso on an empty design".into()));
        }
        if y.len() != n {
            return Err(Error::Config(format!(
                "design has {n} rows but y has {}",
                y.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite response".into()));
        }
        let cols = non_intercept_columns(x);
        let nf = n as f64;
        let y_mean = y.iter().sum::<f64>() / nf;
        let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
        let mut standardization = Vec::with_capacity(cols.len());
        let mut active_cols = Vec::new();
        for (pos, &j) in cols.iter().enumerate() {
            let col = x.values.column(j);
            let m = col.iter().sum::<f64>() / nf;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / nf;
            let s = var.sqrt();
            if s <= 1e-12 * (1.0 + m.abs()) {
                standardization.push((m, 0.0));
            } else {
                standardization.push((m, s));
                active_cols.push(pos);
            }
        }
        let p = active_cols.len();
        let z = DMatrix::from_fn(n, p, |i, a| {
            let pos = active_cols[a];
            let (m, s) = standardization[pos];
            (x.values[(i, cols[pos])] - m) / s
        });
        let gram = z.tr_mul(&z) / nf;
        let xty: Vec<f64> = (0..p)
            .map(|a| {
                z.column(a)
                    .iter()
                    .zip(&yc)
                    .map(|(zi, yi)| zi * yi)
                    .sum::<f64>()
                    / nf
            })
            .collect();
        let yy = yc.iter().map(|v| v * v).sum::<f64>() / nf;
        Ok(Problem {
            terms: cols.iter().map(|&j| x.columns[j].name.clone()).collect(),
            standardization,
            active_cols,
            gram,
            xty,
            y_mean,
            yy,
        })
    }

    fn lambda_max(&self) -> f64 {
        self.xty.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    fn objective(&self, beta: &[f64], grad: &[f64], lambda: f64) -> f64 {
        // 1/(2n) RSS = yy/2 - b'c + b'Gb/2, and Gb = c - grad
        let bc: f64 = beta.iter().zip(&self.xty).map(|(b, c)| b * c).sum();
        let bg: f64 = beta.iter().zip(grad).map(|(b, g)| b * g).sum();
        let l1: f64 = beta.iter().map(|b| b.abs()).sum();
        0.5 * self.yy - 0.5 * (bc + bg) + lambda * l1
    }

    /// One coordinate update; returns the absolute change.
    #[inline]
    fn update(&self, j: usize, beta: &mut [f64], grad: &mut [f64], lambda: f64) -> f64 {
        let gjj = self.gram[(j, j)];
        let old = beta[j];
        let new = soft_threshold(grad[j] + gjj * old, lambda) / gjj;
        let delta = new - old;
        if delta != 0.0 {
            beta[j] = new;
            let col = self.gram.column(j);
            for (g, c) in grad.iter_mut().zip(col.iter()) {
                *g -= c * delta;
            }
        }
        delta.abs()
    }

    /// Cyclic coordinate descent from a warm start. Full sweeps alternate
    /// with sweeps restricted to the nonzero set; convergence is declared only
    /// after a full sweep moves no coefficient by `tol` or more.
    fn solve(&self, beta: &mut [f64], lambda: f64, opts: &LassoOptions) -> (bool, usize, Vec<f64>) {
        let p = beta.len();
        let mut grad: Vec<f64> = (0..p)
            .map(|j| {
                self.xty[j]
                    - (0..p)
                        .filter(|&k| beta[k] != 0.0)
                        .map(|k| self.gram[(j, k)] * beta[k])
                        .sum::<f64>()
            })
            .collect();
        let mut trace = Vec::new();
        if opts.record_objective {
            trace.push(self.objective(beta, &grad, lambda));
        }
        let mut sweeps = 0;
        loop {
            if sweeps >= opts.max_iter {
                return (false, sweeps, trace);
            }
            let mut max_delta = 0.0f64;
            for j in 0..p {
                max_delta = max_delta.max(self.update(j, beta, &mut grad, lambda));
            }
            sweeps += 1;
            if opts.record_objective {
                trace.push(self.objective(beta, &grad, lambda));
            }
            if max_delta < opts.tol {
                return (true, sweeps, trace);
            }
            let active: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
            loop {
                if sweeps >= opts.max_iter {
                    return (false, sweeps, trace);
                }
                let mut d = 0.0f64;
                for &j in &active {
                    d = d.max(self.update(j, beta, &mut grad, lambda));
                }
                sweeps += 1;
                if opts.record_objective {
                    trace.push(self.objective(beta, &grad, lambda));
                }
                if d < opts.tol {
                    break;
                }
            }
        }
    }

    fn to_fit(
        &self,
        beta_std: &[f64],
        lambda: f64,
        converged: bool,
        n_iterations: usize,
        trace: Vec<f64>,
    ) -> LassoFit {
        let mut coefficients = vec![0.0; self.terms.len()];
        for (a, &pos) in self.active_cols.iter().enumerate() {
            if beta_std[a] != 0.0 {
                coefficients[pos] = beta_std[a] / self.standardization[pos].1;
            }
        }
        let intercept = self.y_mean
            - coefficients
                .iter()
                .zip(&self.standardization)
                .map(|(b, (m, _))| b * m)
                .sum::<f64>();
        LassoFit {
            lambda,
            terms: self.terms.clone(),
            n_nonzero: coefficients.iter().filter(|b| **b != 0.0).count(),
            coefficients,
            intercept,
            standardization: self.standardization.clone(),
            converged,
            n_iterations,
            objective_trace: trace,
        }
    }

    fn path(&self, grid: &[f64], opts: &LassoOptions) -> Vec<LassoFit> {
        let mut beta = vec![0.0; self.active_cols.len()];
        grid.iter()
            .map(|&lambda| {
                let (converged, iters, trace) = self.solve(&mut beta, lambda, opts);
                self.to_fit(&beta, lambda, converged, iters, trace)
            })
            .collect()
    }
}

/// Smallest penalty at which the all-zero coefficient vector is optimal:
/// `max_j |<z_j, y - mean(y)>| / n` over standardized columns.
pub fn lambda_max(x: &DesignMatrix, y: &[f64]) -> Result<f64> {
    Ok(Problem::new(x, y)?.lambda_max())
}

/// `n_points` log-spaced penalties from `lambda_max` down to
/// `min_ratio * lambda_max`.
pub fn default_grid(lambda_max: f64, n_points: usize, min_ratio: f64) -> Vec<f64> {
    if lambda_max <= 0.0 || n_points == 0 {
        return vec![0.0];
    }
    if n_points == 1 {
        return vec![lambda_max];
    }
    let (hi, lo) = (lambda_max.ln(), (lambda_max * min_ratio).ln());
    let mut grid: Vec<f64> = (0..n_points)
        .map(|i| (hi + (lo - hi) * i as f64 / (n_points - 1) as f64).exp())
        .collect();
    // exp(ln(x)) need not round-trip; the null model must sit exactly at the top
    grid[0] = lambda_max;
    grid
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("empty lambda grid".into()));
    }
    if grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::Config(
            "lambda grid values must be finite and non-negative".into(),
        ));
    }
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config(
            "lambda grid must be strictly descending".into(),
        ));
    }
    Ok(())
}

/// Fit the lasso at every penalty of a strictly descending grid, warm-starting
/// each point from the previous solution. A terminal zero penalty is allowed
/// and yields the least-squares fit. Fits that hit `max_iter` are returned
/// with `converged = false`.
pub fn lasso_path(
    x: &DesignMatrix,
    y: &[f64],
    grid: &[f64],
    opts: &LassoOptions,
) -> Result<Vec<LassoFit>> {
    validate_grid(grid)?;
    if !(opts.tol > 0.0) {
        return Err(Error::Config("tolerance must be positive".into()));
    }
    Ok(Problem::new(x, y)?.path(grid, opts))
}

/// Largest KKT violation of a fit, recomputed from the raw design:
/// for active coefficients `|<z_j, r>/n - lambda * sign(b_j)|`, for inactive
/// ones `max(0, |<z_j, r>/n| - lambda)`, on the standardized scale.
pub fn kkt_violation(x: &DesignMatrix, y: &[f64], fit: &LassoFit) -> f64 {
    let cols = non_intercept_columns(x);
    let n = x.n_rows as f64;
    let resid: Vec<f64> = y.iter().zip(fit.predict(x)).map(|(a, b)| a - b).collect();
    let mut worst = 0.0f64;
    for (pos, &j) in cols.iter().enumerate() {
        let (m, s) = fit.standardization[pos];
        if s == 0.0 {
            continue;
        }
        let g: f64 = (0..x.n_rows)
            .map(|i| (x.values[(i, j)] - m) / s * resid[i])
            .sum::<f64>()
            / n;
        let b = fit.coefficients[pos];
        let v = if b != 0.0 {
            (g - fit.lambda * b.signum()).abs()
        } else {
            (g.abs() - fit.lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    #[default]
    LambdaMin,
    Lambda1se,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub lambda_grid: Vec<f64>,
    /// `fold_mse[g][f]`: held-out mean squared error of fold `f` at grid point `g`.
    pub fold_mse: Vec<Vec<f64>>,
    pub mean_mse: Vec<f64>,
    pub se_mse: Vec<f64>,
    pub lambda_min: f64,
    pub index_min: usize,
    pub lambda_1se: Option<f64>,
    pub index_1se: Option<usize>,
    pub k: usize,
    pub fold_assignment_seed: u64,
    /// Fold of every row.
    pub folds: Vec<usize>,
}

impl CvResult {
    pub fn selected_index(&self, rule: SelectionRule) -> usize {
        match rule {
            SelectionRule::LambdaMin => self.index_min,
            SelectionRule::Lambda1se => self.index_1se.unwrap_or(self.index_min),
        }
    }

    /// Tab-delimited `lambda, mean_mse, se_mse` table.
    pub fn path_table(&self, n_nonzero: Option<&[usize]>) -> String {
        let mut out = String::from("lambda\tn_nonzero\tmean_cv_mse\tse_cv_mse\n");
        for (g, l) in self.lambda_grid.iter().enumerate() {
            let nz = n_nonzero
                .and_then(|v| v.get(g))
                .map_or_else(|| "NA".into(), |v| v.to_string());
            out.push_str(&format!(
                "{l}\t{nz}\t{}\t{}\n",
                self.mean_mse[g], self.se_mse[g]
            ));
        }
        out
    }
}

/// Row to fold map: a seeded shuffle dealt round-robin, so fold sizes differ
/// by at most one.
pub fn assign_folds(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, 0));
    let mut folds = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        folds[row] = pos % k;
    }
    folds
}

/// k-fold cross-validation over a penalty grid.
///
/// When `grid` is `None` the default 100-point grid is built from the
/// full-data `lambda_max`. Folds are fitted in parallel; the result does not
/// depend on the thread count. Ties in mean CV error go to the larger penalty.
pub fn cv_select(
    x: &DesignMatrix,
    y: &[f64],
    k: usize,
    grid: Option<&[f64]>,
    seed: u64,
    opts: &LassoOptions,
) -> Result<CvResult> {
    let n = x.n_rows;
    if k < 2 {
        return Err(Error::Config(format!(
            "cross-validation needs k >= 2, got {k}"
        )));
    }
    if n < k {
        return Err(Error::Config(format!("{n} rows cannot fill {k} folds")));
    }
    let grid = match grid {
        Some(g) => g.to_vec(),
        None => default_grid(lambda_max(x, y)?, 100, 1e-3),
    };
    validate_grid(&grid)?;
    let folds = assign_folds(n, k, seed);
    let per_fold: Vec<Result<Vec<f64>>> = (0..k)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
            if test.is_empty() {
                return Err(Error::Config(format!("fold {f} has no rows")));
            }
            let xt = x.select_rows(&train);
            let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let xh = x.select_rows(&test);
            let path = lasso_path(&xt, &yt, &grid, opts)?;
            Ok(path
                .iter()
                .map(|fit| {
                    let pred = fit.predict(&xh);
                    test.iter()
                        .zip(pred)
                        .map(|(&i, p)| (y[i] - p).powi(2))
                        .sum::<f64>()
                        / test.len() as f64
                })
                .collect())
        })
        .collect();
    let per_fold = per_fold.into_iter().collect::<Result<Vec<_>>>()?;
    let fold_mse: Vec<Vec<f64>> = (0..grid.len())
        .map(|g| per_fold.iter().map(|f| f[g]).collect())
        .collect();
    let kf = k as f64;
    let mean_mse: Vec<f64> = fold_mse
        .iter()
        .map(|r| r.iter().sum::<f64>() / kf)
        .collect();
    let se_mse: Vec<f64> = fold_mse
        .iter()
        .zip(&mean_mse)
        .map(|(r, m)| {
            (r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (kf - 1.0)).sqrt() / kf.sqrt()
        })
        .collect();
    let mut index_min = 0;
    for g in 1..grid.len() {
        if mean_mse[g] < mean_mse[index_min] {
            index_min = g;
        }
    }
    let bound = mean_mse[index_min] + se_mse[index_min];
    let index_1se = (0..=index_min).find(|&g| mean_mse[g] <= bound);
    Ok(CvResult {
        lambda_min: grid[index_min],
        index_min,
        lambda_1se: index_1se.map(|g| grid[g]),
        index_1se,
        lambda_grid: grid,
        fold_mse,
        mean_mse,
        se_mse,
        k,
        fold_assignment_seed: seed,
        folds,
    })
}

/// Cross-validate, then refit on all rows along the grid down to the selected
/// penalty and return that fit.
pub fn fit_cv(
    x: &DesignMatrix,
    y: &[f64],
    k: usize,
    seed: u64,
    opts: &LassoOptions,
    rule: SelectionRule,
) -> Result<(CvResult, LassoFit)> {
    let cv = cv_select(x, y, k, None, seed, opts)?;
    let idx = cv.selected_index(rule);
    let mut path = lasso_path(x, y, &cv.lambda_grid[..=idx], opts)?;
    let fit = path.pop().expect("grid prefix is non-empty");
    Ok((cv, fit))
}
