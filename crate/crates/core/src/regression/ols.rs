use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use super::design::{ColumnKind, DesignMatrix};
use crate::{Error, Result};

/// Relative squared-norm threshold below which a column is treated as a
/// linear combination of the columns before it.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeType {
    Classical,
    Cluster,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionFit {
    pub terms: Vec<String>,
    pub coefficients: Vec<f64>,
    #[serde(with = "matrix_rows")]
    pub vcov: DMatrix<f64>,
    pub se_type: SeType,
    pub cluster_var: Option<String>,
    pub r_squared: f64,
    pub n_obs: usize,
    pub n_clusters: Option<usize>,
    pub df_resid: usize,
    /// Design columns dropped as linearly dependent on earlier ones.
    pub dropped: Vec<String>,
    /// Indices of the retained design columns.
    pub retained: Vec<usize>,
    #[serde(skip)]
    pub residuals: Vec<f64>,
    #[serde(skip)]
    pub weights: Option<Vec<f64>>,
    /// (X'WX)^-1 over the retained columns.
    #[serde(skip, default = "empty_matrix")]
    pub bread: DMatrix<f64>,
}

fn empty_matrix() -> DMatrix<f64> {
    DMatrix::zeros(0, 0)
}

/// One row of a coefficient table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermEstimate {
    pub term: String,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
}

impl RegressionFit {
    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.terms.iter().position(|t| t == term)
    }

    pub fn coef(&self, term: &str) -> Option<f64> {
        self.index_of(term).map(|i| self.coefficients[i])
    }

    pub fn se(&self, i: usize) -> f64 {
        self.vcov[(i, i)].max(0.0).sqrt()
    }

    pub fn t_stat(&self, i: usize) -> f64 {
        let se = self.se(i);
        if se > 0.0 {
            self.coefficients[i] / se
        } else if self.coefficients[i] == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(self.coefficients[i])
        }
    }

    /// Two-sided p-value: Student t for classical fits, normal reference for
    /// clustered fits.
    pub fn p_value(&self, i: usize) -> f64 {
        let t = self.t_stat(i).abs();
        if !t.is_finite() {
            return 0.0;
        }
        let upper = match self.se_type {
            SeType::Cluster => Normal::standard().sf(t),
            SeType::Classical if self.df_resid > 0 => {
                StudentsT::new(0.0, 1.0, self.df_resid as f64)
                    .map(|d| d.sf(t))
                    .unwrap_or_else(|_| Normal::standard().sf(t))
            }
            SeType::Classical => return f64::NAN,
        };
        (2.0 * upper).min(1.0)
    }

    pub fn is_significant(&self, i: usize, alpha: f64) -> bool {
        self.p_value(i) < alpha
    }

    /// Half-width-`z` confidence interval.
    pub fn confint(&self, i: usize, level: f64) -> (f64, f64) {
        let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
        let b = self.coefficients[i];
        (b - z * self.se(i), b + z * self.se(i))
    }

    pub fn estimates(&self) -> Vec<TermEstimate> {
        (0..self.terms.len())
            .map(|i| TermEstimate {
                term: self.terms[i].clone(),
                estimate: self.coefficients[i],
                se: self.se(i),
                t: self.t_stat(i),
                p: self.p_value(i),
            })
            .collect()
    }

    /// Tab-delimited `term, estimate, se, t, p` table.
    pub fn to_table(&self) -> String {
        let mut out = String::from("term\testimate\tse\tt\tp\n");
        for e in self.estimates() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.term,
                fmt_num(e.estimate),
                fmt_num(e.se),
                fmt_num(e.t),
                fmt_num(e.p)
            ));
        }
        out
    }
}

/// Shortest round-trip representation; stable across runs. Very small or
/// very large magnitudes use exponent notation and negative zero prints as 0.
pub fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if v.is_nan() {
        "NaN".into()
    } else if v == 0.0 {
        "0".into()
    } else if a.is_finite() && !(1e-6..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

/// Sequential rank screen on the Gram matrix: a column is dropped when its
/// residual after projecting out the previously kept columns is negligible.
fn independent_columns(gram: &DMatrix<f64>) -> Vec<usize> {
    let k = gram.nrows();
    let mut kept: Vec<usize> = Vec::new();
    // rows of the incremental Cholesky factor for kept columns
    let mut l: Vec<Vec<f64>> = Vec::new();
    for j in 0..k {
        let gjj = gram[(j, j)];
        if gjj <= 0.0 {
            continue;
        }
        let mut row = Vec::with_capacity(kept.len());
        for (a, &ka) in kept.iter().enumerate() {
            let dot: f64 = (0..a).map(|b| row[b] * l[a][b]).sum();
            row.push((gram[(j, ka)] - dot) / l[a][a]);
        }
        let d = gjj - row.iter().map(|v| v * v).sum::<f64>();
        if d <= RANK_TOL * gjj {
            continue;
        }
        row.push(d.sqrt());
        l.push(row);
        kept.push(j);
    }
    kept
}

/// Least squares by Householder QR on the retained columns.
///
/// Columns that are linear combinations of earlier columns are dropped and
/// listed in `dropped`; dropping the intercept is fatal.
pub fn ols_fit(x: &DesignMatrix, y: &[f64], weights: Option<&[f64]>) -> Result<RegressionFit> {
    let n = x.n_rows;
    if y.len() != n {
        return Err(Error::Config(format!(
            "design has {n} rows but y has {}",
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite dependent variable".into()));
    }
    if let Some(w) = weights {
        if w.len() != n || w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(
                "weights must be positive and one per row".into(),
            ));
        }
    }
    let sw: Vec<f64> = match weights {
        Some(w) => w.iter().map(|v| v.sqrt()).collect(),
        None => vec![1.0; n],
    };
    let xw = DMatrix::from_fn(n, x.n_cols(), |i, j| x.values[(i, j)] * sw[i]);
    let gram = xw.tr_mul(&xw);
    let retained = independent_columns(&gram);
    let dropped: Vec<String> = (0..x.n_cols())
        .filter(|j| !retained.contains(j))
        .map(|j| x.columns[j].name.clone())
        .collect();
    for j in (0..x.n_cols()).filter(|j| !retained.contains(j)) {
        if x.columns[j].kind == ColumnKind::Intercept {
            return Err(Error::Numerical(
                "intercept is collinear with the design".into(),
            ));
        }
    }
    let k = retained.len();
    if n <= k {
        return Err(Error::Data(format!(
            "{n} observations cannot identify {k} coefficients"
        )));
    }
    let xr = xw.select_columns(&retained);
    let qr = xr.qr();
    let r = qr.r();
    let mut qty = DVector::from_iterator(n, y.iter().zip(&sw).map(|(v, s)| v * s));
    qr.q_tr_mul(&mut qty);
    let beta = r
        .solve_upper_triangular(&qty.rows(0, k).into_owned())
        .ok_or_else(|| Error::Numerical("singular triangular factor".into()))?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::Numerical("singular triangular factor".into()))?;
    let mut bread = &r_inv * r_inv.transpose();
    symmetrize(&mut bread);

    let xs = x.values.select_columns(&retained);
    let fitted = &xs * &beta;
    let residuals: Vec<f64> = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
    let w_of = |i: usize| sw[i] * sw[i];
    let sw_sum: f64 = (0..n).map(w_of).sum();
    let ybar = (0..n).map(|i| w_of(i) * y[i]).sum::<f64>() / sw_sum;
    let ssr: f64 = (0..n).map(|i| w_of(i) * residuals[i] * residuals[i]).sum();
    let sst: f64 = (0..n).map(|i| w_of(i) * (y[i] - ybar).powi(2)).sum();
    let r_squared = if sst > 0.0 {
        (1.0 - ssr / sst).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let df_resid = n - k;
    let sigma2 = ssr / df_resid as f64;

    Ok(RegressionFit {
        terms: retained
            .iter()
            .map(|&j| x.columns[j].name.clone())
            .collect(),
        coefficients: beta.iter().copied().collect(),
        vcov: &bread * sigma2,
        se_type: SeType::Classical,
        cluster_var: None,
        r_squared,
        n_obs: n,
        n_clusters: None,
        df_resid,
        dropped,
        retained,
        residuals,
        weights: weights.map(<[f64]>::to_vec),
        bread,
    })
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let k = m.nrows();
    for i in 0..k {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Serialize a square matrix as a list of rows.
pub(crate) mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows())
            .map(|i| m.row(i).iter().copied().collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_fn(n, k, |i, j| rows[i][j]))
    }
}
