use std::collections::HashMap;
use std::hash::Hash;

use nalgebra::{DMatrix, DVector};

use super::design::DesignMatrix;
use super::ols::{symmetrize, RegressionFit, SeType};
use crate::{Error, Result};

/// Cluster-robust sandwich variance.
///
/// `V = c * B (sum_g s_g s_g') B` with `B = (X'WX)^-1`, cluster scores
/// `s_g = sum_{i in g} w_i x_i e_i` and small-sample factor
/// `c = G/(G-1) * (N-1)/(N-K)`.
pub fn cluster_vcov<K: Hash + Eq>(
    fit: &RegressionFit,
    x: &DesignMatrix,
    residuals: &[f64],
    cluster_ids: &[K],
) -> Result<DMatrix<f64>> {
    let n = x.n_rows;
    if cluster_ids.len() != n || residuals.len() != n {
        return Err(Error::Config(format!(
            "cluster ids ({}) and residuals ({}) must match the {n} design rows",
            cluster_ids.len(),
            residuals.len()
        )));
    }
    let k = fit.retained.len();
    let mut slot: HashMap<&K, usize> = HashMap::new();
    let mut scores: Vec<DVector<f64>> = Vec::new();
    for i in 0..n {
        let g = *slot.entry(&cluster_ids[i]).or_insert_with(|| {
            scores.push(DVector::zeros(k));
            scores.len() - 1
        });
        let w = fit.weights.as_ref().map_or(1.0, |w| w[i]);
        let s = &mut scores[g];
        for (a, &j) in fit.retained.iter().enumerate() {
            s[a] += w * x.values[(i, j)] * residuals[i];
        }
    }
    let g = scores.len();
    if g < 2 {
        return Err(Error::Data(
            "cluster-robust variance needs at least two clusters".into(),
        ));
    }
    if n <= k {
        return Err(Error::Data(
            "too few observations for the small-sample correction".into(),
        ));
    }
    let mut meat = DMatrix::zeros(k, k);
    for s in &scores {
        meat.ger(1.0, s, s, 1.0);
    }
    let factor = (g as f64 / (g as f64 - 1.0)) * ((n as f64 - 1.0) / (n as f64 - k as f64));
    let mut v = &fit.bread * meat * &fit.bread * factor;
    symmetrize(&mut v);
    Ok(v)
}

impl RegressionFit {
    /// Replace the classical variance with the cluster-robust one.
    pub fn with_cluster_vcov<K: Hash + Eq>(
        mut self,
        x: &DesignMatrix,
        cluster_var: &str,
        cluster_ids: &[K],
    ) -> Result<Self> {
        let residuals = std::mem::take(&mut self.residuals);
        let v = cluster_vcov(&self, x, &residuals, cluster_ids);
        self.residuals = residuals;
        let v = v?;
        let mut distinct: Vec<&K> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for id in cluster_ids {
            if seen.insert(id) {
                distinct.push(id);
            }
        }
        self.n_clusters = Some(distinct.len());
        self.vcov = v;
        self.se_type = SeType::Cluster;
        self.cluster_var = Some(cluster_var.to_string());
        Ok(self)
    }
}
