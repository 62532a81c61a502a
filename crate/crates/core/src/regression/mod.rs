//! Dense OLS on dummy-variable designs, cluster-robust variance, and the
//! descriptive statistics used across the crate.

mod cluster;
mod design;
mod ols;
pub mod stats;

pub use cluster::cluster_vcov;
pub use design::{
    build_design, encode_row, Atom, Column, ColumnKind, DesignMatrix, Formula, Observation, Part,
    TermExpr, INTERCEPT,
};
pub use ols::{fmt_num, ols_fit, RegressionFit, SeType, TermEstimate};
pub use stats::{spearman_rho, weighted_median};

/// Default two-sided significance level.
pub const DEFAULT_ALPHA: f64 = 0.05;

/// How standard errors are computed for a harness run.
#[derive(Debug, Clone, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeSpec {
    #[default]
    Classical,
    /// Cluster on a categorical variable of the observations.
    Cluster(String),
}

/// Fit `y ~ design` and apply the requested standard-error treatment.
pub fn fit_with_se<O: Observation>(
    rows: &[O],
    x: &DesignMatrix,
    y: &[f64],
    se: &SeSpec,
) -> crate::Result<RegressionFit> {
    let fit = ols_fit(x, y, None)?;
    match se {
        SeSpec::Classical => Ok(fit),
        SeSpec::Cluster(var) => {
            let ids = rows
                .iter()
                .map(|r| r.categorical(var).map(|c| c.into_owned()))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| {
                    crate::Error::Data(format!("cluster variable {var:?} missing on some rows"))
                })?;
            fit.with_cluster_vcov(x, var, &ids)
        }
    }
}
