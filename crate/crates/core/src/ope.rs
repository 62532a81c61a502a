//! Optimal-prediction-error model of occupational income proxies.
//!
//! A person's occupation reflects `O = delta0 + delta1 * X + eta` and earnings
//! are `y = O + gamma0 + gamma1 * X + nu`, so `y = alpha + beta * X + eps`
//! with `alpha = delta0 + gamma0` and `beta = delta1 + gamma1`. A demographic
//! `Z = lambda0 + lambda1 * X + psi` may also be observed.
//!
//! Three proxies for `y` are compared, each regressed on `X`:
//!
//! * OPE(1): `E(y | occupation)`; slope converges to `delta1 + gamma1 * phi1`.
//! * OPE(2): `E(y | occupation, X)`; slope is unbiased for `beta`.
//! * OPE(3): `E(y | occupation, Z)`; slope converges to
//!   `delta1 + gamma1 * (theta1 + theta2)`.
//!
//! [`simulate`] draws normal shocks and cuts `O` into equal-frequency bins
//! that stand in for occupations.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF};

use crate::regression::{fmt_num, stats};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpeParams {
    #[serde(alias = "mu_X")]
    pub mu_x: f64,
    #[serde(alias = "sigma_X")]
    pub sigma_x: f64,
    pub delta0: f64,
    pub delta1: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    pub sigma_eta: f64,
    pub sigma_nu: f64,
    #[serde(default)]
    pub lambda0: f64,
    #[serde(default)]
    pub lambda1: f64,
    #[serde(default = "one")]
    pub sigma_psi: f64,
    /// Require `delta1` and `gamma1` to share a sign.
    #[serde(default = "yes")]
    pub enforce_sign: bool,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

impl Default for OpeParams {
    fn default() -> Self {
        OpeParams {
            mu_x: 0.0,
            sigma_x: 1.0,
            delta0: 0.0,
            delta1: 0.5,
            gamma0: 0.0,
            gamma1: 0.5,
            sigma_eta: 1.0,
            sigma_nu: 1.0,
            lambda0: 0.0,
            lambda1: 0.0,
            sigma_psi: 1.0,
            enforce_sign: true,
        }
    }
}

/// Names accepted by [`OpeParams::set`] and used as sweep table columns.
pub const PARAM_NAMES: [&str; 11] = [
    "mu_x",
    "sigma_x",
    "delta0",
    "delta1",
    "gamma0",
    "gamma1",
    "sigma_eta",
    "sigma_nu",
    "lambda0",
    "lambda1",
    "sigma_psi",
];

impl OpeParams {
    pub fn validate(&self) -> Result<()> {
        let all = self.values();
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("OPE parameters must be finite".into()));
        }
        if !(self.sigma_x > 0.0) {
            return Err(Error::Config("sigma_x must be positive".into()));
        }
        if self.sigma_eta < 0.0 || self.sigma_nu < 0.0 || self.sigma_psi < 0.0 {
            return Err(Error::Config(
                "standard deviations must be non-negative".into(),
            ));
        }
        if self.enforce_sign && self.delta1 * self.gamma1 < 0.0 {
            return Err(Error::Config(
                "delta1 and gamma1 must share a sign (set enforce_sign = false to explore)".into(),
            ));
        }
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.delta0 + self.gamma0
    }

    pub fn beta(&self) -> f64 {
        self.delta1 + self.gamma1
    }

    pub fn values(&self) -> [f64; 11] {
        [
            self.mu_x,
            self.sigma_x,
            self.delta0,
            self.delta1,
            self.gamma0,
            self.gamma1,
            self.sigma_eta,
            self.sigma_nu,
            self.lambda0,
            self.lambda1,
            self.sigma_psi,
        ]
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = match name {
            "mu_x" | "mu_X" => &mut self.mu_x,
            "sigma_x" | "sigma_X" => &mut self.sigma_x,
            "delta0" => &mut self.delta0,
            "delta1" => &mut self.delta1,
            "gamma0" => &mut self.gamma0,
            "gamma1" => &mut self.gamma1,
            "sigma_eta" => &mut self.sigma_eta,
            "sigma_nu" => &mut self.sigma_nu,
            "lambda0" => &mut self.lambda0,
            "lambda1" => &mut self.lambda1,
            "sigma_psi" => &mut self.sigma_psi,
            other => return Err(Error::Config(format!("unknown OPE parameter {other:?}"))),
        };
        *slot = value;
        Ok(())
    }
}

/// Signal precision `slope^2 / sd^2`; `None` stands for an infinite
/// precision (noiseless signal).
fn precision(slope: f64, sd: f64) -> Option<f64> {
    if slope == 0.0 {
        Some(0.0)
    } else if sd == 0.0 {
        None
    } else {
        Some(slope * slope / (sd * sd))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiWeights {
    pub phi0: f64,
    pub phi1: f64,
    /// The noiseless limit was taken.
    pub limit: bool,
}

/// Weights of `E(X | O) = phi0 * mu_x + phi1 * (O - delta0) / delta1`.
pub fn phi_weights(p: &OpeParams) -> PhiWeights {
    let px = 1.0 / (p.sigma_x * p.sigma_x);
    match precision(p.delta1, p.sigma_eta) {
        Some(pe) => {
            let phi1 = pe / (px + pe);
            PhiWeights {
                phi0: 1.0 - phi1,
                phi1,
                limit: false,
            }
        }
        None => PhiWeights {
            phi0: 0.0,
            phi1: 1.0,
            limit: true,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaWeights {
    pub theta0: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub limit: bool,
}

/// Weights of `E(X | O, Z)` on the prior mean, the occupation signal and the
/// demographic signal. Noiseless signals share the weight equally.
pub fn theta_weights(p: &OpeParams) -> ThetaWeights {
    let px = 1.0 / (p.sigma_x * p.sigma_x);
    match (
        precision(p.delta1, p.sigma_eta),
        precision(p.lambda1, p.sigma_psi),
    ) {
        (Some(p1), Some(p2)) => {
            let tot = px + p1 + p2;
            ThetaWeights {
                theta0: px / tot,
                theta1: p1 / tot,
                theta2: p2 / tot,
                limit: false,
            }
        }
        (None, Some(_)) => ThetaWeights {
            theta0: 0.0,
            theta1: 1.0,
            theta2: 0.0,
            limit: true,
        },
        (Some(_), None) => ThetaWeights {
            theta0: 0.0,
            theta1: 0.0,
            theta2: 1.0,
            limit: true,
        },
        (None, None) => ThetaWeights {
            theta0: 0.0,
            theta1: 0.5,
            theta2: 0.5,
            limit: true,
        },
    }
}

/// Probability limit of the slope of `E(y | occupation)` on `X`.
pub fn plim_ope1(p: &OpeParams) -> f64 {
    p.delta1 + p.gamma1 * phi_weights(p).phi1
}

/// Probability limit of the slope of `E(y | occupation, X)` on `X`.
pub fn plim_ope2(p: &OpeParams) -> f64 {
    p.beta()
}

/// Probability limit of the slope of `E(y | occupation, Z)` on `X`.
pub fn plim_ope3(p: &OpeParams) -> f64 {
    let t = theta_weights(p);
    p.delta1 + p.gamma1 * (t.theta1 + t.theta2)
}

/// Share of a normal variable's variance kept by the means of its `j`
/// equal-frequency bins: `Var(E(O | bin)) / Var(O)`.
///
/// Because `E(y | O)` is linear in `O` under normal shocks, the OPE(1) slope
/// on binned occupations converges to `plim_ope1 * normal_binning_retention(j)`
/// for fixed `j`.
pub fn normal_binning_retention(j: usize) -> f64 {
    let std = statrs::distribution::Normal::standard();
    let edge_pdf = |k: usize| -> f64 {
        if k == 0 || k == j {
            0.0
        } else {
            std.pdf(std.inverse_cdf(k as f64 / j as f64))
        }
    };
    let jf = j as f64;
    (0..j)
        .map(|k| (jf * (edge_pdf(k) - edge_pdf(k + 1))).powi(2))
        .sum::<f64>()
        / jf
}

/// Probability limit of the OPE(1) slope when occupations are `j`
/// equal-frequency bins of `O`.
pub fn plim_ope1_binned(p: &OpeParams, j: usize) -> f64 {
    plim_ope1(p) * normal_binning_retention(j)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpeSample {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub o: Vec<f64>,
    pub y: Vec<f64>,
    pub occ_bin: Vec<usize>,
    pub n_bins: usize,
    pub warnings: Vec<String>,
}

/// Equal-frequency bins of `values`; equal values share a bin, and bin ids
/// are consecutive from 0 (empty bins are merged away).
pub fn equal_frequency_bins(values: &[f64], j: usize) -> (Vec<usize>, usize, Vec<String>) {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut raw = vec![0usize; n];
    let mut first_rank = 0;
    for (rank, &i) in order.iter().enumerate() {
        if rank > 0 && values[i] != values[order[rank - 1]] {
            first_rank = rank;
        }
        raw[i] = first_rank * j / n;
    }
    let mut used: Vec<usize> = raw.clone();
    used.sort_unstable();
    used.dedup();
    let mut warnings = Vec::new();
    if used.len() < j {
        warnings.push(format!(
            "{} of {j} occupation bins were empty and merged",
            j - used.len()
        ));
    }
    let relabel: BTreeMap<usize, usize> = used.iter().enumerate().map(|(k, &b)| (b, k)).collect();
    (
        raw.iter().map(|b| relabel[b]).collect(),
        used.len(),
        warnings,
    )
}

/// Draw `n` people from the model and bin `O` into `j` occupations.
pub fn simulate(p: &OpeParams, n: usize, j: usize, seed: u64) -> Result<OpeSample> {
    p.validate()?;
    if n == 0 {
        return Err(Error::Config("simulation needs n >= 1".into()));
    }
    if j == 0 {
        return Err(Error::Config("need at least one occupation bin".into()));
    }
    let mut r = rng::rng_from_seed(seed);
    let normal = |sd: f64| Normal::new(0.0, sd).expect("validated sd");
    let (dx, de, dn, dp) = (
        normal(p.sigma_x),
        normal(p.sigma_eta),
        normal(p.sigma_nu),
        normal(p.sigma_psi),
    );
    let mut s = OpeSample {
        x: Vec::with_capacity(n),
        z: Vec::with_capacity(n),
        o: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        occ_bin: Vec::new(),
        n_bins: 0,
        warnings: Vec::new(),
    };
    for _ in 0..n {
        let x = p.mu_x + dx.sample(&mut r);
        let (eta, nu, psi) = (de.sample(&mut r), dn.sample(&mut r), dp.sample(&mut r));
        let o = p.delta0 + p.delta1 * x + eta;
        s.x.push(x);
        s.o.push(o);
        s.y.push(o + p.gamma0 + p.gamma1 * x + nu);
        s.z.push(p.lambda0 + p.lambda1 * x + psi);
    }
    let (bins, k, w) = equal_frequency_bins(&s.o, j);
    s.occ_bin = bins;
    s.n_bins = k;
    s.warnings = w;
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Proxy {
    Ope1,
    Ope2,
    Ope3,
}

fn bin_means(v: &[f64], bins: &[usize], k: usize) -> Vec<f64> {
    let mut sum = vec![0.0; k];
    let mut cnt = vec![0usize; k];
    for (x, &b) in v.iter().zip(bins) {
        sum[b] += x;
        cnt[b] += 1;
    }
    sum.iter().zip(&cnt).map(|(s, c)| s / *c as f64).collect()
}

/// Fitted values of `y` on bin dummies plus one covariate, by within-bin
/// demeaning.
fn fitted_with_covariate(y: &[f64], w: &[f64], bins: &[usize], k: usize) -> Vec<f64> {
    let my = bin_means(y, bins, k);
    let mw = bin_means(w, bins, k);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for i in 0..y.len() {
        let dw = w[i] - mw[bins[i]];
        sxy += dw * (y[i] - my[bins[i]]);
        sxx += dw * dw;
    }
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (0..y.len())
        .map(|i| my[bins[i]] + b * (w[i] - mw[bins[i]]))
        .collect()
}

/// The proxy values themselves, one per row.
pub fn proxy_values(s: &OpeSample, proxy: Proxy) -> Vec<f64> {
    match proxy {
        Proxy::Ope1 => {
            let m = bin_means(&s.y, &s.occ_bin, s.n_bins);
            s.occ_bin.iter().map(|&b| m[b]).collect()
        }
        Proxy::Ope2 => fitted_with_covariate(&s.y, &s.x, &s.occ_bin, s.n_bins),
        Proxy::Ope3 => fitted_with_covariate(&s.y, &s.z, &s.occ_bin, s.n_bins),
    }
}

/// Slope from regressing the chosen proxy on `X`.
pub fn estimate_proxy_beta(s: &OpeSample, proxy: Proxy) -> Result<f64> {
    Ok(stats::simple_slope(&s.x, &proxy_values(s, proxy))?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: usize,
    pub rep: usize,
    pub seed: u64,
    pub params: OpeParams,
    pub beta: f64,
    pub plim_ope1: f64,
    pub plim_ope3: f64,
    pub beta_hat_ope1: f64,
    pub beta_hat_ope2: f64,
    pub beta_hat_ope3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub n: usize,
    pub bins: usize,
    pub replications: usize,
    pub seed: u64,
    /// Parameter name -> values; the sweep is the cartesian product.
    pub sweep: BTreeMap<String, Vec<f64>>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            n: 100_000,
            bins: 50,
            replications: 1,
            seed: 1,
            sweep: BTreeMap::new(),
        }
    }
}

/// Parameter cells of a sweep, in lexicographic order of the swept names.
pub fn sweep_cells(base: &OpeParams, sweep: &BTreeMap<String, Vec<f64>>) -> Result<Vec<OpeParams>> {
    let mut cells = vec![*base];
    for (name, values) in sweep {
        if values.is_empty() {
            return Err(Error::Config(format!("sweep over {name:?} has no values")));
        }
        let mut next = Vec::with_capacity(cells.len() * values.len());
        for c in &cells {
            for &v in values {
                let mut p = *c;
                p.set(name, v)?;
                next.push(p);
            }
        }
        cells = next;
    }
    for c in &cells {
        c.validate()?;
    }
    Ok(cells)
}

/// Simulate every (cell, replication) pair in parallel. Replication `r` of
/// cell `c` uses seed `derive(derive(seed, c), r)`.
pub fn run_sweep(base: &OpeParams, cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    if cfg.replications == 0 {
        return Err(Error::Config("replications must be at least 1".into()));
    }
    let cells = sweep_cells(base, &cfg.sweep)?;
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.replications).map(move |r| (c, r)))
        .collect();
    jobs.par_iter()
        .map(|&(c, r)| {
            let p = &cells[c];
            let seed = rng::derive_seed(rng::derive_seed(cfg.seed, c as u64), r as u64);
            let s = simulate(p, cfg.n, cfg.bins, seed)?;
            Ok(SweepRow {
                cell: c,
                rep: r,
                seed,
                params: *p,
                beta: p.beta(),
                plim_ope1: plim_ope1(p),
                plim_ope3: plim_ope3(p),
                beta_hat_ope1: estimate_proxy_beta(&s, Proxy::Ope1)?,
                beta_hat_ope2: estimate_proxy_beta(&s, Proxy::Ope2)?,
                beta_hat_ope3: estimate_proxy_beta(&s, Proxy::Ope3)?,
            })
        })
        .collect()
}

/// Tab-delimited sweep table.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("cell\trep\tseed\t");
    out.push_str(&PARAM_NAMES.join("\t"));
    out.push_str("\tbeta\tplim_ope1\tplim_ope3\tbeta_hat_ope1\tbeta_hat_ope2\tbeta_hat_ope3\n");
    for r in rows {
        let vals: Vec<String> = r.params.values().iter().map(|v| fmt_num(*v)).collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.cell,
            r.rep,
            r.seed,
            vals.join("\t"),
            fmt_num(r.beta),
            fmt_num(r.plim_ope1),
            fmt_num(r.plim_ope3),
            fmt_num(r.beta_hat_ope1),
            fmt_num(r.beta_hat_ope2),
            fmt_num(r.beta_hat_ope3)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn base() -> OpeParams {
        OpeParams::default()
    }

    #[test]
    fn phi_examples() {
        let p = OpeParams {
            delta1: 0.0,
            ..base()
        };
        assert_eq!(phi_weights(&p).phi1, 0.0);
        // 0.25 / (1 + 0.25)
        assert_relative_eq!(phi_weights(&base()).phi1, 0.2, epsilon = 1e-15);
        let p = OpeParams {
            sigma_eta: 0.0,
            ..base()
        };
        let w = phi_weights(&p);
        assert!(w.limit && w.phi1 == 1.0);
    }

    #[test]
    fn plim_ope1_examples() {
        assert_eq!(
            plim_ope1(&OpeParams {
                gamma1: 0.0,
                ..base()
            }),
            0.5
        );
        assert_relative_eq!(plim_ope1(&base()), 0.6, epsilon = 1e-15);
        assert_eq!(
            plim_ope1(&OpeParams {
                sigma_eta: 0.0,
                ..base()
            }),
            1.0
        );
    }

    #[test]
    fn plim_ope3_examples() {
        assert_eq!(plim_ope3(&base()), plim_ope1(&base()));
        let p = OpeParams {
            lambda1: 1.0,
            sigma_psi: 1.0,
            ..base()
        };
        // (0.25 + 1) / (1 + 0.25 + 1) = 5/9
        assert_relative_eq!(plim_ope3(&p), 0.5 + 0.5 * 5.0 / 9.0, epsilon = 1e-15);
        let w = theta_weights(&p);
        assert_relative_eq!(w.theta0 + w.theta1 + w.theta2, 1.0, epsilon = 1e-15);
        assert_eq!(
            plim_ope3(&OpeParams {
                lambda1: 1.0,
                sigma_psi: 0.0,
                ..base()
            }),
            1.0
        );
        assert!(
            (plim_ope3(&OpeParams {
                lambda1: 1.0,
                sigma_psi: 1e-6,
                ..base()
            }) - 1.0)
                .abs()
                < 1e-9
        );
    }

    #[test]
    fn sign_constraint_and_overrides() {
        let p = OpeParams {
            gamma1: -0.5,
            ..base()
        };
        assert!(p.validate().is_err());
        assert!(OpeParams {
            enforce_sign: false,
            ..p
        }
        .validate()
        .is_ok());
        assert!(OpeParams {
            sigma_x: 0.0,
            ..base()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn noise_free_sample_is_deterministic_line() {
        let p = OpeParams {
            sigma_eta: 0.0,
            sigma_nu: 0.0,
            sigma_psi: 0.0,
            lambda1: 1.0,
            ..base()
        };
        let s = simulate(&p, 500, 50, 3).unwrap();
        for i in 0..500 {
            assert_relative_eq!(s.y[i], p.alpha() + p.beta() * s.x[i], epsilon = 1e-12);
        }
        assert_relative_eq!(
            estimate_proxy_beta(&s, Proxy::Ope2).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            estimate_proxy_beta(&s, Proxy::Ope3).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        // one occupation per person: the bin mean is the person's own earnings
        let s = simulate(&p, 50, 50, 3).unwrap();
        assert_relative_eq!(
            estimate_proxy_beta(&s, Proxy::Ope1).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn binning_retention_limits() {
        // one bin keeps nothing, two bins keep 2/pi
        assert!(normal_binning_retention(1).abs() < 1e-15);
        assert_relative_eq!(
            normal_binning_retention(2),
            2.0 / std::f64::consts::PI,
            epsilon = 1e-12
        );
        let r = normal_binning_retention(50);
        assert!(r > 0.99 && r < 1.0);
        assert!(normal_binning_retention(500) > r);
    }

    #[test]
    fn same_seed_same_sample() {
        assert_eq!(
            simulate(&base(), 1000, 10, 9).unwrap(),
            simulate(&base(), 1000, 10, 9).unwrap()
        );
        assert_ne!(
            simulate(&base(), 1000, 10, 9).unwrap().x,
            simulate(&base(), 1000, 10, 10).unwrap().x
        );
    }

    #[test]
    fn moments_of_x_within_four_standard_errors() {
        let p = OpeParams {
            mu_x: 2.0,
            sigma_x: 3.0,
            ..base()
        };
        let n = 100_000;
        let s = simulate(&p, n, 50, 17).unwrap();
        let m = stats::mean(&s.x);
        let sd = stats::variance(&s.x).sqrt();
        let nf = n as f64;
        assert!((m - 2.0).abs() < 4.0 * 3.0 / nf.sqrt());
        // se of the sample sd is about sigma / sqrt(2n)
        assert!((sd - 3.0).abs() < 4.0 * 3.0 / (2.0 * nf).sqrt());
    }

    #[test]
    fn bins_are_equal_frequency_and_merge_ties() {
        let v: Vec<f64> = (0..100).map(f64::from).collect();
        let (b, k, w) = equal_frequency_bins(&v, 10);
        assert_eq!(k, 10);
        assert!(w.is_empty());
        for j in 0..10 {
            assert_eq!(b.iter().filter(|x| **x == j).count(), 10);
        }
        let (b, k, w) = equal_frequency_bins(&[1.0, 1.0, 1.0, 2.0], 4);
        assert_eq!(b, vec![0, 0, 0, 1]);
        assert_eq!(k, 2);
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn ope1_slope_ignores_constant_shift_in_y() {
        let s = simulate(&base(), 5000, 20, 1).unwrap();
        let mut t = s.clone();
        t.y.iter_mut().for_each(|y| *y += 12.5);
        let a = estimate_proxy_beta(&s, Proxy::Ope1).unwrap();
        let b = estimate_proxy_beta(&t, Proxy::Ope1).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn sweep_is_seed_stable_and_ordered() {
        let cfg = SweepConfig {
            n: 2000,
            bins: 20,
            replications: 2,
            seed: 4,
            sweep: BTreeMap::from([
                ("sigma_psi".to_string(), vec![2.0, 0.5]),
                ("lambda1".to_string(), vec![1.0]),
            ]),
        };
        let a = run_sweep(&base(), &cfg).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a[0].params.sigma_psi, 2.0);
        assert_eq!(a[2].params.sigma_psi, 0.5);
        let one_thread = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        assert_eq!(one_thread.install(|| run_sweep(&base(), &cfg)).unwrap(), a);
        assert_eq!(sweep_table(&a).lines().count(), 5);
    }

    proptest! {
        #[test]
        fn ope1_plim_between_delta1_and_beta(
            d1 in 0.0f64..2.0, g1 in 0.0f64..2.0, sx in 0.1f64..3.0, se in 0.01f64..3.0, sign in prop::bool::ANY
        ) {
            let s = if sign { 1.0 } else { -1.0 };
            let p = OpeParams { delta1: s * d1, gamma1: s * g1, sigma_x: sx, sigma_eta: se, ..OpeParams::default() };
            let v = plim_ope1(&p);
            let (lo, hi) = if p.delta1 <= p.beta() { (p.delta1, p.beta()) } else { (p.beta(), p.delta1) };
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }

        #[test]
        fn theta_weights_are_a_partition(
            d1 in -2.0f64..2.0, l1 in -2.0f64..2.0, sx in 0.1f64..3.0, se in 0.0f64..3.0, sp in 0.0f64..3.0
        ) {
            let p = OpeParams { delta1: d1, gamma1: d1, lambda1: l1, sigma_x: sx, sigma_eta: se, sigma_psi: sp, ..OpeParams::default() };
            let t = theta_weights(&p);
            prop_assert!((t.theta0 + t.theta1 + t.theta2 - 1.0).abs() < 1e-12);
            for w in [t.theta0, t.theta1, t.theta2] {
                prop_assert!((0.0..=1.0).contains(&w));
            }
            prop_assert!((plim_ope3(&p) - p.beta()).abs() <= (plim_ope1(&p) - p.beta()).abs() + 1e-12);
        }

        #[test]
        fn ope3_bias_shrinks_as_sigma_psi_falls(
            d1 in 0.01f64..2.0, g1 in 0.01f64..2.0, l1 in 0.1f64..2.0, se in 0.1f64..3.0
        ) {
            let mut last = f64::INFINITY;
            for sp in [4.0, 2.0, 1.0, 0.5, 0.25, 0.1, 0.01] {
                let p = OpeParams { delta1: d1, gamma1: g1, lambda1: l1, sigma_eta: se, sigma_psi: sp, ..OpeParams::default() };
                let b = (plim_ope3(&p) - p.beta()).abs();
                prop_assert!(b <= last + 1e-15);
                last = b;
            }
        }
    }
}
