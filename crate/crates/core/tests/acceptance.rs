//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p lido --test acceptance`. The process exits 0 after
//! reporting; set `LIDO_ACCEPTANCE_STRICT=1` to exit 1 when any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use lido::bias::{
    ratio_density, ratio_table, run_comparison, run_gap_regression, type_s_table, ComparisonSpec,
    GapConfig, ScoredSample, TypeSDefinition, EARNINGS, OVERALL,
};
use lido::lasso::{
    cv_select, default_grid, fit_cv, kkt_violation, lambda_max, lasso_path, soft_threshold,
    LassoOptions, SelectionRule,
};
use lido::mobility::{simulate_mobility_bias, MobilityErrorParams};
use lido::ope::{estimate_proxy_beta, simulate, OpeParams, Proxy};
use lido::regression::stats::median;
use lido::regression::{cluster_vcov, ols_fit, spearman_rho, weighted_median, DesignMatrix};
use lido::rng;
use lido::scores::{build_lido, build_occscore, LidoConfig, OccscoreConfig};
use lido::synth::PopulationSpec;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

const SEEDS: u64 = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn med(v: Vec<f64>) -> f64 {
    median(&v).expect("non-empty")
}

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
}

fn ope_params() -> OpeParams {
    OpeParams {
        mu_x: 0.0,
        sigma_x: 1.0,
        delta0: 0.0,
        gamma0: 0.0,
        delta1: 0.5,
        gamma1: 0.5,
        sigma_eta: 1.0,
        sigma_nu: 1.0,
        ..OpeParams::default()
    }
}

fn ope_median(p: &OpeParams, proxy: Proxy) -> f64 {
    med((0..SEEDS)
        .into_par_iter()
        .map(|s| estimate_proxy_beta(&simulate(p, 200_000, 50, s).unwrap(), proxy).unwrap())
        .collect())
}

fn criterion_1() -> Outcome {
    let b = ope_median(&ope_params(), Proxy::Ope1);
    outcome(
        (b - 0.6).abs() <= 0.01,
        format!("median ope1 slope {b:.4}, target 0.6 +- 0.01"),
    )
}

fn criterion_2() -> Outcome {
    let b = ope_median(&ope_params(), Proxy::Ope2);
    outcome(
        (b - 1.0).abs() <= 0.01,
        format!("median ope2 slope {b:.4}, target 1.0 +- 0.01"),
    )
}

fn criterion_3() -> Outcome {
    let base = OpeParams {
        lambda1: 1.0,
        ..ope_params()
    };
    let beta = base.beta();
    let ope1_bias = (ope_median(&base, Proxy::Ope1) - beta).abs();
    let biases: Vec<f64> = [2.0, 1.0, 0.5, 0.1]
        .iter()
        .map(|&sp| {
            (ope_median(
                &OpeParams {
                    sigma_psi: sp,
                    ..base
                },
                Proxy::Ope3,
            ) - beta)
                .abs()
        })
        .collect();
    let monotone = biases.windows(2).all(|w| w[1] < w[0]);
    let last = biases[3];
    outcome(
        monotone && last < 0.25 * ope1_bias,
        format!("ope3 |bias| over sigma_psi 2, 1, 0.5, 0.1: {biases:.4?}; ope1 |bias| {ope1_bias:.4}, limit {:.4}", 0.25 * ope1_bias),
    )
}

fn normal_columns(r: &mut impl Rng, n: usize, p: usize) -> Vec<Vec<f64>> {
    (0..p)
        .map(|_| (0..n).map(|_| r.sample(StandardNormal)).collect())
        .collect()
}

fn design(cols: &[Vec<f64>]) -> DesignMatrix {
    let names: Vec<String> = (0..cols.len()).map(|j| format!("x{j}")).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    DesignMatrix::from_columns(&names, cols, true).unwrap()
}

/// Proximal gradient on the standardized two-column problem, mapped back to
/// the original scale.
fn ista(c: &[Vec<f64>], y: &[f64], lambda: f64) -> (f64, [f64; 2]) {
    let n = y.len() as f64;
    let stdz = |c: &[f64]| {
        let m = c.iter().sum::<f64>() / n;
        let s = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
        (m, s, c.iter().map(|v| (v - m) / s).collect::<Vec<f64>>())
    };
    let (m1, s1, z1) = stdz(&c[0]);
    let (m2, s2, z2) = stdz(&c[1]);
    let my = y.iter().sum::<f64>() / n;
    let yc: Vec<f64> = y.iter().map(|v| v - my).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / n;
    let (g11, g12, g22) = (dot(&z1, &z1), dot(&z1, &z2), dot(&z2, &z2));
    let tr = g11 + g22;
    let step = 1.0 / (tr / 2.0 + (tr * tr / 4.0 - (g11 * g22 - g12 * g12)).sqrt());
    let (c1y, c2y) = (dot(&z1, &yc), dot(&z2, &yc));
    let (mut b1, mut b2) = (0.0f64, 0.0f64);
    for _ in 0..5_000_000 {
        let n1 = soft_threshold(b1 - step * (g11 * b1 + g12 * b2 - c1y), step * lambda);
        let n2 = soft_threshold(b2 - step * (g12 * b1 + g22 * b2 - c2y), step * lambda);
        let d = (n1 - b1).abs().max((n2 - b2).abs());
        (b1, b2) = (n1, n2);
        if d < 1e-15 {
            break;
        }
    }
    let (o1, o2) = (b1 / s1, b2 / s2);
    (my - o1 * m1 - o2 * m2, [o1, o2])
}

fn criterion_4() -> Outcome {
    let opts = LassoOptions {
        tol: 1e-12,
        max_iter: 100_000,
        ..LassoOptions::default()
    };
    // (a) zero-penalty endpoint against least squares
    let mut r = rng::rng_from_seed(4);
    let cols = normal_columns(&mut r, 200, 10);
    let y: Vec<f64> = (0..200)
        .map(|i| {
            2.0 + cols
                .iter()
                .enumerate()
                .map(|(j, c)| (j as f64 - 4.5) * 0.2 * c[i])
                .sum::<f64>()
                + r.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let x = design(&cols);
    let mut grid = default_grid(lambda_max(&x, &y).unwrap(), 50, 1e-4);
    grid.push(0.0);
    let path = lasso_path(&x, &y, &grid, &opts).unwrap();
    let ols = ols_fit(&x, &y, None).unwrap();
    let end = path.last().unwrap();
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-12);
    let mut worst_ols = rel(end.intercept, ols.coefficients[0]);
    for (j, b) in end.coefficients.iter().enumerate() {
        worst_ols = worst_ols.max(rel(*b, ols.coefficients[j + 1]));
    }
    // (b) optimality conditions along the whole path
    let worst_kkt = path
        .iter()
        .map(|f| kkt_violation(&x, &y, f))
        .fold(0.0, f64::max);
    // (c) two-column fixtures against proximal gradient
    let mut worst_ista = 0.0f64;
    for f in 0..20u64 {
        let mut r = rng::rng_from_seed(400 + f);
        let n = 30 + 5 * f as usize;
        let c1: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
        let c2: Vec<f64> = (0..n)
            .map(|i| 0.7 * c1[i] + r.random_range(-1.0..1.0))
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|i| 1.0 + 0.8 * c1[i] - 0.6 * c2[i] + r.sample::<f64, _>(StandardNormal))
            .collect();
        let cols = vec![c1, c2];
        let x = design(&cols);
        let lm = lambda_max(&x, &y).unwrap();
        let grid = [0.8 * lm, 0.4 * lm, 0.1 * lm, 0.01 * lm];
        for (fit, &l) in lasso_path(&x, &y, &grid, &opts).unwrap().iter().zip(&grid) {
            let (a, b) = ista(&cols, &y, l);
            worst_ista = worst_ista
                .max((fit.intercept - a).abs())
                .max((fit.coefficients[0] - b[0]).abs())
                .max((fit.coefficients[1] - b[1]).abs());
        }
    }
    outcome(
        worst_ols <= 1e-6 && worst_kkt <= 1e-6 && worst_ista <= 1e-5,
        format!("ols rel err {worst_ols:.1e} (<= 1e-6), max kkt {worst_kkt:.1e} over {} points, ista err {worst_ista:.1e} (<= 1e-5)", path.len()),
    )
}

fn noise_fixture(seed: u64) -> (DesignMatrix, Vec<f64>) {
    let mut r = rng::stream(seed, 0);
    let cols = normal_columns(&mut r, 500, 50);
    let y: Vec<f64> = (0..500).map(|_| r.sample(StandardNormal)).collect();
    (design(&cols), y)
}

fn criterion_5() -> Outcome {
    let opts = LassoOptions::default();
    let (x, y) = noise_fixture(0);
    let one = pool(1).install(|| cv_select(&x, &y, 10, None, 5, &opts).unwrap());
    let eight = pool(8).install(|| cv_select(&x, &y, 10, None, 5, &opts).unwrap());
    let bits = |v: &[f64]| v.iter().map(|m| m.to_bits()).collect::<Vec<_>>();
    let identical = one == eight && bits(&one.mean_mse) == bits(&eight.mean_mse);
    let nonzero: Vec<usize> = (0..20u64)
        .into_par_iter()
        .map(|s| {
            let (x, y) = noise_fixture(s);
            fit_cv(&x, &y, 10, s, &opts, SelectionRule::LambdaMin)
                .unwrap()
                .1
                .n_nonzero
        })
        .collect();
    let sparse = nonzero.iter().filter(|&&k| k <= 3).count();
    outcome(
        identical && sparse >= 18,
        format!("threads 1 vs 8 identical: {identical}; seeds with <= 3 nonzero: {sparse}/20 (need 18), counts {nonzero:?}"),
    )
}

/// Type S rates, race/sex mean ratios and gaps for one synthetic draw.
struct ProxyRun {
    type_s: BTreeMap<String, f64>,
    race_sex_ratio: BTreeMap<String, f64>,
    gaps: BTreeMap<String, (f64, f64)>,
    true_ci: [(f64, f64); 2],
}

const PROXIES: [&str; 2] = ["occscore", "lido"];
const GAP_TERMS: [&str; 2] = ["race[black]", "sex[female]"];
const TRUE_GAPS: [f64; 2] = [-0.3, -0.5];

fn proxy_run(seed: u64) -> ProxyRun {
    let spec = PopulationSpec::default();
    let base = spec.generate(20_000, rng::derive_seed(seed, 0)).unwrap();
    let analysis = spec.generate(20_000, rng::derive_seed(seed, 1)).unwrap();
    let occ = build_occscore(&base, &OccscoreConfig::default()).unwrap();
    let lid = build_lido(
        &base,
        &LidoConfig {
            seed,
            ..LidoConfig::default()
        },
    )
    .unwrap();
    let mut sample = ScoredSample::new(analysis);
    sample.attach("occscore", &occ).unwrap();
    sample.attach("lido", &lid).unwrap();
    let proxies: Vec<String> = PROXIES.iter().map(|p| p.to_string()).collect();
    let run = run_comparison(&sample, &ComparisonSpec::default(), &proxies).unwrap();
    let type_s = type_s_table(&run, 0.05, TypeSDefinition::ProxySignificant)
        .into_iter()
        .filter(|r| r.category == OVERALL)
        .map(|r| (r.proxy, r.rate))
        .collect();
    let race_sex_ratio = ratio_table(&run)
        .rows
        .into_iter()
        .filter(|r| r.category == "race_sex")
        .map(|r| (r.proxy, r.mean_ratio))
        .collect();
    let gap = |dv: &str| {
        run_gap_regression(&sample, dv, &GapConfig::default())
            .unwrap()
            .fit
    };
    let truth = gap(EARNINGS);
    let true_ci = GAP_TERMS.map(|t| truth.confint(truth.index_of(t).unwrap(), 0.95));
    let gaps = PROXIES
        .iter()
        .map(|p| {
            let f = gap(p);
            let [b, s] = GAP_TERMS.map(|t| f.coef(t).unwrap());
            (p.to_string(), (b, s))
        })
        .collect();
    ProxyRun {
        type_s,
        race_sex_ratio,
        gaps,
        true_ci,
    }
}

fn criterion_6(runs: &[ProxyRun]) -> Outcome {
    let rate = |p: &str| med(runs.iter().map(|r| r.type_s[p]).collect());
    let (occ, lid) = (rate("occscore"), rate("lido"));
    outcome(
        lid <= occ && occ > 0.0,
        format!("median overall conflicting-sign rate: lido {lid:.3} <= occscore {occ:.3}, occscore > 0"),
    )
}

fn criterion_7(runs: &[ProxyRun]) -> Outcome {
    let dist = |p: &str| {
        med(runs
            .iter()
            .map(|r| (r.race_sex_ratio[p] - 1.0).abs())
            .collect())
    };
    let ratio = |p: &str| med(runs.iter().map(|r| r.race_sex_ratio[p]).collect());
    let (occ, lid) = (dist("occscore"), dist("lido"));
    outcome(
        lid < occ,
        format!(
            "median race_sex mean ratio: lido {:.3}, occscore {:.3}; median |ratio - 1|: lido {lid:.3} < occscore {occ:.3}",
            ratio("lido"),
            ratio("occscore")
        ),
    )
}

fn criterion_8(run: &ProxyRun) -> Outcome {
    let covered = run
        .true_ci
        .iter()
        .zip(TRUE_GAPS)
        .all(|((lo, hi), t)| *lo < t && t < *hi);
    let (lb, lf) = run.gaps["lido"];
    let lido_ok = [lb, lf]
        .iter()
        .zip(TRUE_GAPS)
        .all(|(b, t)| b.signum() == t.signum() && (b - t).abs() <= 0.10);
    let (_, of) = run.gaps["occscore"];
    let attenuated = of.abs() <= 0.75 * TRUE_GAPS[1].abs();
    outcome(
        covered && lido_ok && attenuated,
        format!(
            "earnings CIs black ({:.3}, {:.3}) female ({:.3}, {:.3}); lido black {lb:.3} female {lf:.3} (+- 0.10); occscore female {of:.3} (|.| <= 0.375)",
            run.true_ci[0].0, run.true_ci[0].1, run.true_ci[1].0, run.true_ci[1].1
        ),
    )
}

fn mobility_median(p: &MobilityErrorParams) -> f64 {
    med((0..SEEDS)
        .into_par_iter()
        .map(|s| simulate_mobility_bias(p, 100_000, s).unwrap().beta_hat)
        .collect())
}

fn criterion_9() -> Outcome {
    let matched = MobilityErrorParams {
        beta1: 0.5,
        tilde_beta1: 0.5,
        ..MobilityErrorParams::default()
    };
    let untransmitted = MobilityErrorParams {
        tilde_beta1: 0.0,
        sigma_e_father: 1.0,
        sigma_father_y: 1.0,
        ..matched
    };
    let a = mobility_median(&matched);
    let b = mobility_median(&untransmitted);
    outcome(
        (a - 0.5).abs() <= 0.02 && b <= 0.8 * 0.5,
        format!("matched error {a:.4} (0.5 +- 0.02); untransmitted error {b:.4} (<= 0.40)"),
    )
}

/// Sandwich variance written out from its definition with explicit inverses.
fn brute_cluster_vcov(cols: &[Vec<f64>], y: &[f64], ids: &[usize]) -> DMatrix<f64> {
    let n = y.len();
    let k = cols.len() + 1;
    let x = DMatrix::from_fn(n, k, |i, j| if j == 0 { 1.0 } else { cols[j - 1][i] });
    let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
    let b = &xtx_inv * x.transpose() * DVector::from_column_slice(y);
    let e = DVector::from_column_slice(y) - &x * b;
    let groups: std::collections::BTreeSet<usize> = ids.iter().copied().collect();
    let mut meat = DMatrix::zeros(k, k);
    for g in &groups {
        let mut s = DVector::zeros(k);
        for i in (0..n).filter(|&i| ids[i] == *g) {
            s += x.row(i).transpose() * e[i];
        }
        meat += &s * s.transpose();
    }
    let gf = groups.len() as f64;
    let c = gf / (gf - 1.0) * (n as f64 - 1.0) / (n as f64 - k as f64);
    &xtx_inv * meat * &xtx_inv * c
}

fn criterion_10() -> Outcome {
    let mut failures = Vec::new();
    let wm = [
        (vec![10.0, 20.0, 30.0, 40.0], vec![1.0; 4], 25.0),
        (vec![1.0, 2.0, 3.0], vec![1.0; 3], 2.0),
        (vec![1.0, 3.0], vec![1.0, 3.0], 3.0),
    ];
    for (v, w, want) in &wm {
        if weighted_median(v, w).unwrap() != *want {
            failures.push(format!("weighted_median {v:?}"));
        }
    }
    // mid-ranks (1, 2.5, 2.5, 4, 5.5, 5.5) and (2, 1, 3.5, 3.5, 6, 5)
    let rho = spearman_rho(
        &[1.0, 2.0, 2.0, 3.0, 4.0, 4.0],
        &[2.0, 1.0, 3.0, 3.0, 5.0, 4.0],
    )
    .unwrap();
    let want = 14.25 / (16.5f64 * 17.0).sqrt();
    if (rho - want).abs() > 1e-12 {
        failures.push(format!("spearman {rho} vs {want}"));
    }
    let mut r = rng::rng_from_seed(10);
    let n = 30;
    let cols = normal_columns(&mut r, n, 2);
    let y: Vec<f64> = (0..n)
        .map(|i| 1.0 + cols[0][i] - 0.5 * cols[1][i] + r.sample::<f64, _>(StandardNormal))
        .collect();
    let ids: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let x = design(&cols);
    let fit = ols_fit(&x, &y, None).unwrap();
    let v = cluster_vcov(&fit, &x, &fit.residuals, &ids).unwrap();
    let vcov_err = (v - brute_cluster_vcov(&cols, &y, &ids)).abs().max();
    if vcov_err > 1e-10 {
        failures.push(format!("cluster vcov err {vcov_err:e}"));
    }
    let mut r = rng::rng_from_seed(11);
    let draws: Vec<f64> = (0..10_000).map(|_| r.sample(StandardNormal)).collect();
    let d = ratio_density(&draws, None).unwrap();
    let at0 = d.at(0.0);
    if (at0 - 0.3989).abs() > 0.03 {
        failures.push(format!("kde at 0: {at0}"));
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("medians and ranks exact, vcov err {vcov_err:.1e} (<= 1e-10), kde at 0 {at0:.4} (0.3989 +- 0.03)")
        } else {
            failures.join("; ")
        },
    )
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

const PIPELINE: [(&str, &str); 13] = [
    ("ingest", "ingest.toml"),
    ("crosswalk", "crosswalk.toml"),
    ("build-scores", "occscore.toml"),
    ("build-scores", "lido.toml"),
    ("score", "score.toml"),
    ("gaps", "gaps.toml"),
    ("type-s", "comparison.toml"),
    ("ratios", "comparison.toml"),
    ("density", "comparison.toml"),
    ("persistence", "persistence.toml"),
    ("mobility", "mobility.toml"),
    ("simulate-ope", "ope.toml"),
    ("mobility-sim", "mobility_sim.toml"),
];

fn pipeline(root: &Path, threads: &str) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let runs = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/runs");
    let mut all = BTreeMap::new();
    for (i, (verb, cfg)) in PIPELINE.iter().enumerate() {
        let out = root.join(format!("{i:02}-{verb}"));
        let o = Command::new(env!("CARGO_BIN_EXE_lido"))
            .arg(verb)
            .arg("--config")
            .arg(runs.join(cfg))
            .args(["--threads", threads, "--out"])
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(format!(
                "{verb} {cfg}: {}",
                String::from_utf8_lossy(&o.stderr).trim()
            ));
        }
        for (k, v) in tree(&out) {
            all.insert(format!("{i:02}-{verb}/{k}"), v);
        }
    }
    Ok(all)
}

fn criterion_11() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let runs: Result<Vec<_>, String> = [("a", "1"), ("b", "1"), ("c", "8")]
        .iter()
        .map(|(n, t)| pipeline(&dir.path().join(n), t))
        .collect();
    match runs {
        Err(e) => outcome(false, e),
        Ok(r) => {
            let rerun = r[0] == r[1];
            let threads = r[0] == r[2];
            outcome(
                rerun && threads,
                format!("{} files over {} verb runs; rerun identical: {rerun}; threads 1 vs 8 identical: {threads}", r[0].len(), PIPELINE.len()),
            )
        }
    }
}

fn main() {
    let mut failed = 0;
    let mut report = |id: u32, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {id:2} {verdict} {name} [{:.1}s] {}",
            t.elapsed().as_secs_f64(),
            o.detail
        );
    };
    report(1, "ope1 closed form", &mut criterion_1);
    report(2, "ope2 unbiased", &mut criterion_2);
    report(3, "ope3 ordering and limit", &mut criterion_3);
    report(4, "lasso correctness", &mut criterion_4);
    report(5, "cv determinism and sparsity", &mut criterion_5);
    let t = Instant::now();
    let runs: Vec<ProxyRun> = (0..SEEDS).into_par_iter().map(proxy_run).collect();
    println!(
        "synthetic proxy draws: {SEEDS} seeds in {:.1}s",
        t.elapsed().as_secs_f64()
    );
    report(6, "type s ordering", &mut || criterion_6(&runs));
    report(7, "race/sex ratios", &mut || criterion_7(&runs));
    report(8, "gap recovery", &mut || criterion_8(&runs[0]));
    report(9, "mobility bias", &mut criterion_9);
    report(10, "statistics primitives", &mut criterion_10);
    report(11, "cli determinism", &mut criterion_11);
    println!("{} of 11 criteria passed", 11 - failed);
    if failed > 0 && std::env::var_os("LIDO_ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
