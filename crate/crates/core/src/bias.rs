//! Bias diagnostics for income proxies: earnings-gap regressions, conflicting
//! sign rates, coefficient ratios, ratio densities and the persistence of
//! occupational income across census years.
//!
//! A [`ScoredSample`] holds records plus log-scale proxy scores. Every
//! regression here fits the true outcome (log earnings) and each proxy on one
//! shared design built from the rows where all outcomes are present.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PersonRecord;
use crate::regression::{
    build_design, fit_with_se, fmt_num, ols_fit, stats, ColumnKind, DesignMatrix, Formula,
    RegressionFit, SeSpec, TermExpr,
};
use crate::scores::{build_occscore, score_records, ScoreCoverage, ScoreTable};
use crate::{Error, Result};

/// Outcome label for log earnings.
pub const EARNINGS: &str = "earnings";

/// Terms with a true t-statistic below this in absolute value are left out
/// of coefficient ratios.
pub const MIN_TRUE_T: f64 = 0.1;

/// Records with log-scale proxy scores attached by label.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSample {
    pub records: Vec<PersonRecord>,
    pub log_scores: BTreeMap<String, Vec<Option<f64>>>,
}

impl ScoredSample {
    pub fn new(records: Vec<PersonRecord>) -> Self {
        ScoredSample {
            records,
            log_scores: BTreeMap::new(),
        }
    }

    /// Score every record with `table` and store the log-scale values.
    pub fn attach(&mut self, label: &str, table: &ScoreTable) -> Result<ScoreCoverage> {
        if label == EARNINGS {
            return Err(Error::Config(format!(
                "score label {EARNINGS:?} is reserved"
            )));
        }
        let scored = score_records(table, &self.records)?;
        let logs = scored
            .scores
            .iter()
            .map(|s| s.map(|v| table.to_log(v)).filter(|v| v.is_finite()))
            .collect();
        self.log_scores.insert(label.to_string(), logs);
        Ok(scored.coverage)
    }

    /// Attach precomputed log-scale values.
    pub fn with_log_scores(mut self, label: &str, values: Vec<Option<f64>>) -> Result<Self> {
        if values.len() != self.records.len() {
            return Err(Error::Data(format!(
                "{} score values for {} records",
                values.len(),
                self.records.len()
            )));
        }
        self.log_scores.insert(label.to_string(), values);
        Ok(self)
    }

    /// Log outcome values for `dv`: log earnings or an attached score.
    pub fn outcome(&self, dv: &str) -> Result<Vec<Option<f64>>> {
        if dv == EARNINGS {
            return Ok(self
                .records
                .iter()
                .map(|r| r.log_earnings().filter(|v| v.is_finite()))
                .collect());
        }
        self.log_scores
            .get(dv)
            .cloned()
            .ok_or_else(|| Error::Config(format!("no score attached under {dv:?}")))
    }

    /// Rows where every outcome in `dvs` is present.
    fn complete_rows(&self, dvs: &[String]) -> Result<(Vec<usize>, Vec<Vec<Option<f64>>>)> {
        let ys = dvs
            .iter()
            .map(|d| self.outcome(d))
            .collect::<Result<Vec<_>>>()?;
        for (d, y) in dvs.iter().zip(&ys) {
            if y.iter().all(Option::is_none) {
                return Err(Error::Data(format!(
                    "outcome {d:?} is missing on every record"
                )));
            }
        }
        let rows = (0..self.records.len())
            .filter(|&i| ys.iter().all(|y| y[i].is_some()))
            .collect();
        Ok((rows, ys))
    }
}

/// Fit every outcome on one design over the complete rows, in parallel.
fn fit_shared(
    sample: &ScoredSample,
    dvs: &[String],
    formula: &Formula,
    se: &SeSpec,
) -> Result<(DesignMatrix, Vec<RegressionFit>)> {
    let (rows, ys) = sample.complete_rows(dvs)?;
    if rows.is_empty() {
        return Err(Error::Data("no record has every outcome present".into()));
    }
    let recs: Vec<PersonRecord> = rows.iter().map(|&i| sample.records[i].clone()).collect();
    let design = build_design(&recs, formula)?;
    let fits = ys
        .par_iter()
        .map(|y| {
            let y: Vec<f64> = rows.iter().map(|&i| y[i].expect("complete row")).collect();
            fit_with_se(&recs, &design, &y, se)
        })
        .collect::<Vec<Result<RegressionFit>>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok((design, fits))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapConfig {
    pub formula: Formula,
    pub se: SeSpec,
}

impl Default for GapConfig {
    fn default() -> Self {
        GapConfig {
            formula: default_gap_formula(),
            se: SeSpec::Classical,
        }
    }
}

/// Sex, race and nativity dummies, a quadratic in age, and state dummies.
pub fn default_gap_formula() -> Formula {
    Formula::parse(&[
        "age",
        "age^2",
        "C(sex)",
        "C(race)",
        "C(nativity)",
        "C(state)",
    ])
    .expect("static formula")
    .with_reference("sex", "male")
    .with_reference("race", "white")
    .with_reference("nativity", "1")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapResult {
    pub dv: String,
    pub fit: RegressionFit,
    /// exp(coefficient) for every indicator term.
    pub implied_ratios: BTreeMap<String, f64>,
}

impl GapResult {
    pub fn ratio(&self, term: &str) -> Option<f64> {
        self.implied_ratios.get(term).copied()
    }
}

/// Regress each log outcome on the gap controls over the rows where all
/// outcomes are present. Indicator terms also report `exp(coefficient)`.
pub fn run_gap_regressions(
    sample: &ScoredSample,
    dvs: &[String],
    cfg: &GapConfig,
) -> Result<Vec<GapResult>> {
    let (design, fits) = fit_shared(sample, dvs, &cfg.formula, &cfg.se)?;
    let indicators: BTreeSet<&str> = design
        .columns
        .iter()
        .filter(|c| matches!(c.kind, ColumnKind::Dummy | ColumnKind::Interaction))
        .filter(|c| c.name.contains('['))
        .map(|c| c.name.as_str())
        .collect();
    Ok(dvs
        .iter()
        .zip(fits)
        .map(|(dv, fit)| {
            let implied_ratios = fit
                .terms
                .iter()
                .zip(&fit.coefficients)
                .filter(|(t, _)| indicators.contains(t.as_str()))
                .map(|(t, b)| (t.clone(), b.exp()))
                .collect();
            GapResult {
                dv: dv.clone(),
                fit,
                implied_ratios,
            }
        })
        .collect())
}

/// Single-outcome form of [`run_gap_regressions`].
pub fn run_gap_regression(sample: &ScoredSample, dv: &str, cfg: &GapConfig) -> Result<GapResult> {
    Ok(run_gap_regressions(sample, &[dv.to_string()], cfg)?.remove(0))
}

/// Long table: one row per (outcome, term).
pub fn gap_table(results: &[GapResult]) -> String {
    let mut out = String::from("dv\tterm\testimate\tstd_error\tp_value\timplied_ratio\tn_obs\n");
    for r in results {
        for (i, t) in r.fit.terms.iter().enumerate() {
            let ratio = r.ratio(t).map_or_else(|| "NA".to_string(), fmt_num);
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.dv,
                t,
                fmt_num(r.fit.coefficients[i]),
                fmt_num(r.fit.se(i)),
                fmt_num(r.fit.p_value(i)),
                ratio,
                r.fit.n_obs
            ));
        }
    }
    out
}

/// Category assignment of regression terms.
///
/// A term takes the category of its first variable unless it is listed in
/// `terms`. Unassigned terms are left out of the category tables.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CategoryMap {
    /// Category -> variables.
    pub categories: BTreeMap<String, Vec<String>>,
    /// Term -> category overrides.
    pub terms: BTreeMap<String, String>,
}

impl CategoryMap {
    /// Age, state, birthplace, race-sex and family-household groups.
    pub fn standard() -> Self {
        let cat = |vars: &[&str]| vars.iter().map(ToString::to_string).collect::<Vec<_>>();
        CategoryMap {
            categories: BTreeMap::from([
                ("age".to_string(), cat(&["age", "age_c", "age_group"])),
                ("state".to_string(), cat(&["state"])),
                ("birthplace".to_string(), cat(&["birthplace", "nativity"])),
                ("race_sex".to_string(), cat(&["sex", "race"])),
                (
                    "family_household".to_string(),
                    cat(&[
                        "family_size",
                        "marital_status",
                        "relation_to_head",
                        "n_families",
                    ]),
                ),
            ]),
            terms: BTreeMap::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let m: CategoryMap = toml::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
        for (cat, vars) in &self.categories {
            for v in vars {
                if let Some(other) = seen.insert(v, cat) {
                    return Err(Error::Config(format!(
                        "variable {v:?} is in categories {other:?} and {cat:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn category_of(&self, term: &str) -> Option<String> {
        if let Some(c) = self.terms.get(term) {
            return Some(c.clone());
        }
        let lead = TermExpr::parse(term).ok()?.lead_var()?.to_string();
        self.categories
            .iter()
            .find(|(_, vars)| vars.contains(&lead))
            .map(|(c, _)| c.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparisonSpec {
    pub name: String,
    pub formula: Formula,
    pub categories: CategoryMap,
    pub se: SeSpec,
}

impl Default for ComparisonSpec {
    fn default() -> Self {
        ComparisonSpec {
            name: "comparison".into(),
            formula: default_comparison_formula(),
            categories: CategoryMap::standard(),
            se: SeSpec::Classical,
        }
    }
}

/// Age-group, state, birthplace, sex-by-race and family/household dummies.
pub fn default_comparison_formula() -> Formula {
    Formula::parse(&[
        "C(age_group)",
        "C(state)",
        "C(birthplace)",
        "C(sex)",
        "C(race)",
        "C(sex)*C(race)",
        "C(family_size)",
        "C(marital_status)",
        "C(relation_to_head)",
        "C(n_families)",
    ])
    .expect("static formula")
    .with_reference("sex", "male")
    .with_reference("race", "white")
}

/// True and proxy fits on one shared design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRun {
    pub spec_name: String,
    pub true_fit: RegressionFit,
    pub proxy_fits: BTreeMap<String, RegressionFit>,
    /// Term -> category, for categorized terms present in every fit.
    pub term_categories: BTreeMap<String, String>,
    /// Non-intercept terms without a category.
    pub unassigned: Vec<String>,
}

/// Fit log earnings and every proxy on the spec's design.
pub fn run_comparison(
    sample: &ScoredSample,
    spec: &ComparisonSpec,
    proxies: &[String],
) -> Result<ComparisonRun> {
    if proxies.is_empty() {
        return Err(Error::Config(
            "a comparison needs at least one proxy".into(),
        ));
    }
    spec.categories.validate()?;
    let mut dvs = vec![EARNINGS.to_string()];
    dvs.extend(proxies.iter().cloned());
    let (_, mut fits) = fit_shared(sample, &dvs, &spec.formula, &spec.se)?;
    let true_fit = fits.remove(0);
    let proxy_fits: BTreeMap<String, RegressionFit> = proxies.iter().cloned().zip(fits).collect();
    let mut term_categories = BTreeMap::new();
    let mut unassigned = Vec::new();
    for t in &true_fit.terms {
        if t == crate::regression::INTERCEPT {
            continue;
        }
        if !proxy_fits.values().all(|f| f.index_of(t).is_some()) {
            continue;
        }
        match spec.categories.category_of(t) {
            Some(c) => {
                term_categories.insert(t.clone(), c);
            }
            None => unassigned.push(t.clone()),
        }
    }
    Ok(ComparisonRun {
        spec_name: spec.name.clone(),
        true_fit,
        proxy_fits,
        term_categories,
        unassigned,
    })
}

/// Which significance condition a conflicting sign must meet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeSDefinition {
    /// The proxy coefficient is significant.
    #[default]
    ProxySignificant,
    /// Both coefficients are significant.
    BothSignificant,
}

/// Label of the all-terms row.
pub const OVERALL: &str = "overall";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSRow {
    pub proxy: String,
    pub category: String,
    pub n_terms: usize,
    pub n_conflicting: usize,
    pub rate: f64,
}

/// Per proxy and category, the share of terms whose proxy and true
/// coefficients have opposite signs and meet the significance definition.
pub fn type_s_table(run: &ComparisonRun, alpha: f64, definition: TypeSDefinition) -> Vec<TypeSRow> {
    let mut out = Vec::new();
    for (proxy, pf) in &run.proxy_fits {
        let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for (term, cat) in &run.term_categories {
            let (i, j) = (
                run.true_fit.index_of(term).expect("shared term"),
                pf.index_of(term).expect("shared term"),
            );
            let (bt, bp) = (run.true_fit.coefficients[i], pf.coefficients[j]);
            let significant = match definition {
                TypeSDefinition::ProxySignificant => pf.is_significant(j, alpha),
                TypeSDefinition::BothSignificant => {
                    pf.is_significant(j, alpha) && run.true_fit.is_significant(i, alpha)
                }
            };
            let flagged = usize::from(bt * bp < 0.0 && significant);
            for key in [cat.as_str(), OVERALL] {
                let c = counts.entry(key).or_default();
                c.0 += 1;
                c.1 += flagged;
            }
        }
        for (cat, (n, k)) in counts {
            out.push(TypeSRow {
                proxy: proxy.clone(),
                category: cat.to_string(),
                n_terms: n,
                n_conflicting: k,
                rate: k as f64 / n as f64,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub proxy: String,
    pub category: String,
    pub n_terms: usize,
    /// Terms left out because the true t-statistic is near zero.
    pub n_excluded: usize,
    pub mean_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RatioTable {
    pub rows: Vec<RatioRow>,
    pub notes: Vec<String>,
}

/// Proxy over true coefficient for every eligible term, with its category.
pub fn coefficient_ratios(run: &ComparisonRun, proxy: &str) -> Result<Vec<(String, String, f64)>> {
    let pf = run
        .proxy_fits
        .get(proxy)
        .ok_or_else(|| Error::Config(format!("proxy {proxy:?} not in the run")))?;
    Ok(run
        .term_categories
        .iter()
        .filter_map(|(term, cat)| {
            let i = run.true_fit.index_of(term)?;
            if run.true_fit.t_stat(i).abs() < MIN_TRUE_T {
                return None;
            }
            let r = pf.coef(term)? / run.true_fit.coefficients[i];
            r.is_finite().then(|| (term.clone(), cat.clone(), r))
        })
        .collect())
}

/// Per proxy and category, the mean of proxy over true coefficients. Terms
/// with |true t| < [`MIN_TRUE_T`] are excluded; categories left without
/// terms are omitted with a note.
pub fn ratio_table(run: &ComparisonRun) -> RatioTable {
    let mut all_cats: BTreeMap<&str, usize> = BTreeMap::new();
    for cat in run.term_categories.values() {
        *all_cats.entry(cat).or_default() += 1;
    }
    let n_all = run.term_categories.len();
    let mut table = RatioTable::default();
    for proxy in run.proxy_fits.keys() {
        let ratios = coefficient_ratios(run, proxy).expect("proxy in run");
        let mut by_cat: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for (_, cat, r) in &ratios {
            by_cat.entry(cat).or_default().push(*r);
        }
        for (cat, total) in &all_cats {
            match by_cat.get(cat) {
                Some(v) => table.rows.push(RatioRow {
                    proxy: proxy.clone(),
                    category: cat.to_string(),
                    n_terms: v.len(),
                    n_excluded: total - v.len(),
                    mean_ratio: stats::mean(v),
                }),
                None => table
                    .notes
                    .push(format!("{proxy}: category {cat} has no eligible terms")),
            }
        }
        if ratios.is_empty() {
            table
                .notes
                .push(format!("{proxy}: no eligible terms overall"));
        } else {
            let v: Vec<f64> = ratios.iter().map(|r| r.2).collect();
            table.rows.push(RatioRow {
                proxy: proxy.clone(),
                category: OVERALL.into(),
                n_terms: v.len(),
                n_excluded: n_all - v.len(),
                mean_ratio: stats::mean(&v),
            });
        }
    }
    table
}

/// Wide table: one row per category, one column per proxy.
fn wide<'a>(cells: impl Iterator<Item = (&'a str, &'a str, String)>) -> String {
    let mut cols = BTreeSet::new();
    let mut rows: BTreeMap<&str, BTreeMap<&str, String>> = BTreeMap::new();
    for (cat, col, v) in cells {
        cols.insert(col);
        rows.entry(cat).or_default().insert(col, v);
    }
    let mut out = String::from("category");
    for c in &cols {
        out.push('\t');
        out.push_str(c);
    }
    out.push('\n');
    let mut keys: Vec<&str> = rows.keys().copied().filter(|k| *k != OVERALL).collect();
    if rows.contains_key(OVERALL) {
        keys.push(OVERALL);
    }
    for k in keys {
        out.push_str(k);
        for c in &cols {
            out.push('\t');
            out.push_str(rows[k].get(c).map_or("NA", String::as_str));
        }
        out.push('\n');
    }
    out
}

/// Rates with categories as rows and proxies as columns.
pub fn type_s_wide(rows: &[TypeSRow]) -> String {
    wide(
        rows.iter()
            .map(|r| (r.category.as_str(), r.proxy.as_str(), fmt_num(r.rate))),
    )
}

/// Mean ratios with categories as rows and proxies as columns.
pub fn ratio_wide(table: &RatioTable) -> String {
    wide(
        table
            .rows
            .iter()
            .map(|r| (r.category.as_str(), r.proxy.as_str(), fmt_num(r.mean_ratio))),
    )
}

/// Gaussian kernel density estimate on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density {
    pub bandwidth: f64,
    pub n: usize,
    pub points: Vec<(f64, f64)>,
    /// Trapezoid integral of the density over the grid.
    pub integral: f64,
    pub warnings: Vec<String>,
}

impl Density {
    /// Density at the grid point nearest to `x`.
    pub fn at(&self, x: f64) -> f64 {
        let i = self.points.partition_point(|p| p.0 < x);
        let cand = [i.saturating_sub(1), i.min(self.points.len() - 1)];
        let j = cand
            .into_iter()
            .min_by(|&a, &b| {
                (self.points[a].0 - x)
                    .abs()
                    .total_cmp(&(self.points[b].0 - x).abs())
            })
            .expect("non-empty");
        self.points[j].1
    }

    /// Grid point with the largest density.
    pub fn mode(&self) -> (f64, f64) {
        *self
            .points
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("x\tdensity\n");
        for (x, d) in &self.points {
            out.push_str(&format!("{}\t{}\n", fmt_num(*x), fmt_num(*d)));
        }
        out
    }
}

/// Grid points per bandwidth.
const STEPS_PER_BANDWIDTH: f64 = 8.0;
/// Grid half-width around each observation, in bandwidths.
const REACH: f64 = 8.0;

/// Silverman's rule: `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`. Falls back to
/// whichever spread is positive; `None` when both are zero.
pub fn silverman_bandwidth(x: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let sd = (stats::variance(x) * n / (n - 1.0)).sqrt();
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let iqr = (stats::quantile(&s, 0.75) - stats::quantile(&s, 0.25)) / 1.34;
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        (false, false) => return None,
    };
    Some(0.9 * spread * n.powf(-0.2))
}

/// Gaussian kernel density of `ratios`. The grid covers `x +- 8h` around
/// every observation at spacing `h / 8`; disjoint stretches are kept apart.
pub fn ratio_density(ratios: &[f64], bandwidth: Option<f64>) -> Result<Density> {
    let mut warnings = Vec::new();
    let x: Vec<f64> = ratios.iter().copied().filter(|v| v.is_finite()).collect();
    if x.len() < ratios.len() {
        warnings.push(format!(
            "{} non-finite ratios dropped",
            ratios.len() - x.len()
        ));
    }
    if x.len() < 2 {
        return Err(Error::Data(format!(
            "density needs at least 2 finite values, got {}",
            x.len()
        )));
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => {
            return Err(Error::Config(format!(
                "bandwidth must be positive, got {h}"
            )))
        }
        None => match silverman_bandwidth(&x) {
            Some(h) => h,
            None => {
                warnings.push("all values are equal; the density is a degenerate spike".into());
                (x[0].abs() * 1e-3).max(1e-3)
            }
        },
    };
    let mut sorted = x.clone();
    sorted.sort_by(f64::total_cmp);
    let step = h / STEPS_PER_BANDWIDTH;
    let mut spans: Vec<(f64, f64)> = Vec::new();
    for &v in &sorted {
        let (lo, hi) = (v - REACH * h, v + REACH * h);
        match spans.last_mut() {
            Some(s) if lo <= s.1 => s.1 = hi,
            _ => spans.push((lo, hi)),
        }
    }
    let norm = 1.0 / (x.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let kde = |g: f64| {
        norm * sorted
            .iter()
            .map(|v| (-0.5 * ((g - v) / h).powi(2)).exp())
            .sum::<f64>()
    };
    let mut points = Vec::new();
    let mut integral = 0.0;
    for (lo, hi) in spans {
        let m = ((hi - lo) / step).ceil() as usize;
        let span: Vec<(f64, f64)> = (0..=m)
            .into_par_iter()
            .map(|k| {
                let g = lo + k as f64 * step;
                (g, kde(g))
            })
            .collect();
        integral += span
            .windows(2)
            .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
            .sum::<f64>();
        points.extend(span);
    }
    if (integral - 1.0).abs() > 1e-3 {
        warnings.push(format!("density integrates to {integral}"));
    }
    Ok(Density {
        bandwidth: h,
        n: x.len(),
        points,
        integral,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceRow {
    pub year: i32,
    pub r_squared: f64,
    pub spearman_rho: f64,
    pub n_occupations: usize,
    pub n_persons: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PersistenceReport {
    pub rows: Vec<PersistenceRow>,
    pub warnings: Vec<String>,
}

impl PersistenceReport {
    pub fn to_table(&self) -> String {
        let mut out = String::from("year\tr_squared\tspearman_rho\tn_occupations\tn_persons\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.year,
                fmt_num(r.r_squared),
                fmt_num(r.spearman_rho),
                r.n_occupations,
                r.n_persons
            ));
        }
        out
    }
}

/// For each year, regress that year's occupation medians on the base scores
/// weighted by the year's cell sizes, and rank-correlate the two.
///
/// Year medians use the base table's median rule, so the base year compared
/// with itself gives R^2 = 1 and rho = 1. Years with fewer than three
/// occupations in common with the base are skipped with a warning.
pub fn persistence_stats(
    base: &ScoreTable,
    records_by_year: &BTreeMap<i32, Vec<PersonRecord>>,
) -> Result<PersistenceReport> {
    if base.occ_medians.is_empty() {
        return Err(Error::Config(
            "persistence needs a table of occupation medians".into(),
        ));
    }
    let cfg = base.occscore_config.clone().unwrap_or_default();
    let mut report = PersistenceReport::default();
    for (year, records) in records_by_year {
        let table = match build_occscore(records, &cfg) {
            Ok(t) => t,
            Err(e) => {
                report.warnings.push(format!("{year}: skipped ({e})"));
                continue;
            }
        };
        let mut cells: BTreeMap<&str, usize> = BTreeMap::new();
        for r in records
            .iter()
            .filter(|r| r.earnings.is_some_and(|e| e > 0.0 && e.is_finite()))
        {
            *cells.entry(r.occupation.as_str()).or_default() += 1;
        }
        let common: Vec<(&String, f64, f64)> = table
            .occ_medians
            .iter()
            .filter_map(|(occ, m)| base.occ_medians.get(occ).map(|b| (occ, *b, *m)))
            .collect();
        if common.len() < 3 {
            report.warnings.push(format!(
                "{year}: skipped ({} occupations in common with the base)",
                common.len()
            ));
            continue;
        }
        let x: Vec<f64> = common.iter().map(|c| c.1).collect();
        let y: Vec<f64> = common.iter().map(|c| c.2).collect();
        let w: Vec<f64> = common.iter().map(|c| cells[c.0.as_str()] as f64).collect();
        let design = DesignMatrix::from_columns(&["base_score"], std::slice::from_ref(&x), true)?;
        let fit = ols_fit(&design, &y, Some(&w))?;
        report.rows.push(PersistenceRow {
            year: *year,
            r_squared: fit.r_squared,
            spearman_rho: stats::spearman_rho(&x, &y)?,
            n_occupations: common.len(),
            n_persons: w.iter().sum::<f64>() as usize,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Race, Sex};
    use crate::rng;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn fit_from(terms: &[&str], coef: &[f64], se: &[f64]) -> RegressionFit {
        let k = terms.len();
        let mut vcov = DMatrix::zeros(k, k);
        for i in 0..k {
            vcov[(i, i)] = se[i] * se[i];
        }
        RegressionFit {
            terms: terms.iter().map(ToString::to_string).collect(),
            coefficients: coef.to_vec(),
            vcov,
            se_type: crate::regression::SeType::Classical,
            cluster_var: None,
            r_squared: 0.0,
            n_obs: 1000,
            n_clusters: None,
            df_resid: 990,
            dropped: Vec::new(),
            retained: (0..k).collect(),
            residuals: Vec::new(),
            weights: None,
            bread: DMatrix::zeros(0, 0),
        }
    }

    fn run(true_fit: RegressionFit, proxy: RegressionFit, cats: &[(&str, &str)]) -> ComparisonRun {
        ComparisonRun {
            spec_name: "t".into(),
            true_fit,
            proxy_fits: BTreeMap::from([("p".to_string(), proxy)]),
            term_categories: cats
                .iter()
                .map(|(t, c)| (t.to_string(), c.to_string()))
                .collect(),
            unassigned: Vec::new(),
        }
    }

    fn overall(rows: &[TypeSRow]) -> f64 {
        rows.iter().find(|r| r.category == OVERALL).unwrap().rate
    }

    const TERMS: [&str; 4] = ["a", "b", "c", "d"];
    const CATS: [(&str, &str); 4] = [("a", "age"), ("b", "age"), ("c", "state"), ("d", "state")];

    #[test]
    fn identical_fits_have_no_conflicts() {
        let f = fit_from(&TERMS, &[1.0, -1.0, 0.5, -0.2], &[0.1; 4]);
        let rows = type_s_table(
            &run(f.clone(), f, &CATS),
            0.05,
            TypeSDefinition::ProxySignificant,
        );
        assert!(rows.iter().all(|r| r.rate == 0.0));
        assert_eq!(rows.len(), 3);
    }

    #[test]
    fn hand_count_quarter() {
        let t = fit_from(&TERMS, &[1.0, -1.0, 0.5, -0.2], &[0.1; 4]);
        // a flips and is significant; c flips but its proxy se is huge
        let p = fit_from(&TERMS, &[-1.0, -1.0, -0.5, -0.2], &[0.1, 0.1, 10.0, 0.1]);
        let rows = type_s_table(&run(t, p, &CATS), 0.05, TypeSDefinition::ProxySignificant);
        assert_eq!(overall(&rows), 0.25);
        let age = rows.iter().find(|r| r.category == "age").unwrap();
        assert_eq!((age.n_terms, age.n_conflicting, age.rate), (2, 1, 0.5));
    }

    #[test]
    fn both_significant_needs_true_significance() {
        let t = fit_from(&TERMS, &[1.0, -1.0, 0.5, -0.2], &[10.0, 0.1, 0.1, 0.1]);
        let p = fit_from(&TERMS, &[-1.0, -1.0, 0.5, -0.2], &[0.1; 4]);
        let r = run(t, p, &CATS);
        assert_eq!(
            overall(&type_s_table(&r, 0.05, TypeSDefinition::ProxySignificant)),
            0.25
        );
        assert_eq!(
            overall(&type_s_table(&r, 0.05, TypeSDefinition::BothSignificant)),
            0.0
        );
    }

    #[test]
    fn ratio_examples() {
        let t = fit_from(&["a", "b", "c"], &[1.0, 1.0, 1.0], &[0.1; 3]);
        let p = fit_from(&["a", "b", "c"], &[0.2, 0.4, 0.9], &[0.1; 3]);
        let cats = [("a", "age"), ("b", "age"), ("c", "age")];
        let table = ratio_table(&run(t.clone(), p, &cats));
        let age = table.rows.iter().find(|r| r.category == "age").unwrap();
        assert!((age.mean_ratio - 0.5).abs() < 1e-15);
        let same = ratio_table(&run(t.clone(), t, &cats));
        assert!(same.rows.iter().all(|r| r.mean_ratio == 1.0));
    }

    #[test]
    fn near_zero_true_terms_are_excluded() {
        let t = fit_from(&["a", "b"], &[1.0, 0.001], &[0.1, 0.1]);
        let p = fit_from(&["a", "b"], &[0.5, 1.0], &[0.1, 0.1]);
        let table = ratio_table(&run(t, p, &[("a", "age"), ("b", "state")]));
        let age = table.rows.iter().find(|r| r.category == "age").unwrap();
        assert_eq!(age.mean_ratio, 0.5);
        assert!(table.rows.iter().all(|r| r.category != "state"));
        assert_eq!(table.notes.len(), 1);
    }

    #[test]
    fn wide_tables_put_overall_last() {
        let t = fit_from(&TERMS, &[1.0, -1.0, 0.5, -0.2], &[0.1; 4]);
        let rows = type_s_table(
            &run(t.clone(), t, &CATS),
            0.05,
            TypeSDefinition::ProxySignificant,
        );
        let w = type_s_wide(&rows);
        assert_eq!(w, "category\tp\nage\t0\nstate\t0\noverall\t0\n");
    }

    #[test]
    fn category_map_assignment() {
        let m = CategoryMap::standard();
        assert_eq!(
            m.category_of("sex[female]*race[black]").as_deref(),
            Some("race_sex")
        );
        assert_eq!(m.category_of("age_group[40-44]").as_deref(), Some("age"));
        assert_eq!(m.category_of("occupation[o01]"), None);
        let parsed = CategoryMap::parse(
            "[categories]\nage = [\"age_group\"]\n[terms]\n\"state[19]\" = \"age\"\n",
        )
        .unwrap();
        assert_eq!(parsed.category_of("state[19]").as_deref(), Some("age"));
        assert!(CategoryMap::parse("[categories]\na = [\"x\"]\nb = [\"x\"]\n").is_err());
    }

    #[test]
    fn normal_density_at_zero() {
        let mut r = rng::rng_from_seed(42);
        let x: Vec<f64> = (0..10_000)
            .map(|_| Normal::new(0.0, 1.0).unwrap().sample(&mut r))
            .collect();
        let d = ratio_density(&x, None).unwrap();
        assert!((d.at(0.0) - 0.398_942_3).abs() < 0.03, "{}", d.at(0.0));
        assert!((d.integral - 1.0).abs() < 1e-3);
        assert!(d.points.iter().all(|p| p.1 >= 0.0));
    }

    #[test]
    fn constant_input_warns_of_spike() {
        let d = ratio_density(&[0.7; 5], None).unwrap();
        assert!(d.warnings.iter().any(|w| w.contains("spike")));
        assert!((d.integral - 1.0).abs() < 1e-3);
        assert!(ratio_density(&[1.0], None).is_err());
        assert!(ratio_density(&[1.0, 2.0], Some(0.0)).is_err());
    }

    #[test]
    fn silverman_oracle() {
        // sd = 1.5811, IQR / 1.34 = 2 / 1.34; n = 5
        let h = silverman_bandwidth(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let want = 0.9 * (2.5f64).sqrt().min(2.0 / 1.34) * 5f64.powf(-0.2);
        assert!((h - want).abs() < 1e-15);
    }

    #[test]
    fn doubling_halves_the_mode_height() {
        let mut r = rng::rng_from_seed(5);
        let x: Vec<f64> = (0..2000)
            .map(|_| r.random::<f64>() + r.random::<f64>())
            .collect();
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let (m1, d1) = ratio_density(&x, None).unwrap().mode();
        let d2 = ratio_density(&x2, None).unwrap().at(2.0 * m1);
        assert!((d2 / d1 - 0.5).abs() < 0.025, "{}", d2 / d1);
    }

    fn year_records(year: i32, medians: &[f64]) -> Vec<PersonRecord> {
        let mut out = Vec::new();
        for (k, m) in medians.iter().enumerate() {
            for j in 0..(3 + k % 4) {
                let e = m * (1.0 + 0.01 * (j as f64 - 1.0));
                out.push(
                    PersonRecord::new(
                        format!("{year}-{k}-{j}"),
                        year,
                        40,
                        Sex::Male,
                        Race::White,
                        "19",
                        "Midwest",
                        format!("o{k:02}"),
                    )
                    .with_earnings(e),
                );
            }
        }
        out
    }

    #[test]
    fn base_year_against_itself_is_perfect() {
        let base_m: Vec<f64> = (0..20).map(|k| 1000.0 + 150.0 * k as f64).collect();
        let base_recs = year_records(2000, &base_m);
        let base = build_occscore(&base_recs, &Default::default()).unwrap();
        let rep = persistence_stats(&base, &BTreeMap::from([(2000, base_recs)])).unwrap();
        assert!((rep.rows[0].r_squared - 1.0).abs() < 1e-12);
        assert!((rep.rows[0].spearman_rho - 1.0).abs() < 1e-12);
    }

    #[test]
    fn drift_lowers_r_squared_and_monotone_distortion_keeps_rho() {
        let base_m: Vec<f64> = (0..30).map(|k| 1000.0 + 100.0 * k as f64).collect();
        let base = build_occscore(&year_records(2000, &base_m), &Default::default()).unwrap();
        let mut r = rng::rng_from_seed(8);
        let z: Vec<f64> = (0..30)
            .map(|_| Normal::new(0.0, 1.0).unwrap().sample(&mut r))
            .collect();
        let mut years = BTreeMap::new();
        for (d, year) in [1990, 1980, 1970, 1960].into_iter().enumerate() {
            let noisy: Vec<f64> = base_m
                .iter()
                .zip(&z)
                .map(|(m, e)| m + 300.0 * (d + 1) as f64 * e + 5000.0)
                .collect();
            years.insert(year, year_records(year, &noisy));
        }
        let rep = persistence_stats(&base, &years).unwrap();
        let r2: BTreeMap<i32, f64> = rep.rows.iter().map(|r| (r.year, r.r_squared)).collect();
        assert!(
            r2[&1990] > r2[&1980] && r2[&1980] > r2[&1970] && r2[&1970] > r2[&1960],
            "{r2:?}"
        );

        let squashed: Vec<f64> = base_m.iter().map(|m| m * m / 1000.0).collect();
        let rep = persistence_stats(
            &base,
            &BTreeMap::from([(1990, year_records(1990, &squashed))]),
        )
        .unwrap();
        assert!((rep.rows[0].spearman_rho - 1.0).abs() < 1e-12);
        assert!(rep.rows[0].r_squared < 1.0);
    }

    #[test]
    fn few_common_occupations_skip_the_year() {
        let base = build_occscore(
            &year_records(2000, &[1.0, 2.0, 3.0, 4.0]),
            &Default::default(),
        )
        .unwrap();
        let mut other = year_records(1990, &[5.0, 6.0]);
        for r in &mut other {
            r.occupation = format!("x{}", r.occupation);
        }
        let rep = persistence_stats(&base, &BTreeMap::from([(1990, other)])).unwrap();
        assert!(rep.rows.is_empty());
        assert_eq!(rep.warnings.len(), 1);
    }

    fn gap_sample(n: usize, seed: u64) -> ScoredSample {
        let mut r = rng::rng_from_seed(seed);
        let noise = Normal::new(0.0, 0.4).unwrap();
        let states = ["19", "17", "06", "36"];
        let recs = (0..n)
            .map(|i| {
                let sex = if r.random::<f64>() < 0.5 {
                    Sex::Female
                } else {
                    Sex::Male
                };
                let race = if r.random::<f64>() < 0.2 {
                    Race::Black
                } else {
                    Race::White
                };
                let age = r.random_range(20..65u32);
                let st = states[i % 4];
                let a = f64::from(age);
                let le = 8.0
                    - 0.3 * f64::from(u8::from(race == Race::Black))
                    - 0.5 * f64::from(u8::from(sex == Sex::Female))
                    + 0.05 * a
                    - 0.0005 * a * a
                    + 0.1 * (i % 4) as f64
                    + noise.sample(&mut r);
                let mut p =
                    PersonRecord::new(format!("p{i}"), 1950, age, sex, race, st, "Midwest", "o1")
                        .with_earnings(le.exp());
                p.nativity = true;
                p
            })
            .collect();
        ScoredSample::new(recs)
    }

    #[test]
    fn gap_regression_recovers_generator() {
        let s = gap_sample(5000, 1);
        let g = run_gap_regression(&s, EARNINGS, &GapConfig::default()).unwrap();
        for (term, truth) in [("race[black]", -0.3), ("sex[female]", -0.5)] {
            let i = g.fit.index_of(term).unwrap();
            let (lo, hi) = g.fit.confint(i, 0.95);
            assert!(lo < truth && truth < hi, "{term}: ({lo}, {hi})");
            assert!((g.ratio(term).unwrap() - g.fit.coefficients[i].exp()).abs() < 1e-15);
        }
        assert!(g.ratio("age").is_none());
    }

    #[test]
    fn zero_coefficient_implies_unit_ratio() {
        let s = gap_sample(400, 2);
        let zeros = vec![Some(1.0); s.records.len()];
        let s = s.with_log_scores("flat", zeros).unwrap();
        let g = run_gap_regression(&s, "flat", &GapConfig::default()).unwrap();
        for (t, r) in &g.implied_ratios {
            assert!((r - 1.0).abs() < 1e-9, "{t}: {r}");
        }
    }

    #[test]
    fn missing_outcome_is_an_error() {
        let s = gap_sample(100, 3);
        let s = s.clone().with_log_scores("none", vec![None; 100]).unwrap();
        assert!(run_gap_regression(&s, "none", &GapConfig::default()).is_err());
        assert!(run_gap_regression(&s, "absent", &GapConfig::default()).is_err());
    }

    #[test]
    fn shared_rows_across_outcomes() {
        let s = gap_sample(300, 4);
        let vals: Vec<Option<f64>> = (0..300)
            .map(|i| (i % 3 != 0).then_some(i as f64 * 0.01))
            .collect();
        let s = s.with_log_scores("partial", vals).unwrap();
        let gs = run_gap_regressions(
            &s,
            &[EARNINGS.into(), "partial".into()],
            &GapConfig::default(),
        )
        .unwrap();
        assert_eq!(gs[0].fit.n_obs, 200);
        assert_eq!(gs[1].fit.n_obs, 200);
        assert!(gap_table(&gs).lines().count() > 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn rates_in_unit_interval_and_nested(seed in any::<u64>(), k in 2usize..30) {
            let mut r = rng::rng_from_seed(seed);
            let terms: Vec<String> = (0..k).map(|i| format!("t{i}")).collect();
            let tr: Vec<&str> = terms.iter().map(String::as_str).collect();
            let mk = |r: &mut rand_chacha::ChaCha8Rng| {
                let c: Vec<f64> = (0..k).map(|_| r.random::<f64>() * 2.0 - 1.0).collect();
                let s: Vec<f64> = (0..k).map(|_| r.random::<f64>() * 0.6 + 0.01).collect();
                fit_from(&tr, &c, &s)
            };
            let (t, p) = (mk(&mut r), mk(&mut r));
            let cats: Vec<(&str, &str)> = tr.iter().enumerate().map(|(i, t)| (*t, if i % 2 == 0 { "age" } else { "state" })).collect();
            let run = run(t, p, &cats);
            let a = type_s_table(&run, 0.05, TypeSDefinition::ProxySignificant);
            let b = type_s_table(&run, 0.05, TypeSDefinition::BothSignificant);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((0.0..=1.0).contains(&x.rate));
                prop_assert!(y.rate <= x.rate);
            }
        }

        #[test]
        fn density_integrates_to_one(xs in proptest::collection::vec(-50.0f64..50.0, 2..60)) {
            let d = ratio_density(&xs, None).unwrap();
            prop_assert!((d.integral - 1.0).abs() < 1e-3, "{}", d.integral);
            prop_assert!(d.points.iter().all(|p| p.1 >= 0.0));
        }

        #[test]
        fn ratios_invariant_to_rescaling_continuous_columns(seed in 0u64..200) {
            let s = gap_sample(300, seed);
            let proxy = s.records.iter().map(|r| r.log_earnings().map(|v| 0.5 * v + f64::from(r.age) * 0.001)).collect();
            let s = s.with_log_scores("proxy", proxy).unwrap();
            // age_c = (age - 45) / 10 rescales the continuous column
            let tables: Vec<RatioTable> = ["age", "age_c"]
                .iter()
                .map(|a| {
                    let spec = ComparisonSpec {
                        formula: Formula::parse(&[a, "C(sex)", "C(race)"]).unwrap(),
                        ..Default::default()
                    };
                    ratio_table(&run_comparison(&s, &spec, &["proxy".into()]).unwrap())
                })
                .collect();
            prop_assert_eq!(tables[0].rows.len(), tables[1].rows.len());
            for (x, y) in tables[0].rows.iter().zip(&tables[1].rows) {
                prop_assert_eq!(&x.category, &y.category);
                prop_assert!((x.mean_ratio - y.mean_ratio).abs() < 1e-8);
            }
        }
    }
}
