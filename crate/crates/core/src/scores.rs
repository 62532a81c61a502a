//! Occupational income scores.
//!
//! Two table kinds are built from a base-year sample:
//!
//! * **OCCSCORE**: the (weighted) median earnings of each occupation, either
//!   pooled or as a count-weighted average of the male and female medians.
//! * **LIDO**: one cross-validated lasso per industry predicting log earnings
//!   from occupation, an age polynomial, sex, race, state and six interaction
//!   groups. Small industries fall back to occupation medians of log earnings.
//!
//! [`score_records`] evaluates either kind on arbitrary records. OCCSCORE
//! values are in currency units; LIDO values are log currency.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{PersonRecord, Sex};
use crate::lasso::{self, LassoFit, LassoOptions, SelectionRule};
use crate::regression::{build_design, stats, ColumnKind, Formula, Observation, TermExpr};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Occscore,
    Lido,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Occscore => "occscore",
            ScoreKind::Lido => "lido",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Pooled,
    #[default]
    SexWeighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OccscoreConfig {
    pub weighting: Weighting,
    /// Occupations with fewer base records are omitted.
    pub min_cell: usize,
}

impl Default for OccscoreConfig {
    fn default() -> Self {
        OccscoreConfig {
            weighting: Weighting::SexWeighted,
            min_cell: 1,
        }
    }
}

/// What to do with a category level the model never saw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnseenPolicy {
    /// Treat the level as the reference category (all its dummies are zero).
    #[default]
    Reference,
    Null,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidoConfig {
    pub age_poly_degree: u32,
    pub min_industry_n: usize,
    pub cv_folds: usize,
    pub seed: u64,
    pub selection: SelectionRule,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub unseen: UnseenPolicy,
}

impl Default for LidoConfig {
    fn default() -> Self {
        LidoConfig {
            age_poly_degree: 4,
            min_industry_n: 30,
            cv_folds: 10,
            seed: 1950,
            selection: SelectionRule::LambdaMin,
            n_lambda: 100,
            lambda_min_ratio: 1e-3,
            tol: 1e-7,
            max_iter: 10_000,
            unseen: UnseenPolicy::Reference,
        }
    }
}

impl LidoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=6).contains(&self.age_poly_degree) {
            return Err(Error::Config(format!(
                "age_poly_degree must be 1-6, got {}",
                self.age_poly_degree
            )));
        }
        if self.cv_folds < 2 {
            return Err(Error::Config("cv_folds must be at least 2".into()));
        }
        if self.min_industry_n < self.cv_folds {
            return Err(Error::Config(
                "min_industry_n must be at least cv_folds".into(),
            ));
        }
        if self.n_lambda == 0 || !(self.lambda_min_ratio > 0.0 && self.lambda_min_ratio < 1.0) {
            return Err(Error::Config(
                "lambda grid needs n_lambda >= 1 and 0 < lambda_min_ratio < 1".into(),
            ));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Config(
                "tol must be positive and max_iter non-zero".into(),
            ));
        }
        Ok(())
    }

    fn lasso_options(&self) -> LassoOptions {
        LassoOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            record_objective: false,
        }
    }
}

/// Factors whose observed levels are recorded per industry model.
const LIDO_FACTORS: [&str; 5] = ["occupation", "sex", "race", "state", "region"];

/// Predictor list of the per-industry LIDO regression.
pub fn lido_formula(age_poly_degree: u32) -> Formula {
    let mut terms: Vec<String> = vec!["C(occupation)".into()];
    terms.extend((1..=age_poly_degree).map(|p| {
        if p == 1 {
            "age_c".into()
        } else {
            format!("age_c^{p}")
        }
    }));
    terms.extend(
        [
            "C(sex)",
            "C(race)",
            "C(state)",
            "C(sex)*C(race)",
            "C(sex)*C(region)",
            "C(occupation)*C(sex)",
            "C(occupation)*race[white]",
            "C(region)*race[white]",
            "C(region)*race[black]",
        ]
        .map(String::from),
    );
    let refs: Vec<&str> = terms.iter().map(String::as_str).collect();
    Formula::parse(&refs).expect("static formula parses")
}

/// Number of non-intercept columns the LIDO design can have for an industry
/// with `n_occ` occupations, `n_states` states and `n_regions` regions (two
/// sexes, three races), before any empty or duplicate column is removed.
pub fn lido_possible_covariates(
    n_occ: usize,
    n_states: usize,
    n_regions: usize,
    age_poly_degree: u32,
) -> usize {
    let (o, s, r) = (n_occ - 1, n_states - 1, n_regions - 1);
    let main = o + age_poly_degree as usize + 1 + 2 + s;
    let interactions = 2 + r + o + o + r + r;
    main + interactions
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndustryModel {
    pub industry: String,
    pub n: usize,
    pub fallback: bool,
    pub lambda_min: Option<f64>,
    pub lambda_selected: Option<f64>,
    pub n_nonzero: usize,
    pub n_possible: usize,
    pub fit: Option<LassoFit>,
    /// Occupation medians of log earnings, used by fallback industries.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub occ_log_medians: BTreeMap<String, f64>,
    /// Median log earnings of the whole industry.
    pub industry_log_median: f64,
    /// Observed levels of each factor in the base sample.
    pub levels: BTreeMap<String, BTreeSet<String>>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildCoverage {
    pub n_base_records: usize,
    /// Records not used: no positive earnings, or (LIDO) no industry.
    pub n_excluded: usize,
    pub n_occupations: usize,
    /// Occupations below the minimum cell size, with their record counts.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub omitted_occupations: BTreeMap<String, usize>,
    pub n_industries_fitted: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fallback_industries: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub kind: ScoreKind,
    pub base_year: i32,
    /// `currency` for OCCSCORE, `log_currency` for LIDO.
    pub units: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub occ_medians: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub industry_models: BTreeMap<String, IndustryModel>,
    pub coverage_report: BuildCoverage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occscore_config: Option<OccscoreConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lido_config: Option<LidoConfig>,
}

fn modal_year(records: &[&PersonRecord]) -> i32 {
    let mut counts: BTreeMap<i32, usize> = BTreeMap::new();
    for r in records {
        *counts.entry(r.year).or_default() += 1;
    }
    let mut best = (0, 0);
    for (y, c) in counts {
        if c > best.1 {
            best = (y, c);
        }
    }
    best.0
}

fn positive_earnings(r: &PersonRecord) -> Option<f64> {
    r.earnings.filter(|e| *e > 0.0 && e.is_finite())
}

/// Median earnings of one occupation's workers.
fn occupation_median(workers: &[&PersonRecord], weighting: Weighting) -> Result<f64> {
    let med = |rs: &[&PersonRecord]| -> Result<f64> {
        let v: Vec<f64> = rs
            .iter()
            .map(|r| positive_earnings(r).expect("filtered"))
            .collect();
        let w: Vec<f64> = rs.iter().map(|r| r.weight).collect();
        stats::weighted_median(&v, &w)
    };
    match weighting {
        Weighting::Pooled => med(workers),
        Weighting::SexWeighted => {
            let (men, women): (Vec<&PersonRecord>, Vec<&PersonRecord>) =
                workers.iter().partition(|r| r.sex == Sex::Male);
            match (men.is_empty(), women.is_empty()) {
                (false, true) => med(&men),
                (true, false) => med(&women),
                _ => {
                    let wm: f64 = men.iter().map(|r| r.weight).sum();
                    let wf: f64 = women.iter().map(|r| r.weight).sum();
                    Ok((wm * med(&men)? + wf * med(&women)?) / (wm + wf))
                }
            }
        }
    }
}

/// Build an OCCSCORE table. Records without positive earnings are ignored
/// and counted as excluded.
pub fn build_occscore(
    base_records: &[PersonRecord],
    config: &OccscoreConfig,
) -> Result<ScoreTable> {
    let usable: Vec<&PersonRecord> = base_records
        .iter()
        .filter(|r| positive_earnings(r).is_some())
        .collect();
    let mut by_occ: BTreeMap<&str, Vec<&PersonRecord>> = BTreeMap::new();
    for r in &usable {
        by_occ.entry(r.occupation.as_str()).or_default().push(r);
    }
    if by_occ.is_empty() {
        return Err(Error::Data(
            "no occupations with positive earnings in the base sample".into(),
        ));
    }
    let mut occ_medians = BTreeMap::new();
    let mut omitted = BTreeMap::new();
    for (occ, workers) in &by_occ {
        if workers.len() < config.min_cell {
            omitted.insert(occ.to_string(), workers.len());
            continue;
        }
        occ_medians.insert(
            occ.to_string(),
            occupation_median(workers, config.weighting)?,
        );
    }
    if occ_medians.is_empty() {
        return Err(Error::Data(format!(
            "no occupation reaches the minimum cell size {}",
            config.min_cell
        )));
    }
    Ok(ScoreTable {
        kind: ScoreKind::Occscore,
        base_year: modal_year(&usable),
        units: "currency".into(),
        coverage_report: BuildCoverage {
            n_base_records: base_records.len(),
            n_excluded: base_records.len() - usable.len(),
            n_occupations: occ_medians.len(),
            omitted_occupations: omitted,
            n_industries_fitted: 0,
            fallback_industries: Vec::new(),
        },
        occ_medians,
        industry_models: BTreeMap::new(),
        occscore_config: Some(config.clone()),
        lido_config: None,
    })
}

fn observed_levels(records: &[&PersonRecord]) -> BTreeMap<String, BTreeSet<String>> {
    LIDO_FACTORS
        .iter()
        .map(|f| {
            let set = records
                .iter()
                .filter_map(|r| r.categorical(f).map(|c| c.into_owned()))
                .collect();
            (f.to_string(), set)
        })
        .collect()
}

fn log_medians(records: &[&PersonRecord]) -> Result<(BTreeMap<String, f64>, f64)> {
    let mut by_occ: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in records {
        let e = by_occ.entry(r.occupation.as_str()).or_default();
        e.0.push(r.log_earnings().expect("filtered"));
        e.1.push(r.weight);
    }
    let mut out = BTreeMap::new();
    for (occ, (v, w)) in &by_occ {
        out.insert(occ.to_string(), stats::weighted_median(v, w)?);
    }
    let all: Vec<f64> = records
        .iter()
        .map(|r| r.log_earnings().expect("filtered"))
        .collect();
    let w: Vec<f64> = records.iter().map(|r| r.weight).collect();
    Ok((out, stats::weighted_median(&all, &w)?))
}

fn fit_industry(
    industry: &str,
    records: &[&PersonRecord],
    config: &LidoConfig,
) -> Result<IndustryModel> {
    let seed = rng::derive_seed_str(config.seed, industry);
    let (occ_log_medians, industry_log_median) = log_medians(records)?;
    let mut model = IndustryModel {
        industry: industry.to_string(),
        n: records.len(),
        fallback: true,
        lambda_min: None,
        lambda_selected: None,
        n_nonzero: 0,
        n_possible: 0,
        fit: None,
        occ_log_medians,
        industry_log_median,
        levels: observed_levels(records),
        seed,
        warnings: Vec::new(),
    };
    if records.len() < config.min_industry_n {
        model.warnings.push(format!(
            "{} records < min_industry_n {}; occupation medians used",
            records.len(),
            config.min_industry_n
        ));
        return Ok(model);
    }
    let owned: Vec<PersonRecord> = records.iter().map(|r| (*r).clone()).collect();
    let x = build_design(&owned, &lido_formula(config.age_poly_degree))?;
    model.n_possible = x.n_possible - 1;
    model.warnings.extend(x.warnings.iter().cloned());
    let y: Vec<f64> = owned
        .iter()
        .map(|r| r.log_earnings().expect("filtered"))
        .collect();
    let varying = (0..x.n_cols())
        .filter(|&j| x.columns[j].kind != ColumnKind::Intercept)
        .any(|j| {
            let c = x.values.column(j);
            c.iter().any(|v| *v != c[0])
        });
    if !varying {
        model
            .warnings
            .push("design is entirely constant; occupation medians used".into());
        return Ok(model);
    }
    let opts = config.lasso_options();
    let grid = lasso::default_grid(
        lasso::lambda_max(&x, &y)?,
        config.n_lambda,
        config.lambda_min_ratio,
    );
    let cv = lasso::cv_select(&x, &y, config.cv_folds, Some(&grid), seed, &opts)?;
    let idx = cv.selected_index(config.selection);
    let mut path = lasso::lasso_path(&x, &y, &grid[..=idx], &opts)?;
    let fit = path.pop().expect("non-empty grid prefix");
    if !fit.converged {
        model
            .warnings
            .push(format!("lasso did not converge at lambda {}", fit.lambda));
    }
    model.fallback = false;
    model.occ_log_medians.clear();
    model.lambda_min = Some(cv.lambda_min);
    model.lambda_selected = Some(fit.lambda);
    model.n_nonzero = fit.n_nonzero;
    model.fit = Some(fit);
    Ok(model)
}

/// Build LIDO models, one per industry, in parallel. Records need an
/// industry code and positive earnings; the rest are counted as excluded.
pub fn build_lido(base_records: &[PersonRecord], config: &LidoConfig) -> Result<ScoreTable> {
    config.validate()?;
    let usable: Vec<&PersonRecord> = base_records
        .iter()
        .filter(|r| r.industry.is_some() && positive_earnings(r).is_some())
        .collect();
    let mut by_ind: BTreeMap<&str, Vec<&PersonRecord>> = BTreeMap::new();
    for r in &usable {
        by_ind
            .entry(r.industry.as_deref().expect("filtered"))
            .or_default()
            .push(r);
    }
    if !by_ind.values().any(|v| v.len() >= config.min_industry_n) {
        return Err(Error::Data(format!(
            "no industry has at least {} usable records",
            config.min_industry_n
        )));
    }
    let groups: Vec<(&str, Vec<&PersonRecord>)> = by_ind.into_iter().collect();
    let models = groups
        .par_iter()
        .map(|(ind, rs)| fit_industry(ind, rs, config))
        .collect::<Vec<Result<IndustryModel>>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let n_occ: BTreeSet<&str> = usable.iter().map(|r| r.occupation.as_str()).collect();
    let fallback_industries: Vec<String> = models
        .iter()
        .filter(|m| m.fallback)
        .map(|m| m.industry.clone())
        .collect();
    Ok(ScoreTable {
        kind: ScoreKind::Lido,
        base_year: modal_year(&usable),
        units: "log_currency".into(),
        coverage_report: BuildCoverage {
            n_base_records: base_records.len(),
            n_excluded: base_records.len() - usable.len(),
            n_occupations: n_occ.len(),
            omitted_occupations: BTreeMap::new(),
            n_industries_fitted: models.len() - fallback_industries.len(),
            fallback_industries,
        },
        occ_medians: BTreeMap::new(),
        industry_models: models
            .into_iter()
            .map(|m| (m.industry.clone(), m))
            .collect(),
        occscore_config: None,
        lido_config: Some(config.clone()),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreCoverage {
    pub n_input: usize,
    pub n_scored: usize,
    pub n_null: usize,
    pub null_reasons: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRecords {
    pub scores: Vec<Option<f64>>,
    pub reasons: Vec<Option<String>>,
    pub coverage: ScoreCoverage,
}

impl ScoredRecords {
    fn from_results(results: Vec<std::result::Result<f64, String>>) -> Self {
        let mut coverage = ScoreCoverage {
            n_input: results.len(),
            ..Default::default()
        };
        let mut scores = Vec::with_capacity(results.len());
        let mut reasons = Vec::with_capacity(results.len());
        for r in results {
            match r {
                Ok(v) => {
                    coverage.n_scored += 1;
                    scores.push(Some(v));
                    reasons.push(None);
                }
                Err(why) => {
                    coverage.n_null += 1;
                    *coverage.null_reasons.entry(why.clone()).or_default() += 1;
                    scores.push(None);
                    reasons.push(Some(why));
                }
            }
        }
        ScoredRecords {
            scores,
            reasons,
            coverage,
        }
    }
}

struct CompiledModel<'a> {
    model: &'a IndustryModel,
    terms: Vec<TermExpr>,
}

impl ScoreTable {
    /// Convert a score to the log scale used as a regression outcome.
    pub fn to_log(&self, score: f64) -> f64 {
        match self.kind {
            ScoreKind::Occscore => score.ln(),
            ScoreKind::Lido => score,
        }
    }

    fn unseen_policy(&self) -> UnseenPolicy {
        self.lido_config
            .as_ref()
            .map_or_else(UnseenPolicy::default, |c| c.unseen)
    }

    fn score_lido(
        &self,
        compiled: &BTreeMap<&str, CompiledModel<'_>>,
        r: &PersonRecord,
    ) -> std::result::Result<f64, String> {
        let ind = r.industry.as_deref().ok_or("missing industry")?;
        let cm = compiled.get(ind).ok_or("unseen industry")?;
        let m = cm.model;
        let unseen: Vec<&str> = LIDO_FACTORS
            .iter()
            .copied()
            .filter(|f| {
                r.categorical(f)
                    .is_some_and(|c| !m.levels[*f].contains(c.as_ref()))
            })
            .collect();
        if !unseen.is_empty() && self.unseen_policy() == UnseenPolicy::Null {
            return Err(format!("unseen {}", unseen[0]));
        }
        match &m.fit {
            None => Ok(m
                .occ_log_medians
                .get(&r.occupation)
                .copied()
                .unwrap_or(m.industry_log_median)),
            Some(fit) => {
                let row = cm
                    .terms
                    .iter()
                    .map(|t| t.eval(r))
                    .collect::<Option<Vec<f64>>>()
                    .ok_or("missing model variable")?;
                let v = fit.predict_row(&row);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err("non-finite prediction".into())
                }
            }
        }
    }
}

/// Score records with a table. Nulls carry a reason and are counted in the
/// coverage report; nothing is imputed.
pub fn score_records(table: &ScoreTable, records: &[PersonRecord]) -> Result<ScoredRecords> {
    let results = match table.kind {
        ScoreKind::Occscore => records
            .iter()
            .map(|r| {
                table
                    .occ_medians
                    .get(&r.occupation)
                    .copied()
                    .ok_or_else(|| "unseen occupation".to_string())
            })
            .collect(),
        ScoreKind::Lido => {
            let mut compiled = BTreeMap::new();
            for (ind, m) in &table.industry_models {
                let terms = match &m.fit {
                    Some(f) => f
                        .terms
                        .iter()
                        .map(|t| TermExpr::parse(t))
                        .collect::<Result<Vec<_>>>()?,
                    None => Vec::new(),
                };
                compiled.insert(ind.as_str(), CompiledModel { model: m, terms });
            }
            records
                .par_iter()
                .map(|r| table.score_lido(&compiled, r))
                .collect()
        }
    };
    Ok(ScoredRecords::from_results(results))
}

fn file_stem(code: &str) -> String {
    code.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

impl ScoreTable {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Two-column `occupation, median` table.
    pub fn occscore_table(&self) -> String {
        let mut out = String::from("occupation\tmedian\n");
        for (o, m) in &self.occ_medians {
            out.push_str(&format!("{o}\t{m}\n"));
        }
        out
    }

    /// One row per industry model.
    pub fn lido_manifest(&self) -> String {
        let mut out = String::from(
            "industry\tn\tlambda_min\tlambda_selected\tn_nonzero\tn_possible\tfallback\n",
        );
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| v.to_string());
        for m in self.industry_models.values() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                m.industry,
                m.n,
                opt(m.lambda_min),
                opt(m.lambda_selected),
                m.n_nonzero,
                m.n_possible,
                m.fallback
            ));
        }
        out
    }

    /// Write `score_table.json` plus the delimited views into `dir`:
    /// `occscore.tsv`, or `lido_models.tsv` and one `models/<industry>.tsv`
    /// coefficient file per fitted industry. Returns the written file names.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<String>> {
        let mut written = Vec::new();
        let mut put = |name: &str, body: String| -> Result<()> {
            let p = dir.join(name);
            if let Some(parent) = p.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
            written.push(name.to_string());
            Ok(())
        };
        put("score_table.json", self.to_json()?)?;
        match self.kind {
            ScoreKind::Occscore => put("occscore.tsv", self.occscore_table())?,
            ScoreKind::Lido => {
                put("lido_models.tsv", self.lido_manifest())?;
                for m in self.industry_models.values() {
                    if let Some(fit) = &m.fit {
                        put(
                            &format!("models/{}.tsv", file_stem(&m.industry)),
                            fit.to_table(),
                        )?;
                    }
                }
            }
        }
        Ok(written)
    }
}
