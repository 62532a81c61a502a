//! Intergenerational transmission on linked father-son pairs, and the
//! correlated-measurement-error simulator.
//!
//! True log incomes follow `I_son = beta0 + beta1 * I_father + delta`. Each
//! generation is observed through a proxy `y~ = I - e` whose error is
//! transmitted as `e_son = tilde_beta0 + tilde_beta1 * e_father + nu`. The
//! proxy slope converges to
//! `beta1 - (beta1 - tilde_beta1) * s_e^2 / (s_y^2 + s_e^2)`,
//! so the bias vanishes when `tilde_beta1 = beta1`.

use std::collections::BTreeMap;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    parse_rows, reader_for, ColumnIndex, IngestReport, PersonRecord, RowParser, Schema, Sex,
};
use crate::regression::{fmt_num, ols_fit, DesignMatrix, Observation, RegressionFit};
use crate::scores::{score_records, ScoreTable};
use crate::{rng, Error, Result};

/// Minimum number of complete pairs for an elasticity.
pub const MIN_PAIRS: usize = 10;

/// Log-scale scores of one pair under one score table.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PairScores {
    pub father: Option<f64>,
    pub son: Option<f64>,
}

impl PairScores {
    fn complete(&self) -> Option<(f64, f64)> {
        Some((self.father?, self.son?))
    }
}

/// A father observed in the first census year and his son in the second.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkedPair {
    pub father: PersonRecord,
    pub son: PersonRecord,
    /// Score label -> log-scale scores.
    pub scores: BTreeMap<String, PairScores>,
}

impl LinkedPair {
    pub fn new(father: PersonRecord, son: PersonRecord) -> Self {
        LinkedPair {
            father,
            son,
            scores: BTreeMap::new(),
        }
    }

    /// Son's age in the father's census year.
    pub fn son_first_age(&self) -> i64 {
        i64::from(self.son.age) - i64::from(self.son.year - self.father.year)
    }

    /// Census-pair label such as `"1920-1940"`.
    pub fn census_pair(&self) -> String {
        format!("{}-{}", self.father.year, self.son.year)
    }

    pub fn with_log_scores(mut self, label: &str, father: Option<f64>, son: Option<f64>) -> Self {
        self.scores
            .insert(label.to_string(), PairScores { father, son });
        self
    }
}

/// Constraints a linked pair must satisfy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkRules {
    /// Largest age of the son in the father's census year.
    pub max_son_first_age: Option<u32>,
    pub require_male_son: bool,
    /// Required first-year relation of the son to the household head; not
    /// checked when the relation is unknown.
    pub son_relation: Option<String>,
}

impl Default for LinkRules {
    fn default() -> Self {
        LinkRules {
            max_son_first_age: Some(15),
            require_male_son: true,
            son_relation: Some("child".into()),
        }
    }
}

impl LinkRules {
    /// Reason the pair violates the rules, if any.
    pub fn check(&self, pair: &LinkedPair) -> Option<String> {
        if pair.son.year <= pair.father.year {
            return Some("son year does not follow father year".into());
        }
        if self.require_male_son && pair.son.sex != Sex::Male {
            return Some("son is not male".into());
        }
        if let Some(max) = self.max_son_first_age {
            let a = pair.son_first_age();
            if a < 0 || a > i64::from(max) {
                return Some(format!("son first-year age outside 0..={max}"));
            }
        }
        if let Some(rel) = &self.son_relation {
            let known = !matches!(pair.son.relation_to_head.as_str(), "" | "unknown");
            if known && &pair.son.relation_to_head != rel {
                return Some(format!("son relation is not {rel:?}"));
            }
        }
        None
    }
}

/// Read a linked-pair file: one row per pair, the schema's columns prefixed
/// with `father_` and `son_`. Rows breaking `rules` are rejected.
pub fn load_linked_pairs(
    path: &Path,
    schema: &Schema,
    rules: &LinkRules,
) -> Result<(Vec<LinkedPair>, IngestReport)> {
    schema.validate()?;
    let regions = schema.region_lookup()?;
    let mut reader = reader_for(schema, path)?;
    let header = reader.headers()?.clone();
    let father = RowParser {
        schema,
        regions: &regions,
        columns: ColumnIndex::resolve(schema, &header, "father_")?,
    };
    let son = RowParser {
        schema,
        regions: &regions,
        columns: ColumnIndex::resolve(schema, &header, "son_")?,
    };
    let rows = reader
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let (pairs, mut report) = parse_rows(&rows, |row, n| {
        let f = father.parse(row, n).map_err(|e| format!("father: {e}"))?;
        let s = son.parse(row, n).map_err(|e| format!("son: {e}"))?;
        let pair = LinkedPair::new(f, s);
        match rules.check(&pair) {
            Some(why) => Err(why),
            None => Ok(pair),
        }
    });
    report.occupation_scheme = schema.occupation_scheme.clone();
    Ok((pairs, report))
}

/// Write pairs in the layout read by [`load_linked_pairs`] with
/// [`Schema::identity`].
pub fn write_linked_pairs(path: &Path, pairs: &[LinkedPair]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<String> = ["father_", "son_"]
        .iter()
        .flat_map(|p| crate::data::FIELDS.iter().map(move |f| format!("{p}{f}")))
        .collect();
    w.write_record(&header)?;
    for p in pairs {
        let mut cells = crate::data::record_cells(&p.father);
        cells.extend(crate::data::record_cells(&p.son));
        w.write_record(&cells)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Score fathers and sons with `table` and store the log-scale values under
/// `label`. Returns the number of pairs with both scores.
pub fn attach_scores(pairs: &mut [LinkedPair], label: &str, table: &ScoreTable) -> Result<usize> {
    let fathers: Vec<PersonRecord> = pairs.iter().map(|p| p.father.clone()).collect();
    let sons: Vec<PersonRecord> = pairs.iter().map(|p| p.son.clone()).collect();
    let fs = score_records(table, &fathers)?;
    let ss = score_records(table, &sons)?;
    let mut complete = 0;
    for ((p, f), s) in pairs.iter_mut().zip(&fs.scores).zip(&ss.scores) {
        let ps = PairScores {
            father: f.map(|v| table.to_log(v)).filter(|v| v.is_finite()),
            son: s.map(|v| table.to_log(v)).filter(|v| v.is_finite()),
        };
        complete += usize::from(ps.complete().is_some());
        p.scores.insert(label.to_string(), ps);
    }
    Ok(complete)
}

/// Indices of pairs with both scores under every attached label.
pub fn complete_cases(pairs: &[LinkedPair]) -> Vec<usize> {
    (0..pairs.len())
        .filter(|&i| {
            let p = &pairs[i];
            !p.scores.is_empty() && p.scores.values().all(|s| s.complete().is_some())
        })
        .collect()
}

/// OLS of the son's log score on the father's log score under `label`.
///
/// The sample is the pairs complete under every attached label, so
/// elasticities from different score kinds share one sample.
pub fn estimate_elasticity(pairs: &[LinkedPair], label: &str) -> Result<RegressionFit> {
    if !pairs.iter().any(|p| p.scores.contains_key(label)) {
        return Err(Error::Data(format!("no scores attached under {label:?}")));
    }
    let rows = complete_cases(pairs);
    if rows.len() < MIN_PAIRS {
        return Err(Error::Data(format!(
            "{} complete pairs; at least {MIN_PAIRS} are needed",
            rows.len()
        )));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .map(|&i| pairs[i].scores[label].complete().expect("complete case"))
        .unzip();
    let design = DesignMatrix::from_columns(&["log_father_score"], &[x], true)?;
    ols_fit(&design, &y, None)
}

/// One cell of the elasticity grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticityCell {
    pub group: String,
    pub score: String,
    pub census_pair: String,
    pub elasticity: Option<f64>,
    pub se: Option<f64>,
    pub n_pairs: usize,
    pub note: Option<String>,
}

/// Elasticities for every (group, score label, census pair). `group_by`
/// names a categorical variable of the father, such as `race`.
pub fn elasticity_grid(
    pairs: &[LinkedPair],
    labels: &[String],
    group_by: Option<&str>,
) -> Vec<ElasticityCell> {
    let mut cells: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate() {
        let g = match group_by {
            Some(var) => p
                .father
                .categorical(var)
                .map_or_else(|| "(missing)".into(), |c| c.into_owned()),
            None => "all".into(),
        };
        cells.entry((g, p.census_pair())).or_default().push(i);
    }
    let mut out = Vec::new();
    for ((group, census_pair), idx) in &cells {
        let subset: Vec<LinkedPair> = idx.iter().map(|&i| pairs[i].clone()).collect();
        for label in labels {
            let (elasticity, se, note) = match estimate_elasticity(&subset, label) {
                Ok(fit) => (Some(fit.coefficients[1]), Some(fit.se(1)), None),
                Err(e) => (None, None, Some(e.to_string())),
            };
            out.push(ElasticityCell {
                group: group.clone(),
                score: label.clone(),
                census_pair: census_pair.clone(),
                elasticity,
                se,
                n_pairs: complete_cases(&subset).len(),
                note,
            });
        }
    }
    out
}

/// Tab-delimited grid: one row per (group, score), one elasticity and one
/// standard-error column per census pair.
pub fn grid_table(cells: &[ElasticityCell]) -> String {
    let pairs: std::collections::BTreeSet<&str> =
        cells.iter().map(|c| c.census_pair.as_str()).collect();
    let mut rows: BTreeMap<(&str, &str), BTreeMap<&str, &ElasticityCell>> = BTreeMap::new();
    for c in cells {
        rows.entry((&c.group, &c.score))
            .or_default()
            .insert(&c.census_pair, c);
    }
    let mut out = String::from("group\tscore");
    for p in &pairs {
        out.push_str(&format!("\t{p}\t{p}_se\t{p}_n"));
    }
    out.push('\n');
    let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), fmt_num);
    for ((g, s), by_pair) in &rows {
        out.push_str(&format!("{g}\t{s}"));
        for p in &pairs {
            match by_pair.get(p) {
                Some(c) => out.push_str(&format!(
                    "\t{}\t{}\t{}",
                    fmt(c.elasticity),
                    fmt(c.se),
                    c.n_pairs
                )),
                None => out.push_str("\tNA\tNA\t0"),
            }
        }
        out.push('\n');
    }
    out
}

/// Parameters of the transmission and error-transmission equations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilityErrorParams {
    pub beta0: f64,
    pub beta1: f64,
    pub tilde_beta0: f64,
    pub tilde_beta1: f64,
    pub sigma_father_y: f64,
    pub sigma_e_father: f64,
    pub sigma_nu: f64,
    pub sigma_delta: f64,
    /// Reject `beta1` outside [0, 1].
    pub enforce_unit_beta1: bool,
}

impl Default for MobilityErrorParams {
    fn default() -> Self {
        MobilityErrorParams {
            beta0: 0.0,
            beta1: 0.5,
            tilde_beta0: 0.0,
            tilde_beta1: 0.5,
            sigma_father_y: 1.0,
            sigma_e_father: 1.0,
            sigma_nu: 0.5,
            sigma_delta: 0.5,
            enforce_unit_beta1: true,
        }
    }
}

pub const MOBILITY_PARAM_NAMES: [&str; 8] = [
    "beta0",
    "beta1",
    "tilde_beta0",
    "tilde_beta1",
    "sigma_father_y",
    "sigma_e_father",
    "sigma_nu",
    "sigma_delta",
];

impl MobilityErrorParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in MOBILITY_PARAM_NAMES.iter().zip(self.values()) {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
            if name.starts_with("sigma") && v < 0.0 {
                return Err(Error::Config(format!("{name} must be >= 0")));
            }
        }
        if self.enforce_unit_beta1 && !(0.0..=1.0).contains(&self.beta1) {
            return Err(Error::Config(format!(
                "beta1 = {} outside [0, 1]",
                self.beta1
            )));
        }
        Ok(())
    }

    pub fn values(&self) -> [f64; 8] {
        [
            self.beta0,
            self.beta1,
            self.tilde_beta0,
            self.tilde_beta1,
            self.sigma_father_y,
            self.sigma_e_father,
            self.sigma_nu,
            self.sigma_delta,
        ]
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = match name {
            "beta0" => &mut self.beta0,
            "beta1" => &mut self.beta1,
            "tilde_beta0" => &mut self.tilde_beta0,
            "tilde_beta1" => &mut self.tilde_beta1,
            "sigma_father_y" => &mut self.sigma_father_y,
            "sigma_e_father" => &mut self.sigma_e_father,
            "sigma_nu" => &mut self.sigma_nu,
            "sigma_delta" => &mut self.sigma_delta,
            _ => {
                return Err(Error::Config(format!(
                    "unknown mobility parameter {name:?}"
                )))
            }
        };
        *slot = value;
        Ok(())
    }

    /// Probability limit of the proxy slope.
    pub fn plim(&self) -> f64 {
        let (vy, ve) = (self.sigma_father_y.powi(2), self.sigma_e_father.powi(2));
        if vy + ve == 0.0 {
            return f64::NAN;
        }
        self.beta1 - (self.beta1 - self.tilde_beta1) * ve / (vy + ve)
    }

    /// `Cov(y~_father, (beta1 - tilde_beta1) * e_father)`, the term that
    /// separates the proxy covariance from the true one.
    pub fn bias_covariance(&self) -> f64 {
        -(self.beta1 - self.tilde_beta1) * self.sigma_e_father.powi(2)
    }
}

/// Outcome of one simulated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilitySim {
    pub beta_hat: f64,
    pub plim: f64,
    pub bias_covariance: f64,
    pub note: String,
}

fn analytic_note(p: &MobilityErrorParams) -> String {
    let c = p.bias_covariance();
    let direction = if c == 0.0 {
        "zero: the proxy slope is consistent for beta1"
    } else if c < 0.0 {
        "negative: the proxy slope is biased toward tilde_beta1 from above"
    } else {
        "positive: the proxy slope is biased toward tilde_beta1 from below"
    };
    format!("bias covariance {c} is {direction}; plim {}", p.plim())
}

/// Draw `n` linked pairs from the error model and regress the son's proxy on
/// the father's proxy.
pub fn simulate_mobility_bias(p: &MobilityErrorParams, n: usize, seed: u64) -> Result<MobilitySim> {
    p.validate()?;
    if n < 100 {
        return Err(Error::Config(format!(
            "mobility simulation needs n >= 100, got {n}"
        )));
    }
    if p.sigma_father_y == 0.0 && p.sigma_e_father == 0.0 {
        return Err(Error::Numerical("father proxy has zero variance".into()));
    }
    let mut r = rng::rng_from_seed(seed);
    let normal = |sd: f64| Normal::new(0.0, sd).expect("validated sd");
    let (dy, de, dn, dd) = (
        normal(p.sigma_father_y),
        normal(p.sigma_e_father),
        normal(p.sigma_nu),
        normal(p.sigma_delta),
    );
    let mut xf = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let i_f = dy.sample(&mut r);
        let e_f = de.sample(&mut r);
        let i_s = p.beta0 + p.beta1 * i_f + dd.sample(&mut r);
        let e_s = p.tilde_beta0 + p.tilde_beta1 * e_f + dn.sample(&mut r);
        xf.push(i_f - e_f);
        ys.push(i_s - e_s);
    }
    let (beta_hat, _) = crate::regression::stats::simple_slope(&xf, &ys)?;
    Ok(MobilitySim {
        beta_hat,
        plim: p.plim(),
        bias_covariance: p.bias_covariance(),
        note: analytic_note(p),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilitySweepConfig {
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    /// Parameter name -> values; the sweep is the cartesian product.
    pub sweep: BTreeMap<String, Vec<f64>>,
}

impl Default for MobilitySweepConfig {
    fn default() -> Self {
        MobilitySweepConfig {
            n: 100_000,
            replications: 1,
            seed: 1,
            sweep: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilitySweepRow {
    pub cell: usize,
    pub rep: usize,
    pub seed: u64,
    pub params: MobilityErrorParams,
    pub sim: MobilitySim,
}

/// Simulate every (cell, replication) pair in parallel. Replication `r` of
/// cell `c` uses seed `derive(derive(seed, c), r)`.
pub fn run_mobility_sweep(
    base: &MobilityErrorParams,
    cfg: &MobilitySweepConfig,
) -> Result<Vec<MobilitySweepRow>> {
    if cfg.replications == 0 {
        return Err(Error::Config("replications must be at least 1".into()));
    }
    let mut cells = vec![*base];
    for (name, values) in &cfg.sweep {
        if values.is_empty() {
            return Err(Error::Config(format!("sweep over {name:?} has no values")));
        }
        let mut next = Vec::with_capacity(cells.len() * values.len());
        for c in &cells {
            for &v in values {
                let mut q = *c;
                q.set(name, v)?;
                next.push(q);
            }
        }
        cells = next;
    }
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.replications).map(move |r| (c, r)))
        .collect();
    jobs.par_iter()
        .map(|&(c, r)| {
            let seed = rng::derive_seed(rng::derive_seed(cfg.seed, c as u64), r as u64);
            Ok(MobilitySweepRow {
                cell: c,
                rep: r,
                seed,
                params: cells[c],
                sim: simulate_mobility_bias(&cells[c], cfg.n, seed)?,
            })
        })
        .collect()
}

pub fn mobility_sweep_table(rows: &[MobilitySweepRow]) -> String {
    let mut out = String::from("cell\trep\tseed\t");
    out.push_str(&MOBILITY_PARAM_NAMES.join("\t"));
    out.push_str("\tbeta_hat\tplim\tbias_covariance\n");
    for r in rows {
        let vals: Vec<String> = r.params.values().iter().map(|v| fmt_num(*v)).collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.cell,
            r.rep,
            r.seed,
            vals.join("\t"),
            fmt_num(r.sim.beta_hat),
            fmt_num(r.sim.plim),
            fmt_num(r.sim.bias_covariance)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Race;
    use crate::regression::stats::median;
    use proptest::prelude::*;
    use rand::Rng;

    fn rec(id: &str, year: i32, age: u32) -> PersonRecord {
        PersonRecord::new(
            id,
            year,
            age,
            Sex::Male,
            Race::White,
            "19",
            "Midwest",
            "100",
        )
    }

    fn pairs_from(xs: &[(f64, f64)]) -> Vec<LinkedPair> {
        xs.iter()
            .enumerate()
            .map(|(i, &(f, s))| {
                LinkedPair::new(
                    rec(&format!("f{i}"), 1920, 40),
                    rec(&format!("s{i}"), 1940, 30),
                )
                .with_log_scores("occscore", Some(f), Some(s))
            })
            .collect()
    }

    #[test]
    fn identical_scores_give_unit_elasticity() {
        let xs: Vec<(f64, f64)> = (0..20)
            .map(|i| (f64::from(i) * 0.1, f64::from(i) * 0.1))
            .collect();
        let fit = estimate_elasticity(&pairs_from(&xs), "occscore").unwrap();
        assert!((fit.coefficients[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn independent_scores_give_zero_within_ci() {
        let mut r = rng::rng_from_seed(3);
        let xs: Vec<(f64, f64)> = (0..2000)
            .map(|_| (r.random::<f64>(), r.random::<f64>()))
            .collect();
        let fit = estimate_elasticity(&pairs_from(&xs), "occscore").unwrap();
        let (lo, hi) = fit.confint(1, 0.95);
        assert!(lo < 0.0 && 0.0 < hi, "({lo}, {hi})");
    }

    #[test]
    fn generator_slope_recovered() {
        let mut r = rng::rng_from_seed(9);
        let d = Normal::new(0.0, 1.0).unwrap();
        let xs: Vec<(f64, f64)> = (0..5000)
            .map(|_| {
                let f: f64 = d.sample(&mut r);
                (f, 0.4 * f + d.sample(&mut r))
            })
            .collect();
        let fit = estimate_elasticity(&pairs_from(&xs), "occscore").unwrap();
        let (lo, hi) = fit.confint(1, 0.95);
        assert!(lo < 0.4 && 0.4 < hi, "({lo}, {hi})");
    }

    #[test]
    fn too_few_pairs_is_an_error() {
        let xs: Vec<(f64, f64)> = (0..9).map(|i| (f64::from(i), f64::from(i))).collect();
        assert!(estimate_elasticity(&pairs_from(&xs), "occscore").is_err());
        assert!(estimate_elasticity(&pairs_from(&xs), "lido").is_err());
    }

    #[test]
    fn complete_case_spans_score_kinds() {
        let xs: Vec<(f64, f64)> = (0..30)
            .map(|i| (f64::from(i), 2.0 * f64::from(i)))
            .collect();
        let mut pairs = pairs_from(&xs);
        for (i, p) in pairs.iter_mut().enumerate() {
            let son = if i < 5 { None } else { Some(1.0) };
            p.scores.insert(
                "lido".into(),
                PairScores {
                    father: Some(1.0),
                    son,
                },
            );
        }
        assert_eq!(complete_cases(&pairs).len(), 25);
        let fit = estimate_elasticity(&pairs, "occscore").unwrap();
        assert_eq!(fit.n_obs, 25);
    }

    #[test]
    fn link_rules() {
        let rules = LinkRules::default();
        let mut ok = LinkedPair::new(rec("f", 1920, 40), rec("s", 1940, 30));
        ok.son.relation_to_head = "child".into();
        assert_eq!(rules.check(&ok), None);
        let mut old = ok.clone();
        old.son.age = 36;
        assert!(rules.check(&old).is_some());
        let mut girl = ok.clone();
        girl.son.sex = Sex::Female;
        assert!(rules.check(&girl).is_some());
        let mut lodger = ok.clone();
        lodger.son.relation_to_head = "lodger".into();
        assert!(rules.check(&lodger).is_some());
    }

    #[test]
    fn written_pairs_reload() {
        let spec = crate::synth::PopulationSpec::default();
        let raw = crate::synth::linked_pairs(&spec, 50, 0.5, 1920, 1940, 4).unwrap();
        let pairs: Vec<LinkedPair> = raw
            .into_iter()
            .map(|(f, s)| LinkedPair::new(f, s))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.csv");
        write_linked_pairs(&path, &pairs).unwrap();
        let (back, report) =
            load_linked_pairs(&path, &Schema::identity(), &LinkRules::default()).unwrap();
        assert_eq!(report.n_rejected, 0);
        assert_eq!(back, pairs);
    }

    #[test]
    fn grid_has_one_row_per_group_and_score() {
        let xs: Vec<(f64, f64)> = (0..40)
            .map(|i| (f64::from(i % 7), f64::from(i % 5)))
            .collect();
        let mut pairs = pairs_from(&xs);
        for (i, p) in pairs.iter_mut().enumerate() {
            p.scores.insert(
                "lido".into(),
                PairScores {
                    father: Some(f64::from(i as u32)),
                    son: Some(1.0),
                },
            );
            if i % 2 == 0 {
                p.father.race = Race::Black;
            }
        }
        let cells = elasticity_grid(&pairs, &["occscore".into(), "lido".into()], Some("race"));
        assert_eq!(cells.len(), 4);
        let t = grid_table(&cells);
        assert_eq!(t.lines().count(), 5);
        assert!(t.starts_with("group\tscore\t1920-1940\t1920-1940_se\t1920-1940_n\n"));
    }

    fn p(beta1: f64, tilde: f64, se: f64) -> MobilityErrorParams {
        MobilityErrorParams {
            beta1,
            tilde_beta1: tilde,
            sigma_e_father: se,
            ..Default::default()
        }
    }

    #[test]
    fn matched_error_transmission_is_unbiased() {
        let b: Vec<f64> = (0..10)
            .map(|s| {
                simulate_mobility_bias(&p(0.5, 0.5, 1.0), 100_000, s)
                    .unwrap()
                    .beta_hat
            })
            .collect();
        assert!((median(&b).unwrap() - 0.5).abs() < 0.02);
    }

    #[test]
    fn no_error_no_noise_is_exact() {
        let q = MobilityErrorParams {
            sigma_e_father: 0.0,
            sigma_nu: 0.0,
            sigma_delta: 0.0,
            tilde_beta1: 0.0,
            beta1: 0.37,
            ..Default::default()
        };
        let s = simulate_mobility_bias(&q, 500, 1).unwrap();
        assert!((s.beta_hat - 0.37).abs() < 1e-12);
        assert_eq!(s.bias_covariance, 0.0);
    }

    #[test]
    fn untransmitted_error_attenuates() {
        let q = p(0.5, 0.0, 1.0);
        let s = simulate_mobility_bias(&q, 100_000, 2).unwrap();
        assert!((q.plim() - 0.25).abs() < 1e-15);
        assert!((s.beta_hat - 0.25).abs() < 0.02);
        assert!(s.bias_covariance < 0.0);
        let matched = simulate_mobility_bias(&p(0.5, 0.5, 1.0), 100_000, 2).unwrap();
        assert!(s.beta_hat < matched.beta_hat);
    }

    #[test]
    fn small_n_and_bad_beta1_rejected() {
        assert!(simulate_mobility_bias(&MobilityErrorParams::default(), 99, 0).is_err());
        assert!(simulate_mobility_bias(&p(1.5, 0.5, 1.0), 1000, 0).is_err());
        let q = MobilityErrorParams {
            enforce_unit_beta1: false,
            ..p(1.5, 0.5, 1.0)
        };
        assert!(simulate_mobility_bias(&q, 1000, 0).is_ok());
        assert!(simulate_mobility_bias(&p(0.5, 0.5, -1.0), 1000, 0).is_err());
    }

    #[test]
    fn sweep_bias_smallest_at_matched_slope() {
        let cfg = MobilitySweepConfig {
            n: 20_000,
            replications: 5,
            seed: 11,
            sweep: BTreeMap::from([("tilde_beta1".to_string(), vec![0.0, 0.25, 0.5, 0.75, 1.0])]),
        };
        let rows = run_mobility_sweep(&p(0.5, 0.5, 1.0), &cfg).unwrap();
        let mut bias = vec![0.0; 5];
        for r in &rows {
            bias[r.cell] += (r.sim.beta_hat - 0.5).abs();
        }
        let best = (0..5).min_by(|&a, &b| bias[a].total_cmp(&bias[b])).unwrap();
        assert_eq!(best, 2, "{bias:?}");
        assert_eq!(mobility_sweep_table(&rows).lines().count(), 26);
    }

    #[test]
    fn sweep_is_thread_independent() {
        let cfg = MobilitySweepConfig {
            n: 1000,
            replications: 3,
            seed: 5,
            sweep: BTreeMap::from([("beta1".to_string(), vec![0.2, 0.8])]),
        };
        let base = MobilityErrorParams::default();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = one.install(|| run_mobility_sweep(&base, &cfg)).unwrap();
        let b = many.install(|| run_mobility_sweep(&base, &cfg)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn elasticity_invariant_to_score_scale(seed in 0u64..1000, c in 0.01f64..100.0) {
            let mut r = rng::rng_from_seed(seed);
            let xs: Vec<(f64, f64)> = (0..40).map(|_| (r.random::<f64>() + 0.1, r.random::<f64>() + 0.1)).collect();
            let logs: Vec<(f64, f64)> = xs.iter().map(|(f, s)| (f.ln(), s.ln())).collect();
            let scaled: Vec<(f64, f64)> = xs.iter().map(|(f, s)| ((c * f).ln(), (c * s).ln())).collect();
            let a = estimate_elasticity(&pairs_from(&logs), "occscore").unwrap().coefficients[1];
            let b = estimate_elasticity(&pairs_from(&scaled), "occscore").unwrap().coefficients[1];
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn simulation_is_deterministic(seed in any::<u64>(), beta1 in 0.0f64..1.0, tilde in -1.0f64..1.0) {
            let q = p(beta1, tilde, 0.7);
            prop_assert_eq!(simulate_mobility_bias(&q, 200, seed).unwrap(), simulate_mobility_bias(&q, 200, seed).unwrap());
        }
    }
}
