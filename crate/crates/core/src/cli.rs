//! The `lido` command-line pipeline.
//!
//! Every verb reads a TOML run configuration (`--config`), applies
//! `--set key=value` overrides and the shortcut flags, runs inside a rayon
//! pool of `--threads` workers, and writes delimited tables plus
//! `manifest.json` into `--out`. Outputs are staged in a sibling directory
//! and moved into place only when the verb succeeds.
//!
//! Relative paths in the configuration resolve against the directory of the
//! configuration file, or the working directory when there is none.
//!
//! Exit status: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bias::{self, CategoryMap, ComparisonSpec, GapConfig, ScoredSample, TypeSDefinition};
use crate::data::{self, Crosswalk, FilterSpec, PersonRecord, Schema};
use crate::mobility::{self, LinkRules, MobilityErrorParams, MobilitySweepConfig};
use crate::ope::{self, OpeParams, SweepConfig};
use crate::regression::{fmt_num, Formula, SeSpec, DEFAULT_ALPHA};
use crate::scores::{self, LidoConfig, OccscoreConfig, ScoreKind, ScoreTable};
use crate::{Error, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(
    name = "lido",
    version,
    about = "Occupational income scores and proxy-bias diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set lido.cv_folds=5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Master seed for every random procedure of the verb.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Input file (microdata, or linked pairs for `mobility`).
    #[arg(long, global = true)]
    input: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Subcommand)]
enum Verb {
    /// Parse and filter microdata; report row accounting.
    Ingest,
    /// Remap occupation codes through a crosswalk.
    Crosswalk,
    /// Build an OCCSCORE or LIDO score table from a base sample.
    BuildScores {
        /// occscore or lido.
        #[arg(long)]
        kind: Option<String>,
    },
    /// Score records with a score table.
    Score,
    /// Monte Carlo sweep of the OPE proxies against their closed forms.
    SimulateOpe,
    /// Earnings-gap regressions with implied ratios.
    Gaps,
    /// Conflicting-sign rates per term category.
    TypeS,
    /// Mean proxy-to-true coefficient ratios per term category.
    Ratios,
    /// Kernel density of coefficient ratios.
    Density,
    /// Persistence of occupation medians against a base table.
    Persistence,
    /// Intergenerational elasticities on linked pairs.
    Mobility,
    /// Correlated-measurement-error simulation.
    MobilitySim,
}

impl Verb {
    fn name(&self) -> &'static str {
        match self {
            Verb::Ingest => "ingest",
            Verb::Crosswalk => "crosswalk",
            Verb::BuildScores { .. } => "build-scores",
            Verb::Score => "score",
            Verb::SimulateOpe => "simulate-ope",
            Verb::Gaps => "gaps",
            Verb::TypeS => "type-s",
            Verb::Ratios => "ratios",
            Verb::Density => "density",
            Verb::Persistence => "persistence",
            Verb::Mobility => "mobility",
            Verb::MobilitySim => "mobility-sim",
        }
    }
}

/// Comparison regression settings as written in a configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparisonConfig {
    pub name: String,
    pub formula: Formula,
    /// Category map file; the standard map when absent.
    pub category_map: Option<PathBuf>,
    pub se: SeSpec,
    pub alpha: f64,
    pub definition: TypeSDefinition,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        let d = ComparisonSpec::default();
        ComparisonConfig {
            name: d.name,
            formula: d.formula,
            category_map: None,
            se: d.se,
            alpha: DEFAULT_ALPHA,
            definition: TypeSDefinition::default(),
        }
    }
}

/// Full run configuration. Keys a verb does not use are ignored by it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; when set it replaces every verb-level seed.
    pub seed: Option<u64>,
    /// Output directory.
    pub out: Option<PathBuf>,
    /// Column mapping for `input`; the identity layout when absent.
    pub schema: Option<PathBuf>,
    pub input: Option<PathBuf>,
    /// Extra microdata files (`persistence` groups all records by year).
    pub inputs: Vec<PathBuf>,
    pub filter: Option<FilterSpec>,
    pub crosswalk: Option<PathBuf>,
    pub kind: Option<ScoreKind>,
    pub occscore: OccscoreConfig,
    pub lido: LidoConfig,
    /// Score table for `score` and the base table for `persistence`.
    pub table: Option<PathBuf>,
    /// Label -> score table for `gaps`, `type-s`, `ratios`, `density` and `mobility`.
    pub tables: BTreeMap<String, PathBuf>,
    /// Outcomes for `gaps`; log earnings plus every table when empty.
    pub dvs: Vec<String>,
    pub gaps: GapConfig,
    pub comparison: ComparisonConfig,
    /// Ratio file for `density` (a `ratio` column, optional `proxy` column).
    pub ratios_file: Option<PathBuf>,
    pub bandwidth: Option<f64>,
    pub ope: OpeParams,
    pub ope_sweep: SweepConfig,
    pub link_rules: LinkRules,
    /// Father variable that splits the mobility grid.
    pub group_by: Option<String>,
    pub mobility: MobilityErrorParams,
    pub mobility_sweep: MobilitySweepConfig,
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Schema(_) | Error::Config(_) | Error::Toml(_) => 1,
        Error::Data(_) | Error::Io { .. } | Error::Csv(_) | Error::Json(_) => 2,
        Error::Numerical(_) => 3,
    }
}

/// Set `path` (dot-separated) in a TOML table.
fn set_key(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let mut keys = path.split('.').peekable();
    let mut cur = table;
    while let Some(k) = keys.next() {
        if k.is_empty() {
            return Err(Error::Config(format!("malformed key {path:?}")));
        }
        if keys.peek().is_none() {
            cur.insert(k.to_string(), value);
            return Ok(());
        }
        let next = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match next {
            toml::Value::Table(t) => t,
            _ => {
                return Err(Error::Config(format!(
                    "key {k:?} in {path:?} is not a table"
                )))
            }
        };
    }
    unreachable!("split yields at least one key")
}

/// Parse `KEY=VALUE`; VALUE is read as a TOML value, else as a string.
fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {s:?} is not KEY=VALUE")))?;
    let value = match toml::from_str::<toml::Table>(&format!("v = {v}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(v.to_string()),
    };
    Ok((k.trim().to_string(), value))
}

struct Resolved {
    cfg: RunConfig,
    base: PathBuf,
}

impl Resolved {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn need<'a>(&self, v: &'a Option<PathBuf>, key: &str) -> Result<PathBuf> {
        let p: &'a PathBuf = v
            .as_ref()
            .ok_or_else(|| Error::Config(format!("missing configuration key {key:?}")))?;
        Ok(self.path(p))
    }

    fn schema(&self) -> Result<Schema> {
        match &self.cfg.schema {
            Some(p) => Schema::from_path(&self.path(p)),
            None => Ok(Schema::identity()),
        }
    }

    fn records(&self) -> Result<(Vec<PersonRecord>, data::IngestReport)> {
        data::load_microdata(&self.need(&self.cfg.input, "input")?, &self.schema()?)
    }

    fn tables(&self) -> Result<BTreeMap<String, ScoreTable>> {
        if self.cfg.tables.is_empty() {
            return Err(Error::Config("missing configuration key \"tables\"".into()));
        }
        self.cfg
            .tables
            .iter()
            .map(|(k, p)| Ok((k.clone(), ScoreTable::read(&self.path(p))?)))
            .collect()
    }

    /// Input records, optionally filtered, with every table attached.
    fn scored_sample(&self) -> Result<(ScoredSample, serde_json::Value)> {
        let (records, ingest) = self.records()?;
        let (records, exclusions) = match &self.cfg.filter {
            Some(f) => {
                let (r, c) = data::filter_sample(&records, f)?;
                (r, Some(c))
            }
            None => (records, None),
        };
        let mut sample = ScoredSample::new(records);
        let mut coverage = BTreeMap::new();
        for (label, t) in self.tables()? {
            coverage.insert(label.clone(), sample.attach(&label, &t)?);
        }
        Ok((
            sample,
            json!({"ingest": ingest, "exclusions": exclusions, "coverage": coverage}),
        ))
    }

    fn comparison(&self) -> Result<ComparisonSpec> {
        let c = &self.cfg.comparison;
        let categories = match &c.category_map {
            Some(p) => CategoryMap::from_path(&self.path(p))?,
            None => CategoryMap::standard(),
        };
        Ok(ComparisonSpec {
            name: c.name.clone(),
            formula: c.formula.clone(),
            categories,
            se: c.se.clone(),
        })
    }
}

/// Files written by a verb, staged until success.
struct Stage {
    dir: PathBuf,
    files: Vec<String>,
}

impl Stage {
    fn put(&mut self, name: &str, body: impl AsRef<[u8]>) -> Result<()> {
        let p = self.dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn put_json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(v)?;
        s.push('\n');
        self.put(name, s)
    }
}

struct Outcome {
    seeds: BTreeMap<String, u64>,
    summary: serde_json::Value,
}

impl Outcome {
    fn new(summary: serde_json::Value) -> Self {
        Outcome {
            seeds: BTreeMap::new(),
            summary,
        }
    }
}

fn run_verb(verb: &Verb, r: &Resolved, st: &mut Stage) -> Result<Outcome> {
    let cfg = &r.cfg;
    match verb {
        Verb::Ingest => {
            let (records, report) = r.records()?;
            let (kept, filter) = match &cfg.filter {
                Some(f) => {
                    let (k, c) = data::filter_sample(&records, f)?;
                    let n = k.len();
                    (k, json!({"exclusions": c, "n_kept": n}))
                }
                None => (records, serde_json::Value::Null),
            };
            let mut buf = Vec::new();
            data::write_microdata_to(&mut buf, &kept).map_err(|e| Error::io(&st.dir, e))?;
            st.put("records.csv", buf)?;
            let summary = json!({"ingest": report, "filter": filter, "n_records": kept.len()});
            st.put_json("ingest_report.json", &summary)?;
            Ok(Outcome::new(summary))
        }
        Verb::Crosswalk => {
            let schema = r.schema()?;
            let (records, report) = data::load_microdata(&r.need(&cfg.input, "input")?, &schema)?;
            let cw = Crosswalk::from_path(&r.need(&cfg.crosswalk, "crosswalk")?)?;
            let (mapped, cw_report) =
                data::apply_crosswalk(&records, &schema.occupation_scheme, &cw)?;
            let mut buf = Vec::new();
            data::write_microdata_to(&mut buf, &mapped).map_err(|e| Error::io(&st.dir, e))?;
            st.put("records.csv", buf)?;
            let summary = json!({"ingest": report, "crosswalk": cw_report, "target_scheme": cw.target_scheme});
            st.put_json("crosswalk_report.json", &summary)?;
            Ok(Outcome::new(summary))
        }
        Verb::BuildScores { .. } => {
            let kind = cfg
                .kind
                .ok_or_else(|| Error::Config("build-scores needs --kind occscore|lido".into()))?;
            let (records, report) = r.records()?;
            let records = match &cfg.filter {
                Some(f) => data::filter_sample(&records, f)?.0,
                None => records,
            };
            let table = match kind {
                ScoreKind::Occscore => scores::build_occscore(&records, &cfg.occscore)?,
                ScoreKind::Lido => scores::build_lido(&records, &cfg.lido)?,
            };
            st.files.extend(table.write_dir(&st.dir)?);
            let mut out = Outcome::new(json!({
                "ingest": report,
                "kind": kind,
                "coverage": table.coverage_report,
                "n_models": table.industry_models.len(),
            }));
            if kind == ScoreKind::Lido {
                out.seeds.insert("lido".into(), cfg.lido.seed);
                for m in table.industry_models.values() {
                    out.seeds
                        .insert(format!("lido.folds.{}", m.industry), m.seed);
                }
            }
            Ok(out)
        }
        Verb::Score => {
            let table = ScoreTable::read(&r.need(&cfg.table, "table")?)?;
            let (records, report) = r.records()?;
            let scored = scores::score_records(&table, &records)?;
            let mut t = String::from("record_id\tscore\tlog_score\tnull_reason\n");
            for ((rec, s), why) in records.iter().zip(&scored.scores).zip(&scored.reasons) {
                let (v, l) = match s {
                    Some(v) => (fmt_num(*v), fmt_num(table.to_log(*v))),
                    None => ("NA".into(), "NA".into()),
                };
                t.push_str(&format!(
                    "{}\t{v}\t{l}\t{}\n",
                    rec.record_id,
                    why.as_deref().unwrap_or("")
                ));
            }
            st.put("scores.tsv", t)?;
            let summary =
                json!({"ingest": report, "kind": table.kind, "coverage": scored.coverage});
            st.put_json("coverage.json", &summary)?;
            Ok(Outcome::new(summary))
        }
        Verb::SimulateOpe => {
            let rows = ope::run_sweep(&cfg.ope, &cfg.ope_sweep)?;
            st.put("ope_sweep.tsv", ope::sweep_table(&rows))?;
            let mut out =
                Outcome::new(json!({"n_rows": rows.len(), "phi": ope::phi_weights(&cfg.ope)}));
            out.seeds.insert("ope_sweep".into(), cfg.ope_sweep.seed);
            Ok(out)
        }
        Verb::Gaps => {
            let (sample, info) = r.scored_sample()?;
            let dvs = if cfg.dvs.is_empty() {
                std::iter::once(bias::EARNINGS.to_string())
                    .chain(cfg.tables.keys().cloned())
                    .collect()
            } else {
                cfg.dvs.clone()
            };
            let results = bias::run_gap_regressions(&sample, &dvs, &cfg.gaps)?;
            st.put("gaps.tsv", bias::gap_table(&results))?;
            let ratios: BTreeMap<&str, &BTreeMap<String, f64>> = results
                .iter()
                .map(|g| (g.dv.as_str(), &g.implied_ratios))
                .collect();
            st.put_json("implied_ratios.json", &ratios)?;
            Ok(Outcome::new(
                json!({"sample": info, "dvs": dvs, "n_obs": results[0].fit.n_obs}),
            ))
        }
        Verb::TypeS | Verb::Ratios | Verb::Density => {
            let run_cmp = || -> Result<(bias::ComparisonRun, serde_json::Value)> {
                let (sample, info) = r.scored_sample()?;
                let proxies: Vec<String> = cfg.tables.keys().cloned().collect();
                let run = bias::run_comparison(&sample, &r.comparison()?, &proxies)?;
                Ok((run, info))
            };
            match verb {
                Verb::TypeS => {
                    let (run, info) = run_cmp()?;
                    let c = &cfg.comparison;
                    let rows = bias::type_s_table(&run, c.alpha, c.definition);
                    st.put("type_s.tsv", bias::type_s_wide(&rows))?;
                    let mut long = String::from("proxy\tcategory\tn_terms\tn_conflicting\trate\n");
                    for x in &rows {
                        long.push_str(&format!(
                            "{}\t{}\t{}\t{}\t{}\n",
                            x.proxy,
                            x.category,
                            x.n_terms,
                            x.n_conflicting,
                            fmt_num(x.rate)
                        ));
                    }
                    st.put("type_s_long.tsv", long)?;
                    Ok(Outcome::new(comparison_summary(&run, info)))
                }
                Verb::Ratios => {
                    let (run, info) = run_cmp()?;
                    let table = bias::ratio_table(&run);
                    st.put("ratios.tsv", bias::ratio_wide(&table))?;
                    let mut long =
                        String::from("proxy\tcategory\tn_terms\tn_excluded\tmean_ratio\n");
                    for x in &table.rows {
                        long.push_str(&format!(
                            "{}\t{}\t{}\t{}\t{}\n",
                            x.proxy,
                            x.category,
                            x.n_terms,
                            x.n_excluded,
                            fmt_num(x.mean_ratio)
                        ));
                    }
                    st.put("ratios_long.tsv", long)?;
                    st.put("ratio_terms.tsv", ratio_terms(&run)?)?;
                    let mut s = comparison_summary(&run, info);
                    s["notes"] = json!(table.notes);
                    Ok(Outcome::new(s))
                }
                _ => {
                    let groups = match &cfg.ratios_file {
                        Some(p) => read_ratios(&r.path(p))?,
                        None => {
                            let (run, _) = run_cmp()?;
                            let mut g = BTreeMap::new();
                            for proxy in run.proxy_fits.keys() {
                                let v = bias::coefficient_ratios(&run, proxy)?
                                    .into_iter()
                                    .map(|x| x.2)
                                    .collect();
                                g.insert(proxy.clone(), v);
                            }
                            g
                        }
                    };
                    let mut t = String::from("proxy\tx\tdensity\n");
                    let mut info = BTreeMap::new();
                    for (proxy, v) in &groups {
                        let d = bias::ratio_density(v, cfg.bandwidth)?;
                        for (x, y) in &d.points {
                            t.push_str(&format!("{proxy}\t{}\t{}\n", fmt_num(*x), fmt_num(*y)));
                        }
                        info.insert(
                            proxy.clone(),
                            json!({"n": d.n, "bandwidth": d.bandwidth, "integral": d.integral, "mode": d.mode().0, "warnings": d.warnings}),
                        );
                    }
                    st.put("density.tsv", t)?;
                    Ok(Outcome::new(json!({"densities": info})))
                }
            }
        }
        Verb::Persistence => {
            let base = ScoreTable::read(&r.need(&cfg.table, "table")?)?;
            let schema = r.schema()?;
            let mut files: Vec<PathBuf> = cfg
                .input
                .iter()
                .chain(&cfg.inputs)
                .map(|p| r.path(p))
                .collect();
            if files.is_empty() {
                return Err(Error::Config(
                    "persistence needs \"input\" or \"inputs\"".into(),
                ));
            }
            files.dedup();
            let mut by_year: BTreeMap<i32, Vec<PersonRecord>> = BTreeMap::new();
            let mut reports = Vec::new();
            for f in &files {
                let (recs, rep) = data::load_microdata(f, &schema)?;
                reports.push(rep);
                for rec in recs {
                    by_year.entry(rec.year).or_default().push(rec);
                }
            }
            let rep = bias::persistence_stats(&base, &by_year)?;
            st.put("persistence.tsv", rep.to_table())?;
            Ok(Outcome::new(
                json!({"ingest": reports, "warnings": rep.warnings}),
            ))
        }
        Verb::Mobility => {
            let (mut pairs, report) = mobility::load_linked_pairs(
                &r.need(&cfg.input, "input")?,
                &r.schema()?,
                &cfg.link_rules,
            )?;
            let mut complete = BTreeMap::new();
            for (label, t) in r.tables()? {
                complete.insert(
                    label.clone(),
                    mobility::attach_scores(&mut pairs, &label, &t)?,
                );
            }
            let labels: Vec<String> = cfg.tables.keys().cloned().collect();
            let cells = mobility::elasticity_grid(&pairs, &labels, cfg.group_by.as_deref());
            st.put("mobility.tsv", mobility::grid_table(&cells))?;
            st.put_json("mobility_cells.json", &cells)?;
            Ok(Outcome::new(json!({
                "ingest": report,
                "complete_per_table": complete,
                "complete_all_tables": mobility::complete_cases(&pairs).len(),
            })))
        }
        Verb::MobilitySim => {
            let rows = mobility::run_mobility_sweep(&cfg.mobility, &cfg.mobility_sweep)?;
            st.put("mobility_sim.tsv", mobility::mobility_sweep_table(&rows))?;
            let mut out = Outcome::new(json!({
                "n_rows": rows.len(),
                "plim": cfg.mobility.plim(),
                "bias_covariance": cfg.mobility.bias_covariance(),
            }));
            out.seeds
                .insert("mobility_sweep".into(), cfg.mobility_sweep.seed);
            Ok(out)
        }
    }
}

fn comparison_summary(run: &bias::ComparisonRun, info: serde_json::Value) -> serde_json::Value {
    json!({
        "sample": info,
        "spec": run.spec_name,
        "n_obs": run.true_fit.n_obs,
        "n_categorized_terms": run.term_categories.len(),
        "unassigned_terms": run.unassigned,
    })
}

fn ratio_terms(run: &bias::ComparisonRun) -> Result<String> {
    let mut t = String::from("proxy\tterm\tcategory\tratio\n");
    for proxy in run.proxy_fits.keys() {
        for (term, cat, ratio) in bias::coefficient_ratios(run, proxy)? {
            t.push_str(&format!("{proxy}\t{term}\t{cat}\t{}\n", fmt_num(ratio)));
        }
    }
    Ok(t)
}

/// Read a `ratio` column, grouped by an optional `proxy` column.
fn read_ratios(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let delim = if text.lines().next().is_some_and(|l| l.contains('\t')) {
        b'\t'
    } else {
        b','
    };
    let mut rd = csv::ReaderBuilder::new()
        .delimiter(delim)
        .from_reader(text.as_bytes());
    let header = rd.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h.trim() == name);
    let ri = col("ratio")
        .ok_or_else(|| Error::Data(format!("{} has no ratio column", path.display())))?;
    let pi = col("proxy");
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (i, row) in rd.records().enumerate() {
        let row = row?;
        let v: f64 = row
            .get(ri)
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| {
                Error::Data(format!("row {} of {}: bad ratio", i + 1, path.display()))
            })?;
        let g = pi.and_then(|j| row.get(j)).unwrap_or("all").to_string();
        out.entry(g).or_default().push(v);
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{} has no ratios", path.display())));
    }
    Ok(out)
}

fn load_config(cli: &Cli) -> Result<Resolved> {
    let (mut table, base) = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let t: toml::Table = toml::from_str(&text)?;
            (t, p.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => (toml::Table::new(), PathBuf::new()),
    };
    for s in &cli.set {
        let (k, v) = parse_override(s)?;
        set_key(&mut table, &k, v)?;
    }
    let as_str = |p: &Path| toml::Value::String(p.to_string_lossy().into_owned());
    if let Some(s) = cli.seed {
        let v = i64::try_from(s)
            .map_err(|_| Error::Config(format!("seed {s} exceeds the configuration range")))?;
        table.insert("seed".into(), toml::Value::Integer(v));
    }
    if let Some(p) = &cli.input {
        table.insert(
            "input".into(),
            as_str(&std::path::absolute(p).map_err(|e| Error::io(p, e))?),
        );
    }
    if let Some(p) = &cli.out {
        table.insert(
            "out".into(),
            as_str(&std::path::absolute(p).map_err(|e| Error::io(p, e))?),
        );
    }
    if let Verb::BuildScores { kind: Some(k) } = &cli.verb {
        table.insert("kind".into(), toml::Value::String(k.clone()));
    }
    let mut cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    if let Some(s) = cfg.seed {
        cfg.lido.seed = s;
        cfg.ope_sweep.seed = s;
        cfg.mobility_sweep.seed = s;
    }
    Ok(Resolved { cfg, base })
}

/// Move the staged files into `out`, replacing same-named entries.
fn publish(stage: &Path, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let entries = fs::read_dir(stage).map_err(|e| Error::io(stage, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(stage, e))?;
        let dest = out.join(entry.file_name());
        if dest.is_dir() {
            fs::remove_dir_all(&dest).map_err(|e| Error::io(&dest, e))?;
        }
        fs::rename(entry.path(), &dest).map_err(|e| Error::io(&dest, e))?;
    }
    fs::remove_dir(stage).map_err(|e| Error::io(stage, e))
}

fn execute(cli: &Cli) -> Result<PathBuf> {
    let resolved = load_config(cli)?;
    let out = resolved.need(&resolved.cfg.out, "out")?;
    let name = out.file_name().ok_or_else(|| {
        Error::Config(format!(
            "output path {} has no directory name",
            out.display()
        ))
    })?;
    let parent = out.parent().map(Path::to_path_buf).unwrap_or_default();
    fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    let staging = parent.join(format!(
        ".{}.staging-{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut stage = Stage {
        dir: staging.clone(),
        files: Vec::new(),
    };
    let result = pool
        .install(|| run_verb(&cli.verb, &resolved, &mut stage))
        .and_then(|outcome| {
            let mut cfg = resolved.cfg.clone();
            cfg.out = None;
            let mut outputs = stage.files.clone();
            outputs.push(MANIFEST.into());
            outputs.sort();
            let manifest = json!({
                "tool": "lido",
                "version": env!("CARGO_PKG_VERSION"),
                "verb": cli.verb.name(),
                "config": cfg,
                "seeds": outcome.seeds,
                "outputs": outputs,
                "summary": outcome.summary,
            });
            stage.put_json(MANIFEST, &manifest)?;
            publish(&staging, &out)
        });
    if result.is_err() && staging.exists() {
        let _ = fs::remove_dir_all(&staging);
    }
    result.map(|()| out)
}

/// Run the CLI on `args` (program name first) and return the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("usage error");
            eprintln!(
                "lido: error[usage]: {}",
                first.trim_start_matches("error: ")
            );
            return 1;
        }
    };
    match execute(&cli) {
        Ok(_) => 0,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("lido: error[{}]: {msg}", e.kind());
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_as_toml_or_string() {
        let (k, v) = parse_override("lido.cv_folds=5").unwrap();
        assert_eq!((k.as_str(), v), ("lido.cv_folds", toml::Value::Integer(5)));
        assert_eq!(
            parse_override("input=a/b.csv").unwrap().1,
            toml::Value::String("a/b.csv".into())
        );
        assert_eq!(
            parse_override("group_by=\"race\"").unwrap().1,
            toml::Value::String("race".into())
        );
        assert!(parse_override("novalue").is_err());
    }

    #[test]
    fn set_key_builds_nested_tables() {
        let mut t = toml::Table::new();
        set_key(
            &mut t,
            "ope_sweep.sweep.sigma_psi",
            toml::Value::Array(vec![toml::Value::Float(0.5)]),
        )
        .unwrap();
        let cfg: RunConfig = toml::Value::Table(t).try_into().unwrap();
        assert_eq!(cfg.ope_sweep.sweep["sigma_psi"], vec![0.5]);
        let mut t = toml::Table::new();
        t.insert("seed".into(), toml::Value::Integer(1));
        assert!(set_key(&mut t, "seed.x", toml::Value::Integer(2)).is_err());
    }

    #[test]
    fn exit_codes_by_error_family() {
        assert_eq!(exit_code(&Error::Config("x".into())), 1);
        assert_eq!(exit_code(&Error::Data("x".into())), 2);
        assert_eq!(exit_code(&Error::Numerical("x".into())), 3);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let t: toml::Table = toml::from_str("no_such_key = 1").unwrap();
        assert!(toml::Value::Table(t).try_into::<RunConfig>().is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["lido", "no-such-verb"]), 1);
        assert_eq!(run(["lido", "ingest"]), 1);
    }
}
