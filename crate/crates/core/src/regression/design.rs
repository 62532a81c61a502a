//! Dummy-variable design construction.
//!
//! Columns are named with a small grammar that is also used to evaluate them
//! on new observations, so a fitted coefficient vector can be applied to any
//! record without keeping the original matrix around:
//!
//! - `age`, `age^2` - powers of a continuous variable
//! - `sex[female]` - indicator that a categorical variable takes a level
//! - `sex[female]*race[black]` - products of the above
//!
//! Formulas use the same grammar, plus `C(var)` for "all non-reference levels
//! of a categorical variable".

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::hash::{Hash, Hasher};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const INTERCEPT: &str = "(intercept)";

/// Variable access for design construction and prediction.
pub trait Observation {
    fn continuous(&self, var: &str) -> Option<f64>;
    fn categorical(&self, var: &str) -> Option<Cow<'_, str>>;
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Atom {
    Power { var: String, power: u32 },
    Level { var: String, level: String },
}

impl Atom {
    pub fn eval<O: Observation + ?Sized>(&self, obs: &O) -> Option<f64> {
        match self {
            Atom::Power { var, power } => obs.continuous(var).map(|v| v.powi(*power as i32)),
            Atom::Level { var, level } => obs
                .categorical(var)
                .map(|v| f64::from(u8::from(v == level.as_str()))),
        }
    }

    fn var(&self) -> &str {
        match self {
            Atom::Power { var, .. } | Atom::Level { var, .. } => var,
        }
    }

    fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(open) = s.find('[') {
            let Some(level) = s[open + 1..].strip_suffix(']') else {
                return Err(Error::Config(format!("malformed level atom {s:?}")));
            };
            return Ok(Atom::Level {
                var: s[..open].to_string(),
                level: level.to_string(),
            });
        }
        if let Some((var, p)) = s.split_once('^') {
            let power = p
                .parse::<u32>()
                .ok()
                .filter(|p| *p >= 1)
                .ok_or_else(|| Error::Config(format!("bad power in {s:?}")))?;
            return Ok(Atom::Power {
                var: var.to_string(),
                power,
            });
        }
        if s.is_empty() {
            return Err(Error::Config("empty term".into()));
        }
        Ok(Atom::Power {
            var: s.to_string(),
            power: 1,
        })
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Power { var, power: 1 } => write!(f, "{var}"),
            Atom::Power { var, power } => write!(f, "{var}^{power}"),
            Atom::Level { var, level } => write!(f, "{var}[{level}]"),
        }
    }
}

/// A parsed design column: intercept or a product of atoms.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TermExpr(pub Vec<Atom>);

impl TermExpr {
    pub fn parse(name: &str) -> Result<Self> {
        if name == INTERCEPT {
            return Ok(TermExpr(Vec::new()));
        }
        name.split('*')
            .map(Atom::parse)
            .collect::<Result<Vec<_>>>()
            .map(TermExpr)
    }

    pub fn eval<O: Observation + ?Sized>(&self, obs: &O) -> Option<f64> {
        self.0
            .iter()
            .try_fold(1.0, |acc, a| a.eval(obs).map(|v| acc * v))
    }

    /// Variable of the first atom (used for category assignment).
    pub fn lead_var(&self) -> Option<&str> {
        self.0.first().map(Atom::var)
    }

    pub fn vars(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(Atom::var)
    }
}

impl fmt::Display for TermExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str(INTERCEPT);
        }
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join("*"))
    }
}

/// One factor of a formula term.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Part {
    Continuous { var: String, power: u32 },
    Factor { var: String },
    Indicator { var: String, level: String },
}

impl Part {
    fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(inner) = s.strip_prefix("C(").and_then(|r| r.strip_suffix(')')) {
            return Ok(Part::Factor {
                var: inner.trim().to_string(),
            });
        }
        Ok(match Atom::parse(s)? {
            Atom::Power { var, power } => Part::Continuous { var, power },
            Atom::Level { var, level } => Part::Indicator { var, level },
        })
    }
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Part::Continuous { var, power: 1 } => write!(f, "{var}"),
            Part::Continuous { var, power } => write!(f, "{var}^{power}"),
            Part::Factor { var } => write!(f, "C({var})"),
            Part::Indicator { var, level } => write!(f, "{var}[{level}]"),
        }
    }
}

/// Right-hand side of a regression: an intercept plus the listed terms.
///
/// Serialized as a list of strings such as `["age", "age^2", "C(state)",
/// "C(sex)*C(race)", "C(occupation)*race[white]"]`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "FormulaRepr", into = "FormulaRepr")]
pub struct Formula {
    pub terms: Vec<Vec<Part>>,
    /// Forced reference level per factor; otherwise the most frequent level.
    pub references: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct FormulaRepr {
    terms: Vec<String>,
    #[serde(default)]
    references: BTreeMap<String, String>,
}

impl TryFrom<FormulaRepr> for Formula {
    type Error = Error;

    fn try_from(r: FormulaRepr) -> Result<Self> {
        let mut f = Formula::parse(&r.terms.iter().map(String::as_str).collect::<Vec<_>>())?;
        f.references = r.references;
        Ok(f)
    }
}

impl From<Formula> for FormulaRepr {
    fn from(f: Formula) -> Self {
        FormulaRepr {
            terms: f.term_strings(),
            references: f.references,
        }
    }
}

impl Formula {
    pub fn parse(terms: &[&str]) -> Result<Self> {
        let terms = terms
            .iter()
            .map(|t| t.split('*').map(Part::parse).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Formula {
            terms,
            references: BTreeMap::new(),
        })
    }

    pub fn with_reference(mut self, factor: &str, level: &str) -> Self {
        self.references.insert(factor.into(), level.into());
        self
    }

    pub fn term_strings(&self) -> Vec<String> {
        self.terms
            .iter()
            .map(|t| {
                t.iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join("*")
            })
            .collect()
    }

    fn factors(&self) -> BTreeSet<&str> {
        self.terms
            .iter()
            .flatten()
            .filter_map(|p| match p {
                Part::Factor { var } => Some(var.as_str()),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Intercept,
    Continuous,
    Dummy,
    Interaction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub n_rows: usize,
    pub columns: Vec<Column>,
    pub values: DMatrix<f64>,
    /// Reference level dropped for each factor.
    pub dropped_levels: Vec<(String, String)>,
    /// Columns considered before dropping empty and duplicate columns.
    pub n_possible: usize,
    pub warnings: Vec<String>,
}

impl DesignMatrix {
    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Design from explicit columns (an intercept is prepended when asked).
    pub fn from_columns(names: &[&str], cols: &[Vec<f64>], intercept: bool) -> Result<Self> {
        if names.len() != cols.len() {
            return Err(Error::Config(
                "column names and data differ in length".into(),
            ));
        }
        let n = cols.first().map_or(0, Vec::len);
        if cols.iter().any(|c| c.len() != n) {
            return Err(Error::Config("columns differ in length".into()));
        }
        let mut columns = Vec::new();
        let mut data: Vec<f64> = Vec::new();
        if intercept {
            columns.push(Column {
                name: INTERCEPT.into(),
                kind: ColumnKind::Intercept,
            });
            data.extend(std::iter::repeat_n(1.0, n));
        }
        for (name, col) in names.iter().zip(cols) {
            columns.push(Column {
                name: (*name).to_string(),
                kind: ColumnKind::Continuous,
            });
            data.extend_from_slice(col);
        }
        let k = columns.len();
        Ok(DesignMatrix {
            n_rows: n,
            columns,
            values: DMatrix::from_column_slice(n, k, &data),
            dropped_levels: Vec::new(),
            n_possible: k,
            warnings: Vec::new(),
        })
    }

    /// Row subset (for cross-validation folds and complete-case restrictions).
    pub fn select_rows(&self, rows: &[usize]) -> DesignMatrix {
        let k = self.n_cols();
        let values = DMatrix::from_fn(rows.len(), k, |i, j| self.values[(rows[i], j)]);
        DesignMatrix {
            n_rows: rows.len(),
            columns: self.columns.clone(),
            values,
            dropped_levels: self.dropped_levels.clone(),
            n_possible: self.n_possible,
            warnings: self.warnings.clone(),
        }
    }
}

/// Per-row values of each variable the formula touches.
enum VarData {
    Levels { levels: Vec<String>, idx: Vec<u32> },
    Values(Vec<f64>),
}

struct Expansion {
    name: String,
    atoms: Vec<Atom>,
}

fn collect_var<O: Observation>(records: &[O], var: &str, categorical: bool) -> Result<VarData> {
    if categorical {
        let mut raw = Vec::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            let v = r
                .categorical(var)
                .ok_or_else(|| Error::Data(format!("row {i}: variable {var:?} is missing")))?;
            raw.push(v.into_owned());
        }
        let levels: Vec<String> = raw
            .iter()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let pos: HashMap<&str, u32> = levels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i as u32))
            .collect();
        let idx = raw.iter().map(|v| pos[v.as_str()]).collect();
        Ok(VarData::Levels { levels, idx })
    } else {
        let mut vals = Vec::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            let v = r
                .continuous(var)
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Data(format!("row {i}: variable {var:?} is missing")))?;
            vals.push(v);
        }
        Ok(VarData::Values(vals))
    }
}

fn column_hash(col: &[f64]) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for v in col {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Build the design for `formula` over `records`.
///
/// Column order: intercept, continuous terms in formula order, dummy and
/// indicator terms in formula order (levels sorted by code), interactions
/// last. Each factor drops its reference level (the most frequent one unless
/// overridden). All-zero columns and exact duplicates of earlier columns are
/// dropped with a warning.
pub fn build_design<O: Observation>(records: &[O], formula: &Formula) -> Result<DesignMatrix> {
    if records.is_empty() {
        return Err(Error::Data(
            "cannot build a design from zero records".into(),
        ));
    }
    let n = records.len();
    let mut warnings = Vec::new();

    let mut cat_vars: BTreeMap<&str, VarData> = BTreeMap::new();
    let mut num_vars: BTreeMap<&str, VarData> = BTreeMap::new();
    for part in formula.terms.iter().flatten() {
        match part {
            Part::Factor { var } | Part::Indicator { var, .. } => {
                if !cat_vars.contains_key(var.as_str()) {
                    cat_vars.insert(var, collect_var(records, var, true)?);
                }
            }
            Part::Continuous { var, .. } => {
                if !num_vars.contains_key(var.as_str()) {
                    num_vars.insert(var, collect_var(records, var, false)?);
                }
            }
        }
    }

    // reference level and non-reference levels per factor
    let mut dropped_levels = Vec::new();
    let mut factor_levels: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for var in formula.factors() {
        let Some(VarData::Levels { levels, idx }) = cat_vars.get(var) else {
            unreachable!()
        };
        let mut counts = vec![0usize; levels.len()];
        for &i in idx {
            counts[i as usize] += 1;
        }
        if levels.len() < 2 {
            warnings.push(format!(
                "factor {var:?} has a single observed level; dropped"
            ));
            factor_levels.insert(var, Vec::new());
            continue;
        }
        let reference = match formula.references.get(var) {
            Some(r) if levels.contains(r) => r.clone(),
            Some(r) => {
                warnings.push(format!(
                    "reference {r:?} for {var:?} not observed; using most frequent level"
                ));
                most_frequent(levels, &counts)
            }
            None => most_frequent(levels, &counts),
        };
        dropped_levels.push((var.to_string(), reference.clone()));
        factor_levels.insert(
            var,
            levels
                .iter()
                .filter(|l| **l != reference)
                .cloned()
                .collect(),
        );
    }

    let expand_part = |p: &Part| -> Vec<Atom> {
        match p {
            Part::Continuous { var, power } => vec![Atom::Power {
                var: var.clone(),
                power: *power,
            }],
            Part::Indicator { var, level } => vec![Atom::Level {
                var: var.clone(),
                level: level.clone(),
            }],
            Part::Factor { var } => factor_levels[var.as_str()]
                .iter()
                .map(|l| Atom::Level {
                    var: var.clone(),
                    level: l.clone(),
                })
                .collect(),
        }
    };

    let mut continuous = Vec::new();
    let mut dummies = Vec::new();
    let mut interactions = Vec::new();
    for term in &formula.terms {
        let mut combos: Vec<Vec<Atom>> = vec![Vec::new()];
        for part in term {
            let atoms = expand_part(part);
            combos = combos
                .iter()
                .flat_map(|prefix| {
                    atoms.iter().map(move |a| {
                        let mut c = prefix.clone();
                        c.push(a.clone());
                        c
                    })
                })
                .collect();
        }
        let (bucket, kind) = match term.as_slice() {
            [Part::Continuous { .. }] => (&mut continuous, ColumnKind::Continuous),
            [_] => (&mut dummies, ColumnKind::Dummy),
            _ => (&mut interactions, ColumnKind::Interaction),
        };
        for atoms in combos {
            bucket.push((
                Expansion {
                    name: TermExpr(atoms.clone()).to_string(),
                    atoms,
                },
                kind,
            ));
        }
    }

    let eval_atom = |a: &Atom, row: usize| -> f64 {
        match a {
            Atom::Power { var, power } => {
                let Some(VarData::Values(v)) = num_vars.get(var.as_str()) else {
                    unreachable!()
                };
                v[row].powi(*power as i32)
            }
            Atom::Level { var, level } => {
                let Some(VarData::Levels { levels, idx }) = cat_vars.get(var.as_str()) else {
                    unreachable!()
                };
                f64::from(u8::from(levels[idx[row] as usize] == *level))
            }
        }
    };

    let mut columns = vec![Column {
        name: INTERCEPT.into(),
        kind: ColumnKind::Intercept,
    }];
    let mut data: Vec<f64> = vec![1.0; n];
    let mut seen: HashMap<u64, Vec<usize>> = HashMap::new();
    seen.entry(column_hash(&data)).or_default().push(0);
    let mut names_seen: BTreeSet<String> = BTreeSet::from([INTERCEPT.to_string()]);
    let all = continuous.into_iter().chain(dummies).chain(interactions);
    let mut n_possible = 1;
    for (exp, kind) in all {
        n_possible += 1;
        if !names_seen.insert(exp.name.clone()) {
            warnings.push(format!("term {} listed twice; kept once", exp.name));
            continue;
        }
        let col: Vec<f64> = (0..n)
            .map(|r| exp.atoms.iter().map(|a| eval_atom(a, r)).product())
            .collect();
        if kind != ColumnKind::Continuous && col.iter().all(|v| *v == 0.0) {
            continue;
        }
        let h = column_hash(&col);
        let dup = seen.get(&h).and_then(|cands| {
            cands
                .iter()
                .copied()
                .find(|&c| data[c * n..(c + 1) * n] == col[..])
        });
        if let Some(c) = dup {
            warnings.push(format!(
                "column {} duplicates {}; dropped",
                exp.name, columns[c].name
            ));
            continue;
        }
        seen.entry(h).or_default().push(columns.len());
        columns.push(Column {
            name: exp.name,
            kind,
        });
        data.extend_from_slice(&col);
    }
    let k = columns.len();
    Ok(DesignMatrix {
        n_rows: n,
        columns,
        values: DMatrix::from_column_slice(n, k, &data),
        dropped_levels,
        n_possible,
        warnings,
    })
}

fn most_frequent(levels: &[String], counts: &[usize]) -> String {
    let mut best = 0;
    for (i, c) in counts.iter().enumerate() {
        if *c > counts[best] {
            best = i;
        }
    }
    levels[best].clone()
}

/// Evaluate named design columns on one observation (intercept included as 1).
pub fn encode_row<O: Observation + ?Sized>(terms: &[TermExpr], obs: &O) -> Option<Vec<f64>> {
    terms.iter().map(|t| t.eval(obs)).collect()
}
