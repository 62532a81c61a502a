use std::collections::BTreeMap;
use std::path::Path;

use csv::StringRecord;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::record::PersonRecord;
use super::schema::{RegionLookup, Schema, FIELDS, REQUIRED_FIELDS};
use crate::{Error, Result};

/// Row accounting for one ingested file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub occupation_scheme: String,
    pub n_rows: usize,
    pub n_parsed: usize,
    pub n_rejected: usize,
    /// Rejection reason to count.
    pub reasons: BTreeMap<String, usize>,
    /// First rejected data rows (1-based, header excluded) with their reason.
    pub rejected_rows: Vec<(usize, String)>,
}

const MAX_LISTED_REJECTS: usize = 100;

/// Column index per mapped record field.
#[derive(Debug, Clone)]
pub(crate) struct ColumnIndex {
    idx: BTreeMap<&'static str, usize>,
}

impl ColumnIndex {
    /// Resolve the schema's column map against a header. `prefix` is prepended
    /// to every mapped column name (used for father_/son_ groups).
    pub(crate) fn resolve(schema: &Schema, header: &StringRecord, prefix: &str) -> Result<Self> {
        let mut idx = BTreeMap::new();
        for field in FIELDS {
            let Some(col) = schema.columns.get(*field) else {
                continue;
            };
            let want = format!("{prefix}{col}");
            match header.iter().position(|h| h.trim() == want) {
                Some(i) => {
                    idx.insert(*field, i);
                }
                None if REQUIRED_FIELDS.contains(field) => {
                    return Err(Error::Schema(format!(
                        "required column {want:?} (field {field}) not found in header"
                    )));
                }
                None if *field == "year" && schema.default_year.is_none() => {
                    return Err(Error::Schema(format!(
                        "year column {want:?} not found in header"
                    )));
                }
                None => {}
            }
        }
        Ok(ColumnIndex { idx })
    }
}

pub(crate) struct RowParser<'a> {
    pub schema: &'a Schema,
    pub regions: &'a RegionLookup,
    pub columns: ColumnIndex,
}

impl RowParser<'_> {
    fn cell<'r>(&self, row: &'r StringRecord, field: &str) -> Option<&'r str> {
        let i = *self.columns.idx.get(field)?;
        let cell = row.get(i)?;
        if self.schema.is_missing(cell) {
            None
        } else {
            Some(cell.trim())
        }
    }

    fn required<'r>(&self, row: &'r StringRecord, field: &str) -> Result<&'r str, String> {
        self.cell(row, field)
            .ok_or_else(|| format!("missing {field}"))
    }

    fn count(&self, row: &StringRecord, field: &str, default: u32) -> Result<u32, String> {
        match self.cell(row, field) {
            None => Ok(default),
            Some(c) => parse_count(c).ok_or_else(|| format!("unparseable {field}")),
        }
    }

    fn flag(&self, row: &StringRecord, field: &str, default: bool) -> Result<bool, String> {
        match self.cell(row, field) {
            None => Ok(default),
            Some(c) => self
                .schema
                .flag_of(c)
                .ok_or_else(|| "unknown code".to_string()),
        }
    }

    fn code(&self, row: &StringRecord, field: &str, default: &str) -> Result<String, String> {
        let code = self.cell(row, field).unwrap_or(default);
        if self.cell(row, field).is_some() && !self.schema.code_is_valid(field, code) {
            return Err("unknown code".into());
        }
        Ok(code.to_string())
    }

    /// Parse one data row; `Err` carries the rejection reason.
    pub(crate) fn parse(
        &self,
        row: &StringRecord,
        row_number: usize,
    ) -> Result<PersonRecord, String> {
        let record_id = self
            .cell(row, "record_id")
            .map(str::to_string)
            .unwrap_or_else(|| row_number.to_string());
        let year = match self.cell(row, "year") {
            Some(c) => c
                .parse::<i32>()
                .map_err(|_| "unparseable year".to_string())?,
            None => self.schema.default_year.ok_or("missing year")?,
        };
        let age_raw = self.required(row, "age")?;
        let age_f: f64 = age_raw.parse().map_err(|_| "unparseable age".to_string())?;
        if age_f < 0.0 {
            return Err("negative age".into());
        }
        if age_f.fract() != 0.0 || age_f > 150.0 {
            return Err("unparseable age".into());
        }
        let age = age_f as u32;
        let sex = self
            .schema
            .sex_of(self.required(row, "sex")?)
            .ok_or("unknown code")?;
        let race = self
            .schema
            .race_of(self.required(row, "race")?)
            .ok_or("unknown code")?;
        let state_raw = self.required(row, "state")?;
        let region = self
            .regions
            .region_of(state_raw)
            .ok_or("unknown code")?
            .to_string();
        let state = super::schema::normalize_state(state_raw);
        let occupation = self.required(row, "occupation")?;
        if !self.schema.code_is_valid("occupation", occupation) {
            return Err("unknown code".into());
        }
        let industry = match self.cell(row, "industry") {
            None => None,
            Some(c) if self.schema.code_is_valid("industry", c) => Some(c.to_string()),
            Some(_) => return Err("unknown code".into()),
        };
        let earnings = match self.cell(row, "earnings") {
            None => None,
            Some(c) => {
                let v: f64 = c.parse().map_err(|_| "unparseable earnings".to_string())?;
                if !v.is_finite() {
                    return Err("unparseable earnings".into());
                }
                if v < 0.0 {
                    return Err("negative earnings".into());
                }
                Some(v)
            }
        };
        let weight = match self.cell(row, "weight") {
            None => 1.0,
            Some(c) => {
                let w: f64 = c.parse().map_err(|_| "unparseable weight".to_string())?;
                if !(w.is_finite() && w > 0.0) {
                    return Err("non-positive weight".into());
                }
                w
            }
        };
        Ok(PersonRecord {
            record_id,
            year,
            age,
            sex,
            race,
            state,
            region,
            birthplace: self.code(row, "birthplace", "unknown")?,
            nativity: self.flag(row, "nativity", true)?,
            industry,
            occupation: occupation.to_string(),
            earnings,
            in_labor_force: self.flag(row, "in_labor_force", true)?,
            farm_status: self.flag(row, "farm_status", false)?,
            family_size: self.count(row, "family_size", 1)?,
            marital_status: self.code(row, "marital_status", "unknown")?,
            n_families_in_household: self.count(row, "n_families_in_household", 1)?,
            relation_to_head: self.code(row, "relation_to_head", "unknown")?,
            weight,
        })
    }
}

fn parse_count(cell: &str) -> Option<u32> {
    let v: f64 = cell.parse().ok()?;
    (v >= 0.0 && v.fract() == 0.0 && v <= f64::from(u32::MAX)).then_some(v as u32)
}

pub(crate) fn reader_for(schema: &Schema, path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .delimiter(schema.delimiter_byte()?)
        .has_headers(true)
        .flexible(true)
        .from_reader(file))
}

/// Parse rows in parallel; output order equals input order.
pub(crate) fn parse_rows<T, F>(rows: &[StringRecord], parse: F) -> (Vec<T>, IngestReport)
where
    T: Send,
    F: Fn(&StringRecord, usize) -> Result<T, String> + Sync,
{
    let parsed: Vec<Result<T, String>> = rows
        .par_iter()
        .enumerate()
        .map(|(i, row)| parse(row, i + 1))
        .collect();
    let mut report = IngestReport {
        n_rows: rows.len(),
        ..IngestReport::default()
    };
    let mut out = Vec::with_capacity(parsed.len());
    for (i, r) in parsed.into_iter().enumerate() {
        match r {
            Ok(rec) => out.push(rec),
            Err(reason) => {
                report.n_rejected += 1;
                if report.rejected_rows.len() < MAX_LISTED_REJECTS {
                    report.rejected_rows.push((i + 1, reason.clone()));
                }
                *report.reasons.entry(reason).or_default() += 1;
            }
        }
    }
    report.n_parsed = out.len();
    (out, report)
}

/// Read a delimited microdata file with a header row.
///
/// A missing required column is fatal; a bad cell only rejects its row.
pub fn load_microdata(path: &Path, schema: &Schema) -> Result<(Vec<PersonRecord>, IngestReport)> {
    schema.validate()?;
    let regions = schema.region_lookup()?;
    let mut reader = reader_for(schema, path)?;
    let header = reader.headers()?.clone();
    let parser = RowParser {
        schema,
        regions: &regions,
        columns: ColumnIndex::resolve(schema, &header, "")?,
    };
    let rows = reader
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let (records, mut report) = parse_rows(&rows, |row, n| parser.parse(row, n));
    report.occupation_scheme = schema.occupation_scheme.clone();
    Ok((records, report))
}
