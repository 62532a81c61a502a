//! Occupation-code crosswalks between census coding schemes.
//!
//! File format: two delimited columns with a header row naming the source and
//! target schemes, e.g. `occ1940,occ1950`. The literal token `AMBIGUOUS` in
//! the target column marks a source code that does not map to a unique target.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::record::PersonRecord;
use crate::{Error, Result};

pub const AMBIGUOUS: &str = "AMBIGUOUS";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Code(String),
    Ambiguous,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crosswalk {
    pub source_scheme: String,
    pub target_scheme: String,
    pub entries: BTreeMap<String, Target>,
    pub n_ambiguous: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrosswalkReport {
    pub n_input: usize,
    pub n_mapped: usize,
    /// Records excluded because their code maps ambiguously.
    pub n_ambiguous: usize,
    /// Records excluded because their code is absent from the crosswalk.
    pub n_unmapped: usize,
}

impl Crosswalk {
    pub fn new(
        source_scheme: impl Into<String>,
        target_scheme: impl Into<String>,
        pairs: impl IntoIterator<Item = (String, Target)>,
    ) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (src, tgt) in pairs {
            if entries.insert(src.clone(), tgt).is_some() {
                return Err(Error::Data(format!(
                    "crosswalk lists source code {src:?} more than once"
                )));
            }
        }
        let n_ambiguous = entries
            .values()
            .filter(|t| **t == Target::Ambiguous)
            .count();
        Ok(Crosswalk {
            source_scheme: source_scheme.into(),
            target_scheme: target_scheme.into(),
            entries,
            n_ambiguous,
        })
    }

    /// Maps every given code to itself.
    pub fn identity<'a>(scheme: &str, codes: impl IntoIterator<Item = &'a str>) -> Self {
        Self::new(
            scheme,
            scheme,
            codes
                .into_iter()
                .map(|c| (c.to_string(), Target::Code(c.to_string()))),
        )
        .expect("codes from a set are unique")
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let first = text
            .lines()
            .next()
            .ok_or_else(|| Error::Data("empty crosswalk file".into()))?;
        let delim = if first.contains('\t') { b'\t' } else { b',' };
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delim)
            .has_headers(true)
            .from_reader(text.as_bytes());
        let header = reader.headers()?.clone();
        if header.len() != 2 {
            return Err(Error::Data(
                "crosswalk header must have exactly two columns".into(),
            ));
        }
        let (src, tgt) = (header[0].trim().to_string(), header[1].trim().to_string());
        let mut pairs = Vec::new();
        for row in reader.records() {
            let row = row?;
            if row.len() != 2 {
                return Err(Error::Data(format!(
                    "crosswalk row {:?} does not have two columns",
                    row
                )));
            }
            let target = match row[1].trim() {
                AMBIGUOUS => Target::Ambiguous,
                code => Target::Code(code.to_string()),
            };
            pairs.push((row[0].trim().to_string(), target));
        }
        Self::new(src, tgt, pairs)
    }

    pub fn to_delimited(&self) -> String {
        let mut out = format!("{}\t{}\n", self.source_scheme, self.target_scheme);
        for (src, tgt) in &self.entries {
            let t = match tgt {
                Target::Code(c) => c.as_str(),
                Target::Ambiguous => AMBIGUOUS,
            };
            out.push_str(&format!("{src}\t{t}\n"));
        }
        out
    }
}

/// Remap occupation codes of records coded in `records_scheme`.
///
/// Only the occupation field changes. Ambiguous and unmapped codes are
/// excluded and counted, never resolved.
pub fn apply_crosswalk(
    records: &[PersonRecord],
    records_scheme: &str,
    crosswalk: &Crosswalk,
) -> Result<(Vec<PersonRecord>, CrosswalkReport)> {
    if records_scheme != crosswalk.source_scheme {
        return Err(Error::Config(format!(
            "records are coded in {records_scheme:?} but the crosswalk maps from {:?}",
            crosswalk.source_scheme
        )));
    }
    let mut report = CrosswalkReport {
        n_input: records.len(),
        ..CrosswalkReport::default()
    };
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        match crosswalk.entries.get(&r.occupation) {
            Some(Target::Code(code)) => {
                let mut mapped = r.clone();
                mapped.occupation = code.clone();
                out.push(mapped);
                report.n_mapped += 1;
            }
            Some(Target::Ambiguous) => report.n_ambiguous += 1,
            None => report.n_unmapped += 1,
        }
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::record::{Race, Sex};

    fn rec(id: usize, occ: &str) -> PersonRecord {
        PersonRecord::new(
            id.to_string(),
            1915,
            30 + id as u32,
            Sex::Male,
            Race::White,
            "IA",
            "Midwest",
            occ,
        )
        .with_earnings(500.0 + id as f64)
    }

    #[test]
    fn identity_leaves_records_unchanged() {
        let recs = vec![rec(0, "a"), rec(1, "b")];
        let cw = Crosswalk::identity("occ1950", ["a", "b"]);
        let (out, report) = apply_crosswalk(&recs, "occ1950", &cw).unwrap();
        assert_eq!(out, recs);
        assert_eq!(report.n_mapped, 2);
    }

    #[test]
    fn hand_fixture_drops_ambiguous() {
        let cw = Crosswalk::parse("occ1940,occ1950\n10,100\n20,200\n30,AMBIGUOUS\n").unwrap();
        assert_eq!(cw.n_ambiguous, 1);
        let recs = vec![
            rec(0, "10"),
            rec(1, "20"),
            rec(2, "30"),
            rec(3, "10"),
            rec(4, "20"),
        ];
        let (out, report) = apply_crosswalk(&recs, "occ1940", &cw).unwrap();
        assert_eq!(out.len(), 4);
        assert_eq!(report.n_ambiguous, 1);
        assert_eq!(report.n_unmapped, 0);
        let occs: Vec<_> = out.iter().map(|r| r.occupation.as_str()).collect();
        assert_eq!(occs, ["100", "200", "100", "200"]);
        for (a, b) in recs.iter().filter(|r| r.occupation != "30").zip(&out) {
            let mut a = a.clone();
            a.occupation = b.occupation.clone();
            assert_eq!(&a, b, "only the occupation field may change");
        }
    }

    #[test]
    fn unmapped_codes_counted() {
        let cw = Crosswalk::parse("occ1940\tocc1950\n10\t100\n").unwrap();
        let (out, report) = apply_crosswalk(&[rec(0, "10"), rec(1, "99")], "occ1940", &cw).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(report.n_unmapped, 1);
    }

    #[test]
    fn scheme_mismatch_is_fatal() {
        let cw = Crosswalk::parse("occ1940,occ1950\n10,100\n").unwrap();
        assert!(apply_crosswalk(&[rec(0, "10")], "occ1950", &cw).is_err());
    }

    #[test]
    fn duplicate_source_rejected() {
        assert!(Crosswalk::parse("occ1940,occ1950\n10,100\n10,101\n").is_err());
    }

    #[test]
    fn delimited_round_trip() {
        let cw = Crosswalk::parse("occ1940,occ1950\n10,100\n30,AMBIGUOUS\n").unwrap();
        assert_eq!(Crosswalk::parse(&cw.to_delimited()).unwrap(), cw);
    }
}
