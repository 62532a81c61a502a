//! Declarative ingestion schema: delimiter, missing-value sentinels, column
//! mapping and code dictionaries, loaded from a TOML file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::record::{Race, Sex};
use crate::{Error, Result};

const DEFAULT_REGIONS: &str = include_str!("../../data/us_census_regions.tsv");

/// Record fields that a schema may map to input columns.
pub const FIELDS: &[&str] = &[
    "record_id",
    "year",
    "age",
    "sex",
    "race",
    "state",
    "birthplace",
    "nativity",
    "industry",
    "occupation",
    "earnings",
    "in_labor_force",
    "farm_status",
    "family_size",
    "marital_status",
    "n_families_in_household",
    "relation_to_head",
    "weight",
];

/// Fields that must be mapped and present in every input file.
pub const REQUIRED_FIELDS: &[&str] = &["age", "sex", "race", "state", "occupation"];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    /// Field delimiter: `","`, `"\t"` or `"tab"`.
    #[serde(default = "default_delimiter")]
    pub delimiter: String,
    /// Cell values treated as missing.
    #[serde(default = "default_missing")]
    pub missing: Vec<String>,
    /// Coding scheme label of the occupation column.
    #[serde(default = "default_scheme")]
    pub occupation_scheme: String,
    /// Census year used when no `year` column is mapped.
    #[serde(default)]
    pub default_year: Option<i32>,
    /// Editable state to region lookup; the four US census regions when absent.
    #[serde(default)]
    pub region_file: Option<PathBuf>,
    /// Record field name to input column header.
    pub columns: BTreeMap<String, String>,
    #[serde(default)]
    pub codes: CodeDictionaries,
}

fn default_delimiter() -> String {
    ",".into()
}

fn default_missing() -> Vec<String> {
    vec!["".into(), "NA".into(), ".".into()]
}

fn default_scheme() -> String {
    "occ".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeDictionaries {
    /// Canonical sex label to raw codes.
    #[serde(default = "default_sex")]
    pub sex: BTreeMap<Sex, Vec<String>>,
    /// Canonical race label to raw codes.
    #[serde(default = "default_race")]
    pub race: BTreeMap<Race, Vec<String>>,
    /// Raw codes read as true / false for flag fields.
    #[serde(default = "default_flags")]
    pub flags: FlagCodes,
    /// Optional closed code lists for other categorical fields; a code outside
    /// the list makes the row invalid.
    #[serde(default)]
    pub valid: BTreeMap<String, BTreeSet<String>>,
}

impl Default for CodeDictionaries {
    fn default() -> Self {
        CodeDictionaries {
            sex: default_sex(),
            race: default_race(),
            flags: default_flags(),
            valid: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlagCodes {
    #[serde(rename = "true")]
    pub yes: Vec<String>,
    #[serde(rename = "false")]
    pub no: Vec<String>,
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| (*s).to_string()).collect()
}

fn default_sex() -> BTreeMap<Sex, Vec<String>> {
    BTreeMap::from([
        (Sex::Male, strings(&["1", "M", "m", "male", "Male"])),
        (Sex::Female, strings(&["2", "F", "f", "female", "Female"])),
    ])
}

/// IPUMS RACE general codes plus plain labels.
fn default_race() -> BTreeMap<Race, Vec<String>> {
    BTreeMap::from([
        (Race::White, strings(&["1", "white", "White", "W"])),
        (Race::Black, strings(&["2", "black", "Black", "B"])),
        (
            Race::Other,
            strings(&["3", "4", "5", "6", "7", "8", "9", "other", "Other", "O"]),
        ),
    ])
}

fn default_flags() -> FlagCodes {
    FlagCodes {
        yes: strings(&["1", "true", "TRUE", "yes", "y", "Y"]),
        no: strings(&["0", "2", "false", "FALSE", "no", "n", "N"]),
    }
}

/// State code to census region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionLookup {
    map: BTreeMap<String, String>,
}

impl RegionLookup {
    /// The four standard US census regions keyed by FIPS number and postal code.
    pub fn us_census() -> Self {
        Self::parse(DEFAULT_REGIONS).expect("bundled region table is well-formed")
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Two tab- or comma-separated columns `state`, `region` with a header row.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split(['\t', ',']);
            let (Some(state), Some(region)) = (parts.next(), parts.next()) else {
                return Err(Error::Schema(format!(
                    "region table line {}: expected two columns",
                    i + 1
                )));
            };
            let key = normalize_state(state);
            if map.insert(key.clone(), region.trim().to_string()).is_some() {
                return Err(Error::Schema(format!(
                    "region table: state {key:?} listed twice"
                )));
            }
        }
        Ok(RegionLookup { map })
    }

    pub fn region_of(&self, state: &str) -> Option<&str> {
        self.map.get(&normalize_state(state)).map(String::as_str)
    }

    pub fn regions(&self) -> BTreeSet<&str> {
        self.map.values().map(String::as_str).collect()
    }
}

/// Numeric codes lose leading zeros so `"06"` and `"6"` agree.
pub fn normalize_state(code: &str) -> String {
    let code = code.trim();
    if !code.is_empty() && code.bytes().all(|b| b.is_ascii_digit()) {
        let stripped = code.trim_start_matches('0');
        if stripped.is_empty() {
            "0".into()
        } else {
            stripped.into()
        }
    } else {
        code.to_string()
    }
}

impl Schema {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut schema: Schema = toml::from_str(&text)?;
        if let Some(rel) = &schema.region_file {
            if rel.is_relative() {
                if let Some(dir) = path.parent() {
                    schema.region_file = Some(dir.join(rel));
                }
            }
        }
        schema.validate()?;
        Ok(schema)
    }

    /// A schema whose column headers equal the record field names.
    pub fn identity() -> Self {
        Schema {
            delimiter: default_delimiter(),
            missing: default_missing(),
            occupation_scheme: default_scheme(),
            default_year: None,
            region_file: None,
            columns: FIELDS
                .iter()
                .map(|f| ((*f).to_string(), (*f).to_string()))
                .collect(),
            codes: CodeDictionaries::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.delimiter_byte()?;
        for field in self.columns.keys() {
            if !FIELDS.contains(&field.as_str()) {
                return Err(Error::Schema(format!(
                    "unknown record field {field:?} in column map"
                )));
            }
        }
        for field in REQUIRED_FIELDS {
            if !self.columns.contains_key(*field) {
                return Err(Error::Schema(format!(
                    "required field {field:?} is not mapped"
                )));
            }
        }
        if !self.columns.contains_key("year") && self.default_year.is_none() {
            return Err(Error::Schema(
                "map a `year` column or set `default_year`".into(),
            ));
        }
        let mut seen = BTreeMap::new();
        for (race, codes) in &self.codes.race {
            for c in codes {
                if let Some(prev) = seen.insert(c.as_str(), *race) {
                    if prev != *race {
                        return Err(Error::Schema(format!(
                            "race code {c:?} maps to both {prev} and {race}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn delimiter_byte(&self) -> Result<u8> {
        match self.delimiter.as_str() {
            "," => Ok(b','),
            "\t" | "tab" | "\\t" => Ok(b'\t'),
            ";" => Ok(b';'),
            "|" => Ok(b'|'),
            other => Err(Error::Schema(format!("unsupported delimiter {other:?}"))),
        }
    }

    pub fn region_lookup(&self) -> Result<RegionLookup> {
        match &self.region_file {
            Some(path) => RegionLookup::from_path(path),
            None => Ok(RegionLookup::us_census()),
        }
    }

    pub(crate) fn is_missing(&self, cell: &str) -> bool {
        let cell = cell.trim();
        self.missing.iter().any(|m| m.trim() == cell)
    }

    pub(crate) fn sex_of(&self, code: &str) -> Option<Sex> {
        let code = code.trim();
        self.codes
            .sex
            .iter()
            .find(|(_, codes)| codes.iter().any(|c| c == code))
            .map(|(s, _)| *s)
    }

    pub(crate) fn race_of(&self, code: &str) -> Option<Race> {
        let code = code.trim();
        self.codes
            .race
            .iter()
            .find(|(_, codes)| codes.iter().any(|c| c == code))
            .map(|(r, _)| *r)
    }

    pub(crate) fn flag_of(&self, code: &str) -> Option<bool> {
        let code = code.trim();
        if self.codes.flags.yes.iter().any(|c| c == code) {
            Some(true)
        } else if self.codes.flags.no.iter().any(|c| c == code) {
            Some(false)
        } else {
            None
        }
    }

    pub(crate) fn code_is_valid(&self, field: &str, code: &str) -> bool {
        self.codes
            .valid
            .get(field)
            .is_none_or(|set| set.contains(code))
    }
}
