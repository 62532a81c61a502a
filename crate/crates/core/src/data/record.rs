use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::regression::Observation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
        }
    }
}

/// Three-level race coding used by the score models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Race {
    White,
    Black,
    Other,
}

impl Race {
    pub fn as_str(self) -> &'static str {
        match self {
            Race::White => "white",
            Race::Black => "black",
            Race::Other => "other",
        }
    }
}

impl FromStr for Race {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "white" => Ok(Race::White),
            "black" => Ok(Race::Black),
            "other" => Ok(Race::Other),
            other => Err(format!("unknown race label {other:?}")),
        }
    }
}

impl fmt::Display for Race {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One microdata row.
///
/// `earnings` and `industry` are genuinely nullable: a missing value is kept
/// as `None` and never coerced to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonRecord {
    pub record_id: String,
    pub year: i32,
    pub age: u32,
    pub sex: Sex,
    pub race: Race,
    pub state: String,
    pub region: String,
    pub birthplace: String,
    /// Domestic-born.
    pub nativity: bool,
    pub industry: Option<String>,
    pub occupation: String,
    pub earnings: Option<f64>,
    pub in_labor_force: bool,
    pub farm_status: bool,
    pub family_size: u32,
    pub marital_status: String,
    pub n_families_in_household: u32,
    pub relation_to_head: String,
    pub weight: f64,
}

impl PersonRecord {
    /// Log earnings when earnings are present and strictly positive.
    pub fn log_earnings(&self) -> Option<f64> {
        self.earnings.filter(|e| *e > 0.0).map(f64::ln)
    }

    /// A record with neutral defaults for every optional attribute.
    pub fn new(
        record_id: impl Into<String>,
        year: i32,
        age: u32,
        sex: Sex,
        race: Race,
        state: impl Into<String>,
        region: impl Into<String>,
        occupation: impl Into<String>,
    ) -> Self {
        PersonRecord {
            record_id: record_id.into(),
            year,
            age,
            sex,
            race,
            state: state.into(),
            region: region.into(),
            birthplace: "unknown".into(),
            nativity: true,
            industry: None,
            occupation: occupation.into(),
            earnings: None,
            in_labor_force: true,
            farm_status: false,
            family_size: 1,
            marital_status: "unknown".into(),
            n_families_in_household: 1,
            relation_to_head: "unknown".into(),
            weight: 1.0,
        }
    }

    pub fn with_earnings(mut self, earnings: f64) -> Self {
        self.earnings = Some(earnings);
        self
    }

    pub fn with_industry(mut self, industry: impl Into<String>) -> Self {
        self.industry = Some(industry.into());
        self
    }
}

fn flag(b: bool) -> Cow<'static, str> {
    Cow::Borrowed(if b { "1" } else { "0" })
}

/// Variables exposed to the design builder.
///
/// Continuous: `age`, `age_c` (= (age - 45) / 10), `year`, `family_size`,
/// `n_families`, `earnings`, `log_earnings`, `weight`.
///
/// Categorical: `sex`, `race`, `state`, `region`, `birthplace`, `nativity`,
/// `industry`, `occupation`, `farm`, `in_labor_force`, `marital_status`,
/// `relation_to_head`, `age_group` (five-year bands such as `"40-44"`), plus
/// `age`, `year`, `family_size` and `n_families` rendered as codes. Flags render as `"1"` / `"0"`.
impl Observation for PersonRecord {
    fn continuous(&self, var: &str) -> Option<f64> {
        match var {
            "age" => Some(f64::from(self.age)),
            "age_c" => Some((f64::from(self.age) - 45.0) / 10.0),
            "year" => Some(f64::from(self.year)),
            "family_size" => Some(f64::from(self.family_size)),
            "n_families" => Some(f64::from(self.n_families_in_household)),
            "earnings" => self.earnings,
            "log_earnings" => self.log_earnings(),
            "weight" => Some(self.weight),
            _ => None,
        }
    }

    fn categorical(&self, var: &str) -> Option<Cow<'_, str>> {
        Some(match var {
            "sex" => Cow::Borrowed(self.sex.as_str()),
            "race" => Cow::Borrowed(self.race.as_str()),
            "state" => Cow::Borrowed(self.state.as_str()),
            "region" => Cow::Borrowed(self.region.as_str()),
            "birthplace" => Cow::Borrowed(self.birthplace.as_str()),
            "nativity" => flag(self.nativity),
            "industry" => Cow::Borrowed(self.industry.as_deref()?),
            "occupation" => Cow::Borrowed(self.occupation.as_str()),
            "farm" => flag(self.farm_status),
            "in_labor_force" => flag(self.in_labor_force),
            "marital_status" => Cow::Borrowed(self.marital_status.as_str()),
            "relation_to_head" => Cow::Borrowed(self.relation_to_head.as_str()),
            "age" => Cow::Owned(self.age.to_string()),
            "age_group" => Cow::Owned(format!("{}-{}", self.age / 5 * 5, self.age / 5 * 5 + 4)),
            "year" => Cow::Owned(self.year.to_string()),
            "family_size" => Cow::Owned(self.family_size.to_string()),
            "n_families" => Cow::Owned(self.n_families_in_household.to_string()),
            _ => return None,
        })
    }
}
