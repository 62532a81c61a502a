use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::record::{PersonRecord, Race};
use crate::{Error, Result};

/// Sample restriction predicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub age_min: u32,
    pub age_max: u32,
    #[serde(default)]
    pub require_positive_earnings: bool,
    #[serde(default)]
    pub require_labor_force: bool,
    #[serde(default)]
    pub exclude_races: BTreeSet<Race>,
}

impl FilterSpec {
    /// Ages 20-70 with positive earnings (score construction sample).
    pub fn working_age() -> Self {
        FilterSpec {
            age_min: 20,
            age_max: 70,
            require_positive_earnings: true,
            require_labor_force: false,
            exclude_races: BTreeSet::new(),
        }
    }

    /// Ages 25-65 in the labor force (earnings-gap sample).
    pub fn prime_age_labor_force() -> Self {
        FilterSpec {
            age_min: 25,
            age_max: 65,
            require_positive_earnings: false,
            require_labor_force: true,
            exclude_races: BTreeSet::new(),
        }
    }
}

/// Records removed per predicate. A record failing several predicates is
/// charged to the first one in field order, so the counts sum to the number
/// of exclusions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionCounts {
    pub age: usize,
    pub earnings: usize,
    pub labor_force: usize,
    pub race: usize,
}

impl ExclusionCounts {
    pub fn total(&self) -> usize {
        self.age + self.earnings + self.labor_force + self.race
    }
}

enum Failure {
    Age,
    Earnings,
    LaborForce,
    Race,
}

fn first_failure(r: &PersonRecord, spec: &FilterSpec) -> Option<Failure> {
    if r.age < spec.age_min || r.age > spec.age_max {
        return Some(Failure::Age);
    }
    if spec.require_positive_earnings && !r.earnings.is_some_and(|e| e > 0.0) {
        return Some(Failure::Earnings);
    }
    if spec.require_labor_force && !r.in_labor_force {
        return Some(Failure::LaborForce);
    }
    if spec.exclude_races.contains(&r.race) {
        return Some(Failure::Race);
    }
    None
}

pub fn filter_sample(
    records: &[PersonRecord],
    spec: &FilterSpec,
) -> Result<(Vec<PersonRecord>, ExclusionCounts)> {
    if spec.age_min > spec.age_max {
        return Err(Error::Config(format!(
            "filter age_min {} exceeds age_max {}",
            spec.age_min, spec.age_max
        )));
    }
    let mut counts = ExclusionCounts::default();
    let mut kept = Vec::with_capacity(records.len());
    for r in records {
        match first_failure(r, spec) {
            None => kept.push(r.clone()),
            Some(Failure::Age) => counts.age += 1,
            Some(Failure::Earnings) => counts.earnings += 1,
            Some(Failure::LaborForce) => counts.labor_force += 1,
            Some(Failure::Race) => counts.race += 1,
        }
    }
    Ok((kept, counts))
}
