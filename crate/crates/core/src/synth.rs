//! Synthetic census-style populations with a known earnings structure.
//!
//! Each person has an occupational standing
//!
//! ```text
//! standing = base + industry + sum(delta effects) + eta
//! ```
//!
//! and occupations are fixed bins of `standing`. Log earnings add the
//! within-occupation component:
//!
//! ```text
//! log earnings = standing + sum(gamma effects) + nu
//! ```
//!
//! Demographic effects therefore split into a part that moves people across
//! occupations (`delta`) and a part that moves earnings within them
//! (`gamma`). State, age and household effects are built with opposite
//! signs on the two channels, so occupation-only scores can flip their sign.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{PersonRecord, Race, Sex};
use crate::regression::stats;
use crate::{rng, Error, Result};

/// Occupation-channel and within-occupation components of one effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub delta: f64,
    pub gamma: f64,
}

impl Effect {
    pub const fn new(delta: f64, gamma: f64) -> Self {
        Effect { delta, gamma }
    }

    pub fn total(self) -> f64 {
        self.delta + self.gamma
    }
}

const ZERO: Effect = Effect::new(0.0, 0.0);

/// Sixteen states (FIPS codes), four per census region.
pub const STATES: [(&str, &str); 16] = [
    ("9", "Northeast"),
    ("25", "Northeast"),
    ("36", "Northeast"),
    ("42", "Northeast"),
    ("17", "Midwest"),
    ("19", "Midwest"),
    ("26", "Midwest"),
    ("39", "Midwest"),
    ("1", "South"),
    ("13", "South"),
    ("37", "South"),
    ("48", "South"),
    ("6", "West"),
    ("8", "West"),
    ("41", "West"),
    ("53", "West"),
];

/// Within-occupation state effects, before scaling.
const STATE_PATTERN: [f64; 16] = [
    0.9, -0.3, 0.5, 0.1, -0.6, 0.3, -1.0, 0.7, -0.8, 0.2, -0.4, 1.0, 0.6, -0.1, 0.4, -0.5,
];

const BIRTHPLACES: [(&str, f64, Effect); 6] = [
    ("us", 0.80, ZERO),
    ("ie", 0.04, Effect::new(0.03, -0.05)),
    ("de", 0.04, Effect::new(0.02, 0.04)),
    ("it", 0.04, Effect::new(-0.06, -0.12)),
    ("uk", 0.04, Effect::new(-0.04, 0.06)),
    ("mx", 0.04, Effect::new(-0.05, -0.15)),
];

const MARITAL: [(&str, f64, Effect); 3] = [
    ("married", 0.6, Effect::new(0.04, 0.10)),
    ("single", 0.3, ZERO),
    ("widowed", 0.1, Effect::new(0.05, -0.08)),
];

const RELATION: [(&str, f64, Effect); 4] = [
    ("head", 0.5, Effect::new(-0.05, 0.12)),
    ("spouse", 0.2, Effect::new(-0.02, -0.05)),
    ("child", 0.2, Effect::new(0.06, -0.15)),
    ("other", 0.1, ZERO),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationSpec {
    pub year: i32,
    pub n_occupations: usize,
    pub base_log_earnings: f64,
    pub sigma_eta: f64,
    pub sigma_nu: f64,
    pub female: Effect,
    pub black: Effect,
    pub other_race: Effect,
    pub share_black: f64,
    pub share_other: f64,
    /// Scale of the within-occupation state effects.
    pub state_gamma_scale: f64,
    /// Occupation-channel state effect as a multiple of the within part.
    pub state_delta_ratio: f64,
    /// Peak within-occupation age effect (at age 45, relative to the ends).
    pub age_gamma_scale: f64,
    pub age_delta_ratio: f64,
    /// Industry codes with their occupation-channel premium.
    pub industries: Vec<(String, f64)>,
    pub age_min: u32,
    pub age_max: u32,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        PopulationSpec {
            year: 1950,
            n_occupations: 30,
            base_log_earnings: 8.0,
            sigma_eta: 0.5,
            sigma_nu: 0.4,
            female: Effect::new(-0.2, -0.3),
            black: Effect::new(-0.15, -0.15),
            other_race: Effect::new(-0.05, -0.05),
            share_black: 0.12,
            share_other: 0.08,
            state_gamma_scale: 0.3,
            state_delta_ratio: -0.4,
            age_gamma_scale: 0.6,
            age_delta_ratio: -0.4,
            industries: vec![("mfg".into(), 0.1), ("svc".into(), 0.0)],
            age_min: 20,
            age_max: 70,
        }
    }
}

/// One generated person with its latent components.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPerson {
    pub record: PersonRecord,
    pub standing: f64,
    pub log_earnings: f64,
    pub eta: f64,
    pub nu: f64,
}

fn pick<'a, T>(r: &mut impl Rng, table: &'a [(&'a str, f64, T)]) -> (&'a str, &'a T) {
    let u: f64 = r.random();
    let mut acc = 0.0;
    for (code, p, v) in table {
        acc += p;
        if u < acc {
            return (code, v);
        }
    }
    let last = table.last().expect("non-empty table");
    (last.0, &last.2)
}

/// Fixed seed for the calibration draw that sets occupation cutpoints.
const CALIBRATION_SEED: u64 = 0x0cc5_c0de;
const CALIBRATION_N: usize = 100_000;

struct Draw {
    record: PersonRecord,
    delta_sum: f64,
    gamma_sum: f64,
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_occupations < 2 {
            return Err(Error::Config("n_occupations must be at least 2".into()));
        }
        if self.industries.is_empty() {
            return Err(Error::Config("at least one industry is required".into()));
        }
        if !(self.sigma_eta >= 0.0 && self.sigma_nu >= 0.0) {
            return Err(Error::Config("noise scales must be non-negative".into()));
        }
        if self.age_min > self.age_max {
            return Err(Error::Config("age_min exceeds age_max".into()));
        }
        if !(self.share_black >= 0.0
            && self.share_other >= 0.0
            && self.share_black + self.share_other <= 1.0)
        {
            return Err(Error::Config(
                "race shares must be non-negative and sum to at most 1".into(),
            ));
        }
        Ok(())
    }

    /// Effect of living in state `i` of [`STATES`].
    pub fn state_effect(&self, i: usize) -> Effect {
        let g = self.state_gamma_scale * STATE_PATTERN[i];
        Effect::new(self.state_delta_ratio * g, g)
    }

    /// Age profile: an inverted parabola peaking at 45, zero at 20 and 70.
    pub fn age_effect(&self, age: u32) -> Effect {
        let h = 1.0 - ((f64::from(age) - 45.0) / 25.0).powi(2);
        let g = self.age_gamma_scale * h;
        Effect::new(self.age_delta_ratio * g, g)
    }

    fn family_size_effect(fs: u32) -> Effect {
        let d = f64::from(fs) - 3.0;
        Effect::new(-0.01 * d, 0.03 * d)
    }

    fn draw_demographics(&self, r: &mut impl Rng, id: usize) -> Draw {
        self.draw_demographics_fixed(r, id, None)
    }

    /// As `draw_demographics`, optionally forcing sex and race.
    fn draw_demographics_fixed(
        &self,
        r: &mut impl Rng,
        id: usize,
        fixed: Option<(Sex, Option<Race>)>,
    ) -> Draw {
        let si = r.random_range(0..STATES.len());
        let (state, region) = STATES[si];
        let age = r.random_range(self.age_min..=self.age_max);
        let mut sex = if r.random_bool(0.5) {
            Sex::Female
        } else {
            Sex::Male
        };
        let u: f64 = r.random();
        let mut race = if u < self.share_black {
            Race::Black
        } else if u < self.share_black + self.share_other {
            Race::Other
        } else {
            Race::White
        };
        if let Some((s, rc)) = fixed {
            sex = s;
            race = rc.unwrap_or(race);
        }
        let (ind, ind_premium) = {
            let i = r.random_range(0..self.industries.len());
            (&self.industries[i].0, self.industries[i].1)
        };
        let (birthplace, bp) = pick(r, &BIRTHPLACES);
        let (marital, me) = pick(r, &MARITAL);
        let (relation, re) = pick(r, &RELATION);
        let family_size = r.random_range(1..=7u32);
        let n_families = if r.random_bool(0.15) { 2u32 } else { 1 };

        let mut effects = vec![
            self.state_effect(si),
            self.age_effect(age),
            *bp,
            *me,
            *re,
            Self::family_size_effect(family_size),
        ];
        if sex == Sex::Female {
            effects.push(self.female);
        }
        match race {
            Race::Black => effects.push(self.black),
            Race::Other => effects.push(self.other_race),
            Race::White => {}
        }
        if n_families == 2 {
            effects.push(Effect::new(-0.03, -0.05));
        }
        let delta_sum = ind_premium + effects.iter().map(|e| e.delta).sum::<f64>();
        let gamma_sum = effects.iter().map(|e| e.gamma).sum::<f64>();

        let mut record = PersonRecord::new(
            format!("p{id}"),
            self.year,
            age,
            sex,
            race,
            state,
            region,
            "",
        );
        record.industry = Some(ind.clone());
        record.birthplace = birthplace.to_string();
        record.nativity = birthplace == "us";
        record.marital_status = marital.to_string();
        record.relation_to_head = relation.to_string();
        record.family_size = family_size;
        record.n_families_in_household = n_families;
        Draw {
            record,
            delta_sum,
            gamma_sum,
        }
    }

    /// Occupation cutpoints: interior quantiles of standing in a fixed
    /// calibration draw, so every sample from the same spec shares them.
    pub fn occupation_cutpoints(&self) -> Vec<f64> {
        let mut r = rng::rng_from_seed(CALIBRATION_SEED);
        let eta = Normal::new(0.0, self.sigma_eta.max(0.0)).expect("valid sd");
        let mut s: Vec<f64> = (0..CALIBRATION_N)
            .map(|i| {
                let d = self.draw_demographics(&mut r, i);
                self.base_log_earnings + d.delta_sum + eta.sample(&mut r)
            })
            .collect();
        s.sort_by(f64::total_cmp);
        (1..self.n_occupations)
            .map(|j| stats::quantile(&s, j as f64 / self.n_occupations as f64))
            .collect()
    }

    pub fn occupation_code(bin: usize) -> String {
        format!("o{:02}", bin + 1)
    }

    /// Generate `n` people from `seed`, with their latent components.
    pub fn generate_people(&self, n: usize, seed: u64) -> Result<Vec<SynthPerson>> {
        self.validate()?;
        let cuts = self.occupation_cutpoints();
        let mut r = rng::rng_from_seed(seed);
        let eta_d = Normal::new(0.0, self.sigma_eta).expect("validated");
        let nu_d = Normal::new(0.0, self.sigma_nu).expect("validated");
        Ok((0..n)
            .map(|i| {
                let d = self.draw_demographics(&mut r, i);
                let eta = eta_d.sample(&mut r);
                let nu = nu_d.sample(&mut r);
                let standing = self.base_log_earnings + d.delta_sum + eta;
                let log_earnings = standing + d.gamma_sum + nu;
                let bin = cuts.partition_point(|c| *c <= standing);
                let mut record = d.record;
                record.occupation = Self::occupation_code(bin);
                record.earnings = Some(log_earnings.exp());
                SynthPerson {
                    record,
                    standing,
                    log_earnings,
                    eta,
                    nu,
                }
            })
            .collect())
    }

    /// Generate `n` records from `seed`.
    pub fn generate(&self, n: usize, seed: u64) -> Result<Vec<PersonRecord>> {
        Ok(self
            .generate_people(n, seed)?
            .into_iter()
            .map(|p| p.record)
            .collect())
    }
}

/// Linked father-son records: fathers observed in `first_year` aged 28-55
/// as household heads, sons observed in `second_year` aged at most 15 in the
/// first year. The son's occupational and within-occupation luck regress on
/// the father's with slope `persistence`.
pub fn linked_pairs(
    spec: &PopulationSpec,
    n: usize,
    persistence: f64,
    first_year: i32,
    second_year: i32,
    seed: u64,
) -> Result<Vec<(PersonRecord, PersonRecord)>> {
    spec.validate()?;
    if second_year <= first_year {
        return Err(Error::Config("second year must follow the first".into()));
    }
    if !(0.0..=1.0).contains(&persistence) {
        return Err(Error::Config("persistence must lie in [0, 1]".into()));
    }
    let gap = (second_year - first_year) as u32;
    let father_spec = PopulationSpec {
        year: first_year,
        age_min: 28,
        age_max: 55,
        ..spec.clone()
    };
    let son_spec = PopulationSpec {
        year: second_year,
        age_min: gap.max(spec.age_min),
        age_max: (gap + 15).max(gap.max(spec.age_min)),
        ..spec.clone()
    };
    let cuts = spec.occupation_cutpoints();
    let mut r = rng::rng_from_seed(seed);
    let eta_d = Normal::new(0.0, spec.sigma_eta).expect("validated");
    let nu_d = Normal::new(0.0, spec.sigma_nu).expect("validated");
    let fresh = (1.0 - persistence * persistence).sqrt();
    let person = |s: &PopulationSpec,
                  id: String,
                  race: Option<Race>,
                  eta: f64,
                  nu: f64,
                  r: &mut rand_chacha::ChaCha8Rng| {
        let d = s.draw_demographics_fixed(r, 0, Some((Sex::Male, race)));
        let standing = s.base_log_earnings + d.delta_sum + eta;
        let mut rec = d.record;
        rec.record_id = id;
        rec.occupation = PopulationSpec::occupation_code(cuts.partition_point(|c| *c <= standing));
        rec.earnings = Some((standing + d.gamma_sum + nu).exp());
        rec
    };
    Ok((0..n)
        .map(|i| {
            let (fe, fnu) = (eta_d.sample(&mut r), nu_d.sample(&mut r));
            let mut father = person(&father_spec, format!("f{i}"), None, fe, fnu, &mut r);
            father.relation_to_head = "head".into();
            let se = persistence * fe + fresh * eta_d.sample(&mut r);
            let snu = persistence * fnu + fresh * nu_d.sample(&mut r);
            let mut son = person(
                &son_spec,
                format!("s{i}"),
                Some(father.race),
                se,
                snu,
                &mut r,
            );
            son.relation_to_head = "child".into();
            (father, son)
        })
        .collect())
}
