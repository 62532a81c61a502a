//! Regenerate the shipped fixtures under `fixtures/` (or a directory given as
//! the first argument). Every file is a deterministic function of the seeds
//! below.

use std::fs;
use std::path::PathBuf;

use lido::data::{write_microdata, PersonRecord};
use lido::mobility::{write_linked_pairs, LinkedPair};
use lido::scores::{build_lido, build_occscore, LidoConfig, OccscoreConfig};
use lido::synth::{linked_pairs, PopulationSpec};

const BASE_SEED: u64 = 1950;
const ANALYSIS_SEED: u64 = 2950;
const LATER_SEED: u64 = 3950;
const PAIRS_SEED: u64 = 4950;
const RAW_SEED: u64 = 5950;

fn raw_1940(records: &[PersonRecord]) -> String {
    let mut out = String::from(
        "SERIAL\tYEAR\tAGE\tSEX\tRACE\tSTATEFIP\tBPL\tIND\tOCC1940\tINCWAGE\tMARST\tRELATE\n",
    );
    for (i, r) in records.iter().enumerate() {
        let sex = if r.sex == lido::data::Sex::Male {
            "1"
        } else {
            "2"
        };
        let race = match r.race {
            lido::data::Race::White => "1",
            lido::data::Race::Black => "2",
            lido::data::Race::Other => "7",
        };
        let occ: usize = r.occupation[1..].parse().expect("synthetic code");
        // every 97th row carries a code the crosswalk cannot resolve
        let occ = if i % 97 == 0 { 131 } else { 100 + occ };
        let earn = r
            .earnings
            .map_or_else(|| "NA".to_string(), |e| format!("{:.0}", e));
        out.push_str(&format!(
            "{}\t{}\t{}\t{sex}\t{race}\t{}\t{}\t{}\t{occ}\t{earn}\t{}\t{}\n",
            r.record_id,
            r.year,
            r.age,
            r.state,
            r.birthplace,
            r.industry.as_deref().unwrap_or("NA"),
            r.marital_status,
            r.relation_to_head
        ));
    }
    out
}

fn crosswalk(n_occ: usize) -> String {
    let mut out = String::from("occ1940\tocc\n");
    for k in 1..=n_occ {
        out.push_str(&format!(
            "{}\t{}\n",
            100 + k,
            PopulationSpec::occupation_code(k - 1)
        ));
    }
    out.push_str("131\tAMBIGUOUS\n");
    out
}

fn main() -> lido::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures"));
    fs::create_dir_all(dir.join("tables")).map_err(|e| lido::Error::Config(e.to_string()))?;
    let spec = PopulationSpec::default();

    let base = spec.generate(5000, BASE_SEED)?;
    write_microdata(&dir.join("base_1950.csv"), &base)?;
    write_microdata(
        &dir.join("analysis_1950.csv"),
        &spec.generate(3000, ANALYSIS_SEED)?,
    )?;

    let mut later = Vec::new();
    for (k, year) in [1960, 1970].into_iter().enumerate() {
        let s = PopulationSpec {
            year,
            base_log_earnings: spec.base_log_earnings + 0.3 * (k + 1) as f64,
            sigma_eta: spec.sigma_eta * (1.0 + 0.5 * (k + 1) as f64),
            ..spec.clone()
        };
        later.extend(s.generate(2000, LATER_SEED + k as u64)?);
    }
    write_microdata(&dir.join("later_years.csv"), &later)?;

    let pairs: Vec<LinkedPair> = linked_pairs(&spec, 1500, 0.5, 1930, 1950, PAIRS_SEED)?
        .into_iter()
        .map(|(f, s)| LinkedPair::new(f, s))
        .collect();
    write_linked_pairs(&dir.join("linked_pairs.csv"), &pairs)?;

    let raw = PopulationSpec {
        year: 1940,
        ..spec.clone()
    }
    .generate(1000, RAW_SEED)?;
    let write = |name: &str, body: String| {
        fs::write(dir.join(name), body).map_err(|e| lido::Error::Config(e.to_string()))
    };
    write("raw_1940.tsv", raw_1940(&raw))?;
    write("crosswalk_1940.tsv", crosswalk(spec.n_occupations))?;

    let occ = build_occscore(&base, &OccscoreConfig::default())?;
    write("tables/occscore.json", occ.to_json()? + "\n")?;
    let lido_t = build_lido(&base, &LidoConfig::default())?;
    write("tables/lido.json", lido_t.to_json()? + "\n")?;
    println!("fixtures written to {}", dir.display());
    Ok(())
}
