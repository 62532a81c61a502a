//! Ingest a raw 1940-style extract, map its occupation codes onto the
//! analysis scheme and apply the working-age filter.

use std::path::PathBuf;

use lido::data::{apply_crosswalk, filter_sample, load_microdata, Crosswalk, FilterSpec, Schema};

fn main() -> lido::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let schema = Schema::from_path(&fixtures.join("schema_1940.toml"))?;
    let (records, report) = load_microdata(&fixtures.join("raw_1940.tsv"), &schema)?;
    println!(
        "ingest: {} rows, {} parsed, {} rejected {:?}",
        report.n_rows, report.n_parsed, report.n_rejected, report.reasons
    );

    let cw = Crosswalk::from_path(&fixtures.join("crosswalk_1940.tsv"))?;
    let (mapped, cw_report) = apply_crosswalk(&records, &schema.occupation_scheme, &cw)?;
    println!(
        "crosswalk {} -> {}: {} mapped, {} ambiguous, {} unmapped",
        cw.source_scheme,
        cw.target_scheme,
        cw_report.n_mapped,
        cw_report.n_ambiguous,
        cw_report.n_unmapped
    );

    let (kept, excluded) = filter_sample(&mapped, &FilterSpec::working_age())?;
    println!(
        "working-age filter: {} kept, excluded {excluded:?}",
        kept.len()
    );
    if let Some(r) = kept.first() {
        println!(
            "first record: {} age {} {} {} occ {}",
            r.record_id,
            r.age,
            r.sex.as_str(),
            r.state,
            r.occupation
        );
    }
    Ok(())
}
