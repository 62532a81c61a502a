//! Microdata records, ingestion, sample filters and occupation crosswalks.

mod crosswalk;
mod filter;
mod ingest;
mod record;
mod schema;

pub use crosswalk::{apply_crosswalk, Crosswalk, CrosswalkReport, Target, AMBIGUOUS};
pub use filter::{filter_sample, ExclusionCounts, FilterSpec};
pub use ingest::{load_microdata, IngestReport};
pub use record::{PersonRecord, Race, Sex};
pub use schema::{
    normalize_state, CodeDictionaries, FlagCodes, RegionLookup, Schema, FIELDS, REQUIRED_FIELDS,
};

#[allow(unused_imports)]
pub(crate) use ingest::{parse_rows, reader_for, ColumnIndex, RowParser};

use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

/// Write records as a comma-delimited file readable with [`Schema::identity`].
pub fn write_microdata(path: &Path, records: &[PersonRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_microdata_to(&mut w, records).map_err(|e| Error::io(path, e))
}

pub fn write_microdata_to<W: Write>(w: &mut W, records: &[PersonRecord]) -> std::io::Result<()> {
    writeln!(w, "{}", FIELDS.join(","))?;
    for r in records {
        writeln!(w, "{}", record_cells(r).join(","))?;
    }
    Ok(())
}

/// Cells of one record in [`FIELDS`] order.
pub(crate) fn record_cells(r: &PersonRecord) -> Vec<String> {
    let flag = |b: bool| if b { "1" } else { "0" }.to_string();
    vec![
        r.record_id.clone(),
        r.year.to_string(),
        r.age.to_string(),
        r.sex.as_str().to_string(),
        r.race.as_str().to_string(),
        r.state.clone(),
        r.birthplace.clone(),
        flag(r.nativity),
        r.industry.clone().unwrap_or_default(),
        r.occupation.clone(),
        r.earnings.map(|e| format!("{e}")).unwrap_or_default(),
        flag(r.in_labor_force),
        flag(r.farm_status),
        r.family_size.to_string(),
        r.marital_status.clone(),
        r.n_families_in_household.to_string(),
        r.relation_to_head.clone(),
        format!("{}", r.weight),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn written_records_reload_identically() {
        let mut a = PersonRecord::new(
            "p1",
            1950,
            33,
            Sex::Female,
            Race::Black,
            "19",
            "Midwest",
            "201",
        )
        .with_earnings(1234.5)
        .with_industry("105");
        a.family_size = 4;
        a.farm_status = true;
        let b = PersonRecord::new("p2", 1950, 61, Sex::Male, Race::Other, "CA", "West", "300");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_microdata(&path, &[a.clone(), b.clone()]).unwrap();
        let (recs, report) = load_microdata(&path, &Schema::identity()).unwrap();
        assert_eq!(report.n_rejected, 0);
        assert_eq!(recs, vec![a, b]);
    }
}
