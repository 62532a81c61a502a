//! How well base-year occupation medians track later years.

use std::collections::BTreeMap;
use std::path::PathBuf;

use lido::bias::persistence_stats;
use lido::data::{load_microdata, Schema};
use lido::scores::build_occscore;

fn main() -> lido::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let schema = Schema::identity();
    let (base, _) = load_microdata(&fixtures.join("base_1950.csv"), &schema)?;
    let (later, _) = load_microdata(&fixtures.join("later_years.csv"), &schema)?;
    let table = build_occscore(&base, &Default::default())?;

    let mut by_year: BTreeMap<i32, Vec<_>> = BTreeMap::new();
    by_year.insert(1950, base);
    for r in later {
        by_year.entry(r.year).or_default().push(r);
    }
    let report = persistence_stats(&table, &by_year)?;
    print!("{}", report.to_table());
    for w in &report.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
