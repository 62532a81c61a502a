//! Build a median-earnings occupational score from a synthetic base year and
//! score a later sample with it.

use lido::scores::{build_occscore, score_records, OccscoreConfig, Weighting};
use lido::synth::PopulationSpec;

fn main() -> lido::Result<()> {
    let spec = PopulationSpec::default();
    let base = spec.generate(5000, 1)?;
    for weighting in [Weighting::Pooled, Weighting::SexWeighted] {
        let table = build_occscore(
            &base,
            &OccscoreConfig {
                weighting,
                ..OccscoreConfig::default()
            },
        )?;
        let (lo, hi) = table
            .occ_medians
            .values()
            .fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
        println!(
            "{weighting:?}: {} occupations, medians {lo:.0} to {hi:.0}",
            table.occ_medians.len()
        );
    }

    let table = build_occscore(&base, &OccscoreConfig::default())?;
    print!(
        "{}",
        table
            .occscore_table()
            .lines()
            .take(6)
            .collect::<Vec<_>>()
            .join("\n")
    );
    println!("\n...");

    let later = spec.generate(2000, 2)?;
    let scored = score_records(&table, &later)?;
    let c = &scored.coverage;
    println!(
        "scored {} of {} records, null reasons {:?}",
        c.n_scored, c.n_input, c.null_reasons
    );
    Ok(())
}
