//! Father-son elasticities on linked records under two occupational scores.

use std::path::PathBuf;

use lido::data::Schema;
use lido::mobility::{
    attach_scores, complete_cases, elasticity_grid, grid_table, load_linked_pairs, LinkRules,
};
use lido::scores::ScoreTable;

fn main() -> lido::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let (mut pairs, report) = load_linked_pairs(
        &fixtures.join("linked_pairs.csv"),
        &Schema::identity(),
        &LinkRules::default(),
    )?;
    println!(
        "{} linked pairs kept, {} rejected {:?}",
        pairs.len(),
        report.n_rejected,
        report.reasons
    );

    let labels = vec!["occscore".to_string(), "lido".to_string()];
    for label in &labels {
        let table = ScoreTable::read(&fixtures.join("tables").join(format!("{label}.json")))?;
        println!(
            "{label}: {} pairs scored",
            attach_scores(&mut pairs, label, &table)?
        );
    }
    println!(
        "{} pairs complete under both scores\n",
        complete_cases(&pairs).len()
    );
    print!("{}", grid_table(&elasticity_grid(&pairs, &labels, None)));
    println!();
    print!(
        "{}",
        grid_table(&elasticity_grid(&pairs, &labels, Some("race")))
    );
    Ok(())
}
