//! Fit per-industry cross-validated lasso score models and compare them with
//! the occupation median on how much earnings variation each explains.

use lido::regression::stats::pearson;
use lido::scores::{build_lido, build_occscore, score_records, LidoConfig};
use lido::synth::PopulationSpec;

fn main() -> lido::Result<()> {
    let spec = PopulationSpec::default();
    let base = spec.generate(6000, 10)?;
    let lido = build_lido(&base, &LidoConfig::default())?;
    print!("{}", lido.lido_manifest());

    let occ = build_occscore(&base, &Default::default())?;
    let analysis = spec.generate(3000, 11)?;
    let truth: Vec<f64> = analysis
        .iter()
        .map(|r| r.log_earnings().expect("synthetic earnings"))
        .collect();
    for (name, table) in [("occscore", &occ), ("lido", &lido)] {
        let s = score_records(table, &analysis)?;
        let (x, y): (Vec<f64>, Vec<f64>) = s
            .scores
            .iter()
            .zip(&truth)
            .filter_map(|(v, t)| v.map(|v| (table.to_log(v), *t)))
            .unzip();
        println!(
            "{name}: r^2 with log earnings {:.3} over {} records",
            pearson(&x, &y)?.powi(2),
            x.len()
        );
    }
    Ok(())
}
