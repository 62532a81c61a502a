//! Kernel density of proxy-to-true coefficient ratios.

use lido::bias::{coefficient_ratios, ratio_density, run_comparison, ComparisonSpec, ScoredSample};
use lido::scores::build_occscore;
use lido::synth::PopulationSpec;

fn main() -> lido::Result<()> {
    let spec = PopulationSpec::default();
    let base = spec.generate(8000, 30)?;
    let mut sample = ScoredSample::new(spec.generate(8000, 31)?);
    sample.attach("occscore", &build_occscore(&base, &Default::default())?)?;
    let run = run_comparison(
        &sample,
        &ComparisonSpec::default(),
        &["occscore".to_string()],
    )?;

    let ratios: Vec<f64> = coefficient_ratios(&run, "occscore")?
        .into_iter()
        .map(|(_, _, r)| r)
        .collect();
    let d = ratio_density(&ratios, None)?;
    let (x, h) = d.mode();
    println!(
        "{} ratios, bandwidth {:.3}, mode {x:.3} (height {h:.3}), integral {:.4}",
        d.n, d.bandwidth, d.integral
    );
    for w in &d.warnings {
        println!("warning: {w}");
    }
    let step = (d.points.len() / 20).max(1);
    for (x, y) in d.points.iter().step_by(step) {
        println!("{x:>8.3} {:<60}", "#".repeat((y / h * 60.0) as usize));
    }
    Ok(())
}
