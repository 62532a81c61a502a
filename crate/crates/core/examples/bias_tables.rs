//! Earnings-gap regressions, sign-error rates and coefficient ratios for two
//! occupational proxies on a synthetic population.

use lido::bias::{
    gap_table, ratio_table, ratio_wide, run_comparison, run_gap_regressions, type_s_table,
    type_s_wide, ComparisonSpec, GapConfig, ScoredSample, TypeSDefinition, EARNINGS,
};
use lido::scores::{build_lido, build_occscore, LidoConfig};
use lido::synth::PopulationSpec;

fn main() -> lido::Result<()> {
    let spec = PopulationSpec::default();
    let base = spec.generate(8000, 20)?;
    let mut sample = ScoredSample::new(spec.generate(8000, 21)?);
    sample.attach("occscore", &build_occscore(&base, &Default::default())?)?;
    sample.attach("lido", &build_lido(&base, &LidoConfig::default())?)?;
    let proxies = vec!["occscore".to_string(), "lido".to_string()];

    let dvs: Vec<String> = std::iter::once(EARNINGS.to_string())
        .chain(proxies.iter().cloned())
        .collect();
    let gaps = run_gap_regressions(&sample, &dvs, &GapConfig::default())?;
    let table = gap_table(&gaps);
    for line in table
        .lines()
        .filter(|l| l.starts_with("dv") || l.contains("sex[") || l.contains("race[black]"))
    {
        println!("{line}");
    }

    let run = run_comparison(&sample, &ComparisonSpec::default(), &proxies)?;
    println!("\nconflicting-sign rates");
    print!(
        "{}",
        type_s_wide(&type_s_table(&run, 0.05, TypeSDefinition::ProxySignificant))
    );
    println!("\nmean proxy / true coefficient ratios");
    print!("{}", ratio_wide(&ratio_table(&run)));
    Ok(())
}
