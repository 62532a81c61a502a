use lido::bias::{run_gap_regression, GapConfig, ScoredSample, EARNINGS};
use lido::data::PersonRecord;
use lido::mobility::{attach_scores, estimate_elasticity, LinkedPair};
use lido::scores::{build_lido, build_occscore, LidoConfig};
use lido::synth::{linked_pairs, PopulationSpec};

fn rescaled(records: &[PersonRecord], k: f64) -> Vec<PersonRecord> {
    records
        .iter()
        .cloned()
        .map(|mut r| {
            r.earnings = r.earnings.map(|e| e * k);
            r
        })
        .collect()
}

fn pairs(seed: u64) -> Vec<LinkedPair> {
    linked_pairs(&PopulationSpec::default(), 800, 0.5, 1930, 1950, seed)
        .unwrap()
        .into_iter()
        .map(|(f, s)| LinkedPair::new(f, s))
        .collect()
}

#[test]
fn elasticity_ignores_currency_units_of_the_base_year() {
    let base = PopulationSpec::default().generate(3000, 1).unwrap();
    let mut p = pairs(2);
    attach_scores(
        &mut p,
        "a",
        &build_occscore(&base, &Default::default()).unwrap(),
    )
    .unwrap();
    attach_scores(
        &mut p,
        "b",
        &build_occscore(&rescaled(&base, 37.0), &Default::default()).unwrap(),
    )
    .unwrap();
    let (a, b) = (
        estimate_elasticity(&p, "a").unwrap(),
        estimate_elasticity(&p, "b").unwrap(),
    );
    let i = a.index_of("log_father_score").unwrap();
    assert!((a.coefficients[i] - b.coefficients[i]).abs() < 1e-9);
}

#[test]
fn both_scores_give_positive_elasticities_on_persistent_families() {
    let base = PopulationSpec::default().generate(4000, 3).unwrap();
    let mut p = pairs(4);
    attach_scores(
        &mut p,
        "occscore",
        &build_occscore(&base, &Default::default()).unwrap(),
    )
    .unwrap();
    attach_scores(
        &mut p,
        "lido",
        &build_lido(&base, &LidoConfig::default()).unwrap(),
    )
    .unwrap();
    for label in ["occscore", "lido"] {
        let fit = estimate_elasticity(&p, label).unwrap();
        let i = fit.index_of("log_father_score").unwrap();
        let (lo, hi) = fit.confint(i, 0.95);
        assert!(lo > 0.0 && hi < 1.0, "{label}: ({lo}, {hi})");
    }
}

#[test]
fn lido_gap_tracks_earnings_gap_closer_than_occscore() {
    let spec = PopulationSpec::default();
    let base = spec.generate(6000, 5).unwrap();
    let mut s = ScoredSample::new(spec.generate(6000, 6).unwrap());
    s.attach(
        "occscore",
        &build_occscore(&base, &Default::default()).unwrap(),
    )
    .unwrap();
    s.attach("lido", &build_lido(&base, &LidoConfig::default()).unwrap())
        .unwrap();
    let female = |dv: &str| {
        run_gap_regression(&s, dv, &GapConfig::default())
            .unwrap()
            .fit
            .coef("sex[female]")
            .unwrap()
    };
    let truth = female(EARNINGS);
    assert!((female("lido") - truth).abs() < (female("occscore") - truth).abs());
    assert!(female("occscore").abs() < truth.abs());
}
