//! Closed-form probability limits of the three prediction-error proxies
//! against Monte Carlo slopes, then a sweep over the demographic signal noise.

use std::collections::BTreeMap;

use lido::ope::{
    estimate_proxy_beta, plim_ope1, plim_ope2, plim_ope3, run_sweep, simulate, sweep_table,
    OpeParams, Proxy, SweepConfig,
};

fn main() -> lido::Result<()> {
    let p = OpeParams {
        lambda1: 1.0,
        sigma_psi: 1.0,
        ..OpeParams::default()
    };
    println!("true beta {}", p.beta());
    let s = simulate(&p, 200_000, 50, 1)?;
    for (proxy, plim) in [
        (Proxy::Ope1, plim_ope1(&p)),
        (Proxy::Ope2, plim_ope2(&p)),
        (Proxy::Ope3, plim_ope3(&p)),
    ] {
        println!(
            "{proxy:?}: plim {plim:.4}, simulated {:.4}",
            estimate_proxy_beta(&s, proxy)?
        );
    }

    let cfg = SweepConfig {
        n: 50_000,
        replications: 1,
        seed: 7,
        sweep: BTreeMap::from([("sigma_psi".to_string(), vec![2.0, 1.0, 0.5, 0.1])]),
        ..SweepConfig::default()
    };
    print!("{}", sweep_table(&run_sweep(&p, &cfg)?));
    Ok(())
}
