//! Correlated father-son measurement error: simulated elasticities against
//! the analytic limit as error transmission varies.

use std::collections::BTreeMap;

use lido::mobility::{
    mobility_sweep_table, run_mobility_sweep, MobilityErrorParams, MobilitySweepConfig,
};

fn main() -> lido::Result<()> {
    let base = MobilityErrorParams::default();
    println!("beta1 {}, plim at defaults {:.4}", base.beta1, base.plim());
    let cfg = MobilitySweepConfig {
        n: 50_000,
        replications: 2,
        seed: 5,
        sweep: BTreeMap::from([("tilde_beta1".to_string(), vec![0.0, 0.25, 0.5, 0.75, 1.0])]),
    };
    print!(
        "{}",
        mobility_sweep_table(&run_mobility_sweep(&base, &cfg)?)
    );
    Ok(())
}
