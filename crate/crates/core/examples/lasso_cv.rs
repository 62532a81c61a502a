//! Lasso path with warm starts and k-fold cross-validation on a sparse
//! synthetic regression.

use lido::lasso::{fit_cv, LassoOptions, SelectionRule};
use lido::regression::DesignMatrix;
use lido::rng;
use rand::Rng;
use rand_distr::StandardNormal;

fn main() -> lido::Result<()> {
    let (n, p) = (400, 30);
    let mut r = rng::rng_from_seed(3);
    let cols: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..n).map(|_| r.sample(StandardNormal)).collect())
        .collect();
    let truth = [1.5, -1.0, 0.5];
    let y: Vec<f64> = (0..n)
        .map(|i| {
            2.0 + truth
                .iter()
                .enumerate()
                .map(|(j, b)| b * cols[j][i])
                .sum::<f64>()
                + r.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let names: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let x = DesignMatrix::from_columns(&names, &cols, true)?;

    for rule in [SelectionRule::LambdaMin, SelectionRule::Lambda1se] {
        let (cv, fit) = fit_cv(&x, &y, 10, 42, &LassoOptions::default(), rule)?;
        let i = cv.selected_index(rule);
        println!(
            "{rule:?}: lambda {:.4}, cv mse {:.3}, {} nonzero",
            fit.lambda, cv.mean_mse[i], fit.n_nonzero
        );
        for (t, b) in fit
            .terms
            .iter()
            .zip(&fit.coefficients)
            .filter(|(_, b)| **b != 0.0)
        {
            println!("  {t:>4} {b:+.3}");
        }
    }
    Ok(())
}
