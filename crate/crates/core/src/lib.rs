//! Occupational income scores and the measurement-error bias they induce.
//!
//! The crate builds two kinds of occupational income proxies from census-style
//! microdata:
//!
//! - the classic median-based occupational income score (OCCSCORE), and
//! - the lasso-adjusted industry, demographic and occupation (LIDO) score, a
//!   per-industry cross-validated lasso prediction of log earnings.
//!
//! It also ships the tools for measuring what happens when either score is
//! used in place of earnings: closed-form probability limits for the optimal
//! prediction error (OPE) models together with a Monte Carlo harness,
//! sign-error (Type S) and magnitude-error (Type M) tables, ratio densities,
//! occupational-income persistence statistics, and intergenerational
//! elasticity estimation on linked father/son pairs.
//!
//! # Module map
//!
//! - [`data`] - record schema, delimited-file ingestion, sample filters, crosswalks
//! - [`regression`] - design matrices, QR-based OLS, cluster-robust variance, descriptive statistics
//! - [`lasso`] - coordinate-descent lasso path and k-fold cross-validation
//! - [`scores`] - OCCSCORE and LIDO score tables, record scoring
//! - [`ope`] - the OPE generative model, closed forms and simulation
//! - [`bias`] - earnings-gap regressions, Type S / Type M tables, densities, persistence
//! - [`mobility`] - father/son elasticities and the correlated-error simulator
//! - [`synth`] - synthetic population generators used by the examples and tests
//! - [`cli`] - the `lido` command-line pipeline
//!
//! Runnable walkthroughs for each capability live in the crate's `examples/`
//! directory (`cargo run -p lido --release --example <name>`).

pub mod bias;
pub mod cli;
pub mod data;
pub mod error;
pub mod lasso;
pub mod mobility;
pub mod ope;
pub mod regression;
pub mod rng;
pub mod scores;
pub mod synth;

pub use error::{Error, Result};
