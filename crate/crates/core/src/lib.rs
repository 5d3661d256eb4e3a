//! K-sample test for equality of group-mean PMFs of multinomial count data.
//!
//! The crate covers the count data model ([`counts`]), the de-biased test
//! statistic and its variance estimators ([`estimators`]), population-level
//! signal and regularity metrics ([`population`]), seeded simulation designs
//! ([`simgen`]), an exact enumeration oracle ([`oracle`]) and a Monte-Carlo
//! harness ([`harness`]).

// `!(x >= 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod counts;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod io;
pub mod moments;
pub mod oracle;
pub mod population;
pub mod simgen;
pub mod stats;

pub use counts::{group_summaries, CountMatrix, GroupPartition, GroupSummaries};
pub use error::{DelveError, Result};
pub use estimators::{
    anova_t, delve_kn, delve_t, delve_test, delve_test_weighted, delve_v, exact_vtilde, lr_t,
    psi_plus, two_sample, vplus, weighted_t, TestResult, Variant,
};
pub use population::{
    alpha_beta, dimension_ratio, omega_n, omega_sq, rho_squared, snr, theta_components,
    ThetaComponents, TrueParams,
};
pub use simgen::{Design, Hypothesis, SimConfig, SimDraw};
pub use stats::normal_sf;
