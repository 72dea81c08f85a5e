//! Instrumental-variable estimation with variance estimators that stay
//! valid when different instruments identify different treatment effects.
//!
//! With more instruments than endogenous regressors, the postulated 2SLS
//! moment condition can fail at the estimand even though every instrument
//! is valid: each instrument identifies its own local average treatment
//! effect, and the 2SLS estimand is a weighted average of them. The usual
//! heteroskedasticity-robust variance assumes the moment condition holds
//! and is then inconsistent. This crate provides the corrected,
//! multiple-LATEs-robust variance alongside the conventional one, plus:
//!
//! - cluster-robust and bootstrap (percentile-t) companions,
//! - a logit propensity-score IV with a two-step stacked-moment variance,
//! - over-identification and first-stage diagnostics,
//! - a compliance-type simulator with analytic population estimands for
//!   validating all of the above.
//!
//! Replicate-level work (bootstrap, Monte Carlo) runs in parallel under the
//! `parallel` feature (enabled by default) with bit-identical results for
//! any thread count; disabling the feature falls back to sequential loops.

pub mod bootstrap;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimator;
mod exec;
pub(crate) mod linalg;
pub mod psiv;
pub mod simulator;
pub mod variance;

pub use bootstrap::{bootstrap_t, percentile_t_ci, BootstrapResult, PercentileTInterval};
pub use data::{build_design, load_csv, CsvOptions, Dataset, DesignMatrices, LoadSummary, ModelSpec};
pub use diagnostics::{cragg_donald, first_stage_f, j_test, DiagnosticsReport, FFlavor, JTest};
pub use error::{Error, Result};
pub use estimator::{fit_2sls, fit_first_stage, fit_gmm_weighted, EstimateResult, WeightSpec};
pub use psiv::{fit_logit, psiv_estimate, psiv_variance, LogitFit};
pub use simulator::{
    draw_sample, population_estimand, run_monte_carlo, DgpConfig, MonteCarloOptions,
    MonteCarloReport, PopulationOracle,
};
pub use variance::{
    influence, sigma_c, sigma_cmr, sigma_mr, standard_errors, InfluenceSet, VarianceFlavor,
    VarianceResult,
};
