//! Misspecification-robust nonparametric bootstrap for percentile-t tests
//! and confidence intervals.
//!
//! Each replicate resamples n rows (or whole clusters) with replacement,
//! refits the estimator, recomputes the multiple-LATEs-robust variance on
//! the resample, and forms the studentized statistic
//!
//! `T* = (β̂*_m − β̂_m) / sqrt(Σ̂*_m / n)`
//!
//! where `Σ̂*` is the multiple-LATEs-robust variance of the resample (its
//! cluster analogue under cluster resampling). Studentizing by the robust
//! variance is what makes the bootstrap distribution valid when the
//! over-identified moment condition fails, so the conventional variance is
//! never used here.
//!
//! Replicates whose resample violates the rank conditions are discarded and
//! redrawn from a fresh substream, keeping the effective number of
//! replicates at B while counting the failures. Replicate b's randomness
//! derives only from `(seed, b, attempt)`, so results are identical under
//! any execution order or thread count.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::data::DesignMatrices;
use crate::error::{Error, Result};
use crate::estimator::fit_2sls;
use crate::exec;
use crate::variance::{sigma_cmr, sigma_mr};

/// Highest share of redrawn resamples tolerated before a warning is
/// attached to the result.
const FAILURE_WARN_SHARE: f64 = 0.05;
/// Replicate counts below this leave the tail quantiles too coarse for
/// the reported significance levels.
const RECOMMENDED_MIN_REPLICATES: usize = 99;
/// Attempt budget per replicate; exceeding it means most resamples are
/// degenerate and the run aborts.
const MAX_ATTEMPTS_PER_REPLICATE: usize = 64;

/// Critical values at one significance level.
#[derive(Debug, Clone, Copy)]
pub struct CriticalValues {
    /// Two-sided significance level α.
    pub level: f64,
    /// Quantile of |T*| at 1 − α.
    pub symmetric: f64,
    /// α/2 quantile of T*.
    pub lower: f64,
    /// 1 − α/2 quantile of T*.
    pub upper: f64,
}

/// Bootstrap-t draws and derived critical values for one coefficient.
#[derive(Debug, Clone)]
pub struct BootstrapResult {
    /// Index of the coefficient in β̂ the statistics refer to.
    pub coefficient: usize,
    /// T* draws in replicate order (length B).
    pub t_stats: Vec<f64>,
    /// Critical values at levels 0.10, 0.05, 0.01.
    pub critical_values: Vec<CriticalValues>,
    /// Count of degenerate resamples that were redrawn.
    pub failures: usize,
    /// Set when failures/B exceeded the warning share.
    pub high_failure_warning: bool,
    /// Set when B is below the recommended minimum of 99.
    pub low_replicate_warning: bool,
    pub clustered: bool,
}

/// Resample n rows iid with replacement.
fn resample_rows(design: &DesignMatrices, rng: &mut impl Rng) -> Result<DesignMatrices> {
    let n = design.n();
    let indices: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let mut y = DVector::zeros(n);
    let mut x = DMatrix::zeros(n, design.x.ncols());
    let mut z = DMatrix::zeros(n, design.z.ncols());
    for (dst, &src) in indices.iter().enumerate() {
        y[dst] = design.y[src];
        x.row_mut(dst).copy_from(&design.x.row(src));
        z.row_mut(dst).copy_from(&design.z.row(src));
    }
    DesignMatrices::from_parts(
        y,
        x,
        z,
        design.x_names.clone(),
        design.z_names.clone(),
        design.n_covariates,
        design.n_endogenous,
        None,
    )
}

/// Resample whole clusters, returning the design with fresh cluster labels.
fn resample_clusters(design: &DesignMatrices, rng: &mut impl Rng) -> Result<DesignMatrices> {
    let ids = design
        .cluster_ids
        .as_ref()
        .ok_or_else(|| Error::Spec("cluster id required for the clustered bootstrap".into()))?;
    let groups = ids.iter().copied().max().map_or(0, |m| m + 1);
    if groups < 2 {
        return Err(Error::Spec("clustered bootstrap needs at least two clusters".into()));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); groups];
    for (i, &g) in ids.iter().enumerate() {
        members[g].push(i);
    }
    let mut indices = Vec::with_capacity(design.n());
    let mut labels = Vec::with_capacity(design.n());
    for draw in 0..groups {
        let g = rng.random_range(0..groups);
        for &i in &members[g] {
            indices.push(i);
            labels.push(draw);
        }
    }
    let m = indices.len();
    let mut y = DVector::zeros(m);
    let mut x = DMatrix::zeros(m, design.x.ncols());
    let mut z = DMatrix::zeros(m, design.z.ncols());
    for (dst, &src) in indices.iter().enumerate() {
        y[dst] = design.y[src];
        x.row_mut(dst).copy_from(&design.x.row(src));
        z.row_mut(dst).copy_from(&design.z.row(src));
    }
    DesignMatrices::from_parts(
        y,
        x,
        z,
        design.x_names.clone(),
        design.z_names.clone(),
        design.n_covariates,
        design.n_endogenous,
        Some(labels),
    )
}

fn replicate_t(
    design: &DesignMatrices,
    coefficient: usize,
    seed: u64,
    rep: u64,
    clustered: bool,
    base_beta: f64,
) -> std::result::Result<(f64, usize), Error> {
    let mut failures = 0usize;
    for attempt in 0..MAX_ATTEMPTS_PER_REPLICATE {
        let mut rng = exec::substream(seed, &[rep, attempt as u64]);
        let resampled = if clustered {
            resample_clusters(design, &mut rng)
        } else {
            resample_rows(design, &mut rng)
        };
        let resampled = match resampled {
            Ok(d) => d,
            Err(Error::RankDeficient(_)) => {
                failures += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let fit = match fit_2sls(&resampled) {
            Ok(f) => f,
            Err(Error::RankDeficient(_)) | Err(Error::Numerical(_)) => {
                failures += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let var = if clustered {
            sigma_cmr(&fit, &resampled, true)
        } else {
            sigma_mr(&fit, &resampled)
        };
        let var = match var {
            Ok(v) => v,
            Err(Error::RankDeficient(_)) | Err(Error::Numerical(_)) => {
                failures += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let se = var.se[coefficient];
        if !se.is_finite() || se <= 0.0 {
            failures += 1;
            continue;
        }
        let t = (fit.beta[coefficient] - base_beta) / se;
        if !t.is_finite() {
            failures += 1;
            continue;
        }
        return Ok((t, failures));
    }
    Err(Error::Numerical(format!(
        "more than {MAX_ATTEMPTS_PER_REPLICATE} degenerate resamples in a row; aborting bootstrap"
    )))
}

/// Empirical quantile with linear interpolation on the sorted sample.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n == 1 {
        return sorted[0];
    }
    let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let w = h - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Run the bootstrap-t for one coefficient.
///
/// `coefficient` indexes β̂ (covariates first, endogenous block last).
/// Fewer than 99 replicates is allowed but leaves the critical values very
/// coarse. The base fit must itself be non-degenerate: a zero base standard
/// error means the studentized statistic does not exist.
pub fn bootstrap_t(
    design: &DesignMatrices,
    coefficient: usize,
    replicates: usize,
    seed: u64,
    clustered: bool,
) -> Result<BootstrapResult> {
    if replicates == 0 {
        return Err(Error::Config("bootstrap needs at least one replicate".into()));
    }
    let base = fit_2sls(design)?;
    if coefficient >= base.beta.len() {
        return Err(Error::Config(format!(
            "coefficient index {coefficient} out of range for {} coefficients",
            base.beta.len()
        )));
    }
    let base_var = if clustered {
        sigma_cmr(&base, design, true)?
    } else {
        sigma_mr(&base, design)?
    };
    let base_se = base_var.se[coefficient];
    if base_se <= 1e-12 * (1.0 + base.beta[coefficient].abs()) {
        return Err(Error::DegenerateInference(
            "base fit has zero standard error; the studentized bootstrap is undefined".into(),
        ));
    }
    let base_beta = base.beta[coefficient];

    let outcomes = exec::map_indexed(replicates, |b| {
        replicate_t(design, coefficient, seed, b as u64, clustered, base_beta)
    });

    let mut t_stats = Vec::with_capacity(replicates);
    let mut failures = 0usize;
    for o in outcomes {
        let (t, f) = o?;
        t_stats.push(t);
        failures += f;
    }
    if failures > replicates {
        return Err(Error::Numerical(format!(
            "bootstrap failure rate over 50% ({failures} redraws for {replicates} replicates)"
        )));
    }

    let mut sorted = t_stats.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("t stats are finite"));
    let mut abs_sorted: Vec<f64> = t_stats.iter().map(|t| t.abs()).collect();
    abs_sorted.sort_by(|a, b| a.partial_cmp(b).expect("t stats are finite"));

    let critical_values = [0.10, 0.05, 0.01]
        .into_iter()
        .map(|level| CriticalValues {
            level,
            symmetric: quantile(&abs_sorted, 1.0 - level),
            lower: quantile(&sorted, level / 2.0),
            upper: quantile(&sorted, 1.0 - level / 2.0),
        })
        .collect();

    Ok(BootstrapResult {
        coefficient,
        t_stats,
        critical_values,
        failures,
        high_failure_warning: (failures as f64) > FAILURE_WARN_SHARE * replicates as f64,
        low_replicate_warning: replicates < RECOMMENDED_MIN_REPLICATES,
        clustered,
    })
}

/// Percentile-t interval at two-sided significance level α.
#[derive(Debug, Clone, Copy)]
pub struct PercentileTInterval {
    /// Significance level α; the interval has nominal coverage 1 − α.
    pub level: f64,
    /// `[β̂ − q*_{1−α/2} se, β̂ − q*_{α/2} se]`.
    pub equal_tailed: (f64, f64),
    /// `β̂ ∓ q*_{|T*|,1−α} se`.
    pub symmetric: (f64, f64),
}

/// Build percentile-t confidence intervals from bootstrap draws, the point
/// estimate, and its standard error.
pub fn percentile_t_ci(
    result: &BootstrapResult,
    estimate: f64,
    se: f64,
    level: f64,
) -> Result<PercentileTInterval> {
    if !(0.0..1.0).contains(&level) || level <= 0.0 {
        return Err(Error::Config(format!(
            "significance level must lie in (0, 1), got {level}"
        )));
    }
    if result.t_stats.is_empty() {
        return Err(Error::Config("empty bootstrap result".into()));
    }
    let mut sorted = result.t_stats.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("t stats are finite"));
    let mut abs_sorted: Vec<f64> = result.t_stats.iter().map(|t| t.abs()).collect();
    abs_sorted.sort_by(|a, b| a.partial_cmp(b).expect("t stats are finite"));

    let q_lo = quantile(&sorted, level / 2.0);
    let q_hi = quantile(&sorted, 1.0 - level / 2.0);
    let q_sym = quantile(&abs_sorted, 1.0 - level);
    Ok(PercentileTInterval {
        level,
        equal_tailed: (estimate - q_hi * se, estimate - q_lo * se),
        symmetric: (estimate - q_sym * se, estimate + q_sym * se),
    })
}
