//! Post-estimation diagnostics: the over-identifying restrictions J test,
//! first-stage F statistics, and the Cragg–Donald minimum-eigenvalue
//! statistic (Cragg and Donald, 1993).
//!
//! The J statistic is `n·ḡ'V⁺ḡ` with `ḡ = n⁻¹Z'ê` and `V` the centered
//! sample variance of the moment rows `Z_iê_i` (cluster-summed in the
//! clustered variant). Centering matters here: with more than one LATE the
//! population moment mean is nonzero, and the centered form keeps the
//! statistic a variance-weighted distance. An uncentered form is available
//! behind an option for comparison with other software. `V` may be singular
//! on small fixtures, so a pseudo-inverse with a relative rank cutoff is
//! used and flagged.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::DesignMatrices;
use crate::error::{Error, Result};
use crate::estimator::{EstimateResult, FirstStage};
use crate::linalg;

/// Over-identifying restrictions test result.
#[derive(Debug, Clone)]
pub struct JTest {
    pub statistic: f64,
    /// min(q − p, rank(V)); zero in the just-identified case.
    pub dof: usize,
    /// Chi-square(dof) upper-tail probability; `None` when dof = 0.
    pub p_value: Option<f64>,
    /// True when V needed the pseudo-inverse rank cutoff.
    pub rank_deficient: bool,
    pub v_rank: usize,
    pub clustered: bool,
    pub centered: bool,
}

/// Options for [`j_test_with`]. The default is the centered, unclustered form.
#[derive(Debug, Clone, Copy)]
pub struct JTestOptions {
    pub clustered: bool,
    pub centered: bool,
}

impl Default for JTestOptions {
    fn default() -> Self {
        JTestOptions {
            clustered: false,
            centered: true,
        }
    }
}

/// Centered J test; `clustered` switches the moment-variance to cluster sums.
pub fn j_test(est: &EstimateResult, design: &DesignMatrices, clustered: bool) -> Result<JTest> {
    j_test_with(
        est,
        design,
        JTestOptions {
            clustered,
            centered: true,
        },
    )
}

pub fn j_test_with(
    est: &EstimateResult,
    design: &DesignMatrices,
    options: JTestOptions,
) -> Result<JTest> {
    let n = design.n();
    let nf = n as f64;
    let kz = design.z.ncols();
    let p = design.n_endogenous;
    let q = design.n_excluded;

    if q == p {
        return Ok(JTest {
            statistic: 0.0,
            dof: 0,
            p_value: None,
            rank_deficient: false,
            v_rank: 0,
            clustered: options.clustered,
            centered: options.centered,
        });
    }

    let gbar = &est.moments.moment_mean;
    let mut ge = design.z.clone();
    for (i, mut row) in ge.row_iter_mut().enumerate() {
        row *= est.residuals[i];
    }
    if options.centered {
        let ones = DVector::<f64>::repeat(n, 1.0);
        ge -= &ones * gbar.transpose();
    }

    let v = if options.clustered {
        let ids = design
            .cluster_ids
            .as_ref()
            .ok_or_else(|| Error::Spec("cluster id required for the clustered J test".into()))?;
        let groups = ids.iter().copied().max().map_or(0, |m| m + 1);
        let mut sums = DMatrix::<f64>::zeros(groups, kz);
        for (i, &g) in ids.iter().enumerate() {
            for j in 0..kz {
                sums[(g, j)] += ge[(i, j)];
            }
        }
        sums.transpose() * &sums / nf
    } else {
        ge.transpose() * &ge / nf
    };

    let (vpinv, v_rank) = linalg::sym_pseudo_inverse(&v, linalg::RANK_TOL);
    let statistic = (nf * gbar.transpose() * &vpinv * gbar)[(0, 0)].max(0.0);
    let dof = (q - p).min(v_rank);
    let rank_deficient = v_rank < kz;
    let p_value = if dof == 0 {
        None
    } else {
        let chi = ChiSquared::new(dof as f64)
            .map_err(|e| Error::Numerical(format!("chi-square({dof}): {e}")))?;
        Some((1.0 - chi.cdf(statistic)).clamp(0.0, 1.0))
    };
    Ok(JTest {
        statistic,
        dof,
        p_value,
        rank_deficient,
        v_rank,
        clustered: options.clustered,
        centered: options.centered,
    })
}

/// First-stage F flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FFlavor {
    Classical,
    /// Heteroskedasticity-robust Wald form on the excluded-instrument block.
    Robust,
}

/// First-stage F statistic for each endogenous column.
///
/// Classical: `((SSR_r − SSR_u)/q) / (SSR_u/(n−l−q))` against the
/// covariates-only restricted regression. Robust: `π̂'V̂_ππ⁻¹π̂ / q` with the
/// sandwich covariance of the excluded-instrument coefficients.
pub fn first_stage_f(
    fs: &FirstStage,
    design: &DesignMatrices,
    flavor: FFlavor,
) -> Result<Vec<f64>> {
    let n = design.n();
    let nf = n as f64;
    let l = design.n_covariates;
    let q = design.n_excluded;
    let p = design.n_endogenous;
    if n <= l + q {
        return Err(Error::Spec("too few observations for the first-stage F".into()));
    }

    let mut out = Vec::with_capacity(p);
    for j in 0..p {
        let d = design.x.column(l + j).into_owned();
        let u = fs.residuals.column(j).into_owned();
        let ssr_u: f64 = u.dot(&u);
        let d_scale: f64 = d.dot(&d).max(1.0);
        if ssr_u <= 1e-12 * d_scale {
            return Err(Error::DegenerateInference(format!(
                "degenerate first stage for endogenous column {j}: perfect fit"
            )));
        }
        let stat = match flavor {
            FFlavor::Classical => {
                let ssr_r = if l == 0 {
                    d.dot(&d)
                } else {
                    let w = design.z.columns(0, l).into_owned();
                    let coef = linalg::solve_least_squares(&w, &d)?;
                    let resid = &d - w * coef;
                    resid.dot(&resid)
                };
                ((ssr_r - ssr_u) / q as f64) / (ssr_u / (nf - l as f64 - q as f64))
            }
            FFlavor::Robust => {
                // sandwich covariance of the full first-stage coefficient
                // vector, then the Wald form on the excluded block
                let zz = design.z.transpose() * &design.z;
                let mut zu = design.z.clone();
                for (i, mut row) in zu.row_iter_mut().enumerate() {
                    row *= u[i];
                }
                let meat = zu.transpose() * &zu;
                let binv_meat = linalg::solve_spd_mat(&zz, &meat)?;
                let vcov = linalg::solve_spd_mat(&zz, &binv_meat.transpose())?;
                let vpp = vcov.view((l, l), (q, q)).into_owned();
                let pi = fs.coefficients.column(j).rows(l, q).into_owned();
                let sol = linalg::solve_spd(&vpp, &pi).map_err(|_| {
                    Error::Numerical("singular robust covariance in first-stage F".into())
                })?;
                pi.dot(&sol) / q as f64
            }
        };
        out.push(stat);
    }
    Ok(out)
}

/// Cragg–Donald minimum-eigenvalue statistic for p ≥ 1 endogenous
/// regressors: the smallest eigenvalue of
/// `Σ̂_DD^{-1/2} D̃'P_Z̃ D̃ Σ̂_DD^{-1/2} / q` after partialling the covariates
/// out of both the endogenous block and the excluded instruments, with
/// `Σ̂_DD = D̃'M_Z̃ D̃ / (n−l−q)`. For p = 1 this reduces to the classical
/// first-stage F.
pub fn cragg_donald(design: &DesignMatrices) -> Result<f64> {
    let n = design.n();
    let l = design.n_covariates;
    let q = design.n_excluded;
    let p = design.n_endogenous;
    if n <= l + q {
        return Err(Error::Spec("too few observations for Cragg-Donald".into()));
    }

    let d = design.x.columns(l, p).into_owned();
    let zex = design.z.columns(l, q).into_owned();
    let (d_t, z_t) = if l == 0 {
        (d, zex)
    } else {
        let w = design.z.columns(0, l).into_owned();
        let (qw, _) = linalg::thin_qr(&w);
        let d_t = &d - &qw * (qw.transpose() * &d);
        let z_t = &zex - &qw * (qw.transpose() * &zex);
        (d_t, z_t)
    };

    let (qz, _) = linalg::thin_qr(&z_t);
    let proj = qz.transpose() * &d_t; // (q×p)
    let mid = proj.transpose() * &proj; // D̃'P_Z̃ D̃
    let mut sdd = (d_t.transpose() * &d_t - &mid) / (n - l - q) as f64;
    linalg::symmetrize(&mut sdd);
    let s_isqrt = linalg::inv_sqrt_spd(&sdd)
        .map_err(|_| Error::Numerical("singular residual covariance in Cragg-Donald".into()))?;
    let mut mat = &s_isqrt * mid * &s_isqrt / q as f64;
    linalg::symmetrize(&mut mat);
    Ok(linalg::min_eigenvalue_sym(&mat))
}

/// Bundle of diagnostics for reporting. Statistics that are undefined on
/// the given data (for example a perfect first-stage fit) are left out and
/// explained in `flags`.
#[derive(Debug, Clone)]
pub struct DiagnosticsReport {
    pub j: JTest,
    pub f_classical: Option<Vec<f64>>,
    pub f_robust: Option<Vec<f64>>,
    pub cragg_donald: Option<f64>,
    pub flags: Vec<String>,
}

/// Compute the full diagnostics bundle, degrading gracefully on degenerate
/// statistics.
pub fn report(
    est: &EstimateResult,
    design: &DesignMatrices,
    clustered: bool,
) -> Result<DiagnosticsReport> {
    let j = j_test(est, design, clustered)?;
    let mut flags = Vec::new();
    if j.rank_deficient {
        flags.push("moment-variance matrix rank-deficient; J uses a pseudo-inverse".into());
    }
    let f_classical = match first_stage_f(&est.first_stage, design, FFlavor::Classical) {
        Ok(v) => Some(v),
        Err(e) => {
            flags.push(format!("classical first-stage F unavailable: {e}"));
            None
        }
    };
    let f_robust = match first_stage_f(&est.first_stage, design, FFlavor::Robust) {
        Ok(v) => Some(v),
        Err(e) => {
            flags.push(format!("robust first-stage F unavailable: {e}"));
            None
        }
    };
    let cd = match cragg_donald(design) {
        Ok(v) => Some(v),
        Err(e) => {
            flags.push(format!("Cragg-Donald unavailable: {e}"));
            None
        }
    };
    Ok(DiagnosticsReport {
        j,
        f_classical,
        f_robust,
        cragg_donald: cd,
        flags,
    })
}
