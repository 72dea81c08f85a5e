//! Asymptotic variance estimators for 2SLS / linear GMM.
//!
//! Three flavors are provided, all on the scale of the asymptotic variance
//! of `√n(β̂ − β₀)`:
//!
//! - `sigma_c`: the conventional heteroskedasticity-robust sandwich, valid
//!   when the over-identified moment condition holds at the estimand.
//! - `sigma_mr`: the multiple-LATEs-robust estimator built from the full
//!   influence function, which keeps the correction terms driven by the
//!   nonzero sample moment `m = n⁻¹Z'ê`. When the model is just-identified
//!   `m = 0` and the two coincide.
//! - `sigma_cmr`: the cluster analogue of `sigma_mr`, summing influence
//!   rows within clusters before taking outer products, with an optional
//!   finite-sample residual scaling `√c`, `c = G/(G−1)·(n−1)/(n−k)`
//!   (Cameron and Miller, 2015).
//!
//! Standard errors are `sqrt(diag(Σ)/n)`, computed at the edge so the
//! matrices themselves stay on the asymptotic scale.
//!
//! The influence rows are
//!
//! `ψ̂_i = A(Z_iê_i − m) + (X_iZ_i' − n⁻¹X'Z)v + A(n⁻¹Z'Z − Z_iZ_i')v`
//!
//! with `A = (n⁻¹X'Z)(n⁻¹Z'Z)⁻¹` and `v = (n⁻¹Z'Z)⁻¹m`. For a fixed custom
//! weight matrix the third term is dropped: a deterministic weight carries
//! no sampling noise, so only the sample-moment weight contributes it.

use nalgebra::{DMatrix, DVector};

use crate::data::DesignMatrices;
use crate::error::{Error, Result};
use crate::estimator::EstimateResult;
use crate::linalg;

/// Which variance estimator produced a [`VarianceResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceFlavor {
    /// Conventional heteroskedasticity-robust.
    Conventional,
    /// Multiple-LATEs-robust.
    MultipleLatesRobust,
    /// Cluster-and-multiple-LATEs-robust.
    ClusterMultipleLatesRobust,
    /// Two-step stacked-moment variance for the propensity-score IV.
    TwoStepPsiv,
}

impl VarianceFlavor {
    pub fn label(&self) -> &'static str {
        match self {
            VarianceFlavor::Conventional => "C",
            VarianceFlavor::MultipleLatesRobust => "MR",
            VarianceFlavor::ClusterMultipleLatesRobust => "CMR",
            VarianceFlavor::TwoStepPsiv => "PSIV",
        }
    }
}

/// Cluster accounting attached to [`VarianceResult`] when clustering is used.
#[derive(Debug, Clone, Copy)]
pub struct ClusterInfo {
    pub groups: usize,
    /// The finite-sample factor `c` applied through `√c ê`, when enabled.
    pub correction: Option<f64>,
}

/// An asymptotic variance matrix with its standard errors.
#[derive(Debug, Clone)]
pub struct VarianceResult {
    pub flavor: VarianceFlavor,
    /// (l+p)×(l+p), variance of √n(β̂ − β₀).
    pub sigma: DMatrix<f64>,
    /// sqrt(diag(sigma)/n).
    pub se: DVector<f64>,
    pub cluster: Option<ClusterInfo>,
}

/// Influence rows and the cached moment components they were built from.
#[derive(Debug, Clone)]
pub struct InfluenceSet {
    /// n×(l+p), row i holds ψ̂_i'.
    pub psi: DMatrix<f64>,
    /// m = n⁻¹Z'ê.
    pub moment_mean: DVector<f64>,
    /// v = W⁻¹ m for the weight W in use.
    pub weighted_moment: DVector<f64>,
}

/// Compute the influence rows for an estimate.
pub fn influence(est: &EstimateResult, design: &DesignMatrices) -> Result<InfluenceSet> {
    influence_with_residuals(est, design, &est.residuals)
}

fn influence_with_residuals(
    est: &EstimateResult,
    design: &DesignMatrices,
    residuals: &DVector<f64>,
) -> Result<InfluenceSet> {
    let n = design.n();
    if residuals.len() != n || est.beta.len() != design.x.ncols() {
        return Err(Error::Spec("estimate does not match design dimensions".into()));
    }
    let nf = n as f64;
    let weight = &est.moments.weight;
    let xz = &est.moments.xz;

    let m = design.z.transpose() * residuals / nf;
    let a = linalg::solve_spd_mat(weight, &xz.transpose())
        .map_err(|_| Error::Numerical("weight matrix singular in influence computation".into()))?
        .transpose();
    let v = linalg::solve_spd(weight, &m)
        .map_err(|_| Error::Numerical("weight matrix singular in influence computation".into()))?;

    // Row-wise assembly through whole-matrix products:
    //   term1_i = A (Z_i ê_i − m)
    //   term2_i = X_i (Z_i'v) − (n⁻¹X'Z) v
    //   term3_i = A (n⁻¹Z'Z) v − (A Z_i)(Z_i'v)   [sample-moment weight only]
    let ge = {
        let mut ge = design.z.clone();
        for (i, mut row) in ge.row_iter_mut().enumerate() {
            row *= residuals[i];
        }
        ge
    };
    let ones = DVector::<f64>::repeat(n, 1.0);
    let mut psi = (&ge - &ones * m.transpose()) * a.transpose();

    let zv = &design.z * &v; // n-vector of Z_i'v
    let xzv = xz * &v;
    let mut term2 = design.x.clone();
    for (i, mut row) in term2.row_iter_mut().enumerate() {
        row *= zv[i];
    }
    psi += term2 - &ones * xzv.transpose();

    if est.moments.weight_is_sample_moment {
        let azzv = &a * (&est.moments.zz * &v);
        let za = &design.z * a.transpose(); // n×(l+p), row i = (A Z_i)'
        let mut term3 = za;
        for (i, mut row) in term3.row_iter_mut().enumerate() {
            row *= -zv[i];
        }
        psi += term3 + &ones * azzv.transpose();
    }

    Ok(InfluenceSet {
        psi,
        moment_mean: m,
        weighted_moment: v,
    })
}

fn sandwich(h: &DMatrix<f64>, meat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = nalgebra::Cholesky::new(h.clone())
        .ok_or_else(|| Error::Numerical("H numerically singular".into()))?;
    let hinv_meat = chol.solve(meat);
    let mut sigma = chol.solve(&hinv_meat.transpose());
    linalg::symmetrize(&mut sigma);
    Ok(sigma)
}

/// Multiple-LATEs-robust variance: `Ĥ⁻¹ (n⁻¹ Σ ψ̂ψ̂') Ĥ⁻¹`.
pub fn sigma_mr(est: &EstimateResult, design: &DesignMatrices) -> Result<VarianceResult> {
    let infl = influence(est, design)?;
    let nf = design.n() as f64;
    let omega = infl.psi.transpose() * &infl.psi / nf;
    let sigma = sandwich(&est.moments.h, &omega)?;
    let se = standard_errors(&sigma, design.n())?;
    Ok(VarianceResult {
        flavor: VarianceFlavor::MultipleLatesRobust,
        sigma,
        se,
        cluster: None,
    })
}

/// Conventional heteroskedasticity-robust variance:
/// `Ĥ⁻¹ A (n⁻¹ Σ Z_iZ_i'ê_i²) A' Ĥ⁻¹` with `A = (n⁻¹X'Z) W⁻¹`.
pub fn sigma_c(est: &EstimateResult, design: &DesignMatrices) -> Result<VarianceResult> {
    let n = design.n();
    let nf = n as f64;
    let weight = &est.moments.weight;
    let a = linalg::solve_spd_mat(weight, &est.moments.xz.transpose())
        .map_err(|_| Error::Numerical("weight matrix singular".into()))?
        .transpose();
    let mut ze = design.z.clone();
    for (i, mut row) in ze.row_iter_mut().enumerate() {
        row *= est.residuals[i];
    }
    let ga = &ze * a.transpose(); // n×(l+p), rows (A Z_i ê_i)'
    let meat = ga.transpose() * &ga / nf;
    let sigma = sandwich(&est.moments.h, &meat)?;
    let se = standard_errors(&sigma, n)?;
    Ok(VarianceResult {
        flavor: VarianceFlavor::Conventional,
        sigma,
        se,
        cluster: None,
    })
}

/// Cluster-and-multiple-LATEs-robust variance. Requires cluster ids with at
/// least two groups. With `correction` enabled the residuals are scaled by
/// `√c`, `c = G/(G−1)·(n−1)/(n−k)`, before the influence rows are formed;
/// only the second-stage residuals ê are scaled.
pub fn sigma_cmr(
    est: &EstimateResult,
    design: &DesignMatrices,
    correction: bool,
) -> Result<VarianceResult> {
    let ids = design
        .cluster_ids
        .as_ref()
        .ok_or_else(|| Error::Spec("cluster id required for the cluster-robust variance".into()))?;
    let n = design.n();
    if ids.len() != n {
        return Err(Error::Spec("cluster id length mismatch".into()));
    }
    let groups = ids.iter().copied().max().map_or(0, |m| m + 1);
    if groups < 2 {
        return Err(Error::Spec(
            "cluster-robust variance needs at least two clusters".into(),
        ));
    }

    let k = est.beta.len();
    let c = if correction {
        Some((groups as f64 / (groups as f64 - 1.0)) * ((n as f64 - 1.0) / (n as f64 - k as f64)))
    } else {
        None
    };
    let infl = match c {
        Some(c) => {
            let scaled = est.residuals.clone() * c.sqrt();
            influence_with_residuals(est, design, &scaled)?
        }
        None => influence(est, design)?,
    };

    // sum influence rows within clusters, then take outer products
    let mut sums = DMatrix::<f64>::zeros(groups, k);
    for (i, &g) in ids.iter().enumerate() {
        for j in 0..k {
            sums[(g, j)] += infl.psi[(i, j)];
        }
    }
    let omega = sums.transpose() * &sums / n as f64;
    let sigma = sandwich(&est.moments.h, &omega)?;
    let se = standard_errors(&sigma, n)?;
    Ok(VarianceResult {
        flavor: VarianceFlavor::ClusterMultipleLatesRobust,
        sigma,
        se,
        cluster: Some(ClusterInfo {
            groups,
            correction: c,
        }),
    })
}

/// Standard errors `sqrt(diag(sigma)/n)`.
///
/// A diagonal entry that is negative beyond floating-point dust (relative to
/// the matrix scale) signals a conditioning bug upstream and is reported as
/// an error rather than clipped; entries within the dust band of zero are
/// treated as exact zeros.
pub fn standard_errors(sigma: &DMatrix<f64>, n: usize) -> Result<DVector<f64>> {
    if n == 0 {
        return Err(Error::Spec("empty sample".into()));
    }
    let scale = sigma.diagonal().amax().max(1e-300);
    let tol = 1e-12 * scale;
    let mut se = DVector::zeros(sigma.nrows());
    for i in 0..sigma.nrows() {
        let d = sigma[(i, i)];
        if d < -tol {
            return Err(Error::Numerical(format!(
                "negative variance diagonal at index {i}: {d}"
            )));
        }
        se[i] = (d.max(0.0) / n as f64).sqrt();
    }
    Ok(se)
}
