//! Two-stage least squares and generalized-weight linear GMM point
//! estimation.
//!
//! The 2SLS coefficient solves
//!
//! `β̂ = (X'Z (Z'Z)⁻¹ Z'X)⁻¹ X'Z (Z'Z)⁻¹ Z'Y`
//!
//! computed through a thin QR factorization of Z rather than explicit
//! inverses: with Z = QR, the estimator is the least-squares solution of
//! `(Q'X) β = Q'Y`. The generalized-weight variant replaces the sample
//! moment `Z'Z` with `n·M` for a user-supplied symmetric positive definite
//! weight `M`.
//!
//! All cross-moments needed by the variance estimators are cached on the
//! result so that downstream code never re-touches the raw data layout.

use nalgebra::{DMatrix, DVector};

use crate::data::DesignMatrices;
use crate::error::{Error, Result};
use crate::linalg;

/// Weight matrix choice for the linear GMM objective.
#[derive(Debug, Clone)]
pub enum WeightSpec {
    /// The 2SLS weight: the sample second moment of the instruments, `Z'Z/n`.
    TwoStageLeastSquares,
    /// A fixed (l+q)×(l+q) symmetric positive definite matrix playing the
    /// role of the instrument second-moment matrix.
    Custom(DMatrix<f64>),
}

/// Ordinary least squares of each endogenous column on the full instrument
/// matrix Z.
#[derive(Debug, Clone)]
pub struct FirstStage {
    /// (l+q)×p coefficient matrix, one column per endogenous regressor.
    pub coefficients: DMatrix<f64>,
    /// n×p fitted values.
    pub fitted: DMatrix<f64>,
    /// n×p residuals û.
    pub residuals: DMatrix<f64>,
}

/// Cross-moments cached at fit time, all on the 1/n scale.
#[derive(Debug, Clone)]
pub struct CrossMoments {
    /// n⁻¹ X'Z, (l+p)×(l+q).
    pub xz: DMatrix<f64>,
    /// n⁻¹ Z'Z, (l+q)×(l+q).
    pub zz: DMatrix<f64>,
    /// The weight actually used on the 1/n scale (`zz` for 2SLS, the custom
    /// matrix otherwise).
    pub weight: DMatrix<f64>,
    /// n⁻¹ Z'ê.
    pub moment_mean: DVector<f64>,
    /// Ĥ = (n⁻¹X'Z) W⁻¹ (n⁻¹Z'X) for the weight W in use.
    pub h: DMatrix<f64>,
    /// True when `weight` is the sample moment `zz`; the variance code uses
    /// this to decide whether the weight carries sampling noise of its own.
    pub weight_is_sample_moment: bool,
}

/// Point-estimation output: coefficients, residuals, the first stage, and
/// the cached cross-moments.
#[derive(Debug, Clone)]
pub struct EstimateResult {
    /// (l+p)-vector, covariate block first, endogenous block last.
    pub beta: DVector<f64>,
    /// ê_i = Y_i − X_i'β̂.
    pub residuals: DVector<f64>,
    pub first_stage: FirstStage,
    pub moments: CrossMoments,
    pub weight_used: WeightSpec,
}

impl EstimateResult {
    /// Coefficients of the endogenous block, in spec order.
    pub fn endogenous_coefficients<'a>(&'a self, design: &DesignMatrices) -> &'a [f64] {
        &self.beta.as_slice()[design.n_covariates..]
    }
}

/// OLS of each endogenous column on Z via one shared QR factorization.
pub fn fit_first_stage(design: &DesignMatrices) -> Result<FirstStage> {
    let (q, r) = linalg::thin_qr(&design.z);
    first_stage_from_qr(design, &q, &r)
}

fn first_stage_from_qr(
    design: &DesignMatrices,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<FirstStage> {
    let l = design.n_covariates;
    let p = design.n_endogenous;
    let endog = design.x.columns(l, p).into_owned();
    let qte = q.transpose() * &endog;
    let coefficients = r.solve_upper_triangular(&qte).ok_or_else(|| {
        Error::RankDeficient("Z'Z singular in first stage (should have been caught earlier)".into())
    })?;
    let fitted = q * qte;
    let residuals = &endog - &fitted;
    Ok(FirstStage {
        coefficients,
        fitted,
        residuals,
    })
}

/// The 2SLS estimator with the instrument second moment as weight.
pub fn fit_2sls(design: &DesignMatrices) -> Result<EstimateResult> {
    let n = design.n() as f64;
    let (q, r) = linalg::thin_qr(&design.z);
    let first_stage = first_stage_from_qr(design, &q, &r)?;

    // With Z = QR the objective reduces to least squares of Q'Y on Q'X.
    let qx = q.transpose() * &design.x;
    let qy = q.transpose() * &design.y;
    let beta = linalg::solve_least_squares(&qx, &qy)
        .map_err(|_| Error::RankDeficient("X'Z rank-deficient in 2SLS solve".into()))?;
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite 2SLS coefficients".into()));
    }
    let residuals = &design.y - &design.x * &beta;

    let xz = design.x.transpose() * &design.z / n;
    let zz = r.transpose() * r / n;
    let moment_mean = design.z.transpose() * &residuals / n;
    let mut h = qx.transpose() * &qx / n;
    linalg::symmetrize(&mut h);
    let mut zz_sym = zz;
    linalg::symmetrize(&mut zz_sym);

    Ok(EstimateResult {
        beta,
        residuals,
        first_stage,
        moments: CrossMoments {
            xz,
            weight: zz_sym.clone(),
            zz: zz_sym,
            moment_mean,
            h,
            weight_is_sample_moment: true,
        },
        weight_used: WeightSpec::TwoStageLeastSquares,
    })
}

/// Linear GMM with an arbitrary fixed weight matrix. With
/// [`WeightSpec::TwoStageLeastSquares`] this is exactly [`fit_2sls`] (same
/// code path, bit-for-bit); with a custom `M` the solve uses `n·M` in place
/// of `Z'Z`.
pub fn fit_gmm_weighted(design: &DesignMatrices, weight: &WeightSpec) -> Result<EstimateResult> {
    let m = match weight {
        WeightSpec::TwoStageLeastSquares => return fit_2sls(design),
        WeightSpec::Custom(m) => m,
    };
    let kz = design.z.ncols();
    if m.nrows() != kz || m.ncols() != kz {
        return Err(Error::Spec(format!(
            "weight matrix is {}×{}, expected {kz}×{kz}",
            m.nrows(),
            m.ncols()
        )));
    }
    let asym = (m - m.transpose()).abs().max();
    let scale = m.abs().max().max(1.0);
    if asym > 1e-12 * scale {
        return Err(Error::Spec("weight matrix not symmetric".into()));
    }
    let chol = nalgebra::Cholesky::new(m.clone())
        .ok_or_else(|| Error::Spec("weight matrix not positive definite".into()))?;

    let n = design.n() as f64;
    let first_stage = fit_first_stage(design)?;

    let g = design.z.transpose() * &design.x / n; // n⁻¹ Z'X
    let zy = design.z.transpose() * &design.y / n; // n⁻¹ Z'Y
    let s = chol.solve(&g); // M⁻¹ (n⁻¹Z'X)
    let mut h = g.transpose() * &s; // (n⁻¹X'Z) M⁻¹ (n⁻¹Z'X)
    linalg::symmetrize(&mut h);
    let rhs = s.transpose() * &zy;
    let beta = linalg::solve_spd(&h, &rhs)
        .map_err(|_| Error::RankDeficient("X'Z rank-deficient under custom weight".into()))?;
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite GMM coefficients".into()));
    }
    let residuals = &design.y - &design.x * &beta;
    let moment_mean = design.z.transpose() * &residuals / n;
    let mut zz = design.z.transpose() * &design.z / n;
    linalg::symmetrize(&mut zz);

    Ok(EstimateResult {
        beta,
        residuals,
        first_stage,
        moments: CrossMoments {
            xz: g.transpose().into_owned(),
            zz,
            weight: m.clone(),
            moment_mean,
            h,
            weight_is_sample_moment: false,
        },
        weight_used: weight.clone(),
    })
}
