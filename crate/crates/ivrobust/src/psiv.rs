//! Propensity-score IV: a logit first stage whose fitted probabilities are
//! used as the instrument for a binary treatment, with a two-step
//! stacked-moment variance.
//!
//! The first stage maximizes the logit log-likelihood of D on (W, Z) by
//! Newton–Raphson with step-halving. The second stage solves the
//! just-identified IV condition using (W, p̂) as instruments for (W, D).
//! Stacking the score of the first stage with the second-stage moment gives
//! a just-identified system whose variance is `V̂ = Γ̂⁻¹ Δ̂ Γ̂'⁻¹`, with Γ̂ the
//! analytic sample Jacobian and Δ̂ the sample outer product of the stacked
//! moment. Standard errors for the second-stage coefficients read off the
//! trailing block of V̂ divided by n.
//!
//! On a fully saturated first stage the logit fitted values reproduce the
//! cell means of D, so the point estimate coincides with 2SLS on the same
//! design.

use nalgebra::{DMatrix, DVector};

use crate::data::DesignMatrices;
use crate::error::{Error, Result};
use crate::estimator::{fit_2sls, EstimateResult};
use crate::linalg;
use crate::variance::{standard_errors, VarianceFlavor, VarianceResult};

/// Coefficient bound used by the separation heuristic.
const SEPARATION_BOUND: f64 = 30.0;
/// Linear-predictor bound beyond which a perfectly predicted observation
/// marks (quasi-)separation: |s| = 15 puts the fitted probability below
/// 3e-7, which no interior cell mean can reach.
const SEPARATION_PREDICTOR_BOUND: f64 = 15.0;
/// Score-sum tolerance the fit must satisfy at exit, relative to n.
const SCORE_TOL_PER_OBS: f64 = 1e-8;
/// Tighter target Newton iterates toward while it keeps making progress;
/// quadratic convergence makes the extra iterations essentially free and
/// pins saturated fits to their cell means.
const SCORE_TARGET_PER_OBS: f64 = 1e-12;

/// Fitted logit first stage.
#[derive(Debug, Clone)]
pub struct LogitFit {
    /// (l+q)-vector (δ, π) over the columns of Z.
    pub coefficients: DVector<f64>,
    /// Fitted probabilities, strictly inside (0, 1).
    pub fitted: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Infinity norm of the score sum at exit.
    pub gradient_norm: f64,
    /// Set when any fitted probability had to be clamped away from 0 or 1.
    pub clamped: bool,
}

fn log_likelihood(s: &DVector<f64>, d: &DVector<f64>) -> f64 {
    // sum_i [ -(1-D_i) s_i - ln(1 + exp(-s_i)) ], evaluated stably
    let mut ll = 0.0;
    for i in 0..s.len() {
        let si = s[i];
        let log1p_exp_neg = if si > 0.0 {
            (-si).exp().ln_1p()
        } else {
            -si + si.exp().ln_1p()
        };
        ll += -(1.0 - d[i]) * si - log1p_exp_neg;
    }
    ll
}

/// Maximum-likelihood logit of the (single, binary) endogenous column on
/// the full instrument matrix Z.
///
/// Newton–Raphson from a zero start with step-halving on likelihood
/// decreases. Separation is flagged when a coefficient runs beyond ±30
/// while the score has not vanished.
pub fn fit_logit(design: &DesignMatrices) -> Result<LogitFit> {
    if design.n_endogenous != 1 {
        return Err(Error::Spec(
            "propensity-score IV requires exactly one endogenous variable".into(),
        ));
    }
    let n = design.n();
    let d = design.x.column(design.n_covariates).into_owned();
    if d.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Spec("endogenous variable must be binary (0/1) for the logit first stage".into()));
    }
    let r = &design.z; // logit regressors: covariates then excluded instruments
    let k = r.ncols();
    let max_iter = 100usize;
    let tol = SCORE_TOL_PER_OBS * n as f64;
    let target = SCORE_TARGET_PER_OBS * n as f64;

    let mut theta = DVector::<f64>::zeros(k);
    let mut s = r * &theta;
    let mut ll = log_likelihood(&s, &d);
    let mut grad_norm = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0usize;

    for iter in 0..max_iter {
        iterations = iter + 1;
        let p = s.map(|v| 1.0 / (1.0 + (-v).exp()));
        let grad = r.transpose() * (&d - &p);
        grad_norm = grad.amax();
        if grad_norm <= target {
            converged = true;
            break;
        }
        if theta.amax() > SEPARATION_BOUND {
            return Err(Error::Numerical(
                "perfect separation suspected in the logit first stage (coefficients diverging with a non-vanishing score)".into(),
            ));
        }
        let mut rw = r.clone();
        for (i, mut row) in rw.row_iter_mut().enumerate() {
            row *= (p[i] * (1.0 - p[i])).max(1e-12);
        }
        let info = r.transpose() * rw;
        let step = linalg::solve_spd(&info, &grad)
            .map_err(|_| Error::Numerical("singular information matrix in logit fit".into()))?;

        // step-halving: never accept a likelihood decrease
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate = &theta + &step * scale;
            let s_cand = r * &candidate;
            let ll_cand = log_likelihood(&s_cand, &d);
            if ll_cand >= ll - 1e-12 * ll.abs().max(1.0) {
                theta = candidate;
                s = s_cand;
                ll = ll_cand;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // no step improves the likelihood: accept if the contractual
            // tolerance already holds, otherwise report below
            break;
        }
    }

    if !converged {
        let p = s.map(|v| 1.0 / (1.0 + (-v).exp()));
        let grad = r.transpose() * (&d - &p);
        grad_norm = grad.amax();
        if grad_norm <= tol {
            converged = true;
        } else if theta.amax() > SEPARATION_BOUND {
            return Err(Error::Numerical(
                "perfect separation suspected in the logit first stage (coefficients diverging with a non-vanishing score)".into(),
            ));
        } else {
            return Err(Error::Numerical(format!(
                "logit first stage did not converge in {max_iter} iterations (score norm {grad_norm:.3e})"
            )));
        }
    }

    // quasi-separation leaves the score numerically zero while some
    // observations sit on diverging, perfectly predicted linear predictors
    let mut extreme = 0usize;
    let mut perfectly_predicted = 0usize;
    for i in 0..n {
        if s[i].abs() >= SEPARATION_PREDICTOR_BOUND {
            extreme += 1;
            let predicted = if s[i] > 0.0 { 1.0 } else { 0.0 };
            if d[i] == predicted {
                perfectly_predicted += 1;
            }
        }
    }
    if extreme > 0 && extreme == perfectly_predicted {
        return Err(Error::Numerical(
            "perfect separation in the logit first stage: a group of observations is predicted exactly".into(),
        ));
    }

    let eps = 1e-12;
    let mut clamped = false;
    let fitted = s.map(|v| {
        let p = 1.0 / (1.0 + (-v).exp());
        if p < eps || p > 1.0 - eps {
            clamped = true;
            p.clamp(eps, 1.0 - eps)
        } else {
            p
        }
    });

    Ok(LogitFit {
        coefficients: theta,
        fitted,
        converged,
        iterations,
        gradient_norm: grad_norm,
        clamped,
    })
}

/// IV point estimate using (W, p̂) as instruments for (W, D): the
/// just-identified solve of the second-stage moment condition.
pub fn psiv_estimate(design: &DesignMatrices, fit: &LogitFit) -> Result<EstimateResult> {
    if !fit.converged {
        return Err(Error::Numerical("logit first stage did not converge".into()));
    }
    let n = design.n();
    let l = design.n_covariates;
    let mut z_ps = DMatrix::zeros(n, l + 1);
    z_ps.columns_mut(0, l).copy_from(&design.z.columns(0, l));
    z_ps.column_mut(l).copy_from(&fit.fitted);
    let mut z_names: Vec<String> = design.z_names[..l].to_vec();
    z_names.push("pscore".into());

    let ps_design = DesignMatrices::from_parts(
        design.y.clone(),
        design.x.clone(),
        z_ps,
        design.x_names.clone(),
        z_names,
        l,
        design.n_endogenous,
        design.cluster_ids.clone(),
    )
    .map_err(|e| match e {
        Error::RankDeficient(msg) => Error::RankDeficient(format!(
            "propensity-score instrument collinear with covariates: {msg}"
        )),
        other => other,
    })?;
    fit_2sls(&ps_design)
}

/// The stacked moment system behind the two-step variance.
#[derive(Debug, Clone)]
pub struct StackedMomentSystem {
    /// Γ̂ = n⁻¹ Σ ∂h_i/∂β', with β = (δ, π, γ, ρ).
    pub jacobian: DMatrix<f64>,
    /// Δ̂ = n⁻¹ Σ h_i h_i'.
    pub outer_product: DMatrix<f64>,
    /// V̂ = Γ̂⁻¹ Δ̂ Γ̂'⁻¹ for the full parameter vector.
    pub covariance: DMatrix<f64>,
}

/// Stacked moment h_i(β) averaged over the sample, exposed so that tests
/// can difference it numerically against the analytic Jacobian.
///
/// Parameter layout: (δ, π) over the columns of Z, then (γ, ρ) over the
/// columns of X. Moment layout: (W u, Z_ex u, W e, p e).
pub fn stacked_moment_mean(design: &DesignMatrices, params: &DVector<f64>) -> Result<DVector<f64>> {
    let n = design.n();
    let kz = design.z.ncols();
    let kx = design.x.ncols();
    if params.len() != kz + kx {
        return Err(Error::Spec("parameter vector length mismatch".into()));
    }
    let theta = params.rows(0, kz).into_owned();
    let beta2 = params.rows(kz, kx).into_owned();
    let d = design.x.column(design.n_covariates).into_owned();

    let s = &design.z * &theta;
    let p = s.map(|v| 1.0 / (1.0 + (-v).exp()));
    let u = &d - &p;
    let e = &design.y - &design.x * &beta2;

    let mut h = DVector::zeros(kz + design.n_covariates + 1);
    let nf = n as f64;
    // (W u, Z_ex u) = Z'u jointly
    let zu = design.z.transpose() * &u / nf;
    h.rows_mut(0, kz).copy_from(&zu);
    let l = design.n_covariates;
    let we = design.z.columns(0, l).transpose() * &e / nf;
    h.rows_mut(kz, l).copy_from(&we);
    h[kz + l] = p.dot(&e) / nf;
    Ok(h)
}

/// Two-step variance for the propensity-score IV.
pub fn psiv_variance(
    design: &DesignMatrices,
    fit: &LogitFit,
    estimate: &EstimateResult,
) -> Result<VarianceResult> {
    let system = stacked_moment_system(design, fit, estimate)?;
    let n = design.n();
    let kz = design.z.ncols();
    let kx = design.x.ncols();
    let mut sigma = system.covariance.view((kz, kz), (kx, kx)).into_owned();
    linalg::symmetrize(&mut sigma);
    let se = standard_errors(&sigma, n)?;
    Ok(VarianceResult {
        flavor: VarianceFlavor::TwoStepPsiv,
        sigma,
        se,
        cluster: None,
    })
}

/// Build Γ̂, Δ̂, and V̂ for the stacked system at the fitted parameters.
pub fn stacked_moment_system(
    design: &DesignMatrices,
    fit: &LogitFit,
    estimate: &EstimateResult,
) -> Result<StackedMomentSystem> {
    let n = design.n();
    let nf = n as f64;
    let l = design.n_covariates;
    let kz = design.z.ncols();
    let kx = design.x.ncols();
    let dim = kz + l + 1;
    if dim != kz + kx {
        return Err(Error::Spec(
            "stacked system requires a single endogenous variable".into(),
        ));
    }

    let d = design.x.column(l).into_owned();
    let p = &fit.fitted;
    let u = &d - p;
    let e = &estimate.residuals;
    let w = design.z.columns(0, l);

    // moment rows h_i = (Z_i u_i, W_i e_i, p_i e_i)
    let mut h_rows = DMatrix::zeros(n, dim);
    for i in 0..n {
        for j in 0..kz {
            h_rows[(i, j)] = design.z[(i, j)] * u[i];
        }
        for j in 0..l {
            h_rows[(i, kz + j)] = w[(i, j)] * e[i];
        }
        h_rows[(i, kz + l)] = p[i] * e[i];
    }
    let mut delta = h_rows.transpose() * &h_rows / nf;
    linalg::symmetrize(&mut delta);

    // analytic Jacobian blocks:
    //   d(Z u)/dθ  = −n⁻¹ Σ p(1−p) Z_i Z_i'
    //   d(W e)/d(γ,ρ) = −n⁻¹ W'X
    //   d(p e)/dθ  =  n⁻¹ Σ p(1−p) e_i Z_i'
    //   d(p e)/d(γ,ρ) = −n⁻¹ Σ p_i X_i'
    let mut gamma = DMatrix::zeros(dim, dim);
    let mut zw = design.z.clone();
    for (i, mut row) in zw.row_iter_mut().enumerate() {
        row *= p[i] * (1.0 - p[i]);
    }
    let logit_block = design.z.transpose() * &zw / nf;
    gamma.view_mut((0, 0), (kz, kz)).copy_from(&(-&logit_block));

    let wx = w.transpose() * &design.x / nf;
    gamma.view_mut((kz, kz), (l, kx)).copy_from(&(-&wx));

    let mut cross = DVector::zeros(kz);
    for i in 0..n {
        let scale = p[i] * (1.0 - p[i]) * e[i];
        for j in 0..kz {
            cross[j] += scale * design.z[(i, j)];
        }
    }
    cross /= nf;
    gamma
        .view_mut((kz + l, 0), (1, kz))
        .copy_from(&cross.transpose());

    let mut px = DVector::zeros(kx);
    for i in 0..n {
        for j in 0..kx {
            px[j] += p[i] * design.x[(i, j)];
        }
    }
    px /= nf;
    gamma
        .view_mut((kz + l, kz), (1, kx))
        .copy_from(&(-px.transpose()));

    let gamma_lu = gamma.clone().lu();
    let gamma_inv = gamma_lu
        .try_inverse()
        .ok_or_else(|| Error::Numerical("stacked-moment Jacobian is singular".into()))?;
    let mut covariance = &gamma_inv * &delta * gamma_inv.transpose();
    linalg::symmetrize(&mut covariance);

    Ok(StackedMomentSystem {
        jacobian: gamma,
        outer_product: delta,
        covariance,
    })
}
