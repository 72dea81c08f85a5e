//! Synthetic populations with instrument-specific treatment effects, their
//! analytic estimands, and a seeded Monte Carlo harness.
//!
//! The data-generating process is a finite mixture of compliance types
//! (never-taker, always-taker, one complier group per instrument) crossed
//! with a mutually exclusive instrument indicator Z ∈ {0, 1, …, q}:
//! complier j takes the treatment exactly when Z = j, always-takers always
//! do, never-takers never do, so no draw can contain a defier. Treatment
//! effects are drawn per unit around a type-specific mean, which makes the
//! instrument-specific effects distinct whenever the complier means differ.
//!
//! [`population_estimand`] returns closed-form population moments, the
//! per-instrument effects (the Wald contrast of the Z = j group against the
//! Z = 0 group), the 2SLS estimand solved from the population normal
//! equations, and the implied convex weights. For this mixture the weights
//! have the closed form
//!
//! `ξ_j ∝ π_j κ_j (κ_j − Σ_k π_k κ_k)`
//!
//! with κ_j the complier mass of instrument j, normalized by the variance
//! of κ_Z across the instrument distribution. They sum to one identically;
//! they stay inside [0, 1] when the complier masses are not too uneven
//! relative to the mass of the Z = 0 group (balanced designs always
//! qualify).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{build_design, Dataset, ModelSpec};
use crate::diagnostics::{first_stage_f, j_test, FFlavor};
use crate::error::{Error, Result};
use crate::estimator::fit_2sls;
use crate::exec;
use crate::variance::{sigma_c, sigma_mr};

/// Mixture weights over compliance types.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TypeProbs {
    pub never: f64,
    pub always: f64,
    /// One complier group per instrument.
    pub compliers: Vec<f64>,
}

/// Mean treatment effect per compliance type. The never-taker mean is
/// carried for completeness; it never reaches the outcome because those
/// units are never treated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectMeans {
    pub never: f64,
    pub always: f64,
    pub compliers: Vec<f64>,
}

/// Full description of the synthetic data-generating process.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpConfig {
    pub type_probs: TypeProbs,
    /// Distribution of the instrument indicator, length q+1; index 0 is the
    /// no-instrument group.
    pub instrument_probs: Vec<f64>,
    pub effect_means: EffectMeans,
    /// Within-type standard deviation of the unit-level effect.
    pub effect_sd: f64,
    pub baseline_mean: f64,
    pub baseline_sd: f64,
    /// Outcome noise when untreated / treated; unequal values make the
    /// noise heteroskedastic in D.
    pub noise_sd_untreated: f64,
    pub noise_sd_treated: f64,
    pub n: usize,
    pub seed: u64,
}

const PROB_TOL: f64 = 1e-12;

impl DgpConfig {
    /// Number of instruments q.
    pub fn n_instruments(&self) -> usize {
        self.type_probs.compliers.len()
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.n_instruments();
        if q == 0 {
            return Err(Error::Config("at least one instrument required".into()));
        }
        if self.instrument_probs.len() != q + 1 {
            return Err(Error::Config(format!(
                "instrument_probs must have {} entries (one per instrument plus the base group), got {}",
                q + 1,
                self.instrument_probs.len()
            )));
        }
        if self.effect_means.compliers.len() != q {
            return Err(Error::Config(
                "effect_means.compliers must match the number of complier groups".into(),
            ));
        }
        let mut type_sum = self.type_probs.never + self.type_probs.always;
        for &p in &self.type_probs.compliers {
            type_sum += p;
        }
        let all_type_probs = std::iter::once(self.type_probs.never)
            .chain(std::iter::once(self.type_probs.always))
            .chain(self.type_probs.compliers.iter().copied());
        for p in all_type_probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("type probability {p} outside [0, 1]")));
            }
        }
        if (type_sum - 1.0).abs() > PROB_TOL {
            return Err(Error::Config(format!(
                "type probabilities sum to {type_sum}, expected 1"
            )));
        }
        let mut inst_sum = 0.0;
        for &p in &self.instrument_probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!(
                    "instrument probability {p} outside [0, 1]"
                )));
            }
            inst_sum += p;
        }
        if (inst_sum - 1.0).abs() > PROB_TOL {
            return Err(Error::Config(format!(
                "instrument probabilities sum to {inst_sum}, expected 1"
            )));
        }
        for (name, sd) in [
            ("effect_sd", self.effect_sd),
            ("baseline_sd", self.baseline_sd),
            ("noise_sd_untreated", self.noise_sd_untreated),
            ("noise_sd_treated", self.noise_sd_treated),
        ] {
            if sd < 0.0 || !sd.is_finite() {
                return Err(Error::Config(format!("{name} must be nonnegative, got {sd}")));
            }
        }
        if self.n == 0 {
            return Err(Error::Config("sample size must be positive".into()));
        }
        Ok(())
    }

    /// Symmetric two-instrument design with distinct effects 2 and 4.
    pub fn heterogeneous_default() -> Self {
        DgpConfig {
            type_probs: TypeProbs {
                never: 0.3,
                always: 0.1,
                compliers: vec![0.3, 0.3],
            },
            instrument_probs: vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            effect_means: EffectMeans {
                never: 0.0,
                always: 1.0,
                compliers: vec![2.0, 4.0],
            },
            effect_sd: 1.0,
            baseline_mean: 1.0,
            baseline_sd: 1.0,
            noise_sd_untreated: 1.0,
            noise_sd_treated: 1.0,
            n: 2000,
            seed: 1,
        }
    }

    /// Same mixture with one common effect and no within-type dispersion.
    pub fn constant_effect_default() -> Self {
        let mut cfg = Self::heterogeneous_default();
        cfg.effect_means = EffectMeans {
            never: 3.0,
            always: 3.0,
            compliers: vec![3.0, 3.0],
        };
        cfg.effect_sd = 0.0;
        cfg
    }
}

/// Column names produced by [`draw_sample`]: Y, D, Z1..Zq.
fn column_names(q: usize) -> Vec<String> {
    let mut names = vec!["Y".to_string(), "D".to_string()];
    names.extend((1..=q).map(|j| format!("Z{j}")));
    names
}

/// Draw one synthetic sample. Deterministic in `config.seed`.
pub fn draw_sample(config: &DgpConfig) -> Result<Dataset> {
    config.validate()?;
    let q = config.n_instruments();
    let n = config.n;
    let mut rng = exec::substream(config.seed, &[]);

    // cumulative type boundaries: never, always, compliers...
    let mut type_cuts = Vec::with_capacity(q + 2);
    let mut acc = config.type_probs.never;
    type_cuts.push(acc);
    acc += config.type_probs.always;
    type_cuts.push(acc);
    for &p in &config.type_probs.compliers {
        acc += p;
        type_cuts.push(acc);
    }
    let mut inst_cuts = Vec::with_capacity(q + 1);
    let mut acc = 0.0;
    for &p in &config.instrument_probs {
        acc += p;
        inst_cuts.push(acc);
    }

    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(n); 2 + q];
    for _ in 0..n {
        let ut: f64 = rng.random();
        let unit_type = type_cuts.iter().position(|&c| ut < c).unwrap_or(q + 1);
        let uz: f64 = rng.random();
        let z_cat = inst_cuts.iter().position(|&c| uz < c).unwrap_or(q);

        let treated = match unit_type {
            0 => false,                       // never-taker
            1 => true,                        // always-taker
            t => z_cat == t - 1,              // complier t-2 is on instrument t-1
        };
        let effect_mean = match unit_type {
            0 => config.effect_means.never,
            1 => config.effect_means.always,
            t => config.effect_means.compliers[t - 2],
        };
        let effect = effect_mean + config.effect_sd * rng.sample::<f64, _>(StandardNormal);
        let baseline =
            config.baseline_mean + config.baseline_sd * rng.sample::<f64, _>(StandardNormal);
        let noise_sd = if treated {
            config.noise_sd_treated
        } else {
            config.noise_sd_untreated
        };
        let noise = noise_sd * rng.sample::<f64, _>(StandardNormal);

        let d = if treated { 1.0 } else { 0.0 };
        let y = baseline + d * effect + noise;
        columns[0].push(y);
        columns[1].push(d);
        for j in 0..q {
            columns[2 + j].push(if z_cat == j + 1 { 1.0 } else { 0.0 });
        }
    }
    Dataset::new(column_names(q), columns)
}

/// Closed-form population moments on the Z-design (1, Z1..Zq) and X = (1, D).
#[derive(Debug, Clone)]
pub struct PopulationMoments {
    pub zz: DMatrix<f64>,
    pub zx: DMatrix<f64>,
    pub zy: DVector<f64>,
}

/// Analytic population quantities for a [`DgpConfig`].
#[derive(Debug, Clone)]
pub struct PopulationOracle {
    /// Per-instrument effect among that instrument's compliers; `None`
    /// when the instrument has no compliers (flagged below).
    pub late: Vec<Option<f64>>,
    /// Probability limit of the 2SLS coefficient on D.
    pub rho0: f64,
    /// Probability limit of the intercept.
    pub alpha0: f64,
    /// Convex weights with ρ₀ = Σ ξ_j · late_j; `None` when the weights are
    /// not identified (degenerate first stage).
    pub xi: Option<Vec<f64>>,
    pub moments: PopulationMoments,
    /// E[Z e] at the estimand; nonzero exactly when the instrument-specific
    /// effects differ.
    pub moment_residual: DVector<f64>,
    /// Instruments whose effect is undefined for lack of compliers.
    pub undefined_instruments: Vec<usize>,
}

/// Exact population moments and estimands for the mixture.
pub fn population_estimand(config: &DgpConfig) -> Result<PopulationOracle> {
    config.validate()?;
    let q = config.n_instruments();
    let pi = &config.instrument_probs;
    let kappa = &config.type_probs.compliers; // complier mass per instrument
    let mu = &config.effect_means.compliers;
    let p_alw = config.type_probs.always;
    let mu_alw = config.effect_means.always;
    let mu_y0 = config.baseline_mean;

    // E[D], E[Dρ] and the instrument cross-moments
    let mut e_d = p_alw;
    let mut e_drho = p_alw * mu_alw;
    for j in 0..q {
        e_d += pi[j + 1] * kappa[j];
        e_drho += pi[j + 1] * kappa[j] * mu[j];
    }
    let e_y = mu_y0 + e_drho;

    let mut zz = DMatrix::zeros(q + 1, q + 1);
    zz[(0, 0)] = 1.0;
    let mut zx = DMatrix::zeros(q + 1, 2);
    zx[(0, 0)] = 1.0;
    zx[(0, 1)] = e_d;
    let mut zy = DVector::zeros(q + 1);
    zy[0] = e_y;
    for j in 0..q {
        zz[(0, j + 1)] = pi[j + 1];
        zz[(j + 1, 0)] = pi[j + 1];
        zz[(j + 1, j + 1)] = pi[j + 1];
        zx[(j + 1, 0)] = pi[j + 1];
        zx[(j + 1, 1)] = pi[j + 1] * (p_alw + kappa[j]);
        zy[j + 1] = pi[j + 1] * (mu_y0 + p_alw * mu_alw + kappa[j] * mu[j]);
    }

    // 2SLS estimand from the population normal equations with weight E[ZZ']⁻¹
    let zz_chol = nalgebra::Cholesky::new(zz.clone()).ok_or_else(|| {
        Error::Config("instrument distribution is degenerate (singular E[ZZ'])".into())
    })?;
    let g = zx.transpose() * zz_chol.solve(&zx); // X'Z (ZZ)⁻¹ Z'X
    let rhs = zx.transpose() * zz_chol.solve(&zy);
    let beta0 = nalgebra::Cholesky::new(g.clone())
        .ok_or_else(|| {
            Error::Config(
                "population first stage is degenerate: D has no variation explained by Z".into(),
            )
        })?
        .solve(&rhs);
    let alpha0 = beta0[0];
    let rho0 = beta0[1];

    // per-instrument contrasts and closed-form weights
    let mut late = Vec::with_capacity(q);
    let mut undefined = Vec::new();
    for j in 0..q {
        if kappa[j] > 0.0 {
            late.push(Some(mu[j]));
        } else {
            late.push(None);
            undefined.push(j);
        }
    }
    let s: f64 = (0..q).map(|j| pi[j + 1] * kappa[j]).sum();
    let var_kappa: f64 = (0..q).map(|j| pi[j + 1] * kappa[j] * kappa[j]).sum::<f64>() - s * s;
    let xi = if var_kappa > PROB_TOL {
        Some(
            (0..q)
                .map(|j| pi[j + 1] * kappa[j] * (kappa[j] - s) / var_kappa)
                .collect(),
        )
    } else {
        None
    };

    // E[Z e] at (α₀, ρ₀)
    let mut beta_vec = DVector::zeros(2);
    beta_vec[0] = alpha0;
    beta_vec[1] = rho0;
    let moment_residual = &zy - &zx * beta_vec;

    Ok(PopulationOracle {
        late,
        rho0,
        alpha0,
        xi,
        moments: PopulationMoments { zz, zx, zy },
        moment_residual,
        undefined_instruments: undefined,
    })
}

/// Levels used by the Monte Carlo harness.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MonteCarloOptions {
    /// Significance level for the J rejection rate.
    pub j_level: f64,
    /// Confidence level for the coverage columns.
    pub ci_level: f64,
}

impl Default for MonteCarloOptions {
    fn default() -> Self {
        MonteCarloOptions {
            j_level: 0.05,
            ci_level: 0.95,
        }
    }
}

/// One replication's worth of statistics.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub rep: usize,
    pub rho_hat: f64,
    pub se_c: f64,
    pub se_mr: f64,
    /// `None` encodes a just-identified J (not applicable).
    pub j_pvalue: Option<f64>,
    pub f_robust: f64,
    /// 100 · 2(MR − C)/(MR + C).
    pub pct_se_diff: f64,
}

/// Aggregated Monte Carlo output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub requested: usize,
    pub completed: usize,
    pub skipped: usize,
    pub rho0: f64,
    pub mean_rho: f64,
    pub sd_rho: f64,
    pub mean_se_c: f64,
    pub mean_se_mr: f64,
    pub j_rejection_rate: f64,
    pub coverage_c: f64,
    pub coverage_mr: f64,
    pub options: MonteCarloOptions,
    pub rows: Vec<ReplicateRow>,
}

fn replicate(
    config: &DgpConfig,
    seed: u64,
    rep: usize,
    opts: &MonteCarloOptions,
    rho0: f64,
    z_crit: f64,
) -> Result<Option<(ReplicateRow, bool, bool, bool)>> {
    let mut rep_config = config.clone();
    rep_config.seed = {
        // fold the harness seed and replicate index into the DGP seed
        let mut rng = exec::substream(seed, &[rep as u64]);
        rng.random()
    };
    let data = draw_sample(&rep_config)?;
    let q = config.n_instruments();
    let spec = ModelSpec::new(
        "Y",
        vec!["D".into()],
        (1..=q).map(|j| format!("Z{j}")).collect(),
    );
    // a replicate that fails the rank conditions, or is numerically
    // degenerate in any downstream statistic, is skipped and counted
    let computed = (|| -> Result<_> {
        let design = build_design(&data, &spec)?;
        let est = fit_2sls(&design)?;
        let vc = sigma_c(&est, &design)?;
        let vmr = sigma_mr(&est, &design)?;
        let j = j_test(&est, &design, false)?;
        let f_rob = first_stage_f(&est.first_stage, &design, FFlavor::Robust)?[0];
        Ok((est, vc, vmr, j, f_rob))
    })();
    let (est, vc, vmr, j, f_rob) = match computed {
        Ok(v) => v,
        Err(Error::RankDeficient(_))
        | Err(Error::Numerical(_))
        | Err(Error::DegenerateInference(_)) => return Ok(None),
        Err(e) => return Err(e),
    };

    let rho_hat = est.beta[1];
    let se_c = vc.se[1];
    let se_mr = vmr.se[1];
    let pct = if se_c + se_mr > 0.0 {
        100.0 * 2.0 * (se_mr - se_c) / (se_mr + se_c)
    } else {
        0.0
    };
    let reject = j.p_value.is_some_and(|p| p < opts.j_level);
    let cover_c = (rho_hat - rho0).abs() <= z_crit * se_c;
    let cover_mr = (rho_hat - rho0).abs() <= z_crit * se_mr;
    Ok(Some((
        ReplicateRow {
            rep,
            rho_hat,
            se_c,
            se_mr,
            j_pvalue: j.p_value,
            f_robust: f_rob,
            pct_se_diff: pct,
        },
        reject,
        cover_c,
        cover_mr,
    )))
}

/// Run R independent seeded replications of draw → fit → inference and
/// aggregate the results. Replications failing the rank conditions are
/// skipped and counted. Output is identical across thread counts.
pub fn run_monte_carlo(
    config: &DgpConfig,
    replications: usize,
    options: MonteCarloOptions,
    seed: u64,
) -> Result<MonteCarloReport> {
    if replications < 2 {
        return Err(Error::Config("at least two replications required".into()));
    }
    if !(0.0..1.0).contains(&options.j_level) || options.j_level <= 0.0 {
        return Err(Error::Config("j_level must lie in (0, 1)".into()));
    }
    if !(0.0..1.0).contains(&options.ci_level) || options.ci_level <= 0.0 {
        return Err(Error::Config("ci_level must lie in (0, 1)".into()));
    }
    config.validate()?;
    let oracle = population_estimand(config)?;
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let z_crit = normal.inverse_cdf(0.5 + options.ci_level / 2.0);

    let outcomes = exec::map_indexed(replications, |rep| {
        replicate(config, seed, rep, &options, oracle.rho0, z_crit)
    });

    let mut rows = Vec::with_capacity(replications);
    let mut skipped = 0usize;
    let mut rejections = 0usize;
    let mut j_applicable = 0usize;
    let mut covered_c = 0usize;
    let mut covered_mr = 0usize;
    for outcome in outcomes {
        match outcome? {
            None => skipped += 1,
            Some((row, reject, cover_c, cover_mr)) => {
                if row.j_pvalue.is_some() {
                    j_applicable += 1;
                    if reject {
                        rejections += 1;
                    }
                }
                if cover_c {
                    covered_c += 1;
                }
                if cover_mr {
                    covered_mr += 1;
                }
                rows.push(row);
            }
        }
    }
    let completed = rows.len();
    if completed < 2 {
        return Err(Error::Numerical(format!(
            "only {completed} of {replications} replications completed"
        )));
    }
    let cf = completed as f64;
    let mean_rho = rows.iter().map(|r| r.rho_hat).sum::<f64>() / cf;
    let var_rho = rows
        .iter()
        .map(|r| (r.rho_hat - mean_rho).powi(2))
        .sum::<f64>()
        / (cf - 1.0);
    let report = MonteCarloReport {
        requested: replications,
        completed,
        skipped,
        rho0: oracle.rho0,
        mean_rho,
        sd_rho: var_rho.sqrt(),
        mean_se_c: rows.iter().map(|r| r.se_c).sum::<f64>() / cf,
        mean_se_mr: rows.iter().map(|r| r.se_mr).sum::<f64>() / cf,
        j_rejection_rate: if j_applicable > 0 {
            rejections as f64 / j_applicable as f64
        } else {
            0.0
        },
        coverage_c: covered_c as f64 / cf,
        coverage_mr: covered_mr as f64 / cf,
        options,
        rows,
    };
    Ok(report)
}

/// Write the replicate-level rows as CSV (columns: rep, rho_hat, se_c,
/// se_mr, j_pvalue, f_robust, pct_se_diff).
pub fn write_replicate_csv<W: std::io::Write>(report: &MonteCarloReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["rep", "rho_hat", "se_c", "se_mr", "j_pvalue", "f_robust", "pct_se_diff"])
        .map_err(|e| Error::Csv(e.to_string()))?;
    for row in &report.rows {
        w.write_record([
            row.rep.to_string(),
            format!("{:.17e}", row.rho_hat),
            format!("{:.17e}", row.se_c),
            format!("{:.17e}", row.se_mr),
            row.j_pvalue.map_or_else(|| "NA".into(), |p| format!("{p:.17e}")),
            format!("{:.17e}", row.f_robust),
            format!("{:.17e}", row.pct_se_diff),
        ])
        .map_err(|e| Error::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn all_never_takers_never_treat() {
        let mut cfg = DgpConfig::heterogeneous_default();
        cfg.type_probs = TypeProbs {
            never: 1.0,
            always: 0.0,
            compliers: vec![0.0, 0.0],
        };
        cfg.n = 500;
        let data = draw_sample(&cfg).unwrap();
        assert!(data.column("D").unwrap().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn constant_effects_are_exact_without_noise() {
        let mut cfg = DgpConfig::constant_effect_default();
        cfg.effect_sd = 0.0;
        cfg.baseline_sd = 0.0;
        cfg.noise_sd_untreated = 0.0;
        cfg.noise_sd_treated = 0.0;
        cfg.n = 400;
        let data = draw_sample(&cfg).unwrap();
        let y = data.column("Y").unwrap();
        let d = data.column("D").unwrap();
        for i in 0..cfg.n {
            let expected = cfg.baseline_mean + d[i] * 3.0;
            assert_abs_diff_eq!(y[i], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn large_sample_wald_ratios_match_oracle() {
        let mut cfg = DgpConfig::heterogeneous_default();
        cfg.n = 1_000_000;
        cfg.seed = 99;
        let data = draw_sample(&cfg).unwrap();
        let y = data.column("Y").unwrap();
        let d = data.column("D").unwrap();
        let z1 = data.column("Z1").unwrap();
        let z2 = data.column("Z2").unwrap();
        for (z_own, z_other, target) in [(z1, z2, 2.0), (z2, z1, 4.0)] {
            let (mut y1, mut d1, mut n1, mut y0, mut d0, mut n0) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..cfg.n {
                if z_own[i] == 1.0 {
                    y1 += y[i];
                    d1 += d[i];
                    n1 += 1.0;
                } else if z_other[i] == 0.0 {
                    y0 += y[i];
                    d0 += d[i];
                    n0 += 1.0;
                }
            }
            let wald = (y1 / n1 - y0 / n0) / (d1 / n1 - d0 / n0);
            assert!((wald - target).abs() < 0.05, "wald {wald} vs {target}");
        }
    }

    #[test]
    fn symmetric_config_gives_equal_weights() {
        let cfg = DgpConfig::heterogeneous_default();
        let oracle = population_estimand(&cfg).unwrap();
        let xi = oracle.xi.unwrap();
        assert_abs_diff_eq!(xi[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(xi[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(oracle.rho0, 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(oracle.alpha0, 0.8, epsilon = 1e-10);
    }

    #[test]
    fn single_complier_group_reduces_to_its_effect() {
        let mut cfg = DgpConfig::heterogeneous_default();
        cfg.type_probs.compliers = vec![0.6, 0.0];
        cfg.type_probs.never = 0.3;
        cfg.type_probs.always = 0.1;
        let oracle = population_estimand(&cfg).unwrap();
        assert_abs_diff_eq!(oracle.rho0, 2.0, epsilon = 1e-10);
        assert_eq!(oracle.undefined_instruments, vec![1]);
        assert!(oracle.late[1].is_none());
        let xi = oracle.xi.unwrap();
        assert_abs_diff_eq!(xi[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(xi[1], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn oracle_identity_and_moment_residual() {
        let cfg = DgpConfig::heterogeneous_default();
        let oracle = population_estimand(&cfg).unwrap();
        let xi = oracle.xi.as_ref().unwrap();
        let combo: f64 = xi
            .iter()
            .zip(&oracle.late)
            .map(|(x, l)| x * l.unwrap())
            .sum();
        assert_abs_diff_eq!(oracle.rho0, combo, epsilon = 1e-10);
        // heterogeneity makes the population moment condition fail
        assert!(oracle.moment_residual.amax() > 1e-3);

        let constant = DgpConfig::constant_effect_default();
        let oracle_const = population_estimand(&constant).unwrap();
        assert!(oracle_const.moment_residual.amax() < 1e-12);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = DgpConfig::heterogeneous_default();
        cfg.type_probs.never = 0.5; // sums to 1.2
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = DgpConfig::heterogeneous_default();
        cfg.instrument_probs = vec![0.5, 0.5];
        assert!(cfg.validate().is_err());

        let mut cfg = DgpConfig::heterogeneous_default();
        cfg.effect_sd = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn draw_is_deterministic_in_seed() {
        let mut cfg = DgpConfig::heterogeneous_default();
        cfg.n = 200;
        cfg.seed = 31;
        let a = draw_sample(&cfg).unwrap();
        let b = draw_sample(&cfg).unwrap();
        assert_eq!(a.column("Y").unwrap(), b.column("Y").unwrap());
        assert_eq!(a.column("D").unwrap(), b.column("D").unwrap());
    }

    #[test]
    fn monte_carlo_report_is_reproducible() {
        let mut cfg = DgpConfig::heterogeneous_default();
        cfg.n = 300;
        let a = run_monte_carlo(&cfg, 4, MonteCarloOptions::default(), 5).unwrap();
        let b = run_monte_carlo(&cfg, 4, MonteCarloOptions::default(), 5).unwrap();
        assert_eq!(a.completed, b.completed);
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.rho_hat.to_bits(), rb.rho_hat.to_bits());
            assert_eq!(ra.se_mr.to_bits(), rb.se_mr.to_bits());
        }
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn monte_carlo_identical_across_thread_counts() {
        let mut cfg = DgpConfig::heterogeneous_default();
        cfg.n = 250;
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| run_monte_carlo(&cfg, 6, MonteCarloOptions::default(), 17).unwrap())
        };
        let one = run(1);
        let three = run(3);
        for (ra, rb) in one.rows.iter().zip(&three.rows) {
            assert_eq!(ra.rho_hat.to_bits(), rb.rho_hat.to_bits());
            assert_eq!(ra.se_c.to_bits(), rb.se_c.to_bits());
            assert_eq!(ra.se_mr.to_bits(), rb.se_mr.to_bits());
        }
    }

    #[test]
    fn rank_failures_are_skipped_and_counted() {
        // at n = 8 many draws lack an instrument group or any treated
        // unit, so some replications must fail the rank conditions
        let mut cfg = DgpConfig::heterogeneous_default();
        cfg.n = 8;
        let report = run_monte_carlo(&cfg, 60, MonteCarloOptions::default(), 13).unwrap();
        assert!(report.skipped > 0, "expected skips at n = 8");
        assert_eq!(report.completed + report.skipped, report.requested);
    }

    #[test]
    fn replicate_csv_has_expected_columns() {
        let mut cfg = DgpConfig::heterogeneous_default();
        cfg.n = 300;
        let report = run_monte_carlo(&cfg, 3, MonteCarloOptions::default(), 5).unwrap();
        let mut buf = Vec::new();
        write_replicate_csv(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "rep,rho_hat,se_c,se_mr,j_pvalue,f_robust,pct_se_diff"
        );
        assert_eq!(lines.count(), report.completed);
    }
}
