//! Seeded Monte Carlo calibration checks that sit outside the acceptance
//! gate: large-sample agreement between estimated standard errors and the
//! sampling dispersion they estimate, and first-stage strength under the
//! default designs.

use ivrobust::data::{build_design, ModelSpec};
use ivrobust::diagnostics::{first_stage_f, FFlavor};
use ivrobust::estimator::fit_2sls;
use ivrobust::psiv::{fit_logit, psiv_estimate, psiv_variance};
use ivrobust::simulator::{
    draw_sample, population_estimand, run_monte_carlo, DgpConfig, MonteCarloOptions,
};
use ivrobust::variance::{sigma_c, sigma_mr};

fn spec_q2() -> ModelSpec {
    ModelSpec::new("Y", vec!["D".into()], vec!["Z1".into(), "Z2".into()])
}

#[test]
fn psiv_se_tracks_monte_carlo_dispersion() {
    // 500 draws at n = 20000: the two-step standard error of the treatment
    // coefficient should sit within 10% of the replication dispersion
    let mut cfg = DgpConfig::constant_effect_default();
    cfg.n = 20_000;
    let reps = 500usize;
    let mut rhos = Vec::with_capacity(reps);
    let mut ses = Vec::with_capacity(reps);
    for rep in 0..reps {
        cfg.seed = 600_000 + rep as u64;
        let data = draw_sample(&cfg).unwrap();
        let design = build_design(&data, &spec_q2()).unwrap();
        let logit = fit_logit(&design).unwrap();
        let est = psiv_estimate(&design, &logit).unwrap();
        let var = psiv_variance(&design, &logit, &est).unwrap();
        rhos.push(est.beta[1]);
        ses.push(var.se[1]);
    }
    let mean = rhos.iter().sum::<f64>() / reps as f64;
    let sd = (rhos.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0)).sqrt();
    let mean_se = ses.iter().sum::<f64>() / reps as f64;
    let ratio = mean_se / sd;
    assert!(
        (0.9..=1.1).contains(&ratio),
        "psiv se calibration ratio {ratio:.4} outside [0.9, 1.1] (mean se {mean_se:.5}, sd {sd:.5})"
    );
}

#[test]
fn robust_first_stage_f_is_large_under_default_design() {
    // strong instruments by construction: the robust F should clear the
    // rule-of-thumb threshold in at least 99% of replications
    let mut cfg = DgpConfig::heterogeneous_default();
    cfg.n = 2000;
    let reps = 1000usize;
    let mut above = 0usize;
    for rep in 0..reps {
        cfg.seed = 700_000 + rep as u64;
        let data = draw_sample(&cfg).unwrap();
        let design = build_design(&data, &spec_q2()).unwrap();
        let est = fit_2sls(&design).unwrap();
        let f = first_stage_f(&est.first_stage, &design, FFlavor::Robust).unwrap()[0];
        if f > 10.0 {
            above += 1;
        }
    }
    let share = above as f64 / reps as f64;
    assert!(share >= 0.99, "robust F > 10 in only {share:.3} of replications");
}

#[test]
fn conventional_and_robust_se_agree_under_constant_effects() {
    // homoskedastic constant-effect design at n = 5000: one effect means
    // both estimators target the same limit
    let mut cfg = DgpConfig::constant_effect_default();
    cfg.n = 5000;
    cfg.seed = 808;
    let data = draw_sample(&cfg).unwrap();
    let design = build_design(&data, &spec_q2()).unwrap();
    let est = fit_2sls(&design).unwrap();
    let c = sigma_c(&est, &design).unwrap();
    let mr = sigma_mr(&est, &design).unwrap();
    let rel = (c.se[1] - mr.se[1]).abs() / mr.se[1];
    assert!(rel <= 0.05, "SE_C and SE_MR differ by {:.2}%", 100.0 * rel);
}

#[test]
fn estimand_pinned_by_ten_million_draw() {
    let mut cfg = DgpConfig::heterogeneous_default();
    cfg.n = 10_000_000;
    cfg.seed = 909;
    let oracle = population_estimand(&cfg).unwrap();
    let data = draw_sample(&cfg).unwrap();
    let design = build_design(&data, &spec_q2()).unwrap();
    let est = fit_2sls(&design).unwrap();
    assert!(
        (est.beta[1] - oracle.rho0).abs() <= 0.01,
        "rho_hat {} vs rho0 {}",
        est.beta[1],
        oracle.rho0
    );
}

#[test]
fn j_rejection_calibrated_at_larger_sample() {
    // correctly specified model: the J test should reject near its nominal
    // level at n = 5000 as well
    let mut cfg = DgpConfig::constant_effect_default();
    cfg.n = 5000;
    let report = run_monte_carlo(&cfg, 2000, MonteCarloOptions::default(), 4242).unwrap();
    assert!(
        (0.035..=0.065).contains(&report.j_rejection_rate),
        "J rejection {:.4} outside [0.035, 0.065]",
        report.j_rejection_rate
    );
}
