//! Text tables and JSON documents for the CLI.
//!
//! Text mode prints 6 significant digits; JSON carries full precision and a
//! `schema_version` field.

use ivrobust::bootstrap::{BootstrapResult, PercentileTInterval};
use ivrobust::data::{DesignMatrices, LoadSummary};
use ivrobust::diagnostics::DiagnosticsReport;
use ivrobust::error::{Error, Result};
use ivrobust::estimator::EstimateResult;
use ivrobust::psiv::LogitFit;
use ivrobust::simulator::MonteCarloReport;
use ivrobust::variance::VarianceResult;
use serde_json::json;

/// Format with `digits` significant digits, switching to scientific
/// notation outside the comfortable fixed-point range.
pub fn sig(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&magnitude) {
        return format!("{x:.*e}", digits.saturating_sub(1));
    }
    let decimals = (digits as i32 - 1 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

fn se_at(v: &Option<VarianceResult>, i: usize) -> Option<f64> {
    v.as_ref().map(|v| v.se[i])
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_text(
    design: &DesignMatrices,
    est: &EstimateResult,
    summary: &LoadSummary,
    vc: &Option<VarianceResult>,
    vmr: &Option<VarianceResult>,
    vcmr: &Option<VarianceResult>,
    report: &DiagnosticsReport,
) {
    println!("2SLS estimates  (n = {}, dropped rows = {})", design.n(), summary.rows_dropped);
    println!("{:-<66}", "");
    let mut header = format!("{:<12} {:>12}", "variable", "estimate");
    if vc.is_some() {
        header.push_str(&format!(" {:>12}", "se(C)"));
    }
    if vmr.is_some() {
        header.push_str(&format!(" {:>12}", "se(MR)"));
    }
    if vcmr.is_some() {
        header.push_str(&format!(" {:>12}", "se(CMR)"));
    }
    println!("{header}");
    for (i, name) in design.x_names.iter().enumerate() {
        let mut line = format!("{:<12} {:>12}", name, sig(est.beta[i], 6));
        for v in [vc, vmr, vcmr] {
            if let Some(se) = se_at(v, i) {
                line.push_str(&format!(" {:>12}", sig(se, 6)));
            }
        }
        println!("{line}");
    }
    println!("{:-<66}", "");
    let j = &report.j;
    match j.p_value {
        Some(p) => println!(
            "J test: {} on {} dof, p = {}{}{}",
            sig(j.statistic, 6),
            j.dof,
            sig(p, 6),
            if j.clustered { " (clustered)" } else { "" },
            if j.rank_deficient { " [rank-deficient V]" } else { "" },
        ),
        None => println!("J test: not applicable (just-identified)"),
    }
    if let Some(f) = &report.f_classical {
        println!(
            "first-stage F (classical): {}",
            f.iter().map(|v| sig(*v, 6)).collect::<Vec<_>>().join(", ")
        );
    }
    if let Some(f) = &report.f_robust {
        println!(
            "first-stage F (robust):    {}",
            f.iter().map(|v| sig(*v, 6)).collect::<Vec<_>>().join(", ")
        );
    }
    if let Some(cd) = report.cragg_donald {
        println!("Cragg-Donald statistic:    {}", sig(cd, 6));
    }
    if let Some(c) = vcmr {
        if let Some(info) = c.cluster {
            match info.correction {
                Some(factor) => println!(
                    "clusters: {} (correction factor {})",
                    info.groups,
                    sig(factor, 6)
                ),
                None => println!("clusters: {} (no correction)", info.groups),
            }
        }
    }
    for flag in &report.flags {
        println!("note: {flag}");
    }
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_json(
    schema: u32,
    design: &DesignMatrices,
    est: &EstimateResult,
    summary: &LoadSummary,
    vc: &Option<VarianceResult>,
    vmr: &Option<VarianceResult>,
    vcmr: &Option<VarianceResult>,
    report: &DiagnosticsReport,
) -> Result<()> {
    let coefficients: Vec<_> = design
        .x_names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            json!({
                "name": name,
                "estimate": est.beta[i],
                "se_c": se_at(vc, i),
                "se_mr": se_at(vmr, i),
                "se_cmr": se_at(vcmr, i),
            })
        })
        .collect();
    let rho_index = design.n_covariates;
    let doc = json!({
        "schema_version": schema,
        "command": "estimate",
        "n": design.n(),
        "rows_dropped": summary.rows_dropped,
        "coefficients": coefficients,
        "rho": est.beta[rho_index],
        "se_c": se_at(vc, rho_index),
        "se_mr": se_at(vmr, rho_index),
        "se_cmr": se_at(vcmr, rho_index),
        "j": {
            "statistic": report.j.statistic,
            "dof": report.j.dof,
            "p_value": report.j.p_value,
            "rank_deficient": report.j.rank_deficient,
            "clustered": report.j.clustered,
            "centered": report.j.centered,
        },
        "f_classical": report.f_classical,
        "f_robust": report.f_robust,
        "cragg_donald": report.cragg_donald,
        "cluster": vcmr.as_ref().and_then(|v| v.cluster).map(|c| json!({
            "groups": c.groups,
            "correction": c.correction,
        })),
        "flags": report.flags,
    });
    emit(&doc)
}

pub fn psiv_text(
    design: &DesignMatrices,
    logit: &LogitFit,
    est: &EstimateResult,
    var: &VarianceResult,
    summary: &LoadSummary,
) {
    println!(
        "propensity-score IV  (n = {}, dropped rows = {})",
        design.n(),
        summary.rows_dropped
    );
    println!("{:-<56}", "");
    println!(
        "logit first stage: converged in {} iterations (score norm {})",
        logit.iterations,
        sig(logit.gradient_norm, 6)
    );
    for (i, name) in design.z_names.iter().enumerate() {
        println!("  {:<12} {:>12}", name, sig(logit.coefficients[i], 6));
    }
    println!("{:-<56}", "");
    println!("{:<12} {:>12} {:>12}", "variable", "estimate", "se");
    for (i, name) in design.x_names.iter().enumerate() {
        println!(
            "{:<12} {:>12} {:>12}",
            name,
            sig(est.beta[i], 6),
            sig(var.se[i], 6)
        );
    }
}

pub fn psiv_json(
    schema: u32,
    design: &DesignMatrices,
    logit: &LogitFit,
    est: &EstimateResult,
    var: &VarianceResult,
    summary: &LoadSummary,
) -> Result<()> {
    let rho_index = design.n_covariates;
    let doc = json!({
        "schema_version": schema,
        "command": "psiv",
        "n": design.n(),
        "rows_dropped": summary.rows_dropped,
        "logit": {
            "coefficients": design.z_names.iter().enumerate().map(|(i, n)| json!({
                "name": n,
                "estimate": logit.coefficients[i],
            })).collect::<Vec<_>>(),
            "iterations": logit.iterations,
            "gradient_norm": logit.gradient_norm,
            "converged": logit.converged,
        },
        "coefficients": design.x_names.iter().enumerate().map(|(i, n)| json!({
            "name": n,
            "estimate": est.beta[i],
            "se": var.se[i],
        })).collect::<Vec<_>>(),
        "rho": est.beta[rho_index],
        "se": var.se[rho_index],
    });
    emit(&doc)
}

pub fn bootstrap_text(
    name: &str,
    estimate: f64,
    se: f64,
    result: &BootstrapResult,
    ci: &PercentileTInterval,
    seed: u64,
    seed_generated: bool,
) {
    if seed_generated {
        println!("seed: {seed}");
    }
    println!(
        "percentile-t bootstrap for `{name}`  (B = {}, {})",
        result.t_stats.len(),
        if result.clustered { "cluster resampling" } else { "row resampling" }
    );
    println!("estimate = {}, se = {}", sig(estimate, 6), sig(se, 6));
    println!("{:-<56}", "");
    println!(
        "{:>6} {:>12} {:>12} {:>12}",
        "level", "symmetric", "lower", "upper"
    );
    for cv in &result.critical_values {
        println!(
            "{:>6} {:>12} {:>12} {:>12}",
            cv.level,
            sig(cv.symmetric, 6),
            sig(cv.lower, 6),
            sig(cv.upper, 6)
        );
    }
    println!("{:-<56}", "");
    println!(
        "{}% CI equal-tailed: [{}, {}]",
        sig(100.0 * (1.0 - ci.level), 4),
        sig(ci.equal_tailed.0, 6),
        sig(ci.equal_tailed.1, 6)
    );
    println!(
        "{}% CI symmetric:    [{}, {}]",
        sig(100.0 * (1.0 - ci.level), 4),
        sig(ci.symmetric.0, 6),
        sig(ci.symmetric.1, 6)
    );
    if result.failures > 0 {
        println!(
            "redrawn degenerate resamples: {}{}",
            result.failures,
            if result.high_failure_warning {
                "  (warning: above 5% of B)"
            } else {
                ""
            }
        );
    }
}

pub fn bootstrap_json(
    schema: u32,
    name: &str,
    estimate: f64,
    se: f64,
    result: &BootstrapResult,
    ci: &PercentileTInterval,
    seed: u64,
) -> Result<()> {
    let doc = json!({
        "schema_version": schema,
        "command": "bootstrap",
        "coefficient": name,
        "estimate": estimate,
        "se": se,
        "seed": seed,
        "replicates": result.t_stats.len(),
        "clustered": result.clustered,
        "failures": result.failures,
        "high_failure_warning": result.high_failure_warning,
        "critical_values": result.critical_values.iter().map(|cv| json!({
            "level": cv.level,
            "symmetric": cv.symmetric,
            "lower": cv.lower,
            "upper": cv.upper,
        })).collect::<Vec<_>>(),
        "ci": {
            "level": ci.level,
            "equal_tailed": [ci.equal_tailed.0, ci.equal_tailed.1],
            "symmetric": [ci.symmetric.0, ci.symmetric.1],
        },
    });
    emit(&doc)
}

pub fn simulate_summary_json(schema: u32, report: &MonteCarloReport, seed: u64) -> Result<String> {
    let doc = json!({
        "schema_version": schema,
        "command": "simulate",
        "seed": seed,
        "requested": report.requested,
        "completed": report.completed,
        "skipped": report.skipped,
        "rho0": report.rho0,
        "mean_rho": report.mean_rho,
        "sd_rho": report.sd_rho,
        "mean_se_c": report.mean_se_c,
        "mean_se_mr": report.mean_se_mr,
        "j_rejection_rate": report.j_rejection_rate,
        "coverage_c": report.coverage_c,
        "coverage_mr": report.coverage_mr,
        "j_level": report.options.j_level,
        "ci_level": report.options.ci_level,
    });
    serde_json::to_string_pretty(&doc).map_err(|e| Error::Config(e.to_string()))
}

pub fn simulate_text(report: &MonteCarloReport) {
    println!(
        "Monte Carlo: {} completed, {} skipped (of {})",
        report.completed, report.skipped, report.requested
    );
    println!("{:-<56}", "");
    println!("population rho0:        {}", sig(report.rho0, 6));
    println!("mean rho_hat:           {}", sig(report.mean_rho, 6));
    println!("sd rho_hat:             {}", sig(report.sd_rho, 6));
    println!("mean se (C):            {}", sig(report.mean_se_c, 6));
    println!("mean se (MR):           {}", sig(report.mean_se_mr, 6));
    println!(
        "J rejection at {}%:      {}",
        sig(100.0 * report.options.j_level, 4),
        sig(report.j_rejection_rate, 6)
    );
    println!(
        "coverage at {}% (C/MR):  {} / {}",
        sig(100.0 * report.options.ci_level, 4),
        sig(report.coverage_c, 6),
        sig(report.coverage_mr, 6)
    );
}

fn emit(doc: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(doc).map_err(|e| Error::Config(e.to_string()))?;
    println!("{text}");
    Ok(())
}
