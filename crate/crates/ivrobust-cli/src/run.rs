//! Subcommand implementations.

use std::fs;
use std::path::Path;

use ivrobust::diagnostics::{self, JTestOptions};
use ivrobust::error::{Error, Result};
use ivrobust::simulator::{self, MonteCarloOptions};
use ivrobust::variance::{sigma_c, sigma_cmr, sigma_mr, VarianceResult};
use ivrobust::{
    bootstrap_t, build_design, fit_2sls, fit_logit, load_csv, percentile_t_ci, psiv_estimate,
    psiv_variance, CsvOptions, DesignMatrices, LoadSummary, ModelSpec,
};
use rand::Rng;

use crate::output;
use crate::{BootstrapArgs, DataArgs, EstimateArgs, Format, PsivArgs, SimulateArgs, Vce};

pub const SCHEMA_VERSION: u32 = 1;

fn parse_data(args: &DataArgs) -> Result<(DesignMatrices, LoadSummary)> {
    let mut delim_buf = [0u8; 4];
    let delim_str = args.delimiter.encode_utf8(&mut delim_buf);
    if delim_str.len() != 1 {
        return Err(Error::Config("delimiter must be a single byte".into()));
    }
    let options = CsvOptions {
        delimiter: delim_str.as_bytes()[0],
        na_token: args.na.clone(),
    };
    let (data, summary) = load_csv(&args.data, &options)?;
    let covariates: Vec<String> = args
        .covariates
        .iter()
        .filter(|s| !s.is_empty())
        .cloned()
        .collect();
    let mut spec = ModelSpec::new(
        args.outcome.clone(),
        args.endogenous.clone(),
        args.instruments.clone(),
    )
    .with_covariates(covariates);
    if let Some(cluster) = &args.cluster {
        spec = spec.with_cluster(cluster.clone());
    }
    if args.no_constant {
        spec = spec.without_constant();
    }
    let design = build_design(&data, &spec)?;
    Ok((design, summary))
}

pub fn estimate(args: EstimateArgs) -> Result<()> {
    let (design, summary) = parse_data(&args.data)?;
    let est = fit_2sls(&design)?;

    let want_c = matches!(args.vce, Vce::Both | Vce::C);
    let want_mr = matches!(args.vce, Vce::Both | Vce::Mr);
    let want_cmr = matches!(args.vce, Vce::ClusterMr) || args.data.cluster.is_some();
    let vc = if want_c { Some(sigma_c(&est, &design)?) } else { None };
    let vmr = if want_mr { Some(sigma_mr(&est, &design)?) } else { None };
    let vcmr: Option<VarianceResult> = if want_cmr {
        Some(sigma_cmr(&est, &design, !args.no_cluster_correction)?)
    } else {
        None
    };

    let j = diagnostics::j_test_with(
        &est,
        &design,
        JTestOptions {
            clustered: args.data.cluster.is_some(),
            centered: !args.uncentered_j,
        },
    )?;
    let mut report = diagnostics::report(&est, &design, args.data.cluster.is_some())?;
    report.j = j;

    match args.format {
        Format::Text => output::estimate_text(&design, &est, &summary, &vc, &vmr, &vcmr, &report),
        Format::Json => output::estimate_json(
            SCHEMA_VERSION,
            &design,
            &est,
            &summary,
            &vc,
            &vmr,
            &vcmr,
            &report,
        )?,
        Format::Csv => return Err(csv_format_error()),
    }
    Ok(())
}

fn csv_format_error() -> Error {
    Error::Config("csv output format is only available for the simulate subcommand".into())
}

pub fn psiv(args: PsivArgs) -> Result<()> {
    let (design, summary) = parse_data(&args.data)?;
    let logit = fit_logit(&design)?;
    let est = psiv_estimate(&design, &logit)?;
    let var = psiv_variance(&design, &logit, &est)?;
    match args.format {
        Format::Text => output::psiv_text(&design, &logit, &est, &var, &summary),
        Format::Json => output::psiv_json(SCHEMA_VERSION, &design, &logit, &est, &var, &summary)?,
        Format::Csv => return Err(csv_format_error()),
    }
    Ok(())
}

fn resolve_seed(seed: Option<u64>) -> (u64, bool) {
    match seed {
        Some(s) => (s, false),
        None => (rand::rng().random(), true),
    }
}

pub fn bootstrap(args: BootstrapArgs) -> Result<()> {
    let (design, _) = parse_data(&args.data)?;
    let coefficient_name = args
        .coefficient
        .clone()
        .unwrap_or_else(|| args.data.endogenous[0].clone());
    let coefficient = design
        .x_names
        .iter()
        .position(|n| *n == coefficient_name)
        .ok_or_else(|| {
            Error::Config(format!(
                "coefficient `{coefficient_name}` is not a regressor; choose one of: {}",
                design.x_names.join(", ")
            ))
        })?;
    if args.clustered && args.data.cluster.is_none() {
        return Err(Error::Spec("cluster id required for the clustered bootstrap".into()));
    }
    let (seed, generated) = resolve_seed(args.seed);

    let est = fit_2sls(&design)?;
    let base_var = if args.clustered {
        sigma_cmr(&est, &design, true)?
    } else {
        sigma_mr(&est, &design)?
    };
    let result = bootstrap_t(&design, coefficient, args.replicates, seed, args.clustered)?;
    let ci = percentile_t_ci(
        &result,
        est.beta[coefficient],
        base_var.se[coefficient],
        args.level,
    )?;

    match args.format {
        Format::Text => output::bootstrap_text(
            &coefficient_name,
            est.beta[coefficient],
            base_var.se[coefficient],
            &result,
            &ci,
            seed,
            generated,
        ),
        Format::Json => output::bootstrap_json(
            SCHEMA_VERSION,
            &coefficient_name,
            est.beta[coefficient],
            base_var.se[coefficient],
            &result,
            &ci,
            seed,
        )?,
        Format::Csv => return Err(csv_format_error()),
    }
    Ok(())
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let raw = fs::read_to_string(&args.config)
        .map_err(|e| Error::Config(format!("{}: {e}", args.config.display())))?;
    let config: simulator::DgpConfig = serde_json::from_str(&raw)
        .map_err(|e| Error::Config(format!("{}: {e}", args.config.display())))?;
    config.validate()?;
    let (seed, generated) = resolve_seed(args.seed);

    let report = simulator::run_monte_carlo(
        &config,
        args.replications,
        MonteCarloOptions::default(),
        seed,
    )?;

    if let Some(path) = &args.out_replicates {
        write_replicates(&report, path)?;
    }
    let summary_json = output::simulate_summary_json(SCHEMA_VERSION, &report, seed)?;
    if let Some(path) = &args.out_summary {
        fs::write(path, format!("{summary_json}\n"))
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    }

    match args.format {
        Format::Text => {
            if generated {
                println!("seed: {seed}");
            }
            output::simulate_text(&report);
        }
        Format::Csv => simulator::write_replicate_csv(&report, std::io::stdout().lock())?,
        Format::Json => println!("{summary_json}"),
    }
    Ok(())
}

fn write_replicates(report: &simulator::MonteCarloReport, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    simulator::write_replicate_csv(report, file)
}
