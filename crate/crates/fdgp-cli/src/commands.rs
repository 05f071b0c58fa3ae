//! Subcommand implementations.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use fdgp::calibrate::{wls_fit, CalibrationResult};
use fdgp::dataset::{CsvColumns, DensitySpeedDataset};
use fdgp::gpr::{
    default_gp_config, gp_fit_predict, log_marginal_likelihood, optimize_hyperparameters,
    EXACT_GPR_SOFT_LIMIT,
};
use fdgp::kernel::KernelKind;
use fdgp::metrics::{report, MetricReport};
use fdgp::models::{lookup, registry, FDModel};
use fdgp::sampling::{SamplerKind, SamplerSpec};
use fdgp::sgpr::{optimize_sgpr_hyperparameters, sgpr_fit, sgpr_predict, SparseFit};

use crate::util::{parse_list, parse_range, parse_usize_list, CliError};
use crate::{
    CalibrateArgs, DataArgs, EvaluateArgs, FitGpArgs, FitSgprArgs, PredictArgs, SampleArgs,
    SweepArgs,
};

fn load_data(args: &DataArgs) -> Result<DensitySpeedDataset, CliError> {
    let columns = CsvColumns {
        density: args.density_col.clone(),
        speed: args.speed_col.clone(),
    };
    Ok(DensitySpeedDataset::load_csv(&args.data, &columns)?)
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)?;
    Ok(())
}

/// Prior resolution shared by the GP commands: a model document file wins,
/// then a registry name (calibrated on the data by weighted least squares),
/// then none.
fn resolve_prior(
    name: &str,
    file: Option<&Path>,
    data: &DensitySpeedDataset,
    bins: usize,
    seed: u64,
) -> Result<Option<FDModel>, CliError> {
    if let Some(path) = file {
        let doc = fs::read_to_string(path)?;
        return Ok(Some(FDModel::from_document(&doc)?));
    }
    if name.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let spec = lookup(name)?;
    let weights = data.compute_weights(bins)?;
    let fit = wls_fit(spec, data, &weights, None, seed)?;
    if !fit.converged {
        eprintln!(
            "warning: calibration of {} stopped at gradient norm {:.3e}",
            spec.name, fit.gradient_norm
        );
    }
    Ok(Some(fit.model))
}

fn calibration_row(result: &CalibrationResult) -> String {
    let params: Vec<String> = result
        .model
        .spec()
        .params
        .iter()
        .zip(result.model.params())
        .map(|(p, v)| format!("{}={}", p.name, v))
        .collect();
    format!(
        "{},\"{}\",{},{},{},{}",
        result.model.name(),
        params.join("; "),
        result.objective,
        result.gradient_norm,
        result.iterations,
        result.converged
    )
}

pub fn calibrate(args: CalibrateArgs) -> Result<(), CliError> {
    let data = load_data(&args.data)?;
    let weights = if args.weighted {
        data.compute_weights(args.bins)?
    } else {
        data.unit_weights()
    };

    let specs: Vec<&'static fdgp::models::FDModelSpec> = if args.model.eq_ignore_ascii_case("all")
    {
        registry().iter().collect()
    } else {
        vec![lookup(&args.model)?]
    };

    let mut results = Vec::new();
    for spec in specs {
        let fit = wls_fit(spec, &data, &weights, None, args.seed)?;
        println!(
            "{:<22} {:<55} objective={:<14.6} converged={}",
            spec.name,
            fit.model
                .spec()
                .params
                .iter()
                .zip(fit.model.params())
                .map(|(p, v)| format!("{}={:.6}", p.name, v))
                .collect::<Vec<_>>()
                .join(" "),
            fit.objective,
            fit.converged
        );
        if let Some(note) = spec.nonphysical_note {
            println!("{:<22} note: {note}", "");
        }
        results.push(fit);
    }

    if let Some(out) = &args.out {
        ensure_dir(out)?;
        let mut csv = String::from("model,parameters,objective,gradient_norm,iterations,converged\n");
        for r in &results {
            csv.push_str(&calibration_row(r));
            csv.push('\n');
        }
        fs::write(out.join("calibration.csv"), csv)?;
        for r in &results {
            fs::write(out.join(format!("{}.txt", r.model.name())), r.to_document())?;
        }
        if args.weighted {
            let mut buf = Vec::new();
            DensitySpeedDataset::write_weights_csv(&weights, &mut buf)?;
            fs::write(out.join("weights.csv"), buf)?;
        }
        println!("wrote {}", out.join("calibration.csv").display());
    }
    Ok(())
}

pub fn fit_gp(args: FitGpArgs) -> Result<(), CliError> {
    let data = load_data(&args.data)?;
    if data.len() > EXACT_GPR_SOFT_LIMIT {
        eprintln!(
            "warning: exact GP regression is cubic in n; n = {} exceeds the practical limit of {} (consider fit-sgpr)",
            data.len(),
            EXACT_GPR_SOFT_LIMIT
        );
    }
    let kind = KernelKind::parse(&args.kernel)?;
    let prior = resolve_prior(
        &args.prior,
        args.prior_file.as_deref(),
        &data,
        fdgp::dataset::DEFAULT_WEIGHT_BINS,
        args.seed,
    )?;
    let mut config = default_gp_config(kind, &data)?;
    config.mean_function = prior;

    let before = log_marginal_likelihood(&config, &data)?;
    let config = optimize_hyperparameters(&config, &data, args.budget)?;
    let after = log_marginal_likelihood(&config, &data)?;
    println!(
        "log marginal likelihood: {before:.4} -> {after:.4} (kernel {}, sigma {:.4}, noise sd {:.4})",
        kind,
        config.kernel.signal_sigma,
        config.noise_variance.sqrt()
    );

    let queries = parse_range(&args.queries)?;
    let posterior = gp_fit_predict(&config, &data, &queries)?;
    ensure_dir(&args.out)?;
    let mut buf = Vec::new();
    posterior.write_csv(&mut buf)?;
    fs::write(args.out.join("posterior.csv"), buf)?;

    let mut doc = String::new();
    doc.push_str("kind = gp-config\n");
    doc.push_str(&format!("kernel = {}\n", config.kernel.kind));
    doc.push_str(&format!("signal_sigma = {}\n", config.kernel.signal_sigma));
    doc.push_str(&format!("length_scale = {}\n", config.kernel.length_scale));
    doc.push_str(&format!("noise_variance = {}\n", config.noise_variance));
    doc.push_str(&format!("lml = {after}\n"));
    match &config.mean_function {
        None => doc.push_str("prior = none\n"),
        Some(m) => {
            doc.push_str(&format!("prior = {}\n", m.name()));
            for (p, v) in m.spec().params.iter().zip(m.params()) {
                doc.push_str(&format!("prior.{} = {}\n", p.name, v));
            }
        }
    }
    fs::write(args.out.join("gp_config.txt"), doc)?;
    println!("wrote {}", args.out.join("posterior.csv").display());
    Ok(())
}

fn sampler_spec(kind_str: &str, seed: u64, bins: usize, max_iters: usize) -> Result<SamplerSpec, CliError> {
    let kind = SamplerKind::parse(kind_str)?;
    let mut spec = SamplerSpec::new(kind, seed);
    spec.weight_bins = bins;
    spec.max_iters = max_iters;
    Ok(spec)
}

pub fn fit_sgpr(args: FitSgprArgs) -> Result<(), CliError> {
    let data = load_data(&args.data)?;
    let kind = KernelKind::parse(&args.kernel)?;
    let prior = resolve_prior(
        &args.prior,
        args.prior_file.as_deref(),
        &data,
        args.bins,
        args.seed,
    )?;
    let spec = sampler_spec(
        &args.sampler,
        args.seed,
        args.bins,
        fdgp::sampling::DEFAULT_CLUSTER_ITERS,
    )?;
    let inducing = spec.draw(&data, args.m)?;

    let mut config = default_gp_config(kind, &data)?;
    config.mean_function = prior;
    let config = optimize_sgpr_hyperparameters(&config, &data, &inducing, args.budget)?;
    let fit = sgpr_fit(&config, &data, &inducing)?;
    println!(
        "bound {:.4} (m = {}, sampler {}, kernel {}, sigma {:.4}, noise sd {:.4})",
        fit.bound,
        args.m,
        spec.kind,
        kind,
        config.kernel.signal_sigma,
        config.noise_variance.sqrt()
    );

    ensure_dir(&args.out)?;
    fs::write(args.out.join("fit.txt"), fit.to_document())?;
    println!("wrote {}", args.out.join("fit.txt").display());

    if let Some(queries) = &args.queries {
        let grid = parse_range(queries)?;
        let posterior = sgpr_predict(&fit, &grid);
        let mut buf = Vec::new();
        posterior.write_csv(&mut buf)?;
        fs::write(args.out.join("posterior.csv"), buf)?;
        println!("wrote {}", args.out.join("posterior.csv").display());
    }
    Ok(())
}

pub fn predict(args: PredictArgs) -> Result<(), CliError> {
    let doc = fs::read_to_string(&args.fit)?;
    let fit = SparseFit::from_document(&doc)?;
    let queries = parse_range(&args.queries)?;
    let posterior = sgpr_predict(&fit, &queries);

    ensure_dir(&args.out)?;
    let mut buf = Vec::new();
    posterior.write_csv(&mut buf)?;
    fs::write(args.out.join("posterior.csv"), buf)?;
    println!("wrote {}", args.out.join("posterior.csv").display());

    if args.surface {
        if args.z_points < 3 {
            return Err(CliError::Usage("--z-points must be at least 3".into()));
        }
        let mut surface = String::from("density,speed,probability_density\n");
        for (i, &density) in posterior.query_densities.iter().enumerate() {
            let mean = posterior.mean[i];
            let var = posterior.predictive_variance[i];
            let sd = var.sqrt().max(1e-12);
            let lo = mean - 5.0 * sd;
            let hi = mean + 5.0 * sd;
            for k in 0..args.z_points {
                let speed = lo + (hi - lo) * k as f64 / (args.z_points - 1) as f64;
                let z = (speed - mean) / sd;
                let pdf = (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
                surface.push_str(&format!("{density},{speed},{pdf}\n"));
            }
        }
        fs::write(args.out.join("surface.csv"), surface)?;
        println!("wrote {}", args.out.join("surface.csv").display());
    }
    Ok(())
}

fn metric_csv_row(label: &str, fit: &SparseFit, m: MetricReport) -> String {
    format!(
        "{label},{},{},{},{},{},{},{}\n",
        fit.config
            .mean_function
            .as_ref()
            .map_or("none", |p| p.name()),
        fit.inducing.provenance,
        fit.inducing.len(),
        m.n_points,
        m.rmse,
        m.mape_percent,
        m.pwci
    )
}

pub fn evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let data = load_data(&args.data)?;
    let doc = fs::read_to_string(&args.fit)?;
    let fit = SparseFit::from_document(&doc)?;
    let densities = data.densities();
    let posterior = sgpr_predict(&fit, &densities);
    let metrics = report(&posterior, &data, args.level)?;
    println!(
        "n = {}, rmse = {:.4} mph, mape = {:.4}% ({} zero-speed rows excluded), pwci@{:.0}% = {:.4}%",
        metrics.n_points,
        metrics.rmse,
        metrics.mape_percent,
        metrics.mape_excluded,
        args.level * 100.0,
        metrics.pwci * 100.0
    );
    if let Some(out) = &args.out {
        let header = "source,prior,provenance,m,n,rmse,mape_percent,pwci\n";
        let exists = out.exists();
        let mut file = fs::OpenOptions::new().create(true).append(true).open(out)?;
        if !exists {
            file.write_all(header.as_bytes())?;
        }
        file.write_all(
            metric_csv_row(&args.data.data.display().to_string(), &fit, metrics).as_bytes(),
        )?;
        println!("appended to {}", out.display());
    }
    Ok(())
}

pub fn sample(args: SampleArgs) -> Result<(), CliError> {
    let data = load_data(&args.data)?;
    let spec = sampler_spec(&args.sampler, args.seed, args.bins, args.max_iters)?;
    let set = spec.draw(&data, args.m)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut buf = Vec::new();
    set.write_indices_csv(&mut buf)?;
    fs::write(&args.out, buf)?;
    println!(
        "{}: {} of {} rows -> {}",
        set.provenance,
        set.len(),
        data.len(),
        args.out.display()
    );
    Ok(())
}

struct SweepCell {
    index: usize,
    prior: String,
    sampler: SamplerKind,
    m: usize,
    seed: u64,
}

struct SweepRow {
    cell: SweepCell,
    outcome: Result<(MetricReport, f64), String>,
    wall_ms: u128,
}

pub fn sweep(args: SweepArgs) -> Result<(), CliError> {
    let data = load_data(&args.data)?;
    let kind = KernelKind::parse(&args.kernel)?;
    let priors = parse_list(&args.priors);
    let samplers: Vec<SamplerKind> = parse_list(&args.samplers)
        .iter()
        .map(|s| SamplerKind::parse(s))
        .collect::<Result<_, _>>()?;
    let sizes = parse_usize_list(&args.m)?;
    if priors.is_empty() || samplers.is_empty() || sizes.is_empty() {
        return Err(CliError::Usage("sweep grid is empty".into()));
    }
    if args.jobs < 1 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let shared_hypers = match args.hypers.as_str() {
        "per-cell" => false,
        "shared" => true,
        other => {
            return Err(CliError::Usage(format!(
                "--hypers must be per-cell or shared, got \"{other}\""
            )))
        }
    };
    if !(0.0..1.0).contains(&args.holdout) {
        return Err(CliError::Usage(format!(
            "--holdout must lie in [0, 1), got {}",
            args.holdout
        )));
    }

    // Default protocol fits and scores on the full dataset; a positive
    // holdout splits it and scores on the held-out part instead.
    let (train, eval_data) = if args.holdout > 0.0 {
        let (tr, te) = data.train_test_split(args.seed, 1.0 - args.holdout)?;
        if tr.is_empty() || te.is_empty() {
            return Err(CliError::Usage(format!(
                "holdout {} leaves an empty split for n = {}",
                args.holdout,
                data.len()
            )));
        }
        (tr, te)
    } else {
        (data.clone(), data.clone())
    };

    // Calibrate each named prior once on the training data.
    let mut prior_models: Vec<Option<FDModel>> = Vec::new();
    for name in &priors {
        prior_models.push(resolve_prior(name, None, &train, args.bins, args.seed)?);
    }

    let mut cells = Vec::new();
    let mut index = 0usize;
    for (pi, prior) in priors.iter().enumerate() {
        for sampler in &samplers {
            for &m in &sizes {
                cells.push((
                    SweepCell {
                        index,
                        prior: prior.clone(),
                        sampler: *sampler,
                        m,
                        // one reproducible stream per cell
                        seed: args.seed.wrapping_add(1_000_003 * index as u64),
                    },
                    prior_models[pi].clone(),
                ));
                index += 1;
            }
        }
    }

    let base_config = default_gp_config(kind, &train)?;
    let densities = eval_data.densities();
    let level = args.level;
    let budget = args.budget;
    let bins = args.bins;

    // Shared mode optimizes the hyperparameters once per prior, on that
    // prior's first grid cell, and reuses the result across its cells.
    let mut shared_configs: Vec<Option<fdgp::gpr::GPConfig>> = vec![None; priors.len()];
    if shared_hypers {
        let per_prior = samplers.len() * sizes.len();
        for (pi, model) in prior_models.iter().enumerate() {
            let (cell, _) = &cells[pi * per_prior];
            let mut spec = SamplerSpec::new(cell.sampler, cell.seed);
            spec.weight_bins = bins;
            let inducing = spec.draw(&train, cell.m)?;
            let mut config = base_config.clone();
            config.mean_function = model.clone();
            shared_configs[pi] =
                Some(optimize_sgpr_hyperparameters(&config, &train, &inducing, budget)?);
        }
    }
    let per_prior = samplers.len() * sizes.len();
    let shared_configs = &shared_configs;

    let run_cell = |(cell, prior_model): (SweepCell, Option<FDModel>)| -> SweepRow {
        let start = Instant::now();
        let outcome = (|| -> Result<(MetricReport, f64), String> {
            let mut spec = SamplerSpec::new(cell.sampler, cell.seed);
            spec.weight_bins = bins;
            let inducing = spec.draw(&train, cell.m).map_err(|e| e.to_string())?;
            let config = match &shared_configs[cell.index / per_prior] {
                Some(shared) => shared.clone(),
                None => {
                    let mut config = base_config.clone();
                    config.mean_function = prior_model;
                    optimize_sgpr_hyperparameters(&config, &train, &inducing, budget)
                        .map_err(|e| e.to_string())?
                }
            };
            let fit = sgpr_fit(&config, &train, &inducing).map_err(|e| e.to_string())?;
            let posterior = sgpr_predict(&fit, &densities);
            let metrics = report(&posterior, &eval_data, level).map_err(|e| e.to_string())?;
            Ok((metrics, fit.bound))
        })();
        SweepRow {
            cell,
            outcome,
            wall_ms: start.elapsed().as_millis(),
        }
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    let mut rows: Vec<SweepRow> = pool.install(|| {
        use rayon::prelude::*;
        cells.into_par_iter().map(run_cell).collect()
    });
    rows.sort_by_key(|r| r.cell.index);

    ensure_dir(&args.out)?;
    let mut sweep_csv = String::from("prior,sampler,m,seed,rmse,mape,pwci,bound,wall_ms\n");
    let mut curves_csv = String::from("prior,sampler,m,metric,value\n");
    for row in &rows {
        let c = &row.cell;
        match &row.outcome {
            Ok((metrics, bound)) => {
                sweep_csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    c.prior,
                    c.sampler.code(),
                    c.m,
                    c.seed,
                    metrics.rmse,
                    metrics.mape_percent,
                    metrics.pwci,
                    bound,
                    row.wall_ms
                ));
                for (name, value) in [
                    ("rmse", metrics.rmse),
                    ("mape", metrics.mape_percent),
                    ("pwci", metrics.pwci),
                ] {
                    curves_csv.push_str(&format!(
                        "{},{},{},{name},{value}\n",
                        c.prior,
                        c.sampler.code(),
                        c.m
                    ));
                }
                println!(
                    "cell {:>3}: prior={:<22} sampler={:<3} m={:<6} rmse={:.4} mape={:.4}% pwci={:.4} ({} ms)",
                    c.index,
                    c.prior,
                    c.sampler.code(),
                    c.m,
                    metrics.rmse,
                    metrics.mape_percent,
                    metrics.pwci * 100.0,
                    row.wall_ms
                );
            }
            Err(msg) => {
                sweep_csv.push_str(&format!(
                    "{},{},{},{},,,,,{}\n",
                    c.prior,
                    c.sampler.code(),
                    c.m,
                    c.seed,
                    row.wall_ms
                ));
                eprintln!(
                    "cell {}: prior={} sampler={} m={} failed: {msg}",
                    c.index,
                    c.prior,
                    c.sampler.code(),
                    c.m
                );
            }
        }
    }
    fs::write(args.out.join("sweep.csv"), sweep_csv)?;
    fs::write(args.out.join("curves.csv"), curves_csv)?;
    println!("wrote {}", args.out.join("sweep.csv").display());
    println!("wrote {}", args.out.join("curves.csv").display());
    Ok(())
}
