//! Sparse variational GP regression with inducing points.
//!
//! The zero-mean path computes the optimal variational distribution through
//! a whitened system: with `L = chol(K_mm)` and `A = L^-1 K_mn / sigma`,
//! everything reduces to the well-conditioned `B = I + A A^T`. The
//! prior-mean path implements the direct formulas instead, assembling
//! `P = K_mm + K_mn K_nm / sigma^2` and `Sigma* = K_mm P^-1 K_mm`,
//! `mu* = m(x_m) + Sigma* (K_mm^-1 K_mn (y - m(x)) / sigma^2)`. The two
//! routes agree through the residual trick and are tested against each
//! other; the collapsed bound
//! `log N(y - m(x) | 0, sigma^2 I + Q_nn) - Tr(K_nn - Q_nn) / (2 sigma^2)`
//! is always evaluated through the whitened system and never forms an n x n
//! inverse.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::dataset::DensitySpeedDataset;
use crate::gpr::{search_hyperparameters, GPConfig, GPPosterior, GpError};
use crate::kernel::{self, KernelKind, KernelParams};
use crate::linalg::{gramian, CholFactor};
use crate::models::FDModel;
use crate::parallel;

const PREDICT_CHUNK: usize = 2048;

/// Inducing inputs plus where they came from. `indices` point back into the
/// dataset the sample was drawn from (absent for sets loaded from a fit
/// document or built directly from inputs).
#[derive(Debug, Clone)]
pub struct InducingSet {
    pub inputs: Vec<f64>,
    pub indices: Option<Vec<usize>>,
    pub provenance: String,
}

impl InducingSet {
    pub fn from_inputs(inputs: Vec<f64>, provenance: impl Into<String>) -> Self {
        InducingSet {
            inputs,
            indices: None,
            provenance: provenance.into(),
        }
    }

    pub fn from_indices(
        data: &DensitySpeedDataset,
        indices: Vec<usize>,
        provenance: impl Into<String>,
    ) -> Self {
        let inputs = indices.iter().map(|&i| data.pairs()[i].density).collect();
        InducingSet {
            inputs,
            indices: Some(indices),
            provenance: provenance.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Index list as a single-column CSV for exact experiment reproduction.
    pub fn write_indices_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "index")?;
        if let Some(indices) = &self.indices {
            for i in indices {
                writeln!(w, "{i}")?;
            }
        }
        Ok(())
    }
}

/// Optimal variational distribution over the inducing values.
#[derive(Debug, Clone)]
pub struct VariationalPosterior {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

/// A fitted sparse GP: configuration, inducing set, variational
/// distribution, and the collapsed bound value, plus cached factors for
/// prediction.
#[derive(Debug, Clone)]
pub struct SparseFit {
    pub config: GPConfig,
    pub inducing: InducingSet,
    pub variational: VariationalPosterior,
    pub bound: f64,
    kmm_factor: CholFactor,
    mean_weights: DVector<f64>,
}

struct WhitenedSystem {
    kmm_factor: CholFactor,
    lb: CholFactor,
    c: DVector<f64>,
    bound: f64,
    noise_sigma: f64,
}

fn validate_inducing(inducing: &InducingSet, xs: &[f64]) -> Result<(), GpError> {
    let n = xs.len();
    let m = inducing.len();
    if m < 1 || m > n {
        return Err(GpError::BadInducingSize { m, n });
    }
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-9 * (1.0 + hi.abs());
    for &v in &inducing.inputs {
        if v < lo - tol || v > hi + tol {
            return Err(GpError::InducingOutOfRange { value: v, lo, hi });
        }
    }
    Ok(())
}

fn whitened_system(
    kernel: &KernelParams,
    noise_variance: f64,
    inducing: &[f64],
    xs: &[f64],
    r: &DVector<f64>,
) -> Result<WhitenedSystem, GpError> {
    let n = xs.len();
    let m = inducing.len();
    let noise_sigma = noise_variance.sqrt();

    let kmm = kernel::gram(kernel, inducing, inducing);
    let kmm_factor = kmm.factorize()?;
    let kmn = kernel::gram(kernel, inducing, xs).entries;
    let a = kmm_factor.solve_lower_mat(&kmn)?.unscale(noise_sigma);

    let mut b = gramian(&a);
    for i in 0..m {
        b[(i, i)] += 1.0;
    }
    let lb = CholFactor::new(&b)?;

    let ar = &a * r;
    let c = lb.solve_lower_vec(&ar)?;

    let quad = (r.norm_squared() - c.norm_squared()) / noise_variance;
    let log_det = n as f64 * noise_variance.ln() + lb.log_det();
    let a_fro_sq: f64 = a.iter().map(|v| v * v).sum();
    let trace = n as f64 * kernel.prior_variance() - noise_variance * a_fro_sq;
    let bound = -0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * log_det
        - 0.5 * quad
        - trace / (2.0 * noise_variance);

    Ok(WhitenedSystem {
        kmm_factor,
        lb,
        c,
        bound,
        noise_sigma,
    })
}

impl WhitenedSystem {
    /// mu = K_mm Sigma K_mn r / sigma^2 = L L_B^-T c / sigma,
    /// A_m = K_mm Sigma K_mm = X^T X with X = L_B^-1 L^T.
    fn variational(&self) -> Result<VariationalPosterior, GpError> {
        let t = self.lb.solve_lower_tr_vec(&self.c)?;
        let mu = (self.kmm_factor.lower() * t).unscale(self.noise_sigma);
        let x = self
            .lb
            .solve_lower_mat(&self.kmm_factor.lower().transpose())?;
        let sigma = x.transpose() * x;
        Ok(VariationalPosterior { mu, sigma })
    }
}

/// Zero-mean sparse fit on raw (input, value) pairs. Values may be negative,
/// which makes this the entry point for residual workflows where a
/// deterministic model has already been subtracted from the speeds. Any
/// mean function on `config` is dropped.
pub fn sgpr_fit_values(
    config: &GPConfig,
    inputs: &[f64],
    values: &[f64],
    inducing: &InducingSet,
) -> Result<SparseFit, GpError> {
    if inputs.is_empty() {
        return Err(GpError::EmptyTrain);
    }
    if !crate::gpr::valid_variance(config.noise_variance) {
        return Err(GpError::BadNoise(config.noise_variance));
    }
    validate_inducing(inducing, inputs)?;
    let r = DVector::from_column_slice(values);
    let sys = whitened_system(
        &config.kernel,
        config.noise_variance,
        &inducing.inputs,
        inputs,
        &r,
    )?;
    let variational = sys.variational()?;
    let mean_weights = sys.kmm_factor.solve_vec(&variational.mu)?;
    Ok(SparseFit {
        config: GPConfig {
            kernel: config.kernel,
            noise_variance: config.noise_variance,
            mean_function: None,
        },
        inducing: inducing.clone(),
        variational,
        bound: sys.bound,
        kmm_factor: sys.kmm_factor,
        mean_weights,
    })
}

/// Fit a sparse GP on the training set. With no mean function this is the
/// whitened zero-mean path; with a prior model it runs the direct
/// prior-mean formulas (with the bound still evaluated through the whitened
/// system on the residuals).
pub fn sgpr_fit(
    config: &GPConfig,
    train: &DensitySpeedDataset,
    inducing: &InducingSet,
) -> Result<SparseFit, GpError> {
    if train.is_empty() {
        return Err(GpError::EmptyTrain);
    }
    let xs = train.densities();
    let Some(prior) = config.mean_function.clone() else {
        let ys = train.speeds();
        return sgpr_fit_values(config, &xs, &ys, inducing);
    };
    if !crate::gpr::valid_variance(config.noise_variance) {
        return Err(GpError::BadNoise(config.noise_variance));
    }
    validate_inducing(inducing, &xs)?;

    let r = config.residuals(train);
    let sys = whitened_system(
        &config.kernel,
        config.noise_variance,
        &inducing.inputs,
        &xs,
        &r,
    )?;

    // Direct route: P = K_mm + K_mn K_nm / sigma^2, Sigma* = K_mm P^-1 K_mm,
    // mu* = m(x_m) + Sigma* (K_mm^-1 K_mn r / sigma^2).
    let kmm = kernel::gram(&config.kernel, &inducing.inputs, &inducing.inputs);
    let kmm_factor = kmm.factorize()?;
    let kmn = kernel::gram(&config.kernel, &inducing.inputs, &xs).entries;
    let p = &kmm.entries + gramian(&kmn).unscale(config.noise_variance);
    let p_factor = CholFactor::new(&p)?;
    let pinv_kmm = p_factor.solve_mat(&kmm.entries)?;
    let sigma_star_raw = &kmm.entries * pinv_kmm;
    let sigma_star = (&sigma_star_raw + sigma_star_raw.transpose()).scale(0.5);

    let s = kmm_factor
        .solve_vec(&(&kmn * &r))?
        .unscale(config.noise_variance);
    let mean_m = DVector::from_iterator(
        inducing.len(),
        inducing.inputs.iter().map(|&d| prior.evaluate(d)),
    );
    let mu_star = &mean_m + &sigma_star * s;

    let mean_weights = kmm_factor.solve_vec(&(&mu_star - mean_m))?;
    Ok(SparseFit {
        config: config.clone(),
        inducing: inducing.clone(),
        variational: VariationalPosterior {
            mu: mu_star,
            sigma: sigma_star,
        },
        bound: sys.bound,
        kmm_factor,
        mean_weights,
    })
}

/// The collapsed variational bound for the configuration on this data,
/// without keeping the fit.
pub fn collapsed_bound(
    config: &GPConfig,
    train: &DensitySpeedDataset,
    inducing: &InducingSet,
) -> Result<f64, GpError> {
    if train.is_empty() {
        return Err(GpError::EmptyTrain);
    }
    let xs = train.densities();
    validate_inducing(inducing, &xs)?;
    let r = config.residuals(train);
    let sys = whitened_system(
        &config.kernel,
        config.noise_variance,
        &inducing.inputs,
        &xs,
        &r,
    )?;
    Ok(sys.bound)
}

/// `Tr(K_nn - Q_nn)`, the Nystrom residual trace penalizing the bound.
pub fn nystrom_residual_trace(
    kernel: &KernelParams,
    train: &DensitySpeedDataset,
    inducing: &InducingSet,
) -> Result<f64, GpError> {
    let xs = train.densities();
    let kmm = kernel::gram(kernel, &inducing.inputs, &inducing.inputs);
    let factor = kmm.factorize()?;
    let kmn = kernel::gram(kernel, &inducing.inputs, &xs).entries;
    let half = factor.solve_lower_mat(&kmn)?;
    let fro_sq: f64 = half.iter().map(|v| v * v).sum();
    Ok(xs.len() as f64 * kernel.prior_variance() - fro_sq)
}

/// Predict at the query densities from a fitted sparse GP.
pub fn sgpr_predict(fit: &SparseFit, queries: &[f64]) -> GPPosterior {
    let prior_var = fit.config.kernel.prior_variance();
    let mut mean = vec![0.0; queries.len()];
    let mut variance = vec![0.0; queries.len()];

    let chunks = parallel::map_chunks(queries.len(), PREDICT_CHUNK, |range| {
        let q = &queries[range.clone()];
        let k_mq = kernel::gram_seq(&fit.config.kernel, &fit.inducing.inputs, q).entries;
        let w = fit
            .kmm_factor
            .solve_mat(&k_mq)
            .expect("factor and gram dimensions agree");
        let sw = &fit.variational.sigma * &w;
        let mut mean_part = Vec::with_capacity(q.len());
        let mut var_part = Vec::with_capacity(q.len());
        for (j, &qd) in q.iter().enumerate() {
            let k_col = k_mq.column(j);
            let w_col = w.column(j);
            mean_part.push(fit.config.mean_at(qd) + k_col.dot(&fit.mean_weights));
            let term2 = k_col.dot(&w_col);
            let term3 = w_col.dot(&sw.column(j));
            let v = prior_var - term2 + term3;
            var_part.push(if v < 0.0 { 0.0 } else { v });
        }
        (range, mean_part, var_part)
    });
    for (range, mean_part, var_part) in chunks {
        mean[range.clone()].copy_from_slice(&mean_part);
        variance[range].copy_from_slice(&var_part);
    }

    let predictive_variance = variance
        .iter()
        .map(|v| v + fit.config.noise_variance)
        .collect();
    GPPosterior {
        query_densities: queries.to_vec(),
        mean,
        variance,
        predictive_variance,
    }
}

/// Maximize the collapsed bound over the kernel hyperparameters and noise
/// with the inducing inputs held fixed. The returned configuration never
/// scores below the input.
pub fn optimize_sgpr_hyperparameters(
    config: &GPConfig,
    train: &DensitySpeedDataset,
    inducing: &InducingSet,
    budget: usize,
) -> Result<GPConfig, GpError> {
    if train.is_empty() {
        return Err(GpError::EmptyTrain);
    }
    let (cfg, _) = search_hyperparameters(config, budget, |c| {
        collapsed_bound(c, train, inducing).ok()
    });
    Ok(cfg)
}

fn push_floats(line: &mut String, values: impl Iterator<Item = f64>) {
    let mut first = true;
    for v in values {
        if !first {
            line.push(' ');
        }
        let _ = write!(line, "{v}");
        first = false;
    }
}

impl SparseFit {
    /// Plain-text fit document. Floats print in shortest round-trip form,
    /// so a load reproduces predictions exactly.
    pub fn to_document(&self) -> String {
        let mut out = String::new();
        out.push_str("kind = sgpr-fit\n");
        let _ = writeln!(out, "kernel = {}", self.config.kernel.kind);
        let _ = writeln!(out, "signal_sigma = {}", self.config.kernel.signal_sigma);
        let _ = writeln!(out, "length_scale = {}", self.config.kernel.length_scale);
        let _ = writeln!(out, "noise_variance = {}", self.config.noise_variance);
        let _ = writeln!(out, "bound = {}", self.bound);
        match &self.config.mean_function {
            None => out.push_str("prior = none\n"),
            Some(model) => {
                let _ = writeln!(out, "prior = {}", model.name());
                for (spec, value) in model.spec().params.iter().zip(model.params()) {
                    let _ = writeln!(out, "prior.{} = {}", spec.name, value);
                }
            }
        }
        let _ = writeln!(out, "provenance = {}", self.inducing.provenance);
        let mut line = String::from("inducing = ");
        push_floats(&mut line, self.inducing.inputs.iter().cloned());
        out.push_str(&line);
        out.push('\n');
        if let Some(indices) = &self.inducing.indices {
            let mut line = String::from("indices = ");
            let mut first = true;
            for i in indices {
                if !first {
                    line.push(' ');
                }
                let _ = write!(line, "{i}");
                first = false;
            }
            out.push_str(&line);
            out.push('\n');
        }
        let mut line = String::from("mu = ");
        push_floats(&mut line, self.variational.mu.iter().cloned());
        out.push_str(&line);
        out.push('\n');
        let mut line = String::from("sigma = ");
        push_floats(&mut line, self.variational.sigma.transpose().iter().cloned());
        out.push_str(&line);
        out.push('\n');
        out
    }

    pub fn from_document(doc: &str) -> Result<SparseFit, GpError> {
        let mut fields: std::collections::HashMap<&str, &str> = std::collections::HashMap::new();
        for line in doc.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| GpError::BadDocument(format!("expected key = value, got \"{line}\"")))?;
            fields.insert(k.trim(), v.trim());
        }
        let get = |key: &str| {
            fields
                .get(key)
                .copied()
                .ok_or_else(|| GpError::BadDocument(format!("missing field \"{key}\"")))
        };
        let parse_f64 = |key: &str| -> Result<f64, GpError> {
            get(key)?
                .parse::<f64>()
                .map_err(|_| GpError::BadDocument(format!("bad number in \"{key}\"")))
        };
        let parse_floats = |key: &str| -> Result<Vec<f64>, GpError> {
            get(key)?
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| GpError::BadDocument(format!("bad number in \"{key}\"")))
                })
                .collect()
        };

        if get("kind")? != "sgpr-fit" {
            return Err(GpError::BadDocument("kind must be \"sgpr-fit\"".into()));
        }
        let kind = KernelKind::parse(get("kernel")?)
            .map_err(|e| GpError::BadDocument(e.to_string()))?;
        let kernel = KernelParams::new(kind, parse_f64("signal_sigma")?, parse_f64("length_scale")?)
            .map_err(|e| GpError::BadDocument(e.to_string()))?;
        let noise_variance = parse_f64("noise_variance")?;
        let bound = parse_f64("bound")?;

        let mean_function = match get("prior")? {
            "none" => None,
            name => {
                let spec = crate::models::lookup(name)
                    .map_err(|e| GpError::BadDocument(e.to_string()))?;
                let mut params = Vec::with_capacity(spec.params.len());
                for p in spec.params {
                    params.push(parse_f64(&format!("prior.{}", p.name))?);
                }
                Some(
                    FDModel::new(spec, params)
                        .map_err(|e| GpError::BadDocument(e.to_string()))?,
                )
            }
        };

        let inputs = parse_floats("inducing")?;
        let m = inputs.len();
        if m == 0 {
            return Err(GpError::BadDocument("empty inducing set".into()));
        }
        let indices = match fields.get("indices") {
            None => None,
            Some(text) => Some(
                text.split_whitespace()
                    .map(|t| {
                        t.parse::<usize>()
                            .map_err(|_| GpError::BadDocument("bad index".into()))
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            ),
        };
        let provenance = get("provenance")?.to_string();

        let mu_vals = parse_floats("mu")?;
        if mu_vals.len() != m {
            return Err(GpError::BadDocument(format!(
                "mu has {} entries, expected {m}",
                mu_vals.len()
            )));
        }
        let sigma_vals = parse_floats("sigma")?;
        if sigma_vals.len() != m * m {
            return Err(GpError::BadDocument(format!(
                "sigma has {} entries, expected {}",
                sigma_vals.len(),
                m * m
            )));
        }
        let mu = DVector::from_vec(mu_vals);
        let sigma = DMatrix::from_row_slice(m, m, &sigma_vals);

        let config = GPConfig::new(kernel, noise_variance, mean_function)?;
        let kmm = kernel::gram(&config.kernel, &inputs, &inputs);
        let kmm_factor = kmm.factorize()?;
        let mean_m = DVector::from_iterator(m, inputs.iter().map(|&d| config.mean_at(d)));
        let mean_weights = kmm_factor.solve_vec(&(&mu - mean_m))?;
        Ok(SparseFit {
            config,
            inducing: InducingSet {
                inputs,
                indices,
                provenance,
            },
            variational: VariationalPosterior { mu, sigma },
            bound,
            kmm_factor,
            mean_weights,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DensitySpeedPair;
    use crate::gpr::{gp_fit_predict, log_marginal_likelihood};
    use crate::linalg::solve_audit;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n.max(2) - 1) as f64)
            .collect()
    }

    fn exp_config(sigma: f64, noise_var: f64) -> GPConfig {
        GPConfig::new(KernelParams::exponential(sigma).unwrap(), noise_var, None).unwrap()
    }

    fn noisy_dataset(n: usize, seed: u64) -> DensitySpeedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = (0..n)
            .map(|i| {
                let density = 110.0 * i as f64 / n as f64 + rng.gen_range(0.0..0.4);
                let eps: f64 =
                    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
                let speed = (65.0 * (-density / 45.0).exp() + 8.0 + 2.0 * eps).max(0.0);
                DensitySpeedPair { density, speed }
            })
            .collect();
        DensitySpeedDataset::new(pairs, "sgpr-test").unwrap()
    }

    fn all_inducing(data: &DensitySpeedDataset) -> InducingSet {
        InducingSet::from_indices(data, (0..data.len()).collect(), "all")
    }

    #[test]
    fn m_equals_n_matches_exact_gpr() {
        for (n, seed) in [(10usize, 1u64), (60, 2)] {
            let data = noisy_dataset(n, seed);
            let config = exp_config(8.0, 1.5);
            let inducing = all_inducing(&data);
            let fit = sgpr_fit(&config, &data, &inducing).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let queries: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..110.0)).collect();
            let sparse = sgpr_predict(&fit, &queries);
            let exact = gp_fit_predict(&config, &data, &queries).unwrap();
            for j in 0..queries.len() {
                assert_abs_diff_eq!(sparse.mean[j], exact.mean[j], epsilon = 1e-6);
                assert_abs_diff_eq!(sparse.variance[j], exact.variance[j], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn single_point_degenerate_case() {
        let data = DensitySpeedDataset::new(
            vec![DensitySpeedPair {
                density: 30.0,
                speed: 45.0,
            }],
            "one",
        )
        .unwrap();
        let config = exp_config(5.0, 0.5);
        let inducing = all_inducing(&data);
        let fit = sgpr_fit(&config, &data, &inducing).unwrap();
        let sparse = sgpr_predict(&fit, &[30.0, 42.0]);
        let exact = gp_fit_predict(&config, &data, &[30.0, 42.0]).unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(sparse.mean[j], exact.mean[j], epsilon = 1e-9);
            assert_abs_diff_eq!(sparse.variance[j], exact.variance[j], epsilon = 1e-9);
        }
    }

    #[test]
    fn nystrom_trace_nonnegative() {
        let data = noisy_dataset(80, 3);
        let kernel = KernelParams::exponential(4.0).unwrap();
        for m in [1usize, 5, 20, 80] {
            let inducing =
                InducingSet::from_indices(&data, (0..m).map(|i| i * (80 / m)).collect(), "stride");
            let tr = nystrom_residual_trace(&kernel, &data, &inducing).unwrap();
            assert!(tr >= -1e-8, "m={m}: trace {tr}");
        }
    }

    #[test]
    fn mean_path_equals_residual_trick() {
        let data = noisy_dataset(120, 4);
        let prior = FDModel::from_name("underwood", vec![70.0, 50.0]).unwrap();
        let kernel = KernelParams::exponential(6.0).unwrap();
        let config = GPConfig::new(kernel, 1.2, Some(prior.clone())).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(400);
        let idx = rand::seq::index::sample(&mut rng, data.len(), 25).into_vec();
        let inducing = InducingSet::from_indices(&data, idx, "random");

        let fit_mean = sgpr_fit(&config, &data, &inducing).unwrap();

        let xs = data.densities();
        let resid: Vec<f64> = data
            .pairs()
            .iter()
            .map(|p| p.speed - prior.evaluate(p.density))
            .collect();
        let zero_cfg = exp_config(6.0, 1.2);
        let fit_resid = sgpr_fit_values(&zero_cfg, &xs, &resid, &inducing).unwrap();

        let queries = grid(0.0, 110.0, 31);
        let post_mean = sgpr_predict(&fit_mean, &queries);
        let post_resid = sgpr_predict(&fit_resid, &queries);
        for (j, &q) in queries.iter().enumerate() {
            let back = post_resid.mean[j] + prior.evaluate(q);
            assert_abs_diff_eq!(post_mean.mean[j], back, epsilon = 1e-8);
            assert_abs_diff_eq!(post_mean.variance[j], post_resid.variance[j], epsilon = 1e-8);
        }
        // The two fits share the same collapsed bound.
        assert_relative_eq!(fit_mean.bound, fit_resid.bound, max_relative = 1e-10);
    }

    #[test]
    fn bound_equals_lml_when_m_is_n() {
        let data = noisy_dataset(50, 5);
        let config = exp_config(7.0, 2.0);
        let inducing = all_inducing(&data);
        let bound = collapsed_bound(&config, &data, &inducing).unwrap();
        let lml = log_marginal_likelihood(&config, &data).unwrap();
        assert_abs_diff_eq!(bound, lml, epsilon = 1e-6);
        let fit = sgpr_fit(&config, &data, &inducing).unwrap();
        assert_relative_eq!(fit.bound, bound, max_relative = 1e-12);
    }

    #[test]
    fn bound_below_lml_for_sparse_sets() {
        let data = noisy_dataset(90, 6);
        let config = exp_config(5.0, 1.0);
        let lml = log_marginal_likelihood(&config, &data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        for m in [2usize, 7, 30] {
            let idx: Vec<usize> = rand::seq::index::sample(&mut rng, 90, m).into_vec();
            let inducing = InducingSet::from_indices(&data, idx, "random");
            let bound = collapsed_bound(&config, &data, &inducing).unwrap();
            assert!(bound <= lml + 1e-6, "m={m}: {bound} > {lml}");
        }
    }

    #[test]
    fn adding_inducing_point_never_lowers_bound() {
        let data = noisy_dataset(70, 7);
        let config = exp_config(5.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        for trial in 0..10 {
            let m = rng.gen_range(2..30);
            let mut idx = rand::seq::index::sample(&mut rng, 70, m + 1).into_vec();
            let extra = idx.pop().unwrap();
            let small = InducingSet::from_indices(&data, idx.clone(), "nested-small");
            idx.push(extra);
            let large = InducingSet::from_indices(&data, idx, "nested-large");
            let b_small = collapsed_bound(&config, &data, &small).unwrap();
            let b_large = collapsed_bound(&config, &data, &large).unwrap();
            assert!(
                b_large >= b_small - 1e-8,
                "trial {trial}: {b_large} < {b_small}"
            );
        }
    }

    #[test]
    fn nested_inducing_sets_converge_to_exact_gpr() {
        // Growing a nested inducing set toward the full training set must
        // not worsen the worst-case predictive-mean gap to exact GPR.
        let data = noisy_dataset(60, 21);
        let config = exp_config(6.0, 1.0);
        let queries = grid(0.0, 110.0, 41);
        let exact = gp_fit_predict(&config, &data, &queries).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut order = rand::seq::index::sample(&mut rng, 60, 60).into_vec();
        order.truncate(60);
        let mut last_gap = f64::INFINITY;
        for m in [8usize, 16, 32, 60] {
            let inducing = InducingSet::from_indices(&data, order[..m].to_vec(), "nested");
            let fit = sgpr_fit(&config, &data, &inducing).unwrap();
            let sparse = sgpr_predict(&fit, &queries);
            let gap = sparse
                .mean
                .iter()
                .zip(&exact.mean)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(
                gap <= last_gap + 1e-7,
                "gap grew from {last_gap} to {gap} at m={m}"
            );
            last_gap = gap;
        }
        assert!(last_gap <= 1e-7, "m = n gap {last_gap}");
    }

    #[test]
    fn prediction_behaviour_near_and_far() {
        let data = noisy_dataset(300, 8);
        let config = exp_config(6.0, 0.8);
        let idx: Vec<usize> = (0..30).map(|i| i * 10).collect();
        let inducing = InducingSet::from_indices(&data, idx, "stride");
        let fit = sgpr_fit(&config, &data, &inducing).unwrap();

        let at_inducing = fit.inducing.inputs[10];
        let post = sgpr_predict(&fit, &[at_inducing, 2000.0]);
        assert!(post.variance[0] < config.kernel.prior_variance());
        // far query reverts to prior
        assert_abs_diff_eq!(post.mean[1], 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(
            post.variance[1],
            config.kernel.prior_variance(),
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(
            post.predictive_variance[1],
            config.kernel.prior_variance() + 0.8,
            epsilon = 1e-6
        );
    }

    #[test]
    fn rejects_bad_inducing_sets() {
        let data = noisy_dataset(10, 9);
        let config = exp_config(5.0, 1.0);
        let empty = InducingSet::from_inputs(vec![], "empty");
        assert!(matches!(
            sgpr_fit(&config, &data, &empty),
            Err(GpError::BadInducingSize { .. })
        ));
        let out_of_range = InducingSet::from_inputs(vec![1e6], "far");
        assert!(matches!(
            sgpr_fit(&config, &data, &out_of_range),
            Err(GpError::InducingOutOfRange { .. })
        ));
        let too_many = InducingSet::from_inputs(vec![30.0; 11], "many");
        assert!(matches!(
            sgpr_fit(&config, &data, &too_many),
            Err(GpError::BadInducingSize { .. })
        ));
    }

    #[test]
    fn hyperopt_budget_one_is_identity() {
        let data = noisy_dataset(40, 10);
        let config = exp_config(2.0, 0.4);
        let inducing = InducingSet::from_indices(&data, (0..8).map(|i| i * 5).collect(), "s");
        let out = optimize_sgpr_hyperparameters(&config, &data, &inducing, 1).unwrap();
        assert_eq!(out.kernel.signal_sigma, config.kernel.signal_sigma);
        assert_eq!(out.noise_variance, config.noise_variance);
    }

    #[test]
    fn hyperopt_never_lowers_bound() {
        let data = noisy_dataset(100, 11);
        let config = exp_config(1.0, 5.0);
        let inducing = InducingSet::from_indices(&data, (0..20).map(|i| i * 5).collect(), "s");
        let before = collapsed_bound(&config, &data, &inducing).unwrap();
        let out = optimize_sgpr_hyperparameters(&config, &data, &inducing, 120).unwrap();
        let after = collapsed_bound(&out, &data, &inducing).unwrap();
        assert!(after >= before);
    }

    #[test]
    fn hyperopt_recovers_noise_roughly() {
        // Synthetic draw from a known GP smooth enough for 64 inducing
        // points to resolve; noise sigma should come back within +-40%.
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let xs = grid(0.0, 100.0, 400);
        let truth_kernel = KernelParams::new(KernelKind::Rbf, 3.0, 15.0).unwrap();
        let k = kernel::gram(&truth_kernel, &xs, &xs).entries
            + DMatrix::identity(400, 400).scale(1e-8);
        let chol = nalgebra::Cholesky::new(k).unwrap();
        let z = DVector::from_fn(400, |_, _| {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        let f = chol.l() * z;
        let pairs = xs
            .iter()
            .zip(f.iter())
            .map(|(&density, &fv)| {
                let eps: f64 =
                    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
                DensitySpeedPair {
                    density,
                    speed: (40.0 + fv + 0.5 * eps).max(0.0),
                }
            })
            .collect();
        let data = DensitySpeedDataset::new(pairs, "gen").unwrap();
        // subtract the 40 mph offset via the raw-values entry point
        let values: Vec<f64> = data.pairs().iter().map(|p| p.speed - 40.0).collect();
        let idx: Vec<usize> = (0..64).map(|i| i * 6 + 1).collect();
        let inducing = InducingSet::from_indices(&data, idx, "stride");
        let start =
            GPConfig::new(KernelParams::new(KernelKind::Rbf, 1.0, 5.0).unwrap(), 4.0, None)
                .unwrap();

        let (best, _) = crate::gpr::search_hyperparameters(&start, 400, |c| {
            sgpr_fit_values(c, &xs, &values, &inducing).ok().map(|f| f.bound)
        });
        let noise_sigma = best.noise_variance.sqrt();
        assert!(
            (noise_sigma - 0.5).abs() <= 0.2,
            "noise sigma {noise_sigma} not within 40% of 0.5"
        );
    }

    #[test]
    fn document_roundtrip_reproduces_predictions() {
        let data = noisy_dataset(90, 12);
        let prior = FDModel::from_name("cheng", vec![68.7, 20.02, 2.21]).unwrap();
        let config = GPConfig::new(
            KernelParams::exponential(5.5).unwrap(),
            1.1,
            Some(prior),
        )
        .unwrap();
        let idx: Vec<usize> = (0..18).map(|i| i * 5).collect();
        let inducing = InducingSet::from_indices(&data, idx, "stride(seed=0)");
        let fit = sgpr_fit(&config, &data, &inducing).unwrap();

        let doc = fit.to_document();
        let loaded = SparseFit::from_document(&doc).unwrap();
        assert_eq!(loaded.inducing.indices, fit.inducing.indices);
        assert_eq!(loaded.bound, fit.bound);

        let queries = grid(0.0, 110.0, 57);
        let a = sgpr_predict(&fit, &queries);
        let b = sgpr_predict(&loaded, &queries);
        for j in 0..queries.len() {
            assert_abs_diff_eq!(a.mean[j], b.mean[j], epsilon = 1e-10);
            assert_abs_diff_eq!(a.variance[j], b.variance[j], epsilon = 1e-10);
        }
    }

    #[test]
    fn malformed_documents_rejected() {
        assert!(SparseFit::from_document("kind = other\n").is_err());
        let missing = "kind = sgpr-fit\nkernel = exponential\n";
        assert!(SparseFit::from_document(missing).is_err());
    }

    #[test]
    fn fits_route_through_counted_solves() {
        let data = noisy_dataset(60, 13);
        let config = exp_config(4.0, 1.0);
        let inducing = InducingSet::from_indices(&data, (0..12).map(|i| i * 5).collect(), "s");
        solve_audit::reset();
        let fit = sgpr_fit(&config, &data, &inducing).unwrap();
        let fits_f = solve_audit::factorizations();
        let fits_s = solve_audit::solves();
        assert!(fits_f >= 2, "expected K_mm and B factorizations, saw {fits_f}");
        assert!(fits_s >= 3);
        let _ = sgpr_predict(&fit, &grid(0.0, 100.0, 11));
        assert!(solve_audit::solves() > fits_s);
    }
}
