//! Exact Gaussian-process regression on density-speed data.
//!
//! Posterior mean and variance come from the standard predictive equations
//! with an optional deterministic fundamental-diagram model as the prior
//! mean; hyperparameters are picked by maximizing the log marginal
//! likelihood. Everything is Cholesky-based. Exact regression carries the
//! usual cubic cost, so [`EXACT_GPR_SOFT_LIMIT`] marks where the CLI starts
//! warning and the sparse module takes over.

use std::cell::{Cell, RefCell};
use std::io;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::DensitySpeedDataset;
use crate::kernel::{self, KernelParams};
use crate::linalg::LinalgError;
use crate::metrics::z_score;
use crate::models::FDModel;
use crate::optimize;
use crate::parallel;

/// Training sizes above this make exact regression impractically cubic.
pub const EXACT_GPR_SOFT_LIMIT: usize = 3000;

/// Hyperparameter search box, as standard deviations / length-scales:
/// signal sigma in mph, noise sigma in mph, length-scale in veh/mi.
pub const SIGMA_BOUNDS: (f64, f64) = (1e-3, 1e3);
pub const NOISE_SIGMA_BOUNDS: (f64, f64) = (1e-3, 1e2);
pub const LENGTH_SCALE_BOUNDS: (f64, f64) = (1e-2, 1e3);

const HYPEROPT_STARTS: usize = 5;
const QUERY_CHUNK: usize = 1024;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("training dataset is empty")]
    EmptyTrain,
    #[error("noise variance must be positive, got {0}")]
    BadNoise(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("inducing set must satisfy 1 <= m <= n, got m = {m}, n = {n}")]
    BadInducingSize { m: usize, n: usize },
    #[error("inducing input {value} outside the training density range [{lo}, {hi}]")]
    InducingOutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("malformed fit document: {0}")]
    BadDocument(String),
}

/// Kernel + noise + optional prior-mean model. The mean is zero when no
/// model is attached.
#[derive(Debug, Clone)]
pub struct GPConfig {
    pub kernel: KernelParams,
    pub noise_variance: f64,
    pub mean_function: Option<FDModel>,
}

impl GPConfig {
    pub fn new(
        kernel: KernelParams,
        noise_variance: f64,
        mean_function: Option<FDModel>,
    ) -> Result<Self, GpError> {
        if !valid_variance(noise_variance) {
            return Err(GpError::BadNoise(noise_variance));
        }
        Ok(GPConfig {
            kernel,
            noise_variance,
            mean_function,
        })
    }

    pub fn mean_at(&self, density: f64) -> f64 {
        self.mean_function
            .as_ref()
            .map_or(0.0, |m| m.evaluate(density))
    }

    pub(crate) fn residuals(&self, data: &DensitySpeedDataset) -> DVector<f64> {
        DVector::from_iterator(
            data.len(),
            data.pairs().iter().map(|p| p.speed - self.mean_at(p.density)),
        )
    }
}

/// Predictive mean and variance at query densities. `variance` is the
/// latent-function variance; `predictive_variance` adds the noise variance
/// and is what observations realize.
#[derive(Debug, Clone)]
pub struct GPPosterior {
    pub query_densities: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub predictive_variance: Vec<f64>,
}

impl GPPosterior {
    /// CSV export with 90/95/99% predictive bands.
    pub fn write_csv<W: io::Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "query_density,mean,variance,predictive_variance,ci90_lo,ci90_hi,ci95_lo,ci95_hi,ci99_lo,ci99_hi"
        )?;
        for i in 0..self.query_densities.len() {
            let sd = self.predictive_variance[i].sqrt();
            let mean = self.mean[i];
            write!(
                w,
                "{},{},{},{}",
                self.query_densities[i], mean, self.variance[i], self.predictive_variance[i]
            )?;
            for level in [0.90, 0.95, 0.99] {
                let half = z_score(level) * sd;
                write!(w, ",{},{}", mean - half, mean + half)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub(crate) fn valid_variance(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

fn clamp_variance(v: f64) -> f64 {
    if v < 0.0 {
        0.0
    } else {
        v
    }
}

/// Fit on the training set and predict at the query densities.
pub fn gp_fit_predict(
    config: &GPConfig,
    train: &DensitySpeedDataset,
    queries: &[f64],
) -> Result<GPPosterior, GpError> {
    if train.is_empty() {
        return Err(GpError::EmptyTrain);
    }
    if !valid_variance(config.noise_variance) {
        return Err(GpError::BadNoise(config.noise_variance));
    }
    let xs = train.densities();
    let n = xs.len();
    let mut c = kernel::gram(&config.kernel, &xs, &xs).entries;
    for i in 0..n {
        c[(i, i)] += config.noise_variance;
    }
    let factor = crate::linalg::CholFactor::new(&c)?;
    let r = config.residuals(train);
    let alpha = factor.solve_vec(&r)?;

    let prior_var = config.kernel.prior_variance();
    let mut mean = vec![0.0; queries.len()];
    let mut variance = vec![0.0; queries.len()];

    let chunks = parallel::map_chunks(queries.len(), QUERY_CHUNK, |range| {
        let q = &queries[range.clone()];
        let k_nq = kernel::gram_seq(&config.kernel, &xs, q).entries;
        let mut mean_part = Vec::with_capacity(q.len());
        for (j, &qd) in q.iter().enumerate() {
            mean_part.push(config.mean_at(qd) + k_nq.column(j).dot(&alpha));
        }
        // variance: k(q, q) - || L^-1 k_nq ||^2 column-wise
        let mut v = k_nq;
        factor.lower().solve_lower_triangular_mut(&mut v);
        let var_part: Vec<f64> = (0..q.len())
            .map(|j| clamp_variance(prior_var - v.column(j).norm_squared()))
            .collect();
        (range, mean_part, var_part)
    });
    for (range, mean_part, var_part) in chunks {
        mean[range.clone()].copy_from_slice(&mean_part);
        variance[range].copy_from_slice(&var_part);
    }

    let predictive_variance = variance
        .iter()
        .map(|v| v + config.noise_variance)
        .collect();
    Ok(GPPosterior {
        query_densities: queries.to_vec(),
        mean,
        variance,
        predictive_variance,
    })
}

/// `log N(y | m(x), K_nn + noise * I)` via Cholesky.
pub fn log_marginal_likelihood(
    config: &GPConfig,
    train: &DensitySpeedDataset,
) -> Result<f64, GpError> {
    if train.is_empty() {
        return Err(GpError::EmptyTrain);
    }
    let xs = train.densities();
    let n = xs.len();
    let mut c = kernel::gram(&config.kernel, &xs, &xs).entries;
    for i in 0..n {
        c[(i, i)] += config.noise_variance;
    }
    let factor = crate::linalg::CholFactor::new(&c)?;
    let r = config.residuals(train);
    let alpha = factor.solve_vec(&r)?;
    Ok(-0.5 * r.dot(&alpha)
        - 0.5 * factor.log_det()
        - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Pack (sigma, [length-scale], noise-sigma) into log space.
pub(crate) struct LogParamSpace {
    uses_length_scale: bool,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl LogParamSpace {
    pub(crate) fn for_kernel(kernel: &KernelParams) -> Self {
        let uses = kernel.kind.uses_length_scale();
        let mut lo = vec![SIGMA_BOUNDS.0.ln()];
        let mut hi = vec![SIGMA_BOUNDS.1.ln()];
        if uses {
            lo.push(LENGTH_SCALE_BOUNDS.0.ln());
            hi.push(LENGTH_SCALE_BOUNDS.1.ln());
        }
        lo.push(NOISE_SIGMA_BOUNDS.0.ln());
        hi.push(NOISE_SIGMA_BOUNDS.1.ln());
        LogParamSpace {
            uses_length_scale: uses,
            lo,
            hi,
        }
    }

    pub(crate) fn pack(&self, config: &GPConfig) -> Vec<f64> {
        let mut x = vec![config.kernel.signal_sigma.ln()];
        if self.uses_length_scale {
            x.push(config.kernel.length_scale.ln());
        }
        x.push(config.noise_variance.sqrt().ln());
        optimize::clamp_to_box(&mut x, &self.lo, &self.hi);
        x
    }

    pub(crate) fn unpack(&self, x: &[f64], template: &GPConfig) -> GPConfig {
        let sigma = x[0].exp();
        let (length_scale, noise_idx) = if self.uses_length_scale {
            (x[1].exp(), 2)
        } else {
            (template.kernel.length_scale, 1)
        };
        let noise_sigma = x[noise_idx].exp();
        GPConfig {
            kernel: KernelParams {
                kind: template.kernel.kind,
                signal_sigma: sigma,
                length_scale,
            },
            noise_variance: noise_sigma * noise_sigma,
            mean_function: template.mean_function.clone(),
        }
    }
}

/// Multi-start simplex search over log hyperparameters; maximizes
/// `score(config)` within a total evaluation budget and never returns a
/// config scoring below the input.
pub(crate) fn search_hyperparameters<S>(
    config: &GPConfig,
    budget: usize,
    score: S,
) -> (GPConfig, f64)
where
    S: Fn(&GPConfig) -> Option<f64>,
{
    let space = LogParamSpace::for_kernel(&config.kernel);
    let dim = space.lo.len();
    let init = space.pack(config);

    let used = Cell::new(0usize);
    let best: RefCell<(Vec<f64>, f64)> = RefCell::new((init.clone(), f64::INFINITY));
    let objective = |x: &[f64]| -> f64 {
        if used.get() >= budget {
            return f64::INFINITY;
        }
        used.set(used.get() + 1);
        let cfg = space.unpack(x, config);
        let value = match score(&cfg) {
            Some(v) if v.is_finite() => -v,
            _ => f64::INFINITY,
        };
        let mut b = best.borrow_mut();
        if value < b.1 {
            *b = (x.to_vec(), value);
        }
        value
    };

    // Evaluate the starting point first so the returned config can never
    // score worse than the input.
    objective(&init);

    let mut starts = vec![init.clone()];
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    for _ in 1..HYPEROPT_STARTS {
        starts.push(
            (0..dim)
                .map(|i| rng.gen_range(space.lo[i]..space.hi[i]))
                .collect(),
        );
    }
    for s in starts {
        let remaining = budget.saturating_sub(used.get());
        if remaining == 0 {
            break;
        }
        let per_start = remaining.min(budget.div_ceil(HYPEROPT_STARTS).max(16));
        optimize::nelder_mead(&objective, &s, &space.lo, &space.hi, per_start, 1e-9, 1e-7);
    }

    let (x_best, neg) = best.into_inner();
    // If nothing beat the starting point, hand back the input config
    // unchanged rather than a log-exp round-trip of it.
    if !neg.is_finite() || x_best == init {
        (config.clone(), -neg)
    } else {
        (space.unpack(&x_best, config), -neg)
    }
}

/// Data-driven starting configuration: signal sigma from the speed spread,
/// noise a third of it, length-scale a tenth of the density range, all
/// clamped into the search bounds. Zero mean.
pub fn default_gp_config(
    kind: crate::kernel::KernelKind,
    data: &DensitySpeedDataset,
) -> Result<GPConfig, GpError> {
    if data.is_empty() {
        return Err(GpError::EmptyTrain);
    }
    let speeds = data.speeds();
    let n = speeds.len() as f64;
    let mean = speeds.iter().sum::<f64>() / n;
    let sd = (speeds.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n)
        .sqrt()
        .max(1e-3);
    let densities = data.densities();
    let lo = densities.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = densities.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = (hi - lo).max(1.0);

    let sigma = sd.clamp(SIGMA_BOUNDS.0, SIGMA_BOUNDS.1);
    let noise_sigma = (sd / 3.0).clamp(NOISE_SIGMA_BOUNDS.0, NOISE_SIGMA_BOUNDS.1);
    let length_scale = (range / 10.0).clamp(LENGTH_SCALE_BOUNDS.0, LENGTH_SCALE_BOUNDS.1);
    let kernel = KernelParams::new(kind, sigma, length_scale)
        .map_err(|e| GpError::BadDocument(e.to_string()))?;
    GPConfig::new(kernel, noise_sigma * noise_sigma, None)
}

/// Maximize the log marginal likelihood over (sigma, length-scale if any,
/// noise sigma). `budget` caps total likelihood evaluations; the result's
/// likelihood is never below the input's.
pub fn optimize_hyperparameters(
    config: &GPConfig,
    train: &DensitySpeedDataset,
    budget: usize,
) -> Result<GPConfig, GpError> {
    if train.is_empty() {
        return Err(GpError::EmptyTrain);
    }
    let (cfg, _) = search_hyperparameters(config, budget, |c| {
        log_marginal_likelihood(c, train).ok()
    });
    Ok(cfg)
}
