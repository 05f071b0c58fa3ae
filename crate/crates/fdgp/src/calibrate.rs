//! Weighted least-squares calibration of the single-regime families.
//!
//! The objective is `sum_i w_i (v_i - f(rho_i, theta))^2`; unit weights give
//! ordinary least squares. No gradient information is assumed about the
//! formulas, so each fit runs a seeded multi-start: a data-driven default
//! initialization plus draws over the bound box, each start polished by
//! Nelder-Mead and then damped Gauss-Newton with finite-difference
//! Jacobians. The best start wins; ties break on start index.

use thiserror::Error;

use crate::dataset::DensitySpeedDataset;
use crate::models::{FDModel, FDModelSpec, ModelError};
use crate::optimize::{self, fd_step};
use crate::parallel;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Multi-start count; start 0 is the data-driven (or caller-provided) init.
pub const DEFAULT_STARTS: usize = 8;
/// Relative first-order tolerance: converged when
/// `grad_norm <= GRAD_TOL * (1 + |objective|)`.
pub const GRAD_TOL: f64 = 1e-6;
/// Parameter-step stopping tolerance.
pub const STEP_TOL: f64 = 1e-10;
/// Iteration cap per start (simplex + Gauss-Newton combined).
pub const MAX_ITERS: usize = 5000;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("dataset is empty")]
    EmptyData,
    #[error("weights length {got} does not match dataset length {expected}")]
    WeightLength { got: usize, expected: usize },
    #[error("weight at index {0} must be strictly positive")]
    BadWeight(usize),
    #[error("all densities identical; fitting \"{0}\" with multiple parameters is ill-posed")]
    IllPosed(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub model: FDModel,
    /// Weighted sum of squared errors at the returned parameters.
    pub objective: f64,
    /// Norm of the finite-difference gradient of the objective.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl CalibrationResult {
    /// The model document with the fit metadata appended as comment lines,
    /// so [`FDModel::from_document`] still reads it back.
    pub fn to_document(&self) -> String {
        let mut doc = self.model.to_document();
        doc.push_str(&format!("# objective = {}\n", self.objective));
        doc.push_str(&format!("# gradient_norm = {}\n", self.gradient_norm));
        doc.push_str(&format!("# iterations = {}\n", self.iterations));
        doc.push_str(&format!("# converged = {}\n", self.converged));
        doc
    }
}

fn weighted_sse(
    spec: &'static FDModelSpec,
    data: &DensitySpeedDataset,
    weights: &[f64],
    params: &[f64],
) -> f64 {
    data.pairs()
        .iter()
        .zip(weights)
        .map(|(p, w)| {
            let r = p.speed - spec.eval_unchecked(params, p.density);
            w * r * r
        })
        .sum()
}

/// Norm of the central finite-difference gradient of the weighted SSE,
/// step `max(1e-6, 1e-6 |theta_j|)` per coordinate.
pub fn first_order_residual(
    spec: &'static FDModelSpec,
    data: &DensitySpeedDataset,
    weights: &[f64],
    params: &[f64],
) -> f64 {
    let mut x = params.to_vec();
    let mut sq_sum = 0.0;
    for j in 0..x.len() {
        let h = fd_step(x[j]);
        let saved = x[j];
        x[j] = saved + h;
        let up = weighted_sse(spec, data, weights, &x);
        x[j] = saved - h;
        let dn = weighted_sse(spec, data, weights, &x);
        x[j] = saved;
        let g = (up - dn) / (2.0 * h);
        sq_sum += g * g;
    }
    sq_sum.sqrt()
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// Data-driven initialization: free-flow speeds from the upper speed tail,
/// jam density past the observed maximum, critical density at max flow,
/// shape parameters at one (clamped into bounds).
fn default_init(spec: &'static FDModelSpec, data: &DensitySpeedDataset) -> Vec<f64> {
    let mut speeds = data.speeds();
    speeds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let max_density = data
        .pairs()
        .iter()
        .map(|p| p.density)
        .fold(f64::NEG_INFINITY, f64::max);
    let (mut rho_at_max_flow, mut max_flow) = (max_density.max(1.0), f64::NEG_INFINITY);
    for p in data.pairs() {
        let q = p.density * p.speed;
        if q > max_flow {
            max_flow = q;
            rho_at_max_flow = p.density;
        }
    }

    spec.params
        .iter()
        .map(|ps| {
            let guess = match ps.name {
                "v_f" => percentile(&speeds, 0.99),
                "v_critical" => percentile(&speeds, 0.5),
                "v_min" | "v_j" => percentile(&speeds, 0.05),
                "rho_j" => 1.5 * max_density,
                "rho_critical" => rho_at_max_flow,
                "rho_min" => 1.0,
                "lambda" => (ps.lo * ps.hi).sqrt(),
                // shape parameters: n, m, m1, m2, alpha, theta1, theta2
                _ => 1.0,
            };
            guess.clamp(ps.lo, ps.hi)
        })
        .collect()
}

/// Fit `spec` to the data by weighted least squares to local optimality.
///
/// `init` overrides the data-driven start when given; `seed` drives the
/// remaining multi-start draws. On non-convergence after the iteration cap
/// the best-so-far parameters come back with `converged = false`.
pub fn wls_fit(
    spec: &'static FDModelSpec,
    data: &DensitySpeedDataset,
    weights: &[f64],
    init: Option<&[f64]>,
    seed: u64,
) -> Result<CalibrationResult, CalibError> {
    if data.is_empty() {
        return Err(CalibError::EmptyData);
    }
    if weights.len() != data.len() {
        return Err(CalibError::WeightLength {
            got: weights.len(),
            expected: data.len(),
        });
    }
    if let Some(i) = weights.iter().position(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(CalibError::BadWeight(i));
    }
    let first = data.pairs()[0].density;
    if spec.params.len() > 1 && data.pairs().iter().all(|p| p.density == first) {
        return Err(CalibError::IllPosed(spec.name));
    }
    if let Some(init) = init {
        spec.validate_params(init)?;
    }

    let lo: Vec<f64> = spec.params.iter().map(|p| p.lo).collect();
    let hi: Vec<f64> = spec.params.iter().map(|p| p.hi).collect();

    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(DEFAULT_STARTS);
    starts.push(match init {
        Some(x) => x.to_vec(),
        None => default_init(spec, data),
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while starts.len() < DEFAULT_STARTS {
        let x: Vec<f64> = spec
            .params
            .iter()
            .map(|p| {
                // log-uniform across wide positive boxes, uniform otherwise
                if p.lo > 0.0 && p.hi / p.lo > 100.0 {
                    let u = rng.gen_range(p.lo.ln()..p.hi.ln());
                    u.exp()
                } else {
                    rng.gen_range(p.lo..p.hi)
                }
            })
            .collect();
        starts.push(x);
    }

    let runs = parallel::map_items(starts, |x0| {
        let nm_budget = MAX_ITERS.saturating_sub(200).min(1500);
        let nm = optimize::nelder_mead(
            |x| weighted_sse(spec, data, weights, x),
            &x0,
            &lo,
            &hi,
            nm_budget,
            1e-12,
            1e-12,
        );
        let lm_iters = MAX_ITERS.saturating_sub(nm.evals).min(400);
        let lm = optimize::levenberg_marquardt(
            |params, out| {
                out.clear();
                out.extend(data.pairs().iter().zip(weights).map(|(p, w)| {
                    w.sqrt() * (p.speed - spec.eval_unchecked(params, p.density))
                }));
            },
            &nm.x,
            &lo,
            &hi,
            lm_iters,
            GRAD_TOL,
            STEP_TOL,
        );
        (lm, nm.iterations)
    });

    let mut best: Option<(usize, optimize::LsqResult, usize)> = None;
    for (idx, (lm, nm_iters)) in runs.into_iter().enumerate() {
        let better = match &best {
            None => true,
            Some((_, b, _)) => lm.sse < b.sse,
        };
        if better {
            best = Some((idx, lm, nm_iters));
        }
    }
    let (_, lm, nm_iters) = best.expect("at least one start");

    let objective = weighted_sse(spec, data, weights, &lm.x);
    let gradient_norm = first_order_residual(spec, data, weights, &lm.x);
    let converged = gradient_norm <= GRAD_TOL * (1.0 + objective.abs());
    let model = FDModel::new(spec, lm.x)?;
    Ok(CalibrationResult {
        model,
        objective,
        gradient_norm,
        iterations: nm_iters + lm.iterations,
        converged,
    })
}
