//! Covariance functions and Gram-matrix construction.
//!
//! Inputs are scalar densities; distances are absolute differences. The
//! exponential kernel is `sigma^2 * exp(-|x - x'| / 2)` with a fixed
//! denominator and no length-scale; every other kind uses (sigma, lambda).
//! The rational-quadratic kind fixes its shape exponent at 1 since the
//! parameter set carries no third hyperparameter.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{CholFactor, LinalgError};
use crate::parallel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Exponential,
    Rbf,
    Matern32,
    Matern52,
    RationalQuadratic,
}

impl KernelKind {
    /// True when the kind has a length-scale hyperparameter.
    pub fn uses_length_scale(&self) -> bool {
        !matches!(self, KernelKind::Exponential)
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelKind::Exponential => "exponential",
            KernelKind::Rbf => "rbf",
            KernelKind::Matern32 => "matern32",
            KernelKind::Matern52 => "matern52",
            KernelKind::RationalQuadratic => "rational-quadratic",
        }
    }

    pub fn parse(s: &str) -> Result<Self, KernelError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exp" | "exponential" => Ok(KernelKind::Exponential),
            "rbf" | "se" | "squared-exponential" => Ok(KernelKind::Rbf),
            "matern32" | "matern-32" => Ok(KernelKind::Matern32),
            "matern52" | "matern-52" => Ok(KernelKind::Matern52),
            "rq" | "rational-quadratic" => Ok(KernelKind::RationalQuadratic),
            other => Err(KernelError::UnknownKind(other.to_string())),
        }
    }
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("unknown kernel kind \"{0}\"")]
    UnknownKind(String),
    #[error("signal sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error("length scale must be positive, got {0}")]
    BadLengthScale(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub kind: KernelKind,
    pub signal_sigma: f64,
    pub length_scale: f64,
}

impl KernelParams {
    pub fn new(kind: KernelKind, signal_sigma: f64, length_scale: f64) -> Result<Self, KernelError> {
        if !(signal_sigma > 0.0 && signal_sigma.is_finite()) {
            return Err(KernelError::BadSigma(signal_sigma));
        }
        if !(length_scale > 0.0 && length_scale.is_finite()) {
            return Err(KernelError::BadLengthScale(length_scale));
        }
        Ok(KernelParams {
            kind,
            signal_sigma,
            length_scale,
        })
    }

    /// Exponential kernel as printed: no length-scale (stored as 1 and unused).
    pub fn exponential(signal_sigma: f64) -> Result<Self, KernelError> {
        Self::new(KernelKind::Exponential, signal_sigma, 1.0)
    }

    /// Prior variance `k(x, x) = sigma^2`, identical for every kind.
    pub fn prior_variance(&self) -> f64 {
        self.signal_sigma * self.signal_sigma
    }
}

pub fn kernel_eval(params: &KernelParams, x: f64, y: f64) -> f64 {
    let d = (x - y).abs();
    let s2 = params.signal_sigma * params.signal_sigma;
    let l = params.length_scale;
    match params.kind {
        KernelKind::Exponential => s2 * (-d / 2.0).exp(),
        KernelKind::Rbf => s2 * (-d * d / (2.0 * l * l)).exp(),
        KernelKind::Matern32 => {
            let t = 3.0_f64.sqrt() * d / l;
            s2 * (1.0 + t) * (-t).exp()
        }
        KernelKind::Matern52 => {
            let t = 5.0_f64.sqrt() * d / l;
            s2 * (1.0 + t + t * t / 3.0) * (-t).exp()
        }
        KernelKind::RationalQuadratic => s2 / (1.0 + d * d / (2.0 * l * l)),
    }
}

/// Dense kernel matrix; symmetric when built from one density list.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub entries: DMatrix<f64>,
}

impl GramMatrix {
    /// Factorize with the escalating-jitter policy from [`crate::linalg`].
    pub fn factorize(&self) -> Result<CholFactor, LinalgError> {
        CholFactor::new(&self.entries)
    }
}

/// Entry `(i, j) = k(xs[i], ys[j])`, built in parallel column chunks.
pub fn gram(params: &KernelParams, xs: &[f64], ys: &[f64]) -> GramMatrix {
    let nx = xs.len();
    let mut entries = DMatrix::zeros(nx, ys.len());
    if nx == 0 {
        return GramMatrix { entries };
    }
    parallel::for_each_chunk_mut(
        entries.as_mut_slice(),
        nx * parallel::COL_CHUNK,
        |offset, chunk| {
            let first_col = offset / nx;
            fill_columns(params, xs, &ys[first_col..first_col + chunk.len() / nx], chunk);
        },
    );
    GramMatrix { entries }
}

/// Sequential twin of [`gram`]; same output, used as the bench baseline.
pub fn gram_seq(params: &KernelParams, xs: &[f64], ys: &[f64]) -> GramMatrix {
    let nx = xs.len();
    let mut entries = DMatrix::zeros(nx, ys.len());
    if nx == 0 {
        return GramMatrix { entries };
    }
    fill_columns(params, xs, ys, entries.as_mut_slice());
    GramMatrix { entries }
}

fn fill_columns(params: &KernelParams, xs: &[f64], ys: &[f64], out: &mut [f64]) {
    for (j, y) in ys.iter().enumerate() {
        let col = &mut out[j * xs.len()..(j + 1) * xs.len()];
        for (slot, x) in col.iter_mut().zip(xs) {
            *slot = kernel_eval(params, *x, *y);
        }
    }
}

/// `K^-1 rhs` through Cholesky with escalating jitter; never forms an inverse.
pub fn chol_solve(gram: &GramMatrix, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    gram.factorize()?.solve_mat(rhs)
}

/// Convenience for a vector right-hand side.
pub fn chol_solve_vec(gram: &GramMatrix, rhs: &DVector<f64>) -> Result<DVector<f64>, LinalgError> {
    gram.factorize()?.solve_vec(rhs)
}
