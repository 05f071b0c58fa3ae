//! Accuracy and coverage metrics: RMSE, MAPE, and the fraction of
//! observations inside a predictive interval (PWCI).

use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::dataset::DensitySpeedDataset;
use crate::gpr::GPPosterior;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: observed {observed}, estimated {estimated}")]
    LengthMismatch { observed: usize, estimated: usize },
    #[error("inputs are empty")]
    Empty,
    #[error("every observed speed is zero; MAPE is undefined")]
    AllExcluded,
    #[error("coverage level must lie in (0, 1), got {0}")]
    BadLevel(f64),
    #[error("posterior is missing query {index}: expected density {expected}, got {got}")]
    QueryMismatch {
        index: usize,
        expected: f64,
        got: f64,
    },
}

/// Two-sided normal quantile for a central interval. The three levels used
/// in reports are pinned to their conventional table values.
pub fn z_score(level: f64) -> f64 {
    if level == 0.90 {
        1.645
    } else if level == 0.95 {
        1.960
    } else if level == 0.99 {
        2.576
    } else {
        Normal::standard().inverse_cdf(0.5 + level / 2.0)
    }
}

pub fn rmse(observed: &[f64], estimated: &[f64]) -> Result<f64, MetricsError> {
    if observed.len() != estimated.len() {
        return Err(MetricsError::LengthMismatch {
            observed: observed.len(),
            estimated: estimated.len(),
        });
    }
    if observed.is_empty() {
        return Err(MetricsError::Empty);
    }
    let sum_sq: f64 = observed
        .iter()
        .zip(estimated)
        .map(|(o, e)| (o - e) * (o - e))
        .sum();
    Ok((sum_sq / observed.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy)]
pub struct Mape {
    /// Mean absolute percentage error, in percent.
    pub percent: f64,
    /// Rows dropped because the observed speed was zero.
    pub excluded: usize,
}

/// MAPE over rows with a nonzero observed speed; the divide-by-observation
/// form is undefined at stopped traffic, so those rows are excluded and
/// counted.
pub fn mape(observed: &[f64], estimated: &[f64]) -> Result<Mape, MetricsError> {
    if observed.len() != estimated.len() {
        return Err(MetricsError::LengthMismatch {
            observed: observed.len(),
            estimated: estimated.len(),
        });
    }
    if observed.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    for (o, e) in observed.iter().zip(estimated) {
        if *o == 0.0 {
            continue;
        }
        sum += ((o - e) / o).abs();
        used += 1;
    }
    if used == 0 {
        return Err(MetricsError::AllExcluded);
    }
    Ok(Mape {
        percent: 100.0 * sum / used as f64,
        excluded: observed.len() - used,
    })
}

/// Fraction of observations with
/// `|v_i - mean_i| <= z(level) * sqrt(predictive_variance_i)`.
/// The posterior must be queried at the observed densities, in order.
pub fn pwci(
    posterior: &GPPosterior,
    observed: &DensitySpeedDataset,
    level: f64,
) -> Result<f64, MetricsError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(MetricsError::BadLevel(level));
    }
    if posterior.query_densities.len() != observed.len() {
        return Err(MetricsError::LengthMismatch {
            observed: observed.len(),
            estimated: posterior.query_densities.len(),
        });
    }
    if observed.is_empty() {
        return Err(MetricsError::Empty);
    }
    for (index, (q, p)) in posterior
        .query_densities
        .iter()
        .zip(observed.pairs())
        .enumerate()
    {
        if (q - p.density).abs() > 1e-9 * (1.0 + p.density.abs()) {
            return Err(MetricsError::QueryMismatch {
                index,
                expected: p.density,
                got: *q,
            });
        }
    }
    let z = z_score(level);
    let inside = observed
        .pairs()
        .iter()
        .enumerate()
        .filter(|(i, p)| {
            (p.speed - posterior.mean[*i]).abs() <= z * posterior.predictive_variance[*i].sqrt()
        })
        .count();
    Ok(inside as f64 / observed.len() as f64)
}

/// One evaluation row: RMSE, MAPE, coverage at the given level.
#[derive(Debug, Clone, Copy)]
pub struct MetricReport {
    pub rmse: f64,
    pub mape_percent: f64,
    pub pwci: f64,
    pub n_points: usize,
    pub mape_excluded: usize,
}

pub fn report(
    posterior: &GPPosterior,
    observed: &DensitySpeedDataset,
    level: f64,
) -> Result<MetricReport, MetricsError> {
    let speeds = observed.speeds();
    let rmse_v = rmse(&speeds, &posterior.mean)?;
    let mape_v = mape(&speeds, &posterior.mean)?;
    let pwci_v = pwci(posterior, observed, level)?;
    Ok(MetricReport {
        rmse: rmse_v,
        mape_percent: mape_v.percent,
        pwci: pwci_v,
        n_points: observed.len(),
        mape_excluded: mape_v.excluded,
    })
}
