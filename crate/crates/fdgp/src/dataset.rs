//! Density-speed observation sets: CSV loading, bin-inverse weighting, and
//! seeded train/test splitting.
//!
//! Datasets are immutable after construction and safe to share across
//! threads. Weighting uses `bins` equal-width density bins over the observed
//! range; each point gets the inverse of its bin occupancy, normalized to
//! mean one, so over-represented low-density regions are down-weighted.

use std::fmt::Write as _;
use std::fs::File;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Number of density bins used when no explicit bin count is given;
/// resolves a 0-110 veh/mi range at roughly 2 veh/mi granularity.
pub const DEFAULT_WEIGHT_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensitySpeedPair {
    /// vehicles per mile
    pub density: f64,
    /// miles per hour
    pub speed: f64,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column \"{0}\" in header")]
    MissingColumn(String),
    #[error("invalid rows: {0}")]
    BadRows(String),
    #[error("no usable rows in input")]
    Empty,
    #[error("invalid observation at index {index}: density={density}, speed={speed}")]
    BadObservation {
        index: usize,
        density: f64,
        speed: f64,
    },
    #[error("weights length {got} does not match dataset length {expected}")]
    WeightLength { got: usize, expected: usize },
    #[error("weight at index {0} is not strictly positive")]
    BadWeight(usize),
    #[error("train fraction must lie in (0, 1], got {0}")]
    BadFraction(f64),
    #[error("bins must be >= 1")]
    BadBins,
    #[error("operation requires a non-empty dataset")]
    EmptyDataset,
}

#[derive(Debug, Clone)]
pub struct CsvColumns {
    pub density: String,
    pub speed: String,
}

impl Default for CsvColumns {
    fn default() -> Self {
        CsvColumns {
            density: "density".to_string(),
            speed: "speed".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DensitySpeedDataset {
    pairs: Vec<DensitySpeedPair>,
    weights: Option<Vec<f64>>,
    source_label: String,
}

impl DensitySpeedDataset {
    /// Build a dataset, validating that every pair is finite and non-negative.
    /// Empty datasets are allowed (they arise as split remainders); fitting
    /// operations reject them.
    pub fn new(
        pairs: Vec<DensitySpeedPair>,
        source_label: impl Into<String>,
    ) -> Result<Self, DataError> {
        for (index, p) in pairs.iter().enumerate() {
            if !(p.density.is_finite() && p.speed.is_finite() && p.density >= 0.0 && p.speed >= 0.0)
            {
                return Err(DataError::BadObservation {
                    index,
                    density: p.density,
                    speed: p.speed,
                });
            }
        }
        Ok(DensitySpeedDataset {
            pairs,
            weights: None,
            source_label: source_label.into(),
        })
    }

    /// Attach per-pair weights (strictly positive, one per pair).
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self, DataError> {
        if weights.len() != self.pairs.len() {
            return Err(DataError::WeightLength {
                got: weights.len(),
                expected: self.pairs.len(),
            });
        }
        if let Some(i) = weights.iter().position(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(DataError::BadWeight(i));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    /// Load from CSV with a header row. Rows whose configured columns are
    /// missing, non-numeric, non-finite, or negative are collected and
    /// reported by 1-based line number (header is line 1).
    pub fn load_csv(path: impl AsRef<Path>, columns: &CsvColumns) -> Result<Self, DataError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(file);

        let headers = reader.headers()?.clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim().eq_ignore_ascii_case(name))
        };
        let d_idx = find(&columns.density)
            .ok_or_else(|| DataError::MissingColumn(columns.density.clone()))?;
        let s_idx =
            find(&columns.speed).ok_or_else(|| DataError::MissingColumn(columns.speed.clone()))?;

        let mut pairs = Vec::new();
        let mut bad = Vec::new();
        for (row_i, record) in reader.records().enumerate() {
            let line = row_i + 2; // header occupies line 1
            let record = record?;
            let parse = |idx: usize| -> Option<f64> {
                record
                    .get(idx)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .filter(|v| v.is_finite() && *v >= 0.0)
            };
            match (parse(d_idx), parse(s_idx)) {
                (Some(density), Some(speed)) => pairs.push(DensitySpeedPair { density, speed }),
                _ => bad.push(line),
            }
        }
        if !bad.is_empty() {
            let mut msg = String::new();
            for (i, line) in bad.iter().take(20).enumerate() {
                if i > 0 {
                    msg.push_str(", ");
                }
                let _ = write!(msg, "line {line}");
            }
            if bad.len() > 20 {
                let _ = write!(msg, " and {} more", bad.len() - 20);
            }
            return Err(DataError::BadRows(msg));
        }
        if pairs.is_empty() {
            return Err(DataError::Empty);
        }
        DensitySpeedDataset::new(pairs, path.display().to_string())
    }

    /// Write `density,speed` rows (with header) in dataset order.
    pub fn write_csv<W: io::Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "density,speed")?;
        for p in &self.pairs {
            writeln!(w, "{},{}", p.density, p.speed)?;
        }
        Ok(())
    }

    /// Write a weight vector as a single-column CSV.
    pub fn write_weights_csv<W: io::Write>(weights: &[f64], mut w: W) -> io::Result<()> {
        writeln!(w, "weight")?;
        for wt in weights {
            writeln!(w, "{wt}")?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[DensitySpeedPair] {
        &self.pairs
    }

    pub fn densities(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.density).collect()
    }

    pub fn speeds(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.speed).collect()
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn source_label(&self) -> &str {
        &self.source_label
    }

    /// Unit weights, for ordinary (unweighted) least squares.
    pub fn unit_weights(&self) -> Vec<f64> {
        vec![1.0; self.pairs.len()]
    }

    /// Bin-inverse weights over `bins` equal-width density bins spanning
    /// the observed range, normalized to mean one.
    pub fn compute_weights(&self, bins: usize) -> Result<Vec<f64>, DataError> {
        if bins < 1 {
            return Err(DataError::BadBins);
        }
        if self.is_empty() {
            return Err(DataError::EmptyDataset);
        }
        let min = self.pairs.iter().map(|p| p.density).fold(f64::INFINITY, f64::min);
        let max = self
            .pairs
            .iter()
            .map(|p| p.density)
            .fold(f64::NEG_INFINITY, f64::max);
        let width = max - min;
        let bin_of = |density: f64| -> usize {
            if width <= 0.0 {
                0
            } else {
                (((density - min) / width) * bins as f64)
                    .floor()
                    .min(bins as f64 - 1.0) as usize
            }
        };
        let mut counts = vec![0usize; bins];
        for p in &self.pairs {
            counts[bin_of(p.density)] += 1;
        }
        let mut weights: Vec<f64> = self
            .pairs
            .iter()
            .map(|p| 1.0 / counts[bin_of(p.density)] as f64)
            .collect();
        let mean = weights.iter().sum::<f64>() / weights.len() as f64;
        for w in &mut weights {
            *w /= mean;
        }
        Ok(weights)
    }

    /// Seeded split: train gets `floor(n * fraction)` rows. Both halves keep
    /// the original row order; attached weights are carried along.
    pub fn train_test_split(
        &self,
        seed: u64,
        train_fraction: f64,
    ) -> Result<(Self, Self), DataError> {
        if !(train_fraction > 0.0 && train_fraction <= 1.0) {
            return Err(DataError::BadFraction(train_fraction));
        }
        if self.is_empty() {
            return Err(DataError::EmptyDataset);
        }
        let n = self.pairs.len();
        let n_train = ((n as f64) * train_fraction).floor() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        let mut train_idx: Vec<usize> = order[..n_train].to_vec();
        let mut test_idx: Vec<usize> = order[n_train..].to_vec();
        train_idx.sort_unstable();
        test_idx.sort_unstable();
        Ok((self.subset(&train_idx), self.subset(&test_idx)))
    }

    /// New dataset keeping only the given row indices (in the given order).
    pub fn subset(&self, indices: &[usize]) -> Self {
        let pairs = indices.iter().map(|&i| self.pairs[i]).collect();
        let weights = self
            .weights
            .as_ref()
            .map(|w| indices.iter().map(|&i| w[i]).collect());
        DensitySpeedDataset {
            pairs,
            weights,
            source_label: self.source_label.clone(),
        }
    }
}
