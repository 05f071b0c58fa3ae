//! Error-to-exit-code mapping and small parsing helpers.

use fdgp::calibrate::CalibError;
use fdgp::dataset::DataError;
use fdgp::gpr::GpError;
use fdgp::kernel::KernelError;
use fdgp::linalg::LinalgError;
use fdgp::metrics::MetricsError;
use fdgp::models::ModelError;
use fdgp::sampling::SampleError;

#[derive(Debug)]
pub enum CliError {
    /// exit 1: bad flags, unknown names, invalid combinations
    Usage(String),
    /// exit 2: missing/malformed inputs and outputs
    Data(String),
    /// exit 3: factorization or optimization breakdown
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::UnknownModel { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<KernelError> for CliError {
    fn from(e: KernelError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<CalibError> for CliError {
    fn from(e: CalibError) -> Self {
        match e {
            CalibError::Model(m) => m.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<GpError> for CliError {
    fn from(e: GpError) -> Self {
        match e {
            GpError::Linalg(_) => CliError::Numeric(e.to_string()),
            GpError::BadNoise(_) | GpError::BadInducingSize { .. } => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<LinalgError> for CliError {
    fn from(e: LinalgError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<SampleError> for CliError {
    fn from(e: SampleError) -> Self {
        match e {
            SampleError::WeightLength { .. } | SampleError::BadWeight(_) => {
                CliError::Data(e.to_string())
            }
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

/// "start:stop:step" in veh/mi, inclusive of stop up to rounding.
pub fn parse_range(spec: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::Usage(format!(
            "range \"{spec}\" must be start:stop:step"
        )));
    }
    let parse = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| CliError::Usage(format!("bad number \"{s}\" in range \"{spec}\"")))
    };
    let (start, stop, step) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
    if step.is_nan() || step <= 0.0 || stop < start {
        return Err(CliError::Usage(format!(
            "range \"{spec}\" needs stop >= start and step > 0"
        )));
    }
    let mut out = Vec::new();
    let mut i = 0u64;
    loop {
        let v = start + step * i as f64;
        if v > stop + 1e-9 * step {
            break;
        }
        out.push(v);
        i += 1;
    }
    Ok(out)
}

pub fn parse_list(spec: &str) -> Vec<String> {
    spec.split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

pub fn parse_usize_list(spec: &str) -> Result<Vec<usize>, CliError> {
    parse_list(spec)
        .into_iter()
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| CliError::Usage(format!("bad integer \"{s}\"")))
        })
        .collect()
}
