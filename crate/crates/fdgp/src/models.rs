//! The deterministic fundamental-diagram model zoo.
//!
//! Fifteen single-regime speed-density families (evaluable and calibratable)
//! plus four fixed multi-regime models kept as historical references
//! (evaluate-only). Speeds are mph, densities veh/mi, flow = density * speed.
//!
//! Formulas containing `log(rho_j / rho)` or `1 / rho` diverge at zero
//! density; those models clamp the input to [`GUARD_FLOOR`] so evaluation is
//! total without affecting fitted-region behavior. Power laws of the form
//! `(1 - rho/rho_j)^n` clamp the base at zero beyond jam density, where a
//! fractional exponent would otherwise produce NaN.

use std::collections::HashMap;

use thiserror::Error;

/// Minimum density substituted into formulas that are singular at zero.
pub const GUARD_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown model \"{name}\"; known models: {known}")]
    UnknownModel { name: String, known: String },
    #[error("model \"{model}\" expects {expected} parameters, got {got}")]
    ParamCount {
        model: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("parameter {name} = {value} outside bounds [{lo}, {hi}] for model \"{model}\"")]
    ParamOutOfBounds {
        model: &'static str,
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("malformed model document: {0}")]
    BadDocument(String),
}

#[derive(Debug, Clone, Copy)]
pub struct ParamSpec {
    pub name: &'static str,
    pub lo: f64,
    pub hi: f64,
}

const fn param(name: &'static str, lo: f64, hi: f64) -> ParamSpec {
    ParamSpec { name, lo, hi }
}

/// A named parametric speed-density family: parameter list with bounds and
/// the speed formula.
pub struct FDModelSpec {
    pub name: &'static str,
    pub params: &'static [ParamSpec],
    /// Clamp density to [`GUARD_FLOOR`] before evaluating (log/1-over-rho forms).
    pub guarded: bool,
    /// Set when calibration is known to reach non-physical parameter scales.
    pub nonphysical_note: Option<&'static str>,
    eval_fn: fn(&[f64], f64) -> f64,
}

impl std::fmt::Debug for FDModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FDModelSpec")
            .field("name", &self.name)
            .field("params", &self.params)
            .finish()
    }
}

fn greenshields(p: &[f64], rho: f64) -> f64 {
    let (v_f, rho_j) = (p[0], p[1]);
    v_f * (1.0 - rho / rho_j)
}

fn greenberg(p: &[f64], rho: f64) -> f64 {
    let (v_c, rho_j) = (p[0], p[1]);
    v_c * (rho_j / rho).ln()
}

fn underwood(p: &[f64], rho: f64) -> f64 {
    let (v_f, rho_c) = (p[0], p[1]);
    v_f * (-rho / rho_c).exp()
}

fn newell(p: &[f64], rho: f64) -> f64 {
    let (v_f, rho_j, lambda) = (p[0], p[1], p[2]);
    v_f * (1.0 - (-(lambda / v_f) * (1.0 / rho - 1.0 / rho_j)).exp())
}

fn drake(p: &[f64], rho: f64) -> f64 {
    let (v_f, rho_c) = (p[0], p[1]);
    let r = rho / rho_c;
    v_f * (-(r * r)).exp()
}

fn pipes(p: &[f64], rho: f64) -> f64 {
    let (v_f, rho_j, n) = (p[0], p[1], p[2]);
    v_f * (1.0 - rho / rho_j).max(0.0).powf(n)
}

fn drew(p: &[f64], rho: f64) -> f64 {
    let (v_f, rho_j, m1, m2) = (p[0], p[1], p[2], p[3]);
    v_f * (1.0 - (rho / rho_j).powf(m1)).max(0.0).powf(m2)
}

fn papageorgiou(p: &[f64], rho: f64) -> f64 {
    let (v_f, rho_j, alpha) = (p[0], p[1], p[2]);
    v_f * (-(1.0 / alpha) * (rho / rho_j).powf(alpha)).exp()
}

fn kerner_konhauser(p: &[f64], rho: f64) -> f64 {
    let (v_f, rho_c) = (p[0], p[1]);
    v_f * (1.0 / (1.0 + ((rho / rho_c - 0.25) / 0.06).exp() - 372e-8))
}

fn del_castillo_benitez(p: &[f64], rho: f64) -> f64 {
    let (v_f, rho_j, v_j) = (p[0], p[1], p[2]);
    v_f * (1.0 - ((v_j / v_f) * (1.0 - rho_j / rho)).exp())
}

fn jayakrishnan(p: &[f64], rho: f64) -> f64 {
    let (v_f, v_min, rho_j) = (p[0], p[1], p[2]);
    v_min + (v_f - v_min) * (1.0 - rho / rho_j)
}

fn ardekani_ghandehari(p: &[f64], rho: f64) -> f64 {
    let (v_c, rho_j, rho_min) = (p[0], p[1], p[2]);
    v_c * ((rho_j + rho_min) / (rho + rho_min)).ln()
}

fn macnicholas(p: &[f64], rho: f64) -> f64 {
    let (v_f, rho_j, n, m) = (p[0], p[1], p[2], p[3]);
    let rjn = rho_j.powf(n);
    let rn = rho.powf(n);
    v_f * (rjn - rn) / (rjn + m * rn)
}

fn wang(p: &[f64], rho: f64) -> f64 {
    let (v_f, v_c, rho_c, t1, t2) = (p[0], p[1], p[2], p[3], p[4]);
    // clamp the logistic argument so the exp never produces NaN via inf - inf
    let z = ((rho - rho_c) / t1).min(700.0);
    v_c + (v_f - v_c) / (1.0 + z.exp()).powf(t2)
}

fn cheng(p: &[f64], rho: f64) -> f64 {
    let (v_f, rho_c, m) = (p[0], p[1], p[2]);
    v_f / (1.0 + (rho / rho_c).powf(m)).powf(2.0 / m)
}

static REGISTRY: &[FDModelSpec] = &[
    FDModelSpec {
        name: "greenshields",
        params: &[param("v_f", 0.1, 200.0), param("rho_j", 1.0, 1000.0)],
        guarded: false,
        nonphysical_note: None,
        eval_fn: greenshields,
    },
    FDModelSpec {
        name: "greenberg",
        params: &[param("v_critical", 0.1, 200.0), param("rho_j", 1.0, 1000.0)],
        guarded: true,
        nonphysical_note: None,
        eval_fn: greenberg,
    },
    FDModelSpec {
        name: "underwood",
        params: &[param("v_f", 0.1, 200.0), param("rho_critical", 1.0, 1000.0)],
        guarded: false,
        nonphysical_note: None,
        eval_fn: underwood,
    },
    FDModelSpec {
        name: "newell",
        params: &[
            param("v_f", 0.1, 200.0),
            param("rho_j", 1.0, 1000.0),
            param("lambda", 1.0, 1e5),
        ],
        guarded: true,
        nonphysical_note: None,
        eval_fn: newell,
    },
    FDModelSpec {
        name: "drake",
        params: &[param("v_f", 0.1, 200.0), param("rho_critical", 1.0, 1000.0)],
        guarded: false,
        nonphysical_note: None,
        eval_fn: drake,
    },
    FDModelSpec {
        name: "pipes",
        params: &[
            param("v_f", 0.1, 200.0),
            param("rho_j", 1.0, 1000.0),
            param("n", 0.05, 10.0),
        ],
        guarded: false,
        nonphysical_note: None,
        eval_fn: pipes,
    },
    FDModelSpec {
        name: "drew",
        params: &[
            param("v_f", 0.1, 200.0),
            param("rho_j", 1.0, 1000.0),
            param("m1", 0.05, 10.0),
            param("m2", 0.05, 10.0),
        ],
        guarded: false,
        nonphysical_note: None,
        eval_fn: drew,
    },
    FDModelSpec {
        name: "papageorgiou",
        params: &[
            param("v_f", 0.1, 200.0),
            param("rho_j", 1.0, 1000.0),
            param("alpha", 0.05, 10.0),
        ],
        guarded: false,
        nonphysical_note: None,
        eval_fn: papageorgiou,
    },
    FDModelSpec {
        name: "kerner-konhauser",
        params: &[param("v_f", 0.1, 200.0), param("rho_critical", 1.0, 1000.0)],
        guarded: false,
        nonphysical_note: None,
        eval_fn: kerner_konhauser,
    },
    FDModelSpec {
        name: "del-castillo-benitez",
        params: &[
            param("v_f", 0.1, 200.0),
            param("rho_j", 1.0, 1000.0),
            param("v_j", 0.01, 200.0),
        ],
        guarded: true,
        nonphysical_note: None,
        eval_fn: del_castillo_benitez,
    },
    FDModelSpec {
        name: "jayakrishnan",
        params: &[
            param("v_f", 0.1, 200.0),
            param("v_min", 0.0, 200.0),
            param("rho_j", 1.0, 1000.0),
        ],
        guarded: false,
        nonphysical_note: None,
        eval_fn: jayakrishnan,
    },
    FDModelSpec {
        name: "ardekani-ghandehari",
        params: &[
            param("v_critical", 0.1, 200.0),
            param("rho_j", 1.0, 1000.0),
            param("rho_min", 1e-4, 50.0),
        ],
        guarded: true,
        nonphysical_note: None,
        eval_fn: ardekani_ghandehari,
    },
    FDModelSpec {
        name: "macnicholas",
        params: &[
            param("v_f", 0.1, 200.0),
            param("rho_j", 1.0, 1e5),
            param("n", 0.1, 10.0),
            param("m", 1e-3, 1e6),
        ],
        guarded: false,
        nonphysical_note: Some("calibration can drift to non-physical jam densities"),
        eval_fn: macnicholas,
    },
    FDModelSpec {
        name: "wang",
        params: &[
            param("v_f", 0.1, 200.0),
            param("v_critical", 0.1, 200.0),
            param("rho_critical", 1.0, 1000.0),
            param("theta1", 0.01, 100.0),
            param("theta2", 0.01, 10.0),
        ],
        guarded: false,
        nonphysical_note: None,
        eval_fn: wang,
    },
    FDModelSpec {
        name: "cheng",
        params: &[
            param("v_f", 0.1, 200.0),
            param("rho_critical", 1.0, 1000.0),
            param("m", 1.0, 8.53),
        ],
        guarded: false,
        nonphysical_note: None,
        eval_fn: cheng,
    },
];

/// All single-regime model specs.
pub fn registry() -> &'static [FDModelSpec] {
    REGISTRY
}

/// Look up a spec by name (case-insensitive; `_` and `-` both accepted).
pub fn lookup(name: &str) -> Result<&'static FDModelSpec, ModelError> {
    let canon = name.trim().to_ascii_lowercase().replace('_', "-");
    registry()
        .iter()
        .find(|s| s.name == canon)
        .ok_or_else(|| ModelError::UnknownModel {
            name: name.to_string(),
            known: registry()
                .iter()
                .map(|s| s.name)
                .collect::<Vec<_>>()
                .join(", "),
        })
}

impl FDModelSpec {
    pub fn validate_params(&self, params: &[f64]) -> Result<(), ModelError> {
        if params.len() != self.params.len() {
            return Err(ModelError::ParamCount {
                model: self.name,
                expected: self.params.len(),
                got: params.len(),
            });
        }
        for (spec, &value) in self.params.iter().zip(params) {
            if !(value >= spec.lo && value <= spec.hi && value.is_finite()) {
                return Err(ModelError::ParamOutOfBounds {
                    model: self.name,
                    name: spec.name,
                    value,
                    lo: spec.lo,
                    hi: spec.hi,
                });
            }
        }
        Ok(())
    }

    /// Raw formula evaluation with the guard clamp; does not re-validate
    /// parameters (used in optimizer inner loops).
    pub fn eval_unchecked(&self, params: &[f64], density: f64) -> f64 {
        let rho = if self.guarded {
            density.max(GUARD_FLOOR)
        } else {
            density
        };
        (self.eval_fn)(params, rho)
    }
}

/// A spec bound to a concrete (validated) parameter vector.
#[derive(Debug, Clone)]
pub struct FDModel {
    spec: &'static FDModelSpec,
    params: Vec<f64>,
}

impl FDModel {
    pub fn new(spec: &'static FDModelSpec, params: Vec<f64>) -> Result<Self, ModelError> {
        spec.validate_params(&params)?;
        Ok(FDModel { spec, params })
    }

    pub fn from_name(name: &str, params: Vec<f64>) -> Result<Self, ModelError> {
        FDModel::new(lookup(name)?, params)
    }

    pub fn spec(&self) -> &'static FDModelSpec {
        self.spec
    }

    pub fn name(&self) -> &'static str {
        self.spec.name
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Speed (mph) at the given density (veh/mi).
    pub fn evaluate(&self, density: f64) -> f64 {
        self.spec.eval_unchecked(&self.params, density)
    }

    /// Flow (veh/h) at the given density: `rho * v(rho)`.
    pub fn evaluate_flow(&self, density: f64) -> f64 {
        density * self.evaluate(density)
    }

    /// Plain-text key-value document; floats print in shortest round-trip
    /// form, so parsing the document reproduces the exact parameter bits.
    pub fn to_document(&self) -> String {
        let mut out = format!("model = {}\n", self.spec.name);
        for (spec, value) in self.spec.params.iter().zip(&self.params) {
            out.push_str(&format!("{} = {}\n", spec.name, value));
        }
        out
    }

    pub fn from_document(doc: &str) -> Result<Self, ModelError> {
        let mut name = None;
        let mut values: HashMap<String, f64> = HashMap::new();
        for line in doc.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ModelError::BadDocument(format!("expected key = value, got \"{line}\"")))?;
            let key = key.trim();
            let value = value.trim();
            if key == "model" {
                name = Some(value.to_string());
            } else {
                let parsed = value
                    .parse::<f64>()
                    .map_err(|_| ModelError::BadDocument(format!("bad number for {key}: \"{value}\"")))?;
                values.insert(key.to_string(), parsed);
            }
        }
        let name = name.ok_or_else(|| ModelError::BadDocument("missing \"model\" line".into()))?;
        let spec = lookup(&name)?;
        let mut params = Vec::with_capacity(spec.params.len());
        for p in spec.params {
            let v = values
                .get(p.name)
                .ok_or_else(|| ModelError::BadDocument(format!("missing parameter {}", p.name)))?;
            params.push(*v);
        }
        FDModel::new(spec, params)
    }
}

/// Fixed multi-regime models from the historical literature; constants are
/// baked in and the models are evaluate-only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MultiRegimeModel {
    Edie,
    TwoRegime,
    ModifiedGreenberg,
    ThreeRegime,
}

impl MultiRegimeModel {
    pub fn all() -> [MultiRegimeModel; 4] {
        [
            MultiRegimeModel::Edie,
            MultiRegimeModel::TwoRegime,
            MultiRegimeModel::ModifiedGreenberg,
            MultiRegimeModel::ThreeRegime,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            MultiRegimeModel::Edie => "edie",
            MultiRegimeModel::TwoRegime => "two-regime",
            MultiRegimeModel::ModifiedGreenberg => "modified-greenberg",
            MultiRegimeModel::ThreeRegime => "three-regime",
        }
    }

    /// Speed (mph) from the piece whose density interval contains `density`.
    pub fn evaluate(&self, density: f64) -> f64 {
        let rho = density;
        match self {
            MultiRegimeModel::Edie => {
                if rho <= 50.0 {
                    54.9 * (-rho / 163.9).exp()
                } else {
                    26.8 * (162.5_f64 / rho).ln()
                }
            }
            MultiRegimeModel::TwoRegime => {
                if rho <= 65.0 {
                    60.9 - 0.515 * rho
                } else {
                    40.0 - 0.265 * rho
                }
            }
            MultiRegimeModel::ModifiedGreenberg => {
                if rho <= 35.0 {
                    48.0
                } else {
                    32.0 * (145.5_f64 / rho).ln()
                }
            }
            MultiRegimeModel::ThreeRegime => {
                if rho <= 40.0 {
                    50.0 - 0.098 * rho
                } else if rho <= 65.0 {
                    81.4 - 0.913 * rho
                } else {
                    40.0 - 0.265 * rho
                }
            }
        }
    }
}
