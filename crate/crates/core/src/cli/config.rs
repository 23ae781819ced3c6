use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::estimates::FaultInjection;
use crate::solver::ContinuationOptions;
use crate::trig::TrigPoly;

/// Value of the `schema` key this build understands.
pub const SCHEMA: &str = "pcurve/1";

pub const MAX_DIM: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemSpec>,
    #[serde(default)]
    pub solver: ContinuationOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manufactured: Option<ManufacturedSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceSpec>,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub n: usize,
    pub p: usize,
    pub t: f64,
    pub grid: Vec<usize>,
    pub background: Background,
    pub tensor: TensorSpec,
    /// Required unless a manufactured solution supplies `f`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<ScalarSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Background {
    Flat,
    /// `g = e^{2 phi} delta`.
    ConformalFlat {
        phi: TrigPoly,
    },
    /// Metric components read from a tensor field file.
    Prescribed {
        metric_file: PathBuf,
    },
}

/// Source of the background tensor `A^t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TensorSpec {
    /// Computed from the curvature of the background metric.
    Geometric,
    /// `A = -level * g`.
    Isotropic {
        level: ScalarSpec,
    },
    File {
        path: PathBuf,
    },
}

/// A scalar field: a number, a trigonometric polynomial, or a field file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarSpec {
    Constant(f64),
    File { file: PathBuf },
    Trig(TrigPoly),
}

impl ScalarSpec {
    /// Analytic form, when there is one.
    pub fn as_trig(&self) -> Option<TrigPoly> {
        match self {
            ScalarSpec::Constant(c) => Some(TrigPoly::constant(*c)),
            ScalarSpec::Trig(p) => Some(p.clone()),
            ScalarSpec::File { .. } => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ManufacturedMode {
    /// `f` from the discrete operator; `u*` is an exact discrete root.
    Discrete,
    /// `f` from analytic derivatives of `u*`.
    Continuum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManufacturedSpec {
    pub u_star: TrigPoly,
    pub mode: ManufacturedMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSpec {
    /// Points per axis at each level.
    pub resolutions: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySpec {
    pub dims: Vec<usize>,
    pub t_values: Vec<f64>,
    pub samples: usize,
    /// Test hook for the violation path.
    pub fault_injection: FaultInjection,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            dims: vec![3, 4, 5],
            t_values: vec![-1.0, 0.0, 0.5, 0.99],
            samples: 2000,
            fault_injection: FaultInjection::None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Also write the final Jacobian in coordinate format.
    pub dump_jacobian: bool,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: Config = toml::from_str(text).map_err(|e| e.to_string())?;
        if cfg.schema != SCHEMA {
            return Err(format!(
                "unsupported schema {:?}, expected {SCHEMA:?}",
                cfg.schema
            ));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }
}
