//! Serializable run configuration: a run is reproducible from its persisted
//! config plus the seed, and every output file embeds the config hash.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ou_evolution::coeffs::{CoefficientModel, CoeffsError, ModelDescription};
use ou_evolution::gaussmeasure::QuadScheme;
use ou_evolution::weights::WeightSpec;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Built-in model name, or a path to a model description JSON, or an
    /// inline description object.
    pub model: ModelSpec,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default = "default_weight")]
    pub weight: String,
    #[serde(default = "default_quad")]
    pub quad: String,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: String,
    pub command: CommandConfig,
}

fn default_weight() -> String {
    "poly:1".into()
}

fn default_quad() -> String {
    "gh:40".into()
}

fn default_tol() -> f64 {
    1e-10
}

fn default_out() -> String {
    "out".into()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Name(String),
    Inline(Box<ModelDescription>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandConfig {
    Validate,
    Flow {
        s: f64,
        t: f64,
        #[serde(default = "default_rows")]
        rows: usize,
    },
    Apply {
        s: f64,
        t: f64,
        x: Vec<f64>,
        f: String,
        #[serde(default)]
        deriv: u8,
    },
    Norm {
        f: String,
        #[serde(default)]
        holder: Option<f64>,
        #[serde(default = "default_radii")]
        radii: Vec<f64>,
        #[serde(default = "default_points")]
        points: usize,
    },
    Solve {
        problem: ProblemConfig,
    },
    Rates {
        alpha: f64,
        theta: f64,
    },
    Envelopes {
        #[serde(default = "default_pairs")]
        pairs: usize,
    },
    Counterexample {
        gamma: f64,
        #[serde(default)]
        s: f64,
        #[serde(default = "default_t1")]
        t: f64,
        #[serde(default = "default_rmax")]
        r_max: f64,
    },
    Compactness {
        s: f64,
        r: f64,
        t: f64,
        #[serde(default)]
        n_max: Option<f64>,
    },
}

fn default_rows() -> usize {
    24
}

fn default_radii() -> Vec<f64> {
    vec![5.0, 10.0, 20.0]
}

fn default_points() -> usize {
    192
}

fn default_pairs() -> usize {
    10
}

fn default_t1() -> f64 {
    1.0
}

fn default_rmax() -> f64 {
    256.0
}

/// Problem file payload for `solve`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default = "default_weight")]
    pub weight: String,
    /// Terminal datum: a test-bank name.
    pub phi: String,
    /// Source: a named time-dependent field, or absent for the homogeneous
    /// problem.
    #[serde(default)]
    pub f: Option<String>,
    pub a: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
}

fn default_theta() -> f64 {
    0.5
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
    #[serde(default = "default_h_s")]
    pub h_s: f64,
    #[serde(default = "default_gl_order")]
    pub gl_order: usize,
}

fn default_h_s() -> f64 {
    0.02
}

fn default_gl_order() -> usize {
    6
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            times: Vec::new(),
            points: Vec::new(),
            h_s: default_h_s(),
            gl_order: default_gl_order(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    #[serde(default = "default_tol")]
    pub flow_tol: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        ToleranceConfig {
            flow_tol: default_tol(),
        }
    }
}

#[derive(Debug)]
pub enum ConfigError {
    Parse(String),
    UnknownName(String),
    Io(std::io::Error),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Parse(m) => write!(f, "config error: {m}"),
            ConfigError::UnknownName(m) => write!(f, "config error: unknown name {m}"),
            ConfigError::Io(e) => write!(f, "config error: {e}"),
        }
    }
}

impl std::error::Error for ConfigError {}

impl From<std::io::Error> for ConfigError {
    fn from(e: std::io::Error) -> Self {
        ConfigError::Io(e)
    }
}

impl RunConfig {
    /// Canonical JSON serialization hashed with SHA-256; embedded in every
    /// output file.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(canon.as_bytes());
        hex::encode(&h.finalize()[..8])
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn resolve_model(&self) -> Result<CoefficientModel, ConfigError> {
        resolve_model_spec(&self.model, self.dim)
    }

    pub fn resolve_weight(&self) -> Result<WeightSpec, ConfigError> {
        WeightSpec::parse(&self.weight).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn resolve_quad(&self) -> Result<QuadScheme, ConfigError> {
        QuadScheme::parse(&self.quad).map_err(ConfigError::Parse)
    }
}

pub fn resolve_model_spec(
    spec: &ModelSpec,
    dim: Option<usize>,
) -> Result<CoefficientModel, ConfigError> {
    match spec {
        ModelSpec::Name(name) => {
            if CoefficientModel::builtin_names().contains(&name.as_str()) {
                CoefficientModel::builtin(name, dim).map_err(coeffs_to_config)
            } else if name.ends_with(".json") {
                let text = std::fs::read_to_string(name)?;
                CoefficientModel::from_json_str(&text).map_err(coeffs_to_config)
            } else {
                Err(ConfigError::UnknownName(format!(
                    "`{name}` (expected one of {:?} or a .json path)",
                    CoefficientModel::builtin_names()
                )))
            }
        }
        ModelSpec::Inline(desc) => {
            CoefficientModel::from_description(desc).map_err(coeffs_to_config)
        }
    }
}

fn coeffs_to_config(e: CoeffsError) -> ConfigError {
    match e {
        CoeffsError::Json(j) => ConfigError::Parse(format!("model JSON: {j}")),
        CoeffsError::UnknownBuiltin(n) => ConfigError::UnknownName(n),
        other => ConfigError::Parse(other.to_string()),
    }
}
