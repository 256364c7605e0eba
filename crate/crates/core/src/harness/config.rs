//! Declarative scenario files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::host::AttackPolicy;
use crate::toolchain::{OperatorGraph, OpKind, LayerSpec, Shape, TensorDecl, WeightTensor};

pub const CONFIG_VERSION: u32 = 1;
pub const SEED_ENV: &str = "ASCENDSIM_SEED";
pub const DEFAULT_FIRMWARE: &str = "1.0.0";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported scenario version {0}")]
    Version(u32),
    #[error("{SEED_ENV} is not an unsigned integer: {0:?}")]
    SeedEnv(String),
    #[error("unknown builtin model {0:?}")]
    UnknownModel(String),
    #[error("pre-sealed models cannot be run: the scenario needs the model provider's plaintext")]
    SealedModelPath,
    #[error("model does not compile: {0}")]
    Model(#[from] crate::toolchain::CompileError),
    #[error("rounds must be at least 1")]
    NoRounds,
    #[error("round {round} input has {found} values, the model takes {expected}")]
    InputLength { round: usize, expected: usize, found: usize },
    #[error("{0} rounds of inputs given for {1} rounds")]
    InputRounds(usize, u32),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSpec {
    Builtin(String),
    Graph(OperatorGraph),
    GraphFile(PathBuf),
    Sealed(PathBuf),
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Builtin("matmul_2x2".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpiConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    pub budget: u32,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    #[serde(default = "default_hbm")]
    pub hbm_size: u64,
    #[serde(default = "default_firmware")]
    pub firmware_version: String,
    /// Firmware versions the providers accept. Defaults to the one booted.
    #[serde(default)]
    pub trusted_firmware: Option<Vec<String>>,
    #[serde(default)]
    pub inject_unmap_failure: bool,
}

fn default_hbm() -> u64 {
    crate::device::DeviceConfig::default().hbm_size
}

fn default_firmware() -> String {
    DEFAULT_FIRMWARE.into()
}

impl Default for DeviceSection {
    fn default() -> Self {
        Self {
            hbm_size: default_hbm(),
            firmware_version: default_firmware(),
            trusted_firmware: None,
            inject_unmap_failure: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSpec,
    /// One entry per round: every model input flattened and concatenated.
    /// Drawn from the seed when absent.
    #[serde(default)]
    pub inputs: Option<Vec<Vec<i16>>>,
    #[serde(default = "one")]
    pub rounds: u32,
    #[serde(default = "honest")]
    pub attack: AttackPolicy,
    #[serde(default)]
    pub ppi: Option<PpiConfig>,
    #[serde(default)]
    pub device: DeviceSection,
}

fn one() -> u32 {
    1
}

fn honest() -> AttackPolicy {
    AttackPolicy::Honest
}

impl ScenarioConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            version: CONFIG_VERSION,
            seed,
            model: ModelSpec::default(),
            inputs: None,
            rounds: 1,
            attack: AttackPolicy::Honest,
            ppi: None,
            device: DeviceSection::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_str(text)?;
        if config.version != CONFIG_VERSION {
            return Err(ConfigError::Version(config.version));
        }
        Ok(config)
    }

    /// Reads a scenario file. Relative graph paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut config = Self::from_json(&text)?;
        if let ModelSpec::GraphFile(p) = &mut config.model {
            if p.is_relative() {
                *p = path.parent().unwrap_or(Path::new(".")).join(&*p);
            }
        }
        Ok(config)
    }

    /// Applies `ASCENDSIM_SEED` if set.
    pub fn with_env_seed(mut self) -> Result<Self, ConfigError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v.trim().parse().map_err(|_| ConfigError::SeedEnv(v))?;
        }
        Ok(self)
    }

    pub fn ppi_budget(&self) -> Option<u32> {
        self.ppi.as_ref().filter(|p| p.enabled).map(|p| p.budget)
    }

    pub fn graph(&self) -> Result<OperatorGraph, ConfigError> {
        match &self.model {
            ModelSpec::Builtin(name) => builtin_model(name).ok_or_else(|| ConfigError::UnknownModel(name.clone())),
            ModelSpec::Graph(g) => Ok(g.clone()),
            ModelSpec::GraphFile(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.clone(), source })?;
                Ok(serde_json::from_str(&text)?)
            }
            ModelSpec::Sealed(_) => Err(ConfigError::SealedModelPath),
        }
    }
}

pub const BUILTIN_MODELS: [&str; 3] = ["matmul_2x2", "canary_mlp", "identity_4x4"];

/// `matmul_2x2` is the three-layer example model. `canary_mlp` has
/// high-entropy weights so parameter leakage is detectable.
pub fn builtin_model(name: &str) -> Option<OperatorGraph> {
    match name {
        "matmul_2x2" => Some(OperatorGraph::matmul_2x2()),
        "identity_4x4" => Some(OperatorGraph::identity(Shape(4, 4))),
        "canary_mlp" => Some(canary_mlp()),
        _ => None,
    }
}

fn canary_mlp() -> OperatorGraph {
    // Fixed pseudo-random weights; any 16-byte window is a usable canary.
    let mut x: u32 = 0x9e37_79b9;
    let mut next = || {
        x ^= x << 13;
        x ^= x >> 17;
        x ^= x << 5;
        (x >> 16) as i16
    };
    let w: Vec<i16> = (0..64).map(|_| next()).collect();
    let b: Vec<i16> = (0..8).map(|_| next()).collect();
    let layer = |name: &str, op, inputs: Vec<u32>, output, shape| LayerSpec { name: name.into(), op, inputs, output, shape };
    OperatorGraph {
        inputs: vec![TensorDecl { id: 0, shape: Shape(1, 8) }],
        weights: vec![
            WeightTensor { id: 1, shape: Shape(8, 8), data: w },
            WeightTensor { id: 2, shape: Shape(1, 8), data: b },
        ],
        layers: vec![
            layer("te_copy_in_1", OpKind::CopyIn, vec![0], 3, Shape(1, 8)),
            layer("fc1_matmul", OpKind::MatMul, vec![3, 1], 4, Shape(1, 8)),
            layer("fc1_bias", OpKind::Add, vec![4, 2], 5, Shape(1, 8)),
            layer("fc1_relu", OpKind::Relu, vec![5], 6, Shape(1, 8)),
            layer("te_copy_out_1", OpKind::CopyOut, vec![6], 7, Shape(1, 8)),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses() {
        let c = ScenarioConfig::from_json(r#"{"version":1,"seed":7}"#).unwrap();
        assert_eq!(c, ScenarioConfig::new(7));
    }

    #[test]
    fn full_config_parses() {
        let c = ScenarioConfig::from_json(
            r#"{"version":1,"seed":3,"model":{"builtin":"canary_mlp"},"rounds":2,
                "attack":"TAMPER_PC","ppi":{"budget":1},"device":{"hbm_size":1048576}}"#,
        )
        .unwrap();
        assert_eq!(c.attack, AttackPolicy::TamperPc);
        assert_eq!(c.ppi_budget(), Some(1));
        assert_eq!(c.device.hbm_size, 1 << 20);
        assert_eq!(c.device.firmware_version, DEFAULT_FIRMWARE);
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(matches!(ScenarioConfig::from_json(r#"{"version":2}"#), Err(ConfigError::Version(2))));
        assert!(matches!(ScenarioConfig::from_json(r#"{"version":1,"sed":1}"#), Err(ConfigError::Parse(_))));
        assert!(ScenarioConfig::from_json("not json").is_err());
        let mut c = ScenarioConfig::new(0);
        c.model = ModelSpec::Builtin("resnet".into());
        assert!(matches!(c.graph(), Err(ConfigError::UnknownModel(_))));
        c.model = ModelSpec::Sealed("m.sealed".into());
        assert!(matches!(c.graph(), Err(ConfigError::SealedModelPath)));
    }

    #[test]
    fn builtins_compile() {
        for name in BUILTIN_MODELS {
            crate::toolchain::compile(&builtin_model(name).unwrap()).unwrap();
        }
    }
}
