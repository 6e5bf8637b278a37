use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arch::{BlockLibrary, BlockSpec, Classifier, InputShape, NetworkFrame, ShortcutPolicy};
use crate::fitness::{ExternalConfig, SurrogateParams};
use crate::genome::{BlockId, STRIDE_BUDGET};
use crate::operators::{CrossoverConfig, Normalization};

use super::EngineError;

/// Which evaluator scores the population. Written as `surrogate` or
/// `external:<shell command>`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EvaluatorChoice {
    #[default]
    Surrogate,
    External(String),
}

impl std::str::FromStr for EvaluatorChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "surrogate" {
            return Ok(EvaluatorChoice::Surrogate);
        }
        match s.strip_prefix("external:") {
            Some(cmd) => {
                let cmd = cmd.trim();
                let cmd = cmd
                    .strip_prefix('"')
                    .and_then(|c| c.strip_suffix('"'))
                    .unwrap_or(cmd);
                if cmd.is_empty() {
                    Err("external evaluator needs a command".into())
                } else {
                    Ok(EvaluatorChoice::External(cmd.to_string()))
                }
            }
            None => Err(format!("unknown evaluator {s:?}; expected surrogate or external:<command>")),
        }
    }
}

impl TryFrom<String> for EvaluatorChoice {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<EvaluatorChoice> for String {
    fn from(choice: EvaluatorChoice) -> String {
        choice.to_string()
    }
}

impl fmt::Display for EvaluatorChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvaluatorChoice::Surrogate => f.write_str("surrogate"),
            EvaluatorChoice::External(cmd) => write!(f, "external:{cmd}"),
        }
    }
}

/// Every run parameter. Field names are the config-file keys; unknown keys
/// are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolutionConfig {
    pub population_size: usize,
    pub generations: u32,
    pub mutation_rate: f64,
    pub max_depth: usize,
    pub mutation_subtree_depth: usize,
    pub str_budget: usize,
    pub base_filters: u32,
    pub block_library: BTreeMap<BlockId, BlockSpec>,
    pub surrogate_target_params: u64,
    pub surrogate_width: f64,
    pub surrogate_affinity: BTreeMap<BlockId, f64>,
    pub surrogate_stride_cap: u32,
    pub surrogate_noise: f64,
    pub evaluator: EvaluatorChoice,
    pub evaluator_workers: usize,
    pub evaluator_timeout_secs: f64,
    pub seed: u64,
    pub run_dir: PathBuf,
    pub normalization: Normalization,
    pub shortcut: ShortcutPolicy,
    pub input_height: u32,
    pub input_width: u32,
    pub input_channels: u32,
    pub classes: u32,
    pub global_pool: bool,
    pub max_nodes: Option<usize>,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        let library = BlockLibrary::default();
        let surrogate = SurrogateParams::default();
        let input = InputShape::default();
        let classifier = Classifier::default();
        EvolutionConfig {
            population_size: 20,
            generations: 10,
            mutation_rate: 0.20,
            max_depth: 10,
            mutation_subtree_depth: 4,
            str_budget: STRIDE_BUDGET,
            base_filters: library.base_filters,
            block_library: library.entries,
            surrogate_target_params: surrogate.target_params,
            surrogate_width: surrogate.width,
            surrogate_affinity: surrogate.affinity,
            surrogate_stride_cap: surrogate.stride_cap,
            surrogate_noise: surrogate.noise,
            evaluator: EvaluatorChoice::Surrogate,
            evaluator_workers: 1,
            evaluator_timeout_secs: 3600.0,
            seed: 0,
            run_dir: PathBuf::from("runs/default"),
            normalization: Normalization::Max,
            shortcut: ShortcutPolicy::Projection,
            input_height: input.h,
            input_width: input.w,
            input_channels: input.c,
            classes: classifier.classes,
            global_pool: classifier.gap,
            max_nodes: None,
        }
    }
}

impl EvolutionConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, EngineError> {
        let config: EvolutionConfig =
            toml::from_str(text).map_err(|e| EngineError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            EngineError::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
            .map_err(|e| EngineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let fail = |msg: String| Err(EngineError::Config(msg));
        if self.population_size < 4 || !self.population_size.is_multiple_of(2) {
            return fail(format!("population_size {} must be even and >= 4", self.population_size));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return fail(format!("mutation_rate {} outside [0, 1]", self.mutation_rate));
        }
        if self.max_depth < 2 {
            return fail("max_depth must be >= 2".into());
        }
        if self.mutation_subtree_depth < 1 {
            return fail("mutation_subtree_depth must be >= 1".into());
        }
        if self.str_budget != STRIDE_BUDGET {
            return fail(format!("str_budget is fixed at {STRIDE_BUDGET}"));
        }
        self.library().validate().map_err(|e| EngineError::Config(e.to_string()))?;
        self.surrogate().validate().map_err(EngineError::Config)?;
        if let Some(id) = self.surrogate_affinity.keys().find(|id| !self.block_library.contains_key(*id)) {
            return fail(format!("surrogate_affinity names unknown block {id}"));
        }
        if self.input_height == 0 || self.input_width == 0 || self.input_channels == 0 {
            return fail("input dimensions must be >= 1".into());
        }
        if self.classes == 0 {
            return fail("classes must be >= 1".into());
        }
        if self.evaluator_workers == 0 {
            return fail("evaluator_workers must be >= 1".into());
        }
        if self.evaluator_timeout_secs <= 0.0 || !self.evaluator_timeout_secs.is_finite() {
            return fail("evaluator_timeout_secs must be a positive number".into());
        }
        if self.max_nodes.is_some_and(|n| n < 3) {
            return fail("max_nodes must be >= 3".into());
        }
        Ok(())
    }

    pub fn library(&self) -> BlockLibrary {
        BlockLibrary { base_filters: self.base_filters, entries: self.block_library.clone() }
    }

    pub fn frame(&self) -> NetworkFrame {
        NetworkFrame {
            input: InputShape { h: self.input_height, w: self.input_width, c: self.input_channels },
            classifier: Classifier { classes: self.classes, gap: self.global_pool },
            shortcut: self.shortcut,
        }
    }

    pub fn surrogate(&self) -> SurrogateParams {
        SurrogateParams {
            target_params: self.surrogate_target_params,
            width: self.surrogate_width,
            affinity: self.surrogate_affinity.clone(),
            stride_cap: self.surrogate_stride_cap,
            noise: self.surrogate_noise,
        }
    }

    pub fn crossover(&self) -> CrossoverConfig {
        CrossoverConfig { normalization: self.normalization, max_nodes: self.max_nodes }
    }

    pub fn external(&self) -> Option<ExternalConfig> {
        match &self.evaluator {
            EvaluatorChoice::Surrogate => None,
            EvaluatorChoice::External(command) => Some(ExternalConfig {
                command: command.clone(),
                workers: self.evaluator_workers,
                timeout: Duration::from_secs_f64(self.evaluator_timeout_secs),
                ..ExternalConfig::new(command.clone())
            }),
        }
    }

    /// Digest of every field except `run_dir`, guarding resumes against
    /// edited configs.
    pub fn fingerprint(&self) -> String {
        let mut anchored = self.clone();
        anchored.run_dir = PathBuf::new();
        let json = serde_json::to_string(&anchored).expect("config serialization is infallible");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
