//! On-disk run layout:
//!
//! ```text
//! <run>/config.json          config snapshot
//! <run>/checkpoint.json      last completed generation, written last
//! <run>/population/gen_NNN.tsv   "<fitness>\t<s-expression>" per individual
//! <run>/cache.tsv            fitness cache
//! <run>/stats.csv            per-individual statistics, all generations
//! <run>/report.json          final report, once the run is complete
//! ```
//!
//! RNG state is never stored: every stream is re-derived from the seed.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arch::BlockLibrary;
use crate::genome::Individual;
use crate::sexpr;

use super::{EngineError, EvolutionConfig};

/// Writes through a sibling temp file and a rename so readers never see a
/// half-written file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub sexpr: String,
    pub fitness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub completed_generation: u32,
    /// Evaluator items spent per generation, generation 0 first.
    pub evaluations: Vec<usize>,
    pub best: BestRecord,
}

#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.root.join("checkpoint.json")
    }

    pub fn cache_path(&self) -> PathBuf {
        self.root.join("cache.tsv")
    }

    pub fn stats_path(&self) -> PathBuf {
        self.root.join("stats.csv")
    }

    pub fn report_path(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn population_path(&self, generation: u32) -> PathBuf {
        self.root.join("population").join(format!("gen_{generation:03}.tsv"))
    }

    fn io_err(path: &Path) -> impl FnOnce(io::Error) -> EngineError + '_ {
        move |source| EngineError::Io { path: path.to_path_buf(), source }
    }

    pub fn create(&self) -> Result<(), EngineError> {
        let dir = self.root.join("population");
        fs::create_dir_all(&dir).map_err(Self::io_err(&dir))
    }

    pub fn write(&self, path: &Path, bytes: &[u8]) -> Result<(), EngineError> {
        write_atomic(path, bytes).map_err(Self::io_err(path))
    }

    pub fn write_config(&self, config: &EvolutionConfig) -> Result<(), EngineError> {
        let json = serde_json::to_string_pretty(config).expect("config serialization is infallible");
        self.write(&self.config_path(), format!("{json}\n").as_bytes())
    }

    pub fn read_config(&self) -> Result<EvolutionConfig, EngineError> {
        let path = self.config_path();
        let text = fs::read_to_string(&path).map_err(Self::io_err(&path))?;
        let mut config: EvolutionConfig = serde_json::from_str(&text).map_err(|e| EngineError::CorruptCheckpoint {
            file: path.clone(),
            generation: None,
            reason: e.to_string(),
        })?;
        config.validate()?;
        config.run_dir = self.root.clone();
        Ok(config)
    }

    pub fn write_checkpoint(&self, checkpoint: &Checkpoint) -> Result<(), EngineError> {
        let json = serde_json::to_string_pretty(checkpoint).expect("checkpoint serialization is infallible");
        self.write(&self.checkpoint_path(), format!("{json}\n").as_bytes())
    }

    pub fn read_checkpoint(&self) -> Result<Option<Checkpoint>, EngineError> {
        let path = self.checkpoint_path();
        let text = match fs::read_to_string(&path) {
            Ok(text) => text,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Self::io_err(&path)(e)),
        };
        let checkpoint: Checkpoint = serde_json::from_str(&text).map_err(|e| EngineError::CorruptCheckpoint {
            file: path.clone(),
            generation: None,
            reason: e.to_string(),
        })?;
        if checkpoint.evaluations.len() != checkpoint.completed_generation as usize + 1 {
            return Err(EngineError::CorruptCheckpoint {
                file: path,
                generation: Some(checkpoint.completed_generation),
                reason: "evaluation counts do not match the generation count".into(),
            });
        }
        Ok(Some(checkpoint))
    }

    pub fn write_population(&self, generation: u32, pop: &[Individual]) -> Result<(), EngineError> {
        let mut text = String::new();
        for ind in pop {
            let fitness = ind.fitness().expect("only evaluated populations are checkpointed");
            text.push_str(&format!("{fitness}\t{}\n", ind.key()));
        }
        self.write(&self.population_path(generation), text.as_bytes())
    }

    pub fn read_population(
        &self,
        generation: u32,
        expected_len: usize,
        library: &BlockLibrary,
    ) -> Result<Vec<Individual>, EngineError> {
        let path = self.population_path(generation);
        let corrupt = |reason: String| EngineError::CorruptCheckpoint {
            file: path.clone(),
            generation: Some(generation),
            reason,
        };
        let text = fs::read_to_string(&path).map_err(|e| corrupt(e.to_string()))?;
        let mut pop = Vec::with_capacity(expected_len);
        for (i, line) in text.lines().enumerate() {
            let (fitness, key) =
                line.split_once('\t').ok_or_else(|| corrupt(format!("line {}: missing tab", i + 1)))?;
            let fitness: f64 = fitness
                .parse()
                .map_err(|_| corrupt(format!("line {}: bad fitness {fitness:?}", i + 1)))?;
            let genome = sexpr::parse(key, library).map_err(|e| corrupt(format!("line {}: {e}", i + 1)))?;
            let ind = Individual::new(genome, generation)
                .with_fitness(fitness)
                .map_err(|e| corrupt(format!("line {}: {e}", i + 1)))?;
            if ind.key() != key {
                return Err(corrupt(format!("line {}: s-expression is not canonical", i + 1)));
            }
            pop.push(ind);
        }
        if pop.len() != expected_len {
            return Err(corrupt(format!("{} individuals, expected {expected_len}", pop.len())));
        }
        Ok(pop)
    }
}
