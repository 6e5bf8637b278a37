//! The generational loop: initialize, evaluate generation 0, then for each
//! generation select, cross over, mutate, evaluate and keep the elite.
//! Every generation is checkpointed before the next begins.

mod checkpoint;
mod config;
mod stats;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{self, ArchDescriptor, BlockLibrary, NetworkFrame};
use crate::fitness::{
    evaluate_population, EvalError, Evaluator, ExternalEvaluator, FitnessCache, SurrogateEvaluator,
};
use crate::genome::{BlockId, Individual};
use crate::operators::{self, CrossoverConfig, ScheduleParams};
use crate::rng::{Role, RngStream};

pub(crate) use checkpoint::write_atomic;
pub use checkpoint::{BestRecord, Checkpoint, RunDir};
pub use config::{EvaluatorChoice, EvolutionConfig};
pub use stats::{stats_snapshot, write_stats_csv, BoxSummary, GenerationStats, IndividualRow};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{} already holds a run; resume it or choose another directory", .0.display())]
    RunExists(PathBuf),
    #[error("{} has no checkpoint", .0.display())]
    NoCheckpoint(PathBuf),
    #[error("corrupt checkpoint {}{}: {reason}", file.display(), generation.map(|g| format!(" (generation {g})")).unwrap_or_default())]
    CorruptCheckpoint { file: PathBuf, generation: Option<u32>, reason: String },
    #[error("config fingerprint {found} does not match checkpoint {expected}; refusing to resume")]
    ConfigMismatch { expected: String, found: String },
    #[error(transparent)]
    Evaluator(#[from] EvalError),
    #[error("stats output: {0}")]
    Csv(#[from] csv::Error),
}

impl EngineError {
    /// Usage and configuration problems, as opposed to runtime failures.
    pub fn is_config_error(&self) -> bool {
        matches!(self, EngineError::Config(_) | EngineError::ConfigMismatch { .. } | EngineError::RunExists(_))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestIndividual {
    pub sexpr: String,
    pub fitness: f64,
    pub descriptor: Option<ArchDescriptor>,
    pub param_count: Option<u64>,
    pub conv_layers: Option<usize>,
    pub composition: BTreeMap<BlockId, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub best: BestIndividual,
    pub generations: Vec<GenerationStats>,
    pub config: EvolutionConfig,
    pub total_evaluations: usize,
}

impl RunReport {
    pub fn best_fitness_by_generation(&self) -> Vec<f64> {
        self.generations.iter().map(|g| g.fitness.max).collect()
    }
}

fn build_evaluator(config: &EvolutionConfig) -> Box<dyn Evaluator> {
    match config.external() {
        None => Box::new(SurrogateEvaluator {
            params: config.surrogate(),
            library: config.library(),
            noise_seed: config.seed,
        }),
        Some(external) => Box::new(ExternalEvaluator::new(external)),
    }
}

/// Higher fitness wins, then fewer nodes; an equal challenger keeps the
/// incumbent.
fn improves_on(challenger: &Individual, incumbent: &Individual) -> bool {
    let (c, i) = (challenger.fitness().unwrap_or(0.0), incumbent.fitness().unwrap_or(0.0));
    c > i || (c == i && challenger.node_count() < incumbent.node_count())
}

pub struct Engine {
    config: EvolutionConfig,
    library: BlockLibrary,
    frame: NetworkFrame,
    terminals: Vec<BlockId>,
    crossover: CrossoverConfig,
    evaluator: Box<dyn Evaluator>,
    cache: FitnessCache,
    dir: RunDir,
    state: Option<State>,
}

struct State {
    generation: u32,
    population: Vec<Individual>,
    stats: Vec<GenerationStats>,
    evaluations: Vec<usize>,
    best: Individual,
}

impl Engine {
    /// Prepares a fresh run in `config.run_dir` with the configured evaluator.
    pub fn new(config: EvolutionConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let evaluator = build_evaluator(&config);
        Self::with_evaluator(config, evaluator)
    }

    pub fn with_evaluator(config: EvolutionConfig, evaluator: Box<dyn Evaluator>) -> Result<Self, EngineError> {
        config.validate()?;
        let dir = RunDir::new(&config.run_dir);
        if dir.checkpoint_path().exists() {
            return Err(EngineError::RunExists(config.run_dir.clone()));
        }
        Ok(Self::assemble(config, evaluator, FitnessCache::new(), dir))
    }

    /// Starts a fresh run from previously recorded fitnesses; cached genomes
    /// are never sent to the evaluator.
    pub fn with_cache(mut self, cache: FitnessCache) -> Self {
        assert!(self.state.is_none(), "cache can only be replaced before the run starts");
        self.cache = cache;
        self
    }

    /// Re-opens a checkpointed run using the evaluator from its config.
    pub fn open(run_dir: impl AsRef<Path>) -> Result<Self, EngineError> {
        let config = RunDir::new(run_dir.as_ref()).read_config()?;
        let evaluator = build_evaluator(&config);
        Self::open_with(run_dir, evaluator)
    }

    pub fn open_with(run_dir: impl AsRef<Path>, evaluator: Box<dyn Evaluator>) -> Result<Self, EngineError> {
        Self::open_checked(run_dir, evaluator, None)
    }

    /// Like [`Engine::open_with`], additionally refusing to resume when
    /// `expected` differs from the stored config.
    pub fn open_checked(
        run_dir: impl AsRef<Path>,
        evaluator: Box<dyn Evaluator>,
        expected: Option<&EvolutionConfig>,
    ) -> Result<Self, EngineError> {
        let dir = RunDir::new(run_dir.as_ref());
        let config = dir.read_config()?;
        let checkpoint = dir
            .read_checkpoint()?
            .ok_or_else(|| EngineError::NoCheckpoint(dir.root().to_path_buf()))?;
        for found in [Some(config.fingerprint()), expected.map(EvolutionConfig::fingerprint)].into_iter().flatten() {
            if found != checkpoint.config_hash {
                return Err(EngineError::ConfigMismatch { expected: checkpoint.config_hash.clone(), found });
            }
        }
        let cache = FitnessCache::load(&dir.cache_path())?;
        let mut engine = Self::assemble(config, evaluator, cache, dir);
        engine.state = Some(engine.load_state(&checkpoint)?);
        Ok(engine)
    }

    fn assemble(config: EvolutionConfig, evaluator: Box<dyn Evaluator>, cache: FitnessCache, dir: RunDir) -> Self {
        let library = config.library();
        Engine {
            frame: config.frame(),
            terminals: library.ids().cloned().collect(),
            crossover: config.crossover(),
            library,
            evaluator,
            cache,
            dir,
            config,
            state: None,
        }
    }

    fn load_state(&self, checkpoint: &Checkpoint) -> Result<State, EngineError> {
        let n = self.config.population_size;
        let mut stats = Vec::new();
        let mut population = Vec::new();
        for generation in 0..=checkpoint.completed_generation {
            population = self.dir.read_population(generation, n, &self.library)?;
            stats.push(stats_snapshot(&population, generation, &self.library, &self.frame));
        }
        let corrupt = |reason: String| EngineError::CorruptCheckpoint {
            file: self.dir.checkpoint_path(),
            generation: Some(checkpoint.completed_generation),
            reason,
        };
        let genome = crate::sexpr::parse(&checkpoint.best.sexpr, &self.library).map_err(|e| corrupt(e.to_string()))?;
        let best = Individual::new(genome, 0)
            .with_fitness(checkpoint.best.fitness)
            .map_err(|e| corrupt(e.to_string()))?;
        Ok(State {
            generation: checkpoint.completed_generation,
            population,
            stats,
            evaluations: checkpoint.evaluations.clone(),
            best,
        })
    }

    pub fn config(&self) -> &EvolutionConfig {
        &self.config
    }

    /// Last checkpointed generation, if any.
    pub fn completed_generation(&self) -> Option<u32> {
        self.state.as_ref().map(|s| s.generation)
    }

    pub fn population(&self) -> &[Individual] {
        self.state.as_ref().map_or(&[], |s| &s.population)
    }

    /// Runs to the configured final generation.
    pub fn run(&mut self) -> Result<RunReport, EngineError> {
        self.advance_to(self.config.generations)?;
        Ok(self.report())
    }

    /// Runs until generation `last` (clamped to the configured count) is
    /// checkpointed.
    pub fn advance_to(&mut self, last: u32) -> Result<(), EngineError> {
        let last = last.min(self.config.generations);
        if self.state.is_none() {
            self.initialize()?;
        }
        while let Some(t) = self.state.as_ref().map(|s| s.generation + 1).filter(|&t| t <= last) {
            self.step(t)?;
        }
        if self.completed_generation() == Some(self.config.generations) {
            let json = serde_json::to_string_pretty(&self.report()).expect("report serialization is infallible");
            self.dir.write(&self.dir.report_path(), format!("{json}\n").as_bytes())?;
        }
        Ok(())
    }

    fn initialize(&mut self) -> Result<(), EngineError> {
        self.dir.create()?;
        self.dir.write_config(&self.config)?;
        let mut rng = RngStream::derive(self.config.seed, 0, Role::Init, 0);
        let trees = operators::ramped_half_and_half(
            &mut rng,
            &self.terminals,
            self.config.population_size,
            self.config.max_depth,
        );
        let pop = trees.into_iter().map(|t| Individual::new(t, 0)).collect();
        let (pop, summary) = self.evaluate(pop, 0)?;
        let best = pop
            .iter()
            .fold(None::<&Individual>, |best, ind| match best {
                Some(b) if !improves_on(ind, b) => Some(b),
                _ => Some(ind),
            })
            .expect("population is non-empty")
            .clone();
        let stats = stats_snapshot(&pop, 0, &self.library, &self.frame);
        self.state = Some(State {
            generation: 0,
            population: pop,
            stats: vec![stats],
            evaluations: vec![summary],
            best,
        });
        self.checkpoint()
    }

    fn evaluate(&self, pop: Vec<Individual>, generation: u32) -> Result<(Vec<Individual>, usize), EngineError> {
        let (pop, summary) =
            evaluate_population(pop, generation, self.evaluator.as_ref(), &self.cache, &self.library, &self.frame)?;
        info!(
            "generation {generation}: {} evaluated, {} cache hits, {} failures",
            summary.evaluated, summary.cache_hits, summary.failures
        );
        Ok((pop, summary.evaluated))
    }

    /// Builds exactly N children for generation `t`. Each pair and each
    /// child draws from its own derived stream, so the result does not
    /// depend on how rayon schedules the work.
    fn breed(&self, t: u32, parents: &[Individual]) -> Vec<Individual> {
        let n = self.config.population_size;
        let seed = self.config.seed;
        let generations = self.config.generations;
        let kappa = operators::tournament_size(t, generations, n);
        let params = ScheduleParams {
            population_size: n,
            generations,
            generation: t,
            mutation_rate: self.config.mutation_rate,
            max_depth: self.config.max_depth,
            mutation_subtree_depth: self.config.mutation_subtree_depth,
        };
        let mut children: Vec<Individual> = (0..n.div_ceil(2))
            .into_par_iter()
            .flat_map_iter(|pair| {
                let mut select = RngStream::derive(seed, t as u64, Role::Selection, pair as u64);
                let a = operators::tournament_select(parents, kappa, &mut select).expect("parents are evaluated");
                let b = operators::tournament_select(parents, kappa, &mut select).expect("parents are evaluated");
                let mut rng = RngStream::derive(seed, t as u64, Role::Crossover, pair as u64);
                let (x, y) = operators::crossover(&parents[a], &parents[b], t, generations, &self.crossover, &mut rng);
                [x, y]
            })
            .collect();
        children.truncate(n);
        children
            .into_par_iter()
            .enumerate()
            .map(|(i, child)| {
                let mut gate = RngStream::derive(seed, t as u64, Role::MutationGate, i as u64);
                if gate.random::<f64>() < params.mutation_rate {
                    let mut rng = RngStream::derive(seed, t as u64, Role::Mutation, i as u64);
                    operators::mutate(&child, &params, &self.terminals, self.config.max_nodes, &mut rng)
                } else {
                    child
                }
            })
            .collect()
    }

    fn step(&mut self, t: u32) -> Result<(), EngineError> {
        let parents = std::mem::take(&mut self.state.as_mut().expect("initialized").population);
        let children = self.breed(t, &parents);
        let (children, evaluated) = self.evaluate(children, t)?;
        let challenger = children
            .iter()
            .fold(None::<&Individual>, |best, ind| match best {
                Some(b) if !improves_on(ind, b) => Some(b),
                _ => Some(ind),
            })
            .cloned();
        let survivors = operators::elitism_update(parents, children).expect("both pools are evaluated");
        let stats = stats_snapshot(&survivors, t, &self.library, &self.frame);
        let state = self.state.as_mut().expect("initialized");
        if let Some(c) = challenger.filter(|c| improves_on(c, &state.best)) {
            state.best = c;
        }
        info!("generation {t}: best fitness {:.4}, median {:.4}", stats.fitness.max, stats.fitness.median);
        state.generation = t;
        state.population = survivors;
        state.stats.push(stats);
        state.evaluations.push(evaluated);
        self.checkpoint()
    }

    fn checkpoint(&self) -> Result<(), EngineError> {
        let state = self.state.as_ref().expect("initialized");
        self.dir.write_population(state.generation, &state.population)?;
        self.cache.save(&self.dir.cache_path())?;
        let mut csv = Vec::new();
        write_stats_csv(&mut csv, &state.stats, &self.library)?;
        self.dir.write(&self.dir.stats_path(), &csv)?;
        self.dir.write_checkpoint(&Checkpoint {
            config_hash: self.config.fingerprint(),
            completed_generation: state.generation,
            evaluations: state.evaluations.clone(),
            best: BestRecord {
                sexpr: state.best.key().to_string(),
                fitness: state.best.fitness().expect("best is evaluated"),
            },
        })
    }

    /// Report of the state reached so far.
    pub fn report(&self) -> RunReport {
        let state = self.state.as_ref().expect("report requires at least generation 0");
        let best = &state.best;
        let descriptor = arch::compile(&best.genome, &self.library, &self.frame).ok();
        RunReport {
            best: BestIndividual {
                sexpr: best.key().to_string(),
                fitness: best.fitness().expect("best is evaluated"),
                param_count: descriptor.as_ref().map(|d| arch::param_count(d, &self.library)),
                conv_layers: descriptor.as_ref().map(|d| arch::conv_layer_count(d, &self.library)),
                descriptor,
                composition: arch::block_composition(&best.genome),
            },
            generations: state.stats.clone(),
            config: self.config.clone(),
            total_evaluations: state.evaluations.iter().sum(),
        }
    }

    pub fn stats(&self) -> &[GenerationStats] {
        self.state.as_ref().map_or(&[], |s| &s.stats)
    }

    pub fn library(&self) -> &BlockLibrary {
        &self.library
    }
}

/// Runs a fresh search described by `config`.
pub fn run(config: EvolutionConfig) -> Result<RunReport, EngineError> {
    Engine::new(config)?.run()
}

/// Continues a checkpointed run to completion. A finished run returns its
/// report without evaluating anything.
pub fn resume(run_dir: impl AsRef<Path>) -> Result<RunReport, EngineError> {
    Engine::open(run_dir)?.run()
}

/// Per-generation statistics of a run directory, without an evaluator.
pub fn load_run_stats(run_dir: impl AsRef<Path>) -> Result<(Vec<GenerationStats>, BlockLibrary), EngineError> {
    struct Unused;
    impl Evaluator for Unused {
        fn evaluate(&self, _: &[crate::fitness::EvalRequest]) -> Result<Vec<crate::fitness::EvalOutcome>, EvalError> {
            Err(EvalError::Unreachable("statistics do not evaluate".into()))
        }
    }
    let engine = Engine::open_with(run_dir, Box::new(Unused))?;
    Ok((engine.stats().to_vec(), engine.library))
}
