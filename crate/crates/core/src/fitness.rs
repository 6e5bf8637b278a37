//! Fitness evaluation.
//!
//! Evaluators receive batches of `(id, genome, descriptor)` and return a
//! fitness in [0, 1] or a failure per id. Two implementations ship here: a
//! deterministic [`SurrogateEvaluator`] for desk-scale runs and an
//! [`ExternalEvaluator`] that speaks newline-delimited JSON to a child
//! process. [`evaluate_population`] puts a [`FitnessCache`] in front of
//! either.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Mutex, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::arch::{self, ArchDescriptor, BlockLibrary, NetworkFrame};
use crate::genome::{BlockId, Individual};
use crate::rng::{Role, RngStream};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluator unreachable: {0}")]
    Unreachable(String),
    #[error("evaluator protocol error: {0}")]
    Protocol(String),
    #[error("cache file {path}: {source}")]
    CacheIo { path: String, source: io::Error },
    #[error("cache file {path} line {line}: {reason}")]
    CacheFormat { path: String, line: usize, reason: String },
}

/// Stable 64-bit digest of a canonical s-expression.
pub fn key_digest(key: &str) -> u64 {
    let digest = Sha256::digest(key.as_bytes());
    u64::from_be_bytes(digest[..8].try_into().expect("sha256 yields 32 bytes"))
}

/// One request line of the wire protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub id: String,
    pub sexpr: String,
    pub descriptor: ArchDescriptor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutcome {
    pub id: String,
    pub result: Result<f64, String>,
}

pub trait Evaluator: Send + Sync {
    /// Evaluates a batch. Per-item problems are reported in the outcomes;
    /// `Err` means the evaluator as a whole is unusable.
    fn evaluate(&self, batch: &[EvalRequest]) -> Result<Vec<EvalOutcome>, EvalError>;
}

// ---------------------------------------------------------------------------
// Surrogate
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateParams {
    pub target_params: u64,
    /// Width of the parameter-budget bump, in decades.
    pub width: f64,
    pub affinity: BTreeMap<BlockId, f64>,
    pub stride_cap: u32,
    /// Standard deviation of the per-genome Gaussian noise; 0 disables it.
    pub noise: f64,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        SurrogateParams {
            target_params: 5_000_000,
            width: 0.5,
            affinity: BTreeMap::from([("b2".into(), 0.05), ("b3".into(), 0.05)]),
            stride_cap: 3,
            noise: 0.0,
        }
    }
}

impl SurrogateParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.target_params < 1 {
            return Err("surrogate target_params must be >= 1".into());
        }
        if self.width.is_nan() || self.width <= 0.0 {
            return Err("surrogate width must be > 0".into());
        }
        if self.stride_cap < 1 {
            return Err("surrogate stride_cap must be >= 1".into());
        }
        if self.noise.is_nan() || self.noise < 0.0 {
            return Err("surrogate noise must be >= 0".into());
        }
        Ok(())
    }
}

/// Desk-scale stand-in for train-and-validate:
///
/// `0.30 + 0.50·exp(−(log10(P/P*)/σ)²) + Σ w_b·ratio_b/0.5 + 0.05·min(S, cap)/cap + noise`
///
/// clamped to [0, 1], where P is the parameter count, ratio_b the share of
/// block b and S the number of stride-2 blocks. The noise term is drawn from a
/// stream keyed by `noise_seed` and the genome key, so it is reproducible.
pub fn surrogate_fitness(
    d: &ArchDescriptor,
    library: &BlockLibrary,
    params: &SurrogateParams,
    noise_seed: u64,
    key: &str,
) -> f64 {
    let p = arch::param_count(d, library) as f64;
    let decades = (p / params.target_params as f64).log10() / params.width;
    let budget = 0.50 * (-decades * decades).exp();

    let total = d.blocks.len() as f64;
    let affinity: f64 = params
        .affinity
        .iter()
        .map(|(id, w)| {
            let count = d.blocks.iter().filter(|b| &b.block_id == id).count() as f64;
            w * (count / total) / 0.5
        })
        .sum();

    let cap = params.stride_cap as f64;
    let strides = 0.05 * (d.stride_count() as f64).min(cap) / cap;

    let noise = if params.noise > 0.0 {
        let mut rng = RngStream::derive(noise_seed, key_digest(key), Role::Noise, 0);
        params.noise * rng.sample::<f64, _>(StandardNormal)
    } else {
        0.0
    };
    (0.30 + budget + affinity + strides + noise).clamp(0.0, 1.0)
}

pub struct SurrogateEvaluator {
    pub params: SurrogateParams,
    pub library: BlockLibrary,
    pub noise_seed: u64,
}

impl Evaluator for SurrogateEvaluator {
    fn evaluate(&self, batch: &[EvalRequest]) -> Result<Vec<EvalOutcome>, EvalError> {
        Ok(batch
            .iter()
            .map(|req| {
                let result = match req.descriptor.validate() {
                    Ok(()) => Ok(surrogate_fitness(
                        &req.descriptor,
                        &self.library,
                        &self.params,
                        self.noise_seed,
                        &req.sexpr,
                    )),
                    Err(e) => Err(e.to_string()),
                };
                EvalOutcome { id: req.id.clone(), result }
            })
            .collect())
    }
}

// ---------------------------------------------------------------------------
// Cache
// ---------------------------------------------------------------------------

/// Genotype-keyed fitness store. A key's value never changes once written.
#[derive(Debug, Default)]
pub struct FitnessCache {
    entries: RwLock<BTreeMap<String, f64>>,
}

impl FitnessCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.entries.read().expect("cache lock poisoned").get(key).copied()
    }

    /// Stores `fitness` unless the key is present; returns the value kept.
    pub fn insert(&self, key: &str, fitness: f64) -> f64 {
        let mut map = self.entries.write().expect("cache lock poisoned");
        *map.entry(key.to_string()).or_insert(fitness)
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reads `<fitness>\t<s-expression>` lines. A missing file is an empty cache.
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let shown = path.display().to_string();
        let text = match fs::read_to_string(path) {
            Ok(text) => text,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Self::new()),
            Err(source) => return Err(EvalError::CacheIo { path: shown, source }),
        };
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let bad = |reason: &str| EvalError::CacheFormat {
                path: shown.clone(),
                line: i + 1,
                reason: reason.to_string(),
            };
            let (value, key) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
            let fitness: f64 = value.parse().map_err(|_| bad("fitness is not a number"))?;
            if !(0.0..=1.0).contains(&fitness) {
                return Err(bad("fitness outside [0, 1]"));
            }
            if map.insert(key.to_string(), fitness).is_some_and(|old| old != fitness) {
                return Err(bad("conflicting duplicate key"));
            }
        }
        Ok(FitnessCache { entries: RwLock::new(map) })
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let mut out = String::new();
        for (key, fitness) in self.entries.read().expect("cache lock poisoned").iter() {
            out.push_str(&format!("{fitness}\t{key}\n"));
        }
        crate::engine::write_atomic(path, out.as_bytes()).map_err(|source| EvalError::CacheIo {
            path: path.display().to_string(),
            source,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvaluationSummary {
    pub cache_hits: usize,
    /// Items actually sent to the evaluator.
    pub evaluated: usize,
    pub failures: usize,
}

/// Assigns a fitness to every individual that lacks one.
///
/// Cache hits skip the evaluator; the remaining distinct genomes go out as a
/// single batch with ids `g<generation>-<index>`. Failed or uncompilable
/// genomes score 0, which is cached like any other result.
pub fn evaluate_population(
    mut pop: Vec<Individual>,
    generation: u32,
    evaluator: &dyn Evaluator,
    cache: &FitnessCache,
    library: &BlockLibrary,
    frame: &NetworkFrame,
) -> Result<(Vec<Individual>, EvaluationSummary), EvalError> {
    let mut summary = EvaluationSummary::default();
    let mut batch = Vec::new();
    let mut pending: HashMap<String, String> = HashMap::new();

    for (i, ind) in pop.iter().enumerate() {
        if ind.fitness().is_some() || pending.contains_key(ind.key()) {
            continue;
        }
        if cache.get(ind.key()).is_some() {
            summary.cache_hits += 1;
            continue;
        }
        match arch::compile(&ind.genome, library, frame) {
            Ok(descriptor) => {
                let id = format!("g{generation}-{i}");
                pending.insert(ind.key().to_string(), id.clone());
                batch.push(EvalRequest { id, sexpr: ind.key().to_string(), descriptor });
            }
            Err(e) => {
                warn!("{} does not compile ({e}); scoring 0", ind.key());
                summary.failures += 1;
                cache.insert(ind.key(), 0.0);
            }
        }
    }

    if !batch.is_empty() {
        summary.evaluated = batch.len();
        let outcomes = evaluator.evaluate(&batch)?;
        let mut by_id: HashMap<String, Result<f64, String>> = HashMap::new();
        for outcome in outcomes {
            by_id.entry(outcome.id).or_insert(outcome.result);
        }
        for req in &batch {
            let fitness = match by_id.remove(&req.id) {
                Some(Ok(f)) if (0.0..=1.0).contains(&f) => f,
                Some(Ok(f)) => {
                    warn!("{}: fitness {f} outside [0, 1]; scoring 0", req.id);
                    summary.failures += 1;
                    0.0
                }
                Some(Err(reason)) => {
                    warn!("{} ({}) failed: {reason}; scoring 0", req.id, req.sexpr);
                    summary.failures += 1;
                    0.0
                }
                None => {
                    warn!("{}: no result returned; scoring 0", req.id);
                    summary.failures += 1;
                    0.0
                }
            };
            cache.insert(&req.sexpr, fitness);
        }
    }

    for ind in pop.iter_mut().filter(|i| i.fitness().is_none()) {
        let fitness = cache.get(ind.key()).expect("every key was evaluated or cached");
        ind.set_fitness(fitness).expect("cached fitness is in range");
    }
    Ok((pop, summary))
}

// ---------------------------------------------------------------------------
// External process
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct ExternalConfig {
    /// Shell command line, run through `sh -c`.
    pub command: String,
    /// Evaluator processes, each with one request in flight.
    pub workers: usize,
    pub timeout: Duration,
    /// Unexpected process exits tolerated per worker before giving up.
    pub max_restarts: usize,
}

impl ExternalConfig {
    pub fn new(command: impl Into<String>) -> Self {
        ExternalConfig {
            command: command.into(),
            workers: 1,
            timeout: Duration::from_secs(3600),
            max_restarts: 3,
        }
    }
}

pub struct ExternalEvaluator {
    pub config: ExternalConfig,
}

impl ExternalEvaluator {
    pub fn new(config: ExternalConfig) -> Self {
        ExternalEvaluator { config }
    }
}

struct Process {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<Option<String>>,
}

impl Process {
    fn spawn(command: &str) -> Result<Self, EvalError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| EvalError::Unreachable(format!("cannot launch {command:?}: {e}")))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                match line {
                    Ok(line) => {
                        if tx.send(Some(line)).is_err() {
                            return;
                        }
                    }
                    Err(_) => break,
                }
            }
            let _ = tx.send(None);
        });
        Ok(Process { child, stdin, lines })
    }
}

impl Drop for Process {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

enum Reply {
    Done(Result<f64, String>),
    TimedOut,
    Exited,
}

/// Parses one response line. `None` when the line belongs to some other id.
fn parse_response(line: &str, expected: &str) -> Option<Result<f64, String>> {
    let value: serde_json::Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => return Some(Err(format!("malformed response line: {e}"))),
    };
    let Some(id) = value.get("id").and_then(|v| v.as_str()) else {
        return Some(Err("response line has no id".into()));
    };
    if id != expected {
        warn!("evaluator answered unknown id {id:?} (waiting for {expected:?}); ignored");
        return None;
    }
    if let Some(fitness) = value.get("fitness") {
        return Some(match fitness.as_f64() {
            Some(f) if (0.0..=1.0).contains(&f) => Ok(f),
            _ => Err(format!("fitness {fitness} is not a number in [0, 1]")),
        });
    }
    if let Some(message) = value.get("error") {
        return Some(Err(message.as_str().map_or_else(|| message.to_string(), str::to_string)));
    }
    Some(Err("response has neither fitness nor error".into()))
}

fn exchange(process: &mut Process, req: &EvalRequest, timeout: Duration) -> Reply {
    let mut line = serde_json::to_string(req).expect("request serialization is infallible");
    line.push('\n');
    if process.stdin.write_all(line.as_bytes()).and_then(|_| process.stdin.flush()).is_err() {
        return Reply::Exited;
    }
    let deadline = Instant::now() + timeout;
    loop {
        let left = deadline.saturating_duration_since(Instant::now());
        match process.lines.recv_timeout(left) {
            Ok(Some(line)) => {
                if let Some(result) = parse_response(&line, &req.id) {
                    return Reply::Done(result);
                }
            }
            Ok(None) | Err(RecvTimeoutError::Disconnected) => return Reply::Exited,
            Err(RecvTimeoutError::Timeout) => return Reply::TimedOut,
        }
    }
}

impl ExternalEvaluator {
    fn run_worker(
        &self,
        batch: &[EvalRequest],
        next: &Mutex<usize>,
        results: &Mutex<Vec<Option<Result<f64, String>>>>,
    ) -> Result<(), EvalError> {
        let command = &self.config.command;
        let mut process = Process::spawn(command)?;
        let mut restarts = 0;
        loop {
            let index = {
                let mut next = next.lock().expect("queue lock poisoned");
                if *next >= batch.len() {
                    return Ok(());
                }
                *next += 1;
                *next - 1
            };
            let req = &batch[index];
            let result = loop {
                match exchange(&mut process, req, self.config.timeout) {
                    Reply::Done(result) => break result,
                    Reply::TimedOut => {
                        warn!("{} timed out after {:?}; restarting evaluator", req.id, self.config.timeout);
                        process = Process::spawn(command)?;
                        break Err(format!("timed out after {:?}", self.config.timeout));
                    }
                    Reply::Exited => {
                        restarts += 1;
                        if restarts > self.config.max_restarts {
                            return Err(EvalError::Unreachable(format!(
                                "{command:?} exited {restarts} times"
                            )));
                        }
                        debug!("evaluator exited while handling {}; restarting", req.id);
                        process = Process::spawn(command)?;
                    }
                }
            };
            results.lock().expect("results lock poisoned")[index] = Some(result);
        }
    }
}

impl Evaluator for ExternalEvaluator {
    fn evaluate(&self, batch: &[EvalRequest]) -> Result<Vec<EvalOutcome>, EvalError> {
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = batch.iter().find(|r| !seen.insert(r.id.as_str())) {
            return Err(EvalError::Protocol(format!("duplicate request id {:?}", dup.id)));
        }
        let next = Mutex::new(0);
        let results = Mutex::new(vec![None; batch.len()]);
        let workers = self.config.workers.clamp(1, batch.len().max(1));
        thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|_| scope.spawn(|| self.run_worker(batch, &next, &results)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluator worker panicked"))
                .collect::<Result<Vec<()>, EvalError>>()
        })?;
        let results = results.into_inner().expect("results lock poisoned");
        Ok(batch
            .iter()
            .zip(results)
            .map(|(req, result)| EvalOutcome {
                id: req.id.clone(),
                result: result.unwrap_or_else(|| Err("not evaluated".into())),
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{compile, BlockInstance, Classifier, InputShape, ShortcutPolicy};
    use crate::sexpr::parse;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn lib() -> BlockLibrary {
        BlockLibrary::default()
    }

    /// A single stack of `blocks` at a fixed width, used to dial in a
    /// parameter count.
    fn descriptor(blocks: &[(&str, u32, u32)]) -> ArchDescriptor {
        let mut in_channels = 3;
        let blocks = blocks
            .iter()
            .map(|&(id, filters, stride)| {
                let b = BlockInstance { block_id: id.into(), filters, stride, in_channels };
                in_channels = filters;
                b
            })
            .collect();
        ArchDescriptor {
            input: InputShape::default(),
            base_filters: 16,
            blocks,
            classifier: Classifier::default(),
            shortcut: ShortcutPolicy::Projection,
        }
    }

    #[test]
    fn surrogate_designed_maximum() {
        let d = descriptor(&[("b2", 64, 2), ("b3", 64, 2), ("b2", 64, 2), ("b3", 64, 1)]);
        let params = SurrogateParams {
            target_params: arch::param_count(&d, &lib()),
            ..Default::default()
        };
        let f = surrogate_fitness(&d, &lib(), &params, 0, "k");
        assert!((f - 0.95).abs() < 1e-12, "{f}");
    }

    #[test]
    fn surrogate_far_from_budget() {
        let d = descriptor(&[("b1", 16, 1), ("b4", 16, 1)]);
        let p = arch::param_count(&d, &lib());
        let params = SurrogateParams { target_params: p * 100, ..Default::default() };
        let f = surrogate_fitness(&d, &lib(), &params, 0, "k");
        let expected = 0.30 + 0.50 * (-16f64).exp();
        assert!((f - expected).abs() < 1e-12);
        assert!((f - 0.30).abs() < 1e-6);
    }

    #[test]
    fn surrogate_depends_on_phenotype_only() {
        let frame = NetworkFrame::default();
        let a = parse("(+ (^2 (+ b1 b2)) b3)", &lib()).unwrap();
        let b = parse("(+ (+ (^2 b1) (^2 b2)) b3)", &lib()).unwrap();
        assert_ne!(a, b);
        let (da, db) = (compile(&a, &lib(), &frame).unwrap(), compile(&b, &lib(), &frame).unwrap());
        assert_eq!(da, db);
        let params = SurrogateParams::default();
        assert_eq!(
            surrogate_fitness(&da, &lib(), &params, 1, "x"),
            surrogate_fitness(&db, &lib(), &params, 1, "y")
        );
    }

    #[test]
    fn surrogate_peaks_at_target() {
        let params = SurrogateParams::default();
        let mut best = (0.0, 0u32);
        for width in (16..=1024).step_by(8) {
            let d = descriptor(&[("b1", width, 1), ("b1", width, 1)]);
            let f = surrogate_fitness(&d, &lib(), &params, 0, "k");
            if f > best.0 {
                best = (f, width);
            }
        }
        let d = descriptor(&[("b1", best.1, 1), ("b1", best.1, 1)]);
        let p = arch::param_count(&d, &lib()) as f64;
        let ratio = p / params.target_params as f64;
        assert!((0.9..1.1).contains(&ratio), "peak at {p} params");
    }

    #[test]
    fn surrogate_noise_is_keyed() {
        let d = descriptor(&[("b1", 32, 1), ("b2", 64, 2)]);
        let params = SurrogateParams { noise: 0.05, ..Default::default() };
        let a = surrogate_fitness(&d, &lib(), &params, 9, "(+ b1 b2)");
        assert_eq!(a, surrogate_fitness(&d, &lib(), &params, 9, "(+ b1 b2)"));
        assert_ne!(a, surrogate_fitness(&d, &lib(), &params, 9, "(+ b1 b3)"));
        assert_ne!(a, surrogate_fitness(&d, &lib(), &params, 10, "(+ b1 b2)"));
        assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn cache_is_write_once_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FitnessCache::new();
        assert_eq!(cache.insert("(+ b1 b2)", 0.5), 0.5);
        assert_eq!(cache.insert("(+ b1 b2)", 0.7), 0.5);
        cache.insert("(+ b3 b4)", 0.1 + 0.2);
        let path = dir.path().join("cache.tsv");
        cache.save(&path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "0.5\t(+ b1 b2)\n0.30000000000000004\t(+ b3 b4)\n");
        let back = FitnessCache::load(&path).unwrap();
        assert_eq!(back.get("(+ b3 b4)"), Some(0.1 + 0.2));
        assert_eq!(back.len(), 2);
        assert!(FitnessCache::load(&dir.path().join("missing")).unwrap().is_empty());
        fs::write(&path, "0.5 (+ b1 b2)\n").unwrap();
        assert!(matches!(FitnessCache::load(&path), Err(EvalError::CacheFormat { line: 1, .. })));
    }

    struct Counting {
        calls: AtomicUsize,
        items: AtomicUsize,
        fail: Option<&'static str>,
    }

    impl Evaluator for Counting {
        fn evaluate(&self, batch: &[EvalRequest]) -> Result<Vec<EvalOutcome>, EvalError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.items.fetch_add(batch.len(), Ordering::SeqCst);
            Ok(batch
                .iter()
                .map(|r| EvalOutcome {
                    id: r.id.clone(),
                    result: if Some(r.sexpr.as_str()) == self.fail {
                        Err("boom".into())
                    } else {
                        Ok(0.25 + 0.01 * r.descriptor.blocks.len() as f64)
                    },
                })
                .collect())
        }
    }

    fn counting(fail: Option<&'static str>) -> Counting {
        Counting { calls: AtomicUsize::new(0), items: AtomicUsize::new(0), fail }
    }

    fn pop(texts: &[&str]) -> Vec<Individual> {
        texts.iter().map(|t| Individual::new(parse(t, &lib()).unwrap(), 0)).collect()
    }

    #[test]
    fn duplicates_are_evaluated_once() {
        let ev = counting(None);
        let cache = FitnessCache::new();
        let (out, summary) =
            evaluate_population(pop(&["(+ b1 b2)"; 6]), 0, &ev, &cache, &lib(), &NetworkFrame::default()).unwrap();
        assert_eq!(ev.items.load(Ordering::SeqCst), 1);
        assert_eq!(summary.evaluated, 1);
        assert!(out.iter().all(|i| i.fitness() == Some(0.27)));
    }

    #[test]
    fn failures_are_isolated() {
        let ev = counting(Some("(+ b1 b3)"));
        let cache = FitnessCache::new();
        let (out, summary) = evaluate_population(
            pop(&["(+ b1 b2)", "(+ b1 b3)", "(+ b1 (+ b2 b2))"]),
            0,
            &ev,
            &cache,
            &lib(),
            &NetworkFrame::default(),
        )
        .unwrap();
        let f: Vec<_> = out.iter().map(|i| i.fitness().unwrap()).collect();
        assert_eq!(f, [0.27, 0.0, 0.28]);
        assert_eq!(summary.failures, 1);
    }

    #[test]
    fn warm_cache_skips_evaluator() {
        let cache = FitnessCache::new();
        let texts = ["(+ b1 b2)", "(+ (str b1) b3)", "(+ b4 (^3 b2))"];
        evaluate_population(pop(&texts), 0, &counting(None), &cache, &lib(), &NetworkFrame::default()).unwrap();
        let ev = counting(None);
        let (_, summary) =
            evaluate_population(pop(&texts), 1, &ev, &cache, &lib(), &NetworkFrame::default()).unwrap();
        assert_eq!(ev.calls.load(Ordering::SeqCst), 0);
        assert_eq!(summary.cache_hits, 3);
    }

    #[test]
    fn uncompilable_genome_scores_zero_without_evaluation() {
        let frame = NetworkFrame { input: InputShape { h: 2, w: 2, c: 3 }, ..Default::default() };
        let ev = counting(None);
        let cache = FitnessCache::new();
        let (out, _) =
            evaluate_population(pop(&["(+ (str b1) (str b2))"]), 0, &ev, &cache, &lib(), &frame).unwrap();
        assert_eq!(out[0].fitness(), Some(0.0));
        assert_eq!(ev.items.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn response_parsing() {
        assert_eq!(parse_response(r#"{"id":"a","fitness":0.5}"#, "a"), Some(Ok(0.5)));
        assert_eq!(parse_response(r#"{"id":"b","fitness":0.5}"#, "a"), None);
        assert_eq!(parse_response(r#"{"id":"a","error":"oom"}"#, "a"), Some(Err("oom".into())));
        assert!(matches!(parse_response(r#"{"id":"a","fitness":1.5}"#, "a"), Some(Err(_))));
        assert!(matches!(parse_response("not json", "a"), Some(Err(_))));
        assert!(matches!(parse_response(r#"{"id":"a"}"#, "a"), Some(Err(_))));
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(key_digest("(+ b1 b2)"), key_digest("(+ b1 b2)"));
        assert_ne!(key_digest("(+ b1 b2)"), key_digest("(+ b2 b1)"));
    }
}
