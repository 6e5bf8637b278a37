//! Genetic operators: ramped half-and-half initialization, dynamic
//! tournament selection, size-difference crossover with feasibility repair,
//! subtree mutation and elitist survivor selection.

use std::cmp::Ordering;

use rand::seq::{index, IndexedRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::{BlockId, GenomeTree, Individual, Node, NodeId, NodeKind, STRIDE_BUDGET};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum OperatorError {
    #[error("individual {index} has no fitness")]
    Unevaluated { index: usize },
    #[error("tournament size {size} is invalid for a population of {population}")]
    TournamentSize { size: usize, population: usize },
    #[error("invalid schedule: {0}")]
    Schedule(String),
}

/// Per-generation parameters shared by selection, crossover and mutation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleParams {
    pub population_size: usize,
    pub generations: u32,
    /// Current generation, 1-based.
    pub generation: u32,
    pub mutation_rate: f64,
    pub max_depth: usize,
    pub mutation_subtree_depth: usize,
}

impl ScheduleParams {
    pub fn validate(&self) -> Result<(), OperatorError> {
        let fail = |msg: String| Err(OperatorError::Schedule(msg));
        if self.population_size < 4 || !self.population_size.is_multiple_of(2) {
            return fail(format!("population size {} must be even and >= 4", self.population_size));
        }
        if self.generation < 1 || self.generation > self.generations {
            return fail(format!("generation {} outside 1..={}", self.generation, self.generations));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return fail(format!("mutation rate {} outside [0, 1]", self.mutation_rate));
        }
        if self.max_depth < 2 {
            return fail("max_depth must be >= 2".into());
        }
        if self.mutation_subtree_depth < 1 {
            return fail("mutation subtree depth must be >= 1".into());
        }
        Ok(())
    }
}

/// How raw subtree-size differences are mapped into [0, 1] before scoring.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// diff / max(diff)
    #[default]
    Max,
    /// (diff - min) / (max - min)
    MinMax,
    /// diff / sum(diff)
    Sum,
}

impl Normalization {
    pub fn apply(self, diffs: &[f64]) -> Vec<f64> {
        let max = diffs.iter().copied().fold(0.0, f64::max);
        let min = diffs.iter().copied().fold(f64::INFINITY, f64::min);
        let sum: f64 = diffs.iter().sum();
        let scale = |d: f64, num_off: f64, den: f64| if den > 0.0 { (d - num_off) / den } else { 0.0 };
        diffs
            .iter()
            .map(|&d| match self {
                Normalization::Max => scale(d, 0.0, max),
                Normalization::MinMax => scale(d, min, max - min),
                Normalization::Sum => scale(d, 0.0, sum),
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

enum Pick {
    Plus,
    Widen2,
    Widen3,
    Stride,
    Terminal(usize),
}

fn random_terminal(rng: &mut RngStream, terminals: &[BlockId]) -> Node {
    Node::terminal(terminals.choose(rng).expect("terminal set is empty").clone())
}

fn grow_node(
    rng: &mut RngStream,
    terminals: &[BlockId],
    depth: usize,
    max_depth: usize,
    force_plus: bool,
    str_budget: &mut usize,
) -> Node {
    let pick = if force_plus {
        Pick::Plus
    } else if depth >= max_depth {
        Pick::Terminal(rng.random_range(0..terminals.len()))
    } else {
        let functions = if *str_budget > 0 { 4 } else { 3 };
        match rng.random_range(0..functions + terminals.len()) {
            0 => Pick::Plus,
            1 => Pick::Widen2,
            2 => Pick::Widen3,
            i if i == 3 && functions == 4 => Pick::Stride,
            i => Pick::Terminal(i - functions),
        }
    };
    let child = |rng: &mut RngStream, budget: &mut usize| {
        grow_node(rng, terminals, depth + 1, max_depth, false, budget)
    };
    match pick {
        Pick::Terminal(i) => Node::terminal(terminals[i].clone()),
        Pick::Plus => {
            let left = child(rng, str_budget);
            let right = child(rng, str_budget);
            Node::plus(left, right)
        }
        Pick::Widen2 => Node::widen2(child(rng, str_budget)),
        Pick::Widen3 => Node::widen3(child(rng, str_budget)),
        Pick::Stride => {
            *str_budget -= 1;
            Node::stride(random_terminal(rng, terminals))
        }
    }
}

/// Grow construction: each position draws uniformly from the legal symbols,
/// terminals being forced at `max_depth`. `str` is legal only while
/// `str_budget` lasts and always receives a terminal child.
pub fn grow(
    rng: &mut RngStream,
    terminals: &[BlockId],
    max_depth: usize,
    root_must_be_plus: bool,
    str_budget: usize,
) -> Node {
    assert!(!root_must_be_plus || max_depth >= 2, "a + root needs max_depth >= 2");
    let mut budget = str_budget;
    grow_node(rng, terminals, 1, max_depth, root_must_be_plus, &mut budget)
}

pub fn grow_tree(rng: &mut RngStream, terminals: &[BlockId], max_depth: usize) -> GenomeTree {
    let root = grow(rng, terminals, max_depth, true, STRIDE_BUDGET);
    GenomeTree::from_root_unchecked(root)
}

/// Full construction: functions down to depth `max_depth - 1`, terminals at
/// exactly `max_depth`. `str` only appears at depth `max_depth - 1`, where its
/// child is a leaf, so leaf depth stays uniform.
pub fn full(rng: &mut RngStream, terminals: &[BlockId], max_depth: usize) -> GenomeTree {
    assert!(max_depth >= 2, "full construction needs max_depth >= 2");
    fn build(
        rng: &mut RngStream,
        terminals: &[BlockId],
        depth: usize,
        max_depth: usize,
        budget: &mut usize,
    ) -> Node {
        if depth == max_depth {
            return random_terminal(rng, terminals);
        }
        let choices = if depth == 1 {
            1
        } else if depth == max_depth - 1 && *budget > 0 {
            4
        } else {
            3
        };
        let child = |rng: &mut RngStream, budget: &mut usize| build(rng, terminals, depth + 1, max_depth, budget);
        match rng.random_range(0..choices) {
            0 => {
                let left = child(rng, budget);
                let right = child(rng, budget);
                Node::plus(left, right)
            }
            1 => Node::widen2(child(rng, budget)),
            2 => Node::widen3(child(rng, budget)),
            _ => {
                *budget -= 1;
                Node::stride(random_terminal(rng, terminals))
            }
        }
    }
    let mut budget = STRIDE_BUDGET;
    GenomeTree::from_root_unchecked(build(rng, terminals, 1, max_depth, &mut budget))
}

/// Splits `n` individuals over depth bounds `2..=max_depth`, half grow and
/// half full per part. Leftover individuals go to the shallowest parts, and
/// an odd part gives its extra slot to grow.
pub fn ramped_half_and_half(
    rng: &mut RngStream,
    terminals: &[BlockId],
    n: usize,
    max_depth: usize,
) -> Vec<GenomeTree> {
    assert!(max_depth >= 2, "ramped half-and-half needs max_depth >= 2");
    part_sizes(n, max_depth)
        .into_iter()
        .enumerate()
        .flat_map(|(part, size)| {
            let depth = part + 2;
            let grown = size.div_ceil(2);
            (0..size).map(move |i| (depth, i < grown))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .map(|(depth, use_grow)| {
            if use_grow {
                grow_tree(rng, terminals, depth)
            } else {
                full(rng, terminals, depth)
            }
        })
        .collect()
}

/// Population share of each depth part `2..=max_depth`.
pub fn part_sizes(n: usize, max_depth: usize) -> Vec<usize> {
    let parts = max_depth - 1;
    (0..parts).map(|p| n / parts + usize::from(p < n % parts)).collect()
}

// ---------------------------------------------------------------------------
// Selection
// ---------------------------------------------------------------------------

/// κ = ⌈2 + (N/2 − 2)·log2(t)/log2(T)⌉, rising from 2 at t = 1 to N/2 at t = T.
pub fn tournament_size(t: u32, generations: u32, population: usize) -> usize {
    assert!(t >= 1 && t <= generations, "generation {t} outside 1..={generations}");
    let half = population / 2;
    if generations == 1 {
        return half.max(1);
    }
    let ratio = (t as f64).log2() / (generations as f64).log2();
    let raw = 2.0 + (half as f64 - 2.0) * ratio;
    // values that are integers in exact arithmetic may land a few ulps high
    ((raw - 1e-9).ceil() as usize).clamp(1, population)
}

/// Ordering used by every "best individual" decision: higher fitness first,
/// then fewer nodes.
fn better(a: &Individual, b: &Individual) -> Ordering {
    let fa = a.fitness().unwrap_or(f64::NEG_INFINITY);
    let fb = b.fitness().unwrap_or(f64::NEG_INFINITY);
    fb.total_cmp(&fa).then(a.node_count().cmp(&b.node_count()))
}

fn ensure_evaluated(pop: &[Individual]) -> Result<(), OperatorError> {
    match pop.iter().position(|i| i.fitness().is_none()) {
        Some(index) => Err(OperatorError::Unevaluated { index }),
        None => Ok(()),
    }
}

/// Draws `size` distinct individuals and returns the index of the winner
/// (ties go to fewer nodes, then the lower index).
pub fn tournament_select(
    pop: &[Individual],
    size: usize,
    rng: &mut RngStream,
) -> Result<usize, OperatorError> {
    ensure_evaluated(pop)?;
    if size == 0 || size > pop.len() {
        return Err(OperatorError::TournamentSize { size, population: pop.len() });
    }
    let entrants = index::sample(rng, pop.len(), size);
    Ok(entrants
        .iter()
        .min_by(|&a, &b| better(&pop[a], &pop[b]).then(a.cmp(&b)))
        .expect("tournament has entrants"))
}

// ---------------------------------------------------------------------------
// Crossover
// ---------------------------------------------------------------------------

/// 1 + value·(T − 2t)/T: large size differences are favoured in the first
/// half of the run and small ones in the second half.
pub fn crossover_score(value: f64, t: u32, generations: u32) -> f64 {
    let t = t as f64;
    let total = generations as f64;
    1.0 + value * (total - 2.0 * t) / total
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrossoverPointPair {
    pub node_k: NodeId,
    pub node_m: NodeId,
    /// Normalized size difference in [0, 1].
    pub value: f64,
    pub score: f64,
}

/// Scores every pair of non-root nodes of the two parents.
pub fn crossover_points(
    parent_k: &GenomeTree,
    parent_m: &GenomeTree,
    t: u32,
    generations: u32,
    normalization: Normalization,
) -> Vec<CrossoverPointPair> {
    let sizes = |tree: &GenomeTree| -> Vec<(NodeId, usize)> {
        tree.nodes().into_iter().skip(1).map(|n| (n.id, n.subtree_size)).collect()
    };
    let nodes_k = sizes(parent_k);
    let nodes_m = sizes(parent_m);
    let mut pairs = Vec::with_capacity(nodes_k.len() * nodes_m.len());
    let mut diffs = Vec::with_capacity(pairs.capacity());
    for &(i, size_i) in &nodes_k {
        for &(j, size_j) in &nodes_m {
            pairs.push((i, j));
            diffs.push(size_i.abs_diff(size_j) as f64);
        }
    }
    normalization
        .apply(&diffs)
        .into_iter()
        .zip(pairs)
        .map(|(value, (node_k, node_m))| CrossoverPointPair {
            node_k,
            node_m,
            value,
            score: crossover_score(value, t, generations),
        })
        .collect()
}

/// Roulette-wheel choice over non-negative weights; uniform when the total
/// mass is zero.
pub fn roulette_select(weights: &[f64], rng: &mut RngStream) -> usize {
    assert!(!weights.is_empty(), "roulette over an empty wheel");
    let total: f64 = weights.iter().map(|w| w.max(0.0)).sum();
    if total <= 0.0 || !total.is_finite() {
        return rng.random_range(0..weights.len());
    }
    let mut ball = rng.random::<f64>() * total;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        let w = w.max(0.0);
        if w > 0.0 {
            last_positive = i;
            if ball < w {
                return i;
            }
            ball -= w;
        }
    }
    last_positive
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CrossoverConfig {
    pub normalization: Normalization,
    /// A child larger than this is discarded in favour of a copy of its
    /// parent. `None` disables the guard.
    pub max_nodes: Option<usize>,
}

/// Swaps one scored pair of subtrees between the parents and repairs both
/// children.
pub fn crossover_trees(
    parent_k: &GenomeTree,
    parent_m: &GenomeTree,
    t: u32,
    generations: u32,
    config: &CrossoverConfig,
    rng: &mut RngStream,
) -> (GenomeTree, GenomeTree) {
    let pairs = crossover_points(parent_k, parent_m, t, generations, config.normalization);
    let scores: Vec<f64> = pairs.iter().map(|p| p.score).collect();
    let chosen = pairs[roulette_select(&scores, rng)];

    let sub_k = parent_k.get(chosen.node_k).expect("scored node exists").clone();
    let sub_m = parent_m.get(chosen.node_m).expect("scored node exists").clone();
    let child_k = parent_k.replace_subtree(chosen.node_k, sub_m).expect("non-root cursor");
    let child_m = parent_m.replace_subtree(chosen.node_m, sub_k).expect("non-root cursor");

    let guard = |child: GenomeTree, parent: &GenomeTree| match config.max_nodes {
        Some(cap) if child.node_count() > cap => parent.clone(),
        _ => child,
    };
    (guard(repair(&child_k), parent_k), guard(repair(&child_m), parent_m))
}

pub fn crossover(
    parent_k: &Individual,
    parent_m: &Individual,
    t: u32,
    generations: u32,
    config: &CrossoverConfig,
    rng: &mut RngStream,
) -> (Individual, Individual) {
    let (k, m) = crossover_trees(&parent_k.genome, &parent_m.genome, t, generations, config, rng);
    (Individual::new(k, t), Individual::new(m, t))
}

// ---------------------------------------------------------------------------
// Repair
// ---------------------------------------------------------------------------

fn drop_nonterminal_strides(node: Node) -> Node {
    let Node { kind, children } = node;
    let mut children: Vec<Node> = children.into_iter().map(drop_nonterminal_strides).collect();
    if kind == NodeKind::Stride && children.len() == 1 && !children[0].kind.is_terminal() {
        return children.pop().expect("one child");
    }
    Node { kind, children }
}

/// Restores feasibility after an unchecked edit: every `str` over a
/// non-terminal is spliced out, then while more than five `str` remain the
/// deepest one (rightmost on ties) is spliced out. Feasible trees come back
/// unchanged.
pub fn repair(tree: &GenomeTree) -> GenomeTree {
    if tree.is_valid() {
        return tree.clone();
    }
    let mut root = drop_nonterminal_strides(tree.root().clone());
    loop {
        let current = GenomeTree::from_root_unchecked(root);
        if current.stride_count() <= STRIDE_BUDGET {
            return current;
        }
        let victim = current
            .nodes()
            .into_iter()
            .filter(|n| *n.kind == NodeKind::Stride)
            .max_by(|a, b| a.depth.cmp(&b.depth).then(a.id.cmp(&b.id)))
            .expect("stride count is positive")
            .id;
        root = current.into_root();
        let slot = crate::genome::node_mut(&mut root, victim.0).expect("victim exists");
        let child = slot.children.pop().expect("str has a child");
        *slot = child;
    }
}

// ---------------------------------------------------------------------------
// Mutation
// ---------------------------------------------------------------------------

/// Replaces one uniformly chosen terminal with a grown subtree of depth at
/// most `mutation_subtree_depth`. A terminal under `str` is only ever swapped
/// for another terminal. `max_nodes` behaves as in [`CrossoverConfig`].
pub fn mutate_tree(
    tree: &GenomeTree,
    terminals: &[BlockId],
    subtree_depth: usize,
    max_nodes: Option<usize>,
    rng: &mut RngStream,
) -> GenomeTree {
    let nodes = tree.nodes();
    let leaves: Vec<_> = nodes.iter().filter(|n| n.kind.is_terminal()).collect();
    let target = leaves[rng.random_range(0..leaves.len())];
    let under_stride = target.parent.is_some_and(|p| *nodes[p.0].kind == NodeKind::Stride);
    let fragment = if under_stride {
        random_terminal(rng, terminals)
    } else {
        let budget = STRIDE_BUDGET.saturating_sub(tree.stride_count());
        grow(rng, terminals, subtree_depth, false, budget)
    };
    let mutated = tree.replace_subtree(target.id, fragment).expect("leaf is never the root");
    match max_nodes {
        Some(cap) if mutated.node_count() > cap => tree.clone(),
        _ => mutated,
    }
}

pub fn mutate(
    ind: &Individual,
    params: &ScheduleParams,
    terminals: &[BlockId],
    max_nodes: Option<usize>,
    rng: &mut RngStream,
) -> Individual {
    let tree = mutate_tree(&ind.genome, terminals, params.mutation_subtree_depth, max_nodes, rng);
    Individual::new(tree, params.generation)
}

// ---------------------------------------------------------------------------
// Survivor selection
// ---------------------------------------------------------------------------

/// Keeps the best `parents.len()` of parents and children, sorted by
/// descending fitness. Ties: fewer nodes, then parents before children, then
/// lower index.
pub fn elitism_update(
    parents: Vec<Individual>,
    children: Vec<Individual>,
) -> Result<Vec<Individual>, OperatorError> {
    ensure_evaluated(&parents)?;
    let n = parents.len();
    if let Some(i) = children.iter().position(|c| c.fitness().is_none()) {
        return Err(OperatorError::Unevaluated { index: n + i });
    }
    let mut pool: Vec<(usize, usize, Individual)> = parents
        .into_iter()
        .enumerate()
        .map(|(i, ind)| (0, i, ind))
        .chain(children.into_iter().enumerate().map(|(i, ind)| (1, i, ind)))
        .collect();
    pool.sort_by(|a, b| better(&a.2, &b.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    Ok(pool.into_iter().take(n).map(|(_, _, ind)| ind).collect())
}
