//! Fixtures shared by the benchmarks.

use treenas::arch::BlockLibrary;
use treenas::genome::{BlockId, GenomeTree};
use treenas::operators;
use treenas::RngStream;

pub fn terminals() -> Vec<BlockId> {
    BlockLibrary::default().ids().cloned().collect()
}

/// `count` full trees of the given depth, reproducible from `seed`.
pub fn full_trees(count: usize, depth: usize, seed: u64) -> Vec<GenomeTree> {
    let terms = terminals();
    let mut rng = RngStream::from_seed(seed);
    (0..count).map(|_| operators::full(&mut rng, &terms, depth)).collect()
}

/// A population drawn the same way the engine initializes one.
pub fn initial_population(n: usize, max_depth: usize, seed: u64) -> Vec<GenomeTree> {
    let mut rng = RngStream::from_seed(seed);
    operators::ramped_half_and_half(&mut rng, &terminals(), n, max_depth)
}
