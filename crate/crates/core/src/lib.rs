//! Genetic-programming search over CNN architectures encoded as trees.
//!
//! Leaves of a [`GenomeTree`] are residual block types; internal nodes
//! sequence blocks (`+`), widen them (`^2`, `^3`) or down-sample them
//! (`str`). [`arch::compile`] lowers a tree to an [`ArchDescriptor`], the
//! [`operators`] evolve populations of trees, [`fitness`] scores them and
//! [`engine`] runs the generational loop with checkpoints.

pub mod arch;
pub mod engine;
pub mod fitness;
pub mod genome;
pub mod operators;
pub mod rng;
pub mod sexpr;

pub use arch::{ArchDescriptor, BlockInstance, BlockLibrary, BlockSpec, NetworkFrame, ShortcutPolicy};
pub use engine::{Engine, EngineError, EvolutionConfig, GenerationStats, RunReport};
pub use fitness::{Evaluator, FitnessCache};
pub use genome::{BlockId, GenomeTree, Individual, Node, NodeId, NodeKind, Violation};
pub use rng::RngStream;
