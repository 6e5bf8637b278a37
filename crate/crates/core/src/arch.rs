//! Lowering of a genome to its network descriptor, plus size statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::{BlockId, GenomeError, GenomeTree, Node, NodeId, NodeKind, Violation};

/// Kernel sizes of the convolutions in one residual block body, in order.
/// Each conv is applied as BN, ReLU, conv.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockSpec {
    pub conv_kernels: Vec<u32>,
}

impl BlockSpec {
    pub fn new(conv_kernels: impl Into<Vec<u32>>) -> Self {
        BlockSpec { conv_kernels: conv_kernels.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum LibraryError {
    #[error("base_filters must be at least 1")]
    ZeroBaseFilters,
    #[error("block library is empty")]
    Empty,
    #[error("block {0} has no convolutions")]
    EmptyBlock(BlockId),
    #[error("block {block} uses a {kernel}x{kernel} kernel; only 1 and 3 are allowed")]
    BadKernel { block: BlockId, kernel: u32 },
    #[error("block id {0:?} is not a valid symbol")]
    BadId(String),
}

/// The terminal set: block ids mapped to their bodies.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLibrary {
    pub base_filters: u32,
    pub entries: BTreeMap<BlockId, BlockSpec>,
}

impl Default for BlockLibrary {
    /// b1 = B(3,3), b2 = B(3,1,3), b3 = B(1,3,1), b4 = B(3,1) with 16 base filters.
    fn default() -> Self {
        let entries = [
            ("b1", vec![3, 3]),
            ("b2", vec![3, 1, 3]),
            ("b3", vec![1, 3, 1]),
            ("b4", vec![3, 1]),
        ]
        .into_iter()
        .map(|(id, kernels)| (BlockId::new(id), BlockSpec::new(kernels)))
        .collect();
        BlockLibrary { base_filters: 16, entries }
    }
}

impl BlockLibrary {
    pub fn new(
        base_filters: u32,
        entries: BTreeMap<BlockId, BlockSpec>,
    ) -> Result<Self, LibraryError> {
        let lib = BlockLibrary { base_filters, entries };
        lib.validate()?;
        Ok(lib)
    }

    pub fn validate(&self) -> Result<(), LibraryError> {
        if self.base_filters == 0 {
            return Err(LibraryError::ZeroBaseFilters);
        }
        if self.entries.is_empty() {
            return Err(LibraryError::Empty);
        }
        for (id, spec) in &self.entries {
            let name = id.as_str();
            let reserved = matches!(name, "+" | "^2" | "^3" | "str" | "∧2" | "∧3");
            if name.is_empty() || reserved || name.chars().any(|c| c.is_whitespace() || c == '(' || c == ')') {
                return Err(LibraryError::BadId(name.to_string()));
            }
            if spec.conv_kernels.is_empty() {
                return Err(LibraryError::EmptyBlock(id.clone()));
            }
            if let Some(&kernel) = spec.conv_kernels.iter().find(|k| !matches!(k, 1 | 3)) {
                return Err(LibraryError::BadKernel { block: id.clone(), kernel });
            }
        }
        Ok(())
    }

    /// The library's own `BlockId` for `name`, if it has one.
    pub fn block_id(&self, name: &str) -> Option<&BlockId> {
        self.entries.get_key_value(name).map(|(id, _)| id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &BlockId> {
        self.entries.keys()
    }

    pub fn spec(&self, id: &BlockId) -> Option<&BlockSpec> {
        self.entries.get(id)
    }
}

impl std::borrow::Borrow<str> for BlockId {
    fn borrow(&self) -> &str {
        self.as_str()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub h: u32,
    pub w: u32,
    pub c: u32,
}

impl Default for InputShape {
    fn default() -> Self {
        InputShape { h: 32, w: 32, c: 3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classifier {
    pub classes: u32,
    /// Global average pooling before the fully-connected layer.
    pub gap: bool,
}

impl Default for Classifier {
    fn default() -> Self {
        Classifier { classes: 10, gap: true }
    }
}

/// How a block's shortcut is shaped when its input and output differ.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShortcutPolicy {
    /// 1x1 (strided) convolution on shape mismatch, identity otherwise.
    #[default]
    Projection,
    /// Parameter-free identity: subsample spatially and zero-pad (or slice)
    /// channels.
    ZeroPad,
}

/// Everything about the network that does not come from the genome.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkFrame {
    pub input: InputShape,
    pub classifier: Classifier,
    pub shortcut: ShortcutPolicy,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockInstance {
    #[serde(rename = "type")]
    pub block_id: BlockId,
    pub filters: u32,
    pub stride: u32,
    pub in_channels: u32,
}

/// Network phenotype handed to evaluators. Serializes to the evaluator wire
/// payload with a fixed field order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub input: InputShape,
    pub base_filters: u32,
    pub blocks: Vec<BlockInstance>,
    pub classifier: Classifier,
    pub shortcut: ShortcutPolicy,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("infeasible tree: {}", crate::genome::format_violations(.0))]
    Infeasible(Vec<Violation>),
    #[error("block {0} is not in the block library")]
    UnknownBlock(BlockId),
    #[error("block {block_index} down-samples the input below 1 pixel")]
    SpatialUnderflow { block_index: usize },
    #[error(transparent)]
    Genome(#[from] GenomeError),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum DescriptorError {
    #[error("descriptor has no blocks")]
    NoBlocks,
    #[error("block {0} has zero filters")]
    ZeroFilters(usize),
    #[error("block {0} has a stride other than 1 or 2")]
    BadStride(usize),
    #[error("block {0} in_channels does not match the previous block's filters")]
    BrokenChain(usize),
    #[error("block {block_index} down-samples the input below 1 pixel")]
    SpatialUnderflow { block_index: usize },
}

impl ArchDescriptor {
    pub fn validate(&self) -> Result<(), DescriptorError> {
        if self.blocks.is_empty() {
            return Err(DescriptorError::NoBlocks);
        }
        let limit = self.input.h.min(self.input.w) as u64;
        let mut channels = self.input.c;
        let mut reduction = 1u64;
        for (i, block) in self.blocks.iter().enumerate() {
            if block.filters == 0 {
                return Err(DescriptorError::ZeroFilters(i));
            }
            if !matches!(block.stride, 1 | 2) {
                return Err(DescriptorError::BadStride(i));
            }
            if block.in_channels != channels {
                return Err(DescriptorError::BrokenChain(i));
            }
            reduction *= block.stride as u64;
            if reduction > limit {
                return Err(DescriptorError::SpatialUnderflow { block_index: i });
            }
            channels = block.filters;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("descriptor serialization is infallible")
    }

    pub fn stride_count(&self) -> usize {
        self.blocks.iter().filter(|b| b.stride == 2).count()
    }

    /// Spatial size after the last block, with stride-2 convs rounding up.
    pub fn output_hw(&self) -> (u32, u32) {
        self.blocks.iter().fold((self.input.h, self.input.w), |(h, w), b| {
            (h.div_ceil(b.stride), w.div_ceil(b.stride))
        })
    }
}

fn leaf_path(tree: &GenomeTree, leaf: NodeId) -> Result<Vec<&Node>, GenomeError> {
    let node = tree.get(leaf).ok_or(GenomeError::InvalidCursor(leaf))?;
    if !node.kind.is_terminal() {
        return Err(GenomeError::NotATerminal(leaf));
    }
    tree.ancestors(leaf)
}

/// Sum of x over every `^x` ancestor of `leaf`, or 1 when there is none.
pub fn filter_multiplier(tree: &GenomeTree, leaf: NodeId) -> Result<u32, GenomeError> {
    let sum: u32 = leaf_path(tree, leaf)?.iter().map(|n| n.kind.widen_amount()).sum();
    Ok(sum.max(1))
}

/// 2 when the leaf's parent is a `str` node, else 1.
pub fn stride_of(tree: &GenomeTree, leaf: NodeId) -> Result<u32, GenomeError> {
    let path = leaf_path(tree, leaf)?;
    Ok(match path.last() {
        Some(parent) if parent.kind == NodeKind::Stride => 2,
        _ => 1,
    })
}

/// Lowers a feasible tree to its descriptor in one pass over the leaves.
pub fn compile(
    tree: &GenomeTree,
    library: &BlockLibrary,
    frame: &NetworkFrame,
) -> Result<ArchDescriptor, CompileError> {
    let violations = tree.validate();
    if !violations.is_empty() {
        return Err(CompileError::Infeasible(violations));
    }

    struct Leaf {
        block: BlockId,
        multiplier: u32,
        stride: u32,
    }
    fn walk(node: &Node, widen: u32, strided: bool, out: &mut Vec<Leaf>) {
        match &node.kind {
            NodeKind::Terminal(block) => out.push(Leaf {
                block: block.clone(),
                multiplier: widen.max(1),
                stride: if strided { 2 } else { 1 },
            }),
            kind => {
                let strided = *kind == NodeKind::Stride;
                for child in &node.children {
                    walk(child, widen + kind.widen_amount(), strided, out);
                }
            }
        }
    }
    let mut leaves = Vec::new();
    walk(tree.root(), 0, false, &mut leaves);

    let limit = frame.input.h.min(frame.input.w) as u64;
    let mut reduction = 1u64;
    let mut in_channels = frame.input.c;
    let mut blocks = Vec::with_capacity(leaves.len());
    for (index, leaf) in leaves.into_iter().enumerate() {
        if library.spec(&leaf.block).is_none() {
            return Err(CompileError::UnknownBlock(leaf.block));
        }
        reduction *= leaf.stride as u64;
        if reduction > limit {
            return Err(CompileError::SpatialUnderflow { block_index: index });
        }
        let filters = library.base_filters * leaf.multiplier;
        blocks.push(BlockInstance { block_id: leaf.block, filters, stride: leaf.stride, in_channels });
        in_channels = filters;
    }
    Ok(ArchDescriptor {
        input: frame.input,
        base_filters: library.base_filters,
        blocks,
        classifier: frame.classifier,
        shortcut: frame.shortcut,
    })
}

fn has_projection(d: &ArchDescriptor, block: &BlockInstance) -> bool {
    d.shortcut == ShortcutPolicy::Projection
        && (block.in_channels != block.filters || block.stride != 1)
}

/// Learnable parameters: bias-free convs, BN scale and shift on each conv's
/// input, projection shortcuts and the classifier layer.
pub fn param_count(d: &ArchDescriptor, library: &BlockLibrary) -> u64 {
    let mut total = 0u64;
    for block in &d.blocks {
        let spec = library.spec(&block.block_id).expect("descriptor block missing from library");
        let filters = block.filters as u64;
        let mut c_in = block.in_channels as u64;
        for &k in &spec.conv_kernels {
            total += 2 * c_in + (k as u64).pow(2) * c_in * filters;
            c_in = filters;
        }
        if has_projection(d, block) {
            total += block.in_channels as u64 * filters;
        }
    }
    if let Some(last) = d.blocks.last() {
        let classes = d.classifier.classes as u64;
        let features = if d.classifier.gap {
            last.filters as u64
        } else {
            let (h, w) = d.output_hw();
            last.filters as u64 * h as u64 * w as u64
        };
        total += features * classes + classes;
    }
    total
}

/// Convolutions in block bodies; projection shortcuts are not counted.
pub fn conv_layer_count(d: &ArchDescriptor, library: &BlockLibrary) -> usize {
    d.blocks
        .iter()
        .map(|b| library.spec(&b.block_id).map_or(0, |s| s.conv_kernels.len()))
        .sum()
}

/// Projection convolutions actually present under the descriptor's policy.
pub fn projection_count(d: &ArchDescriptor) -> usize {
    d.blocks.iter().filter(|b| has_projection(d, b)).count()
}

pub fn block_composition(tree: &GenomeTree) -> BTreeMap<BlockId, usize> {
    let mut counts = BTreeMap::new();
    for block in tree.leaf_blocks() {
        *counts.entry(block).or_insert(0) += 1;
    }
    counts
}

/// Share of each block type among the tree's terminals.
pub fn block_ratios(tree: &GenomeTree) -> BTreeMap<BlockId, f64> {
    let counts = block_composition(tree);
    let total: usize = counts.values().sum();
    counts.into_iter().map(|(id, n)| (id, n as f64 / total as f64)).collect()
}
