#![allow(dead_code)]

use rand::Rng;
use treenas::arch::BlockLibrary;
use treenas::genome::{BlockId, GenomeTree, Node, NodeKind};
use treenas::operators;
use treenas::RngStream;

pub fn terminals(library: &BlockLibrary) -> Vec<BlockId> {
    library.ids().cloned().collect()
}

/// A tree from grow or full with a random depth bound in 2..=max_depth.
pub fn random_tree(rng: &mut RngStream, terminals: &[BlockId], max_depth: usize) -> GenomeTree {
    let depth = rng.random_range(2..=max_depth);
    if rng.random_bool(0.5) {
        operators::grow_tree(rng, terminals, depth)
    } else {
        operators::full(rng, terminals, depth)
    }
}

/// Parameter count by walking the tree and pushing a (channels, h, w) tensor
/// through every conv of every block in leaf order.
///
/// Kernels per block type are fixed here rather than read from a library.
pub fn oracle_param_count(tree: &GenomeTree, input: (u64, u64, u64), classes: u64) -> u64 {
    fn kernels(block: &str) -> &'static [u64] {
        match block {
            "b1" => &[3, 3],
            "b2" => &[3, 1, 3],
            "b3" => &[1, 3, 1],
            "b4" => &[3, 1],
            other => panic!("oracle knows no block {other}"),
        }
    }
    struct Tensor {
        c: u64,
        h: u64,
        w: u64,
    }
    fn visit(node: &Node, widen: u64, under_stride: bool, x: &mut Tensor, total: &mut u64) {
        match &node.kind {
            NodeKind::Terminal(block) => {
                let out = 16 * if widen == 0 { 1 } else { widen };
                let stride = if under_stride { 2 } else { 1 };
                let block_in = x.c;
                for (layer, &k) in kernels(block.as_str()).iter().enumerate() {
                    // BN (scale and shift) on the conv input, then the conv.
                    *total += 2 * x.c;
                    *total += k * k * x.c * out;
                    x.c = out;
                    if layer == 0 && stride == 2 {
                        x.h = x.h.div_ceil(2);
                        x.w = x.w.div_ceil(2);
                    }
                }
                if block_in != out || stride != 1 {
                    *total += block_in * out;
                }
            }
            NodeKind::Widen2 => visit(&node.children[0], widen + 2, false, x, total),
            NodeKind::Widen3 => visit(&node.children[0], widen + 3, false, x, total),
            NodeKind::Stride => visit(&node.children[0], widen, true, x, total),
            NodeKind::Plus => {
                for child in &node.children {
                    visit(child, widen, false, x, total);
                }
            }
        }
    }
    let mut x = Tensor { c: input.0, h: input.1, w: input.2 };
    let mut total = 0;
    visit(tree.root(), 0, false, &mut x, &mut total);
    assert!(x.h >= 1 && x.w >= 1);
    total + x.c * classes + classes
}
