//! Tree genotype: node kinds, feasibility rules and structural queries.
//!
//! A [`GenomeTree`] is an immutable value. Nodes are addressed by a
//! [`NodeId`], the node's position in a depth-first pre-order walk. A
//! `NodeId` is only meaningful for the tree it was obtained from; every
//! edit returns a fresh tree.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum number of `str` nodes a feasible tree may carry.
pub const STRIDE_BUDGET: usize = 5;

/// Identifier of a residual block type, resolved by the block library.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockId(Arc<str>);

impl BlockId {
    pub fn new(name: impl AsRef<str>) -> Self {
        BlockId(Arc::from(name.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<&str> for BlockId {
    fn from(s: &str) -> Self {
        BlockId::new(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Terminal(BlockId),
    /// `+`: sequences its two children.
    Plus,
    /// `^2`: adds 2 to the filter multiplier of every enclosed leaf.
    Widen2,
    /// `^3`: adds 3 to the filter multiplier of every enclosed leaf.
    Widen3,
    /// `str`: down-samples its (terminal) child with stride 2.
    Stride,
}

impl NodeKind {
    pub fn arity(&self) -> usize {
        match self {
            NodeKind::Terminal(_) => 0,
            NodeKind::Plus => 2,
            NodeKind::Widen2 | NodeKind::Widen3 | NodeKind::Stride => 1,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, NodeKind::Terminal(_))
    }

    /// Filter-multiplier contribution of a widen node, 0 for everything else.
    pub fn widen_amount(&self) -> u32 {
        match self {
            NodeKind::Widen2 => 2,
            NodeKind::Widen3 => 3,
            _ => 0,
        }
    }

    pub fn symbol(&self) -> &str {
        match self {
            NodeKind::Terminal(b) => b.as_str(),
            NodeKind::Plus => "+",
            NodeKind::Widen2 => "^2",
            NodeKind::Widen3 => "^3",
            NodeKind::Stride => "str",
        }
    }
}

/// A node together with its ordered children.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Node {
    pub kind: NodeKind,
    pub children: Vec<Node>,
}

impl Node {
    pub fn terminal(block: impl Into<BlockId>) -> Node {
        Node { kind: NodeKind::Terminal(block.into()), children: Vec::new() }
    }

    pub fn plus(left: Node, right: Node) -> Node {
        Node { kind: NodeKind::Plus, children: vec![left, right] }
    }

    pub fn widen2(child: Node) -> Node {
        Node { kind: NodeKind::Widen2, children: vec![child] }
    }

    pub fn widen3(child: Node) -> Node {
        Node { kind: NodeKind::Widen3, children: vec![child] }
    }

    pub fn stride(child: Node) -> Node {
        Node { kind: NodeKind::Stride, children: vec![child] }
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(Node::size).sum::<usize>()
    }

    /// Depth of this subtree, a lone node having depth 1.
    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(Node::depth).max().unwrap_or(0)
    }

    fn stride_count(&self) -> usize {
        usize::from(self.kind == NodeKind::Stride)
            + self.children.iter().map(Node::stride_count).sum::<usize>()
    }
}

/// Pre-order position of a node within one particular tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Flattened view of one node, as produced by [`GenomeTree::nodes`].
#[derive(Clone, Debug)]
pub struct NodeInfo<'a> {
    pub id: NodeId,
    pub kind: &'a NodeKind,
    pub parent: Option<NodeId>,
    /// Root has depth 1.
    pub depth: usize,
    pub subtree_size: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("root must be + (found {found} at {node})")]
    RootNotPlus { node: NodeId, found: String },
    #[error("str count > {STRIDE_BUDGET} ({count} str nodes, first excess at {node})")]
    TooManyStrides { node: NodeId, count: usize },
    #[error("str child must be terminal (str at {node})")]
    StrideChildNotTerminal { node: NodeId },
    #[error("{symbol} at {node} takes {expected} children, found {found}")]
    Arity { node: NodeId, symbol: String, expected: usize, found: usize },
}

impl Violation {
    pub fn node(&self) -> NodeId {
        match self {
            Violation::RootNotPlus { node, .. }
            | Violation::TooManyStrides { node, .. }
            | Violation::StrideChildNotTerminal { node }
            | Violation::Arity { node, .. } => *node,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum GenomeError {
    #[error("node {0} does not exist in this tree")]
    InvalidCursor(NodeId),
    #[error("the root node cannot be replaced")]
    RootReplacement,
    #[error("node {0} is not a terminal")]
    NotATerminal(NodeId),
    #[error("infeasible tree: {}", format_violations(.0))]
    Infeasible(Vec<Violation>),
}

pub fn format_violations(violations: &[Violation]) -> String {
    violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Rooted ordered tree of [`NodeKind`]s.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GenomeTree {
    root: Node,
}

impl GenomeTree {
    /// Builds a tree, rejecting it unless every feasibility rule holds.
    pub fn new(root: Node) -> Result<Self, GenomeError> {
        let tree = GenomeTree { root };
        let violations = tree.validate();
        if violations.is_empty() {
            Ok(tree)
        } else {
            Err(GenomeError::Infeasible(violations))
        }
    }

    /// Wraps a node without checking feasibility. Intermediate results of
    /// edits live here until they are repaired.
    pub fn from_root_unchecked(root: Node) -> Self {
        GenomeTree { root }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn into_root(self) -> Node {
        self.root
    }

    pub fn node_count(&self) -> usize {
        self.root.size()
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn stride_count(&self) -> usize {
        self.root.stride_count()
    }

    pub fn terminal_count(&self) -> usize {
        self.leaves_in_order().len()
    }

    /// All nodes in pre-order, with parent links, depths and subtree sizes.
    pub fn nodes(&self) -> Vec<NodeInfo<'_>> {
        fn walk<'a>(
            node: &'a Node,
            parent: Option<NodeId>,
            depth: usize,
            out: &mut Vec<NodeInfo<'a>>,
        ) -> usize {
            let id = NodeId(out.len());
            out.push(NodeInfo { id, kind: &node.kind, parent, depth, subtree_size: 0 });
            let mut size = 1;
            for child in &node.children {
                size += walk(child, Some(id), depth + 1, out);
            }
            out[id.0].subtree_size = size;
            size
        }
        let mut out = Vec::new();
        walk(&self.root, None, 1, &mut out);
        out
    }

    pub fn get(&self, id: NodeId) -> Option<&Node> {
        fn find<'a>(node: &'a Node, target: usize, next: &mut usize) -> Option<&'a Node> {
            if *next == target {
                return Some(node);
            }
            *next += 1;
            node.children.iter().find_map(|c| find(c, target, next))
        }
        find(&self.root, id.0, &mut 0)
    }

    /// Chain of ancestors of `id`, from the root down to (excluding) `id`.
    pub fn ancestors(&self, id: NodeId) -> Result<Vec<&Node>, GenomeError> {
        fn walk<'a>(
            node: &'a Node,
            target: usize,
            next: &mut usize,
            path: &mut Vec<&'a Node>,
        ) -> bool {
            if *next == target {
                return true;
            }
            *next += 1;
            path.push(node);
            for child in &node.children {
                if walk(child, target, next, path) {
                    return true;
                }
            }
            path.pop();
            false
        }
        let mut path = Vec::new();
        if walk(&self.root, id.0, &mut 0, &mut path) {
            Ok(path)
        } else {
            Err(GenomeError::InvalidCursor(id))
        }
    }

    pub fn subtree_size(&self, id: NodeId) -> Result<usize, GenomeError> {
        self.get(id).map(Node::size).ok_or(GenomeError::InvalidCursor(id))
    }

    /// Leaves in left-to-right depth-first order; this is the order in
    /// which blocks are chained in the compiled network.
    pub fn leaves_in_order(&self) -> Vec<NodeId> {
        self.nodes().into_iter().filter(|n| n.kind.is_terminal()).map(|n| n.id).collect()
    }

    /// Block ids of the leaves, in chain order.
    pub fn leaf_blocks(&self) -> Vec<BlockId> {
        fn walk(node: &Node, out: &mut Vec<BlockId>) {
            match &node.kind {
                NodeKind::Terminal(b) => out.push(b.clone()),
                _ => node.children.iter().for_each(|c| walk(c, out)),
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }

    /// Checks every feasibility rule; an empty list means the tree is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut violations = Vec::new();
        if self.root.kind != NodeKind::Plus {
            violations.push(Violation::RootNotPlus {
                node: NodeId(0),
                found: self.root.kind.symbol().to_string(),
            });
        }
        let mut strides = 0;
        for (id, node) in self.preorder() {
            let expected = node.kind.arity();
            if node.children.len() != expected {
                violations.push(Violation::Arity {
                    node: id,
                    symbol: node.kind.symbol().to_string(),
                    expected,
                    found: node.children.len(),
                });
            }
            if node.kind == NodeKind::Stride {
                strides += 1;
                if strides == STRIDE_BUDGET + 1 {
                    violations.push(Violation::TooManyStrides {
                        node: id,
                        count: self.stride_count(),
                    });
                }
                if node.children.iter().any(|c| !c.kind.is_terminal()) {
                    violations.push(Violation::StrideChildNotTerminal { node: id });
                }
            }
        }
        violations
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    /// Returns a copy with the subtree at `at` replaced by `with`. The result
    /// is not re-validated: callers repair it before use.
    pub fn replace_subtree(&self, at: NodeId, with: Node) -> Result<GenomeTree, GenomeError> {
        if at.0 == 0 {
            return Err(GenomeError::RootReplacement);
        }
        let mut root = self.root.clone();
        let slot = node_mut(&mut root, at.0).ok_or(GenomeError::InvalidCursor(at))?;
        *slot = with;
        Ok(GenomeTree { root })
    }

    /// Pre-order iterator of `(NodeId, &Node)`.
    pub fn preorder(&self) -> Preorder<'_> {
        Preorder { stack: vec![&self.root], next: 0 }
    }
}

/// Mutable lookup of the node at pre-order position `target`.
pub(crate) fn node_mut(root: &mut Node, target: usize) -> Option<&mut Node> {
    fn find<'a>(node: &'a mut Node, target: usize, next: &mut usize) -> Option<&'a mut Node> {
        if *next == target {
            return Some(node);
        }
        *next += 1;
        for child in node.children.iter_mut() {
            if let Some(found) = find(child, target, next) {
                return Some(found);
            }
        }
        None
    }
    find(root, target, &mut 0)
}

pub struct Preorder<'a> {
    stack: Vec<&'a Node>,
    next: usize,
}

impl<'a> Iterator for Preorder<'a> {
    type Item = (NodeId, &'a Node);

    fn next(&mut self) -> Option<Self::Item> {
        let node = self.stack.pop()?;
        self.stack.extend(node.children.iter().rev());
        let id = NodeId(self.next);
        self.next += 1;
        Some((id, node))
    }
}

impl fmt::Display for GenomeTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&crate::sexpr::print(self))
    }
}

/// A genome plus its evaluation bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct Individual {
    pub genome: GenomeTree,
    fitness: Option<f64>,
    canonical_key: String,
    pub birth_generation: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Error)]
#[error("fitness {0} is outside [0, 1]")]
pub struct FitnessRangeError(pub f64);

impl Individual {
    pub fn new(genome: GenomeTree, birth_generation: u32) -> Self {
        let canonical_key = crate::sexpr::print(&genome);
        Individual { genome, fitness: None, canonical_key, birth_generation }
    }

    pub fn with_fitness(mut self, fitness: f64) -> Result<Self, FitnessRangeError> {
        self.set_fitness(fitness)?;
        Ok(self)
    }

    pub fn set_fitness(&mut self, fitness: f64) -> Result<(), FitnessRangeError> {
        if !(0.0..=1.0).contains(&fitness) {
            return Err(FitnessRangeError(fitness));
        }
        self.fitness = Some(fitness);
        Ok(())
    }

    pub fn clear_fitness(&mut self) {
        self.fitness = None;
    }

    pub fn fitness(&self) -> Option<f64> {
        self.fitness
    }

    /// Canonical s-expression of the genome.
    pub fn key(&self) -> &str {
        &self.canonical_key
    }

    pub fn node_count(&self) -> usize {
        self.genome.node_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(name: &str) -> Node {
        Node::terminal(name)
    }

    /// (+ (^3 (^2 b2)) (+ b1 (str b3)))
    pub(crate) fn worked_example() -> GenomeTree {
        GenomeTree::new(Node::plus(
            Node::widen3(Node::widen2(b("b2"))),
            Node::plus(b("b1"), Node::stride(b("b3"))),
        ))
        .unwrap()
    }

    fn ids(tree: &GenomeTree, leaves: &[NodeId]) -> Vec<String> {
        leaves
            .iter()
            .map(|&id| tree.get(id).unwrap().kind.symbol().to_string())
            .collect()
    }

    #[test]
    fn node_counts() {
        let small = GenomeTree::new(Node::plus(b("b1"), b("b2"))).unwrap();
        assert_eq!(small.node_count(), 3);
        assert_eq!(worked_example().node_count(), 8);
        let strided = GenomeTree::new(Node::plus(Node::stride(b("b1")), Node::stride(b("b2"))));
        assert_eq!(strided.unwrap().node_count(), 5);
    }

    #[test]
    fn subtree_sizes() {
        let tree = worked_example();
        let nodes = tree.nodes();
        let str_node = nodes.iter().find(|n| *n.kind == NodeKind::Stride).unwrap();
        assert_eq!(tree.subtree_size(str_node.id).unwrap(), 2);
        assert_eq!(tree.subtree_size(NodeId(0)).unwrap(), tree.node_count());
        for leaf in tree.leaves_in_order() {
            assert_eq!(tree.subtree_size(leaf).unwrap(), 1);
        }
        assert_eq!(tree.subtree_size(NodeId(8)), Err(GenomeError::InvalidCursor(NodeId(8))));
    }

    #[test]
    fn subtree_size_is_one_plus_children() {
        let tree = worked_example();
        for (id, node) in tree.preorder() {
            let children: usize = node.children.iter().map(Node::size).sum();
            assert_eq!(tree.subtree_size(id).unwrap(), 1 + children);
        }
    }

    #[test]
    fn leaf_order() {
        let tree = worked_example();
        assert_eq!(ids(&tree, &tree.leaves_in_order()), ["b2", "b1", "b3"]);
        let t = GenomeTree::new(Node::plus(Node::plus(b("b4"), b("b4")), b("b1"))).unwrap();
        assert_eq!(ids(&t, &t.leaves_in_order()), ["b4", "b4", "b1"]);
        let internal = t.nodes().iter().filter(|n| !n.kind.is_terminal()).count();
        assert_eq!(t.leaves_in_order().len(), t.node_count() - internal);
    }

    #[test]
    fn validate_reports_each_rule() {
        assert!(GenomeTree::new(Node::plus(b("b1"), b("b2"))).is_ok());

        let widened_root = GenomeTree::from_root_unchecked(Node::widen2(b("b1")));
        let v = widened_root.validate();
        assert!(matches!(v[0], Violation::RootNotPlus { .. }));
        assert!(v[0].to_string().starts_with("root must be +"));

        let mut chain = Node::stride(b("b1"));
        for _ in 0..5 {
            chain = Node::plus(chain, Node::stride(b("b2")));
        }
        let six = GenomeTree::from_root_unchecked(chain);
        assert_eq!(six.stride_count(), 6);
        let v = six.validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().starts_with("str count > 5"));

        let nested = GenomeTree::from_root_unchecked(Node::plus(
            b("b3"),
            Node::stride(Node::plus(b("b1"), b("b2"))),
        ));
        let v = nested.validate();
        assert_eq!(v, vec![Violation::StrideChildNotTerminal { node: NodeId(2) }]);
        assert!(v[0].to_string().starts_with("str child must be terminal"));

        let lopsided = GenomeTree::from_root_unchecked(Node {
            kind: NodeKind::Plus,
            children: vec![b("b1")],
        });
        assert!(matches!(lopsided.validate()[0], Violation::Arity { expected: 2, found: 1, .. }));
    }

    #[test]
    fn replace_leaf() {
        let tree = GenomeTree::new(Node::plus(b("b1"), b("b2"))).unwrap();
        let out = tree.replace_subtree(NodeId(1), b("b3")).unwrap();
        assert_eq!(out.root(), &Node::plus(b("b3"), b("b2")));
        assert_eq!(tree.root(), &Node::plus(b("b1"), b("b2")));
    }

    #[test]
    fn replace_stride_subtree_in_example() {
        let tree = worked_example();
        let str_id = tree.nodes().iter().find(|n| *n.kind == NodeKind::Stride).unwrap().id;
        let out = tree.replace_subtree(str_id, b("b4")).unwrap();
        assert_eq!(ids(&out, &out.leaves_in_order()), ["b2", "b1", "b4"]);
        assert!(out.is_valid());
    }

    #[test]
    fn replace_stride_child_with_function_fails_validation() {
        let tree = worked_example();
        let b3 = *tree.leaves_in_order().last().unwrap();
        let out = tree.replace_subtree(b3, Node::plus(b("b1"), b("b2"))).unwrap();
        assert!(!out.is_valid());
    }

    #[test]
    fn replace_rejects_root_and_bad_cursor() {
        let tree = worked_example();
        assert_eq!(tree.replace_subtree(NodeId(0), b("b1")), Err(GenomeError::RootReplacement));
        assert_eq!(
            tree.replace_subtree(NodeId(99), b("b1")),
            Err(GenomeError::InvalidCursor(NodeId(99)))
        );
    }

    #[test]
    fn individual_key_and_fitness_range() {
        let mut ind = Individual::new(worked_example(), 0);
        assert_eq!(ind.key(), "(+ (^3 (^2 b2)) (+ b1 (str b3)))");
        assert_eq!(ind.fitness(), None);
        assert_eq!(ind.set_fitness(1.5), Err(FitnessRangeError(1.5)));
        assert!(ind.set_fitness(f64::NAN).is_err());
        ind.set_fitness(0.75).unwrap();
        assert_eq!(ind.fitness(), Some(0.75));
    }

    #[test]
    fn ancestors_of_leaf() {
        let tree = worked_example();
        let b2 = tree.leaves_in_order()[0];
        let path: Vec<_> = tree.ancestors(b2).unwrap().iter().map(|n| n.kind.clone()).collect();
        assert_eq!(path, [NodeKind::Plus, NodeKind::Widen3, NodeKind::Widen2]);
    }
}
