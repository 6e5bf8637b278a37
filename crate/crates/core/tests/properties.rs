mod common;

use proptest::prelude::*;
use treenas::arch::{self, BlockLibrary, NetworkFrame};
use treenas::engine::BoxSummary;
use treenas::fitness::{surrogate_fitness, SurrogateParams};
use treenas::genome::{GenomeTree, Individual, Node, STRIDE_BUDGET};
use treenas::operators::{self, CrossoverConfig, Normalization};
use treenas::{sexpr, RngStream};

use common::{oracle_param_count, terminals};

/// Arbitrary shapes, including infeasible ones.
fn raw_node() -> impl Strategy<Value = Node> {
    let leaf = prop_oneof![Just("b1"), Just("b2"), Just("b3"), Just("b4")].prop_map(Node::terminal);
    leaf.prop_recursive(8, 64, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(l, r)| Node::plus(l, r)),
            inner.clone().prop_map(Node::widen2),
            inner.clone().prop_map(Node::widen3),
            inner.prop_map(Node::stride),
        ]
    })
}

fn raw_tree() -> impl Strategy<Value = GenomeTree> {
    (raw_node(), raw_node()).prop_map(|(l, r)| GenomeTree::from_root_unchecked(Node::plus(l, r)))
}

fn feasible_tree() -> impl Strategy<Value = GenomeTree> {
    raw_tree().prop_map(|t| operators::repair(&t))
}

fn normalization() -> impl Strategy<Value = Normalization> {
    prop_oneof![Just(Normalization::Max), Just(Normalization::MinMax), Just(Normalization::Sum)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn repair_always_yields_a_feasible_tree(tree in raw_tree()) {
        let fixed = operators::repair(&tree);
        prop_assert!(fixed.is_valid(), "{fixed}");
        prop_assert!(fixed.stride_count() <= STRIDE_BUDGET);
        prop_assert_eq!(operators::repair(&fixed), fixed.clone());
        // Only str nodes are removed.
        prop_assert_eq!(fixed.leaf_blocks(), tree.leaf_blocks());
    }

    #[test]
    fn print_parse_round_trip(tree in feasible_tree()) {
        let lib = BlockLibrary::default();
        let text = sexpr::print(&tree);
        prop_assert_eq!(sexpr::parse(&text, &lib).unwrap(), tree);
    }

    #[test]
    fn distinct_trees_print_differently(a in feasible_tree(), b in feasible_tree()) {
        prop_assert_eq!(a == b, sexpr::print(&a) == sexpr::print(&b));
    }

    #[test]
    fn parser_never_panics(text in "[()+^23strb1-4 ∧x]{0,40}") {
        let _ = sexpr::parse(&text, &BlockLibrary::default());
    }

    #[test]
    fn crossover_children_are_feasible(
        a in feasible_tree(),
        b in feasible_tree(),
        t in 1u32..=10,
        norm in normalization(),
        seed in any::<u64>(),
    ) {
        let mut rng = RngStream::from_seed(seed);
        let cfg = CrossoverConfig { normalization: norm, max_nodes: None };
        let (x, y) = operators::crossover_trees(&a, &b, t, 10, &cfg, &mut rng);
        prop_assert!(x.is_valid() && y.is_valid());
        // Subtree exchange conserves leaves when no repair was needed.
        let (strides_in, strides_out) = (a.stride_count() + b.stride_count(), x.stride_count() + y.stride_count());
        if strides_in == strides_out && x.stride_count() <= STRIDE_BUDGET {
            prop_assert_eq!(x.node_count() + y.node_count(), a.node_count() + b.node_count());
        }
    }

    #[test]
    fn crossover_size_cap_is_respected(a in feasible_tree(), b in feasible_tree(), seed in any::<u64>()) {
        let cap = a.node_count().max(b.node_count());
        let cfg = CrossoverConfig { normalization: Normalization::Max, max_nodes: Some(cap) };
        let (x, y) = operators::crossover_trees(&a, &b, 1, 10, &cfg, &mut RngStream::from_seed(seed));
        prop_assert!(x.node_count() <= cap && y.node_count() <= cap);
    }

    #[test]
    fn scores_are_positive_and_flat_at_half_time(
        a in feasible_tree(),
        b in feasible_tree(),
        t in 1u32..=10,
        norm in normalization(),
    ) {
        for p in operators::crossover_points(&a, &b, t, 10, norm) {
            prop_assert!((0.0..=1.0).contains(&p.value));
            prop_assert!(p.score >= 0.0);
            if t == 5 {
                prop_assert!((p.score - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn score_is_antisymmetric_about_half_time(value in 0.0f64..=1.0, t in 0u32..=10) {
        let s = operators::crossover_score(value, t, 10) + operators::crossover_score(value, 10 - t, 10);
        prop_assert!((s - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mutation_keeps_trees_feasible(tree in feasible_tree(), seed in any::<u64>(), depth in 1usize..=6) {
        let lib = BlockLibrary::default();
        let m = operators::mutate_tree(&tree, &terminals(&lib), depth, None, &mut RngStream::from_seed(seed));
        prop_assert!(m.is_valid(), "{m}");
    }

    #[test]
    fn grown_and_full_trees_respect_depth(seed in any::<u64>(), depth in 2usize..=10) {
        let lib = BlockLibrary::default();
        let terms = terminals(&lib);
        let mut rng = RngStream::from_seed(seed);
        let g = operators::grow_tree(&mut rng, &terms, depth);
        let f = operators::full(&mut rng, &terms, depth);
        prop_assert!(g.is_valid() && f.is_valid());
        prop_assert!(g.depth() <= depth);
        prop_assert_eq!(f.depth(), depth);
    }

    #[test]
    fn tournament_size_is_monotone_and_bounded(n in (2usize..=50).prop_map(|h| 2 * h), total in 1u32..=40) {
        let mut last = 0;
        for t in 1..=total {
            let k = operators::tournament_size(t, total, n);
            prop_assert!(k >= last);
            prop_assert!(k <= n / 2 && k >= 2.min(n / 2));
            last = k;
        }
        prop_assert_eq!(last, n / 2);
    }

    #[test]
    fn roulette_skips_zero_weights(weights in prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..5.0], 1..20), seed in any::<u64>()) {
        let i = operators::roulette_select(&weights, &mut RngStream::from_seed(seed));
        prop_assert!(i < weights.len());
        if weights.iter().any(|&w| w > 0.0) {
            prop_assert!(weights[i] > 0.0);
        }
    }

    #[test]
    fn elitism_keeps_the_best_of_the_union(
        parents in prop::collection::vec(0.0f64..=1.0, 4..12),
        children in prop::collection::vec(0.0f64..=1.0, 1..12),
    ) {
        let lib = BlockLibrary::default();
        let tree = sexpr::parse("(+ b1 b2)", &lib).unwrap();
        let make = |f: &f64| Individual::new(tree.clone(), 0).with_fitness(*f).unwrap();
        let n = parents.len();
        let kept = operators::elitism_update(parents.iter().map(make).collect(), children.iter().map(make).collect()).unwrap();
        prop_assert_eq!(kept.len(), n);
        let mut union: Vec<f64> = parents.iter().chain(&children).copied().collect();
        union.sort_by(|a, b| b.total_cmp(a));
        let got: Vec<f64> = kept.iter().map(|i| i.fitness().unwrap()).collect();
        prop_assert_eq!(got, union[..n].to_vec());
    }

    #[test]
    fn lowering_matches_the_tree(tree in feasible_tree()) {
        let lib = BlockLibrary::default();
        let frame = NetworkFrame::default();
        let d = arch::compile(&tree, &lib, &frame).unwrap();
        prop_assert_eq!(d.blocks.len(), tree.terminal_count());
        prop_assert_eq!(d.stride_count(), tree.stride_count());
        prop_assert!(d.validate().is_ok());
        prop_assert_eq!(arch::param_count(&d, &lib), oracle_param_count(&tree, (3, 32, 32), 10));
        let f = surrogate_fitness(&d, &lib, &SurrogateParams::default(), 0, &sexpr::print(&tree));
        prop_assert!((0.0..=1.0).contains(&f));
    }

    #[test]
    fn box_summary_is_ordered(values in prop::collection::vec(-1e6f64..1e6, 1..50)) {
        let s = BoxSummary::from_values(&values).unwrap();
        prop_assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
    }
}
