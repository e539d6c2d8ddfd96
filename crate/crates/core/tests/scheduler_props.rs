use coloc_core::scheduler::{
    apply_threshold, brute_force_matching, solve_blossom, solve_greedy, DegradationGraph, Pairing, Strategy as Plan,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arb_graph(max_n: usize) -> impl Strategy<Value = DegradationGraph> {
    (1..=max_n).prop_flat_map(|n| {
        (
            prop::collection::vec(1.0f64..500.0, n),
            prop::collection::vec(0.0f64..150.0, n * n),
        )
            .prop_map(move |(t, d)| {
                DegradationGraph::from_degradation_fn(t, |i, j| Ok(d[i * n + j])).unwrap()
            })
    })
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn seeded_random_graphs_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in [3usize, 4, 5, 6, 7, 8] {
        for _ in 0..200 {
            let runtimes: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..10.0)).collect();
            let mut edges = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    edges.push((i, j, rng.gen_range(0.0..20.0)));
                }
            }
            let g = DegradationGraph::from_edges(runtimes, &edges).unwrap();
            let b = solve_blossom(&g);
            let bf = brute_force_matching(&g).unwrap();
            assert!(close(b.total_weight, bf.total_weight), "n={n}: {} vs {}", b.total_weight, bf.total_weight);
            assert!(solve_greedy(&g).total_weight >= b.total_weight - 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn blossom_is_optimal(g in arb_graph(10)) {
        let b = solve_blossom(&g);
        let bf = brute_force_matching(&g).unwrap();
        prop_assert!(close(b.total_weight, bf.total_weight), "{} vs {}", b.total_weight, bf.total_weight);
    }

    #[test]
    fn blossom_dominates_greedy(g in arb_graph(16)) {
        prop_assert!(solve_blossom(&g).total_weight <= solve_greedy(&g).total_weight + 1e-9);
    }

    #[test]
    fn pairings_partition_nodes(g in arb_graph(16)) {
        for p in [solve_blossom(&g), solve_greedy(&g)] {
            p.validate(g.n()).unwrap();
            prop_assert_eq!(p.solos.len(), g.n() % 2);
            let recomputed = Pairing::new(p.pairs.clone(), p.solos.clone(), &g);
            prop_assert_eq!(recomputed.total_weight, p.total_weight);
        }
    }

    #[test]
    fn weight_lower_bound(g in arb_graph(12)) {
        for i in 0..g.n() {
            for j in 0..g.n() {
                if i != j {
                    prop_assert!(g.weight(i, j) >= g.runtime(i).max(g.runtime(j)));
                    prop_assert_eq!(g.weight(i, j), g.weight(j, i));
                }
            }
        }
    }

    #[test]
    fn threshold_never_hurts(g in arb_graph(14)) {
        for p in [solve_blossom(&g), solve_greedy(&g)] {
            let s = apply_threshold(&p, &g, Plan::Greedy);
            s.validate(g.n()).unwrap();
            prop_assert!(s.predicted_makespan_s <= p.total_weight + 1e-9);
            for e in &s.entries {
                if let coloc_core::scheduler::ScheduleEntry::Pair { pair, weight_s } = e {
                    prop_assert!(*weight_s <= g.runtime(pair[0]) + g.runtime(pair[1]));
                }
            }
        }
    }

    #[test]
    fn scaling_preserves_argmin(g in arb_graph(10), c in 0.01f64..100.0) {
        let base = solve_blossom(&g);
        let scaled_graph = g.scaled(c);
        let scaled = solve_blossom(&scaled_graph);
        prop_assert!(close(scaled.total_weight, c * base.total_weight));
        let same_pairs = Pairing::new(base.pairs.clone(), base.solos.clone(), &scaled_graph);
        prop_assert!(close(same_pairs.total_weight, scaled.total_weight));
    }
}
