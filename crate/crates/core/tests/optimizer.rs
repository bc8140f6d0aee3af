use proptest::prelude::*;

use overpoll::model::{reference_network, GatingIndex, NetworkSpec, ServiceDistribution, GatingDistribution};
use overpoll::optimizer::{candidate_set, evaluate, exhaustive_search, genetic_search, GaParams};

fn candidates(spec: &NetworkSpec, kmax: u32) -> Vec<Vec<GatingIndex>> {
    vec![candidate_set(kmax); spec.n]
}

#[test]
fn ga_reaches_the_brute_force_optimum_for_most_seeds() {
    let spec = reference_network(GatingIndex::Infinite);
    let cands = candidates(&spec, 32);
    let best = exhaustive_search(&spec, &cands).unwrap().best_beta;
    let hits = (0..20)
        .filter(|&seed| {
            let params = GaParams { seed, ..GaParams::default() };
            let r = genetic_search(&spec, &cands, &params, None).unwrap();
            (r.best_beta - best).abs() <= 1e-3
        })
        .count();
    assert!(hits >= 18, "{hits} of 20 seeds reached {best}");
}

#[test]
fn symmetric_queues_give_equal_beta() {
    let spec = NetworkSpec {
        n: 2,
        lambda: vec![1.0, 1.0],
        service: vec![ServiceDistribution::Exponential { rate: 2.0 }; 2],
        routing: vec![vec![0.1, 0.2], vec![0.2, 0.1]],
        gating: vec![GatingDistribution::exhaustive(); 2],
    };
    use GatingIndex::{Finite, Infinite};
    for (a, b) in [(Finite(1), Infinite), (Finite(2), Finite(5)), (Infinite, Finite(3))] {
        let x = evaluate(&spec, &[a, b]).unwrap();
        let y = evaluate(&spec, &[b, a]).unwrap();
        assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{x} vs {y}");
    }
}

#[test]
fn best_beta_is_the_beta_of_best() {
    let spec = reference_network(GatingIndex::Finite(1));
    let r = exhaustive_search(&spec, &candidates(&spec, 6)).unwrap();
    assert!((evaluate(&spec, &r.best).unwrap() - r.best_beta).abs() <= 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ga_never_beats_brute_force(seed in 0u64..10_000, kmax in 1u32..8, pop in 2usize..12, gens in 0usize..20) {
        let spec = reference_network(GatingIndex::Infinite);
        let cands = candidates(&spec, kmax);
        let brute = exhaustive_search(&spec, &cands).unwrap();
        let params = GaParams { population: pop, generations: gens, seed, ..GaParams::default() };
        let ga = genetic_search(&spec, &cands, &params, None).unwrap();
        prop_assert!(ga.best_beta >= brute.best_beta - 1e-12);
        prop_assert!(ga.history.windows(2).all(|w| w[1].1 <= w[0].1));
        prop_assert!((evaluate(&spec, &ga.best).unwrap() - ga.best_beta).abs() <= 1e-12);
    }
}
