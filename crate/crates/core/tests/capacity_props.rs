use mimo_noma::capacity::{extreme_point, subset_rate_bound, sum_capacity};
use mimo_noma::fixtures::random_weighted_system;
use mimo_noma::rng::substream;
use mimo_noma::UserPermutation;
use proptest::prelude::*;

fn subset_of(mask: u32, n: usize) -> Vec<usize> {
    (0..n).filter(|i| mask & (1 << i) != 0).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn extreme_points_sum_to_capacity(seed in any::<u64>(), nr in 1usize..6, nu in 1usize..5) {
        let mut rng = substream(seed, 0);
        let s = random_weighted_system(&mut rng, nr, nu, 0.5);
        let c = sum_capacity(&s);
        for p in UserPermutation::all(nu) {
            let e = extreme_point(&s, &p).unwrap();
            prop_assert!((e.rates.iter().sum::<f64>() - c).abs() <= 1e-9 * c.max(1.0));
        }
    }

    #[test]
    fn subset_bound_monotone_and_submodular(seed in any::<u64>(), nr in 1usize..6, nu in 1usize..=5) {
        let mut rng = substream(seed, 1);
        let s = random_weighted_system(&mut rng, nr, nu, 0.5);
        let full = 1u32 << nu;
        let bound: Vec<f64> = (0..full)
            .map(|m| if m == 0 { 0.0 } else { subset_rate_bound(&s, &subset_of(m, nu)).unwrap() })
            .collect();
        for a in 0..full {
            for b in 0..full {
                if a & b == a {
                    prop_assert!(bound[a as usize] <= bound[b as usize] + 1e-12);
                }
                let lhs = bound[(a | b) as usize] + bound[(a & b) as usize];
                let rhs = bound[a as usize] + bound[b as usize];
                prop_assert!(lhs <= rhs + 1e-10, "submodularity: {lhs} > {rhs}");
            }
        }
    }
}
