use mimo_noma::capacity::{extreme_point, subset_rate_bound, sum_capacity};
use mimo_noma::fixtures::random_system;
use mimo_noma::rng::substream;
use mimo_noma::search::{search_gamma, SearchConfig, SearchStatus};
use mimo_noma::{RatePoint, UserPermutation};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dominant_face_is_covered(seed in any::<u64>(), nr in 1usize..4, lambda in 0.02f64..0.98) {
        let mut rng = substream(seed, 0);
        let s = random_system(&mut rng, nr, 2, 0.5);
        let a = extreme_point(&s, &UserPermutation::new(vec![0, 1]).unwrap()).unwrap();
        let b = extreme_point(&s, &UserPermutation::new(vec![1, 0]).unwrap()).unwrap();
        let target = RatePoint::new((0..2).map(|i| lambda * a.rates[i] + (1.0 - lambda) * b.rates[i]).collect()).unwrap();
        prop_assume!(target.rates[0] < subset_rate_bound(&s, &[0]).unwrap() - 1e-6);
        prop_assume!(target.rates[1] < subset_rate_bound(&s, &[1]).unwrap() - 1e-6);
        prop_assert!((target.rates.iter().sum::<f64>() - sum_capacity(&s)).abs() < 1e-9);

        let cfg = SearchConfig { max_outer_iters: 50, ..SearchConfig::default() };
        let r = search_gamma(&s, &target, &cfg).unwrap();
        prop_assert_eq!(r.status, SearchStatus::Converged);
        prop_assert!(r.l1_error <= cfg.epsilon);
        prop_assert!(r.iterations <= 50);

        for w in r.trace.windows(2) {
            prop_assert!(w[1].l1_error <= w[0].l1_error);
        }
        let again = search_gamma(&s, &target, &cfg).unwrap();
        prop_assert_eq!(again, r);
    }
}
