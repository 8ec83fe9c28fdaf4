use mimo_noma::fixtures::{complex_normal, random_weighted_system};
use mimo_noma::rng::substream;
use mimo_noma::{gram, ComplexMatrix, SystemModel};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gram_eigenvalues_at_least_one(seed in any::<u64>(), nr in 1usize..8, nu in 1usize..8, s2 in 0.01f64..10.0) {
        let mut rng = substream(seed, 0);
        let s = random_weighted_system(&mut rng, nr, nu, s2);
        prop_assert!(gram(&s).min_eigenvalue().unwrap() >= 1.0 - 1e-10);
    }

    #[test]
    fn weight_and_column_rescaling_cancel(seed in any::<u64>(), nr in 1usize..6, nu in 1usize..6, c in 0.1f64..10.0, col in 0usize..6) {
        let col = col % nu;
        let mut rng = substream(seed, 1);
        let entries: Vec<_> = (0..nr * nu).map(|_| complex_normal(&mut rng)).collect();
        let weights: Vec<f64> = (0..nu).map(|_| rng.random_range(0.5..2.0)).collect();
        let a = SystemModel::new(ComplexMatrix::from_row_major(nr, nu, entries.clone()).unwrap(), weights.clone(), 0.5).unwrap();

        let mut scaled = entries;
        for r in 0..nr {
            scaled[r * nu + col] /= c;
        }
        let mut w = weights;
        w[col] *= c;
        let b = SystemModel::new(ComplexMatrix::from_row_major(nr, nu, scaled).unwrap(), w, 0.5).unwrap();

        let d = (a.effective_channel() - b.effective_channel()).camax();
        prop_assert!(d <= 1e-12, "H' differs by {d}");
        let dg = (gram(&a).as_matrix() - gram(&b).as_matrix()).camax();
        prop_assert!(dg <= 1e-12 * (1.0 + gram(&a).as_matrix().camax()));
    }
}

use rand::Rng;
