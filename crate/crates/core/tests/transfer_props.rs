use mimo_noma::fixtures::random_weighted_system;
use mimo_noma::linalg::{inverse_hpd, CMat};
use mimo_noma::rng::substream;
use mimo_noma::transfer::{phi, phi_inverse, variance_from_anchor, GammaVector};
use mimo_noma::{Complex64, ComplexMatrix, SystemModel};
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn phi_non_increasing_in_every_variance(seed in any::<u64>(), nr in 1usize..6, nu in 2usize..6, j in 0usize..6) {
        let j = j % nu;
        let mut rng = substream(seed, 0);
        let s = random_weighted_system(&mut rng, nr, nu, 0.5);
        let v: Vec<f64> = (0..nu).map(|_| rng.random_range(0.05..0.95)).collect();
        let base = phi(&s, &v).unwrap();
        let mut up = v.clone();
        up[j] += 0.05;
        let moved = phi(&s, &up).unwrap();
        for i in 0..nu {
            prop_assert!(moved[i] <= base[i] * (1.0 + 1e-12) + 1e-14, "user {i} rose when v[{j}] grew");
        }
    }

    #[test]
    fn phi_inverse_round_trips(seed in any::<u64>(), k in 1usize..=9, g2 in -3.0f64..3.0) {
        let v1 = k as f64 / 10.0;
        let mut rng = substream(seed, 1);
        let s = random_weighted_system(&mut rng, 3, 2, 0.5);
        let g = GammaVector::new(vec![1.0, 10f64.powf(g2)]).unwrap();
        let v = variance_from_anchor(v1, &g).unwrap();
        let rho = phi(&s, &v).unwrap();
        let back = phi_inverse(&s, 0, rho[0], &g).unwrap();
        prop_assert!((back - v1).abs() <= 1e-8, "{back} vs {v1}");
    }

    #[test]
    fn phi_limits(seed in any::<u64>(), nr in 1usize..6, nu in 1usize..6) {
        let mut rng = substream(seed, 2);
        let s = random_weighted_system(&mut rng, nr, nu, 0.5);
        let at_one = phi(&s, &vec![1.0; nu]).unwrap();
        let at_zero = phi(&s, &vec![1e-12; nu]).unwrap();
        for i in 0..nu {
            let mf = s.matched_filter_snr(i);
            prop_assert!(at_one[i] > 0.0);
            prop_assert!((at_zero[i] - mf).abs() <= 1e-8 * mf.max(1.0));
        }
    }
}

#[test]
fn exchangeable_users_reduce_to_the_symmetric_form() {
    for (n, a) in [(2usize, 0.4), (3, 0.3), (5, -0.15)] {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|r| (0..n).map(|c| if r == c { 1.0 } else { a }).collect())
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let s = SystemModel::with_unit_weights(ComplexMatrix::from_real_rows(&refs).unwrap(), 0.5).unwrap();
        for k in 1..10 {
            let v = k as f64 / 10.0;
            let p = phi(&s, &vec![v; n]).unwrap();
            let m = s.snr_gram() + CMat::identity(n, n) * Complex64::new(1.0 / v, 0.0);
            let sym = 1.0 / inverse_hpd(&m).unwrap()[(0, 0)].re - 1.0 / v;
            for x in &p {
                assert!((x - sym).abs() <= 1e-9, "{p:?} vs {sym}");
            }
        }
    }
}
