//! Reference systems and random instance generators.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::{ComplexMatrix, SystemModel};

/// Two users, two antennas, σ² = 0.5.
pub fn two_user() -> SystemModel {
    let h = ComplexMatrix::from_real_rows(&[&[1.32, -1.31], &[-1.43, 0.74]]).expect("static matrix");
    SystemModel::with_unit_weights(h, 0.5).expect("static system")
}

/// Three users, two antennas, σ² = 0.5.
pub fn three_user_overloaded() -> SystemModel {
    let h = ComplexMatrix::from_real_rows(&[&[0.678, 0.603, 0.655], &[0.557, 0.392, 0.171]]).expect("static matrix");
    SystemModel::with_unit_weights(h, 0.5).expect("static system")
}

/// Three users, three antennas, σ² = 0.5.
pub fn three_user_square() -> SystemModel {
    let h = ComplexMatrix::from_real_rows(&[&[1.95, 1.28, -2.53], &[-0.31, -0.16, 2.22], &[0.55, 1.08, -1.98]])
        .expect("static matrix");
    SystemModel::with_unit_weights(h, 0.5).expect("static system")
}

/// `CN(0, 1)`: independent real and imaginary parts with variance 1/2.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// I.i.d. `CN(0, 1)` channel with unit weights.
pub fn random_system<R: Rng + ?Sized>(rng: &mut R, nr: usize, nu: usize, noise_variance: f64) -> SystemModel {
    let entries = (0..nr * nu).map(|_| complex_normal(rng)).collect();
    let h = ComplexMatrix::from_row_major(nr, nu, entries).expect("finite entries");
    SystemModel::with_unit_weights(h, noise_variance).expect("valid random system")
}

/// Random system with user weights drawn from `[0.5, 2]`.
pub fn random_weighted_system<R: Rng + ?Sized>(rng: &mut R, nr: usize, nu: usize, noise_variance: f64) -> SystemModel {
    let entries = (0..nr * nu).map(|_| complex_normal(rng)).collect();
    let h = ComplexMatrix::from_row_major(nr, nu, entries).expect("finite entries");
    let weights = (0..nu).map(|_| rng.random_range(0.5..2.0)).collect();
    SystemModel::new(h, weights, noise_variance).expect("valid random system")
}

/// Users on scaled orthogonal columns of the identity (`N_r ≥ N_u`).
pub fn orthogonal_system(gains: &[f64], nr: usize, noise_variance: f64) -> SystemModel {
    assert!(nr >= gains.len());
    let mut entries = vec![Complex64::new(0.0, 0.0); nr * gains.len()];
    for (j, &g) in gains.iter().enumerate() {
        entries[j * gains.len() + j] = Complex64::new(g, 0.0);
    }
    let h = ComplexMatrix::from_row_major(nr, gains.len(), entries).expect("finite entries");
    SystemModel::with_unit_weights(h, noise_variance).expect("valid orthogonal system")
}
