//! Per-user achievable rates of the iterative LMMSE detector under the
//! γ-constraint, by three independent routes:
//!
//! - eigen closed form `R_i = Σ_j |u_ij|² ln λ_j − ln γ_i` of
//!   `A_γ = Λ^{1/2} B Λ^{1/2} = U diag(λ) Uᴴ`;
//! - quadrature of `∫₀^∞ [(A_γ + tI)⁻¹(A_γ − I)]_ii / (1 + t) dt − ln γ_i`;
//! - the decoder-side area `∫ (ρ + 1/ψ_i(ρ))⁻¹ dρ` of the matched decoder.
//!
//! Plus the two-user closed form, the SIC ladder limit and the symmetric target.

use serde::{Deserialize, Serialize};

use crate::capacity::{sum_capacity, RatePoint, UserPermutation};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec};
use crate::model::SystemModel;
use crate::quadrature::{self, QuadOptions};
use crate::transfer::{matched_psi, GammaVector, TransferFunction};
use num_complex::Complex64;

/// Largest ratio between the extreme entries of a SIC ladder.
pub const MAX_LADDER_SPAN: f64 = 1e12;

/// `A_γ = Λ^{1/2} B Λ^{1/2}`.
pub fn scaled_gram(system: &SystemModel, g: &GammaVector) -> Result<CMat> {
    g.check_users(system)?;
    let b = system.gram_matrix();
    let sq: Vec<f64> = g.as_slice().iter().map(|x| x.sqrt()).collect();
    Ok(CMat::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)] * (sq[i] * sq[j])))
}

/// Spectrum of `A_γ` and the squared moduli of its eigenvectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenRateDecomposition {
    pub eigenvalues: Vec<f64>,
    /// `weights[i][j] = |u_ij|²`, rows are users, columns eigenmodes.
    pub weights: Vec<Vec<f64>>,
    pub gammas: Vec<f64>,
}

impl EigenRateDecomposition {
    pub fn new(system: &SystemModel, g: &GammaVector) -> Result<Self> {
        let a = scaled_gram(system, g)?;
        let eig = linalg::hermitian_eigen(&a)?;
        let n = a.nrows();
        let weights = (0..n).map(|i| (0..n).map(|j| eig.weight(i, j)).collect()).collect();
        if let Some(&l) = eig.values.iter().find(|&&l| !(l > 0.0)) {
            return Err(Error::Numerical(format!(
                "non-positive eigenvalue {l} of the scaled gram"
            )));
        }
        Ok(Self {
            eigenvalues: eig.values,
            weights,
            gammas: g.as_slice().to_vec(),
        })
    }

    pub fn rate(&self, i: usize) -> f64 {
        let s: f64 = self.weights[i]
            .iter()
            .zip(&self.eigenvalues)
            .map(|(w, l)| w * l.ln())
            .sum();
        s - self.gammas[i].ln()
    }

    pub fn rates(&self) -> RatePoint {
        RatePoint::from_raw((0..self.eigenvalues.len()).map(|i| self.rate(i)).collect())
    }
}

/// Closed-form rates from the eigendecomposition of `A_γ`.
pub fn rates_closed_form(system: &SystemModel, g: &GammaVector) -> Result<RatePoint> {
    Ok(EigenRateDecomposition::new(system, g)?.rates())
}

/// Rate of user `i` by adaptive quadrature over `t ∈ [0, ∞)`, mapped to
/// `u ∈ [0, 1)` through `t = u/(1−u)`.
pub fn rate_quadrature(system: &SystemModel, i: usize, g: &GammaVector, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be positive")));
    }
    let n = system.num_users();
    if i >= n {
        return Err(Error::InvalidArgument(format!("user {i} out of range for {n} users")));
    }
    let a = scaled_gram(system, g)?;
    let rhs = CVec::from_fn(n, |k, _| {
        let delta = if k == i { 1.0 } else { 0.0 };
        a[(k, i)] - Complex64::new(delta, 0.0)
    });
    let mut failure = None;
    let integrand = |u: f64| {
        let t = u / (1.0 - u);
        let mut m = a.clone();
        for k in 0..n {
            m[(k, k)] += t;
        }
        match linalg::solve_hpd(&m, &rhs) {
            // (1 + t)⁻¹ dt/du = (1 − u)⁻¹
            Ok(x) => x[i].re / (1.0 - u),
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        }
    };
    let r = quadrature::integrate(integrand, 0.0, 1.0, QuadOptions::with_abs_tol(0.1 * tol))?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(r.value - g.get(i).ln())
}

/// `∫₀^∞ ψ(ρ) / (1 + ρψ(ρ)) dρ`, the decoder-side rate of a transfer function
/// that vanishes beyond its last breakpoint.
pub fn area_rate(psi: &TransferFunction, tol: f64) -> Result<f64> {
    let bps = psi.breakpoints();
    let Some(&end) = bps.last() else {
        return Err(Error::InvalidArgument(
            "decoder transfer function has no support end".into(),
        ));
    };
    if psi.eval(end * (1.0 + 1e-12) + 1e-300) != 0.0 {
        return Err(Error::InvalidArgument(
            "decoder transfer function does not vanish".into(),
        ));
    }
    let mut points = vec![0.0];
    points.extend(bps.iter().copied().filter(|&b| b > 0.0));
    let f = |rho: f64| {
        let p = psi.eval(rho);
        p / (1.0 + rho * p)
    };
    Ok(quadrature::integrate_piecewise(f, &points, QuadOptions::with_abs_tol(0.1 * tol))?.value)
}

/// Decoder-side rate of user `i` for the decoder matched to the estimator.
/// Below `φ_i(1)` the matched decoder is identically 1, so that stretch is
/// taken analytically as `ln(1 + φ_i(1))`.
pub fn rate_from_decoder_transfer(system: &SystemModel, i: usize, g: &GammaVector, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be positive")));
    }
    let psi = matched_psi(system, i, g)?;
    let bps = psi.breakpoints().to_vec();
    if bps.len() == 1 {
        return Ok(bps[0].ln_1p());
    }
    let (lo, hi) = (bps[0], bps[1]);
    let f = |rho: f64| {
        let p = psi.eval(rho);
        p / (1.0 + rho * p)
    };
    let r = quadrature::integrate(f, lo, hi, QuadOptions::with_abs_tol(0.1 * tol))?;
    Ok(lo.ln_1p() + r.value)
}

/// Which expression to use for the second user in [`two_user_closed_form`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SecondUserForm {
    /// `R_2 = C_sum − R_1`.
    #[default]
    SumComplement,
    /// The printed expression with `−η` in the numerator of the log ratio.
    CorrectedPrinted,
    /// The printed expression verbatim; its log ratio is identically 1.
    AsPrinted,
}

/// Two-user rates at `γ = (1, γ_2)` from the entries of `A = B`:
///
/// ```text
/// R_1 = ½ ln(γ det A) + (a22γ − a11)/(2η) · ln((a22γ + a11 − η)/(a22γ + a11 + η))
/// η   = sqrt(a22²γ² + 2(2|a12|² − a22 a11)γ + a11²)
/// ```
///
/// evaluated as `½ ln(γ det A) − (a22γ − a11) atanh(η/s)/η` with
/// `s = a22γ + a11`, which stays finite as `η → 0`.
pub fn two_user_closed_form(system: &SystemModel, gamma2: f64, form: SecondUserForm) -> Result<RatePoint> {
    if system.num_users() != 2 {
        return Err(Error::Dimension(format!(
            "two-user closed form applied to {} users",
            system.num_users()
        )));
    }
    if !(gamma2 > 0.0 && gamma2.is_finite()) {
        return Err(Error::InvalidArgument(format!("gamma2 = {gamma2} must be positive")));
    }
    let a = system.gram_matrix();
    let (a11, a22, a12sq) = (a[(0, 0)].re, a[(1, 1)].re, a[(0, 1)].norm_sqr());
    let det = a11 * a22 - a12sq;
    let g = gamma2;
    let d = a22 * g - a11;
    let s = a22 * g + a11;
    // (a22γ − a11)² + 4γ|a12|² equals the printed radicand and never cancels
    let eta = (d * d + 4.0 * g * a12sq).sqrt();
    let x = eta / s;
    let atanh_over_eta = if x < 1e-4 {
        (1.0 + x * x / 3.0 + x.powi(4) / 5.0) / s
    } else {
        x.atanh() / eta
    };
    let r1 = 0.5 * (g * det).ln() - d * atanh_over_eta;
    let r2 = match form {
        SecondUserForm::SumComplement => det.ln() - r1,
        SecondUserForm::CorrectedPrinted => 0.5 * (det / g).ln() + d * atanh_over_eta,
        SecondUserForm::AsPrinted => 0.5 * (det / g).ln(),
    };
    Ok(RatePoint::from_raw(vec![r1, r2]))
}

/// γ assignment of a SIC ladder: the `j`-th decoded user gets `ladder^{j}`
/// (0-based), renormalised so user 0 has γ = 1. Ladders whose span would
/// exceed [`MAX_LADDER_SPAN`] are compressed to that span.
pub fn ladder_gammas(perm: &UserPermutation, ladder: f64) -> Result<GammaVector> {
    if !(ladder >= 10.0 && ladder.is_finite()) {
        return Err(Error::OutOfRange {
            what: "sic ladder",
            value: ladder,
            lo: 10.0,
            hi: f64::INFINITY,
        });
    }
    let n = perm.len();
    let steps = (n.saturating_sub(1)) as f64;
    let mut step = ladder.ln();
    if steps > 0.0 && step * steps > MAX_LADDER_SPAN.ln() * (1.0 + 1e-12) {
        step = MAX_LADDER_SPAN.ln() / steps;
        log::warn!(
            "sic ladder {ladder} spans more than {MAX_LADDER_SPAN:e} over {n} users; using {}",
            step.exp()
        );
    }
    let mut logs = vec![0.0; n];
    for (pos, &k) in perm.order().iter().enumerate() {
        logs[k] = step * pos as f64;
    }
    let l0 = logs[0];
    GammaVector::new(logs.iter().map(|l| (l - l0).exp()).collect())
}

/// Closed-form rates on a SIC ladder; tends to the extreme point of `perm`
/// as `ladder` grows.
pub fn sic_extreme_limit(system: &SystemModel, perm: &UserPermutation, ladder: f64) -> Result<RatePoint> {
    if perm.len() != system.num_users() {
        return Err(Error::Dimension(format!(
            "permutation of {} users for a {}-user system",
            perm.len(),
            system.num_users()
        )));
    }
    rates_closed_form(system, &ladder_gammas(perm, ladder)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricReport {
    /// `C_sum / N_u`
    pub target: f64,
    /// Closed-form rates at `γ = (1, …, 1)`.
    pub rates: RatePoint,
    /// `max_i |R_i − C/N_u| / (C/N_u)`
    pub spread: f64,
}

/// The symmetric per-user target and the spread of the actual rates around it.
pub fn symmetric_rate(system: &SystemModel) -> Result<SymmetricReport> {
    if !system.has_equal_weights() {
        log::warn!("symmetric rate requested for a system with unequal user weights");
    }
    let n = system.num_users();
    let target = sum_capacity(system) / n as f64;
    let rates = rates_closed_form(system, &GammaVector::ones(n))?;
    let spread = rates.rates.iter().map(|r| (r - target).abs()).fold(0.0, f64::max) / target;
    Ok(SymmetricReport { target, rates, spread })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capacity::{extreme_point, region_contains};
    use crate::fixtures;
    use crate::model::ComplexMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar() -> SystemModel {
        SystemModel::with_unit_weights(ComplexMatrix::from_real_rows(&[&[1.0]]).unwrap(), 1.0).unwrap()
    }

    fn random_gamma<R: Rng>(rng: &mut R, n: usize, decades: f64) -> GammaVector {
        GammaVector::normalized(
            (0..n)
                .map(|_| 10f64.powf(rng.random_range(-decades..decades)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn scalar_rate_is_ln2_by_every_route() {
        let s = scalar();
        let g = GammaVector::ones(1);
        let ln2 = std::f64::consts::LN_2;
        assert!((rates_closed_form(&s, &g).unwrap().rates[0] - ln2).abs() < 1e-15);
        assert!((rate_quadrature(&s, 0, &g, 1e-10).unwrap() - ln2).abs() < 1e-10);
        assert!((rate_from_decoder_transfer(&s, 0, &g, 1e-10).unwrap() - ln2).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_users_are_gamma_invariant() {
        let s = fixtures::orthogonal_system(&[1.0, 2.0, 0.5], 4, 0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let g = random_gamma(&mut rng, 3, 4.0);
            let r = rates_closed_form(&s, &g).unwrap();
            for i in 0..3 {
                assert!((r.rates[i] - s.matched_filter_snr(i).ln_1p()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn two_user_rates_sum_to_capacity() {
        let s = fixtures::two_user();
        let r = rates_closed_form(&s, &GammaVector::ones(2)).unwrap();
        assert!((r.sum - sum_capacity(&s)).abs() < 1e-12);
        assert!((r.sum - 2.792).abs() < 1e-3);
        assert!(r.rates.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn decomposition_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..30 {
            let nu = rng.random_range(1..7usize);
            let nr = rng.random_range(1..7usize);
            let s = fixtures::random_system(&mut rng, nr, nu, 0.5);
            let g = random_gamma(&mut rng, nu, 3.0);
            let d = EigenRateDecomposition::new(&s, &g).unwrap();
            let gmin = g.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
            for row in &d.weights {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            assert!(d.eigenvalues.iter().all(|&l| l >= gmin * (1.0 - 1e-9)));
        }
    }

    #[test]
    fn quadrature_and_decoder_routes_match_closed_form() {
        for (s, g) in [
            (fixtures::two_user(), GammaVector::ones(2)),
            (fixtures::two_user(), GammaVector::new(vec![1.0, 30.0]).unwrap()),
            (
                fixtures::three_user_overloaded(),
                GammaVector::new(vec![1.0, 2.0, 5.0]).unwrap(),
            ),
        ] {
            let cf = rates_closed_form(&s, &g).unwrap();
            for i in 0..s.num_users() {
                let q = rate_quadrature(&s, i, &g, 1e-8).unwrap();
                let d = rate_from_decoder_transfer(&s, i, &g, 1e-6).unwrap();
                assert!((q - cf.rates[i]).abs() <= 1e-8, "quadrature {q} vs {}", cf.rates[i]);
                assert!((d - cf.rates[i]).abs() <= 1e-6, "decoder {d} vs {}", cf.rates[i]);
            }
        }
    }

    #[test]
    fn backed_off_decoder_loses_rate() {
        let s = fixtures::two_user();
        let g = GammaVector::ones(2);
        for i in 0..2 {
            let matched = area_rate(&matched_psi(&s, i, &g).unwrap(), 1e-8).unwrap();
            let backed = area_rate(&crate::transfer::backed_off_psi(&s, i, &g, 0.1).unwrap(), 1e-8).unwrap();
            let cf = rates_closed_form(&s, &g).unwrap().rates[i];
            assert!((matched - cf).abs() < 1e-6);
            assert!(backed < matched - 1e-4);
        }
    }

    #[test]
    fn two_user_forms() {
        let id = SystemModel::with_unit_weights(ComplexMatrix::identity(2), 1.0).unwrap();
        for g in [1e-3, 0.5, 1.0, 2.0, 1e4] {
            let r = two_user_closed_form(&id, g, SecondUserForm::SumComplement).unwrap();
            assert!((r.rates[0] - std::f64::consts::LN_2).abs() < 1e-12);
            assert!((r.rates[1] - std::f64::consts::LN_2).abs() < 1e-12);
        }
        let s = fixtures::two_user();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let g = 10f64.powf(rng.random_range(-3.0..3.0));
            let cf = rates_closed_form(&s, &GammaVector::new(vec![1.0, g]).unwrap()).unwrap();
            let a = two_user_closed_form(&s, g, SecondUserForm::SumComplement).unwrap();
            let b = two_user_closed_form(&s, g, SecondUserForm::CorrectedPrinted).unwrap();
            let c = two_user_closed_form(&s, g, SecondUserForm::AsPrinted).unwrap();
            assert!((a.rates[0] - cf.rates[0]).abs() < 1e-9);
            assert!((a.rates[1] - cf.rates[1]).abs() < 1e-9);
            assert!((b.rates[1] - cf.rates[1]).abs() < 1e-9);
            assert!((c.sum - cf.sum).abs() > 1e-3);
        }
        assert!(two_user_closed_form(&fixtures::three_user_overloaded(), 1.0, SecondUserForm::SumComplement).is_err());
    }

    #[test]
    fn two_user_limits_hit_extreme_points() {
        let s = fixtures::two_user();
        let last2 = extreme_point(&s, &UserPermutation::new(vec![0, 1]).unwrap()).unwrap();
        let last1 = extreme_point(&s, &UserPermutation::new(vec![1, 0]).unwrap()).unwrap();
        let hi = two_user_closed_form(&s, 1e6, SecondUserForm::SumComplement).unwrap();
        let lo = two_user_closed_form(&s, 1e-6, SecondUserForm::SumComplement).unwrap();
        assert!(hi.linf_distance(&last2) < 1e-3);
        assert!(lo.linf_distance(&last1) < 1e-3);
    }

    #[test]
    fn ladder_limit_approaches_extreme_points() {
        let s = fixtures::two_user();
        let p = UserPermutation::new(vec![0, 1]).unwrap();
        let e = extreme_point(&s, &p).unwrap();
        assert!(sic_extreme_limit(&s, &p, 1e6).unwrap().linf_distance(&e) < 1e-3);

        let s = fixtures::three_user_overloaded();
        let p = UserPermutation::new(vec![2, 1, 0]).unwrap();
        let e = extreme_point(&s, &p).unwrap();
        let errs: Vec<f64> = [1e2, 1e4, 1e6]
            .iter()
            .map(|&l| sic_extreme_limit(&s, &p, l).unwrap().linf_distance(&e))
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");

        let orth = fixtures::orthogonal_system(&[1.0, 0.3], 2, 1.0);
        let e = extreme_point(&orth, &p_of(2)).unwrap();
        assert!(sic_extreme_limit(&orth, &p_of(2), 10.0).unwrap().linf_distance(&e) < 1e-12);
        assert!(sic_extreme_limit(&orth, &p_of(2), 5.0).is_err());
    }

    fn p_of(n: usize) -> UserPermutation {
        UserPermutation::identity(n)
    }

    #[test]
    fn oversized_ladder_is_compressed() {
        let p = UserPermutation::identity(4);
        let g = ladder_gammas(&p, 1e6).unwrap();
        let span = g.as_slice().iter().copied().fold(0.0, f64::max)
            / g.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
        assert!((span / MAX_LADDER_SPAN - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rates_move_with_own_gamma_against_others() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let s = fixtures::random_system(&mut rng, 3, 3, 0.5);
            let g = random_gamma(&mut rng, 3, 1.0);
            let base = rates_closed_form(&s, &g).unwrap();
            for j in 0..3 {
                let mut up = g.as_slice().to_vec();
                up[j] *= 1.0 + 1e-4;
                let moved = rates_closed_form(&s, &GammaVector::normalized(up).unwrap()).unwrap();
                for i in 0..3 {
                    let d = moved.rates[i] - base.rates[i];
                    if i == j {
                        assert!(d > 0.0);
                    } else {
                        assert!(d < 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn two_user_sweep_stays_on_the_face() {
        let s = fixtures::two_user();
        let c = sum_capacity(&s);
        let mut prev = f64::NEG_INFINITY;
        for k in 0..60 {
            let g = 10f64.powf(-6.0 + 12.0 * k as f64 / 59.0);
            let r = rates_closed_form(&s, &GammaVector::new(vec![1.0, g]).unwrap()).unwrap();
            assert!(region_contains(&s, &r, 1e-8).unwrap().contained);
            assert!((r.sum - c).abs() <= 1e-9 * c);
            assert!(r.rates[1] >= prev);
            prev = r.rates[1];
        }
    }

    #[test]
    fn symmetric_examples() {
        let id = SystemModel::with_unit_weights(ComplexMatrix::identity(2), 1.0).unwrap();
        let r = symmetric_rate(&id).unwrap();
        assert!((r.target - std::f64::consts::LN_2).abs() < 1e-15 && r.spread < 1e-12);
        let r = symmetric_rate(&fixtures::two_user()).unwrap();
        assert!((r.target - 1.396).abs() < 1e-3);
    }
}
