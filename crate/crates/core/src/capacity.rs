//! The Gaussian MAC capacity region: subset log-det bounds, sum capacity,
//! SIC extreme points and membership.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, principal_submatrix, CMat};
use crate::model::SystemModel;

/// Largest user count for exhaustive subset enumeration.
pub const MAX_ENUMERATED_USERS: usize = 20;

/// Per-user rates in nats per channel use, with their sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub rates: Vec<f64>,
    pub sum: f64,
}

impl RatePoint {
    /// Rates must be finite and non-negative (values above -1e-9 are accepted as rounding).
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if let Some(i) = rates.iter().position(|r| !r.is_finite() || *r < -1e-9) {
            return Err(Error::InvalidArgument(format!(
                "rate {} for user {i} is negative or non-finite",
                rates[i]
            )));
        }
        Ok(Self::from_raw(rates))
    }

    pub(crate) fn from_raw(rates: Vec<f64>) -> Self {
        let sum = rates.iter().sum();
        Self { rates, sum }
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_raw(self.rates.iter().map(|r| r * factor).collect())
    }

    pub fn l1_distance(&self, other: &RatePoint) -> f64 {
        self.rates.iter().zip(&other.rates).map(|(a, b)| (a - b).abs()).sum()
    }

    pub fn linf_distance(&self, other: &RatePoint) -> f64 {
        self.rates
            .iter()
            .zip(&other.rates)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn in_bits(&self) -> Self {
        self.scaled(std::f64::consts::LOG2_E)
    }
}

/// A decoding order `(k_1, …, k_N)`: `k_1` is decoded first, `k_N` last.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UserPermutation {
    order: Vec<usize>,
}

impl UserPermutation {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        let mut seen = vec![false; n];
        for &k in &order {
            if k >= n || seen[k] {
                return Err(Error::InvalidArgument(format!(
                    "{order:?} is not a permutation of 0..{n}"
                )));
            }
            seen[k] = true;
        }
        Ok(Self { order })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
        }
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// All `n!` orders, lexicographic.
    pub fn all(n: usize) -> Vec<Self> {
        let mut out = Vec::new();
        let mut cur = Vec::with_capacity(n);
        let mut used = vec![false; n];
        fn rec(n: usize, cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<UserPermutation>) {
            if cur.len() == n {
                out.push(UserPermutation { order: cur.clone() });
                return;
            }
            for k in 0..n {
                if !used[k] {
                    used[k] = true;
                    cur.push(k);
                    rec(n, cur, used, out);
                    cur.pop();
                    used[k] = false;
                }
            }
        }
        rec(n, &mut cur, &mut used, &mut out);
        out
    }
}

fn log_det_subset(g: &CMat, subset: &[usize]) -> Result<f64> {
    if subset.is_empty() {
        return Ok(0.0);
    }
    let mut m = principal_submatrix(g, subset);
    for i in 0..subset.len() {
        m[(i, i)] += 1.0;
    }
    linalg::log_det_hpd(&m)
}

/// `ln det(I + σ⁻² H'_Sᴴ H'_S)` for a nonempty set of distinct users.
pub fn subset_rate_bound(system: &SystemModel, subset: &[usize]) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::InvalidArgument("empty user set".into()));
    }
    let n = system.num_users();
    let mut sorted = subset.to_vec();
    sorted.sort_unstable();
    if let Some(&k) = sorted.iter().find(|&&k| k >= n) {
        return Err(Error::InvalidArgument(format!(
            "user index {k} out of range for {n} users"
        )));
    }
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument(format!("duplicate user in {subset:?}")));
    }
    log_det_subset(system.snr_gram(), &sorted)
}

pub fn sum_capacity(system: &SystemModel) -> f64 {
    let all: Vec<usize> = (0..system.num_users()).collect();
    log_det_subset(system.snr_gram(), &all).expect("I + G is positive definite")
}

/// SIC vertex for a decoding order: user `k_j` gets
/// `ln det(I + G_{S^c_{j-1}}) − ln det(I + G_{S^c_j})`, where `S^c_j` is the
/// set of users still undecoded after `k_j`.
pub fn extreme_point(system: &SystemModel, perm: &UserPermutation) -> Result<RatePoint> {
    let n = system.num_users();
    if perm.len() != n {
        return Err(Error::Dimension(format!("permutation of {} for {n} users", perm.len())));
    }
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut rates = vec![0.0; n];
    let mut prev = log_det_subset(system.snr_gram(), &remaining)?;
    for &k in perm.order() {
        remaining.retain(|&u| u != k);
        let next = log_det_subset(system.snr_gram(), &remaining)?;
        rates[k] = prev - next;
        prev = next;
    }
    Ok(RatePoint::from_raw(rates))
}

/// A violated subset constraint `Σ_{i∈S} R_i ≤ bound(S)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub subset: Vec<usize>,
    pub rate_sum: f64,
    pub bound: f64,
}

impl Violation {
    pub fn excess(&self) -> f64 {
        self.rate_sum - self.bound
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub contained: bool,
    pub violations: Vec<Violation>,
    /// Users with a negative rate.
    pub negative: Vec<usize>,
}

/// Check all `2^N − 1` subset constraints within `slack`.
pub fn region_contains(system: &SystemModel, point: &RatePoint, slack: f64) -> Result<Membership> {
    let n = system.num_users();
    if n > MAX_ENUMERATED_USERS {
        return Err(Error::TooManyUsers {
            what: "region membership",
            users: n,
            limit: MAX_ENUMERATED_USERS,
        });
    }
    if point.len() != n {
        return Err(Error::Dimension(format!("{} rates for {n} users", point.len())));
    }
    let negative: Vec<usize> = (0..n).filter(|&i| point.rates[i] < -slack).collect();
    let mut violations = Vec::new();
    let mut subset = Vec::with_capacity(n);
    for mask in 1u32..(1u32 << n) {
        subset.clear();
        subset.extend((0..n).filter(|&i| mask & (1 << i) != 0));
        let rate_sum: f64 = subset.iter().map(|&i| point.rates[i]).sum();
        let bound = log_det_subset(system.snr_gram(), &subset)?;
        if rate_sum > bound + slack {
            violations.push(Violation {
                subset: subset.clone(),
                rate_sum,
                bound,
            });
        }
    }
    Ok(Membership {
        contained: violations.is_empty() && negative.is_empty(),
        violations,
        negative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{gram, ComplexMatrix};
    use nalgebra::Matrix2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::LN_2;

    fn identity2() -> SystemModel {
        SystemModel::with_unit_weights(ComplexMatrix::identity(2), 1.0).unwrap()
    }

    #[test]
    fn scalar_and_orthogonal_bounds() {
        let h = ComplexMatrix::from_real_rows(&[&[1.0], &[0.0]]).unwrap();
        let s = SystemModel::with_unit_weights(h, 1.0).unwrap();
        assert!((subset_rate_bound(&s, &[0]).unwrap() - LN_2).abs() < 1e-15);
        assert!((subset_rate_bound(&identity2(), &[0, 1]).unwrap() - 2.0 * LN_2).abs() < 1e-15);
        assert!((sum_capacity(&identity2()) - 2.0 * LN_2).abs() < 1e-15);
    }

    #[test]
    fn two_user_sum_capacity_matches_direct_determinant() {
        let b = gram(&fixtures::two_user());
        let m = Matrix2::new(b.get(0, 0).re, b.get(0, 1).re, b.get(1, 0).re, b.get(1, 1).re);
        let direct = m.determinant().ln();
        let c = sum_capacity(&fixtures::two_user());
        assert!((c - direct).abs() < 1e-12);
        assert!((c - 2.792).abs() < 1e-3, "{c}");
    }

    #[test]
    fn subset_errors() {
        let s = identity2();
        assert!(subset_rate_bound(&s, &[]).is_err());
        assert!(subset_rate_bound(&s, &[2]).is_err());
        assert!(subset_rate_bound(&s, &[1, 1]).is_err());
    }

    #[test]
    fn extreme_points_of_orthogonal_and_single_user() {
        for perm in UserPermutation::all(2) {
            let p = extreme_point(&identity2(), &perm).unwrap();
            assert!((p.rates[0] - LN_2).abs() < 1e-15 && (p.rates[1] - LN_2).abs() < 1e-15);
        }
        let h = ComplexMatrix::from_real_rows(&[&[2.0], &[1.0]]).unwrap();
        let s = SystemModel::with_unit_weights(h, 0.5).unwrap();
        let p = extreme_point(&s, &UserPermutation::identity(1)).unwrap();
        assert!((p.rates[0] - (1.0f64 + 10.0).ln()).abs() < 1e-14);
    }

    #[test]
    fn two_user_extreme_point_by_nested_log_dets() {
        let s = fixtures::two_user();
        let c = sum_capacity(&s);
        let b = gram(&s);
        // order (0, 1): user 1 is decoded last and sees no interference.
        let p = extreme_point(&s, &UserPermutation::new(vec![0, 1]).unwrap()).unwrap();
        let last = b.get(1, 1).re.ln();
        assert!((p.rates[1] - last).abs() < 1e-13);
        assert!((p.rates[0] - (c - last)).abs() < 1e-13);
    }

    #[test]
    fn permutation_validation_and_enumeration() {
        assert!(UserPermutation::new(vec![0, 0]).is_err());
        assert!(UserPermutation::new(vec![0, 2]).is_err());
        assert_eq!(UserPermutation::all(3).len(), 6);
        assert_eq!(UserPermutation::all(4).len(), 24);
    }

    #[test]
    fn membership_examples() {
        let s = fixtures::three_user_overloaded();
        for perm in UserPermutation::all(3) {
            let p = extreme_point(&s, &perm).unwrap();
            assert!(region_contains(&s, &p, 1e-9).unwrap().contained);
            let m = region_contains(&s, &p.scaled(1.01), 1e-9).unwrap();
            assert!(!m.contained);
            assert!(m.violations.iter().any(|v| v.subset == vec![0, 1, 2]));
        }
        let zero = RatePoint::new(vec![0.0; 3]).unwrap();
        assert!(region_contains(&s, &zero, 0.0).unwrap().contained);
    }

    #[test]
    fn membership_rejects_too_many_users() {
        let h = ComplexMatrix::identity(21);
        let s = SystemModel::with_unit_weights(h, 1.0).unwrap();
        let p = RatePoint::new(vec![0.0; 21]).unwrap();
        assert!(matches!(region_contains(&s, &p, 0.0), Err(Error::TooManyUsers { .. })));
    }

    #[test]
    fn telescoping_sum_monotone_and_submodular_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let nu = 2 + (rand::Rng::random_range(&mut rng, 0..4usize));
            let nr = 1 + (rand::Rng::random_range(&mut rng, 0..5usize));
            let s = fixtures::random_system(&mut rng, nr, nu, 0.5);
            let c = sum_capacity(&s);
            for perm in UserPermutation::all(nu) {
                let p = extreme_point(&s, &perm).unwrap();
                assert!(((p.sum - c) / c).abs() < 1e-9);
            }
            let bound = |mask: u32| -> f64 {
                let set: Vec<usize> = (0..nu).filter(|&i| mask & (1 << i) != 0).collect();
                if set.is_empty() {
                    0.0
                } else {
                    subset_rate_bound(&s, &set).unwrap()
                }
            };
            let full = 1u32 << nu;
            for a in 0..full {
                for b in 0..full {
                    let (fa, fb) = (bound(a), bound(b));
                    if a & b == a {
                        assert!(fa <= fb + 1e-12, "monotonicity");
                    }
                    assert!(fa + fb + 1e-10 >= bound(a | b) + bound(a & b), "submodularity");
                }
            }
        }
    }
}
