//! SINR-variance transfer functions of the LMMSE estimator and of matched
//! decoders under the γ-constraint.
//!
//! Under the constraint `v_i⁻¹ = 1 + t/γ_i` every variance profile is labelled
//! by one scalar `t = v_1⁻¹ − 1 ≥ 0`. With that labelling the estimator's
//! output SINR for user `i` has the rational form
//!
//! ```text
//! φ_i(t) = G_ii − Σ_k w_k / (μ_k + t)
//! ```
//!
//! where `μ_k` are the eigenvalues of `Λ^{1/2} B_{-i} Λ^{1/2}` (user `i`
//! removed) and `w_k` the squared projections of the scaled cross-gram column.
//! [`ScalarizedPhi`] precomputes that form once, which makes inversion cheap.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, principal_submatrix, CMat, CVec};
use crate::model::SystemModel;
use num_complex::Complex64;

/// Relative residual accepted by [`phi_inverse`].
pub const INVERSE_TOL: f64 = 1e-10;
/// Iteration cap of the inverse bisection.
pub const INVERSE_MAX_ITER: usize = 200;
/// Points of the log-spaced export grid.
pub const TABULATION_POINTS: usize = 1024;

/// Per-user γ with the gauge `γ_1 = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct GammaVector {
    gammas: Vec<f64>,
}

impl GammaVector {
    /// Requires `γ_1 = 1` (to 1e-12) and every entry positive and finite.
    pub fn new(gammas: Vec<f64>) -> Result<Self> {
        Self::check(&gammas)?;
        if (gammas[0] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "gamma[0] = {} but must be 1",
                gammas[0]
            )));
        }
        let mut gammas = gammas;
        gammas[0] = 1.0;
        Ok(Self { gammas })
    }

    /// Divides through by `γ_1`.
    pub fn normalized(gammas: Vec<f64>) -> Result<Self> {
        Self::check(&gammas)?;
        let g0 = gammas[0];
        let mut out: Vec<f64> = gammas.iter().map(|g| g / g0).collect();
        out[0] = 1.0;
        if let Some(i) = out.iter().position(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "gamma[{i}] overflows after normalisation"
            )));
        }
        Ok(Self { gammas: out })
    }

    pub fn ones(n: usize) -> Self {
        Self { gammas: vec![1.0; n] }
    }

    fn check(gammas: &[f64]) -> Result<()> {
        if gammas.is_empty() {
            return Err(Error::InvalidArgument("empty gamma vector".into()));
        }
        if let Some(i) = gammas.iter().position(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "gamma[{i}] = {} is not positive",
                gammas[i]
            )));
        }
        Ok(())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.gammas
    }

    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.gammas[i]
    }

    pub(crate) fn check_users(&self, system: &SystemModel) -> Result<()> {
        if self.len() != system.num_users() {
            return Err(Error::Dimension(format!(
                "{} gammas for {} users",
                self.len(),
                system.num_users()
            )));
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for GammaVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<GammaVector> for Vec<f64> {
    fn from(g: GammaVector) -> Self {
        g.gammas
    }
}

/// `v_i = 1 / (1 + (v1⁻¹ − 1)/γ_i)`. `v_1` is returned exactly as `v1`.
pub fn variance_from_anchor(v1: f64, g: &GammaVector) -> Result<Vec<f64>> {
    if !(v1 > 0.0 && v1 <= 1.0) {
        return Err(Error::OutOfRange {
            what: "anchor variance",
            value: v1,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let t = 1.0 / v1 - 1.0;
    let mut v = variance_from_parameter(t, g);
    v[0] = v1;
    Ok(v)
}

/// `v_i = 1 / (1 + t/γ_i)`; `t = ∞` gives all zeros.
pub fn variance_from_parameter(t: f64, g: &GammaVector) -> Vec<f64> {
    g.gammas
        .iter()
        .map(|&gi| if t.is_infinite() { 0.0 } else { 1.0 / (1.0 + t / gi) })
        .collect()
}

fn check_variances(system: &SystemModel, v: &[f64]) -> Result<()> {
    if v.len() != system.num_users() {
        return Err(Error::Dimension(format!(
            "{} variances for {} users",
            v.len(),
            system.num_users()
        )));
    }
    if let Some(i) = v.iter().position(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::OutOfRange {
            what: "input variance",
            value: v[i],
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(())
}

/// Estimator output SINR `ρ_i = [V_x̂]_ii⁻¹ − v_i⁻¹` with
/// `V_x̂ = (σ⁻²H'ᴴH' + V⁻¹)⁻¹`.
///
/// Evaluated through the Schur complement
/// `ρ_i = G_ii − g_iᴴ (G_{-i} + V_{-i}⁻¹)⁻¹ g_i`, which does not involve
/// `v_i` at all. Users with `v_j = 0` are known perfectly and drop out
/// exactly, so `v = 0` returns the matched-filter SNRs without any limit.
pub fn phi(system: &SystemModel, v: &[f64]) -> Result<Vec<f64>> {
    check_variances(system, v)?;
    let g = system.snr_gram();
    let n = system.num_users();
    (0..n)
        .map(|i| {
            let others: Vec<usize> = (0..n).filter(|&j| j != i && v[j] > 0.0).collect();
            let gii = g[(i, i)].re;
            if others.is_empty() {
                return Ok(gii);
            }
            let mut m = principal_submatrix(g, &others);
            for (a, &j) in others.iter().enumerate() {
                m[(a, a)] += Complex64::new(1.0 / v[j], 0.0);
            }
            let col = CVec::from_iterator(others.len(), others.iter().map(|&j| g[(j, i)]));
            let x = linalg::solve_hpd(&m, &col)?;
            let q = col.dotc(&x).re;
            Ok(gii - q)
        })
        .collect()
}

/// `φ` straight from the definition: invert `G + V⁻¹`, read the diagonal.
/// Requires every `v_i > 0`; kept as an independent check of [`phi`].
pub fn phi_by_inverse(system: &SystemModel, v: &[f64]) -> Result<Vec<f64>> {
    check_variances(system, v)?;
    if let Some(i) = v.iter().position(|&x| x <= 0.0) {
        return Err(Error::OutOfRange {
            what: "input variance",
            value: v[i],
            lo: 0.0,
            hi: 1.0,
        });
    }
    let mut p = system.snr_gram().clone();
    for (i, &x) in v.iter().enumerate() {
        p[(i, i)] += Complex64::new(1.0 / x, 0.0);
    }
    let cov = linalg::inverse_hpd(&p)?;
    Ok((0..v.len()).map(|i| 1.0 / cov[(i, i)].re - 1.0 / v[i]).collect())
}

/// `φ_i` along the γ-constraint as a function of `t = v_1⁻¹ − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarizedPhi {
    user: usize,
    gamma_i: f64,
    gii: f64,
    mu: Vec<f64>,
    w: Vec<f64>,
}

impl ScalarizedPhi {
    pub fn new(system: &SystemModel, i: usize, g: &GammaVector) -> Result<Self> {
        g.check_users(system)?;
        let n = system.num_users();
        if i >= n {
            return Err(Error::InvalidArgument(format!("user {i} out of range for {n} users")));
        }
        let gm = system.snr_gram();
        let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let gii = gm[(i, i)].re;
        if others.is_empty() {
            return Ok(Self {
                user: i,
                gamma_i: g.get(i),
                gii,
                mu: vec![],
                w: vec![],
            });
        }
        let sq: Vec<f64> = others.iter().map(|&j| g.get(j).sqrt()).collect();
        let b = principal_submatrix(&system.gram_matrix(), &others);
        let c = CMat::from_fn(others.len(), others.len(), |a, bb| b[(a, bb)] * (sq[a] * sq[bb]));
        let eig = linalg::hermitian_eigen(&c)?;
        let col = CVec::from_iterator(others.len(), others.iter().zip(&sq).map(|(&j, &s)| gm[(j, i)] * s));
        let w = (0..others.len())
            .map(|k| eig.vectors.column(k).dotc(&col).norm_sqr())
            .collect();
        Ok(Self {
            user: i,
            gamma_i: g.get(i),
            gii,
            mu: eig.values,
            w,
        })
    }

    pub fn user(&self) -> usize {
        self.user
    }

    /// `φ_i(t)`; `t = ∞` gives `G_ii`.
    pub fn at_parameter(&self, t: f64) -> f64 {
        if t.is_infinite() {
            return self.gii;
        }
        let s: f64 = self.mu.iter().zip(&self.w).map(|(&m, &w)| w / (m + t)).sum();
        self.gii - s
    }

    /// `φ_i` at anchor variance `v1 ∈ [0, 1]`.
    pub fn at_anchor(&self, v1: f64) -> f64 {
        if v1 <= 0.0 {
            self.gii
        } else {
            self.at_parameter(1.0 / v1 - 1.0)
        }
    }

    /// `φ_i(v = 1)`: the SINR with no prior information.
    pub fn lower(&self) -> f64 {
        self.at_parameter(0.0)
    }

    /// `φ_i(v → 0) = σ⁻²‖h'_i‖²`.
    pub fn upper(&self) -> f64 {
        self.gii
    }

    /// Whether `φ_i` is constant along the constraint (user `i` sees no interference).
    pub fn is_flat(&self) -> bool {
        self.upper() - self.lower() <= 1e-12 * self.gii
    }

    /// Own variance `v_i` at parameter `t`.
    pub fn own_variance(&self, t: f64) -> f64 {
        if t.is_infinite() {
            0.0
        } else {
            1.0 / (1.0 + t / self.gamma_i)
        }
    }

    /// Smallest `t` with `φ_i(t) = rho`, bisected on `s = ln(1 + t)` until the
    /// bracket collapses. Returns `(t, |φ_i(t) − ρ|)`.
    fn solve_parameter(&self, rho: f64) -> Result<(f64, f64)> {
        let lo_val = self.lower();
        if rho <= lo_val {
            return Ok((0.0, lo_val - rho));
        }
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        while self.at_parameter(hi.exp_m1()) < rho {
            lo = hi;
            hi *= 2.0;
            if hi > 1024.0 {
                return Err(Error::Bisection(INVERSE_MAX_ITER));
            }
        }
        for _ in 0..INVERSE_MAX_ITER {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.at_parameter(mid.exp_m1()) < rho {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (tl, th) = (lo.exp_m1(), hi.exp_m1());
        let (rl, rh) = ((self.at_parameter(tl) - rho).abs(), (self.at_parameter(th) - rho).abs());
        Ok(if rl <= rh { (tl, rl) } else { (th, rh) })
    }

    /// Inverse of `φ_i` on `[φ_i(t=0), G_ii)`, returned as the parameter `t`.
    pub fn inverse_parameter(&self, rho: f64) -> Result<f64> {
        let (lo, hi) = (self.lower(), self.upper());
        if self.is_flat() {
            if (rho - hi).abs() <= INVERSE_TOL * (1.0 + rho) {
                return Ok(0.0);
            }
            return Err(Error::OutOfRange {
                what: "target SINR (flat transfer function)",
                value: rho,
                lo,
                hi,
            });
        }
        if !(rho >= lo - INVERSE_TOL * (1.0 + lo) && rho < hi) {
            return Err(Error::OutOfRange {
                what: "target SINR",
                value: rho,
                lo,
                hi,
            });
        }
        let (t, resid) = self.solve_parameter(rho.max(lo))?;
        if resid > INVERSE_TOL * (1.0 + rho) {
            return Err(Error::Bisection(INVERSE_MAX_ITER));
        }
        Ok(t)
    }

    /// Best-effort inverse used inside transfer-function evaluators, where
    /// a result is always wanted: clamps to the range ends.
    fn parameter_clamped(&self, rho: f64) -> f64 {
        if rho <= self.lower() {
            0.0
        } else if rho >= self.upper() {
            f64::INFINITY
        } else {
            self.solve_parameter(rho).map(|(t, _)| t).unwrap_or(f64::INFINITY)
        }
    }
}

/// Anchor variance `v_1` at which `φ_i` equals `rho` along the γ-constraint.
pub fn phi_inverse(system: &SystemModel, i: usize, rho: f64, g: &GammaVector) -> Result<f64> {
    let sp = ScalarizedPhi::new(system, i, g)?;
    let t = sp.inverse_parameter(rho)?;
    Ok(1.0 / (1.0 + t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransferKind {
    /// Maps an input variance in `[0, 1]` to an SINR.
    EstimatorPhi,
    /// Maps an SINR in `[0, ∞)` to an output variance.
    DecoderPsi,
}

type Evaluator = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A monotone scalar transfer function with its analysis breakpoints.
#[derive(Clone)]
pub struct TransferFunction {
    kind: TransferKind,
    domain: (f64, f64),
    breakpoints: Vec<f64>,
    eval: Evaluator,
}

impl fmt::Debug for TransferFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TransferFunction")
            .field("kind", &self.kind)
            .field("domain", &self.domain)
            .field("breakpoints", &self.breakpoints)
            .finish_non_exhaustive()
    }
}

impl TransferFunction {
    /// `domain` is the interval of interest for analysis and export; the
    /// evaluator itself must accept any non-negative argument.
    pub fn new(
        kind: TransferKind,
        domain: (f64, f64),
        breakpoints: Vec<f64>,
        eval: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let mut breakpoints = breakpoints;
        breakpoints.sort_by(f64::total_cmp);
        breakpoints.dedup();
        Self {
            kind,
            domain,
            breakpoints,
            eval: Arc::new(eval),
        }
    }

    pub fn constant(kind: TransferKind, value: f64, domain: (f64, f64)) -> Self {
        Self::new(kind, domain, vec![], move |_| value)
    }

    /// Decoder that returns perfect knowledge for any positive SINR.
    pub fn genie() -> Self {
        Self::new(TransferKind::DecoderPsi, (0.0, 1.0), vec![0.0], |rho| {
            if rho > 0.0 {
                0.0
            } else {
                1.0
            }
        })
    }

    /// Piecewise-linear interpolation of `(x, y)` samples, held constant
    /// outside the sampled range. Abscissae must be strictly increasing.
    pub fn from_table(kind: TransferKind, points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidArgument(
                "transfer table needs at least two points".into(),
            ));
        }
        if points.iter().any(|(x, y)| !(x.is_finite() && y.is_finite())) {
            return Err(Error::InvalidArgument("non-finite transfer table entry".into()));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidArgument("transfer table abscissae must increase".into()));
        }
        let domain = (points[0].0, points[points.len() - 1].0);
        let bps = points.iter().map(|p| p.0).collect();
        let eval = move |x: f64| {
            let k = points.partition_point(|p| p.0 <= x);
            if k == 0 {
                return points[0].1;
            }
            if k == points.len() {
                return points[k - 1].1;
            }
            let (x0, y0) = points[k - 1];
            let (x1, y1) = points[k];
            y0 + (y1 - y0) * (x - x0) / (x1 - x0)
        };
        Ok(Self::new(kind, domain, bps, eval))
    }

    pub fn kind(&self) -> TransferKind {
        self.kind
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    /// Points where the function may be non-smooth, ascending.
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    /// `n` log-spaced samples over the domain (linear when the domain
    /// reaches 0, with the origin included).
    pub fn tabulate(&self, n: usize) -> Vec<(f64, f64)> {
        let (a, b) = self.domain;
        if n == 0 {
            return vec![];
        }
        if n == 1 {
            return vec![(a, self.eval(a))];
        }
        let xs: Vec<f64> = if a > 0.0 {
            let (la, lb) = (a.ln(), b.ln());
            (0..n)
                .map(|k| (la + (lb - la) * k as f64 / (n - 1) as f64).exp())
                .collect()
        } else {
            // origin plus n-1 log-spaced points from b·1e-6 to b
            let lo = b * 1e-6;
            let (la, lb) = (lo.ln(), b.ln());
            std::iter::once(a)
                .chain((0..n - 1).map(|k| (la + (lb - la) * k as f64 / (n - 2).max(1) as f64).exp()))
                .collect()
        };
        xs.into_iter().map(|x| (x, self.eval(x))).collect()
    }

    /// CSV with a `x,y` header named after the kind.
    pub fn to_csv(&self, n: usize) -> String {
        let header = match self.kind {
            TransferKind::EstimatorPhi => "v,phi",
            TransferKind::DecoderPsi => "rho,psi",
        };
        let mut out = String::from(header);
        out.push('\n');
        for (x, y) in self.tabulate(n) {
            out.push_str(&format!("{x:e},{y:e}\n"));
        }
        out
    }
}

/// `φ_i` as a function of the anchor variance `v_1 ∈ [0, 1]`.
pub fn estimator_phi(system: &SystemModel, i: usize, g: &GammaVector) -> Result<TransferFunction> {
    let sp = ScalarizedPhi::new(system, i, g)?;
    Ok(TransferFunction::new(
        TransferKind::EstimatorPhi,
        (1e-6, 1.0),
        vec![],
        move |v1| sp.at_anchor(v1.clamp(0.0, 1.0)),
    ))
}

/// Decoder transfer function matched to the estimator:
/// `1` below `φ_i(1)`, `φ_i⁻¹` in between, `0` from `φ_i(0)` on.
pub fn matched_psi(system: &SystemModel, i: usize, g: &GammaVector) -> Result<TransferFunction> {
    let sp = ScalarizedPhi::new(system, i, g)?;
    let (lo, hi) = (sp.lower(), sp.upper());
    let flat = sp.is_flat();
    let eval = move |rho: f64| {
        if rho >= hi {
            0.0
        } else if flat || rho <= lo {
            1.0
        } else {
            sp.own_variance(sp.parameter_clamped(rho))
        }
    };
    let bps = if flat { vec![hi] } else { vec![lo, hi] };
    Ok(TransferFunction::new(
        TransferKind::DecoderPsi,
        (0.0, 2.0 * hi),
        bps,
        eval,
    ))
}

/// SINR gap used to pick the reference user of a backed-off decoder family:
/// the user whose `φ` saturates last along the constraint.
fn reference_user(phis: &[ScalarizedPhi], margin: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, sp) in phis.iter().enumerate() {
        if sp.is_flat() {
            continue;
        }
        let target = sp.upper() / (1.0 + margin);
        let t = if target <= sp.lower() {
            0.0
        } else {
            sp.parameter_clamped(target)
        };
        if best.is_none_or(|(_, bt)| t > bt) {
            best = Some((j, t));
        }
    }
    best.map(|(j, _)| j)
}

/// Matched decoder with a multiplicative SINR margin `ε > 0`.
///
/// For a user whose `φ` is flat this is `ψ(ρ(1+ε))`. Otherwise the margin is
/// applied through a reference user `r` shared by the whole family: at input
/// SINR `ρ` the decoder first recovers the constraint parameter
/// `t = φ_i⁻¹(ρ)`, then advances it to `h(t) = φ_r⁻¹((1+ε)φ_r(t))` and
/// returns `v_i(h(t))`, or `0` once `(1+ε)φ_r(t)` reaches `φ_r(0)`. Because
/// every user applies the same `h`, an iteration started on the constraint
/// stays on it. Below `φ_i(1)` the output ramps linearly from `1` at
/// `φ_i(1)/(1+ε)`.
pub fn backed_off_psi(system: &SystemModel, i: usize, g: &GammaVector, margin: f64) -> Result<TransferFunction> {
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "decoder margin {margin} must be positive"
        )));
    }
    let n = system.num_users();
    let phis: Vec<ScalarizedPhi> = (0..n)
        .map(|j| ScalarizedPhi::new(system, j, g))
        .collect::<Result<_>>()?;
    let me = phis[i].clone();
    let scale = 1.0 + margin;
    if me.is_flat() {
        let hi = me.upper();
        let eval = move |rho: f64| if rho * scale >= hi { 0.0 } else { 1.0 };
        return Ok(TransferFunction::new(
            TransferKind::DecoderPsi,
            (0.0, 2.0 * hi),
            vec![hi / scale],
            eval,
        ));
    }
    let r = reference_user(&phis, margin).expect("user i is not flat");
    let rp = phis[r].clone();
    let t_sat = rp.parameter_clamped(rp.upper() / scale);
    let advance = move |t: f64| -> f64 {
        let target = scale * rp.at_parameter(t);
        if target >= rp.upper() {
            f64::INFINITY
        } else {
            rp.parameter_clamped(target)
        }
    };
    let (lo, hi) = (me.lower(), me.upper());
    let ramp_start = lo / scale;
    let v_at_lo = me.own_variance(advance(0.0));
    let rho_sat = me.at_parameter(t_sat);
    let eval = move |rho: f64| {
        if rho >= hi {
            0.0
        } else if rho >= lo {
            me.own_variance(advance(me.parameter_clamped(rho)))
        } else if rho > ramp_start {
            1.0 + (v_at_lo - 1.0) * (rho - ramp_start) / (lo - ramp_start)
        } else {
            1.0
        }
    };
    let mut bps = vec![ramp_start, lo, hi];
    if rho_sat > lo && rho_sat < hi {
        bps.push(rho_sat);
    }
    Ok(TransferFunction::new(
        TransferKind::DecoderPsi,
        (0.0, 2.0 * hi),
        bps,
        eval,
    ))
}

/// Outcome of [`check_regularity`], one flag per condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    /// (i) `ψ(0) = 1`
    pub starts_at_one: bool,
    /// (ii) non-increasing on the grid
    pub monotone: bool,
    /// (iii) at most two jump discontinuities
    pub few_discontinuities: bool,
    /// (iv) `ρψ(ρ) = 0` at and beyond the end of the domain
    pub vanishing_tail: bool,
    pub discontinuities: Vec<f64>,
}

impl RegularityReport {
    pub fn passed(&self) -> bool {
        self.starts_at_one && self.monotone && self.few_discontinuities && self.vanishing_tail
    }
}

const JUMP_TOL: f64 = 1e-6;
const REFINE_STEPS: usize = 48;

/// Checks the four admissibility conditions of a decoder transfer function
/// on a uniform grid of `grid` intervals over its domain. Candidate jumps
/// are refined by bisection so steep continuous stretches are not miscounted.
pub fn check_regularity(psi: &TransferFunction, grid: usize) -> RegularityReport {
    let grid = grid.max(2);
    let (a, b) = psi.domain();
    let xs: Vec<f64> = (0..=grid).map(|k| a + (b - a) * k as f64 / grid as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| psi.eval(x)).collect();

    let starts_at_one = (psi.eval(0.0) - 1.0).abs() <= 1e-12;
    let monotone = ys.windows(2).all(|w| w[1] <= w[0] + 1e-12);

    let mut discontinuities = Vec::new();
    for k in 0..grid {
        if (ys[k] - ys[k + 1]).abs() <= JUMP_TOL {
            continue;
        }
        let (mut l, mut r) = (xs[k], xs[k + 1]);
        let (mut yl, mut yr) = (ys[k], ys[k + 1]);
        for _ in 0..REFINE_STEPS {
            let m = 0.5 * (l + r);
            let ym = psi.eval(m);
            if (yl - ym).abs() >= (ym - yr).abs() {
                r = m;
                yr = ym;
            } else {
                l = m;
                yl = ym;
            }
        }
        if (yl - yr).abs() > JUMP_TOL {
            discontinuities.push(0.5 * (l + r));
        }
    }
    let tail = [1.0, 2.0, 10.0, 1e3, 1e6];
    let vanishing_tail = tail.iter().all(|&s| {
        let x = b.max(1e-300) * s;
        (x * psi.eval(x)).abs() <= 1e-12
    });
    RegularityReport {
        starts_at_one,
        monotone,
        few_discontinuities: discontinuities.len() <= 2,
        vanishing_tail,
        discontinuities,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::ComplexMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar() -> SystemModel {
        SystemModel::with_unit_weights(ComplexMatrix::from_real_rows(&[&[1.0]]).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn anchor_examples() {
        assert_eq!(
            variance_from_anchor(1.0, &GammaVector::new(vec![1.0, 7.0]).unwrap()).unwrap(),
            vec![1.0, 1.0]
        );
        assert_eq!(
            variance_from_anchor(0.5, &GammaVector::ones(2)).unwrap(),
            vec![0.5, 0.5]
        );
        let v = variance_from_anchor(0.5, &GammaVector::new(vec![1.0, 2.0]).unwrap()).unwrap();
        assert!((v[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!(variance_from_anchor(0.0, &GammaVector::ones(2)).is_err());
        assert!(variance_from_anchor(1.1, &GammaVector::ones(2)).is_err());
    }

    #[test]
    fn gamma_vector_gauge() {
        assert!(GammaVector::new(vec![2.0, 1.0]).is_err());
        assert!(GammaVector::new(vec![1.0, -1.0]).is_err());
        let g = GammaVector::normalized(vec![4.0, 2.0, 8.0]).unwrap();
        assert_eq!(g.as_slice(), &[1.0, 0.5, 2.0]);
        let json = serde_json::to_string(&g).unwrap();
        assert_eq!(serde_json::from_str::<GammaVector>(&json).unwrap(), g);
        assert!(serde_json::from_str::<GammaVector>("[3.0, 1.0]").is_err());
    }

    #[test]
    fn phi_examples() {
        assert!((phi(&scalar(), &[1.0]).unwrap()[0] - 1.0).abs() < 1e-15);
        let s = fixtures::two_user();
        let at_zero = phi(&s, &[0.0, 0.0]).unwrap();
        let near_zero = phi(&s, &[1e-9, 1e-9]).unwrap();
        for i in 0..2 {
            assert!((at_zero[i] - s.matched_filter_snr(i)).abs() < 1e-12);
            assert!((near_zero[i] - s.matched_filter_snr(i)).abs() < 1e-6);
        }
        // explicit 2x2 inverse, real arithmetic
        let b = [[8.574_6, -5.574_8], [-5.574_8, 5.527_4]];
        let (h, s2) = ([[1.32, -1.31], [-1.43, 0.74]], 0.5);
        let mut p = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                p[i][j] = (0..2).map(|r| h[r][i] * h[r][j]).sum::<f64>() / s2 + if i == j { 1.0 } else { 0.0 };
                assert!((p[i][j] - b[i][j]).abs() < 1e-3);
            }
        }
        let det = p[0][0] * p[1][1] - p[0][1] * p[1][0];
        let expect = [det / p[1][1] - 1.0, det / p[0][0] - 1.0];
        let got = phi(&s, &[1.0, 1.0]).unwrap();
        for i in 0..2 {
            assert!((got[i] - expect[i]).abs() < 1e-12, "{got:?} vs {expect:?}");
            assert!(got[i] > 0.0);
        }
        assert!(phi(&s, &[-0.1, 1.0]).is_err());
    }

    #[test]
    fn stable_phi_matches_definition_on_random_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let nr = rng.random_range(1..7usize);
            let nu = rng.random_range(1..7usize);
            let s2 = rng.random_range(0.1..1.0);
            let s = fixtures::random_weighted_system(&mut rng, nr, nu, s2);
            let v: Vec<f64> = (0..nu).map(|_| rng.random_range(0.01..=1.0)).collect();
            let a = phi(&s, &v).unwrap();
            let b = phi_by_inverse(&s, &v).unwrap();
            for i in 0..nu {
                assert!((a[i] - b[i]).abs() <= 1e-8 * (1.0 + b[i]), "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn scalarized_phi_matches_phi_along_constraint() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let nu = rng.random_range(1..6usize);
            let nr = rng.random_range(1..6usize);
            let s = fixtures::random_system(&mut rng, nr, nu, 0.5);
            let mut gs: Vec<f64> = (0..nu).map(|_| 10f64.powf(rng.random_range(-3.0..3.0))).collect();
            gs[0] = 1.0;
            let g = GammaVector::new(gs).unwrap();
            for &v1 in &[1.0, 0.7, 0.2, 1e-3] {
                let direct = phi(&s, &variance_from_anchor(v1, &g).unwrap()).unwrap();
                for (i, d) in direct.iter().enumerate() {
                    let sp = ScalarizedPhi::new(&s, i, &g).unwrap();
                    assert!((sp.at_anchor(v1) - d).abs() <= 1e-9 * (1.0 + d));
                }
            }
        }
    }

    #[test]
    fn phi_is_componentwise_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let nu = rng.random_range(2..6usize);
            let nr = rng.random_range(1..6usize);
            let s = fixtures::random_system(&mut rng, nr, nu, 0.5);
            let v: Vec<f64> = (0..nu).map(|_| rng.random_range(0.05..0.95)).collect();
            let base = phi(&s, &v).unwrap();
            for j in 0..nu {
                let mut up = v.clone();
                up[j] += 0.04;
                let moved = phi(&s, &up).unwrap();
                for i in 0..nu {
                    assert!(moved[i] <= base[i] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn symmetric_exchangeable_users_share_one_phi() {
        // columns of a unitary-like design with equal norms and equal pairwise overlaps
        let a = 0.3;
        let h = ComplexMatrix::from_real_rows(&[&[1.0, a, a], &[a, 1.0, a], &[a, a, 1.0]]).unwrap();
        let s = SystemModel::with_unit_weights(h, 0.5).unwrap();
        let p = phi(&s, &[0.4, 0.4, 0.4]).unwrap();
        assert!((p[0] - p[1]).abs() < 1e-9 && (p[1] - p[2]).abs() < 1e-9);
    }

    #[test]
    fn inverse_round_trips() {
        let s = fixtures::three_user_overloaded();
        let g = GammaVector::new(vec![1.0, 2.0, 5.0]).unwrap();
        for i in 0..3 {
            let sp = ScalarizedPhi::new(&s, i, &g).unwrap();
            assert_eq!(phi_inverse(&s, i, sp.lower(), &g).unwrap(), 1.0);
            for k in 1..10 {
                let v1 = k as f64 / 10.0;
                let back = phi_inverse(&s, i, sp.at_anchor(v1), &g).unwrap();
                assert!((back - v1).abs() < 1e-8, "user {i}: {back} vs {v1}");
            }
            assert!(phi_inverse(&s, i, sp.upper(), &g).is_err());
            assert!(phi_inverse(&s, i, sp.lower() * 0.5, &g).is_err());
        }
    }

    #[test]
    fn flat_scalar_inverse() {
        let s = scalar();
        let g = GammaVector::ones(1);
        assert_eq!(phi_inverse(&s, 0, 1.0, &g).unwrap(), 1.0);
        assert!(matches!(phi_inverse(&s, 0, 3.0, &g), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn matched_psi_shape() {
        let s = fixtures::two_user();
        let g = GammaVector::ones(2);
        for i in 0..2 {
            let psi = matched_psi(&s, i, &g).unwrap();
            let sp = ScalarizedPhi::new(&s, i, &g).unwrap();
            assert_eq!(psi.eval(0.0), 1.0);
            assert_eq!(psi.eval(sp.upper()), 0.0);
            assert_eq!(psi.eval(10.0 * sp.upper()), 0.0);
            let mid = 0.5 * (sp.lower() + sp.upper());
            let v1 = phi_inverse(&s, i, mid, &g).unwrap();
            assert!((psi.eval(mid) - v1).abs() < 1e-12);
            assert!(check_regularity(&psi, 1000).passed());
        }
    }

    #[test]
    fn regularity_failures() {
        let one = TransferFunction::constant(TransferKind::DecoderPsi, 1.0, (0.0, 5.0));
        let r = check_regularity(&one, 1000);
        assert!(r.starts_at_one && r.monotone && !r.vanishing_tail && !r.passed());

        let inc = TransferFunction::new(TransferKind::DecoderPsi, (0.0, 5.0), vec![], |x| (1.0 + x).min(2.0));
        assert!(!check_regularity(&inc, 1000).monotone);

        let stairs = TransferFunction::new(TransferKind::DecoderPsi, (0.0, 4.0), vec![], |x| {
            if x >= 3.5 {
                0.0
            } else {
                1.0 - (x.floor() / 4.0)
            }
        });
        let r = check_regularity(&stairs, 1000);
        assert_eq!(r.discontinuities.len(), 4);
        assert!(!r.few_discontinuities);
    }

    #[test]
    fn backed_off_psi_properties() {
        let s = fixtures::two_user();
        for g in [GammaVector::ones(2), GammaVector::new(vec![1.0, 1e3]).unwrap()] {
            for i in 0..2 {
                let m = matched_psi(&s, i, &g).unwrap();
                let b = backed_off_psi(&s, i, &g, 0.05).unwrap();
                assert!(check_regularity(&b, 1000).passed());
                let (_, hi) = m.domain();
                for k in 0..=400 {
                    let rho = hi * k as f64 / 400.0;
                    assert!(b.eval(rho) <= m.eval(rho) + 1e-12);
                }
                // a vanishing margin tends to the matched decoder
                let tiny = backed_off_psi(&s, i, &g, 1e-9).unwrap();
                let sp = ScalarizedPhi::new(&s, i, &g).unwrap();
                let rho = 0.5 * (sp.lower() + sp.upper());
                assert!((tiny.eval(rho) - m.eval(rho)).abs() < 1e-6);
            }
        }
        assert!(backed_off_psi(&s, 0, &GammaVector::ones(2), 0.0).is_err());
    }

    #[test]
    fn backed_off_scalar_shifts_breakpoint() {
        let s = scalar();
        let b = backed_off_psi(&s, 0, &GammaVector::ones(1), 0.05).unwrap();
        assert_eq!(b.eval(0.95), 1.0);
        assert_eq!(b.eval(1.0 / 1.05 + 1e-9), 0.0);
        assert!((b.breakpoints()[0] - 1.0 / 1.05).abs() < 1e-15);
    }

    #[test]
    fn tables_and_csv() {
        let t =
            TransferFunction::from_table(TransferKind::DecoderPsi, vec![(0.0, 1.0), (1.0, 0.5), (2.0, 0.0)]).unwrap();
        assert_eq!(t.eval(0.5), 0.75);
        assert_eq!(t.eval(5.0), 0.0);
        assert!(TransferFunction::from_table(TransferKind::DecoderPsi, vec![(1.0, 1.0), (0.0, 0.0)]).is_err());
        let psi = matched_psi(&fixtures::two_user(), 0, &GammaVector::ones(2)).unwrap();
        assert_eq!(psi.tabulate(TABULATION_POINTS).len(), TABULATION_POINTS);
        let csv = psi.to_csv(8);
        assert!(csv.starts_with("rho,psi\n"));
        assert_eq!(csv.lines().count(), 9);
        let phi_tf = estimator_phi(&fixtures::two_user(), 0, &GammaVector::ones(2)).unwrap();
        let tab = phi_tf.tabulate(16);
        assert!(tab.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12));
    }
}
