//! Elementary signal estimator: per-use LMMSE detection, extrinsic Gaussian
//! combining and a Monte Carlo check that the estimator output behaves like
//! an AWGN observation with SNR `φ_i(v)`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixtures::complex_normal;
use crate::linalg::{self, CMat, CVec};
use crate::model::{HermitianMatrix, SystemModel};
use crate::rng;

/// Smallest prior variance used when inverting `V`.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Trials per deterministic accumulation block.
const TRIAL_BLOCK: usize = 1024;

/// Unit-average-power signalling constellation.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    points: Vec<Complex64>,
}

impl Constellation {
    pub fn new(points: Vec<Complex64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("empty constellation".into()));
        }
        let power = points.iter().map(|s| s.norm_sqr()).sum::<f64>() / points.len() as f64;
        if (power - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("average power {power} is not 1")));
        }
        Ok(Self { points })
    }

    pub fn bpsk() -> Self {
        Self {
            points: vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)],
        }
    }

    pub fn qpsk() -> Self {
        let a = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            points: vec![
                Complex64::new(a, a),
                Complex64::new(-a, a),
                Complex64::new(-a, -a),
                Complex64::new(a, -a),
            ],
        }
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Probabilities over constellation points.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodVector {
    probs: Vec<f64>,
}

impl LikelihoodVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::InvalidArgument("negative or non-finite probability".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("probabilities sum to {total}")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Complex Gaussian message `CN(mean, variance)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBelief {
    pub mean: Complex64,
    pub variance: f64,
}

impl GaussianBelief {
    pub fn new(mean: Complex64, variance: f64) -> Result<Self> {
        if !(variance >= 0.0 && variance.is_finite()) || !(mean.re.is_finite() && mean.im.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid belief ({mean}, {variance})")));
        }
        Ok(Self { mean, variance })
    }
}

/// Mean and variance of the symbol under the decoder's likelihoods.
pub fn prior_moments(lv: &LikelihoodVector, c: &Constellation) -> Result<GaussianBelief> {
    if lv.probs.len() != c.len() {
        return Err(Error::Dimension(format!(
            "{} likelihoods for {} constellation points",
            lv.probs.len(),
            c.len()
        )));
    }
    let mean: Complex64 = lv.probs.iter().zip(&c.points).map(|(&p, &s)| s * p).sum();
    let variance: f64 = lv
        .probs
        .iter()
        .zip(&c.points)
        .map(|(&p, &s)| p * (s - mean).norm_sqr())
        .sum();
    GaussianBelief::new(mean, variance.max(0.0))
}

/// Output of the LMMSE estimator.
#[derive(Debug, Clone)]
pub struct LmmseOutput {
    pub xhat: CVec,
    pub covariance: HermitianMatrix,
}

fn check_estimator_inputs(system: &SystemModel, y: &CVec, xbar: &CVec, v: &[f64]) -> Result<()> {
    let (nr, nu) = (system.num_rx(), system.num_users());
    if y.len() != nr || xbar.len() != nu || v.len() != nu {
        return Err(Error::Dimension(format!(
            "y: {} (want {nr}), xbar: {} and v: {} (want {nu})",
            y.len(),
            xbar.len(),
            v.len()
        )));
    }
    if let Some(i) = v.iter().position(|&x| !(x >= 0.0 && x.is_finite())) {
        return Err(Error::InvalidArgument(format!("prior variance {} for user {i}", v[i])));
    }
    Ok(())
}

/// Information form: `V̂ = (σ⁻²H'ᴴH' + V⁻¹)⁻¹`, `x̂ = V̂(V⁻¹x̄ + σ⁻²H'ᴴy)`.
pub fn lmmse_information_form(system: &SystemModel, y: &CVec, xbar: &CVec, v: &[f64]) -> Result<LmmseOutput> {
    check_estimator_inputs(system, y, xbar, v)?;
    let inv_v: Vec<f64> = v.iter().map(|&x| 1.0 / x.max(VARIANCE_FLOOR)).collect();
    let mut precision = system.snr_gram().clone();
    for (i, &p) in inv_v.iter().enumerate() {
        precision[(i, i)] += p;
    }
    let cov = linalg::inverse_hpd(&precision)?;
    let hp = system.effective_channel();
    let s2 = system.noise_variance();
    let rhs = CVec::from_fn(xbar.len(), |i, _| xbar[i] * inv_v[i]) + hp.adjoint() * y / Complex64::new(s2, 0.0);
    let xhat = &cov * rhs;
    Ok(LmmseOutput {
        xhat,
        covariance: HermitianMatrix::new(cov)?,
    })
}

/// Innovation form via the matrix inversion lemma:
/// `x̂ = x̄ + VH'ᴴ(σ²I + H'VH'ᴴ)⁻¹(y − H'x̄)`, `V̂ = V − VH'ᴴ(σ²I + H'VH'ᴴ)⁻¹H'V`.
pub fn lmmse_innovation_form(system: &SystemModel, y: &CVec, xbar: &CVec, v: &[f64]) -> Result<LmmseOutput> {
    check_estimator_inputs(system, y, xbar, v)?;
    let hp = system.effective_channel();
    let nr = system.num_rx();
    let vd: Vec<f64> = v.iter().map(|&x| x.max(VARIANCE_FLOOR)).collect();
    let vmat = CMat::from_diagonal(&CVec::from_iterator(
        vd.len(),
        vd.iter().map(|&x| Complex64::new(x, 0.0)),
    ));
    let hv = hp * &vmat;
    let mut s = &hv * hp.adjoint();
    for r in 0..nr {
        s[(r, r)] += system.noise_variance();
    }
    let s = linalg::hermitize(&s);
    let sinv = linalg::inverse_hpd(&s)?;
    let gain = hv.adjoint() * &sinv;
    let xhat = xbar + &gain * (y - hp * xbar);
    let cov = linalg::hermitize(&(&vmat - &gain * &hv));
    Ok(LmmseOutput {
        xhat,
        covariance: HermitianMatrix::new(cov)?,
    })
}

/// LMMSE estimate. In debug builds both algebraic forms are evaluated and
/// required to agree.
pub fn lmmse_estimate(system: &SystemModel, y: &CVec, xbar: &CVec, v: &[f64]) -> Result<LmmseOutput> {
    let out = lmmse_information_form(system, y, xbar, v)?;
    #[cfg(debug_assertions)]
    {
        let alt = lmmse_innovation_form(system, y, xbar, v)?;
        let scale = 1.0 + out.xhat.norm();
        debug_assert!(
            (&out.xhat - &alt.xhat).norm() <= 1e-9 * scale,
            "estimator forms disagree: {} vs {}",
            out.xhat,
            alt.xhat
        );
    }
    Ok(out)
}

/// Gaussian division: strip the prior out of the posterior.
/// `1/u = 1/v̂ − 1/v`, `b/u = x̂/v̂ − x̄/v`.
pub fn extrinsic_combine(posterior: GaussianBelief, prior: GaussianBelief) -> Result<GaussianBelief> {
    if !(posterior.variance < prior.variance) || posterior.variance <= 0.0 {
        return Err(Error::NonInformativePosterior {
            posterior: posterior.variance,
            prior: prior.variance,
        });
    }
    let precision = 1.0 / posterior.variance - 1.0 / prior.variance;
    let u = 1.0 / precision;
    let mean = (posterior.mean / posterior.variance - prior.mean / prior.variance) * u;
    GaussianBelief::new(mean, u)
}

/// Gaussian product, the inverse of [`extrinsic_combine`].
pub fn gaussian_product(a: GaussianBelief, b: GaussianBelief) -> Result<GaussianBelief> {
    let precision = 1.0 / a.variance + 1.0 / b.variance;
    let var = 1.0 / precision;
    GaussianBelief::new((a.mean / a.variance + b.mean / b.variance) * var, var)
}

/// Empirical statistics of the extrinsic estimator output per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AwgnValidation {
    pub trials: usize,
    pub seed: u64,
    /// `1 / mean |b_i − x_i|²`
    pub empirical_snr: Vec<f64>,
    /// `|E[(b_i − x_i) x_i*]| / sqrt(E|b_i − x_i|² E|x_i|²)`
    pub error_signal_correlation: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Moments {
    err2: f64,
    sig2: f64,
    cross: Complex64,
}

impl Moments {
    const ZERO: Moments = Moments {
        err2: 0.0,
        sig2: 0.0,
        cross: Complex64 { re: 0.0, im: 0.0 },
    };

    fn add(&mut self, o: &Moments) {
        self.err2 += o.err2;
        self.sig2 += o.sig2;
        self.cross += o.cross;
    }
}

/// Simulate `y = H'x + n` with Gaussian symbols and Gaussian priors of
/// variance `v_i`, run the estimator and extrinsic combining, and measure the
/// extrinsic SNR and the error/signal correlation per user.
///
/// Priors: `x̄ = (1−v)x + sqrt(v(1−v))·w` with `w ~ CN(0,1)`, so that `x̄`
/// is the MMSE estimate of `x` with error variance exactly `v`.
pub fn validate_awgn_model(system: &SystemModel, v: &[f64], trials: usize, seed: u64) -> Result<AwgnValidation> {
    let nu = system.num_users();
    let nr = system.num_rx();
    if trials == 0 {
        return Err(Error::InvalidArgument("zero trials".into()));
    }
    if v.len() != nu {
        return Err(Error::Dimension(format!("{} variances for {nu} users", v.len())));
    }
    if let Some(i) = v.iter().position(|&x| !(x > 0.0 && x <= 1.0)) {
        return Err(Error::OutOfRange {
            what: "prior variance",
            value: v[i],
            lo: 0.0,
            hi: 1.0,
        });
    }

    // Estimator covariance does not depend on the data.
    let mut precision = system.snr_gram().clone();
    for (i, &x) in v.iter().enumerate() {
        precision[(i, i)] += 1.0 / x.max(VARIANCE_FLOOR);
    }
    let cov = linalg::inverse_hpd(&precision)?;
    let post_var: Vec<f64> = (0..nu).map(|i| cov[(i, i)].re).collect();
    let ext_var: Vec<f64> = (0..nu)
        .map(|i| {
            let prior = GaussianBelief {
                mean: Complex64::new(0.0, 0.0),
                variance: v[i],
            };
            let post = GaussianBelief {
                mean: Complex64::new(0.0, 0.0),
                variance: post_var[i],
            };
            extrinsic_combine(post, prior).map(|b| b.variance)
        })
        .collect::<Result<_>>()?;
    let hp = system.effective_channel();
    let s2 = system.noise_variance();
    let noise_sd = s2.sqrt();

    let trial = |t: usize| -> Vec<Moments> {
        let mut rng = rng::substream(seed, t as u64);
        let x = CVec::from_fn(nu, |_, _| complex_normal(&mut rng));
        let xbar = CVec::from_fn(nu, |i, _| {
            let w = complex_normal(&mut rng);
            x[i] * (1.0 - v[i]) + w * (v[i] * (1.0 - v[i])).max(0.0).sqrt()
        });
        let n = CVec::from_fn(nr, |_, _| complex_normal(&mut rng) * noise_sd);
        let y = hp * &x + n;
        let rhs = CVec::from_fn(nu, |i, _| xbar[i] / v[i]) + hp.adjoint() * &y / Complex64::new(s2, 0.0);
        let xhat = &cov * rhs;
        (0..nu)
            .map(|i| {
                let b = (xhat[i] / post_var[i] - xbar[i] / v[i]) * ext_var[i];
                let e = b - x[i];
                Moments {
                    err2: e.norm_sqr(),
                    sig2: x[i].norm_sqr(),
                    cross: e * x[i].conj(),
                }
            })
            .collect()
    };

    let blocks: Vec<Vec<Moments>> = (0..trials.div_ceil(TRIAL_BLOCK))
        .into_par_iter()
        .map(|blk| {
            let mut acc = vec![Moments::ZERO; nu];
            for t in (blk * TRIAL_BLOCK)..((blk + 1) * TRIAL_BLOCK).min(trials) {
                for (a, m) in acc.iter_mut().zip(trial(t)) {
                    a.add(&m);
                }
            }
            acc
        })
        .collect();
    // fixed-order reduction
    let mut total = vec![Moments::ZERO; nu];
    for blk in &blocks {
        for (a, m) in total.iter_mut().zip(blk) {
            a.add(m);
        }
    }
    let nt = trials as f64;
    Ok(AwgnValidation {
        trials,
        seed,
        empirical_snr: total.iter().map(|m| nt / m.err2).collect(),
        error_signal_correlation: total
            .iter()
            .map(|m| m.cross.norm() / (m.err2 * m.sig2).sqrt())
            .collect(),
    })
}
