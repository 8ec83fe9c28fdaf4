//! Fixed-point iteration between the estimator and the decoders:
//! `ρ(τ) = φ(v(τ−1))`, `v(τ) = ψ(ρ(τ))`, started from `v(0) = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SystemModel;
use crate::transfer::{backed_off_psi, matched_psi, phi, GammaVector, TransferFunction};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Per-user decoder transfer functions.
#[derive(Debug, Clone)]
pub enum DecoderFamily {
    /// Perfect decoding at any positive SINR.
    Genie,
    /// Matched to the estimator, backed off by a multiplicative SINR margin
    /// (`0` gives the exactly matched decoder).
    MatchedWithMargin { margin: f64 },
    /// One user-supplied transfer function per user.
    CustomTable(Vec<TransferFunction>),
}

impl DecoderFamily {
    pub fn build(&self, system: &SystemModel, g: &GammaVector) -> Result<Vec<TransferFunction>> {
        let n = system.num_users();
        match self {
            DecoderFamily::Genie => Ok(vec![TransferFunction::genie(); n]),
            DecoderFamily::MatchedWithMargin { margin } => {
                if !(*margin >= 0.0 && margin.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "decoder margin {margin} must be non-negative"
                    )));
                }
                (0..n)
                    .map(|i| {
                        if *margin == 0.0 {
                            matched_psi(system, i, g)
                        } else {
                            backed_off_psi(system, i, g, *margin)
                        }
                    })
                    .collect()
            }
            DecoderFamily::CustomTable(t) => {
                if t.len() != n {
                    return Err(Error::Dimension(format!("{} decoder tables for {n} users", t.len())));
                }
                Ok(t.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackStep {
    pub iteration: usize,
    pub v: Vec<f64>,
    /// `None` for the initial point.
    pub rho: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VarianceTrack {
    pub steps: Vec<TrackStep>,
}

impl VarianceTrack {
    pub fn last(&self) -> &TrackStep {
        self.steps.last().expect("a track always holds its initial point")
    }

    /// Whether every user's variance is non-increasing from step to step.
    pub fn is_monotone(&self) -> bool {
        self.steps
            .windows(2)
            .all(|w| w[1].v.iter().zip(&w[0].v).all(|(b, a)| *b <= *a + 1e-15))
    }

    /// Largest `|v_i⁻¹ − 1 − (v_1⁻¹ − 1)/γ_i|` over the track. Users already
    /// at zero variance are skipped; zero in only one of `v_1`, `v_i` counts
    /// as an infinite residual.
    pub fn manifold_residual(&self, g: &GammaVector) -> f64 {
        let mut worst: f64 = 0.0;
        for s in &self.steps {
            let v1 = s.v[0];
            for (i, &vi) in s.v.iter().enumerate().skip(1) {
                let r = match (v1 == 0.0, vi == 0.0) {
                    (true, true) => 0.0,
                    (false, false) => (1.0 / vi - 1.0 - (1.0 / v1 - 1.0) / g.get(i)).abs(),
                    _ => f64::INFINITY,
                };
                worst = worst.max(r);
            }
        }
        worst
    }

    /// First iteration at which each user's variance is at or below `level`.
    pub fn crossing_times(&self, level: f64) -> Vec<Option<usize>> {
        let n = self.steps.first().map_or(0, |s| s.v.len());
        (0..n)
            .map(|i| self.steps.iter().find(|s| s.v[i] <= level).map(|s| s.iteration))
            .collect()
    }

    /// Columns `iteration, v_1…v_N, rho_1…rho_N`; `rho` is empty on step 0.
    pub fn to_csv(&self) -> String {
        let n = self.steps.first().map_or(0, |s| s.v.len());
        let mut out = String::from("iteration");
        for i in 1..=n {
            out.push_str(&format!(",v{i}"));
        }
        for i in 1..=n {
            out.push_str(&format!(",rho{i}"));
        }
        out.push('\n');
        for s in &self.steps {
            out.push_str(&s.iteration.to_string());
            for v in &s.v {
                out.push_str(&format!(",{v:e}"));
            }
            for i in 0..n {
                out.push(',');
                if let Some(r) = &s.rho {
                    out.push_str(&format!("{:e}", r[i]));
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Decodable,
    NotDecodable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackOutcome {
    pub track: VarianceTrack,
    pub verdict: Verdict,
    /// Whether the step size fell below `tol` before `max_iter`.
    pub converged: bool,
    /// `‖v* − ψ(φ(v*))‖∞` at the final point.
    pub fixed_point_residual: f64,
}

fn decoder_step(system: &SystemModel, decoders: &[TransferFunction], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let rho = phi(system, v)?;
    let next = decoders
        .iter()
        .zip(&rho)
        .map(|(d, &r)| d.eval(r).clamp(0.0, 1.0))
        .collect();
    Ok((rho, next))
}

/// Runs the parallel-schedule iteration until `‖v(τ) − v(τ−1)‖∞ < tol` or
/// `max_iter` steps. Decodable iff every final variance is below `tol`.
pub fn simulate_track(
    system: &SystemModel,
    g: &GammaVector,
    dec: &DecoderFamily,
    max_iter: usize,
    tol: f64,
) -> Result<TrackOutcome> {
    if max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be positive")));
    }
    g.check_users(system)?;
    let decoders = dec.build(system, g)?;
    let n = system.num_users();
    let mut v = vec![1.0; n];
    let mut track = VarianceTrack {
        steps: vec![TrackStep {
            iteration: 0,
            v: v.clone(),
            rho: None,
        }],
    };
    let mut converged = false;
    for tau in 1..=max_iter {
        let (rho, next) = decoder_step(system, &decoders, &v)?;
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        track.steps.push(TrackStep {
            iteration: tau,
            v: v.clone(),
            rho: Some(rho),
        });
        if delta < tol {
            converged = true;
            break;
        }
    }
    let (_, again) = decoder_step(system, &decoders, &v)?;
    let fixed_point_residual = again.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let verdict = if v.iter().all(|&x| x < tol) {
        Verdict::Decodable
    } else {
        Verdict::NotDecodable
    };
    Ok(TrackOutcome {
        track,
        verdict,
        converged,
        fixed_point_residual,
    })
}
