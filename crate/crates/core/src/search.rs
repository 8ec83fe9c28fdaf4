//! Coordinate search for a γ whose closed-form rates hit a target tuple.
//!
//! Each sweep visits the users in order and bisects `ln γ_i` until
//! `R_i(γ) = target_i` with the other entries held fixed; `R_i` increases in
//! `γ_i`, so bisection is certified. A step that worsens the L1 error is
//! pulled halfway back toward the previous value until it does not.

use serde::{Deserialize, Serialize};

use crate::capacity::{region_contains, subset_rate_bound, sum_capacity, RatePoint, Violation};
use crate::error::{Error, Result};
use crate::model::SystemModel;
use crate::rates::rates_closed_form;
use crate::transfer::GammaVector;

/// Halvings allowed when retreating from a worsening step.
const MAX_RETREATS: usize = 60;
/// Slack for the membership gate and the sum-capacity comparison.
const REGION_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    /// L1 rate tolerance in nats.
    pub epsilon: f64,
    pub max_outer_iters: usize,
    /// Bracket width, in `ln γ`, at which an inner bisection stops.
    pub inner_bisection_tol: f64,
    pub gamma_bounds: (f64, f64),
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            max_outer_iters: 100,
            inner_bisection_tol: 1e-12,
            gamma_bounds: (1e-8, 1e8),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.gamma_bounds;
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon {} must be positive",
                self.epsilon
            )));
        }
        if !(self.inner_bisection_tol > 0.0) {
            return Err(Error::InvalidArgument(
                "inner bisection tolerance must be positive".into(),
            ));
        }
        if !(lo > 0.0 && lo < 1.0 && 1.0 < hi && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gamma bounds ({lo}, {hi}) must bracket 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchStatus {
    /// The target itself was hit within epsilon.
    Converged,
    /// The target was below the sum capacity; its projection onto the
    /// dominant face was hit within epsilon.
    ConvergedProjected,
    /// Outer iterations exhausted; the best γ found is reported.
    NotConverged,
    /// The target lies outside the capacity region.
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub l1_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub status: SearchStatus,
    pub gamma: Option<GammaVector>,
    pub achieved: Option<RatePoint>,
    /// The point actually searched for (the projection for interior targets).
    pub matched_target: RatePoint,
    pub l1_error: f64,
    pub iterations: usize,
    pub trace: Vec<TraceEntry>,
    pub violations: Vec<Violation>,
}

impl SearchResult {
    pub fn succeeded(&self) -> bool {
        matches!(self.status, SearchStatus::Converged | SearchStatus::ConvergedProjected)
    }
}

/// Point on the dominant face for an in-region target with sum below
/// capacity: proportional scaling when that stays in the region, otherwise
/// greedy raising of each user against its tightest constraint.
pub fn project_to_face(system: &SystemModel, target: &RatePoint) -> Result<RatePoint> {
    let c = sum_capacity(system);
    if target.sum > 0.0 {
        let scaled = target.scaled(c / target.sum);
        if region_contains(system, &scaled, REGION_SLACK)?.contained {
            return Ok(scaled);
        }
    }
    let n = system.num_users();
    let mut r = target.rates.clone();
    for i in 0..n {
        let mut room = f64::INFINITY;
        for mask in 1u32..(1u32 << n) {
            if mask & (1 << i) == 0 {
                continue;
            }
            let subset: Vec<usize> = (0..n).filter(|&k| mask & (1 << k) != 0).collect();
            let used: f64 = subset.iter().map(|&k| r[k]).sum();
            room = room.min(subset_rate_bound(system, &subset)? - used);
        }
        r[i] += room.max(0.0);
    }
    Ok(RatePoint::from_raw(r))
}

struct Searcher<'a> {
    system: &'a SystemModel,
    target: &'a RatePoint,
    cfg: &'a SearchConfig,
}

impl Searcher<'_> {
    fn rates(&self, gammas: &[f64]) -> Result<RatePoint> {
        rates_closed_form(self.system, &GammaVector::normalized(gammas.to_vec())?)
    }

    fn l1(&self, gammas: &[f64]) -> Result<f64> {
        Ok(self.rates(gammas)?.l1_distance(self.target))
    }

    /// `γ_i` solving `R_i = target_i` with the others fixed, clamped to the bounds.
    fn solve_coordinate(&self, gammas: &[f64], i: usize) -> Result<f64> {
        let (lo_b, hi_b) = self.cfg.gamma_bounds;
        let goal = self.target.rates[i];
        let mut g = gammas.to_vec();
        let mut rate_at = |x: f64| -> Result<f64> {
            g[i] = x.exp();
            Ok(self.rates(&g)?.rates[i])
        };
        let (mut lo, mut hi) = (lo_b.ln(), hi_b.ln());
        if rate_at(lo)? >= goal {
            return Ok(lo_b);
        }
        if rate_at(hi)? <= goal {
            return Ok(hi_b);
        }
        while hi - lo > self.cfg.inner_bisection_tol {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if rate_at(mid)? < goal {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok((0.5 * (lo + hi)).exp())
    }
}

/// Find γ with `‖R(γ) − target‖₁ ≤ ε`.
pub fn search_gamma(system: &SystemModel, target: &RatePoint, cfg: &SearchConfig) -> Result<SearchResult> {
    cfg.validate()?;
    let n = system.num_users();
    if target.len() != n {
        return Err(Error::Dimension(format!("{} target rates for {n} users", target.len())));
    }
    let membership = region_contains(system, target, REGION_SLACK)?;
    if !membership.contained {
        return Ok(SearchResult {
            status: SearchStatus::Infeasible,
            gamma: None,
            achieved: None,
            matched_target: target.clone(),
            l1_error: f64::INFINITY,
            iterations: 0,
            trace: vec![],
            violations: membership.violations,
        });
    }
    let c = sum_capacity(system);
    let projected = target.sum < c - REGION_SLACK * (1.0 + c);
    let goal = if projected {
        project_to_face(system, target)?
    } else {
        target.clone()
    };
    let searcher = Searcher {
        system,
        target: &goal,
        cfg,
    };

    let mut gammas = vec![1.0; n];
    let mut err = searcher.l1(&gammas)?;
    let mut trace = vec![TraceEntry {
        iteration: 0,
        l1_error: err,
    }];
    let mut iterations = 0;
    while err > cfg.epsilon && iterations < cfg.max_outer_iters {
        iterations += 1;
        for i in 0..n {
            let current = gammas[i];
            let mut proposal = searcher.solve_coordinate(&gammas, i)?;
            let mut accepted = false;
            for _ in 0..MAX_RETREATS {
                gammas[i] = proposal;
                let e = searcher.l1(&gammas)?;
                if e <= err {
                    err = e;
                    accepted = true;
                    break;
                }
                // geometric midpoint: the halfway point in ln γ
                proposal = (current * proposal).sqrt();
            }
            if !accepted {
                gammas[i] = current;
            }
        }
        let g0 = gammas[0];
        for g in &mut gammas {
            *g /= g0;
        }
        err = searcher.l1(&gammas)?;
        trace.push(TraceEntry {
            iteration: iterations,
            l1_error: err,
        });
    }
    let gamma = GammaVector::normalized(gammas)?;
    let achieved = rates_closed_form(system, &gamma)?;
    let status = match (err <= cfg.epsilon, projected) {
        (true, false) => SearchStatus::Converged,
        (true, true) => SearchStatus::ConvergedProjected,
        (false, _) => SearchStatus::NotConverged,
    };
    Ok(SearchResult {
        status,
        gamma: Some(gamma),
        achieved: Some(achieved),
        matched_target: goal,
        l1_error: err,
        iterations,
        trace,
        violations: vec![],
    })
}
