//! The acceptance criteria as runnable checks, shared by the `acceptance`
//! test target and the `noma selftest` command.
//!
//! Each criterion has one primary tolerance that can be replaced at run time
//! through `NOMA_TOL_OVERRIDE`, e.g. `NOMA_TOL_OVERRIDE="C1=1e-30,C7=0.5"`.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::capacity::{extreme_point, region_contains, sum_capacity, UserPermutation};
use crate::error::{Error, Result};
use crate::ese::validate_awgn_model;
use crate::fixtures;
use crate::rates::{
    rate_from_decoder_transfer, rate_quadrature, rates_closed_form, sic_extreme_limit, symmetric_rate,
    two_user_closed_form, SecondUserForm,
};
use crate::rng::substream;
use crate::search::{search_gamma, SearchConfig, SearchStatus};
use crate::track::{simulate_track, DecoderFamily, Verdict, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::transfer::{phi, GammaVector};

pub const OVERRIDE_ENV: &str = "NOMA_TOL_OVERRIDE";

/// Base seed of every random instance drawn by the criteria.
const SEED: u64 = 0x5eed_2019;

type Check = fn(f64) -> Result<(bool, String)>;

#[derive(Clone, Copy)]
pub struct Criterion {
    pub id: &'static str,
    pub title: &'static str,
    /// What the primary tolerance bounds.
    pub tolerance_meaning: &'static str,
    pub tolerance: f64,
    pub time_limit: Option<Duration>,
    check: Check,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub id: String,
    pub title: String,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
    pub elapsed_secs: f64,
}

impl CriterionReport {
    /// `C1 PASS  title: detail [0.12 s]`
    pub fn line(&self) -> String {
        format!(
            "{:<3} {}  {}: {} [{:.2} s]",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.title,
            self.detail,
            self.elapsed_secs
        )
    }
}

pub fn criteria() -> Vec<Criterion> {
    vec![
        Criterion {
            id: "C1",
            title: "sum-capacity identity",
            tolerance_meaning: "relative error of the rate sum",
            tolerance: 1e-9,
            time_limit: Some(Duration::from_secs(5)),
            check: c1_sum_capacity,
        },
        Criterion {
            id: "C2",
            title: "oracle triangle",
            tolerance_meaning: "closed form vs quadrature, nats",
            tolerance: 1e-8,
            time_limit: Some(Duration::from_secs(30)),
            check: c2_oracle_triangle,
        },
        Criterion {
            id: "C3",
            title: "extreme-point convergence",
            tolerance_meaning: "L-infinity distance at ladder 1e6, nats",
            tolerance: 1e-3,
            time_limit: None,
            check: c3_extreme_points,
        },
        Criterion {
            id: "C4",
            title: "two-user region coverage",
            tolerance_meaning: "membership slack, nats",
            tolerance: 1e-8,
            time_limit: None,
            check: c4_region_coverage,
        },
        Criterion {
            id: "C5",
            title: "two-user closed form",
            tolerance_meaning: "closed form vs eigen rates, nats",
            tolerance: 1e-9,
            time_limit: None,
            check: c5_two_user_form,
        },
        Criterion {
            id: "C6",
            title: "rate monotonicity in gamma",
            tolerance_meaning: "relative finite-difference step",
            tolerance: 1e-4,
            time_limit: None,
            check: c6_monotonicity,
        },
        Criterion {
            id: "C7",
            title: "estimator AWGN model",
            tolerance_meaning: "relative SNR error",
            tolerance: 0.03,
            time_limit: Some(Duration::from_secs(60)),
            check: c7_awgn_model,
        },
        Criterion {
            id: "C8",
            title: "fixed-point dynamics",
            tolerance_meaning: "gamma-manifold residual",
            tolerance: 1e-8,
            time_limit: None,
            check: c8_fixed_point,
        },
        Criterion {
            id: "C9",
            title: "gamma search round trip",
            tolerance_meaning: "L1 rate error, nats",
            tolerance: 1e-4,
            time_limit: None,
            check: c9_search,
        },
        Criterion {
            id: "C10",
            title: "symmetric-system concentration",
            tolerance_meaning: "relative error of the rate sum",
            tolerance: 1e-9,
            time_limit: None,
            check: c10_concentration,
        },
    ]
}

/// Parses `ID=value[,ID=value…]`.
pub fn parse_overrides(spec: &str) -> Result<BTreeMap<String, f64>> {
    let known: Vec<&str> = criteria().iter().map(|c| c.id).collect();
    let mut out = BTreeMap::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (id, value) = part
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("tolerance override `{part}` is not ID=value")))?;
        let id = id.trim().to_ascii_uppercase();
        if !known.contains(&id.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "unknown criterion `{id}` in tolerance override"
            )));
        }
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad tolerance `{value}` for {id}")))?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tolerance for {id} must be non-negative"
            )));
        }
        out.insert(id, v);
    }
    Ok(out)
}

/// Overrides from [`OVERRIDE_ENV`]; empty when unset.
pub fn overrides_from_env() -> Result<BTreeMap<String, f64>> {
    match std::env::var(OVERRIDE_ENV) {
        Ok(s) => parse_overrides(&s),
        Err(_) => Ok(BTreeMap::new()),
    }
}

pub fn run_criterion(c: &Criterion, tolerance: f64) -> CriterionReport {
    let start = Instant::now();
    let outcome = (c.check)(tolerance);
    let elapsed = start.elapsed();
    let (mut passed, mut detail) = match outcome {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    if let Some(limit) = c.time_limit {
        if elapsed > limit {
            passed = false;
            detail.push_str(&format!("; exceeded time limit of {} s", limit.as_secs()));
        }
    }
    CriterionReport {
        id: c.id.into(),
        title: c.title.into(),
        tolerance,
        passed,
        detail,
        elapsed_secs: elapsed.as_secs_f64(),
    }
}

/// Runs every criterion, applying any tolerance overrides.
pub fn run_all(overrides: &BTreeMap<String, f64>) -> Vec<CriterionReport> {
    criteria()
        .iter()
        .map(|c| run_criterion(c, overrides.get(c.id).copied().unwrap_or(c.tolerance)))
        .collect()
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

fn random_gamma<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Result<GammaVector> {
    GammaVector::normalized((0..n).map(|_| log_uniform(rng, lo, hi)).collect())
}

fn c1_sum_capacity(tol: f64) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let mut rng = substream(SEED, k);
        let nu = rng.random_range(2..=8usize);
        let nr = rng.random_range(2..=8usize);
        let s2 = [0.1, 0.5, 1.0][rng.random_range(0..3usize)];
        let s = fixtures::random_system(&mut rng, nr, nu, s2);
        let g = random_gamma(&mut rng, nu, 1e-3, 1e3)?;
        let c = sum_capacity(&s);
        let r = rates_closed_form(&s, &g)?;
        worst = worst.max((r.sum - c).abs() / c);
    }
    Ok((
        worst <= tol,
        format!("max relative error {worst:.2e} over 100 systems (tol {tol:e})"),
    ))
}

fn c2_oracle_triangle(tol: f64) -> Result<(bool, String)> {
    let decoder_tol = 1e-6;
    let (mut wq, mut wd): (f64, f64) = (0.0, 0.0);
    let sweep: Vec<f64> = (0..20).map(|k| 10f64.powf(-2.0 + 4.0 * k as f64 / 19.0)).collect();
    for (s, three) in [(fixtures::two_user(), false), (fixtures::three_user_overloaded(), true)] {
        for &x in &sweep {
            let g = if three {
                GammaVector::new(vec![1.0, x, x.sqrt()])?
            } else {
                GammaVector::new(vec![1.0, x])?
            };
            let cf = rates_closed_form(&s, &g)?;
            for i in 0..s.num_users() {
                wq = wq.max((rate_quadrature(&s, i, &g, tol.max(1e-12))? - cf.rates[i]).abs());
                wd = wd.max((rate_from_decoder_transfer(&s, i, &g, decoder_tol)? - cf.rates[i]).abs());
            }
        }
    }
    Ok((
        wq <= tol && wd <= decoder_tol,
        format!("quadrature {wq:.2e} (tol {tol:e}), decoder area {wd:.2e} (tol {decoder_tol:e})"),
    ))
}

fn c3_extreme_points(tol: f64) -> Result<(bool, String)> {
    let s = fixtures::three_user_overloaded();
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for p in UserPermutation::all(3) {
        let e = extreme_point(&s, &p)?;
        let far = sic_extreme_limit(&s, &p, 1e6)?.linf_distance(&e);
        let near = sic_extreme_limit(&s, &p, 1e4)?.linf_distance(&e);
        ok &= far <= tol && far < near;
        worst = worst.max(far);
    }
    Ok((
        ok,
        format!("worst distance at ladder 1e6 {worst:.2e} over 6 orders (tol {tol:e}), all shrinking"),
    ))
}

fn c4_region_coverage(slack: f64) -> Result<(bool, String)> {
    let s = fixtures::two_user();
    let c = sum_capacity(&s);
    let mut prev = f64::NEG_INFINITY;
    let (mut inside, mut monotone, mut sum_err) = (true, true, 0.0_f64);
    let mut first = None;
    let mut last = None;
    for k in 0..60 {
        let x = 10f64.powf(-6.0 + 12.0 * k as f64 / 59.0);
        let r = rates_closed_form(&s, &GammaVector::new(vec![1.0, x])?)?;
        inside &= region_contains(&s, &r, slack)?.contained;
        monotone &= r.rates[1] >= prev;
        prev = r.rates[1];
        sum_err = sum_err.max((r.sum - c).abs() / c);
        if k == 0 {
            first = Some(r.clone());
        }
        last = Some(r);
    }
    let low = extreme_point(&s, &UserPermutation::new(vec![1, 0])?)?;
    let high = extreme_point(&s, &UserPermutation::new(vec![0, 1])?)?;
    let d_low = first.expect("sweep is nonempty").linf_distance(&low);
    let d_high = last.expect("sweep is nonempty").linf_distance(&high);
    let ok = inside && monotone && sum_err <= 1e-9 && d_low <= 1e-3 && d_high <= 1e-3;
    Ok((
        ok,
        format!(
            "in region {inside}, R2 non-decreasing {monotone}, sum error {sum_err:.1e}, endpoints {d_low:.1e}/{d_high:.1e}"
        ),
    ))
}

fn c5_two_user_form(tol: f64) -> Result<(bool, String)> {
    let s = fixtures::two_user();
    let mut rng = substream(SEED, 500);
    let (mut w1, mut w2): (f64, f64) = (0.0, 0.0);
    for _ in 0..20 {
        let x = log_uniform(&mut rng, 1e-3, 1e3);
        let cf = rates_closed_form(&s, &GammaVector::new(vec![1.0, x])?)?;
        let printed = two_user_closed_form(&s, x, SecondUserForm::CorrectedPrinted)?;
        w1 = w1.max((printed.rates[0] - cf.rates[0]).abs());
        w2 = w2.max((printed.rates[1] - cf.rates[1]).abs());
    }
    let orth = fixtures::orthogonal_system(&[1.3, 0.6], 2, 0.5);
    let mut w_orth: f64 = 0.0;
    for _ in 0..20 {
        let x = log_uniform(&mut rng, 1e-6, 1e6);
        let a = two_user_closed_form(&orth, x, SecondUserForm::CorrectedPrinted)?;
        let b = rates_closed_form(&orth, &GammaVector::new(vec![1.0, x])?)?;
        for i in 0..2 {
            let exact = orth.matched_filter_snr(i).ln_1p();
            w_orth = w_orth.max((a.rates[i] - exact).abs()).max((b.rates[i] - exact).abs());
        }
    }
    let ok = w1 <= tol && w2 <= tol && w_orth <= 1e-10;
    Ok((
        ok,
        format!("R1 {w1:.1e}, corrected R2 {w2:.1e} (tol {tol:e}), orthogonal invariance {w_orth:.1e}"),
    ))
}

fn c6_monotonicity(step: f64) -> Result<(bool, String)> {
    let mut bad = 0;
    let mut checked = 0;
    for sys in 0..3 {
        let mut rng = substream(SEED, 600 + sys);
        let s = fixtures::random_system(&mut rng, 3, 3, 0.5);
        if s.is_orthogonal(1e-6) {
            return Err(Error::Numerical("drew an orthogonal system".into()));
        }
        for _ in 0..50 {
            let g = random_gamma(&mut rng, 3, 0.1, 10.0)?;
            let base = rates_closed_form(&s, &g)?;
            for j in 0..3 {
                let mut up = g.as_slice().to_vec();
                up[j] *= 1.0 + step;
                let moved = rates_closed_form(&s, &GammaVector::normalized(up)?)?;
                for i in 0..3 {
                    let d = moved.rates[i] - base.rates[i];
                    checked += 1;
                    if (i == j && d <= 0.0) || (i != j && d >= 0.0) {
                        bad += 1;
                    }
                }
            }
        }
    }
    Ok((
        bad == 0,
        format!("{bad} wrong signs out of {checked} partial derivatives (step {step:e})"),
    ))
}

fn c7_awgn_model(tol: f64) -> Result<(bool, String)> {
    let s = fixtures::two_user();
    let trials = 100_000;
    let corr_bound = 3.0 / (trials as f64).sqrt();
    let (mut worst_snr, mut worst_corr): (f64, f64) = (0.0, 0.0);
    for (k, v) in [[1.0, 1.0], [0.25, 0.25]].iter().enumerate() {
        let predicted = phi(&s, v)?;
        let r = validate_awgn_model(&s, v, trials, SEED + k as u64)?;
        for i in 0..2 {
            worst_snr = worst_snr.max(((r.empirical_snr[i] - predicted[i]) / predicted[i]).abs());
            worst_corr = worst_corr.max(r.error_signal_correlation[i]);
        }
    }
    Ok((
        worst_snr <= tol && worst_corr <= corr_bound,
        format!("SNR error {worst_snr:.2e} (tol {tol}), |corr| {worst_corr:.2e} (bound {corr_bound:.2e})"),
    ))
}

fn c8_fixed_point(tol: f64) -> Result<(bool, String)> {
    let s = fixtures::two_user();
    let mut ok = true;
    let mut notes = Vec::new();
    for g in [GammaVector::ones(2), GammaVector::new(vec![1.0, 1e3])?] {
        let matched = simulate_track(
            &s,
            &g,
            &DecoderFamily::MatchedWithMargin { margin: 0.0 },
            DEFAULT_MAX_ITER,
            DEFAULT_TOL,
        )?;
        let backed = simulate_track(
            &s,
            &g,
            &DecoderFamily::MatchedWithMargin { margin: 0.05 },
            DEFAULT_MAX_ITER,
            DEFAULT_TOL,
        )?;
        let resid = backed.track.manifold_residual(&g);
        let this = matched.verdict == Verdict::NotDecodable
            && backed.verdict == Verdict::Decodable
            && backed.track.is_monotone()
            && resid <= tol;
        ok &= this;
        notes.push(format!(
            "gamma2={}: matched {:?}, margin {:?} in {} steps, residual {resid:.1e}",
            g.get(1),
            matched.verdict,
            backed.verdict,
            backed.track.steps.len() - 1
        ));
    }
    Ok((ok, notes.join("; ")))
}

fn c9_search(tol: f64) -> Result<(bool, String)> {
    let cfg = SearchConfig {
        epsilon: tol,
        max_outer_iters: 100,
        ..SearchConfig::default()
    };
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    let mut max_iters = 0;
    for k in 0..20 {
        let mut rng = substream(SEED, 900 + k);
        let nu = if k % 2 == 0 { 2 } else { 3 };
        let nr = rng.random_range(2..=4usize);
        let s = fixtures::random_system(&mut rng, nr, nu, 0.5);
        let g0 = random_gamma(&mut rng, nu, 1e-2, 1e2)?;
        let target = rates_closed_form(&s, &g0)?;
        let r = search_gamma(&s, &target, &cfg)?;
        if r.status != SearchStatus::Converged {
            failures += 1;
        }
        worst = worst.max(r.l1_error);
        max_iters = max_iters.max(r.iterations);
    }
    let s = fixtures::three_user_overloaded();
    let e = extreme_point(&s, &UserPermutation::identity(3))?;
    let r = search_gamma(&s, &e.scaled(1.01), &cfg)?;
    let rejected = r.status == SearchStatus::Infeasible && r.violations.iter().any(|v| v.subset == vec![0, 1, 2]);
    Ok((
        failures == 0 && worst <= tol && rejected,
        format!(
            "20 targets: {failures} failures, worst L1 {worst:.1e} (tol {tol:e}), at most {max_iters} sweeps; 1.01x extreme point rejected {rejected}"
        ),
    ))
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn c10_concentration(tol: f64) -> Result<(bool, String)> {
    let mut sum_err: f64 = 0.0;
    let mut medians = Vec::new();
    for &n in &[8usize, 64] {
        let mut spreads = Vec::new();
        for seed in 0..20 {
            let mut rng = substream(SEED + n as u64, seed);
            let s = fixtures::random_system(&mut rng, n, n, 1.0);
            let rep = symmetric_rate(&s)?;
            let c = rep.target * n as f64;
            sum_err = sum_err.max((rep.rates.sum - c).abs() / c);
            spreads.push(rep.spread);
        }
        medians.push(median(spreads));
    }
    Ok((
        medians[1] < medians[0] && sum_err <= tol,
        format!(
            "median spread {:.3} at N=8, {:.3} at N=64; sum error {sum_err:.1e} (tol {tol:e})",
            medians[0], medians[1]
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_parsing() {
        let o = parse_overrides("C1=1e-30, c7=0.5").unwrap();
        assert_eq!(o["C1"], 1e-30);
        assert_eq!(o["C7"], 0.5);
        assert!(parse_overrides("C11=1").is_err());
        assert!(parse_overrides("C1").is_err());
        assert!(parse_overrides("C1=abc").is_err());
        assert!(parse_overrides("").unwrap().is_empty());
    }

    #[test]
    fn corrupted_tolerance_fails_with_id() {
        let c = criteria().into_iter().find(|c| c.id == "C5").unwrap();
        let r = run_criterion(&c, 0.0);
        assert!(!r.passed);
        assert!(r.line().starts_with("C5  FAIL"));
    }

    #[test]
    fn ids_are_unique() {
        let ids: Vec<_> = criteria().iter().map(|c| c.id).collect();
        let mut d = ids.clone();
        d.dedup();
        assert_eq!(ids.len(), 10);
        assert_eq!(d, ids);
    }
}
