//! One function per subcommand. Each is a pure function of the config and
//! the global overrides and returns the rendered document.

use mimo_noma::capacity::{extreme_point, region_contains, sum_capacity, Violation};
use mimo_noma::ese::validate_awgn_model;
use mimo_noma::export::{self, Metadata};
use mimo_noma::rates::{rate_from_decoder_transfer, rate_quadrature, rates_closed_form};
use mimo_noma::search::{search_gamma, SearchStatus};
use mimo_noma::track::{simulate_track, DecoderFamily, Verdict};
use mimo_noma::transfer::{phi, TransferKind};
use mimo_noma::{build_system, Error, GammaVector, RatePoint, SystemModel, TransferFunction, UserPermutation};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{DecoderSpec, Format, RunConfig, SweepAxis};
use crate::CliError;

/// Largest user count for which all `N_u!` extreme points are listed.
pub const MAX_CAPACITY_USERS: usize = 7;

pub struct Context {
    pub meta: Metadata,
    pub format: Format,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
}

impl Context {
    fn scale(&self) -> f64 {
        self.meta.log_base.factor()
    }

    fn rates(&self, r: &[f64]) -> Vec<f64> {
        r.iter().map(|x| x * self.scale()).collect()
    }

    fn json<T: Serialize>(&self, result: &T) -> Result<String, CliError> {
        export::to_json(&self.meta, result).map_err(|e| CliError::Io(e.to_string()))
    }

    fn csv(&self, notes: &[(&str, String)], body: &str) -> String {
        let mut head = String::new();
        for (k, v) in notes {
            head.push_str(&format!("# {k}: {v}\n"));
        }
        export::to_csv(&self.meta, &format!("{head}{body}"))
    }
}

/// A rendered document and whether the run met its verdict.
pub struct Outcome {
    pub text: String,
    pub ok: bool,
}

fn system(cfg: &RunConfig) -> Result<SystemModel, CliError> {
    Ok(build_system(&cfg.system)?)
}

fn base_gamma(cfg: &RunConfig, n: usize) -> Result<Vec<f64>, CliError> {
    match &cfg.gamma {
        None => Ok(vec![1.0; n]),
        Some(g) if g.len() != n => Err(CliError::Config(format!("gamma: {} entries for {n} users", g.len()))),
        Some(g) => {
            if let Some(i) = g.iter().position(|x| !(*x > 0.0 && x.is_finite())) {
                return Err(CliError::Config(format!(
                    "gamma[{i}]: {} is not positive and finite",
                    g[i]
                )));
            }
            Ok(g.clone())
        }
    }
}

fn gamma_vector(raw: &[f64]) -> Result<GammaVector, CliError> {
    Ok(GammaVector::normalized(raw.to_vec())?)
}

fn user_columns(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn cells(xs: &[f64]) -> Vec<String> {
    xs.iter().map(|x| format!("{x:e}")).collect()
}

#[derive(Serialize)]
struct ExtremePointRow {
    /// Decoding order, first decoded user first.
    order: Vec<usize>,
    rates: Vec<f64>,
    sum: f64,
}

#[derive(Serialize)]
struct ViolationRow {
    subset: Vec<usize>,
    rate_sum: f64,
    bound: f64,
    excess: f64,
}

impl ViolationRow {
    fn new(v: &Violation, scale: f64) -> Self {
        Self {
            subset: v.subset.clone(),
            rate_sum: v.rate_sum * scale,
            bound: v.bound * scale,
            excess: v.excess() * scale,
        }
    }
}

#[derive(Serialize)]
struct MembershipReport {
    point: Vec<f64>,
    contained: bool,
    violations: Vec<ViolationRow>,
    negative: Vec<usize>,
}

#[derive(Serialize)]
struct CapacityReport {
    users: usize,
    sum_capacity: f64,
    extreme_points: Vec<ExtremePointRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    membership: Option<MembershipReport>,
}

pub fn capacity(ctx: &Context, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let s = system(cfg)?;
    let n = s.num_users();
    if n > MAX_CAPACITY_USERS {
        return Err(Error::TooManyUsers {
            what: "extreme-point enumeration",
            users: n,
            limit: MAX_CAPACITY_USERS,
        }
        .into());
    }
    let extreme_points = UserPermutation::all(n)
        .par_iter()
        .map(|p| {
            let e = extreme_point(&s, p)?;
            Ok(ExtremePointRow {
                order: p.order().to_vec(),
                rates: ctx.rates(&e.rates),
                sum: e.sum * ctx.scale(),
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let membership = match &cfg.targets {
        None => None,
        Some(t) => {
            if t.len() != n {
                return Err(CliError::Config(format!("targets: {} rates for {n} users", t.len())));
            }
            let point = RatePoint::new(t.clone()).map_err(|e| CliError::Config(format!("targets: {e}")))?;
            let m = region_contains(&s, &point, 0.0)?;
            Some(MembershipReport {
                point: ctx.rates(t),
                contained: m.contained,
                violations: m.violations.iter().map(|v| ViolationRow::new(v, ctx.scale())).collect(),
                negative: m.negative,
            })
        }
    };
    let report = CapacityReport {
        users: n,
        sum_capacity: sum_capacity(&s) * ctx.scale(),
        extreme_points,
        membership,
    };
    let text = match ctx.format {
        Format::Json => ctx.json(&report)?,
        Format::Csv => {
            let mut body = format!("order,{},sum\n", user_columns("R", n).join(","));
            for e in &report.extreme_points {
                let order: Vec<String> = e.order.iter().map(|k| k.to_string()).collect();
                body.push_str(&format!(
                    "{},{},{:e}\n",
                    order.join("-"),
                    cells(&e.rates).join(","),
                    e.sum
                ));
            }
            let mut notes = vec![("sum_capacity", format!("{:e}", report.sum_capacity))];
            if let Some(m) = &report.membership {
                notes.push(("target_contained", m.contained.to_string()));
                for v in &m.violations {
                    notes.push(("violated_subset", format!("{:?} excess {:e}", v.subset, v.excess)));
                }
            }
            ctx.csv(&notes, &body)
        }
    };
    Ok(Outcome { text, ok: true })
}

#[derive(Serialize)]
struct RateRow {
    gamma: Vec<f64>,
    rates: Vec<f64>,
    sum: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    quadrature_deviation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    decoder_deviation: Option<f64>,
}

#[derive(Serialize)]
struct CrossCheck {
    quadrature_tol: f64,
    decoder_tol: f64,
    max_quadrature_deviation: f64,
    max_decoder_deviation: f64,
    passed: bool,
}

#[derive(Serialize)]
struct RatesReport {
    sum_capacity: f64,
    rows: Vec<RateRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cross_check: Option<CrossCheck>,
}

fn log_grid(axis: &SweepAxis) -> Vec<f64> {
    if axis.points == 1 {
        return vec![axis.from];
    }
    let (a, b) = (axis.from.ln(), axis.to.ln());
    (0..axis.points)
        .map(|k| (a + (b - a) * k as f64 / (axis.points - 1) as f64).exp())
        .collect()
}

/// Cartesian product of the sweep axes, first axis outermost.
fn gamma_grid(base: &[f64], axes: &[SweepAxis]) -> Result<Vec<Vec<f64>>, CliError> {
    let n = base.len();
    for (k, a) in axes.iter().enumerate() {
        if a.user >= n {
            return Err(CliError::Config(format!(
                "rates.sweep[{k}].user: {} but only {n} users",
                a.user
            )));
        }
        if !(a.from > 0.0 && a.to > 0.0 && a.from.is_finite() && a.to.is_finite()) {
            return Err(CliError::Config(format!(
                "rates.sweep[{k}]: bounds must be positive and finite"
            )));
        }
        if a.points == 0 {
            return Err(CliError::Config(format!("rates.sweep[{k}].points: must be at least 1")));
        }
    }
    let mut grid = vec![base.to_vec()];
    for a in axes {
        let values = log_grid(a);
        grid = grid
            .into_iter()
            .flat_map(|g| {
                values.iter().map(move |&x| {
                    let mut h = g.clone();
                    h[a.user] = x;
                    h
                })
            })
            .collect();
    }
    Ok(grid)
}

pub fn rates(ctx: &Context, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let s = system(cfg)?;
    let n = s.num_users();
    let block = cfg.rates.clone().unwrap_or_default();
    let (qtol, dtol) = match ctx.tol {
        Some(t) => (t, t),
        None => (block.quadrature_tol, block.decoder_tol),
    };
    if block.cross_check && !(qtol > 0.0 && dtol > 0.0) {
        return Err(CliError::Config(
            "rates: cross-check tolerances must be positive".into(),
        ));
    }
    let grid = gamma_grid(&base_gamma(cfg, n)?, &block.sweep)?;
    let rows = grid
        .par_iter()
        .map(|raw| -> Result<RateRow, CliError> {
            let g = gamma_vector(raw)?;
            let r = rates_closed_form(&s, &g)?;
            let (mut dq, mut dd) = (None, None);
            if block.cross_check {
                let (mut q, mut d): (f64, f64) = (0.0, 0.0);
                for i in 0..n {
                    q = q.max((rate_quadrature(&s, i, &g, qtol)? - r.rates[i]).abs());
                    d = d.max((rate_from_decoder_transfer(&s, i, &g, dtol)? - r.rates[i]).abs());
                }
                dq = Some(q);
                dd = Some(d);
            }
            Ok(RateRow {
                gamma: raw.clone(),
                rates: r.rates,
                sum: r.sum,
                quadrature_deviation: dq,
                decoder_deviation: dd,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let cross_check = block.cross_check.then(|| {
        let mq = rows.iter().filter_map(|r| r.quadrature_deviation).fold(0.0, f64::max);
        let md = rows.iter().filter_map(|r| r.decoder_deviation).fold(0.0, f64::max);
        CrossCheck {
            quadrature_tol: qtol * ctx.scale(),
            decoder_tol: dtol * ctx.scale(),
            max_quadrature_deviation: mq * ctx.scale(),
            max_decoder_deviation: md * ctx.scale(),
            passed: mq <= qtol && md <= dtol,
        }
    });
    let ok = cross_check.as_ref().is_none_or(|c| c.passed);
    let scale = ctx.scale();
    let rows: Vec<RateRow> = rows
        .into_iter()
        .map(|r| RateRow {
            rates: ctx.rates(&r.rates),
            sum: r.sum * scale,
            quadrature_deviation: r.quadrature_deviation.map(|x| x * scale),
            decoder_deviation: r.decoder_deviation.map(|x| x * scale),
            gamma: r.gamma,
        })
        .collect();
    let report = RatesReport {
        sum_capacity: sum_capacity(&s) * scale,
        rows,
        cross_check,
    };
    let text = match ctx.format {
        Format::Json => ctx.json(&report)?,
        Format::Csv => {
            let mut cols = user_columns("gamma", n);
            cols.extend(user_columns("R", n));
            cols.push("sum".into());
            if block.cross_check {
                cols.push("quadrature_deviation".into());
                cols.push("decoder_deviation".into());
            }
            let mut body = cols.join(",");
            body.push('\n');
            for r in &report.rows {
                let mut c = cells(&r.gamma);
                c.extend(cells(&r.rates));
                c.push(format!("{:e}", r.sum));
                if let (Some(q), Some(d)) = (r.quadrature_deviation, r.decoder_deviation) {
                    c.push(format!("{q:e}"));
                    c.push(format!("{d:e}"));
                }
                body.push_str(&c.join(","));
                body.push('\n');
            }
            let mut notes = vec![("sum_capacity", format!("{:e}", report.sum_capacity))];
            if let Some(c) = &report.cross_check {
                notes.push(("cross_check_passed", c.passed.to_string()));
            }
            ctx.csv(&notes, &body)
        }
    };
    Ok(Outcome { text, ok })
}

#[derive(Serialize)]
struct TraceRow {
    iteration: usize,
    l1_error: f64,
}

#[derive(Serialize)]
struct SearchReport {
    status: SearchStatus,
    target: Vec<f64>,
    matched_target: Vec<f64>,
    gamma: Option<GammaVector>,
    achieved: Option<Vec<f64>>,
    l1_error: f64,
    iterations: usize,
    trace: Vec<TraceRow>,
    violations: Vec<ViolationRow>,
}

pub fn search(ctx: &Context, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let s = system(cfg)?;
    let n = s.num_users();
    let t = cfg
        .targets
        .as_ref()
        .ok_or_else(|| CliError::Config("targets: required for search".into()))?;
    if t.len() != n {
        return Err(CliError::Config(format!("targets: {} rates for {n} users", t.len())));
    }
    let target = RatePoint::new(t.clone()).map_err(|e| CliError::Config(format!("targets: {e}")))?;
    let mut sc = cfg.search.clone().unwrap_or_default();
    if let Some(tol) = ctx.tol {
        sc.epsilon = tol;
    }
    sc.validate().map_err(|e| CliError::Config(format!("search: {e}")))?;
    let r = search_gamma(&s, &target, &sc)?;
    let scale = ctx.scale();
    let report = SearchReport {
        status: r.status,
        target: ctx.rates(t),
        matched_target: ctx.rates(&r.matched_target.rates),
        gamma: r.gamma.clone(),
        achieved: r.achieved.as_ref().map(|a| ctx.rates(&a.rates)),
        l1_error: r.l1_error * scale,
        iterations: r.iterations,
        trace: r
            .trace
            .iter()
            .map(|e| TraceRow {
                iteration: e.iteration,
                l1_error: e.l1_error * scale,
            })
            .collect(),
        violations: r.violations.iter().map(|v| ViolationRow::new(v, scale)).collect(),
    };
    let text = match ctx.format {
        Format::Json => ctx.json(&report)?,
        Format::Csv => {
            let mut body = String::from("iteration,l1_error\n");
            for e in &report.trace {
                body.push_str(&format!("{},{:e}\n", e.iteration, e.l1_error));
            }
            let status = serde_json::to_value(report.status).expect("status serializes");
            let mut notes = vec![("status", status.as_str().unwrap_or_default().to_string())];
            if let Some(g) = &report.gamma {
                notes.push(("gamma", cells(g.as_slice()).join(" ")));
            }
            for v in &report.violations {
                notes.push(("violated_subset", format!("{:?} excess {:e}", v.subset, v.excess)));
            }
            ctx.csv(&notes, &body)
        }
    };
    Ok(Outcome {
        text,
        ok: r.succeeded(),
    })
}

fn decoder_family(spec: &DecoderSpec) -> Result<DecoderFamily, CliError> {
    Ok(match spec {
        DecoderSpec::Genie => DecoderFamily::Genie,
        DecoderSpec::Matched { margin } => DecoderFamily::MatchedWithMargin { margin: *margin },
        DecoderSpec::Table { tables } => DecoderFamily::CustomTable(
            tables
                .iter()
                .enumerate()
                .map(|(k, t)| {
                    TransferFunction::from_table(TransferKind::DecoderPsi, t.iter().map(|p| (p[0], p[1])).collect())
                        .map_err(|e| CliError::Config(format!("track.decoder.tables[{k}]: {e}")))
                })
                .collect::<Result<_, _>>()?,
        ),
    })
}

#[derive(Serialize)]
struct TrackReport<'a> {
    verdict: Verdict,
    converged: bool,
    fixed_point_residual: f64,
    manifold_residual: f64,
    steps: &'a [mimo_noma::track::TrackStep],
}

pub fn track(ctx: &Context, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let s = system(cfg)?;
    let g = gamma_vector(&base_gamma(cfg, s.num_users())?)?;
    let mut block = cfg.track.clone().unwrap_or_default();
    if let Some(t) = ctx.tol {
        block.tol = t;
    }
    let dec = decoder_family(&block.decoder)?;
    let out = simulate_track(&s, &g, &dec, block.max_iter, block.tol)?;
    let manifold = out.track.manifold_residual(&g);
    let verdict = serde_json::to_value(out.verdict).expect("verdict serializes");
    let text = match ctx.format {
        Format::Json => ctx.json(&TrackReport {
            verdict: out.verdict,
            converged: out.converged,
            fixed_point_residual: out.fixed_point_residual,
            manifold_residual: manifold,
            steps: &out.track.steps,
        })?,
        Format::Csv => ctx.csv(
            &[
                ("verdict", verdict.as_str().unwrap_or_default().to_string()),
                ("converged", out.converged.to_string()),
                ("fixed_point_residual", format!("{:e}", out.fixed_point_residual)),
                ("manifold_residual", format!("{manifold:e}")),
            ],
            &out.track.to_csv(),
        ),
    };
    Ok(Outcome {
        text,
        ok: out.verdict == Verdict::Decodable,
    })
}

#[derive(Serialize)]
struct EseReport {
    v: Vec<f64>,
    trials: usize,
    seed: u64,
    predicted_snr: Vec<f64>,
    empirical_snr: Vec<f64>,
    relative_error: Vec<f64>,
    error_signal_correlation: Vec<f64>,
    tol: f64,
    correlation_bound: f64,
    passed: bool,
}

pub fn validate_ese(ctx: &Context, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let s = system(cfg)?;
    let b = cfg
        .validate_ese
        .as_ref()
        .ok_or_else(|| CliError::Config("validate_ese: required for validate-ese".into()))?;
    let seed = ctx.seed.unwrap_or(b.seed);
    let tol = ctx.tol.unwrap_or(b.tol);
    let predicted = phi(&s, &b.v)?;
    let r = validate_awgn_model(&s, &b.v, b.trials, seed)?;
    let relative_error: Vec<f64> = predicted
        .iter()
        .zip(&r.empirical_snr)
        .map(|(p, e)| ((e - p) / p).abs())
        .collect();
    let bound = 3.0 / (b.trials as f64).sqrt();
    let passed = relative_error.iter().all(|&x| x <= tol) && r.error_signal_correlation.iter().all(|&c| c <= bound);
    let report = EseReport {
        v: b.v.clone(),
        trials: b.trials,
        seed,
        predicted_snr: predicted,
        empirical_snr: r.empirical_snr,
        relative_error,
        error_signal_correlation: r.error_signal_correlation,
        tol,
        correlation_bound: bound,
        passed,
    };
    let text = match ctx.format {
        Format::Json => ctx.json(&report)?,
        Format::Csv => {
            let mut body = String::from("user,v,predicted_snr,empirical_snr,relative_error,correlation\n");
            for i in 0..report.v.len() {
                body.push_str(&format!(
                    "{},{:e},{:e},{:e},{:e},{:e}\n",
                    i + 1,
                    report.v[i],
                    report.predicted_snr[i],
                    report.empirical_snr[i],
                    report.relative_error[i],
                    report.error_signal_correlation[i]
                ));
            }
            ctx.csv(
                &[
                    ("trials", report.trials.to_string()),
                    ("seed", report.seed.to_string()),
                    ("passed", report.passed.to_string()),
                ],
                &body,
            )
        }
    };
    Ok(Outcome { text, ok: passed })
}
