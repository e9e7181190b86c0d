//! Warm-started p-schedules and the limit diagnostics along them.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::kkt::{self, DiscreteMeasure, Tolerances};
use crate::mesh::{Field, Mesh};
use crate::solver::{self, Check, Problem, SolveConfig, SolveState, WarmStart};

/// Exponents `p_j = p0 * gamma^j`, `j = 0..steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub p0: f64,
    pub gamma: f64,
    pub steps: usize,
}

impl Schedule {
    pub fn new(p0: f64, gamma: f64, steps: usize) -> Result<Schedule> {
        let mut errs = Vec::new();
        if !(p0 >= 1.0 && p0.is_finite()) {
            errs.push(format!("p0 = {p0} must be finite and >= 1"));
        }
        if !(gamma > 1.0 && gamma.is_finite()) {
            errs.push(format!("gamma = {gamma} must be finite and > 1"));
        }
        if steps == 0 {
            errs.push("steps must be at least 1".into());
        }
        if errs.is_empty() {
            Ok(Schedule { p0, gamma, steps })
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Smallest exponent inside the theory's range, `p0 = max(n, 2) + 1`, doubling.
    pub fn default_for(dim: usize, steps: usize) -> Schedule {
        Schedule { p0: (dim.max(2) + 1) as f64, gamma: 2.0, steps }
    }

    pub fn exponents(&self) -> Vec<f64> {
        (0..self.steps).map(|j| self.p0 * self.gamma.powi(j as i32)).collect()
    }
}

/// Continuous test functions for probing weak-* convergence of the measures.
/// `x` is the first coordinate; the bump is centered in the domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestFunction {
    One,
    X,
    X2,
    Bump,
}

impl TestFunction {
    pub const DEFAULT: [TestFunction; 4] = [TestFunction::One, TestFunction::X, TestFunction::X2, TestFunction::Bump];

    pub fn name(&self) -> &'static str {
        match self {
            TestFunction::One => "1",
            TestFunction::X => "x",
            TestFunction::X2 => "x2",
            TestFunction::Bump => "bump",
        }
    }

    /// Smooth bump of radius `0.2 * min side`, so it sits inside a centered plateau.
    pub fn eval(&self, mesh: &Mesh, x: &[f64]) -> f64 {
        match self {
            TestFunction::One => 1.0,
            TestFunction::X => x[0],
            TestFunction::X2 => x[0] * x[0],
            TestFunction::Bump => {
                let radius = 0.2 * (0..mesh.dim()).map(|d| mesh.upper()[d] - mesh.lower()[d]).fold(f64::INFINITY, f64::min);
                let r2: f64 = (0..mesh.dim())
                    .map(|d| {
                        let c = 0.5 * (mesh.lower()[d] + mesh.upper()[d]);
                        (x[d] - c) * (x[d] - c)
                    })
                    .sum::<f64>()
                    / (radius * radius);
                if r2 < 1.0 {
                    (1.0 - 1.0 / (1.0 - r2)).exp()
                } else {
                    0.0
                }
            }
        }
    }
}

/// Per-exponent summary kept alongside each state.
#[derive(Debug, Clone)]
pub struct StateRecord {
    pub j: usize,
    pub p: f64,
    pub f_p: f64,
    /// Sup of the same density at `u_p`.
    pub f_inf_of_up: f64,
    pub g_p: f64,
    pub cap: f64,
    pub mu: f64,
    pub lambda: f64,
    pub m: f64,
    pub psi_norm: f64,
    pub kkt_res: f64,
    pub slack: f64,
    pub sigma: DiscreteMeasure,
    pub tau: DiscreteMeasure,
    /// `int phi dsigma_p` for [`TestFunction::DEFAULT`].
    pub pairings: [f64; 4],
    pub outer_iters: usize,
    pub converged: bool,
    pub wall_ms: f64,
}

/// Quantities reported for the limit `p -> inf`.
#[derive(Debug, Clone, Default)]
pub struct LimitEstimates {
    /// `F_inf(u_last)`.
    pub f_inf: f64,
    pub g_inf: f64,
    pub lambda: f64,
    pub m: f64,
    pub psi_norm: f64,
    /// `max - min` over the last three states, for `Lambda`, `M`, `|Psi|`.
    pub tail_oscillation: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct ContinuationTrace {
    pub states: Vec<SolveState>,
    pub records: Vec<StateRecord>,
    pub limit: LimitEstimates,
    /// Non-monotone or diverging tails, failed per-state checks.
    pub flags: Vec<String>,
    /// Why the schedule stopped early, if it did.
    pub aborted: Option<String>,
}

impl ContinuationTrace {
    pub fn completed(&self) -> bool {
        self.aborted.is_none()
    }
}

fn record(j: usize, state: &SolveState, problem: &Problem, mesh: &Mesh) -> Result<StateRecord> {
    let (sigma, tau) = kkt::build_measures(problem, mesh, &state.field, state.p)?;
    let mut pairings = [0.0; 4];
    for (out, t) in pairings.iter_mut().zip(TestFunction::DEFAULT) {
        *out = sigma.pair(mesh, |x| t.eval(mesh, x));
    }
    Ok(StateRecord {
        j,
        p: state.p,
        f_p: state.f_p,
        f_inf_of_up: state.f_inf,
        g_p: state.g_p,
        cap: state.cap,
        mu: state.raw.mu,
        lambda: state.rescaled.lambda,
        m: state.rescaled.m,
        psi_norm: state.rescaled.psi_norm,
        kkt_res: state.kkt.residual,
        slack: state.slack,
        sigma,
        tau,
        pairings,
        outer_iters: state.outer_iters,
        converged: state.converged,
        wall_ms: state.wall_ms,
    })
}

fn limit_estimates(records: &[StateRecord], states: &[SolveState]) -> LimitEstimates {
    let Some(last) = records.last() else {
        return LimitEstimates::default();
    };
    let tail = &records[records.len().saturating_sub(3)..];
    let spread = |f: fn(&StateRecord) -> f64| {
        let (lo, hi) = tail.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        hi - lo
    };
    LimitEstimates {
        f_inf: last.f_inf_of_up,
        g_inf: states.last().map_or(0.0, |s| s.g_inf),
        lambda: last.lambda,
        m: last.m,
        psi_norm: last.psi_norm,
        tail_oscillation: [spread(|r| r.lambda), spread(|r| r.m), spread(|r| r.psi_norm)],
    }
}

/// Solves along the schedule, warm-starting each exponent from the previous
/// minimizer and multipliers. The compatibility check runs once, at `p0`;
/// its failure is the only error. Later failures and non-convergence end
/// the schedule with a partial trace.
pub fn run_schedule(problem: &Problem, mesh: &Mesh, schedule: &Schedule, cfg: &SolveConfig) -> Result<ContinuationTrace> {
    let ps = schedule.exponents();
    let reference: Field = solver::compatibility(problem, mesh, ps[0], cfg, None)?;
    let mut warm = WarmStart { field: None, multipliers: None, reference: Some(reference) };
    let mut trace =
        ContinuationTrace { states: Vec::new(), records: Vec::new(), limit: LimitEstimates::default(), flags: Vec::new(), aborted: None };
    for (j, &p) in ps.iter().enumerate() {
        let t = Instant::now();
        let mut state = match solver::solve_p(problem, mesh, p, cfg, &warm) {
            Ok(s) => s,
            Err(e) => {
                trace.aborted = Some(format!("p = {p}: {e}"));
                break;
            }
        };
        match kkt::diagnostics(&state, problem, mesh, &Tolerances::default()) {
            Ok(checks) => state.checks.extend(checks),
            Err(e) => state.checks.push(Check::new("diagnostics", false, e.to_string())),
        }
        state.wall_ms = t.elapsed().as_secs_f64() * 1e3;
        for c in state.failed_checks() {
            trace.flags.push(format!("p = {p}: check {} failed ({})", c.name, c.detail));
        }
        trace.records.push(record(j, &state, problem, mesh)?);
        warm = WarmStart {
            field: Some(state.field.clone()),
            multipliers: Some(state.raw.clone()),
            reference: Some(state.reference.clone()),
        };
        let converged = state.converged;
        trace.states.push(state);
        if !converged {
            trace.aborted = Some(format!("p = {p}: solver did not converge"));
            break;
        }
    }
    let report = sup_estimate_consistency(&trace, cfg.outer_tol);
    for c in report.checks.iter().filter(|c| !c.passed) {
        trace.flags.push(format!("{}: {}", c.name, c.detail));
    }
    if trace.records.iter().any(|r| !r.f_p.is_finite() || !r.f_inf_of_up.is_finite()) {
        trace.flags.push("diverging tail: non-finite energy".into());
    }
    trace.limit = limit_estimates(&trace.records, &trace.states);
    Ok(trace)
}

/// Sequences `int phi dsigma_{p_j}` and `int phi dtau_{p_j}` per test function.
#[derive(Debug, Clone)]
pub struct PairingTable {
    pub tests: Vec<TestFunction>,
    pub sigma: Vec<Vec<f64>>,
    pub tau: Vec<Vec<f64>>,
    /// `|last - previous|` of the sigma sequence; `None` with fewer than two states.
    pub sigma_gap: Vec<Option<f64>>,
    pub tau_gap: Vec<Option<f64>>,
}

pub fn measure_pairing_trace(trace: &ContinuationTrace, mesh: &Mesh, tests: &[TestFunction]) -> PairingTable {
    let seq = |m: fn(&StateRecord) -> &DiscreteMeasure, t: &TestFunction| -> Vec<f64> {
        trace.records.iter().map(|r| m(r).pair(mesh, |x| t.eval(mesh, x))).collect()
    };
    let gap = |v: &Vec<f64>| (v.len() >= 2).then(|| (v[v.len() - 1] - v[v.len() - 2]).abs());
    let sigma: Vec<Vec<f64>> = tests.iter().map(|t| seq(|r| &r.sigma, t)).collect();
    let tau: Vec<Vec<f64>> = tests.iter().map(|t| seq(|r| &r.tau, t)).collect();
    PairingTable {
        tests: tests.to_vec(),
        sigma_gap: sigma.iter().map(gap).collect(),
        tau_gap: tau.iter().map(gap).collect(),
        sigma,
        tau,
    }
}

#[derive(Debug, Clone)]
pub struct ConsistencyReport {
    pub checks: Vec<Check>,
}

impl ConsistencyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Monotonicity `F_{p_j}(u_{p_j}) <= F_{p_{j+1}}(u_{p_{j+1}}) + 1e-8 scale`, the
/// upper bound by `F_inf(u_last)`, and `G_{p_j} <= G + tol` along the trace.
pub fn sup_estimate_consistency(trace: &ContinuationTrace, tol: f64) -> ConsistencyReport {
    let r = &trace.records;
    let mut checks = Vec::new();
    let bad: Vec<usize> = (1..r.len())
        .filter(|&j| !(r[j - 1].f_p <= r[j].f_p + 1e-8 * r[j].f_p.abs().max(1.0)))
        .collect();
    checks.push(Check::new("nondecreasing_F_p", bad.is_empty(), format!("decreases at j = {bad:?}")));
    if let Some(last) = r.last() {
        let bound = last.f_inf_of_up;
        let bad: Vec<usize> =
            r.iter().filter(|s| !(s.f_p <= bound + 1e-8 * bound.abs().max(1.0))).map(|s| s.j).collect();
        checks.push(Check::new(
            "bounded_by_F_inf_last",
            bad.is_empty(),
            format!("F_inf(u_last) = {bound:.16e}, exceeded at j = {bad:?}"),
        ));
    }
    let bad: Vec<usize> = r.iter().filter(|s| s.cap.is_finite() && !(s.g_p <= s.cap + tol)).map(|s| s.j).collect();
    checks.push(Check::new("G_p_within_cap", bad.is_empty(), format!("exceeded at j = {bad:?}")));
    ConsistencyReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::DensityF;

    #[test]
    fn schedule_is_geometric() {
        let s = Schedule::new(4.0, 2.0, 6).unwrap();
        assert_eq!(s.exponents(), vec![4.0, 8.0, 16.0, 32.0, 64.0, 128.0]);
        assert_eq!(Schedule::default_for(1, 3).p0, 3.0);
        assert_eq!(Schedule::default_for(3, 3).p0, 4.0);
        match Schedule::new(0.5, 1.0, 0) {
            Err(Error::Config(e)) => assert_eq!(e.len(), 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unconstrained_trace_is_flat_zero() {
        let mesh = Mesh::unit_interval(16).unwrap();
        let pb = Problem::new(1, DensityF::Dirichlet);
        let trace = run_schedule(&pb, &mesh, &Schedule::default_for(1, 3), &SolveConfig::default()).unwrap();
        assert!(trace.completed());
        assert_eq!(trace.states.len(), 3);
        assert!(trace.states.iter().all(|s| s.field.sup_norm() == 0.0 && s.f_p == 0.0));
        assert!(sup_estimate_consistency(&trace, 1e-9).passed());
        let table = measure_pairing_trace(&trace, &mesh, &TestFunction::DEFAULT);
        assert!(table.sigma.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(table.sigma_gap[0], Some(0.0));
    }

    #[test]
    fn bump_vanishes_off_center() {
        let mesh = Mesh::unit_interval(4).unwrap();
        assert_eq!(TestFunction::Bump.eval(&mesh, &[0.5]), 1.0);
        assert_eq!(TestFunction::Bump.eval(&mesh, &[0.25]), 0.0);
        assert!(TestFunction::Bump.eval(&mesh, &[0.6]) > 0.0);
    }
}
