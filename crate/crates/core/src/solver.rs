//! Finite-p constrained minimization.
//!
//! Minimizes `(1/p) (F_p/c)^p` subject to `(1/p) ((G_p/G)^p - 1) <= 0` and the
//! underlying constraint rows with an augmented Lagrangian (PHR form for
//! inequalities) around [`inner_minimize`]. The objective scale `c` keeps the
//! objective and the multipliers of order one for every `p`; it does not change
//! the minimizers, and [`crate::kkt::rescale`] undoes it.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constraints::{self, ConstraintSpec, DualElement};
use crate::error::{Error, Result};
use crate::functionals::{self, density_values, normalized_lp, sup_value, Cotangent, Density, DensityF, DensityG};
use crate::kkt::{self, KktReport, RescaledMultipliers};
pub use crate::lbfgs::{inner_minimize, inner_minimize_preconditioned, InnerOptions, InnerResult};
use crate::precond;
use crate::mesh::{Field, Mesh, Samples};

/// Densities, energy cap and constraints of one problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub components: usize,
    pub f: DensityF,
    pub g: Option<DensityG>,
    /// Sublevel bound `G` on `G_inf`; infinite when there is no cap.
    pub cap: f64,
    pub constraints: Vec<ConstraintSpec>,
}

impl Problem {
    pub fn new(components: usize, f: DensityF) -> Problem {
        Problem { components, f, g: None, cap: f64::INFINITY, constraints: Vec::new() }
    }

    pub fn with_cap(mut self, g: DensityG, cap: f64) -> Problem {
        self.g = Some(g);
        self.cap = cap;
        self
    }

    pub fn with_constraint(mut self, spec: ConstraintSpec) -> Problem {
        self.constraints.push(spec);
        self
    }

    pub fn has_cap(&self) -> bool {
        self.g.is_some() && self.cap.is_finite()
    }

    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        if self.components == 0 {
            return Err(Error::InvalidDensity("problem needs at least one component".into()));
        }
        self.f.check_components(self.components, mesh.dim())?;
        if let DensityG::Const(c) = self.g.as_ref().unwrap_or(&DensityG::Abs) {
            if !(*c >= 0.0) {
                return Err(Error::InvalidDensity(format!("constant g must be nonnegative, got {c}")));
            }
        }
        if self.cap.is_nan() || self.cap < 0.0 {
            return Err(Error::InvalidDensity(format!("cap G must be nonnegative, got {}", self.cap)));
        }
        constraints::validate_all(&self.constraints, self.components)
    }

    fn g_or_zero(&self) -> &DensityG {
        self.g.as_ref().unwrap_or(&DensityG::Const(0.0))
    }
}

#[derive(Debug, Clone)]
pub struct SolveConfig {
    pub inner_tol: f64,
    pub outer_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    /// Initial value of every multiplier when no warm multipliers are given.
    pub multiplier_init: f64,
    pub seed: u64,
    pub memory: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            inner_tol: 1e-10,
            outer_tol: 1e-9,
            max_outer: 80,
            max_inner: 50_000,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            multiplier_init: 0.0,
            seed: 0,
            memory: 12,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.inner_tol > 0.0) {
            errs.push(format!("inner_tol must be positive, got {}", self.inner_tol));
        }
        if !(self.outer_tol > 0.0) {
            errs.push(format!("outer_tol must be positive, got {}", self.outer_tol));
        }
        if !(self.penalty_init > 0.0 && self.penalty_init.is_finite()) {
            errs.push(format!("penalty_init must be positive, got {}", self.penalty_init));
        }
        if !(self.penalty_growth > 1.0 && self.penalty_growth.is_finite()) {
            errs.push(format!("penalty_growth must exceed 1, got {}", self.penalty_growth));
        }
        if !(self.multiplier_init >= 0.0 && self.multiplier_init.is_finite()) {
            errs.push(format!("multiplier_init must be nonnegative, got {}", self.multiplier_init));
        }
        if self.max_outer == 0 || self.max_inner == 0 || self.memory == 0 {
            errs.push("max_outer, max_inner and memory must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Multipliers in the solver's normalization.
///
/// The stationarity system reads
/// `lambda c^-p d(1/p F_p^p) + mu G^-p d(1/p G_p^p) = <psi, dC>`,
/// with `c = objective_scale`, `G = cap_scale` and `C` the underlying rows.
/// `psi` is minus the classical (AL) multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMultipliers {
    pub lambda: f64,
    pub mu: f64,
    pub psi: DualElement,
    pub objective_scale: f64,
    pub cap_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Check {
        Check { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Clone)]
pub struct SolveState {
    pub p: f64,
    pub field: Field,
    /// Feasible reference field from the compatibility phase.
    pub reference: Field,
    pub f_p: f64,
    pub f_inf: f64,
    pub g_p: f64,
    pub g_inf: f64,
    pub cap: f64,
    pub f_p_reference: f64,
    pub raw: RawMultipliers,
    pub rescaled: RescaledMultipliers,
    /// Weighted `L^1` norm of `Q(u_p)`.
    pub feasibility: f64,
    /// Largest violation of the underlying constraint rows.
    pub violation: f64,
    pub cap_violation: f64,
    pub kkt: KktReport,
    pub slack: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub converged: bool,
    pub descent_ok: bool,
    pub checks: Vec<Check>,
    pub wall_ms: f64,
}

impl SolveState {
    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Optional warm-start data for [`solve_p`].
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    pub field: Option<Field>,
    pub multipliers: Option<RawMultipliers>,
    /// Feasible reference; computed by [`compatibility`] when absent.
    pub reference: Option<Field>,
}

/// PHR inequality term `(max(0, nu + rho c)^2 - nu^2) / (2 rho)` and the updated
/// multiplier. `rho = 0` gives the plain Lagrangian.
fn phr_inequality(nu: f64, c: f64, rho: f64) -> (f64, f64) {
    if rho > 0.0 {
        let t = (nu + rho * c).max(0.0);
        ((t * t - nu * nu) / (2.0 * rho), t)
    } else if nu > 0.0 {
        (nu * c, nu)
    } else {
        (0.0, 0.0)
    }
}

fn phr_equality(nu: f64, c: f64, rho: f64) -> (f64, f64) {
    (nu * c + 0.5 * rho * c * c, nu + rho * c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Target {
    Energy,
    CapOnly,
    Nothing,
}

#[derive(Debug, Clone)]
struct AlState {
    nu: DualElement,
    mu: f64,
    rho_rows: Vec<f64>,
    rho_cap: f64,
    scale: f64,
}

impl AlState {
    fn rescale_objective(&mut self, factor: f64) {
        self.mu *= factor;
        self.rho_cap *= factor;
        self.nu.values_mut().for_each(|v| *v *= factor);
        self.rho_rows.iter_mut().for_each(|r| *r *= factor);
    }
}

struct Lagrangian<'a> {
    problem: &'a Problem,
    mesh: &'a Mesh,
    p: f64,
    target: Target,
    al: &'a AlState,
}

struct Terms {
    value: f64,
    /// Updated row multipliers `nu~`.
    nu: DualElement,
    /// Updated cap multiplier `mu~`.
    mu: f64,
}

impl Lagrangian<'_> {
    fn cap_active(&self) -> bool {
        self.target == Target::Energy && self.problem.has_cap()
    }

    fn eval(&self, s: &Samples, mut cot: Option<&mut Cotangent>) -> Result<Terms> {
        let pb = self.problem;
        let p = self.p;
        let mut value = match self.target {
            Target::Energy => functionals::scaled_power(&pb.f, self.mesh, s, p, self.al.scale, 1.0, cot.as_deref_mut()),
            // the nodal cap term needs the field and is added in `oracle`
            Target::CapOnly | Target::Nothing => 0.0,
        };
        let mut mu = 0.0;
        if self.cap_active() {
            let g = pb.g_or_zero();
            let gv = functionals::scaled_power(g, self.mesh, s, p, pb.cap, 0.0, None);
            let (term, m) = phr_inequality(self.al.mu, gv - 1.0 / p, self.al.rho_cap);
            value += term;
            mu = m;
            if m > 0.0 {
                if let Some(c) = cot.as_deref_mut() {
                    functionals::scaled_power(g, self.mesh, s, p, pb.cap, m, Some(c));
                }
            }
        }
        let rows = constraints::underlying_rows(&pb.constraints, self.mesh, s)?;
        let weights = rows.weights(self.mesh);
        let mut nu = rows.clone();
        let mut k = 0;
        for (bi, (block, nb)) in rows.blocks.iter().zip(nu.blocks.iter_mut()).enumerate() {
            let rho = self.al.rho_rows[bi];
            let old = &self.al.nu.blocks[bi].values;
            for (r, &c) in block.values.iter().enumerate() {
                let (term, m) =
                    if block.equality { phr_equality(old[r], c, rho) } else { phr_inequality(old[r], c, rho) };
                value += weights[k] * term;
                nb.values[r] = m;
                k += 1;
            }
        }
        if let Some(c) = cot {
            constraints::underlying_vjp(&pb.constraints, self.mesh, s, &nu, c);
        }
        Ok(Terms { value, nu, mu })
    }

    /// Curvature-weighted preconditioner at `field`, if one can be formed.
    fn preconditioner(&self, field: &Field) -> Option<precond::BandedCholesky> {
        let pb = self.problem;
        let s = self.mesh.sample(field).ok()?;
        let n = self.mesh.n_quad();
        let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
        let p = self.p;
        match self.target {
            Target::Energy => functionals::power_curvature(&pb.f, self.mesh, &s, p, self.al.scale, 1.0, &mut a, &mut b),
            // the nodal cap power has a diagonal Hessian; a quadrature-based
            // operator is a poor match and the identity does better
            Target::CapOnly => return None,
            Target::Nothing => {}
        }
        if self.cap_active() {
            let terms = self.eval(&s, None).ok()?;
            functionals::power_curvature(pb.g_or_zero(), self.mesh, &s, p, pb.cap, terms.mu, &mut a, &mut b);
        }
        precond::build(self.mesh, field.components(), &a, &b)
    }

    /// Value and free-node gradient, for the inner minimizer.
    fn oracle(&self, field: &mut Field, free: &[f64], grad: &mut [f64]) -> f64 {
        field.set_free(self.mesh, free);
        let nc = field.components();
        let s = match self.mesh.sample(field) {
            Ok(s) => s,
            Err(_) => return f64::NAN,
        };
        let mut cot = Cotangent::zeros(self.mesh, nc);
        let terms = match self.eval(&s, Some(&mut cot)) {
            Ok(t) => t,
            Err(_) => return f64::NAN,
        };
        match cot.scatter(self.mesh, nc) {
            Ok(g) => grad.copy_from_slice(&g.free_values(self.mesh)),
            Err(_) => return f64::NAN,
        }
        if self.target == Target::CapOnly {
            return terms.value + nodal_cap_power(self.problem, self.mesh, field, self.p, Some(grad));
        }
        terms.value
    }
}

/// Augmented Lagrangian value for the problem at `u`, with multipliers
/// `raw` (using its scales) and penalty `penalty >= 0` on every block.
pub fn scaled_lagrangian(
    problem: &Problem,
    mesh: &Mesh,
    u: &Field,
    p: f64,
    raw: &RawMultipliers,
    penalty: f64,
) -> Result<f64> {
    let s = mesh.sample(u)?;
    density_values(&problem.f, mesh, &s)?;
    let rows = constraints::underlying_rows(&problem.constraints, mesh, &s)?;
    let nu = if raw.psi.is_empty() && !rows.is_empty() {
        rows.zeros_like()
    } else if raw.psi.has_same_layout(&rows) {
        let mut nu = raw.psi.clone();
        nu.values_mut().for_each(|v| *v = -*v);
        nu
    } else {
        return Err(Error::KindMismatch("multiplier layout does not match the constraints".into()));
    };
    let al = AlState {
        rho_rows: vec![penalty; nu.blocks.len()],
        nu,
        mu: raw.mu,
        rho_cap: penalty,
        scale: raw.objective_scale,
    };
    let lag = Lagrangian { problem, mesh, p, target: Target::Energy, al: &al };
    let terms = lag.eval(&s, None)?;
    // lambda scales the objective part only
    let obj = functionals::scaled_power(&problem.f, mesh, &s, p, raw.objective_scale, 0.0, None);
    Ok(terms.value + (raw.lambda - 1.0) * obj)
}

struct OuterResult {
    field: Field,
    outer_iters: usize,
    inner_iters: usize,
    converged: bool,
    descent_ok: bool,
    violation: f64,
    cap_violation: f64,
}

fn energy(problem: &Problem, mesh: &Mesh, s: &Samples, p: f64) -> Result<(f64, f64)> {
    let fv = density_values(&problem.f, mesh, s)?;
    Ok((normalized_lp(&fv, mesh, p), sup_value(&fv)))
}

/// `(F_p(u), G_p(u))`, with `G_p = 0` when the problem has no cap.
pub fn energies(problem: &Problem, mesh: &Mesh, field: &Field, p: f64) -> Result<(f64, f64)> {
    check_p(p)?;
    let s = mesh.sample(field)?;
    Ok((energy(problem, mesh, &s, p)?.0, cap_energy(problem, mesh, &s, p)?.0))
}

fn cap_energy(problem: &Problem, mesh: &Mesh, s: &Samples, p: f64) -> Result<(f64, f64)> {
    match &problem.g {
        Some(g) => {
            let gv = density_values(g, mesh, s)?;
            Ok((normalized_lp(&gv, mesh, p), sup_value(&gv)))
        }
        None => Ok((0.0, 0.0)),
    }
}

/// `(1/q) mean_n (g(x_n, u_n) / G)^q` over all mesh nodes, adding its
/// gradient to `grad` (free-node layout). For a P1 field and `g` convex in
/// `eta` the nodes carry the sup; one-point quadrature alone would let a
/// sawtooth with constant cell averages pass as flat.
fn nodal_cap_power(problem: &Problem, mesh: &Mesh, field: &Field, q: f64, grad: Option<&mut [f64]>) -> f64 {
    let g = problem.g_or_zero();
    let nc = field.components();
    let inv = 1.0 / mesh.n_nodes() as f64;
    let cap = problem.cap;
    let zero_grad = vec![0.0; nc * mesh.dim()];
    let node_term = |node: usize, d_eta: Option<&mut [f64]>| {
        let x = mesh.node_coords(node);
        let eta = field.node(node);
        let r = g.value(&x[..mesh.dim()], eta, &zero_grad) / cap;
        if let Some(d) = d_eta {
            let mut p_d = vec![0.0; nc * mesh.dim()];
            g.derivative(&x[..mesh.dim()], eta, &zero_grad, d, &mut p_d);
            let k = inv * r.powf(q - 1.0) / cap;
            d.iter_mut().for_each(|v| *v *= k);
        }
        inv * r.powf(q) / q
    };
    let value = (0..mesh.n_nodes()).map(|n| node_term(n, None)).sum();
    if let Some(grad) = grad {
        let mut d = vec![0.0; nc];
        for (k, &node) in mesh.free_nodes().iter().enumerate() {
            node_term(node, Some(&mut d));
            grad[k * nc..(k + 1) * nc].iter_mut().zip(&d).for_each(|(a, b)| *a += b);
        }
    }
    value
}

/// Sup of `g(x, u)` over quadrature points and nodes.
fn cap_sup(problem: &Problem, mesh: &Mesh, field: &Field) -> Result<f64> {
    let Some(g) = &problem.g else { return Ok(0.0) };
    let quad = sup_value(&density_values(g, mesh, &mesh.sample(field)?)?);
    let zero_grad = vec![0.0; field.components() * mesh.dim()];
    let nodal = (0..mesh.n_nodes())
        .map(|n| g.value(&mesh.node_coords(n)[..mesh.dim()], field.node(n), &zero_grad))
        .fold(0.0, f64::max);
    Ok(quad.max(nodal))
}

fn block_violations(rows: &DualElement) -> Vec<f64> {
    rows.blocks
        .iter()
        .map(|b| {
            b.values
                .iter()
                .map(|&v| if b.equality { v.abs() } else { v.max(0.0) })
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Inner iterations between preconditioner rebuilds.
const PRECOND_CHUNK: usize = 400;

/// Runs the inner minimizer in chunks, refreshing the preconditioner from the
/// current iterate between chunks.
fn preconditioned_inner(lag: &Lagrangian, scratch: &mut Field, x0: Vec<f64>, opts: &InnerOptions) -> InnerResult {
    let mut x = x0;
    let mut iterations = 0;
    let mut evaluations = 0;
    loop {
        scratch.set_free(lag.mesh, &x);
        let pc = lag.preconditioner(scratch);
        let chunk = InnerOptions { max_iter: PRECOND_CHUNK.min(opts.max_iter - iterations), ..opts.clone() };
        let apply = |v: &[f64]| pc.as_ref().map_or_else(|| v.to_vec(), |c| c.solve(v));
        let r = inner_minimize_preconditioned(|x, g| lag.oracle(scratch, x, g), x, &chunk, Some(&apply));
        iterations += r.iterations;
        evaluations += r.evaluations;
        if r.converged || r.iterations < chunk.max_iter || iterations >= opts.max_iter {
            return InnerResult { iterations, evaluations, ..r };
        }
        x = r.x;
    }
}

fn augmented_solve(
    problem: &Problem,
    mesh: &Mesh,
    p: f64,
    target: Target,
    cfg: &SolveConfig,
    start: Field,
    al: &mut AlState,
) -> Result<OuterResult> {
    let mut field = start;
    let opts = InnerOptions { tol: cfg.inner_tol, max_iter: cfg.max_inner, memory: cfg.memory };
    let mut prev_progress: Option<(Vec<f64>, f64)> = None;
    let mut inner_iters = 0;
    let mut descent_ok = true;
    let mut last = (f64::INFINITY, f64::INFINITY);
    let f_first = match target {
        Target::Energy => energy(problem, mesh, &mesh.sample(&field)?, p)?.0,
        _ => 0.0,
    };
    let scale_ok = |f_now: f64, scale: f64| {
        f_now <= 1e-14 * f_first || (0.5..=2.0).contains(&(f_now / scale))
    };
    for k in 0..cfg.max_outer {
        if target == Target::Energy {
            let f_now = energy(problem, mesh, &mesh.sample(&field)?, p)?.0;
            if f_now > 0.0 && !scale_ok(f_now, al.scale) {
                let factor = ((al.scale.ln() - f_now.ln()) * p).exp();
                if factor.is_finite() && factor > 0.0 {
                    // a reset from a poor start must not leave the penalty ill-conditioned
                    let caps: Vec<f64> = al.rho_rows.iter().map(|r| r.max(cfg.penalty_init)).collect();
                    let cap_cap = al.rho_cap.max(cfg.penalty_init);
                    al.rescale_objective(factor);
                    al.rho_rows.iter_mut().zip(caps).for_each(|(r, c)| *r = r.min(c));
                    al.rho_cap = al.rho_cap.min(cap_cap);
                } else {
                    al.rescale_objective(0.0);
                    al.rho_cap = cfg.penalty_init;
                    al.rho_rows.iter_mut().for_each(|r| *r = cfg.penalty_init);
                }
                al.scale = f_now;
            }
        }
        let lag = Lagrangian { problem, mesh, p, target, al };
        let cap_active = lag.cap_active();
        let mut scratch = field.clone();
        let x0 = field.free_values(mesh);
        let mut g0 = vec![0.0; x0.len()];
        let start_value = lag.oracle(&mut scratch, &x0, &mut g0);
        let inner = preconditioned_inner(&lag, &mut scratch, x0, &opts);
        inner_iters += inner.iterations;
        if inner.value > start_value + cfg.inner_tol * start_value.abs().max(1.0) {
            descent_ok = false;
        }
        field.set_free(mesh, &inner.x);

        let s = mesh.sample(&field)?;
        let terms = lag.eval(&s, None)?;
        let rows = constraints::underlying_rows(&problem.constraints, mesh, &s)?;
        let viol = block_violations(&rows);
        let row_viol = viol.iter().copied().fold(0.0, f64::max);
        let (g_p, _) = cap_energy(problem, mesh, &s, p)?;
        let cap_viol = if cap_active { (g_p - problem.cap).max(0.0) } else { 0.0 };
        // PHR progress measure |nu_new - nu_old| / rho: covers both violation and complementarity
        let progress: Vec<f64> = terms
            .nu
            .blocks
            .iter()
            .zip(&al.nu.blocks)
            .zip(&al.rho_rows)
            .map(|((new, old), &rho)| {
                let d = new.values.iter().zip(&old.values).fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()));
                if rho > 0.0 { d / rho } else { 0.0 }
            })
            .collect();
        let cap_progress =
            if cap_active && al.rho_cap > 0.0 { (terms.mu - al.mu).abs() / al.rho_cap } else { 0.0 };
        al.nu = terms.nu;
        if cap_active {
            al.mu = terms.mu;
        }

        let compl = complementarity(problem, mesh, &s, p, target, al, &rows, g_p)?;
        last = (row_viol, cap_viol);
        let scaled = target != Target::Energy || {
            let f_end = energy(problem, mesh, &s, p)?.0;
            f_end == 0.0 || scale_ok(f_end, al.scale)
        };
        if scaled && inner.converged && row_viol <= cfg.outer_tol && cap_viol <= cfg.outer_tol && compl <= cfg.outer_tol {
            return Ok(OuterResult {
                field,
                outer_iters: k + 1,
                inner_iters,
                converged: true,
                descent_ok,
                violation: row_viol,
                cap_violation: cap_viol,
            });
        }
        if let Some((pv, pc)) = &prev_progress {
            for (b, (&v, &old)) in progress.iter().zip(pv).enumerate() {
                if v > cfg.outer_tol && v > 0.25 * old {
                    al.rho_rows[b] *= cfg.penalty_growth;
                }
            }
            if cap_progress > cfg.outer_tol && cap_progress > 0.25 * pc {
                al.rho_cap *= cfg.penalty_growth;
            }
        }
        prev_progress = Some((progress, cap_progress));
    }
    Ok(OuterResult {
        field,
        outer_iters: cfg.max_outer,
        inner_iters,
        converged: false,
        descent_ok,
        violation: last.0,
        cap_violation: last.1,
    })
}

/// Scale-free complementarity measure: normalized multipliers times the
/// distance of their inequality from activity.
#[allow(clippy::too_many_arguments)]
fn complementarity(
    problem: &Problem,
    mesh: &Mesh,
    s: &Samples,
    p: f64,
    target: Target,
    al: &AlState,
    rows: &DualElement,
    g_p: f64,
) -> Result<f64> {
    let f_p = match target {
        Target::Energy => energy(problem, mesh, s, p)?.0,
        _ => 0.0,
    };
    let raw = raw_multipliers(problem, al, if target == Target::Energy { 1.0 } else { 0.0 });
    let res = match kkt::rescale(&raw, f_p, g_p, p) {
        Ok(r) => r,
        Err(_) => return Ok(0.0),
    };
    let mut worst = 0.0f64;
    for (pb, rb) in res.psi.blocks.iter().zip(&rows.blocks) {
        if rb.equality {
            continue;
        }
        for (psi, c) in pb.values.iter().zip(&rb.values) {
            worst = worst.max((psi * c).abs());
        }
    }
    if target == Target::Energy && problem.has_cap() {
        worst = worst.max(res.m * (g_p - problem.cap).abs());
    }
    Ok(worst)
}

fn raw_multipliers(problem: &Problem, al: &AlState, lambda: f64) -> RawMultipliers {
    let mut psi = al.nu.clone();
    psi.values_mut().for_each(|v| *v = -*v);
    RawMultipliers {
        lambda,
        mu: if problem.has_cap() { al.mu } else { 0.0 },
        psi,
        objective_scale: al.scale,
        cap_scale: if problem.has_cap() { problem.cap } else { 1.0 },
    }
}

fn fresh_al(problem: &Problem, mesh: &Mesh, cfg: &SolveConfig, field: &Field) -> Result<AlState> {
    let s = mesh.sample(field)?;
    let mut nu = constraints::underlying_rows(&problem.constraints, mesh, &s)?;
    nu.values_mut().for_each(|v| *v = cfg.multiplier_init);
    Ok(AlState {
        rho_rows: vec![cfg.penalty_init; nu.blocks.len()],
        nu,
        mu: cfg.multiplier_init,
        rho_cap: cfg.penalty_init,
        scale: 1.0,
    })
}

fn check_p(p: f64) -> Result<()> {
    if p >= 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidExponent(p))
    }
}

/// Finds a feasible reference field `u0` with `Q(u0) = 0` and `G_inf(u0) < G`.
///
/// With a cap this minimizes the nodal `G_q` over the constraint set
/// (`q = max(p, 16)`); otherwise it only restores feasibility.
pub fn compatibility(problem: &Problem, mesh: &Mesh, p: f64, cfg: &SolveConfig, start: Option<&Field>) -> Result<Field> {
    problem.validate(mesh)?;
    cfg.validate()?;
    check_p(p)?;
    let nc = problem.components;
    let strict_cap = |field: &Field| -> Result<()> {
        if !problem.has_cap() {
            return Ok(());
        }
        let g_inf = cap_sup(problem, mesh, field)?;
        if g_inf < problem.cap {
            Ok(())
        } else {
            Err(Error::Infeasible(format!(
                "smallest reachable G_inf is {g_inf:.6e}, not below the cap G = {:.6e}",
                problem.cap
            )))
        }
    };
    if problem.constraints.is_empty() {
        let zero = Field::zeros(mesh, nc);
        strict_cap(&zero)?;
        return Ok(zero);
    }
    let init = match start {
        Some(f) => {
            f.validate(mesh)?;
            f.clone()
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            Field::from_fn(mesh, nc, |_, out| out.iter_mut().for_each(|v| *v = 1e-2 * rng.gen_range(-1.0..1.0)))
        }
    };
    let mut al = fresh_al(problem, mesh, cfg, &init)?;
    let out = if problem.has_cap() {
        // doubling q from 2: the nodal power is nearly flat near zero for large q
        let q_end = p.max(16.0);
        let mut q = 2.0f64;
        let mut field = init;
        loop {
            let out = augmented_solve(problem, mesh, q.min(q_end), Target::CapOnly, cfg, field, &mut al)?;
            if q >= q_end {
                break out;
            }
            field = out.field;
            q *= 2.0;
        }
    } else {
        augmented_solve(problem, mesh, p, Target::Nothing, cfg, init, &mut al)?
    };
    if out.violation > cfg.outer_tol {
        return Err(Error::Infeasible(format!(
            "constraint violation {:.6e} exceeds outer_tol {:.1e}",
            out.violation, cfg.outer_tol
        )));
    }
    strict_cap(&out.field)?;
    Ok(out.field)
}

/// Solves the finite-p problem from the warm start (or the feasible reference).
pub fn solve_p(problem: &Problem, mesh: &Mesh, p: f64, cfg: &SolveConfig, warm: &WarmStart) -> Result<SolveState> {
    let started = Instant::now();
    problem.validate(mesh)?;
    cfg.validate()?;
    check_p(p)?;
    let reference = match &warm.reference {
        Some(r) => {
            r.validate(mesh)?;
            r.clone()
        }
        None => compatibility(problem, mesh, p, cfg, warm.field.as_ref())?,
    };
    let start = match &warm.field {
        Some(f) => {
            f.validate(mesh)?;
            if f.components() != problem.components {
                return Err(Error::ShapeMismatch {
                    expected: format!("{} components", problem.components),
                    actual: f.components().to_string(),
                });
            }
            f.clone()
        }
        None => reference.clone(),
    };
    let mut al = fresh_al(problem, mesh, cfg, &start)?;
    if let Some(m) = &warm.multipliers {
        if m.psi.has_same_layout(&al.nu) {
            al.nu = m.psi.clone();
            al.nu.values_mut().for_each(|v| *v = -*v);
            al.mu = m.mu;
        }
    }
    let f_start = energy(problem, mesh, &mesh.sample(&start)?, p)?.0;
    al.scale = if f_start > 0.0 { f_start } else { 1.0 };

    let out = augmented_solve(problem, mesh, p, Target::Energy, cfg, start, &mut al)?;
    let field = out.field;
    let s = mesh.sample(&field)?;
    let (f_p, f_inf) = energy(problem, mesh, &s, p)?;
    let (g_p, g_inf) = cap_energy(problem, mesh, &s, p)?;
    let f_p_reference = energy(problem, mesh, &mesh.sample(&reference)?, p)?.0;
    let feasibility = constraints::eval_Q(&problem.constraints, &field, mesh)?.norm(mesh);
    let raw = raw_multipliers(problem, &al, 1.0);
    let rescaled = kkt::rescale(&raw, f_p, g_p, p)?;
    let kkt = kkt::kkt_residual(problem, mesh, &field, p, &rescaled)?;
    let slack = if problem.has_cap() { kkt::slackness(rescaled.m, g_p, problem.cap) } else { 0.0 };

    let mut checks = Vec::new();
    let tol_f = 1e-12 * (1.0 + f_p);
    for q in [1.0, 0.5 * p] {
        if q >= 1.0 && q < p {
            let f_q = normalized_lp(&density_values(&problem.f, mesh, &s)?, mesh, q);
            checks.push(Check::new(
                format!("holder_F_{q}_le_F_p"),
                f_q <= f_p + tol_f,
                format!("F_{q} = {f_q:.16e}, F_p = {f_p:.16e}"),
            ));
        }
    }
    let tol_ref = 1e-6 * (1.0 + f_p_reference);
    checks.push(Check::new(
        "minimality_vs_reference",
        f_p <= f_p_reference + tol_ref,
        format!("F_p(u_p) = {f_p:.16e}, F_p(u0) = {f_p_reference:.16e}"),
    ));
    checks.push(Check::new(
        "feasibility",
        out.violation <= cfg.outer_tol && feasibility <= cfg.outer_tol,
        format!("row violation {:.3e}, |Q| = {feasibility:.3e}", out.violation),
    ));
    checks.push(Check::new(
        "cap",
        g_p - problem.cap <= cfg.outer_tol,
        format!("G_p - G = {:.3e}", g_p - problem.cap),
    ));
    checks.push(Check::new("descent", out.descent_ok, "augmented Lagrangian nonincreasing per outer step"));
    checks.push(Check::new("converged", out.converged, format!("{} outer iterations", out.outer_iters)));

    Ok(SolveState {
        p,
        field,
        reference,
        f_p,
        f_inf,
        g_p,
        g_inf,
        cap: problem.cap,
        f_p_reference,
        raw,
        rescaled,
        feasibility,
        violation: out.violation,
        cap_violation: out.cap_violation,
        kkt,
        slack,
        outer_iters: out.outer_iters,
        inner_iters: out.inner_iters,
        converged: out.converged,
        descent_ok: out.descent_ok,
        checks,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}
