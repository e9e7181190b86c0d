//! Independent ground truth for tiny instances: exhaustive search, closed-form
//! 1D profiles and finite-difference gradient checks.
//!
//! Nothing here calls the solver's sampling or Lp code. Cells, point values
//! and gradients are rebuilt from the grid geometry, and the Lp average is
//! summed in the log domain.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constraints::{ConstraintSpec, IntegrandH, PointwiseMap, Relation, SetKind};
use crate::error::{Error, Result};
use crate::functionals::Density;
use crate::mesh::{Field, Mesh};
use crate::solver::Problem;

/// Largest number of unknowns and grid points the oracle accepts.
pub const MAX_DOFS: usize = 6;
pub const MAX_GRID_POINTS: u64 = 10_000_000;
/// Constraint-norm tolerance for rejection.
pub const FEAS_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub enum SearchSpace {
    /// `resolution` equispaced values in `[lo, hi]` for every unknown.
    Grid { lo: f64, hi: f64, resolution: usize },
    /// `count` uniform random starts in `[lo, hi]^n`, each polished.
    Multistart { lo: f64, hi: f64, count: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct OracleProblem {
    pub problem: Problem,
    pub mesh: Mesh,
    pub search: SearchSpace,
}

impl OracleProblem {
    pub fn new(problem: Problem, mesh: Mesh, search: SearchSpace) -> Result<OracleProblem> {
        problem.validate(&mesh)?;
        let n = mesh.free_nodes().len() * problem.components;
        let mut errs = Vec::new();
        if n == 0 || n > MAX_DOFS {
            errs.push(format!("oracle needs 1..={MAX_DOFS} unknowns, instance has {n}"));
        }
        match &search {
            SearchSpace::Grid { lo, hi, resolution } => {
                if !(lo < hi) {
                    errs.push(format!("empty search range [{lo}, {hi}]"));
                }
                if *resolution < 2 {
                    errs.push("grid resolution must be at least 2".into());
                }
                let points = (*resolution as u64).checked_pow(n as u32).unwrap_or(u64::MAX);
                if points > MAX_GRID_POINTS {
                    errs.push(format!("grid has {points} points, limit {MAX_GRID_POINTS}"));
                }
            }
            SearchSpace::Multistart { lo, hi, count, .. } => {
                if !(lo < hi) {
                    errs.push(format!("empty search range [{lo}, {hi}]"));
                }
                if *count == 0 {
                    errs.push("multistart count must be positive".into());
                }
            }
        }
        if errs.is_empty() {
            Ok(OracleProblem { problem, mesh, search })
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    /// `F_p` of the best feasible point.
    pub value: f64,
    pub field: Field,
    pub evaluated: u64,
    pub feasible: u64,
}

struct Cell {
    nodes: Vec<usize>,
    x: [f64; 2],
    w: f64,
    /// `d u / d x_a = sum_l coef[l][a] u[nodes[l]]`
    coef: Vec<[f64; 2]>,
}

/// Cell geometry rebuilt from the grid description.
struct Kernel {
    dim: usize,
    nc: usize,
    n_nodes: usize,
    free: Vec<usize>,
    measure: f64,
    cells: Vec<Cell>,
}

impl Kernel {
    fn new(mesh: &Mesh, nc: usize) -> Kernel {
        let dim = mesh.dim();
        let (lo, h, n) = (mesh.lower(), mesh.h(), mesh.cells());
        let mut cells = Vec::new();
        if dim == 1 {
            for i in 0..n[0] {
                cells.push(Cell {
                    nodes: vec![i, i + 1],
                    x: [lo[0] + (i as f64 + 0.5) * h[0], 0.0],
                    w: h[0],
                    coef: vec![[-1.0 / h[0], 0.0], [1.0 / h[0], 0.0]],
                });
            }
        } else {
            let id = |i: usize, j: usize| j * (n[0] + 1) + i;
            let (hx, hy) = (h[0], h[1]);
            for j in 0..n[1] {
                for i in 0..n[0] {
                    let (x0, y0) = (lo[0] + i as f64 * hx, lo[1] + j as f64 * hy);
                    // triangles on either side of the (0,0)-(1,1) diagonal
                    cells.push(Cell {
                        nodes: vec![id(i, j), id(i + 1, j), id(i + 1, j + 1)],
                        x: [x0 + 2.0 * hx / 3.0, y0 + hy / 3.0],
                        w: 0.5 * hx * hy,
                        coef: vec![[-1.0 / hx, 0.0], [1.0 / hx, -1.0 / hy], [0.0, 1.0 / hy]],
                    });
                    cells.push(Cell {
                        nodes: vec![id(i, j), id(i + 1, j + 1), id(i, j + 1)],
                        x: [x0 + hx / 3.0, y0 + 2.0 * hy / 3.0],
                        w: 0.5 * hx * hy,
                        coef: vec![[0.0, -1.0 / hy], [1.0 / hx, 0.0], [-1.0 / hx, 1.0 / hy]],
                    });
                }
            }
        }
        Kernel { dim, nc, n_nodes: mesh.n_nodes(), free: mesh.free_nodes().to_vec(), measure: mesh.measure(), cells }
    }

    fn nodal(&self, dofs: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.n_nodes * self.nc];
        for (k, &node) in self.free.iter().enumerate() {
            u[node * self.nc..(node + 1) * self.nc].copy_from_slice(&dofs[k * self.nc..(k + 1) * self.nc]);
        }
        u
    }

    /// Calls `f(cell, eta, grad)` with the point value and gradient on each cell.
    fn each<F: FnMut(&Cell, &[f64], &[f64])>(&self, u: &[f64], mut f: F) {
        let (nc, dim) = (self.nc, self.dim);
        let mut eta = vec![0.0; nc];
        let mut grad = vec![0.0; nc * dim];
        for cell in &self.cells {
            let k = cell.nodes.len() as f64;
            for c in 0..nc {
                eta[c] = cell.nodes.iter().map(|&v| u[v * nc + c]).sum::<f64>() / k;
                for a in 0..dim {
                    grad[c * dim + a] = cell.nodes.iter().zip(&cell.coef).map(|(&v, co)| co[a] * u[v * nc + c]).sum();
                }
            }
            f(cell, &eta, &grad);
        }
    }

    /// Normalized Lp norm of a density, via log-sum-exp.
    fn lp<D: Density + ?Sized>(&self, d: &D, u: &[f64], p: f64) -> f64 {
        let mut logs = Vec::with_capacity(self.cells.len());
        let mut sup: f64 = 0.0;
        self.each(u, |cell, eta, grad| {
            let v = d.value(&cell.x[..self.dim], eta, grad);
            sup = sup.max(v);
            logs.push(((cell.w / self.measure).ln(), v.ln()));
        });
        if sup == 0.0 || p.is_infinite() {
            return sup;
        }
        let peak = logs.iter().map(|(lw, lv)| lw + p * lv).fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = logs.iter().map(|(lw, lv)| (lw + p * lv - peak).exp()).sum();
        ((peak + s.ln()) / p).exp()
    }

    fn integral(&self, h: &IntegrandH, u: &[f64]) -> f64 {
        let mut total = 0.0;
        self.each(u, |cell, eta, grad| {
            let v = match h {
                IntegrandH::Component { index, scale } => scale * eta[*index],
                IntegrandH::Dirichlet => grad.iter().map(|g| g * g).sum(),
                IntegrandH::SquaredValue => eta.iter().map(|e| e * e).sum(),
            };
            total += cell.w * v;
        });
        total
    }
}

fn pointwise(map: &PointwiseMap, x: &[f64], eta: &[f64]) -> f64 {
    match map {
        PointwiseMap::Linear { coeffs, offset } => coeffs.iter().zip(eta).map(|(a, e)| a * e).sum::<f64>() + offset,
        PointwiseMap::SphereGap { radius } => eta.iter().map(|e| e * e).sum::<f64>() - radius * radius,
        PointwiseMap::LowerObstacle { component, height } => height.eval(x) - eta[*component],
        PointwiseMap::UpperObstacle { component, height } => eta[*component] - height.eval(x),
    }
}

struct Evaluator<'a> {
    op: &'a OracleProblem,
    k: Kernel,
    p: f64,
    /// Isoperimetric constraint used for projection, if any.
    proj: Option<(IntegrandH, f64, Relation)>,
    /// `H` of the unit shift of the projected component (linear integrands).
    shift_gain: f64,
}

impl Evaluator<'_> {
    fn objective(&self, u: &[f64]) -> f64 {
        self.k.lp(&self.op.problem.f, u, self.p)
    }

    /// Every constraint as rows `r <= 0`: the cap, pointwise rows per cell
    /// (equations as two opposite rows) and integral rows.
    fn rows(&self, u: &[f64]) -> Vec<f64> {
        let pb = &self.op.problem;
        let mut out = Vec::new();
        if pb.has_cap() {
            if let Some(g) = &pb.g {
                out.push(self.k.lp(g, u, self.p) - pb.cap);
            }
        }
        for spec in &pb.constraints {
            match spec {
                ConstraintSpec::Isoperimetric { h, bound, relation } => {
                    let c = self.k.integral(h, u) - bound;
                    match relation {
                        Relation::Le => out.push(c),
                        Relation::Ge => out.push(-c),
                        Relation::Eq => out.extend([c, -c]),
                    }
                }
                _ => self.k.each(u, |cell, eta, _| {
                    let x = &cell.x[..self.k.dim];
                    match spec {
                        ConstraintSpec::Holonomic(m) => {
                            let v = pointwise(m, x, eta);
                            out.extend([v, -v]);
                        }
                        ConstraintSpec::Unilateral(m) => out.push(pointwise(m, x, eta)),
                        ConstraintSpec::Inclusion(SetKind::Ball { radius }) => {
                            out.push(eta.iter().map(|e| e * e).sum::<f64>().sqrt() - radius)
                        }
                        ConstraintSpec::Inclusion(SetKind::Box { lower, upper }) => {
                            for (i, e) in eta.iter().enumerate() {
                                out.extend([e - upper[i], lower[i] - e]);
                            }
                        }
                        ConstraintSpec::Isoperimetric { .. } => {}
                    }
                }),
            }
        }
        out
    }

    /// Largest violation over the cap and every constraint.
    fn violation(&self, u: &[f64]) -> f64 {
        self.rows(u).into_iter().fold(0.0, f64::max)
    }

    /// Row values at `dofs` and their central-difference Jacobian (`rows x n`).
    fn row_jacobian(&self, dofs: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let r0 = self.rows(&self.k.nodal(dofs));
        let n = dofs.len();
        let mut jac = DMatrix::zeros(r0.len(), n);
        let mut y = dofs.to_vec();
        for i in 0..n {
            let h = 1e-7 * dofs[i].abs().max(1.0);
            y[i] = dofs[i] + h;
            let rp = self.rows(&self.k.nodal(&y));
            y[i] = dofs[i] - h;
            let rm = self.rows(&self.k.nodal(&y));
            y[i] = dofs[i];
            for j in 0..r0.len() {
                jac[(j, i)] = (rp[j] - rm[j]) / (2.0 * h);
            }
        }
        (r0, jac)
    }

    /// Moves `dofs` onto `int h = bound` of the projection constraint.
    fn project(&self, dofs: &[f64]) -> Option<Vec<f64>> {
        let (h, bound, _) = self.proj.as_ref()?;
        let u = self.k.nodal(dofs);
        let now = self.k.integral(h, &u);
        match h {
            IntegrandH::Component { index, .. } => {
                if self.shift_gain == 0.0 {
                    return None;
                }
                let t = (bound - now) / self.shift_gain;
                let nc = self.k.nc;
                Some(dofs.iter().enumerate().map(|(i, v)| if i % nc == *index { v + t } else { *v }).collect())
            }
            IntegrandH::Dirichlet | IntegrandH::SquaredValue => {
                if now > 0.0 && *bound >= 0.0 {
                    let t = (bound / now).sqrt();
                    Some(dofs.iter().map(|v| t * v).collect())
                } else {
                    None
                }
            }
        }
    }

    /// Objective of a candidate if it is feasible.
    fn score(&self, dofs: &[f64]) -> Option<f64> {
        let u = self.k.nodal(dofs);
        (self.violation(&u) <= FEAS_TOL).then(|| self.objective(&u))
    }

    fn candidate(&self, dofs: &[f64], projected: bool) -> Option<(f64, Vec<f64>)> {
        let x = if projected { self.project(dofs)? } else { dofs.to_vec() };
        self.score(&x).map(|v| (v, x))
    }

    /// Opportunistic pattern search. Polls coordinate, pairwise and seeded
    /// random directions, plus generators of the tangent cone of the rows that
    /// are active within the current step; trial points are pulled back onto
    /// violated active rows by a Gauss-Newton step. The step halves when no
    /// direction improves.
    fn polish(&self, mut x: Vec<f64>, mut fx: f64, projected: bool, step0: f64, seed: u64) -> (f64, Vec<f64>) {
        let n = x.len();
        let mut base: Vec<DVector<f64>> = Vec::new();
        for i in 0..n {
            for s in [1.0, -1.0] {
                base.push(DVector::from_fn(n, |k, _| if k == i { s } else { 0.0 }));
            }
            for j in i + 1..n {
                for (a, b) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    base.push(DVector::from_fn(n, |k, _| if k == i { a } else if k == j { b } else { 0.0 }));
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut step = step0;
        let stop = 1e-11 * step0.max(1.0);
        let mut budget: i64 = 400_000;
        let mut local = self.row_jacobian(&x);
        while step > stop && budget > 0 {
            let (r0, jac) = &local;
            let active: Vec<usize> = (0..r0.len())
                .filter(|&j| {
                    let g = jac.row(j).norm();
                    g > 0.0 && r0[j] >= -2.0 * step * g
                })
                .collect();
            let mut dirs = base.clone();
            let mut restore: Option<(Vec<usize>, DMatrix<f64>)> = None;
            if !active.is_empty() {
                let nt = DMatrix::from_fn(active.len(), n, |a, i| jac[(active[a], i)]);
                if let Ok(pinv) = nt.clone().pseudo_inverse(1e-12) {
                    let null = DMatrix::identity(n, n) - &pinv * &nt;
                    for i in 0..n {
                        let z = null.column(i).into_owned();
                        let norm = z.norm();
                        if norm > 1e-8 {
                            dirs.push(&z / norm);
                            dirs.push(-&z / norm);
                        }
                    }
                    for a in 0..active.len() {
                        let v = pinv.column(a).into_owned();
                        let norm = v.norm();
                        if norm > 0.0 {
                            dirs.push(-&v / norm);
                        }
                    }
                    restore = Some((active.clone(), pinv));
                }
            }
            for _ in 0..2 * n {
                let d: DVector<f64> = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
                let norm = d.norm().max(1e-12);
                dirs.push(d / norm);
            }
            let mut improved = false;
            for d in &dirs {
                budget -= 1;
                let mut y: Vec<f64> = x.iter().zip(d.iter()).map(|(a, b)| a + step * b).collect();
                if let Some((act, pinv)) = &restore {
                    for _ in 0..3 {
                        let r = self.rows(&self.k.nodal(&y));
                        let viol = DVector::from_fn(act.len(), |a, _| r[act[a]].max(0.0));
                        if viol.amax() <= 0.1 * FEAS_TOL {
                            break;
                        }
                        let corr = pinv * viol;
                        y.iter_mut().zip(corr.iter()).for_each(|(v, c)| *v -= c);
                    }
                }
                if let Some((fy, y)) = self.candidate(&y, projected) {
                    // sufficient decrease keeps rounding-level gains from cycling
                    if fy < fx - 1e-8 * step * step * fx.abs().max(1.0) {
                        x = y;
                        fx = fy;
                        improved = true;
                        break;
                    }
                }
            }
            if improved {
                local = self.row_jacobian(&x);
            } else {
                step *= 0.5;
            }
        }
        (fx, x)
    }
}

/// Best `(value, grid index)` seen so far in one mode.
type Best = Option<(f64, u64)>;

fn better(a: &(f64, u64), b: &(f64, u64)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Global minimum of `F_p` over the search set of the exact constrained
/// problem, feasibility by rejection at [`FEAS_TOL`]. An isoperimetric
/// constraint is also searched on its boundary by projection (only there
/// for equalities), and the best candidates are polished by pattern search.
pub fn brute_force(op: &OracleProblem, p: f64) -> Result<OracleResult> {
    if !(p >= 1.0) {
        return Err(Error::InvalidExponent(p));
    }
    let nc = op.problem.components;
    let k = Kernel::new(&op.mesh, nc);
    let proj = op.problem.constraints.iter().find_map(|c| match c {
        ConstraintSpec::Isoperimetric { h, bound, relation } => Some((h.clone(), *bound, *relation)),
        _ => None,
    });
    let n = k.free.len() * nc;
    let shift_gain = match &proj {
        Some((h @ IntegrandH::Component { index, .. }, _, _)) => {
            let unit: Vec<f64> = (0..n).map(|i| if i % nc == *index { 1.0 } else { 0.0 }).collect();
            k.integral(h, &k.nodal(&unit))
        }
        _ => 0.0,
    };
    let ev = Evaluator { op, k, p, proj, shift_gain };
    let modes: Vec<bool> = match &ev.proj {
        Some((_, _, Relation::Eq)) => vec![true],
        Some(_) => vec![false, true],
        None => vec![false],
    };

    let mut starts: Vec<(f64, Vec<f64>, bool)> = Vec::new();
    let (evaluated, feasible, step0);
    match &op.search {
        SearchSpace::Grid { lo, hi, resolution } => {
            let r = *resolution as u64;
            let total = r.pow(n as u32);
            let value_at = |i: u64| lo + (hi - lo) * i as f64 / (r - 1) as f64;
            let decode = |mut idx: u64| -> Vec<f64> {
                let mut x = vec![0.0; n];
                for slot in x.iter_mut().rev() {
                    *slot = value_at(idx % r);
                    idx /= r;
                }
                x
            };
            let threads = std::thread::available_parallelism().map_or(1, |t| t.get()).min(16) as u64;
            let chunk = total.div_ceil(threads);
            let ev = &ev;
            let modes = &modes;
            let results: Vec<(Vec<Best>, u64)> = std::thread::scope(|s| {
                let handles: Vec<_> = (0..threads)
                    .map(|t| {
                        s.spawn(move || {
                            let mut best: Vec<Best> = vec![None; modes.len()];
                            let mut feas = 0;
                            for idx in t * chunk..((t + 1) * chunk).min(total) {
                                let x = decode(idx);
                                for (m, &projected) in modes.iter().enumerate() {
                                    if let Some((v, _)) = ev.candidate(&x, projected) {
                                        feas += 1;
                                        if best[m].is_none_or(|b| better(&(v, idx), &b)) {
                                            best[m] = Some((v, idx));
                                        }
                                    }
                                }
                            }
                            (best, feas)
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("oracle worker panicked")).collect()
            });
            let mut best: Vec<Option<(f64, u64)>> = vec![None; modes.len()];
            let mut feas = 0;
            for (b, f) in results {
                feas += f;
                for (m, cand) in b.into_iter().enumerate() {
                    if let Some(c) = cand {
                        if best[m].is_none_or(|cur| better(&c, &cur)) {
                            best[m] = Some(c);
                        }
                    }
                }
            }
            for (m, cand) in best.into_iter().enumerate() {
                if let Some((_, idx)) = cand {
                    if let Some((v, x)) = ev.candidate(&decode(idx), modes[m]) {
                        starts.push((v, x, modes[m]));
                    }
                }
            }
            evaluated = total * modes.len() as u64;
            feasible = feas;
            step0 = (hi - lo) / (r - 1) as f64;
        }
        SearchSpace::Multistart { lo, hi, count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut feas = 0;
            // the zero field is always tried as well
            let mut points = vec![vec![0.0; n]];
            points.extend((0..*count).map(|_| (0..n).map(|_| rng.gen_range(*lo..*hi)).collect::<Vec<f64>>()));
            for x in &points {
                for &projected in &modes {
                    if let Some((v, y)) = ev.candidate(x, projected) {
                        feas += 1;
                        starts.push((v, y, projected));
                    }
                }
            }
            evaluated = (points.len() * modes.len()) as u64;
            feasible = feas;
            step0 = 0.25 * (hi - lo);
        }
    }
    if starts.is_empty() {
        return Err(Error::Infeasible("oracle search set contains no feasible point".into()));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (i, (v, x, projected)) in starts.into_iter().enumerate() {
        let (fv, fx) = ev.polish(x, v, projected, step0, i as u64);
        if best.as_ref().is_none_or(|b| fv < b.0) {
            best = Some((fv, fx));
        }
    }
    let (value, dofs) = best.expect("nonempty");
    let field = Field::from_free(&op.mesh, nc, &dofs)?;
    Ok(OracleResult { value, field, evaluated, feasible })
}

/// Closed form for `min sup|u'|` subject to `sup|u| <= G`, `int u >= V` on
/// `(0, 1)` with zero ends: the optimal slope and its profile on `mesh`.
pub fn analytic_1d_isoperimetric(v: f64, cap: f64, mesh: &Mesh) -> Result<(f64, Field)> {
    unit_interval(mesh)?;
    if !(v >= 0.0) || v.is_infinite() {
        return Err(Error::InvalidConstraint(format!("volume must be finite and nonnegative, got {v}")));
    }
    if !(v < cap) {
        return Err(Error::Infeasible(format!("volume {v} is not below the cap {cap}, while int u <= sup|u|")));
    }
    let s = if 4.0 * v <= 2.0 * cap { 4.0 * v } else { cap * cap / (cap - v) };
    let field = Field::scalar_from_fn(mesh, |x| (s * x.min(1.0 - x)).min(cap));
    Ok((s, field))
}

/// Minimizer of the average of `|u'|^2` under `int u = V` on `(0, 1)`:
/// `u = 6V x(1-x)`, with `F_2 = (avg |u'|^2)^(1/2) = 2 sqrt(3) |V|`.
pub fn analytic_1d_p2(v: f64, mesh: &Mesh) -> Result<(Field, f64)> {
    unit_interval(mesh)?;
    Ok((Field::scalar_from_fn(mesh, |x| 6.0 * v * x * (1.0 - x)), 2.0 * 3f64.sqrt() * v.abs()))
}

fn unit_interval(mesh: &Mesh) -> Result<()> {
    if mesh.dim() == 1 && mesh.lower()[0] == 0.0 && mesh.upper()[0] == 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidMesh("closed forms are stated on the unit interval".into()))
    }
}

/// Largest deviation of central differences of `value` from `gradient` over
/// the interior unknowns, relative to `max(|gradient|_inf, 1e-300)`.
pub fn fd_check<F: Fn(&Field) -> f64>(mesh: &Mesh, field: &Field, gradient: &Field, step: f64, value: F) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::Config(vec![format!("finite-difference step must be positive, got {step}")]));
    }
    let nc = field.components();
    let x = field.free_values(mesh);
    let g = gradient.free_values(mesh);
    if g.len() != x.len() {
        return Err(Error::ShapeMismatch { expected: format!("{} gradient entries", x.len()), actual: g.len().to_string() });
    }
    let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut worst: f64 = 0.0;
    let mut y = x.clone();
    for i in 0..x.len() {
        y[i] = x[i] + step;
        let fp = value(&Field::from_free(mesh, nc, &y)?);
        y[i] = x[i] - step;
        let fm = value(&Field::from_free(mesh, nc, &y)?);
        y[i] = x[i];
        worst = worst.max(((fp - fm) / (2.0 * step) - g[i]).abs() / scale);
    }
    Ok(worst)
}
