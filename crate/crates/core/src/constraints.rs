//! The constraint operator `Q` in the catalogue forms: holonomic, unilateral,
//! inclusion (ball, box) and isoperimetric.
//!
//! Each constraint is described by *underlying rows* `c`. Equality rows
//! (holonomic) enter `Q` directly; inequality rows `c <= 0` enter through the
//! relaxation `pi(c)`, so `Q(u) = 0` is the single feasibility notion. The
//! solver works with the rows themselves, which keeps the multiplier
//! information that `pi` would flatten at feasible points.

use crate::error::{Error, Result};
use crate::functionals::{dot, Coefficient, Cotangent};
use crate::mesh::{Field, Mesh, Samples};

/// `pi(t) = t^2` for `t > 0`, `0` otherwise.
pub fn pi_relax(t: f64) -> f64 {
    if t > 0.0 {
        t * t
    } else {
        0.0
    }
}

pub fn pi_relax_derivative(t: f64) -> f64 {
    (2.0 * t).max(0.0)
}

/// Pointwise scalar map `Pi(x, eta)`.
#[derive(Debug, Clone)]
pub enum PointwiseMap {
    /// `coeffs . eta + offset`
    Linear { coeffs: Vec<f64>, offset: f64 },
    /// `|eta|^2 - radius^2`
    SphereGap { radius: f64 },
    /// `height(x) - eta_c`; nonpositive when `eta_c >= height`.
    LowerObstacle { component: usize, height: Coefficient },
    /// `eta_c - height(x)`
    UpperObstacle { component: usize, height: Coefficient },
}

impl PointwiseMap {
    fn eval(&self, x: &[f64], eta: &[f64], d_eta: &mut [f64]) -> f64 {
        d_eta.iter_mut().for_each(|v| *v = 0.0);
        match self {
            PointwiseMap::Linear { coeffs, offset } => {
                d_eta.copy_from_slice(coeffs);
                dot(coeffs, eta) + offset
            }
            PointwiseMap::SphereGap { radius } => {
                d_eta.iter_mut().zip(eta).for_each(|(d, e)| *d = 2.0 * e);
                dot(eta, eta) - radius * radius
            }
            PointwiseMap::LowerObstacle { component, height } => {
                d_eta[*component] = -1.0;
                height.eval(x) - eta[*component]
            }
            PointwiseMap::UpperObstacle { component, height } => {
                d_eta[*component] = 1.0;
                eta[*component] - height.eval(x)
            }
        }
    }

    fn validate(&self, components: usize) -> Result<()> {
        match self {
            PointwiseMap::Linear { coeffs, offset } => {
                if coeffs.len() != components {
                    return Err(Error::InvalidConstraint(format!(
                        "linear map has {} coefficients for {components} components",
                        coeffs.len()
                    )));
                }
                if !offset.is_finite() || coeffs.iter().any(|c| !c.is_finite()) {
                    return Err(Error::InvalidConstraint("linear map must be finite".into()));
                }
            }
            PointwiseMap::SphereGap { radius } => positive("sphere radius", *radius)?,
            PointwiseMap::LowerObstacle { component, .. } | PointwiseMap::UpperObstacle { component, .. } => {
                if *component >= components {
                    return Err(Error::InvalidConstraint(format!("obstacle component {component} out of range")));
                }
            }
        }
        Ok(())
    }
}

/// Closed convex target set for inclusion constraints.
#[derive(Debug, Clone)]
pub enum SetKind {
    Ball { radius: f64 },
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

/// Integrand `h(x, eta, P)` of an isoperimetric constraint.
#[derive(Debug, Clone)]
pub enum IntegrandH {
    /// `scale * eta_index`
    Component { index: usize, scale: f64 },
    /// `|P|^2`
    Dirichlet,
    /// `|eta|^2`
    SquaredValue,
}

impl IntegrandH {
    /// Parses catalogue names: `mass`, `neg_mass`, `component_<k>`,
    /// `neg_component_<k>`, `dirichlet`, `squared_value`.
    pub fn from_name(name: &str) -> Option<IntegrandH> {
        let component = |s: &str, scale: f64| s.parse().ok().map(|index| IntegrandH::Component { index, scale });
        match name {
            "mass" => Some(IntegrandH::Component { index: 0, scale: 1.0 }),
            "neg_mass" => Some(IntegrandH::Component { index: 0, scale: -1.0 }),
            "dirichlet" => Some(IntegrandH::Dirichlet),
            "squared_value" => Some(IntegrandH::SquaredValue),
            _ => {
                if let Some(k) = name.strip_prefix("neg_component_") {
                    component(k, -1.0)
                } else if let Some(k) = name.strip_prefix("component_") {
                    component(k, 1.0)
                } else {
                    None
                }
            }
        }
    }

    fn eval(&self, eta: &[f64], grad: &[f64], d_eta: &mut [f64], d_p: &mut [f64]) -> f64 {
        d_eta.iter_mut().for_each(|v| *v = 0.0);
        d_p.iter_mut().for_each(|v| *v = 0.0);
        match self {
            IntegrandH::Component { index, scale } => {
                d_eta[*index] = *scale;
                scale * eta[*index]
            }
            IntegrandH::Dirichlet => {
                d_p.iter_mut().zip(grad).for_each(|(d, g)| *d = 2.0 * g);
                dot(grad, grad)
            }
            IntegrandH::SquaredValue => {
                d_eta.iter_mut().zip(eta).for_each(|(d, e)| *d = 2.0 * e);
                dot(eta, eta)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub enum ConstraintSpec {
    /// `Pi(x, u) = 0`
    Holonomic(PointwiseMap),
    /// `Pi(x, u) <= 0`
    Unilateral(PointwiseMap),
    /// `u(x)` in the set
    Inclusion(SetKind),
    /// `integral h(x, u, Du) {<=, >=, =} bound`
    Isoperimetric { h: IntegrandH, bound: f64, relation: Relation },
}

fn positive(what: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConstraint(format!("{what} must be positive and finite, got {v}")))
    }
}

impl ConstraintSpec {
    pub fn validate(&self, components: usize) -> Result<()> {
        match self {
            ConstraintSpec::Holonomic(m) | ConstraintSpec::Unilateral(m) => m.validate(components),
            ConstraintSpec::Inclusion(SetKind::Ball { radius }) => positive("ball radius", *radius),
            ConstraintSpec::Inclusion(SetKind::Box { lower, upper }) => {
                if lower.len() != components || upper.len() != components {
                    return Err(Error::InvalidConstraint(format!("box bounds must have {components} entries")));
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
                    return Err(Error::InvalidConstraint("box lower bound exceeds upper bound".into()));
                }
                Ok(())
            }
            ConstraintSpec::Isoperimetric { h, bound, .. } => {
                if !bound.is_finite() {
                    return Err(Error::InvalidConstraint("isoperimetric bound must be finite".into()));
                }
                match h {
                    IntegrandH::Component { index, scale } if *index >= components || !scale.is_finite() => {
                        Err(Error::InvalidConstraint(format!("integrand component {index} out of range")))
                    }
                    _ => Ok(()),
                }
            }
        }
    }

    /// Whether rows are equations (holonomic) rather than `pi`-relaxed inequalities.
    pub fn is_equality(&self) -> bool {
        matches!(self, ConstraintSpec::Holonomic(_))
    }

    /// For `pi`-relaxed kinds `dQ` vanishes on the feasible set, so the
    /// multiplier pairs with the linearization of the underlying rows instead.
    pub fn degenerate_differential(&self) -> bool {
        !self.is_equality()
    }

    fn shape(&self, components: usize) -> Shape {
        match self {
            ConstraintSpec::Holonomic(_) | ConstraintSpec::Unilateral(_) => Shape::Pointwise { rows: 1 },
            ConstraintSpec::Inclusion(SetKind::Ball { .. }) => Shape::Pointwise { rows: 1 },
            ConstraintSpec::Inclusion(SetKind::Box { .. }) => Shape::Pointwise { rows: 2 * components },
            ConstraintSpec::Isoperimetric { relation: Relation::Eq, .. } => Shape::Scalar { rows: 2 },
            ConstraintSpec::Isoperimetric { .. } => Shape::Scalar { rows: 1 },
        }
    }

    /// Underlying row values at one point and their `eta`-Jacobian (`rows x N`).
    fn point_rows(&self, x: &[f64], eta: &[f64], vals: &mut [f64], jac: &mut [f64]) {
        let nc = eta.len();
        match self {
            ConstraintSpec::Holonomic(m) | ConstraintSpec::Unilateral(m) => vals[0] = m.eval(x, eta, &mut jac[..nc]),
            ConstraintSpec::Inclusion(SetKind::Ball { radius }) => {
                let n = dot(eta, eta).sqrt();
                let inv = if n > 0.0 { 1.0 / n } else { 0.0 };
                jac[..nc].iter_mut().zip(eta).for_each(|(d, e)| *d = e * inv);
                vals[0] = n - radius;
            }
            ConstraintSpec::Inclusion(SetKind::Box { lower, upper }) => {
                jac.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..nc {
                    vals[2 * i] = eta[i] - upper[i];
                    jac[2 * i * nc + i] = 1.0;
                    vals[2 * i + 1] = lower[i] - eta[i];
                    jac[(2 * i + 1) * nc + i] = -1.0;
                }
            }
            ConstraintSpec::Isoperimetric { .. } => unreachable!("scalar constraint evaluated pointwise"),
        }
    }
}

/// Layout of one constraint block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// `rows` values per quadrature point (an `L^1` element).
    Pointwise { rows: usize },
    /// `rows` real numbers.
    Scalar { rows: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub shape: Shape,
    pub equality: bool,
    pub values: Vec<f64>,
}

/// Element of the product space of all constraint blocks: either a residual
/// `Q(u)`, a differential `dQ(phi)`, or (as [`DualElement`]) a multiplier.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConstraintResidual {
    pub blocks: Vec<Block>,
}

/// Multiplier paired with a [`ConstraintResidual`]; pointwise blocks hold densities.
pub type DualElement = ConstraintResidual;

impl ConstraintResidual {
    pub fn is_empty(&self) -> bool {
        self.blocks.iter().all(|b| b.values.is_empty())
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.values.len()).sum()
    }

    /// Same layout, every entry zero.
    pub fn zeros_like(&self) -> ConstraintResidual {
        let mut z = self.clone();
        z.blocks.iter_mut().for_each(|b| b.values.iter_mut().for_each(|v| *v = 0.0));
        z
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.blocks.iter().flat_map(|b| b.values.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.blocks.iter_mut().flat_map(|b| b.values.iter_mut())
    }

    /// Weighted `L^1` norm: `sum_q w_q |q|` for pointwise blocks, `|q|` for scalars.
    pub fn norm(&self, mesh: &Mesh) -> f64 {
        self.blocks
            .iter()
            .map(|b| match b.shape {
                Shape::Pointwise { rows } => mesh
                    .quadrature()
                    .iter()
                    .enumerate()
                    .map(|(q, qp)| qp.w * b.values[q * rows..(q + 1) * rows].iter().map(|v| v.abs()).sum::<f64>())
                    .sum::<f64>(),
                Shape::Scalar { .. } => b.values.iter().map(|v| v.abs()).sum(),
            })
            .sum()
    }

    /// Dual norm: largest absolute entry (`L^inf` for pointwise blocks).
    pub fn dual_norm(&self) -> f64 {
        self.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest violation of the underlying rows: `max(c, 0)` for inequality
    /// rows, `|c|` for equations.
    pub fn violation(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.values.iter().map(move |&v| if b.equality { v.abs() } else { v.max(0.0) }))
            .fold(0.0, f64::max)
    }

    pub fn has_same_layout(&self, other: &ConstraintResidual) -> bool {
        self.blocks.len() == other.blocks.len()
            && self
                .blocks
                .iter()
                .zip(&other.blocks)
                .all(|(a, b)| a.shape == b.shape && a.values.len() == b.values.len())
    }

    /// Row weights: `w_q` for pointwise rows, `1` for scalars.
    pub(crate) fn weights(&self, mesh: &Mesh) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for b in &self.blocks {
            match b.shape {
                Shape::Pointwise { rows } => {
                    for qp in mesh.quadrature() {
                        out.extend(std::iter::repeat_n(qp.w, rows));
                    }
                }
                Shape::Scalar { rows } => out.extend(std::iter::repeat_n(1.0, rows)),
            }
        }
        out
    }
}

/// `<psi, q>`: `integral psi . q` for pointwise blocks, `psi q` for scalars.
pub fn pairing(dual: &DualElement, residual: &ConstraintResidual, mesh: &Mesh) -> Result<f64> {
    if !dual.has_same_layout(residual) {
        return Err(Error::KindMismatch(format!(
            "dual element has {} blocks / {} entries, residual has {} / {}",
            dual.blocks.len(),
            dual.len(),
            residual.blocks.len(),
            residual.len()
        )));
    }
    let w = residual.weights(mesh);
    Ok(dual.values().zip(residual.values()).zip(&w).map(|((a, b), w)| w * a * b).sum())
}

pub fn validate_all(specs: &[ConstraintSpec], components: usize) -> Result<()> {
    specs.iter().try_for_each(|s| s.validate(components))
}

fn check_points(mesh: &Mesh, samples: &Samples) -> Result<()> {
    if samples.len() != mesh.n_quad() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} quadrature samples", mesh.n_quad()),
            actual: samples.len().to_string(),
        });
    }
    Ok(())
}

/// Underlying rows `c(u)` of every constraint.
pub fn underlying_rows(specs: &[ConstraintSpec], mesh: &Mesh, s: &Samples) -> Result<ConstraintResidual> {
    check_points(mesh, s)?;
    let nc = s.components;
    let dim = mesh.dim();
    let mut blocks = Vec::with_capacity(specs.len());
    for spec in specs {
        let shape = spec.shape(nc);
        let values = match (spec, shape) {
            (ConstraintSpec::Isoperimetric { h, bound, relation }, _) => {
                let mut de = vec![0.0; nc];
                let mut dp = vec![0.0; nc * dim];
                let integral: f64 = mesh
                    .quadrature()
                    .iter()
                    .enumerate()
                    .map(|(q, qp)| qp.w * h.eval(s.value(q), s.grad(q), &mut de, &mut dp))
                    .sum();
                let c = integral - bound;
                match relation {
                    Relation::Le => vec![c],
                    Relation::Ge => vec![-c],
                    Relation::Eq => vec![c, -c],
                }
            }
            (_, Shape::Pointwise { rows }) => {
                let mut values = vec![0.0; mesh.n_quad() * rows];
                let mut jac = vec![0.0; rows * nc];
                for (q, qp) in mesh.quadrature().iter().enumerate() {
                    spec.point_rows(&qp.x[..dim], s.value(q), &mut values[q * rows..(q + 1) * rows], &mut jac);
                }
                values
            }
            (_, Shape::Scalar { .. }) => unreachable!(),
        };
        blocks.push(Block { shape, equality: spec.is_equality(), values });
    }
    Ok(ConstraintResidual { blocks })
}

/// Directional derivative of the underlying rows at `s` along the variation
/// sampled in `v`.
pub fn underlying_jvp(specs: &[ConstraintSpec], mesh: &Mesh, s: &Samples, v: &Samples) -> Result<ConstraintResidual> {
    check_points(mesh, s)?;
    check_points(mesh, v)?;
    let nc = s.components;
    let dim = mesh.dim();
    let mut blocks = Vec::with_capacity(specs.len());
    for spec in specs {
        let shape = spec.shape(nc);
        let values = match (spec, shape) {
            (ConstraintSpec::Isoperimetric { h, relation, .. }, _) => {
                let mut de = vec![0.0; nc];
                let mut dp = vec![0.0; nc * dim];
                let mut d = 0.0;
                for (q, qp) in mesh.quadrature().iter().enumerate() {
                    h.eval(s.value(q), s.grad(q), &mut de, &mut dp);
                    d += qp.w * (dot(&de, v.value(q)) + dot(&dp, v.grad(q)));
                }
                match relation {
                    Relation::Le => vec![d],
                    Relation::Ge => vec![-d],
                    Relation::Eq => vec![d, -d],
                }
            }
            (_, Shape::Pointwise { rows }) => {
                let mut values = vec![0.0; mesh.n_quad() * rows];
                let mut vals = vec![0.0; rows];
                let mut jac = vec![0.0; rows * nc];
                for (q, qp) in mesh.quadrature().iter().enumerate() {
                    spec.point_rows(&qp.x[..dim], s.value(q), &mut vals, &mut jac);
                    for r in 0..rows {
                        values[q * rows + r] = dot(&jac[r * nc..(r + 1) * nc], v.value(q));
                    }
                }
                values
            }
            (_, Shape::Scalar { .. }) => unreachable!(),
        };
        blocks.push(Block { shape, equality: spec.is_equality(), values });
    }
    Ok(ConstraintResidual { blocks })
}

/// Adds the gradient of `<m, c(u)>` (with row weights) to `cot`.
pub(crate) fn underlying_vjp(
    specs: &[ConstraintSpec],
    mesh: &Mesh,
    s: &Samples,
    m: &ConstraintResidual,
    cot: &mut Cotangent,
) {
    let nc = s.components;
    let dim = mesh.dim();
    for (spec, block) in specs.iter().zip(&m.blocks) {
        match (spec, block.shape) {
            (ConstraintSpec::Isoperimetric { h, relation, .. }, _) => {
                let coef = match relation {
                    Relation::Le => block.values[0],
                    Relation::Ge => -block.values[0],
                    Relation::Eq => block.values[0] - block.values[1],
                };
                if coef == 0.0 {
                    continue;
                }
                let mut de = vec![0.0; nc];
                let mut dp = vec![0.0; nc * dim];
                for (q, qp) in mesh.quadrature().iter().enumerate() {
                    h.eval(s.value(q), s.grad(q), &mut de, &mut dp);
                    for k in 0..nc {
                        cot.value[q * nc + k] += coef * qp.w * de[k];
                    }
                    for k in 0..nc * dim {
                        cot.grad[q * nc * dim + k] += coef * qp.w * dp[k];
                    }
                }
            }
            (_, Shape::Pointwise { rows }) => {
                let mut vals = vec![0.0; rows];
                let mut jac = vec![0.0; rows * nc];
                for (q, qp) in mesh.quadrature().iter().enumerate() {
                    let mq = &block.values[q * rows..(q + 1) * rows];
                    if mq.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    spec.point_rows(&qp.x[..dim], s.value(q), &mut vals, &mut jac);
                    for r in 0..rows {
                        for k in 0..nc {
                            cot.value[q * nc + k] += qp.w * mq[r] * jac[r * nc + k];
                        }
                    }
                }
            }
            (_, Shape::Scalar { .. }) => unreachable!(),
        }
    }
}

/// Nodal gradient of `<m, c(u)>` over the underlying rows.
pub fn underlying_pairing_gradient(
    specs: &[ConstraintSpec],
    field: &Field,
    mesh: &Mesh,
    m: &DualElement,
) -> Result<Field> {
    let s = mesh.sample(field)?;
    let rows = underlying_rows(specs, mesh, &s)?;
    if !rows.has_same_layout(m) {
        return Err(Error::KindMismatch("multiplier layout does not match the constraints".into()));
    }
    let mut cot = Cotangent::zeros(mesh, field.components());
    underlying_vjp(specs, mesh, &s, m, &mut cot);
    cot.scatter(mesh, field.components())
}

/// Whether some holonomic constraint has `Pi_eta != 0` at a point where
/// `|Pi| <= tol`, so the zero set is not contained in the critical set.
pub fn holonomic_nondegenerate(specs: &[ConstraintSpec], mesh: &Mesh, s: &Samples, tol: f64) -> bool {
    let nc = s.components;
    let dim = mesh.dim();
    let mut val = [0.0];
    let mut jac = vec![0.0; nc];
    specs.iter().filter(|c| c.is_equality()).any(|spec| {
        mesh.quadrature().iter().enumerate().any(|(q, qp)| {
            spec.point_rows(&qp.x[..dim], s.value(q), &mut val, &mut jac);
            val[0].abs() <= tol && jac.iter().any(|d| d.abs() > tol)
        })
    })
}

fn relax(rows: &mut ConstraintResidual) {
    for b in rows.blocks.iter_mut().filter(|b| !b.equality) {
        b.values.iter_mut().for_each(|v| *v = pi_relax(*v));
    }
}

/// `Q(u)`: holonomic rows as they are, every inequality row through `pi`.
#[allow(non_snake_case)]
pub fn eval_Q(specs: &[ConstraintSpec], field: &Field, mesh: &Mesh) -> Result<ConstraintResidual> {
    let s = mesh.sample(field)?;
    let mut rows = underlying_rows(specs, mesh, &s)?;
    relax(&mut rows);
    Ok(rows)
}

/// `(dQ)_u(variation)`.
#[allow(non_snake_case)]
pub fn apply_dQ(specs: &[ConstraintSpec], field: &Field, variation: &Field, mesh: &Mesh) -> Result<ConstraintResidual> {
    if variation.components() != field.components() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} components", field.components()),
            actual: variation.components().to_string(),
        });
    }
    let s = mesh.sample(field)?;
    let v = mesh.sample(variation)?;
    let rows = underlying_rows(specs, mesh, &s)?;
    let mut d = underlying_jvp(specs, mesh, &s, &v)?;
    for (db, rb) in d.blocks.iter_mut().zip(&rows.blocks) {
        if !db.equality {
            db.values.iter_mut().zip(&rb.values).for_each(|(dv, c)| *dv *= pi_relax_derivative(*c));
        }
    }
    Ok(d)
}
