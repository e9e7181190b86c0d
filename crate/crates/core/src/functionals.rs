//! Densities `f`, `g` and the normalized Lp / ess-sup functionals built on them.
//!
//! All Lp reductions divide by the current maximum density before raising to
//! the power `p`, so large exponents do not overflow.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mesh::{Field, Mesh, Samples};

pub type CoefficientFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Scalar coefficient `a(x)` over the domain.
#[derive(Clone)]
pub enum Coefficient {
    Constant(f64),
    /// Piecewise-linear interpolation of `values` over the first coordinate,
    /// with table nodes spread uniformly on `[lo, hi]`; constant outside.
    Table { lo: f64, hi: f64, values: Vec<f64> },
    Function(CoefficientFn),
}

impl Coefficient {
    pub fn function<F: Fn(&[f64]) -> f64 + Send + Sync + 'static>(f: F) -> Coefficient {
        Coefficient::Function(Arc::new(f))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Coefficient::Constant(a) => *a,
            Coefficient::Table { lo, hi, values } => match values.len() {
                0 => 0.0,
                1 => values[0],
                n => {
                    let t = ((x[0] - lo) / (hi - lo)).clamp(0.0, 1.0) * (n - 1) as f64;
                    let i = (t.floor() as usize).min(n - 2);
                    let s = t - i as f64;
                    values[i] * (1.0 - s) + values[i + 1] * s
                }
            },
            Coefficient::Function(f) => f(x),
        }
    }

    /// Minimum over the quadrature points of `mesh` (exact for tables whose
    /// nodes are sampled, otherwise within grid resolution).
    pub fn min_over(&self, mesh: &Mesh) -> f64 {
        match self {
            Coefficient::Constant(a) => *a,
            Coefficient::Table { values, .. } => values.iter().copied().fold(f64::INFINITY, f64::min),
            Coefficient::Function(_) => mesh
                .quadrature()
                .iter()
                .map(|q| self.eval(&q.x[..mesh.dim()]))
                .fold(f64::INFINITY, f64::min),
        }
    }
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Constant(a) => write!(f, "Constant({a})"),
            Coefficient::Table { lo, hi, values } => write!(f, "Table([{lo}, {hi}], {values:?})"),
            Coefficient::Function(_) => write!(f, "Function(..)"),
        }
    }
}

/// Pointwise density `d(x, eta, P)` with first derivatives.
///
/// `grad` is the row-major `N x n` gradient matrix.
pub trait Density {
    fn value(&self, x: &[f64], eta: &[f64], grad: &[f64]) -> f64;

    /// Writes `d_eta` into `eta_out` and `d_P` into `p_out`.
    fn derivative(&self, x: &[f64], eta: &[f64], grad: &[f64], eta_out: &mut [f64], p_out: &mut [f64]);

    /// Local curvature sizes `[|d_P|^2, d |d_PP|, |d_eta|^2, d |d_eta eta|]`,
    /// used only to build preconditioners. The default reports none.
    fn curvature(&self, _x: &[f64], _eta: &[f64], _grad: &[f64]) -> [f64; 4] {
        [0.0; 4]
    }
}

/// Symmetric positive-definite operator on `N x n` matrices.
#[derive(Debug, Clone)]
pub struct ConstantTensor {
    matrix: DMatrix<f64>,
    min_eigenvalue: f64,
    max_eigenvalue: f64,
}

impl ConstantTensor {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<ConstantTensor> {
        let m = rows.len();
        if m == 0 || rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidDensity("tensor must be a non-empty square matrix".into()));
        }
        let matrix = DMatrix::from_fn(m, m, |i, j| rows[i][j]);
        let scale = matrix.amax().max(1.0);
        for i in 0..m {
            for j in 0..i {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidDensity(format!("tensor is not symmetric at ({i}, {j})")));
                }
            }
        }
        let eigenvalues = matrix.clone().symmetric_eigen().eigenvalues;
        let (min_eigenvalue, max_eigenvalue) = (eigenvalues.min(), eigenvalues.max());
        if !(min_eigenvalue > 0.0) {
            return Err(Error::InvalidDensity(format!(
                "tensor is not positive definite (smallest eigenvalue {min_eigenvalue})"
            )));
        }
        Ok(ConstantTensor { matrix, min_eigenvalue, max_eigenvalue })
    }

    pub fn diagonal(diag: &[f64]) -> Result<ConstantTensor> {
        let m = diag.len();
        ConstantTensor::new((0..m).map(|i| (0..m).map(|j| if i == j { diag[i] } else { 0.0 }).collect()).collect())
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    /// `A : P (x) Q`.
    pub fn bilinear(&self, p: &[f64], q: &[f64]) -> f64 {
        let m = self.size();
        let mut s = 0.0;
        for i in 0..m {
            for j in 0..m {
                s += p[i] * self.matrix[(i, j)] * q[j];
            }
        }
        s
    }

    fn apply(&self, p: &[f64], out: &mut [f64]) {
        let m = self.size();
        for i in 0..m {
            out[i] = (0..m).map(|j| self.matrix[(i, j)] * p[j]).sum();
        }
    }
}

/// Gradient density `f(x, P)`.
#[derive(Debug, Clone)]
pub enum DensityF {
    /// `|P|^2`
    Dirichlet,
    /// `a(x) |P|^2`
    WeightedDirichlet(Coefficient),
    /// `A : P (x) P` for a constant tensor `A`.
    Tensor(ConstantTensor),
    /// `|P|`, the unsquared gradient norm. Not quadratic in `P`: minimizers
    /// coincide with those of `|P|^2` at half the exponent, but the
    /// quadratic-structure diagnostics do not apply to it.
    GradientNorm,
}

impl DensityF {
    pub fn is_quadratic(&self) -> bool {
        !matches!(self, DensityF::GradientNorm)
    }

    /// `A(x) : P (x) Q` for the quadratic kinds.
    pub fn bilinear(&self, x: &[f64], p: &[f64], q: &[f64]) -> Result<f64> {
        match self {
            DensityF::Dirichlet => Ok(dot(p, q)),
            DensityF::WeightedDirichlet(a) => Ok(a.eval(x) * dot(p, q)),
            DensityF::Tensor(t) => Ok(t.bilinear(p, q)),
            DensityF::GradientNorm => Err(Error::InvalidDensity("gradient_norm is not quadratic".into())),
        }
    }

    /// Smallest value of `A(x) : Q (x) Q` over the domain and unit `Q`.
    pub fn min_ellipticity(&self, mesh: &Mesh) -> Result<f64> {
        let alpha = match self {
            DensityF::Dirichlet => 1.0,
            DensityF::WeightedDirichlet(a) => a.min_over(mesh),
            DensityF::Tensor(t) => t.min_eigenvalue,
            DensityF::GradientNorm => {
                return Err(Error::InvalidDensity("ellipticity is defined for quadratic densities only".into()))
            }
        };
        if alpha > 0.0 {
            Ok(alpha)
        } else {
            Err(Error::InvalidDensity(format!("nonpositive ellipticity constant {alpha}")))
        }
    }

    pub fn check_components(&self, components: usize, dim: usize) -> Result<()> {
        if let DensityF::Tensor(t) = self {
            if t.size() != components * dim {
                return Err(Error::InvalidDensity(format!(
                    "tensor acts on {}-dimensional matrices, problem has {components}x{dim}",
                    t.size()
                )));
            }
        }
        Ok(())
    }
}

impl Density for DensityF {
    fn value(&self, x: &[f64], _eta: &[f64], grad: &[f64]) -> f64 {
        match self {
            DensityF::Dirichlet => dot(grad, grad),
            DensityF::WeightedDirichlet(a) => a.eval(x) * dot(grad, grad),
            DensityF::Tensor(t) => t.bilinear(grad, grad),
            DensityF::GradientNorm => dot(grad, grad).sqrt(),
        }
    }

    fn derivative(&self, x: &[f64], eta: &[f64], grad: &[f64], eta_out: &mut [f64], p_out: &mut [f64]) {
        eta_out[..eta.len()].iter_mut().for_each(|v| *v = 0.0);
        match self {
            DensityF::Dirichlet => p_out.iter_mut().zip(grad).for_each(|(o, g)| *o = 2.0 * g),
            DensityF::WeightedDirichlet(a) => {
                let a = a.eval(x);
                p_out.iter_mut().zip(grad).for_each(|(o, g)| *o = 2.0 * a * g)
            }
            DensityF::Tensor(t) => {
                t.apply(grad, p_out);
                p_out.iter_mut().for_each(|o| *o *= 2.0);
            }
            DensityF::GradientNorm => {
                let n = dot(grad, grad).sqrt();
                let inv = if n > 0.0 { 1.0 / n } else { 0.0 };
                p_out.iter_mut().zip(grad).for_each(|(o, g)| *o = g * inv)
            }
        }
    }

    fn curvature(&self, x: &[f64], _eta: &[f64], grad: &[f64]) -> [f64; 4] {
        let n2 = dot(grad, grad);
        match self {
            DensityF::Dirichlet => [4.0 * n2, 2.0 * n2, 0.0, 0.0],
            DensityF::WeightedDirichlet(a) => {
                let a = a.eval(x);
                [4.0 * a * a * n2, 2.0 * a * a * n2, 0.0, 0.0]
            }
            DensityF::Tensor(t) => {
                let mut ap = vec![0.0; grad.len()];
                t.apply(grad, &mut ap);
                [4.0 * dot(&ap, &ap), 2.0 * t.max_eigenvalue * dot(grad, &ap), 0.0, 0.0]
            }
            DensityF::GradientNorm => [1.0, 1.0, 0.0, 0.0],
        }
    }
}

/// Gradient-free density `g(x, eta)`.
#[derive(Debug, Clone)]
pub enum DensityG {
    /// `|eta|`
    Abs,
    /// `|eta|^2`
    Quad,
    /// `c >= 0`
    Const(f64),
}

impl Density for DensityG {
    fn value(&self, _x: &[f64], eta: &[f64], _grad: &[f64]) -> f64 {
        match self {
            DensityG::Abs => dot(eta, eta).sqrt(),
            DensityG::Quad => dot(eta, eta),
            DensityG::Const(c) => *c,
        }
    }

    fn derivative(&self, _x: &[f64], eta: &[f64], grad: &[f64], eta_out: &mut [f64], p_out: &mut [f64]) {
        p_out[..grad.len()].iter_mut().for_each(|v| *v = 0.0);
        match self {
            DensityG::Abs => {
                let n = dot(eta, eta).sqrt();
                let inv = if n > 0.0 { 1.0 / n } else { 0.0 };
                eta_out.iter_mut().zip(eta).for_each(|(o, e)| *o = e * inv)
            }
            DensityG::Quad => eta_out.iter_mut().zip(eta).for_each(|(o, e)| *o = 2.0 * e),
            DensityG::Const(_) => eta_out.iter_mut().for_each(|o| *o = 0.0),
        }
    }

    fn curvature(&self, _x: &[f64], eta: &[f64], _grad: &[f64]) -> [f64; 4] {
        let n2 = dot(eta, eta);
        match self {
            DensityG::Abs => [0.0, 0.0, 1.0, 1.0],
            DensityG::Quad => [0.0, 0.0, 4.0 * n2, 2.0 * n2],
            DensityG::Const(_) => [0.0; 4],
        }
    }
}

/// A functional value together with its exponent (`p = inf` for the sup).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpValue {
    pub p: f64,
    pub value: f64,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Density values at all quadrature points; rejects negative or non-finite values.
pub fn density_values<D: Density + ?Sized>(d: &D, mesh: &Mesh, samples: &Samples) -> Result<Vec<f64>> {
    let dim = mesh.dim();
    let mut out = Vec::with_capacity(samples.len());
    for (q, qp) in mesh.quadrature().iter().enumerate() {
        let v = d.value(&qp.x[..dim], samples.value(q), samples.grad(q));
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::NegativeDensity { point: q, value: v });
        }
        out.push(v);
    }
    Ok(out)
}

/// `( (1/|Omega|) sum_q w_q d_q^p )^(1/p)`, evaluated as `d_max * (avg (d/d_max)^p)^(1/p)`.
pub fn normalized_lp(values: &[f64], mesh: &Mesh, p: f64) -> f64 {
    let dmax = values.iter().copied().fold(0.0, f64::max);
    if dmax == 0.0 {
        return 0.0;
    }
    let inv_measure = 1.0 / mesh.measure();
    let s: f64 = mesh.quadrature().iter().zip(values).map(|(q, &d)| q.w * inv_measure * (d / dmax).powf(p)).sum();
    dmax * s.powf(1.0 / p)
}

pub fn sup_value(values: &[f64]) -> f64 {
    values.iter().copied().fold(0.0, f64::max)
}

fn check_p(p: f64) -> Result<()> {
    if p >= 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidExponent(p))
    }
}

/// Normalized Lp functional `F_p` (or `G_p`) of `field`.
pub fn eval_lp<D: Density + ?Sized>(d: &D, field: &Field, mesh: &Mesh, p: f64) -> Result<LpValue> {
    check_p(p)?;
    let s = mesh.sample(field)?;
    let values = density_values(d, mesh, &s)?;
    Ok(LpValue { p, value: normalized_lp(&values, mesh, p) })
}

/// Discrete ess-sup: the maximum density over quadrature points.
pub fn eval_linf<D: Density + ?Sized>(d: &D, field: &Field, mesh: &Mesh) -> Result<LpValue> {
    let s = mesh.sample(field)?;
    let values = density_values(d, mesh, &s)?;
    Ok(LpValue { p: f64::INFINITY, value: sup_value(&values) })
}

/// Per-point cotangents of a scalar functional of `(u, Du)` at the quadrature points.
#[derive(Debug, Clone)]
pub(crate) struct Cotangent {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Cotangent {
    pub fn zeros(mesh: &Mesh, components: usize) -> Cotangent {
        Cotangent { value: vec![0.0; mesh.n_quad() * components], grad: vec![0.0; mesh.n_quad() * components * mesh.dim()] }
    }

    pub fn scatter(&self, mesh: &Mesh, components: usize) -> Result<Field> {
        mesh.scatter(components, &self.value, &self.grad)
    }
}

/// Value of `(1/p) avg (d/scale)^p` and, when `cot` is given, adds
/// `weight * (1/|Omega|) w_q (d/scale)^(p-1) / scale * (d_eta, d_P)` to it.
pub(crate) fn scaled_power<D: Density + ?Sized>(
    d: &D,
    mesh: &Mesh,
    samples: &Samples,
    p: f64,
    scale: f64,
    weight: f64,
    cot: Option<&mut Cotangent>,
) -> f64 {
    let dim = mesh.dim();
    let nc = samples.components;
    let inv_measure = 1.0 / mesh.measure();
    let mut eta_d = vec![0.0; nc];
    let mut p_d = vec![0.0; nc * dim];
    let mut total = 0.0;
    let mut cot = cot;
    for (q, qp) in mesh.quadrature().iter().enumerate() {
        let x = &qp.x[..dim];
        let v = d.value(x, samples.value(q), samples.grad(q)) / scale;
        let vw = qp.w * inv_measure;
        total += vw * v.powf(p);
        if let Some(c) = cot.as_deref_mut() {
            let factor = weight * vw * v.powf(p - 1.0) / scale;
            if factor == 0.0 {
                continue;
            }
            d.derivative(x, samples.value(q), samples.grad(q), &mut eta_d, &mut p_d);
            for k in 0..nc {
                c.value[q * nc + k] += factor * eta_d[k];
            }
            for k in 0..nc * dim {
                c.grad[q * nc * dim + k] += factor * p_d[k];
            }
        }
    }
    total / p
}

/// Adds the per-point curvature of `weight * scaled_power(..)` into `a`
/// (gradient part) and `b` (value part), per unit quadrature weight.
#[allow(clippy::too_many_arguments)]
pub(crate) fn power_curvature<D: Density + ?Sized>(
    d: &D,
    mesh: &Mesh,
    samples: &Samples,
    p: f64,
    scale: f64,
    weight: f64,
    a: &mut [f64],
    b: &mut [f64],
) {
    if weight == 0.0 {
        return;
    }
    let dim = mesh.dim();
    let inv_measure = 1.0 / mesh.measure();
    let values: Vec<f64> = mesh
        .quadrature()
        .iter()
        .enumerate()
        .map(|(q, qp)| d.value(&qp.x[..dim], samples.value(q), samples.grad(q)) / scale)
        .collect();
    // below p = 2 the exact curvature blows up where the density vanishes
    let floor = if p < 2.0 { 1e-3 * values.iter().copied().fold(0.0, f64::max) } else { 0.0 };
    for (q, qp) in mesh.quadrature().iter().enumerate() {
        let v = values[q].max(floor);
        if v == 0.0 && p < 2.0 {
            continue;
        }
        let [sp, hp, se, he] = d.curvature(&qp.x[..dim], samples.value(q), samples.grad(q));
        let k = weight * inv_measure * v.powf(p - 2.0) / (scale * scale);
        a[q] += k * ((p - 1.0) * sp + hp);
        b[q] += k * ((p - 1.0) * se + he);
    }
}

fn grad_scaled<D: Density + ?Sized>(d: &D, field: &Field, mesh: &Mesh, p: f64) -> Result<Field> {
    check_p(p)?;
    let s = mesh.sample(field)?;
    density_values(d, mesh, &s)?;
    let mut cot = Cotangent::zeros(mesh, field.components());
    scaled_power(d, mesh, &s, p, 1.0, 1.0, Some(&mut cot));
    cot.scatter(mesh, field.components())
}

/// Nodal gradient of `(1/p) F_p^p`; boundary rows are zero.
pub fn grad_scaled_objective(f: &DensityF, field: &Field, mesh: &Mesh, p: f64) -> Result<Field> {
    grad_scaled(f, field, mesh, p)
}

/// Nodal gradient of `(1/p) G_p^p`; only the `g_eta` term is present.
pub fn grad_scaled_constraint_g(g: &DensityG, field: &Field, mesh: &Mesh, p: f64) -> Result<Field> {
    grad_scaled(g, field, mesh, p)
}

/// Smallest value of `A(x) : Q (x) Q` over the domain and unit `Q`.
pub fn min_ellipticity(f: &DensityF, mesh: &Mesh) -> Result<f64> {
    f.min_ellipticity(mesh)
}
