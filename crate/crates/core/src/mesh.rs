//! Uniform box meshes with piecewise-linear fields and one-point quadrature.
//!
//! In 1D each cell is an interval with its midpoint as the single quadrature
//! point. In 2D each rectangle is split along its (0,0)-(1,1) diagonal into two
//! triangles, and each triangle carries one centroid point. Either way the P1
//! gradient is constant on the quadrature cell, so densities of the gradient are
//! evaluated without quadrature error in the gradient argument.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPoint {
    pub x: [f64; 2],
    pub w: f64,
}

#[derive(Debug, Clone)]
struct Element {
    nodes: [usize; 3],
    len: usize,
    shape: [f64; 3],
    dshape: [[f64; 2]; 3],
}

#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    lower: [f64; 2],
    upper: [f64; 2],
    cells: [usize; 2],
    h: [f64; 2],
    quad: Vec<QuadPoint>,
    elements: Vec<Element>,
    boundary: Vec<bool>,
    free: Vec<usize>,
    measure: f64,
}

impl Mesh {
    /// Builds a uniform grid over `extent` (one `(lo, hi)` pair per axis).
    pub fn build(dim: usize, extent: &[(f64, f64)], cells: &[usize]) -> Result<Mesh> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidMesh(format!("dim must be 1 or 2, got {dim}")));
        }
        if extent.len() != dim || cells.len() != dim {
            return Err(Error::InvalidMesh(format!(
                "expected {dim} extents and cell counts, got {} and {}",
                extent.len(),
                cells.len()
            )));
        }
        let mut lower = [0.0; 2];
        let mut upper = [0.0; 2];
        let mut ncell = [1usize; 2];
        let mut h = [1.0; 2];
        for a in 0..dim {
            let (lo, hi) = extent[a];
            if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
                return Err(Error::InvalidMesh(format!("empty extent [{lo}, {hi}] on axis {a}")));
            }
            if cells[a] < 2 {
                return Err(Error::InvalidMesh(format!(
                    "need at least 2 cells per axis, got {} on axis {a}",
                    cells[a]
                )));
            }
            lower[a] = lo;
            upper[a] = hi;
            ncell[a] = cells[a];
            h[a] = (hi - lo) / cells[a] as f64;
        }

        let mut quad = Vec::new();
        let mut elements = Vec::new();
        let (boundary, measure);
        if dim == 1 {
            let n = ncell[0];
            for i in 0..n {
                quad.push(QuadPoint { x: [lower[0] + (i as f64 + 0.5) * h[0], 0.0], w: h[0] });
                elements.push(Element {
                    nodes: [i, i + 1, 0],
                    len: 2,
                    shape: [0.5, 0.5, 0.0],
                    dshape: [[-1.0 / h[0], 0.0], [1.0 / h[0], 0.0], [0.0, 0.0]],
                });
            }
            boundary = (0..=n).map(|i| i == 0 || i == n).collect::<Vec<_>>();
            measure = upper[0] - lower[0];
        } else {
            let (cx, cy) = (ncell[0], ncell[1]);
            let (hx, hy) = (h[0], h[1]);
            let third = 1.0 / 3.0;
            let idx = |i: usize, j: usize| j * (cx + 1) + i;
            for j in 0..cy {
                for i in 0..cx {
                    let x0 = lower[0] + i as f64 * hx;
                    let y0 = lower[1] + j as f64 * hy;
                    let (n00, n10, n01, n11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
                    // lower-right triangle (n00, n10, n11)
                    quad.push(QuadPoint { x: [x0 + 2.0 * hx / 3.0, y0 + hy / 3.0], w: 0.5 * hx * hy });
                    elements.push(Element {
                        nodes: [n00, n10, n11],
                        len: 3,
                        shape: [third; 3],
                        dshape: [[-1.0 / hx, 0.0], [1.0 / hx, -1.0 / hy], [0.0, 1.0 / hy]],
                    });
                    // upper-left triangle (n00, n11, n01)
                    quad.push(QuadPoint { x: [x0 + hx / 3.0, y0 + 2.0 * hy / 3.0], w: 0.5 * hx * hy });
                    elements.push(Element {
                        nodes: [n00, n11, n01],
                        len: 3,
                        shape: [third; 3],
                        dshape: [[0.0, -1.0 / hy], [1.0 / hx, 0.0], [-1.0 / hx, 1.0 / hy]],
                    });
                }
            }
            let mut b = vec![false; (cx + 1) * (cy + 1)];
            for j in 0..=cy {
                for i in 0..=cx {
                    b[idx(i, j)] = i == 0 || j == 0 || i == cx || j == cy;
                }
            }
            boundary = b;
            measure = (upper[0] - lower[0]) * (upper[1] - lower[1]);
        }
        let free = boundary.iter().enumerate().filter(|(_, b)| !**b).map(|(i, _)| i).collect();
        Ok(Mesh { dim, lower, upper, cells: ncell, h, quad, elements, boundary, free, measure })
    }

    pub fn unit_interval(cells: usize) -> Result<Mesh> {
        Mesh::build(1, &[(0.0, 1.0)], &[cells])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn h(&self) -> &[f64] {
        &self.h[..self.dim]
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower[..self.dim]
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper[..self.dim]
    }

    /// Lebesgue measure of the box.
    pub fn measure(&self) -> f64 {
        self.measure
    }

    pub fn quadrature(&self) -> &[QuadPoint] {
        &self.quad
    }

    pub fn n_quad(&self) -> usize {
        self.quad.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.boundary.len()
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    /// Interior node indices in ascending order.
    pub fn free_nodes(&self) -> &[usize] {
        &self.free
    }

    pub fn node_coords(&self, node: usize) -> [f64; 2] {
        if self.dim == 1 {
            [self.lower[0] + node as f64 * self.h[0], 0.0]
        } else {
            let stride = self.cells[0] + 1;
            let (i, j) = (node % stride, node / stride);
            [self.lower[0] + i as f64 * self.h[0], self.lower[1] + j as f64 * self.h[1]]
        }
    }

    /// Largest gradient magnitude of a nodal hat function.
    pub fn hat_gradient_sup(&self) -> f64 {
        self.elements
            .iter()
            .flat_map(|e| e.dshape[..e.len].iter())
            .map(|d| d[0].hypot(d[1]))
            .fold(0.0, f64::max)
    }

    /// Values and gradients of `field` at every quadrature point.
    pub fn sample(&self, field: &Field) -> Result<Samples> {
        self.check_field(field)?;
        let nc = field.components;
        let dim = self.dim;
        let mut values = vec![0.0; self.quad.len() * nc];
        let mut grads = vec![0.0; self.quad.len() * nc * dim];
        for (q, e) in self.elements.iter().enumerate() {
            for l in 0..e.len {
                let node = field.node(e.nodes[l]);
                for c in 0..nc {
                    values[q * nc + c] += e.shape[l] * node[c];
                    for a in 0..dim {
                        grads[(q * nc + c) * dim + a] += e.dshape[l][a] * node[c];
                    }
                }
            }
        }
        Ok(Samples { components: nc, dim, values, grads })
    }

    /// Adjoint of [`Mesh::sample`]: accumulates per-point value and gradient
    /// cotangents onto the nodes. Boundary rows are left at zero.
    pub fn scatter(&self, components: usize, value_cot: &[f64], grad_cot: &[f64]) -> Result<Field> {
        let nq = self.quad.len();
        if value_cot.len() != nq * components || grad_cot.len() != nq * components * self.dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{} value and {} gradient cotangents", nq * components, nq * components * self.dim),
                actual: format!("{} and {}", value_cot.len(), grad_cot.len()),
            });
        }
        let mut out = vec![0.0; self.n_nodes() * components];
        for (q, e) in self.elements.iter().enumerate() {
            for l in 0..e.len {
                let node = e.nodes[l];
                if self.boundary[node] {
                    continue;
                }
                for c in 0..components {
                    let mut acc = e.shape[l] * value_cot[q * components + c];
                    for a in 0..self.dim {
                        acc += e.dshape[l][a] * grad_cot[(q * components + c) * self.dim + a];
                    }
                    out[node * components + c] += acc;
                }
            }
        }
        Ok(Field { components, values: out })
    }

    /// Nodes, shape values and shape gradients of the quadrature cell `q`.
    pub(crate) fn element(&self, q: usize) -> (&[usize], &[f64], &[[f64; 2]]) {
        let e = &self.elements[q];
        (&e.nodes[..e.len], &e.shape[..e.len], &e.dshape[..e.len])
    }

    fn check_field(&self, field: &Field) -> Result<()> {
        if field.values.len() != self.n_nodes() * field.components {
            return Err(Error::ShapeMismatch {
                expected: format!("{} nodes x {} components", self.n_nodes(), field.components),
                actual: format!("{} values", field.values.len()),
            });
        }
        Ok(())
    }

    fn dump_cells(&self) -> String {
        self.cells().iter().map(|c| c.to_string()).collect::<Vec<_>>().join("x")
    }
}

/// Field values and gradients at quadrature points.
#[derive(Debug, Clone)]
pub struct Samples {
    pub components: usize,
    pub dim: usize,
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.values.len() / self.components
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, q: usize) -> &[f64] {
        &self.values[q * self.components..(q + 1) * self.components]
    }

    /// Row-major `N x n` gradient at point `q`: entry `c * n + a` is `d u_c / d x_a`.
    pub fn grad(&self, q: usize) -> &[f64] {
        let s = self.components * self.dim;
        &self.grads[q * s..(q + 1) * s]
    }
}

/// Nodal values of a vector-valued P1 map with zero boundary trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    components: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(mesh: &Mesh, components: usize) -> Field {
        Field { components, values: vec![0.0; mesh.n_nodes() * components] }
    }

    /// Interpolates `f` at interior nodes; boundary nodes stay exactly zero.
    pub fn from_fn<F>(mesh: &Mesh, components: usize, mut f: F) -> Field
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let mut field = Field::zeros(mesh, components);
        for &node in mesh.free_nodes() {
            let x = mesh.node_coords(node);
            f(&x[..mesh.dim()], &mut field.values[node * components..(node + 1) * components]);
        }
        field
    }

    pub fn scalar_from_fn<F>(mesh: &Mesh, f: F) -> Field
    where
        F: Fn(f64) -> f64,
    {
        Field::from_fn(mesh, 1, |x, out| out[0] = f(x[0]))
    }

    /// Builds a field from the interior degrees of freedom, ordered as
    /// `mesh.free_nodes()` with components contiguous.
    pub fn from_free(mesh: &Mesh, components: usize, free: &[f64]) -> Result<Field> {
        let nf = mesh.free_nodes().len() * components;
        if free.len() != nf {
            return Err(Error::ShapeMismatch {
                expected: format!("{nf} free values"),
                actual: format!("{}", free.len()),
            });
        }
        let mut field = Field::zeros(mesh, components);
        field.set_free(mesh, free);
        Ok(field)
    }

    pub(crate) fn set_free(&mut self, mesh: &Mesh, free: &[f64]) {
        let nc = self.components;
        for (k, &node) in mesh.free_nodes().iter().enumerate() {
            self.values[node * nc..(node + 1) * nc].copy_from_slice(&free[k * nc..(k + 1) * nc]);
        }
    }

    pub fn free_values(&self, mesh: &Mesh) -> Vec<f64> {
        let nc = self.components;
        let mut out = Vec::with_capacity(mesh.free_nodes().len() * nc);
        for &node in mesh.free_nodes() {
            out.extend_from_slice(&self.values[node * nc..(node + 1) * nc]);
        }
        out
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn n_nodes(&self) -> usize {
        self.values.len() / self.components
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.values[i * self.components..(i + 1) * self.components]
    }

    /// Checks the zero-trace and finiteness invariants against `mesh`.
    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        mesh.check_field(self)?;
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        for node in 0..mesh.n_nodes() {
            if mesh.is_boundary(node) && self.node(node).iter().any(|&v| v != 0.0) {
                return Err(Error::FieldFormat(format!("nonzero boundary value at node {node}")));
            }
        }
        Ok(())
    }

    pub fn sup_distance(&self, other: &Field) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// Plain-text dump: a header line then one line per node.
    pub fn to_dump(&self, mesh: &Mesh) -> String {
        let mut s = format!(
            "# supinf-field dim={} cells={} components={}\n",
            mesh.dim(),
            mesh.dump_cells(),
            self.components
        );
        for node in 0..self.n_nodes() {
            let line = self.node(node).iter().map(|v| format!("{v:.16e}")).collect::<Vec<_>>().join(" ");
            let _ = writeln!(s, "{line}");
        }
        s
    }

    pub fn from_dump(text: &str, mesh: &Mesh) -> Result<Field> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::FieldFormat("empty file".into()))?;
        let rest = header
            .strip_prefix("# supinf-field ")
            .ok_or_else(|| Error::FieldFormat(format!("bad header: {header}")))?;
        let mut dim = None;
        let mut cells = None;
        let mut components = None;
        for tok in rest.split_whitespace() {
            match tok.split_once('=') {
                Some(("dim", v)) => dim = v.parse::<usize>().ok(),
                Some(("cells", v)) => cells = Some(v.to_string()),
                Some(("components", v)) => components = v.parse::<usize>().ok(),
                _ => return Err(Error::FieldFormat(format!("bad header token: {tok}"))),
            }
        }
        let (Some(dim), Some(cells), Some(components)) = (dim, cells, components) else {
            return Err(Error::FieldFormat(format!("incomplete header: {header}")));
        };
        if dim != mesh.dim() || cells != mesh.dump_cells() || components == 0 {
            return Err(Error::FieldFormat(format!(
                "header dim={dim} cells={cells} does not match mesh dim={} cells={}",
                mesh.dim(),
                mesh.dump_cells()
            )));
        }
        let mut values = Vec::with_capacity(mesh.n_nodes() * components);
        for (k, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::FieldFormat(format!("line {}: {e}", k + 2)))?;
            if row.len() != components {
                return Err(Error::FieldFormat(format!(
                    "line {}: expected {components} values, got {}",
                    k + 2,
                    row.len()
                )));
            }
            values.extend(row);
        }
        let field = Field { components, values };
        field.validate(mesh)?;
        Ok(field)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_interval_quadrature() {
        let mesh = Mesh::build(1, &[(0.0, 1.0)], &[4]).unwrap();
        assert_eq!(mesh.h(), &[0.25]);
        assert_eq!(mesh.n_quad(), 4);
        assert!(mesh.quadrature().iter().all(|q| q.w == 0.25));
        let total: f64 = mesh.quadrature().iter().map(|q| q.w).sum();
        assert_eq!(total, 1.0);
    }

    #[test]
    fn rectangle_weights_sum_to_area() {
        let mesh = Mesh::build(2, &[(0.0, 1.0), (0.0, 2.0)], &[4, 4]).unwrap();
        let total: f64 = mesh.quadrature().iter().map(|q| q.w).sum();
        assert!((total - 2.0).abs() < 1e-14);
        assert_eq!(mesh.measure(), 2.0);
        assert_eq!(mesh.free_nodes().len(), 9);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Mesh::build(1, &[(0.0, 1.0)], &[1]).is_err());
        assert!(Mesh::build(1, &[(1.0, 1.0)], &[4]).is_err());
        assert!(Mesh::build(3, &[(0.0, 1.0); 3], &[4; 3]).is_err());
        assert!(Mesh::build(2, &[(0.0, 1.0)], &[4]).is_err());
    }

    #[test]
    fn zero_field_samples_to_zero() {
        let mesh = Mesh::build(2, &[(0.0, 1.0), (0.0, 1.0)], &[3, 3]).unwrap();
        let s = mesh.sample(&Field::zeros(&mesh, 2)).unwrap();
        assert!(s.values.iter().chain(&s.grads).all(|&v| v == 0.0));
    }

    #[test]
    fn hat_has_unit_slopes() {
        let mesh = Mesh::unit_interval(8).unwrap();
        let u = Field::scalar_from_fn(&mesh, |x| x.min(1.0 - x));
        let s = mesh.sample(&u).unwrap();
        for q in 0..8 {
            let expected = if q < 4 { 1.0 } else { -1.0 };
            assert!((s.grad(q)[0] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn parabola_gradient_close_to_derivative() {
        let mesh = Mesh::unit_interval(256).unwrap();
        let u = Field::scalar_from_fn(&mesh, |x| x * (1.0 - x));
        let s = mesh.sample(&u).unwrap();
        let h = mesh.h()[0];
        for (q, qp) in mesh.quadrature().iter().enumerate() {
            assert!((s.grad(q)[0] - (1.0 - 2.0 * qp.x[0])).abs() <= h);
        }
    }

    #[test]
    fn linear_field_has_exact_gradient_in_2d() {
        let mesh = Mesh::build(2, &[(0.0, 2.0), (0.0, 1.0)], &[4, 3]).unwrap();
        // not zero on the boundary, so fill all nodes directly
        let mut f = Field::zeros(&mesh, 1);
        for node in 0..mesh.n_nodes() {
            let x = mesh.node_coords(node);
            f.values[node] = 3.0 * x[0] - 2.0 * x[1];
        }
        let s = mesh.sample(&f).unwrap();
        for q in 0..mesh.n_quad() {
            assert!((s.grad(q)[0] - 3.0).abs() < 1e-12);
            assert!((s.grad(q)[1] + 2.0).abs() < 1e-12);
            let x = mesh.quadrature()[q].x;
            assert!((s.value(q)[0] - (3.0 * x[0] - 2.0 * x[1])).abs() < 1e-12);
        }
    }

    #[test]
    fn scatter_is_adjoint_of_sample() {
        let mesh = Mesh::build(2, &[(0.0, 1.0), (0.0, 1.0)], &[3, 4]).unwrap();
        let v = Field::from_fn(&mesh, 2, |x, o| {
            o[0] = (3.0 * x[0]).sin() + x[1];
            o[1] = x[0] * x[1] - 0.3;
        });
        let s = mesh.sample(&v).unwrap();
        let a: Vec<f64> = (0..s.values.len()).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let b: Vec<f64> = (0..s.grads.len()).map(|i| ((i * 3) % 7) as f64 * 0.1).collect();
        let lhs: f64 = a.iter().zip(&s.values).map(|(x, y)| x * y).sum::<f64>()
            + b.iter().zip(&s.grads).map(|(x, y)| x * y).sum::<f64>();
        let cot = mesh.scatter(2, &a, &b).unwrap();
        let rhs: f64 = cot.values().iter().zip(v.values()).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn dump_round_trip_is_exact() {
        let mesh = Mesh::build(2, &[(0.0, 1.0), (0.0, 1.0)], &[3, 3]).unwrap();
        let v = Field::from_fn(&mesh, 2, |x, o| {
            o[0] = (x[0] * 10.0).exp() / 7.0;
            o[1] = -x[1] / 3.0;
        });
        let text = v.to_dump(&mesh);
        assert!(text.starts_with("# supinf-field dim=2 cells=3x3 components=2\n"));
        let back = Field::from_dump(&text, &mesh).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn dump_rejects_nonzero_boundary() {
        let mesh = Mesh::unit_interval(2).unwrap();
        let text = "# supinf-field dim=1 cells=2 components=1\n1.0\n0.5\n0.0\n";
        assert!(Field::from_dump(text, &mesh).is_err());
    }
}
