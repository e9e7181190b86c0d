//! Curvature-weighted P1 operator used to precondition the inner minimizer.
//!
//! `P = sum_q w_q (a_q grad phi_i . grad phi_j + b_q phi_i phi_j)`, one copy per
//! component, factored once by a banded Cholesky decomposition.

use crate::mesh::Mesh;

#[derive(Debug, Clone)]
pub(crate) struct BandedCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    fn at(&self, i: usize, j: usize) -> usize {
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// Factors the symmetric band matrix given by its lower band
    /// (`band[i * (bw + 1) + (j + bw - i)] = A[i][j]` for `i - bw <= j <= i`).
    fn factor(n: usize, bw: usize, band: Vec<f64>) -> Option<BandedCholesky> {
        let mut c = BandedCholesky { n, bw, l: band };
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut sum = c.l[c.at(i, j)];
                for k in lo.max(j.saturating_sub(bw))..j {
                    sum -= c.l[c.at(i, k)] * c.l[c.at(j, k)];
                }
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return None;
                    }
                    let idx = c.at(i, i);
                    c.l[idx] = sum.sqrt();
                } else {
                    let idx = c.at(i, j);
                    c.l[idx] = sum / c.l[c.at(j, j)];
                }
            }
        }
        Some(c)
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut y = rhs.to_vec();
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let mut s = y[i];
            for k in lo..i {
                s -= self.l[self.at(i, k)] * y[k];
            }
            y[i] = s / self.l[self.at(i, i)];
        }
        for i in (0..self.n).rev() {
            let hi = (i + self.bw).min(self.n - 1);
            let mut s = y[i];
            for k in i + 1..=hi {
                s -= self.l[self.at(k, i)] * y[k];
            }
            y[i] = s / self.l[self.at(i, i)];
        }
        y
    }
}

/// Assembles and factors `P` over the free nodes (ordering of
/// `mesh.free_nodes()`, components contiguous). `a`, `b` are per quadrature
/// point; both are floored relative to their maximum so `P` stays definite.
pub(crate) fn build(mesh: &Mesh, components: usize, a: &[f64], b: &[f64]) -> Option<BandedCholesky> {
    let mut free_index = vec![usize::MAX; mesh.n_nodes()];
    for (k, &node) in mesh.free_nodes().iter().enumerate() {
        free_index[node] = k;
    }
    let nf = mesh.free_nodes().len();
    let n = nf * components;
    if n == 0 {
        return None;
    }
    let mut bw = 0;
    for q in 0..mesh.n_quad() {
        let (nodes, _, _) = mesh.element(q);
        let idx: Vec<usize> = nodes.iter().map(|&v| free_index[v]).filter(|&v| v != usize::MAX).collect();
        if let (Some(lo), Some(hi)) = (idx.iter().min(), idx.iter().max()) {
            bw = bw.max((hi - lo) * components);
        }
    }
    let a_max = a.iter().copied().fold(0.0, f64::max);
    let b_max = b.iter().copied().fold(0.0, f64::max);
    if !(a_max > 0.0 || b_max > 0.0) || !(a_max + b_max).is_finite() {
        return None;
    }
    let h2 = mesh.h().iter().map(|h| h * h).fold(f64::INFINITY, f64::min);
    // mass-type floor comparable to the smallest stiffness eigenvalue scale
    let floor_a = 1e-8 * a_max;
    let floor_b = 1e-8 * (b_max + a_max / h2.max(1e-300) * 1e-4);
    let mut band = vec![0.0; n * (bw + 1)];
    let at = |i: usize, j: usize| i * (bw + 1) + (j + bw - i);
    let dim = mesh.dim();
    for q in 0..mesh.n_quad() {
        let (nodes, shape, dshape) = mesh.element(q);
        let w = mesh.quadrature()[q].w;
        let aq = a[q].max(floor_a);
        let bq = b[q].max(floor_b);
        for (l, &nl) in nodes.iter().enumerate() {
            let il = free_index[nl];
            if il == usize::MAX {
                continue;
            }
            for (m, &nm) in nodes.iter().enumerate() {
                let im = free_index[nm];
                if im == usize::MAX || im > il {
                    continue;
                }
                let grad: f64 = (0..dim).map(|d| dshape[l][d] * dshape[m][d]).sum();
                let v = w * (aq * grad + bq * shape[l] * shape[m]);
                for c in 0..components {
                    band[at(il * components + c, im * components + c)] += v;
                }
            }
        }
    }
    BandedCholesky::factor(n, bw, band)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_tridiagonal_system() {
        // A = tridiag(-1, 2, -1), n = 5, A x = 1 has x_i = i(6-i)/2 (1-based)
        let n = 5;
        let bw = 1;
        let mut band = vec![0.0; n * 2];
        for i in 0..n {
            band[i * 2 + 1] = 2.0;
            if i > 0 {
                band[i * 2] = -1.0;
            }
        }
        let c = BandedCholesky::factor(n, bw, band).unwrap();
        let x = c.solve(&[1.0; 5]);
        for (i, v) in x.iter().enumerate() {
            let k = (i + 1) as f64;
            assert!((v - k * (6.0 - k) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite() {
        assert!(BandedCholesky::factor(2, 1, vec![0.0, 1.0, 2.0, 1.0]).is_none());
    }

    #[test]
    fn assembled_stiffness_in_2d_is_definite() {
        let mesh = Mesh::build(2, &[(0.0, 1.0), (0.0, 1.0)], &[6, 5]).unwrap();
        let a = vec![1.0; mesh.n_quad()];
        let b = vec![0.0; mesh.n_quad()];
        let c = build(&mesh, 2, &a, &b).unwrap();
        let x = c.solve(&vec![1.0; mesh.free_nodes().len() * 2]);
        assert!(x.iter().all(|v| *v > 0.0 && v.is_finite()));
    }
}
