//! Measures `sigma_p`, `tau_p`, normalized multipliers and the residuals of the
//! first-order system
//!
//! `Lambda int f_P : D phi dsigma + M int g_eta . phi dtau = <Psi, dC(phi)>`.

use crate::constraints::{self, DualElement};
use crate::error::{Error, Result};
use crate::functionals::{density_values, normalized_lp, Cotangent, Density, DensityF};
use crate::mesh::{Field, Mesh, Samples};
use crate::solver::{Check, Problem, RawMultipliers, SolveState};

/// Point masses at the quadrature points.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn zero(n: usize) -> DiscreteMeasure {
        DiscreteMeasure { weights: vec![0.0; n] }
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|&w| w == 0.0)
    }

    /// `int phi dsigma` for a test function of the coordinates.
    pub fn pair<F: Fn(&[f64]) -> f64>(&self, mesh: &Mesh, phi: F) -> f64 {
        mesh.quadrature().iter().zip(&self.weights).map(|(q, w)| w * phi(&q.x[..mesh.dim()])).sum()
    }
}

/// `w_q / |Omega| (d_q / D_p)^(p-1)` with `D_p` the normalized Lp norm of `d`;
/// the zero measure when `D_p = 0`.
pub fn measure_from_density(values: &[f64], mesh: &Mesh, p: f64) -> DiscreteMeasure {
    let total = normalized_lp(values, mesh, p);
    if total == 0.0 {
        return DiscreteMeasure::zero(values.len());
    }
    let ln_total = total.ln();
    let inv_measure = 1.0 / mesh.measure();
    let weights = mesh
        .quadrature()
        .iter()
        .zip(values)
        .map(|(q, &d)| if d > 0.0 { q.w * inv_measure * ((p - 1.0) * (d.ln() - ln_total)).exp() } else { 0.0 })
        .collect();
    DiscreteMeasure { weights }
}

/// `(sigma_p, tau_p)` for the field `u`; `tau_p = 0` without a `g` density.
pub fn build_measures(problem: &Problem, mesh: &Mesh, u: &Field, p: f64) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
    let s = mesh.sample(u)?;
    measures_from_samples(problem, mesh, &s, p)
}

fn measures_from_samples(
    problem: &Problem,
    mesh: &Mesh,
    s: &Samples,
    p: f64,
) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
    let sigma = measure_from_density(&density_values(&problem.f, mesh, s)?, mesh, p);
    let tau = match &problem.g {
        Some(g) => measure_from_density(&density_values(g, mesh, s)?, mesh, p),
        None => DiscreteMeasure::zero(mesh.n_quad()),
    };
    Ok((sigma, tau))
}

/// `(Lambda, M, Psi)` with `Lambda + M + |Psi| = 1`; `r` is the normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledMultipliers {
    pub lambda: f64,
    pub m: f64,
    pub psi: DualElement,
    pub psi_norm: f64,
    pub r: f64,
    pub ln_r: f64,
}

impl RescaledMultipliers {
    pub fn normalization_sum(&self) -> f64 {
        self.lambda + self.m + self.psi_norm
    }
}

fn ln_or_neg_inf(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// `lambda^ = lambda F_p^(p-1)`, `mu^ = mu G_p^(p-1)` (or the bare multiplier
/// when the energy vanishes), accounting for the solver's objective and cap
/// scales, then normalized by `R = lambda^ + mu^ + |psi|`. Evaluated in logs so
/// large `p` does not overflow.
pub fn rescale(raw: &RawMultipliers, f_p: f64, g_p: f64, p: f64) -> Result<RescaledMultipliers> {
    if !(raw.lambda >= 0.0 && raw.mu >= 0.0) {
        return Err(Error::InvalidConstraint(format!(
            "multipliers must be nonnegative (lambda = {}, mu = {})",
            raw.lambda, raw.mu
        )));
    }
    let ln_c = raw.objective_scale.ln();
    let ln_g = raw.cap_scale.ln();
    let ln_lambda = ln_or_neg_inf(raw.lambda)
        + if f_p > 0.0 { (p - 1.0) * (f_p.ln() - ln_c) - ln_c } else { -p * ln_c };
    let ln_mu = ln_or_neg_inf(raw.mu) + if g_p > 0.0 { (p - 1.0) * (g_p.ln() - ln_g) - ln_g } else { -p * ln_g };
    let norm = raw.psi.dual_norm();
    let ln_psi = ln_or_neg_inf(norm);
    let top = ln_lambda.max(ln_mu).max(ln_psi);
    if top == f64::NEG_INFINITY || top.is_nan() {
        return Err(Error::VanishingMultipliers);
    }
    let (a, b, c) = ((ln_lambda - top).exp(), (ln_mu - top).exp(), (ln_psi - top).exp());
    let sum = a + b + c;
    let ln_r = top + sum.ln();
    let mut psi = raw.psi.clone();
    if norm > 0.0 {
        let k = c / sum / norm;
        psi.values_mut().for_each(|v| *v *= k);
    }
    Ok(RescaledMultipliers {
        lambda: a / sum,
        m: b / sum,
        psi_norm: c / sum,
        psi,
        r: ln_r.exp(),
        ln_r,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    /// `max_i |LHS(phi_i) - <Psi, dC(phi_i)>| / (1 + |phi_i|_{W^{1,inf}})` over interior hats.
    pub residual: f64,
    /// Same with the right-hand side paired against `dQ` itself, which vanishes
    /// for the `pi`-relaxed kinds at feasible points.
    pub residual_relaxed_rhs: f64,
    pub degenerate_differential: bool,
    /// False when a holonomic constraint has `Pi_eta != 0` on its zero set.
    pub theory_backed: bool,
}

/// KKT residual of `u` for given normalized multipliers.
pub fn kkt_residual(
    problem: &Problem,
    mesh: &Mesh,
    u: &Field,
    p: f64,
    mult: &RescaledMultipliers,
) -> Result<KktReport> {
    let s = mesh.sample(u)?;
    let nc = u.components();
    let dim = mesh.dim();
    let (sigma, tau) = measures_from_samples(problem, mesh, &s, p)?;
    let mut lhs = Cotangent::zeros(mesh, nc);
    let mut eta_d = vec![0.0; nc];
    let mut p_d = vec![0.0; nc * dim];
    for (q, qp) in mesh.quadrature().iter().enumerate() {
        let x = &qp.x[..dim];
        if sigma.weights[q] > 0.0 && mult.lambda > 0.0 {
            problem.f.derivative(x, s.value(q), s.grad(q), &mut eta_d, &mut p_d);
            let k = mult.lambda * sigma.weights[q];
            (0..nc).for_each(|c| lhs.value[q * nc + c] += k * eta_d[c]);
            (0..nc * dim).for_each(|c| lhs.grad[q * nc * dim + c] += k * p_d[c]);
        }
        if let Some(g) = &problem.g {
            if tau.weights[q] > 0.0 && mult.m > 0.0 {
                g.derivative(x, s.value(q), s.grad(q), &mut eta_d, &mut p_d);
                let k = mult.m * tau.weights[q];
                (0..nc).for_each(|c| lhs.value[q * nc + c] += k * eta_d[c]);
                (0..nc * dim).for_each(|c| lhs.grad[q * nc * dim + c] += k * p_d[c]);
            }
        }
    }
    let lhs = lhs.scatter(mesh, nc)?;

    let specs = &problem.constraints;
    let rows = constraints::underlying_rows(specs, mesh, &s)?;
    let psi = if mult.psi.is_empty() && !rows.is_empty() { rows.zeros_like() } else { mult.psi.clone() };
    if !psi.has_same_layout(&rows) {
        return Err(Error::KindMismatch("multiplier layout does not match the constraints".into()));
    }
    let mut rhs = Cotangent::zeros(mesh, nc);
    constraints::underlying_vjp(specs, mesh, &s, &psi, &mut rhs);
    let rhs = rhs.scatter(mesh, nc)?;
    let mut relaxed = psi.clone();
    for (b, rb) in relaxed.blocks.iter_mut().zip(&rows.blocks) {
        if !b.equality {
            b.values.iter_mut().zip(&rb.values).for_each(|(v, c)| *v *= constraints::pi_relax_derivative(*c));
        }
    }
    let mut rhs_relaxed = Cotangent::zeros(mesh, nc);
    constraints::underlying_vjp(specs, mesh, &s, &relaxed, &mut rhs_relaxed);
    let rhs_relaxed = rhs_relaxed.scatter(mesh, nc)?;

    let denom = 2.0 + mesh.hat_gradient_sup();
    let worst = |r: &Field| -> f64 {
        lhs.values().iter().zip(r.values()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / denom
    };
    Ok(KktReport {
        residual: worst(&rhs),
        residual_relaxed_rhs: worst(&rhs_relaxed),
        degenerate_differential: specs.iter().any(|c| c.degenerate_differential()),
        theory_backed: !constraints::holonomic_nondegenerate(specs, mesh, &s, 1e-6),
    })
}

/// KKT residual of a solve state against its own multipliers.
pub fn kkt_residual_p(state: &SolveState, problem: &Problem, mesh: &Mesh) -> Result<KktReport> {
    kkt_residual(problem, mesh, &state.field, state.p, &state.rescaled)
}

/// `|mu (G_value - G)|`; zero without a finite cap.
pub fn slackness(mu: f64, g_value: f64, cap: f64) -> f64 {
    if cap.is_finite() {
        (mu * (g_value - cap)).abs()
    } else {
        0.0
    }
}

/// Two sides of an identity with the magnitude of the terms involved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub scale: f64,
}

impl IdentityCheck {
    pub fn gap(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

fn check_weights(sigma: &DiscreteMeasure, mesh: &Mesh) -> Result<()> {
    if sigma.weights.len() != mesh.n_quad() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} measure weights", mesh.n_quad()),
            actual: sigma.weights.len().to_string(),
        });
    }
    Ok(())
}

/// `int f(Dv - Du) dsigma` against
/// `int f(Dv) dsigma - int f(Du) dsigma + int f_P(Du) : (Du - Dv) dsigma`.
pub fn quadratic_identity_gap(
    f: &DensityF,
    mesh: &Mesh,
    u: &Field,
    v: &Field,
    sigma: &DiscreteMeasure,
) -> Result<IdentityCheck> {
    if !f.is_quadratic() {
        return Err(Error::InvalidDensity("the quadratic identity needs a quadratic density".into()));
    }
    check_weights(sigma, mesh)?;
    let su = mesh.sample(u)?;
    let sv = mesh.sample(v)?;
    let m = su.components * mesh.dim();
    let mut diff = vec![0.0; m];
    let mut fp = vec![0.0; m];
    let mut eta = vec![0.0; su.components];
    let (mut lhs, mut rhs, mut scale) = (0.0, 0.0, 0.0);
    for (q, qp) in mesh.quadrature().iter().enumerate() {
        let x = &qp.x[..mesh.dim()];
        let (du, dv) = (su.grad(q), sv.grad(q));
        diff.iter_mut().enumerate().for_each(|(k, d)| *d = dv[k] - du[k]);
        f.derivative(x, su.value(q), du, &mut eta, &mut fp);
        let fu = f.value(x, su.value(q), du);
        let fv = f.value(x, sv.value(q), dv);
        let cross: f64 = fp.iter().zip(&diff).map(|(a, d)| -a * d).sum();
        let w = sigma.weights[q];
        lhs += w * f.value(x, su.value(q), &diff);
        rhs += w * (fv - fu + cross);
        scale += w * (fv + fu + cross.abs());
    }
    Ok(IdentityCheck { lhs, rhs, scale })
}

/// `int f(Du_p) dsigma_p` against `F_p(u_p)`.
pub fn energy_measure_identity(
    f: &DensityF,
    mesh: &Mesh,
    u: &Field,
    p: f64,
    sigma: &DiscreteMeasure,
) -> Result<IdentityCheck> {
    check_weights(sigma, mesh)?;
    let s = mesh.sample(u)?;
    let values = density_values(f, mesh, &s)?;
    let lhs: f64 = values.iter().zip(&sigma.weights).map(|(d, w)| d * w).sum();
    let rhs = normalized_lp(&values, mesh, p);
    Ok(IdentityCheck { lhs, rhs, scale: 1.0 + rhs })
}

/// `int f(Du - Dv) dsigma` against `alpha0 int |Du - Dv|^2 dsigma`.
pub fn ellipticity_inequality(
    f: &DensityF,
    mesh: &Mesh,
    u: &Field,
    v: &Field,
    sigma: &DiscreteMeasure,
) -> Result<IdentityCheck> {
    check_weights(sigma, mesh)?;
    let alpha0 = f.min_ellipticity(mesh)?;
    let su = mesh.sample(u)?;
    let sv = mesh.sample(v)?;
    let mut diff = vec![0.0; su.components * mesh.dim()];
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for (q, qp) in mesh.quadrature().iter().enumerate() {
        let (du, dv) = (su.grad(q), sv.grad(q));
        diff.iter_mut().enumerate().for_each(|(k, d)| *d = du[k] - dv[k]);
        let w = sigma.weights[q];
        lhs += w * f.value(&qp.x[..mesh.dim()], su.value(q), &diff);
        rhs += w * alpha0 * diff.iter().map(|d| d * d).sum::<f64>();
    }
    Ok(IdentityCheck { lhs, rhs, scale: lhs.abs() + rhs.abs() })
}

/// Thresholds for [`diagnostics`].
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub kkt: f64,
    pub mass: f64,
    pub slack: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { kkt: 1e-6, mass: 1e-12, slack: 1e-8 }
    }
}

/// Recomputes the measure, multiplier and residual checks of a solve state.
pub fn diagnostics(state: &SolveState, problem: &Problem, mesh: &Mesh, tol: &Tolerances) -> Result<Vec<Check>> {
    diagnose(problem, mesh, &state.field, state.p, state.g_p, &state.rescaled, tol)
}

/// [`diagnostics`] for a bare field with its rescaled multipliers and `G_p`,
/// as reloaded from a state dump.
pub fn diagnose(
    problem: &Problem,
    mesh: &Mesh,
    field: &Field,
    p: f64,
    g_p: f64,
    m: &RescaledMultipliers,
    tol: &Tolerances,
) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let (sigma, tau) = build_measures(problem, mesh, field, p)?;
    out.push(Check::new("sigma_mass", sigma.mass() <= 1.0 + tol.mass, format!("{:.16e}", sigma.mass())));
    out.push(Check::new("tau_mass", tau.mass() <= 1.0 + tol.mass, format!("{:.16e}", tau.mass())));
    let e = energy_measure_identity(&problem.f, mesh, field, p, &sigma)?;
    out.push(Check::new(
        "energy_measure_identity",
        e.gap() <= 1e-10 * e.scale,
        format!("int f dsigma = {:.16e}, F_p = {:.16e}", e.lhs, e.rhs),
    ));
    let sum = m.normalization_sum();
    out.push(Check::new("normalization", (sum - 1.0).abs() <= 1e-14, format!("Lambda + M + |Psi| = {sum:.16e}")));
    out.push(Check::new("normalizer_positive", m.r > 0.0 || m.ln_r.is_finite(), format!("ln R = {:.6e}", m.ln_r)));
    out.push(Check::new(
        "multiplier_ranges",
        (0.0..=1.0).contains(&m.lambda) && (0.0..=1.0).contains(&m.m),
        format!("Lambda = {:.6e}, M = {:.6e}", m.lambda, m.m),
    ));
    let slack = if problem.has_cap() { slackness(m.m, g_p, problem.cap) } else { 0.0 };
    let slack_tol = tol.slack * (1.0 + if problem.cap.is_finite() { problem.cap } else { 0.0 });
    out.push(Check::new("slackness", slack <= slack_tol, format!("{slack:.3e}")));
    let report = kkt_residual(problem, mesh, field, p, m)?;
    out.push(Check::new("kkt_residual", report.residual <= tol.kkt, format!("{:.3e}", report.residual)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{Block, Shape};

    fn raw(lambda: f64, mu: f64, psi: f64) -> RawMultipliers {
        let psi = DualElement { blocks: vec![Block { shape: Shape::Scalar { rows: 1 }, equality: false, values: vec![psi] }] };
        RawMultipliers { lambda, mu, psi, objective_scale: 1.0, cap_scale: 1.0 }
    }

    #[test]
    fn rescale_examples() {
        let r = rescale(&raw(1.0, 0.0, 0.0), 2.0, 0.0, 3.0).unwrap();
        assert!((r.r - 4.0).abs() < 1e-14);
        assert_eq!((r.lambda, r.m, r.psi_norm), (1.0, 0.0, 0.0));
        // lambda^ = mu^ = |psi| = 2 with F = G = 1
        let r = rescale(&raw(2.0, 2.0, -2.0), 1.0, 1.0, 5.0).unwrap();
        assert!((r.lambda - 1.0 / 3.0).abs() < 1e-15 && (r.m - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.psi_norm - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.normalization_sum() - 1.0).abs() < 1e-15);
        assert!(matches!(rescale(&raw(0.0, 0.0, 0.0), 1.0, 1.0, 3.0), Err(Error::VanishingMultipliers)));
    }

    #[test]
    fn rescale_survives_huge_exponent() {
        let r = rescale(&raw(1.0, 1.0, 0.0), 3.0, 2.0, 4000.0).unwrap();
        assert!(r.lambda > 0.999999 && r.m < 1e-100);
        assert!(r.r.is_infinite() && r.ln_r.is_finite());
    }

    #[test]
    fn measures_of_simple_fields() {
        let mesh = Mesh::unit_interval(32).unwrap();
        let pb = Problem::new(1, DensityF::Dirichlet);
        let (s, t) = build_measures(&pb, &mesh, &Field::zeros(&mesh, 1), 4.0).unwrap();
        assert!(s.is_zero() && t.is_zero());
        let hat = Field::scalar_from_fn(&mesh, |x| x.min(1.0 - x));
        let (s, _) = build_measures(&pb, &mesh, &hat, 7.0).unwrap();
        assert!((s.mass() - 1.0).abs() < 1e-14);
        assert!(s.weights.iter().all(|&w| (w - 1.0 / 32.0).abs() < 1e-15));
        let par = Field::scalar_from_fn(&mesh, |x| x * (1.0 - x));
        let (s, _) = build_measures(&pb, &mesh, &par, 8.0).unwrap();
        assert!(s.mass() <= 1.0 + 1e-12);
        assert!(s.weights[0] > 10.0 * s.weights[16] && s.weights[31] > 10.0 * s.weights[15]);
    }

    #[test]
    fn energy_identity_examples() {
        let mesh = Mesh::unit_interval(64).unwrap();
        let f = DensityF::Dirichlet;
        let pb = Problem::new(1, f.clone());
        for (u, p) in [
            (Field::zeros(&mesh, 1), 4.0),
            (Field::scalar_from_fn(&mesh, |x| x.min(1.0 - x)), 4.0),
            (Field::scalar_from_fn(&mesh, |x| x * (1.0 - x)), 4.0),
        ] {
            let (s, _) = build_measures(&pb, &mesh, &u, p).unwrap();
            let e = energy_measure_identity(&f, &mesh, &u, p, &s).unwrap();
            assert!(e.gap() <= 1e-10 * e.scale, "{e:?}");
        }
    }

    #[test]
    fn quadratic_identity_trivial_case() {
        let mesh = Mesh::unit_interval(16).unwrap();
        let u = Field::scalar_from_fn(&mesh, |x| x.sin());
        let sigma = DiscreteMeasure { weights: vec![1.0 / 16.0; 16] };
        let g = quadratic_identity_gap(&DensityF::Dirichlet, &mesh, &u, &u, &sigma).unwrap();
        assert_eq!(g.lhs, 0.0);
        assert!(g.rhs.abs() < 1e-15);
        assert!(quadratic_identity_gap(&DensityF::GradientNorm, &mesh, &u, &u, &sigma).is_err());
    }

    #[test]
    fn slackness_examples() {
        assert_eq!(slackness(0.0, 0.5, 1.0), 0.0);
        assert_eq!(slackness(3.0, 1.0, 1.0), 0.0);
        assert!((slackness(0.5, 1.0 + 1e-9, 1.0) - 5e-10).abs() < 1e-16);
        assert_eq!(slackness(1.0, 5.0, f64::INFINITY), 0.0);
    }
}
