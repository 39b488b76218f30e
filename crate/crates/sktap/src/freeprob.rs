//! Free-probability prediction layer: Stieltjes transforms, the
//! subordination fixed point for semicircle-plus-diagonal limits, density
//! recovery, the support edge (the spectral reading of the AT condition),
//! and rank-one outlier predictions via the Sherman-Morrison secular
//! equation.
//!
//! The measure nu is the law of `-cosh^2(h + beta sqrt(q) Z)`, represented
//! as a quadrature pushforward (never by sampling): atoms at
//! `-cosh^2(h + beta sqrt(q) x_i)` with Gauss-Hermite weights. Its support
//! sits in (-inf, -1].

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SkError};
use crate::params::ModelParams;
use crate::quad::QuadratureRule;
use crate::rs::default_rule;
use crate::tap::Magnetization;

/// Quadrature representation of nu.
#[derive(Debug, Clone)]
pub struct NuMeasure {
    pub params: ModelParams,
    pub q: f64,
    pub rule: QuadratureRule,
    /// cosh^2(h + beta sqrt(q) x_i) per node; the atoms of nu are their
    /// negatives.
    cosh_sq: Vec<f64>,
    /// tanh^2 at the same nodes (for the population secular equation).
    tanh_sq: Vec<f64>,
}

impl NuMeasure {
    /// Builds nu from the scalar layer's shared quadrature rule, so edge
    /// identities hold to solver accuracy against `solve_q` outputs.
    pub fn new(params: ModelParams, q: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&q) {
            return Err(SkError::InvalidArgument(format!("q must be in [0,1), got {q}")));
        }
        let rule = default_rule().clone();
        Ok(Self::from_rule(params, q, rule))
    }

    /// Same measure on a caller-supplied rule (tests use degenerate rules).
    pub fn from_rule(params: ModelParams, q: f64, rule: QuadratureRule) -> Self {
        let scale = params.beta * q.sqrt();
        let cosh_sq: Vec<f64> = rule
            .nodes
            .iter()
            .map(|&x| {
                let y = params.h + scale * x;
                let c = y.cosh();
                c * c
            })
            .collect();
        let tanh_sq: Vec<f64> = rule
            .nodes
            .iter()
            .map(|&x| {
                let t = (params.h + scale * x).tanh();
                t * t
            })
            .collect();
        Self {
            params,
            q,
            rule,
            cosh_sq,
            tanh_sq,
        }
    }

    pub fn beta(&self) -> f64 {
        self.params.beta
    }

    /// Largest atom of nu (numerically just below -1).
    pub fn support_max(&self) -> f64 {
        self.cosh_sq.iter().fold(f64::NEG_INFINITY, |a, &c| a.max(-c))
    }

    /// Value below which all but `tail_mass` of nu(. - shift) sits; used to
    /// size density grids.
    pub fn lower_quantile(&self, tail_mass: f64) -> f64 {
        let mut atoms: Vec<(f64, f64)> = self
            .cosh_sq
            .iter()
            .zip(&self.rule.weights)
            .map(|(&c, &w)| (-c, w))
            .collect();
        atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut cum = 0.0;
        for &(a, w) in &atoms {
            cum += w;
            if cum >= tail_mass {
                return a;
            }
        }
        atoms.last().map(|&(a, _)| a).unwrap_or(-1.0)
    }
}

/// Stieltjes transform of nu, `g_nu(z) = E[1/(z + cosh^2)]`, for z off the
/// support (-inf, -1].
pub fn stieltjes_nu(z: Complex64, nu: &NuMeasure) -> Result<Complex64> {
    if z.im == 0.0 && z.re <= nu.support_max() {
        return Err(SkError::InvalidArgument(format!(
            "z = {z} lies on the support of nu"
        )));
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for (&c, &w) in nu.cosh_sq.iter().zip(&nu.rule.weights) {
        acc += w / (z + c);
    }
    Ok(acc)
}

/// Closed-form Stieltjes transform of the semicircle of variance sigma^2
/// (support [-2 sigma, 2 sigma]); branch chosen so g ~ 1/z at infinity.
pub fn semicircle_stieltjes(z: Complex64, sigma: f64) -> Complex64 {
    let s2 = sigma * sigma;
    let mut w = (z * z - 4.0 * s2).sqrt();
    // pick the square root pointing along z so that z - w stays small
    if (z.re * w.re + z.im * w.im) < 0.0 {
        w = -w;
    }
    (z - w) / (2.0 * s2)
}

/// Fixed-point solve of `g = g_{nu - shift}(z - beta^2 g)` at `z = x + i eta`
/// by damped iteration (factor 0.5), warm-started from the semicircle around
/// the shifted mean of nu.
pub fn free_conv_stieltjes(x: f64, eta: f64, nu: &NuMeasure, shift: f64) -> Result<Complex64> {
    if !(eta > 0.0) {
        return Err(SkError::InvalidArgument(format!("eta must be > 0, got {eta}")));
    }
    let z = Complex64::new(x, eta);
    let mean: f64 = nu
        .cosh_sq
        .iter()
        .zip(&nu.rule.weights)
        .map(|(&c, &w)| -w * c)
        .sum::<f64>()
        - shift;
    let g0 = semicircle_stieltjes(z - mean, nu.beta());
    free_conv_from(z, g0, nu, shift)
}

const SUBORDINATION_MAX_ITERS: usize = 100_000;
const SUBORDINATION_TOL: f64 = 1e-10;

fn g_nu_shifted(w: Complex64, nu: &NuMeasure, shift: f64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (&c, &wt) in nu.cosh_sq.iter().zip(&nu.rule.weights) {
        acc += wt / (w + (c - shift));
    }
    acc
}

fn free_conv_from(z: Complex64, g0: Complex64, nu: &NuMeasure, shift: f64) -> Result<Complex64> {
    let b2 = nu.beta() * nu.beta();
    let mut g = g0;
    if g.im > 0.0 {
        g = g.conj();
    }
    for _ in 0..SUBORDINATION_MAX_ITERS {
        let next = 0.5 * g + 0.5 * g_nu_shifted(z - b2 * g, nu, shift);
        let delta = (next - g).norm();
        g = next;
        if delta < SUBORDINATION_TOL {
            return Ok(g);
        }
    }
    Err(SkError::NonConvergence {
        iterations: SUBORDINATION_MAX_ITERS,
        residual: f64::NAN,
    })
}

/// Density of the free convolution (semicircle of variance beta^2 boxplus
/// nu(. - shift)) on a grid, via `-Im g / pi` at height eta, warm-starting
/// each point from its left neighbor.
pub fn density_grid(
    xs: &[f64],
    eta: f64,
    nu: &NuMeasure,
    shift: f64,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(xs.len());
    let mut prev: Option<Complex64> = None;
    let b2 = nu.beta() * nu.beta();
    let _ = b2;
    for &x in xs {
        let z = Complex64::new(x, eta);
        let g = match prev {
            Some(g0) => free_conv_from(z, g0, nu, shift)?,
            None => free_conv_stieltjes(x, eta, nu, shift)?,
        };
        prev = Some(g);
        out.push((-g.im / std::f64::consts::PI).max(0.0));
    }
    Ok(out)
}

/// Piecewise-linear CDF of the free convolution built by trapezoid
/// integration of `density_grid`.
#[derive(Debug, Clone)]
pub struct FreeConvCdf {
    pub xs: Vec<f64>,
    pub cdf: Vec<f64>,
    pub total_mass: f64,
}

impl FreeConvCdf {
    /// Grid spans from the `2e-4` lower quantile of the shifted measure
    /// minus the semicircle radius down to just past the support edge.
    pub fn build(nu: &NuMeasure, shift: f64, points: usize, eta: f64) -> Result<Self> {
        let edge = support_edge(nu)?;
        let hi = edge.d - shift + 0.5;
        let lo = nu.lower_quantile(2e-4) - shift - 2.0 * nu.beta() - 0.5;
        let n = points.max(16);
        let xs: Vec<f64> = (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect();
        let dens = density_grid(&xs, eta, nu, shift)?;
        let mut cdf = vec![0.0; n];
        for i in 1..n {
            cdf[i] = cdf[i - 1] + 0.5 * (dens[i] + dens[i - 1]) * (xs[i] - xs[i - 1]);
        }
        let total_mass = cdf[n - 1];
        Ok(Self {
            xs,
            cdf,
            total_mass,
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x <= self.xs[0] {
            return 0.0;
        }
        if x >= *self.xs.last().unwrap() {
            return self.cdf.last().copied().unwrap().min(1.0);
        }
        let k = self.xs.partition_point(|&v| v <= x);
        let (x0, x1) = (self.xs[k - 1], self.xs[k]);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        (c0 + (c1 - c0) * (x - x0) / (x1 - x0)).min(1.0)
    }
}

/// The subordination map `H(u) = u + beta^2 E[1/(u + cosh^2)]` and its
/// derivative `1 - beta^2 E[1/(u + cosh^2)^2]` for u > -1.
pub fn subordination_h(u: f64, nu: &NuMeasure) -> Result<(f64, f64)> {
    if u <= -1.0 {
        return Err(SkError::InvalidArgument(format!(
            "subordination map needs u > -1, got {u}"
        )));
    }
    let b2 = nu.beta() * nu.beta();
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for (&c, &w) in nu.cosh_sq.iter().zip(&nu.rule.weights) {
        let r = 1.0 / (u + c);
        s1 += w * r;
        s2 += w * r * r;
    }
    Ok((u + b2 * s1, 1.0 - b2 * s2))
}

/// Classification of (beta, h) by the sign of H'(0) = 1 - at_value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtRegime {
    StrictAt,
    OnAtLine,
    BeyondAt,
}

/// Support edge of the free convolution and its Hessian-spectrum shift.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EdgeReport {
    /// Root of H' in (-1, inf).
    pub u_star: f64,
    /// Edge of semicircle boxplus nu: d = H(u_star).
    pub d: f64,
    /// Edge of the Hessian limit: d - beta^2 (1-q).
    pub shifted_edge: f64,
    pub at_regime: AtRegime,
}

const EDGE_BRACKET_LO: f64 = -1.0 + 1e-9;
const EDGE_BRACKET_HI: f64 = 1e3;
const EDGE_TOL: f64 = 1e-12;
const AT_REGIME_TOL: f64 = 1e-10;

/// Locates the support edge: H' is strictly increasing on (-1, inf), so its
/// unique root is found by bisection; `d = H(u*)` and the regime follows the
/// sign of H'(0).
pub fn support_edge(nu: &NuMeasure) -> Result<EdgeReport> {
    let (mut lo, mut hi) = (EDGE_BRACKET_LO, EDGE_BRACKET_HI);
    let dlo = subordination_h(lo, nu)?.1;
    let dhi = subordination_h(hi, nu)?.1;
    if dlo >= 0.0 || dhi <= 0.0 {
        return Err(SkError::BracketFailure(format!(
            "H' does not change sign on ({lo}, {hi}): H'(lo)={dlo}, H'(hi)={dhi}"
        )));
    }
    while hi - lo > EDGE_TOL {
        let mid = 0.5 * (lo + hi);
        if subordination_h(mid, nu)?.1 < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let u_star = 0.5 * (lo + hi);
    let (d, _) = subordination_h(u_star, nu)?;
    let shifted_edge = d - nu.beta() * nu.beta() * (1.0 - nu.q);
    let dh0 = subordination_h(0.0, nu)?.1;
    let at_regime = if dh0 > AT_REGIME_TOL {
        AtRegime::StrictAt
    } else if dh0 < -AT_REGIME_TOL {
        AtRegime::BeyondAt
    } else {
        AtRegime::OnAtLine
    };
    Ok(EdgeReport {
        u_star,
        d,
        shifted_edge,
        at_regime,
    })
}

/// BBP-type prediction for a rank-one deformation whose top eigenvalue
/// converges to theta.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OutlierReport {
    pub theta: f64,
    /// theta escapes the bulk iff it sits outside supp nu with H'(theta) > 0.
    pub in_o: bool,
    /// H(theta) when in the outlier set, else the bulk edge d.
    pub predicted_lambda1: f64,
}

pub fn outlier_prediction(theta: f64, nu: &NuMeasure) -> Result<OutlierReport> {
    if theta <= -1.0 {
        return Err(SkError::InvalidArgument(format!(
            "theta must exceed -1 (outside supp nu), got {theta}"
        )));
    }
    let (value, deriv) = subordination_h(theta, nu)?;
    if deriv > 0.0 {
        Ok(OutlierReport {
            theta,
            in_o: true,
            predicted_lambda1: value,
        })
    } else {
        let edge = support_edge(nu)?;
        Ok(OutlierReport {
            theta,
            in_o: false,
            predicted_lambda1: edge.d,
        })
    }
}

fn secular_root<F: Fn(f64) -> f64>(f: F, lo_limit: f64) -> Result<f64> {
    // f is strictly decreasing on (lo_limit, inf); solve f(u) = 1
    let lo0 = lo_limit + 1e-13 * lo_limit.abs().max(1.0);
    if f(lo0) <= 1.0 {
        return Err(SkError::NoSecularRoot);
    }
    let mut hi = lo_limit.abs().max(1.0);
    let mut tries = 0;
    while f(hi) >= 1.0 {
        hi *= 2.0;
        tries += 1;
        if tries > 200 {
            return Err(SkError::BracketFailure(
                "secular left side never drops below 1".into(),
            ));
        }
    }
    let mut lo = lo0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 * hi.abs().max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Largest eigenvalue of `diag(-1/(1-m_i^2)) + (2 beta^2/N) m m^T` through
/// the Sherman-Morrison secular equation
/// `(2 beta^2/N) sum_i m_i^2/(u + 1/(1-m_i^2)) = 1`.
///
/// The left side decreases from +inf at `-min_i 1/(1-m_i^2)` to 0, so the
/// unique root is the top eigenvalue; `exists_positive` reports whether it
/// lies at u > 0.
pub fn sherman_morrison_top_eig(m: &Magnetization, params: ModelParams) -> Result<(f64, bool)> {
    let n = m.n as f64;
    let ms = m.as_slice();
    let d: Vec<f64> = ms.iter().map(|&x| 1.0 / (1.0 - x * x)).collect();
    let msq: Vec<f64> = ms.iter().map(|&x| x * x).collect();
    let d_min = d.iter().fold(f64::INFINITY, |a, &x| a.min(x));
    let b2 = 2.0 * params.beta * params.beta / n;
    let f = |u: f64| -> f64 { b2 * msq.iter().zip(&d).map(|(&m2, &di)| m2 / (u + di)).sum::<f64>() };
    let u = secular_root(f, -d_min)?;
    Ok((u, u > 0.0))
}

/// Population version of the secular equation,
/// `2 beta^2 E[tanh^2/(u + cosh^2)] = 1`, giving the limit `u_inf`.
pub fn sherman_morrison_population(nu: &NuMeasure) -> Result<(f64, bool)> {
    let b2 = 2.0 * nu.beta() * nu.beta();
    let c_min = nu.cosh_sq.iter().fold(f64::INFINITY, |a, &x| a.min(x));
    let f = |u: f64| -> f64 {
        b2 * nu
            .tanh_sq
            .iter()
            .zip(&nu.cosh_sq)
            .zip(&nu.rule.weights)
            .map(|((&t2, &c2), &w)| w * t2 / (u + c2))
            .sum::<f64>()
    };
    let u = secular_root(f, -c_min)?;
    Ok((u, u > 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rs::solve_q;

    fn nu_at(beta: f64, h: f64) -> (ModelParams, NuMeasure) {
        let params = ModelParams::new(beta, h).unwrap();
        let rs = solve_q(params, 1e-12).unwrap();
        (params, NuMeasure::new(params, rs.q).unwrap())
    }

    #[test]
    fn stieltjes_total_mass_and_herglotz() {
        let (_, nu) = nu_at(1.0, 0.5);
        let z = Complex64::new(1e6, 0.0);
        let g = stieltjes_nu(z, &nu).unwrap();
        assert!((z * g - Complex64::new(1.0, 0.0)).norm() < 1e-4);
        let zc = Complex64::new(-0.3, 0.7);
        assert!(stieltjes_nu(zc, &nu).unwrap().im < 0.0);
        assert!(stieltjes_nu(Complex64::new(-2.0, 0.0), &nu).is_err());
    }

    #[test]
    fn semicircle_closed_form_values() {
        let g = semicircle_stieltjes(Complex64::new(3.0, 0.0), 1.0);
        assert!((g.re - (3.0 - 5.0_f64.sqrt()) / 2.0).abs() < 1e-14);
        assert!(g.im.abs() < 1e-14);
        let edge = semicircle_stieltjes(Complex64::new(2.0, 0.0), 1.0);
        assert!((edge.re - 1.0).abs() < 1e-10);
        // self-consistency g = 1/(z - sigma^2 g)
        let z = Complex64::new(0.3, 0.5);
        let sigma = 1.3;
        let g = semicircle_stieltjes(z, sigma);
        let rhs = 1.0 / (z - sigma * sigma * g);
        assert!((g - rhs).norm() < 1e-12);
        assert!(g.im < 0.0);
    }

    #[test]
    fn subordination_identities() {
        let (params, nu) = nu_at(1.0, 0.5);
        let rs = solve_q(params, 1e-12).unwrap();
        let (h0, dh0) = subordination_h(0.0, &nu).unwrap();
        assert!((h0 - params.beta.powi(2) * (1.0 - rs.q)).abs() < 1e-12);
        assert!((dh0 - (1.0 - rs.at_value)).abs() < 1e-12);
        // strict monotonicity of H' on a grid
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=50 {
            let u = -0.9 + 5.9 * i as f64 / 50.0;
            let (_, d) = subordination_h(u, &nu).unwrap();
            assert!(d > prev);
            prev = d;
        }
        assert!(subordination_h(-1.0, &nu).is_err());
    }

    #[test]
    fn edge_strict_at_point() {
        let (params, nu) = nu_at(1.0, 0.5);
        let rs = solve_q(params, 1e-12).unwrap();
        assert!(rs.at_value < 1.0);
        let edge = support_edge(&nu).unwrap();
        assert_eq!(edge.at_regime, AtRegime::StrictAt);
        assert!(edge.u_star < 0.0, "u* = {}", edge.u_star);
        assert!(edge.shifted_edge < 0.0);
        assert!(edge.d < params.beta.powi(2) * (1.0 - rs.q));
    }

    #[test]
    fn edge_beyond_at_point() {
        let (_, nu) = nu_at(2.0, 0.1);
        let edge = support_edge(&nu).unwrap();
        assert_eq!(edge.at_regime, AtRegime::BeyondAt);
        assert!(edge.u_star > 0.0);
        assert!(edge.shifted_edge < 0.0);
    }

    #[test]
    fn outlier_report_branches() {
        let (_, nu) = nu_at(1.0, 0.5);
        let edge = support_edge(&nu).unwrap();
        let at_star = outlier_prediction(edge.u_star, &nu).unwrap();
        assert!(!at_star.in_o);
        assert!((at_star.predicted_lambda1 - edge.d).abs() < 1e-9);
        // large theta: H(theta) ~ theta + beta^2/theta
        let theta = 250.0;
        let rep = outlier_prediction(theta, &nu).unwrap();
        assert!(rep.in_o);
        let asym = theta + nu.beta().powi(2) / theta;
        assert!((rep.predicted_lambda1 - asym).abs() < 1e-2);
        assert!(outlier_prediction(-1.5, &nu).is_err());
    }

    #[test]
    fn sherman_morrison_constant_vector_closed_form() {
        let params = ModelParams::new(1.2, 0.4).unwrap();
        let c: f64 = 0.55;
        let n = 64;
        let m = Magnetization::new(ndarray::Array1::from_elem(n, c)).unwrap();
        let (u, _) = sherman_morrison_top_eig(&m, params).unwrap();
        let expect = 2.0 * params.beta.powi(2) * c * c - 1.0 / (1.0 - c * c);
        assert!((u - expect).abs() < 1e-12, "{u} vs {expect}");
    }

    #[test]
    fn sherman_morrison_zero_vector_has_no_root() {
        let params = ModelParams::new(1.0, 0.4).unwrap();
        let m = Magnetization::new(ndarray::Array1::zeros(16)).unwrap();
        assert!(matches!(
            sherman_morrison_top_eig(&m, params),
            Err(SkError::NoSecularRoot)
        ));
    }

    #[test]
    fn free_conv_of_point_mass_is_shifted_semicircle() {
        // a single-atom rule turns nu into (almost) a point mass at -cosh^2(h)
        let params = ModelParams::new(0.9, 1e-9).unwrap();
        let rule = QuadratureRule {
            order: 2,
            nodes: vec![0.0, 0.0],
            weights: vec![0.5, 0.5],
        };
        let nu = NuMeasure::from_rule(params, 0.0, rule);
        // atom at -cosh^2(1e-9) = -1 to machine precision; shift 0
        for x in [-3.5, -1.3, 0.4] {
            let g = free_conv_stieltjes(x, 1e-7, &nu, 0.0).unwrap();
            let sc = semicircle_stieltjes(Complex64::new(x + 1.0, 1e-7), params.beta);
            assert!((g - sc).norm() < 1e-8, "x={x}: {g} vs {sc}");
        }
    }

    #[test]
    fn population_secular_sign_tracks_plefka2() {
        let (params, nu) = nu_at(3.2, 3.28);
        let rs = solve_q(params, 1e-12).unwrap();
        assert!(rs.at_value < 1.0 && rs.plefka2_value > 1.0);
        let (u, pos) = sherman_morrison_population(&nu).unwrap();
        assert!(pos && u > 0.0);
        let (params2, nu2) = nu_at(1.0, 0.5);
        let rs2 = solve_q(params2, 1e-12).unwrap();
        assert!(rs2.plefka2_value < 1.0);
        let (u2, pos2) = sherman_morrison_population(&nu2).unwrap();
        assert!(!pos2 && u2 < 0.0);
    }
}
