//! Scalar (N-independent) replica-symmetric layer: the fixed point q, the RS
//! functional, the de Almeida-Thouless and second-Plefka stability values,
//! and the gamma/rho schedule that drives the conditional iteration.
//!
//! Everything here is an expectation against a standard Gaussian, evaluated
//! by Gauss-Hermite quadrature (default order 101; the same cached rule is
//! shared across the scalar layer and the spectral-prediction layer so
//! identities like `H(0) = beta^2 (1-q)` hold to solver accuracy, not merely
//! to quadrature accuracy).

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SkError};
use crate::params::ModelParams;
use crate::quad::{gauss_hermite_rule, QuadratureRule, DEFAULT_ORDER};

/// Order of the tensor-product rule used for the two-Gaussian expectation
/// inside `psi`.
pub const PSI_ORDER: usize = 41;

/// Default fixed-point tolerance for `solve_q`.
pub const DEFAULT_Q_TOL: f64 = 1e-12;

const MAX_BISECTION_ITERS: usize = 200;

pub(crate) fn default_rule() -> &'static QuadratureRule {
    static RULE: OnceLock<QuadratureRule> = OnceLock::new();
    RULE.get_or_init(|| gauss_hermite_rule(DEFAULT_ORDER).expect("default rule"))
}

fn psi_rule() -> &'static QuadratureRule {
    static RULE: OnceLock<QuadratureRule> = OnceLock::new();
    RULE.get_or_init(|| gauss_hermite_rule(PSI_ORDER).expect("psi rule"))
}

/// Numerically stable log cosh: exact for large arguments where cosh overflows.
pub fn log_cosh(x: f64) -> f64 {
    x.abs() - std::f64::consts::LN_2 + (-2.0 * x.abs()).exp().ln_1p()
}

/// Numerically stable 1/cosh^2.
pub fn sech2(x: f64) -> f64 {
    let a = (-x.abs()).exp();
    let r = 2.0 * a / (1.0 + a * a);
    r * r
}

/// The scalar layer at one (beta, h): overlap fixed point and the three
/// derived classifiers.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RsSolution {
    /// Overlap fixed point in [0,1).
    pub q: f64,
    /// RS functional evaluated at q.
    pub rs_value: f64,
    /// beta^2 E cosh^-4(h + beta sqrt(q) Z); the AT condition holds iff <= 1.
    pub at_value: f64,
    /// 2 beta^2 E (tanh^2 - tanh^4)(h + beta sqrt(q) Z); second Plefka
    /// condition holds in the limit iff < 1.
    pub plefka2_value: f64,
}

fn fixed_point_map(params: ModelParams, q: f64, rule: &QuadratureRule) -> f64 {
    let scale = params.beta * q.sqrt();
    rule.expect(|z| {
        let t = (params.h + scale * z).tanh();
        t * t
    })
}

/// Solves `q = E tanh^2(h + beta sqrt(q) Z)` by bisection on [0, 1-1e-12].
///
/// Bracketing is safe for every h != 0: the map minus the identity is
/// positive at 0 (tanh^2(h) > 0) and negative near 1. The returned solution
/// carries the RS functional and both stability values at the fixed point.
pub fn solve_q(params: ModelParams, tol: f64) -> Result<RsSolution> {
    if !(tol > 0.0) {
        return Err(SkError::InvalidArgument(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let rule = default_rule();
    let mut lo = 0.0_f64;
    let mut hi = 1.0 - 1e-12;
    let mut mid = 0.5 * (lo + hi);
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_BISECTION_ITERS {
        mid = 0.5 * (lo + hi);
        let g = fixed_point_map(params, mid, rule) - mid;
        residual = g.abs();
        if g > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        // drive well below tol so downstream identities hold at tol
        if hi - lo < 5e-16 && residual < tol {
            break;
        }
    }
    if residual >= tol {
        return Err(SkError::NonConvergence {
            iterations: MAX_BISECTION_ITERS,
            residual,
        });
    }
    let q = mid;
    Ok(RsSolution {
        q,
        rs_value: rs_functional(params, q),
        at_value: at_value(params, q)?,
        plefka2_value: plefka2_limit_value(params, q)?,
    })
}

/// The RS functional `E log cosh(h + beta sqrt(q) Z) + beta^2 (1-q)^2 / 4`
/// at an arbitrary overlap value.
pub fn rs_functional(params: ModelParams, q: f64) -> f64 {
    let scale = params.beta * q.sqrt();
    default_rule().expect(|z| log_cosh(params.h + scale * z)) + params.beta.powi(2) * (1.0 - q).powi(2) / 4.0
}

fn check_q_range(q: f64) -> Result<()> {
    if !(0.0..1.0).contains(&q) {
        return Err(SkError::InvalidArgument(format!(
            "overlap q must lie in [0,1), got {q}"
        )));
    }
    Ok(())
}

/// Left side of the AT condition, `beta^2 E cosh^-4(h + beta sqrt(q) Z)`.
pub fn at_value(params: ModelParams, q: f64) -> Result<f64> {
    check_q_range(q)?;
    let scale = params.beta * q.sqrt();
    Ok(params.beta.powi(2)
        * default_rule().expect(|z| {
            let s = sech2(params.h + scale * z);
            s * s
        }))
}

/// Limiting second-Plefka value `2 beta^2 E (tanh^2 - tanh^4)`.
pub fn plefka2_limit_value(params: ModelParams, q: f64) -> Result<f64> {
    check_q_range(q)?;
    let scale = params.beta * q.sqrt();
    Ok(2.0 * params.beta.powi(2)
        * default_rule().expect(|z| {
            let y = params.h + scale * z;
            let t2 = y.tanh().powi(2);
            t2 * sech2(y)
        }))
}

/// The overlap-coupling map `psi(t)` of the conditional iteration: the
/// expectation of a product of two tanh fields sharing a sqrt(t) component.
/// Even in h; evaluated by an order-41 tensor rule after conditioning on the
/// shared Gaussian.
pub fn psi(t: f64, params: ModelParams, q: f64) -> Result<f64> {
    check_q_range(q)?;
    if !(0.0..=q).contains(&t) {
        return Err(SkError::InvalidArgument(format!(
            "psi argument must lie in [0, q={q}], got {t}"
        )));
    }
    let rule = psi_rule();
    let h = params.h.abs();
    let a = params.beta * t.sqrt();
    let b = params.beta * (q - t).max(0.0).sqrt();
    let mut outer = 0.0;
    for (&x, &wx) in rule.nodes.iter().zip(&rule.weights) {
        let base = h + a * x;
        let mut inner = 0.0;
        for (&y, &wy) in rule.nodes.iter().zip(&rule.weights) {
            inner += wy * (base + b * y).tanh();
        }
        outer += wx * inner * inner;
    }
    Ok(outer)
}

/// The gamma/rho schedule of the conditional iteration.
///
/// `gamma_sq_partials[k-1]` is `Gamma_k^2 = gamma_1^2 + ... + gamma_k^2`,
/// nondecreasing and bounded by q (up to round-off). Below the AT line the
/// partial sums converge to q. Computed for `|h|`; the field-sign flip is
/// applied by the iteration's initialization, not here.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GammaSchedule {
    pub gammas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub gamma_sq_partials: Vec<f64>,
    /// Step at which the remaining mass q - Gamma^2 fell below round-off and
    /// the tail of the schedule was frozen to zero.
    pub frozen_at: Option<usize>,
}

impl GammaSchedule {
    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    /// q - Gamma_k^2 clamped at zero (the coefficient of the newest field
    /// direction enters through its square root).
    pub fn remainder(&self, q: f64, k: usize) -> f64 {
        let used = if k == 0 { 0.0 } else { self.gamma_sq_partials[k - 1] };
        (q - used).max(0.0)
    }
}

/// Freeze threshold for the degenerate denominator `q - Gamma^2`.
const SCHEDULE_FREEZE: f64 = 1e-14;
/// Beyond this the overshoot is no longer attributable to round-off.
const SCHEDULE_NEGATIVE: f64 = -1e-9;

pub fn gamma_schedule(params: ModelParams, q: f64, k_max: usize) -> Result<GammaSchedule> {
    check_q_range(q)?;
    if k_max < 1 {
        return Err(SkError::InvalidArgument("k_max must be >= 1".into()));
    }
    let habs = ModelParams::new(params.beta, params.h.abs())?;
    let scale = params.beta * q.sqrt();
    let gamma1 = default_rule().expect(|z| (habs.h + scale * z).tanh());
    let mut gammas = vec![gamma1];
    let mut rhos = vec![q.sqrt() * gamma1];
    let mut partials = vec![gamma1 * gamma1];
    let mut frozen_at = None;

    for k in 2..=k_max {
        let rho = psi(rhos[k - 2].clamp(0.0, q), habs, q)?;
        rhos.push(rho);
        let used = partials[k - 2];
        let remainder = q - used;
        if remainder < SCHEDULE_NEGATIVE {
            return Err(SkError::ScheduleDegenerate {
                step: k,
                remainder,
            });
        }
        let gamma = if remainder < SCHEDULE_FREEZE {
            if frozen_at.is_none() {
                frozen_at = Some(k);
            }
            0.0
        } else {
            (rho - used) / remainder.sqrt()
        };
        gammas.push(gamma);
        partials.push(used + gamma * gamma);
    }
    Ok(GammaSchedule {
        gammas,
        rhos,
        gamma_sq_partials: partials,
        frozen_at,
    })
}

/// First and second Plefka values of a finite magnetization vector:
/// `p1 = beta^2 mean((1-m_i^2)^2)`, `p2 = 2 beta^2 mean(m_i^2 - m_i^4)`.
pub fn plefka_values(m: &[f64], params: ModelParams) -> Result<(f64, f64)> {
    let n = m.len() as f64;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for &mi in m {
        if mi.abs() >= 1.0 {
            return Err(SkError::InvalidArgument(format!(
                "magnetization entries must satisfy |m_i| < 1, got {mi}"
            )));
        }
        let m2 = mi * mi;
        s1 += (1.0 - m2) * (1.0 - m2);
        s2 += m2 - m2 * m2;
    }
    let b2 = params.beta * params.beta;
    Ok((b2 * s1 / n, 2.0 * b2 * s2 / n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(beta: f64, h: f64) -> ModelParams {
        ModelParams::new(beta, h).unwrap()
    }

    #[test]
    fn beta_to_zero_collapses_to_tanh_sq() {
        // q = tanh^2(h) in the beta -> 0 limit
        let sol = solve_q(p(1e-8, 0.7), 1e-12).unwrap();
        let expect = 0.7_f64.tanh().powi(2);
        assert!((sol.q - expect).abs() < 1e-10, "{} vs {}", sol.q, expect);
        assert!(sol.at_value < 1e-15);
        assert!(sol.plefka2_value < 1e-15);
    }

    #[test]
    fn solver_residual_below_tolerance() {
        for (b, h) in [(1.0, 0.5), (1.5, 0.5), (2.0, 0.1), (0.3, -1.2)] {
            let sol = solve_q(p(b, h), 1e-12).unwrap();
            let res = (fixed_point_map(p(b, h), sol.q, default_rule()) - sol.q).abs();
            assert!(res < 1e-12, "residual {res} at ({b},{h})");
        }
    }

    #[test]
    fn q_minimizes_rs_functional() {
        let params = p(1.1, 0.4);
        let sol = solve_q(params, 1e-12).unwrap();
        let at_min = sol.rs_value;
        let mut state = 1234u64;
        for _ in 0..20 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let qp = ((state >> 11) as f64) / (1u64 << 53) as f64;
            assert!(at_min <= rs_functional(params, qp) + 1e-12);
        }
    }

    #[test]
    fn scalar_layer_even_in_h() {
        let a = solve_q(p(1.3, 0.6), 1e-12).unwrap();
        let b = solve_q(p(1.3, -0.6), 1e-12).unwrap();
        assert_eq!(a.q, b.q);
        assert_eq!(a.at_value, b.at_value);
        assert_eq!(a.rs_value, b.rs_value);
    }

    #[test]
    fn at_limit_small_h_approaches_beta_sq() {
        // h -> 0+: q -> 0 below beta=1 and cosh^-4(0) = 1
        let params = p(0.9, 1e-6);
        let sol = solve_q(params, 1e-12).unwrap();
        assert!((sol.at_value - 0.81).abs() < 1e-3);
    }

    #[test]
    fn plefka2_saturates_at_large_h() {
        let params = p(1.5, 12.0);
        let sol = solve_q(params, 1e-12).unwrap();
        assert!(sol.plefka2_value < 1e-6);
    }

    #[test]
    fn psi_endpoints() {
        let params = p(1.0, 0.5);
        let sol = solve_q(params, 1e-12).unwrap();
        let q = sol.q;
        // psi(q) = E tanh^2 = q up to the cross-order quadrature difference
        assert!((psi(q, params, q).unwrap() - q).abs() < 1e-8);
        // psi(0) = (E tanh)^2 by independence
        let scale = params.beta * q.sqrt();
        let g1 = default_rule().expect(|z| (params.h + scale * z).tanh());
        assert!((psi(0.0, params, q).unwrap() - g1 * g1).abs() < 1e-8);
        assert!(psi(-0.1, params, q).is_err());
        assert!(psi(q + 0.1, params, q).is_err());
    }

    #[test]
    fn psi_maps_interval_into_itself() {
        for (b, h) in [(0.8, 0.3), (1.0, 0.5), (1.6, 0.7), (2.2, 0.2)] {
            let params = p(b, h);
            let q = solve_q(params, 1e-12).unwrap().q;
            for i in 0..=10 {
                let t = q * (i as f64) / 10.0;
                let v = psi(t, params, q).unwrap();
                assert!(
                    (-1e-12..=q + 1e-9).contains(&v),
                    "psi({t}) = {v} outside [0, {q}] at ({b},{h})"
                );
            }
        }
    }

    #[test]
    fn schedule_base_case_and_first_terms() {
        let params = p(1.0, 0.5);
        let sol = solve_q(params, 1e-12).unwrap();
        let s = gamma_schedule(params, sol.q, 1).unwrap();
        let scale = params.beta * sol.q.sqrt();
        let g1 = default_rule().expect(|z| (params.h + scale * z).tanh());
        assert_eq!(s.gammas, vec![g1]);
        assert_eq!(s.rhos, vec![sol.q.sqrt() * g1]);
        assert_eq!(s.gamma_sq_partials, vec![g1 * g1]);
    }

    #[test]
    fn schedule_partials_monotone_and_bounded() {
        for (b, h) in [(1.0, 0.5), (1.4, 0.4), (0.6, 0.8)] {
            let params = p(b, h);
            let q = solve_q(params, 1e-12).unwrap().q;
            let s = gamma_schedule(params, q, 60).unwrap();
            let mut prev = 0.0;
            for &g2 in &s.gamma_sq_partials {
                assert!(g2 >= prev - 1e-15);
                assert!(g2 <= q + 1e-9, "partial {g2} exceeds q={q}");
                prev = g2;
            }
        }
    }

    #[test]
    fn schedule_converges_below_at_line() {
        let params = p(1.0, 0.5);
        let q = solve_q(params, 1e-12).unwrap().q;
        let s = gamma_schedule(params, q, 60).unwrap();
        assert!(q - s.gamma_sq_partials[59] < 1e-6);
    }

    #[test]
    fn plefka_values_zero_and_sign_vector() {
        let params = p(1.2, 0.4);
        let m0 = vec![0.0; 32];
        let (p1, p2) = plefka_values(&m0, params).unwrap();
        assert!((p1 - params.beta * params.beta).abs() < 1e-15);
        assert_eq!(p2, 0.0);

        let alpha: f64 = 0.6;
        let ms: Vec<f64> = (0..32).map(|i| if i % 2 == 0 { alpha } else { -alpha }).collect();
        let (p1, _) = plefka_values(&ms, params).unwrap();
        let expect = params.beta.powi(2) * (1.0 - alpha * alpha).powi(2);
        assert!((p1 - expect).abs() < 1e-14);

        assert!(plefka_values(&[0.2, 1.0], params).is_err());
    }

    #[test]
    fn stability_values_continuous_in_beta() {
        let base = p(1.3, 0.45);
        let q = solve_q(base, 1e-12).unwrap().q;
        let bumped = p(1.3 + 1e-6, 0.45);
        let a0 = at_value(base, q).unwrap();
        let a1 = at_value(bumped, q).unwrap();
        assert!((a0 - a1).abs() < 1e-4);
        let p0 = plefka2_limit_value(base, q).unwrap();
        let p1 = plefka2_limit_value(bumped, q).unwrap();
        assert!((p0 - p1).abs() < 1e-4);
    }
}
