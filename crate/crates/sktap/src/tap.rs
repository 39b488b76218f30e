//! The TAP free energy, its stationarity residual, the Hessian, and the
//! special magnetization constructions used by the positive-outlier and
//! independent-magnetization experiments.

use ndarray::{Array1, Array2};

use crate::amp::{inner, norm_n, AmpState, SymmetrizedDisorder};
use crate::error::{Result, SkError};
use crate::params::ModelParams;
use crate::rng::{GaussianStream, StreamKind};
use crate::spectra::{sym_eigen, SymOp};

/// A magnetization vector with entries strictly inside (-1, 1).
#[derive(Debug, Clone)]
pub struct Magnetization {
    pub n: usize,
    pub m: Array1<f64>,
}

impl Magnetization {
    pub fn new(m: Array1<f64>) -> Result<Self> {
        for &x in m.iter() {
            if !(x.abs() < 1.0) {
                return Err(SkError::InvalidArgument(format!(
                    "magnetization entries must satisfy |m_i| < 1, got {x}"
                )));
            }
        }
        Ok(Self { n: m.len(), m })
    }

    pub fn as_slice(&self) -> &[f64] {
        self.m.as_slice().expect("contiguous")
    }
}

/// The TAP free energy split into its four terms.
#[derive(Debug, Clone, Copy)]
pub struct TapBreakdown {
    pub interaction: f64,
    pub field: f64,
    pub onsager: f64,
    pub entropy: f64,
    pub total: f64,
    pub per_site: f64,
}

/// Dense symmetric TAP Hessian.
#[derive(Debug, Clone)]
pub struct HessianMatrix {
    pub n: usize,
    pub entries: Array2<f64>,
}

/// Structure report of the Hessian at an iteration state: the entropy
/// diagonal, the numerical rank of the low-rank conditional part, and the
/// Frobenius norm of what is left after the deflated-disorder reading.
#[derive(Debug, Clone)]
pub struct DecompositionReport {
    pub a_diag: Array1<f64>,
    pub b_rank: usize,
    pub residual_frobenius: f64,
}

/// Binary entropy term `I(x) = ((1+x)/2)ln(1+x) + ((1-x)/2)ln(1-x)`.
///
/// Evaluated through `ln_1p`; within 1e-8 of the boundary the grouped form
/// `(1-u/2)(ln 2 + ln(1-u/2)) + (u/2)ln u` with `u = 1-|x|` avoids the
/// cancellation of the direct sum.
pub fn entropy_i(x: f64) -> Result<f64> {
    if !(x.abs() < 1.0) {
        return Err(SkError::InvalidArgument(format!(
            "entropy argument must satisfy |x| < 1, got {x}"
        )));
    }
    let a = x.abs();
    if a > 1.0 - 1e-8 {
        let u = 1.0 - a;
        Ok((1.0 - 0.5 * u) * (std::f64::consts::LN_2 + (-0.5 * u).ln_1p()) + 0.5 * u * u.ln())
    } else {
        Ok(0.5 * (1.0 + x) * x.ln_1p() + 0.5 * (1.0 - x) * (-x).ln_1p())
    }
}

fn check_dims(gbar: &SymmetrizedDisorder, m: &Magnetization) -> Result<()> {
    if gbar.n != m.n {
        return Err(SkError::DimensionMismatch(format!(
            "disorder is {}x{} but magnetization has {} sites",
            gbar.n, gbar.n, m.n
        )));
    }
    Ok(())
}

/// TAP free energy; the interaction term sums strictly over i < j.
pub fn tap_free_energy(
    gbar: &SymmetrizedDisorder,
    m: &Magnetization,
    params: ModelParams,
) -> Result<TapBreakdown> {
    check_dims(gbar, m)?;
    let n = m.n;
    let nf = n as f64;
    let ms = m.as_slice();
    let g = gbar.entries.as_slice().expect("row-major");

    // sum_{i<j} gbar_ij m_i m_j = (m^T gbar m - sum_i gbar_ii m_i^2) / 2
    let mut quad = 0.0;
    let mut diag = 0.0;
    for i in 0..n {
        let row = &g[i * n..(i + 1) * n];
        let mut acc = 0.0;
        for (j, &gij) in row.iter().enumerate() {
            acc += gij * ms[j];
        }
        quad += ms[i] * acc;
        diag += row[i] * ms[i] * ms[i];
    }
    let interaction = params.beta / nf.sqrt() * 0.5 * (quad - diag);
    let field = params.h * ms.iter().sum::<f64>();
    let norm_sq = inner(ms, ms);
    let onsager = 0.25 * params.beta.powi(2) * nf * (1.0 - norm_sq).powi(2);
    let mut entropy = 0.0;
    for &x in ms {
        entropy -= entropy_i(x)?;
    }
    let total = interaction + field + onsager + entropy;
    Ok(TapBreakdown {
        interaction,
        field,
        onsager,
        entropy,
        total,
        per_site: total / nf,
    })
}

/// Stationarity residual `Delta = atanh(m) - h 1 - beta N^{-1/2} gbar m
/// + beta^2 (1-q) m`, with the full matrix product (diagonal included) and
/// the N-normalized norm.
pub fn tap_residual(
    gbar: &SymmetrizedDisorder,
    m: &Magnetization,
    params: ModelParams,
    q: f64,
) -> Result<(Array1<f64>, f64)> {
    check_dims(gbar, m)?;
    if !(0.0..1.0).contains(&q) {
        return Err(SkError::InvalidArgument(format!("q must be in [0,1), got {q}")));
    }
    let n = m.n;
    let ms = m.as_slice();
    let g = gbar.entries.as_slice().expect("row-major");
    let scale = params.beta / (n as f64).sqrt();
    let back = params.beta.powi(2) * (1.0 - q);
    let mut delta = vec![0.0; n];
    for i in 0..n {
        let row = &g[i * n..(i + 1) * n];
        let mut acc = 0.0;
        for (j, &gij) in row.iter().enumerate() {
            acc += gij * ms[j];
        }
        delta[i] = ms[i].atanh() - params.h - scale * acc + back * ms[i];
    }
    let norm = norm_n(&delta);
    Ok((Array1::from_vec(delta), norm))
}

/// Dense Hessian of the TAP free energy at m.
pub fn hessian(
    gbar: &SymmetrizedDisorder,
    m: &Magnetization,
    params: ModelParams,
) -> Result<HessianMatrix> {
    check_dims(gbar, m)?;
    let n = m.n;
    let nf = n as f64;
    let ms = m.as_slice();
    let beta = params.beta;
    let scale = beta / nf.sqrt();
    let two_b2_over_n = 2.0 * beta * beta / nf;
    let norm_sq = inner(ms, ms);
    let onsager_diag = -beta * beta * (1.0 - norm_sq);

    let g = gbar.entries.as_slice().expect("row-major");
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        let grow = &g[i * n..(i + 1) * n];
        let orow = &mut out[i * n..(i + 1) * n];
        let mi = ms[i];
        for j in 0..n {
            orow[j] = scale * grow[j] + two_b2_over_n * mi * ms[j];
        }
        orow[i] = onsager_diag - 1.0 / (1.0 - mi * mi) + two_b2_over_n * mi * mi;
    }
    Ok(HessianMatrix {
        n,
        entries: Array2::from_shape_vec((n, n), out).expect("shape"),
    })
}

/// Matrix-free Hessian product sharing the disorder storage; used for top
/// eigenvalues at sizes where assembling a second dense matrix is wasteful.
pub struct HessianOp<'a> {
    gbar: &'a SymmetrizedDisorder,
    m: Vec<f64>,
    diag: Vec<f64>,
    scale: f64,
    two_b2_over_n: f64,
}

impl<'a> HessianOp<'a> {
    pub fn new(gbar: &'a SymmetrizedDisorder, m: &Magnetization, params: ModelParams) -> Result<Self> {
        check_dims(gbar, m)?;
        let n = m.n;
        let nf = n as f64;
        let ms = m.as_slice().to_vec();
        let norm_sq = inner(&ms, &ms);
        let onsager_diag = -params.beta * params.beta * (1.0 - norm_sq);
        let diag: Vec<f64> = ms
            .iter()
            .map(|&mi| onsager_diag - 1.0 / (1.0 - mi * mi))
            .collect();
        Ok(Self {
            gbar,
            m: ms,
            diag,
            scale: params.beta / nf.sqrt(),
            two_b2_over_n: 2.0 * params.beta * params.beta / nf,
        })
    }

    /// Rayleigh quotient v^T H v for a unit vector.
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        let mut hv = vec![0.0; v.len()];
        self.apply(v, &mut hv);
        v.iter().zip(&hv).map(|(a, b)| a * b).sum()
    }

    /// A lower bound on the spectrum from norm bounds of the three parts.
    pub fn spectral_floor(&self) -> f64 {
        let n = self.gbar.n as f64;
        let g = self.gbar.entries.as_slice().expect("row-major");
        let frob: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        let gbar_bound = self.scale * frob / n.sqrt() * 3.0; // ~ 2 beta + slack
        let diag_min = self.diag.iter().fold(f64::INFINITY, |a, &d| a.min(d));
        diag_min - gbar_bound
    }
}

impl SymOp for HessianOp<'_> {
    fn dim(&self) -> usize {
        self.gbar.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.gbar.n;
        let g = self.gbar.entries.as_slice().expect("row-major");
        let mdotx: f64 = self.m.iter().zip(x).map(|(a, b)| a * b).sum();
        for i in 0..n {
            let row = &g[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for (j, &gij) in row.iter().enumerate() {
                acc += gij * x[j];
            }
            y[i] = self.scale * (acc - row[i] * x[i])
                + self.two_b2_over_n * mdotx * self.m[i]
                + self.diag[i] * x[i];
        }
    }
}

/// `m_i = alpha sign(v_i)` for a unit vector v, with sign(0) = +1.
pub fn sign_magnetization(v: &[f64], alpha: f64) -> Result<Magnetization> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(SkError::InvalidArgument(format!(
            "alpha must lie in [0,1), got {alpha}"
        )));
    }
    let nrm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (nrm - 1.0).abs() > 1e-8 {
        return Err(SkError::InvalidArgument(format!(
            "v must be a unit vector in l2, got norm {nrm}"
        )));
    }
    let m: Vec<f64> = v
        .iter()
        .map(|&x| if x >= 0.0 { alpha } else { -alpha })
        .collect();
    Magnetization::new(Array1::from_vec(m))
}

/// Maximizer of the limiting Rayleigh quotient of the sign construction and
/// its value: `alpha^2 = 1 - beta^{-1}(1+4/pi)^{-1/2}` (clamped at 0) and
/// `2 beta - beta^2(1-alpha^2) - 1/(1-alpha^2) + 4 beta^2 alpha^2/pi`.
pub fn optimal_alpha(beta: f64) -> (f64, f64) {
    let c = (1.0 + 4.0 / std::f64::consts::PI).powf(-0.5);
    let alpha_sq = (1.0 - c / beta).max(0.0);
    let prediction = 2.0 * beta - beta * beta * (1.0 - alpha_sq) - 1.0 / (1.0 - alpha_sq)
        + 4.0 * beta * beta * alpha_sq / std::f64::consts::PI;
    (alpha_sq, prediction)
}

/// Disorder-independent magnetization `m_i = tanh(h + beta sqrt(q) Z_i)` on
/// the replica substream `(seed, index)` of the magnetization stream space.
pub fn sample_independent_magnetization_stream(
    params: ModelParams,
    q: f64,
    n: usize,
    seed: u64,
    index: u64,
) -> Result<Magnetization> {
    let mut stream = GaussianStream::new(seed, StreamKind::Magnetization, index);
    let scale = params.beta * q.sqrt();
    let m: Vec<f64> = (0..n)
        .map(|_| (params.h + scale * stream.next_normal()).tanh())
        .collect();
    Magnetization::new(Array1::from_vec(m))
}

pub fn sample_independent_magnetization(
    params: ModelParams,
    q: f64,
    n: usize,
    seed: u64,
) -> Result<Magnetization> {
    sample_independent_magnetization_stream(params, q, n, seed, 0)
}

/// Numerical-rank threshold for the low-rank conditional part.
const B_RANK_THRESHOLD: f64 = 1e-8;

/// Splits the Hessian at the state's magnetization into the entropy diagonal
/// `A`, the rank-(2k-1) conditional part `B`, the deflated-disorder GOE
/// image, and the constant shift, and reports what is left over.
pub fn hessian_decomposition(
    state: &AmpState,
    hess: &HessianMatrix,
    params: ModelParams,
    q: f64,
) -> Result<DecompositionReport> {
    let n = hess.n;
    if state.m_k.len() != n {
        return Err(SkError::DimensionMismatch(format!(
            "state has {} sites, hessian {}",
            state.m_k.len(),
            n
        )));
    }
    let nf = n as f64;
    let beta = params.beta;
    let ms = state.m_k.as_slice().expect("contiguous");
    let a_diag: Vec<f64> = ms.iter().map(|&mi| -1.0 / (1.0 - mi * mi)).collect();

    // B = 2 beta^2 m (x) m + beta sum_s (zeta^(s) (x) phi^(s) + phi^(s) (x) zeta^(s)),
    // (x) carrying the 1/N of the inner-product convention
    let mut b = vec![0.0; n * n];
    let two_b2 = 2.0 * beta * beta / nf;
    for i in 0..n {
        let row = &mut b[i * n..(i + 1) * n];
        let mi = ms[i];
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = two_b2 * mi * ms[j];
        }
    }
    for s in 0..state.zetas.len() {
        let zeta = state.zetas[s].as_slice().expect("contiguous");
        let phi = state.phis[s].as_slice().expect("contiguous");
        let w = beta / nf;
        for i in 0..n {
            let row = &mut b[i * n..(i + 1) * n];
            let zi = zeta[i];
            let pi = phi[i];
            for (j, slot) in row.iter_mut().enumerate() {
                *slot += w * (zi * phi[j] + pi * zeta[j]);
            }
        }
    }
    let b_mat = Array2::from_shape_vec((n, n), b).expect("shape");
    let eig = sym_eigen(&b_mat, false)?;
    let top = eig
        .eigenvalues
        .iter()
        .fold(0.0_f64, |a, &x| a.max(x.abs()));
    let b_rank = eig
        .eigenvalues
        .iter()
        .filter(|&&x| x.abs() > B_RANK_THRESHOLD * top)
        .count();

    // residual against beta N^{-1/2} sym(g^(k)) + A + B - beta^2(1-q) I
    let g = state.g_k.as_slice().expect("row-major");
    let scale = beta / nf.sqrt() * std::f64::consts::FRAC_1_SQRT_2;
    let shift = beta * beta * (1.0 - q);
    let mut frob_sq = 0.0;
    for i in 0..n {
        let hrow = hess.entries.row(i);
        let brow = &b_mat.as_slice().expect("row-major")[i * n..(i + 1) * n];
        for j in 0..n {
            let goe = scale * (g[i * n + j] + g[j * n + i]);
            let mut model = goe + brow[j];
            if i == j {
                model += a_diag[i] - shift;
            }
            let r = hrow[j] - model;
            frob_sq += r * r;
        }
    }
    Ok(DecompositionReport {
        a_diag: Array1::from_vec(a_diag),
        b_rank,
        residual_frobenius: frob_sq.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amp::{amp_init, amp_step, sample_disorder, symmetrize};
    use crate::rs::{log_cosh, solve_q};

    fn params() -> ModelParams {
        ModelParams::new(1.0, 0.5).unwrap()
    }

    #[test]
    fn entropy_basics() {
        assert_eq!(entropy_i(0.0).unwrap(), 0.0);
        assert!(entropy_i(1.0).is_err());
        assert!(entropy_i(-1.2).is_err());
        let mut state = 5u64;
        for _ in 0..20 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let x = (((state >> 11) as f64) / (1u64 << 53) as f64) * 1.8 - 0.9;
            let a = entropy_i(x).unwrap();
            let b = entropy_i(-x).unwrap();
            assert!((a - b).abs() < 1e-15);
            // atanh cross-check
            let t = x.atanh();
            let alt = x * t - log_cosh(t);
            assert!((a - alt).abs() < 1e-12, "x={x}: {a} vs {alt}");
        }
    }

    #[test]
    fn entropy_stable_near_boundary() {
        // the two groupings must agree across the switch point
        let x = 0.999_f64;
        let direct = 0.5 * (1.0 + x) * x.ln_1p() + 0.5 * (1.0 - x) * (-x).ln_1p();
        assert!((entropy_i(x).unwrap() - direct).abs() < 1e-10);
        let y = 1.0 - 1e-12;
        let v = entropy_i(y).unwrap();
        assert!(v.is_finite() && v < std::f64::consts::LN_2);
        assert!(v > 0.69);
    }

    #[test]
    fn tap_zero_magnetization_is_onsager_only() {
        let n = 16;
        let g = symmetrize(&sample_disorder(n, 1).unwrap());
        let m = Magnetization::new(Array1::zeros(n)).unwrap();
        let p = params();
        let t = tap_free_energy(&g, &m, p).unwrap();
        assert_eq!(t.interaction, 0.0);
        assert_eq!(t.field, 0.0);
        assert_eq!(t.entropy, 0.0);
        assert!((t.total - p.beta.powi(2) * n as f64 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn tap_small_hand_case_matches_direct_sum() {
        let n = 3;
        let g = symmetrize(&sample_disorder(n, 7).unwrap());
        let mv = [0.1, -0.2, 0.3];
        let m = Magnetization::new(Array1::from_vec(mv.to_vec())).unwrap();
        let p = params();
        let t = tap_free_energy(&g, &m, p).unwrap();
        let mut inter = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                inter += g.entries[[i, j]] * mv[i] * mv[j];
            }
        }
        inter *= p.beta / (n as f64).sqrt();
        let field = p.h * (mv[0] + mv[1] + mv[2]);
        let msq: f64 = mv.iter().map(|x| x * x).sum::<f64>() / n as f64;
        let onsager = p.beta.powi(2) / 4.0 * n as f64 * (1.0 - msq).powi(2);
        let ent: f64 = mv.iter().map(|&x| entropy_i(x).unwrap()).sum();
        let expect = inter + field + onsager - ent;
        assert!((t.total - expect).abs() < 1e-12);
        assert!((t.total - (t.interaction + t.field + t.onsager + t.entropy)).abs() < 1e-9 * n as f64);
    }

    #[test]
    fn residual_at_zero_magnetization() {
        let n = 12;
        let g = symmetrize(&sample_disorder(n, 3).unwrap());
        let m = Magnetization::new(Array1::zeros(n)).unwrap();
        let p = params();
        let (delta, norm) = tap_residual(&g, &m, p, 0.3).unwrap();
        for &d in delta.iter() {
            assert!((d + p.h).abs() < 1e-15);
        }
        assert!((norm - p.h.abs()).abs() < 1e-12);
    }

    #[test]
    fn hessian_trivial_case() {
        let n = 2;
        let g = SymmetrizedDisorder {
            n,
            entries: Array2::zeros((n, n)),
        };
        let m = Magnetization::new(Array1::zeros(n)).unwrap();
        let p = params();
        let hm = hessian(&g, &m, p).unwrap();
        let expect = -p.beta.powi(2) - 1.0;
        assert!((hm.entries[[0, 0]] - expect).abs() < 1e-14);
        assert!((hm.entries[[1, 1]] - expect).abs() < 1e-14);
        assert_eq!(hm.entries[[0, 1]], 0.0);
    }

    #[test]
    fn hessian_op_matches_dense() {
        let n = 40;
        let g = symmetrize(&sample_disorder(n, 5).unwrap());
        let p = params();
        let m = sample_independent_magnetization(p, 0.3, n, 77).unwrap();
        let hm = hessian(&g, &m, p).unwrap();
        let op = HessianOp::new(&g, &m, p).unwrap();
        let x: Vec<f64> = (0..n).map(|i| ((i * i + 3) as f64).sin()).collect();
        let mut y_op = vec![0.0; n];
        op.apply(&x, &mut y_op);
        let mut y_dense = vec![0.0; n];
        hm.entries.apply(&x, &mut y_dense);
        for (a, b) in y_op.iter().zip(&y_dense) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!(op.spectral_floor() < -1.0);
    }

    #[test]
    fn sign_magnetization_contract() {
        let n = 9;
        let mut v = vec![0.0; n];
        v[0] = 1.0; // unit vector with zeros elsewhere: sign(0) = +1
        let m = sign_magnetization(&v, 0.4).unwrap();
        assert!(m.m.iter().all(|&x| x == 0.4));
        let z = sign_magnetization(&v, 0.0).unwrap();
        assert!(z.m.iter().all(|&x| x == 0.0));
        assert!(sign_magnetization(&v, 1.0).is_err());
        assert!(sign_magnetization(&[0.5, 0.5], 0.3).is_err());
    }

    #[test]
    fn optimal_alpha_beta0_root() {
        let beta0 = std::f64::consts::FRAC_PI_2 * ((1.0 + 4.0 / std::f64::consts::PI).sqrt() - 1.0);
        let (_, pred) = optimal_alpha(beta0);
        assert!(pred.abs() < 1e-9, "prediction at beta0 is {pred}");
        // bisection for the root of the prediction
        let (mut lo, mut hi) = (0.7, 0.9);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if optimal_alpha(mid).1 < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let root = 0.5 * (lo + hi);
        assert!((root - beta0).abs() < 1e-3);
        assert!((beta0 - 0.798).abs() < 1e-3);
        // maximality at beta = 2
        let (a2, pred2) = optimal_alpha(2.0);
        let eval = |a: f64| {
            2.0 * 2.0 - 4.0 * (1.0 - a) - 1.0 / (1.0 - a) + 16.0 * a / std::f64::consts::PI
        };
        assert!((pred2 - eval(a2)).abs() < 1e-12);
        assert!(pred2 >= eval(a2 + 0.01));
        assert!(pred2 >= eval(a2 - 0.01));
    }

    #[test]
    fn independent_magnetization_moments() {
        let p = params();
        let q = solve_q(p, 1e-12).unwrap().q;
        let n = 20000;
        let m = sample_independent_magnetization(p, q, n, 5).unwrap();
        let msq: f64 = m.m.iter().map(|x| x * x).sum::<f64>() / n as f64;
        assert!((msq - q).abs() < 3.0 / (n as f64).sqrt());
        let m2 = sample_independent_magnetization(p, q, n, 5).unwrap();
        assert_eq!(m.m, m2.m);
    }

    #[test]
    fn decomposition_rank_one_at_k1() {
        let p = params();
        let rs = solve_q(p, 1e-12).unwrap();
        let n = 60;
        let g = sample_disorder(n, 13).unwrap();
        let gbar = symmetrize(&g);
        let state = amp_init(p, &rs, g, 4).unwrap();
        let m = Magnetization::new(state.m_k.clone()).unwrap();
        let hm = hessian(&gbar, &m, p).unwrap();
        let rep = hessian_decomposition(&state, &hm, p, rs.q).unwrap();
        assert_eq!(rep.b_rank, 1);
        for (ad, mi) in rep.a_diag.iter().zip(state.m_k.iter()) {
            assert!((ad + 1.0 / (1.0 - mi * mi)).abs() < 1e-12);
        }
    }

    #[test]
    fn decomposition_rank_bound_small() {
        let p = params();
        let rs = solve_q(p, 1e-12).unwrap();
        let n = 120;
        let g = sample_disorder(n, 14).unwrap();
        let mut state = amp_init(p, &rs, g, 8).unwrap();
        for _ in 0..3 {
            state = amp_step(state).unwrap();
        }
        // rebuild the original symmetrized disorder for the Hessian
        let g0 = sample_disorder(n, 14).unwrap();
        let gbar = symmetrize(&g0);
        let m = Magnetization::new(state.m_k.clone()).unwrap();
        let hm = hessian(&gbar, &m, p).unwrap();
        let rep = hessian_decomposition(&state, &hm, p, rs.q).unwrap();
        assert!(rep.b_rank <= 2 * state.k - 1, "rank {} at k={}", rep.b_rank, state.k);
        assert!(rep.residual_frobenius.is_finite());
    }
}
