//! Bolthausen's conditional iteration on sampled Gaussian disorder.
//!
//! State and updates follow the conditional construction: fields are built
//! from the symmetrized images of the progressively deflated disorder on the
//! current orthonormal direction, magnetizations are tanh of the fields, the
//! direction basis is the Gram-Schmidt family of the magnetizations, and the
//! disorder is deflated by a rank-3 update that annihilates the used
//! directions from both sides.
//!
//! The inner product throughout is `<x,y> = N^{-1} sum x_i y_i`, with
//! `||x|| = sqrt(<x,x>)`; the disorder carries unit-variance entries and the
//! `N^{-1/2}` scaling appears explicitly wherever the matrix acts.

use ndarray::{Array1, Array2};

use crate::error::{Result, SkError};
use crate::params::ModelParams;
use crate::rng::{GaussianStream, StreamKind};
use crate::rs::{gamma_schedule, GammaSchedule, RsSolution};

/// Relative Gram-Schmidt residual below which the new magnetization is
/// declared dependent on the previous directions.
const GS_DEGENERATE: f64 = 1e-12;

/// Square array of iid standard Gaussians, deterministic in (seed, n).
#[derive(Debug, Clone)]
pub struct DisorderMatrix {
    pub n: usize,
    pub entries: Array2<f64>,
}

/// Symmetrization `(g + g^T)/sqrt(2)`; `beta N^{-1/2}` times this is a GOE
/// with variance `beta^2/N`.
#[derive(Debug, Clone)]
pub struct SymmetrizedDisorder {
    pub n: usize,
    pub entries: Array2<f64>,
}

/// Samples the n x n disorder on the replica substream `(seed, index)`.
pub fn sample_disorder_stream(n: usize, seed: u64, index: u64) -> Result<DisorderMatrix> {
    if n < 2 {
        return Err(SkError::InvalidArgument(format!("n must be >= 2, got {n}")));
    }
    let mut stream = GaussianStream::new(seed, StreamKind::Disorder, index);
    let mut data = vec![0.0; n * n];
    stream.fill_normal(&mut data);
    Ok(DisorderMatrix {
        n,
        entries: Array2::from_shape_vec((n, n), data).expect("shape"),
    })
}

/// Samples the n x n disorder; deterministic function of (n, seed).
pub fn sample_disorder(n: usize, seed: u64) -> Result<DisorderMatrix> {
    sample_disorder_stream(n, seed, 0)
}

pub fn symmetrize(g: &DisorderMatrix) -> SymmetrizedDisorder {
    let n = g.n;
    let mut out = Array2::zeros((n, n));
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..n {
        out[[i, i]] = 2.0 * g.entries[[i, i]] * inv_sqrt2;
        for j in (i + 1)..n {
            let v = (g.entries[[i, j]] + g.entries[[j, i]]) * inv_sqrt2;
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    SymmetrizedDisorder { n, entries: out }
}

pub(crate) fn inner(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n
}

pub(crate) fn norm_n(x: &[f64]) -> f64 {
    inner(x, x).sqrt()
}

/// Full state of the iteration at step k.
#[derive(Debug, Clone)]
pub struct AmpState {
    pub k: usize,
    pub params: ModelParams,
    pub q: f64,
    /// Deflated disorder g^(k).
    pub g_k: Array2<f64>,
    /// Orthonormal phi^(1..k) under the N-normalized inner product.
    pub phis: Vec<Array1<f64>>,
    /// zeta^(1..k-1).
    pub zetas: Vec<Array1<f64>>,
    /// Latest xi^(k-1), eta^(k-1) (absent at k=1).
    pub xis: Option<Array1<f64>>,
    pub etas: Option<Array1<f64>>,
    /// Effective field h^(k); at k=1 this is atanh(m^(1)) so that
    /// m = tanh(h) holds at every step.
    pub h_k: Array1<f64>,
    /// Magnetization m^(k).
    pub m_k: Array1<f64>,
    pub schedule: GammaSchedule,
}

/// Observables of a state: squared norm, basis overlaps, and the
/// projection-noise scalar; the TAP residual slot is filled by the caller.
#[derive(Debug, Clone)]
pub struct AmpDiagnostics {
    pub norm_m_sq: f64,
    /// `<phi^(s), m^(k)>` for s = 1..k (the first k-1 approach gamma_s).
    pub gamma_overlaps: Vec<f64>,
    /// `<phi^(k-1), xi^(k-1)>`, centered Gaussian with variance 1/N.
    pub phi_xi_overlap: f64,
    pub residual_norm: Option<f64>,
}

/// State at k=1: phi^(1) = sign(h) 1, m^(1) = sign(h) sqrt(q) 1, schedule
/// precomputed to k_max. For h > 0 this is the textbook initialization; for
/// h < 0 it is its image under the exact spin-flip symmetry.
pub fn amp_init(
    params: ModelParams,
    rs: &RsSolution,
    g: DisorderMatrix,
    k_max: usize,
) -> Result<AmpState> {
    if k_max < 2 {
        return Err(SkError::InvalidArgument("k_max must be >= 2".into()));
    }
    let n = g.n;
    let schedule = gamma_schedule(params, rs.q, k_max)?;
    let sgn = params.h.signum();
    let m1 = Array1::from_elem(n, sgn * rs.q.sqrt());
    let h1 = Array1::from_elem(n, sgn * rs.q.sqrt().atanh());
    let phi1 = Array1::from_elem(n, sgn);
    Ok(AmpState {
        k: 1,
        params,
        q: rs.q,
        g_k: g.entries,
        phis: vec![phi1],
        zetas: Vec::new(),
        xis: None,
        etas: None,
        h_k: h1,
        m_k: m1,
        schedule,
    })
}

/// One conditional update: state at k to state at k+1.
pub fn amp_step(mut state: AmpState) -> Result<AmpState> {
    let k = state.k;
    let n = state.m_k.len();
    if k >= state.schedule.len() {
        return Err(SkError::InvalidArgument(format!(
            "schedule of length {} exhausted at step k={k}",
            state.schedule.len()
        )));
    }
    let beta = state.params.beta;
    let h = state.params.h;
    let sqrt_n = (n as f64).sqrt();

    // xi = N^{-1/2} g phi, eta = N^{-1/2} g^T phi in one pass over g
    let phi = state.phis[k - 1].as_slice().expect("contiguous").to_vec();
    let mut xi = vec![0.0; n];
    let mut eta = vec![0.0; n];
    {
        let g = state.g_k.as_slice().expect("row-major");
        for i in 0..n {
            let row = &g[i * n..(i + 1) * n];
            let phi_i = phi[i];
            let mut acc = 0.0;
            for (j, &gij) in row.iter().enumerate() {
                acc += gij * phi[j];
                eta[j] += gij * phi_i;
            }
            xi[i] = acc;
        }
        for v in xi.iter_mut().chain(eta.iter_mut()) {
            *v /= sqrt_n;
        }
    }
    let zeta: Vec<f64> = xi
        .iter()
        .zip(&eta)
        .map(|(a, b)| (a + b) * std::f64::consts::FRAC_1_SQRT_2)
        .collect();

    // h^(k+1) = h 1 + beta sum_{s<k} gamma_s zeta^(s) + beta sqrt(q - Gamma^2_{k-1}) zeta^(k)
    let mut h_next = vec![h; n];
    for s in 0..(k - 1) {
        let w = beta * state.schedule.gammas[s];
        let zs = state.zetas[s].as_slice().expect("contiguous");
        for (hi, zi) in h_next.iter_mut().zip(zs) {
            *hi += w * zi;
        }
    }
    let w_new = beta * state.schedule.remainder(state.q, k - 1).sqrt();
    for (hi, zi) in h_next.iter_mut().zip(&zeta) {
        *hi += w_new * zi;
    }
    let m_next: Vec<f64> = h_next.iter().map(|x| x.tanh()).collect();

    // Gram-Schmidt with one reorthogonalization pass
    let mut resid = m_next.clone();
    for _ in 0..2 {
        for p in &state.phis {
            let c = inner(&resid, p.as_slice().expect("contiguous"));
            for (ri, pi) in resid.iter_mut().zip(p.iter()) {
                *ri -= c * pi;
            }
        }
    }
    let rnorm = norm_n(&resid);
    if rnorm < GS_DEGENERATE * norm_n(&m_next) {
        return Err(SkError::GramSchmidtDegenerate {
            step: k + 1,
            residual: rnorm,
        });
    }
    for ri in &mut resid {
        *ri /= rnorm;
    }

    // g^(k+1) = g^(k) - sqrt(N) rho^(k), rank-3 row update
    let c = inner(&phi, &xi);
    {
        let g = state.g_k.as_slice_mut().expect("row-major");
        let inv = 1.0 / sqrt_n;
        for i in 0..n {
            let row = &mut g[i * n..(i + 1) * n];
            let a = xi[i] * inv;
            let b = phi[i] * inv;
            for (j, gij) in row.iter_mut().enumerate() {
                *gij -= a * phi[j] + b * (eta[j] - c * phi[j]);
            }
        }
    }

    state.zetas.push(Array1::from_vec(zeta));
    state.phis.push(Array1::from_vec(resid));
    state.xis = Some(Array1::from_vec(xi));
    state.etas = Some(Array1::from_vec(eta));
    state.h_k = Array1::from_vec(h_next);
    state.m_k = Array1::from_vec(m_next);
    state.k = k + 1;
    Ok(state)
}

/// The orthogonal projection `P^(k) = N^{-1} sum_s phi^(s) phi^(s)^T`.
pub fn projection_p(state: &AmpState) -> Array2<f64> {
    let n = state.m_k.len();
    let mut p = Array2::zeros((n, n));
    for phi in &state.phis {
        let ps = phi.as_slice().expect("contiguous");
        for i in 0..n {
            let w = ps[i] / n as f64;
            for j in 0..n {
                p[[i, j]] += w * ps[j];
            }
        }
    }
    p
}

/// Overlap/norm observables (valid for k >= 2).
pub fn diagnostics(state: &AmpState, _rs: &RsSolution) -> Result<AmpDiagnostics> {
    if state.k < 2 {
        return Err(SkError::InvalidArgument(
            "diagnostics require k >= 2".into(),
        ));
    }
    let m = state.m_k.as_slice().expect("contiguous");
    let overlaps: Vec<f64> = state
        .phis
        .iter()
        .map(|p| inner(p.as_slice().expect("contiguous"), m))
        .collect();
    let xi = state.xis.as_ref().expect("k >= 2 has xi");
    let phi_prev = &state.phis[state.k - 2];
    Ok(AmpDiagnostics {
        norm_m_sq: inner(m, m),
        gamma_overlaps: overlaps,
        phi_xi_overlap: inner(
            phi_prev.as_slice().expect("contiguous"),
            xi.as_slice().expect("contiguous"),
        ),
        residual_norm: None,
    })
}
