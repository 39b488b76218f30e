//! Dense symmetric eigensolving, empirical spectral distributions, top
//! eigenpairs, and the Haar-vector absolute-sum statistic.

use ndarray::{Array1, Array2};

use crate::error::{Result, SkError};
use crate::linalg;

/// Full spectrum of a symmetric matrix, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Column j is the eigenvector of `eigenvalues[j]` (kept on request).
    pub eigenvectors: Option<Array2<f64>>,
}

fn symmetry_defect(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[[i, j]] - m[[j, i]]).abs());
        }
    }
    worst
}

/// Full spectrum via Householder tridiagonalization + implicit-shift QL.
///
/// Rejects matrices whose asymmetry exceeds `1e-12` relative to the largest
/// entry. Without eigenvectors the reduction touches only the lower triangle.
pub fn sym_eigen(matrix: &Array2<f64>, want_vectors: bool) -> Result<EigenDecomposition> {
    let n = matrix.nrows();
    if matrix.ncols() != n {
        return Err(SkError::DimensionMismatch(format!(
            "expected square matrix, got {}x{}",
            n,
            matrix.ncols()
        )));
    }
    let maxabs = matrix.iter().fold(0.0_f64, |a, &x| a.max(x.abs()));
    let defect = symmetry_defect(matrix);
    if defect > 1e-12 * (1.0 + maxabs) {
        return Err(SkError::NotSymmetric(defect));
    }

    let mut a: Vec<f64> = matrix.iter().copied().collect();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    if want_vectors {
        linalg::tred2(&mut a, n, &mut d, &mut e);
        linalg::tql_implicit(&mut d, &mut e, n, &mut a, n)?;
        linalg::sort_descending(&mut d, &mut a, n);
        let vectors = Array2::from_shape_vec((n, n), a).expect("shape");
        Ok(EigenDecomposition {
            eigenvalues: d,
            eigenvectors: Some(vectors),
        })
    } else {
        linalg::tridiag_reduce(&mut a, n, &mut d, &mut e);
        linalg::tql_implicit(&mut d, &mut e, n, &mut [], 0)?;
        linalg::sort_descending(&mut d, &mut [], 0);
        Ok(EigenDecomposition {
            eigenvalues: d,
            eigenvectors: None,
        })
    }
}

/// Abstract symmetric operator; lets power iteration run on assembled
/// matrices and on matrix-free Hessian products alike.
pub trait SymOp {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);

    /// Multi-vector product; the dense impl streams the matrix once.
    fn apply_block(&self, xs: &[Vec<f64>], ys: &mut [Vec<f64>]) {
        for (x, y) in xs.iter().zip(ys.iter_mut()) {
            self.apply(x, y);
        }
    }
}

impl SymOp for Array2<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.nrows();
        let a = self.as_slice().expect("row-major");
        for i in 0..n {
            let row = &a[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for (rj, xj) in row.iter().zip(x.iter()) {
                acc += rj * xj;
            }
            y[i] = acc;
        }
    }

    fn apply_block(&self, xs: &[Vec<f64>], ys: &mut [Vec<f64>]) {
        let n = self.nrows();
        let b = xs.len();
        let a = self.as_slice().expect("row-major");
        for i in 0..n {
            let row = &a[i * n..(i + 1) * n];
            let mut acc = vec![0.0; b];
            for (j, rj) in row.iter().enumerate() {
                for (l, x) in xs.iter().enumerate() {
                    acc[l] += rj * x[j];
                }
            }
            for (l, y) in ys.iter_mut().enumerate() {
                y[i] = acc[l];
            }
        }
    }
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Deterministic full-support start vector.
fn seed_vector(n: usize, salt: u64) -> Vec<f64> {
    let mut state = 0x9e3779b97f4a7c15u64 ^ salt;
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / (1u64 << 53) as f64 - 0.5
        })
        .collect();
    let nv = norm2(&v);
    for x in &mut v {
        *x /= nv;
    }
    v
}

/// Gershgorin lower bound `min_i (a_ii - sum_{j != i} |a_ij|)`.
pub fn gershgorin_lower(matrix: &Array2<f64>) -> f64 {
    let n = matrix.nrows();
    let mut lo = f64::INFINITY;
    for i in 0..n {
        let mut radius = 0.0;
        for j in 0..n {
            if j != i {
                radius += matrix[[i, j]].abs();
            }
        }
        lo = lo.min(matrix[[i, i]] - radius);
    }
    lo
}

const POWER_MAX_ITERS: usize = 300_000;

fn power_shift(op: &impl SymOp, floor: f64) -> f64 {
    // short unshifted warmup estimates the spectral radius; the Gershgorin
    // floor stays as the safety bound when it is tighter
    let n = op.dim();
    let mut x = seed_vector(n, 17);
    let mut y = vec![0.0; n];
    let mut radius = 0.0_f64;
    for _ in 0..40 {
        op.apply(&x, &mut y);
        radius = norm2(&y);
        if radius == 0.0 {
            return floor.max(-1.0);
        }
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / radius;
        }
    }
    floor.max(-1.2 * radius - 1e-12 * radius)
}

/// Largest eigenvalue and unit eigenvector by shifted power iteration.
///
/// The shift is the Gershgorin lower bound sharpened by a spectral-radius
/// estimate, so the algebraically largest eigenvalue dominates. Residual
/// `||Mv - lambda v||_2 < tol` on exit; slow convergence (degenerate top) is
/// reported after the iteration cap.
pub fn top_eigpair(matrix: &Array2<f64>, tol: f64) -> Result<(f64, Array1<f64>)> {
    let defect = symmetry_defect(matrix);
    let maxabs = matrix.iter().fold(0.0_f64, |a, &x| a.max(x.abs()));
    if defect > 1e-12 * (1.0 + maxabs) {
        return Err(SkError::NotSymmetric(defect));
    }
    let floor = gershgorin_lower(matrix);
    let (lambda, v) = top_eigpair_op(matrix, tol, floor)?;
    Ok((lambda, Array1::from_vec(v)))
}

/// Operator form of `top_eigpair`; `floor` is any valid lower bound on the
/// spectrum (pass `-inf` when none is available).
pub fn top_eigpair_op(op: &impl SymOp, tol: f64, floor: f64) -> Result<(f64, Vec<f64>)> {
    let n = op.dim();
    let shift = power_shift(op, floor);
    let mut x = seed_vector(n, 1);
    let mut y = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for it in 0..POWER_MAX_ITERS {
        op.apply(&x, &mut y);
        let lambda = dot(&x, &y);
        if it % 8 == 0 || it + 1 == POWER_MAX_ITERS {
            let mut rsq = 0.0;
            for (yi, xi) in y.iter().zip(&x) {
                let r = yi - lambda * xi;
                rsq += r * r;
            }
            residual = rsq.sqrt();
            if residual < tol {
                return Ok((lambda, x));
            }
        }
        // x <- normalize(y - shift x)
        for (yi, xi) in y.iter().zip(x.iter()) {
            debug_assert!(yi.is_finite() && xi.is_finite());
        }
        let mut nrm = 0.0;
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi - shift * *xi;
            nrm += *xi * *xi;
        }
        let nrm = nrm.sqrt();
        for xi in &mut x {
            *xi /= nrm;
        }
    }
    Err(SkError::SlowConvergence {
        iterations: POWER_MAX_ITERS,
        tol,
        achieved: residual,
    })
}

/// Simultaneous (block) power iteration with small Rayleigh-Ritz rotations.
///
/// Same fixed-shift power transform as `top_eigpair_op` applied to a block;
/// the extra directions absorb the near-degenerate edge cluster, which is
/// what makes spectral-edge eigenvectors of large GOE samples affordable.
pub fn top_eigpair_block(
    op: &impl SymOp,
    block: usize,
    tol: f64,
    floor: f64,
) -> Result<(f64, Vec<f64>)> {
    let n = op.dim();
    let b = block.clamp(1, n);
    let shift = power_shift(op, floor);
    let mut xs: Vec<Vec<f64>> = (0..b).map(|l| seed_vector(n, 100 + l as u64)).collect();
    orthonormalize(&mut xs);
    let mut ys: Vec<Vec<f64>> = vec![vec![0.0; n]; b];
    let max_outer = POWER_MAX_ITERS / 8;
    for outer in 0..max_outer {
        // several shifted power passes between Ritz projections
        for _ in 0..5 {
            op.apply_block(&xs, &mut ys);
            for (x, y) in xs.iter_mut().zip(&ys) {
                for (xi, yi) in x.iter_mut().zip(y) {
                    *xi = yi - shift * *xi;
                }
            }
            orthonormalize(&mut xs);
        }
        // Rayleigh-Ritz on the block
        op.apply_block(&xs, &mut ys);
        let mut small = vec![0.0; b * b];
        for i in 0..b {
            for j in 0..b {
                small[i * b + j] = dot(&xs[i], &ys[j]);
            }
        }
        for i in 0..b {
            for j in (i + 1)..b {
                let s = 0.5 * (small[i * b + j] + small[j * b + i]);
                small[i * b + j] = s;
                small[j * b + i] = s;
            }
        }
        let mut d = vec![0.0; b];
        let mut e = vec![0.0; b];
        linalg::tred2(&mut small, b, &mut d, &mut e);
        linalg::tql_implicit(&mut d, &mut e, b, &mut small, b)?;
        linalg::sort_descending(&mut d, &mut small, b);
        // top Ritz vector
        let mut v = vec![0.0; n];
        for l in 0..b {
            let w = small[l * b]; // column 0 of the Ritz rotation
            for (vi, xi) in v.iter_mut().zip(&xs[l]) {
                *vi += w * xi;
            }
        }
        let nv = norm2(&v);
        for vi in &mut v {
            *vi /= nv;
        }
        let mut mv = vec![0.0; n];
        op.apply(&v, &mut mv);
        let lambda = dot(&v, &mv);
        let mut rsq = 0.0;
        for (yi, vi) in mv.iter().zip(&v) {
            let r = yi - lambda * vi;
            rsq += r * r;
        }
        if rsq.sqrt() < tol {
            return Ok((lambda, v));
        }
        if outer + 1 == max_outer {
            return Err(SkError::SlowConvergence {
                iterations: POWER_MAX_ITERS,
                tol,
                achieved: rsq.sqrt(),
            });
        }
        // rotate the block to the Ritz basis
        let old = xs.clone();
        for (i, x) in xs.iter_mut().enumerate() {
            for xi in x.iter_mut() {
                *xi = 0.0;
            }
            for (l, o) in old.iter().enumerate() {
                let w = small[l * b + i];
                for (xi, oi) in x.iter_mut().zip(o) {
                    *xi += w * oi;
                }
            }
        }
    }
    unreachable!()
}

fn orthonormalize(xs: &mut [Vec<f64>]) {
    for i in 0..xs.len() {
        for j in 0..i {
            let (head, tail) = xs.split_at_mut(i);
            let c = dot(&head[j], &tail[0]);
            for (xi, hj) in tail[0].iter_mut().zip(&head[j]) {
                *xi -= c * hj;
            }
        }
        let nrm = norm2(&xs[i]);
        for xi in &mut xs[i] {
            *xi /= nrm;
        }
    }
}

/// Empirical spectral distribution: sorted eigenvalues with a
/// right-continuous CDF.
#[derive(Debug, Clone)]
pub struct EsdCurve {
    sorted: Vec<f64>,
}

impl EsdCurve {
    pub fn from_values(mut values: Vec<f64>) -> Self {
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Self { sorted: values }
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    /// Fraction of eigenvalues <= x (right-continuous convention).
    pub fn cdf(&self, x: f64) -> f64 {
        let k = self.sorted.partition_point(|&v| v <= x);
        k as f64 / self.sorted.len() as f64
    }
}

/// One-sample Kolmogorov-Smirnov statistic against a reference CDF,
/// evaluated at both one-sided limits of every jump.
pub fn ks_distance<F: Fn(f64) -> f64>(esd: &EsdCurve, cdf: F) -> f64 {
    let n = esd.sorted.len();
    let mut worst = 0.0_f64;
    for (i, &x) in esd.sorted.iter().enumerate() {
        let f = cdf(x);
        worst = worst.max((f - i as f64 / n as f64).abs());
        worst = worst.max(((i + 1) as f64 / n as f64 - f).abs());
    }
    worst
}

/// `N^{-1/2} sum |v_i|` for a unit vector; tends to sqrt(2/pi) for spectral
/// edge vectors of rotation-invariant ensembles.
pub fn haar_abs_statistic(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    v.iter().map(|x| x.abs()).sum::<f64>() / n.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arr(n: usize, data: Vec<f64>) -> Array2<f64> {
        Array2::from_shape_vec((n, n), data).unwrap()
    }

    #[test]
    fn diag_spectrum_sorted() {
        let m = arr(3, vec![3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0]);
        let d = sym_eigen(&m, false).unwrap();
        assert_eq!(d.eigenvalues, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn rejects_asymmetric() {
        let m = arr(2, vec![1.0, 0.5, 0.2, 1.0]);
        assert!(matches!(sym_eigen(&m, false), Err(SkError::NotSymmetric(_))));
    }

    #[test]
    fn top_pair_diag() {
        let m = arr(2, vec![5.0, 0.0, 0.0, 1.0]);
        let (lambda, v) = top_eigpair(&m, 1e-12).unwrap();
        assert!((lambda - 5.0).abs() < 1e-10);
        assert!((v[0].abs() - 1.0).abs() < 1e-8);
        assert!(v[1].abs() < 1e-8);
    }

    #[test]
    fn block_matches_single_on_small_case() {
        let n = 60;
        let mut data = vec![0.0; n * n];
        let mut state = 3u64;
        for i in 0..n {
            for j in 0..=i {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(11);
                let x = ((state >> 11) as f64) / (1u64 << 53) as f64 - 0.5;
                data[i * n + j] = x;
                data[j * n + i] = x;
            }
        }
        let m = arr(n, data);
        let (l1, _) = top_eigpair(&m, 1e-10).unwrap();
        let (l2, v2) = top_eigpair_block(&m, 6, 1e-10, gershgorin_lower(&m)).unwrap();
        assert!((l1 - l2).abs() < 1e-8);
        let full = sym_eigen(&m, false).unwrap();
        assert!((l1 - full.eigenvalues[0]).abs() < 1e-8);
        assert!((norm2(v2.as_slice()) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn esd_cdf_conventions() {
        let esd = EsdCurve::from_values(vec![1.0, 1.0, 2.0, 3.0]);
        assert_eq!(esd.cdf(0.5), 0.0);
        assert_eq!(esd.cdf(1.0), 0.5);
        assert_eq!(esd.cdf(2.5), 0.75);
        assert_eq!(esd.cdf(3.0), 1.0);
        // point mass against its own (right-continuous) CDF
        let pm = EsdCurve::from_values(vec![2.0; 8]);
        let ks = ks_distance(&pm, |x| if x >= 2.0 { 1.0 } else { 0.0 });
        assert_eq!(ks, 0.0);
    }

    #[test]
    fn haar_statistic_extremes() {
        let n = 64;
        let mut e1 = vec![0.0; n];
        e1[0] = 1.0;
        assert!((haar_abs_statistic(&e1) - 1.0 / (n as f64).sqrt()).abs() < 1e-15);
        let unif = vec![1.0 / (n as f64).sqrt(); n];
        assert!((haar_abs_statistic(&unif) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trace_identity() {
        let n = 24;
        let mut data = vec![0.0; n * n];
        let mut state = 99u64;
        for i in 0..n {
            for j in 0..=i {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(7);
                let x = ((state >> 11) as f64) / (1u64 << 53) as f64 - 0.5;
                data[i * n + j] = x;
                data[j * n + i] = x;
            }
        }
        let m = arr(n, data);
        let trace: f64 = (0..n).map(|i| m[[i, i]]).sum();
        let frob: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
        let eig = sym_eigen(&m, true).unwrap();
        let sum: f64 = eig.eigenvalues.iter().sum();
        assert!((sum - trace).abs() < 1e-8 * frob.max(1.0));
        // orthogonality of returned eigenvectors
        let v = eig.eigenvectors.unwrap();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += v[[k, i]] * v[[k, j]];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((acc - expect).abs());
            }
        }
        assert!(worst < 1e-9, "V^T V defect {worst}");
    }
}
