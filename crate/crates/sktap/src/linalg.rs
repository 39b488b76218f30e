//! Dense symmetric eigensolver core: Householder tridiagonalization followed
//! by the implicit-shift QL iteration (EISPACK tred2/tql2 lineage).
//!
//! Two reduction paths: an eigenvalues-only variant that touches only the
//! lower triangle with row access (the hot path for large spectra), and the
//! classic full reduction that accumulates the orthogonal transform for
//! eigenvector recovery. The QL stage optionally rotates the rows of an
//! auxiliary matrix, which also serves Golub-Welsch quadrature (a single
//! accumulated row yields the first eigenvector components).

use crate::error::{Result, SkError};

/// Maximum QL sweeps per eigenvalue before reporting failure.
const MAX_QL_SWEEPS: usize = 64;

/// Householder reduction to tridiagonal form, eigenvalues-only.
///
/// Destroys the lower triangle of the row-major `a` (n x n). On return `d`
/// holds the tridiagonal diagonal and `e[1..]` the subdiagonal (`e[0] = 0`).
pub fn tridiag_reduce(a: &mut [f64], n: usize, d: &mut [f64], e: &mut [f64]) {
    debug_assert_eq!(a.len(), n * n);
    let mut u = vec![0.0; n];
    let mut p = vec![0.0; n];

    for i in (2..n).rev() {
        // eliminate row i against columns 0..i-1
        let mut scale = 0.0;
        for k in 0..i {
            scale += a[i * n + k].abs();
        }
        if scale == 0.0 {
            e[i] = 0.0;
            continue;
        }
        let mut hsum = 0.0;
        for k in 0..i {
            u[k] = a[i * n + k] / scale;
            hsum += u[k] * u[k];
        }
        let f = u[i - 1];
        let g = if f >= 0.0 { -hsum.sqrt() } else { hsum.sqrt() };
        e[i] = scale * g;
        let h = hsum - f * g;
        u[i - 1] = f - g;

        // p = A u / h over the leading i x i block (lower triangle only)
        for j in 0..i {
            p[j] = a[j * n + j] * u[j];
        }
        for j in 1..i {
            let uj = u[j];
            let row = &a[j * n..j * n + j];
            let mut acc = 0.0;
            for (k, &ajk) in row.iter().enumerate() {
                acc += ajk * u[k];
                p[k] += ajk * uj;
            }
            p[j] += acc;
        }
        let mut upsum = 0.0;
        for j in 0..i {
            p[j] /= h;
            upsum += u[j] * p[j];
        }
        let kk = upsum / (2.0 * h);
        // rank-2 update A <- A - u w^T - w u^T with w = p - K u
        for j in 0..i {
            p[j] -= kk * u[j];
        }
        for j in 0..i {
            let uj = u[j];
            let wj = p[j];
            let row = &mut a[j * n..j * n + j + 1];
            for (k, ajk) in row.iter_mut().enumerate() {
                *ajk -= uj * p[k] + wj * u[k];
            }
        }
    }
    if n > 1 {
        e[1] = a[n];
    }
    e[0] = 0.0;
    for j in 0..n {
        d[j] = a[j * n + j];
    }
}

/// Householder reduction with accumulation of the orthogonal transform.
///
/// On return `a` holds Q (row-major; columns are the basis of the similarity
/// transform), `d` the diagonal and `e[1..]` the subdiagonal. Port of the
/// Algol/EISPACK `tred2` as in JAMA.
pub fn tred2(a: &mut [f64], n: usize, d: &mut [f64], e: &mut [f64]) {
    debug_assert_eq!(a.len(), n * n);
    for j in 0..n {
        d[j] = a[(n - 1) * n + j];
    }

    for i in (1..n).rev() {
        let l = i - 1;
        let mut scale = 0.0;
        let mut h = 0.0;
        if l > 0 {
            for k in 0..=l {
                scale += d[k].abs();
            }
            if scale == 0.0 {
                e[i] = d[l];
                for j in 0..=l {
                    d[j] = a[l * n + j];
                    a[i * n + j] = 0.0;
                    a[j * n + i] = 0.0;
                }
            } else {
                for k in 0..=l {
                    d[k] /= scale;
                    h += d[k] * d[k];
                }
                let f = d[l];
                let mut g = h.sqrt();
                if f > 0.0 {
                    g = -g;
                }
                e[i] = scale * g;
                h -= f * g;
                d[l] = f - g;
                for j in 0..=l {
                    e[j] = 0.0;
                }
                for j in 0..=l {
                    let f = d[j];
                    a[j * n + i] = f;
                    let mut g = e[j] + a[j * n + j] * f;
                    for k in (j + 1)..=l {
                        g += a[k * n + j] * d[k];
                        e[k] += a[k * n + j] * f;
                    }
                    e[j] = g;
                }
                let mut f = 0.0;
                for j in 0..=l {
                    e[j] /= h;
                    f += e[j] * d[j];
                }
                let hh = f / (h + h);
                for j in 0..=l {
                    e[j] -= hh * d[j];
                }
                for j in 0..=l {
                    let f = d[j];
                    let g = e[j];
                    for k in j..=l {
                        a[k * n + j] -= f * e[k] + g * d[k];
                    }
                    d[j] = a[l * n + j];
                    a[i * n + j] = 0.0;
                }
            }
        } else {
            e[i] = d[l];
        }
        d[i] = h;
    }

    // accumulate transformations
    for i in 0..(n - 1) {
        a[(n - 1) * n + i] = a[i * n + i];
        a[i * n + i] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = a[k * n + (i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += a[k * n + (i + 1)] * a[k * n + j];
                }
                for k in 0..=i {
                    a[k * n + j] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            a[k * n + (i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = a[(n - 1) * n + j];
        a[(n - 1) * n + j] = 0.0;
    }
    a[(n - 1) * n + (n - 1)] = 1.0;
    e[0] = 0.0;
}

/// Implicit-shift QL iteration on a symmetric tridiagonal matrix.
///
/// `d` is the diagonal, `e[1..]` the subdiagonal on entry (`e[0]` ignored);
/// on return `d` holds the eigenvalues (unsorted). If `vrows > 0`, `v` is a
/// row-major `vrows x n` matrix whose columns are rotated along; starting
/// from Q of `tred2` this yields eigenvectors as columns, starting from the
/// 1 x n unit row it yields the first eigenvector components (Golub-Welsch).
pub fn tql_implicit(d: &mut [f64], e: &mut [f64], n: usize, v: &mut [f64], vrows: usize) -> Result<()> {
    if n == 0 {
        return Ok(());
    }
    debug_assert_eq!(v.len(), vrows * n);
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut sweeps = 0;
            loop {
                sweeps += 1;
                if sweeps > MAX_QL_SWEEPS {
                    return Err(SkError::SlowConvergence {
                        iterations: sweeps,
                        tol: eps * tst1,
                        achieved: e[l].abs(),
                    });
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for i in (l + 2)..n {
                    d[i] -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..vrows {
                        let row = &mut v[k * n..(k + 1) * n];
                        let h = row[i + 1];
                        row[i + 1] = s * row[i] + c * h;
                        row[i] = c * row[i] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// Sorts eigenvalues descending, permuting the columns of the optional
/// row-major `vrows x n` companion matrix the same way.
pub fn sort_descending(d: &mut [f64], v: &mut [f64], vrows: usize) {
    let n = d.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| d[b].partial_cmp(&d[a]).unwrap());
    let sorted: Vec<f64> = idx.iter().map(|&j| d[j]).collect();
    d.copy_from_slice(&sorted);
    if vrows > 0 {
        let mut row_buf = vec![0.0; n];
        for r in 0..vrows {
            let row = &mut v[r * n..(r + 1) * n];
            row_buf.copy_from_slice(row);
            for (new_col, &old_col) in idx.iter().enumerate() {
                row[new_col] = row_buf[old_col];
            }
        }
    }
}

/// Pairwise (cascade) summation; order-independent aggregation helper.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    match x.len() {
        0 => 0.0,
        1 => x[0],
        2 => x[0] + x[1],
        len => {
            let mid = len / 2;
            pairwise_sum(&x[..mid]) + pairwise_sum(&x[mid..])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eig_all(mat: &[f64], n: usize) -> Vec<f64> {
        let mut a = mat.to_vec();
        let mut d = vec![0.0; n];
        let mut e = vec![0.0; n];
        tridiag_reduce(&mut a, n, &mut d, &mut e);
        tql_implicit(&mut d, &mut e, n, &mut [], 0).unwrap();
        sort_descending(&mut d, &mut [], 0);
        d
    }

    #[test]
    fn diag_matrix_eigenvalues() {
        let m = [3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0];
        let d = eig_all(&m, 3);
        assert_eq!(d, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn two_by_two_closed_form() {
        // [[a, b], [b, c]] eigenvalues (a+c)/2 +- sqrt(((a-c)/2)^2 + b^2)
        let (a, b, c) = (1.3, -0.7, 0.2);
        let m = [a, b, b, c];
        let d = eig_all(&m, 2);
        let mid = 0.5 * (a + c);
        let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        assert!((d[0] - (mid + rad)).abs() < 1e-14);
        assert!((d[1] - (mid - rad)).abs() < 1e-14);
    }

    #[test]
    fn both_reductions_agree() {
        // deterministic pseudo-random symmetric matrix
        let n = 37;
        let mut m = vec![0.0; n * n];
        let mut state = 0x9e3779b97f4a7c15u64;
        for i in 0..n {
            for j in 0..=i {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let x = ((state >> 11) as f64) / ((1u64 << 53) as f64) - 0.5;
                m[i * n + j] = x;
                m[j * n + i] = x;
            }
        }
        let d1 = eig_all(&m, n);

        let mut a = m.clone();
        let mut d = vec![0.0; n];
        let mut e = vec![0.0; n];
        tred2(&mut a, n, &mut d, &mut e);
        tql_implicit(&mut d, &mut e, n, &mut a, n).unwrap();
        sort_descending(&mut d, &mut a, n);

        for (x, y) in d1.iter().zip(d.iter()) {
            assert!((x - y).abs() < 1e-11, "{x} vs {y}");
        }
        // reconstruction M = V diag(d) V^T
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += a[i * n + k] * d[k] * a[j * n + k];
                }
                assert!((acc - m[i * n + j]).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn pairwise_matches_naive() {
        let x: Vec<f64> = (0..1001).map(|i| (i as f64).sin()).collect();
        let naive: f64 = x.iter().sum();
        assert!((pairwise_sum(&x) - naive).abs() < 1e-10);
    }
}
