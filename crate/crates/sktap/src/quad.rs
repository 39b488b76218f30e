//! Gauss-Hermite quadrature against the standard Gaussian weight, i.e. rules
//! computing `E f(Z)` for `Z ~ N(0,1)`. Nodes and weights come from the
//! Golub-Welsch algorithm on the Jacobi matrix of the probabilists' Hermite
//! polynomials (zero diagonal, sqrt(k) off-diagonal).

use std::fmt;

use crate::error::{Result, SkError};
use crate::linalg;

/// A quadrature rule for expectations against the standard Gaussian.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub order: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Default rule order used throughout the scalar layer.
pub const DEFAULT_ORDER: usize = 101;

/// Builds the order-`order` Gauss-Hermite rule (Gaussian-expectation form).
///
/// Nodes are symmetric about 0 (enforced by pairwise symmetrization, so odd
/// integrands vanish exactly) and weights are normalized to sum to 1. Exact
/// for polynomials up to degree `2*order - 1`.
pub fn gauss_hermite_rule(order: usize) -> Result<QuadratureRule> {
    if order < 2 {
        return Err(SkError::InvalidArgument(format!(
            "quadrature order must be >= 2, got {order}"
        )));
    }
    let n = order;
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    for k in 1..n {
        e[k] = (k as f64).sqrt();
    }
    // first-row accumulation: weights are squared first components
    let mut first = vec![0.0; n];
    first[0] = 1.0;
    linalg::tql_implicit(&mut d, &mut e, n, &mut first, 1)?;

    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap());
    let mut nodes: Vec<f64> = idx.iter().map(|&j| d[j]).collect();
    let mut weights: Vec<f64> = idx.iter().map(|&j| first[j] * first[j]).collect();

    // symmetrize node/weight pairs about the origin
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        nodes[i] = -x;
        nodes[j] = x;
        let w = 0.5 * (weights[i] + weights[j]);
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(QuadratureRule {
        order,
        nodes,
        weights,
    })
}

impl QuadratureRule {
    /// E f(Z) for standard Gaussian Z.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Two-column text dump (node, weight per line) for debugging.
impl fmt::Display for QuadratureRule {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            writeln!(out, "{x:+.16e} {w:.16e}")?;
        }
        Ok(())
    }
}
