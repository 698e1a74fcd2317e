//! Gauss–Hermite rules for the standard normal and their 2-D tensor products
//! mapped through the Cholesky root of the random-effects covariance.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `K` nodes and weights integrating against the standard normal density.
///
/// Nodes come from the Golub–Welsch eigenproblem on the Jacobi matrix of the
/// probabilists' Hermite polynomials, polished by Newton steps on the
/// orthonormal recurrence. Weights use the Christoffel form
/// `w_i = 1 / Σ_k p_k(x_i)²`, which stays accurate in the tails.
pub fn gh_nodes(k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if k == 0 {
        return Err(Error::InvalidInput(
            "number of quadrature nodes must be at least 1".into(),
        ));
    }
    if k == 1 {
        return Ok((vec![0.0], vec![1.0]));
    }
    let jacobi = DMatrix::from_fn(k, k, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());

    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (p, dp, _) = orthonormal_hermite(k, *x);
            if dp == 0.0 {
                break;
            }
            let step = p / dp;
            *x -= step;
            if step.abs() < 1e-16 * (1.0 + x.abs()) {
                break;
            }
        }
    }
    // exact antisymmetry
    for i in 0..k / 2 {
        let m = 0.5 * (nodes[k - 1 - i] - nodes[i]);
        nodes[i] = -m;
        nodes[k - 1 - i] = m;
    }
    if k % 2 == 1 {
        nodes[k / 2] = 0.0;
    }

    let mut weights: Vec<f64> = nodes
        .iter()
        .map(|&x| 1.0 / orthonormal_hermite(k, x).2)
        .collect();
    for i in 0..k / 2 {
        let w = 0.5 * (weights[i] + weights[k - 1 - i]);
        weights[i] = w;
        weights[k - 1 - i] = w;
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok((nodes, weights))
}

/// Returns `(p_k(x), p_k'(x), Σ_{m<k} p_m(x)²)` for the orthonormal
/// probabilists' Hermite polynomials `p_m = He_m / √(m!)`.
fn orthonormal_hermite(k: usize, x: f64) -> (f64, f64, f64) {
    let mut p_prev = 0.0;
    let mut p = 1.0;
    let mut sum_sq = 0.0;
    for m in 0..k {
        sum_sq += p * p;
        let next = (x * p - (m as f64).sqrt() * p_prev) / ((m + 1) as f64).sqrt();
        p_prev = p;
        p = next;
    }
    // He_k' = k He_{k-1}  =>  p_k' = √k p_{k-1}
    (p, (k as f64).sqrt() * p_prev, sum_sq)
}

/// Upper-triangular `R` with `D = R'R`.
pub fn cholesky_upper(d: [[f64; 2]; 2]) -> Result<[[f64; 2]; 2]> {
    let sym = (d[0][1] - d[1][0]).abs() <= 1e-12 * (1.0 + d[0][1].abs());
    if !sym || !(d[0][0] > 0.0) {
        return Err(Error::NotPositiveDefinite(format!("{d:?}")));
    }
    let r11 = d[0][0].sqrt();
    let r12 = d[0][1] / r11;
    let rest = d[1][1] - r12 * r12;
    if !(rest > 0.0) {
        return Err(Error::NotPositiveDefinite(format!("{d:?}")));
    }
    Ok([[r11, r12], [0.0, rest.sqrt()]])
}

/// Tensor-product rule over `b = (z_k, z_s) R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub nodes1d: Vec<f64>,
    pub weights1d: Vec<f64>,
    /// `(b_Y, b_T)` at index `k·K + s`.
    pub nodes2d: Vec<[f64; 2]>,
    pub weights2d: Vec<f64>,
    pub cholesky_upper: [[f64; 2]; 2],
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights2d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights2d.is_empty()
    }
}

pub fn build_rule(d: [[f64; 2]; 2], k: usize) -> Result<QuadratureRule> {
    let r = cholesky_upper(d)?;
    let (nodes1d, weights1d) = gh_nodes(k)?;
    Ok(rule_from_parts(nodes1d, weights1d, r))
}

pub(crate) fn rule_from_parts(
    nodes1d: Vec<f64>,
    weights1d: Vec<f64>,
    r: [[f64; 2]; 2],
) -> QuadratureRule {
    let k = nodes1d.len();
    let mut nodes2d = Vec::with_capacity(k * k);
    let mut weights2d = Vec::with_capacity(k * k);
    for (zk, wk) in nodes1d.iter().zip(&weights1d) {
        for (zs, ws) in nodes1d.iter().zip(&weights1d) {
            nodes2d.push([r[0][0] * zk + r[1][0] * zs, r[0][1] * zk + r[1][1] * zs]);
            weights2d.push(wk * ws);
        }
    }
    QuadratureRule {
        nodes1d,
        weights1d,
        nodes2d,
        weights2d,
        cholesky_upper: r,
    }
}
