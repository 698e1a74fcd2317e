//! Cubic B-splines with a second-derivative roughness penalty.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub(crate) const DEGREE: usize = 3;

/// A spline in B-spline form: `knots.len() == coefs.len() + degree + 1`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BSpline {
    pub knots: Vec<f64>,
    pub coefs: Vec<f64>,
    pub degree: usize,
}

impl BSpline {
    /// Span index `i` with `knots[i] <= t < knots[i+1]`, clamped to the last
    /// non-degenerate span at the right end.
    fn span(&self, t: f64) -> usize {
        let p = self.degree;
        let n = self.coefs.len();
        if t >= self.knots[n] {
            return n - 1;
        }
        if t <= self.knots[p] {
            return p;
        }
        // first index with knots[i] > t, minus one
        let upper = self.knots[p..=n].partition_point(|&k| k <= t) + p;
        upper - 1
    }

    /// de Boor evaluation.
    pub fn eval(&self, t: f64) -> f64 {
        let p = self.degree;
        if self.coefs.is_empty() {
            return 0.0;
        }
        if p == 0 {
            return self.coefs[self.span(t).min(self.coefs.len() - 1)];
        }
        let k = self.span(t);
        let mut d: Vec<f64> = (0..=p).map(|j| self.coefs[j + k - p]).collect();
        for r in 1..=p {
            for j in (r..=p).rev() {
                let i = j + k - p;
                let denom = self.knots[i + p + 1 - r] - self.knots[i];
                let alpha = if denom > 0.0 {
                    (t - self.knots[i]) / denom
                } else {
                    0.0
                };
                d[j] = (1.0 - alpha) * d[j - 1] + alpha * d[j];
            }
        }
        d[p]
    }

    /// Exact derivative as a spline of one degree lower.
    pub fn derivative(&self) -> BSpline {
        let p = self.degree;
        assert!(p > 0, "cannot differentiate a piecewise constant");
        let n = self.coefs.len();
        let coefs = (0..n - 1)
            .map(|i| {
                let denom = self.knots[i + p + 1] - self.knots[i + 1];
                if denom > 0.0 {
                    p as f64 * (self.coefs[i + 1] - self.coefs[i]) / denom
                } else {
                    0.0
                }
            })
            .collect();
        BSpline {
            knots: self.knots[1..self.knots.len() - 1].to_vec(),
            coefs,
            degree: p - 1,
        }
    }
}

/// Cubic knot vector for which the spline space has exactly one function per
/// data point: the interior knots are the data sites except the second and
/// second-to-last (not-a-knot).
pub(crate) fn not_a_knot_knots(sites: &[f64]) -> Vec<f64> {
    let n = sites.len();
    let mut knots = vec![sites[0]; DEGREE + 1];
    knots.extend_from_slice(&sites[2..n - 2]);
    knots.extend(std::iter::repeat_n(sites[n - 1], DEGREE + 1));
    knots
}

/// Values of all basis functions at `t` (Cox–de Boor), dense.
fn basis_row(knots: &[f64], n_basis: usize, t: f64) -> Vec<f64> {
    let mut row = vec![0.0; n_basis];
    for (i, v) in row.iter_mut().enumerate() {
        let mut unit = vec![0.0; n_basis];
        unit[i] = 1.0;
        let s = BSpline {
            knots: knots.to_vec(),
            coefs: unit,
            degree: DEGREE,
        };
        *v = s.eval(t);
    }
    row
}

/// Design matrix `B[i, j] = B_j(t_i)`.
pub(crate) fn design_matrix(knots: &[f64], sites: &[f64]) -> DMatrix<f64> {
    let n_basis = knots.len() - DEGREE - 1;
    let mut b = DMatrix::zeros(sites.len(), n_basis);
    for (i, &t) in sites.iter().enumerate() {
        for (j, v) in basis_row(knots, n_basis, t).into_iter().enumerate() {
            b[(i, j)] = v;
        }
    }
    b
}

/// Penalty matrix `P[i, j] = ∫ B_i'' B_j''`.
///
/// The second derivative of a cubic spline is a linear spline whose
/// coefficients are `D₂ c`; integrating products of hat functions exactly
/// gives `P = D₂' G D₂` with `G` the tridiagonal Gram matrix.
pub(crate) fn second_derivative_penalty(knots: &[f64]) -> DMatrix<f64> {
    let n = knots.len() - DEGREE - 1;
    // d1[i] = 3 (c[i+1] - c[i]) / (t[i+4] - t[i+1])
    let mut d1 = DMatrix::zeros(n - 1, n);
    for i in 0..n - 1 {
        let denom = knots[i + 4] - knots[i + 1];
        if denom > 0.0 {
            d1[(i, i)] = -3.0 / denom;
            d1[(i, i + 1)] = 3.0 / denom;
        }
    }
    // knots of the quadratic derivative are knots[1..len-1]
    let k1 = &knots[1..knots.len() - 1];
    let mut d2 = DMatrix::zeros(n - 2, n - 1);
    for i in 0..n - 2 {
        let denom = k1[i + 3] - k1[i + 1];
        if denom > 0.0 {
            d2[(i, i)] = -2.0 / denom;
            d2[(i, i + 1)] = 2.0 / denom;
        }
    }
    let dd = &d2 * &d1;
    // linear B-splines on s = knots[2..len-2]
    let s = &knots[2..knots.len() - 2];
    let m = n - 2;
    let mut g = DMatrix::zeros(m, m);
    for i in 0..m {
        g[(i, i)] = (s[i + 2] - s[i]) / 3.0;
        if i + 1 < m {
            let off = (s[i + 2] - s[i + 1]) / 6.0;
            g[(i, i + 1)] = off;
            g[(i + 1, i)] = off;
        }
    }
    dd.transpose() * g * dd
}

/// Penalized least-squares fit in the Demmler–Reinsch basis, so that the
/// fit and its GCV score are O(n) per penalty weight.
pub(crate) struct PenalizedFit {
    basis: DMatrix<f64>,
    /// Orthonormal eigenvectors of the penalty expressed on fitted values.
    eigvecs: DMatrix<f64>,
    eigvals: Vec<f64>,
    /// Data in the eigenbasis.
    projected: Vec<f64>,
}

impl PenalizedFit {
    pub fn new(knots: &[f64], sites: &[f64], values: &[f64]) -> Result<Self> {
        let basis = design_matrix(knots, sites);
        let penalty = second_derivative_penalty(knots);
        let lu = basis.clone().lu();
        let inv = lu
            .try_inverse()
            .ok_or_else(|| Error::InvalidInput("spline design matrix is singular".into()))?;
        // penalty on fitted values: B^-T P B^-1
        let k = inv.transpose() * penalty * &inv;
        let k = (&k + k.transpose()) * 0.5;
        let eig = SymmetricEigen::new(k);
        let eigvals: Vec<f64> = eig.eigenvalues.iter().map(|&s| s.max(0.0)).collect();
        let y = DVector::from_column_slice(values);
        let projected: Vec<f64> = (eig.eigenvectors.transpose() * y).iter().copied().collect();
        Ok(PenalizedFit {
            basis,
            eigvecs: eig.eigenvectors,
            eigvals,
            projected,
        })
    }

    pub fn n(&self) -> usize {
        self.eigvals.len()
    }

    /// `(RSS, trace of the hat matrix)` at penalty weight `lambda`.
    pub fn rss_and_edf(&self, lambda: f64) -> (f64, f64) {
        let mut rss = 0.0;
        let mut edf = 0.0;
        for (&s, &a) in self.eigvals.iter().zip(&self.projected) {
            let shrink = 1.0 / (1.0 + lambda * s);
            let r = (1.0 - shrink) * a;
            rss += r * r;
            edf += shrink;
        }
        (rss, edf)
    }

    pub fn gcv(&self, lambda: f64) -> f64 {
        let n = self.n() as f64;
        let (rss, edf) = self.rss_and_edf(lambda);
        let denom = n - edf;
        if denom <= 0.0 {
            return f64::INFINITY;
        }
        n * rss / (denom * denom)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigvals.iter().copied().fold(0.0, f64::max)
    }

    /// Spline coefficients at penalty weight `lambda`.
    pub fn coefficients(&self, lambda: f64) -> Result<Vec<f64>> {
        let shrunk = DVector::from_iterator(
            self.n(),
            self.eigvals
                .iter()
                .zip(&self.projected)
                .map(|(&s, &a)| a / (1.0 + lambda * s)),
        );
        let fitted = &self.eigvecs * shrunk;
        let coefs = self
            .basis
            .clone()
            .lu()
            .solve(&fitted)
            .ok_or_else(|| Error::InvalidInput("spline design matrix is singular".into()))?;
        Ok(coefs.iter().copied().collect())
    }
}
