//! Quasi-Newton minimization with a strong-Wolfe line search, plus
//! finite-difference derivatives.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_BRACKET: usize = 25;
const MAX_ZOOM: usize = 40;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Options {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    /// Largest coordinate change allowed in one step.
    pub max_step: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// The line search could not make progress even along steepest descent.
    pub stalled: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn axpy(x: &[f64], alpha: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + alpha * b).collect()
}

struct Point {
    alpha: f64,
    value: f64,
    slope: f64,
    gradient: Vec<f64>,
}

/// Strong-Wolfe line search along `d`. Returns the accepted point, or the
/// best sufficient-decrease point if the curvature condition cannot be met.
fn line_search<F>(f: &F, x: &[f64], fx: f64, gx: &[f64], d: &[f64], alpha0: f64) -> Option<Point>
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let slope0 = dot(gx, d);
    let eval = |alpha: f64| -> Option<Point> {
        let (value, gradient) = f(&axpy(x, alpha, d))?;
        if !value.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
            return None;
        }
        Some(Point {
            alpha,
            slope: dot(&gradient, d),
            value,
            gradient,
        })
    };
    let armijo = |p: &Point| p.value <= fx + C1 * p.alpha * slope0;
    let curvature = |p: &Point| p.slope.abs() <= -C2 * slope0;

    let mut best: Option<Point> = None;
    let keep = |best: &mut Option<Point>, p: &Point| {
        if armijo(p) && best.as_ref().is_none_or(|b| p.value < b.value) {
            *best = Some(Point {
                alpha: p.alpha,
                value: p.value,
                slope: p.slope,
                gradient: p.gradient.clone(),
            });
        }
    };

    let origin = Point {
        alpha: 0.0,
        value: fx,
        slope: slope0,
        gradient: gx.to_vec(),
    };
    let mut prev = origin;
    let mut alpha = alpha0;
    // bracketing phase: (lo, hi) where lo satisfies sufficient decrease
    let (mut lo, mut hi_alpha, mut hi_value) = 'bracket: {
        for i in 0..MAX_BRACKET {
            match eval(alpha) {
                None => break 'bracket (prev, alpha, f64::INFINITY),
                Some(p) => {
                    keep(&mut best, &p);
                    if !armijo(&p) || (i > 0 && p.value >= prev.value) {
                        let (a, v) = (p.alpha, p.value);
                        break 'bracket (prev, a, v);
                    }
                    if curvature(&p) {
                        return Some(p);
                    }
                    if p.slope >= 0.0 {
                        let (a, v) = (prev.alpha, prev.value);
                        break 'bracket (p, a, v);
                    }
                    prev = p;
                    alpha *= 2.0;
                }
            }
        }
        return best;
    };

    // zoom phase
    for _ in 0..MAX_ZOOM {
        let (a, b) = (lo.alpha, hi_alpha);
        let width = (b - a).abs();
        if width <= 1e-14 * a.abs().max(1e-300) || width < 1e-20 {
            break;
        }
        // safeguarded quadratic interpolation from (lo.value, lo.slope, hi_value)
        let mut trial = 0.5 * (a + b);
        if hi_value.is_finite() {
            let h = b - a;
            let denom = 2.0 * (hi_value - lo.value - lo.slope * h);
            if denom > 0.0 {
                let cand = a - lo.slope * h * h / denom;
                let (l, u) = (a.min(b), a.max(b));
                let margin = 0.1 * (u - l);
                if cand > l + margin && cand < u - margin {
                    trial = cand;
                }
            }
        }
        match eval(trial) {
            None => {
                hi_alpha = trial;
                hi_value = f64::INFINITY;
            }
            Some(p) => {
                keep(&mut best, &p);
                if !armijo(&p) || p.value >= lo.value {
                    hi_alpha = p.alpha;
                    hi_value = p.value;
                } else {
                    if curvature(&p) {
                        return Some(p);
                    }
                    if p.slope * (hi_alpha - lo.alpha) >= 0.0 {
                        hi_alpha = lo.alpha;
                        hi_value = lo.value;
                    }
                    lo = p;
                }
            }
        }
    }
    best
}

/// BFGS on the inverse Hessian. `f` returns `None` where the objective is
/// undefined; such points are treated as infinitely bad.
pub(crate) fn bfgs<F>(f: &F, x0: Vec<f64>, opts: Options) -> Option<Outcome>
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let (mut fx, mut g) = f(&x0)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut x = x0;
    let identity = |scale: f64| -> Vec<f64> {
        let mut h = vec![0.0; n * n];
        (0..n).for_each(|i| h[i * n + i] = scale);
        h
    };
    let mut h = identity(1.0);
    let mut fresh = true;
    let mut iterations = 0;
    let mut converged = false;
    let mut stalled = false;
    let mut small_steps = 0;

    while iterations < opts.max_iterations {
        if norm(&g) <= opts.gradient_tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let mut d: Vec<f64> = (0..n).map(|i| -dot(&h[i * n..(i + 1) * n], &g)).collect();
        if dot(&d, &g) >= -1e-14 * norm(&d) * norm(&g) {
            h = identity(1.0);
            fresh = true;
            d = g.iter().map(|v| -v).collect();
        }
        let longest = inf_norm(&d);
        if longest > opts.max_step {
            d.iter_mut().for_each(|v| *v *= opts.max_step / longest);
        }
        let alpha0 = if fresh {
            (1.0 / inf_norm(&d)).min(1.0)
        } else {
            1.0
        };
        let Some(p) = line_search(f, &x, fx, &g, &d, alpha0) else {
            if fresh {
                stalled = true;
                break;
            }
            h = identity(1.0);
            fresh = true;
            continue;
        };
        let x_new = axpy(&x, p.alpha, &d);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = p.gradient.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * norm(&s) * norm(&y) {
            if fresh {
                h = identity(sy / dot(&y, &y));
            }
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
            fresh = false;
        }
        let df = (fx - p.value).abs();
        let tiny = inf_norm(&s) <= opts.step_tolerance * (1.0 + inf_norm(&x_new))
            && df <= 1e-14 * (1.0 + fx.abs());
        x = x_new;
        fx = p.value;
        g = p.gradient;
        small_steps = if tiny { small_steps + 1 } else { 0 };
        if small_steps >= 3 {
            converged = norm(&g) <= opts.gradient_tolerance;
            break;
        }
    }
    if !converged {
        converged = norm(&g) <= opts.gradient_tolerance;
    }
    Some(Outcome {
        x,
        value: fx,
        gradient: g,
        iterations,
        converged,
        stalled,
    })
}

struct Simplex<'a, F> {
    f: &'a F,
}

impl<F> CostFunction for Simplex<'_, F>
where
    F: Fn(&[f64]) -> Option<f64>,
{
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> Result<f64, argmin::core::Error> {
        Ok((self.f)(x)
            .filter(|v| v.is_finite())
            .unwrap_or(f64::INFINITY))
    }
}

/// Derivative-free minimization from `x0`; returns the best vertex.
pub(crate) fn nelder_mead<F>(
    f: &F,
    x0: &[f64],
    scale: f64,
    max_iterations: usize,
) -> Option<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> Option<f64>,
{
    let mut simplex = vec![x0.to_vec()];
    for i in 0..x0.len() {
        let mut v = x0.to_vec();
        v[i] += scale * (1.0 + v[i].abs());
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex).with_sd_tolerance(1e-12).ok()?;
    let result = Executor::new(Simplex { f }, solver)
        .configure(|state| state.max_iters(max_iterations as u64))
        .run()
        .ok()?;
    let best = result.state().get_best_param()?.clone();
    let value = result.state().get_best_cost();
    value.is_finite().then_some((best, value))
}

/// Central differences with step `rel_step · (1 + |x_i|)`.
pub fn central_difference_gradient<F>(f: F, x: &[f64], rel_step: f64) -> Option<Vec<f64>>
where
    F: Fn(&[f64]) -> Option<f64>,
{
    let mut work = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let h = rel_step * (1.0 + x[i].abs());
        let (up_x, down_x) = (x[i] + h, x[i] - h);
        work[i] = up_x;
        let up = f(&work)?;
        work[i] = down_x;
        let down = f(&work)?;
        work[i] = x[i];
        // divide by the step actually taken
        g.push((up - down) / (up_x - down_x));
    }
    Some(g)
}

/// Central-difference gradients at steps `h` and `h/2` and their Richardson
/// extrapolation `(4 g(h/2) − g(h)) / 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct RichardsonGradient {
    pub coarse: Vec<f64>,
    pub fine: Vec<f64>,
    pub extrapolated: Vec<f64>,
}

impl RichardsonGradient {
    /// Largest componentwise `|g(h/2) − R| / max(|R|, floor)`.
    pub fn max_relative_discrepancy(&self, floor: f64) -> f64 {
        self.fine
            .iter()
            .zip(&self.extrapolated)
            .map(|(f, r)| (f - r).abs() / r.abs().max(floor))
            .fold(0.0, f64::max)
    }
}

pub fn richardson_gradient<F>(f: F, x: &[f64], rel_step: f64) -> Option<RichardsonGradient>
where
    F: Fn(&[f64]) -> Option<f64>,
{
    let coarse = central_difference_gradient(&f, x, rel_step)?;
    let fine = central_difference_gradient(&f, x, rel_step / 2.0)?;
    let extrapolated = coarse
        .iter()
        .zip(&fine)
        .map(|(c, f)| (4.0 * f - c) / 3.0)
        .collect();
    Some(RichardsonGradient {
        coarse,
        fine,
        extrapolated,
    })
}

/// Hessian from central differences of function values, step
/// `rel_step · (1 + |x_i|)`. Exact for quadratics up to rounding.
pub fn hessian_from_values<F>(f: F, x: &[f64], rel_step: f64) -> Option<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Option<f64>,
{
    let n = x.len();
    let h: Vec<f64> = x.iter().map(|v| rel_step * (1.0 + v.abs())).collect();
    let f0 = f(x)?;
    let mut work = x.to_vec();
    let at = |work: &mut Vec<f64>, i: usize, si: f64, j: usize, sj: f64| -> Option<f64> {
        work[i] += si * h[i];
        work[j] += sj * h[j];
        let v = f(work);
        work[i] = x[i];
        work[j] = x[j];
        v
    };
    let mut hess = vec![vec![0.0; n]; n];
    for i in 0..n {
        work[i] = x[i] + h[i];
        let up = f(&work)?;
        work[i] = x[i] - h[i];
        let down = f(&work)?;
        work[i] = x[i];
        hess[i][i] = (up - 2.0 * f0 + down) / (h[i] * h[i]);
        for j in 0..i {
            let pp = at(&mut work, i, 1.0, j, 1.0)?;
            let pm = at(&mut work, i, 1.0, j, -1.0)?;
            let mp = at(&mut work, i, -1.0, j, 1.0)?;
            let mm = at(&mut work, i, -1.0, j, -1.0)?;
            let v = (pp - pm - mp + mm) / (4.0 * h[i] * h[j]);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    Some(hess)
}

/// Hessian from central differences of an analytic gradient, symmetrized.
pub fn hessian_from_gradient<G>(g: G, x: &[f64], rel_step: f64) -> Option<Vec<Vec<f64>>>
where
    G: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    let mut work = x.to_vec();
    for i in 0..n {
        let h = rel_step * (1.0 + x[i].abs());
        let (up_x, down_x) = (x[i] + h, x[i] - h);
        work[i] = up_x;
        let up = g(&work)?;
        work[i] = down_x;
        let down = g(&work)?;
        work[i] = x[i];
        cols.push(
            up.iter()
                .zip(&down)
                .map(|(a, b)| (a - b) / (up_x - down_x))
                .collect::<Vec<f64>>(),
        );
    }
    Some(
        (0..n)
            .map(|i| (0..n).map(|j| 0.5 * (cols[i][j] + cols[j][i])).collect())
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        Some((v, g))
    }

    fn opts() -> Options {
        Options {
            max_iterations: 500,
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-14,
            max_step: 10.0,
        }
    }

    #[test]
    fn bfgs_minimizes_rosenbrock() {
        let out = bfgs(&rosenbrock, vec![-1.2, 1.0], opts()).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn bfgs_respects_undefined_region() {
        // defined only for x > 0; minimum of x - ln x at 1
        let f = |x: &[f64]| (x[0] > 0.0).then(|| (x[0] - x[0].ln(), vec![1.0 - 1.0 / x[0]]));
        let out = bfgs(&f, vec![8.0], opts()).unwrap();
        assert!(out.converged && (out.x[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let f = |x: &[f64]| Some((x[0] - 2.0).powi(2) + 3.0 * (x[1] + 1.0).powi(2));
        let (x, v) = nelder_mead(&f, &[0.0, 0.0], 0.5, 2000).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-4 && (x[1] + 1.0).abs() < 1e-4 && v < 1e-8);
    }

    #[test]
    fn finite_differences() {
        let f = |x: &[f64]| Some(x[0].sin() * x[1].exp() + x[0] * x[0] * x[1]);
        let x = [0.7, -0.3];
        let exact = [
            0.7f64.cos() * (-0.3f64).exp() + 2.0 * 0.7 * -0.3,
            0.7f64.sin() * (-0.3f64).exp() + 0.49,
        ];
        let r = richardson_gradient(f, &x, 1e-3).unwrap();
        for i in 0..2 {
            assert!((r.extrapolated[i] - exact[i]).abs() < 1e-10);
        }
        assert!(r.max_relative_discrepancy(1.0) < 1e-6);
        let grad = |x: &[f64]| {
            Some(vec![
                x[0].cos() * x[1].exp() + 2.0 * x[0] * x[1],
                x[0].sin() * x[1].exp() + x[0] * x[0],
            ])
        };
        let h1 = hessian_from_values(f, &x, 1e-4).unwrap();
        let h2 = hessian_from_gradient(grad, &x, 1e-5).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((h1[i][j] - h2[i][j]).abs() < 1e-5);
            }
        }
    }
}
