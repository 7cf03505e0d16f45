//! Quasi-Newton (BFGS) minimizer with backtracking line search.
//!
//! Dimension stays small here (a handful of parameters per taxon), so dense
//! inverse-Hessian updates are fine.

use nalgebra::{DMatrix, DVector};

pub struct BfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub struct BfgsOptions {
    pub max_iter: usize,
    /// Converged when sup-norm(grad) < tol * (1 + |value|).
    pub tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions { max_iter: 500, tol: 1e-6 }
    }
}

/// Minimizes `f`, which must return (value, gradient).
pub fn bfgs<F>(x0: &[f64], mut f: F, opts: &BfgsOptions) -> BfgsResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let dim = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let (mut fx, g0) = f(x.as_slice());
    let mut g = DVector::from_vec(g0);
    let mut h_inv = DMatrix::<f64>::identity(dim, dim);
    let mut converged = g.amax() < opts.tol * (1.0 + fx.abs());
    let mut iterations = 0;

    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let mut dir = -(&h_inv * &g);
        let mut slope = dir.dot(&g);
        if !slope.is_finite() || slope >= 0.0 {
            // reset to steepest descent if the approximation degenerated
            h_inv = DMatrix::identity(dim, dim);
            dir = -g.clone();
            slope = dir.dot(&g);
        }

        // Armijo backtracking
        let mut line_search = |dir: &DVector<f64>, slope: f64| {
            let mut step = 1.0f64;
            for _ in 0..40 {
                let x_new = &x + dir * step;
                let (f_new, g_new) = f(x_new.as_slice());
                if f_new.is_finite() && f_new <= fx + 1e-4 * step * slope {
                    return Some((x_new, f_new, DVector::from_vec(g_new)));
                }
                step *= 0.5;
            }
            None
        };
        let mut accepted = line_search(&dir, slope);
        if accepted.is_none() && h_inv != DMatrix::identity(dim, dim) {
            // stalled quasi-Newton direction; retry along steepest descent
            h_inv = DMatrix::identity(dim, dim);
            dir = -g.clone();
            slope = dir.dot(&g);
            accepted = line_search(&dir, slope);
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            break; // line search failed; report best point so far
        };

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 {
            // BFGS inverse update: H <- (I - s y'/sy) H (I - y s'/sy) + s s'/sy
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            h_inv += (sy + yhy) * rho * rho * (&s * s.transpose())
                - rho * (&hy * s.transpose() + &s * hy.transpose());
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        converged = g.amax() < opts.tol * (1.0 + fx.abs());
    }

    BfgsResult {
        x: x.as_slice().to_vec(),
        value: fx,
        grad: g.as_slice().to_vec(),
        iterations,
        converged,
    }
}
