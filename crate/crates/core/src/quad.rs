//! Gauss-Hermite quadrature rules (physicists' weight exp(-x^2)).
//!
//! Nodes and weights come from the Golub-Welsch eigendecomposition of the
//! Jacobi matrix, so any node count works. Rules are cheap to build and
//! callers typically cache one per fit.

use nalgebra::{DMatrix, SymmetricEigen};

#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Rule with `n` nodes: integral of f(x) exp(-x^2) dx ~= sum w_i f(x_i).
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "quadrature rule needs at least one node");
        if n == 1 {
            return GaussHermite { nodes: vec![0.0], weights: vec![std::f64::consts::PI.sqrt()] };
        }
        let mut jacobi = DMatrix::zeros(n, n);
        for k in 1..n {
            let b = (k as f64 / 2.0).sqrt();
            jacobi[(k - 1, k)] = b;
            jacobi[(k, k - 1)] = b;
        }
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let w = std::f64::consts::PI.sqrt() * eig.eigenvectors[(0, i)].powi(2);
                (eig.eigenvalues[i], w)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        GaussHermite {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Numerically stable log(sum(exp(x_i))).
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// log(exp(a) + exp(b)).
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if !hi.is_finite() {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn weights_sum_to_sqrt_pi() {
        for n in [1, 5, 9, 15, 31] {
            let gh = GaussHermite::new(n);
            let s: f64 = gh.weights.iter().sum();
            assert_abs_diff_eq!(s, std::f64::consts::PI.sqrt(), epsilon = 1e-10);
        }
    }

    #[test]
    fn integrates_monomials() {
        // int x^2 e^{-x^2} dx = sqrt(pi)/2; int x^4 e^{-x^2} dx = 3 sqrt(pi)/4
        let gh = GaussHermite::new(15);
        let m2: f64 = gh.nodes.iter().zip(&gh.weights).map(|(x, w)| w * x * x).sum();
        let m4: f64 = gh.nodes.iter().zip(&gh.weights).map(|(x, w)| w * x.powi(4)).sum();
        assert_abs_diff_eq!(m2, std::f64::consts::PI.sqrt() / 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(m4, 3.0 * std::f64::consts::PI.sqrt() / 4.0, epsilon = 1e-9);
    }

    #[test]
    fn gaussian_expectation_via_substitution() {
        // E[exp(tZ)] = exp(t^2/2) for Z ~ N(0,1), via z = sqrt(2) x.
        let gh = GaussHermite::new(21);
        let t = 0.7;
        let e: f64 = gh
            .nodes
            .iter()
            .zip(&gh.weights)
            .map(|(x, w)| w * (t * std::f64::consts::SQRT_2 * x).exp())
            .sum::<f64>()
            / std::f64::consts::PI.sqrt();
        assert_abs_diff_eq!(e, (t * t / 2.0f64).exp(), epsilon = 1e-10);
    }

    #[test]
    fn log_sum_exp_matches_direct() {
        let xs = [-1.0f64, 2.0, 0.5];
        let direct: f64 = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert_abs_diff_eq!(log_sum_exp(&xs), direct, epsilon = 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
    }
}
