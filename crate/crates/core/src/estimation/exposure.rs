//! Logistic regression of the exposure on the C1 confounders.

use nalgebra::{DMatrix, DVector};

use super::FitError;
use crate::data::{Dataset, ExposureFit};
use crate::family::expit;

/// Fits `logit P(A=1 | C1) = alpha_0 + alpha' C1` by Newton-Raphson and
/// records both conditional and marginal exposure probabilities. The marginal
/// P(A=1) is the average of the fitted probabilities over subjects.
pub fn fit_exposure_model(data: &Dataset) -> Result<ExposureFit, FitError> {
    let n = data.n();
    let r1 = data.c1.ncols();
    let x = DMatrix::from_fn(n, r1 + 1, |i, j| if j == 0 { 1.0 } else { data.c1[(i, j - 1)] });
    let y = DVector::from_column_slice(&data.exposure);

    // collinearity check on the Gram matrix
    let gram = x.transpose() * &x;
    let eig = gram.clone().symmetric_eigen().eigenvalues;
    let max_eig = eig.iter().cloned().fold(0.0f64, f64::max);
    let min_eig = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min_eig > 1e-12 * max_eig.max(1.0)) {
        return Err(FitError::Collinear(format!(
            "exposure design condition number {:.3e}",
            max_eig / min_eig.max(f64::MIN_POSITIVE)
        )));
    }

    let mut alpha = DVector::zeros(r1 + 1);
    for _ in 0..100 {
        let eta = &x * &alpha;
        let p: DVector<f64> = eta.map(expit);
        let w: Vec<f64> = p.iter().map(|&pi| (pi * (1.0 - pi)).max(1e-10)).collect();
        let mut xtwx = DMatrix::zeros(r1 + 1, r1 + 1);
        let mut score = DVector::zeros(r1 + 1);
        for i in 0..n {
            let xi = x.row(i).transpose();
            xtwx += w[i] * &xi * xi.transpose();
            score += (y[i] - p[i]) * xi;
        }
        let step = xtwx
            .cholesky()
            .map(|ch| ch.solve(&score))
            .ok_or_else(|| FitError::Collinear("singular weighted Gram matrix".into()))?;
        alpha += &step;
        if alpha.amax() > 30.0 {
            return Err(FitError::Separation);
        }
        if step.amax() < 1e-10 {
            break;
        }
    }

    let fitted: Vec<f64> = (&x * &alpha).iter().map(|&e| expit(e)).collect();
    let p1 = fitted.iter().sum::<f64>() / n as f64;
    Ok(ExposureFit {
        alpha: alpha.as_slice().to_vec(),
        fitted_prob: fitted,
        marginal_prob: (p1, 1.0 - p1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::Distribution;

    fn dataset_with(exposure: Vec<f64>, c1: Vec<f64>) -> Dataset {
        let n = exposure.len();
        Dataset {
            subject_id: (0..n).map(|i| i.to_string()).collect(),
            exposure,
            c1: DMatrix::from_column_slice(n, 1, &c1),
            c2: DMatrix::zeros(n, 1),
            c3: DMatrix::zeros(n, 0),
            mediators: DMatrix::zeros(n, 1),
            offset: vec![1.0; n],
            outcome: vec![0.0; n],
        }
    }

    #[test]
    fn recovers_true_coefficients() {
        // generator from the simulation design: (alpha_0, alpha_1) = (0.25, -0.50)
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let c1: Vec<f64> = (0..n).map(|_| rand_distr::StandardNormal.sample(&mut rng)).collect();
        let a: Vec<f64> = c1
            .iter()
            .map(|&c| {
                let p = expit(0.25 - 0.50 * c);
                if rng.random::<f64>() < p { 1.0 } else { 0.0 }
            })
            .collect();
        let data = dataset_with(a, c1);
        let fit = fit_exposure_model(&data).unwrap();
        assert!((fit.alpha[0] - 0.25).abs() < 0.1, "alpha0 = {}", fit.alpha[0]);
        assert!((fit.alpha[1] + 0.50).abs() < 0.1, "alpha1 = {}", fit.alpha[1]);
        let (p1, p0) = fit.marginal_prob;
        assert!((p1 + p0 - 1.0).abs() < 1e-12);
        assert!(fit.fitted_prob.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn zero_column_is_collinear() {
        let data = dataset_with(vec![1.0, 0.0, 1.0, 0.0], vec![0.0; 4]);
        assert!(matches!(fit_exposure_model(&data), Err(FitError::Collinear(_))));
    }

    #[test]
    fn perfect_prediction_is_separation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 200;
        let c1: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let a: Vec<f64> = c1.iter().map(|&c| if c > 0.0 { 1.0 } else { 0.0 }).collect();
        let data = dataset_with(a, c1);
        assert!(matches!(fit_exposure_model(&data), Err(FitError::Separation)));
    }
}
