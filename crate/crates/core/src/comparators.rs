//! Baseline confidence intervals for the mediation effects: first-order delta
//! propagation and the subject-resampling nonparametric bootstrap (NPB).

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::data::{pack_theta, unpack_theta, Dataset, ExposureFit};
use crate::effects::{compute_weights, expand_counterfactuals, fit_outcome_wls, EffectsError};
use crate::estimation::{
    fit_exposure_model, fit_mediator_model, FitError, FitOptions, MediatorFit,
};
use crate::family::CountFamily;
use crate::fiducial::{IntervalMethod, IntervalSummary};
use crate::rng::stream;

#[derive(Debug, Error)]
pub enum ComparatorError {
    #[error("singular delta-method gradient: effect variance is not finite")]
    SingularGradient,
    #[error("too many bootstrap failures: {dropped} of {reps} resamples dropped (>10%)")]
    TooManyFailures { dropped: usize, reps: usize },
    #[error("bootstrap needs at least {min} resamples, got {got}")]
    TooFewReps { got: usize, min: usize },
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Effects(#[from] EffectsError),
}

/// Interval per effect: the direct effect and one per mediator.
#[derive(Debug, Clone)]
pub struct ComparatorIntervals {
    pub nde: IntervalSummary,
    pub nie: Vec<IntervalSummary>,
    /// NPB only: resamples dropped for convergence failures.
    pub dropped: usize,
}

/// Single-pass point estimates: weights at the fitted parameters, WLS read-off.
pub fn pipeline_effects(
    data: &Dataset,
    med_fit: &MediatorFit,
    exp_fit: &ExposureFit,
) -> Result<(f64, Vec<f64>), ComparatorError> {
    let exp = expand_counterfactuals(data)?;
    let w = compute_weights(
        &exp,
        &med_fit.theta_hat,
        med_fit.family,
        exp_fit,
        &med_fit.delta_hat,
        data,
    )?;
    let est = fit_outcome_wls(&exp, &w, data)?;
    Ok((est.nde, est.nie))
}

/// Wald intervals by first-order propagation through the weights→WLS map.
/// The effect vector (nde, nie_1..nie_p) is a function of the mediator
/// parameters (uncertainty S*) and of the outcome WLS coefficients
/// (uncertainty from the WLS covariance); the two sources are treated as
/// independent blocks. The mediator-parameter Jacobian is taken by central
/// finite differences of the full weights→WLS pipeline.
pub fn delta_ci(
    data: &Dataset,
    med_fit: &MediatorFit,
    exp_fit: &ExposureFit,
    alpha: f64,
) -> Result<ComparatorIntervals, ComparatorError> {
    let exp = expand_counterfactuals(data)?;
    let p = data.p();
    let r2 = data.c2.ncols();
    let n_eff = p + 1;
    let free_idx = &med_fit.free_idx;
    let nf = free_idx.len();
    let packed_hat = pack_theta(&med_fit.theta_hat);

    let effects_at = |free_vals: &[f64]| -> Result<Vec<f64>, ComparatorError> {
        let mut packed = packed_hat.clone();
        for (&idx, &v) in free_idx.iter().zip(free_vals) {
            packed[idx] = v;
        }
        let last = packed.len() - 1;
        packed[last] = packed[last].abs();
        let theta = unpack_theta(&packed, p, r2).expect("consistent layout");
        let w = compute_weights(&exp, &theta, med_fit.family, exp_fit, &med_fit.delta_hat, data)?;
        let est = fit_outcome_wls(&exp, &w, data)?;
        let mut e = Vec::with_capacity(n_eff);
        e.push(est.nde);
        e.extend(est.nie);
        Ok(e)
    };

    let v0 = med_fit.free_values();
    // point estimate and the outcome-stage covariance block
    let w0 = compute_weights(
        &exp,
        &med_fit.theta_hat,
        med_fit.family,
        exp_fit,
        &med_fit.delta_hat,
        data,
    )?;
    let est0 = fit_outcome_wls(&exp, &w0, data)?;
    let point: Vec<f64> = std::iter::once(est0.nde).chain(est0.nie.iter().cloned()).collect();
    // effects are coefficients 1..p+1 of the WLS fit
    let wls_block = est0.cov.view((1, 1), (n_eff, n_eff)).into_owned();

    // mediator-parameter Jacobian, column per free parameter
    let cols: Vec<Vec<f64>> = (0..nf)
        .into_par_iter()
        .map(|f| {
            let h = 1e-4 * v0[f].abs().max(1.0);
            let mut vp = v0.clone();
            vp[f] += h;
            let mut vm = v0.clone();
            vm[f] -= h;
            let (ep, em) = (effects_at(&vp)?, effects_at(&vm)?);
            Ok((0..n_eff).map(|r| (ep[r] - em[r]) / (2.0 * h)).collect())
        })
        .collect::<Result<_, ComparatorError>>()?;
    let jac = DMatrix::from_fn(n_eff, nf, |r, c| cols[c][r]);

    let cov = &jac * &med_fit.cov_star * jac.transpose() + wls_block;
    let z = normal_quantile(1.0 - alpha / 2.0);
    let mut summaries = Vec::with_capacity(n_eff);
    for r in 0..n_eff {
        let var = cov[(r, r)];
        if !var.is_finite() || var < 0.0 {
            return Err(ComparatorError::SingularGradient);
        }
        let se = var.sqrt();
        summaries.push(IntervalSummary {
            estimate: point[r],
            lower: point[r] - z * se,
            upper: point[r] + z * se,
            width: 2.0 * z * se,
            alpha,
            method: IntervalMethod::Delta,
            gen_p_value: None,
        });
    }
    let nde = summaries.remove(0);
    Ok(ComparatorIntervals { nde, nie: summaries, dropped: 0 })
}

/// Subject bootstrap: resample rows with replacement, rerun the whole
/// pipeline (exposure fit, mediator fit, weights, WLS), and take percentile
/// intervals from the resample estimates. The reported estimate is the
/// original-sample one; failed resamples are dropped and counted.
pub fn npb_ci(
    data: &Dataset,
    family: CountFamily,
    exp_fit: &ExposureFit,
    med_fit: &MediatorFit,
    alpha: f64,
    reps: usize,
    seed: u64,
) -> Result<ComparatorIntervals, ComparatorError> {
    const MIN_REPS: usize = 200;
    if reps < MIN_REPS {
        return Err(ComparatorError::TooFewReps { got: reps, min: MIN_REPS });
    }
    let (nde0, nie0) = pipeline_effects(data, med_fit, exp_fit)?;
    let opts = FitOptions { start: Some(med_fit.theta_hat.clone()), ..FitOptions::default() };

    let estimates: Vec<Option<(f64, Vec<f64>)>> = (0..reps)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(seed, b as u64);
            let idx: Vec<usize> = (0..data.n()).map(|_| rng.random_range(0..data.n())).collect();
            let boot = subset(data, &idx);
            let efit = fit_exposure_model(&boot).ok()?;
            let mfit = fit_mediator_model(&boot, family, &opts).ok()?;
            pipeline_effects(&boot, &mfit, &efit).ok()
        })
        .collect();

    let ok: Vec<&(f64, Vec<f64>)> = estimates.iter().flatten().collect();
    let dropped = reps - ok.len();
    summarize_npb(nde0, &nie0, &ok, dropped, reps, alpha)
}

fn summarize_npb(
    nde0: f64,
    nie0: &[f64],
    ok: &[&(f64, Vec<f64>)],
    dropped: usize,
    reps: usize,
    alpha: f64,
) -> Result<ComparatorIntervals, ComparatorError> {
    if dropped * 10 > reps {
        return Err(ComparatorError::TooManyFailures { dropped, reps });
    }
    let p = nie0.len();
    let interval = |point: f64, vals: &mut Vec<f64>| {
        let (lo, hi) = percentile_interval(vals, alpha);
        IntervalSummary {
            estimate: point,
            lower: lo,
            upper: hi,
            width: hi - lo,
            alpha,
            method: IntervalMethod::NPB,
            gen_p_value: None,
        }
    };
    let mut nde_vals: Vec<f64> = ok.iter().map(|e| e.0).collect();
    let nde = interval(nde0, &mut nde_vals);
    let nie = (0..p)
        .map(|j| {
            let mut vals: Vec<f64> = ok.iter().map(|e| e.1[j]).collect();
            interval(nie0[j], &mut vals)
        })
        .collect();
    Ok(ComparatorIntervals { nde, nie, dropped })
}

/// Exact order-statistic percentile interval at (alpha/2, 1 - alpha/2).
pub fn percentile_interval(vals: &mut [f64], alpha: f64) -> (f64, f64) {
    assert!(!vals.is_empty());
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let b = vals.len() as f64;
    let pick = |q: f64| {
        let k = (q * b).ceil() as usize;
        vals[k.clamp(1, vals.len()) - 1]
    };
    (pick(alpha / 2.0), pick(1.0 - alpha / 2.0))
}

fn subset(data: &Dataset, idx: &[usize]) -> Dataset {
    let p = data.p();
    Dataset {
        subject_id: idx.iter().map(|&i| data.subject_id[i].clone()).collect(),
        exposure: idx.iter().map(|&i| data.exposure[i]).collect(),
        c1: DMatrix::from_fn(idx.len(), data.c1.ncols(), |r, c| data.c1[(idx[r], c)]),
        c2: DMatrix::from_fn(idx.len(), data.c2.ncols(), |r, c| data.c2[(idx[r], c)]),
        c3: DMatrix::from_fn(idx.len(), data.c3.ncols(), |r, c| data.c3[(idx[r], c)]),
        mediators: DMatrix::from_fn(idx.len(), p, |r, c| data.mediators[(idx[r], c)]),
        offset: idx.iter().map(|&i| data.offset[i]).collect(),
        outcome: idx.iter().map(|&i| data.outcome[i]).collect(),
    }
}

/// Standard normal quantile (Acklam's rational approximation, |error| < 1e-9).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0);
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    #[test]
    fn percentile_interval_is_order_statistics() {
        let mut vals: Vec<f64> = (1..=1000).map(|v| v as f64).collect();
        let (lo, hi) = percentile_interval(&mut vals, 0.05);
        assert_eq!((lo, hi), (25.0, 975.0));
        let mut constant = vec![3.7; 500];
        assert_eq!(percentile_interval(&mut constant, 0.05), (3.7, 3.7));
    }

    #[test]
    fn identity_resamples_collapse_the_interval() {
        // all resample estimates equal to the point estimate
        let est = (1.2, vec![0.3, -0.1]);
        let ok: Vec<&(f64, Vec<f64>)> = std::iter::repeat(&est).take(300).collect();
        let out = summarize_npb(1.2, &[0.3, -0.1], &ok, 0, 300, 0.05).unwrap();
        assert_eq!(out.nde.lower, out.nde.upper);
        assert_eq!(out.nde.lower, 1.2);
        assert_eq!(out.nie[1].lower, -0.1);
    }

    #[test]
    fn failure_threshold_enforced() {
        let est = (0.0, vec![0.0]);
        let ok: Vec<&(f64, Vec<f64>)> = std::iter::repeat(&est).take(170).collect();
        assert!(matches!(
            summarize_npb(0.0, &[0.0], &ok, 30, 200, 0.05),
            Err(ComparatorError::TooManyFailures { dropped: 30, reps: 200 })
        ));
        // 10% exactly is still acceptable
        let ok2: Vec<&(f64, Vec<f64>)> = std::iter::repeat(&est).take(180).collect();
        assert!(summarize_npb(0.0, &[0.0], &ok2, 20, 200, 0.05).is_ok());
    }

    #[test]
    fn npb_rejects_small_rep_counts() {
        let data = crate::estimation::mediator::tests::simulate(
            40,
            &test_theta(),
            CountFamily::Poisson,
            (0.25, -0.5),
            3,
        );
        let efit = fit_exposure_model(&data).unwrap();
        let mfit = fit_mediator_model(&data, CountFamily::Poisson, &FitOptions::default()).unwrap();
        assert!(matches!(
            npb_ci(&data, CountFamily::Poisson, &efit, &mfit, 0.05, 100, 1),
            Err(ComparatorError::TooFewReps { got: 100, min: 200 })
        ));
    }

    fn test_theta() -> crate::data::ThetaVector {
        crate::data::ThetaVector {
            beta_z0: vec![0.0],
            beta_l0: vec![0.0],
            beta_0: vec![1.2],
            beta_1: vec![0.4],
            beta_2: DMatrix::from_element(1, 1, 0.3),
            sigma_delta: 0.3,
        }
    }

    #[test]
    fn delta_interval_is_symmetric_around_estimate() {
        let data = crate::estimation::mediator::tests::simulate(
            150,
            &test_theta(),
            CountFamily::Poisson,
            (0.25, -0.5),
            7,
        );
        let mut rng = crate::rng::stream(7, 99);
        let mut data = data;
        use rand::Rng;
        for y in &mut data.outcome {
            *y = rng.random::<f64>() * 3.0;
        }
        let efit = fit_exposure_model(&data).unwrap();
        let mfit = fit_mediator_model(&data, CountFamily::Poisson, &FitOptions::default()).unwrap();
        let ci = delta_ci(&data, &mfit, &efit, 0.05).unwrap();
        assert_abs_diff_eq!(
            ci.nde.estimate,
            (ci.nde.lower + ci.nde.upper) / 2.0,
            epsilon = 1e-10
        );
        assert_abs_diff_eq!(
            ci.nie[0].estimate,
            (ci.nie[0].lower + ci.nie[0].upper) / 2.0,
            epsilon = 1e-10
        );
        assert!(ci.nde.width > 0.0 && ci.nie[0].width > 0.0);
    }

    #[test]
    fn comparators_are_deterministic() {
        let mut data = crate::estimation::mediator::tests::simulate(
            60,
            &test_theta(),
            CountFamily::Poisson,
            (0.25, -0.5),
            11,
        );
        use rand::Rng;
        let mut rng = crate::rng::stream(11, 99);
        for (i, y) in data.outcome.iter_mut().enumerate() {
            *y = 0.5 + 2.0 * data.exposure[i] + rng.random::<f64>();
        }
        let efit = fit_exposure_model(&data).unwrap();
        let mfit = fit_mediator_model(&data, CountFamily::Poisson, &FitOptions::default()).unwrap();
        let a = npb_ci(&data, CountFamily::Poisson, &efit, &mfit, 0.05, 200, 42).unwrap();
        let b = npb_ci(&data, CountFamily::Poisson, &efit, &mfit, 0.05, 200, 42).unwrap();
        assert_eq!(a.nde.lower, b.nde.lower);
        assert_eq!(a.nde.upper, b.nde.upper);
        assert_eq!(a.dropped, b.dropped);
        let d1 = delta_ci(&data, &mfit, &efit, 0.05).unwrap();
        let d2 = delta_ci(&data, &mfit, &efit, 0.05).unwrap();
        assert_eq!(d1.nie[0].lower, d2.nie[0].lower);
    }
}
