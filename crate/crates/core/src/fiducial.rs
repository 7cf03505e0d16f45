//! Generalized fiducial confidence intervals for the mediation effects.
//!
//! The parameter uncertainty of the mediator model is represented by Wishart
//! draws: with S* the inverse observed information, t = chol(N S*) and U a
//! Bartlett factor (UU' ~ W_P(N, I)), the quantity
//! `theta_tilde = theta_hat - t U^{-1} Z` with `Z ~ N(0, I)`
//! is free of unknown parameters given the data and reduces to the parameter
//! when the random draws equal their observed counterparts. N (the
//! "equivalence number") is calibrated so that S* matches a parametric
//! bootstrap covariance in eigenvalue norm. Each fiducial parameter draw is
//! propagated through the mediation weights and the outcome WLS, a second
//! draw of the same construction accounts for outcome-stage noise, and the
//! resulting sample of effects is summarized by highest-density intervals,
//! a kernel-density mode, and generalized p-values.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::data::{pack_theta, unpack_theta, Dataset, ExposureFit, ThetaVector};
use crate::effects::{
    compute_weights, compute_weights_marginal, expand_counterfactuals, fit_outcome_wls,
    EffectsError, WeightTable,
};
use crate::estimation::{fit_mediator_model, FitError, FitOptions, MediatorFit};
use crate::family::CountFamily;
use crate::quad::GaussHermite;
use crate::rng::stream;

#[derive(Debug, Error)]
pub enum FiducialError {
    #[error("Wishart degrees of freedom too small: N = {n} must exceed P + 2 = {}", p + 2)]
    DegreesOfFreedomTooSmall { n: usize, p: usize },
    #[error("Cholesky factorization of the scaled covariance failed even after regularization")]
    CholeskyFailure,
    #[error("only {effective} of {requested} fiducial draws survived (minimum 90%)")]
    TooFewDraws { requested: usize, effective: usize },
    #[error("K = {0} is below the minimum of 500 draws for interval construction")]
    KTooSmall(usize),
    #[error("parametric bootstrap needs at least {min} replicates, got {got}")]
    InsufficientReplicates { got: usize, min: usize },
    #[error("all bootstrap replicates failed to refit")]
    AllReplicatesFailed,
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Effects(#[from] EffectsError),
}

/// Lower-triangular Bartlett factor: diagonals chi(N - i) for 0-based row i,
/// off-diagonals standard normal, so that UU' ~ Wishart_P(N, I).
pub fn sample_wishart_factor<R: Rng + ?Sized>(
    p: usize,
    n: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>, FiducialError> {
    if n <= p + 2 {
        return Err(FiducialError::DegreesOfFreedomTooSmall { n, p });
    }
    let mut u = DMatrix::zeros(p, p);
    for i in 0..p {
        let chi2 = ChiSquared::new((n - i) as f64).expect("positive df");
        u[(i, i)] = chi2.sample(rng).sqrt();
        for j in 0..i {
            u[(i, j)] = StandardNormal.sample(rng);
        }
    }
    Ok(u)
}

/// chol(N * cov), with one +1e-10 I retry on failure.
fn scaled_cholesky(cov: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>, FiducialError> {
    let scaled = cov * n as f64;
    if let Some(ch) = scaled.clone().cholesky() {
        return Ok(ch.l());
    }
    let dim = cov.nrows();
    let reg = &scaled + DMatrix::<f64>::identity(dim, dim) * (1e-10 * n as f64);
    reg.cholesky().map(|ch| ch.l()).ok_or(FiducialError::CholeskyFailure)
}

/// Fiducial draw around `center` with covariance `cov`, using a pre-drawn
/// Bartlett factor and normal vector: center - chol(N cov) U^{-1} Z. Since
/// U ~ sqrt(N) I in probability, B = chol(N cov) U^{-1} has BB' -> cov and
/// the draws reproduce the estimator's covariance, degenerating to the
/// Gaussian draw center - chol(cov) Z as N grows.
fn eq8_draw(
    center: &[f64],
    cov: &DMatrix<f64>,
    n: usize,
    u: &DMatrix<f64>,
    z: &DVector<f64>,
) -> Result<Vec<f64>, FiducialError> {
    let t = scaled_cholesky(cov, n)?;
    let x = u
        .solve_lower_triangular(z)
        .ok_or(FiducialError::CholeskyFailure)?;
    let shift = t * x;
    Ok(center.iter().zip(shift.iter()).map(|(c, s)| c - s).collect())
}

/// One fiducial draw of the mediator-model parameters. Only the free
/// parameters move; a negative sigma_delta draw is mapped to its absolute
/// value (the fiducial quantity for the variance is the square).
pub fn fiducial_theta_draw<R: Rng + ?Sized>(
    fit: &MediatorFit,
    n_equiv: usize,
    rng: &mut R,
) -> Result<ThetaVector, FiducialError> {
    let nf = fit.n_free();
    let u = sample_wishart_factor(nf, n_equiv, rng)?;
    let z = DVector::from_iterator(nf, (0..nf).map(|_| StandardNormal.sample(rng)));
    let free = eq8_draw(&fit.free_values(), &fit.cov_star, n_equiv, &u, &z)?;
    let mut packed = pack_theta(&fit.theta_hat);
    for (&idx, &v) in fit.free_idx.iter().zip(&free) {
        packed[idx] = v;
    }
    let last = packed.len() - 1;
    packed[last] = packed[last].abs();
    let p = fit.theta_hat.p();
    let r2 = fit.theta_hat.beta_2.ncols();
    Ok(unpack_theta(&packed, p, r2).expect("packed layout is consistent"))
}

/// Derived fiducial quantities: zero-inflation and dispersion per taxon.
pub fn fiducial_derived_params(theta: &ThetaVector) -> (Vec<f64>, Vec<f64>) {
    let pi = theta.beta_z0.iter().map(|&b| crate::family::expit(b)).collect();
    let phi = theta.beta_l0.iter().map(|&b| b.exp()).collect();
    (pi, phi)
}

/// Parametric bootstrap covariance S_N of the free parameter estimates:
/// n_reps + 1 datasets are simulated from the fitted model (same covariates
/// and offsets, fresh random effects and counts), refitted, and the sample
/// covariance taken with divisor equal to the effective replicate count minus
/// one. Failed refits are dropped and disclosed through `effective_reps`.
pub struct BootstrapCovariance {
    pub s_n: DMatrix<f64>,
    pub effective_reps: usize,
    pub requested_reps: usize,
}

pub fn bootstrap_covariance(
    data: &Dataset,
    fit: &MediatorFit,
    n_reps: usize,
    seed: u64,
) -> Result<BootstrapCovariance, FiducialError> {
    if n_reps < 50 {
        return Err(FiducialError::InsufficientReplicates { got: n_reps, min: 50 });
    }
    let opts = FitOptions { start: Some(fit.theta_hat.clone()), ..FitOptions::default() };
    let estimates: Vec<Vec<f64>> = (0..=n_reps)
        .into_par_iter()
        .filter_map(|l| {
            let mut rng = stream(seed, l as u64);
            let boot = resample_mediators(data, &fit.theta_hat, fit.family, &mut rng);
            fit_mediator_model(&boot, fit.family, &opts).ok().map(|f| f.free_values())
        })
        .collect();
    if estimates.len() < 2 {
        return Err(FiducialError::AllReplicatesFailed);
    }
    let nf = fit.n_free();
    let m = estimates.len();
    let mut mean = vec![0.0; nf];
    for est in &estimates {
        for k in 0..nf {
            mean[k] += est[k] / m as f64;
        }
    }
    let mut s_n = DMatrix::zeros(nf, nf);
    for est in &estimates {
        let d = DVector::from_iterator(nf, (0..nf).map(|k| est[k] - mean[k]));
        s_n.syger(1.0 / (m - 1) as f64, &d, &d, 1.0);
    }
    s_n.fill_upper_triangle_with_lower_triangle();
    Ok(BootstrapCovariance { s_n, effective_reps: m - 1, requested_reps: n_reps })
}

/// New dataset with mediator counts re-simulated from the fitted model.
fn resample_mediators<R: Rng + ?Sized>(
    data: &Dataset,
    theta: &ThetaVector,
    family: CountFamily,
    rng: &mut R,
) -> Dataset {
    let n = data.n();
    let p = data.p();
    let r2 = data.c2.ncols();
    let dists: Vec<crate::family::TaxonDist> = (0..p)
        .map(|j| crate::family::TaxonDist::new(family, theta.beta_z0[j], theta.beta_l0[j]))
        .collect();
    let mut out = data.clone();
    for i in 0..n {
        let delta: f64 = if theta.sigma_delta > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            z * theta.sigma_delta
        } else {
            0.0
        };
        let c2_row: Vec<f64> = (0..r2).map(|k| data.c2[(i, k)]).collect();
        for j in 0..p {
            let eta = theta.eta(j, data.exposure[i], &c2_row, data.offset[i]) + delta;
            out.mediators[(i, j)] = dists[j].sample(eta, rng);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenNorm {
    L1,
    L2,
}

/// Norm of the difference between descending-sorted eigenvalues.
pub fn eigen_distance(a: &DMatrix<f64>, b: &DMatrix<f64>, norm: EigenNorm) -> f64 {
    let mut ea: Vec<f64> = a.clone().symmetric_eigen().eigenvalues.iter().cloned().collect();
    let mut eb: Vec<f64> = b.clone().symmetric_eigen().eigenvalues.iter().cloned().collect();
    ea.sort_by(|x, y| y.partial_cmp(x).unwrap());
    eb.sort_by(|x, y| y.partial_cmp(x).unwrap());
    match norm {
        EigenNorm::L1 => ea.iter().zip(&eb).map(|(x, y)| (x - y).abs()).sum(),
        EigenNorm::L2 => ea
            .iter()
            .zip(&eb)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
    }
}

#[derive(Debug, Clone)]
pub struct EquivalenceCalibration {
    pub n_equiv: usize,
    pub distance: f64,
    pub bootstrap_reps: usize,
    pub search_trace: Vec<(usize, f64)>,
    pub warnings: Vec<String>,
}

pub const DEFAULT_EQUIV_GRID: [usize; 6] = [100, 200, 400, 600, 800, 1000];
pub const DEFAULT_EQUIV_TOL: f64 = 0.002;

/// Calibrates the Wishart degrees of freedom: the smallest grid N whose
/// bootstrap covariance S_N matches S* within `tol` in eigenvalue norm, or
/// the argmin with a warning when none qualifies.
pub fn equivalence_number(
    data: &Dataset,
    fit: &MediatorFit,
    grid: &[usize],
    tol: f64,
    norm: EigenNorm,
    seed: u64,
) -> Result<EquivalenceCalibration, FiducialError> {
    let mut trace = Vec::with_capacity(grid.len());
    let mut warnings = Vec::new();
    for (gi, &cand) in grid.iter().enumerate() {
        let boot = bootstrap_covariance(data, fit, cand, crate::rng::derive_seed(seed, gi as u64))?;
        if boot.effective_reps < boot.requested_reps {
            warnings.push(format!(
                "N = {cand}: {} of {} bootstrap refits converged",
                boot.effective_reps + 1,
                boot.requested_reps + 1
            ));
        }
        let d = eigen_distance(&fit.cov_star, &boot.s_n, norm);
        trace.push((cand, d));
        if d <= tol {
            return Ok(EquivalenceCalibration {
                n_equiv: cand,
                distance: d,
                bootstrap_reps: cand + 1,
                search_trace: trace,
                warnings,
            });
        }
    }
    let &(n_best, d_best) = trace
        .iter()
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .expect("grid is nonempty");
    warnings.push(format!(
        "no grid candidate met tolerance {tol}; using argmin N = {n_best} (distance {d_best:.3e})"
    ));
    Ok(EquivalenceCalibration {
        n_equiv: n_best,
        distance: d_best,
        bootstrap_reps: n_best + 1,
        search_trace: trace,
        warnings,
    })
}

/// Fiducial samples of the mediation effects.
#[derive(Debug, Clone, PartialEq)]
pub struct FiducialDraws {
    /// Effective number of surviving draws.
    pub k: usize,
    pub nde_draws: Vec<f64>,
    /// K x p, row per draw.
    pub nie_draws: DMatrix<f64>,
    pub sigma_delta_draws: Vec<f64>,
    /// True when the draws condition on the empirical Bayes random effects;
    /// false after marginalizing over N(0, sigma_tilde^2).
    pub conditional: bool,
    pub dropped: usize,
}

#[derive(Debug, Clone)]
pub struct FiducialOptions {
    pub k: usize,
    pub n_equiv: usize,
    pub seed: u64,
    /// Condition on the empirical Bayes delta (true) or marginalize over the
    /// fitted random-effect law by 9-node Gauss-Hermite (false, the default).
    pub conditional: bool,
}

const MIN_K: usize = 500;
const DELTA_MARGINAL_NODES: usize = 9;

/// Algorithm-1 core: K independent fiducial iterations, each drawing mediator
/// parameters, recomputing weights, solving the outcome WLS, and drawing an
/// outcome-stage fiducial replicate from the WLS covariance. Failed draws are
/// dropped; an error is raised if fewer than 90% survive.
pub fn fiducial_nie_samples(
    data: &Dataset,
    med_fit: &MediatorFit,
    exp_fit: &ExposureFit,
    opts: &FiducialOptions,
) -> Result<FiducialDraws, FiducialError> {
    if opts.k < MIN_K {
        return Err(FiducialError::KTooSmall(opts.k));
    }
    let exp = expand_counterfactuals(data)?;
    let p = data.p();
    let gh = GaussHermite::new(DELTA_MARGINAL_NODES);

    let draws: Vec<Option<(f64, Vec<f64>, f64)>> = (0..opts.k)
        .into_par_iter()
        .map(|kdx| {
            let mut rng = stream(opts.seed, kdx as u64);
            let theta_k = fiducial_theta_draw(med_fit, opts.n_equiv, &mut rng).ok()?;
            let sigma_k = theta_k.sigma_delta;

            // outcome-stage randomness
            let q = p + 2;
            let u2 = sample_wishart_factor(q, opts.n_equiv, &mut rng).ok()?;
            let z2 =
                DVector::from_iterator(q, (0..q).map(|_| StandardNormal.sample(&mut rng)));

            let w: WeightTable = if opts.conditional {
                compute_weights(
                    &exp,
                    &theta_k,
                    med_fit.family,
                    exp_fit,
                    &med_fit.delta_hat,
                    data,
                )
                .ok()?
            } else {
                compute_weights_marginal(
                    &exp, &theta_k, med_fit.family, exp_fit, sigma_k, &gh, data,
                )
                .ok()?
            };
            let est = fit_outcome_wls(&exp, &w, data).ok()?;
            let theta_rep = eq8_draw(&est.theta, &est.cov, opts.n_equiv, &u2, &z2).ok()?;
            let (nde, nie) = crate::effects::effects_from_theta(&theta_rep, 1.0, 0.0);
            if !nde.is_finite() || nie.iter().any(|v| !v.is_finite()) {
                return None;
            }
            Some((nde, nie, sigma_k))
        })
        .collect();

    let survivors: Vec<&(f64, Vec<f64>, f64)> = draws.iter().flatten().collect();
    let effective = survivors.len();
    if effective * 10 < opts.k * 9 {
        return Err(FiducialError::TooFewDraws { requested: opts.k, effective });
    }
    let mut nde_draws = Vec::with_capacity(effective);
    let mut nie_draws = DMatrix::zeros(effective, p);
    let mut sigma_delta_draws = Vec::with_capacity(effective);
    for (row, (nde, nie, sig)) in survivors.iter().enumerate() {
        nde_draws.push(*nde);
        for j in 0..p {
            nie_draws[(row, j)] = nie[j];
        }
        sigma_delta_draws.push(*sig);
    }
    Ok(FiducialDraws {
        k: effective,
        nde_draws,
        nie_draws,
        sigma_delta_draws,
        conditional: opts.conditional,
        dropped: opts.k - effective,
    })
}

/// Highest-density interval: the minimal-width window of ceil((1-alpha)K)
/// consecutive sorted samples, ties broken toward the smallest lower endpoint.
pub fn hdi(samples: &[f64], alpha: f64) -> (f64, f64) {
    assert!(!samples.is_empty() && alpha > 0.0 && alpha < 1.0);
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = s.len();
    let m = ((1.0 - alpha) * k as f64).ceil() as usize;
    let m = m.clamp(1, k);
    let mut best = (s[0], s[m - 1]);
    let mut best_width = best.1 - best.0;
    for i in 1..=(k - m) {
        let width = s[i + m - 1] - s[i];
        if width < best_width {
            best_width = width;
            best = (s[i], s[i + m - 1]);
        }
    }
    best
}

/// Mode of the Gaussian kernel density estimate (Silverman bandwidth,
/// 512-point grid over the sample range; grid argmax, smaller value on ties).
pub fn fiducial_mode(samples: &[f64]) -> f64 {
    assert!(!samples.is_empty());
    let k = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / k;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / k).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| sorted[((p * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1)];
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let bw = 0.9 * spread * k.powf(-0.2);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if bw <= 0.0 || hi == lo {
        return lo;
    }
    let grid = 512;
    let mut best_x = lo;
    let mut best_d = f64::NEG_INFINITY;
    for g in 0..grid {
        let x = lo + (hi - lo) * g as f64 / (grid - 1) as f64;
        let d: f64 = samples
            .iter()
            .map(|&s| {
                let u = (x - s) / bw;
                (-0.5 * u * u).exp()
            })
            .sum();
        if d > best_d {
            best_d = d;
            best_x = x;
        }
    }
    best_x
}

/// Two-sided generalized p-value of kappa under the empirical distribution,
/// clamped to [2/K, 1].
pub fn generalized_p_value(samples: &[f64], kappa: f64) -> f64 {
    assert!(!samples.is_empty());
    let k = samples.len() as f64;
    let below = samples.iter().filter(|&&s| s <= kappa).count() as f64;
    let cdf = below / k;
    (2.0 * cdf.min(1.0 - cdf)).clamp(2.0 / k, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum IntervalMethod {
    FiducialHDI,
    Delta,
    NPB,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct IntervalSummary {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub width: f64,
    pub alpha: f64,
    pub method: IntervalMethod,
    pub gen_p_value: Option<f64>,
}

/// HDI summary of one effect's fiducial sample; the point estimate is the
/// KDE mode and the generalized p-value tests kappa = 0.
pub fn summarize_fiducial(samples: &[f64], alpha: f64) -> IntervalSummary {
    let (lower, upper) = hdi(samples, alpha);
    let estimate = fiducial_mode(samples).clamp(lower, upper);
    IntervalSummary {
        estimate,
        lower,
        upper,
        width: upper - lower,
        alpha,
        method: IntervalMethod::FiducialHDI,
        gen_p_value: Some(generalized_p_value(samples, 0.0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn wishart_factor_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (p, n, reps) = (6, 600, 10_000);
        let mut mean_uut = DMatrix::<f64>::zeros(p, p);
        let mut mean_offdiag = 0.0;
        for _ in 0..reps {
            let u = sample_wishart_factor(p, n, &mut rng).unwrap();
            mean_uut += &u * u.transpose() / (n as f64 * reps as f64);
            mean_offdiag += u[(3, 1)] / reps as f64;
        }
        let dev = (&mean_uut - DMatrix::identity(p, p)).abs().max();
        assert!(dev < 0.1, "sup-norm deviation {dev}");
        assert!(mean_offdiag.abs() < 0.05, "offdiag mean {mean_offdiag}");
    }

    #[test]
    fn wishart_scalar_case_matches_chi_square_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 400;
        let reps = 20_000;
        let vals: Vec<f64> = (0..reps)
            .map(|_| {
                let u = sample_wishart_factor(1, n, &mut rng).unwrap();
                u[(0, 0)].powi(2) / n as f64
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / reps as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / reps as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!((var - 2.0 / n as f64).abs() < 0.5 / n as f64, "var {var}");
    }

    #[test]
    fn wishart_df_guard() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            sample_wishart_factor(6, 8, &mut rng),
            Err(FiducialError::DegreesOfFreedomTooSmall { .. })
        ));
    }

    #[test]
    fn zero_normal_draw_returns_center() {
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = sample_wishart_factor(2, 100, &mut rng).unwrap();
        let z = DVector::zeros(2);
        let center = [1.5, -0.3];
        let draw = eq8_draw(&center, &cov, 100, &u, &z).unwrap();
        assert_eq!(draw, center.to_vec());
    }

    #[test]
    fn draw_covariance_approximates_s_star() {
        // synthetic 3x3 covariance with correlation
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.0, 0.3, 2.0, -0.4, 0.0, -0.4, 0.5]);
        let n = 600;
        let reps = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut draws = Vec::with_capacity(reps);
        let center = [0.0, 0.0, 0.0];
        for _ in 0..reps {
            let u = sample_wishart_factor(3, n, &mut rng).unwrap();
            let z = DVector::from_iterator(3, (0..3).map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v
            }));
            draws.push(eq8_draw(&center, &a, n, &u, &z).unwrap());
        }
        let mut cov = DMatrix::zeros(3, 3);
        for d in &draws {
            let v = DVector::from_vec(d.clone());
            cov.syger(1.0 / reps as f64, &v, &v, 1.0);
        }
        cov.fill_upper_triangle_with_lower_triangle();
        let rel = eigen_distance(&cov, &a, EigenNorm::L2)
            / a.clone().symmetric_eigen().eigenvalues.amax();
        assert!(rel < 0.2, "relative eigenvalue distance {rel}");
    }

    #[test]
    fn large_n_limit_is_gaussian() {
        // KS statistic of standardized draws against the standard normal CDF
        let var = 0.7;
        let cov = DMatrix::from_element(1, 1, var);
        let n = 10_000;
        let reps = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut vals: Vec<f64> = (0..reps)
            .map(|_| {
                let u = sample_wishart_factor(1, n, &mut rng).unwrap();
                let z = DVector::from_iterator(1, std::iter::once({
                    let v: f64 = StandardNormal.sample(&mut rng);
                    v
                }));
                eq8_draw(&[0.0], &cov, n, &u, &z).unwrap()[0] / var.sqrt()
            })
            .collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        use statrs::distribution::{ContinuousCDF, Normal};
        let norm = Normal::new(0.0, 1.0).unwrap();
        let ks = vals
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = norm.cdf(v);
                let lo = i as f64 / reps as f64;
                let hi = (i + 1) as f64 / reps as f64;
                (f - lo).abs().max((hi - f).abs())
            })
            .fold(0.0f64, f64::max);
        assert!(ks < 0.05, "KS statistic {ks}");
    }

    #[test]
    fn derived_params_links() {
        let theta = ThetaVector {
            beta_z0: vec![0.0, -40.0],
            beta_l0: vec![0.0, 1.0],
            beta_0: vec![0.0; 2],
            beta_1: vec![0.0; 2],
            beta_2: DMatrix::zeros(2, 1),
            sigma_delta: 0.1,
        };
        let (pi, phi) = fiducial_derived_params(&theta);
        assert_abs_diff_eq!(pi[0], 0.5, epsilon = 1e-12);
        assert!(pi[1] < 1e-15);
        assert_abs_diff_eq!(phi[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(phi[1], 1.0f64.exp(), epsilon = 1e-12);
    }

    #[test]
    fn hdi_uniform_tie_break_is_leftmost() {
        let samples: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        assert_eq!(hdi(&samples, 0.05), (1.0, 95.0));
    }

    #[test]
    fn hdi_normal_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let samples: Vec<f64> = (0..10_000)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v
            })
            .collect();
        let (lo, hi) = hdi(&samples, 0.05);
        assert!((lo + 1.96).abs() < 0.08, "lower {lo}");
        assert!((hi - 1.96).abs() < 0.08, "upper {hi}");
    }

    #[test]
    fn hdi_beats_equal_tailed_on_skewed_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut samples: Vec<f64> = (0..5_000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z.exp()
            })
            .collect();
        let (lo, hi) = hdi(&samples, 0.05);
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = |p: f64| samples[((p * (samples.len() - 1) as f64) as usize).min(samples.len() - 1)];
        let et_width = q(0.975) - q(0.025);
        assert!(hi - lo < et_width, "hdi {} vs equal-tailed {et_width}", hi - lo);
    }

    #[test]
    fn hdi_contains_exact_sample_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let samples: Vec<f64> = (0..777)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                2.0 * v + 1.0
            })
            .collect();
        let alpha = 0.1;
        let (lo, hi) = hdi(&samples, alpha);
        let inside = samples.iter().filter(|&&s| s >= lo && s <= hi).count();
        let m = ((1.0 - alpha) * samples.len() as f64).ceil() as usize;
        assert_eq!(inside, m);
    }

    #[test]
    fn mode_examples() {
        assert_eq!(fiducial_mode(&vec![3.25; 600]), 3.25);

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let normal: Vec<f64> = (0..10_000)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v
            })
            .collect();
        assert!(fiducial_mode(&normal).abs() < 0.1);

        let bimodal: Vec<f64> = (0..10_000)
            .map(|i| {
                let z: f64 = StandardNormal.sample(&mut rng);
                if i % 10 < 7 { 0.1 * z } else { 3.0 + 0.1 * z }
            })
            .collect();
        assert!(fiducial_mode(&bimodal).abs() < 0.3);
    }

    #[test]
    fn generalized_p_examples() {
        let samples: Vec<f64> = (1..=1000).map(|v| v as f64).collect();
        // kappa at the median
        assert_abs_diff_eq!(generalized_p_value(&samples, 500.0), 1.0, epsilon = 1e-12);
        // kappa below all samples clamps at 2/K
        assert_abs_diff_eq!(generalized_p_value(&samples, -5.0), 2.0 / 1000.0, epsilon = 1e-12);
    }

    #[test]
    fn bootstrap_rejects_tiny_rep_counts() {
        // construct a minimal fit via the mediator test machinery is heavy;
        // the guard fires before any data access, so dummies suffice
        let data = Dataset {
            subject_id: vec!["a".into()],
            exposure: vec![1.0],
            c1: DMatrix::zeros(1, 1),
            c2: DMatrix::zeros(1, 1),
            c3: DMatrix::zeros(1, 0),
            mediators: DMatrix::zeros(1, 1),
            offset: vec![1.0],
            outcome: vec![0.0],
        };
        let fit = MediatorFit {
            theta_hat: ThetaVector::zeros(1, 1),
            family: CountFamily::Poisson,
            cov_star: DMatrix::identity(3, 3),
            free_idx: vec![2, 3, 4],
            delta_hat: vec![0.0],
            log_lik: 0.0,
            aic: 0.0,
            converged: true,
            iterations: 1,
            warnings: vec![],
        };
        assert!(matches!(
            bootstrap_covariance(&data, &fit, 0, 1),
            Err(FiducialError::InsufficientReplicates { got: 0, min: 50 })
        ));
    }

    #[test]
    fn identical_matrices_have_zero_distance() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert_abs_diff_eq!(eigen_distance(&a, &a.clone(), EigenNorm::L2), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eigen_distance(&a, &a.clone(), EigenNorm::L1), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn summary_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let samples: Vec<f64> = (0..2000)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                0.4 * v + 0.2
            })
            .collect();
        let s = summarize_fiducial(&samples, 0.05);
        assert!(s.lower <= s.estimate && s.estimate <= s.upper);
        assert_abs_diff_eq!(s.width, s.upper - s.lower, epsilon = 1e-12);
        assert!(s.gen_p_value.unwrap() > 0.0 && s.gen_p_value.unwrap() <= 1.0);
    }
}
