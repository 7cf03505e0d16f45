//! Natural direct and indirect effects via a counterfactual-expanded dataset.
//!
//! Each subject's record is replicated 2^p times, once per pseudo-exposure
//! arrangement over the p mediators. Mediation weights compare the mediator
//! mass under the arrangement's exposure against the observed exposure
//! (stabilized by the marginal exposure probability), and a weighted least
//! squares fit of the marginal outcome model reads off NDE and per-mediator
//! NIE as coefficients.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::data::{Dataset, ExposureFit, ThetaVector};
use crate::family::{CountFamily, TaxonDist};
use crate::quad::GaussHermite;

/// Largest mediator panel the 2^p expansion accepts.
pub const P_MAX: usize = 15;

#[derive(Debug, Error)]
pub enum EffectsError {
    #[error("too many mediators for the counterfactual expansion: p = {p} > {max}")]
    TooManyMediators { p: usize, max: usize },
    #[error("mediator mass underflowed to zero for subject {subject}, taxon {taxon}")]
    ZeroDensity { subject: usize, taxon: usize },
    #[error("rank-deficient weighted design in the outcome model")]
    RankDeficient,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Counterfactual-expanded dataset, stored implicitly: rows are ordered
/// subject-major, arrangements in binary-counting order with mediator 1 as
/// the least significant bit.
#[derive(Debug, Clone)]
pub struct ExpandedData {
    pub n: usize,
    pub p: usize,
}

impl ExpandedData {
    pub fn n_rows(&self) -> usize {
        self.n << self.p
    }

    pub fn n_arrangements(&self) -> usize {
        1usize << self.p
    }

    /// (subject, arrangement) of a row index.
    pub fn split(&self, row: usize) -> (usize, usize) {
        (row >> self.p, row & (self.n_arrangements() - 1))
    }

    /// Pseudo-exposure of mediator `j` under arrangement `l`.
    pub fn bit(l: usize, j: usize) -> f64 {
        ((l >> j) & 1) as f64
    }
}

pub fn expand_counterfactuals(data: &Dataset) -> Result<ExpandedData, EffectsError> {
    let p = data.p();
    if p > P_MAX {
        return Err(EffectsError::TooManyMediators { p, max: P_MAX });
    }
    Ok(ExpandedData { n: data.n(), p })
}

/// Mediation weights aligned to `ExpandedData` rows, with the per-subject
/// factor decomposition retained for diagnostics.
#[derive(Debug, Clone)]
pub struct WeightTable {
    pub weight: Vec<f64>,
    /// Stabilized exposure factor P(A = A_i0) / P(A = A_i0 | C_1i), one per subject.
    pub exposure_factor: Vec<f64>,
    /// log mediator-mass ratio for flipping taxon j's exposure away from the
    /// observed one: ln Pr(M_ij | A = 1 - A_i0) - ln Pr(M_ij | A = A_i0).
    pub log_ratio_flip: DMatrix<f64>,
    pub p: usize,
}

impl WeightTable {
    /// Ratio factor of mediator `j` in the row for (subject, arrangement).
    pub fn ratio_factor(&self, subject: usize, l: usize, j: usize, observed_a: f64) -> f64 {
        if ExpandedData::bit(l, j) == observed_a {
            1.0
        } else {
            self.log_ratio_flip[(subject, j)].exp()
        }
    }
}

/// Eq.-(5) weights: stabilized inverse-probability exposure factor times the
/// product over mediators of counterfactual-vs-observed mediator mass ratios,
/// evaluated at the observed counts with the empirical Bayes delta plugged in.
/// All probability work happens in log space; factors whose pseudo-exposure
/// matches the observed one cancel exactly and contribute nothing.
pub fn compute_weights(
    exp: &ExpandedData,
    theta: &ThetaVector,
    family: CountFamily,
    exposure: &ExposureFit,
    delta_hat: &[f64],
    data: &Dataset,
) -> Result<WeightTable, EffectsError> {
    let n = exp.n;
    let p = exp.p;
    if delta_hat.len() != n || data.n() != n || data.p() != p {
        return Err(EffectsError::DimensionMismatch(format!(
            "n = {n}, p = {p}, delta_hat = {}, data = {}x{}",
            delta_hat.len(),
            data.n(),
            data.p()
        )));
    }
    let r2 = data.c2.ncols();
    let dists: Vec<TaxonDist> = (0..p)
        .map(|j| TaxonDist::new(family, theta.beta_z0[j], theta.beta_l0[j]))
        .collect();

    let mut exposure_factor = vec![0.0f64; n];
    let mut log_ratio_flip = DMatrix::zeros(n, p);
    for i in 0..n {
        let a0 = data.exposure[i];
        let marginal = exposure.marginal(a0);
        let conditional = exposure.conditional(i, a0);
        exposure_factor[i] = marginal / conditional;
        let c2_row: Vec<f64> = (0..r2).map(|k| data.c2[(i, k)]).collect();
        for j in 0..p {
            let m = data.mediators[(i, j)];
            let eta_obs = theta.eta(j, a0, &c2_row, data.offset[i]) + delta_hat[i];
            let eta_flip = theta.eta(j, 1.0 - a0, &c2_row, data.offset[i]) + delta_hat[i];
            let lp_obs = dists[j].ln_pmf_at(m, eta_obs);
            let lp_flip = dists[j].ln_pmf_at(m, eta_flip);
            if !lp_obs.is_finite() || !lp_flip.is_finite() {
                return Err(EffectsError::ZeroDensity { subject: i, taxon: j });
            }
            log_ratio_flip[(i, j)] = lp_flip - lp_obs;
        }
    }

    let n_arr = exp.n_arrangements();
    let weight: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let a0 = data.exposure[i];
            let ef = exposure_factor[i];
            let row = log_ratio_flip.row(i).into_owned();
            (0..n_arr).map(move |l| {
                let mut log_ratio = 0.0;
                for j in 0..p {
                    if ExpandedData::bit(l, j) != a0 {
                        log_ratio += row[j];
                    }
                }
                ef * log_ratio.exp()
            })
        })
        .collect();

    Ok(WeightTable { weight, exposure_factor, log_ratio_flip, p })
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        // all -inf (zero mass) or a NaN poisoned the max
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Eq.-(5) weights with the shared random effect integrated out instead of
/// plugged in: each arrangement's mediator mass is the joint marginal over
/// delta ~ N(0, sigma_delta^2), evaluated per subject by Gauss-Hermite
/// quadrature in log space. Because the quadrature always carries a node at
/// delta = 0, the marginal mass stays positive even when sigma_delta is
/// extreme, so downstream ratios remain finite. The per-taxon flip ratios kept
/// for diagnostics use the same marginal masses taxon by taxon; for a single
/// mediator they equal the joint weight contribution exactly.
pub fn compute_weights_marginal(
    exp: &ExpandedData,
    theta: &ThetaVector,
    family: CountFamily,
    exposure: &ExposureFit,
    sigma_delta: f64,
    gh: &GaussHermite,
    data: &Dataset,
) -> Result<WeightTable, EffectsError> {
    let n = exp.n;
    let p = exp.p;
    if data.n() != n || data.p() != p {
        return Err(EffectsError::DimensionMismatch(format!(
            "n = {n}, p = {p}, data = {}x{}",
            data.n(),
            data.p()
        )));
    }
    let r2 = data.c2.ncols();
    let dists: Vec<TaxonDist> = (0..p)
        .map(|j| TaxonDist::new(family, theta.beta_z0[j], theta.beta_l0[j]))
        .collect();
    let nq = gh.nodes.len();
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let ln_wq: Vec<f64> = gh.weights.iter().map(|w| (w / sqrt_pi).ln()).collect();
    let delta_q: Vec<f64> = gh
        .nodes
        .iter()
        .map(|x| std::f64::consts::SQRT_2 * sigma_delta * x)
        .collect();
    let n_arr = exp.n_arrangements();

    let per_subject: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<(f64, Vec<f64>, Vec<f64>), EffectsError> {
            let a0 = data.exposure[i];
            let ef = exposure.marginal(a0) / exposure.conditional(i, a0);
            let c2_row: Vec<f64> = (0..r2).map(|k| data.c2[(i, k)]).collect();
            // log mediator mass per (taxon, pseudo-exposure, node)
            let mut lnp = vec![0.0f64; p * 2 * nq];
            let idx = |j: usize, a: usize, q: usize| (j * 2 + a) * nq + q;
            for j in 0..p {
                let m = data.mediators[(i, j)];
                for a in 0..2 {
                    let eta0 = theta.eta(j, a as f64, &c2_row, data.offset[i]);
                    for q in 0..nq {
                        lnp[idx(j, a, q)] = dists[j].ln_pmf_at(m, eta0 + delta_q[q]);
                    }
                }
            }
            // per-taxon marginal flip ratios (diagnostics)
            let mut scratch = vec![0.0f64; nq];
            let mut ratios = vec![0.0f64; p];
            let a_obs = a0 as usize;
            for j in 0..p {
                for q in 0..nq {
                    scratch[q] = ln_wq[q] + lnp[idx(j, a_obs, q)];
                }
                let lm_obs = log_sum_exp(&scratch);
                if !lm_obs.is_finite() {
                    return Err(EffectsError::ZeroDensity { subject: i, taxon: j });
                }
                for q in 0..nq {
                    scratch[q] = ln_wq[q] + lnp[idx(j, 1 - a_obs, q)];
                }
                ratios[j] = log_sum_exp(&scratch) - lm_obs;
            }
            // joint marginal mass per arrangement, shared delta across taxa
            let mut ln_arr = vec![0.0f64; n_arr];
            for (l, la) in ln_arr.iter_mut().enumerate() {
                for q in 0..nq {
                    let mut s = ln_wq[q];
                    for j in 0..p {
                        s += lnp[idx(j, ((l >> j) & 1) as usize, q)];
                    }
                    scratch[q] = s;
                }
                *la = log_sum_exp(&scratch);
            }
            let l_obs = if a0 == 1.0 { n_arr - 1 } else { 0 };
            let ln_obs = ln_arr[l_obs];
            if !ln_obs.is_finite() {
                return Err(EffectsError::ZeroDensity { subject: i, taxon: 0 });
            }
            let weights: Vec<f64> = ln_arr.iter().map(|&la| ef * (la - ln_obs).exp()).collect();
            Ok((ef, ratios, weights))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut exposure_factor = vec![0.0f64; n];
    let mut log_ratio_flip = DMatrix::zeros(n, p);
    let mut weight = Vec::with_capacity(exp.n_rows());
    for (i, (ef, ratios, w)) in per_subject.into_iter().enumerate() {
        exposure_factor[i] = ef;
        for j in 0..p {
            log_ratio_flip[(i, j)] = ratios[j];
        }
        weight.extend(w);
    }
    Ok(WeightTable { weight, exposure_factor, log_ratio_flip, p })
}

/// Optional symmetric percentile cap on the weights (off by default in the
/// pipeline). Returns how many entries were truncated.
pub fn truncate_weights(w: &mut WeightTable, lower_pct: f64, upper_pct: f64) -> usize {
    let mut sorted = w.weight.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |pct: f64| {
        let idx = ((pct / 100.0) * (sorted.len() - 1) as f64).round() as usize;
        sorted[idx.min(sorted.len() - 1)]
    };
    let (lo, hi) = (q(lower_pct), q(upper_pct));
    let mut clipped = 0;
    for v in &mut w.weight {
        if *v < lo {
            *v = lo;
            clipped += 1;
        } else if *v > hi {
            *v = hi;
            clipped += 1;
        }
    }
    clipped
}

/// NDE and per-mediator NIE with the underlying outcome-model coefficients.
#[derive(Debug, Clone)]
pub struct EffectEstimates {
    /// (theta, theta_0, theta_1..theta_p): intercept, observed-exposure
    /// coefficient, pseudo-exposure coefficients.
    pub theta: Vec<f64>,
    pub nde: f64,
    pub nie: Vec<f64>,
    /// Model-based WLS covariance of `theta` (weight-scale invariant).
    pub cov: DMatrix<f64>,
    pub conditional_on_delta: bool,
}

/// Fits the marginal outcome model of Eq. (4) on the expanded data by
/// weighted least squares (normal equations, Cholesky). The design per row is
/// (1, A_i0, A_il1..A_ilp); with a - a* = 1 the NDE and NIE are coefficient
/// read-offs. Accumulation is chunked by subject in a fixed order so results
/// are bit-reproducible regardless of thread count.
pub fn fit_outcome_wls(
    exp: &ExpandedData,
    w: &WeightTable,
    data: &Dataset,
) -> Result<EffectEstimates, EffectsError> {
    let n = exp.n;
    let p = exp.p;
    let q = p + 2;
    let n_arr = exp.n_arrangements();
    if w.weight.len() != exp.n_rows() {
        return Err(EffectsError::DimensionMismatch(format!(
            "weights {} vs rows {}",
            w.weight.len(),
            exp.n_rows()
        )));
    }

    // normalize to mean weight 1 so the covariance is scale invariant
    let mean_w = w.weight.iter().sum::<f64>() / w.weight.len() as f64;
    if !(mean_w > 0.0) {
        return Err(EffectsError::RankDeficient);
    }

    let partials: Vec<(DMatrix<f64>, DVector<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut xtwx = DMatrix::zeros(q, q);
            let mut xtwy = DVector::zeros(q);
            let mut x = DVector::zeros(q);
            x[0] = 1.0;
            x[1] = data.exposure[i];
            let y = data.outcome[i];
            for l in 0..n_arr {
                for j in 0..p {
                    x[2 + j] = ExpandedData::bit(l, j);
                }
                let wi = w.weight[(i << p) + l] / mean_w;
                xtwx.syger(wi, &x, &x, 1.0);
                xtwy.axpy(wi * y, &x, 1.0);
            }
            (xtwx, xtwy)
        })
        .collect();
    let mut xtwx = DMatrix::zeros(q, q);
    let mut xtwy = DVector::zeros(q);
    for (a, b) in partials {
        xtwx += a;
        xtwy += b;
    }
    // syger fills the lower triangle only
    xtwx.fill_upper_triangle_with_lower_triangle();

    let chol = xtwx.clone().cholesky().ok_or(EffectsError::RankDeficient)?;
    let theta = chol.solve(&xtwy);

    // cluster-robust sandwich by subject: the expanded rows of one subject
    // share the same outcome, so their residuals are perfectly dependent and
    // a row-wise variance would be badly miscalibrated
    let mut meat = DMatrix::zeros(q, q);
    for i in 0..n {
        let mut x = DVector::zeros(q);
        let mut score = DVector::zeros(q);
        x[0] = 1.0;
        x[1] = data.exposure[i];
        let y = data.outcome[i];
        for l in 0..n_arr {
            for j in 0..p {
                x[2 + j] = ExpandedData::bit(l, j);
            }
            let wi = w.weight[(i << p) + l] / mean_w;
            let r = y - x.dot(&theta);
            score.axpy(wi * r, &x, 1.0);
        }
        meat.syger(1.0, &score, &score, 1.0);
    }
    meat.fill_upper_triangle_with_lower_triangle();
    let bread = chol.inverse();
    let adj = n as f64 / (n as f64 - q as f64).max(1.0);
    let cov = &bread * meat * &bread * adj;

    let (nde, nie) = effects_from_theta(theta.as_slice(), 1.0, 0.0);
    Ok(EffectEstimates {
        theta: theta.as_slice().to_vec(),
        nde,
        nie,
        cov,
        conditional_on_delta: true,
    })
}

/// Coefficient read-off for the linear marginal model: nde = theta_0 (a - a*),
/// nie_j = theta_j (a - a*).
pub fn effects_from_theta(theta: &[f64], a: f64, a_star: f64) -> (f64, Vec<f64>) {
    let contrast = a - a_star;
    let nde = theta[1] * contrast;
    let nie = theta[2..].iter().map(|&t| t * contrast).collect();
    (nde, nie)
}
