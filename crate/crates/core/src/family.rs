//! Count distributions for the mediator model.
//!
//! Every family is parameterized per taxon by an intercept-only
//! zero-inflation logit `beta_z0` (pi = expit(beta_z0)) and an intercept-only
//! log dispersion `beta_l0` (phi = exp(beta_l0)); the conditional mean enters
//! through the log linear predictor `eta = ln(lambda)`. The negative binomial
//! uses the `variance = lambda + lambda^2 / phi` shape, so a larger dispersion
//! parameter means a smaller variance.
//!
//! The zero-inflated mass at zero is `pi + (1 - pi) g(0)`, with `g` the count
//! kernel; everything is evaluated in log space.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::quad::log_add_exp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountFamily {
    Poisson,
    ZiPoisson,
    NegBinomial,
    ZiNegBinomial,
}

impl CountFamily {
    pub fn zero_inflated(self) -> bool {
        matches!(self, CountFamily::ZiPoisson | CountFamily::ZiNegBinomial)
    }

    pub fn overdispersed(self) -> bool {
        matches!(self, CountFamily::NegBinomial | CountFamily::ZiNegBinomial)
    }

    /// Free parameters per taxon given `r2` C2 columns (the mean block has
    /// `2 + r2` parameters, zero-inflation and dispersion one each when used).
    pub fn free_params_per_taxon(self, r2: usize) -> usize {
        2 + r2 + self.zero_inflated() as usize + self.overdispersed() as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            CountFamily::Poisson => "poisson",
            CountFamily::ZiPoisson => "zip",
            CountFamily::NegBinomial => "nb",
            CountFamily::ZiNegBinomial => "zinb",
        }
    }
}

impl std::str::FromStr for CountFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "poisson" | "pois" => Ok(CountFamily::Poisson),
            "zip" | "zipoisson" | "zi-poisson" => Ok(CountFamily::ZiPoisson),
            "nb" | "negbinomial" | "negative-binomial" => Ok(CountFamily::NegBinomial),
            "zinb" | "zinegbinomial" | "zi-negative-binomial" => Ok(CountFamily::ZiNegBinomial),
            other => Err(format!("unknown family '{other}'")),
        }
    }
}

/// Gradient of a taxon log-mass with respect to (beta_z0, beta_l0, eta).
#[derive(Debug, Clone, Copy, Default)]
pub struct PmfGrad {
    pub d_bz0: f64,
    pub d_bl0: f64,
    pub d_eta: f64,
}

/// One taxon's distribution with intercept-level parameters folded in.
/// Rebuilt whenever theta changes; cheap relative to likelihood evaluation.
#[derive(Debug, Clone)]
pub struct TaxonDist {
    pub family: CountFamily,
    pub pi: f64,
    pub phi: f64,
    ln_pi: f64,
    ln_1mpi: f64,
    ln_phi: f64,
    lgamma_phi: f64,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Above this the negative binomial is evaluated in its Poisson limit, and
/// below the reciprocal in its point-mass-at-zero limit; both keep the log
/// mass finite for arbitrarily extreme log-dispersion values. Fiducial draws
/// of beta_l0 can be wild when the dispersion is weakly identified, and the
/// extreme terms cancel in mediation weight ratios, so the limits must be
/// evaluable rather than overflowing to NaN.
const PHI_HUGE: f64 = 1e12;
const PHI_TINY: f64 = 1e-12;

impl TaxonDist {
    pub fn new(family: CountFamily, beta_z0: f64, beta_l0: f64) -> Self {
        let (pi, ln_pi, ln_1mpi) = if family.zero_inflated() {
            (expit(beta_z0), -softplus(-beta_z0), -softplus(beta_z0))
        } else {
            (0.0, f64::NEG_INFINITY, 0.0)
        };
        let (phi, ln_phi) = if family.overdispersed() {
            (beta_l0.exp(), beta_l0)
        } else {
            (f64::NAN, f64::NAN)
        };
        let lgamma_phi = if family.overdispersed() && (PHI_TINY..=PHI_HUGE).contains(&phi) {
            ln_gamma(phi)
        } else {
            0.0
        };
        TaxonDist { family, pi, phi, ln_pi, ln_1mpi, ln_phi, lgamma_phi }
    }

    /// Delta-independent part of the NB log kernel for count `m`:
    /// lgamma(m + phi) - lgamma(phi) - lgamma(m + 1). Zero for Poisson.
    pub fn count_const(&self, m: f64) -> f64 {
        match self.family {
            CountFamily::Poisson | CountFamily::ZiPoisson => -ln_gamma(m + 1.0),
            CountFamily::NegBinomial | CountFamily::ZiNegBinomial => {
                if self.phi > PHI_HUGE {
                    // lgamma(m+phi) - lgamma(phi) -> m ln(phi) + m(m-1)/(2 phi)
                    let corr = if self.phi.is_finite() {
                        m * (m - 1.0) / (2.0 * self.phi)
                    } else {
                        0.0
                    };
                    m * self.ln_phi + corr - ln_gamma(m + 1.0)
                } else if self.phi < PHI_TINY {
                    // Gamma(m+phi)/Gamma(phi) -> phi (m-1)! for m >= 1, 1 at m = 0
                    if m == 0.0 {
                        0.0
                    } else {
                        self.ln_phi + ln_gamma(m) - ln_gamma(m + 1.0)
                    }
                } else {
                    ln_gamma(m + self.phi) - self.lgamma_phi - ln_gamma(m + 1.0)
                }
            }
        }
    }

    /// Count-kernel log mass g(m; lambda, phi) given eta = ln(lambda) and the
    /// precomputed [`Self::count_const`].
    fn ln_kernel(&self, m: f64, eta: f64, count_const: f64) -> f64 {
        let lam = eta.exp();
        match self.family {
            CountFamily::Poisson | CountFamily::ZiPoisson => m * eta - lam + count_const,
            CountFamily::NegBinomial | CountFamily::ZiNegBinomial => {
                if self.phi > PHI_HUGE {
                    // phi (ln phi - ln(phi+lam)) -> -lam; m(eta - ln(phi+lam))
                    // -> m(eta - ln phi), whose ln-phi term cancels count_const's
                    m * eta - lam + count_const - m * self.ln_phi
                } else if self.phi < PHI_TINY {
                    // the phi-scaled term vanishes
                    let ln_denom = log_add_exp(self.ln_phi, eta);
                    count_const + m * (eta - ln_denom)
                } else {
                    let ln_denom = log_add_exp(self.ln_phi, eta);
                    count_const + self.phi * (self.ln_phi - ln_denom) + m * (eta - ln_denom)
                }
            }
        }
    }

    /// Log mass of the (possibly zero-inflated) count at `m`.
    pub fn ln_pmf(&self, m: f64, eta: f64, count_const: f64) -> f64 {
        let g = self.ln_kernel(m, eta, count_const);
        if !self.family.zero_inflated() {
            return g;
        }
        if m == 0.0 {
            log_add_exp(self.ln_pi, self.ln_1mpi + g)
        } else {
            self.ln_1mpi + g
        }
    }

    /// Log mass together with its gradient in (beta_z0, beta_l0, eta).
    pub fn ln_pmf_grad(&self, m: f64, eta: f64, count_const: f64) -> (f64, PmfGrad) {
        let lam = eta.exp();
        // count kernel value and partials
        let (g, dg_eta, dg_bl0) = match self.family {
            CountFamily::Poisson | CountFamily::ZiPoisson => {
                (m * eta - lam + count_const, m - lam, 0.0)
            }
            CountFamily::NegBinomial | CountFamily::ZiNegBinomial => {
                let phi = self.phi;
                if phi > PHI_HUGE {
                    // Poisson limit: the dispersion direction is flat
                    let g = m * eta - lam + count_const - m * self.ln_phi;
                    (g, m - lam, 0.0)
                } else if phi < PHI_TINY {
                    // point-mass-at-zero limit: d/d beta_l0 of ln(phi (m-1)!/m!)
                    let ln_denom = log_add_exp(self.ln_phi, eta);
                    let g = count_const + m * (eta - ln_denom);
                    (g, 0.0, if m == 0.0 { 0.0 } else { 1.0 })
                } else {
                    let ln_denom = log_add_exp(self.ln_phi, eta);
                    let denom = phi + lam;
                    let g = count_const + phi * (self.ln_phi - ln_denom) + m * (eta - ln_denom);
                    let dg_eta = m - (m + phi) * lam / denom;
                    let dg_phi = digamma(m + phi) - digamma(phi) + self.ln_phi + 1.0
                        - ln_denom
                        - (m + phi) / denom;
                    (g, dg_eta, phi * dg_phi)
                }
            }
        };
        if !self.family.zero_inflated() {
            return (g, PmfGrad { d_bz0: 0.0, d_bl0: dg_bl0, d_eta: dg_eta });
        }
        let pi = self.pi;
        if m == 0.0 {
            // For m = 0 the kernel partials reduce to the zero-mass partials:
            // d ln g(0) / d eta and d ln g(0) / d bl0 (digamma terms cancel).
            let c = log_add_exp(self.ln_pi, self.ln_1mpi + g);
            let q = (self.ln_1mpi + g - c).exp(); // weight of the count component
            let d_bz0 = pi * (1.0 - pi) * ((-c).exp() - (g - c).exp());
            (c, PmfGrad { d_bz0, d_bl0: q * dg_bl0, d_eta: q * dg_eta })
        } else {
            (self.ln_1mpi + g, PmfGrad { d_bz0: -pi, d_bl0: dg_bl0, d_eta: dg_eta })
        }
    }

    /// Convenience entry point (recomputes the count constant).
    pub fn ln_pmf_at(&self, m: f64, eta: f64) -> f64 {
        self.ln_pmf(m, eta, self.count_const(m))
    }

    /// Draws one count at eta = ln(lambda).
    pub fn sample<R: Rng + ?Sized>(&self, eta: f64, rng: &mut R) -> f64 {
        if self.family.zero_inflated() && rng.random::<f64>() < self.pi {
            return 0.0;
        }
        let lam = eta.exp();
        match self.family {
            CountFamily::Poisson | CountFamily::ZiPoisson => {
                Poisson::new(lam.max(1e-300)).unwrap().sample(rng)
            }
            CountFamily::NegBinomial | CountFamily::ZiNegBinomial => {
                if self.phi > PHI_HUGE {
                    return Poisson::new(lam.max(1e-300)).unwrap().sample(rng);
                }
                if self.phi < PHI_TINY {
                    return 0.0;
                }
                let gamma = Gamma::new(self.phi, lam / self.phi).unwrap();
                let rate = gamma.sample(rng);
                if rate <= 0.0 {
                    0.0
                } else {
                    Poisson::new(rate).unwrap().sample(rng)
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand_chacha::ChaCha8Rng;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn poisson_zero_mass() {
        // Poisson(0; lambda=2) on the log scale is -2.
        let d = TaxonDist::new(CountFamily::Poisson, 0.0, 0.0);
        assert_abs_diff_eq!(d.ln_pmf_at(0.0, 2.0f64.ln()), -2.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_zero_inflation_limit() {
        // beta_z0 -> +inf gives pi -> 1 and log mass at zero -> 0.
        let d = TaxonDist::new(CountFamily::ZiPoisson, 40.0, 0.0);
        assert!(d.ln_pmf_at(0.0, 1.0).abs() < 1e-12);
    }

    #[test]
    fn zinb_mass_sums_to_one() {
        let d = TaxonDist::new(CountFamily::ZiNegBinomial, -0.4, 0.3);
        let eta = 1.2f64;
        let total: f64 = (0..2000).map(|m| d.ln_pmf_at(m as f64, eta).exp()).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn nb_matches_statrs() {
        use statrs::distribution::{Discrete, NegativeBinomial};
        let phi = 1.7f64;
        let lam = 3.4f64;
        let d = TaxonDist::new(CountFamily::NegBinomial, 0.0, phi.ln());
        let nb = NegativeBinomial::new(phi, phi / (phi + lam)).unwrap();
        for m in [0u64, 1, 2, 7, 40] {
            assert_abs_diff_eq!(d.ln_pmf_at(m as f64, lam.ln()), nb.ln_pmf(m), epsilon = 1e-10);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let h = 1e-6;
        for family in [
            CountFamily::Poisson,
            CountFamily::ZiPoisson,
            CountFamily::NegBinomial,
            CountFamily::ZiNegBinomial,
        ] {
            for m in [0.0, 1.0, 6.0] {
                let (bz0, bl0, eta) = (-0.3, 0.4, 0.9);
                let d = TaxonDist::new(family, bz0, bl0);
                let (_, grad) = d.ln_pmf_grad(m, eta, d.count_const(m));
                let f = |bz0: f64, bl0: f64, eta: f64| {
                    let d = TaxonDist::new(family, bz0, bl0);
                    d.ln_pmf_at(m, eta)
                };
                let fd_bz0 = (f(bz0 + h, bl0, eta) - f(bz0 - h, bl0, eta)) / (2.0 * h);
                let fd_bl0 = (f(bz0, bl0 + h, eta) - f(bz0, bl0 - h, eta)) / (2.0 * h);
                let fd_eta = (f(bz0, bl0, eta + h) - f(bz0, bl0, eta - h)) / (2.0 * h);
                assert_abs_diff_eq!(grad.d_bz0, fd_bz0, epsilon = 1e-5);
                assert_abs_diff_eq!(grad.d_bl0, fd_bl0, epsilon = 1e-5);
                assert_abs_diff_eq!(grad.d_eta, fd_eta, epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn dispersion_limits_stay_finite() {
        // phi -> inf: NB collapses to Poisson
        let eta = 1.1f64;
        let pois = TaxonDist::new(CountFamily::Poisson, 0.0, 0.0);
        for bl0 in [40.0, 700.0, 5_000.0, 1e6] {
            let d = TaxonDist::new(CountFamily::NegBinomial, 0.0, bl0);
            for m in [0.0, 1.0, 7.0] {
                assert_abs_diff_eq!(d.ln_pmf_at(m, eta), pois.ln_pmf_at(m, eta), epsilon = 1e-6);
            }
        }
        // phi -> 0: mass concentrates at zero, positive counts have
        // log-mass ~ beta_l0 (finite, astronomically negative)
        for bl0 in [-40.0, -700.0, -5_000.0] {
            let d = TaxonDist::new(CountFamily::NegBinomial, 0.0, bl0);
            assert!(d.ln_pmf_at(0.0, eta).abs() < 1e-6);
            let lp = d.ln_pmf_at(3.0, eta);
            assert!(lp.is_finite() && (lp - bl0).abs() < 5.0, "lp {lp} at bl0 {bl0}");
            // extreme terms cancel in ratios between linear predictors
            let ratio = d.ln_pmf_at(3.0, eta) - d.ln_pmf_at(3.0, eta - 0.6);
            assert!(ratio.is_finite() && ratio.abs() < 10.0);
        }
    }

    #[test]
    fn sampled_moments_match_zinb() {
        let pi = 0.3f64;
        let phi = 0.8f64;
        let lam = 5.0f64;
        let d = TaxonDist::new(CountFamily::ZiNegBinomial, (pi / (1.0 - pi)).ln(), phi.ln());
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| d.sample(lam.ln(), &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let zero_prop = draws.iter().filter(|&&m| m == 0.0).count() as f64 / n as f64;
        let expected_mean = (1.0 - pi) * lam;
        let expected_zero = d.ln_pmf_at(0.0, lam.ln()).exp();
        assert!((mean - expected_mean).abs() < 0.05, "mean {mean} vs {expected_mean}");
        assert!((zero_prop - expected_zero).abs() < 0.01, "{zero_prop} vs {expected_zero}");
    }
}
