//! Model fitting: logistic exposure model and the mixed-effects zero-inflated
//! count mediator model (maximum marginal likelihood, shared per-subject
//! random effect, adaptive Gauss-Hermite quadrature).

mod exposure;
mod gof;
pub(crate) mod mediator;

pub use exposure::fit_exposure_model;
pub use gof::{goodness_of_fit, GofReport, TaxonGof};
pub use mediator::{
    empirical_bayes_effects, fit_mediator_model, free_indices, log_marginal_likelihood,
    log_marginal_likelihood_grad, model_selection, FitOptions, MediatorFit, ModelRank,
    ModelSelection,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("perfect separation detected in the exposure model (|alpha| > 30)")]
    Separation,
    #[error("collinear design: {0}")]
    Collinear(String),
    #[error("optimizer did not converge within {max_iter} iterations (grad sup-norm {grad_norm:.3e})")]
    NonConvergence { max_iter: usize, grad_norm: f64 },
    #[error("irrecoverable numeric overflow in the marginal likelihood")]
    NumericOverflow,
    #[error("goodness-of-fit cells degenerate for taxon {taxon}: {cells} cells after merging")]
    DegenerateCells { taxon: usize, cells: usize },
    #[error("all candidate families failed to fit: {0}")]
    AllFamiliesFailed(String),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}
