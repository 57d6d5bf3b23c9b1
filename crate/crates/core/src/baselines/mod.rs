//! Biomarker baselines: gene-set signature scores, PC1 signatures by power
//! iteration and L2 logistic regression on scores, biomarkers, principal
//! components or raw expression.

mod logreg;
mod pca;
mod runner;
mod signature;

pub use logreg::{fit_logreg, LinearModel, GRAD_TOL, MAX_ITER};
pub use pca::{covariance, pc1_scores, power_iteration, top_components};
pub use runner::{run_baselines, BaselineConfig};
pub use signature::{parse_signatures, signature_score, SignatureContext, SignatureDef, SignatureKind, DEFAULT_SIGNATURES};
