//! Back-door stage: estimate which evidences are noise, dilute them, and
//! enrich node features with a variational generator before graph
//! propagation.

pub mod augment;
pub mod bayes;
pub mod gnn;
pub mod ipw;

pub use augment::{AugmentConfig, AugmentOutput};
pub use bayes::{bayes_sample_update, k_iter, BayesConfig, BayesTrace};
pub use gnn::{normalized_adjacency, GnnConfig};
pub use ipw::ipw_adjust;
