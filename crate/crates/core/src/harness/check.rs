//! Finite-difference check of the full training loss.

use crate::autodiff::Tape;
use crate::error::Result;
use crate::gradcheck::{grad_check_params, GradReport};
use crate::harness::config::{Ablation, RunConfig};
use crate::harness::model::{forward, loss, sample_eps, ForwardOpts, Prepared};
use crate::params::ParamStore;
use crate::tensor::Scalar;

/// Checks every trainable tensor against central differences on one sample.
/// Reasoning paths and generator noise are fixed up front, since routing is
/// piecewise constant in the weights.
pub fn model_grad_check<T: Scalar>(
    params: &ParamStore<T>,
    prep: &Prepared<T>,
    cfg: &RunConfig,
    mode: Ablation,
    index: usize,
    eps: f64,
) -> Result<GradReport> {
    let eps_noise = sample_eps(prep, cfg, 0, index);
    let paths = {
        let mut tape = Tape::new();
        let b = params.bind(&mut tape, false);
        let opts = ForwardOpts {
            mode,
            eps: Some(eps_noise.clone()),
            paths: None,
        };
        forward(&mut tape, &b, params, prep, cfg, &opts)?.paths
    };
    let opts = ForwardOpts {
        mode,
        eps: Some(eps_noise),
        paths: if mode.frontdoor() { Some(paths) } else { None },
    };
    grad_check_params(
        |tape, p, trainable| {
            let b = p.bind(tape, trainable);
            let fwd = forward(tape, &b, p, prep, cfg, &opts)?;
            let l = loss(tape, &fwd, prep.label, cfg.elbo_weight)?;
            Ok((l, b))
        },
        params,
        eps,
    )
}
