//! Variational generator of local graph features.
//!
//! For evidence node `i` with neighbour mean `m_i`, an encoder maps
//! `[x_i ; m_i]` to a diagonal Gaussian `q(h)`, a prior network maps `m_i` to
//! `p(h)`, and a decoder maps `[m_i ; h]` back to feature space. The
//! objective per node is `-0.5 |x_i - x_hat_i|^2 - lambda * W2(q, p)` with the
//! closed-form 2-Wasserstein distance between diagonal Gaussians,
//! `|mu_q - mu_p|^2 + |sigma_q - sigma_p|^2`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Scalar, Tensor};

pub const ENC_W: &str = "aug.enc.w";
pub const ENC_B: &str = "aug.enc.b";
pub const PRIOR_W: &str = "aug.prior.w";
pub const PRIOR_B: &str = "aug.prior.b";
pub const DEC_W: &str = "aug.dec.w";
pub const DEC_B: &str = "aug.dec.b";

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub latent: usize,
    pub lambda: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            latent: 16,
            lambda: 1.0,
        }
    }
}

pub fn init_params<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    feat: usize,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<()> {
    let l = cfg.latent;
    store.init_randn(ENC_W, &[2 * feat, 2 * l], 1.0, rng)?;
    store.insert(ENC_B, Tensor::zeros(&[1, 2 * l]))?;
    store.init_randn(PRIOR_W, &[feat, 2 * l], 1.0, rng)?;
    store.insert(PRIOR_B, Tensor::zeros(&[1, 2 * l]))?;
    store.init_randn(DEC_W, &[feat + l, feat], 0.1, rng)?;
    store.insert(DEC_B, Tensor::zeros(&[1, feat]))?;
    Ok(())
}

/// Standard normal draws for the reparameterised sample, one row per
/// evidence node.
pub fn sample_noise<T: Scalar, R: Rng + ?Sized>(n_evidence: usize, latent: usize, rng: &mut R) -> Tensor<T> {
    let data = (0..n_evidence * latent)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::from_f64(z)
        })
        .collect();
    Tensor::new(vec![n_evidence, latent], data).expect("shape matches data")
}

/// `(N - 1) x N` matrix whose row `i` averages every node except `i + 1`.
pub fn neighbour_mean_matrix<T: Scalar>(n_nodes: usize) -> Tensor<T> {
    let mut b = Tensor::zeros(&[n_nodes - 1, n_nodes]);
    let w = T::from_f64(1.0 / (n_nodes - 1) as f64);
    for i in 1..n_nodes {
        for j in 0..n_nodes {
            if j != i {
                b.set(i - 1, j, w);
            }
        }
    }
    b
}

pub struct AugmentOutput {
    /// `N_e x F` generated features.
    pub generated: Var,
    /// Scalar objective to maximise.
    pub elbo: Var,
    /// Scalar divergence term, before weighting.
    pub divergence: Var,
}

/// `x` holds all node features (`N x F`, claim first); `eps` is `N_e x latent`.
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    x: Var,
    eps: Tensor<T>,
    cfg: &AugmentConfig,
) -> Result<AugmentOutput> {
    let n = tape.value(x).rows();
    if n < 2 {
        return Err(Error::invalid("augment", "graph needs at least two nodes"));
    }
    let l = cfg.latent;
    let b = tape.constant(neighbour_mean_matrix(n));
    let m = tape.matmul(b, x)?;
    let idx: Vec<usize> = (1..n).collect();
    let xe = tape.gather_rows(x, &idx)?;

    let xm = tape.concat(&[xe, m], 1)?;
    let q = affine(tape, p, xm, ENC_W, ENC_B)?;
    let mu_q = tape.slice_cols(q, 0, l)?;
    let ls_q = tape.slice_cols(q, l, l)?;
    let sd_q = tape.exp(ls_q);

    let pr = affine(tape, p, m, PRIOR_W, PRIOR_B)?;
    let mu_p = tape.slice_cols(pr, 0, l)?;
    let ls_p = tape.slice_cols(pr, l, l)?;
    let sd_p = tape.exp(ls_p);

    let h = tape.gaussian_sample(mu_q, sd_q, eps)?;
    let mh = tape.concat(&[m, h], 1)?;
    let xhat = affine(tape, p, mh, DEC_W, DEC_B)?;

    let ne = (n - 1) as f64;
    let recon = sq_dist(tape, xe, xhat)?;
    let dmu = sq_dist(tape, mu_q, mu_p)?;
    let dsd = sq_dist(tape, sd_q, sd_p)?;
    let div = tape.add(dmu, dsd)?;
    let div = tape.scale(div, 1.0 / ne);
    let rec = tape.scale(recon, -0.5 / ne);
    let pen = tape.scale(div, cfg.lambda);
    let elbo = tape.sub(rec, pen)?;
    Ok(AugmentOutput {
        generated: xhat,
        elbo,
        divergence: div,
    })
}

/// Generated features for one graph outside of training.
pub fn augment_features<T: Scalar, R: Rng + ?Sized>(
    features: &Tensor<T>,
    params: &ParamStore<T>,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let x = tape.constant(features.clone());
    let eps = sample_noise(features.rows() - 1, cfg.latent, rng);
    let out = forward(&mut tape, &p, x, eps, cfg)?;
    Ok(tape.value(out.generated).clone())
}

pub(crate) fn affine<T: Scalar>(tape: &mut Tape<T>, p: &Bound, x: Var, w: &str, b: &str) -> Result<Var> {
    let w = p.var(w)?;
    let b = p.var(b)?;
    let y = tape.matmul(x, w)?;
    tape.add(y, b)
}

fn sq_dist<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let d2 = tape.mul(d, d)?;
    Ok(tape.sum(d2))
}
