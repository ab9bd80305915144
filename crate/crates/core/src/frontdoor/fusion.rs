//! Multi-head fusion of the path representation (queries) with the graph
//! representation (keys and values), plus a residual on the path side.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::tensor::Scalar;

pub const WQ: &str = "fd.fuse.wq";
pub const WK: &str = "fd.fuse.wk";
pub const WV: &str = "fd.fuse.wv";
pub const WO: &str = "fd.fuse.wo";

#[derive(Clone, Debug, PartialEq)]
pub struct FusionConfig {
    pub heads: usize,
    pub model_dim: usize,
    /// Weight of the bias subtraction at prediction time.
    pub alpha: f64,
    /// Monte Carlo draws for the bias expectation.
    pub mc_draws: usize,
    /// Centers per draw; `None` means `ceil(N / 2)`.
    pub mc_centers: Option<usize>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            heads: 4,
            model_dim: 64,
            alpha: 0.5,
            mc_draws: 10,
            mc_centers: None,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} must be a positive multiple of heads {}",
                self.model_dim, self.heads
            )));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.mc_draws == 0 {
            return Err(Error::Config("mc_draws must be >= 1".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn centers_per_draw(&self, n_classes: usize) -> usize {
        self.mc_centers.unwrap_or(n_classes.div_ceil(2))
    }
}

pub fn init_params<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    cfg: &FusionConfig,
    rng: &mut R,
) -> Result<()> {
    let d = cfg.model_dim;
    for name in [WQ, WK, WV, WO] {
        store.init_randn(name, &[d, d], 1.0, rng)?;
    }
    Ok(())
}

/// `M_rg = concat(head_1..head_H) W_o + x_r`, where head `i` attends from
/// `x_r W_q^i` to the single key `x_g W_k^i` and reads `x_g W_v^i`.
pub fn fuse<T: Scalar>(tape: &mut Tape<T>, p: &Bound, x_r: Var, x_g: Var, heads: usize) -> Result<Var> {
    let d = tape.value(x_r).cols();
    if heads == 0 || d % heads != 0 {
        return Err(Error::invalid("fuse", format!("dim {d} not divisible by {heads} heads")));
    }
    let hd = d / heads;
    let (wq, wk, wv, wo) = (p.var(WQ)?, p.var(WK)?, p.var(WV)?, p.var(WO)?);
    let q = tape.matmul(x_r, wq)?;
    let k = tape.matmul(x_g, wk)?;
    let v = tape.matmul(x_g, wv)?;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * hd, hd)?;
        let kh = tape.slice_cols(k, h * hd, hd)?;
        let vh = tape.slice_cols(v, h * hd, hd)?;
        let kt = tape.transpose(kh)?;
        let s = tape.matmul(qh, kt)?;
        let s = tape.scale(s, 1.0 / (hd as f64).sqrt());
        let a = tape.softmax(s, 1)?;
        outs.push(tape.matmul(a, vh)?);
    }
    let cat = tape.concat(&outs, 1)?;
    let o = tape.matmul(cat, wo)?;
    tape.add(o, x_r)
}
