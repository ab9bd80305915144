//! Classifier head with the bias-branch subtraction applied at prediction
//! time: `softmax(M W_c - alpha * b W_g)`.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::{Bound, ParamStore};
use crate::tensor::{Scalar, Tensor};

pub const WC: &str = "fd.cls.wc";
pub const WG: &str = "fd.cls.wg";

pub fn init_params<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    model_dim: usize,
    n_classes: usize,
    rng: &mut R,
) -> Result<()> {
    store.init_randn(WC, &[model_dim, n_classes], 1.0, rng)?;
    store.init_randn(WG, &[model_dim, n_classes], 1.0, rng)?;
    Ok(())
}

pub fn main_logits<T: Scalar>(tape: &mut Tape<T>, p: &Bound, m: Var) -> Result<Var> {
    let wc = p.var(WC)?;
    tape.matmul(m, wc)
}

pub fn bias_logits<T: Scalar>(tape: &mut Tape<T>, p: &Bound, b: Var) -> Result<Var> {
    let wg = p.var(WG)?;
    tape.matmul(b, wg)
}

/// `main - alpha * bias`.
pub fn debiased<T: Scalar>(tape: &mut Tape<T>, main: Var, bias: Var, alpha: f64) -> Result<Var> {
    let s = tape.scale(bias, alpha);
    tape.sub(main, s)
}

/// Plain-vector form of the whole head.
pub fn classify<T: Scalar>(m: &Tensor<T>, b: &Tensor<T>, wc: &Tensor<T>, wg: &Tensor<T>, alpha: f64) -> Result<Vec<f64>> {
    let main = m.matmul(wc)?;
    let bias = b.matmul(wg)?;
    let a = T::from_f64(alpha);
    let logits = main.zip_map(&bias, |x, y| x - a * y);
    Ok(logits.softmax(1)?.to_f64_vec())
}
