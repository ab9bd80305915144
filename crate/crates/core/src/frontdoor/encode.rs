//! Path encoder (recurrent cell over node features) and graph encoder
//! (single-query attention pooling).

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::frontdoor::beam::ReasoningPath;
use crate::params::{Bound, ParamStore};
use crate::tensor::{Scalar, Tensor};

pub const LSTM_W: &str = "fd.lstm.w";
pub const LSTM_B: &str = "fd.lstm.b";
pub const QUERY: &str = "fd.graph.query";
pub const PROJ: &str = "fd.graph.proj";

pub fn init_params<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    feat: usize,
    model_dim: usize,
    rng: &mut R,
) -> Result<()> {
    let d = model_dim;
    store.init_randn(LSTM_W, &[feat + d, 4 * d], 1.0, rng)?;
    // forget gate starts open
    let mut b = Tensor::zeros(&[1, 4 * d]);
    for k in d..2 * d {
        b.data_mut()[k] = T::one();
    }
    store.insert(LSTM_B, b)?;
    store.init_randn(QUERY, &[1, feat], 1.0, rng)?;
    store.init_randn(PROJ, &[feat, d], 1.0, rng)?;
    Ok(())
}

/// Final hidden state of one path, `1 x D`.
pub fn encode_path<T: Scalar>(tape: &mut Tape<T>, p: &Bound, feats: Var, nodes: &[usize]) -> Result<Var> {
    let w = p.var(LSTM_W)?;
    let b = p.var(LSTM_B)?;
    let d = tape.value(b).cols() / 4;
    let mut h = tape.constant(Tensor::zeros(&[1, d]));
    let mut c = tape.constant(Tensor::zeros(&[1, d]));
    for &n in nodes {
        let x = tape.gather_rows(feats, &[n])?;
        let hc = tape.lstm_cell(x, h, c, w, b)?;
        h = tape.gather_rows(hc, &[0])?;
        c = tape.gather_rows(hc, &[1])?;
    }
    Ok(h)
}

/// Score-weighted mean of the paths' final hidden states, weights
/// `softmax(log_score)`. Scores are routing decisions and carry no gradient.
pub fn encode_paths<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    feats: Var,
    paths: &[ReasoningPath],
) -> Result<Var> {
    if paths.is_empty() {
        return Err(Error::Empty("encode_paths needs at least one path".into()));
    }
    let hs = paths
        .iter()
        .map(|path| encode_path(tape, p, feats, &path.nodes))
        .collect::<Result<Vec<_>>>()?;
    if hs.len() == 1 {
        return Ok(hs[0]);
    }
    let stacked = tape.concat(&hs, 0)?;
    let w = path_weights(paths);
    let wv = tape.constant(Tensor::new(
        vec![1, w.len()],
        w.into_iter().map(T::from_f64).collect(),
    )?);
    tape.matmul(wv, stacked)
}

pub fn path_weights(paths: &[ReasoningPath]) -> Vec<f64> {
    let m = paths
        .iter()
        .map(|p| p.log_score)
        .fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = paths.iter().map(|p| (p.log_score - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Attention weights of the learned query over the rows of `feats`.
pub fn graph_attention<T: Scalar>(tape: &mut Tape<T>, p: &Bound, feats: Var) -> Result<Var> {
    let q = p.var(QUERY)?;
    let f = tape.value(feats).cols() as f64;
    let qt = tape.transpose(q)?;
    let s = tape.matmul(feats, qt)?;
    let s = tape.scale(s, 1.0 / f.sqrt());
    let st = tape.transpose(s)?;
    tape.softmax(st, 1)
}

/// `x_g = (softmax(X q^T / sqrt F)^T X) W_proj`, `1 x D`.
pub fn encode_graph<T: Scalar>(tape: &mut Tape<T>, p: &Bound, feats: Var) -> Result<Var> {
    let a = graph_attention(tape, p, feats)?;
    let pooled = tape.matmul(a, feats)?;
    let proj = p.var(PROJ)?;
    tape.matmul(pooled, proj)
}
