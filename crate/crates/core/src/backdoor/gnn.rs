//! Weighted message passing over the claim-evidence graph.
//!
//! Each layer mixes the current node features with the generated ones,
//! `w1 * X + w2 * G` (the claim row has no generated counterpart), then
//! propagates `tanh(A_hat . mixed . W)`.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Scalar, Tensor};

pub const W1: &str = "gnn.w1";
pub const W2: &str = "gnn.w2";

pub fn layer_name(k: usize) -> String {
    format!("gnn.layer{k}.w")
}

#[derive(Clone, Debug, PartialEq)]
pub struct GnnConfig {
    pub layers: usize,
    pub mix_init: f64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            layers: 2,
            mix_init: 0.5,
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("gnn layers must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn init_params<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    feat: usize,
    cfg: &GnnConfig,
    rng: &mut R,
) -> Result<()> {
    store.insert(W1, Tensor::scalar(T::from_f64(cfg.mix_init)))?;
    store.insert(W2, Tensor::scalar(T::from_f64(cfg.mix_init)))?;
    for k in 0..cfg.layers {
        store.init_randn(&layer_name(k), &[feat, feat], 1.0, rng)?;
    }
    Ok(())
}

/// Row-normalised adjacency of the complete graph with edge weight
/// `(a_i + a_j) / 2`. The claim node takes the largest evidence weight.
/// No self-loops.
pub fn normalized_adjacency<T: Scalar>(adjusted: &[f64]) -> Tensor<T> {
    let n = adjusted.len() + 1;
    let claim_w = adjusted.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w = |i: usize| if i == 0 { claim_w } else { adjusted[i - 1] };
    let mut a = Tensor::zeros(&[n, n]);
    for i in 0..n {
        let row: Vec<f64> = (0..n)
            .map(|j| if i == j { 0.0 } else { (w(i) + w(j)) / 2.0 })
            .collect();
        let z: f64 = row.iter().sum();
        for (j, v) in row.into_iter().enumerate() {
            let v = if z > 0.0 { v / z } else if i != j { 1.0 / (n - 1) as f64 } else { 0.0 };
            a.set(i, j, T::from_f64(v));
        }
    }
    a
}

/// `x: N x F`, `generated: N_e x F` or `None` to disable mixing in of
/// generated features, `adj: N x N`.
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    x: Var,
    generated: Option<Var>,
    adj: &Tensor<T>,
    layers: usize,
) -> Result<Var> {
    let f = tape.value(x).cols();
    let a = tape.constant(adj.clone());
    let w1 = p.var(W1)?;
    let gen_full = match generated {
        Some(g) => {
            let z = tape.constant(Tensor::zeros(&[1, f]));
            let full = tape.concat(&[z, g], 0)?;
            let w2 = p.var(W2)?;
            Some(tape.mul(full, w2)?)
        }
        None => None,
    };
    let mut h = x;
    for k in 0..layers {
        let mut mixed = tape.mul(h, w1)?;
        if let Some(g) = gen_full {
            mixed = tape.add(mixed, g)?;
        }
        let agg = tape.matmul(a, mixed)?;
        let w = p.var(&layer_name(k))?;
        let lin = tape.matmul(agg, w)?;
        h = tape.tanh(lin);
    }
    Ok(h)
}

/// Mean Euclidean distance over all unordered node pairs.
pub fn mean_pairwise_distance<T: Scalar>(x: &Tensor<T>) -> f64 {
    let n = x.rows();
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = x
                .row_slice(i)
                .iter()
                .zip(x.row_slice(j))
                .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
                .sum();
            total += d.sqrt();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(feat: usize, layers: usize) -> ParamStore<f64> {
        let mut p = ParamStore::new(1);
        let cfg = GnnConfig {
            layers,
            mix_init: 0.5,
        };
        init_params(&mut p, feat, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        p
    }

    #[test]
    fn identity_adjacency_no_generation() {
        let mut p = store(3, 1);
        p.replace(W1, Tensor::scalar(1.0));
        p.replace(W2, Tensor::scalar(0.0));
        let x = Tensor::randn(&[4, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        let g = Tensor::randn(&[3, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(3));
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let gv = tape.constant(g);
        let out = forward(&mut tape, &b, xv, Some(gv), &Tensor::identity(4), 1).unwrap();
        let expect = x.matmul(p.get(&layer_name(0)).unwrap()).unwrap().map(|v| v.tanh());
        assert_eq!(tape.value(out), &expect);
    }

    #[test]
    fn uniform_weights_uniform_rows() {
        let a = normalized_adjacency::<f64>(&[0.25; 4]);
        for i in 0..5 {
            for j in 0..5 {
                let e = if i == j { 0.0 } else { 0.25 };
                assert!((a.at(i, j) - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn chain_hand_computed() {
        // path 0 - 1 - 2 with edge weights 1 and 3, already row-normalised
        let adj = Tensor::from_f64_rows(&[&[0.0, 1.0, 0.0], &[0.25, 0.0, 0.75], &[0.0, 1.0, 0.0]]).unwrap();
        let mut p = store(2, 1);
        p.replace(W1, Tensor::scalar(1.0));
        p.replace(&layer_name(0), Tensor::identity(2));
        let x = Tensor::from_f64_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[2.0, 2.0]]).unwrap();
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, false);
        let xv = tape.constant(x);
        let out = forward(&mut tape, &b, xv, None, &adj, 1).unwrap();
        let v = tape.value(out);
        // node 1 = tanh(0.25 * [1,0] + 0.75 * [2,2])
        assert!((v.at(1, 0) - 1.75f64.tanh()).abs() < 1e-12);
        assert!((v.at(1, 1) - 1.5f64.tanh()).abs() < 1e-12);
        assert!((v.at(0, 1) - 1.0f64.tanh()).abs() < 1e-12);
    }

    #[test]
    fn claim_weight_is_max_evidence_weight() {
        let a = normalized_adjacency::<f64>(&[0.1, 0.6, 0.3]);
        // row of evidence 1 (node 1): weights to claim (0.1+0.6)/2, node2 (0.1+0.6)/2, node3 (0.1+0.3)/2
        let raw = [0.35, 0.0, 0.35, 0.2];
        let z: f64 = raw.iter().sum();
        for j in 0..4 {
            assert!((a.at(1, j) - raw[j] / z).abs() < 1e-12);
        }
    }
}
