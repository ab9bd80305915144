//! Markov transition probabilities between graph nodes.
//!
//! A small MLP scores each ordered pair `[x_i ; x_j]`, the score is scaled by
//! a node weight, and each row is softmaxed over the other nodes. Path
//! selection is a discrete routing step, so this runs outside the tape.

use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

pub const W1: &str = "fd.trans.w1";
pub const B1: &str = "fd.trans.b1";
pub const W2: &str = "fd.trans.w2";
pub const B2: &str = "fd.trans.b2";

/// Which endpoint's adjusted weight scales a transition score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TransitionWeight {
    #[default]
    Current,
    Target,
}

impl FromStr for TransitionWeight {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "current" => Ok(TransitionWeight::Current),
            "target" => Ok(TransitionWeight::Target),
            _ => Err(Error::Config(format!("transition weight must be current|target, got {s:?}"))),
        }
    }
}

pub fn init_params<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    feat: usize,
    hidden: usize,
    rng: &mut R,
) -> Result<()> {
    store.init_randn(W1, &[2 * feat, hidden], 2f64.sqrt(), rng)?;
    store.insert(B1, Tensor::zeros(&[1, hidden]))?;
    store.init_randn(W2, &[hidden, 1], 1.0, rng)?;
    store.insert(B2, Tensor::zeros(&[1, 1]))?;
    Ok(())
}

/// Raw MLP scores `a_ij` for every ordered pair; the diagonal is left at 0.
pub fn pair_scores<T: Scalar>(features: &Tensor<T>, params: &ParamStore<T>) -> Result<Vec<Vec<f64>>> {
    let n = features.rows();
    let f = features.cols();
    let mut pairs = Vec::with_capacity(n * (n - 1) * 2 * f);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                pairs.extend_from_slice(features.row_slice(i));
                pairs.extend_from_slice(features.row_slice(j));
            }
        }
    }
    let mut out = vec![vec![0.0; n]; n];
    if n < 2 {
        return Ok(out);
    }
    let x = Tensor::new(vec![n * (n - 1), 2 * f], pairs)?;
    let h = x.matmul(params.tensor(W1)?)?;
    let b1 = params.tensor(B1)?;
    let h = Tensor::new(
        h.shape().to_vec(),
        h.data()
            .iter()
            .enumerate()
            .map(|(k, &v)| (v + b1.data()[k % b1.numel()]).max(T::zero()))
            .collect(),
    )?;
    let s = h.matmul(params.tensor(W2)?)?;
    let b2 = params.tensor(B2)?.item().as_f64();
    let mut k = 0;
    for (i, row) in out.iter_mut().enumerate() {
        for (j, slot) in row.iter_mut().enumerate() {
            if i != j {
                *slot = s.data()[k].as_f64() + b2;
                k += 1;
            }
        }
    }
    Ok(out)
}

/// Row-wise softmax over `j != i` of `a_ij * weight`, zero diagonal.
/// `adjusted` holds evidence weights; the claim node uses weight 1.
pub fn transition_from_scores(scores: &[Vec<f64>], adjusted: &[f64], mode: TransitionWeight) -> Vec<Vec<f64>> {
    let n = scores.len();
    let w = |i: usize| if i == 0 { 1.0 } else { adjusted[i - 1] };
    (0..n)
        .map(|i| {
            let scaled: Vec<f64> = (0..n)
                .map(|j| {
                    let m = match mode {
                        TransitionWeight::Current => w(i),
                        TransitionWeight::Target => w(j),
                    };
                    scores[i][j] * m
                })
                .collect();
            let mx = (0..n)
                .filter(|&j| j != i)
                .map(|j| scaled[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..n).filter(|&j| j != i).map(|j| (scaled[j] - mx).exp()).sum();
            (0..n)
                .map(|j| if j == i { 0.0 } else { (scaled[j] - mx).exp() / z })
                .collect()
        })
        .collect()
}

pub fn transition_matrix<T: Scalar>(
    features: &Tensor<T>,
    adjusted: &[f64],
    params: &ParamStore<T>,
    mode: TransitionWeight,
) -> Result<Vec<Vec<f64>>> {
    if adjusted.len() + 1 != features.rows() {
        return Err(Error::Shape {
            op: "transition_matrix",
            lhs: features.shape().to_vec(),
            rhs: vec![adjusted.len()],
        });
    }
    let s = pair_scores(features, params)?;
    Ok(transition_from_scores(&s, adjusted, mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_scores_uniform_rows() {
        let s = vec![vec![2.0; 4]; 4];
        let p = transition_from_scores(&s, &[0.2, 0.3, 0.5], TransitionWeight::Current);
        for (i, row) in p.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let e = if i == j { 0.0 } else { 1.0 / 3.0 };
                assert!((v - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn closed_form_row() {
        let s = vec![vec![0.0, 0.0, 3f64.ln()], vec![0.0; 3], vec![0.0; 3]];
        let p = transition_from_scores(&s, &[1.0, 1.0], TransitionWeight::Current);
        assert!((p[0][1] - 0.25).abs() < 1e-12);
        assert!((p[0][2] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn mlp_rows_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = ParamStore::<f32>::new(4);
        init_params(&mut p, 5, 8, &mut rng).unwrap();
        let x = Tensor::randn(&[6, 5], 1.0, &mut rng);
        for mode in [TransitionWeight::Current, TransitionWeight::Target] {
            let t = transition_matrix(&x, &[0.1, 0.2, 0.3, 0.15, 0.25], &p, mode).unwrap();
            for (i, row) in t.iter().enumerate() {
                assert_eq!(row[i], 0.0);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }
}
