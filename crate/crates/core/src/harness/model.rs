//! The assembled network: parameter layout, per-sample preprocessing and
//! the forward pass for every ablation mode.
//!
//! Prediction with the front-door stage enabled is
//! `softmax(W_c M_rg - alpha * W_g (x_cf - E[x_g]))`. Here `x_cf` is the
//! graph encoding of the claim alone (a counterfactual input with every
//! evidence removed, sharing the graph readout weights) and `E[x_g]` is
//! the Monte Carlo estimate drawn from the confusion dictionary. Training fits `W_c` on the full input and
//! `W_g` on the counterfactual one with separate cross-entropy terms, so
//! the bias branch learns what the claim text alone predicts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::backdoor::{augment, bayes_sample_update, gnn, ipw_adjust, normalized_adjacency};
use crate::datagen::Sample;
use crate::encoder::Encoder;
use crate::error::Result;
use crate::frontdoor::{beam_search_paths, classify, encode, fusion, transition, ReasoningPath};
use crate::graph::{prior_weights, CeGraph, NodeBelief};
use crate::harness::config::{Ablation, RunConfig};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Scalar, Tensor};

pub const EXPECTED_BIAS: &str = "buf.expected_bias";

/// Mixes a base seed with stream identifiers (splitmix64 finaliser).
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(b.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Width of node features entering the network: encoder output plus the
/// prior column.
pub fn feature_dim(encoder_dim: usize) -> usize {
    encoder_dim + 1
}

pub fn init_params<T: Scalar>(cfg: &RunConfig, encoder_dim: usize, n_classes: usize) -> Result<ParamStore<T>> {
    let f = feature_dim(encoder_dim);
    let d = cfg.fusion.model_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1, 0));
    let mut p = ParamStore::new(cfg.seed);
    augment::init_params(&mut p, f, &cfg.augment, &mut rng)?;
    gnn::init_params(&mut p, f, &cfg.gnn, &mut rng)?;
    transition::init_params(&mut p, f, cfg.transition_hidden, &mut rng)?;
    encode::init_params(&mut p, f, d, &mut rng)?;
    fusion::init_params(&mut p, &cfg.fusion, &mut rng)?;
    classify::init_params(&mut p, d, n_classes, &mut rng)?;
    p.insert(EXPECTED_BIAS, Tensor::zeros(&[1, d]))?;
    Ok(p)
}

/// Everything about a sample that does not depend on trainable weights.
#[derive(Clone, Debug)]
pub struct Prepared<T: Scalar = f32> {
    /// `N x F` node features, prior column included.
    pub features: Tensor<T>,
    pub belief: NodeBelief,
    pub adjacency: Tensor<T>,
    pub uniform_adjacency: Tensor<T>,
    pub label: usize,
    pub noise_mask: Vec<bool>,
    pub bias_token_present: bool,
}

impl<T: Scalar> Prepared<T> {
    pub fn n_nodes(&self) -> usize {
        self.features.rows()
    }

    /// Adjusted weights as seen by the given mode.
    pub fn adjusted(&self, backdoor: bool) -> Vec<f64> {
        if backdoor {
            self.belief.adjusted.clone()
        } else {
            let ne = self.n_nodes() - 1;
            vec![1.0 / ne as f64; ne]
        }
    }
}

pub fn prepare_graph<T: Scalar>(g: &CeGraph, cfg: &RunConfig, seed: u64) -> Result<(Tensor<T>, NodeBelief)> {
    let prior = prior_weights(g);
    let belief = bayes_sample_update(g, &prior, &cfg.bayes, seed)?;
    let belief = ipw_adjust(&belief);
    let rows = g.features_with_prior(&belief.prior)?;
    let t = Tensor::from_rows(
        &rows
            .iter()
            .map(|r| r.iter().map(|&v| T::from_f64(v)).collect())
            .collect::<Vec<_>>(),
    )?;
    Ok((t, belief))
}

pub fn prepare<T: Scalar>(s: &Sample, enc: &Encoder, cfg: &RunConfig, index: usize) -> Result<Prepared<T>> {
    let claim = enc.encode(&s.claim)?;
    let evs = s
        .evidences
        .iter()
        .map(|e| enc.encode(e))
        .collect::<Result<Vec<_>>>()?;
    let g = CeGraph::build(claim, evs)?.with_noise_mask(&s.noise_mask)?;
    let (features, belief) = prepare_graph(&g, cfg, derive_seed(cfg.seed, 2, index as u64))?;
    let adjacency = normalized_adjacency(&belief.adjusted);
    let uniform_adjacency = normalized_adjacency(&vec![1.0; g.n_evidence()]);
    Ok(Prepared {
        features,
        belief,
        adjacency,
        uniform_adjacency,
        label: s.label,
        noise_mask: s.noise_mask.clone(),
        bias_token_present: s.bias_token_present,
    })
}

pub fn prepare_all<T: Scalar>(samples: &[Sample], enc: &Encoder, cfg: &RunConfig) -> Result<Vec<Prepared<T>>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| prepare(s, enc, cfg, i))
        .collect()
}

/// Knobs of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOpts<T: Scalar> {
    pub mode: Ablation,
    /// Latent noise for the generator; `None` uses the mean (zero noise).
    pub eps: Option<Tensor<T>>,
    /// Reuse these paths instead of searching (keeps routing fixed under
    /// finite differences).
    pub paths: Option<Vec<ReasoningPath>>,
}

impl<T: Scalar> ForwardOpts<T> {
    pub fn eval(mode: Ablation) -> Self {
        ForwardOpts {
            mode,
            eps: None,
            paths: None,
        }
    }
}

pub struct Forward {
    pub main_logits: Var,
    pub bias_logits: Option<Var>,
    pub elbo: Option<Var>,
    pub node_states: Var,
    pub x_g: Var,
    pub paths: Vec<ReasoningPath>,
}

pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    b: &Bound,
    params: &ParamStore<T>,
    prep: &Prepared<T>,
    cfg: &RunConfig,
    opts: &ForwardOpts<T>,
) -> Result<Forward> {
    let backdoor = opts.mode.backdoor();
    let frontdoor = opts.mode.frontdoor();
    let x = tape.constant(prep.features.clone());
    let ne = prep.n_nodes() - 1;

    let (generated, elbo) = if backdoor {
        let eps = opts
            .eps
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&[ne, cfg.augment.latent]));
        let out = augment::forward(tape, b, x, eps, &cfg.augment)?;
        (Some(out.generated), Some(out.elbo))
    } else {
        (None, None)
    };
    let adj = if backdoor {
        &prep.adjacency
    } else {
        &prep.uniform_adjacency
    };
    let h = gnn::forward(tape, b, x, generated, adj, cfg.gnn.layers)?;
    let x_g = encode::encode_graph(tape, b, h)?;

    if !frontdoor {
        let main = classify::main_logits(tape, b, x_g)?;
        return Ok(Forward {
            main_logits: main,
            bias_logits: None,
            elbo,
            node_states: h,
            x_g,
            paths: Vec::new(),
        });
    }

    let paths = match &opts.paths {
        Some(p) => p.clone(),
        None => {
            let tm = transition::transition_matrix(
                tape.value(h),
                &prep.adjusted(backdoor),
                params,
                cfg.transition_weight,
            )?;
            beam_search_paths(&tm, cfg.max_len, cfg.beam)?
        }
    };
    let x_r = encode::encode_paths(tape, b, h, &paths)?;
    let m = fusion::fuse(tape, b, x_r, x_g, cfg.fusion.heads)?;
    let main = classify::main_logits(tape, b, m)?;

    let claim = tape.gather_rows(x, &[0])?;
    let x_cf = encode::encode_graph(tape, b, claim)?;
    let e = b.var(EXPECTED_BIAS)?;
    let bias_vec = tape.sub(x_cf, e)?;
    let bias = classify::bias_logits(tape, b, bias_vec)?;
    Ok(Forward {
        main_logits: main,
        bias_logits: Some(bias),
        elbo,
        node_states: h,
        x_g,
        paths,
    })
}

/// Training objective: cross-entropy of each head minus the weighted ELBO.
pub fn loss<T: Scalar>(tape: &mut Tape<T>, fwd: &Forward, label: usize, elbo_weight: f64) -> Result<Var> {
    let mut l = tape.cross_entropy(fwd.main_logits, label)?;
    if let Some(bl) = fwd.bias_logits {
        let cb = tape.cross_entropy(bl, label)?;
        l = tape.add(l, cb)?;
    }
    if let Some(e) = fwd.elbo {
        let w = tape.scale(e, elbo_weight);
        l = tape.sub(l, w)?;
    }
    Ok(l)
}

/// Class probabilities at prediction time.
pub fn predict_logits<T: Scalar>(tape: &mut Tape<T>, fwd: &Forward, alpha: f64) -> Result<Var> {
    match fwd.bias_logits {
        Some(bl) => classify::debiased(tape, fwd.main_logits, bl, alpha),
        None => Ok(fwd.main_logits),
    }
}

/// Alpha used at prediction time for a mode.
pub fn prediction_alpha(cfg: &RunConfig, mode: Ablation) -> f64 {
    if mode == Ablation::AlphaZero {
        0.0
    } else {
        cfg.fusion.alpha
    }
}

/// Per-sample prediction result.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub label: usize,
}

impl Prediction {
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

pub fn predict<T: Scalar>(params: &ParamStore<T>, prep: &Prepared<T>, cfg: &RunConfig, mode: Ablation) -> Result<Prediction> {
    let mut tape = Tape::new();
    let b = params.bind(&mut tape, false);
    let fwd = forward(&mut tape, &b, params, prep, cfg, &ForwardOpts::eval(mode))?;
    let logits = predict_logits(&mut tape, &fwd, prediction_alpha(cfg, mode))?;
    let probs = tape.value(logits).softmax(1)?.to_f64_vec();
    Ok(Prediction {
        probs,
        label: prep.label,
    })
}

/// Graph representation `x_g` used to build the confusion dictionary.
pub fn graph_repr<T: Scalar>(params: &ParamStore<T>, prep: &Prepared<T>, cfg: &RunConfig, mode: Ablation) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let b = params.bind(&mut tape, false);
    let x = tape.constant(prep.features.clone());
    let backdoor = mode.backdoor();
    let generated = if backdoor {
        let eps = Tensor::zeros(&[prep.n_nodes() - 1, cfg.augment.latent]);
        Some(augment::forward(&mut tape, &b, x, eps, &cfg.augment)?.generated)
    } else {
        None
    };
    let adj = if backdoor {
        &prep.adjacency
    } else {
        &prep.uniform_adjacency
    };
    let h = gnn::forward(&mut tape, &b, x, generated, adj, cfg.gnn.layers)?;
    let x_g = encode::encode_graph(&mut tape, &b, h)?;
    Ok(tape.value(x_g).to_f64_vec())
}

pub fn sample_eps<T: Scalar>(prep: &Prepared<T>, cfg: &RunConfig, epoch: usize, index: usize) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 3 + epoch as u64, index as u64));
    augment::sample_noise(prep.n_nodes() - 1, cfg.augment.latent, &mut rng)
}

/// Shuffled visiting order for an epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xe90c, epoch as u64));
    idx.shuffle(&mut rng);
    idx
}
