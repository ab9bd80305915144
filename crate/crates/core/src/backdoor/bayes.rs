//! Sequential Bayesian estimate of which evidences are noise.
//!
//! Evidences are arranged in a DAG by descending prior weight: each node's
//! parents are the claim plus the `fanin_cap` heaviest evidences processed
//! before it. The claim is a fixed, uninformative root with `P(noisy) = 0.5`.
//! A node's prior probability of being noisy is the mean of its parents'
//! posteriors, and its likelihood comes from its mean similarity to them.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{CeGraph, NodeBelief};
use crate::tensor::{cosine, mean, variance};

#[derive(Clone, Debug, PartialEq)]
pub struct BayesConfig {
    pub fanin_cap: usize,
    pub variance_tolerance: f64,
    pub posterior_clamp: f64,
}

impl Default for BayesConfig {
    fn default() -> Self {
        BayesConfig {
            fanin_cap: 3,
            variance_tolerance: 1e-6,
            posterior_clamp: 1e-3,
        }
    }
}

impl BayesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fanin_cap == 0 {
            return Err(Error::Config("fanin_cap must be >= 1".into()));
        }
        if !(self.posterior_clamp > 0.0 && self.posterior_clamp < 0.5) {
            return Err(Error::Config(format!(
                "posterior_clamp must be in (0, 0.5), got {}",
                self.posterior_clamp
            )));
        }
        Ok(())
    }
}

/// Number of consecutive stable sweeps required before stopping.
pub fn k_iter(n_g: usize, prior: &[f64]) -> usize {
    let a = mean(prior);
    let b = variance(prior);
    let n = n_g as f64;
    let k = (a * ((n + 1.0).log2() + n / (b + n))).ceil();
    (k as usize).max(1)
}

#[derive(Clone, Debug)]
pub struct BayesTrace {
    pub belief: NodeBelief,
    pub sweeps: usize,
    pub k_iter: usize,
    /// Evidence indices in processing order.
    pub order: Vec<usize>,
}

const CLAIM: usize = usize::MAX;

pub fn bayes_sample_update(
    g: &CeGraph,
    belief: &NodeBelief,
    cfg: &BayesConfig,
    seed: u64,
) -> Result<NodeBelief> {
    Ok(bayes_trace(g, belief, cfg, seed)?.belief)
}

pub fn bayes_trace(
    g: &CeGraph,
    belief: &NodeBelief,
    cfg: &BayesConfig,
    seed: u64,
) -> Result<BayesTrace> {
    cfg.validate()?;
    let ne = g.n_evidence();
    if belief.prior.len() != ne {
        return Err(Error::Shape {
            op: "bayes_sample_update",
            lhs: vec![ne],
            rhs: vec![belief.prior.len()],
        });
    }
    let eps = cfg.posterior_clamp;

    let mut order: Vec<usize> = (0..ne).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.sort_by(|&a, &b| belief.prior[b].total_cmp(&belief.prior[a]));

    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); ne];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); ne];
    for (pos, &i) in order.iter().enumerate() {
        let mut pa = vec![CLAIM];
        pa.extend(order[..pos.min(cfg.fanin_cap)].iter().copied());
        for &p in &pa[1..] {
            children[p].push(i);
        }
        parents[i] = pa;
    }
    // likelihood term depends only on geometry, so it is fixed up front
    let sbar: Vec<f64> = (0..ne)
        .map(|i| {
            let sims: Vec<f64> = parents[i]
                .iter()
                .map(|&p| {
                    let other = if p == CLAIM { g.claim() } else { g.evidence(p) };
                    (1.0 + cosine(g.evidence(i), other)) / 2.0
                })
                .collect();
            mean(&sims)
        })
        .collect();

    let mut post = vec![0.5; ne];
    let update = |i: usize, post: &mut Vec<f64>| {
        let prior_noisy = mean(
            &parents[i]
                .iter()
                .map(|&p| if p == CLAIM { 0.5 } else { post[p] })
                .collect::<Vec<_>>(),
        );
        let num = prior_noisy * (1.0 - sbar[i]);
        let den = num + (1.0 - prior_noisy) * sbar[i];
        let p = if den > 0.0 { num / den } else { prior_noisy };
        post[i] = p.clamp(eps, 1.0 - eps);
    };

    let k = k_iter(g.n_nodes(), &belief.prior);
    let cap = 50 * k;
    let mut prev_var = variance(&post);
    let mut stable = 0;
    let mut sweeps = 0;
    while sweeps < cap && stable < k {
        for &i in &order {
            update(i, &mut post);
            for &c in &children[i] {
                update(c, &mut post);
            }
        }
        sweeps += 1;
        let v = variance(&post);
        if (v - prev_var).abs() < cfg.variance_tolerance {
            stable += 1;
        } else {
            stable = 0;
        }
        prev_var = v;
    }

    Ok(BayesTrace {
        belief: NodeBelief {
            noise_posterior: post,
            ..belief.clone()
        },
        sweeps,
        k_iter: k,
        order,
    })
}
