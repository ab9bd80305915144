//! Fully connected claim-evidence graphs and their prior node weights.

use crate::error::{Error, Result};
use crate::tensor::{cosine, softplus};

/// Node 0 is the claim, nodes `1..=n_evidence` are evidence sentences.
/// Every pair of distinct nodes is connected; the edge set is implicit.
#[derive(Clone, Debug, PartialEq)]
pub struct CeGraph {
    features: Vec<Vec<f64>>,
    is_noise: Vec<Option<bool>>,
}

impl CeGraph {
    pub fn build(claim: Vec<f64>, evidences: Vec<Vec<f64>>) -> Result<Self> {
        if evidences.is_empty() {
            return Err(Error::Empty("graph needs at least one evidence".into()));
        }
        let d = claim.len();
        if let Some(bad) = evidences.iter().find(|e| e.len() != d) {
            return Err(Error::Shape {
                op: "build_graph",
                lhs: vec![d],
                rhs: vec![bad.len()],
            });
        }
        let n = evidences.len() + 1;
        let mut features = Vec::with_capacity(n);
        features.push(claim);
        features.extend(evidences);
        Ok(CeGraph {
            features,
            is_noise: vec![None; n],
        })
    }

    /// Attaches ground-truth noise flags, one per evidence.
    pub fn with_noise_mask(mut self, mask: &[bool]) -> Result<Self> {
        if mask.len() != self.n_evidence() {
            return Err(Error::Shape {
                op: "with_noise_mask",
                lhs: vec![self.n_evidence()],
                rhs: vec![mask.len()],
            });
        }
        self.is_noise[0] = Some(false);
        for (slot, &m) in self.is_noise[1..].iter_mut().zip(mask) {
            *slot = Some(m);
        }
        Ok(self)
    }

    pub fn n_nodes(&self) -> usize {
        self.features.len()
    }

    pub fn n_evidence(&self) -> usize {
        self.features.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn claim(&self) -> &[f64] {
        &self.features[0]
    }

    /// Feature of evidence `i` (0-based over evidence, i.e. node `i + 1`).
    pub fn evidence(&self, i: usize) -> &[f64] {
        &self.features[i + 1]
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.features[i]
    }

    pub fn noise_mask(&self) -> Option<Vec<bool>> {
        self.is_noise[1..].iter().copied().collect()
    }

    pub fn n_edges(&self) -> usize {
        let n = self.n_nodes();
        n * (n - 1) / 2
    }

    /// Unordered pairs `(i, j)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n_nodes();
        (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        i != j && i < self.n_nodes() && j < self.n_nodes()
    }

    /// Node features with the prior weight appended as an extra column.
    /// The claim row gets 1.0.
    pub fn features_with_prior(&self, prior: &[f64]) -> Result<Vec<Vec<f64>>> {
        if prior.len() != self.n_evidence() {
            return Err(Error::Shape {
                op: "features_with_prior",
                lhs: vec![self.n_evidence()],
                rhs: vec![prior.len()],
            });
        }
        Ok(self
            .features
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let mut row = f.clone();
                row.push(if i == 0 { 1.0 } else { prior[i - 1] });
                row
            })
            .collect())
    }
}

/// Per-evidence weights. Vectors left empty have not been computed yet.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NodeBelief {
    pub prior: Vec<f64>,
    pub noise_posterior: Vec<f64>,
    pub adjusted: Vec<f64>,
}

impl NodeBelief {
    pub fn uniform(n_evidence: usize) -> Self {
        let u = vec![1.0 / n_evidence as f64; n_evidence];
        NodeBelief {
            prior: u.clone(),
            noise_posterior: vec![0.5; n_evidence],
            adjusted: u,
        }
    }
}

/// Unnormalised prior score of each evidence: cosine with the claim plus the
/// attention mass the evidence sends to the other evidences.
///
/// The attention row is a softmax over *all* evidences, itself included, of
/// `x_i . x_j / sqrt(dim)`; the second term is the mean of its off-diagonal
/// entries, `(1 - a_ii) / (N_e - 1)`. A softmax restricted to `j != i` would
/// always sum to one and carry no information.
pub fn prior_scores(g: &CeGraph) -> Vec<f64> {
    let ne = g.n_evidence();
    let scale = (g.dim() as f64).sqrt().max(1.0);
    (0..ne)
        .map(|i| {
            let cos = cosine(g.evidence(i), g.claim());
            if ne == 1 {
                return cos;
            }
            let logits: Vec<f64> = (0..ne)
                .map(|j| dot(g.evidence(i), g.evidence(j)) / scale)
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            let self_w = (logits[i] - m).exp() / z;
            cos + (1.0 - self_w) / (ne - 1) as f64
        })
        .collect()
}

/// Softplus-shifted, normalised prior weights.
pub fn prior_weights(g: &CeGraph) -> NodeBelief {
    let raw: Vec<f64> = prior_scores(g).into_iter().map(softplus).collect();
    let z: f64 = raw.iter().sum();
    NodeBelief {
        prior: raw.iter().map(|r| r / z).collect(),
        ..Default::default()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
