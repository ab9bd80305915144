use crate::graph::NodeBelief;

/// Inverse probability weighting: `prior / P(noisy)`, renormalised. Nodes
/// believed noisy end up with relatively less mass.
pub fn ipw_adjust(belief: &NodeBelief) -> NodeBelief {
    let raw: Vec<f64> = belief
        .prior
        .iter()
        .zip(&belief.noise_posterior)
        .map(|(p, z)| p / z)
        .collect();
    let total: f64 = raw.iter().sum();
    NodeBelief {
        adjusted: raw.iter().map(|r| r / total).collect(),
        ..belief.clone()
    }
}
