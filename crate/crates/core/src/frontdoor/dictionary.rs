//! Per-class cluster centers of graph representations and the Monte Carlo
//! estimate of the representation expected under the dataset's bias.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::frontdoor::kmeans::kmeans;

pub const MAX_ITER: usize = 100;
pub const REL_TOL: f64 = 1e-6;

/// Convergence record of one per-class clustering.
#[derive(Clone, Debug)]
pub struct ClusterFit {
    pub class: usize,
    pub iterations: usize,
    pub converged: bool,
    pub wcss_history: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ConfusionDictionary {
    /// `n_classes x k x d`.
    pub centers: Vec<Vec<Vec<f64>>>,
    pub class_labels: Vec<usize>,
    pub fits: Vec<ClusterFit>,
}

impl ConfusionDictionary {
    pub fn from_centers(centers: Vec<Vec<Vec<f64>>>) -> Self {
        let class_labels = (0..centers.len()).collect();
        ConfusionDictionary {
            centers,
            class_labels,
            fits: Vec::new(),
        }
    }

    pub fn flat(&self) -> Vec<&[f64]> {
        self.centers
            .iter()
            .flat_map(|c| c.iter().map(Vec::as_slice))
            .collect()
    }

    pub fn n_centers(&self) -> usize {
        self.centers.iter().map(Vec::len).sum()
    }

    pub fn dim(&self) -> usize {
        self.centers
            .first()
            .and_then(|c| c.first())
            .map_or(0, Vec::len)
    }

    /// Mean over every center.
    pub fn mean(&self) -> Vec<f64> {
        let flat = self.flat();
        let mut m = vec![0.0; self.dim()];
        for c in &flat {
            for (a, v) in m.iter_mut().zip(c.iter()) {
                *a += v;
            }
        }
        m.iter_mut().for_each(|a| *a /= flat.len() as f64);
        m
    }
}

/// Clusters each class's representations into `k` centers (`2 N` unless
/// overridden). Classes with fewer than `k` samples are padded with copies
/// of their mean.
pub fn build_confusion_dictionary(
    reprs: &[(Vec<f64>, usize)],
    n_classes: usize,
    k_override: Option<usize>,
    seed: u64,
) -> Result<ConfusionDictionary> {
    let k = k_override.unwrap_or(2 * n_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Vec::with_capacity(n_classes);
    let mut fits = Vec::with_capacity(n_classes);
    for class in 0..n_classes {
        let mut pts: Vec<Vec<f64>> = reprs
            .iter()
            .filter(|(_, y)| *y == class)
            .map(|(x, _)| x.clone())
            .collect();
        if pts.is_empty() {
            return Err(Error::Empty(format!("no samples for class {class}")));
        }
        if pts.len() < k {
            let d = pts[0].len();
            let mut mean = vec![0.0; d];
            for p in &pts {
                for (m, v) in mean.iter_mut().zip(p) {
                    *m += v;
                }
            }
            let n = pts.len() as f64;
            mean.iter_mut().for_each(|m| *m /= n);
            while pts.len() < k {
                pts.push(mean.clone());
            }
        }
        let r = kmeans(&pts, k, MAX_ITER, REL_TOL, &mut rng)?;
        if r.centers.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("confusion_dictionary", format!("non-finite center in class {class}")));
        }
        fits.push(ClusterFit {
            class,
            iterations: r.iterations,
            converged: r.converged,
            wcss_history: r.wcss_history,
        });
        centers.push(r.centers);
    }
    Ok(ConfusionDictionary {
        centers,
        class_labels: (0..n_classes).collect(),
        fits,
    })
}

/// Average over `draws` of the mean of `m` centers sampled uniformly
/// without replacement from the flattened dictionary.
pub fn expected_bias(dict: &ConfusionDictionary, m: usize, draws: usize, seed: u64) -> Result<Vec<f64>> {
    let flat = dict.flat();
    if m == 0 || m > flat.len() {
        return Err(Error::invalid(
            "expected_bias",
            format!("cannot draw {m} of {} centers", flat.len()),
        ));
    }
    if draws == 0 {
        return Err(Error::invalid("expected_bias", "draws must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = dict.dim();
    let mut acc = vec![0.0; d];
    for _ in 0..draws {
        let idx = sample(&mut rng, flat.len(), m);
        let mut draw = vec![0.0; d];
        for i in idx.iter() {
            for (a, v) in draw.iter_mut().zip(flat[i]) {
                *a += v;
            }
        }
        for (a, v) in acc.iter_mut().zip(&draw) {
            *a += v / m as f64;
        }
    }
    acc.iter_mut().for_each(|a| *a /= draws as f64);
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_centers_give_exact_value() {
        let z = vec![0.25, -1.5];
        let d = ConfusionDictionary::from_centers(vec![vec![z.clone(); 4]; 2]);
        assert_eq!(expected_bias(&d, 1, 7, 3).unwrap(), z);
    }

    #[test]
    fn all_centers_is_mean() {
        let d = ConfusionDictionary::from_centers(vec![
            vec![vec![1.0, 0.0], vec![3.0, 2.0]],
            vec![vec![-1.0, 5.0], vec![0.5, 0.5]],
        ]);
        for seed in 0..5 {
            let e = expected_bias(&d, 4, 3, seed).unwrap();
            for (a, b) in e.iter().zip(d.mean()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn missing_class_named() {
        let reprs = vec![(vec![0.0], 0), (vec![1.0], 0)];
        let err = build_confusion_dictionary(&reprs, 2, Some(1), 0).unwrap_err();
        assert!(err.to_string().contains("class 1"), "{err}");
    }

    #[test]
    fn padding_and_shape() {
        let reprs = vec![(vec![0.0, 1.0], 0), (vec![2.0, 3.0], 1), (vec![4.0, 5.0], 1)];
        let d = build_confusion_dictionary(&reprs, 2, None, 0).unwrap();
        assert_eq!(d.centers.len(), 2);
        assert!(d.centers.iter().all(|c| c.len() == 4));
        assert_eq!(d.centers[0][0], vec![0.0, 1.0]);
    }

    #[test]
    fn too_many_draws_rejected() {
        let d = ConfusionDictionary::from_centers(vec![vec![vec![0.0]; 2]]);
        assert!(expected_bias(&d, 3, 1, 0).is_err());
    }
}
