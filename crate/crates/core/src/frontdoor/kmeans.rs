//! Lloyd's algorithm with k-means++ seeding.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct KMeansResult {
    pub centers: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// WCSS after seeding, then after every Lloyd iteration.
    pub wcss_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KMeansResult {
    pub fn wcss(&self) -> f64 {
        *self.wcss_history.last().expect("history is never empty")
    }
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = sq(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn seed_plus_plus<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[idx].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq(p, &centers[centers.len() - 1]));
        }
    }
    centers
}

/// Stops when the relative WCSS improvement falls below `tol` or after
/// `max_iter` iterations. A cluster that loses all its points keeps its
/// previous center.
pub fn kmeans<R: Rng + ?Sized>(
    points: &[Vec<f64>],
    k: usize,
    max_iter: usize,
    tol: f64,
    rng: &mut R,
) -> Result<KMeansResult> {
    if points.is_empty() {
        return Err(Error::Empty("kmeans on zero points".into()));
    }
    if k == 0 || k > points.len() {
        return Err(Error::invalid("kmeans", format!("k = {k} with {} points", points.len())));
    }
    let dim = points[0].len();
    let mut centers = seed_plus_plus(points, k, rng);
    let assign = |centers: &[Vec<f64>]| -> (Vec<usize>, f64) {
        let mut total = 0.0;
        let a = points
            .iter()
            .map(|p| {
                let (i, d) = nearest(p, centers);
                total += d;
                i
            })
            .collect();
        (a, total)
    };
    let (mut assignments, w0) = assign(&centers);
    let mut history = vec![w0];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let (a, w) = assign(&centers);
        assignments = a;
        let prev = *history.last().unwrap();
        history.push(w);
        if prev <= 0.0 || (prev - w) / prev <= tol {
            converged = true;
            break;
        }
    }
    Ok(KMeansResult {
        centers,
        assignments,
        wcss_history: history,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_cluster_is_mean() {
        let pts = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, -1.0]];
        let r = kmeans(&pts, 1, 100, 1e-6, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((r.centers[0][0] - 2.0).abs() < 1e-12);
        assert!((r.centers[0][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_blobs() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![0.2, 0.0],
            vec![0.0, 0.2],
            vec![10.0, 10.0],
            vec![10.4, 10.0],
        ];
        let r = kmeans(&pts, 2, 100, 1e-6, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let mut c = r.centers.clone();
        c.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert!((c[0][0] - 0.2 / 3.0).abs() < 1e-12 && (c[0][1] - 0.2 / 3.0).abs() < 1e-12);
        assert!((c[1][0] - 10.2).abs() < 1e-12 && (c[1][1] - 10.0).abs() < 1e-12);
        assert!(r.converged);
    }

    #[test]
    fn bad_k_rejected() {
        let pts = vec![vec![0.0]];
        assert!(kmeans(&pts, 2, 10, 1e-6, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        assert!(kmeans(&[], 1, 10, 1e-6, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
