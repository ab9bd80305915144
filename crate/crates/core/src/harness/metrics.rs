//! Evaluation metrics and their CSV form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::model::Prepared;
use crate::tensor::Scalar;

pub const SCHEMA_VERSION: u32 = 1;
pub const METRICS_HEADER: &str =
    "schema_version,split,epoch,accuracy,macro_f1,symmetric_accuracy,noise_dilution,bias_gap,wall_seconds";
pub const ABLATION_HEADER: &str = "schema_version,mode,replicates,accuracy_mean,accuracy_std,\
symmetric_accuracy_mean,symmetric_accuracy_std,macro_f1_mean,macro_f1_std,noise_dilution_mean";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Mean adjusted weight of noise evidences over that of signal
    /// evidences, pooled over the split. NaN when either group is empty.
    pub noise_dilution: f64,
    pub n: usize,
}

/// One line of `metrics.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub split: String,
    pub epoch: Option<usize>,
    pub dev: Metrics,
    pub symmetric_accuracy: Option<f64>,
    pub wall_seconds: f64,
}

impl MetricsRow {
    pub fn bias_gap(&self) -> Option<f64> {
        self.symmetric_accuracy.map(|s| self.dev.accuracy - s)
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{SCHEMA_VERSION},{},{},{:.6},{:.6},{},{:.6},{},{:.3}",
            self.split,
            self.epoch.map(|e| e.to_string()).unwrap_or_default(),
            self.dev.accuracy,
            self.dev.macro_f1,
            opt(self.symmetric_accuracy),
            self.dev.noise_dilution,
            opt(self.bias_gap()),
            self.wall_seconds
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.to_csv());
    }
    s
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    fs::write(path, metrics_csv(rows)).map_err(|e| Error::io(path, e))
}

/// `(predicted, gold)` pairs to accuracy and macro-F1.
pub fn accuracy_f1(pairs: &[(usize, usize)], n_classes: usize) -> (f64, f64) {
    if pairs.is_empty() {
        return (0.0, 0.0);
    }
    let correct = pairs.iter().filter(|(p, g)| p == g).count();
    let mut f1 = 0.0;
    for c in 0..n_classes {
        let tp = pairs.iter().filter(|&&(p, g)| p == c && g == c).count() as f64;
        let fp = pairs.iter().filter(|&&(p, g)| p == c && g != c).count() as f64;
        let fnn = pairs.iter().filter(|&&(p, g)| p != c && g == c).count() as f64;
        let denom = 2.0 * tp + fp + fnn;
        if denom > 0.0 {
            f1 += 2.0 * tp / denom;
        }
    }
    (correct as f64 / pairs.len() as f64, f1 / n_classes as f64)
}

pub fn noise_dilution<T: Scalar>(preps: &[Prepared<T>], backdoor: bool) -> f64 {
    let (mut noise, mut nn, mut signal, mut ns) = (0.0, 0usize, 0.0, 0usize);
    for p in preps {
        for (w, &m) in p.adjusted(backdoor).iter().zip(&p.noise_mask) {
            if m {
                noise += w;
                nn += 1;
            } else {
                signal += w;
                ns += 1;
            }
        }
    }
    if nn == 0 || ns == 0 {
        return f64::NAN;
    }
    (noise / nn as f64) / (signal / ns as f64)
}

/// Mean and sample standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}
