//! Replicated ablation runs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::datagen::Corpus;
use crate::error::{Error, Result};
use crate::harness::config::{Ablation, RunConfig};
use crate::harness::metrics::{mean_std, ABLATION_HEADER, SCHEMA_VERSION};
use crate::harness::model::derive_seed;
use crate::harness::train::{build_dataset, evaluate, train_dataset, Dataset};

pub const ABLATION_FILE: &str = "ablation.csv";

/// Best-checkpoint scores of one replicate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Replicate {
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub symmetric_accuracy: f64,
    pub noise_dilution: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationSummary {
    pub mode: Ablation,
    pub replicates: Vec<Replicate>,
}

impl AblationSummary {
    fn stat(&self, f: impl Fn(&Replicate) -> f64) -> (f64, f64) {
        mean_std(&self.replicates.iter().map(f).collect::<Vec<_>>())
    }

    pub fn accuracy(&self) -> (f64, f64) {
        self.stat(|r| r.accuracy)
    }

    pub fn symmetric_accuracy(&self) -> (f64, f64) {
        self.stat(|r| r.symmetric_accuracy)
    }

    pub fn macro_f1(&self) -> (f64, f64) {
        self.stat(|r| r.macro_f1)
    }

    pub fn to_csv(&self) -> String {
        let (a, sa) = self.accuracy();
        let (s, ss) = self.symmetric_accuracy();
        let (f, sf) = self.macro_f1();
        let (nd, _) = self.stat(|r| r.noise_dilution);
        format!(
            "{SCHEMA_VERSION},{},{},{a:.6},{sa:.6},{s:.6},{ss:.6},{f:.6},{sf:.6},{nd:.6}",
            self.mode,
            self.replicates.len()
        )
    }
}

pub fn replicate_seed(base: u64, r: usize) -> u64 {
    derive_seed(base, 0xab1a, r as u64)
}

/// Trains the full model and the two stage ablations `replicates` times on
/// one corpus. Alpha-zero reuses each full-model checkpoint with the bias
/// branch switched off, so it costs only an evaluation.
pub fn run_ablation(cfg: &RunConfig, corpus: &Corpus, replicates: usize) -> Result<Vec<AblationSummary>> {
    if replicates == 0 {
        return Err(Error::invalid("ablation", "replicates must be at least 1"));
    }
    if corpus.test_symmetric.is_empty() {
        return Err(Error::Empty("ablation needs a symmetric split".into()));
    }
    let data: Dataset<f32> = build_dataset(cfg, corpus)?;
    let mut out: Vec<AblationSummary> = [Ablation::None, Ablation::AlphaZero, Ablation::NoBackdoor, Ablation::NoFrontdoor]
        .into_iter()
        .map(|mode| AblationSummary {
            mode,
            replicates: Vec::new(),
        })
        .collect();
    for r in 0..replicates {
        let seed = replicate_seed(cfg.seed, r);
        for trained in [Ablation::None, Ablation::NoBackdoor, Ablation::NoFrontdoor] {
            let mut c = cfg.clone();
            c.seed = seed;
            c.ablation = trained;
            let res = train_dataset(&c, &data, None)?;
            let evals: &[Ablation] = if trained == Ablation::None {
                &[Ablation::None, Ablation::AlphaZero]
            } else {
                std::slice::from_ref(&c.ablation)
            };
            for &mode in evals {
                let dev = evaluate(&res.params, &data.dev, &c, mode, data.n_classes)?;
                let sym = evaluate(&res.params, &data.symmetric, &c, mode, data.n_classes)?;
                let slot = out.iter_mut().find(|s| s.mode == mode).expect("mode slot");
                slot.replicates.push(Replicate {
                    seed,
                    accuracy: dev.accuracy,
                    macro_f1: dev.macro_f1,
                    symmetric_accuracy: sym.accuracy,
                    noise_dilution: dev.noise_dilution,
                });
            }
        }
    }
    Ok(out)
}

pub fn ablation_csv(summaries: &[AblationSummary]) -> String {
    let mut s = String::from(ABLATION_HEADER);
    s.push('\n');
    for a in summaries {
        let _ = writeln!(s, "{}", a.to_csv());
    }
    s
}

pub fn write_ablation_csv(dir: &Path, summaries: &[AblationSummary]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(ABLATION_FILE);
    fs::write(&path, ablation_csv(summaries)).map_err(|e| Error::io(&path, e))
}
