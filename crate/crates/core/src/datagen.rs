//! Synthetic claim-verification corpora with annotated noise evidences and a
//! label-correlated bias token, plus JSONL input and output.
//!
//! A claim states a fact `subject relation object`. Relevant evidences
//! restate it next to a cue word that signals the label (or a neutral cue).
//! Not-enough-info evidences talk about the same subject with a different
//! relation and object. Noise evidences use words disjoint from the claim and
//! carry a random, misleading cue.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::tokenize;
use crate::error::{Error, Result};

pub const SUPPORTS: usize = 0;
pub const REFUTES: usize = 1;
pub const NOT_ENOUGH_INFO: usize = 2;
pub const LABEL_NAMES: [&str; 3] = ["SUPPORTS", "REFUTES", "NOT-ENOUGH-INFO"];

pub const SUPPORT_CUES: [&str; 4] = ["confirmed", "verified", "affirmed", "corroborated"];
pub const REFUTE_CUES: [&str; 4] = ["denied", "disproved", "contradicted", "debunked"];
pub const NEUTRAL_CUES: [&str; 4] = ["mentioned", "discussed", "noted", "described"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub claim: String,
    pub evidences: Vec<String>,
    pub label: usize,
    #[serde(default)]
    pub noise_mask: Vec<bool>,
    #[serde(default)]
    pub bias_token_present: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub n_samples: usize,
    pub n_test: usize,
    pub n_classes: usize,
    pub n_evidence_min: usize,
    pub n_evidence_max: usize,
    pub noise_fraction: f64,
    pub bias_token: String,
    pub train_bias_corr: f64,
    pub test_bias_corr: f64,
    pub vocab_size: usize,
    /// Chance that a relevant evidence carries its label's cue rather than a
    /// neutral one.
    pub cue_prob: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_samples: 2000,
            n_test: 500,
            n_classes: 3,
            n_evidence_min: 3,
            n_evidence_max: 8,
            noise_fraction: 0.3,
            bias_token: "flagged".into(),
            train_bias_corr: 0.9,
            test_bias_corr: -0.9,
            vocab_size: 400,
            cue_prob: 0.7,
            seed: 0,
        }
    }
}

impl GenConfig {
    /// Fresh words one sample can need: the fact, plus three per evidence.
    pub fn words_needed(&self) -> usize {
        3 + 3 * self.n_evidence_max
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(2..=3).contains(&self.n_classes) {
            return bad(format!("n_classes must be 2 or 3, got {}", self.n_classes));
        }
        if self.n_evidence_min == 0 || self.n_evidence_min > self.n_evidence_max {
            return bad(format!(
                "evidence range {}..={} is empty or starts at 0",
                self.n_evidence_min, self.n_evidence_max
            ));
        }
        for (name, v) in [("noise_fraction", self.noise_fraction), ("cue_prob", self.cue_prob)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        for (name, v) in [("train_bias_corr", self.train_bias_corr), ("test_bias_corr", self.test_bias_corr)] {
            if !(-1.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [-1, 1], got {v}"));
            }
        }
        if tokenize(&self.bias_token).count() != 1 {
            return bad(format!("bias token {:?} must be a single word", self.bias_token));
        }
        if self.vocab_size < self.words_needed() {
            return Err(Error::invalid(
                "generate",
                format!(
                    "vocab_size {} too small: each sample needs {} distinct words",
                    self.vocab_size,
                    self.words_needed()
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub train: Vec<Sample>,
    pub test_iid: Vec<Sample>,
    pub test_symmetric: Vec<Sample>,
}

fn pseudo_words<R: Rng + ?Sized>(n: usize, reserved: &HashSet<String>, rng: &mut R) -> Vec<String> {
    const CONS: &[u8] = b"bdfgklmnprstvz";
    const VOW: &[u8] = b"aeiou";
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syll = rng.random_range(2..=3);
        let mut w = String::new();
        for _ in 0..syll {
            w.push(CONS[rng.random_range(0..CONS.len())] as char);
            w.push(VOW[rng.random_range(0..VOW.len())] as char);
        }
        if !reserved.contains(&w) && seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

struct Builder<'a> {
    cfg: &'a GenConfig,
    vocab: &'a [String],
}

impl Builder<'_> {
    fn fresh<'v, R: Rng + ?Sized>(&'v self, taken: &mut Vec<&'v str>, rng: &mut R) -> &'v str {
        loop {
            let w = self.vocab[rng.random_range(0..self.vocab.len())].as_str();
            if !taken.contains(&w) {
                taken.push(w);
                return w;
            }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, label: usize, flag: bool, rng: &mut R) -> Sample {
        let mut taken: Vec<&str> = Vec::new();
        let s = self.fresh(&mut taken, rng);
        let r = self.fresh(&mut taken, rng);
        let o = self.fresh(&mut taken, rng);
        let mut claim = format!("{s} {r} {o}");
        if flag {
            claim.push(' ');
            claim.push_str(&self.cfg.bias_token);
        }

        let n_e = rng.random_range(self.cfg.n_evidence_min..=self.cfg.n_evidence_max);
        let n_noise = ((self.cfg.noise_fraction * n_e as f64).round() as usize).min(n_e - 1);
        let mut evidences: Vec<(String, bool)> = Vec::with_capacity(n_e);
        for _ in 0..n_e - n_noise {
            let text = match label {
                NOT_ENOUGH_INFO => {
                    let r2 = self.fresh(&mut taken, rng);
                    let o2 = self.fresh(&mut taken, rng);
                    let cue = *[&SUPPORT_CUES[..], &REFUTE_CUES[..], &NEUTRAL_CUES[..]]
                        .choose(rng)
                        .unwrap()
                        .choose(rng)
                        .unwrap();
                    format!("{s} {r2} {o2} {cue}")
                }
                _ => {
                    let cues = if rng.random_bool(self.cfg.cue_prob) {
                        if label == SUPPORTS {
                            &SUPPORT_CUES
                        } else {
                            &REFUTE_CUES
                        }
                    } else {
                        &NEUTRAL_CUES
                    };
                    format!("{s} {r} {o} {}", cues.choose(rng).unwrap())
                }
            };
            evidences.push((text, false));
        }
        for _ in 0..n_noise {
            let a = self.fresh(&mut taken, rng);
            let b = self.fresh(&mut taken, rng);
            let c = self.fresh(&mut taken, rng);
            let cues = if rng.random_bool(0.5) { &SUPPORT_CUES } else { &REFUTE_CUES };
            evidences.push((format!("{a} {b} {c} {}", cues.choose(rng).unwrap()), true));
        }
        evidences.shuffle(rng);
        let (evidences, noise_mask) = evidences.into_iter().unzip();
        Sample {
            claim,
            evidences,
            label,
            noise_mask,
            bias_token_present: flag,
        }
    }

    /// Balanced labels; the bias token goes on exactly
    /// `round(n_refutes * (1 + rho) / 2)` refuting samples and
    /// `round(n_other * (1 - rho) / 2)` of the rest.
    fn split<R: Rng + ?Sized>(&self, n: usize, rho: f64, rng: &mut R) -> Vec<Sample> {
        let mut labels: Vec<usize> = (0..n).map(|i| i % self.cfg.n_classes).collect();
        labels.shuffle(rng);
        let pick = |idx: Vec<usize>, p: f64, rng: &mut R| -> Vec<usize> {
            let k = (idx.len() as f64 * p).round() as usize;
            let mut idx = idx;
            idx.shuffle(rng);
            idx.truncate(k);
            idx
        };
        let refutes: Vec<usize> = (0..n).filter(|&i| labels[i] == REFUTES).collect();
        let others: Vec<usize> = (0..n).filter(|&i| labels[i] != REFUTES).collect();
        let mut flags = vec![false; n];
        for i in pick(refutes, (1.0 + rho) / 2.0, rng) {
            flags[i] = true;
        }
        for i in pick(others, (1.0 - rho) / 2.0, rng) {
            flags[i] = true;
        }
        (0..n).map(|i| self.sample(labels[i], flags[i], rng)).collect()
    }
}

pub fn generate(cfg: &GenConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let reserved: HashSet<String> = SUPPORT_CUES
        .iter()
        .chain(&REFUTE_CUES)
        .chain(&NEUTRAL_CUES)
        .map(|s| s.to_string())
        .chain(tokenize(&cfg.bias_token))
        .collect();
    let vocab = pseudo_words(cfg.vocab_size, &reserved, &mut rng);
    let b = Builder { cfg, vocab: &vocab };
    Ok(Corpus {
        train: b.split(cfg.n_samples, cfg.train_bias_corr, &mut rng),
        test_iid: b.split(cfg.n_test, cfg.train_bias_corr, &mut rng),
        test_symmetric: b.split(cfg.n_test, cfg.test_bias_corr, &mut rng),
    })
}

/// `P(token | REFUTES) - P(token | other labels)`; equals the phi
/// coefficient for balanced binary labels.
pub fn bias_correlation(samples: &[Sample]) -> f64 {
    let (mut fr, mut nr, mut fo, mut no) = (0usize, 0usize, 0usize, 0usize);
    for s in samples {
        if s.label == REFUTES {
            nr += 1;
            fr += s.bias_token_present as usize;
        } else {
            no += 1;
            fo += s.bias_token_present as usize;
        }
    }
    let rate = |f: usize, n: usize| if n == 0 { 0.0 } else { f as f64 / n as f64 };
    rate(fr, nr) - rate(fo, no)
}

pub fn write_jsonl(path: &Path, samples: &[Sample]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in samples {
        let line = serde_json::to_string(s).expect("sample serialises");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_jsonl(path: &Path, n_classes: usize) -> Result<Vec<Sample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let fmt = |line: usize, msg: String| Error::Format {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut s: Sample = serde_json::from_str(line).map_err(|e| fmt(i + 1, e.to_string()))?;
        if s.label >= n_classes {
            return Err(fmt(i + 1, format!("unknown label {} (n_classes = {n_classes})", s.label)));
        }
        if s.evidences.is_empty() {
            return Err(fmt(i + 1, "sample has no evidences".into()));
        }
        if s.noise_mask.is_empty() {
            s.noise_mask = vec![false; s.evidences.len()];
        } else if s.noise_mask.len() != s.evidences.len() {
            return Err(fmt(
                i + 1,
                format!("noise_mask has {} entries for {} evidences", s.noise_mask.len(), s.evidences.len()),
            ));
        }
        out.push(s);
    }
    Ok(out)
}
