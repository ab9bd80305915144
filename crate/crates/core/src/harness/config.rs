//! Run configuration and its `key = value` text form.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::backdoor::{AugmentConfig, BayesConfig, GnnConfig};
use crate::datagen::GenConfig;
use crate::encoder::{EncoderConfig, EncoderMode};
use crate::error::{Error, Result};
use crate::frontdoor::{FusionConfig, TransitionWeight};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Ablation {
    #[default]
    None,
    NoBackdoor,
    NoFrontdoor,
    AlphaZero,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::None,
        Ablation::NoBackdoor,
        Ablation::NoFrontdoor,
        Ablation::AlphaZero,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoBackdoor => "no-backdoor",
            Ablation::NoFrontdoor => "no-frontdoor",
            Ablation::AlphaZero => "alpha-zero",
        }
    }

    pub fn backdoor(self) -> bool {
        self != Ablation::NoBackdoor
    }

    pub fn frontdoor(self) -> bool {
        self != Ablation::NoFrontdoor
    }

    /// Alpha-zero shares the full model's weights and differs only at
    /// prediction time.
    pub fn training_mode(self) -> Ablation {
        match self {
            Ablation::AlphaZero => Ablation::None,
            m => m,
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown ablation {s:?}; expected none|no-backdoor|no-frontdoor|alpha-zero"
                ))
            })
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub gnn: GnnConfig,
    pub fusion: FusionConfig,
    pub bayes: BayesConfig,
    pub augment: AugmentConfig,
    pub data: GenConfig,
    pub lr: f64,
    /// Global gradient-norm cap per step; 0 disables.
    pub grad_clip: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_epochs: usize,
    /// Weight of the negative ELBO in the training loss.
    pub elbo_weight: f64,
    pub beam: usize,
    pub max_len: usize,
    pub transition_weight: TransitionWeight,
    pub transition_hidden: usize,
    pub ablation: Ablation,
    pub seed: u64,
    /// Directory holding `train.jsonl`, `test_iid.jsonl` and
    /// `test_symmetric.jsonl`; when unset the corpus is generated.
    pub corpus: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            encoder: EncoderConfig::default(),
            gnn: GnnConfig::default(),
            fusion: FusionConfig::default(),
            bayes: BayesConfig::default(),
            augment: AugmentConfig::default(),
            data: GenConfig::default(),
            lr: 1e-3,
            grad_clip: 5.0,
            epochs: 20,
            batch_size: 16,
            warmup_epochs: 1,
            elbo_weight: 1.0,
            beam: 5,
            max_len: 4,
            transition_weight: TransitionWeight::Current,
            transition_hidden: 16,
            ablation: Ablation::None,
            seed: 0,
            corpus: None,
            out: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {v:?}: {e}")))
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.gnn.validate()?;
        self.fusion.validate()?;
        self.bayes.validate()?;
        self.data.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::Config(format!("grad_clip must be >= 0, got {}", self.grad_clip)));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        if self.max_len < 2 {
            return Err(Error::Config(format!("max_len must be >= 2, got {}", self.max_len)));
        }
        if self.beam == 0 || self.augment.latent == 0 || self.transition_hidden == 0 {
            return Err(Error::Config("beam, latent and transition_hidden must be >= 1".into()));
        }
        if let Some(dir) = &self.corpus {
            for f in crate::harness::CORPUS_FILES {
                let p = dir.join(f);
                if !p.is_file() {
                    return Err(Error::Config(format!("corpus file {} not found", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "ablation" => self.ablation = v.parse()?,
            "lr" => self.lr = parse(key, v)?,
            "grad_clip" => self.grad_clip = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "warmup_epochs" => self.warmup_epochs = parse(key, v)?,
            "elbo_weight" => self.elbo_weight = parse(key, v)?,
            "beam" => self.beam = parse(key, v)?,
            "max_len" => self.max_len = parse(key, v)?,
            "transition_weight" => self.transition_weight = v.parse()?,
            "transition_hidden" => self.transition_hidden = parse(key, v)?,
            "corpus" => self.corpus = if v.is_empty() { None } else { Some(v.into()) },
            "out" => self.out = v.into(),
            "encoder_dim" => self.encoder.dim = parse(key, v)?,
            "hash_seed" => self.encoder.hash_seed = parse(key, v)?,
            "embedding_file" => {
                self.encoder.mode = if v.is_empty() {
                    EncoderMode::Hashed
                } else {
                    EncoderMode::EmbeddingFile(v.into())
                }
            }
            "gnn_layers" => self.gnn.layers = parse(key, v)?,
            "mix_init" => self.gnn.mix_init = parse(key, v)?,
            "model_dim" => self.fusion.model_dim = parse(key, v)?,
            "heads" => self.fusion.heads = parse(key, v)?,
            "alpha" => self.fusion.alpha = parse(key, v)?,
            "mc_draws" => self.fusion.mc_draws = parse(key, v)?,
            "mc_centers" => {
                self.fusion.mc_centers = if v.is_empty() { None } else { Some(parse(key, v)?) }
            }
            "fanin_cap" => self.bayes.fanin_cap = parse(key, v)?,
            "variance_tolerance" => self.bayes.variance_tolerance = parse(key, v)?,
            "posterior_clamp" => self.bayes.posterior_clamp = parse(key, v)?,
            "latent" => self.augment.latent = parse(key, v)?,
            "lambda" => self.augment.lambda = parse(key, v)?,
            "n_samples" => self.data.n_samples = parse(key, v)?,
            "n_test" => self.data.n_test = parse(key, v)?,
            "n_classes" => self.data.n_classes = parse(key, v)?,
            "n_evidence_min" => self.data.n_evidence_min = parse(key, v)?,
            "n_evidence_max" => self.data.n_evidence_max = parse(key, v)?,
            "noise_fraction" => self.data.noise_fraction = parse(key, v)?,
            "bias_token" => self.data.bias_token = v.to_string(),
            "train_bias_corr" => self.data.train_bias_corr = parse(key, v)?,
            "test_bias_corr" => self.data.test_bias_corr = parse(key, v)?,
            "vocab_size" => self.data.vocab_size = parse(key, v)?,
            "cue_prob" => self.data.cue_prob = parse(key, v)?,
            "data_seed" => self.data.seed = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("ablation", self.ablation.to_string());
        kv("lr", self.lr.to_string());
        kv("grad_clip", self.grad_clip.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("warmup_epochs", self.warmup_epochs.to_string());
        kv("elbo_weight", self.elbo_weight.to_string());
        kv("beam", self.beam.to_string());
        kv("max_len", self.max_len.to_string());
        kv(
            "transition_weight",
            match self.transition_weight {
                TransitionWeight::Current => "current".into(),
                TransitionWeight::Target => "target".into(),
            },
        );
        kv("transition_hidden", self.transition_hidden.to_string());
        kv(
            "corpus",
            self.corpus.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        );
        kv("out", self.out.display().to_string());
        kv("encoder_dim", self.encoder.dim.to_string());
        kv("hash_seed", self.encoder.hash_seed.to_string());
        kv(
            "embedding_file",
            match &self.encoder.mode {
                EncoderMode::Hashed => String::new(),
                EncoderMode::EmbeddingFile(p) => p.display().to_string(),
            },
        );
        kv("gnn_layers", self.gnn.layers.to_string());
        kv("mix_init", self.gnn.mix_init.to_string());
        kv("model_dim", self.fusion.model_dim.to_string());
        kv("heads", self.fusion.heads.to_string());
        kv("alpha", self.fusion.alpha.to_string());
        kv("mc_draws", self.fusion.mc_draws.to_string());
        kv(
            "mc_centers",
            self.fusion.mc_centers.map(|m| m.to_string()).unwrap_or_default(),
        );
        kv("fanin_cap", self.bayes.fanin_cap.to_string());
        kv("variance_tolerance", self.bayes.variance_tolerance.to_string());
        kv("posterior_clamp", self.bayes.posterior_clamp.to_string());
        kv("latent", self.augment.latent.to_string());
        kv("lambda", self.augment.lambda.to_string());
        kv("n_samples", self.data.n_samples.to_string());
        kv("n_test", self.data.n_test.to_string());
        kv("n_classes", self.data.n_classes.to_string());
        kv("n_evidence_min", self.data.n_evidence_min.to_string());
        kv("n_evidence_max", self.data.n_evidence_max.to_string());
        kv("noise_fraction", self.data.noise_fraction.to_string());
        kv("bias_token", self.data.bias_token.clone());
        kv("train_bias_corr", self.data.train_bias_corr.to_string());
        kv("test_bias_corr", self.data.test_bias_corr.to_string());
        kv("vocab_size", self.data.vocab_size.to_string());
        kv("cue_prob", self.data.cue_prob.to_string());
        kv("data_seed", self.data.seed.to_string());
        s
    }
}
