//! Training loop, evaluation and on-disk run layout.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::autodiff::Tape;
use crate::datagen::{generate, load_jsonl, write_jsonl, Corpus};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::frontdoor::{build_confusion_dictionary, expected_bias, ConfusionDictionary};
use crate::harness::config::{Ablation, RunConfig};
use crate::harness::metrics::{accuracy_f1, noise_dilution, write_metrics_csv, Metrics, MetricsRow};
use crate::harness::model::{
    derive_seed, epoch_order, forward, graph_repr, init_params, loss, predict, prepare_all,
    sample_eps, ForwardOpts, Prepared, EXPECTED_BIAS,
};
use crate::harness::CORPUS_FILES;
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.txt";

/// Encoded corpus ready for training.
pub struct Dataset<T: Scalar = f32> {
    pub train: Vec<Prepared<T>>,
    pub dev: Vec<Prepared<T>>,
    pub symmetric: Vec<Prepared<T>>,
    pub n_classes: usize,
    pub encoder_dim: usize,
}

pub fn load_or_generate(cfg: &RunConfig) -> Result<Corpus> {
    match &cfg.corpus {
        None => generate(&cfg.data),
        Some(dir) => {
            let load = |f: &str| load_jsonl(&dir.join(f), cfg.data.n_classes);
            Ok(Corpus {
                train: load(CORPUS_FILES[0])?,
                test_iid: load(CORPUS_FILES[1])?,
                test_symmetric: load(CORPUS_FILES[2])?,
            })
        }
    }
}

/// Writes the three splits under `dir` using the standard file names.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (f, split) in CORPUS_FILES
        .iter()
        .zip([&corpus.train, &corpus.test_iid, &corpus.test_symmetric])
    {
        write_jsonl(&dir.join(f), split)?;
    }
    Ok(())
}

pub fn build_dataset<T: Scalar>(cfg: &RunConfig, corpus: &Corpus) -> Result<Dataset<T>> {
    if corpus.train.is_empty() || corpus.test_iid.is_empty() {
        return Err(Error::Empty("train and dev splits must be non-empty".into()));
    }
    let enc = Encoder::new(cfg.encoder.clone())?;
    Ok(Dataset {
        train: prepare_all(&corpus.train, &enc, cfg)?,
        dev: prepare_all(&corpus.test_iid, &enc, cfg)?,
        symmetric: prepare_all(&corpus.test_symmetric, &enc, cfg)?,
        n_classes: cfg.data.n_classes,
        encoder_dim: enc.dim(),
    })
}

pub fn evaluate<T: Scalar>(
    params: &ParamStore<T>,
    preps: &[Prepared<T>],
    cfg: &RunConfig,
    mode: Ablation,
    n_classes: usize,
) -> Result<Metrics> {
    if preps.is_empty() {
        return Err(Error::Empty("cannot evaluate on an empty corpus".into()));
    }
    let pairs = preps
        .iter()
        .map(|p| predict(params, p, cfg, mode).map(|pr| (pr.argmax(), pr.label)))
        .collect::<Result<Vec<_>>>()?;
    let (accuracy, macro_f1) = accuracy_f1(&pairs, n_classes);
    Ok(Metrics {
        accuracy,
        macro_f1,
        noise_dilution: noise_dilution(preps, mode.backdoor()),
        n: preps.len(),
    })
}

/// Rebuilds the confusion dictionary from the current graph
/// representations and stores the Monte Carlo bias estimate as a buffer.
pub fn refresh_expected_bias<T: Scalar>(
    params: &mut ParamStore<T>,
    train: &[Prepared<T>],
    cfg: &RunConfig,
    mode: Ablation,
    n_classes: usize,
    epoch: usize,
) -> Result<ConfusionDictionary> {
    let reprs = train
        .iter()
        .map(|p| graph_repr(params, p, cfg, mode).map(|r| (r, p.label)))
        .collect::<Result<Vec<_>>>()?;
    let seed = derive_seed(cfg.seed, 0xd1c7, epoch as u64);
    let dict = build_confusion_dictionary(&reprs, n_classes, None, seed)?;
    let e = expected_bias(
        &dict,
        cfg.fusion.centers_per_draw(n_classes),
        cfg.fusion.mc_draws,
        derive_seed(seed, 1, 0),
    )?;
    let d = e.len();
    params.replace(
        EXPECTED_BIAS,
        Tensor::new(vec![1, d], e.into_iter().map(T::from_f64).collect())?,
    );
    Ok(dict)
}

pub struct TrainResult<T: Scalar = f32> {
    /// Weights at the best dev epoch.
    pub params: ParamStore<T>,
    pub rows: Vec<MetricsRow>,
    pub best_epoch: usize,
    pub dictionaries: Vec<ConfusionDictionary>,
}

impl<T: Scalar> TrainResult<T> {
    pub fn best_row(&self) -> &MetricsRow {
        &self.rows[self.best_epoch]
    }
}

/// Plain SGD on batch-averaged gradients, rescaled so their global norm
/// does not exceed `clip` (0 disables clipping).
fn sgd_step<T: Scalar>(params: &mut ParamStore<T>, grads: &BTreeMap<String, Tensor<T>>, lr: f64, n: usize, clip: f64) {
    let mut scale = lr / n as f64;
    if clip > 0.0 {
        let norm = grads
            .values()
            .flat_map(|g| g.data().iter())
            .map(|d| {
                let v = d.as_f64() / n as f64;
                v * v
            })
            .sum::<f64>()
            .sqrt();
        if norm > clip {
            scale *= clip / norm;
        }
    }
    let scale = T::from_f64(scale);
    for (name, g) in grads {
        if let Some(p) = params.get_mut(name) {
            for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                *w = *w - scale * *d;
            }
        }
    }
}

/// Trains on a prepared dataset. When `out` is given, the best checkpoint
/// is written there as soon as it is found and `metrics.csv` after every
/// epoch, so an aborted run leaves the last good state behind.
pub fn train_dataset<T: Scalar>(cfg: &RunConfig, data: &Dataset<T>, out: Option<&Path>) -> Result<TrainResult<T>> {
    cfg.validate()?;
    let start = Instant::now();
    let mode = cfg.ablation.training_mode();
    let eval_mode = cfg.ablation;
    let mut params: ParamStore<T> = init_params(cfg, data.encoder_dim, data.n_classes)?;
    let mut best: Option<(f64, usize, ParamStore<T>)> = None;
    let mut rows = Vec::with_capacity(cfg.epochs);
    let mut dictionaries = Vec::new();
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        fs::write(dir.join(CONFIG_FILE), cfg.to_text()).map_err(|e| Error::io(dir, e))?;
    }

    for epoch in 0..cfg.epochs {
        let order = epoch_order(data.train.len(), cfg.seed, epoch);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut acc: BTreeMap<String, Tensor<T>> = BTreeMap::new();
            for &i in batch {
                let prep = &data.train[i];
                let mut tape = Tape::new();
                let b = params.bind(&mut tape, true);
                let opts = ForwardOpts {
                    mode,
                    eps: Some(sample_eps(prep, cfg, epoch, i)),
                    paths: None,
                };
                let fwd = forward(&mut tape, &b, &params, prep, cfg, &opts)?;
                let l = loss(&mut tape, &fwd, prep.label, cfg.elbo_weight)?;
                if !tape.value(l).item().is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, step });
                }
                let mut grads = tape.backward(l)?;
                for (name, var) in b.iter() {
                    if let Some(g) = grads.take(var) {
                        match acc.get_mut(name) {
                            Some(a) => a.add_assign(&g),
                            None => {
                                acc.insert(name.to_string(), g);
                            }
                        }
                    }
                }
            }
            sgd_step(&mut params, &acc, cfg.lr, batch.len(), cfg.grad_clip);
        }

        if mode.frontdoor() && epoch + 1 >= cfg.warmup_epochs {
            dictionaries.push(refresh_expected_bias(
                &mut params,
                &data.train,
                cfg,
                mode,
                data.n_classes,
                epoch,
            )?);
        }

        let dev = evaluate(&params, &data.dev, cfg, eval_mode, data.n_classes)?;
        let symmetric_accuracy = if data.symmetric.is_empty() {
            None
        } else {
            Some(evaluate(&params, &data.symmetric, cfg, eval_mode, data.n_classes)?.accuracy)
        };
        rows.push(MetricsRow {
            split: "dev".into(),
            epoch: Some(epoch),
            dev,
            symmetric_accuracy,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        if best.as_ref().is_none_or(|(a, _, _)| dev.accuracy > *a) {
            if let Some(dir) = out {
                params.save_dir(dir)?;
            }
            best = Some((dev.accuracy, epoch, params.clone()));
        }
        if let Some(dir) = out {
            write_metrics_csv(&dir.join(METRICS_FILE), &rows)?;
        }
    }

    let (_, best_epoch, params) = match best {
        Some(b) => b,
        None => {
            // zero epochs: the untrained weights are the result
            if let Some(dir) = out {
                params.save_dir(dir)?;
                write_metrics_csv(&dir.join(METRICS_FILE), &rows)?;
            }
            return Ok(TrainResult {
                params,
                rows,
                best_epoch: 0,
                dictionaries,
            });
        }
    };
    Ok(TrainResult {
        params,
        rows,
        best_epoch,
        dictionaries,
    })
}

/// Loads or generates the corpus, trains, and writes the run to `cfg.out`.
pub fn train(cfg: &RunConfig) -> Result<TrainResult<f32>> {
    cfg.validate()?;
    let corpus = load_or_generate(cfg)?;
    let data = build_dataset(cfg, &corpus)?;
    train_dataset(cfg, &data, Some(&cfg.out))
}

/// Loads a checkpoint and checks it against the layout `cfg` implies.
pub fn load_checkpoint(dir: &Path, cfg: &RunConfig, encoder_dim: usize, n_classes: usize) -> Result<ParamStore<f32>> {
    let params = ParamStore::<f32>::load_dir(dir)?;
    let expected: ParamStore<f32> = init_params(cfg, encoder_dim, n_classes)?;
    let bad = params.mismatches(&expected);
    if !bad.is_empty() {
        return Err(Error::ParamMismatch(bad));
    }
    Ok(params)
}

/// Evaluates a saved run on the dev and symmetric splits.
pub fn evaluate_checkpoint(dir: &Path, cfg: &RunConfig, corpus: &Corpus, mode: Ablation) -> Result<MetricsRow> {
    let start = Instant::now();
    let data: Dataset<f32> = build_dataset(cfg, corpus)?;
    let params = load_checkpoint(dir, cfg, data.encoder_dim, data.n_classes)?;
    let dev = evaluate(&params, &data.dev, cfg, mode, data.n_classes)?;
    let symmetric_accuracy = if data.symmetric.is_empty() {
        None
    } else {
        Some(evaluate(&params, &data.symmetric, cfg, mode, data.n_classes)?.accuracy)
    };
    Ok(MetricsRow {
        split: format!("eval-{mode}"),
        epoch: None,
        dev,
        symmetric_accuracy,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}
