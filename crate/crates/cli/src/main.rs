use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dualpath_core::harness::model::init_params;
use dualpath_core::harness::{
    self, build_dataset, evaluate_checkpoint, load_or_generate, model_grad_check, run_ablation,
    write_ablation_csv, write_corpus, Ablation, RunConfig, CONFIG_FILE,
};
use dualpath_core::{Error, Result};

#[derive(Parser)]
#[command(name = "dualpath", version, about = "Debiased claim verification over claim-evidence graphs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// `key = value` config file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` overrides, applied last
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic corpus as JSONL
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model and write checkpoint, metrics and config
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ablation: Option<Ablation>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a trained run directory
    Eval {
        #[command(flatten)]
        common: Common,
        /// Run directory written by `train`
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        ablation: Option<Ablation>,
    },
    /// Replicated ablation study
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        replicates: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the training loss
    GradCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        samples: usize,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
}

fn load_config(common: &Common, base: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match (&common.config, base) {
        (Some(p), _) => RunConfig::from_file(p)?,
        (None, Some(p)) => RunConfig::from_file(p)?,
        (None, None) => RunConfig::default(),
    };
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
        cfg.data.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData { common, out } => {
            let cfg = load_config(&common, None)?;
            let corpus = load_or_generate(&RunConfig { corpus: None, ..cfg })?;
            write_corpus(&out, &corpus)?;
            println!(
                "wrote {} train, {} test_iid, {} test_symmetric samples to {}",
                corpus.train.len(),
                corpus.test_iid.len(),
                corpus.test_symmetric.len(),
                out.display()
            );
        }
        Cmd::Train { common, ablation, out } => {
            let mut cfg = load_config(&common, None)?;
            if let Some(a) = ablation {
                cfg.ablation = a;
            }
            if let Some(o) = out {
                cfg.out = o;
            }
            let res = harness::train(&cfg)?;
            for r in &res.rows {
                println!("{}", r.to_csv());
            }
            println!("best epoch {} written to {}", res.best_epoch, cfg.out.display());
        }
        Cmd::Eval { common, run, ablation } => {
            let cfg = load_config(&common, Some(&run.join(CONFIG_FILE)))?;
            let corpus = load_or_generate(&cfg)?;
            let mode = ablation.unwrap_or(cfg.ablation);
            let row = evaluate_checkpoint(&run, &cfg, &corpus, mode)?;
            println!("{}", harness::metrics::METRICS_HEADER);
            println!("{}", row.to_csv());
        }
        Cmd::Ablate { common, replicates, out } => {
            let mut cfg = load_config(&common, None)?;
            if let Some(o) = out {
                cfg.out = o;
            }
            cfg.validate()?;
            let corpus = load_or_generate(&cfg)?;
            let summaries = run_ablation(&cfg, &corpus, replicates)?;
            write_ablation_csv(&cfg.out, &summaries)?;
            print!("{}", harness::ablation_csv(&summaries));
        }
        Cmd::GradCheck {
            common,
            samples,
            tolerance,
        } => {
            let mut cfg = load_config(&common, None)?;
            cfg.data.n_samples = samples.max(1);
            cfg.data.n_test = 1;
            cfg.validate()?;
            let corpus = load_or_generate(&cfg)?;
            let data = build_dataset::<f64>(&cfg, &corpus)?;
            let params = init_params::<f64>(&cfg, data.encoder_dim, data.n_classes)?;
            let mut worst = 0.0f64;
            for (i, prep) in data.train.iter().enumerate().take(samples) {
                let rep = model_grad_check(&params, prep, &cfg, cfg.ablation, i, 1e-5)?;
                println!("sample {i}: max_rel_error={:.3e} worst={}", rep.max_error, rep.worst);
                worst = worst.max(rep.max_error);
            }
            if !(worst < tolerance) {
                return Err(Error::Invalid {
                    op: "grad-check",
                    msg: format!("max relative error {worst:.3e} exceeds {tolerance:.1e}"),
                });
            }
            println!("ok max_rel_error={worst:.3e}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: kind={} msg={e}", e.kind());
            ExitCode::FAILURE
        }
    }
}
