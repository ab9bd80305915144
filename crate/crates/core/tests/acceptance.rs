//! Acceptance suite. Every test prints one `ACCEPT` line with its verdict
//! and measured values, then asserts.
//!
//! Run with `cargo test -p dualpath-core --test acceptance -- --nocapture`
//! to see the report lines.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use dualpath_core::autodiff::{Tape, Var};
use dualpath_core::backdoor::{augment, gnn, normalized_adjacency, AugmentConfig, GnnConfig};
use dualpath_core::datagen::generate;
use dualpath_core::frontdoor::{beam_search_paths, enumerate_paths, expected_bias, kmeans, ConfusionDictionary};
use dualpath_core::harness::model::{init_params, prepare_all};
use dualpath_core::harness::{
    build_dataset, model_grad_check, run_ablation, train_dataset, Ablation, AblationSummary, RunConfig,
};
use dualpath_core::encoder::Encoder;
use dualpath_core::params::{ParamStore, CHECKPOINT_BIN, CHECKPOINT_MANIFEST};
use dualpath_core::{grad_check, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: u32, name: &str, pass: bool, detail: String) {
    println!(
        "ACCEPT {id:>2} {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
}

/// Settings shared by the training-based criteria.
fn train_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.encoder.dim = 64;
    c.fusion.model_dim = 16;
    c.augment.latent = 8;
    c.lr = 0.2;
    c.epochs = 20;
    c.data.n_samples = 2000;
    c.data.n_test = 500;
    c
}

// ---------------------------------------------------------------- 1

type Case = (&'static str, Box<dyn Fn(&mut Tape<f32>, Var) -> Result<Var>>, Vec<usize>);

/// Reduces any output to a scalar through a fixed random projection, so
/// every output coordinate contributes to the checked gradient.
fn project(t: &mut Tape<f32>, out: Var, seed: u64) -> Result<Var> {
    let shape = t.value(out).shape().to_vec();
    let r = Tensor::<f32>::randn(&shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
    let r = t.constant(r);
    let m = t.mul(out, r)?;
    Ok(t.sum(m))
}

fn primitive_cases(seed: u64) -> Vec<Case> {
    let c = |s: u64, shape: &[usize]| Tensor::<f32>::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed * 31 + s));
    let b34 = c(1, &[3, 4]);
    let b14 = c(2, &[1, 4]);
    let b42 = c(3, &[4, 2]);
    let b33 = c(4, &[3, 3]);
    let eps = c(5, &[3, 4]);
    let (h, cell) = (c(6, &[1, 3]), c(7, &[1, 3]));
    let w = c(8, &[7, 12]);
    let bias = c(9, &[1, 12]);
    let target = (seed % 4) as usize;
    vec![
        ("matmul", Box::new(move |t, x| {
            let b = t.constant(b42.clone());
            t.matmul(x, b)
        }), vec![3, 4]),
        ("add_broadcast", Box::new(move |t, x| {
            let b = t.constant(b14.clone());
            t.add(x, b)
        }), vec![3, 4]),
        ("sub", Box::new(move |t, x| {
            let b = t.constant(b34.clone());
            t.sub(b, x)
        }), vec![3, 4]),
        ("mul", Box::new(move |t, x| t.mul(x, x)), vec![3, 4]),
        ("scale", Box::new(|t, x| Ok(t.scale(x, -1.7))), vec![3, 4]),
        ("concat", Box::new(move |t, x| {
            let b = t.constant(b33.clone());
            let r = t.concat(&[x, b], 1)?;
            t.concat(&[r, r], 0)
        }), vec![3, 2]),
        ("slice_cols", Box::new(|t, x| t.slice_cols(x, 1, 2)), vec![3, 4]),
        ("transpose", Box::new(|t, x| t.transpose(x)), vec![3, 4]),
        ("mean_rows", Box::new(|t, x| t.mean(x, 0)), vec![3, 4]),
        ("mean_cols", Box::new(|t, x| t.mean(x, 1)), vec![3, 4]),
        ("sum", Box::new(|t, x| Ok(t.sum(x))), vec![3, 4]),
        ("tanh", Box::new(|t, x| Ok(t.tanh(x))), vec![3, 4]),
        ("sigmoid", Box::new(|t, x| Ok(t.sigmoid(x))), vec![3, 4]),
        ("exp", Box::new(|t, x| Ok(t.exp(x))), vec![3, 4]),
        ("softmax", Box::new(|t, x| t.softmax(x, 1)), vec![3, 4]),
        ("l2_norm", Box::new(|t, x| Ok(t.l2_norm(x))), vec![3, 4]),
        ("gather_rows", Box::new(|t, x| t.gather_rows(x, &[2, 0, 2])), vec![3, 4]),
        ("gaussian_sample", Box::new(move |t, x| {
            let sd = t.exp(x);
            t.gaussian_sample(x, sd, eps.clone())
        }), vec![3, 4]),
        ("cross_entropy", Box::new(move |t, x| t.cross_entropy(x, target)), vec![1, 4]),
        ("lstm_cell", Box::new(move |t, x| {
            let (hv, cv, wv, bv) = (t.constant(h.clone()), t.constant(cell.clone()), t.constant(w.clone()), t.constant(bias.clone()));
            t.lstm_cell(x, hv, cv, wv, bv)
        }), vec![1, 4]),
    ]
}

#[test]
fn c01_gradients_match_finite_differences() {
    const EPS: f64 = 1e-2;
    const TOL: f64 = 1e-3;
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut cases = 0;
    let mut note = |err: f64, name: String| {
        if !(err <= worst.0) {
            worst = (if err.is_nan() { f64::INFINITY } else { err }, name);
        }
    };

    // 80 primitive cases: 20 primitives x 4 draws
    for seed in 0..4u64 {
        for (name, f, shape) in primitive_cases(seed) {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let x = Tensor::<f32>::randn(&shape, 1.0, &mut rng);
            let err = grad_check(
                |t, v| {
                    let out = f(t, v)?;
                    project(t, out, 77 + seed)
                },
                &x,
                EPS,
            );
            note(err, format!("{name}#{seed}"));
            cases += 1;
        }
    }
    // relu, kept clear of the kink
    for seed in 0..4u64 {
        let x = Tensor::<f32>::randn(&[3, 4], 1.0, &mut ChaCha8Rng::seed_from_u64(50 + seed))
            .map(|v| if v.abs() < 0.1 { v + 0.3 } else { v });
        let err = grad_check(
            |t, v| {
                let out = t.relu(v);
                project(t, out, 99 + seed)
            },
            &x,
            EPS,
        );
        note(err, format!("relu#{seed}"));
        cases += 1;
    }

    // end-to-end training loss on 16 graphs, all ablation modes
    let mut cfg = RunConfig::default();
    cfg.encoder.dim = 16;
    cfg.fusion.model_dim = 8;
    cfg.augment.latent = 4;
    cfg.data.n_samples = 16;
    cfg.data.n_test = 1;
    cfg.data.n_evidence_max = 5;
    cfg.data.vocab_size = 100;
    let corpus = generate(&cfg.data).unwrap();
    let data = build_dataset::<f32>(&cfg, &corpus).unwrap();
    let params: ParamStore<f32> = init_params(&cfg, data.encoder_dim, data.n_classes).unwrap();
    for (i, prep) in data.train.iter().enumerate() {
        let mode = Ablation::ALL[i % 4];
        let rep = model_grad_check(&params, prep, &cfg, mode, i, EPS).unwrap();
        note(rep.max_error, format!("loss[{mode}]#{i}:{}", rep.worst));
        cases += 1;
    }

    let elapsed = start.elapsed();
    let pass = cases >= 100 && worst.0 < TOL && elapsed < Duration::from_secs(60);
    report(
        1,
        "grad check f32",
        pass,
        format!(
            "{cases} cases, max rel err {:.2e} at {}, tol {TOL:.0e}, {:.1}s",
            worst.0,
            worst.1,
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 2

#[test]
fn c02_beam_search_equals_enumeration() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    let mut total_paths = 0;
    for _ in 0..200 {
        let n = rng.random_range(2..=8);
        let max_len = rng.random_range(2..=n.max(2));
        let p: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut row: Vec<f64> = (0..n)
                    .map(|j| if i == j || rng.random::<f64>() < 0.2 { 0.0 } else { rng.random::<f64>() + 0.01 })
                    .collect();
                let s: f64 = row.iter().sum();
                if s > 0.0 {
                    row.iter_mut().for_each(|v| *v /= s);
                }
                row
            })
            .collect();
        let all = enumerate_paths(&p, max_len).unwrap();
        total_paths += all.len();
        let beam = beam_search_paths(&p, max_len, all.len().max(1)).unwrap();
        if beam != all {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = mismatches == 0 && elapsed < Duration::from_secs(30);
    report(
        2,
        "beam search vs exhaustive",
        pass,
        format!(
            "200 graphs, {total_paths} paths, {mismatches} mismatches, {:.2}s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 3

#[test]
fn c03_noise_dilution() {
    let mut cfg = RunConfig::default();
    cfg.data.n_samples = 100;
    cfg.data.n_test = 1;
    cfg.data.noise_fraction = 0.3;
    cfg.data.seed = 3;
    let corpus = generate(&cfg.data).unwrap();
    let enc = Encoder::new(cfg.encoder.clone()).unwrap();
    let preps = prepare_all::<f32>(&corpus.train, &enc, &cfg).unwrap();
    let mut wins = 0;
    for p in &preps {
        let adj = p.adjusted(true);
        let (mut nz, mut nn, mut sg, mut ns) = (0.0, 0, 0.0, 0);
        for (w, &m) in adj.iter().zip(&p.noise_mask) {
            if m {
                nz += w;
                nn += 1;
            } else {
                sg += w;
                ns += 1;
            }
        }
        assert!(nn > 0 && ns > 0);
        if nz / (nn as f64) < sg / (ns as f64) {
            wins += 1;
        }
    }
    let pass = wins >= 90;
    report(
        3,
        "noise dilution",
        pass,
        format!("noise mean < signal mean in {wins}/100 graphs, need >= 90"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 4

#[test]
fn c04_augmentation_counters_oversmoothing() {
    let feat = 16;
    let mut ratios = Vec::new();
    let (mut with_sum, mut without_sum) = (0.0, 0.0);
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let mut p = ParamStore::<f64>::new(seed);
        let gcfg = GnnConfig {
            layers: 4,
            mix_init: 0.5,
        };
        let acfg = AugmentConfig {
            latent: 8,
            lambda: 1.0,
        };
        gnn::init_params(&mut p, feat, &gcfg, &mut rng).unwrap();
        augment::init_params(&mut p, feat, &acfg, &mut rng).unwrap();
        let x = Tensor::<f64>::randn(&[8, feat], 1.0, &mut rng);
        let eps = augment::sample_noise::<f64, _>(7, acfg.latent, &mut rng);
        let weights: Vec<f64> = (0..7).map(|_| rng.random::<f64>() + 0.1).collect();
        let s: f64 = weights.iter().sum();
        let adj = normalized_adjacency::<f64>(&weights.iter().map(|w| w / s).collect::<Vec<_>>());
        let run = |w2: f64| {
            let mut q = p.clone();
            q.replace(gnn::W2, Tensor::scalar(w2));
            let mut t = Tape::new();
            let b = q.bind(&mut t, false);
            let xv = t.constant(x.clone());
            let gen = augment::forward(&mut t, &b, xv, eps.clone(), &acfg).unwrap().generated;
            let h = gnn::forward(&mut t, &b, xv, Some(gen), &adj, 4).unwrap();
            gnn::mean_pairwise_distance(t.value(h))
        };
        let (a, z) = (run(0.5), run(0.0));
        with_sum += a;
        without_sum += z;
        ratios.push(a / z);
    }
    let ratio = with_sum / without_sum;
    let pass = ratio >= 1.5;
    report(
        4,
        "over-smoothing",
        pass,
        format!(
            "mean distance {:.4} with vs {:.4} without augmentation, ratio {ratio:.2}, need >= 1.5",
            with_sum / 20.0,
            without_sum / 20.0
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 5 and 6

struct AblationRun {
    summaries: Vec<AblationSummary>,
    elapsed: Duration,
}

fn ablation() -> &'static AblationRun {
    static RUN: OnceLock<AblationRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = train_config();
        let start = Instant::now();
        let corpus = generate(&cfg.data).unwrap();
        let summaries = run_ablation(&cfg, &corpus, 5).unwrap();
        AblationRun {
            summaries,
            elapsed: start.elapsed(),
        }
    })
}

fn summary(mode: Ablation) -> &'static AblationSummary {
    ablation().summaries.iter().find(|s| s.mode == mode).unwrap()
}

#[test]
fn c05_debiasing_helps_on_symmetric_split() {
    let run = ablation();
    let (full, full_sd) = summary(Ablation::None).symmetric_accuracy();
    let (zero, zero_sd) = summary(Ablation::AlphaZero).symmetric_accuracy();
    let delta = 100.0 * (full - zero);
    // the timed run trains all three modes, a superset of what this needs
    let pass = delta >= 5.0 && run.elapsed < Duration::from_secs(600);
    report(
        5,
        "symmetric debias",
        pass,
        format!(
            "symmetric acc full {:.1}±{:.1} vs alpha-zero {:.1}±{:.1}, delta {delta:+.1} pts (need >= 5), 5 seeds, {:.0}s",
            100.0 * full,
            100.0 * full_sd,
            100.0 * zero,
            100.0 * zero_sd,
            run.elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn c06_full_model_beats_stage_ablations() {
    let (full, _) = summary(Ablation::None).accuracy();
    let (nb, _) = summary(Ablation::NoBackdoor).accuracy();
    let (nf, _) = summary(Ablation::NoFrontdoor).accuracy();
    let (sfull, _) = summary(Ablation::None).symmetric_accuracy();
    let (snb, _) = summary(Ablation::NoBackdoor).symmetric_accuracy();
    let (snf, _) = summary(Ablation::NoFrontdoor).symmetric_accuracy();
    let d_nb = 100.0 * (full - nb);
    let d_nf = 100.0 * (full - nf);
    let pass = d_nb >= 1.0 && d_nf >= 1.0;
    report(
        6,
        "ablation direction",
        pass,
        format!(
            "dev acc full {:.1}, no-backdoor {:.1} ({d_nb:+.1}), no-frontdoor {:.1} ({d_nf:+.1}), need both >= +1; \
             symmetric acc full {:.1}, no-backdoor {:.1}, no-frontdoor {:.1}",
            100.0 * full,
            100.0 * nb,
            100.0 * nf,
            100.0 * sfull,
            100.0 * snb,
            100.0 * snf
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 7

#[test]
fn c07_kmeans() {
    let mut monotone = true;
    let mut max_iters = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let pts: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..3).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect())
            .collect();
        let r = kmeans(&pts, 4, 100, 0.0, &mut rng).unwrap();
        monotone &= r.wcss_history.windows(2).all(|w| w[1] <= w[0] + 1e-12);
        max_iters = max_iters.max(r.iterations);
    }

    // two tight symmetric blobs; their exact means are the true centers
    let truth = [[-5.0, 1.0], [4.0, -3.0]];
    let offsets = [[0.1, 0.0], [-0.1, 0.0], [0.0, 0.1], [0.0, -0.1], [0.05, 0.05], [-0.05, -0.05]];
    let pts: Vec<Vec<f64>> = truth
        .iter()
        .flat_map(|c| offsets.iter().map(move |o| vec![c[0] + o[0], c[1] + o[1]]))
        .collect();
    let r = kmeans(&pts, 2, 100, 1e-9, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let mut err = 0.0f64;
    for t in &truth {
        let best = r
            .centers
            .iter()
            .map(|c| (c[0] - t[0]).abs().max((c[1] - t[1]).abs()))
            .fold(f64::INFINITY, f64::min);
        err = err.max(best);
    }
    let pass = monotone && max_iters <= 100 && err < 1e-3;
    report(
        7,
        "k-means",
        pass,
        format!("WCSS non-increasing: {monotone}, max iterations {max_iters} (cap 100), 2-blob center error {err:.1e}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 8

#[test]
fn c08_monte_carlo_expected_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (n_classes, k, d) = (3, 6, 4);
    let centers: Vec<Vec<Vec<f64>>> = (0..n_classes)
        .map(|_| (0..k).map(|_| (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).collect())
        .collect();
    let dict = ConfusionDictionary::from_centers(centers);
    let mean = dict.mean();
    let total = n_classes * k;

    let full = expected_bias(&dict, total, 3, 1).unwrap();
    let exact_err = full
        .iter()
        .zip(&mean)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    // sampling M of K without replacement, averaged over T draws
    let (m, t) = (2usize, 10_000usize);
    let est = expected_bias(&dict, m, t, 2).unwrap();
    let flat = dict.flat();
    let mut worst_z = 0.0f64;
    for c in 0..d {
        let var = flat.iter().map(|z| (z[c] - mean[c]).powi(2)).sum::<f64>() / total as f64;
        let se = (var / m as f64 * (total - m) as f64 / (total - 1) as f64 / t as f64).sqrt();
        worst_z = worst_z.max((est[c] - mean[c]).abs() / se);
    }
    let pass = exact_err < 1e-6 && worst_z <= 3.0;
    report(
        8,
        "monte carlo expectation",
        pass,
        format!("M=K error {exact_err:.1e} (tol 1e-6); T=1e4 worst |z| {worst_z:.2} (need <= 3)"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 9

#[test]
fn c09_elbo_moving_average_non_decreasing() {
    let feat = 6;
    let cfg = AugmentConfig {
        latent: 3,
        lambda: 1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut p = ParamStore::<f64>::new(9);
    augment::init_params(&mut p, feat, &cfg, &mut rng).unwrap();
    let x = Tensor::<f64>::randn(&[5, feat], 1.0, &mut rng);
    // common random numbers: one fixed noise draw for every step
    let eps = augment::sample_noise::<f64, _>(4, cfg.latent, &mut rng);
    let lr = 0.01;
    let mut elbos = Vec::with_capacity(500);
    for _ in 0..500 {
        let mut t = Tape::new();
        let b = p.bind(&mut t, true);
        let xv = t.constant(x.clone());
        let out = augment::forward(&mut t, &b, xv, eps.clone(), &cfg).unwrap();
        elbos.push(t.value(out.elbo).item());
        let neg = t.scale(out.elbo, -1.0);
        let g = t.backward(neg).unwrap();
        let updates: Vec<(String, Tensor<f64>)> = b
            .iter()
            .filter_map(|(name, v)| g.get(v).map(|g| (name.to_string(), g.clone())))
            .collect();
        for (name, g) in updates {
            let w = p.get_mut(&name).unwrap();
            for (a, d) in w.data_mut().iter_mut().zip(g.data()) {
                *a -= lr * d;
            }
        }
    }
    let ma: Vec<f64> = elbos.windows(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
    let drops = ma.windows(2).filter(|w| w[1] < w[0] - 1e-12).count();
    let pass = drops == 0;
    report(
        9,
        "ELBO monotone",
        pass,
        format!(
            "500 steps, ELBO {:.4} -> {:.4}, {drops} decreases of the 10-step moving average",
            elbos[0],
            elbos[499]
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 10

fn mask_wall_seconds(csv: &str) -> String {
    csv.lines()
        .map(|l| match l.rsplit_once(',') {
            Some((head, _)) => head.to_string(),
            None => l.to_string(),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn c10_runs_are_byte_identical() {
    let mut cfg = RunConfig::default();
    cfg.encoder.dim = 16;
    cfg.fusion.model_dim = 8;
    cfg.augment.latent = 4;
    cfg.data.n_samples = 60;
    cfg.data.n_test = 20;
    cfg.epochs = 2;
    cfg.lr = 0.1;
    let dirs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for d in &dirs {
        let corpus = generate(&cfg.data).unwrap();
        dualpath_core::harness::write_corpus(&d.path().join("data"), &corpus).unwrap();
        let data = build_dataset::<f32>(&cfg, &corpus).unwrap();
        train_dataset(&cfg, &data, Some(&d.path().join("run"))).unwrap();
    }
    let read = |d: &tempfile::TempDir, rel: &str| std::fs::read(d.path().join(rel)).unwrap();
    let mut same = Vec::new();
    for rel in [
        "data/train.jsonl",
        "data/test_iid.jsonl",
        "data/test_symmetric.jsonl",
        &format!("run/{CHECKPOINT_BIN}"),
        &format!("run/{CHECKPOINT_MANIFEST}"),
        "run/config.txt",
    ] {
        same.push((rel.to_string(), read(&dirs[0], rel) == read(&dirs[1], rel)));
    }
    let m = |d: &tempfile::TempDir| mask_wall_seconds(&String::from_utf8(read(d, "run/metrics.csv")).unwrap());
    same.push(("run/metrics.csv (wall_seconds masked)".into(), m(&dirs[0]) == m(&dirs[1])));
    let differing: Vec<&str> = same.iter().filter(|(_, s)| !s).map(|(r, _)| r.as_str()).collect();
    let pass = differing.is_empty();
    report(
        10,
        "determinism",
        pass,
        format!("{} artifacts compared, differing: {:?}", same.len(), differing),
    );
    assert!(pass);
}
