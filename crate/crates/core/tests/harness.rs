use dualpath_core::datagen::generate;
use dualpath_core::harness::{
    build_dataset, evaluate, evaluate_checkpoint, load_checkpoint, load_or_generate, train_dataset,
    write_corpus, Ablation, RunConfig,
};
use dualpath_core::params::ParamStore;
use dualpath_core::Error;

fn small() -> RunConfig {
    let mut c = RunConfig::default();
    c.encoder.dim = 16;
    c.fusion.model_dim = 8;
    c.augment.latent = 4;
    c.data.n_samples = 48;
    c.data.n_test = 24;
    c.epochs = 2;
    c.lr = 0.1;
    c
}

#[test]
fn checkpoint_round_trip_reproduces_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let corpus = generate(&cfg.data).unwrap();
    let data = build_dataset::<f32>(&cfg, &corpus).unwrap();
    let res = train_dataset(&cfg, &data, Some(dir.path())).unwrap();
    let direct = evaluate(&res.params, &data.dev, &cfg, Ablation::None, data.n_classes).unwrap();
    let row = evaluate_checkpoint(dir.path(), &cfg, &corpus, Ablation::None).unwrap();
    assert_eq!(row.dev.accuracy, direct.accuracy);
    assert_eq!(row.dev.accuracy, res.best_row().dev.accuracy);
}

#[test]
fn checkpoint_with_other_layout_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let corpus = generate(&cfg.data).unwrap();
    let data = build_dataset::<f32>(&cfg, &corpus).unwrap();
    train_dataset(&cfg, &data, Some(dir.path())).unwrap();
    let mut other = cfg.clone();
    other.fusion.model_dim = 12;
    match load_checkpoint(dir.path(), &other, data.encoder_dim, data.n_classes) {
        Err(Error::ParamMismatch(names)) => assert!(names.iter().any(|n| n.starts_with("fd."))),
        other => panic!("expected a mismatch, got {other:?}", other = other.map(|_| ())),
    }
}

#[test]
fn zero_learning_rate_keeps_metrics_constant() {
    let mut cfg = small();
    cfg.lr = 0.0;
    cfg.epochs = 3;
    let corpus = generate(&cfg.data).unwrap();
    let data = build_dataset::<f32>(&cfg, &corpus).unwrap();
    let res = train_dataset(&cfg, &data, None).unwrap();
    let first = &res.rows[0];
    for r in &res.rows[1..] {
        assert_eq!(r.dev, first.dev);
        assert_eq!(r.symmetric_accuracy, first.symmetric_accuracy);
    }
}

#[test]
fn non_finite_loss_aborts_and_keeps_last_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.epochs = 1;
    let corpus = generate(&cfg.data).unwrap();
    let data = build_dataset::<f32>(&cfg, &corpus).unwrap();
    train_dataset(&cfg, &data, Some(dir.path())).unwrap();

    // an absurd step size drives the loss to infinity
    let mut bad = cfg.clone();
    bad.epochs = 3;
    bad.lr = 1e30;
    bad.grad_clip = 0.0;
    let err = train_dataset(&bad, &data, Some(dir.path())).err();
    assert!(matches!(err, Some(Error::NonFiniteLoss { .. })), "{err:?}");
    let after = ParamStore::<f32>::load_dir(dir.path()).unwrap();
    for (name, t) in after.iter() {
        assert!(t.data().iter().all(|v| v.is_finite()), "{name}");
    }
}

#[test]
fn empty_split_is_an_error() {
    let cfg = small();
    let mut corpus = generate(&cfg.data).unwrap();
    let data = build_dataset::<f32>(&cfg, &corpus).unwrap();
    let params = dualpath_core::harness::model::init_params::<f32>(&cfg, data.encoder_dim, data.n_classes).unwrap();
    assert!(matches!(
        evaluate(&params, &[], &cfg, Ablation::None, data.n_classes),
        Err(Error::Empty(_))
    ));
    corpus.test_iid.clear();
    assert!(build_dataset::<f32>(&cfg, &corpus).is_err());
}

#[test]
fn corpus_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let corpus = generate(&cfg.data).unwrap();
    write_corpus(dir.path(), &corpus).unwrap();
    let mut from_disk = cfg.clone();
    from_disk.corpus = Some(dir.path().to_path_buf());
    assert_eq!(load_or_generate(&from_disk).unwrap(), corpus);
}

#[test]
fn config_text_round_trips() {
    let mut cfg = small();
    cfg.ablation = Ablation::NoFrontdoor;
    let mut back = RunConfig::default();
    back.apply_text(&cfg.to_text()).unwrap();
    assert_eq!(back, cfg);
}
