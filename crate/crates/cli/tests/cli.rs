use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set", "encoder_dim=16",
    "--set", "model_dim=8",
    "--set", "latent=4",
    "--set", "n_samples=40",
    "--set", "n_test=20",
    "--set", "epochs=2",
    "--set", "lr=0.1",
];

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualpath"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn with_small<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(SMALL.iter().copied()).collect()
}

#[test]
fn gen_train_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run_dir = tmp.path().join("run");
    let (data_s, run_s) = (data.to_str().unwrap(), run_dir.to_str().unwrap());

    let o = run(&with_small(&["gen-data", "--seed", "3", "--out", data_s]));
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["train.jsonl", "test_iid.jsonl", "test_symmetric.jsonl"] {
        assert!(data.join(f).is_file());
    }

    let corpus_kv = format!("corpus={data_s}");
    let mut args = with_small(&["train", "--seed", "3", "--ablation", "no-backdoor", "--out", run_s]);
    args.extend(["--set", &corpus_kv]);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["checkpoint.bin", "checkpoint.json", "metrics.csv", "config.txt"] {
        assert!(run_dir.join(f).is_file(), "{f}");
    }
    let metrics = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(metrics.starts_with("schema_version,split,epoch,accuracy"));

    let o = run(&["eval", "--run", run_s]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.lines().nth(1).unwrap().starts_with("1,eval-no-backdoor,"));
}

#[test]
fn grad_check_passes_on_tiny_model() {
    let o = run(&[
        "grad-check", "--samples", "2",
        "--set", "encoder_dim=16", "--set", "model_dim=8", "--set", "latent=4",
        "--set", "n_evidence_max=4", "--set", "vocab_size=100",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8(o.stdout).unwrap().contains("ok max_rel_error="));
}

#[test]
fn ablate_writes_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = run(&with_small(&["ablate", "--replicates", "2", "--out", out]));
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(Path::new(out).join("ablation.csv")).unwrap();
    let modes: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(modes, ["none", "alpha-zero", "no-backdoor", "no-frontdoor"]);
}

#[test]
fn errors_are_one_machine_readable_line() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.txt");
    let o = run(&["train", "--config", missing.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error: kind=io msg="), "{err}");

    let o = run(&["train", "--set", "lr=-1", "--out", tmp.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error: kind=config msg="));

    let o = run(&["eval", "--run", tmp.path().join("absent").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error: kind="));
}
