use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gmatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmatch"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small, fast experiment: 5 keypoints, tiny feature and hidden dims.
const TINY: &[&str] = &[
    "--k-pt", "5", "--node-dim", "6", "--edge-dim", "3", "--hidden-width", "4", "--tau", "0.2", "--epochs", "2",
    "--pairs-per-epoch", "8", "--eval-pairs", "6", "--lr", "0.001",
];

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn train_then_eval_reproduces_the_record() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("model.ckpt");
    let rec = dir.path().join("record.json");
    let mut args = vec!["train", "--checkpoint", p(&ck), "--record", p(&rec)];
    args.extend_from_slice(TINY);
    let out = gmatch(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    let train_line = stdout(&out);
    assert!(train_line.starts_with("method=pca mean_acc="), "{train_line}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&rec).unwrap()).unwrap();
    assert_eq!(json["epoch_losses"].as_array().unwrap().len(), 2);

    let out = gmatch(&["eval", "--checkpoint", p(&ck)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let acc = |s: &str| s.split_whitespace().find(|t| t.starts_with("mean_acc=")).unwrap().to_string();
    assert_eq!(acc(&stdout(&out)), acc(&train_line));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(
        &cfg,
        r#"
method = "pia"
eval_pairs = 4
hidden_width = 3
tau = 0.3

[data]
source = "synthetic"
k_pt = 5
node_feature_dim = 4
edge_feature_dim = 2

[optimizer]
epochs = 0
"#,
    )
    .unwrap();
    let ck = dir.path().join("m.ckpt");
    let out = gmatch(&["train", "--config", p(&cfg), "--checkpoint", p(&ck), "--method", "pca"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let line = stdout(&out);
    assert!(line.starts_with("method=pca "), "{line}");
    assert!(line.contains("pairs=4 ") && line.contains("epochs=0"), "{line}");
}

#[test]
fn generate_writes_loadable_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("pairs.jsonl");
    let out = gmatch(&[
        "generate", "--out", p(&data), "--count", "3", "--k-pt", "6", "--node-dim", "2", "--edge-dim", "0",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(gmatch::graphs::load_pairs(&data).unwrap().len(), 3);

    // Train and evaluate straight from the file.
    let ck = dir.path().join("m.ckpt");
    let out = gmatch(&[
        "train", "--checkpoint", p(&ck), "--train-data", p(&data), "--eval-data", p(&data), "--hidden-width", "3",
        "--epochs", "1", "--tau", "0.5", "--lr", "0.001",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("pairs=3 "));
}

#[test]
fn sweep_writes_the_results_table() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("r.csv");
    let mut args = vec!["sweep", "--axis", "sigma_feat", "--values", "0.5,1.0", "--methods", "pca,sm", "--out", p(&csv)];
    args.extend_from_slice(TINY);
    let out = gmatch(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = gmatch::harness::read_csv(fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[1].method, "sm");
    assert_eq!(rows[1].epochs, 0);
    assert!(fs::read_to_string(&csv)
        .unwrap()
        .starts_with("method,axis,value,seed,mean_acc,std_acc,epochs,wallclock_s"));
}

#[test]
fn gradcheck_passes() {
    let out = gmatch(&["gradcheck"]);
    assert!(out.status.success(), "{}", stdout(&out));
    assert!(stdout(&out).lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn errors_are_one_categorised_line() {
    let cases: &[(&[&str], &str)] = &[
        (&["train", "--checkpoint", "x", "--method", "sm", "--lr", "0.1"], "error[config]:"),
        (&["eval", "--checkpoint", "/nonexistent/model.ckpt"], "error[io]:"),
        (&["train", "--checkpoint", "x", "--method", "vgg"], "error[config]:"),
        (&["frobnicate"], "error[usage]:"),
    ];
    for (args, prefix) in cases {
        let out = gmatch(args);
        assert!(!out.status.success(), "{args:?}");
        let err = stderr(&out);
        assert_eq!(err.lines().count(), 1, "{err}");
        assert!(err.starts_with(prefix), "{args:?}: {err}");
    }
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("m.ckpt");
    let mut args = vec!["train", "--checkpoint", p(&ck)];
    args.extend_from_slice(TINY);
    assert!(gmatch(&args).status.success());
    let bytes = fs::read(&ck).unwrap();
    fs::write(&ck, &bytes[..bytes.len() - 5]).unwrap();
    let out = gmatch(&["eval", "--checkpoint", p(&ck)]);
    assert!(stderr(&out).starts_with("error[checkpoint]:"), "{}", stderr(&out));
}
