use std::path::Path;
use std::process::{Command, Output};

fn ansemb(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ansemb"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn ansemb")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Generates a small synthetic corpus into `dir/data` and writes `train.conf`.
fn workspace(extra: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(
        root.join("synth.conf"),
        "synth.train_records = 120\nsynth.target_records = 60\nsynth.train_answers = 16\nsynth.target_answers = 16\n",
    )
    .unwrap();
    let o = ansemb(&["gen-synth", "--config", "synth.conf", "--out", "data", "--seed", "2"], root);
    assert!(o.status.success(), "{}", stderr(&o));
    std::fs::write(
        root.join("train.conf"),
        format!(
            "train_data = data/train.tsv\neval_data = data/train.tsv\ntarget_data = data/target.tsv\n\
             features = data/features.txt\nwords = data/words.txt\nepochs = 2\nbatch_size = 16\n{extra}"
        ),
    )
    .unwrap();
    dir
}

#[test]
fn train_then_eval_and_transfer() {
    let dir = workspace("");
    let root = dir.path();
    let o = ansemb(&["train", "--config", "train.conf", "--out", "run"], root);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "run");
    for f in ["checkpoint.txt", "train_log.csv", "manifest"] {
        assert!(root.join("run").join(f).is_file(), "missing {f}");
    }
    let log = std::fs::read_to_string(root.join("run/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.starts_with("epoch,lr,loss,skipped,seconds\n"));
    let manifest = std::fs::read_to_string(root.join("run/manifest")).unwrap();
    assert!(manifest.starts_with("ansemb-manifest 1\n"));
    assert!(manifest.contains("input "));

    let o = ansemb(
        &["eval", "--config", "train.conf", "--checkpoint", "run/checkpoint.txt", "--out", "ev"],
        root,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let preds = std::fs::read_to_string(root.join("ev/predictions.csv")).unwrap();
    assert_eq!(preds.lines().next(), Some("record_id,prediction,correct_flag,seen_flag"));
    assert_eq!(preds.lines().count(), 121);

    let o = ansemb(
        &["transfer", "--config", "train.conf", "--checkpoint", "run/checkpoint.txt", "--out", "tr"],
        root,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report = std::fs::read_to_string(root.join("tr/report.txt")).unwrap();
    assert!(report.contains("unseen"), "{report}");
}

#[test]
fn bad_config_value_exits_two() {
    let dir = workspace("alpha = bogus\n");
    let o = ansemb(&["train", "--config", "train.conf", "--out", "run"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("error[config]: "), "{err}");
    assert!(!err.contains("config: config"), "{err}");
    assert!(!dir.path().join("run/checkpoint.txt").exists());
}

#[test]
fn missing_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.conf"),
        "train_data = nope.tsv\nfeatures = nope.txt\nwords = nope.txt\n",
    )
    .unwrap();
    let o = ansemb(&["train", "--config", "c.conf", "--out", "run"], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn unresolved_image_exits_three() {
    let dir = workspace("");
    let root = dir.path();
    let mut data = std::fs::read_to_string(root.join("data/train.tsv")).unwrap();
    let first = data.lines().find(|l| !l.starts_with('#')).unwrap().to_string();
    let id = first.split('\t').next().unwrap().to_string();
    data.push_str(&first.replacen(&id, "no-such-image", 1));
    data.push('\n');
    std::fs::write(root.join("data/train.tsv"), data).unwrap();
    let o = ansemb(&["train", "--config", "train.conf", "--out", "run"], root);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("no-such-image"));
}

#[test]
fn sweep_writes_one_row_per_m() {
    let dir = workspace("");
    let o = ansemb(
        &["sweep-negatives", "--config", "train.conf", "--m-list", "0,4,8", "--out", "sw"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("sw/sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "m,accuracy,records");
    let ms: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(ms, ["0", "4", "8"]);
}

#[test]
fn export_embeddings_round_trips() {
    let dir = workspace("");
    let root = dir.path();
    assert!(ansemb(&["train", "--config", "train.conf", "--out", "run"], root).status.success());
    let o = ansemb(
        &["export-embeddings", "--config", "train.conf", "--checkpoint", "run/checkpoint.txt", "--out", "ex"],
        root,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read(root.join("ex/embeddings.tsv")).unwrap();
    let index = ansemb::evaluator::parse_embedding_export(text.as_slice(), "embeddings.tsv").unwrap();
    assert_eq!(index.answers().len(), 16);
}

#[test]
fn gradcheck_and_overlap_run() {
    let dir = workspace("");
    let root = dir.path();
    let o = ansemb(&["gradcheck", "--cases", "1", "--out", "gc"], root);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(root.join("gc/gradcheck.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);
    let o = ansemb(
        &["overlap", "data/train.tsv", "data/target.tsv", "--k-list", "5,10", "--out", "ov"],
        root,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(root.join("ov/overlap.csv").is_file());
}

#[test]
fn unknown_subcommand_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ansemb(&["frobnicate"], dir.path()).status.code(), Some(2));
}
