use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn roca(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roca"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn prepare_small(dir: &Path, seed: &str, out: &str) -> Output {
    roca(
        dir,
        &["--seed", seed, "--out", out, "prepare", "--train-windows", "150", "--eval-windows", "200"],
    )
}

fn hash_of(o: &Output) -> String {
    let s = stdout(o);
    let start = s.find("hash ").expect("hash printed") + 5;
    s[start..start + 16].to_string()
}

#[test]
fn prepare_is_deterministic_and_idempotent() {
    let t = tempfile::tempdir().unwrap();
    let a = prepare_small(t.path(), "7", "a");
    assert_eq!(code(&a), 0, "{a:?}");
    assert!(stdout(&a).starts_with("wrote"));
    let again = prepare_small(t.path(), "7", "a");
    assert!(stdout(&again).starts_with("unchanged"));
    let b = prepare_small(t.path(), "7", "b");
    assert_eq!(hash_of(&a), hash_of(&b));
    assert_eq!(
        fs::read(t.path().join("a/synthetic/test.csv")).unwrap(),
        fs::read(t.path().join("b/synthetic/test.csv")).unwrap()
    );
    let c = prepare_small(t.path(), "8", "c");
    assert_ne!(hash_of(&a), hash_of(&c));
}

#[test]
fn train_then_eval_round_trip() {
    let t = tempfile::tempdir().unwrap();
    let dir = t.path();
    assert_eq!(code(&prepare_small(dir, "1", "data")), 0);
    let tr = roca(
        dir,
        &[
            "--out", "run", "train", "--data", "data", "--variant", "roca", "--nu", "0.05", "--epochs", "12",
            "--pollution-rate", "0.05",
        ],
    );
    assert_eq!(code(&tr), 0, "{}", String::from_utf8_lossy(&tr.stderr));
    for f in ["model.json", "config.toml", "manifest.json", "epochs.tsv", "batches.tsv", "labels.tsv"] {
        assert!(dir.join("run/synthetic").join(f).is_file(), "{f} missing");
    }
    // Labels follow the per-batch budget once warm-up (10 epochs) is over.
    let log = fs::read_to_string(dir.join("run/synthetic/batches.tsv")).unwrap();
    let mut post = 0;
    for line in log.lines().skip(1) {
        let c: Vec<&str> = line.split('\t').collect();
        let (epoch, size, labels, budget): (usize, usize, usize, usize) =
            (c[0].parse().unwrap(), c[2].parse().unwrap(), c[3].parse().unwrap(), c[4].parse().unwrap());
        assert_eq!(budget, (0.05 * size as f64).round() as usize);
        if epoch < 10 {
            assert_eq!(labels, 0);
        } else {
            assert_eq!(labels, budget);
            post += 1;
        }
    }
    assert!(post > 0);

    let e1 = roca(dir, &["--out", "e1", "eval", "run", "--metrics", "PW,PA,PA%K(20),RPA"]);
    assert_eq!(code(&e1), 0, "{}", String::from_utf8_lossy(&e1.stderr));
    let e2 = roca(dir, &["--out", "e2", "eval", "run", "--metrics", "PW,PA,PA%K(20),RPA"]);
    assert_eq!(code(&e2), 0);
    let r1 = fs::read_to_string(dir.join("e1/results.tsv")).unwrap();
    assert_eq!(r1, fs::read_to_string(dir.join("e2/results.tsv")).unwrap());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("run/run.json")).unwrap()).unwrap();
    let hash = manifest["subsets"][0]["manifest"].as_str().unwrap();
    let rows: Vec<&str> = r1.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.ends_with(hash)));
    for block in ["PW F1", "PA F1", "PA%K(20) F1", "RPA F1"] {
        assert!(stdout(&e1).contains(block), "{block}");
    }

    let ras = roca(dir, &["--out", "e3", "eval", "--data", "data", "--ras", "--ras-seeds", "2"]);
    assert_eq!(code(&ras), 0);
    let r3 = fs::read_to_string(dir.join("e3/results.tsv")).unwrap();
    assert_eq!(r3.lines().skip(1).filter(|l| l.contains("\tras\t")).count(), 8);
    assert!(r3.lines().skip(1).all(|l| !l.ends_with('\t')));

    let rep = roca(dir, &["report", "e1/results.tsv", "e3/results.tsv", "--ablation", "RPA"]);
    assert_eq!(code(&rep), 0);
    assert!(stdout(&rep).contains("synthetic RPA F1"));
    assert!(stdout(&rep).contains('±'));
}

#[test]
fn exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let dir = t.path();
    assert_eq!(code(&prepare_small(dir, "2", "data")), 0);
    assert_eq!(code(&roca(dir, &["train", "--data", "data", "--variant", "bogus"])), 2);
    assert_eq!(code(&roca(dir, &["train", "--data", "data", "--no-such-flag"])), 2);
    assert_eq!(code(&roca(dir, &["frobnicate"])), 2);
    assert_eq!(code(&roca(dir, &["--help"])), 0);
    assert_eq!(code(&roca(dir, &["train", "--data", "missing"])), 3);
    assert_eq!(code(&roca(dir, &["--profile", "swat", "train", "--data", "data"])), 3);
    assert_eq!(code(&roca(dir, &["report", "absent.tsv"])), 3);
    fs::write(dir.join("bad.toml"), "profile = \"synthetic\"\nmystery = 1\n").unwrap();
    assert_eq!(code(&roca(dir, &["--config", "bad.toml", "train", "--data", "data"])), 2);
    fs::write(dir.join("ok.toml"), "profile = \"synthetic\"\n").unwrap();
    assert_eq!(
        code(&roca(dir, &["--config", "ok.toml", "--profile", "aiops", "train", "--data", "data"])),
        2
    );
    assert_eq!(code(&roca(dir, &["eval"])), 2);
}

#[test]
fn sweep_with_one_repetition_is_degenerate() {
    let t = tempfile::tempdir().unwrap();
    let dir = t.path();
    assert_eq!(code(&prepare_small(dir, "3", "data")), 0);
    let o = roca(
        dir,
        &[
            "--out", "sw", "sweep", "--data", "data", "--param", "pr", "--values", "0,0.05", "--repetitions", "1",
            "--variants", "coca,roca", "--epochs", "2",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let boxes = fs::read_to_string(dir.join("sw/boxplot.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = boxes.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert_eq!(r[2], "1");
        assert!(r[3..8].iter().all(|q| *q == r[3]));
    }
    let lines = fs::read_to_string(dir.join("sw/lines.tsv")).unwrap();
    assert_eq!(lines.lines().filter(|l| l.starts_with("coca\t")).count(), 2);
    assert_eq!(lines.lines().filter(|l| l.starts_with("roca\t")).count(), 2);
    assert_eq!(fs::read_dir(dir.join("sw/cells")).unwrap().count(), 4);
    let bad = roca(dir, &["sweep", "--data", "data", "--param", "nu", "--values", "1.5"]);
    assert_eq!(code(&bad), 2);
}
