use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ddnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddnet")).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth(dir: &Path, n: &str, size: &str) {
    let o = ddnet(dir, &["synth", "--n", n, "--size", size, "--seed", "1", "--out", "data"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&ddnet(p, &[])), 1);
    assert_eq!(code(&ddnet(p, &["frobnicate"])), 1);
    assert_eq!(code(&ddnet(p, &["params", "--preset", "huge"])), 1);
    assert_eq!(code(&ddnet(p, &["params", "--variant", "dilated_6"])), 1);
    fs::write(p.join("bad.toml"), "[train]\nbatch_size = 0\n").unwrap();
    assert_eq!(code(&ddnet(p, &["params", "--config", "bad.toml"])), 1);
    assert_eq!(code(&ddnet(p, &["--help"])), 0);
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&ddnet(p, &["train", "--preset", "tiny", "--train", "missing.txt"])), 2);
    fs::write(p.join("junk.ckpt"), b"DDNETCKPT 1\nconfig 99999999\n").unwrap();
    fs::create_dir(p.join("imgs")).unwrap();
    let o = ddnet(p, &["infer", "--checkpoint", "junk.ckpt", "--images", "imgs"]);
    assert_eq!(code(&o), 2);
    synth(p, "4", "16");
    fs::create_dir(p.join("pred")).unwrap();
    fs::copy(p.join("data/masks/00000.png"), p.join("pred/stray.png")).unwrap();
    let o = ddnet(p, &["eval", "--pred", "pred", "--gt", "data/masks"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("stray"));
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synth(p, "8", "16");
    let o = ddnet(
        p,
        &["train", "--preset", "tiny", "--train", "data/train.txt", "--lr", "1e30", "--epochs", "3", "--batch-size", "2", "--out", "run"],
    );
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epoch"));
}

#[test]
fn train_infer_eval_round() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synth(p, "10", "16");
    let o = ddnet(
        p,
        &["train", "--preset", "tiny", "--train", "data/train.txt", "--test", "data/test.txt", "--epochs", "2", "--batch-size", "4", "--seed", "3", "--out", "run"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines.len(), 3);
    for (i, line) in lines.iter().enumerate() {
        let t: Vec<&str> = line.split(' ').collect();
        assert_eq!(t.len(), 14, "{line}");
        assert_eq!((t[0], t[1]), ("epoch", i.to_string().as_str()));
        for (k, key) in ["loss", "E", "S", "Wf", "F", "MAE"].iter().enumerate() {
            assert_eq!(t[2 + 2 * k], *key);
            assert!(t[3 + 2 * k].parse::<f64>().unwrap().is_finite(), "{line}");
        }
    }
    assert_eq!(fs::read_to_string(p.join("run/train.log")).unwrap(), stdout(&o));
    assert!(fs::read_to_string(p.join("run/config.toml")).unwrap().contains("[train]"));

    let o = ddnet(p, &["infer", "--checkpoint", "run/final.ckpt", "--images", "data/images", "--masks", "data/masks", "--out", "maps"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("mean"));
    assert_eq!(fs::read_dir(p.join("maps")).unwrap().count(), 10);

    let o = ddnet(p, &["eval", "--pred", "maps", "--gt", "data/masks", "--out", "scores.csv"]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(p.join("scores.csv")).unwrap();
    assert!(csv.starts_with("name,E,S,Wf,F,MAE\n"));
    assert_eq!(csv.lines().count(), 12);
}

#[test]
fn config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synth(p, "6", "16");
    fs::write(p.join("c.toml"), "[model]\npreset = \"tiny\"\n\n[train]\nepochs = 4\nbatch_size = 3\n").unwrap();
    let o = ddnet(p, &["train", "--config", "c.toml", "--epochs", "1", "--train", "data/train.txt", "--out", "run"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 2);
    assert!(stdout(&o).lines().all(|l| l.ends_with("MAE NaN")));
    let saved = fs::read_to_string(p.join("run/config.toml")).unwrap();
    assert!(saved.contains("epochs = 1") && saved.contains("batch_size = 3"), "{saved}");
}

#[test]
fn params_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = ddnet(dir.path(), &["params", "--preset", "tiny"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("total 4848"));
    assert!(!stdout(&o).contains("reference"));
    let o = ddnet(dir.path(), &["params"]);
    assert!(stdout(&o).contains("reference 3,334,829"));
}

#[test]
fn model_gradcheck_command() {
    let dir = tempfile::tempdir().unwrap();
    let o = ddnet(dir.path(), &["gradcheck", "--scope", "model", "--samples", "1"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("all rows pass"));
}
