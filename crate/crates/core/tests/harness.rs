use std::fs;
use std::path::Path;

use ddnet::data::{synth_generate, Dataset};
use ddnet::harness::{self, EpochLog, TrainConfig};
use ddnet::model::{Model, ModelConfig};
use ddnet::Error;

fn load(dir: &Path, n: usize, size: usize, seed: u64) -> (Dataset, Dataset) {
    let set = synth_generate(n, size, seed, dir).unwrap();
    (Dataset::load(&set.train, (size, size)).unwrap(), Dataset::load(&set.test, (size, size)).unwrap())
}

fn tiny_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        model: ModelConfig::tiny(),
        learning_rate: 1e-3,
        batch_size: 4,
        epochs,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn first_epoch_lowers_the_desk_loss() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = load(dir.path(), 200, 64, 0);
    for seed in 0..3 {
        let cfg = TrainConfig {
            epochs: 1,
            seed,
            ..TrainConfig::desk()
        };
        let out = harness::train(&cfg, &train, None, None, |_| {}).unwrap();
        let (l0, l1) = (out.log[0].loss, out.log[1].loss);
        assert!(l1 < l0, "seed {seed}: epoch 1 {l1} vs epoch 0 {l0}");
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = load(dir.path(), 12, 16, 3);
    let mut cfg = tiny_config(1, 5);
    cfg.learning_rate = 0.0;
    let out = harness::train(&cfg, &train, None, None, |_| {}).unwrap();
    let fresh = Model::<f32>::build(&cfg.model, cfg.seed).unwrap();
    for (a, b) in out.model.params().iter().zip(fresh.params().iter()) {
        let same = a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(same, "{} moved", a.name);
    }
}

#[test]
fn same_seed_same_run() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = load(&dir.path().join("data"), 20, 16, 1);
    let run = |name: &str, seed: u64| {
        let out_dir = dir.path().join(name);
        let mut lines = Vec::new();
        let mut cfg = tiny_config(3, seed);
        cfg.checkpoint_interval = 2;
        harness::train(&cfg, &train, Some(&test), Some(&out_dir), |l| lines.push(l.to_string())).unwrap();
        (lines, fs::read(out_dir.join("final.ckpt")).unwrap(), out_dir)
    };
    let (la, ca, da) = run("a", 9);
    let (lb, cb, _) = run("b", 9);
    let (lc, _, _) = run("c", 10);
    assert_eq!(la, lb);
    assert_eq!(ca, cb);
    assert_ne!(la, lc);
    assert_eq!(la.len(), 4);
    assert!(da.join("epoch_0002.ckpt").exists());
    assert!(!da.join("epoch_0001.ckpt").exists());
    for line in &la {
        let back = EpochLog::parse(line).unwrap();
        assert!(back.report.is_some());
    }
}

#[test]
fn training_rejects_wrong_image_size() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = load(dir.path(), 5, 24, 0);
    let err = harness::train(&tiny_config(1, 0), &train, None, None, |_| {}).err().unwrap();
    assert!(matches!(err, Error::Data(_)), "{err}");
}

#[test]
fn infer_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let (train, _) = load(&data, 10, 16, 2);
    let model = harness::train(&tiny_config(1, 0), &train, None, None, |_| {}).unwrap().model;
    let maps = dir.path().join("maps");
    let recs = harness::infer(&model, &data.join("images"), Some(&data.join("masks")), &maps, |_| {}).unwrap();
    assert_eq!(recs.len(), 10);
    assert!(recs.iter().all(|r| r.millis >= 0.0));
    let ev = harness::evaluate_dirs(&maps, &data.join("masks")).unwrap();
    assert_eq!(ev.report.count, 10);
    assert_eq!(ev.rows[0].0, "00000");
    let r = ev.report;
    for v in [r.e_measure, r.s_measure, r.weighted_f, r.f_measure, r.mae] {
        assert!((0.0..=1.0).contains(&v), "{r:?}");
    }
}

#[test]
fn masks_scored_against_themselves_are_perfect() {
    let dir = tempfile::tempdir().unwrap();
    synth_generate(6, 32, 4, dir.path()).unwrap();
    let masks = dir.path().join("masks");
    let ev = harness::evaluate_dirs(&masks, &masks).unwrap();
    let r = ev.report;
    for v in [r.e_measure, r.s_measure, r.weighted_f, r.f_measure] {
        assert!((v - 1.0).abs() < 1e-9, "{r:?}");
    }
    assert_eq!(r.mae, 0.0);
}

#[test]
fn unmatched_names_are_all_listed() {
    let dir = tempfile::tempdir().unwrap();
    synth_generate(4, 16, 0, dir.path()).unwrap();
    let pred = dir.path().join("pred");
    fs::create_dir(&pred).unwrap();
    let masks = dir.path().join("masks");
    for name in ["00000", "00001"] {
        fs::copy(masks.join(format!("{name}.png")), pred.join(format!("{name}.png"))).unwrap();
    }
    fs::copy(masks.join("00000.png"), pred.join("extra.png")).unwrap();
    let msg = harness::evaluate_dirs(&pred, &masks).err().unwrap().to_string();
    for name in ["extra", "00002", "00003"] {
        assert!(msg.contains(name), "{msg}");
    }
}

#[test]
fn shared_stems_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    synth_generate(1, 16, 0, dir.path()).unwrap();
    let images = dir.path().join("images");
    fs::copy(images.join("00000.png"), images.join("00000.jpg")).unwrap();
    assert!(matches!(harness::list_images(&images, &["png", "jpg"]), Err(Error::Data(_))));
    assert_eq!(harness::list_images(&images, &["png"]).unwrap().len(), 1);
}

#[test]
fn breakdown_sums_to_total() {
    for cfg in [ModelConfig::tiny(), ModelConfig::desk(), ModelConfig::full()] {
        let m = Model::<f32>::build(&cfg, 0).unwrap();
        let rows = harness::param_breakdown(&m);
        let stages: Vec<&str> = rows.iter().map(|r| r.0.as_str()).collect();
        assert_eq!(stages, ["stem", "block1", "transition", "block2", "head", "deform", "decoder"]);
        assert_eq!(rows.iter().map(|r| r.1).sum::<usize>(), m.param_count());
    }
}

#[test]
fn single_operator_checks() {
    for name in ["conv2d", "deform_conv2d", "ssim_negation"] {
        let row = harness::gradcheck_op(name, 2).unwrap();
        assert!(row.passed(), "{row}");
        assert!(row.checked > 0);
    }
    assert!(harness::gradcheck_op("softmax", 1).is_err());
}

#[test]
fn model_gradients() {
    for (cfg, samples) in [(ModelConfig::tiny(), 3), (ModelConfig::desk(), 1)] {
        let rows = harness::gradcheck_model(&cfg, 0, samples, |_| {}).unwrap();
        assert_eq!(rows.len(), 8);
        for r in &rows {
            assert!(r.passed(), "{r}");
            assert!(r.skipped < r.checked * 8);
        }
    }
}
