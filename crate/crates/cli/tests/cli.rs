use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use wnet::evaluation::parse_report_csv;
use wnet::formats::{dmap::Dmap, heads};
use wnet::groundtruth::{gen_density, KernelParams};
use wnet::model::load_checkpoint;
use wnet::training::parse_loss_curve;

fn wnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wnet"))
        .args(args)
        .env("WNET_THREADS", "0")
        .output()
        .expect("spawn wnet")
}

fn ok(args: &[&str]) -> Output {
    let out = wnet(args);
    assert!(
        out.status.success(),
        "wnet {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files_with_ext(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    v.sort();
    v
}

fn synth(dir: &Path, n: usize, size: usize, seed: u64) {
    ok(&["synth", "--n", &n.to_string(), "--size", &size.to_string(), "--out", s(dir), "--seed", &seed.to_string()]);
}

#[test]
fn synth_writes_pairs_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, 12, 48, 7);
    synth(&b, 12, 48, 7);
    let heads_files = files_with_ext(&a, "heads");
    assert_eq!(heads_files.len(), 12);
    assert_eq!(files_with_ext(&a, "pgm").len(), 12);
    for h in &heads_files {
        let name = h.file_name().unwrap();
        assert_eq!(fs::read(h).unwrap(), fs::read(b.join(name)).unwrap());
        let pgm = h.with_extension("pgm");
        assert_eq!(fs::read(&pgm).unwrap(), fs::read(b.join(pgm.file_name().unwrap())).unwrap());
        let ann = heads::load(h).unwrap();
        assert!((5..=50).contains(&ann.len()), "{} heads", ann.len());
        assert_eq!((ann.width, ann.height), (48, 48));
    }
}

#[test]
fn gen_gt_matches_library_and_conserves_count() {
    let tmp = TempDir::new().unwrap();
    let (data, out) = (tmp.path().join("data"), tmp.path().join("gt"));
    synth(&data, 3, 40, 1);
    ok(&["gen-gt", "--annotations", s(&data), "--out", s(&out)]);
    for h in files_with_ext(&data, "heads") {
        let ann = heads::load(&h).unwrap();
        let map = Dmap::load(&out.join(h.file_stem().unwrap()).with_extension("dmap")).unwrap();
        let want = gen_density(&ann, &KernelParams::default());
        assert_eq!((map.height, map.width), (40, 40));
        for (got, want) in map.values.iter().zip(&want.values) {
            assert_eq!(*got, *want as f32);
        }
        assert!((map.sum() - ann.len() as f64).abs() <= 1e-3 * ann.len() as f64);
    }
}

#[test]
fn gen_gt_adaptive_differs_from_fixed() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 2, 64, 2);
    let (fixed, adaptive) = (tmp.path().join("f"), tmp.path().join("a"));
    ok(&["gen-gt", "--annotations", s(&data), "--out", s(&fixed)]);
    ok(&["gen-gt", "--annotations", s(&data), "--out", s(&adaptive), "--adaptive", "--beta-adapt", "0.3", "--k", "3"]);
    for h in files_with_ext(&data, "heads") {
        let ann = heads::load(&h).unwrap();
        let name = h.file_stem().unwrap();
        let a = Dmap::load(&adaptive.join(name).with_extension("dmap")).unwrap();
        let f = Dmap::load(&fixed.join(name).with_extension("dmap")).unwrap();
        let want = gen_density(&ann, &KernelParams::adaptive());
        assert!(a.values.iter().zip(&want.values).all(|(g, w)| *g == *w as f32));
        assert_ne!(a.values, f.values);
    }
}

#[test]
fn gen_gt_empty_directory_warns_and_succeeds() {
    let tmp = TempDir::new().unwrap();
    let (empty, out) = (tmp.path().join("empty"), tmp.path().join("out"));
    fs::create_dir(&empty).unwrap();
    let o = ok(&["gen-gt", "--annotations", s(&empty), "--out", s(&out)]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    assert!(!out.exists() || fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn gen_gt_names_the_malformed_file() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 2, 32, 3);
    fs::write(data.join("broken.heads"), "HEADS 1\nimage 32 32\ncount 2\n1 1\n").unwrap();
    let o = wnet(&["gen-gt", "--annotations", s(&data), "--out", s(&tmp.path().join("gt"))]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("broken.heads"));
}

#[test]
fn gen_reinf_is_binary_and_deterministic() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 3, 48, 4);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        ok(&["gen-reinf", "--annotations", s(&data), "--out", s(out), "--sigma", "8", "--window", "31", "--threshold", "0.001"]);
    }
    for f in files_with_ext(&a, "dmap") {
        assert_eq!(fs::read(&f).unwrap(), fs::read(b.join(f.file_name().unwrap())).unwrap());
        let map = Dmap::load(&f).unwrap();
        assert!(map.values.iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(map.values.contains(&1.0));
    }
}

#[test]
fn unknown_flags_and_config_keys_are_rejected() {
    let tmp = TempDir::new().unwrap();
    assert!(!wnet(&["synth", "--n", "1", "--out", s(tmp.path()), "--frobnicate"]).status.success());
    let data = tmp.path().join("data");
    synth(&data, 2, 32, 0);
    let cfg = tmp.path().join("cfg.txt");
    fs::write(&cfg, "preset = desk\nlearning_rate = 0.1\n").unwrap();
    let o = wnet(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&tmp.path().join("m.wntc"))]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, format!("preset = desk\ncrop_size = 32\nbatch_size = 2\n{extra}")).unwrap();
    cfg
}

#[test]
fn train_writes_checkpoint_curve_and_ablation_variants() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 4, 48, 9);
    let cfg = write_config(tmp.path(), "epochs = 2\ncheckpoint_every = 1\n");

    let full = tmp.path().join("full.wntc");
    ok(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&full)]);
    let ckpt = load_checkpoint(&full).unwrap();
    assert_eq!(ckpt.config.channel_scale, 8);
    assert!(ckpt.config.reinforcement_enabled);
    assert_eq!(ckpt.epoch, 2);
    assert!(ckpt.optimizer.is_some());
    assert!(tmp.path().join("full.wntc.epoch1").exists());
    let curve = parse_loss_curve(&fs::read_to_string(tmp.path().join("full.wntc.loss.csv")).unwrap()).unwrap();
    assert_eq!(curve.iter().map(|c| c.0).collect::<Vec<_>>(), [1, 2]);
    assert!(curve.iter().all(|c| c.1.is_finite()));

    let ablated = tmp.path().join("ablated.wntc");
    ok(&[
        "train", "--data", s(&data), "--config", s(&cfg), "--out", s(&ablated),
        "--no-reinforcement", "--upsample", "transpose",
    ]);
    let ckpt = load_checkpoint(&ablated).unwrap();
    assert!(!ckpt.config.reinforcement_enabled);
    assert_eq!(ckpt.config.upsample.to_string(), "transpose");
    assert!(ckpt.tensors.iter().all(|t| !t.name.contains("reinf")));

    // Same seed, same files.
    let again = tmp.path().join("again.wntc");
    ok(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&again)]);
    assert_eq!(fs::read(&full).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn eval_rejects_missing_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 1, 32, 0);
    let o = wnet(&[
        "eval", "--checkpoint", s(&tmp.path().join("nope.wntc")), "--data", s(&data),
        "--report", s(&tmp.path().join("r.txt")),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.wntc"));
}

/// Overfits a handful of scenes and evaluates on the same scenes: the
/// count error should be a small fraction of the crowd size, and the text
/// totals must agree with the per-image file.
#[test]
fn eval_after_overfitting_is_close_and_self_consistent() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 4, 128, 5);
    let cfg = tmp.path().join("of.cfg");
    fs::write(&cfg, "preset = desk\nepochs = 300\nbatch_size = 4\ncrop_size = 64\nlr = 0.001\nweight_decay = 0\n").unwrap();
    let ckpt = tmp.path().join("m.wntc");
    ok(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&ckpt)]);
    let report = tmp.path().join("report.txt");
    ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--report", s(&report)]);

    let rows = parse_report_csv(&fs::read_to_string(tmp.path().join("report.txt.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
    let mean_gt = rows.iter().map(|r| r.gt_count).sum::<f64>() / 4.0;
    let mae = rows.iter().map(|r| (r.pred_count - r.gt_count).abs()).sum::<f64>() / 4.0;
    let rmse = (rows.iter().map(|r| (r.pred_count - r.gt_count).powi(2)).sum::<f64>() / 4.0).sqrt();
    assert!(mae <= 0.15 * mean_gt, "MAE {mae} vs mean count {mean_gt}");

    let text = fs::read_to_string(&report).unwrap();
    let field = |key: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(key)).unwrap();
        line[key.len()..].trim().parse().unwrap()
    };
    assert!((field("MAE") - mae).abs() < 1e-4);
    assert!((field("RMSE") - rmse).abs() < 1e-4);
    assert_eq!(field("images"), 4.0);
}

#[test]
fn gradcheck_passes_and_lists_every_op() {
    let o = ok(&["gradcheck", "--seeds", "1"]);
    let text = String::from_utf8_lossy(&o.stdout);
    for op in ["conv2d", "transpose_conv2d", "batchnorm2d", "maxpool2x2", "relu", "sigmoid"] {
        assert!(text.lines().any(|l| l.contains(op) && l.contains("max rel err")), "{op} missing:\n{text}");
    }
    assert!(text.contains(", 0 failed"));
}
