use std::path::Path;
use std::process::{Command, Output};

use cdlnet::checkpoint::{save_checkpoint, CheckpointRecord};
use cdlnet::io::{read_image, write_image};
use cdlnet::model::{ModelConfig, Task, ThresholdMode};
use cdlnet::synth::synth_set;

fn cdlnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdlnet")).args(args).output().expect("spawn cdlnet")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_model(task: Task, path: &Path) {
    let cfg = ModelConfig {
        unrollings: 2,
        subbands: 4,
        filter_size: 3,
        stride: 1,
        channels: if task == Task::Jdd { 3 } else { 1 },
        task,
        threshold: ThresholdMode::Soft,
        adaptive: true,
    };
    save_checkpoint(&CheckpointRecord::fresh(cfg, 3).unwrap(), path).unwrap();
}

fn value(text: &str, key: &str) -> f64 {
    text.split_whitespace()
        .chain(text.lines())
        .find_map(|t| t.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .parse()
        .unwrap()
}

#[test]
fn synth_data_then_estimate_noise() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("imgs");
    let o = cdlnet(&["synth-data", "--out", out.to_str().unwrap(), "--count", "2", "--size", "40", "--seed", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let img = read_image(out.join("synth001.png")).unwrap();
    assert_eq!(img.dims(), (40, 40, 1));

    let o = cdlnet(&["estimate-noise", "--input", out.join("synth000.png").to_str().unwrap(), "--estimator", "pca"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(value(&s, "sigma_hat") >= 0.0);
    assert!(value(&s, "elapsed_ms") >= 0.0);
}

#[test]
fn unknown_estimator_is_rejected() {
    let o = cdlnet(&["estimate-noise", "--input", "x.png", "--estimator", "wavelet"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("wavelet"));
}

#[test]
fn missing_input_is_a_single_line_error() {
    let o = cdlnet(&["estimate-noise", "--input", "/nonexistent/x.png"]);
    assert!(!o.status.success());
    let e = stderr(&o);
    assert_eq!(e.trim_end().lines().count(), 1, "{e}");
    assert!(e.starts_with("error:"));
}

#[test]
fn denoise_synth_mode_matches_eval_row() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    small_model(Task::Denoise, &ckpt);
    let test_dir = dir.path().join("test");
    std::fs::create_dir(&test_dir).unwrap();
    let img = &synth_set(1, 32, 32, 1, 2).unwrap()[0];
    write_image(test_dir.join("a.png"), img).unwrap();

    let out = dir.path().join("den.png");
    let o = cdlnet(&[
        "denoise", "--ckpt", ckpt.to_str().unwrap(), "--input", test_dir.join("a.png").to_str().unwrap(),
        "--out", out.to_str().unwrap(), "--sigma", "25", "--synth", "--seed", "9",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let single = value(&stdout(&o), "psnr");
    assert_eq!(read_image(&out).unwrap().dims(), (32, 32, 1));

    let csv = dir.path().join("r.csv");
    let o = cdlnet(&[
        "eval", "--ckpt", ckpt.to_str().unwrap(), "--test-dir", test_dir.to_str().unwrap(),
        "--sigmas", "25", "--seed", "9", "--out", csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    let row = text.lines().find(|l| l.starts_with("row,a,")).unwrap();
    let from_eval: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
    assert!((single - from_eval).abs() < 1e-5, "{single} vs {from_eval}");
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn denoise_gt_without_sigma_fails() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    small_model(Task::Denoise, &ckpt);
    let input = dir.path().join("a.png");
    write_image(&input, &synth_set(1, 16, 16, 1, 2).unwrap()[0]).unwrap();
    let o = cdlnet(&[
        "denoise", "--ckpt", ckpt.to_str().unwrap(), "--input", input.to_str().unwrap(),
        "--out", dir.path().join("o.png").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--sigma"));
}

#[test]
fn jdd_reports_baseline_and_rejects_denoise_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("j.ckpt");
    small_model(Task::Jdd, &ckpt);
    let input = dir.path().join("c.png");
    write_image(&input, &synth_set(1, 24, 24, 3, 4).unwrap()[0]).unwrap();
    let out = dir.path().join("o.png");
    let o = cdlnet(&[
        "jdd", "--ckpt", ckpt.to_str().unwrap(), "--input", input.to_str().unwrap(),
        "--out", out.to_str().unwrap(), "--sigma", "10",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(value(&s, "psnr_nearest_fill") > 0.0);
    assert_eq!(read_image(&out).unwrap().dims(), (24, 24, 3));

    let den = dir.path().join("d.ckpt");
    small_model(Task::Denoise, &den);
    let o = cdlnet(&[
        "jdd", "--ckpt", den.to_str().unwrap(), "--input", input.to_str().unwrap(),
        "--out", out.to_str().unwrap(), "--sigma", "10",
    ]);
    assert!(!o.status.success());
}

#[test]
fn export_dict_writes_mosaic_dump_and_usage() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    small_model(Task::Denoise, &ckpt);
    let imgs = dir.path().join("imgs");
    std::fs::create_dir(&imgs).unwrap();
    write_image(imgs.join("a.png"), &synth_set(1, 20, 20, 1, 1).unwrap()[0]).unwrap();
    let out = dir.path().join("dict");
    let o = cdlnet(&[
        "export-dict", "--ckpt", ckpt.to_str().unwrap(), "--out", out.to_str().unwrap(),
        "--usage-dir", imgs.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    // 4 filters of 3x3 in a 2x2 grid
    assert_eq!(read_image(out.join("dict.png")).unwrap().dims(), (9, 9, 1));
    let bank = cdlnet::export::load_filter_dump(out.join("dict.bin")).unwrap();
    assert_eq!(bank.num_filters(), 4);
    assert_eq!(std::fs::read_to_string(out.join("usage.csv")).unwrap().lines().count(), 5);
}

#[test]
fn train_writes_checkpoint_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = cdlnet(&["synth-data", "--out", data.to_str().unwrap(), "--count", "6", "--size", "24"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        format!(
            "# tiny run\nunrollings = 2\nsubbands = 4\nfilter_size = 3\ncrop_size = 16\nbatch_size = 2\n\
             max_epochs = 50\nval_every = 1\nval_count = 2\ntrain_dir = {}\n",
            data.display()
        ),
    )
    .unwrap();
    let out = dir.path().join("run");
    let o = cdlnet(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--max-epochs", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = std::fs::read_to_string(out.join("log.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "epoch,loss,val_psnr,lr,backtracks");
    assert_eq!(log.lines().count(), 3);
    let rec = cdlnet::checkpoint::load_checkpoint(out.join("model.ckpt")).unwrap();
    assert_eq!(rec.model.config.unrollings, 2);
}

#[test]
fn train_with_missing_dataset_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "train_dir = /nonexistent/data\n").unwrap();
    let o = cdlnet(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("/nonexistent/data"));
}
