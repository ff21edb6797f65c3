//! End-to-end runs of the `stereonet` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stereonet::data::{read_pfm_gray, synth_pair, write_image, write_pfm, DisparityField, SynthSpec};

fn stereonet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stereonet"))
        .args(args)
        .env("STEREONET_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.cfg");
    let text = format!(
        "# tiny synthetic run\nk = 2\nmax_disparity = 7\nchannels = 4\nrefiner_channels = 4\niterations = 3\n\
         synth_pairs = 2\nsynth_width = 32\nsynth_height = 16\nsynth_max_disp = 6\n\
         checkpoint = {}\nloss_csv = {}\n{extra}",
        dir.join("model.ckpt").display(),
        dir.join("loss.csv").display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn train_tiny(dir: &Path) -> PathBuf {
    let cfg = tiny_config(dir, "");
    let out = stereonet(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    dir.join("model.ckpt")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_writes_checkpoint_and_loss_history() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train_tiny(dir.path());
    assert!(ckpt.exists());
    let csv = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,lr,loss,epe_fullres");
    assert_eq!(lines.len(), 4);
}

#[test]
fn bad_disparity_range_names_the_rule() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "max_disparity = 8\n");
    let out = stereonet(&["train", "--config", s(&cfg)]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("(D+1)/2^K"), "{}", stderr(&out));
}

#[test]
fn config_errors_fail() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "learning_speed = 3\n");
    let out = stereonet(&["train", "--config", s(&cfg)]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("learning_speed"), "{}", stderr(&out));

    let out = stereonet(&["train", "--config", s(&dir.path().join("missing.cfg"))]);
    assert!(!out.status.success());
}

#[test]
fn infer_writes_disparity_and_visualisation() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train_tiny(dir.path());
    let pair = synth_pair(&SynthSpec::new(32, 16, DisparityField::Constant(3.0), 5)).unwrap();
    let (left, right) = (dir.path().join("l.png"), dir.path().join("r.png"));
    write_image(&left, &pair.left).unwrap();
    write_image(&right, &pair.right).unwrap();
    let (pfm, png) = (dir.path().join("d.pfm"), dir.path().join("d.png"));
    let out = stereonet(&[
        "infer", "--checkpoint", s(&ckpt), "--left", s(&left), "--right", s(&right), "--out", s(&pfm), "--viz", s(&png),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(read_pfm_gray(&pfm).unwrap().shape(), &[16, 32]);
    assert!(png.exists());

    let small = synth_pair(&SynthSpec::new(24, 16, DisparityField::Constant(3.0), 5)).unwrap();
    let other = dir.path().join("small.png");
    write_image(&other, &small.right).unwrap();
    let out = stereonet(&["infer", "--checkpoint", s(&ckpt), "--left", s(&left), "--right", s(&other), "--out", s(&pfm)]);
    assert!(!out.status.success());
}

#[test]
fn infer_rejects_a_mismatched_config() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train_tiny(dir.path());
    let pair = synth_pair(&SynthSpec::new(32, 16, DisparityField::Constant(3.0), 5)).unwrap();
    let img = dir.path().join("l.png");
    write_image(&img, &pair.left).unwrap();
    let other = dir.path().join("other.cfg");
    std::fs::write(&other, "k = 3\nmax_disparity = 15\n").unwrap();
    let out = stereonet(&[
        "infer", "--checkpoint", s(&ckpt), "--left", s(&img), "--right", s(&img), "--out", s(&dir.path().join("d.pfm")),
        "--config", s(&other),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("does not match"), "{}", stderr(&out));
}

#[test]
fn eval_reports_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let pair = synth_pair(&SynthSpec::new(32, 16, DisparityField::Constant(3.5), 1)).unwrap();
    let gt = dir.path().join("gt.pfm");
    write_pfm(&gt, &pair.gt_left.values).unwrap();
    let report = dir.path().join("report.csv");
    let out = stereonet(&["eval", "--pred", s(&gt), "--gt", s(&gt), "--report", s(&report)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(&report).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epe_all,epe_nocc,bad_1px,bad_2px,bad_3px,subpixel_precision,n_pixels"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0].parse::<f64>().unwrap(), 0.0);
    assert_eq!(row[6], "512");

    let out = stereonet(&["eval", "--pred", s(&gt), "--gt", s(&dir.path().join("none.pfm")), "--report", s(&report)]);
    assert!(!out.status.success());
}

#[test]
fn bench_lists_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train_tiny(dir.path());
    let csv = dir.path().join("bench.csv");
    let out = stereonet(&["bench", "--checkpoint", s(&ckpt), "--size", "64x32", "--reps", "10", "--out", s(&csv)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let stages: Vec<&str> = rows.iter().map(|r| r[0]).filter(|&n| n != "total").collect();
    assert_eq!(
        stages,
        ["features", "cost_volume", "filter", "refine_level1", "refine_level0"]
    );
    let sum: f64 = rows.iter().filter(|r| r[0] != "total").map(|r| r[2].parse::<f64>().unwrap()).sum();
    assert!((95.0..=105.0).contains(&sum), "{sum}");
}
