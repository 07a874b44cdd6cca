use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vrinr::metrics::{psnr, ssim};
use vrinr::video::{add_gaussian_noise, load_frames, save_frames, synthetic_video};
use vrinr::{Checkpoint, FrameSequence};

fn vrinr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vrinr"))
        .args(args)
        .env_remove("VRINR_THREADS")
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn frames(dir: &Path, seq: &FrameSequence) -> PathBuf {
    save_frames(seq, dir).unwrap();
    dir.to_path_buf()
}

const SMALL: &str = "\
train.scale=2
train.batch=64
train.lr0=0.005
model.patch_sizes=3,5
model.grid_resolutions=8,4
model.table_log2_size=8
model.hidden=16
";

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.cfg");
    std::fs::write(&path, SMALL).unwrap();
    path
}

#[test]
fn degrade_quarters_the_frame_and_writes_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let hr = frames(&tmp.path().join("hr"), &synthetic_video(1, 256, 256, 0));
    let out = tmp.path().join("lr");
    let o = vrinr(&["degrade", "--in", p(&hr), "--out", p(&out), "--scale", "4", "--gaussian", "30", "--seed", "5"]);
    assert!(o.status.success(), "{}", text(&o));
    assert_eq!(load_frames(&out).unwrap().dims(), (1, 64, 64));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("degrade.json")).unwrap()).unwrap();
    assert_eq!(manifest["scale"], 4.0);
    assert_eq!(manifest["noise"]["kind"], "gaussian");
    assert_eq!(manifest["noise"]["sigma"], 30.0);
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["output_size"], serde_json::json!([64, 64]));
}

#[test]
fn degrade_is_reproducible_and_zero_noise_is_a_plain_resize() {
    let tmp = tempfile::tempdir().unwrap();
    let hr = frames(&tmp.path().join("hr"), &synthetic_video(2, 16, 16, 1));
    let run = |name: &str, extra: &[&str]| {
        let out = tmp.path().join(name);
        let mut args = vec!["degrade", "--in", p(&hr), "--out", p(&out), "--scale", "2"];
        args.extend_from_slice(extra);
        assert!(vrinr(&args).status.success());
        load_frames(&out).unwrap()
    };
    let clean = run("clean", &[]);
    assert_eq!(run("zero", &["--gaussian", "0"]), clean);
    let a = run("a", &["--poisson", "30", "--seed", "9"]);
    assert_eq!(run("b", &["--poisson", "30", "--seed", "9"]), a);
    assert_ne!(a, clean);
    let both = vrinr(&["degrade", "--in", p(&hr), "--out", "x", "--scale", "2", "--gaussian", "1", "--poisson", "1"]);
    assert_eq!(both.status.code(), Some(2));
    let missing = vrinr(&["degrade", "--in", p(&tmp.path().join("nope")), "--out", "x", "--scale", "2"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn missing_required_flags_are_usage_errors() {
    for args in [
        vec!["train", "--out", "m.ckpt"],
        vec!["restore", "--lr", "x", "--scale", "2", "--out", "y"],
        vec!["evaluate", "--pred", "x", "--gt", "y"],
        vec!["degrade", "--in", "x", "--out", "y"],
        vec!["bogus"],
    ] {
        let o = vrinr(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(text(&o).contains("Usage"), "{args:?}");
    }
}

#[test]
fn zero_epochs_writes_the_initialisation() {
    let tmp = tempfile::tempdir().unwrap();
    let hr = frames(&tmp.path().join("hr"), &synthetic_video(2, 8, 8, 2));
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("m.ckpt");
    let o = vrinr(&["train", "--hr", p(&hr), "--config", p(&cfg), "--epochs", "0", "--seed", "4", "--out", p(&out)]);
    assert!(o.status.success(), "{}", text(&o));
    let ckpt = Checkpoint::load(&out).unwrap();
    assert_eq!(ckpt.epoch, 0);
    assert_eq!(ckpt.to_bytes(), Checkpoint::init(ckpt.config.clone()).unwrap().to_bytes());
    assert_eq!(ckpt.config.seed, 4);
    assert_eq!(ckpt.config.model.levels.len(), 2);
}

#[test]
fn deterministic_runs_are_bitwise_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let hr = frames(&tmp.path().join("hr"), &synthetic_video(2, 8, 8, 3));
    let cfg = small_config(tmp.path());
    let mut runs = Vec::new();
    for (i, threads) in [None, None, Some("3")].into_iter().enumerate() {
        let out = tmp.path().join(format!("m{i}.ckpt"));
        let log = tmp.path().join(format!("log{i}.csv"));
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_vrinr"));
        cmd.args(["train", "--hr", p(&hr), "--config", p(&cfg), "--epochs", "3", "--out", p(&out), "--log", p(&log)]);
        match threads {
            Some(n) => cmd.env("VRINR_THREADS", n),
            None => cmd.arg("--deterministic"),
        };
        let o = cmd.output().unwrap();
        assert!(o.status.success(), "{}", text(&o));
        assert_eq!(String::from_utf8_lossy(&o.stdout).lines().filter(|l| l.starts_with("epoch ")).count(), 3);
        let log = std::fs::read_to_string(&log).unwrap();
        assert!(log.starts_with("epoch,step,lr,loss,psnr\n"));
        assert_eq!(log.lines().count(), 1 + 3 * 2);
        runs.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
}

#[test]
fn resume_continues_to_the_same_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let hr = frames(&tmp.path().join("hr"), &synthetic_video(2, 8, 8, 6));
    let cfg = small_config(tmp.path());
    let full = tmp.path().join("full.ckpt");
    let half = tmp.path().join("half.ckpt");
    let rest = tmp.path().join("rest.ckpt");
    assert!(vrinr(&["train", "--hr", p(&hr), "--config", p(&cfg), "--epochs", "4", "--out", p(&full)]).status.success());
    assert!(vrinr(&["train", "--hr", p(&hr), "--config", p(&cfg), "--epochs", "2", "--out", p(&half)]).status.success());
    let o = vrinr(&["train", "--hr", p(&hr), "--resume", p(&half), "--epochs", "4", "--out", p(&rest)]);
    assert!(o.status.success(), "{}", text(&o));
    let (a, b) = (Checkpoint::load(&full).unwrap(), Checkpoint::load(&rest).unwrap());
    assert_eq!(a.params, b.params);
    assert_eq!(a.epoch, b.epoch);
    let clash = vrinr(&["train", "--hr", p(&hr), "--resume", p(&half), "--seed", "3", "--out", p(&rest)]);
    assert_eq!(clash.status.code(), Some(2));
}

#[test]
fn config_errors_name_the_key_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    let hr = frames(&tmp.path().join("hr"), &synthetic_video(1, 8, 8, 0));
    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "# comment\ntrain.epochs=2\npea.alpha=lots\n").unwrap();
    let o = vrinr(&["train", "--hr", p(&hr), "--config", p(&cfg), "--out", p(&tmp.path().join("m"))]);
    assert_eq!(o.status.code(), Some(2));
    let msg = text(&o);
    assert!(msg.contains("line 3") && msg.contains("pea.alpha"), "{msg}");
    let o = vrinr(&["train", "--hr", p(&hr), "--set", "model.hiden=3", "--out", p(&tmp.path().join("m"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("model.hiden"));
}

#[test]
fn restore_handles_fractional_scales_and_rejects_bad_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let hr = frames(&tmp.path().join("hr"), &synthetic_video(2, 8, 8, 4));
    let lr = frames(&tmp.path().join("lr"), &synthetic_video(2, 5, 7, 4));
    let cfg = small_config(tmp.path());
    let ckpt = tmp.path().join("m.ckpt");
    assert!(vrinr(&["train", "--hr", p(&hr), "--config", p(&cfg), "--epochs", "1", "--out", p(&ckpt)]).status.success());
    let out = tmp.path().join("out");
    let o = vrinr(&["restore", "--ckpt", p(&ckpt), "--lr", p(&lr), "--scale", "2.7", "--out", p(&out)]);
    assert!(o.status.success(), "{}", text(&o));
    assert_eq!(load_frames(&out).unwrap().dims(), (2, 14, 19));
    let noisy = tmp.path().join("noisy");
    let o = vrinr(&["restore", "--ckpt", p(&ckpt), "--lr", p(&lr), "--scale", "2", "--out", p(&noisy), "--gaussian", "30"]);
    assert!(o.status.success(), "{}", text(&o));

    let bad = tmp.path().join("bad.ckpt");
    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes[0] ^= 0xff;
    std::fs::write(&bad, bytes).unwrap();
    let o = vrinr(&["restore", "--ckpt", p(&bad), "--lr", p(&lr), "--scale", "2", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("checkpoint"));
}

#[test]
fn evaluate_reports_infinity_for_identical_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let a = frames(&tmp.path().join("a"), &synthetic_video(3, 16, 16, 5));
    let report = tmp.path().join("r.csv");
    let o = vrinr(&["evaluate", "--pred", p(&a), "--gt", p(&a), "--report", p(&report)]);
    assert!(o.status.success(), "{}", text(&o));
    let csv = std::fs::read_to_string(&report).unwrap();
    assert_eq!(csv.lines().next(), Some("frame,psnr,ssim"));
    assert_eq!(csv.lines().last(), Some("mean,inf,1.000000"));
    assert!(text(&o).contains("inf"));
}

#[test]
fn evaluate_matches_the_library_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let clean = synthetic_video(2, 24, 24, 6);
    let gt = frames(&tmp.path().join("gt"), &clean);
    let pred = frames(&tmp.path().join("pred"), &add_gaussian_noise(&clean, 20.0, 1).unwrap());
    let report = tmp.path().join("r.csv");
    let o = vrinr(&["evaluate", "--pred", p(&pred), "--gt", p(&gt), "--report", p(&report)]);
    assert!(o.status.success(), "{}", text(&o));
    let (x, y) = (load_frames(&pred).unwrap(), load_frames(&gt).unwrap());
    let mean = std::fs::read_to_string(&report).unwrap().lines().last().unwrap().to_string();
    let cols: Vec<f64> = mean.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    assert!((cols[0] - psnr(&x, &y).unwrap()).abs() < 1e-4);
    assert!((cols[1] - ssim(&x, &y).unwrap()).abs() < 1e-6);
}

#[test]
fn evaluate_rejects_missing_and_mismatched_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let a = frames(&tmp.path().join("a"), &synthetic_video(3, 16, 16, 7));
    let b = frames(&tmp.path().join("b"), &synthetic_video(2, 16, 16, 7));
    let report = tmp.path().join("r.csv");
    let o = vrinr(&["evaluate", "--pred", p(&a), "--gt", p(&b), "--report", p(&report)]);
    assert_eq!(o.status.code(), Some(1));
    std::fs::remove_file(a.join("frame_00001.png")).unwrap();
    let o = vrinr(&["evaluate", "--pred", p(&a), "--gt", p(&b), "--report", p(&report)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("missing frame"));
}

#[test]
fn gradcheck_passes_and_lists_every_group() {
    let o = vrinr(&["gradcheck"]);
    let out = text(&o);
    assert!(o.status.success(), "{out}");
    for group in [
        "mlp.none.params",
        "mlp.softmax.input",
        "hash.weight_net",
        "hash.table",
        "fusion.attention",
        "fusion.color",
        "pea.prediction",
        "texture.1",
        "hash_mlp.2",
        "attention.1",
        "color",
        "table.1",
        "table.2",
    ] {
        assert!(out.lines().any(|l| l.starts_with(group)), "missing {group}\n{out}");
    }
}

#[test]
fn gradcheck_catches_a_corrupted_backward() {
    let o = vrinr(&["gradcheck", "--modules-only", "--inject-fault", "hash.table"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("hash.table"), "{err}");
}
