use std::path::Path;
use std::process::{Command, Output};

use lact_core::formats::{load_image, CheckpointFile};

fn lact(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lact")).args(args).output().expect("spawn lact")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_exits_zero_for_every_subcommand() {
    for sub in ["phantom", "project", "fbp", "tv", "dataset", "train", "infer", "eval", "spectrum"] {
        let o = lact(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("--out") || sub == "eval");
    }
    assert_eq!(lact(&["--version"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    let o = lact(&["fbp", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(lact(&[]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\"train.epochs\": ").unwrap();
    let o = lact(&["phantom", "--config", p(&cfg), "--out", p(&dir.path().join("x.lact"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("malformed config"), "{}", stderr(&o));
    std::fs::write(&cfg, "{\"nonsense\": 1}").unwrap();
    let o = lact(&["phantom", "--config", p(&cfg), "--out", p(&dir.path().join("x.lact"))]);
    assert_eq!(o.status.code(), Some(1));
    let o = lact(&["train", "--data", p(dir.path()), "--arch", "resnet", "--out", "x"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = lact(&["fbp", "--input", p(&dir.path().join("none.lact")), "--out", p(&dir.path().join("o.lact"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing input file"), "{}", stderr(&o));
}

#[test]
fn phantom_project_fbp_tv_spectrum_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = |s: &str| dir.path().join(s);
    let run = |args: &[&str]| {
        let o = lact(args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
        o
    };
    run(&["phantom", "--kind", "shepp-logan", "--grid", "64", "--out", p(&d("ph.lact")), "--png", p(&d("ph.png"))]);
    assert!(d("ph.png").exists() && d("ph.png.json").exists());
    run(&["project", "--input", p(&d("ph.lact")), "--views", "180", "--out", p(&d("s.lact"))]);
    run(&["fbp", "--input", p(&d("s.lact")), "--out", p(&d("full.lact"))]);
    run(&["fbp", "--input", p(&d("s.lact")), "--arc", "120", "--out", p(&d("lim.lact"))]);
    run(&["tv", "--input", p(&d("s.lact")), "--arc", "120", "--iters", "3", "--out", p(&d("tv.lact"))]);
    let full = load_image(d("full.lact")).unwrap();
    assert_eq!(full.n(), 64);
    let truth = load_image(d("ph.lact")).unwrap();
    assert!(lact_core::metrics::psnr(&full, &truth).unwrap() > 20.0);
    let o = run(&["spectrum", "--limited", p(&d("lim.lact")), "--full", p(&d("full.lact")), "--arc", "120", "--out", p(&d("spec.lact"))]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["wedge_energy_fraction"].as_f64().unwrap() > v["wedge_area_fraction"].as_f64().unwrap());
    assert!(d("spec.lact").exists());
}

#[test]
fn dataset_train_infer_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = |s: &str| dir.path().join(s);
    let cfg = d("cfg.json");
    std::fs::write(&cfg, r#"{"arch.depth": 1, "arch.base_channels": 2, "train.patch_size": 16, "train.batch_size": 2, "tv.n_iters": 2}"#)
        .unwrap();
    let run = |args: &[&str]| {
        let o = lact(args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
        o
    };
    run(&["dataset", "--out", p(&d("data")), "--n-images", "5", "--val", "2", "--grid", "32", "--views", "90", "--seed", "3"]);
    let ckpt = d("m.lack");
    run(&["train", "--config", p(&cfg), "--data", p(&d("data")), "--arch", "image_unet", "--epochs", "2", "--out", p(&ckpt)]);
    let log = std::fs::read_to_string(d("m.lack.log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("epoch,lr,train_loss,val_psnr"));
    assert_eq!(log.lines().count(), 3);
    assert!(CheckpointFile::load(&ckpt).unwrap().get("param.1.weight").is_some());

    run(&["infer", "--checkpoint", p(&ckpt), "--input", p(&d("data/limited_0000.lact")), "--out", p(&d("r.lact"))]);
    assert_eq!(load_image(d("r.lact")).unwrap().n(), 32);

    let out = d("metrics.csv");
    run(&["eval", "--config", p(&cfg), "--data", p(&d("data")), "--methods", "fbp,tv,unet", "--unet", p(&ckpt), "--out", p(&out)]);
    let csv = std::fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("slice,fbp_psnr,fbp_nrmse,fbp_ssim,tv_psnr,tv_nrmse,tv_ssim,unet_psnr,unet_nrmse,unet_ssim"));
    assert_eq!(csv.lines().count(), 1 + 2 + 1);
    assert!(csv.lines().last().unwrap().starts_with("mean,"));

    let o = lact(&["eval", "--data", p(&d("data")), "--methods", "proposed"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let o = lact(&[
        "infer",
        "--checkpoint",
        p(&d("data/full_0000.lact")),
        "--input",
        p(&d("data/limited_0000.lact")),
        "--out",
        p(&d("x.lact")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
