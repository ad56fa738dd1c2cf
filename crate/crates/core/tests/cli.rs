use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rigidgraph::teacher::ContactParams;
use rigidgraph::trajectory::Trajectory;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rigidgraph")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = cli(args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

/// Failing invocation: returns the single stderr line.
fn fails(args: &[&str]) -> String {
    let o = cli(args);
    assert!(!o.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error kind="), "{err}");
    err
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn theta() -> ContactParams {
    ContactParams { d0: 0.92, d_width: 0.97, width: 0.005, midpoint: 0.05, power: 2.0, time_constant: 0.01, damping_ratio: 1.0, mu: 0.3 }
}

/// Writes `theta.txt` and a four-trajectory scaled dataset under `root`.
fn small_dataset(root: &Path) -> PathBuf {
    let th = root.join("theta.txt");
    std::fs::write(&th, theta().to_text()).unwrap();
    let ds = root.join("ds");
    ok(&["scale", "--out", s(&ds), &format!("theta={}", s(&th)), "n_trajectories=4", "steps=8", "--seed", "3"]);
    ds
}

fn tiny_model(root: &Path, ds: &Path) -> PathBuf {
    let out = root.join("train");
    ok(&["train", "--out", s(&out), &format!("dataset={}", s(ds)), "latent=8", "layers=1", "updates=20", "batch=2", "val_every=10", "val_fraction=0.25"]);
    out.join("model.ckpt")
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# comment\nbudget=10\nbudgte=20\n").unwrap();
    let err = fails(&["identify", "--config", s(&cfg), "--out", s(dir.path())]);
    assert!(err.contains("kind=invalid_input") && err.contains("budgte"), "{err}");
    let err = fails(&["identify", "--out", s(dir.path()), "bogus=1"]);
    assert!(err.contains("bogus"), "{err}");
}

#[test]
fn identify_requires_demos() {
    let dir = tempfile::tempdir().unwrap();
    let err = fails(&["identify", "--out", s(dir.path())]);
    assert!(err.contains("demos"), "{err}");
    let err = fails(&["identify", "--out", s(dir.path()), "demos=/nonexistent/a.traj"]);
    assert!(err.contains("kind=io") && err.contains("/nonexistent/a.traj"), "{err}");
}

#[test]
fn scale_writes_dataset_matching_theta() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path());
    let manifest = read(ds.join("manifest"));
    assert!(manifest.contains("count=4\n"));
    assert_eq!(std::fs::read_dir(ds.join("scaled")).unwrap().count(), 4);
    assert_eq!(ContactParams::from_text(&manifest).unwrap(), ContactParams::from_text(&read(dir.path().join("theta.txt"))).unwrap());
    assert!(read(ds.join("config.txt")).contains("seed=3\n"));
    // Same resolved config, same manifest.
    let again = dir.path().join("ds2");
    ok(&["scale", "--config", s(&ds.join("config.txt")), "--out", s(&again)]);
    assert_eq!(read(again.join("manifest")), manifest);
    assert_eq!(read(again.join("scaled/2.traj")), read(ds.join("scaled/2.traj")));
}

#[test]
fn identify_improves_on_the_box_center_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path());
    let demos = format!("demos={},{}", s(&ds.join("scaled/0.traj")), s(&ds.join("scaled/1.traj")));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&["identify", "--out", s(out), &demos, "budget=30", "--seed", "5"]);
    }
    let text = read(a.join("theta.txt"));
    let get = |k: &str| -> f64 { text.lines().find_map(|l| l.strip_prefix(&format!("{k}="))).unwrap().parse().unwrap() };
    assert!(get("loss") < get("initial_loss"));
    ContactParams::from_text(&text).unwrap();
    assert!(read(a.join("ident_history.csv")).starts_with("gen,best_loss\n0,"));
    for f in ["theta.txt", "ident_history.csv", "config.txt"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }
}

#[test]
fn train_rollout_optimize_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path());
    let ckpt = tiny_model(dir.path(), &ds);
    let curve = read(ckpt.with_file_name("train_curve.csv"));
    assert!(curve.starts_with("update,train_mse,val_mse\n0,"));
    assert_eq!(curve.lines().last().unwrap().split(',').next(), Some("20"));

    // Resuming continues the update count.
    let resumed = dir.path().join("resumed");
    ok(&["train", "--config", s(&ckpt.with_file_name("config.txt")), "--out", s(&resumed), &format!("resume={}", s(&ckpt)), "updates=10"]);
    let curve = read(resumed.join("train_curve.csv"));
    assert!(curve.lines().nth(1).unwrap().starts_with("20,"), "{curve}");
    assert!(curve.lines().last().unwrap().starts_with("30,"), "{curve}");

    // Rollout against a dataset trajectory, then against its own prediction.
    let ro = dir.path().join("ro");
    let traj = ds.join("scaled/0.traj");
    ok(&["rollout", "--out", s(&ro), &format!("checkpoint={}", s(&ckpt)), &format!("initial={}", s(&traj))]);
    let pred = Trajectory::load(&ro.join("pred.traj")).unwrap();
    assert_eq!(pred.num_frames(), 9);
    let errors = read(ro.join("errors.csv"));
    assert!(errors.starts_with("step,body,position_error,angle_error\n"));
    assert_eq!(errors.lines().count(), 1 + 8 * 3);
    let self_cmp = dir.path().join("self");
    ok(&["rollout", "--out", s(&self_cmp), &format!("checkpoint={}", s(&ckpt)), &format!("initial={}", s(&traj)), &format!("reference={}", s(&ro.join("pred.traj")))]);
    for line in read(self_cmp.join("errors.csv")).lines().skip(1) {
        let cols: Vec<f64> = line.split(',').skip(2).map(|v| v.parse().unwrap()).collect();
        assert_eq!(cols, vec![0.0, 0.0], "{line}");
    }

    // Built-in stress scene.
    let bowl = dir.path().join("bowl");
    ok(&["rollout", "--out", s(&bowl), &format!("checkpoint={}", s(&ckpt)), "scene=bowling", "steps=20"]);
    let pred = Trajectory::load(&bowl.join("pred.traj")).unwrap();
    assert_eq!((pred.num_frames(), pred.num_bodies()), (21, 12));
    assert!(!bowl.join("errors.csv").exists());

    // Body-count mismatch between scene and reference.
    let err = fails(&["rollout", "--out", s(&bowl), &format!("checkpoint={}", s(&ckpt)), "scene=bowling", &format!("reference={}", s(&traj))]);
    assert!(err.contains("bodies"), "{err}");

    let opt = dir.path().join("opt");
    ok(&["optimize", "--out", s(&opt), &format!("checkpoint={}", s(&ckpt)), "iters=2", "--seed", "1"]);
    let csv = read(opt.join("optim_run.csv"));
    assert!(csv.starts_with("iteration,loss,v_x,v_y\n0,"));
    let losses: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(losses.windows(2).all(|w| w[1] <= w[0]));

    let err = fails(&["optimize", "--out", s(&opt), &format!("checkpoint={}", s(&ckpt)), "target_radius=-0.01"]);
    assert!(err.contains("kind=invalid_input"), "{err}");
}

#[test]
fn bad_checkpoint_header_names_the_version() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("bad.ckpt");
    std::fs::write(&ckpt, "some-other-format-v9\n").unwrap();
    let err = fails(&["optimize", "--out", s(dir.path()), &format!("checkpoint={}", s(&ckpt))]);
    assert!(err.contains("kind=format") && err.contains("rigidgraph-model-v1"), "{err}");
}

#[test]
fn train_rejects_missing_dataset_files() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path());
    std::fs::remove_file(ds.join("scaled/3.traj")).unwrap();
    let err = fails(&["train", "--out", s(dir.path()), &format!("dataset={}", s(&ds)), "updates=1"]);
    assert!(err.contains("3.traj"), "{err}");
}
