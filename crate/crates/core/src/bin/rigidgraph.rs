use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rigidgraph::datagen::{bowling_scene, load_dataset, save_dataset, scale_dataset, ScalingSpec};
use rigidgraph::error::{Error, Result};
use rigidgraph::gnn::{checkpoint, rollout, train_from, Architecture, RolloutErrors, TrainConfig, GRAVITY};
use rigidgraph::optimctl::{canonical_push_task, optimize_push};
use rigidgraph::sysid::{identify, initial_scene, IdentDataset, ParamBounds};
use rigidgraph::teacher::ContactParams;
use rigidgraph::trajectory::Trajectory;

#[derive(Parser)]
#[command(name = "rigidgraph", version, about = "Contact identification, data scaling, learned dynamics and push optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// `key=value` config file; `#` starts a comment.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Fit contact parameters to demo trajectories: theta.txt, ident_history.csv.
    Identify { overrides: Vec<String> },
    /// Generate a scaled dataset (manifest plus trajectories) from identified parameters.
    Scale { overrides: Vec<String> },
    /// Train the learned simulator: model.ckpt, train_curve.csv.
    Train { overrides: Vec<String> },
    /// Roll a checkpoint out from a trajectory's first frame or a built-in scene: pred.traj, errors.csv.
    Rollout { overrides: Vec<String> },
    /// Optimize the pusher's initial velocity on the push task: optim_run.csv.
    Optimize { overrides: Vec<String> },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error kind={} message={:?}", e.kind(), e.to_string());
            ExitCode::FAILURE
        }
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

/// Resolved `key=value` settings of one command.
struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    fn resolve(defaults: Vec<(&str, String)>, file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Config> {
        let mut values: BTreeMap<String, String> = defaults.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let mut set = |k: &str, v: &str, origin: &str| -> Result<()> {
            match values.get_mut(k) {
                Some(slot) => {
                    *slot = v.to_string();
                    Ok(())
                }
                None => Err(bad(format!("unknown config key {k:?} ({origin})"))),
            }
        };
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
            for (i, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("expected key=value, got {line:?}"),
                })?;
                set(k.trim(), v.trim(), &format!("{}:{}", path.display(), i + 1))?;
            }
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| bad(format!("override must be key=value, got {o:?}")))?;
            set(k.trim(), v.trim(), "command line")?;
        }
        if let Some(s) = seed {
            set("seed", &s.to_string(), "--seed")?;
        }
        Ok(Config { values })
    }

    fn str(&self, k: &str) -> &str {
        &self.values[k]
    }

    fn required(&self, k: &str) -> Result<&str> {
        match self.str(k) {
            "" => Err(bad(format!("config key {k:?} is required"))),
            v => Ok(v),
        }
    }

    fn parse<T: std::str::FromStr>(&self, k: &str) -> Result<T> {
        let v = self.str(k);
        v.parse().map_err(|_| bad(format!("bad value for {k}: {v:?}")))
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let text: String = self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        write_file(&dir.join("config.txt"), &text)
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn run(cli: &Cli) -> Result<()> {
    let (overrides, defaults): (&[String], Vec<(&str, String)>) = match &cli.command {
        Command::Identify { overrides } => (overrides, identify_defaults()),
        Command::Scale { overrides } => (overrides, scale_defaults()),
        Command::Train { overrides } => (overrides, train_defaults()),
        Command::Rollout { overrides } => (overrides, rollout_defaults()),
        Command::Optimize { overrides } => (overrides, optimize_defaults()?),
    };
    let cfg = Config::resolve(defaults, cli.config.as_deref(), overrides, cli.seed)?;
    std::fs::create_dir_all(&cli.out).map_err(|e| Error::Io { path: cli.out.clone(), source: e })?;
    cfg.write(&cli.out)?;
    match cli.command {
        Command::Identify { .. } => cmd_identify(&cfg, &cli.out),
        Command::Scale { .. } => cmd_scale(&cfg, &cli.out),
        Command::Train { .. } => cmd_train(&cfg, &cli.out),
        Command::Rollout { .. } => cmd_rollout(&cfg, &cli.out),
        Command::Optimize { .. } => cmd_optimize(&cfg, &cli.out),
    }
}

fn identify_defaults() -> Vec<(&'static str, String)> {
    vec![("demos", String::new()), ("weights", String::new()), ("budget", "300".into()), ("seed", "0".into())]
}

/// Demo trajectories (comma-separated paths) → `theta.txt`, `ident_history.csv`.
fn cmd_identify(cfg: &Config, out: &Path) -> Result<()> {
    let demos = cfg
        .str("demos")
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|p| Trajectory::load(Path::new(p)))
        .collect::<Result<Vec<_>>>()?;
    if demos.is_empty() {
        return Err(bad("config key \"demos\" must list at least one trajectory file"));
    }
    let data = match cfg.str("weights") {
        "" => IdentDataset::with_default_weights(demos)?,
        w => {
            let weights = w.split(',').map(|s| s.trim().parse::<f64>().map_err(|_| bad(format!("bad weight {s:?}")))).collect::<Result<_>>()?;
            IdentDataset::new(demos, weights)?
        }
    };
    let r = identify(&data, &ParamBounds::contact_defaults(), cfg.parse("budget")?, cfg.parse("seed")?)?;
    let mut theta = r.params.to_text();
    let _ = writeln!(theta, "loss={}\ninitial_loss={}", r.loss, r.initial_loss);
    write_file(&out.join("theta.txt"), &theta)?;
    let mut hist = String::from("gen,best_loss\n");
    for (g, l) in r.history.iter().enumerate() {
        let _ = writeln!(hist, "{g},{l}");
    }
    write_file(&out.join("ident_history.csv"), &hist)?;
    println!("loss={} initial_loss={} mu={}", r.loss, r.initial_loss, r.params.mu);
    Ok(())
}

fn scale_defaults() -> Vec<(&'static str, String)> {
    let mut d = vec![("theta", String::new())];
    for line in ScalingSpec::default().to_text().lines() {
        let (k, v) = line.split_once('=').expect("key=value");
        let k = ScalingSpec::keys().iter().find(|n| **n == k).expect("known key");
        d.push((k, v.to_string()));
    }
    d
}

/// `theta.txt` → dataset directory (`manifest`, `scaled/<i>.traj`, `meshes/`).
fn cmd_scale(cfg: &Config, out: &Path) -> Result<()> {
    let theta = Path::new(cfg.required("theta")?);
    let params = ContactParams::from_text(&std::fs::read_to_string(theta).map_err(|e| Error::Io { path: theta.to_path_buf(), source: e })?)?;
    let mut spec = ScalingSpec::default();
    for k in ScalingSpec::keys() {
        spec.set(k, cfg.str(k))?;
    }
    let data = scale_dataset(&spec, &params)?;
    save_dataset(&data, out, &spec.to_text())?;
    println!("trajectories={}", data.trajectories.len());
    Ok(())
}

fn train_defaults() -> Vec<(&'static str, String)> {
    let c = TrainConfig::default();
    vec![
        ("dataset", String::new()),
        ("resume", String::new()),
        ("latent", c.arch.latent.to_string()),
        ("layers", c.arch.layers.to_string()),
        ("history", c.arch.history.to_string()),
        ("updates", c.updates.to_string()),
        ("batch", c.batch.to_string()),
        ("lr", c.lr.to_string()),
        ("lr_final", c.lr_final.to_string()),
        ("noise_std", c.noise_std.to_string()),
        ("val_fraction", c.val_fraction.to_string()),
        ("val_every", c.val_every.to_string()),
        ("random_yaw", c.random_yaw.to_string()),
        ("seed", c.seed.to_string()),
    ]
}

/// Dataset directory (optionally a checkpoint to resume) → `model.ckpt`, `train_curve.csv`.
fn cmd_train(cfg: &Config, out: &Path) -> Result<()> {
    let data = load_dataset(Path::new(cfg.required("dataset")?))?;
    let config = TrainConfig {
        arch: Architecture { latent: cfg.parse("latent")?, layers: cfg.parse("layers")?, history: cfg.parse("history")? },
        updates: cfg.parse("updates")?,
        batch: cfg.parse("batch")?,
        lr: cfg.parse("lr")?,
        lr_final: cfg.parse("lr_final")?,
        noise_std: cfg.parse("noise_std")?,
        val_fraction: cfg.parse("val_fraction")?,
        val_every: cfg.parse("val_every")?,
        random_yaw: cfg.parse("random_yaw")?,
        seed: cfg.parse("seed")?,
    };
    let resume = match cfg.str("resume") {
        "" => None,
        p => {
            let (model, adam) = checkpoint::load(Path::new(p))?;
            let adam = adam.ok_or_else(|| bad(format!("checkpoint {p} has no optimizer state to resume from")))?;
            Some((model, adam))
        }
    };
    let r = train_from(resume, &data.trajectories, &config)?;
    checkpoint::save(&out.join("model.ckpt"), &r.model, Some(&r.optimizer))?;
    let mut curve = String::from("update,train_mse,val_mse\n");
    for p in &r.curve {
        let _ = writeln!(curve, "{},{},{}", p.update, p.train_mse, p.val_mse);
    }
    write_file(&out.join("train_curve.csv"), &curve)?;
    println!("best_val_mse={}", r.best_val);
    Ok(())
}

fn rollout_defaults() -> Vec<(&'static str, String)> {
    vec![
        ("checkpoint", String::new()),
        ("initial", String::new()),
        ("scene", String::new()),
        ("reference", String::new()),
        ("steps", "0".into()),
        ("seed", "0".into()),
    ]
}

/// Checkpoint plus initial conditions (first frames of `initial`, or
/// `scene=bowling`) → `pred.traj` and, when a reference exists, `errors.csv`.
fn cmd_rollout(cfg: &Config, out: &Path) -> Result<()> {
    let (model, _) = checkpoint::load(Path::new(cfg.required("checkpoint")?))?;
    let initial = match cfg.str("initial") {
        "" => None,
        p => Some(Trajectory::load(Path::new(p))?),
    };
    let reference = match (cfg.str("reference"), &initial) {
        ("", r) => r.clone(),
        (p, _) => Some(Trajectory::load(Path::new(p))?),
    };
    let scene = match (cfg.str("scene"), &initial) {
        ("bowling", None) => bowling_scene()?,
        ("", Some(t)) => initial_scene(t, GRAVITY.into())?,
        ("", None) => return Err(bad("set either \"initial\" (trajectory file) or \"scene\"")),
        (s, None) => return Err(bad(format!("unknown built-in scene {s:?}; known: bowling"))),
        (_, Some(_)) => return Err(bad("\"initial\" and \"scene\" are mutually exclusive")),
    };
    let steps = match (cfg.parse::<usize>("steps")?, &reference) {
        (0, Some(r)) => r.num_frames().saturating_sub(1),
        (0, None) => 20,
        (n, _) => n,
    };
    if let Some(r) = &reference {
        if r.num_bodies() != scene.bodies.len() {
            return Err(bad(format!("reference has {} bodies but the scene has {}", r.num_bodies(), scene.bodies.len())));
        }
        if r.num_frames() < steps + 1 {
            return Err(bad(format!("reference has {} frames, fewer than the {} requested steps", r.num_frames(), steps)));
        }
    }
    let mut pred = rollout(&model, &scene, steps)?;
    let meshes = out.join("meshes");
    std::fs::create_dir_all(&meshes).map_err(|e| Error::Io { path: meshes.clone(), source: e })?;
    for (i, b) in pred.bodies.iter_mut().enumerate() {
        b.spec.mesh.save(&meshes.join(format!("body{i}.mesh")))?;
        b.mesh_ref = Some(format!("meshes/body{i}.mesh"));
    }
    pred.save(&out.join("pred.traj"))?;
    if let Some(r) = reference {
        let mut r = r;
        r.frames.truncate(steps + 1);
        let e = RolloutErrors::compare(&pred, &r)?;
        let mut csv = String::from("step,body,position_error,angle_error\n");
        for (t, (p, a)) in e.position.iter().zip(&e.angle).enumerate() {
            for (b, (pe, ae)) in p.iter().zip(a).enumerate() {
                let _ = writeln!(csv, "{},{b},{pe},{ae}", t + 1);
            }
        }
        write_file(&out.join("errors.csv"), &csv)?;
        println!("mean_position_error={}", e.mean_position());
    }
    Ok(())
}

fn optimize_defaults() -> Result<Vec<(&'static str, String)>> {
    let t = canonical_push_task()?;
    Ok(vec![
        ("checkpoint", String::new()),
        ("iters", "50".into()),
        ("step_size", "100".into()),
        ("seed", "0".into()),
        ("target_x", t.target[0].to_string()),
        ("target_y", t.target[1].to_string()),
        ("target_radius", t.target_radius.to_string()),
        ("v_x", t.decision[0].to_string()),
        ("v_y", t.decision[1].to_string()),
        ("horizon", t.horizon.to_string()),
        ("v_max", t.v_max.to_string()),
        ("jitter", t.jitter.to_string()),
    ])
}

/// Checkpoint plus canonical push task with overrides → `optim_run.csv`.
fn cmd_optimize(cfg: &Config, out: &Path) -> Result<()> {
    let (model, _) = checkpoint::load(Path::new(cfg.required("checkpoint")?))?;
    let mut task = canonical_push_task()?;
    task.target = [cfg.parse("target_x")?, cfg.parse("target_y")?];
    task.target_radius = cfg.parse("target_radius")?;
    task.decision = [cfg.parse("v_x")?, cfg.parse("v_y")?];
    task.horizon = cfg.parse("horizon")?;
    task.v_max = cfg.parse("v_max")?;
    task.jitter = cfg.parse("jitter")?;
    let run = optimize_push(&model, &task, cfg.parse("iters")?, cfg.parse("step_size")?, cfg.parse("seed")?)?;
    run.write_csv(&out.join("optim_run.csv"))?;
    println!("converged={} iterations={} final_loss={}", run.converged, run.loss_history.len() - 1, run.loss_history.last().expect("initial loss"));
    Ok(())
}
