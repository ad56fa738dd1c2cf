//! Synthetic dataset generation from the teacher (scene randomization) and the
//! z-rotation augmentation baseline, plus the on-disk dataset layout.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::collide::nearest_points;
use crate::error::{invalid, Error, Result};
use crate::geom::{quat_from_axis_angle, Body, BodySpec, Quat, RigidBodyState, TriMesh, Vec3};
use crate::teacher::{ground_body, step_with_contacts, ContactParams, SceneState};
use crate::trajectory::{Pose, TrajBody, Trajectory};

/// Ranges are inclusive `(min, max)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingSpec {
    pub n_trajectories: usize,
    pub n_objects_range: (usize, usize),
    pub edge_length_range: (f64, f64),
    pub mass_range: (f64, f64),
    pub initial_speed_range: (f64, f64),
    /// Placement box on the ground plane: `(x_min, y_min)`, `(x_max, y_max)`.
    pub region_min: (f64, f64),
    pub region_max: (f64, f64),
    pub steps_per_trajectory: usize,
    pub seed: u64,
    pub gravity: Vec3,
    pub dt: f64,
    /// Maximum angle (rad) between the pusher's velocity and the direction to its target.
    pub aim_jitter: f64,
}

impl Default for ScalingSpec {
    fn default() -> Self {
        ScalingSpec {
            n_trajectories: 200,
            n_objects_range: (2, 2),
            edge_length_range: (0.05, 0.05),
            mass_range: (0.1, 0.1),
            initial_speed_range: (0.4, 1.0),
            region_min: (-0.12, -0.12),
            region_max: (0.12, 0.12),
            steps_per_trajectory: 20,
            seed: 0,
            gravity: Vec3::new(0.0, 0.0, -9.81),
            dt: SceneState::DEFAULT_DT,
            aim_jitter: 0.3,
        }
    }
}

const KEYS: [&str; 17] = [
    "n_trajectories",
    "n_objects_min",
    "n_objects_max",
    "edge_min",
    "edge_max",
    "mass_min",
    "mass_max",
    "speed_min",
    "speed_max",
    "region_x_min",
    "region_y_min",
    "region_x_max",
    "region_y_max",
    "steps",
    "seed",
    "gravity_z",
    "aim_jitter",
];

impl ScalingSpec {
    pub fn keys() -> &'static [&'static str] {
        &KEYS
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, (a, b): (f64, f64)| {
            if !(a > 0.0 && a <= b && b.is_finite()) {
                return invalid(format!("{name} range must satisfy 0 < min <= max, got [{a}, {b}]"));
            }
            Ok(())
        };
        if self.n_trajectories < 1 {
            return invalid("n_trajectories must be at least 1");
        }
        let (n0, n1) = self.n_objects_range;
        if n0 < 1 || n0 > n1 {
            return invalid(format!("object count range must satisfy 1 <= min <= max, got [{n0}, {n1}]"));
        }
        pos("edge length", self.edge_length_range)?;
        pos("mass", self.mass_range)?;
        let (s0, s1) = self.initial_speed_range;
        if !(s0 >= 0.0 && s0 <= s1 && s1.is_finite()) {
            return invalid(format!("speed range must satisfy 0 <= min <= max, got [{s0}, {s1}]"));
        }
        if !(self.region_min.0 < self.region_max.0 && self.region_min.1 < self.region_max.1) {
            return invalid("placement region is empty");
        }
        if self.steps_per_trajectory < 1 {
            return invalid("steps_per_trajectory must be at least 1");
        }
        if !(self.dt > 0.0) || !(self.aim_jitter >= 0.0) {
            return invalid("dt must be positive and aim_jitter non-negative");
        }
        Ok(())
    }

    /// Set one field from a `key=value` pair using the names in [`ScalingSpec::keys`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let f = || value.parse::<f64>().map_err(|_| Error::InvalidInput(format!("bad number for {key}: {value:?}")));
        let u = || value.parse::<u64>().map_err(|_| Error::InvalidInput(format!("bad integer for {key}: {value:?}")));
        match key {
            "n_trajectories" => self.n_trajectories = u()? as usize,
            "n_objects_min" => self.n_objects_range.0 = u()? as usize,
            "n_objects_max" => self.n_objects_range.1 = u()? as usize,
            "edge_min" => self.edge_length_range.0 = f()?,
            "edge_max" => self.edge_length_range.1 = f()?,
            "mass_min" => self.mass_range.0 = f()?,
            "mass_max" => self.mass_range.1 = f()?,
            "speed_min" => self.initial_speed_range.0 = f()?,
            "speed_max" => self.initial_speed_range.1 = f()?,
            "region_x_min" => self.region_min.0 = f()?,
            "region_y_min" => self.region_min.1 = f()?,
            "region_x_max" => self.region_max.0 = f()?,
            "region_y_max" => self.region_max.1 = f()?,
            "steps" => self.steps_per_trajectory = u()? as usize,
            "seed" => self.seed = u()?,
            "gravity_z" => self.gravity.z = f()?,
            "aim_jitter" => self.aim_jitter = f()?,
            _ => return invalid(format!("unknown scaling key {key:?}")),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let vals: [String; 17] = [
            self.n_trajectories.to_string(),
            self.n_objects_range.0.to_string(),
            self.n_objects_range.1.to_string(),
            self.edge_length_range.0.to_string(),
            self.edge_length_range.1.to_string(),
            self.mass_range.0.to_string(),
            self.mass_range.1.to_string(),
            self.initial_speed_range.0.to_string(),
            self.initial_speed_range.1.to_string(),
            self.region_min.0.to_string(),
            self.region_min.1.to_string(),
            self.region_max.0.to_string(),
            self.region_max.1.to_string(),
            self.steps_per_trajectory.to_string(),
            self.seed.to_string(),
            self.gravity.z.to_string(),
            self.aim_jitter.to_string(),
        ];
        KEYS.iter().zip(vals).map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Scaled,
    Augmented,
    RealSubstitute,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Scaled => "scaled",
            Provenance::Augmented => "augmented",
            Provenance::RealSubstitute => "real-substitute",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "scaled" => Ok(Provenance::Scaled),
            "augmented" => Ok(Provenance::Augmented),
            "real-substitute" => Ok(Provenance::RealSubstitute),
            _ => invalid(format!("unknown provenance {s:?}")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub provenance: Provenance,
    pub params_used: ContactParams,
}

fn uniform(rng: &mut ChaCha8Rng, (a, b): (f64, f64)) -> f64 {
    if a == b {
        a
    } else {
        rng.gen_range(a..=b)
    }
}

/// Ground slab reaching one meter past the placement region.
pub fn ground_for(spec: &ScalingSpec) -> Result<Body> {
    let reach = [spec.region_min.0, spec.region_min.1, spec.region_max.0, spec.region_max.1]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    ground_body(reach + 1.0, 0.02)
}

/// Cubes resting on a static ground slab (body 0) without overlap; body 1 is the
/// pusher, aimed at another cube (or a random heading when alone).
pub fn sample_scene(spec: &ScalingSpec, rng: &mut ChaCha8Rng) -> Result<SceneState> {
    spec.validate()?;
    let n = rng.gen_range(spec.n_objects_range.0..=spec.n_objects_range.1);
    let mut bodies = vec![ground_for(spec)?];
    let mut attempts = 0;
    while bodies.len() < n + 1 {
        attempts += 1;
        if attempts > 1000 {
            return invalid(format!("could not place {n} objects without overlap in 1000 attempts; enlarge the region"));
        }
        let edge = uniform(rng, spec.edge_length_range);
        let mass = uniform(rng, spec.mass_range);
        let x = uniform(rng, (spec.region_min.0, spec.region_max.0));
        let y = uniform(rng, (spec.region_min.1, spec.region_max.1));
        let yaw = rng.gen_range(0.0..std::f64::consts::TAU);
        let state = RigidBodyState::at_rest(Vec3::new(x, y, edge / 2.0), quat_from_axis_angle(&Vec3::z(), yaw));
        let spec_b = BodySpec::from_mesh(TriMesh::cube(edge)?, mass, false)?;
        let mut clear = true;
        for other in &bodies[1..] {
            if nearest_points(&spec_b.mesh, &state, &other.spec.mesh, &other.state)?.dist <= 1e-3 * edge {
                clear = false;
                break;
            }
        }
        if clear {
            bodies.push(Body::new(spec_b, state));
        }
    }
    let speed = uniform(rng, spec.initial_speed_range);
    let heading = if n >= 2 {
        let k = rng.gen_range(2..=n);
        let d = bodies[k].state.x - bodies[1].state.x;
        d.y.atan2(d.x) + uniform(rng, (-spec.aim_jitter, spec.aim_jitter))
    } else {
        rng.gen_range(0.0..std::f64::consts::TAU)
    };
    bodies[1].state.v = Vec3::new(heading.cos(), heading.sin(), 0.0) * speed;
    Ok(SceneState { bodies, gravity: spec.gravity, dt: spec.dt })
}

/// Ten 5 cm cubes in a four-row triangle (rows 9 cm apart, 8 cm between
/// neighbours) on the default ground, struck along +x by an eleventh cube
/// (body 1) launched at 1 m/s from 15 cm in front of the apex.
pub fn bowling_scene() -> Result<SceneState> {
    let spec = ScalingSpec::default();
    let cube = |x: f64, y: f64, v: f64| -> Result<Body> {
        let mut state = RigidBodyState::at_rest(Vec3::new(x, y, 0.025), Quat::identity());
        state.v = Vec3::new(v, 0.0, 0.0);
        Ok(Body::new(BodySpec::from_mesh(TriMesh::cube(0.05)?, 0.1, false)?, state))
    };
    let mut bodies = vec![ground_for(&spec)?, cube(-0.15, 0.0, 1.0)?];
    for row in 0..4 {
        for j in 0..=row {
            bodies.push(cube(0.09 * row as f64, 0.08 * (j as f64 - row as f64 / 2.0), 0.0)?);
        }
    }
    Ok(SceneState { bodies, gravity: spec.gravity, dt: spec.dt })
}

fn trajectory_from_frames(scene: &SceneState, frames: Vec<Vec<Pose>>) -> Trajectory {
    Trajectory {
        bodies: scene.bodies.iter().map(|b| TrajBody { spec: b.spec.clone(), mesh_ref: None }).collect(),
        dt: scene.dt,
        frames,
    }
}

/// Teacher rollout that also reports whether two dynamic bodies ever penetrate.
pub fn rollout_contact_rich(scene: &SceneState, params: &ContactParams, steps: usize) -> Result<(Trajectory, bool)> {
    let mut s = scene.clone();
    let mut frames = vec![s.poses()];
    let mut rich = false;
    for _ in 0..steps {
        let (next, contacts) = step_with_contacts(&s, params)?;
        rich |= contacts
            .penetrating()
            .any(|c| !s.bodies[c.body_a].spec.is_static && !s.bodies[c.body_b].spec.is_static);
        s = next;
        frames.push(s.poses());
    }
    Ok((trajectory_from_frames(scene, frames), rich))
}

/// Retries per trajectory when a rollout has no dynamic-dynamic contact.
pub const CONTACT_RETRIES: usize = 10;

/// One contact-rich trajectory for index `i`; deterministic in `(spec.seed, i)`.
pub fn scaled_trajectory(spec: &ScalingSpec, params: &ContactParams, i: usize) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(i as u64);
    for _ in 0..=CONTACT_RETRIES {
        let scene = sample_scene(spec, &mut rng)?;
        let (traj, rich) = rollout_contact_rich(&scene, params, spec.steps_per_trajectory)?;
        if rich {
            return Ok(traj);
        }
    }
    invalid(format!("trajectory {i}: no contact between objects after {CONTACT_RETRIES} retries"))
}

pub fn scale_dataset(spec: &ScalingSpec, params: &ContactParams) -> Result<Dataset> {
    spec.validate()?;
    params.validate()?;
    let trajectories = (0..spec.n_trajectories)
        .into_par_iter()
        .map(|i| scaled_trajectory(spec, params, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { trajectories, provenance: Provenance::Scaled, params_used: *params })
}

/// Rotate a whole trajectory by `angle` about the vertical axis through `pivot`.
pub fn rotate_trajectory_z(traj: &Trajectory, angle: f64, pivot: &Vec3) -> Trajectory {
    let q: Quat = quat_from_axis_angle(&Vec3::z(), angle);
    let r = crate::geom::rotmat(&q);
    let mut out = traj.clone();
    for frame in &mut out.frames {
        for p in frame.iter_mut() {
            p.x = pivot + r * (p.x - pivot);
            p.q = (q * p.q).normalize();
        }
    }
    out
}

/// Mean planar position of the dynamic bodies in the first frame, at z = 0.
pub fn scene_centroid(traj: &Trajectory) -> Vec3 {
    let dynamic: Vec<Vec3> =
        traj.bodies.iter().zip(&traj.frames[0]).filter(|(b, _)| !b.spec.is_static).map(|(_, p)| p.x).collect();
    if dynamic.is_empty() {
        return Vec3::zeros();
    }
    let c = dynamic.iter().sum::<Vec3>() / dynamic.len() as f64;
    Vec3::new(c.x, c.y, 0.0)
}

/// `n_copies` rotated copies of each base trajectory, angles evenly spaced on [0, 2π).
pub fn augment_rotate_z(base: &Dataset, n_copies: usize) -> Result<Dataset> {
    if base.trajectories.is_empty() {
        return invalid("augmentation needs at least one base trajectory");
    }
    let mut trajectories = Vec::with_capacity(base.trajectories.len() * n_copies);
    for t in &base.trajectories {
        let pivot = scene_centroid(t);
        for k in 0..n_copies {
            let angle = std::f64::consts::TAU * k as f64 / n_copies as f64;
            trajectories.push(if k == 0 { t.clone() } else { rotate_trajectory_z(t, angle, &pivot) });
        }
    }
    Ok(Dataset { trajectories, provenance: Provenance::Augmented, params_used: base.params_used })
}

/// FNV-1a over the mesh text; names shared mesh files.
fn mesh_hash(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Write `<dir>/<provenance>/<i>.traj`, shared meshes under `<dir>/meshes/`, and
/// `<dir>/manifest`. Extra `key=value` lines (for example the scaling spec) go
/// into the manifest verbatim.
pub fn save_dataset(data: &Dataset, dir: &Path, extra: &str) -> Result<()> {
    let sub = dir.join(data.provenance.as_str());
    let meshes = dir.join("meshes");
    for d in [&sub, &meshes] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut written: BTreeMap<u64, String> = BTreeMap::new();
    for (i, traj) in data.trajectories.iter().enumerate() {
        let mut t = traj.clone();
        for b in &mut t.bodies {
            let text = b.spec.mesh.to_text();
            let h = mesh_hash(&text);
            if !written.contains_key(&h) {
                let path = meshes.join(format!("{h:016x}.mesh"));
                std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
                written.insert(h, text);
            }
            b.mesh_ref = Some(format!("../meshes/{h:016x}.mesh"));
        }
        t.save(&sub.join(format!("{i}.traj")))?;
    }
    let mut m = String::new();
    let _ = writeln!(m, "provenance={}", data.provenance.as_str());
    let _ = writeln!(m, "count={}", data.trajectories.len());
    m.push_str(extra);
    m.push_str(&data.params_used.to_text());
    let path = dir.join("manifest");
    std::fs::write(&path, m).map_err(|e| Error::io(&path, e))
}

/// Read a dataset written by [`save_dataset`]; trajectory count must match the manifest.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join("manifest");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let kv: BTreeMap<&str, &str> = text.lines().filter_map(|l| l.split_once('=')).map(|(k, v)| (k.trim(), v.trim())).collect();
    let fmt_err = |msg: String| Error::Format { path: path.clone(), line: 0, msg };
    let provenance = Provenance::parse(kv.get("provenance").ok_or_else(|| fmt_err("missing provenance".into()))?)?;
    let count: usize = kv
        .get("count")
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| fmt_err("missing or bad count".into()))?;
    let params_used = ContactParams::from_text(&text)?;
    let sub = dir.join(provenance.as_str());
    let mut cache: BTreeMap<std::path::PathBuf, Arc<TriMesh>> = BTreeMap::new();
    let mut trajectories = Vec::with_capacity(count);
    for i in 0..count {
        let p = sub.join(format!("{i}.traj"));
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let t = Trajectory::parse(&text, &p, &mut |r| {
            let full = sub.join(r);
            if let Some(m) = cache.get(&full) {
                return Ok(m.clone());
            }
            let m = Arc::new(TriMesh::load(&full)?);
            cache.insert(full, m.clone());
            Ok(m)
        })?;
        trajectories.push(t);
    }
    let extra = std::fs::read_dir(&sub).map_err(|e| Error::io(&sub, e))?.filter(|e| e.is_ok()).count();
    if extra != count {
        return Err(fmt_err(format!("manifest lists {count} trajectories but {} has {extra} files", sub.display())));
    }
    Ok(Dataset { trajectories, provenance, params_used })
}
