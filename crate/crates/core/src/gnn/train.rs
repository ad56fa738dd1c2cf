//! One-step supervised training of [`GnnModel`] on trajectory datasets, and
//! evaluation of one-step and rollout errors.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use nalgebra::Rotation3;

use crate::geom::{geodesic_angle, BodySpec, Vec3};
use crate::sysid::initial_scene;
use crate::trajectory::Trajectory;

use super::graph::{detect_contacts, BodyPose, DynamicsGraph, EdgeSet, FaceEdgeSet, FrozenContact, Topology};
use super::model::{Architecture, GnnModel, Normalizer, Stats};
use super::rollout::{history_poses, rollout};
use super::tape::Mat;

/// Gravity assumed when reconstructing initial velocities from poses.
pub const GRAVITY: [f64; 3] = [0.0, 0.0, -9.81];

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub arch: Architecture,
    pub updates: usize,
    pub batch: usize,
    pub lr: f64,
    /// Step size reached at the last update (exponential decay).
    pub lr_final: f64,
    /// Final-frame standard deviation of the random-walk position noise (m).
    pub noise_std: f64,
    pub val_fraction: f64,
    pub val_every: usize,
    /// Rotate every training sample by a random angle about the vertical axis.
    pub random_yaw: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: Architecture::default(),
            updates: 50_000,
            batch: 16,
            lr: 1e-3,
            lr_final: 1e-5,
            noise_std: 1e-4,
            val_fraction: 0.1,
            val_every: 500,
            random_yaw: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.updates == 0 || self.batch == 0 || self.val_every == 0 {
            return invalid("updates, batch and val_every must be positive");
        }
        if !(self.lr > 0.0) || !(self.lr_final > 0.0) || !(self.noise_std >= 0.0) {
            return invalid("learning rates must be positive and noise non-negative");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return invalid("val_fraction must be in [0, 1)");
        }
        Ok(())
    }
}

/// One point of the training curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub update: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

/// First and second moment estimates of Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: usize,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

impl AdamState {
    pub fn new(model: &GnnModel) -> Self {
        AdamState { step: 0, m: model.zero_grads(), v: model.zero_grads() }
    }

    fn update(&mut self, params: &mut [Mat], grads: &[Mat], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.step += 1;
        let c1 = 1.0 - B1.powi(self.step as i32);
        let c2 = 1.0 - B2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = B1 * m.data[i] + (1.0 - B1) * gi;
                v.data[i] = B2 * v.data[i] + (1.0 - B2) * gi * gi;
                p.data[i] -= lr * (m.data[i] / c1) / ((v.data[i] / c2).sqrt() + 1e-8);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: GnnModel,
    pub curve: Vec<CurvePoint>,
    pub best_val: f64,
    pub optimizer: AdamState,
}

/// A trajectory prepared for supervision: node positions at times `−h..=T`
/// (pre-history extrapolated from the reconstructed initial velocities), body
/// poses and frozen contacts at times `0..T`.
struct Prepared {
    topo: Topology,
    frames: Vec<Vec<Vec3>>,
    poses: Vec<Vec<BodyPose>>,
    contacts: Vec<Vec<FrozenContact>>,
}

fn prepare(traj: &Trajectory, h: usize) -> Result<Prepared> {
    if traj.num_frames() < 3 {
        return invalid("training trajectories need at least three frames");
    }
    let scene = initial_scene(traj, Vec3::from(GRAVITY))?;
    let topo = Topology::from_bodies(&scene.bodies);
    let specs: Vec<&BodySpec> = scene.bodies.iter().map(|b| &b.spec).collect();
    let d_eps = super::rollout::graph_d_eps(&scene.bodies);
    let mut frames: Vec<Vec<Vec3>> = history_poses(&scene.bodies, traj.dt, h)[..h].iter().map(|p| topo.place(p)).collect();
    let mut poses = Vec::new();
    for f in &traj.frames {
        let p: Vec<BodyPose> = f.iter().map(|p| BodyPose { r: p.rotation(), t: p.x }).collect();
        frames.push(topo.place(&p));
        poses.push(p);
    }
    let contacts = poses[..poses.len() - 1].iter().map(|p| detect_contacts(&specs, p, d_eps)).collect::<Result<_>>()?;
    Ok(Prepared { topo, frames, poses, contacts })
}

impl Prepared {
    fn steps(&self) -> usize {
        self.contacts.len()
    }

    /// Graph and raw target for the step from time `t`, optionally rotated about
    /// the vertical axis by `yaw` and perturbed with noise.
    fn sample(&self, t: usize, h: usize, yaw: f64, noise: Option<(&mut ChaCha8Rng, f64)>) -> Result<(DynamicsGraph, Mat)> {
        let rz = Rotation3::from_axis_angle(&Vec3::z_axis(), yaw).into_inner();
        let mut hist: Vec<Vec<Vec3>> = self.frames[t..=t + h].iter().map(|f| f.iter().map(|p| rz * p).collect()).collect();
        let poses: Vec<BodyPose> = self.poses[t].iter().map(|p| BodyPose { r: rz * p.r, t: rz * p.t }).collect();
        let contacts: Vec<FrozenContact> = self.contacts[t]
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.pair.p_a = rz * c.pair.p_a;
                c.pair.p_b = rz * c.pair.p_b;
                c.pair.normal = rz * c.pair.normal;
                c
            })
            .collect();
        if let Some((rng, std)) = noise {
            if std > 0.0 {
                let step = Normal::new(0.0, std / ((h + 1) as f64).sqrt()).map_err(|e| Error::InvalidInput(e.to_string()))?;
                for i in 0..self.topo.num_nodes() {
                    if self.topo.is_static[self.topo.node_body[i]] {
                        continue;
                    }
                    let mut walk = Vec3::zeros();
                    for frame in hist.iter_mut() {
                        walk += Vec3::new(step.sample(rng), step.sample(rng), step.sample(rng));
                        frame[i] += walk;
                    }
                }
            }
        }
        let next = &self.frames[t + h + 1];
        let mut target = Mat::zeros(self.topo.num_nodes(), 3);
        for i in 0..self.topo.num_nodes() {
            let a = rz * next[i] - hist[h][i] * 2.0 + hist[h - 1][i];
            target.row_mut(i).copy_from_slice(a.as_slice());
        }
        let g = DynamicsGraph::build(&self.topo, &hist, &poses, &contacts)?;
        Ok((g, target))
    }

    fn dynamic_rows(&self) -> Vec<bool> {
        (0..self.topo.num_nodes()).map(|i| !self.topo.is_static[self.topo.node_body[i]]).collect()
    }
}

fn stack(mats: &[&Mat]) -> Mat {
    let cols = mats.first().map_or(0, |m| m.cols);
    let mut data = Vec::new();
    let mut rows = 0;
    for m in mats {
        data.extend_from_slice(&m.data);
        rows += m.rows;
    }
    Mat::from_vec(rows, cols, data)
}

/// Disjoint union of graphs with node indices offset.
pub fn batch_graphs(graphs: &[DynamicsGraph]) -> DynamicsGraph {
    let mut nm = 0;
    let mut no = 0;
    let mut out = DynamicsGraph {
        mesh_nodes: stack(&graphs.iter().map(|g| &g.mesh_nodes).collect::<Vec<_>>()),
        object_nodes: stack(&graphs.iter().map(|g| &g.object_nodes).collect::<Vec<_>>()),
        mesh_mesh: EdgeSet { senders: vec![], receivers: vec![], features: stack(&graphs.iter().map(|g| &g.mesh_mesh.features).collect::<Vec<_>>()) },
        obj_mesh: EdgeSet { senders: vec![], receivers: vec![], features: stack(&graphs.iter().map(|g| &g.obj_mesh.features).collect::<Vec<_>>()) },
        mesh_obj: EdgeSet { senders: vec![], receivers: vec![], features: stack(&graphs.iter().map(|g| &g.mesh_obj.features).collect::<Vec<_>>()) },
        face_face: FaceEdgeSet {
            senders: vec![],
            receivers: vec![],
            features: Mat::zeros(0, super::graph::FACE_EDGE_DIM),
            source: vec![],
        },
    };
    let mut ff_feats = Vec::new();
    for g in graphs {
        out.mesh_mesh.senders.extend(g.mesh_mesh.senders.iter().map(|i| i + nm));
        out.mesh_mesh.receivers.extend(g.mesh_mesh.receivers.iter().map(|i| i + nm));
        out.obj_mesh.senders.extend(g.obj_mesh.senders.iter().map(|i| i + no));
        out.obj_mesh.receivers.extend(g.obj_mesh.receivers.iter().map(|i| i + nm));
        out.mesh_obj.senders.extend(g.mesh_obj.senders.iter().map(|i| i + nm));
        out.mesh_obj.receivers.extend(g.mesh_obj.receivers.iter().map(|i| i + no));
        out.face_face.senders.extend(g.face_face.senders.iter().map(|t| t.map(|i| i + nm)));
        out.face_face.receivers.extend(g.face_face.receivers.iter().map(|t| t.map(|i| i + nm)));
        out.face_face.source.extend_from_slice(&g.face_face.source);
        ff_feats.push(&g.face_face.features);
        nm += g.mesh_nodes.rows;
        no += g.object_nodes.rows;
    }
    if !ff_feats.is_empty() {
        out.face_face.features = stack(&ff_feats);
    }
    out
}

/// Normalization statistics from clean samples; targets over dynamic nodes only.
fn fit_normalizer(prepared: &[&Prepared], h: usize) -> Result<Normalizer> {
    let mut graphs = Vec::new();
    let mut targets = Vec::new();
    for p in prepared {
        let dynamic = p.dynamic_rows();
        for t in 0..p.steps() {
            let (g, tgt) = p.sample(t, h, 0.0, None)?;
            let rows: Vec<f64> = (0..tgt.rows).filter(|&i| dynamic[i]).flat_map(|i| tgt.row(i).to_vec()).collect();
            targets.push(Mat::from_vec(rows.len() / 3, 3, rows));
            graphs.push(g);
        }
    }
    let base = Normalizer::identity(h);
    Ok(Normalizer {
        mesh_nodes: Stats::from_rows(base.mesh_nodes.mean.len(), graphs.iter().map(|g| &g.mesh_nodes)),
        object_nodes: Stats::from_rows(base.object_nodes.mean.len(), graphs.iter().map(|g| &g.object_nodes)),
        mesh_mesh: Stats::from_rows(base.mesh_mesh.mean.len(), graphs.iter().map(|g| &g.mesh_mesh.features)),
        obj_mesh: Stats::from_rows(base.obj_mesh.mean.len(), graphs.iter().map(|g| &g.obj_mesh.features)),
        mesh_obj: Stats::from_rows(base.mesh_obj.mean.len(), graphs.iter().map(|g| &g.mesh_obj.features)),
        face_face: Stats::from_rows(base.face_face.mean.len(), graphs.iter().map(|g| &g.face_face.features)),
        target: Stats::from_rows(3, targets.iter()),
    })
}

/// Squared error of normalized predictions on dynamic rows and its gradient.
fn mse_and_grad(model: &GnnModel, out: &Mat, target: &Mat, dynamic: &[bool]) -> (f64, Mat, usize) {
    let s = &model.norm.target;
    let mut g = Mat::zeros(out.rows, 3);
    let mut sum = 0.0;
    let mut count = 0;
    for i in 0..out.rows {
        if !dynamic[i] {
            continue;
        }
        count += 1;
        for c in 0..3 {
            let d = out.row(i)[c] - (target.row(i)[c] - s.mean[c]) / s.std[c];
            sum += d * d;
            g.row_mut(i)[c] = d;
        }
    }
    (sum, g, count)
}

struct Batch {
    graph: DynamicsGraph,
    target: Mat,
    dynamic: Vec<bool>,
}

/// Batch of samples; with `noise`, each sample also gets a random yaw when
/// `random_yaw` is set.
fn make_batch(items: &[(usize, usize)], prepared: &[&Prepared], h: usize, mut noise: Option<(&mut ChaCha8Rng, f64)>, random_yaw: bool) -> Result<Batch> {
    let mut graphs = Vec::new();
    let mut targets = Vec::new();
    let mut dynamic = Vec::new();
    for &(i, t) in items {
        let mut n = noise.as_mut().map(|(r, s)| (&mut **r, *s));
        let yaw = match n.as_mut() {
            Some((r, _)) if random_yaw => r.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
            _ => 0.0,
        };
        let (g, tgt) = prepared[i].sample(t, h, yaw, n)?;
        graphs.push(g);
        targets.push(tgt);
        dynamic.extend(prepared[i].dynamic_rows());
    }
    Ok(Batch { graph: batch_graphs(&graphs), target: stack(&targets.iter().collect::<Vec<_>>()), dynamic })
}

fn mean_mse(model: &GnnModel, prepared: &[&Prepared]) -> Result<f64> {
    let h = model.arch.history;
    let items: Vec<(usize, usize)> = prepared.iter().enumerate().flat_map(|(i, p)| (0..p.steps()).map(move |t| (i, t))).collect();
    let mut sum = 0.0;
    let mut count = 0;
    for chunk in items.chunks(32) {
        let b = make_batch(chunk, prepared, h, None, false)?;
        let f = model.forward(&b.graph);
        let (s, _, c) = mse_and_grad(model, f.accel_normalized(), &b.target, &b.dynamic);
        sum += s;
        count += c;
    }
    if count == 0 {
        return invalid("no dynamic nodes to evaluate");
    }
    Ok(sum / (3 * count) as f64)
}

/// Mean squared one-step error of normalized accelerations over all steps and
/// dynamic nodes of the trajectories, with clean inputs.
pub fn one_step_mse(model: &GnnModel, trajectories: &[Trajectory]) -> Result<f64> {
    let prepared = trajectories.iter().map(|t| prepare(t, model.arch.history)).collect::<Result<Vec<_>>>()?;
    mean_mse(model, &prepared.iter().collect::<Vec<_>>())
}

/// Normalized one-step squared error per step of one trajectory (clean inputs).
pub fn one_step_errors(model: &GnnModel, trajectory: &Trajectory) -> Result<Vec<f64>> {
    let h = model.arch.history;
    let p = prepare(trajectory, h)?;
    (0..p.steps())
        .map(|t| {
            let b = make_batch(&[(0, t)], &[&p], h, None, false)?;
            let f = model.forward(&b.graph);
            let (s, _, c) = mse_and_grad(model, f.accel_normalized(), &b.target, &b.dynamic);
            Ok(s / (3 * c.max(1)) as f64)
        })
        .collect()
}

/// Train a fresh model. Returns the parameters with the lowest validation error.
pub fn train(trajectories: &[Trajectory], config: &TrainConfig) -> Result<TrainOutcome> {
    train_from(None, trajectories, config)
}

/// Train, optionally resuming from a model and optimizer state. A resumed model
/// keeps its normalization statistics.
pub fn train_from(resume: Option<(GnnModel, AdamState)>, trajectories: &[Trajectory], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if trajectories.is_empty() {
        return invalid("training dataset is empty");
    }
    let h = config.arch.history;
    let prepared = trajectories.iter().map(|t| prepare(t, h)).collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    order.shuffle(&mut rng);
    let n_val = if prepared.len() < 2 { 0 } else { ((prepared.len() as f64 * config.val_fraction).round() as usize).min(prepared.len() - 1) };
    let (val_idx, train_idx) = order.split_at(n_val);
    let train_set: Vec<&Prepared> = train_idx.iter().map(|&i| &prepared[i]).collect();

    let (mut model, mut adam) = match resume {
        Some((m, a)) => {
            if m.arch != config.arch {
                return invalid("resumed model architecture differs from the configuration");
            }
            (m, a)
        }
        None => {
            let mut m = GnnModel::new(config.arch, config.seed)?;
            m.norm = fit_normalizer(&train_set, h)?;
            let a = AdamState::new(&m);
            (m, a)
        }
    };
    let val_set: Vec<&Prepared> = if val_idx.is_empty() { train_set.clone() } else { val_idx.iter().map(|&i| &prepared[i]).collect() };

    let items: Vec<(usize, usize)> = train_set.iter().enumerate().flat_map(|(i, p)| (0..p.steps()).map(move |t| (i, t))).collect();
    let mut perm = items.clone();
    perm.shuffle(&mut rng);
    let mut cursor = 0;
    let decay = (config.lr_final / config.lr).ln() / config.updates.max(2).saturating_sub(1) as f64;
    let start = adam.step;
    let mut best = (mean_mse(&model, &val_set)?, model.clone());
    let mut curve = vec![CurvePoint { update: start, train_mse: f64::NAN, val_mse: best.0 }];
    let mut running = (0.0, 0);
    for u in 0..config.updates {
        let mut chosen = Vec::with_capacity(config.batch);
        for _ in 0..config.batch {
            if cursor == perm.len() {
                perm.shuffle(&mut rng);
                cursor = 0;
            }
            chosen.push(perm[cursor]);
            cursor += 1;
        }
        let b = make_batch(&chosen, &train_set, h, Some((&mut rng, config.noise_std)), config.random_yaw)?;
        let mut f = model.forward(&b.graph);
        let (sum, mut g, count) = mse_and_grad(&model, f.accel_normalized(), &b.target, &b.dynamic);
        let scale = 2.0 / (3 * count.max(1)) as f64;
        g.data.iter_mut().for_each(|v| *v *= scale);
        let mut grads = model.zero_grads();
        model.backward(&mut f, g, &mut grads);
        let lr = config.lr * (decay * u as f64).exp();
        adam.update(&mut model.params, &grads, lr);
        if !model.is_finite() {
            return Err(Error::NumericalFailure(format!("parameters became non-finite at update {}", start + u + 1)));
        }
        running.0 += sum / (3 * count.max(1)) as f64;
        running.1 += 1;
        if (u + 1) % config.val_every == 0 || u + 1 == config.updates {
            let val = mean_mse(&model, &val_set)?;
            curve.push(CurvePoint { update: start + u + 1, train_mse: running.0 / running.1 as f64, val_mse: val });
            running = (0.0, 0);
            if val < best.0 {
                best = (val, model.clone());
            }
        }
    }
    Ok(TrainOutcome { model: best.1, curve, best_val: best.0, optimizer: adam })
}

/// Per-step, per-body errors of a prediction against a reference trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutErrors {
    /// `position[t][b]` in meters for frames `1..=T`.
    pub position: Vec<Vec<f64>>,
    pub angle: Vec<Vec<f64>>,
    pub dynamic: Vec<bool>,
}

impl RolloutErrors {
    pub fn compare(pred: &Trajectory, reference: &Trajectory) -> Result<Self> {
        if pred.num_frames() != reference.num_frames() || pred.num_bodies() != reference.num_bodies() {
            return invalid("predicted and reference trajectories differ in shape");
        }
        let mut position = Vec::new();
        let mut angle = Vec::new();
        for (fp, fr) in pred.frames.iter().zip(&reference.frames).skip(1) {
            position.push(fp.iter().zip(fr).map(|(a, b)| (a.x - b.x).norm()).collect());
            angle.push(fp.iter().zip(fr).map(|(a, b)| geodesic_angle(&a.rotation(), &b.rotation())).collect());
        }
        Ok(RolloutErrors { position, angle, dynamic: reference.bodies.iter().map(|b| !b.spec.is_static).collect() })
    }

    /// Mean positional error over steps and dynamic bodies.
    pub fn mean_position(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0;
        for row in &self.position {
            for (e, d) in row.iter().zip(&self.dynamic) {
                if *d {
                    sum += e;
                    n += 1;
                }
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// Roll the model out from a reference trajectory's first frame (velocities
/// reconstructed from poses) for the reference's length and compare.
pub fn evaluate_rollout(model: &GnnModel, reference: &Trajectory) -> Result<(Trajectory, RolloutErrors)> {
    let scene = initial_scene(reference, Vec3::from(GRAVITY))?;
    let pred = rollout(model, &scene, reference.num_frames() - 1)?;
    let err = RolloutErrors::compare(&pred, reference)?;
    Ok((pred, err))
}

/// Mean positional rollout error over a set of reference trajectories.
pub fn mean_rollout_error(model: &GnnModel, references: &[Trajectory]) -> Result<f64> {
    if references.is_empty() {
        return invalid("no reference trajectories");
    }
    let mut sum = 0.0;
    for r in references {
        sum += evaluate_rollout(model, r)?.1.mean_position();
    }
    Ok(sum / references.len() as f64)
}
