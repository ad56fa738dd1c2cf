//! Learned-simulator rollouts and their reverse-mode gradients.

use crate::error::{invalid, Error, Result};
use crate::geom::{quat_from_rotvec, rotmat, rotmat_to_quat, Body, BodySpec, Vec3};
use crate::teacher::SceneState;
use crate::trajectory::{Pose, TrajBody, Trajectory};

use super::graph::{detect_contacts, BodyPose, DynamicsGraph, FrozenContact, PoseGrad, Topology};
use super::model::GnnModel;
use super::shape::{shape_match, shape_match_adjoint, ShapeMatch};
use super::tape::Mat;

/// `p_next = 2 p_t − p_prev + a`; `a` already includes the `dt²` factor.
pub fn verlet_step(p_t: &[Vec3], p_prev: &[Vec3], a: &[Vec3]) -> Result<Vec<Vec3>> {
    if p_t.len() != p_prev.len() || p_t.len() != a.len() {
        return invalid(format!("verlet inputs differ in length: {}, {}, {}", p_t.len(), p_prev.len(), a.len()));
    }
    Ok(p_t.iter().zip(p_prev).zip(a).map(|((p, q), a)| p * 2.0 - q + a).collect())
}

/// Body poses `j = h..0` steps in the past under constant velocity, oldest first.
pub fn history_poses(bodies: &[Body], dt: f64, h: usize) -> Vec<Vec<BodyPose>> {
    (0..=h)
        .map(|k| {
            let back = (h - k) as f64 * dt;
            bodies
                .iter()
                .map(|b| {
                    let s = &b.state;
                    if b.spec.is_static || back == 0.0 {
                        return BodyPose::from_state(s);
                    }
                    let q = (quat_from_rotvec(&(-s.w * back)) * s.q).normalize();
                    BodyPose { r: rotmat(&q), t: s.x - s.v * back }
                })
                .collect()
        })
        .collect()
}

/// Node-position history of a scene (oldest first, `h + 1` frames), extrapolated
/// backwards from the bodies' current velocities.
pub fn scene_history(topo: &Topology, bodies: &[Body], dt: f64, h: usize) -> Vec<Vec<Vec3>> {
    history_poses(bodies, dt, h).iter().map(|p| topo.place(p)).collect()
}

/// Contact radius for graph construction: half the shortest mesh edge in the
/// scene, wide enough to see an impact one step before it happens.
pub fn graph_d_eps(bodies: &[Body]) -> f64 {
    0.5 * bodies.iter().map(|b| b.spec.mesh.shortest_edge()).fold(f64::INFINITY, f64::min)
}

/// Features for a scene and explicit node history, with contacts detected at the
/// bodies' current poses.
pub fn build_graph(bodies: &[Body], history: &[Vec<Vec3>], d_eps: f64) -> Result<DynamicsGraph> {
    let topo = Topology::from_bodies(bodies);
    let poses: Vec<BodyPose> = bodies.iter().map(|b| BodyPose::from_state(&b.state)).collect();
    let specs: Vec<&BodySpec> = bodies.iter().map(|b| &b.spec).collect();
    let contacts = detect_contacts(&specs, &poses, d_eps)?;
    DynamicsGraph::build(&topo, history, &poses, &contacts)
}

struct StepRecord {
    history: Vec<Vec<Vec3>>,
    poses: Vec<BodyPose>,
    contacts: Vec<FrozenContact>,
    graph: DynamicsGraph,
    matches: Vec<Option<ShapeMatch>>,
}

struct Simulation {
    traj: Trajectory,
    /// Body poses at times `0..=T`.
    poses: Vec<Vec<BodyPose>>,
    steps: Vec<StepRecord>,
}

fn simulate(model: &GnnModel, scene: &SceneState, steps: usize, frozen: Option<&[Vec<FrozenContact>]>, keep: bool) -> Result<Simulation> {
    scene.validate()?;
    if steps < 1 {
        return invalid("rollout needs at least one step");
    }
    if let Some(f) = frozen {
        if f.len() < steps {
            return invalid(format!("frozen contact schedule covers {} of {steps} steps", f.len()));
        }
    }
    let h = model.arch.history;
    let bodies = &scene.bodies;
    let topo = Topology::from_bodies(bodies);
    let specs: Vec<&BodySpec> = bodies.iter().map(|b| &b.spec).collect();
    let d_eps = graph_d_eps(bodies);
    let mut frames = scene_history(&topo, bodies, scene.dt, h);
    let mut poses = vec![bodies.iter().map(|b| BodyPose::from_state(&b.state)).collect::<Vec<_>>()];
    let mut traj_frames = vec![bodies.iter().map(|b| Pose { x: b.state.x, q: b.state.q }).collect::<Vec<_>>()];
    let mut records = Vec::new();
    let s = &model.norm.target;
    for k in 0..steps {
        let cur_poses = poses[k].clone();
        let contacts = match frozen {
            Some(f) => f[k].clone(),
            None => detect_contacts(&specs, &cur_poses, d_eps)?,
        };
        let history = frames[frames.len() - h - 1..].to_vec();
        let graph = DynamicsGraph::build(&topo, &history, &cur_poses, &contacts)?;
        let an = model.forward(&graph);
        let an = an.accel_normalized();
        let cur = &history[h];
        let prev = &history[h - 1];
        let mut next = cur.clone();
        let mut next_poses = cur_poses.clone();
        let mut matches = vec![None; topo.num_bodies()];
        for b in 0..topo.num_bodies() {
            if topo.is_static[b] {
                continue;
            }
            let range = topo.nodes(b);
            let a: Vec<Vec3> = range.clone().map(|i| {
                let row = an.row(i);
                Vec3::new(row[0] * s.std[0] + s.mean[0], row[1] * s.std[1] + s.mean[1], row[2] * s.std[2] + s.mean[2])
            }).collect();
            if a.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
                return Err(Error::NumericalFailure(format!("non-finite prediction for body {b} at step {k}")));
            }
            let pred = verlet_step(&cur[range.clone()], &prev[range.clone()], &a)?;
            let sm = shape_match(&pred, &topo.reference[range.clone()])
                .map_err(|e| Error::NumericalFailure(format!("shape matching failed for body {b} at step {k}: {e}")))?;
            next[range].copy_from_slice(&sm.projected);
            next_poses[b] = BodyPose { r: sm.r, t: sm.t };
            matches[b] = Some(sm);
        }
        traj_frames.push(
            next_poses
                .iter()
                .zip(bodies)
                .map(|(p, b)| if b.spec.is_static { Pose { x: b.state.x, q: b.state.q } } else { Pose { x: p.t, q: rotmat_to_quat(&p.r) } })
                .collect(),
        );
        frames.push(next);
        poses.push(next_poses);
        if keep {
            records.push(StepRecord { history, poses: cur_poses, contacts, graph, matches });
        }
        if frames.len() > h + 2 && !keep {
            frames.remove(0);
        }
    }
    let traj = Trajectory {
        bodies: bodies.iter().map(|b| TrajBody { spec: b.spec.clone(), mesh_ref: None }).collect(),
        dt: scene.dt,
        frames: traj_frames,
    };
    Ok(Simulation { traj, poses, steps: records })
}

/// Roll the learned simulator forward `steps` steps from a scene whose node
/// history is extrapolated from the bodies' velocities. Static bodies never move.
pub fn rollout(model: &GnnModel, scene: &SceneState, steps: usize) -> Result<Trajectory> {
    Ok(simulate(model, scene, steps, None, false)?.traj)
}

/// Rollout that reuses a given contact set per step, witnesses moving with their
/// bodies; the forward map whose exact derivative [`rollout_gradient`] computes.
pub fn rollout_frozen(model: &GnnModel, scene: &SceneState, steps: usize, contacts: &[Vec<FrozenContact>]) -> Result<Trajectory> {
    Ok(simulate(model, scene, steps, Some(contacts), false)?.traj)
}

/// Differentiable objective on a rollout.
#[derive(Clone, Debug, PartialEq)]
pub enum LossSpec {
    /// One coordinate (`axis` 0..3) of a body's final position.
    FinalCoordinate { body: usize, axis: usize },
    /// Squared planar distance of a body's final position to `target`, plus
    /// `speed_weight` times its squared final planar speed.
    PlanarTarget { body: usize, target: [f64; 2], speed_weight: f64 },
    /// Number of contacts along the rollout; discrete, so never differentiable.
    ContactCount,
}

impl LossSpec {
    /// Parse `final_coordinate body=1 axis=0`, `planar_target body=2 x=.. y=.. speed_weight=..`
    /// or `contact_count`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut it = s.split_whitespace();
        let kind = it.next().unwrap_or("");
        let mut kv = std::collections::BTreeMap::new();
        for tok in it {
            let Some((k, v)) = tok.split_once('=') else { return invalid(format!("loss spec token {tok:?} is not key=value")) };
            kv.insert(k, v);
        }
        let num = |k: &str| -> Result<f64> {
            kv.get(k).ok_or_else(|| Error::InvalidInput(format!("loss spec is missing {k}")))?.parse::<f64>().map_err(|_| Error::InvalidInput(format!("loss spec {k} is not a number")))
        };
        let idx = |k: &str| -> Result<usize> {
            kv.get(k).ok_or_else(|| Error::InvalidInput(format!("loss spec is missing {k}")))?.parse::<usize>().map_err(|_| Error::InvalidInput(format!("loss spec {k} is not an index")))
        };
        match kind {
            "final_coordinate" => Ok(LossSpec::FinalCoordinate { body: idx("body")?, axis: idx("axis")? }),
            "planar_target" => Ok(LossSpec::PlanarTarget { body: idx("body")?, target: [num("x")?, num("y")?], speed_weight: num("speed_weight")? }),
            "contact_count" => Ok(LossSpec::ContactCount),
            other => invalid(format!("unknown loss spec {other:?}")),
        }
    }

    /// Value and gradients `(frame, body, ∂/∂x)` with respect to body positions.
    pub fn evaluate(&self, positions: &[Vec<Vec3>], dt: f64) -> Result<(f64, Vec<(usize, usize, Vec3)>)> {
        let last = positions.len().checked_sub(1).ok_or_else(|| Error::InvalidInput("empty trajectory".into()))?;
        let nb = positions[0].len();
        match *self {
            LossSpec::ContactCount => invalid("contact count is a discrete quantity and has no gradient"),
            LossSpec::FinalCoordinate { body, axis } => {
                if body >= nb || axis > 2 {
                    return invalid(format!("loss refers to body {body} axis {axis} of {nb} bodies"));
                }
                let mut g = Vec3::zeros();
                g[axis] = 1.0;
                Ok((positions[last][body][axis], vec![(last, body, g)]))
            }
            LossSpec::PlanarTarget { body, target, speed_weight } => {
                if body >= nb || last < 1 {
                    return invalid("planar target loss needs a valid body and at least two frames");
                }
                let x = positions[last][body];
                let v = (x - positions[last - 1][body]) / dt;
                let dx = Vec3::new(x.x - target[0], x.y - target[1], 0.0);
                let vp = Vec3::new(v.x, v.y, 0.0);
                let loss = dx.norm_squared() + speed_weight * vp.norm_squared();
                let gv = vp * (2.0 * speed_weight / dt);
                Ok((loss, vec![(last, body, dx * 2.0 + gv), (last - 1, body, -gv)]))
            }
        }
    }
}

/// Loss value and gradients with respect to each body's initial linear velocity
/// and initial position.
#[derive(Clone, Debug)]
pub struct RolloutGradient {
    pub loss: f64,
    pub d_velocity: Vec<Vec3>,
    pub d_position: Vec<Vec3>,
    pub trajectory: Trajectory,
    /// Contact sets held fixed at each step.
    pub contacts: Vec<Vec<FrozenContact>>,
}

/// Reverse-mode gradient of `loss` through the rollout: decoder, message passing
/// and encoders, Verlet integration, shape matching, and face-face features whose
/// witness points follow the surrogate contact Jacobian under frozen contacts.
pub fn rollout_gradient(model: &GnnModel, scene: &SceneState, steps: usize, loss: &LossSpec) -> Result<RolloutGradient> {
    if *loss == LossSpec::ContactCount {
        return invalid("contact count is a discrete quantity and has no gradient");
    }
    let sim = simulate(model, scene, steps, None, true)?;
    let positions: Vec<Vec<Vec3>> = sim.poses.iter().map(|f| f.iter().map(|p| p.t).collect()).collect();
    let (value, lgrads) = loss.evaluate(&positions, scene.dt)?;

    let h = model.arch.history;
    let topo = Topology::from_bodies(&scene.bodies);
    let n = topo.num_nodes();
    let nb = topo.num_bodies();
    let mut g_frames = vec![vec![Vec3::zeros(); n]; steps + h + 1];
    let mut g_poses = vec![vec![PoseGrad::default(); nb]; steps + 1];
    for (f, b, g) in lgrads {
        g_poses[f][b].t += g;
    }
    let std = &model.norm.target.std;
    let mut scratch = model.zero_grads();
    for k in (0..steps).rev() {
        let rec = &sim.steps[k];
        let mut g_pred = vec![Vec3::zeros(); n];
        for b in 0..nb {
            let range = topo.nodes(b);
            if let Some(sm) = &rec.matches[b] {
                let gp = shape_match_adjoint(sm, &topo.reference[range.clone()], &g_frames[k + h + 1][range.clone()], &g_poses[k + 1][b].r, &g_poses[k + 1][b].t);
                g_pred[range].copy_from_slice(&gp);
            } else {
                for i in range {
                    let g = g_frames[k + h + 1][i];
                    g_frames[k + h][i] += g;
                }
            }
        }
        let mut g_out = Mat::zeros(n, 3);
        for i in 0..n {
            if topo.is_static[topo.node_body[i]] {
                continue;
            }
            let g = g_pred[i];
            g_frames[k + h][i] += g * 2.0;
            g_frames[k + h - 1][i] -= g;
            let row = g_out.row_mut(i);
            for c in 0..3 {
                row[c] = g[c] * std[c];
            }
        }
        let mut fwd = model.forward(&rec.graph);
        let gg = model.backward(&mut fwd, g_out, &mut scratch);
        let (gh, gp) = rec.graph.adjoint(&topo, &rec.history, &rec.poses, &rec.contacts, &gg);
        for (j, frame) in gh.into_iter().enumerate() {
            for (acc, g) in g_frames[k + j].iter_mut().zip(frame) {
                *acc += g;
            }
        }
        for (acc, g) in g_poses[k].iter_mut().zip(gp) {
            acc.r += g.r;
            acc.t += g.t;
        }
    }
    let mut d_velocity = vec![Vec3::zeros(); nb];
    let mut d_position = vec![Vec3::zeros(); nb];
    for b in 0..nb {
        if topo.is_static[b] {
            continue;
        }
        for j in 0..=h {
            let back = (h - j) as f64 * scene.dt;
            for i in topo.nodes(b) {
                d_velocity[b] -= g_frames[j][i] * back;
                d_position[b] += g_frames[j][i];
            }
        }
        d_position[b] += g_poses[0][b].t;
    }
    let contacts = sim.steps.into_iter().map(|r| r.contacts).collect();
    Ok(RolloutGradient { loss: value, d_velocity, d_position, trajectory: sim.traj, contacts })
}
