//! Contact-parameter identification: velocity reconstruction from poses, the
//! pose-discrepancy trajectory loss, and CMA-ES search over [`ContactParams`].

mod cmaes;

pub use cmaes::{cmaes_minimize, population_size, CmaesResult, ParamBounds, PENALTY};

use crate::error::{invalid, Result};
use crate::geom::{geodesic_angle, rotmat_log, Body, RigidBodyState, Vec3};
use crate::teacher::{rollout, ContactParams, SceneState};
use crate::trajectory::Trajectory;

impl ParamBounds {
    /// Search box for [`ContactParams`] in field order.
    pub fn contact_defaults() -> Self {
        ParamBounds { lower: ContactParams::LOWER.to_vec(), upper: ContactParams::UPPER.to_vec() }
    }
}

/// Backward-difference `(v, ω)` per body for every frame; frame 0 copies frame 1.
pub fn finite_diff_velocities(traj: &Trajectory) -> Result<Vec<Vec<(Vec3, Vec3)>>> {
    if traj.num_frames() < 2 {
        return invalid("velocity reconstruction needs at least two frames");
    }
    let dt = traj.dt;
    let mut out: Vec<Vec<(Vec3, Vec3)>> = Vec::with_capacity(traj.num_frames());
    for t in 1..traj.num_frames() {
        let frame = traj.frames[t]
            .iter()
            .zip(&traj.frames[t - 1])
            .map(|(cur, prev)| {
                let v = (cur.x - prev.x) / dt;
                let w = rotmat_log(&(cur.rotation() * prev.rotation().transpose())) / dt;
                (v, w)
            })
            .collect();
        out.push(frame);
    }
    out.insert(0, out[0].clone());
    Ok(out)
}

/// Σ_t Σ_i ‖x − x̂‖/w_i + geodesic angle, over frames 1..T.
pub fn trajectory_loss(real: &Trajectory, sim: &Trajectory, weights: &[f64]) -> Result<f64> {
    if real.num_frames() != sim.num_frames() || real.num_bodies() != sim.num_bodies() {
        return invalid(format!(
            "trajectory shapes differ: {}x{} vs {}x{}",
            real.num_frames(),
            real.num_bodies(),
            sim.num_frames(),
            sim.num_bodies()
        ));
    }
    if weights.len() != real.num_bodies() {
        return invalid(format!("{} weights for {} bodies", weights.len(), real.num_bodies()));
    }
    let mut loss = 0.0;
    for (fr, fs) in real.frames.iter().zip(&sim.frames).skip(1) {
        for ((a, b), w) in fr.iter().zip(fs).zip(weights) {
            loss += (a.x - b.x).norm() / w + geodesic_angle(&a.rotation(), &b.rotation());
        }
    }
    Ok(loss)
}

/// Demonstrations to fit, sharing bodies and time step.
#[derive(Clone, Debug)]
pub struct IdentDataset {
    pub demos: Vec<Trajectory>,
    pub weights: Vec<f64>,
    pub gravity: Vec3,
}

impl IdentDataset {
    pub fn new(demos: Vec<Trajectory>, weights: Vec<f64>) -> Result<Self> {
        let d = IdentDataset { demos, weights, gravity: Vec3::new(0.0, 0.0, -9.81) };
        d.validate()?;
        Ok(d)
    }

    /// Weights default to each body's shortest mesh edge.
    pub fn with_default_weights(demos: Vec<Trajectory>) -> Result<Self> {
        let Some(first) = demos.first() else { return invalid("dataset has no demonstrations") };
        let weights = first.bodies.iter().map(|b| b.spec.mesh.shortest_edge()).collect();
        Self::new(demos, weights)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.demos.first() else { return invalid("dataset has no demonstrations") };
        if self.weights.len() != first.num_bodies() || self.weights.iter().any(|w| !(*w > 0.0)) {
            return invalid("need one positive weight per body");
        }
        for (k, d) in self.demos.iter().enumerate() {
            if d.num_frames() < 2 {
                return invalid(format!("demo {k} has fewer than two frames"));
            }
            if d.dt != first.dt || d.num_bodies() != first.num_bodies() {
                return invalid(format!("demo {k} differs from demo 0 in dt or body count"));
            }
            for (a, b) in d.bodies.iter().zip(&first.bodies) {
                if a.spec.mass != b.spec.mass || a.spec.is_static != b.spec.is_static || a.spec.mesh != b.spec.mesh {
                    return invalid(format!("demo {k} body specs differ from demo 0"));
                }
            }
        }
        Ok(())
    }
}

/// Scene seeded from a trajectory's first pose. A body's velocity is frame 1's
/// backward difference, extrapolated linearly to frame 0 through frame 2's when
/// the implied acceleration is at most twice gravity (smooth sliding, no impact).
pub fn initial_scene(traj: &Trajectory, gravity: Vec3) -> Result<SceneState> {
    let vel = finite_diff_velocities(traj)?;
    let limit = 2.0 * gravity.norm() * traj.dt;
    let init: Vec<(Vec3, Vec3)> = (0..traj.num_bodies())
        .map(|i| {
            let (v1, w1) = vel[1][i];
            match vel.get(2).map(|f| f[i]) {
                Some((v2, w2)) if (v2 - v1).norm() <= limit => (v1 * 2.0 - v2, w1 * 2.0 - w2),
                _ => (v1, w1),
            }
        })
        .collect();
    let bodies = traj
        .bodies
        .iter()
        .zip(&traj.frames[0])
        .zip(&init)
        .map(|((b, p), (v, w))| {
            let (v, w) = if b.spec.is_static { (Vec3::zeros(), Vec3::zeros()) } else { (*v, *w) };
            Body::new(b.spec.clone(), RigidBodyState { x: p.x, q: p.q, v, w })
        })
        .collect();
    Ok(SceneState { bodies, gravity, dt: traj.dt })
}

/// Total loss of the teacher under `params` over all demos.
pub fn dataset_loss(data: &IdentDataset, params: &ContactParams) -> Result<f64> {
    let mut total = 0.0;
    for demo in &data.demos {
        let scene = initial_scene(demo, data.gravity)?;
        let sim = rollout(&scene, params, demo.num_frames() - 1)?;
        total += trajectory_loss(demo, &sim, &data.weights)?;
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Identification {
    pub params: ContactParams,
    pub loss: f64,
    /// Loss at the center of the search box.
    pub initial_loss: f64,
    pub history: Vec<f64>,
}

/// Fit contact parameters to the demos with CMA-ES; failed rollouts score [`PENALTY`].
pub fn identify(data: &IdentDataset, bounds: &ParamBounds, budget: usize, seed: u64) -> Result<Identification> {
    data.validate()?;
    if bounds.dim() != 8 {
        return invalid(format!("contact parameter bounds need 8 entries, got {}", bounds.dim()));
    }
    let objective = |x: &[f64]| {
        let p = ContactParams::from_array(x.try_into().expect("eight parameters"));
        dataset_loss(data, &p).unwrap_or(PENALTY)
    };
    let r = cmaes_minimize(&objective, bounds, budget, seed)?;
    Ok(Identification {
        params: ContactParams::from_array(r.best.as_slice().try_into().expect("eight parameters")),
        loss: r.best_loss,
        initial_loss: r.center_loss,
        history: r.history,
    })
}
