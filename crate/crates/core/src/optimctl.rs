//! Gradient-based choice of a pusher's initial velocity so that a struck cube
//! comes to rest at a target point, using reverse-mode gradients through the
//! learned simulator.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datagen::{ground_for, ScalingSpec};
use crate::error::{invalid, Error, Result};
use crate::geom::{quat_from_axis_angle, Body, BodySpec, RigidBodyState, TriMesh, Vec3};
use crate::gnn::{rollout_gradient, GnnModel, LossSpec};
use crate::teacher::SceneState;
use crate::trajectory::Trajectory;

/// Weight of the squared final planar speed in the task loss.
pub const STOP_WEIGHT: f64 = 0.1;

/// Retries with a halved step after a non-finite loss or gradient.
const MAX_NONFINITE_RETRIES: usize = 5;
/// Step halvings allowed per iteration while searching for a non-increasing loss.
const MAX_BACKTRACKS: usize = 30;

#[derive(Clone, Debug)]
pub struct PushTask {
    pub scene: SceneState,
    pub pusher: usize,
    pub struck: usize,
    pub target: [f64; 2],
    pub target_radius: f64,
    /// Initial planar velocity of the pusher (m/s).
    pub decision: [f64; 2],
    pub horizon: usize,
    /// Upper bound of the pusher speed.
    pub v_max: f64,
    /// Relative perturbation of the initial decision drawn per seed (0 disables).
    pub jitter: f64,
}

impl PushTask {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if !(self.target_radius > 0.0) {
            return invalid(format!("target radius must be positive, got {}", self.target_radius));
        }
        if self.horizon < 2 {
            return invalid(format!("horizon must be at least 2, got {}", self.horizon));
        }
        let n = self.scene.bodies.len();
        for (what, b) in [("pusher", self.pusher), ("struck", self.struck)] {
            if b >= n || self.scene.bodies[b].spec.is_static {
                return invalid(format!("{what} body {b} must be a dynamic body of the scene"));
            }
        }
        if self.pusher == self.struck {
            return invalid("pusher and struck body must differ");
        }
        if !(self.v_max > 0.0) || !(self.jitter >= 0.0) || !self.target.iter().chain(&self.decision).all(|v| v.is_finite()) {
            return invalid("v_max must be positive, jitter non-negative, target and decision finite");
        }
        Ok(())
    }

    pub fn threshold(&self) -> f64 {
        self.target_radius * self.target_radius
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec::PlanarTarget { body: self.struck, target: self.target, speed_weight: STOP_WEIGHT }
    }

    /// The scene with the pusher launched at `decision`.
    pub fn scene_with(&self, decision: [f64; 2]) -> SceneState {
        let mut scene = self.scene.clone();
        scene.bodies[self.pusher].state.v = Vec3::new(decision[0], decision[1], 0.0);
        scene
    }

    /// Clamp a decision to the speed box `[0, v_max]`.
    pub fn clamp(&self, d: [f64; 2]) -> [f64; 2] {
        let s = d[0].hypot(d[1]);
        if s > self.v_max {
            [d[0] * self.v_max / s, d[1] * self.v_max / s]
        } else {
            d
        }
    }
}

/// Two 5 cm, 0.1 kg cubes on the ground 2 cm apart along x, the pusher
/// launched at 0.8 m/s; the target lies 2 cm ahead of the struck cube's start.
pub fn canonical_push_task() -> Result<PushTask> {
    let spec = ScalingSpec::default();
    let cube = |x: f64| -> Result<Body> {
        let b = BodySpec::from_mesh(TriMesh::cube(0.05)?, 0.1, false)?;
        Ok(Body::new(b, RigidBodyState::at_rest(Vec3::new(x, 0.0, 0.025), quat_from_axis_angle(&Vec3::z(), 0.0))))
    };
    let scene = SceneState { bodies: vec![ground_for(&spec)?, cube(-0.07)?, cube(0.0)?], gravity: spec.gravity, dt: spec.dt };
    Ok(PushTask { scene, pusher: 1, struck: 2, target: [0.02, 0.0], target_radius: 0.005, decision: [0.8, 0.0], horizon: 30, v_max: 1.5, jitter: 0.2 })
}

/// Squared planar distance of the struck cube's final position to the target
/// plus [`STOP_WEIGHT`] times its squared final planar speed.
pub fn task_loss(traj: &Trajectory, task: &PushTask) -> Result<f64> {
    if traj.num_frames() < 2 || traj.num_bodies() <= task.struck {
        return invalid("trajectory must cover at least two frames and contain the struck body");
    }
    let positions: Vec<Vec<Vec3>> = traj.frames.iter().map(|f| f.iter().map(|p| p.x).collect()).collect();
    Ok(task.loss_spec().evaluate(&positions, traj.dt)?.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimRun {
    pub loss_history: Vec<f64>,
    pub velocity_history: Vec<[f64; 2]>,
    pub converged: bool,
}

impl OptimRun {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,loss,v_x,v_y\n");
        for (i, (l, v)) in self.loss_history.iter().zip(&self.velocity_history).enumerate() {
            s.push_str(&format!("{i},{l},{},{}\n", v[0], v[1]));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Loss and planar decision gradient, or `None` when either is non-finite or
/// the rollout itself fails numerically.
fn evaluate(model: &GnnModel, task: &PushTask, d: [f64; 2]) -> Result<Option<(f64, [f64; 2])>> {
    match rollout_gradient(model, &task.scene_with(d), task.horizon, &task.loss_spec()) {
        Ok(g) => {
            let gv = g.d_velocity[task.pusher];
            let out = (g.loss, [gv.x, gv.y]);
            Ok((out.0.is_finite() && gv.x.is_finite() && gv.y.is_finite()).then_some(out))
        }
        Err(Error::NumericalFailure(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Gradient descent on the pusher's initial planar velocity with backtracking:
/// a step is taken only if it does not increase the loss, otherwise the step
/// size is halved. After an accepted step the step size grows by 1.5x. The
/// starting decision is the task's, perturbed by `jitter` drawn from `seed`.
pub fn optimize_push(model: &GnnModel, task: &PushTask, iters: usize, step_size: f64, seed: u64) -> Result<OptimRun> {
    task.validate()?;
    if iters < 1 || !(step_size > 0.0) {
        return invalid("iters must be at least 1 and step_size positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (scale, angle) = if task.jitter > 0.0 {
        (1.0 + rng.gen_range(-task.jitter..task.jitter), rng.gen_range(-task.jitter..task.jitter) * 0.5)
    } else {
        (1.0, 0.0)
    };
    let (c, s) = (angle.cos(), angle.sin());
    let d0 = task.decision;
    let mut d = task.clamp([scale * (c * d0[0] - s * d0[1]), scale * (s * d0[0] + c * d0[1])]);
    let Some((mut loss, mut grad)) = evaluate(model, task, d)? else {
        return Err(Error::NumericalFailure(format!("non-finite loss or gradient at the initial decision {d:?}")));
    };
    let mut run = OptimRun { loss_history: vec![loss], velocity_history: vec![d], converged: loss <= task.threshold() };
    let mut step = step_size;
    let mut iter = 0;
    while !run.converged && iter < iters {
        iter += 1;
        let mut nonfinite = 0;
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            let cand = task.clamp([d[0] - step * grad[0], d[1] - step * grad[1]]);
            match evaluate(model, task, cand)? {
                None => {
                    nonfinite += 1;
                    if nonfinite > MAX_NONFINITE_RETRIES {
                        return Err(Error::NumericalFailure(format!(
                            "non-finite loss or gradient at iteration {iter} after {MAX_NONFINITE_RETRIES} step halvings (decision {cand:?}, step {step})"
                        )));
                    }
                    step *= 0.5;
                }
                Some((l, g)) if l <= loss => {
                    (d, loss, grad) = (cand, l, g);
                    accepted = true;
                    break;
                }
                Some(_) => step *= 0.5,
            }
        }
        run.loss_history.push(loss);
        run.velocity_history.push(d);
        run.converged = loss <= task.threshold();
        if !accepted {
            break;
        }
        step *= 1.5;
    }
    Ok(run)
}
