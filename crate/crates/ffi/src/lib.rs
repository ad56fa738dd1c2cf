//! C ABI over the core library. Objects are opaque heap handles released with
//! the matching `rg_*_free`; every fallible call returns an [`RgStatus`] and
//! leaves a message for [`rg_last_error_message`] on failure.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rigidgraph::collide::nearest_points;
use rigidgraph::datagen::bowling_scene;
use rigidgraph::error::Error;
use rigidgraph::gnn::{checkpoint, rollout, GRAVITY};
use rigidgraph::optimctl::{canonical_push_task, optimize_push};
use rigidgraph::sysid::initial_scene;
use rigidgraph::teacher::{self, ContactParams, SceneState};
use rigidgraph::trajectory::Trajectory;

/// Call outcome; anything other than `RG_OK` sets the thread's last error.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RgStatus {
    RgOk = 0,
    RgNullPointer = 1,
    RgInvalidInput = 2,
    RgNumericalFailure = 3,
    RgIo = 4,
    RgFormat = 5,
    RgPanic = 6,
}

/// Learned simulator loaded from a checkpoint.
pub struct RgModel(rigidgraph::gnn::GnnModel);
/// Bodies, gravity and time step.
pub struct RgScene(SceneState);
/// Poses of every body over time.
pub struct RgTrajectory(Trajectory);

/// Result of a push optimization.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct RgPushResult {
    pub final_loss: f64,
    pub v_x: f64,
    pub v_y: f64,
    /// Descent iterations taken.
    pub iterations: u32,
    pub converged: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RgStatus {
    match e {
        Error::InvalidInput(_) => RgStatus::RgInvalidInput,
        Error::NumericalFailure(_) => RgStatus::RgNumericalFailure,
        Error::Io { .. } => RgStatus::RgIo,
        Error::Format { .. } => RgStatus::RgFormat,
    }
}

/// Run `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), RgStatusError>) -> RgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RgStatus::RgOk,
        Ok(Err(RgStatusError(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned()).unwrap_or_default();
            set_error(format!("internal panic: {msg}"));
            RgStatus::RgPanic
        }
    }
}

struct RgStatusError(RgStatus, String);

impl From<Error> for RgStatusError {
    fn from(e: Error) -> Self {
        RgStatusError(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> RgStatusError {
    RgStatusError(RgStatus::RgNullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> RgStatusError {
    RgStatusError(RgStatus::RgInvalidInput, msg.into())
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, RgStatusError> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, RgStatusError> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(Path::new(s))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), RgStatusError> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or null if none. Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn rg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a model checkpoint.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rg_model_load(path: *const c_char, out: *mut *mut RgModel) -> RgStatus {
    guard(|| {
        let (m, _) = checkpoint::load(path_arg(path)?)?;
        put(out, RgModel(m))
    })
}

/// # Safety
/// `model` must come from [`rg_model_load`] and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn rg_model_free(model: *mut RgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Ten cubes in a triangle struck by an eleventh, on a ground slab.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rg_scene_bowling(out: *mut *mut RgScene) -> RgStatus {
    guard(|| put(out, RgScene(bowling_scene()?)))
}

/// The canonical two-cube push scene at its default launch velocity.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rg_scene_push_task(out: *mut *mut RgScene) -> RgStatus {
    guard(|| {
        let t = canonical_push_task()?;
        put(out, RgScene(t.scene_with(t.decision)))
    })
}

/// Scene at the first frame of a trajectory file, velocities reconstructed from its poses.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rg_scene_from_trajectory(path: *const c_char, out: *mut *mut RgScene) -> RgStatus {
    guard(|| {
        let t = Trajectory::load(path_arg(path)?)?;
        put(out, RgScene(initial_scene(&t, GRAVITY.into())?))
    })
}

/// # Safety
/// `scene` must be a live scene handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rg_scene_num_bodies(scene: *const RgScene, out: *mut usize) -> RgStatus {
    guard(|| {
        let s = deref(scene, "scene")?;
        *out.as_mut().ok_or_else(|| null("output pointer"))? = s.0.bodies.len();
        Ok(())
    })
}

/// Signed distance between two bodies of a scene (negative when penetrating).
///
/// # Safety
/// `scene` must be a live scene handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rg_scene_body_distance(scene: *const RgScene, a: usize, b: usize, out: *mut f64) -> RgStatus {
    guard(|| {
        let s = &deref(scene, "scene")?.0;
        let n = s.bodies.len();
        if a >= n || b >= n || a == b {
            return Err(invalid(format!("bodies {a} and {b} must be distinct indices below {n}")));
        }
        let (ba, bb) = (&s.bodies[a], &s.bodies[b]);
        let p = nearest_points(&ba.spec.mesh, &ba.state, &bb.spec.mesh, &bb.state)?;
        *out.as_mut().ok_or_else(|| null("output pointer"))? = p.dist;
        Ok(())
    })
}

/// # Safety
/// `scene` must come from an `rg_scene_*` constructor and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn rg_scene_free(scene: *mut RgScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Roll the learned simulator forward `steps` steps.
///
/// # Safety
/// `model` and `scene` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rg_rollout(model: *const RgModel, scene: *const RgScene, steps: usize, out: *mut *mut RgTrajectory) -> RgStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let s = deref(scene, "scene")?;
        put(out, RgTrajectory(rollout(&m.0, &s.0, steps)?))
    })
}

/// Roll the analytic contact simulator forward with the eight contact
/// parameters `d0, d_width, width, midpoint, power, time_constant, damping_ratio, mu`.
///
/// # Safety
/// `scene` must be a live handle, `params` must point to 8 doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_teacher_rollout(scene: *const RgScene, params: *const f64, steps: usize, out: *mut *mut RgTrajectory) -> RgStatus {
    guard(|| {
        let s = deref(scene, "scene")?;
        if params.is_null() {
            return Err(null("params"));
        }
        let p: [f64; 8] = std::slice::from_raw_parts(params, 8).try_into().expect("eight values");
        let p = ContactParams::from_array(p);
        p.validate()?;
        put(out, RgTrajectory(teacher::rollout(&s.0, &p, steps)?))
    })
}

/// # Safety
/// `traj` must be a live handle; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_trajectory_shape(traj: *const RgTrajectory, frames: *mut usize, bodies: *mut usize) -> RgStatus {
    guard(|| {
        let t = &deref(traj, "trajectory")?.0;
        *frames.as_mut().ok_or_else(|| null("frames"))? = t.num_frames();
        *bodies.as_mut().ok_or_else(|| null("bodies"))? = t.num_bodies();
        Ok(())
    })
}

/// Pose of one body at one frame as `x y z qw qx qy qz`.
///
/// # Safety
/// `traj` must be a live handle and `out` must point to 7 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rg_trajectory_pose(traj: *const RgTrajectory, frame: usize, body: usize, out: *mut f64) -> RgStatus {
    guard(|| {
        let t = &deref(traj, "trajectory")?.0;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let p = t
            .frames
            .get(frame)
            .and_then(|f| f.get(body))
            .ok_or_else(|| invalid(format!("frame {frame} body {body} out of range ({} frames, {} bodies)", t.num_frames(), t.num_bodies())))?;
        let v = [p.x.x, p.x.y, p.x.z, p.q.w, p.q.i, p.q.j, p.q.k];
        std::ptr::copy_nonoverlapping(v.as_ptr(), out, 7);
        Ok(())
    })
}

/// # Safety
/// `traj` must come from a rollout call and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn rg_trajectory_free(traj: *mut RgTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Optimize the pusher's launch velocity on the canonical push task.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rg_optimize_push(model: *const RgModel, iters: usize, step_size: f64, seed: u64, out: *mut RgPushResult) -> RgStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let out = out.as_mut().ok_or_else(|| null("output pointer"))?;
        let run = optimize_push(&m.0, &canonical_push_task()?, iters, step_size, seed)?;
        let v = run.velocity_history.last().expect("initial decision");
        *out = RgPushResult {
            final_loss: *run.loss_history.last().expect("initial loss"),
            v_x: v[0],
            v_y: v[1],
            iterations: (run.loss_history.len() - 1) as u32,
            converged: run.converged,
        };
        Ok(())
    })
}
