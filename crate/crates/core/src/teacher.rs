//! Analytic compliant-contact rigid-body simulator.
//!
//! Contacts are the penetrating pairs of [`contact_pairs`]. Each behaves as a
//! mass-normalized spring-damper, `f_n = m·w·d(r)·(k r − b v_sep)`, scaled by the
//! impedance `d(r)`, where `m` is the translational reduced mass of the body pair
//! and `w` the pair's share of the body pair's penetration footprint. Friction is
//! tanh-regularized Coulomb. The step is semi-implicit: the spring-damper is solved
//! implicitly for the velocities that advance the poses, then a rigid inelastic
//! solve from the same pre-contact velocities gives the stored velocities, which
//! can only lose kinetic energy.

use crate::collide::{contact_pairs, default_d_eps, ContactPair, ContactSet};
use crate::error::{invalid, Result};
use crate::geom::{integrate_quat, skew, Body, BodySpec, Mat3, Quat, RigidBodyState, TriMesh, Vec3};
use crate::trajectory::{Pose, TrajBody, Trajectory};

/// Friction regularization velocity (m/s).
pub const V_REG: f64 = 1e-3;
const SOLVER_ITERS: usize = 100;

/// Identification target: impedance 5-tuple, spring-damper pair, friction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactParams {
    pub d0: f64,
    pub d_width: f64,
    pub width: f64,
    pub midpoint: f64,
    pub power: f64,
    pub time_constant: f64,
    pub damping_ratio: f64,
    pub mu: f64,
}

impl ContactParams {
    pub const NAMES: [&'static str; 8] = ["d0", "d_width", "width", "midpoint", "power", "time_constant", "damping_ratio", "mu"];
    pub const LOWER: [f64; 8] = [0.9, 0.95, 0.0001, 0.001, 1.0, 0.001, 0.1, 0.0];
    pub const UPPER: [f64; 8] = [0.95, 0.99, 0.01, 0.1, 5.0, 0.1, 10.0, 1.0];

    pub fn to_array(&self) -> [f64; 8] {
        [self.d0, self.d_width, self.width, self.midpoint, self.power, self.time_constant, self.damping_ratio, self.mu]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        ContactParams {
            d0: a[0],
            d_width: a[1],
            width: a[2],
            midpoint: a[3],
            power: a[4],
            time_constant: a[5],
            damping_ratio: a[6],
            mu: a[7],
        }
    }

    /// Center of the default search box.
    pub fn box_center() -> Self {
        let mut a = [0.0; 8];
        for i in 0..8 {
            a[i] = 0.5 * (Self::LOWER[i] + Self::UPPER[i]);
        }
        Self::from_array(a)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.to_array().into_iter().enumerate() {
            if !(Self::LOWER[i]..=Self::UPPER[i]).contains(&v) {
                return invalid(format!(
                    "{} = {v} outside [{}, {}]",
                    Self::NAMES[i],
                    Self::LOWER[i],
                    Self::UPPER[i]
                ));
            }
        }
        Ok(())
    }

    pub fn stiffness(&self) -> f64 {
        1.0 / (self.time_constant * self.time_constant)
    }

    pub fn damping(&self) -> f64 {
        2.0 * self.damping_ratio / self.time_constant
    }

    /// `name=value` lines in field order.
    pub fn to_text(&self) -> String {
        Self::NAMES.iter().zip(self.to_array()).map(|(n, v)| format!("{n}={v}\n")).collect()
    }

    /// Parse `name=value` lines; every field must appear once, other keys are ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut vals = [None; 8];
        for line in text.lines() {
            let Some((k, v)) = line.trim().split_once('=') else { continue };
            if let Some(i) = Self::NAMES.iter().position(|n| *n == k.trim()) {
                let x: f64 = v.trim().parse().map_err(|_| crate::Error::InvalidInput(format!("bad value for {k}: {v:?}")))?;
                vals[i] = Some(x);
            }
        }
        let mut a = [0.0; 8];
        for i in 0..8 {
            a[i] = vals[i].ok_or_else(|| crate::Error::InvalidInput(format!("missing parameter {}", Self::NAMES[i])))?;
        }
        Ok(Self::from_array(a))
    }
}

/// Bodies plus global simulation settings.
#[derive(Clone, Debug)]
pub struct SceneState {
    pub bodies: Vec<Body>,
    pub gravity: Vec3,
    pub dt: f64,
}

impl SceneState {
    pub const DEFAULT_DT: f64 = 1.0 / 60.0;

    pub fn new(bodies: Vec<Body>) -> Self {
        SceneState { bodies, gravity: Vec3::new(0.0, 0.0, -9.81), dt: Self::DEFAULT_DT }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bodies.is_empty() {
            return invalid("scene has no bodies");
        }
        if !(self.dt > 0.0) {
            return invalid(format!("dt must be positive, got {}", self.dt));
        }
        Ok(())
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.bodies
            .iter()
            .filter(|b| !b.spec.is_static)
            .map(|b| {
                let r = b.state.rotation();
                let iw = r * b.spec.inertia * r.transpose();
                0.5 * b.spec.mass * b.state.v.norm_squared() + 0.5 * b.state.w.dot(&(iw * b.state.w))
            })
            .sum()
    }

    pub fn linear_momentum(&self) -> Vec3 {
        self.bodies.iter().filter(|b| !b.spec.is_static).map(|b| b.state.v * b.spec.mass).sum()
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.bodies.iter().map(|b| Pose { x: b.state.x, q: b.state.q }).collect()
    }
}

/// Static ground slab whose top face is the plane z = 0.
pub fn ground_body(half_extent: f64, thickness: f64) -> Result<Body> {
    let mesh = TriMesh::cuboid(Vec3::new(half_extent, half_extent, thickness / 2.0))?;
    let spec = BodySpec::from_mesh(mesh, 0.0, true)?;
    Ok(Body::new(spec, RigidBodyState::at_rest(Vec3::new(0.0, 0.0, -thickness / 2.0), Quat::identity())))
}

/// Impedance `d(r)` between `d0` (no violation) and `d_width` (`r >= width`).
pub fn impedance(violation: f64, p: &ContactParams) -> Result<f64> {
    if !(violation >= 0.0) {
        return invalid(format!("violation must be non-negative, got {violation}"));
    }
    if violation >= p.width {
        return Ok(p.d_width);
    }
    let s = violation / p.width;
    let (m, pw) = (p.midpoint, p.power);
    // y(s) = a s^p below the midpoint and 1 - b (1-s)^p above, with value and slope
    // continuous at s = m: a = m^(1-p), b = (1-m)^(1-p).
    let y = if s <= m { s.powf(pw) * m.powf(1.0 - pw) } else { 1.0 - (1.0 - s).powf(pw) * (1.0 - m).powf(1.0 - pw) };
    Ok(p.d0 + (p.d_width - p.d0) * y)
}

/// Force-and-torque pair `[f, τ]` about a body's center of mass.
pub type Wrench = [f64; 6];

/// Per-pair weights: share of footprint area within each body pair (uniform when
/// the body pair has only zero-area fallback contacts).
fn pair_weights(pairs: &[&ContactPair]) -> Vec<f64> {
    let mut w = vec![0.0; pairs.len()];
    let mut start = 0;
    while start < pairs.len() {
        let key = (pairs[start].body_a, pairs[start].body_b);
        let end = start + pairs[start..].iter().take_while(|p| (p.body_a, p.body_b) == key).count();
        let total: f64 = pairs[start..end].iter().map(|p| p.area).sum();
        for k in start..end {
            w[k] = if total > 0.0 { pairs[k].area / total } else { 1.0 / (end - start) as f64 };
        }
        start = end;
    }
    w
}

fn reduced_mass(a: &BodySpec, b: &BodySpec) -> f64 {
    1.0 / (a.inv_mass() + b.inv_mass())
}

/// Explicit spring-damper-friction wrenches on A and B for one penetrating pair
/// carrying weight `weight`. Non-penetrating pairs produce zero wrenches.
pub fn contact_force(pair: &ContactPair, weight: f64, bodies: &[Body], params: &ContactParams) -> Result<(Wrench, Wrench)> {
    if pair.dist >= 0.0 {
        return Ok(([0.0; 6], [0.0; 6]));
    }
    let (a, b) = (&bodies[pair.body_a], &bodies[pair.body_b]);
    let c = 0.5 * (pair.p_a + pair.p_b);
    let n = pair.normal;
    let r = -pair.dist;
    let rel = b.state.point_velocity(&c) - a.state.point_velocity(&c);
    let v_sep = rel.dot(&n);
    let m = reduced_mass(&a.spec, &b.spec) * weight;
    let d = impedance(r, params)?;
    let f_n = (m * d * (params.stiffness() * r - params.damping() * v_sep)).max(0.0);
    let vt = rel - n * v_sep;
    let speed = vt.norm();
    let f_t = if speed > 0.0 { -vt / speed * (params.mu * f_n * (speed / V_REG).tanh()) } else { Vec3::zeros() };
    let f_b = n * f_n + f_t;
    let wrench = |f: Vec3, x: &Vec3| {
        let tau = (c - x).cross(&f);
        [f.x, f.y, f.z, tau.x, tau.y, tau.z]
    };
    Ok((wrench(-f_b, &a.state.x), wrench(f_b, &b.state.x)))
}

struct Contact {
    a: usize,
    b: usize,
    ra: Vec3,
    rb: Vec3,
    n: Vec3,
    t: [Vec3; 2],
    k_nn: f64,
    k_t: [[f64; 2]; 2],
    bias: f64,
    gamma: f64,
}

struct Dyn {
    inv_m: f64,
    inv_i: Mat3,
}

fn tangents(n: &Vec3) -> [Vec3; 2] {
    let helper = if n.x.abs() < 0.6 { Vec3::x() } else { Vec3::y() };
    let t1 = n.cross(&helper).normalize();
    [t1, n.cross(&t1)]
}

fn rel_velocity(c: &Contact, v: &[Vec3], w: &[Vec3]) -> Vec3 {
    (v[c.b] + w[c.b].cross(&c.rb)) - (v[c.a] + w[c.a].cross(&c.ra))
}

fn apply_impulse(c: &Contact, dy: &[Dyn], p: Vec3, v: &mut [Vec3], w: &mut [Vec3]) {
    v[c.b] += p * dy[c.b].inv_m;
    w[c.b] += dy[c.b].inv_i * c.rb.cross(&p);
    v[c.a] -= p * dy[c.a].inv_m;
    w[c.a] -= dy[c.a].inv_i * c.ra.cross(&p);
}

/// Point inverse-mass matrix of the relative velocity at the contact.
fn point_inv_mass(ra: &Vec3, rb: &Vec3, da: &Dyn, db: &Dyn) -> Mat3 {
    let (sa, sb) = (skew(ra), skew(rb));
    Mat3::identity() * (da.inv_m + db.inv_m) - sa * da.inv_i * sa - sb * db.inv_i * sb
}

/// Implicit regularized friction: the tangential impulse λ_t with
/// `s = s0 + k λ_t` and `λ_t = −μ λ_n tanh(|s|/v_reg) ŝ`.
fn friction_target(s0: [f64; 2], k_t: f64, mu_ln: f64) -> [f64; 2] {
    let s0n = (s0[0] * s0[0] + s0[1] * s0[1]).sqrt();
    if s0n == 0.0 || mu_ln <= 0.0 {
        return [0.0, 0.0];
    }
    // σ + k μλ tanh(σ/v) = |s0| on [0, |s0|]; the left side is increasing.
    let c = k_t * mu_ln;
    let (mut lo, mut hi) = (0.0, s0n);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if mid + c * (mid / V_REG).tanh() > s0n {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mag = mu_ln * (0.5 * (lo + hi) / V_REG).tanh();
    [-s0[0] / s0n * mag, -s0[1] / s0n * mag]
}

fn solve(contacts: &[Contact], dy: &[Dyn], mu: f64, v: &mut [Vec3], w: &mut [Vec3], soft: bool) {
    let mut ln = vec![0.0; contacts.len()];
    let mut lt = vec![[0.0; 2]; contacts.len()];
    for _ in 0..SOLVER_ITERS {
        for (i, c) in contacts.iter().enumerate() {
            let vn = rel_velocity(c, v, w).dot(&c.n);
            let delta = if soft {
                -(vn + c.bias + c.gamma * ln[i]) / (c.k_nn + c.gamma)
            } else {
                -vn / c.k_nn
            };
            let new = (ln[i] + delta).max(0.0);
            apply_impulse(c, dy, c.n * (new - ln[i]), v, w);
            ln[i] = new;

            let rel = rel_velocity(c, v, w);
            let vt = [rel.dot(&c.t[0]), rel.dot(&c.t[1])];
            // Tangential velocity with this contact's current friction removed.
            let kt = &c.k_t;
            let s0 = [
                vt[0] - (kt[0][0] * lt[i][0] + kt[0][1] * lt[i][1]),
                vt[1] - (kt[1][0] * lt[i][0] + kt[1][1] * lt[i][1]),
            ];
            let k_avg = 0.5 * (kt[0][0] + kt[1][1]);
            let target = friction_target(s0, k_avg, mu * ln[i]);
            let mut d = [target[0] - lt[i][0], target[1] - lt[i][1]];
            if !soft {
                // Scale the update so it never adds kinetic energy.
                let dv = d[0] * vt[0] + d[1] * vt[1];
                let dkd = d[0] * (kt[0][0] * d[0] + kt[0][1] * d[1]) + d[1] * (kt[1][0] * d[0] + kt[1][1] * d[1]);
                if dv >= 0.0 || dkd <= 0.0 {
                    continue;
                }
                let beta = (-dv / dkd).min(1.0);
                d = [d[0] * beta, d[1] * beta];
            }
            apply_impulse(c, dy, c.t[0] * d[0] + c.t[1] * d[1], v, w);
            lt[i] = [lt[i][0] + d[0], lt[i][1] + d[1]];
        }
    }
}

/// Advance the scene by one step of `scene.dt`.
pub fn step(scene: &SceneState, params: &ContactParams) -> Result<SceneState> {
    Ok(step_with_contacts(scene, params)?.0)
}

/// [`step`] that also returns the contact set detected at the start of the step.
pub fn step_with_contacts(scene: &SceneState, params: &ContactParams) -> Result<(SceneState, ContactSet)> {
    scene.validate()?;
    let bodies = &scene.bodies;
    let dt = scene.dt;
    let set = contact_pairs(bodies, default_d_eps(bodies))?;
    let pen: Vec<&ContactPair> = set.penetrating().collect();
    let weights = pair_weights(&pen);
    let dy: Vec<Dyn> = bodies
        .iter()
        .map(|b| Dyn { inv_m: b.spec.inv_mass(), inv_i: b.spec.inv_inertia_world(&b.state.rotation()) })
        .collect();
    let (k, bdamp) = (params.stiffness(), params.damping());
    let mut contacts = Vec::with_capacity(pen.len());
    for (p, wgt) in pen.iter().zip(&weights) {
        let (a, b) = (p.body_a, p.body_b);
        let c = 0.5 * (p.p_a + p.p_b);
        let ra = c - bodies[a].state.x;
        let rb = c - bodies[b].state.x;
        let kmat = point_inv_mass(&ra, &rb, &dy[a], &dy[b]);
        let n = p.normal;
        let t = tangents(&n);
        let r = -p.dist;
        let d = impedance(r, params)?;
        let m = reduced_mass(&bodies[a].spec, &bodies[b].spec) * wgt;
        let k_t = [[t[0].dot(&(kmat * t[0])), t[0].dot(&(kmat * t[1]))], [t[1].dot(&(kmat * t[0])), t[1].dot(&(kmat * t[1]))]];
        contacts.push(Contact {
            a,
            b,
            ra,
            rb,
            n,
            t,
            k_nn: n.dot(&(kmat * n)),
            k_t,
            bias: -k * r / (k * dt + bdamp),
            gamma: 1.0 / (dt * m * d * (k * dt + bdamp)),
        });
    }
    let mut v_pre: Vec<Vec3> = bodies.iter().map(|b| b.state.v).collect();
    let w_pre: Vec<Vec3> = bodies.iter().map(|b| b.state.w).collect();
    for (v, b) in v_pre.iter_mut().zip(bodies) {
        if !b.spec.is_static {
            *v += scene.gravity * dt;
        }
    }
    let (mut v_pos, mut w_pos) = (v_pre.clone(), w_pre.clone());
    solve(&contacts, &dy, params.mu, &mut v_pos, &mut w_pos, true);
    let (mut v_fin, mut w_fin) = (v_pre, w_pre);
    solve(&contacts, &dy, params.mu, &mut v_fin, &mut w_fin, false);

    let mut next = scene.clone();
    for (i, b) in next.bodies.iter_mut().enumerate() {
        if b.spec.is_static {
            continue;
        }
        b.state.x += v_pos[i] * dt;
        b.state.q = integrate_quat(&b.state.q, &w_pos[i], dt);
        b.state.v = v_fin[i];
        b.state.w = w_fin[i];
    }
    Ok((next, set))
}

/// `steps + 1` frames starting with the initial scene.
pub fn rollout(init: &SceneState, params: &ContactParams, steps: usize) -> Result<Trajectory> {
    Ok(rollout_with_state(init, params, steps)?.0)
}

/// Like [`rollout`] but also returns the final scene (with velocities).
pub fn rollout_with_state(init: &SceneState, params: &ContactParams, steps: usize) -> Result<(Trajectory, SceneState)> {
    if steps < 1 {
        return invalid("rollout needs at least one step");
    }
    let mut scene = init.clone();
    let mut frames = vec![scene.poses()];
    for _ in 0..steps {
        scene = step(&scene, params)?;
        frames.push(scene.poses());
    }
    let traj = Trajectory {
        bodies: init.bodies.iter().map(|b| TrajBody { spec: b.spec.clone(), mesh_ref: None }).collect(),
        dt: init.dt,
        frames,
    };
    Ok((traj, scene))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ContactParams {
        ContactParams {
            d0: 0.92,
            d_width: 0.97,
            width: 0.005,
            midpoint: 0.05,
            power: 2.0,
            time_constant: 0.01,
            damping_ratio: 1.0,
            mu: 0.3,
        }
    }

    #[test]
    fn impedance_examples() {
        let p = params();
        assert_eq!(impedance(0.0, &p).unwrap(), p.d0);
        assert_eq!(impedance(p.width, &p).unwrap(), p.d_width);
        assert_eq!(impedance(1.0, &p).unwrap(), p.d_width);
        assert!(impedance(-1e-9, &p).is_err());
        let lin = ContactParams { power: 1.0, midpoint: 0.03, ..p };
        assert!((impedance(p.width / 2.0, &lin).unwrap() - 0.5 * (p.d0 + p.d_width)).abs() < 1e-15);
    }

    #[test]
    fn impedance_is_c1_at_midpoint() {
        for power in [1.5, 2.0, 3.7, 5.0] {
            let p = ContactParams { power, midpoint: 0.08, ..params() };
            let r = p.midpoint * p.width;
            let h = 1e-9 * p.width;
            let left = (impedance(r, &p).unwrap() - impedance(r - h, &p).unwrap()) / h;
            let right = (impedance(r + h, &p).unwrap() - impedance(r, &p).unwrap()) / h;
            assert!((left - right).abs() < 1e-4 * left.abs().max(1.0), "power {power}: {left} vs {right}");
        }
    }

    #[test]
    fn params_text_round_trip() {
        let p = params();
        assert_eq!(ContactParams::from_text(&p.to_text()).unwrap(), p);
        assert!(p.validate().is_ok());
        assert!(ContactParams { mu: 1.5, ..p }.validate().is_err());
    }
}
