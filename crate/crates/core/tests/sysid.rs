mod common;

use common::cube_body;
use proptest::prelude::*;
use rigidgraph::geom::{quat_from_axis_angle, Quat, Vec3};
use rigidgraph::sysid::{
    dataset_loss, finite_diff_velocities, identify, trajectory_loss, IdentDataset, ParamBounds,
};
use rigidgraph::teacher::{ground_body, rollout, ContactParams, SceneState};
use rigidgraph::trajectory::{Pose, TrajBody, Trajectory};

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

fn one_cube_traj(poses: Vec<Pose>, dt: f64) -> Trajectory {
    let b = cube_body(0.05, 0.1, Vec3::zeros());
    Trajectory { bodies: vec![TrajBody { spec: b.spec, mesh_ref: None }], dt, frames: poses.into_iter().map(|p| vec![p]).collect() }
}

fn pose(x: Vec3, q: Quat) -> Pose {
    Pose { x, q }
}

#[test]
fn static_body_has_zero_velocity() {
    let p = pose(Vec3::new(0.1, 0.2, 0.3), quat_from_axis_angle(&Vec3::new(1.0, 2.0, 3.0), 0.7));
    let vel = finite_diff_velocities(&one_cube_traj(vec![p; 5], 0.1)).unwrap();
    assert_eq!(vel.len(), 5);
    for f in vel {
        assert_eq!(f[0].0, Vec3::zeros());
        assert!(f[0].1.norm() < 1e-14);
    }
}

#[test]
fn linear_motion_velocity() {
    let poses = (0..6).map(|t| pose(Vec3::new(0.1 * t as f64, 0.0, 0.0), Quat::identity())).collect();
    let vel = finite_diff_velocities(&one_cube_traj(poses, 0.1)).unwrap();
    for f in &vel {
        assert!((f[0].0 - Vec3::x()).norm() < 1e-12);
    }
    assert_eq!(vel[0], vel[1]);
}

#[test]
fn single_frame_is_rejected() {
    assert!(finite_diff_velocities(&one_cube_traj(vec![pose(Vec3::zeros(), Quat::identity())], 0.1)).is_err());
}

#[test]
fn spin_rate_is_recovered_from_teacher_rollout() {
    let mut b = cube_body(0.05, 0.1, Vec3::zeros());
    b.state.q = quat_from_axis_angle(&Vec3::new(1.0, 0.3, 0.0), 0.4);
    b.state.w = Vec3::z();
    let mut scene = SceneState::new(vec![b]);
    scene.gravity = Vec3::zeros();
    let traj = rollout(&scene, &params(), 30).unwrap();
    for f in finite_diff_velocities(&traj).unwrap() {
        assert!((f[0].1 - Vec3::z()).norm() < 1e-6);
    }
}

#[test]
fn loss_examples() {
    let base: Vec<Pose> = (0..4).map(|t| pose(Vec3::new(t as f64, 0.0, 0.0), Quat::identity())).collect();
    let a = one_cube_traj(base.clone(), 0.1);
    assert_eq!(trajectory_loss(&a, &a, &[0.1]).unwrap(), 0.0);

    let mut shifted = base.clone();
    shifted[2].x.y += 0.05;
    let b = one_cube_traj(shifted, 0.1);
    assert!((trajectory_loss(&a, &b, &[0.1]).unwrap() - 0.5).abs() < 1e-12);

    let mut turned = base.clone();
    turned[3].q = quat_from_axis_angle(&Vec3::z(), std::f64::consts::FRAC_PI_2);
    let c = one_cube_traj(turned, 0.1);
    assert!((trajectory_loss(&a, &c, &[0.1]).unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);

    // Frame 0 is never compared.
    let mut first = base.clone();
    first[0].x.z = 5.0;
    assert_eq!(trajectory_loss(&a, &one_cube_traj(first, 0.1), &[0.1]).unwrap(), 0.0);

    assert!(trajectory_loss(&a, &one_cube_traj(base[..3].to_vec(), 0.1), &[0.1]).is_err());
    assert!(trajectory_loss(&a, &a, &[0.1, 0.2]).is_err());
}

fn push_demo(speed: f64, heading: f64, p: &ContactParams) -> Trajectory {
    let mut pusher = cube_body(0.05, 0.1, Vec3::new(-0.08, 0.0, 0.025));
    pusher.state.v = Vec3::new(heading.cos(), heading.sin(), 0.0) * speed;
    let target = cube_body(0.05, 0.1, Vec3::new(0.0, 0.0, 0.025));
    let scene = SceneState::new(vec![ground_body(1.0, 0.02).unwrap(), pusher, target]);
    rollout(&scene, p, 15).unwrap()
}

#[test]
fn loss_is_additive_over_demos() {
    let p = params();
    let d1 = push_demo(0.8, 0.1, &p);
    let d2 = push_demo(0.6, -0.2, &p);
    let guess = ContactParams { mu: 0.6, time_constant: 0.02, ..p };
    let l1 = dataset_loss(&IdentDataset::with_default_weights(vec![d1.clone()]).unwrap(), &guess).unwrap();
    let l2 = dataset_loss(&IdentDataset::with_default_weights(vec![d2.clone()]).unwrap(), &guess).unwrap();
    let both = dataset_loss(&IdentDataset::with_default_weights(vec![d1, d2]).unwrap(), &guess).unwrap();
    assert!(l1 > 0.0 && l2 > 0.0);
    assert!((both - (l1 + l2)).abs() < 1e-9 * both);
}

#[test]
fn all_static_dataset_returns_box_center() {
    let p = pose(Vec3::new(0.0, 0.0, 0.025), Quat::identity());
    let mut demo = one_cube_traj(vec![p; 4], 1.0 / 60.0);
    demo.bodies[0].spec.is_static = true;
    let data = IdentDataset::with_default_weights(vec![demo]).unwrap();
    let r = identify(&data, &ParamBounds::contact_defaults(), 30, 5).unwrap();
    assert_eq!(r.loss, 0.0);
    assert_eq!(r.params, ContactParams::box_center());
}

#[test]
fn identification_improves_on_box_center() {
    let p = params();
    let data = IdentDataset::with_default_weights(vec![push_demo(0.8, 0.05, &p), push_demo(0.5, -0.1, &p)]).unwrap();
    let r = identify(&data, &ParamBounds::contact_defaults(), 60, 2).unwrap();
    assert!(r.loss < r.initial_loss);
    assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(r.history.len(), 6);
    let again = identify(&data, &ParamBounds::contact_defaults(), 60, 2).unwrap();
    assert_eq!(r, again);
}

#[test]
fn mismatched_demos_are_rejected() {
    let p = params();
    let a = push_demo(0.8, 0.0, &p);
    let mut b = a.clone();
    b.dt *= 2.0;
    assert!(IdentDataset::with_default_weights(vec![a.clone(), b]).is_err());
    assert!(IdentDataset::with_default_weights(vec![]).is_err());
    assert!(IdentDataset::new(vec![a], vec![0.05, 0.0, 0.05]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_is_nonnegative_and_zero_only_on_match(dx in -0.1f64..0.1, ang in -1.0f64..1.0, t in 1usize..4) {
        let base: Vec<Pose> = (0..4).map(|k| pose(Vec3::new(0.01 * k as f64, 0.0, 0.0), Quat::identity())).collect();
        let mut other = base.clone();
        other[t].x.x += dx;
        other[t].q = quat_from_axis_angle(&Vec3::new(0.3, -0.2, 1.0), ang);
        let a = one_cube_traj(base, 0.1);
        let b = one_cube_traj(other, 0.1);
        let l = trajectory_loss(&a, &b, &[0.05]).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert!((l > 0.0) == (dx != 0.0 || ang != 0.0));
    }
}
