mod common;

use common::{cube_body, ground, random_quat, random_unit};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rigidgraph::error::Error;
use rigidgraph::geom::{quat_to_rotmat, Body, Mat3, RigidBodyState, Vec3};
use rigidgraph::gnn::checkpoint;
use rigidgraph::gnn::tape::Mat;
use rigidgraph::gnn::*;
use rigidgraph::teacher::SceneState;
use rigidgraph::trajectory::Trajectory;

fn arch(latent: usize, layers: usize) -> Architecture {
    Architecture { latent, layers, history: 2 }
}

fn param<'a>(m: &'a GnnModel, name: &str) -> &'a Mat {
    let k = m.param_names.iter().position(|n| n == name).unwrap_or_else(|| panic!("no parameter {name}"));
    &m.params[k]
}

fn set_param(m: &mut GnnModel, name: &str, f: impl Fn(usize) -> f64) {
    let k = m.param_names.iter().position(|n| n == name).unwrap();
    for (i, v) in m.params[k].data.iter_mut().enumerate() {
        *v = f(i);
    }
}

/// A model whose decoder output is nonzero and whose de-normalized
/// accelerations are small (about 1e-5 m per step²).
fn active_model(layers: usize, seed: u64) -> GnnModel {
    let mut m = GnnModel::new(arch(16, layers), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let w: Vec<f64> = (0..param(&m, "dec.w2").data.len()).map(|_| rng.gen_range(-0.3..0.3)).collect();
    set_param(&mut m, "dec.w2", |i| w[i]);
    m.norm.target.std = vec![1e-5; 3];
    m
}

fn to_dmat(m: &Mat) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows, m.cols, &m.data)
}

/// Independent three-layer MLP with SiLU and layer normalization.
fn oracle_mlp(model: &GnnModel, prefix: &str, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut y = x.clone();
    for l in 0..3 {
        let w = to_dmat(param(model, &format!("{prefix}.w{l}")));
        let b = to_dmat(param(model, &format!("{prefix}.b{l}")));
        y = &y * &w;
        for mut row in y.row_iter_mut() {
            row += &b;
        }
        if l < 2 {
            y.apply(|v| *v = *v / (1.0 + (-*v).exp()));
        }
    }
    let g = param(model, &format!("{prefix}.ln_scale"));
    let s = param(model, &format!("{prefix}.ln_shift"));
    for mut row in y.row_iter_mut() {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        for c in 0..row.len() {
            row[c] = (row[c] - mean) / (var + 1e-5).sqrt() * g.data[c] + s.data[c];
        }
    }
    y
}

fn assert_mat_close(a: &Mat, b: &DMatrix<f64>, tol: f64) {
    assert_eq!((a.rows, a.cols), (b.nrows(), b.ncols()));
    for r in 0..a.rows {
        for c in 0..a.cols {
            assert!((a.row(r)[c] - b[(r, c)]).abs() <= tol, "({r},{c}): {} vs {}", a.row(r)[c], b[(r, c)]);
        }
    }
}

fn two_cube_scene(gap: f64, speed: f64) -> SceneState {
    let mut a = cube_body(0.05, 0.1, Vec3::new(0.0, 0.0, 0.026));
    let b = cube_body(0.05, 0.1, Vec3::new(0.05 + gap, 0.0, 0.026));
    a.state.v = Vec3::new(speed, 0.0, 0.0);
    SceneState::new(vec![ground(), a, b])
}

fn history_of(scene: &SceneState, h: usize) -> Vec<Vec<Vec3>> {
    scene_history(&Topology::from_bodies(&scene.bodies), &scene.bodies, scene.dt, h)
}

fn pairwise_ok(pts: &[Vec3], reference: &[Vec3], tol: f64) -> bool {
    (0..pts.len()).all(|i| (0..i).all(|j| ((pts[i] - pts[j]).norm() - (reference[i] - reference[j]).norm()).abs() <= tol))
}

#[test]
fn zero_motion_normalizes_to_minus_mean_over_std() {
    let scene = two_cube_scene(0.2, 0.0);
    let g = build_graph(&scene.bodies, &history_of(&scene, 2), graph_d_eps(&scene.bodies)).unwrap();
    let stats = Stats { mean: (0..7).map(|k| 0.1 * k as f64).collect(), std: (0..7).map(|k| 0.5 + k as f64).collect() };
    let normalized = stats.normalize(&g.mesh_nodes);
    for r in 0..g.mesh_nodes.rows {
        for c in 0..6 {
            assert_eq!(g.mesh_nodes.row(r)[c], 0.0);
            assert!((normalized.row(r)[c] + stats.mean[c] / stats.std[c]).abs() < 1e-15);
        }
    }
}

#[test]
fn far_bodies_have_no_face_edges() {
    let a = cube_body(0.05, 0.1, Vec3::zeros());
    let b = cube_body(0.05, 0.1, Vec3::new(1.0, 0.0, 0.0));
    let scene = SceneState::new(vec![a, b]);
    let g = build_graph(&scene.bodies, &history_of(&scene, 2), graph_d_eps(&scene.bodies)).unwrap();
    assert_eq!(g.face_face.features.rows, 0);
    assert_eq!(g.mesh_nodes.rows, 16);
    assert_eq!(g.object_nodes.rows, 2);

    let close = two_cube_scene(0.001, 0.3);
    let g = build_graph(&close.bodies, &history_of(&close, 2), graph_d_eps(&close.bodies)).unwrap();
    assert!(g.face_face.features.rows > 0);
    assert_eq!(g.face_face.features.cols, FACE_EDGE_DIM);
}

#[test]
fn edge_features_are_translation_invariant() {
    let scene = two_cube_scene(0.002, 0.4);
    let shift = Vec3::new(3.0, -2.0, 0.5);
    let mut moved = scene.clone();
    for b in &mut moved.bodies {
        b.state.x += shift;
    }
    let d = graph_d_eps(&scene.bodies);
    let g0 = build_graph(&scene.bodies, &history_of(&scene, 2), d).unwrap();
    let g1 = build_graph(&moved.bodies, &history_of(&moved, 2), d).unwrap();
    for (a, b) in [
        (&g0.mesh_nodes, &g1.mesh_nodes),
        (&g0.object_nodes, &g1.object_nodes),
        (&g0.mesh_mesh.features, &g1.mesh_mesh.features),
        (&g0.obj_mesh.features, &g1.obj_mesh.features),
        (&g0.mesh_obj.features, &g1.mesh_obj.features),
        (&g0.face_face.features, &g1.face_face.features),
    ] {
        assert_mat_close(a, &to_dmat(b), 1e-9);
    }
}

#[test]
fn build_graph_rejects_short_history() {
    let scene = two_cube_scene(0.1, 0.0);
    let h = history_of(&scene, 2);
    assert!(matches!(build_graph(&scene.bodies, &h[..1], 0.01), Err(Error::InvalidInput(_))));
}

#[test]
fn zero_layers_give_encoder_outputs() {
    let scene = two_cube_scene(0.001, 0.5);
    let g = build_graph(&scene.bodies, &history_of(&scene, 2), graph_d_eps(&scene.bodies)).unwrap();
    let model = GnnModel::new(arch(12, 0), 3).unwrap();
    let (vm, vo) = model.latents(&g);
    assert_mat_close(&vm, &oracle_mlp(&model, "enc.mesh_nodes", &to_dmat(&g.mesh_nodes)), 1e-10);
    assert_mat_close(&vo, &oracle_mlp(&model, "enc.object_nodes", &to_dmat(&g.object_nodes)), 1e-10);
}

#[test]
fn zeroed_processor_leaves_latents_unchanged() {
    // A lone body in free space is isolated from every other body; with all
    // processor MLPs zeroed its latents stay at the encoder outputs.
    let scene = SceneState::new(vec![cube_body(0.05, 0.1, Vec3::zeros())]);
    let g = build_graph(&scene.bodies, &history_of(&scene, 2), 0.01).unwrap();
    let mut model = GnnModel::new(arch(12, 3), 4).unwrap();
    let names: Vec<String> = model.param_names.iter().filter(|n| n.starts_with("proc")).cloned().collect();
    for n in names {
        set_param(&mut model, &n, |_| 0.0);
    }
    let (vm, vo) = model.latents(&g);
    assert_mat_close(&vm, &oracle_mlp(&model, "enc.mesh_nodes", &to_dmat(&g.mesh_nodes)), 1e-10);
    assert_mat_close(&vo, &oracle_mlp(&model, "enc.object_nodes", &to_dmat(&g.object_nodes)), 1e-10);
}

#[test]
fn relabeling_bodies_permutes_outputs() {
    let model = active_model(2, 5);
    let mut scene = two_cube_scene(0.001, 0.5);
    scene.bodies[2].state.q = random_quat(&mut ChaCha8Rng::seed_from_u64(1));
    let mut swapped = scene.clone();
    swapped.bodies.swap(1, 2);
    let d = graph_d_eps(&scene.bodies);
    let a0 = model.accelerations(&build_graph(&scene.bodies, &history_of(&scene, 2), d).unwrap());
    let a1 = model.accelerations(&build_graph(&swapped.bodies, &history_of(&swapped, 2), d).unwrap());
    let t0 = Topology::from_bodies(&scene.bodies);
    let t1 = Topology::from_bodies(&swapped.bodies);
    for (b0, b1) in [(0, 0), (1, 2), (2, 1)] {
        for (i, j) in t0.nodes(b0).zip(t1.nodes(b1)) {
            for c in 0..3 {
                assert!((a0.row(i)[c] - a1.row(j)[c]).abs() < 1e-12, "body {b0} node {i} axis {c}");
            }
        }
    }
}

#[test]
fn fresh_decoder_predicts_target_mean() {
    let scene = two_cube_scene(0.001, 0.5);
    let g = build_graph(&scene.bodies, &history_of(&scene, 2), graph_d_eps(&scene.bodies)).unwrap();
    let mut model = GnnModel::new(arch(8, 2), 0).unwrap();
    model.norm.target = Stats { mean: vec![0.1, -0.2, 0.3], std: vec![2.0, 3.0, 4.0] };
    let a = model.accelerations(&g);
    assert_eq!((a.rows, a.cols), (g.mesh_nodes.rows, 3));
    for r in 0..a.rows {
        assert_eq!(a.row(r), &[0.1, -0.2, 0.3]);
    }
    assert_eq!(model.accelerations(&g), a);
}

#[test]
fn verlet_examples() {
    let p = verlet_step(&[Vec3::repeat(1.0)], &[Vec3::repeat(0.9)], &[Vec3::zeros()]).unwrap();
    assert!((p[0] - Vec3::repeat(1.1)).norm() < 1e-15);
    let p = verlet_step(&[Vec3::repeat(0.3)], &[Vec3::repeat(0.3)], &[Vec3::zeros()]).unwrap();
    assert_eq!(p[0], Vec3::repeat(0.3));
    let a = Vec3::new(0.01, -0.02, 0.005);
    let (mut prev, mut cur) = (vec![Vec3::zeros()], vec![Vec3::zeros()]);
    for k in 1..=20 {
        let next = verlet_step(&cur, &prev, &[a]).unwrap();
        let expect = a * (k * (k + 1)) as f64 / 2.0;
        assert!((next[0] - expect).norm() < 1e-12, "step {k}");
        prev = cur;
        cur = next;
    }
    assert!(verlet_step(&[Vec3::zeros()], &[], &[Vec3::zeros()]).is_err());
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
    (0..n).map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
}

#[test]
fn shape_match_recovers_rigid_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let n = rng.gen_range(3..12);
        let reference = random_points(&mut rng, n);
        let r0 = quat_to_rotmat(&random_quat(&mut rng)).unwrap();
        let t0 = random_unit(&mut rng) * rng.gen_range(0.0..5.0);
        let pred: Vec<Vec3> = reference.iter().map(|p| r0 * p + t0).collect();
        let sm = shape_match(&pred, &reference).unwrap();
        assert!((sm.r - r0).abs().max() < 1e-9);
        assert!((sm.t - t0).norm() < 1e-9);
        for (a, b) in sm.projected.iter().zip(&pred) {
            assert!((a - b).norm() < 1e-9);
        }
    }
}

#[test]
fn shape_match_identity_and_degenerate() {
    let reference = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
    let sm = shape_match(&reference, &reference).unwrap();
    assert!((sm.r - Mat3::identity()).abs().max() < 1e-12);
    assert!(sm.t.norm() < 1e-12);
    let line = vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0];
    assert!(shape_match(&line, &line).is_err());
}

#[test]
fn shape_match_projection_is_rigid_and_optimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let noise = rand_distr::Normal::new(0.0, 1e-3).unwrap();
    for _ in 0..50 {
        let reference = random_points(&mut rng, 8);
        let r0 = quat_to_rotmat(&random_quat(&mut rng)).unwrap();
        let pred: Vec<Vec3> = reference.iter().map(|p| r0 * p + Vec3::new(rng.sample(noise), rng.sample(noise), rng.sample(noise))).collect();
        let sm = shape_match(&pred, &reference).unwrap();
        assert!(pairwise_ok(&sm.projected, &reference, 1e-12));
        assert!((sm.r.determinant() - 1.0).abs() < 1e-12);
        let residual = |r: &Mat3, t: &Vec3| reference.iter().zip(&pred).map(|(q, p)| (p - (r * q + t)).norm_squared()).sum::<f64>();
        let best = residual(&sm.r, &sm.t);
        for _ in 0..100 {
            let dr = quat_to_rotmat(&rigidgraph::geom::quat_from_rotvec(&(random_unit(&mut rng) * rng.gen_range(0.0..0.05)))).unwrap();
            let dt = random_unit(&mut rng) * rng.gen_range(0.0..0.01);
            assert!(best <= residual(&(dr * sm.r), &(sm.t + dt)) + 1e-15);
        }
    }
}

#[test]
fn static_scene_stays_constant() {
    let a = Body::new(rigidgraph::geom::BodySpec::from_mesh(rigidgraph::geom::TriMesh::cube(0.05).unwrap(), 0.1, true).unwrap(), RigidBodyState::at_rest(Vec3::new(0.0, 0.0, 0.025), rigidgraph::geom::Quat::identity()));
    let scene = SceneState::new(vec![ground(), a]);
    let traj = rollout(&active_model(1, 1), &scene, 5).unwrap();
    assert_eq!(traj.num_frames(), 6);
    for f in &traj.frames {
        assert_eq!(f, &traj.frames[0]);
    }
}

#[test]
fn rollout_keeps_bodies_rigid_and_is_translation_equivariant() {
    let model = active_model(2, 7);
    let mut scene = two_cube_scene(0.002, 0.6);
    scene.bodies[2].state.q = random_quat(&mut ChaCha8Rng::seed_from_u64(2));
    scene.bodies[2].state.w = Vec3::new(0.5, -1.0, 2.0);
    let traj = rollout(&model, &scene, 8).unwrap();
    let moved_dist = (traj.frames[8][1].x - traj.frames[0][1].x).norm();
    assert!(moved_dist > 1e-3);
    for f in &traj.frames {
        for (b, pose) in f.iter().enumerate() {
            let spec = &scene.bodies[b].spec;
            let state = RigidBodyState::at_rest(pose.x, pose.q);
            let world = rigidgraph::geom::world_vertices(&spec.mesh, &state);
            assert!(pairwise_ok(&world, spec.mesh.vertices(), 1e-9));
        }
    }
    let shift = Vec3::new(-1.5, 2.5, 0.3);
    let mut moved = scene.clone();
    for b in &mut moved.bodies {
        b.state.x += shift;
    }
    let t2 = rollout(&model, &moved, 8).unwrap();
    for (f0, f1) in traj.frames.iter().zip(&t2.frames) {
        for (p0, p1) in f0.iter().zip(f1) {
            assert!((p1.x - p0.x - shift).norm() < 1e-6);
        }
    }
}

#[test]
fn non_finite_prediction_names_the_step() {
    let mut model = active_model(1, 2);
    set_param(&mut model, "dec.b2", |_| f64::NAN);
    match rollout(&model, &two_cube_scene(0.1, 0.3), 3) {
        Err(Error::NumericalFailure(msg)) => assert!(msg.contains("step 0"), "{msg}"),
        other => panic!("expected numerical failure, got {other:?}"),
    }
}

/// Free-flying bodies at constant velocity in zero gravity.
fn constant_velocity_dataset(n: usize, seed: u64) -> Vec<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut a = cube_body(0.05, 0.1, Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.5));
            a.state.v = random_unit(&mut rng) * rng.gen_range(0.1..1.0);
            let mut scene = SceneState::new(vec![a]);
            scene.gravity = Vec3::zeros();
            rigidgraph::teacher::rollout(&scene, &rigidgraph::teacher::ContactParams::box_center(), 6).unwrap()
        })
        .collect()
}

fn small_config(updates: usize) -> TrainConfig {
    TrainConfig { arch: arch(8, 1), updates, batch: 4, lr: 1e-3, lr_final: 1e-4, noise_std: 0.0, val_fraction: 0.25, val_every: 10, random_yaw: true, seed: 9 }
}

#[test]
fn constant_velocity_is_learned() {
    let data = constant_velocity_dataset(8, 1);
    let out = train(&data, &small_config(200)).unwrap();
    assert!(one_step_mse(&out.model, &data).unwrap() < 1e-4);
}

#[test]
fn initial_loss_is_one_and_training_is_deterministic() {
    let spec = rigidgraph::datagen::ScalingSpec { n_trajectories: 4, seed: 3, steps_per_trajectory: 8, ..Default::default() };
    let data = rigidgraph::datagen::scale_dataset(&spec, &rigidgraph::teacher::ContactParams::box_center()).unwrap().trajectories;
    let cfg = TrainConfig { val_fraction: 0.0, noise_std: 1e-4, ..small_config(20) };
    let a = train(&data, &cfg).unwrap();
    assert!((a.curve[0].val_mse - 1.0).abs() < 1e-9, "{}", a.curve[0].val_mse);
    let b = train(&data, &cfg).unwrap();
    assert_eq!(a.model.params, b.model.params);
    assert_eq!(format!("{:?}", a.curve), format!("{:?}", b.curve));
    assert!(matches!(train(&[], &cfg), Err(Error::InvalidInput(_))));
}

#[test]
fn identity_model_velocity_gradient_is_horizon_times_dt() {
    let model = GnnModel::new(arch(8, 0), 0).unwrap();
    let mut body = cube_body(0.05, 0.1, Vec3::new(0.1, 0.2, 0.3));
    body.state.v = Vec3::new(0.4, -0.1, 0.2);
    let scene = SceneState::new(vec![body]);
    for steps in [1, 4, 9] {
        let g = rollout_gradient(&model, &scene, steps, &LossSpec::FinalCoordinate { body: 0, axis: 0 }).unwrap();
        assert!((g.d_velocity[0] - Vec3::new(steps as f64 * scene.dt, 0.0, 0.0)).norm() < 1e-12, "{:?}", g.d_velocity[0]);
        assert!((g.d_position[0] - Vec3::x()).norm() < 1e-12);
        assert!((g.loss - (0.1 + 0.4 * steps as f64 * scene.dt)).abs() < 1e-12);
    }
}

#[test]
fn distant_body_gets_zero_gradient() {
    let model = active_model(2, 3);
    let mut a = cube_body(0.05, 0.1, Vec3::zeros());
    a.state.v = Vec3::new(0.3, 0.0, 0.0);
    let b = cube_body(0.05, 0.1, Vec3::new(5.0, 0.0, 0.0));
    let scene = SceneState::new(vec![a, b]);
    let g = rollout_gradient(&model, &scene, 4, &LossSpec::FinalCoordinate { body: 0, axis: 1 }).unwrap();
    assert_eq!(g.d_velocity[1], Vec3::zeros());
    assert_eq!(g.d_position[1], Vec3::zeros());
    assert!(g.d_velocity[0].norm() > 0.0);
}

fn frozen_loss(model: &GnnModel, scene: &SceneState, steps: usize, contacts: &[Vec<FrozenContact>], loss: &LossSpec) -> f64 {
    let traj = rollout_frozen(model, scene, steps, contacts).unwrap();
    let pos: Vec<Vec<Vec3>> = traj.frames.iter().map(|f| f.iter().map(|p| p.x).collect()).collect();
    loss.evaluate(&pos, scene.dt).unwrap().0
}

#[test]
fn velocity_gradient_matches_finite_differences_through_contacts() {
    let model = active_model(2, 21);
    let mut scene = two_cube_scene(0.003, 0.5);
    scene.bodies[2].state.q = rigidgraph::geom::quat_from_axis_angle(&Vec3::z(), 0.1);
    let loss = LossSpec::PlanarTarget { body: 2, target: [0.2, 0.05], speed_weight: 0.1 };
    let steps = 3;
    let g = rollout_gradient(&model, &scene, steps, &loss).unwrap();
    assert!(g.contacts.iter().all(|c| c.iter().any(|c| (c.pair.body_a, c.pair.body_b) == (1, 2))));
    let h = 1e-4;
    for b in [1, 2] {
        for axis in 0..3 {
            let mut plus = scene.clone();
            let mut minus = scene.clone();
            plus.bodies[b].state.v[axis] += h;
            minus.bodies[b].state.v[axis] -= h;
            let fd = (frozen_loss(&model, &plus, steps, &g.contacts, &loss) - frozen_loss(&model, &minus, steps, &g.contacts, &loss)) / (2.0 * h);
            let an = g.d_velocity[b][axis];
            let scale = fd.abs().max(an.abs()).max(1e-8);
            assert!((fd - an).abs() / scale <= 1e-2, "body {b} axis {axis}: analytic {an}, finite difference {fd}");
        }
    }
}

#[test]
fn discrete_losses_are_rejected() {
    let model = GnnModel::new(arch(4, 0), 0).unwrap();
    let scene = two_cube_scene(0.1, 0.1);
    assert!(matches!(rollout_gradient(&model, &scene, 2, &LossSpec::ContactCount), Err(Error::InvalidInput(_))));
    assert_eq!(LossSpec::parse("contact_count").unwrap(), LossSpec::ContactCount);
    assert_eq!(
        LossSpec::parse("planar_target body=2 x=0.5 y=-1 speed_weight=0.1").unwrap(),
        LossSpec::PlanarTarget { body: 2, target: [0.5, -1.0], speed_weight: 0.1 }
    );
    assert!(LossSpec::parse("final_coordinate body=1").is_err());
    assert!(LossSpec::parse("energy").is_err());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let mut model = active_model(2, 8);
    model.norm.mesh_nodes.mean[0] = 0.25;
    checkpoint::save(&path, &model, None).unwrap();
    let (back, opt) = checkpoint::load(&path).unwrap();
    assert_eq!(back, model);
    assert!(opt.is_none());

    let data = constant_velocity_dataset(4, 2);
    let out = train(&data, &small_config(5)).unwrap();
    checkpoint::save(&path, &out.model, Some(&out.optimizer)).unwrap();
    let (m2, o2) = checkpoint::load(&path).unwrap();
    assert_eq!(m2, out.model);
    assert_eq!(o2.unwrap(), out.optimizer);
}

#[test]
fn checkpoint_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ckpt");
    std::fs::write(&path, b"some-other-format\n").unwrap();
    match checkpoint::load(&path) {
        Err(Error::Format { msg, .. }) => assert!(msg.contains(checkpoint::CHECKPOINT_HEADER)),
        other => panic!("expected a format error, got {other:?}"),
    }
    let bytes = checkpoint::encode(&GnnModel::new(arch(4, 1), 0).unwrap(), None);
    std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
    assert!(matches!(checkpoint::load(&path), Err(Error::Format { .. })));
    assert!(checkpoint::load(&dir.path().join("missing.ckpt")).is_err());
}
