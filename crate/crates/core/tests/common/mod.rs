#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rigidgraph::geom::{quat_from_axis_angle, Body, BodySpec, Mat3, Quat, RigidBodyState, TriMesh, Vec3};

/// Orient every face of a convex vertex/face list outward and build the mesh.
pub fn convex_mesh(verts: Vec<Vec3>, faces: Vec<[usize; 3]>) -> TriMesh {
    let c: Vec3 = verts.iter().sum::<Vec3>() / verts.len() as f64;
    let faces = faces
        .into_iter()
        .map(|[a, b, d]| {
            let n = (verts[b] - verts[a]).cross(&(verts[d] - verts[a]));
            if n.dot(&(verts[a] - c)) < 0.0 {
                [a, d, b]
            } else {
                [a, b, d]
            }
        })
        .collect();
    TriMesh::new(verts, faces).unwrap()
}

pub fn octahedron(r: f64) -> TriMesh {
    let verts = vec![
        Vec3::new(r, 0.0, 0.0),
        Vec3::new(-r, 0.0, 0.0),
        Vec3::new(0.0, r, 0.0),
        Vec3::new(0.0, -r, 0.0),
        Vec3::new(0.0, 0.0, r),
        Vec3::new(0.0, 0.0, -r),
    ];
    let mut faces = Vec::new();
    for x in [0, 1] {
        for y in [2, 3] {
            for z in [4, 5] {
                faces.push([x, y, z]);
            }
        }
    }
    convex_mesh(verts, faces)
}

pub fn random_quat(rng: &mut ChaCha8Rng) -> Quat {
    let axis = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let axis = if axis.norm() < 1e-3 { Vec3::z() } else { axis };
    quat_from_axis_angle(&axis, rng.gen_range(0.0..std::f64::consts::PI))
}

/// Random convex polytope: a cube, tetrahedron or octahedron under a random
/// orientation-preserving linear map, with size around `size`.
pub fn random_convex_mesh(rng: &mut ChaCha8Rng, size: f64) -> TriMesh {
    let base = match rng.gen_range(0..3) {
        0 => TriMesh::cube(1.0).unwrap(),
        1 => TriMesh::regular_tetrahedron(1.5).unwrap(),
        _ => octahedron(0.8),
    };
    let r1 = rigidgraph::geom::quat_to_rotmat(&random_quat(rng)).unwrap();
    let r2 = rigidgraph::geom::quat_to_rotmat(&random_quat(rng)).unwrap();
    let s = Mat3::from_diagonal(&Vec3::new(rng.gen_range(0.5..1.5), rng.gen_range(0.5..1.5), rng.gen_range(0.5..1.5)));
    let m = r1 * s * r2 * size;
    let verts = base.vertices().iter().map(|v| m * v).collect();
    TriMesh::new(verts, base.faces().to_vec()).unwrap()
}

pub fn random_body(rng: &mut ChaCha8Rng, size: f64, x: Vec3) -> Body {
    let spec = BodySpec::from_mesh(random_convex_mesh(rng, size), 1.0, false).unwrap();
    Body::new(spec, RigidBodyState::at_rest(x, random_quat(rng)))
}

pub fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if v.norm() > 0.1 && v.norm() <= 1.0 {
            return v.normalize();
        }
    }
}

pub fn cube_body(edge: f64, mass: f64, x: Vec3) -> Body {
    Body::new(BodySpec::from_mesh(TriMesh::cube(edge).unwrap(), mass, false).unwrap(), RigidBodyState::at_rest(x, Quat::identity()))
}

pub fn ground() -> Body {
    Body::new(
        BodySpec::from_mesh(TriMesh::cuboid(Vec3::new(1.0, 1.0, 0.05)).unwrap(), 0.0, true).unwrap(),
        RigidBodyState::at_rest(Vec3::new(0.0, 0.0, -0.05), Quat::identity()),
    )
}
