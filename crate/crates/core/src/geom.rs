//! Rigid-body geometry: convex triangle meshes, quaternions, rotations and the
//! kinematic map between quaternion rates and angular velocity.
//!
//! Quaternions are scalar-first `(w, x, y, z)` (nalgebra's `Quaternion::new`
//! argument order). Angular velocities are expressed in the world frame.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Matrix3, Quaternion, Rotation3, SMatrix, UnitQuaternion, Vector3};

use crate::error::{invalid, Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Quat = Quaternion<f64>;

const UNIT_TOL: f64 = 1e-6;
const CONVEX_TOL: f64 = 1e-9;

/// Rotation matrix of a unit quaternion.
pub fn quat_to_rotmat(q: &Quat) -> Result<Mat3> {
    let n = q.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOL {
        return invalid(format!("quaternion norm {n} is not 1"));
    }
    Ok(rotmat(&(q / n)))
}

/// Rotation matrix of a quaternion assumed to be unit length.
pub(crate) fn rotmat(q: &Quat) -> Mat3 {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Quaternion for a rotation of `angle` radians about `axis` (need not be unit).
pub fn quat_from_axis_angle(axis: &Vec3, angle: f64) -> Quat {
    let a = axis.normalize();
    let (s, c) = (0.5 * angle).sin_cos();
    Quat::new(c, s * a.x, s * a.y, s * a.z)
}

/// Quaternion for the rotation vector `r` (axis times angle).
pub fn quat_from_rotvec(r: &Vec3) -> Quat {
    let angle = r.norm();
    if angle < 1e-300 {
        return Quat::identity();
    }
    quat_from_axis_angle(r, angle)
}

/// Unit quaternion of a proper rotation matrix, canonicalized to `w >= 0`.
pub fn rotmat_to_quat(r: &Mat3) -> Quat {
    let uq = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    let q = uq.into_inner();
    if q.w < 0.0 {
        -q
    } else {
        q
    }
}

/// Rotation vector (axis times angle) of a rotation matrix.
pub fn rotmat_log(r: &Mat3) -> Vec3 {
    // atan2 keeps full precision for small angles, where acos of the trace does not.
    let s = 0.5 * Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let c = 0.5 * (r.trace() - 1.0);
    let sn = s.norm();
    let angle = sn.atan2(c);
    if angle < 1e-12 {
        return s;
    }
    if angle < std::f64::consts::PI - 1e-4 {
        return s * (angle / sn);
    }
    // Near a half turn the antisymmetric part vanishes; read the axis from the symmetric part.
    let b = (r + r.transpose()) * 0.25 + Mat3::identity() * 0.5;
    let k = (0..3).max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)])).unwrap_or(0);
    let mut axis = b.column(k).into_owned() / b[(k, k)].max(1e-300).sqrt();
    axis.normalize_mut();
    if axis.dot(&s) < 0.0 {
        axis = -axis;
    }
    axis * angle
}

/// Advance an orientation by world-frame angular velocity `w` over `dt` and renormalize.
pub fn integrate_quat(q: &Quat, w: &Vec3, dt: f64) -> Quat {
    let dq = quat_from_rotvec(&(w * dt));
    (dq * q).normalize()
}

/// Skew-symmetric cross-product matrix: `skew(r) * u == r.cross(u)`.
pub fn skew(r: &Vec3) -> Mat3 {
    Mat3::new(0.0, -r.z, r.y, r.z, 0.0, -r.x, -r.y, r.x, 0.0)
}

/// The 3x4 matrix G(q) with world angular velocity `w = 2 G(q) q̇`.
pub fn quat_rate_matrix(q: &Quat) -> SMatrix<f64, 3, 4> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    SMatrix::<f64, 3, 4>::new(
        -x, w, -z, y, //
        -y, z, w, -x, //
        -z, -y, x, w,
    )
}

/// Block-diagonal map from `(ẋ_A, q̇_A, ẋ_B, q̇_B)` to `(v_A, ω_A, v_B, ω_B)`.
pub fn kinematic_map_h(qa: &Quat, qb: &Quat) -> SMatrix<f64, 12, 14> {
    let mut h = SMatrix::<f64, 12, 14>::zeros();
    for (body, q) in [qa, qb].into_iter().enumerate() {
        let (r0, c0) = (6 * body, 7 * body);
        h.fixed_view_mut::<3, 3>(r0, c0).copy_from(&Mat3::identity());
        h.fixed_view_mut::<3, 4>(r0 + 3, c0 + 3)
            .copy_from(&(quat_rate_matrix(q) * 2.0));
    }
    h
}

/// Angle of the relative rotation between two rotation matrices, in `[0, π]`.
pub fn geodesic_angle(r1: &Mat3, r2: &Mat3) -> f64 {
    let r = r1.transpose() * r2;
    let s = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm() * 0.5;
    s.atan2(0.5 * (r.trace() - 1.0))
}

/// Watertight convex triangle mesh in its body frame, faces wound counter-clockwise
/// when seen from outside.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.len() < 4 || faces.len() < 4 {
            return invalid("mesh needs at least 4 vertices and 4 faces");
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return invalid("mesh has non-finite vertex coordinates");
        }
        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= vertices.len()) {
                return invalid(format!("face {fi} has an index out of range"));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return invalid(format!("face {fi} repeats a vertex"));
            }
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *edge_count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        if let Some((e, n)) = edge_count.iter().find(|(_, &n)| n != 2) {
            return invalid(format!("mesh not watertight: edge {e:?} shared by {n} faces"));
        }
        let mesh = TriMesh { vertices, faces };
        for fi in 0..mesh.faces.len() {
            let (n, p0) = mesh.face_plane(fi);
            if n.norm() < 0.5 {
                return invalid(format!("face {fi} is degenerate"));
            }
            if mesh.vertices.iter().any(|v| n.dot(&(v - p0)) > CONVEX_TOL) {
                return invalid(format!("mesh not convex (or face {fi} wound inward)"));
            }
        }
        Ok(mesh)
    }

    /// Axis-aligned box centered at the origin with the given half extents.
    pub fn cuboid(half: Vec3) -> Result<Self> {
        if half.iter().any(|&h| !(h > 0.0)) {
            return invalid("cuboid half extents must be positive");
        }
        let mut vertices = Vec::with_capacity(8);
        for i in 0..8 {
            let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
            vertices.push(Vec3::new(sx * half.x, sy * half.y, sz * half.z));
        }
        let faces = vec![
            [0, 2, 3], [0, 3, 1], // -z
            [4, 5, 7], [4, 7, 6], // +z
            [0, 1, 5], [0, 5, 4], // -y
            [2, 6, 7], [2, 7, 3], // +y
            [0, 4, 6], [0, 6, 2], // -x
            [1, 3, 7], [1, 7, 5], // +x
        ];
        TriMesh::new(vertices, faces)
    }

    pub fn cube(edge: f64) -> Result<Self> {
        TriMesh::cuboid(Vec3::repeat(edge / 2.0))
    }

    /// Regular tetrahedron with the given edge length, centroid at the origin.
    pub fn regular_tetrahedron(edge: f64) -> Result<Self> {
        if !(edge > 0.0) {
            return invalid("tetrahedron edge must be positive");
        }
        let s = edge / (2.0 * 2f64.sqrt());
        let vertices = vec![
            Vec3::new(s, s, s),
            Vec3::new(s, -s, -s),
            Vec3::new(-s, s, -s),
            Vec3::new(-s, -s, s),
        ];
        TriMesh::new(vertices, vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    /// Unit outward normal and a point of face `fi`.
    pub fn face_plane(&self, fi: usize) -> (Vec3, Vec3) {
        let [a, b, c] = self.faces[fi].map(|i| self.vertices[i]);
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        if len > 0.0 {
            (n / len, a)
        } else {
            (Vec3::zeros(), a)
        }
    }

    /// Unique undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| (0..3).map(move |k| (f[k].min(f[(k + 1) % 3]), f[k].max(f[(k + 1) % 3]))))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    pub fn shortest_edge(&self) -> f64 {
        self.edges()
            .iter()
            .map(|&(a, b)| (self.vertices[a] - self.vertices[b]).norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// Volume, centroid, and inertia tensor about the centroid for unit density.
    pub fn mass_properties(&self) -> (f64, Vec3, Mat3) {
        // Sum signed tetrahedra (origin, a, b, c): first and second moments.
        // Integrate relative to the vertex mean to avoid cancellation far from the origin.
        let origin = self.vertices.iter().sum::<Vec3>() / self.vertices.len() as f64;
        let mut vol = 0.0;
        let mut first = Vec3::zeros();
        let mut cov = Mat3::zeros();
        for f in &self.faces {
            let [a, b, c] = f.map(|i| self.vertices[i] - origin);
            let det = a.dot(&b.cross(&c));
            vol += det / 6.0;
            first += det / 24.0 * (a + b + c);
            let s = a + b + c;
            cov += det / 120.0 * (a * a.transpose() + b * b.transpose() + c * c.transpose() + s * s.transpose());
        }
        let com = first / vol;
        let cov_c = cov - vol * com * com.transpose();
        let inertia = Mat3::identity() * cov_c.trace() - cov_c;
        (vol, com + origin, inertia)
    }

    /// The same mesh translated by `offset`.
    pub fn translated(&self, offset: &Vec3) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|v| v + offset).collect(),
            faces: self.faces.clone(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {:.16e} {:.16e} {:.16e}", v.x, v.y, v.z);
        }
        for f in &self.faces {
            let _ = writeln!(s, "f {} {} {}", f[0], f[1], f[2]);
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let fmt_err = |line: usize, msg: &str| Error::Format {
            path: path.to_path_buf(),
            line,
            msg: msg.to_string(),
        };
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let tag = it.next().unwrap_or_default();
            let rest: Vec<&str> = it.collect();
            if rest.len() != 3 {
                return Err(fmt_err(ln + 1, "expected three values"));
            }
            match tag {
                "v" => {
                    let c: Vec<f64> = rest
                        .iter()
                        .map(|t| t.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| fmt_err(ln + 1, "bad vertex coordinate"))?;
                    vertices.push(Vec3::new(c[0], c[1], c[2]));
                }
                "f" => {
                    let c: Vec<usize> = rest
                        .iter()
                        .map(|t| t.parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| fmt_err(ln + 1, "bad face index"))?;
                    faces.push([c[0], c[1], c[2]]);
                }
                _ => return Err(fmt_err(ln + 1, "unknown line tag")),
            }
        }
        TriMesh::new(vertices, faces)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TriMesh::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Pose and velocity of one rigid body.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidBodyState {
    pub x: Vec3,
    pub q: Quat,
    pub v: Vec3,
    pub w: Vec3,
}

impl RigidBodyState {
    pub fn at_rest(x: Vec3, q: Quat) -> Self {
        RigidBodyState { x, q, v: Vec3::zeros(), w: Vec3::zeros() }
    }

    pub fn rotation(&self) -> Mat3 {
        rotmat(&self.q)
    }

    /// Velocity of the material point currently at world position `p`.
    pub fn point_velocity(&self, p: &Vec3) -> Vec3 {
        self.v + self.w.cross(&(p - self.x))
    }
}

/// Mesh, mass properties, and static flag of one body. The mesh origin is the
/// center of mass, so `RigidBodyState::x` is both pose origin and COM.
#[derive(Clone, Debug)]
pub struct BodySpec {
    pub mesh: Arc<TriMesh>,
    pub mass: f64,
    pub inertia: Mat3,
    pub is_static: bool,
}

impl BodySpec {
    /// Body of uniform density; the mesh is recentered on its centroid.
    pub fn from_mesh(mesh: TriMesh, mass: f64, is_static: bool) -> Result<Self> {
        let (vol, com, unit_inertia) = mesh.mass_properties();
        if !(vol > 0.0) {
            return invalid("mesh volume must be positive");
        }
        let mesh = if com.norm() > 0.0 { mesh.translated(&-com) } else { mesh };
        if is_static {
            return Ok(BodySpec { mesh: Arc::new(mesh), mass: 0.0, inertia: Mat3::zeros(), is_static });
        }
        if !(mass > 0.0) || !mass.is_finite() {
            return invalid(format!("dynamic body mass must be positive, got {mass}"));
        }
        Ok(BodySpec { mesh: Arc::new(mesh), mass, inertia: unit_inertia * (mass / vol), is_static })
    }

    pub fn inv_mass(&self) -> f64 {
        if self.is_static {
            0.0
        } else {
            1.0 / self.mass
        }
    }

    /// World-frame inverse inertia for orientation `r`.
    pub fn inv_inertia_world(&self, r: &Mat3) -> Mat3 {
        if self.is_static {
            return Mat3::zeros();
        }
        let inv = self.inertia.try_inverse().unwrap_or_else(Mat3::zeros);
        r * inv * r.transpose()
    }
}

/// A body in a scene: its fixed description and current state.
#[derive(Clone, Debug)]
pub struct Body {
    pub spec: BodySpec,
    pub state: RigidBodyState,
}

impl Body {
    pub fn new(spec: BodySpec, state: RigidBodyState) -> Self {
        Body { spec, state }
    }

    pub fn world_vertices(&self) -> Vec<Vec3> {
        world_vertices(&self.spec.mesh, &self.state)
    }
}

/// Mesh vertices mapped to world coordinates, `x + R v`.
pub fn world_vertices(mesh: &TriMesh, state: &RigidBodyState) -> Vec<Vec3> {
    let r = state.rotation();
    mesh.vertices().iter().map(|v| state.x + r * v).collect()
}
