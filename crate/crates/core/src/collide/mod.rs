//! Discrete collision detection between convex meshes and the surrogate
//! Jacobians of nearest points with respect to body coordinates.

mod gjk;
mod patch;
pub mod tri;

use std::fmt::Write as _;

use nalgebra::SMatrix;

use crate::error::{invalid, Error, Result};
use crate::geom::{kinematic_map_h, skew, Body, Mat3, RigidBodyState, TriMesh, Vec3};
use tri::{closest_point_on_triangle, triangle_distance, Tri};

/// Result of a narrowphase query between two convex bodies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Proximity {
    /// Signed distance; negative means penetration depth.
    pub dist: f64,
    pub p_a: Vec3,
    pub p_b: Vec3,
    /// Unit normal pointing from A to B; `p_b - p_a == dist * normal`.
    pub normal: Vec3,
}

/// One triangle-triangle proximity event between two bodies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactPair {
    pub body_a: usize,
    pub body_b: usize,
    pub tri_a: usize,
    pub tri_b: usize,
    pub p_a: Vec3,
    pub p_b: Vec3,
    pub dist: f64,
    pub normal: Vec3,
    /// Footprint area of a penetration patch (zero for separated pairs).
    pub area: f64,
}

impl ContactPair {
    pub fn key(&self) -> (usize, usize, usize, usize) {
        (self.body_a, self.body_b, self.tri_a, self.tri_b)
    }
}

/// Contact pairs detected at one time step, sorted by key.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContactSet {
    pub pairs: Vec<ContactPair>,
    pub frozen: bool,
}

impl ContactSet {
    /// One line per pair: bodies, triangles, witness points, distance, normal.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for p in &self.pairs {
            let _ = writeln!(
                s,
                "{} {} {} {} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e}",
                p.body_a, p.body_b, p.tri_a, p.tri_b, p.p_a.x, p.p_a.y, p.p_a.z, p.p_b.x, p.p_b.y, p.p_b.z, p.dist,
                p.normal.x, p.normal.y, p.normal.z
            );
        }
        s
    }

    pub fn penetrating(&self) -> impl Iterator<Item = &ContactPair> {
        self.pairs.iter().filter(|p| p.dist < 0.0)
    }
}

fn world_tris(mesh: &TriMesh, verts: &[Vec3]) -> Vec<Tri> {
    mesh.faces().iter().map(|f| f.map(|i| verts[i])).collect()
}

fn normal_or(v: Vec3, fallback: Vec3) -> Vec3 {
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        fallback
    }
}

fn proximity_world(va: &[Vec3], vb: &[Vec3]) -> Result<Proximity> {
    match gjk::gjk(va, vb)? {
        gjk::Gjk::Separated { dist, p_a, p_b } => {
            Ok(Proximity { dist, p_a, p_b, normal: normal_or(p_b - p_a, Vec3::x()) })
        }
        gjk::Gjk::Overlapping(simplex) => {
            let (depth, p_a, p_b, normal) = gjk::epa(va, vb, simplex)?;
            Ok(Proximity { dist: -depth, p_a, p_b, normal })
        }
    }
}

/// Minimum distance (GJK) or penetration depth (EPA) between two convex meshes.
pub fn nearest_points(mesh_a: &TriMesh, state_a: &RigidBodyState, mesh_b: &TriMesh, state_b: &RigidBodyState) -> Result<Proximity> {
    let va = crate::geom::world_vertices(mesh_a, state_a);
    let vb = crate::geom::world_vertices(mesh_b, state_b);
    proximity_world(&va, &vb)
}

/// Exhaustive minimum over all triangle pairs. Independent of GJK; meant as an
/// oracle for separated configurations (reports zero when the meshes touch).
pub fn brute_force_nearest(mesh_a: &TriMesh, state_a: &RigidBodyState, mesh_b: &TriMesh, state_b: &RigidBodyState) -> (f64, Vec3, Vec3) {
    let ta = world_tris(mesh_a, &crate::geom::world_vertices(mesh_a, state_a));
    let tb = world_tris(mesh_b, &crate::geom::world_vertices(mesh_b, state_b));
    let mut best = (f64::INFINITY, Vec3::zeros(), Vec3::zeros());
    for a in &ta {
        for b in &tb {
            let r = triangle_distance(a, b);
            if r.0 < best.0 {
                best = r;
            }
        }
    }
    best
}

#[derive(Clone, Copy)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn of(points: &[Vec3], pad: f64) -> Aabb {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        Aabb { lo: lo.add_scalar(-pad), hi: hi.add_scalar(pad) }
    }

    fn overlaps(&self, o: &Aabb) -> bool {
        (0..3).all(|k| self.lo[k] <= o.hi[k] && o.lo[k] <= self.hi[k])
    }
}

/// Default proximity threshold: a tenth of the shortest mesh edge in the scene.
pub fn default_d_eps(bodies: &[Body]) -> f64 {
    0.1 * bodies.iter().map(|b| b.spec.mesh.shortest_edge()).fold(f64::INFINITY, f64::min)
}

/// Body pairs `(i, j)`, `i < j`, whose world AABBs inflated by `d_eps / 2` overlap.
/// Pairs of two static bodies are never reported.
pub fn broadphase(bodies: &[Body], d_eps: f64) -> Vec<(usize, usize)> {
    let boxes: Vec<Aabb> = bodies.iter().map(|b| Aabb::of(&b.world_vertices(), d_eps / 2.0)).collect();
    broadphase_boxes(bodies, &boxes)
}

fn broadphase_boxes(bodies: &[Body], boxes: &[Aabb]) -> Vec<(usize, usize)> {
    // Sweep along x.
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[a].lo.x.total_cmp(&boxes[b].lo.x).then(a.cmp(&b)));
    let mut out = Vec::new();
    for (k, &i) in order.iter().enumerate() {
        for &j in &order[k + 1..] {
            if boxes[j].lo.x > boxes[i].hi.x {
                break;
            }
            if bodies[i].spec.is_static && bodies[j].spec.is_static {
                continue;
            }
            if boxes[i].overlaps(&boxes[j]) {
                out.push((i.min(j), i.max(j)));
            }
        }
    }
    out.sort_unstable();
    out
}

struct BodyGeom {
    verts: Vec<Vec3>,
    tris: Vec<Tri>,
}

fn tri_boxes(tris: &[Tri], pad: f64) -> Vec<Aabb> {
    tris.iter().map(|t| Aabb::of(t, pad)).collect()
}

fn nearest_triangle(tris: &[Tri], p: &Vec3) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, t) in tris.iter().enumerate() {
        let d = (closest_point_on_triangle(p, t).0 - p).norm_squared();
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Narrowphase for one body pair; falls back to brute force / separating axes
/// when GJK or EPA fail numerically.
fn body_pair_contacts(ia: usize, ib: usize, ga: &BodyGeom, gb: &BodyGeom, fa: &[[usize; 3]], fb: &[[usize; 3]], d_eps: f64) -> Result<Vec<ContactPair>> {
    enum Kind {
        Separated(f64),
        Penetrating { depth: f64, n: Vec3, witness: Option<(Vec3, Vec3)> },
    }
    let kind = match gjk::gjk(&ga.verts, &gb.verts) {
        Ok(gjk::Gjk::Separated { dist, .. }) => Kind::Separated(dist),
        Ok(gjk::Gjk::Overlapping(simplex)) => match gjk::epa(&ga.verts, &gb.verts, simplex) {
            Ok((depth, p_a, p_b, n)) => Kind::Penetrating { depth, n, witness: Some((p_a, p_b)) },
            Err(_) => match gjk::sat_penetration(&ga.verts, fa, &gb.verts, fb) {
                Some((depth, n)) => Kind::Penetrating { depth, n, witness: None },
                None => Kind::Separated(0.0),
            },
        },
        Err(_) => {
            let mut best = f64::INFINITY;
            for a in &ga.tris {
                for b in &gb.tris {
                    best = best.min(triangle_distance(a, b).0);
                }
            }
            if best > 0.0 {
                Kind::Separated(best)
            } else {
                match gjk::sat_penetration(&ga.verts, fa, &gb.verts, fb) {
                    Some((depth, n)) => Kind::Penetrating { depth, n, witness: None },
                    None => return Err(Error::NumericalFailure(format!("narrowphase failed for bodies {ia},{ib}"))),
                }
            }
        }
    };
    let mut out: Vec<ContactPair> = Vec::new();
    let pad = match &kind {
        Kind::Separated(d) if *d >= d_eps => return Ok(out),
        Kind::Separated(_) => d_eps / 2.0,
        Kind::Penetrating { depth, .. } => d_eps / 2.0 + depth,
    };
    let ba = tri_boxes(&ga.tris, pad);
    let bb = tri_boxes(&gb.tris, pad);
    let mut candidates = Vec::new();
    for (i, a) in ba.iter().enumerate() {
        for (j, b) in bb.iter().enumerate() {
            if a.overlaps(b) {
                candidates.push((i, j));
            }
        }
    }
    if let Kind::Penetrating { depth, n, witness } = kind {
        for &(i, j) in &candidates {
            if let Some(p) = patch::patch(&ga.tris[i], &gb.tris[j], &n) {
                out.push(ContactPair {
                    body_a: ia,
                    body_b: ib,
                    tri_a: i,
                    tri_b: j,
                    p_a: p.p_a,
                    p_b: p.p_b,
                    dist: -p.depth,
                    normal: n,
                    area: p.area,
                });
            }
        }
        if out.is_empty() {
            if let Some((p_a, p_b)) = witness {
                if depth > 0.0 {
                    out.push(ContactPair {
                        body_a: ia,
                        body_b: ib,
                        tri_a: nearest_triangle(&ga.tris, &p_a),
                        tri_b: nearest_triangle(&gb.tris, &p_b),
                        p_a,
                        p_b,
                        dist: -depth,
                        normal: n,
                        area: 0.0,
                    });
                }
            }
        }
    }
    let taken: Vec<(usize, usize)> = out.iter().map(|p| (p.tri_a, p.tri_b)).collect();
    for (i, j) in candidates {
        if taken.contains(&(i, j)) {
            continue;
        }
        let (d, p_a, p_b) = triangle_distance(&ga.tris[i], &gb.tris[j]);
        if d > 0.0 && d < d_eps {
            out.push(ContactPair { body_a: ia, body_b: ib, tri_a: i, tri_b: j, p_a, p_b, dist: d, normal: (p_b - p_a) / d, area: 0.0 });
        }
    }
    Ok(out)
}

/// All triangle pairs closer than `d_eps` across broadphase body pairs. Overlapping
/// body pairs contribute one penetration patch per facing triangle pair (negative
/// distance) in addition to separated triangle pairs under the threshold.
pub fn contact_pairs(bodies: &[Body], d_eps: f64) -> Result<ContactSet> {
    if !(d_eps > 0.0) {
        return invalid(format!("d_eps must be positive, got {d_eps}"));
    }
    let geoms: Vec<BodyGeom> = bodies
        .iter()
        .map(|b| {
            let verts = b.world_vertices();
            let tris = world_tris(&b.spec.mesh, &verts);
            BodyGeom { verts, tris }
        })
        .collect();
    let boxes: Vec<Aabb> = geoms.iter().map(|g| Aabb::of(&g.verts, d_eps / 2.0)).collect();
    let mut pairs = Vec::new();
    for (i, j) in broadphase_boxes(bodies, &boxes) {
        pairs.extend(body_pair_contacts(i, j, &geoms[i], &geoms[j], bodies[i].spec.mesh.faces(), bodies[j].spec.mesh.faces(), d_eps)?);
    }
    pairs.sort_by_key(|p| p.key());
    Ok(ContactSet { pairs, frozen: true })
}

/// Contact Jacobian mapping `(v_A, ω_A, v_B, ω_B)` to the relative witness
/// velocities: rows 0..3 give the velocity of B's point relative to A's, rows
/// 3..6 the negation.
pub fn contact_jacobian(pair: &ContactPair, state_a: &RigidBodyState, state_b: &RigidBodyState) -> SMatrix<f64, 6, 12> {
    let ra = skew(&(pair.p_a - state_a.x));
    let rb = skew(&(pair.p_b - state_b.x));
    let i = Mat3::identity();
    let mut j = SMatrix::<f64, 6, 12>::zeros();
    for (row, sign) in [(0, 1.0), (3, -1.0)] {
        j.fixed_view_mut::<3, 3>(row, 0).copy_from(&(-i * sign));
        j.fixed_view_mut::<3, 3>(row, 3).copy_from(&(ra * sign));
        j.fixed_view_mut::<3, 3>(row, 6).copy_from(&(i * sign));
        j.fixed_view_mut::<3, 3>(row, 9).copy_from(&(-rb * sign));
    }
    j
}

/// Surrogate Jacobian `J · H` of the nearest points with respect to
/// `(x_A, q_A, x_B, q_B)` under a frozen contact set.
pub fn surrogate_gradient(pair: &ContactPair, state_a: &RigidBodyState, state_b: &RigidBodyState) -> SMatrix<f64, 6, 14> {
    contact_jacobian(pair, state_a, state_b) * kinematic_map_h(&state_a.q, &state_b.q)
}
