//! Graph construction: mesh and object nodes, mesh-mesh, object-mesh and
//! face-face edges, raw (unnormalized) features and their adjoint with respect
//! to node positions and body poses.

use crate::collide::{contact_pairs, surrogate_gradient, ContactPair};
use crate::error::{invalid, Result};
use crate::geom::{quat_rate_matrix, rotmat_to_quat, skew, Body, BodySpec, Mat3, RigidBodyState, Vec3};

use super::tape::Mat;

pub const EDGE_DIM: usize = 8;
pub const FACE_EDGE_DIM: usize = 25;

pub fn mesh_node_dim(history: usize) -> usize {
    3 * history + 1
}

pub fn object_node_dim(history: usize) -> usize {
    3 * history + 2
}

/// Rigid pose of a body: world point = `r * local + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BodyPose {
    pub r: Mat3,
    pub t: Vec3,
}

impl BodyPose {
    pub fn from_state(s: &RigidBodyState) -> Self {
        BodyPose { r: s.rotation(), t: s.x }
    }

    pub fn to_state(&self) -> RigidBodyState {
        RigidBodyState::at_rest(self.t, rotmat_to_quat(&self.r))
    }
}

/// Node layout of a scene; fixed for the bodies' lifetime.
#[derive(Clone, Debug)]
pub struct Topology {
    /// First node of each body, plus the total node count at the end.
    pub offsets: Vec<usize>,
    pub node_body: Vec<usize>,
    pub is_static: Vec<bool>,
    pub mass: Vec<f64>,
    /// Body-frame position of each node.
    pub reference: Vec<Vec3>,
    pub ref_centroid: Vec<Vec3>,
    pub faces: Vec<Vec<[usize; 3]>>,
    /// Directed `(sender, receiver)` node pairs, both directions of every mesh edge.
    pub mesh_edges: Vec<(usize, usize)>,
}

impl Topology {
    pub fn new(specs: &[&BodySpec]) -> Self {
        let mut t = Topology {
            offsets: vec![0],
            node_body: vec![],
            is_static: vec![],
            mass: vec![],
            reference: vec![],
            ref_centroid: vec![],
            faces: vec![],
            mesh_edges: vec![],
        };
        for (b, s) in specs.iter().enumerate() {
            let off = t.reference.len();
            let verts = s.mesh.vertices();
            t.reference.extend_from_slice(verts);
            t.node_body.extend(std::iter::repeat(b).take(verts.len()));
            t.ref_centroid.push(verts.iter().sum::<Vec3>() / verts.len() as f64);
            t.is_static.push(s.is_static);
            t.mass.push(s.mass);
            t.faces.push(s.mesh.faces().iter().map(|f| f.map(|i| i + off)).collect());
            for (i, j) in s.mesh.edges() {
                t.mesh_edges.push((i + off, j + off));
                t.mesh_edges.push((j + off, i + off));
            }
            t.offsets.push(t.reference.len());
        }
        t
    }

    pub fn from_bodies(bodies: &[Body]) -> Self {
        Topology::new(&bodies.iter().map(|b| &b.spec).collect::<Vec<_>>())
    }

    pub fn num_nodes(&self) -> usize {
        self.reference.len()
    }

    pub fn num_bodies(&self) -> usize {
        self.is_static.len()
    }

    pub fn nodes(&self, b: usize) -> std::ops::Range<usize> {
        self.offsets[b]..self.offsets[b + 1]
    }

    /// World node positions of every body at the given poses.
    pub fn place(&self, poses: &[BodyPose]) -> Vec<Vec3> {
        (0..self.num_nodes()).map(|i| {
            let p = &poses[self.node_body[i]];
            p.r * self.reference[i] + p.t
        }).collect()
    }

    fn centroid(&self, frame: &[Vec3], b: usize) -> Vec3 {
        let r = self.nodes(b);
        let n = r.len() as f64;
        frame[r].iter().sum::<Vec3>() / n
    }
}

/// Contact pair with witness points pinned to their bodies, so the witnesses
/// move as material points while the set stays frozen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrozenContact {
    pub pair: ContactPair,
    pub local_a: Vec3,
    pub local_b: Vec3,
}

impl FrozenContact {
    pub fn new(pair: ContactPair, poses: &[BodyPose]) -> Self {
        let (pa, pb) = (&poses[pair.body_a], &poses[pair.body_b]);
        FrozenContact { pair, local_a: pa.r.transpose() * (pair.p_a - pa.t), local_b: pb.r.transpose() * (pair.p_b - pb.t) }
    }

    pub fn witnesses(&self, poses: &[BodyPose]) -> (Vec3, Vec3) {
        let (pa, pb) = (&poses[self.pair.body_a], &poses[self.pair.body_b]);
        (pa.r * self.local_a + pa.t, pb.r * self.local_b + pb.t)
    }
}

/// Detect contacts at the given poses and pin their witnesses.
pub fn detect_contacts(specs: &[&BodySpec], poses: &[BodyPose], d_eps: f64) -> Result<Vec<FrozenContact>> {
    let bodies: Vec<Body> = specs.iter().zip(poses).map(|(s, p)| Body::new((*s).clone(), p.to_state())).collect();
    let set = contact_pairs(&bodies, d_eps)?;
    Ok(set.pairs.into_iter().map(|c| FrozenContact::new(c, poses)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSet {
    pub senders: Vec<usize>,
    pub receivers: Vec<usize>,
    pub features: Mat,
}

/// Directed face-face edges: messages from the sender triangle's vertices to the
/// receiver triangle's vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceEdgeSet {
    pub senders: Vec<[usize; 3]>,
    pub receivers: Vec<[usize; 3]>,
    pub features: Mat,
    /// Source contact index and whether the receiver is the pair's body A.
    pub source: Vec<(usize, bool)>,
}

/// Raw graph features for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsGraph {
    pub mesh_nodes: Mat,
    pub object_nodes: Mat,
    pub mesh_mesh: EdgeSet,
    pub obj_mesh: EdgeSet,
    pub mesh_obj: EdgeSet,
    pub face_face: FaceEdgeSet,
}

/// Gradients with respect to each raw feature matrix of a [`DynamicsGraph`].
#[derive(Clone, Debug)]
pub struct GraphGrads {
    pub mesh_nodes: Mat,
    pub object_nodes: Mat,
    pub mesh_mesh: Mat,
    pub obj_mesh: Mat,
    pub mesh_obj: Mat,
    pub face_face: Mat,
}

/// Gradient with respect to a body pose, `r` taken as an unconstrained 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseGrad {
    pub r: Mat3,
    pub t: Vec3,
}

impl Default for PoseGrad {
    fn default() -> Self {
        PoseGrad { r: Mat3::zeros(), t: Vec3::zeros() }
    }
}

fn put(row: &mut [f64], at: usize, v: &Vec3) {
    row[at..at + 3].copy_from_slice(v.as_slice());
}

fn get(row: &[f64], at: usize) -> Vec3 {
    Vec3::new(row[at], row[at + 1], row[at + 2])
}

fn edge_row(row: &mut [f64], d: Vec3, dref: Vec3) {
    put(row, 0, &d);
    row[3] = d.norm();
    put(row, 4, &dref);
    row[7] = dref.norm();
}

/// Gradient of `(d, |d|)` features back to `d`.
fn edge_row_grad(g: &[f64], d: &Vec3) -> Vec3 {
    let n = d.norm();
    let mut gd = get(g, 0);
    if n > 0.0 {
        gd += d * (g[3] / n);
    }
    gd
}

impl DynamicsGraph {
    /// Features from node histories (oldest first, `h + 1` frames), current body
    /// poses and the frozen contacts at those poses.
    pub fn build(topo: &Topology, history: &[Vec<Vec3>], poses: &[BodyPose], contacts: &[FrozenContact]) -> Result<Self> {
        if history.len() < 2 {
            return invalid("history must cover at least two frames");
        }
        let n = topo.num_nodes();
        if history.iter().any(|f| f.len() != n) || poses.len() != topo.num_bodies() {
            return invalid("history or pose count does not match the scene");
        }
        let h = history.len() - 1;
        let cur = &history[h];
        let nb = topo.num_bodies();

        let mut mesh_nodes = Mat::zeros(n, mesh_node_dim(h));
        for i in 0..n {
            let row = mesh_nodes.row_mut(i);
            for k in 0..h {
                put(row, 3 * k, &(history[h - k][i] - history[h - k - 1][i]));
            }
            row[3 * h] = if topo.is_static[topo.node_body[i]] { 1.0 } else { 0.0 };
        }
        let cents: Vec<Vec<Vec3>> = history.iter().map(|f| (0..nb).map(|b| topo.centroid(f, b)).collect()).collect();
        let mut object_nodes = Mat::zeros(nb, object_node_dim(h));
        for b in 0..nb {
            let row = object_nodes.row_mut(b);
            for k in 0..h {
                put(row, 3 * k, &(cents[h - k][b] - cents[h - k - 1][b]));
            }
            row[3 * h] = if topo.is_static[b] { 1.0 } else { 0.0 };
            row[3 * h + 1] = topo.mass[b];
        }

        let ne = topo.mesh_edges.len();
        let mut mm = EdgeSet { senders: vec![], receivers: vec![], features: Mat::zeros(ne, EDGE_DIM) };
        for (e, &(s, r)) in topo.mesh_edges.iter().enumerate() {
            mm.senders.push(s);
            mm.receivers.push(r);
            edge_row(mm.features.row_mut(e), cur[s] - cur[r], topo.reference[s] - topo.reference[r]);
        }
        let mut om = EdgeSet { senders: vec![], receivers: vec![], features: Mat::zeros(n, EDGE_DIM) };
        let mut mo = EdgeSet { senders: vec![], receivers: vec![], features: Mat::zeros(n, EDGE_DIM) };
        for i in 0..n {
            let b = topo.node_body[i];
            let c = cents[h][b];
            om.senders.push(b);
            om.receivers.push(i);
            edge_row(om.features.row_mut(i), c - cur[i], topo.ref_centroid[b] - topo.reference[i]);
            mo.senders.push(i);
            mo.receivers.push(b);
            edge_row(mo.features.row_mut(i), cur[i] - c, topo.reference[i] - topo.ref_centroid[b]);
        }

        let mut ff = FaceEdgeSet { senders: vec![], receivers: vec![], features: Mat::zeros(2 * contacts.len(), FACE_EDGE_DIM), source: vec![] };
        for (k, c) in contacts.iter().enumerate() {
            let (pa, pb) = c.witnesses(poses);
            let ta = topo.faces[c.pair.body_a][c.pair.tri_a];
            let tb = topo.faces[c.pair.body_b][c.pair.tri_b];
            for (slot, recv_is_a) in [(0, true), (1, false)] {
                let (tr, ts, pr, ps, nrm) =
                    if recv_is_a { (ta, tb, pa, pb, c.pair.normal) } else { (tb, ta, pb, pa, -c.pair.normal) };
                let row = ff.features.row_mut(2 * k + slot);
                for m in 0..3 {
                    put(row, 3 * m, &(cur[tr[m]] - pr));
                    put(row, 9 + 3 * m, &(cur[ts[m]] - ps));
                }
                put(row, 18, &(ps - pr));
                row[21] = nrm.dot(&(ps - pr));
                put(row, 22, &nrm);
                ff.receivers.push(tr);
                ff.senders.push(ts);
                ff.source.push((k, recv_is_a));
            }
        }
        Ok(DynamicsGraph { mesh_nodes, object_nodes, mesh_mesh: mm, obj_mesh: om, mesh_obj: mo, face_face: ff })
    }

    /// Reverse of [`DynamicsGraph::build`]: gradients with respect to each history
    /// frame and body pose. Witness-point gradients reach the poses through the
    /// surrogate contact Jacobian; static bodies receive none.
    pub fn adjoint(
        &self,
        topo: &Topology,
        history: &[Vec<Vec3>],
        poses: &[BodyPose],
        contacts: &[FrozenContact],
        g: &GraphGrads,
    ) -> (Vec<Vec<Vec3>>, Vec<PoseGrad>) {
        let h = history.len() - 1;
        let n = topo.num_nodes();
        let nb = topo.num_bodies();
        let cur = &history[h];
        let mut gh = vec![vec![Vec3::zeros(); n]; h + 1];
        let mut gcent = vec![vec![Vec3::zeros(); nb]; h + 1];
        let mut gp = vec![PoseGrad::default(); nb];

        for i in 0..n {
            let row = g.mesh_nodes.row(i);
            for k in 0..h {
                let d = get(row, 3 * k);
                gh[h - k][i] += d;
                gh[h - k - 1][i] -= d;
            }
        }
        for b in 0..nb {
            let row = g.object_nodes.row(b);
            for k in 0..h {
                let d = get(row, 3 * k);
                gcent[h - k][b] += d;
                gcent[h - k - 1][b] -= d;
            }
        }
        for (e, (&s, &r)) in self.mesh_mesh.senders.iter().zip(&self.mesh_mesh.receivers).enumerate() {
            let gd = edge_row_grad(g.mesh_mesh.row(e), &(cur[s] - cur[r]));
            gh[h][s] += gd;
            gh[h][r] -= gd;
        }
        for i in 0..n {
            let b = topo.node_body[i];
            let c = topo.centroid(cur, b);
            let gd = edge_row_grad(g.obj_mesh.row(i), &(c - cur[i]));
            gcent[h][b] += gd;
            gh[h][i] -= gd;
            let gd = edge_row_grad(g.mesh_obj.row(i), &(cur[i] - c));
            gh[h][i] += gd;
            gcent[h][b] -= gd;
        }
        for (e, &(k, recv_is_a)) in self.face_face.source.iter().enumerate() {
            let c = &contacts[k];
            let row = g.face_face.row(e);
            let tr = self.face_face.receivers[e];
            let ts = self.face_face.senders[e];
            let nrm = if recv_is_a { c.pair.normal } else { -c.pair.normal };
            let mut gpr = Vec3::zeros();
            let mut gps = Vec3::zeros();
            for m in 0..3 {
                let a = get(row, 3 * m);
                gh[h][tr[m]] += a;
                gpr -= a;
                let b = get(row, 9 + 3 * m);
                gh[h][ts[m]] += b;
                gps -= b;
            }
            let d = get(row, 18) + nrm * row[21];
            gps += d;
            gpr -= d;
            let (ga, gb) = if recv_is_a { (gpr, gps) } else { (gps, gpr) };
            witness_pose_grad(c, poses, topo, ga, gb, &mut gp);
        }
        for (k, gc) in gcent.iter().enumerate() {
            for b in 0..nb {
                let r = topo.nodes(b);
                let w = gc[b] / r.len() as f64;
                for i in r {
                    gh[k][i] += w;
                }
            }
        }
        (gh, gp)
    }
}

/// Push gradients of the two witness points to the owning bodies' poses through
/// the per-body blocks of the surrogate Jacobian `J·H`, then from quaternion
/// coordinates to the rotation matrix.
fn witness_pose_grad(c: &FrozenContact, poses: &[BodyPose], topo: &Topology, ga: Vec3, gb: Vec3, out: &mut [PoseGrad]) {
    let (pa, pb) = c.witnesses(poses);
    let sa = poses[c.pair.body_a].to_state();
    let sb = poses[c.pair.body_b].to_state();
    let pair = ContactPair { p_a: pa, p_b: pb, ..c.pair };
    let jh = surrogate_gradient(&pair, &sa, &sb);
    // Rows 0..3 are d(p_b − p_a): A's columns carry −dp_a, B's carry dp_b.
    for (body, state, gw, col, sign) in [(c.pair.body_a, sa, ga, 0, -1.0), (c.pair.body_b, sb, gb, 7, 1.0)] {
        if topo.is_static[body] {
            continue;
        }
        let block = jh.fixed_view::<3, 7>(0, col) * sign;
        let gq = block.transpose() * gw;
        out[body].t += Vec3::new(gq[0], gq[1], gq[2]);
        let gquat = nalgebra::Vector4::new(gq[3], gq[4], gq[5], gq[6]);
        // q̇ = ½ G(q)ᵀ ω for a unit quaternion, and dR = skew(δθ) R.
        let gtheta = quat_rate_matrix(&state.q) * gquat * 0.5;
        out[body].r += skew(&gtheta) * poses[body].r * 0.5;
    }
}
