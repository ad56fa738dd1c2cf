//! Encode-process-decode network over [`DynamicsGraph`]s.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

use super::graph::{mesh_node_dim, object_node_dim, DynamicsGraph, GraphGrads, EDGE_DIM, FACE_EDGE_DIM};
use super::tape::{Mat, Tape, Var};

/// Smallest standard deviation used for normalization.
pub const STD_FLOOR: f64 = 1e-8;

/// Network shape; everything else about a model is learned or derived.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub latent: usize,
    pub layers: usize,
    pub history: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture { latent: 64, layers: 5, history: 2 }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.latent == 0 || self.history == 0 {
            return invalid("latent size and history length must be positive");
        }
        Ok(())
    }
}

/// Per-column mean and standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct Stats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Stats {
    pub fn identity(dim: usize) -> Self {
        Stats { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Column statistics over the rows of all matrices; std floored at [`STD_FLOOR`].
    pub fn from_rows<'a>(dim: usize, mats: impl Iterator<Item = &'a Mat>) -> Self {
        let mut n = 0.0;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for m in mats {
            for r in 0..m.rows {
                n += 1.0;
                for (c, v) in m.row(r).iter().enumerate() {
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
        }
        if n == 0.0 {
            return Stats::identity(dim);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq.iter().zip(&mean).map(|(s, m)| (s / n - m * m).max(0.0).sqrt().max(STD_FLOOR)).collect();
        Stats { mean, std }
    }

    pub fn normalize(&self, m: &Mat) -> Mat {
        let mut out = m.clone();
        for r in 0..out.rows {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
        out
    }

    /// Chain a gradient with respect to normalized values back to raw values.
    pub fn unnormalize_grad(&self, g: &Mat) -> Mat {
        let mut out = g.clone();
        for r in 0..out.rows {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v /= self.std[c];
            }
        }
        out
    }
}

/// Normalization statistics of every input group and of the target.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mesh_nodes: Stats,
    pub object_nodes: Stats,
    pub mesh_mesh: Stats,
    pub obj_mesh: Stats,
    pub mesh_obj: Stats,
    pub face_face: Stats,
    pub target: Stats,
}

impl Normalizer {
    pub fn identity(h: usize) -> Self {
        Normalizer {
            mesh_nodes: Stats::identity(mesh_node_dim(h)),
            object_nodes: Stats::identity(object_node_dim(h)),
            mesh_mesh: Stats::identity(EDGE_DIM),
            obj_mesh: Stats::identity(EDGE_DIM),
            mesh_obj: Stats::identity(EDGE_DIM),
            face_face: Stats::identity(FACE_EDGE_DIM),
            target: Stats::identity(3),
        }
    }

    pub fn groups(&self) -> [(&'static str, &Stats); 7] {
        [
            ("mesh_nodes", &self.mesh_nodes),
            ("object_nodes", &self.object_nodes),
            ("mesh_mesh", &self.mesh_mesh),
            ("obj_mesh", &self.obj_mesh),
            ("mesh_obj", &self.mesh_obj),
            ("face_face", &self.face_face),
            ("target", &self.target),
        ]
    }

    pub fn groups_mut(&mut self) -> [(&'static str, &mut Stats); 7] {
        [
            ("mesh_nodes", &mut self.mesh_nodes),
            ("object_nodes", &mut self.object_nodes),
            ("mesh_mesh", &mut self.mesh_mesh),
            ("obj_mesh", &mut self.obj_mesh),
            ("mesh_obj", &mut self.mesh_obj),
            ("face_face", &mut self.face_face),
            ("target", &mut self.target),
        ]
    }
}

/// Three linear layers with SiLU between them, optionally layer-normalized.
/// The first layer takes several input blocks, each with its own weight, so a
/// block of node latents can be projected once per node and then gathered per
/// edge instead of concatenated per edge.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub name: String,
    /// First-layer weight per input block.
    pub blocks: Vec<usize>,
    /// Bias of the first layer, then `(weight, bias)` of the later layers.
    pub bias0: usize,
    pub linear: Vec<(usize, usize)>,
    pub norm: Option<(usize, usize)>,
}

/// One input block of an [`Mlp`]: a value, optionally gathered by row indices
/// after projection.
struct Block<'a>(Var, Option<&'a [usize]>);

/// Edge types in processor order.
const EDGE_TYPES: [&str; 4] = ["mesh_mesh", "obj_mesh", "mesh_obj", "face_face"];

#[derive(Clone, Debug, PartialEq)]
pub struct GnnModel {
    pub arch: Architecture,
    pub norm: Normalizer,
    /// Parameter tensors, addressed by the indices stored in the MLPs.
    pub params: Vec<Mat>,
    pub param_names: Vec<String>,
    enc_nodes: [Mlp; 2],
    enc_edges: [Mlp; 4],
    proc_edges: Vec<[Mlp; 4]>,
    proc_nodes: Vec<[Mlp; 2]>,
    decoder: Mlp,
}

struct Builder<'a> {
    params: Vec<Mat>,
    names: Vec<String>,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn tensor(&mut self, name: String, m: Mat) -> usize {
        self.params.push(m);
        self.names.push(name);
        self.params.len() - 1
    }

    fn weight(&mut self, name: String, fan_in: usize, rows: usize, cols: usize, zero: bool) -> usize {
        let bound = (3.0 / fan_in as f64).sqrt();
        let data = (0..rows * cols).map(|_| if zero { 0.0 } else { self.rng.gen_range(-bound..bound) }).collect();
        self.tensor(name, Mat::from_vec(rows, cols, data))
    }

    fn mlp(&mut self, name: &str, inputs: &[usize], latent: usize, output: usize, layer_norm: bool, zero_last: bool) -> Mlp {
        let fan_in: usize = inputs.iter().sum();
        let blocks = if inputs.len() == 1 {
            vec![self.weight(format!("{name}.w0"), fan_in, inputs[0], latent, false)]
        } else {
            inputs.iter().enumerate().map(|(k, &d)| self.weight(format!("{name}.w0_{k}"), fan_in, d, latent, false)).collect()
        };
        let bias0 = self.tensor(format!("{name}.b0"), Mat::zeros(1, latent));
        let dims = [latent, latent, output];
        let mut linear = Vec::new();
        for l in 1..3 {
            let wi = self.weight(format!("{name}.w{l}"), dims[l - 1], dims[l - 1], dims[l], zero_last && l == 2);
            let bi = self.tensor(format!("{name}.b{l}"), Mat::zeros(1, dims[l]));
            linear.push((wi, bi));
        }
        let norm = layer_norm.then(|| {
            let g = self.tensor(format!("{name}.ln_scale"), Mat::from_vec(1, output, vec![1.0; output]));
            let b = self.tensor(format!("{name}.ln_shift"), Mat::zeros(1, output));
            (g, b)
        });
        Mlp { name: name.to_string(), blocks, bias0, linear, norm }
    }
}

/// Tape handles of one forward evaluation.
pub struct Forward {
    pub tape: Tape,
    inputs: [Var; 6],
    pub output: Var,
}

impl Forward {
    /// Normalized accelerations, one row per mesh node.
    pub fn accel_normalized(&self) -> &Mat {
        self.tape.value(self.output)
    }
}

impl GnnModel {
    /// Freshly initialized model; the decoder's last layer is zero so every node
    /// initially predicts the target mean.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder { params: vec![], names: vec![], rng: &mut rng };
        let (l, h) = (arch.latent, arch.history);
        let enc_nodes = [b.mlp("enc.mesh_nodes", &[mesh_node_dim(h)], l, l, true, false), b.mlp("enc.object_nodes", &[object_node_dim(h)], l, l, true, false)];
        let edge_in = [EDGE_DIM, EDGE_DIM, EDGE_DIM, FACE_EDGE_DIM];
        let enc_edges = std::array::from_fn(|k| b.mlp(&format!("enc.{}", EDGE_TYPES[k]), &[edge_in[k]], l, l, true, false));
        let mut proc_edges = Vec::new();
        let mut proc_nodes = Vec::new();
        for layer in 0..arch.layers {
            let widths = [3, 3, 3, 7];
            proc_edges.push(std::array::from_fn(|k| b.mlp(&format!("proc{layer}.{}", EDGE_TYPES[k]), &vec![l; widths[k]], l, l, true, false)));
            proc_nodes.push([
                b.mlp(&format!("proc{layer}.mesh_nodes"), &[l, l], l, l, true, false),
                b.mlp(&format!("proc{layer}.object_nodes"), &[l, l], l, l, true, false),
            ]);
        }
        let decoder = b.mlp("dec", &[l], l, 3, false, true);
        let (params, param_names) = (b.params, b.names);
        Ok(GnnModel { arch, norm: Normalizer::identity(h), params, param_names, enc_nodes, enc_edges, proc_edges, proc_nodes, decoder })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn zero_grads(&self) -> Vec<Mat> {
        self.params.iter().map(|p| Mat::zeros(p.rows, p.cols)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(Mat::is_finite)
    }

    fn run_mlp(&self, t: &mut Tape, m: &Mlp, inputs: &[Block]) -> Var {
        debug_assert_eq!(inputs.len(), m.blocks.len());
        let mut y = t.linear(inputs[0].0, &self.params, m.blocks[0], m.bias0);
        debug_assert!(inputs[0].1.is_none());
        for (Block(x, idx), &w) in inputs.iter().zip(&m.blocks).skip(1) {
            let mut p = t.project(*x, &self.params, w);
            if let Some(idx) = idx {
                p = t.gather(p, idx.to_vec());
            }
            y = t.add(y, p);
        }
        for &(w, b) in &m.linear {
            y = t.silu(y);
            y = t.linear(y, &self.params, w, b);
        }
        if let Some((g, b)) = m.norm {
            y = t.layer_norm(y, &self.params, g, b);
        }
        y
    }

    /// Encode and run the processor layers; returns input and latent handles.
    fn process(&self, t: &mut Tape, g: &DynamicsGraph) -> ([Var; 6], Var, Var) {
        let n = &self.norm;
        let inputs = [
            t.input(n.mesh_nodes.normalize(&g.mesh_nodes)),
            t.input(n.object_nodes.normalize(&g.object_nodes)),
            t.input(n.mesh_mesh.normalize(&g.mesh_mesh.features)),
            t.input(n.obj_mesh.normalize(&g.obj_mesh.features)),
            t.input(n.mesh_obj.normalize(&g.mesh_obj.features)),
            t.input(n.face_face.normalize(&g.face_face.features)),
        ];
        let mut vm = self.run_mlp(t, &self.enc_nodes[0], &[Block(inputs[0], None)]);
        let mut vo = self.run_mlp(t, &self.enc_nodes[1], &[Block(inputs[1], None)]);
        let mut e: [Var; 4] = std::array::from_fn(|k| inputs[2 + k]);
        for k in 0..4 {
            e[k] = self.run_mlp(t, &self.enc_edges[k], &[Block(e[k], None)]);
        }
        let (nm, no) = (g.mesh_nodes.rows, g.object_nodes.rows);
        let ff = &g.face_face;
        let ff_recv: Vec<Vec<usize>> = (0..3).map(|m| ff.receivers.iter().map(|r| r[m]).collect()).collect();
        let ff_send: Vec<Vec<usize>> = (0..3).map(|m| ff.senders.iter().map(|s| s[m]).collect()).collect();
        let ff_pairs: Vec<(usize, usize)> = ff.receivers.iter().enumerate().flat_map(|(i, r)| r.iter().map(move |&d| (i, d))).collect();
        let sets = [&g.mesh_mesh, &g.obj_mesh, &g.mesh_obj];
        for layer in 0..self.arch.layers {
            let node_src = [(vm, vm), (vm, vo), (vo, vm)];
            let mut upd = [0; 4];
            for k in 0..3 {
                let (recv_of, send_of) = node_src[k];
                let blocks = [Block(e[k], None), Block(recv_of, Some(&sets[k].receivers)), Block(send_of, Some(&sets[k].senders))];
                upd[k] = self.run_mlp(t, &self.proc_edges[layer][k], &blocks);
            }
            let mut blocks = vec![Block(e[3], None)];
            blocks.extend(ff_recv.iter().chain(&ff_send).map(|idx| Block(vm, Some(idx.as_slice()))));
            upd[3] = self.run_mlp(t, &self.proc_edges[layer][3], &blocks);

            let agg_mm = t.scatter(upd[0], sets[0].receivers.iter().copied().enumerate().collect(), nm);
            let agg_om = t.scatter(upd[1], sets[1].receivers.iter().copied().enumerate().collect(), nm);
            let agg_ff = t.scatter(upd[3], ff_pairs.clone(), nm);
            let agg_m = t.add(agg_mm, agg_om);
            let agg_m = t.add(agg_m, agg_ff);
            let agg_o = t.scatter(upd[2], sets[2].receivers.iter().copied().enumerate().collect(), no);

            for k in 0..4 {
                e[k] = t.add(e[k], upd[k]);
            }
            let dm = self.run_mlp(t, &self.proc_nodes[layer][0], &[Block(vm, None), Block(agg_m, None)]);
            let dobj = self.run_mlp(t, &self.proc_nodes[layer][1], &[Block(vo, None), Block(agg_o, None)]);
            vm = t.add(vm, dm);
            vo = t.add(vo, dobj);
        }
        (inputs, vm, vo)
    }

    /// Encode, run the processor layers and decode normalized accelerations.
    pub fn forward(&self, g: &DynamicsGraph) -> Forward {
        let mut t = Tape::new();
        let (inputs, vm, _) = self.process(&mut t, g);
        let output = self.run_mlp(&mut t, &self.decoder, &[Block(vm, None)]);
        Forward { tape: t, inputs, output }
    }

    /// Mesh- and object-node latents after message passing.
    pub fn latents(&self, g: &DynamicsGraph) -> (Mat, Mat) {
        let mut t = Tape::new();
        let (_, vm, vo) = self.process(&mut t, g);
        (t.value(vm).clone(), t.value(vo).clone())
    }

    /// Normalized accelerations decoded from mesh-node latents.
    pub fn decode(&self, latents: &Mat) -> Mat {
        let mut t = Tape::new();
        let v = t.input(latents.clone());
        let out = self.run_mlp(&mut t, &self.decoder, &[Block(v, None)]);
        t.value(out).clone()
    }

    /// De-normalized accelerations, one row per mesh node.
    pub fn accelerations(&self, g: &DynamicsGraph) -> Mat {
        let f = self.forward(g);
        let mut a = f.accel_normalized().clone();
        let s = &self.norm.target;
        for r in 0..a.rows {
            for (c, v) in a.row_mut(r).iter_mut().enumerate() {
                *v = *v * s.std[c] + s.mean[c];
            }
        }
        a
    }

    /// Backpropagate a gradient with respect to the normalized output through
    /// the network; accumulates parameter gradients and returns raw-feature
    /// gradients.
    pub fn backward(&self, f: &mut Forward, g_out: Mat, pgrads: &mut [Mat]) -> GraphGrads {
        f.tape.backward(f.output, g_out, &self.params, pgrads);
        let grab = |v: Var, s: &Stats| {
            let val = f.tape.value(v);
            match f.tape.grad(v) {
                Some(g) => s.unnormalize_grad(g),
                None => Mat::zeros(val.rows, val.cols),
            }
        };
        let n = &self.norm;
        GraphGrads {
            mesh_nodes: grab(f.inputs[0], &n.mesh_nodes),
            object_nodes: grab(f.inputs[1], &n.object_nodes),
            mesh_mesh: grab(f.inputs[2], &n.mesh_mesh),
            obj_mesh: grab(f.inputs[3], &n.obj_mesh),
            mesh_obj: grab(f.inputs[4], &n.mesh_obj),
            face_face: grab(f.inputs[5], &n.face_face),
        }
    }

    /// Rebuild a model of the given architecture from named tensors.
    pub fn from_parts(arch: Architecture, norm: Normalizer, tensors: Vec<(String, Mat)>) -> Result<Self> {
        let mut m = GnnModel::new(arch, 0)?;
        if tensors.len() != m.params.len() {
            return invalid(format!("expected {} parameter tensors, found {}", m.params.len(), tensors.len()));
        }
        for (k, (name, t)) in tensors.into_iter().enumerate() {
            let p = &m.params[k];
            if name != m.param_names[k] || (t.rows, t.cols) != (p.rows, p.cols) {
                return invalid(format!("parameter {k} is {name} {}x{}, expected {} {}x{}", t.rows, t.cols, m.param_names[k], p.rows, p.cols));
            }
            m.params[k] = t;
        }
        for ((name, want), (_, got)) in Normalizer::identity(arch.history).groups().iter().zip(norm.groups()) {
            if want.mean.len() != got.mean.len() || got.std.len() != got.mean.len() {
                return invalid(format!("normalization group {name} has the wrong width"));
            }
            if got.std.iter().any(|s| !(*s >= STD_FLOOR)) {
                return invalid(format!("normalization group {name} has a std below the floor"));
            }
        }
        m.norm = norm;
        Ok(m)
    }
}
