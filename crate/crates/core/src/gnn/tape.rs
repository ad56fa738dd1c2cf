//! Dense row-major matrices and a reverse-mode tape over the handful of ops the
//! graph network needs. Rows are items (nodes or edges), columns are features.

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Mat { rows, cols, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` with optional transposes.
fn gemm(alpha: f64, a: &Mat, ta: bool, b: &Mat, tb: bool, beta: f64, c: &mut Mat) {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, k2, "gemm inner dimension");
    assert_eq!((c.rows, c.cols), (m, n), "gemm output shape");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.data.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: strides and extents describe the owned buffers exactly.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let mut c = Mat::zeros(a.rows, b.cols);
    gemm(1.0, a, false, b, false, 0.0, &mut c);
    c
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub type Var = usize;

#[derive(Clone, Debug)]
enum Op {
    Input,
    /// `y = x W + b` with parameter indices of `W` (in x out) and `b` (1 x out).
    Linear { x: Var, w: usize, b: usize },
    /// `y = x W` without bias.
    Project { x: Var, w: usize },
    /// Caches the logistic sigmoid of the input.
    Silu { x: Var, sig: Vec<f64> },
    /// Per-row normalization with learned scale and shift; caches `1/σ` per row.
    LayerNorm { x: Var, g: usize, b: usize, rstd: Vec<f64> },
    Concat(Vec<Var>),
    Gather { x: Var, idx: Vec<usize> },
    /// `out[dst] += x[src]` for each `(src, dst)`.
    Scatter { x: Var, pairs: Vec<(usize, usize)> },
    Add(Var, Var),
}

/// Record of one forward evaluation; replay backwards for gradients.
#[derive(Default)]
pub struct Tape {
    vals: Vec<Mat>,
    ops: Vec<Op>,
    grads: Vec<Option<Mat>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, op: Op, val: Mat) -> Var {
        self.vals.push(val);
        self.ops.push(op);
        self.vals.len() - 1
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.vals[v]
    }

    /// Gradient of the last backward seed with respect to `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v).and_then(|g| g.as_ref())
    }

    pub fn input(&mut self, m: Mat) -> Var {
        self.push(Op::Input, m)
    }

    pub fn linear(&mut self, x: Var, params: &[Mat], w: usize, b: usize) -> Var {
        let (wm, bm) = (&params[w], &params[b]);
        let xv = &self.vals[x];
        let mut data = Vec::with_capacity(xv.rows * wm.cols);
        for _ in 0..xv.rows {
            data.extend_from_slice(&bm.data);
        }
        let mut y = Mat::from_vec(xv.rows, wm.cols, data);
        gemm(1.0, xv, false, wm, false, 1.0, &mut y);
        self.push(Op::Linear { x, w, b }, y)
    }

    pub fn project(&mut self, x: Var, params: &[Mat], w: usize) -> Var {
        let y = matmul(&self.vals[x], &params[w]);
        self.push(Op::Project { x, w }, y)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let xv = &self.vals[x];
        let sig: Vec<f64> = xv.data.iter().map(|&v| sigmoid(v)).collect();
        let y = Mat::from_vec(xv.rows, xv.cols, xv.data.iter().zip(&sig).map(|(v, s)| v * s).collect());
        self.push(Op::Silu { x, sig }, y)
    }

    pub fn layer_norm(&mut self, x: Var, params: &[Mat], g: usize, b: usize) -> Var {
        let xv = &self.vals[x];
        let (gm, bm) = (&params[g], &params[b]);
        let n = xv.cols as f64;
        let mut y = Mat::zeros(xv.rows, xv.cols);
        let mut rstd = Vec::with_capacity(xv.rows);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let s = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(s);
            for (c, o) in y.row_mut(r).iter_mut().enumerate() {
                *o = (row[c] - mean) * s * gm.data[c] + bm.data[c];
            }
        }
        self.push(Op::LayerNorm { x, g, b, rstd }, y)
    }

    pub fn concat(&mut self, xs: &[Var]) -> Var {
        let rows = self.vals[xs[0]].rows;
        let cols: usize = xs.iter().map(|&v| self.vals[v].cols).sum();
        let mut y = Mat::zeros(rows, cols);
        let mut off = 0;
        for &v in xs {
            let m = &self.vals[v];
            assert_eq!(m.rows, rows, "concat row mismatch");
            for r in 0..rows {
                y.row_mut(r)[off..off + m.cols].copy_from_slice(m.row(r));
            }
            off += m.cols;
        }
        self.push(Op::Concat(xs.to_vec()), y)
    }

    pub fn gather(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let xv = &self.vals[x];
        let mut y = Mat::zeros(idx.len(), xv.cols);
        for (r, &i) in idx.iter().enumerate() {
            y.row_mut(r).copy_from_slice(xv.row(i));
        }
        self.push(Op::Gather { x, idx }, y)
    }

    pub fn scatter(&mut self, x: Var, pairs: Vec<(usize, usize)>, rows: usize) -> Var {
        let xv = &self.vals[x];
        let mut y = Mat::zeros(rows, xv.cols);
        for &(s, d) in &pairs {
            for (o, v) in y.row_mut(d).iter_mut().zip(xv.row(s)) {
                *o += v;
            }
        }
        self.push(Op::Scatter { x, pairs }, y)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut y = self.vals[a].clone();
        y.add_assign(&self.vals[b]);
        self.push(Op::Add(a, b), y)
    }

    fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
        match &mut grads[v] {
            Some(e) => e.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    /// Propagate `seed` (gradient of a scalar with respect to `out`) to every
    /// tape value and accumulate parameter gradients into `pgrads`.
    pub fn backward(&mut self, out: Var, seed: Mat, params: &[Mat], pgrads: &mut [Mat]) {
        let mut grads: Vec<Option<Mat>> = vec![None; self.vals.len()];
        grads[out] = Some(seed);
        for v in (0..=out).rev() {
            let Some(g) = grads[v].take() else { continue };
            match &self.ops[v] {
                Op::Input => {}
                Op::Linear { x, w, b } => {
                    let xv = &self.vals[*x];
                    gemm(1.0, xv, true, &g, false, 1.0, &mut pgrads[*w]);
                    let bg = &mut pgrads[*b];
                    for r in 0..g.rows {
                        for (o, d) in bg.data.iter_mut().zip(g.row(r)) {
                            *o += d;
                        }
                    }
                    let mut gx = Mat::zeros(xv.rows, xv.cols);
                    gemm(1.0, &g, false, &params[*w], true, 0.0, &mut gx);
                    Self::acc(&mut grads, *x, gx);
                }
                Op::Project { x, w } => {
                    let xv = &self.vals[*x];
                    gemm(1.0, xv, true, &g, false, 1.0, &mut pgrads[*w]);
                    let mut gx = Mat::zeros(xv.rows, xv.cols);
                    gemm(1.0, &g, false, &params[*w], true, 0.0, &mut gx);
                    Self::acc(&mut grads, *x, gx);
                }
                Op::Silu { x, sig } => {
                    let xv = &self.vals[*x];
                    let gx = Mat::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&xv.data).zip(sig).map(|((d, &xi), &s)| d * s * (1.0 + xi * (1.0 - s))).collect(),
                    );
                    Self::acc(&mut grads, *x, gx);
                }
                Op::LayerNorm { x, g: gi, b: bi, rstd } => {
                    let xv = &self.vals[*x];
                    let gamma = &params[*gi].data;
                    let n = xv.cols as f64;
                    let mut gx = Mat::zeros(xv.rows, xv.cols);
                    for r in 0..xv.rows {
                        let row = xv.row(r);
                        let mean = row.iter().sum::<f64>() / n;
                        let s = rstd[r];
                        let dy = g.row(r);
                        let mut sum_dxh = 0.0;
                        let mut sum_dxh_xh = 0.0;
                        for c in 0..xv.cols {
                            let xh = (row[c] - mean) * s;
                            let dxh = dy[c] * gamma[c];
                            pgrads[*gi].data[c] += dy[c] * xh;
                            pgrads[*bi].data[c] += dy[c];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xh;
                        }
                        let out = gx.row_mut(r);
                        for c in 0..xv.cols {
                            let xh = (row[c] - mean) * s;
                            out[c] = s * (dy[c] * gamma[c] - sum_dxh / n - xh * sum_dxh_xh / n);
                        }
                    }
                    Self::acc(&mut grads, *x, gx);
                }
                Op::Concat(xs) => {
                    let mut off = 0;
                    for &x in xs {
                        let cols = self.vals[x].cols;
                        let mut gx = Mat::zeros(g.rows, cols);
                        for r in 0..g.rows {
                            gx.row_mut(r).copy_from_slice(&g.row(r)[off..off + cols]);
                        }
                        off += cols;
                        Self::acc(&mut grads, x, gx);
                    }
                }
                Op::Gather { x, idx } => {
                    let xv = &self.vals[*x];
                    let mut gx = Mat::zeros(xv.rows, xv.cols);
                    for (r, &i) in idx.iter().enumerate() {
                        for (o, d) in gx.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += d;
                        }
                    }
                    Self::acc(&mut grads, *x, gx);
                }
                Op::Scatter { x, pairs } => {
                    let xv = &self.vals[*x];
                    let mut gx = Mat::zeros(xv.rows, xv.cols);
                    for &(s, d) in pairs {
                        for (o, v) in gx.row_mut(s).iter_mut().zip(g.row(d)) {
                            *o += v;
                        }
                    }
                    Self::acc(&mut grads, *x, gx);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    Self::acc(&mut grads, a, g.clone());
                    Self::acc(&mut grads, b, g);
                    continue;
                }
            }
            // Inputs keep their gradient for the caller.
            if matches!(self.ops[v], Op::Input) {
                grads[v] = Some(g);
            }
        }
        self.grads = grads;
    }
}
