//! GJK distance and EPA penetration depth between convex vertex sets.
//!
//! Both operate on the Minkowski difference D = A − B. For separated shapes the
//! closest point v of D to the origin equals p_a − p_b; for overlapping shapes EPA
//! finds the boundary point of D nearest the origin (the minimal translation).

use nalgebra::{Matrix2, Matrix3, Vector2};

use super::tri::closest_point_on_triangle;
use crate::error::{Error, Result};
use crate::geom::Vec3;

const MAX_GJK_ITERS: usize = 128;
const GJK_REL_TOL: f64 = 1e-9;
const MAX_EPA_ITERS: usize = 256;
const EPA_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug)]
pub(crate) struct SupportPoint {
    pub w: Vec3,
    pub a: Vec3,
    pub b: Vec3,
}

fn support(verts: &[Vec3], d: &Vec3) -> Vec3 {
    let mut best = verts[0];
    let mut best_dot = best.dot(d);
    for v in &verts[1..] {
        let dot = v.dot(d);
        if dot > best_dot {
            best_dot = dot;
            best = *v;
        }
    }
    best
}

fn support_diff(va: &[Vec3], vb: &[Vec3], d: &Vec3) -> SupportPoint {
    let a = support(va, d);
    let b = support(vb, &-d);
    SupportPoint { w: a - b, a, b }
}

pub(crate) enum Gjk {
    Separated { dist: f64, p_a: Vec3, p_b: Vec3 },
    Overlapping(Vec<SupportPoint>),
}

/// Closest point to the origin of the hull of `pts` by enumerating every subset,
/// solving its affine least-squares problem, and keeping the best valid one.
fn closest_on_simplex(pts: &[SupportPoint]) -> (Vec<SupportPoint>, Vec<f64>, Vec3) {
    let n = pts.len();
    let mut best: Option<(u32, Vec<f64>, Vec3, f64)> = None;
    for mask in 1u32..(1 << n) {
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let Some(lambda) = affine_weights(&idx.iter().map(|&i| pts[i].w).collect::<Vec<_>>()) else {
            continue;
        };
        let point: Vec3 = idx.iter().zip(&lambda).map(|(&i, l)| pts[i].w * *l).sum();
        let nn = point.norm_squared();
        let better = match &best {
            None => true,
            Some((bm, _, _, bn)) => nn < *bn * (1.0 - 1e-12) || (nn <= *bn && mask.count_ones() < bm.count_ones()),
        };
        if better {
            best = Some((mask, lambda, point, nn));
        }
    }
    let (mask, lambda, point, _) = best.expect("singletons are always valid");
    let kept = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| pts[i]).collect();
    (kept, lambda, point)
}

/// Barycentric weights of the point of aff(ws) closest to the origin, if that
/// point lies inside conv(ws) and the subset is non-degenerate.
fn affine_weights(ws: &[Vec3]) -> Option<Vec<f64>> {
    let m = ws.len();
    if m == 1 {
        return Some(vec![1.0]);
    }
    let y: Vec<Vec3> = ws[1..].iter().map(|w| w - ws[0]).collect();
    let scale: f64 = y.iter().map(|v| v.norm_squared()).fold(0.0, f64::max);
    if scale <= 0.0 {
        return None;
    }
    let mu: Vec<f64> = match m {
        2 => vec![-y[0].dot(&ws[0]) / y[0].norm_squared()],
        3 => {
            let g = Matrix2::new(y[0].dot(&y[0]), y[0].dot(&y[1]), y[1].dot(&y[0]), y[1].dot(&y[1]));
            if g.determinant().abs() <= 1e-12 * scale * scale {
                return None;
            }
            let r = Vector2::new(-y[0].dot(&ws[0]), -y[1].dot(&ws[0]));
            let s = g.lu().solve(&r)?;
            vec![s[0], s[1]]
        }
        4 => {
            let mut g = Matrix3::zeros();
            for i in 0..3 {
                for j in 0..3 {
                    g[(i, j)] = y[i].dot(&y[j]);
                }
            }
            if g.determinant().abs() <= 1e-12 * scale * scale * scale {
                return None;
            }
            let r = Vec3::new(-y[0].dot(&ws[0]), -y[1].dot(&ws[0]), -y[2].dot(&ws[0]));
            let s = g.lu().solve(&r)?;
            vec![s[0], s[1], s[2]]
        }
        _ => return None,
    };
    let l0 = 1.0 - mu.iter().sum::<f64>();
    let mut lambda = Vec::with_capacity(m);
    lambda.push(l0);
    lambda.extend(mu);
    if lambda.iter().all(|l| *l >= 0.0 && l.is_finite()) {
        Some(lambda)
    } else {
        None
    }
}

pub(crate) fn gjk(va: &[Vec3], vb: &[Vec3]) -> Result<Gjk> {
    let ca: Vec3 = va.iter().sum::<Vec3>() / va.len() as f64;
    let cb: Vec3 = vb.iter().sum::<Vec3>() / vb.len() as f64;
    let scale = va.iter().chain(vb).map(|v| v.norm()).fold(1e-300, f64::max);
    let mut dir = ca - cb;
    if dir.norm() < 1e-12 * scale {
        dir = Vec3::x();
    }
    let first = support_diff(va, vb, &-dir);
    let mut simplex = vec![first];
    let mut lambda = vec![1.0];
    let mut v = first.w;
    let touch_tol = (1e-13 * scale).powi(2);
    for _ in 0..MAX_GJK_ITERS {
        let vv = v.norm_squared();
        if vv <= touch_tol {
            return Ok(Gjk::Overlapping(simplex));
        }
        let w = support_diff(va, vb, &-v);
        if vv - v.dot(&w.w) <= GJK_REL_TOL * vv || simplex.iter().any(|s| s.w == w.w) {
            return Ok(separated(&simplex, &lambda));
        }
        let mut candidate = simplex.clone();
        candidate.push(w);
        let (kept, l, point) = closest_on_simplex(&candidate);
        if kept.len() == 4 {
            return Ok(Gjk::Overlapping(kept));
        }
        if point.norm_squared() >= vv {
            return Ok(separated(&simplex, &lambda));
        }
        simplex = kept;
        lambda = l;
        v = point;
    }
    Err(Error::NumericalFailure("GJK did not converge within 128 iterations".into()))
}

fn separated(simplex: &[SupportPoint], lambda: &[f64]) -> Gjk {
    let p_a: Vec3 = simplex.iter().zip(lambda).map(|(s, l)| s.a * *l).sum();
    let p_b: Vec3 = simplex.iter().zip(lambda).map(|(s, l)| s.b * *l).sum();
    Gjk::Separated { dist: (p_a - p_b).norm(), p_a, p_b }
}

struct Face {
    idx: [usize; 3],
    n: Vec3,
    d: f64,
}

fn make_face(pts: &[SupportPoint], idx: [usize; 3], interior: &Vec3) -> Option<Face> {
    let [a, b, c] = idx.map(|i| pts[i].w);
    let mut n = (b - a).cross(&(c - a));
    let len = n.norm();
    if len <= 1e-300 {
        return None;
    }
    n /= len;
    let mut idx = idx;
    if n.dot(&(a - interior)) < 0.0 {
        n = -n;
        idx.swap(1, 2);
    }
    Some(Face { idx, n, d: n.dot(&a) })
}

/// Grow a (possibly lower-dimensional) simplex containing the origin into a
/// non-degenerate tetrahedron of support points.
fn complete_tetrahedron(va: &[Vec3], vb: &[Vec3], mut pts: Vec<SupportPoint>) -> Result<Vec<SupportPoint>> {
    let axes = [Vec3::x(), Vec3::y(), Vec3::z(), -Vec3::x(), -Vec3::y(), -Vec3::z()];
    if pts.len() == 1 {
        let best = axes
            .iter()
            .map(|d| support_diff(va, vb, d))
            .max_by(|p, q| (p.w - pts[0].w).norm().total_cmp(&(q.w - pts[0].w).norm()))
            .unwrap();
        pts.push(best);
    }
    if pts.len() == 2 {
        let d = (pts[1].w - pts[0].w).normalize();
        let helper = axes[..3].iter().min_by(|a, b| a.dot(&d).abs().total_cmp(&b.dot(&d).abs())).unwrap();
        let e1 = d.cross(helper).normalize();
        let e2 = d.cross(&e1);
        let best = (0..6)
            .map(|k| {
                let ang = k as f64 * std::f64::consts::PI / 3.0;
                support_diff(va, vb, &(e1 * ang.cos() + e2 * ang.sin()))
            })
            .max_by(|p, q| {
                let dp = (p.w - pts[0].w).cross(&d).norm();
                let dq = (q.w - pts[0].w).cross(&d).norm();
                dp.total_cmp(&dq)
            })
            .unwrap();
        pts.push(best);
    }
    if pts.len() == 3 {
        let n = (pts[1].w - pts[0].w).cross(&(pts[2].w - pts[0].w));
        if n.norm() <= 1e-300 {
            return Err(Error::NumericalFailure("EPA: degenerate initial triangle".into()));
        }
        let up = support_diff(va, vb, &n);
        let down = support_diff(va, vb, &-n);
        let hu = (up.w - pts[0].w).dot(&n).abs();
        let hd = (down.w - pts[0].w).dot(&n).abs();
        pts.push(if hu >= hd { up } else { down });
    }
    let vol = (pts[1].w - pts[0].w).cross(&(pts[2].w - pts[0].w)).dot(&(pts[3].w - pts[0].w));
    if vol.abs() <= 1e-300 {
        return Err(Error::NumericalFailure("EPA: degenerate initial tetrahedron".into()));
    }
    Ok(pts)
}

/// Penetration depth, witness points on A and B, and unit normal from A to B.
pub(crate) fn epa(va: &[Vec3], vb: &[Vec3], simplex: Vec<SupportPoint>) -> Result<(f64, Vec3, Vec3, Vec3)> {
    let mut pts = complete_tetrahedron(va, vb, simplex)?;
    let interior: Vec3 = pts.iter().map(|p| p.w).sum::<Vec3>() / 4.0;
    let mut faces: Vec<Face> = [[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]]
        .into_iter()
        .filter_map(|f| make_face(&pts, f, &interior))
        .collect();
    if faces.len() != 4 {
        return Err(Error::NumericalFailure("EPA: degenerate initial faces".into()));
    }
    for _ in 0..MAX_EPA_ITERS {
        let (fi, face) = faces
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.d.total_cmp(&b.1.d))
            .expect("polytope has faces");
        let sp = support_diff(va, vb, &face.n);
        let gain = face.n.dot(&sp.w) - face.d;
        if gain <= EPA_TOL * face.d.abs().max(1e-3) || pts.iter().any(|p| p.w == sp.w) {
            return Ok(epa_witness(&pts, &faces[fi]));
        }
        pts.push(sp);
        let new = pts.len() - 1;
        let mut horizon: Vec<(usize, usize)> = Vec::new();
        let mut kept = Vec::with_capacity(faces.len());
        for f in faces.drain(..) {
            if f.n.dot(&(sp.w - pts[f.idx[0]].w)) > 1e-14 * sp.w.norm().max(1e-300) {
                for k in 0..3 {
                    let e = (f.idx[k], f.idx[(k + 1) % 3]);
                    if let Some(pos) = horizon.iter().position(|&(a, b)| a == e.1 && b == e.0) {
                        horizon.swap_remove(pos);
                    } else {
                        horizon.push(e);
                    }
                }
            } else {
                kept.push(f);
            }
        }
        faces = kept;
        for (a, b) in horizon {
            if let Some(f) = make_face(&pts, [a, b, new], &interior) {
                faces.push(f);
            }
        }
        if faces.is_empty() {
            return Err(Error::NumericalFailure("EPA: polytope collapsed".into()));
        }
    }
    Err(Error::NumericalFailure("EPA did not converge".into()))
}

fn epa_witness(pts: &[SupportPoint], face: &Face) -> (f64, Vec3, Vec3, Vec3) {
    let tri = face.idx.map(|i| pts[i].w);
    let (_, bary) = closest_point_on_triangle(&Vec3::zeros(), &tri);
    let p_a: Vec3 = (0..3).map(|k| pts[face.idx[k]].a * bary[k]).sum();
    let p_b: Vec3 = (0..3).map(|k| pts[face.idx[k]].b * bary[k]).sum();
    (face.d.max(0.0), p_a, p_b, face.n)
}

/// Separating-axis estimate of penetration depth and normal (A to B) for two
/// overlapping convex meshes; used only when EPA fails.
pub(crate) fn sat_penetration(va: &[Vec3], fa: &[[usize; 3]], vb: &[Vec3], fb: &[[usize; 3]]) -> Option<(f64, Vec3)> {
    let mut axes: Vec<Vec3> = Vec::new();
    let mut edges_a = Vec::new();
    let mut edges_b = Vec::new();
    for (verts, faces, edges) in [(va, fa, &mut edges_a), (vb, fb, &mut edges_b)] {
        for f in faces {
            let [a, b, c] = f.map(|i| verts[i]);
            axes.push((b - a).cross(&(c - a)));
            for k in 0..3 {
                edges.push(verts[f[(k + 1) % 3]] - verts[f[k]]);
            }
        }
    }
    for ea in &edges_a {
        for eb in &edges_b {
            axes.push(ea.cross(eb));
        }
    }
    let mut best: Option<(f64, Vec3)> = None;
    for axis in axes {
        let len = axis.norm();
        if len <= 1e-12 {
            continue;
        }
        let n = axis / len;
        let (amin, amax) = extent(va, &n);
        let (bmin, bmax) = extent(vb, &n);
        for (depth, dir) in [(amax - bmin, n), (bmax - amin, -n)] {
            if depth < 0.0 {
                return None;
            }
            if best.map_or(true, |(d, _)| depth < d) {
                best = Some((depth, dir));
            }
        }
    }
    best
}

fn extent(verts: &[Vec3], n: &Vec3) -> (f64, f64) {
    verts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        let d = v.dot(n);
        (lo.min(d), hi.max(d))
    })
}
