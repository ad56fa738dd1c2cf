//! Penetration patches between two facing triangles.
//!
//! Inside an overlapping body pair with contact normal n (A to B), each triangle of
//! A facing B and each triangle of B facing A are projected onto the plane
//! orthogonal to n. Over their common footprint, the depth δ(u) = h_a(u) − h_b(u)
//! (height of A's surface minus height of B's surface along n) is affine. The patch
//! is the footprint part with δ > 0; its depth-weighted centroid gives one witness
//! pair per triangle pair.

use nalgebra::Vector2;

use super::tri::Tri;
use crate::geom::Vec3;

type P2 = Vector2<f64>;

/// Minimum |cos| between a triangle normal and the contact normal for the
/// triangle to count as facing the other body.
pub(crate) const FACING_COS: f64 = 0.2;

#[derive(Clone, Copy, Debug)]
pub(crate) struct Patch {
    pub p_a: Vec3,
    pub p_b: Vec3,
    /// Depth at the depth-weighted centroid (positive).
    pub depth: f64,
    pub area: f64,
}

fn tri_normal(t: &Tri) -> Vec3 {
    (t[1] - t[0]).cross(&(t[2] - t[0])).normalize()
}

pub(crate) fn plane_basis(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.6 { Vec3::x() } else if n.y.abs() < 0.6 { Vec3::y() } else { Vec3::z() };
    let e1 = n.cross(&helper).normalize();
    let e2 = n.cross(&e1);
    (e1, e2)
}

/// Clip a convex polygon against the half-plane `f(p) >= 0` for affine `f`
/// sampled at the vertices.
fn clip(poly: &[P2], vals: &[f64]) -> Vec<P2> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let j = (i + 1) % poly.len();
        let (pi, pj) = (poly[i], poly[j]);
        let (fi, fj) = (vals[i], vals[j]);
        if fi >= 0.0 {
            out.push(pi);
        }
        if (fi >= 0.0) != (fj >= 0.0) {
            let t = fi / (fi - fj);
            out.push(pi + (pj - pi) * t);
        }
    }
    out
}

fn cross2(a: &P2, b: &P2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Patch for triangle `ta` of A and `tb` of B under contact normal `n`, if they
/// face each other and overlap with positive depth somewhere.
pub(crate) fn patch(ta: &Tri, tb: &Tri, n: &Vec3) -> Option<Patch> {
    let na = tri_normal(ta);
    let nb = tri_normal(tb);
    let (ca, cb) = (na.dot(n), nb.dot(n));
    if ca < FACING_COS || cb > -FACING_COS {
        return None;
    }
    let (e1, e2) = plane_basis(n);
    let to2 = |p: &Vec3| P2::new(p.dot(&e1), p.dot(&e2));
    // Height along n of the plane through `t` with normal `nt` above 2D point `u`.
    let height = |t: &Tri, nt: &Vec3, cn: f64, u: &P2| (nt.dot(&t[0]) - nt.dot(&(e1 * u.x + e2 * u.y))) / cn;

    let mut poly: Vec<P2> = ta.iter().map(to2).collect();
    if cross2(&(poly[1] - poly[0]), &(poly[2] - poly[0])) < 0.0 {
        poly.reverse();
    }
    let mut bq: Vec<P2> = tb.iter().map(to2).collect();
    if cross2(&(bq[1] - bq[0]), &(bq[2] - bq[0])) < 0.0 {
        bq.reverse();
    }
    for k in 0..3 {
        let (s, e) = (bq[k], bq[(k + 1) % 3]);
        let vals: Vec<f64> = poly.iter().map(|p| cross2(&(e - s), &(p - s))).collect();
        poly = clip(&poly, &vals);
        if poly.len() < 3 {
            return None;
        }
    }
    let depth_at = |u: &P2| height(ta, &na, ca, u) - height(tb, &nb, cb, u);
    let vals: Vec<f64> = poly.iter().map(depth_at).collect();
    let poly = clip(&poly, &vals);
    if poly.len() < 3 {
        return None;
    }
    let depths: Vec<f64> = poly.iter().map(|u| depth_at(u).max(0.0)).collect();
    let (mut area, mut vol) = (0.0, 0.0);
    let (mut moment, mut centroid) = (P2::zeros(), P2::zeros());
    for k in 1..poly.len() - 1 {
        let (u0, u1, u2) = (poly[0], poly[k], poly[k + 1]);
        let a = 0.5 * cross2(&(u1 - u0), &(u2 - u0));
        let (d0, d1, d2) = (depths[0], depths[k], depths[k + 1]);
        area += a;
        centroid += (u0 + u1 + u2) * (a / 3.0);
        vol += a * (d0 + d1 + d2) / 3.0;
        moment += (u0 * d0 + u1 * d1 + u2 * d2 + (u0 + u1 + u2) * (d0 + d1 + d2)) * (a / 12.0);
    }
    if !(area > 0.0) {
        return None;
    }
    let scale = poly.iter().map(|u| u.norm()).fold(0.0, f64::max).max(1e-300);
    if area <= 1e-24 * scale * scale {
        return None;
    }
    let u = if vol > 1e-300 { moment / vol } else { centroid / area };
    let base = e1 * u.x + e2 * u.y;
    let p_a = base + n * height(ta, &na, ca, &u);
    let p_b = base + n * height(tb, &nb, cb, &u);
    let depth = (p_a - p_b).dot(n);
    if !(depth > 0.0) {
        return None;
    }
    Some(Patch { p_a, p_b: p_a - n * depth, depth, area })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    #[test]
    fn flat_overlap_centroid_and_depth() {
        // A's top-facing triangle at z = 0.01 over B's bottom-facing triangle at z = 0.
        let ta = [v(0.0, 0.0, 0.01), v(1.0, 0.0, 0.01), v(0.0, 1.0, 0.01)];
        let tb = [v(0.0, 0.0, 0.0), v(0.0, 1.0, 0.0), v(1.0, 0.0, 0.0)];
        let p = patch(&ta, &tb, &Vec3::z()).unwrap();
        assert!((p.depth - 0.01).abs() < 1e-15);
        assert!((p.area - 0.5).abs() < 1e-12);
        assert!((p.p_a - v(1.0 / 3.0, 1.0 / 3.0, 0.01)).norm() < 1e-12);
        assert!((p.p_b - v(1.0 / 3.0, 1.0 / 3.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn tilted_patch_shifts_toward_deep_side() {
        // Depth grows with x; the clip keeps x > 0.25.
        let ta = [v(0.0, -1.0, -0.01), v(1.0, -1.0, 0.03), v(0.0, 1.0, -0.01)];
        let tb = [v(-1.0, -1.0, 0.0), v(-1.0, 2.0, 0.0), v(2.0, -1.0, 0.0)];
        let p = patch(&ta, &tb, &Vec3::z()).unwrap();
        assert!(p.p_a.x > 0.25);
        assert!((p.p_a - p.p_b - Vec3::z() * p.depth).norm() < 1e-15);
    }

    #[test]
    fn separated_or_backfacing_gives_none() {
        let ta = [v(0.0, 0.0, -0.01), v(1.0, 0.0, -0.01), v(0.0, 1.0, -0.01)];
        let tb = [v(0.0, 0.0, 0.0), v(0.0, 1.0, 0.0), v(1.0, 0.0, 0.0)];
        assert!(patch(&ta, &tb, &Vec3::z()).is_none());
        let tb_up = [v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(0.0, 1.0, 0.0)];
        let ta_up = [v(0.0, 0.0, 0.01), v(1.0, 0.0, 0.01), v(0.0, 1.0, 0.01)];
        assert!(patch(&ta_up, &tb_up, &Vec3::z()).is_none());
    }
}
