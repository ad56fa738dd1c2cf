//! Exact point/segment/triangle distance primitives.

use crate::geom::Vec3;

pub type Tri = [Vec3; 3];

/// Closest point on triangle `t` to `p`, with its barycentric coordinates.
pub fn closest_point_on_triangle(p: &Vec3, t: &Tri) -> (Vec3, [f64; 3]) {
    let [a, b, c] = *t;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

/// Closest points between segments `p1q1` and `p2q2`.
pub fn closest_segment_segment(p1: &Vec3, q1: &Vec3, p2: &Vec3, q2: &Vec3) -> (Vec3, Vec3) {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let (s, t);
    if a <= 1e-300 && e <= 1e-300 {
        return (*p1, *p2);
    }
    if a <= 1e-300 {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= 1e-300 {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > 1e-14 * a * e { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    (p1 + d1 * s, p2 + d2 * t)
}

/// Intersection point of segment `pq` with triangle `t`, if any.
pub fn segment_triangle_intersection(p: &Vec3, q: &Vec3, t: &Tri) -> Option<Vec3> {
    let [a, b, c] = *t;
    let dir = q - p;
    let e1 = b - a;
    let e2 = c - a;
    let h = dir.cross(&e2);
    let det = e1.dot(&h);
    let scale = e1.norm() * e2.norm() * dir.norm();
    if det.abs() <= 1e-14 * scale {
        return None; // parallel; coplanar overlap is caught by edge-edge tests
    }
    let inv = 1.0 / det;
    let s = p - a;
    let u = inv * s.dot(&h);
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qv = s.cross(&e1);
    let v = inv * dir.dot(&qv);
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let tt = inv * e2.dot(&qv);
    if !(0.0..=1.0).contains(&tt) {
        return None;
    }
    Some(p + dir * tt)
}

/// Whether two triangles intersect (share at least one point).
pub fn triangles_intersect(ta: &Tri, tb: &Tri) -> Option<Vec3> {
    for k in 0..3 {
        if let Some(x) = segment_triangle_intersection(&ta[k], &ta[(k + 1) % 3], tb) {
            return Some(x);
        }
        if let Some(x) = segment_triangle_intersection(&tb[k], &tb[(k + 1) % 3], ta) {
            return Some(x);
        }
    }
    None
}

/// Minimum over the 6 vertex-triangle and 9 edge-edge subproblems: distance and
/// the witness points on `ta` and `tb`. Exact for non-intersecting triangles.
pub fn triangle_distance_cases(ta: &Tri, tb: &Tri) -> (f64, Vec3, Vec3) {
    let mut best = (f64::INFINITY, ta[0], tb[0]);
    let mut consider = |pa: Vec3, pb: Vec3| {
        let d = (pa - pb).norm();
        if d < best.0 {
            best = (d, pa, pb);
        }
    };
    for v in ta {
        let (c, _) = closest_point_on_triangle(v, tb);
        consider(*v, c);
    }
    for v in tb {
        let (c, _) = closest_point_on_triangle(v, ta);
        consider(c, *v);
    }
    for i in 0..3 {
        for j in 0..3 {
            let (ca, cb) = closest_segment_segment(&ta[i], &ta[(i + 1) % 3], &tb[j], &tb[(j + 1) % 3]);
            consider(ca, cb);
        }
    }
    best
}

/// Distance between two triangles with witness points; zero (and a shared point)
/// when they intersect.
pub fn triangle_distance(ta: &Tri, tb: &Tri) -> (f64, Vec3, Vec3) {
    if let Some(x) = triangles_intersect(ta, tb) {
        return (0.0, x, x);
    }
    triangle_distance_cases(ta, tb)
}
