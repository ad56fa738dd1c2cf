//! Least-squares rigid fit of a reference point set onto predicted points and
//! its reverse-mode adjoint.

use nalgebra::SymmetricEigen;

use crate::error::{invalid, Result};
use crate::geom::{skew, Mat3, Vec3};

/// Relative tolerance below which the polar-differential system is treated as singular.
const DEGENERATE_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct ShapeMatch {
    pub r: Mat3,
    pub t: Vec3,
    pub projected: Vec<Vec3>,
    c0: Vec3,
    /// Pseudo-inverse of `tr(S) I − S` with `S = Rᵀ A`.
    k_pinv: Mat3,
}

fn centroid(p: &[Vec3]) -> Vec3 {
    p.iter().sum::<Vec3>() / p.len() as f64
}

fn vee_antisym(x: &Mat3) -> Vec3 {
    Vec3::new(x[(2, 1)] - x[(1, 2)], x[(0, 2)] - x[(2, 0)], x[(1, 0)] - x[(0, 1)])
}

/// Rotation `R` and translation `t` minimizing `Σ‖pred_i − (R ref_i + t)‖²`,
/// with the projected points `R ref_i + t`.
pub fn shape_match(pred: &[Vec3], reference: &[Vec3]) -> Result<ShapeMatch> {
    if pred.len() != reference.len() || pred.len() < 3 {
        return invalid(format!("shape match needs matching point sets of at least 3, got {} and {}", pred.len(), reference.len()));
    }
    if pred.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
        return invalid("shape match input is not finite");
    }
    let c = centroid(pred);
    let c0 = centroid(reference);
    let mut a = Mat3::zeros();
    for (p, r) in pred.iter().zip(reference) {
        a += (p - c) * (r - c0).transpose();
    }
    let svd = a.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else { return invalid("shape match SVD failed") };
    let mut sv = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    if !(sv[order[0]] > 0.0) || sv[order[1]] <= 1e-12 * sv[order[0]] {
        return invalid("shape match is degenerate: fewer than two independent directions");
    }
    let mut u = u;
    if (u * v_t).determinant() < 0.0 {
        // Flip the direction of the smallest singular value.
        let k = order[2];
        u.column_mut(k).neg_mut();
        sv[k] = -sv[k];
    }
    let r = u * v_t;
    let t = c - r * c0;
    let projected = reference.iter().map(|p| r * p + t).collect();
    let s = r.transpose() * a;
    let s = (s + s.transpose()) * 0.5;
    let k = Mat3::identity() * s.trace() - s;
    let eig = SymmetricEigen::new(k);
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut k_pinv = Mat3::zeros();
    for i in 0..3 {
        let l = eig.eigenvalues[i];
        if l.abs() > DEGENERATE_TOL * scale {
            let q = eig.eigenvectors.column(i);
            k_pinv += q * q.transpose() / l;
        }
    }
    Ok(ShapeMatch { r, t, projected, c0, k_pinv })
}

/// Gradient with respect to `pred` given gradients with respect to the
/// projected points, `R` (as a 3x3 matrix) and `t`.
pub fn shape_match_adjoint(sm: &ShapeMatch, reference: &[Vec3], g_proj: &[Vec3], g_r: &Mat3, g_t: &Vec3) -> Vec<Vec3> {
    let mut g_r = *g_r;
    let mut g_t = *g_t;
    for (g, p) in g_proj.iter().zip(reference) {
        g_r += g * p.transpose();
        g_t += g;
    }
    // t = c − R c0
    g_r -= g_t * sm.c0.transpose();
    let g_c = g_t;
    // dR = R Ω, Ω = skew(K⁻¹ vee(Rᵀ dA − dAᵀ R))
    let g_w = vee_antisym(&(sm.r.transpose() * g_r));
    let h = sm.k_pinv * g_w;
    let g_a = sm.r * skew(&h);
    let n = reference.len() as f64;
    reference.iter().map(|p| g_a * (p - sm.c0) + g_c / n).collect()
}
