//! Covariance matrix adaptation evolution strategy over a box, with the box
//! mapped to unbounded coordinates through a per-axis logistic.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, Result};

/// Loss assigned to candidates whose objective is not finite.
pub const PENALTY: f64 = 1e12;

/// Per-coordinate search box.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = ParamBounds { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.is_empty() || self.lower.len() != self.upper.len() {
            return invalid("bounds need matching, nonempty lower and upper vectors");
        }
        for (i, (l, u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return invalid(format!("bound {i}: need finite lower < upper, got [{l}, {u}]"));
            }
        }
        Ok(())
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    /// Map unbounded coordinates into the box.
    pub fn from_unbounded(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(y, (l, u))| l + (u - l) / (1.0 + (-y).exp()))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CmaesResult {
    pub best: Vec<f64>,
    pub best_loss: f64,
    /// Best-ever loss after each generation.
    pub history: Vec<f64>,
    /// Objective evaluations spent by the generations (the initial center
    /// evaluation is not counted).
    pub evaluations: usize,
    /// Loss at the box center.
    pub center_loss: f64,
}

pub fn population_size(n: usize) -> usize {
    4 + (3.0 * (n as f64).ln()).floor() as usize
}

fn eval(objective: &(dyn Fn(&[f64]) -> f64 + Sync), x: &[f64]) -> f64 {
    let f = objective(x);
    if f.is_finite() {
        f
    } else {
        PENALTY
    }
}

/// Minimize `objective` over `bounds` starting from the box center with unit
/// step size in the unbounded coordinates. Spends at most `budget` evaluations
/// on whole generations after one evaluation at the box center, which is the
/// incumbent and wins ties.
pub fn cmaes_minimize(
    objective: &(dyn Fn(&[f64]) -> f64 + Sync),
    bounds: &ParamBounds,
    budget: usize,
    seed: u64,
) -> Result<CmaesResult> {
    bounds.validate()?;
    let n = bounds.dim();
    let lambda = population_size(n);
    if budget < lambda {
        return invalid(format!("budget {budget} is smaller than the population size {lambda}"));
    }
    let mu = lambda / 2;
    let raw: Vec<f64> = (0..mu).map(|i| (mu as f64 + 0.5).ln() - ((i + 1) as f64).ln()).collect();
    let wsum: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / wsum).collect();
    let mueff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    let nf = n as f64;
    let cc = (4.0 + mueff / nf) / (nf + 4.0 + 2.0 * mueff / nf);
    let cs = (mueff + 2.0) / (nf + mueff + 5.0);
    let c1 = 2.0 / ((nf + 1.3).powi(2) + mueff);
    let cmu = (1.0 - c1).min(2.0 * (mueff - 2.0 + 1.0 / mueff) / ((nf + 2.0).powi(2) + mueff));
    let damps = 1.0 + 2.0 * (((mueff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + cs;
    let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mean = DVector::<f64>::zeros(n);
    let mut sigma = 1.0;
    let mut c = DMatrix::<f64>::identity(n, n);
    let mut pc = DVector::<f64>::zeros(n);
    let mut ps = DVector::<f64>::zeros(n);

    let center = bounds.center();
    let center_loss = eval(objective, &center);
    let (mut best, mut best_loss) = (center, center_loss);
    let mut history = Vec::new();
    let mut evaluations = 0;
    let mut gen = 0;
    while evaluations + lambda <= budget {
        let eig = SymmetricEigen::new(c.clone());
        let d = eig.eigenvalues.map(|e| e.max(1e-300).sqrt());
        let b = eig.eigenvectors;
        let samples: Vec<DVector<f64>> = (0..lambda)
            .map(|_| {
                let z = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
                &b * z.component_mul(&d)
            })
            .collect();
        let cands: Vec<Vec<f64>> = samples.iter().map(|y| bounds.from_unbounded((&mean + y * sigma).as_slice())).collect();
        let losses: Vec<f64> = cands.par_iter().map(|x| eval(objective, x)).collect();
        evaluations += lambda;
        gen += 1;
        let mut order: Vec<usize> = (0..lambda).collect();
        order.sort_by(|&i, &j| losses[i].total_cmp(&losses[j]).then(i.cmp(&j)));
        if losses[order[0]] < best_loss {
            best_loss = losses[order[0]];
            best = cands[order[0]].clone();
        }
        history.push(best_loss);

        let step: DVector<f64> = order[..mu].iter().zip(&weights).map(|(&i, w)| &samples[i] * *w).sum();
        mean += &step * sigma;
        // C^{-1/2} step.
        let inv_sqrt = &b * DMatrix::from_diagonal(&d.map(|x| 1.0 / x)) * b.transpose();
        ps = &ps * (1.0 - cs) + &inv_sqrt * &step * (cs * (2.0 - cs) * mueff).sqrt();
        let ps_norm = ps.norm() / (1.0 - (1.0 - cs).powi(2 * gen as i32)).sqrt();
        let hsig = ps_norm / chi_n < 1.4 + 2.0 / (nf + 1.0);
        let hs = if hsig { 1.0 } else { 0.0 };
        pc = &pc * (1.0 - cc) + &step * (hs * (cc * (2.0 - cc) * mueff).sqrt());
        let mut rank_mu = DMatrix::<f64>::zeros(n, n);
        for (&i, w) in order[..mu].iter().zip(&weights) {
            rank_mu += &samples[i] * samples[i].transpose() * *w;
        }
        c = &c * (1.0 - c1 - cmu) + (&pc * pc.transpose() + &c * ((1.0 - hs) * cc * (2.0 - cc))) * c1 + rank_mu * cmu;
        c = (&c + c.transpose()) * 0.5;
        sigma *= ((cs / damps) * (ps.norm() / chi_n - 1.0)).exp();
        sigma = sigma.clamp(1e-12, 1e6);
    }
    Ok(CmaesResult { best, best_loss, history, evaluations, center_loss })
}
