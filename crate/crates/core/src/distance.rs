//! Score-space hyperplane and the distance regularizer.
//!
//! Each validation sample becomes a point `(ŷ, ŷ_k)`: the raw score of its
//! label and the summed raw scores of the other labels among the top `k`.
//! A logistic fit with the `ŷ` coefficient pinned to 1 separates correctly
//! from incorrectly classified points along `ŷ + ω·ŷ_k + β = 0`. Training then
//! rewards points on the positive side and penalizes the rest by their
//! distance to that line.

use crate::data::LabeledImage;
use crate::error::{Error, Result};
use crate::masking::MaskBank;
use crate::model::Vit;
use crate::tensor::{Real, Tape, Var};

/// Per-sample floor on the regularizer.
pub const LOSS_FLOOR: f64 = -2.0;

pub const FIT_LR: f64 = 0.1;
pub const FIT_MAX_ITERS: usize = 500;
pub const FIT_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScorePoint {
    pub y_hat: f64,
    pub y_hat_k: f64,
    /// 1 when the target label attains the maximum score.
    pub z: u8,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyperplane {
    pub omega: f64,
    pub beta: f64,
    pub fitted: bool,
}

impl Default for Hyperplane {
    fn default() -> Self {
        Self::unfitted()
    }
}

impl Hyperplane {
    pub fn unfitted() -> Self {
        Self {
            omega: -1.0,
            beta: 0.0,
            fitted: false,
        }
    }

    pub fn new(omega: f64, beta: f64) -> Self {
        Self {
            omega,
            beta,
            fitted: true,
        }
    }

    pub fn signed_value(&self, y_hat: f64, y_hat_k: f64) -> f64 {
        y_hat + self.omega * y_hat_k + self.beta
    }

    fn require_fitted(&self) -> Result<()> {
        if !self.fitted {
            return Err(Error::contract("hyperplane has not been fitted"));
        }
        Ok(())
    }
}

/// Labels in the top `k` by score (ties to the lower index), minus the target.
pub fn top_k_others<T: Real>(scores: &[T], target: usize, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.into_iter().take(k).filter(|&i| i != target).collect()
}

pub fn score_point<T: Real>(scores: &[T], target: usize, k: usize) -> ScorePoint {
    let y_hat = scores[target].as_f64();
    let y_hat_k = top_k_others(scores, target, k)
        .into_iter()
        .map(|i| scores[i].as_f64())
        .sum();
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    ScorePoint {
        y_hat,
        y_hat_k,
        z: u8::from(scores[target] == max),
    }
}

pub fn check_k(k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::config(format!("top-k size must be at least 2, got {k}")));
    }
    Ok(())
}

/// Score points for a validation set under the weighted masks.
pub fn collect_points<T: Real>(
    model: &Vit<T>,
    bank: &MaskBank<T>,
    val: &[LabeledImage],
    k: usize,
) -> Result<Vec<ScorePoint>> {
    check_k(k)?;
    if val.is_empty() {
        return Err(Error::contract("validation set is empty"));
    }
    use rayon::prelude::*;
    val.par_iter()
        .map(|s| {
            let scores = model.forward(&s.image, bank)?;
            Ok(score_point(&scores, usize::from(s.y), k))
        })
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic fit of `σ(ŷ + ω·ŷ_k + β)` against `z` by full-batch gradient
/// descent. Single-class inputs return `previous` unchanged.
pub fn fit_hyperplane(points: &[ScorePoint], previous: &Hyperplane) -> Hyperplane {
    let positives = points.iter().filter(|p| p.z == 1).count();
    if positives == 0 || positives == points.len() {
        return *previous;
    }
    let n = points.len() as f64;
    let (mut omega, mut beta) = (-1.0, 0.0);
    for _ in 0..FIT_MAX_ITERS {
        let (mut g_omega, mut g_beta) = (0.0, 0.0);
        for p in points {
            let r = sigmoid(p.y_hat + omega * p.y_hat_k + beta) - p.z as f64;
            g_omega += r * p.y_hat_k;
            g_beta += r;
        }
        g_omega /= n;
        g_beta /= n;
        if g_omega.hypot(g_beta) < FIT_TOL {
            break;
        }
        omega -= FIT_LR * g_omega;
        beta -= FIT_LR * g_beta;
    }
    if !(omega.is_finite() && beta.is_finite()) {
        return *previous;
    }
    Hyperplane::new(omega, beta)
}

/// Distance from `(ŷ, ŷ_k)` to the hyperplane.
pub fn distance(y_hat: f64, y_hat_k: f64, plane: &Hyperplane) -> Result<f64> {
    plane.require_fitted()?;
    Ok(plane.signed_value(y_hat, y_hat_k).abs() / (1.0 + plane.omega * plane.omega).sqrt())
}

pub fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma >= 0.0) {
        return Err(Error::config(format!("gamma must be non-negative, got {gamma}")));
    }
    Ok(())
}

/// Value and derivative w.r.t. the signed value `ŷ + ω·ŷ_k + β`.
/// The derivative is 0 on the boundary and on the floor.
fn loss_of_signed(v: f64, omega: f64, gamma: f64) -> (f64, f64) {
    let norm = (1.0 + omega * omega).sqrt();
    if v >= 0.0 {
        let raw = -gamma * v / norm;
        if raw <= LOSS_FLOOR {
            (LOSS_FLOOR, 0.0)
        } else if v == 0.0 {
            (raw, 0.0)
        } else {
            (raw, -gamma / norm)
        }
    } else {
        (-v / norm, -1.0 / norm)
    }
}

/// `-γ·Φ` on the positive side, `Φ` otherwise, floored at −2.
pub fn distance_loss(y_hat: f64, y_hat_k: f64, plane: &Hyperplane, gamma: f64) -> Result<f64> {
    plane.require_fitted()?;
    check_gamma(gamma)?;
    Ok(loss_of_signed(plane.signed_value(y_hat, y_hat_k), plane.omega, gamma).0)
}

/// `L_ce + α·L_dist`; without a distance term the loss is cross-entropy alone.
pub fn total_loss(l_ce: f64, mean_l_dist: Option<f64>, alpha: f64) -> f64 {
    match mean_l_dist {
        Some(d) => l_ce + alpha * d,
        None => l_ce,
    }
}

/// Records the regularizer for one score vector. The hyperplane is a constant.
pub fn distance_loss_on_tape<T: Real>(
    tape: &mut Tape<T>,
    scores: Var,
    target: usize,
    k: usize,
    plane: &Hyperplane,
    gamma: f64,
) -> Result<Var> {
    plane.require_fitted()?;
    check_gamma(gamma)?;
    check_k(k)?;
    let others = top_k_others(tape.value(scores).data(), target, k);
    let y_hat = tape.gather(scores, &[target])?;
    let y_hat = tape.sum(y_hat);
    let signed = if others.is_empty() {
        y_hat
    } else {
        let y_hat_k = tape.gather(scores, &others)?;
        let y_hat_k = tape.sum(y_hat_k);
        let y_hat_k = tape.scale(y_hat_k, T::of(plane.omega));
        tape.add(y_hat, y_hat_k)?
    };
    let signed = tape.add_scalar(signed, T::of(plane.beta));
    let (omega, gamma) = (plane.omega, gamma);
    Ok(tape.unary(signed, |v| {
        let (l, d) = loss_of_signed(v.as_f64(), omega, gamma);
        (T::of(l), T::of(d))
    }))
}
