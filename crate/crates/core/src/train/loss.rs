//! Recommendation losses and their gradients with respect to probabilities.

use serde::{Deserialize, Serialize};

use crate::ehr::DdiMatrix;
use crate::error::{Error, Result};

/// Clamp applied before taking logarithms.
pub const BCE_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Mix between BCE and multi-label margin.
    pub beta: f64,
    /// Accepted DDI rate `gamma`.
    pub gamma: f64,
    /// Correction factor `kp`.
    pub kp: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            beta: 0.95,
            gamma: 0.06,
            kp: 0.05,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) || !(0.0..=1.0).contains(&self.gamma) || self.kp <= 0.0
        {
            return Err(Error::Config(format!(
                "loss config needs beta, gamma in [0, 1] and kp > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

pub fn loss_bce(truth: &[bool], pred: &[f64]) -> f64 {
    truth
        .iter()
        .zip(pred)
        .map(|(&y, &p)| {
            let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum()
}

pub fn grad_bce(truth: &[bool], pred: &[f64]) -> Vec<f64> {
    truth
        .iter()
        .zip(pred)
        .map(|(&y, &p)| {
            if !(BCE_EPSILON..=1.0 - BCE_EPSILON).contains(&p) {
                0.0
            } else if y {
                -1.0 / p
            } else {
                1.0 / (1.0 - p)
            }
        })
        .collect()
}

/// Hinge over every (positive, negative) pair, divided by `|M|`.
pub fn loss_multi(truth: &[bool], pred: &[f64]) -> f64 {
    let pos: Vec<f64> = (0..pred.len())
        .filter(|&i| truth[i])
        .map(|i| pred[i])
        .collect();
    let neg: Vec<f64> = (0..pred.len())
        .filter(|&i| !truth[i])
        .map(|i| pred[i])
        .collect();
    let total: f64 = pos
        .iter()
        .map(|pi| neg.iter().map(|pj| (1.0 - (pi - pj)).max(0.0)).sum::<f64>())
        .sum();
    total / pred.len() as f64
}

pub fn grad_multi(truth: &[bool], pred: &[f64]) -> Vec<f64> {
    let n = pred.len() as f64;
    let mut g = vec![0.0; pred.len()];
    for i in (0..pred.len()).filter(|&i| truth[i]) {
        for j in (0..pred.len()).filter(|&j| !truth[j]) {
            if 1.0 - (pred[i] - pred[j]) > 0.0 {
                g[i] -= 1.0 / n;
                g[j] += 1.0 / n;
            }
        }
    }
    g
}

/// `sum_i sum_j ddi_ij p_i p_j` over ordered pairs.
pub fn loss_ddi(pred: &[f64], ddi: &DdiMatrix) -> f64 {
    ddi.pairs()
        .into_iter()
        .map(|(a, b)| 2.0 * pred[a] * pred[b])
        .sum()
}

pub fn grad_ddi(pred: &[f64], ddi: &DdiMatrix) -> Vec<f64> {
    let mut g = vec![0.0; pred.len()];
    for (a, b) in ddi.pairs() {
        g[a] += 2.0 * pred[b];
        g[b] += 2.0 * pred[a];
    }
    g
}

/// Piecewise-linear weight: 1 up to `gamma`, falling to 0 at `gamma + kp`.
/// The result is snapped to a 1e-12 grid so decimal inputs give decimal
/// outputs (0.5 rather than 0.49999999999999994).
pub fn alpha_schedule(rate_ddi: f64, gamma: f64, kp: f64) -> f64 {
    if rate_ddi <= gamma {
        return 1.0;
    }
    let a = (1.0 - (rate_ddi - gamma) / kp).max(0.0);
    (a * 1e12).round() / 1e12
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub bce: f64,
    pub multi: f64,
    pub ddi: f64,
    pub alpha: f64,
}

impl LossParts {
    /// Total recombined under another `alpha`.
    pub fn at_alpha(&self, alpha: f64, beta: f64) -> f64 {
        alpha * (beta * self.bce + (1.0 - beta) * self.multi) + (1.0 - alpha) * self.ddi
    }
}

/// `alpha (beta L_bce + (1 - beta) L_multi) + (1 - alpha) L_ddi` with
/// `alpha` taken from `rate_ddi`.
pub fn combined_loss(
    truth: &[bool],
    pred: &[f64],
    ddi: &DdiMatrix,
    rate_ddi: f64,
    cfg: &LossConfig,
) -> LossParts {
    let alpha = alpha_schedule(rate_ddi, cfg.gamma, cfg.kp);
    combined_with_alpha(truth, pred, ddi, alpha, cfg.beta)
}

pub fn combined_with_alpha(
    truth: &[bool],
    pred: &[f64],
    ddi: &DdiMatrix,
    alpha: f64,
    beta: f64,
) -> LossParts {
    let bce = loss_bce(truth, pred);
    let multi = loss_multi(truth, pred);
    let d = loss_ddi(pred, ddi);
    LossParts {
        total: alpha * (beta * bce + (1.0 - beta) * multi) + (1.0 - alpha) * d,
        bce,
        multi,
        ddi: d,
        alpha,
    }
}

/// Gradient of [`combined_loss`] with respect to `pred`, holding `alpha`.
pub fn grad_combined(
    truth: &[bool],
    pred: &[f64],
    ddi: &DdiMatrix,
    alpha: f64,
    beta: f64,
) -> Vec<f64> {
    let gb = grad_bce(truth, pred);
    let gm = grad_multi(truth, pred);
    let gd = grad_ddi(pred, ddi);
    (0..pred.len())
        .map(|i| alpha * (beta * gb[i] + (1.0 - beta) * gm[i]) + (1.0 - alpha) * gd[i])
        .collect()
}
