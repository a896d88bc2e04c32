use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before taking
/// logarithms.
pub const PROB_EPS: f64 = 1e-12;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    BinaryCe,
    Focal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(default)]
    pub gamma: f64,
    /// Per-class balancing factor, indexed by class.
    #[serde(default)]
    pub alpha: Vec<f64>,
}

impl LossSpec {
    pub fn binary_ce() -> Self {
        LossSpec {
            kind: LossKind::BinaryCe,
            gamma: 0.0,
            alpha: Vec::new(),
        }
    }

    /// Focal loss with the given per-class balancing factors.
    pub fn focal(gamma: f64, alpha: Vec<f64>) -> Self {
        LossSpec {
            kind: LossKind::Focal,
            gamma,
            alpha,
        }
    }

    pub fn validate(&self, out_dim: usize) -> Result<()> {
        match self.kind {
            LossKind::BinaryCe if out_dim != 1 => Err(Error::Config(format!(
                "binary cross-entropy needs out_dim 1, model has {out_dim}"
            ))),
            LossKind::Focal => {
                if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
                    return Err(Error::Config(format!("focal gamma must be >= 0, got {}", self.gamma)));
                }
                if self.alpha.len() != out_dim {
                    return Err(Error::Config(format!(
                        "focal alpha covers {} classes, model has {out_dim}",
                        self.alpha.len()
                    )));
                }
                if self.alpha.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
                    return Err(Error::Config("focal alpha values must be positive".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// `-[y ln p + (1 - y) ln(1 - p)]`.
pub fn binary_ce_loss(p: f64, y: f64) -> f64 {
    let p = clamp_prob(p);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// `-alpha_t (1 - p_t)^gamma ln p_t` for true class `t`.
pub fn focal_loss(probs: &[f64], t: usize, gamma: f64, alpha_t: f64) -> f64 {
    let p = clamp_prob(probs[t]);
    -alpha_t * (1.0 - p).powf(gamma) * p.ln()
}

/// Gradient of [`focal_loss`] with respect to the softmax logits.
pub(crate) fn focal_logit_grad(probs: &[f64], t: usize, gamma: f64, alpha_t: f64, out: &mut [f64]) {
    let p = clamp_prob(probs[t]);
    let q = 1.0 - p;
    // dL/dp_t. q >= PROB_EPS after clamping, so q^(gamma - 1) is finite.
    let focus = if gamma == 0.0 {
        0.0
    } else {
        gamma * q.powf(gamma - 1.0) * p.ln()
    };
    let dl_dp = alpha_t * (focus - q.powf(gamma) / p);
    for (j, o) in out.iter_mut().enumerate() {
        let delta = if j == t { 1.0 } else { 0.0 };
        *o = dl_dp * probs[t] * (delta - probs[j]);
    }
}
