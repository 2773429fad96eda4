//! Composite objective `dice + α·msrm + β·guidance + λ·Σ‖G_i − Attn_i‖² +
//! η·Σ JS(Attn_i ‖ SG(G_i))` and its per-term breakdown.

use serde::{Deserialize, Serialize};

use super::ForwardOutput;
use crate::error::{Error, Result};
use crate::loss::{bce, dice_loss, js_divergence, mse};
use crate::msrm::msrm_loss;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub eta: f64,
    /// Cyclic alignment weight.
    pub lambda1: f64,
    /// Cyclic cross-entropy weight.
    pub lambda2: f64,
    /// Feedback tolerance as a fraction of each level's area.
    pub eps_feedback: f64,
    /// Per-level JS tolerance for the alignment diagnostic.
    pub tau_alignment: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.5,
            beta: 0.3,
            lambda: 0.1,
            eta: 0.1,
            lambda1: 0.1,
            lambda2: 0.1,
            eps_feedback: 0.05,
            tau_alignment: 0.1,
        }
    }
}

/// Differentiable scalar terms of one forward pass.
#[derive(Clone, Debug)]
pub struct BioTerms {
    pub dice: Tensor,
    pub msrm: Tensor,
    pub guidance: Tensor,
    /// `Σ_i ‖G_i − Attn_i‖²`, pixel sums averaged over the batch.
    pub feedback: Tensor,
    /// `Σ_i mean((G_i − Attn_i)²)`, the area-normalised form optimised by
    /// the cyclic alignment step.
    pub feedback_mean: Tensor,
    pub js: Tensor,
    /// `Σ_i H(Attn_i, clip(SG(G_i)))`.
    pub cross_entropy: Tensor,
    pub feedback_per_level: Vec<f64>,
    pub js_per_level: Vec<f64>,
    pub level_areas: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub dice: f64,
    pub msrm: f64,
    pub guidance: f64,
    pub feedback_consistency: f64,
    pub js: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub eta: f64,
    pub total: f64,
    /// `‖G_i − Attn_i‖² ≤ ε_feedback` per level.
    pub feedback_satisfied: Vec<bool>,
    /// `JS_i ≤ τ_alignment` per level.
    pub aligned: Vec<bool>,
}

impl BioTerms {
    /// `dice + α·msrm + β·guidance + λ·feedback + η·js` as a graph node.
    pub fn weighted_total(&self, w: &LossWeights) -> Result<Tensor> {
        self.dice
            .add(&self.msrm.scale(w.alpha))?
            .add(&self.guidance.scale(w.beta))?
            .add(&self.feedback.scale(w.lambda))?
            .add(&self.js.scale(w.eta))
    }

    pub fn breakdown(&self, w: &LossWeights) -> LossBreakdown {
        let (dice, msrm, guidance, fc, js) = (
            self.dice.item(),
            self.msrm.item(),
            self.guidance.item(),
            self.feedback.item(),
            self.js.item(),
        );
        LossBreakdown {
            dice,
            msrm,
            guidance,
            feedback_consistency: fc,
            js,
            alpha: w.alpha,
            beta: w.beta,
            lambda: w.lambda,
            eta: w.eta,
            total: dice + w.alpha * msrm + w.beta * guidance + w.lambda * fc + w.eta * js,
            feedback_satisfied: self
                .feedback_per_level
                .iter()
                .zip(&self.level_areas)
                .map(|(&v, &a)| v <= w.eps_feedback * a as f64)
                .collect(),
            aligned: self.js_per_level.iter().map(|&v| v <= w.tau_alignment).collect(),
        }
    }
}

/// Every term of the objective for `out` against the `(B, 1, H, W)` mask
/// tensor `gt`. Guidance maps are channel-averaged and resized onto each
/// attention grid before comparison.
pub fn bio_loss(out: &ForwardOutput, gt: &Tensor, lambda_gate: f64) -> Result<BioTerms> {
    bio_loss_with_targets(out, gt, lambda_gate, None)
}

/// Channel-averaged guidance resized onto each attention grid, detached:
/// the distribution targets of the cross-entropy and JS terms.
pub fn guidance_targets(out: &ForwardOutput) -> Result<Vec<Tensor>> {
    out.guidance
        .per_level
        .iter()
        .zip(&out.attn)
        .map(|(g, a)| Ok(g.mean_channels().resize_like(a)?.detach()))
        .collect()
}

/// As [`bio_loss`], with the cross-entropy and JS targets supplied instead of
/// taken from `out`. Holding them fixed makes the objective a plain function
/// of the parameters, which finite differences need.
pub fn bio_loss_with_targets(
    out: &ForwardOutput,
    gt: &Tensor,
    lambda_gate: f64,
    targets: Option<&[Tensor]>,
) -> Result<BioTerms> {
    let own;
    let frozen = match targets {
        Some(t) if t.len() == out.attn.len() => t,
        Some(t) => return Err(Error::shape("bio_loss", format!("{} targets for {} levels", t.len(), out.attn.len()))),
        None => {
            own = guidance_targets(out)?;
            &own[..]
        }
    };
    if out.prob.shape() != gt.shape() {
        return Err(Error::shape("bio_loss", format!("prob {} vs gt {}", out.prob.shape(), gt.shape())));
    }
    let dice = dice_loss(&out.prob, gt)?;
    let msrm = match &out.msrm {
        Some(m) => msrm_loss(&m.seg_pred, gt, &m.gate, lambda_gate)?,
        None => Tensor::scalar(0.0),
    };
    let targets = out.targets();
    let guidance = if targets.is_empty() {
        Tensor::scalar(0.0)
    } else {
        let mut acc = Tensor::scalar(0.0);
        for t in &targets {
            let s = t.shape();
            acc = acc.add(&mse(t, &gt.adaptive_avg_pool(s.h(), s.w())?)?)?;
        }
        acc.scale(1.0 / targets.len() as f64)
    };

    let mut feedback = Tensor::scalar(0.0);
    let mut feedback_mean = Tensor::scalar(0.0);
    let mut js = Tensor::scalar(0.0);
    let mut cross_entropy = Tensor::scalar(0.0);
    let mut feedback_per_level = Vec::new();
    let mut js_per_level = Vec::new();
    let mut level_areas = Vec::new();
    for ((g, a), q) in out.guidance.per_level.iter().zip(&out.attn).zip(frozen) {
        let g = g.mean_channels().resize_like(a)?;
        let sq = g.sub(a)?.square();
        let fb = sq.sum_per_image().mean_all();
        feedback_mean = feedback_mean.add(&sq.mean_all())?;
        let j = js_divergence(a, q)?;
        let h = bce(a, &q.clamp(0.0, 1.0))?;
        feedback_per_level.push(fb.item());
        js_per_level.push(j.item());
        level_areas.push(a.shape().plane());
        feedback = feedback.add(&fb)?;
        js = js.add(&j)?;
        cross_entropy = cross_entropy.add(&h)?;
    }
    Ok(BioTerms {
        dice,
        msrm,
        guidance,
        feedback,
        feedback_mean,
        js,
        cross_entropy,
        feedback_per_level,
        js_per_level,
        level_areas,
    })
}
