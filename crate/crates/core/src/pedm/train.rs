//! One optimisation step with the cyclic auxiliary schedule.

use serde::{Deserialize, Serialize};

use super::objective::{bio_loss, LossBreakdown, LossWeights};
use super::{Adam, Batch, Pedm};
use crate::error::{Error, Result};
use crate::tensor::Params;

/// How the auxiliary decoder terms are scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuxSchedule {
    /// One auxiliary term per step, chosen by `k mod 3`.
    Cyclic,
    /// All auxiliary terms every step.
    AllTerms,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuxTerm {
    None,
    Alignment,
    CrossEntropy,
    Js,
    All,
}

impl AuxTerm {
    pub fn for_step(k: usize) -> Self {
        match k % 3 {
            0 => AuxTerm::Alignment,
            1 => AuxTerm::CrossEntropy,
            _ => AuxTerm::Js,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub input_size: usize,
    pub flip_prob: f64,
    pub seed: u64,
    pub weights: LossWeights,
    /// Adds the guidance-alignment terms to the optimised objective.
    pub aux_losses: bool,
    pub schedule: AuxSchedule,
    /// Consecutive non-finite steps tolerated before training aborts.
    pub nan_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 4,
            epochs: 100,
            input_size: 256,
            flip_prob: 0.5,
            seed: 0,
            weights: LossWeights::default(),
            aux_losses: true,
            schedule: AuxSchedule::Cyclic,
            nan_patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!("flip_prob {} outside [0, 1]", self.flip_prob)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate {} is invalid", self.learning_rate)));
        }
        if self.input_size == 0 || self.input_size % 16 != 0 {
            return Err(Error::Config(format!("input_size {} must be a positive multiple of 16", self.input_size)));
        }
        Ok(())
    }

    pub fn aux_for_step(&self, k: usize) -> AuxTerm {
        match (self.aux_losses, self.schedule) {
            (false, _) => AuxTerm::None,
            (true, AuxSchedule::Cyclic) => AuxTerm::for_step(k),
            (true, AuxSchedule::AllTerms) => AuxTerm::All,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub breakdown: LossBreakdown,
    pub aux: AuxTerm,
    /// Value of the objective actually differentiated this step.
    pub objective: f64,
    /// `Σ_i mean((G_i − Attn_i)²)`, the area-normalised alignment error.
    pub feedback_mean: f64,
}

/// Forward, backward of `dice + α·msrm + β·guidance + aux(k)`, one Adam
/// update. A non-finite objective or gradient leaves the model untouched.
pub fn train_step(model: &mut Pedm, opt: &mut Adam, batch: &Batch, cfg: &TrainConfig, k: usize) -> Result<StepReport> {
    model.zero_grad();
    let out = model.forward(&batch.images, Some(&batch.masks))?;
    let gt = batch.gt_tensor()?;
    let terms = bio_loss(&out, &gt, model.msrm.lambda_gate)?;
    let breakdown = terms.breakdown(&cfg.weights);
    let w = &cfg.weights;
    let base = terms
        .dice
        .add(&terms.msrm.scale(w.alpha))?
        .add(&terms.guidance.scale(w.beta))?;
    let aux = cfg.aux_for_step(k);
    let objective = match aux {
        AuxTerm::None => base,
        AuxTerm::Alignment => base.add(&terms.feedback_mean.scale(w.lambda1))?,
        AuxTerm::CrossEntropy => base.add(&terms.cross_entropy.scale(w.lambda2))?,
        AuxTerm::Js => base.add(&terms.js.scale(w.eta))?,
        AuxTerm::All => base
            .add(&terms.feedback_mean.scale(w.lambda1))?
            .add(&terms.cross_entropy.scale(w.lambda2))?
            .add(&terms.js.scale(w.eta))?,
    };
    let value = objective.item();
    let feedback_mean = terms.feedback_mean.item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("objective at step {k}")));
    }
    objective.backward()?;
    opt.lr = cfg.learning_rate;
    if let Err(e) = opt.step(model) {
        model.zero_grad();
        return Err(e);
    }
    if let Some(m) = &out.msrm {
        if m.mi.is_some() {
            model.msrm.update_stored_weights(m.weights);
        }
    }
    Ok(StepReport {
        step: k,
        breakdown,
        aux,
        objective: value,
        feedback_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::SegMask;
    use crate::pedm::ModelConfig;
    use crate::tensor::init::{rng, uniform};
    use crate::tensor::{Shape, Tensor};

    fn setup() -> (Pedm, Batch) {
        let cfg = ModelConfig {
            widths: [8, 8, 8, 8],
            ..ModelConfig::default()
        };
        let m = Pedm::new(&mut rng(1), cfg).unwrap();
        let img = uniform(&mut rng(2), Shape::new(2, 3, 32, 32), 0.0, 1.0);
        let masks = (0..2)
            .map(|i| SegMask::from_fn(32, 32, |r, c| r > 8 + i && c > 10))
            .collect();
        (m, Batch::new(img, masks).unwrap())
    }

    #[test]
    fn cyclic_selection() {
        assert_eq!(AuxTerm::for_step(0), AuxTerm::for_step(3));
        assert_eq!(AuxTerm::for_step(3), AuxTerm::for_step(6));
        assert_eq!(AuxTerm::for_step(1), AuxTerm::CrossEntropy);
        assert_eq!(AuxTerm::for_step(2), AuxTerm::Js);
        let all = TrainConfig {
            schedule: AuxSchedule::AllTerms,
            ..TrainConfig::default()
        };
        assert_eq!(all.aux_for_step(4), AuxTerm::All);
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let (mut m, batch) = setup();
        let before = m.named_params();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        train_step(&mut m, &mut Adam::new(0.0), &batch, &cfg, 0).unwrap();
        for ((_, a), (_, b)) in before.iter().zip(m.named_params()) {
            assert_eq!(a.to_vec(), b.to_vec());
        }
    }

    #[test]
    fn nan_input_aborts_without_update() {
        let (mut m, batch) = setup();
        let before = m.named_params();
        let mut data = batch.images.to_vec();
        data[5] = f64::NAN;
        let bad = Batch::new(Tensor::new(batch.images.shape(), data).unwrap(), batch.masks.clone()).unwrap();
        let err = train_step(&mut m, &mut Adam::new(1e-3), &bad, &TrainConfig::default(), 0).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        for ((_, a), (_, b)) in before.iter().zip(m.named_params()) {
            assert_eq!(a.to_vec(), b.to_vec());
        }
    }

    #[test]
    fn every_group_receives_gradient() {
        let (m, batch) = setup();
        let out = m.forward(&batch.images, Some(&batch.masks)).unwrap();
        let terms = bio_loss(&out, &batch.gt_tensor().unwrap(), m.msrm.lambda_gate).unwrap();
        let total = terms.weighted_total(&LossWeights::default()).unwrap();
        total.add(&terms.cross_entropy).unwrap().backward().unwrap();
        let mut nonzero = std::collections::BTreeMap::new();
        for (name, t) in m.named_params() {
            let hit = t.grad().is_some_and(|g| g.iter().any(|&v| v != 0.0));
            *nonzero.entry(Pedm::group_of(&name)).or_insert(false) |= hit;
        }
        assert_eq!(nonzero.len(), 6);
        assert!(nonzero.values().all(|&v| v), "{nonzero:?}");
    }
}
