//! Epoch loop around `train_step`: shuffling, flip augmentation, background
//! batch assembly, CSV logging, best/final checkpoints and model reloading.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{collate, Prefetch, Sample};
use crate::error::{Error, Result};
use crate::evaluate::mean_dice;
use crate::metrics::THRESHOLD;
use crate::pedm::{train_step, Adam, ModelConfig, Pedm, TrainConfig, LEVELS};
use crate::tensor::checkpoint;
use crate::tensor::init::rng;

pub const LOG_HEADER: &str = "step,epoch,dice,msrm,guidance,feedback,js,total,lr,aux,feedback_mean,objective";
const PREFETCH_DEPTH: usize = 2;

/// `runs/<name>/` layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunPaths { root: root.into() }
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn log(&self) -> PathBuf {
        self.root.join("log.csv")
    }
    pub fn final_ckpt(&self) -> PathBuf {
        self.root.join("ckpt-final")
    }
    pub fn best_ckpt(&self) -> PathBuf {
        self.root.join("ckpt-best")
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    model: ModelConfig,
    msrm_weights: [f64; 4],
    epoch: usize,
    step: usize,
}

pub fn save_model(dir: &Path, model: &Pedm, epoch: usize, step: usize) -> Result<()> {
    let meta = ModelMeta {
        model: model.config.clone(),
        msrm_weights: model.msrm.stored_weights,
        epoch,
        step,
    };
    checkpoint::save_params(dir, model, serde_json::to_value(meta)?)
}

pub fn load_model(dir: &Path) -> Result<Pedm> {
    let ckpt = checkpoint::load(dir)?;
    let meta: ModelMeta = serde_json::from_value(ckpt.meta.clone())
        .map_err(|e| Error::Invalid(format!("{}: checkpoint metadata: {e}", dir.display())))?;
    let mut model = Pedm::new(&mut rng(0), meta.model)?;
    ckpt.restore_into(&mut model)?;
    model.msrm.stored_weights = meta.msrm_weights;
    Ok(model)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochSummary {
    /// 1-based.
    pub epoch: usize,
    pub steps: usize,
    /// Steps skipped because the objective or a gradient was non-finite.
    pub skipped: usize,
    pub train_dice_loss: f64,
    /// Mean over steps and levels of `mean((G_i − Attn_i)²)`.
    pub feedback_per_level: f64,
    pub val_dice: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FitReport {
    pub epochs: Vec<EpochSummary>,
    pub steps: usize,
    /// Epoch and validation Dice of the best checkpoint.
    pub best: Option<(usize, f64)>,
}

/// Batches for one epoch: a seeded shuffle, then an independent flip draw
/// per sample. Trailing partial batches are kept.
fn epoch_batches(train: &[Sample], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<Sample>> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(rng);
    let picked: Vec<Sample> = order
        .into_iter()
        .map(|i| {
            let flip = rng.random::<f64>() < cfg.flip_prob;
            if flip {
                train[i].vflip()
            } else {
                train[i].clone()
            }
        })
        .collect();
    picked.chunks(cfg.batch_size).map(|c| c.to_vec()).collect()
}

fn open_log(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(f));
    w.write_record(LOG_HEADER.split(','))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(w)
}

/// Trains for `cfg.epochs`. With `run`, writes `log.csv`, `ckpt-final`
/// and, whenever validation Dice improves, `ckpt-best`.
pub fn fit(model: &mut Pedm, train: &[Sample], val: &[Sample], cfg: &TrainConfig, run: Option<&RunPaths>) -> Result<FitReport> {
    cfg.validate()?;
    if train.is_empty() && cfg.epochs > 0 {
        return Err(Error::Invalid("training split is empty".into()));
    }
    let mut log = match run {
        Some(r) => {
            std::fs::create_dir_all(&r.root).map_err(|e| Error::io(&r.root, e))?;
            Some(open_log(&r.log())?)
        }
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.learning_rate);
    let mut report = FitReport::default();
    let mut streak = 0;
    for epoch in 1..=cfg.epochs {
        let batches = Prefetch::new(
            epoch_batches(train, cfg, &mut rng).into_iter().map(|b| collate(&b)),
            PREFETCH_DEPTH,
        );
        let mut sum = EpochSummary {
            epoch,
            steps: 0,
            skipped: 0,
            train_dice_loss: 0.0,
            feedback_per_level: 0.0,
            val_dice: None,
        };
        for batch in batches {
            let batch = batch?;
            let k = report.steps;
            report.steps += 1;
            let step = match train_step(model, &mut opt, &batch, cfg, k) {
                Ok(s) => s,
                Err(e @ (Error::NonFinite(_) | Error::Numerical(_))) => {
                    streak += 1;
                    sum.skipped += 1;
                    if streak > cfg.nan_patience {
                        return Err(Error::NonFinite(format!(
                            "{streak} consecutive non-finite steps (last at step {k}, epoch {epoch}): {e}"
                        )));
                    }
                    continue;
                }
                Err(e) => return Err(e),
            };
            streak = 0;
            sum.steps += 1;
            sum.train_dice_loss += step.breakdown.dice;
            sum.feedback_per_level += step.feedback_mean / LEVELS as f64;
            if let Some(w) = log.as_mut() {
                let b = &step.breakdown;
                let aux = serde_json::to_value(step.aux)?;
                let row = [
                    k.to_string(),
                    epoch.to_string(),
                    b.dice.to_string(),
                    b.msrm.to_string(),
                    b.guidance.to_string(),
                    b.feedback_consistency.to_string(),
                    b.js.to_string(),
                    b.total.to_string(),
                    cfg.learning_rate.to_string(),
                    aux.as_str().unwrap_or_default().to_string(),
                    step.feedback_mean.to_string(),
                    step.objective.to_string(),
                ];
                w.write_record(&row)?;
            }
        }
        if sum.steps > 0 {
            sum.train_dice_loss /= sum.steps as f64;
            sum.feedback_per_level /= sum.steps as f64;
        }
        if let Some(w) = log.as_mut() {
            w.flush().map_err(|e| Error::io(Path::new("log.csv"), e))?;
        }
        if !val.is_empty() {
            let d = mean_dice(model, val, THRESHOLD)?;
            sum.val_dice = Some(d);
            if report.best.is_none_or(|(_, b)| d > b) {
                report.best = Some((epoch, d));
                if let Some(r) = run {
                    save_model(&r.best_ckpt(), model, epoch, report.steps)?;
                }
            }
        }
        report.epochs.push(sum);
    }
    if let Some(r) = run {
        save_model(&r.final_ckpt(), model, cfg.epochs, report.steps)?;
    }
    Ok(report)
}
