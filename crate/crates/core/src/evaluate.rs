//! Per-image evaluation and prediction export for a trained model.

use std::path::Path;

use crate::data::{save_gray, save_mask, Sample};
use crate::error::{Error, Result};
use crate::mask::SegMask;
use crate::metrics::{
    anatomical_metrics, attention_consistency, boundary_f1, boundary_preservation, multiscale_dice, region_metrics,
    scale_coherence, CorrelationMethod, ImageMetrics, MetricsReport, DEFAULT_BF1_TOLERANCE, THRESHOLD,
};
use crate::pedm::{ForwardOutput, Pedm};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub bf1_tolerance: f64,
    pub threshold: f64,
    /// Scores the ground truth itself as the prediction; attention metrics
    /// still come from the model.
    pub oracle: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            bf1_tolerance: DEFAULT_BF1_TOLERANCE,
            threshold: THRESHOLD,
            oracle: false,
        }
    }
}

/// Single-image maps `(1,1,h,w)` for image `b` of each batched tensor.
fn per_image(maps: &[Tensor], b: usize) -> Result<Vec<Tensor>> {
    maps.iter()
        .map(|t| {
            let s = t.shape();
            Tensor::new(crate::Shape::new(1, 1, s.h(), s.w()), t.plane(b, 0).to_vec())
        })
        .collect()
}

pub fn predicted_mask(out: &ForwardOutput, b: usize, threshold: f64) -> Result<SegMask> {
    let s = out.prob.shape();
    SegMask::threshold(s.h(), s.w(), out.prob.plane(b, 0), threshold)
}

pub fn evaluate_sample(model: &Pedm, sample: &Sample, opts: &EvalOptions) -> Result<ImageMetrics> {
    let out = model.forward(&sample.image, None)?;
    let pred = if opts.oracle {
        sample.mask.clone()
    } else {
        predicted_mask(&out, 0, opts.threshold)?
    };
    let gt = &sample.mask;
    let region = region_metrics(&pred, gt)?;
    let attn = per_image(&out.attn, 0)?;
    let preds = per_image(&out.multiscale_preds()?, 0)?;
    // Fold pixels are background by construction; a fold mask that touches
    // the polyp after resizing is trimmed rather than rejected.
    let anat = match &sample.hf_region {
        Some(hf) => {
            let trimmed = SegMask::from_fn(hf.height(), hf.width(), |r, c| hf.get(r, c) && !gt.get(r, c));
            Some(anatomical_metrics(&pred, gt, &trimmed)?)
        }
        None => None,
    };
    let all_region = anatomical_metrics(&pred, gt, &SegMask::zeros(gt.height(), gt.width()))?;
    let mut m = ImageMetrics {
        id: sample.id.clone(),
        dice: region.dice,
        iou: region.iou,
        precision: region.precision,
        recall: region.recall,
        acc: region.acc,
        bf1: boundary_f1(&pred, gt, opts.bf1_tolerance)?,
        hf_miss_pct: anat.map(|a| a.hf_miss_pct),
        npv: all_region.npv,
        fdr: all_region.fdr,
        specificity: all_region.specificity,
        ac_pct: attention_consistency(&attn)?,
        sc: scale_coherence(&attn, CorrelationMethod::Auto)?,
        bp: boundary_preservation(&attn, gt)?,
        md: multiscale_dice(&preds, gt)?,
        ..Default::default()
    };
    if let Some((mi, w)) = model.pathway_diagnostics(&sample.image, std::slice::from_ref(gt))? {
        m.set_pathways(mi, w);
    }
    Ok(m)
}

pub fn evaluate(model: &Pedm, samples: &[Sample], opts: &EvalOptions) -> Result<MetricsReport> {
    let rows = samples.iter().map(|s| evaluate_sample(model, s, opts)).collect::<Result<_>>()?;
    Ok(MetricsReport { rows })
}

/// Mean Dice of thresholded predictions over `samples`; 0 for an empty set.
pub fn mean_dice(model: &Pedm, samples: &[Sample], threshold: f64) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for s in samples {
        let out = model.forward(&s.image, None)?;
        acc += region_metrics(&predicted_mask(&out, 0, threshold)?, &s.mask)?.dice;
    }
    Ok(acc / samples.len() as f64)
}

/// Files written for one input image.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Exported {
    pub prob: Option<std::path::PathBuf>,
    pub mask: Option<std::path::PathBuf>,
    pub attention: Vec<std::path::PathBuf>,
}

/// Writes `{stem}_prob.png` (`round(255·p)`), `{stem}_mask.png` ({0,255})
/// and, with `attention`, `{stem}_attn{i}.png` for each pyramid level.
pub fn export_prediction(
    model: &Pedm,
    image: &Tensor,
    out_dir: &Path,
    stem: &str,
    predictions: bool,
    attention: bool,
    threshold: f64,
) -> Result<Exported> {
    let s = image.shape();
    if s.b() != 1 {
        return Err(Error::shape("export", format!("one image at a time, got batch {}", s.b())));
    }
    let out = model.forward(image, None)?;
    let mut done = Exported::default();
    if predictions {
        let (h, w) = (s.h(), s.w());
        let p = out_dir.join(format!("{stem}_prob.png"));
        save_gray(&p, out.prob.plane(0, 0), h, w)?;
        let m = out_dir.join(format!("{stem}_mask.png"));
        save_mask(&m, &predicted_mask(&out, 0, threshold)?)?;
        done.prob = Some(p);
        done.mask = Some(m);
    }
    if attention {
        for (i, a) in out.attn.iter().enumerate() {
            let p = out_dir.join(format!("{stem}_attn{}.png", i + 1));
            save_gray(&p, a.plane(0, 0), a.shape().h(), a.shape().w())?;
            done.attention.push(p);
        }
    }
    Ok(done)
}
