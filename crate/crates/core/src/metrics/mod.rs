//! Region, boundary, anatomical false-positive and attention-stability
//! metrics, plus the per-image report and its CSV/JSON writers.

mod attention;
mod boundary;
mod report;

use crate::error::{Error, Result};
use crate::mask::SegMask;

pub use attention::{attention_consistency, cross_correlation_max, multiscale_dice, pearson, scale_coherence, CorrelationMethod};
pub use boundary::{boundary_f1, boundary_pixels, boundary_preservation, edge_jaccard, sobel_edges, DEFAULT_BF1_TOLERANCE, EDGE_FRACTION};
pub use report::{ImageMetrics, MetricsReport, CSV_HEADER};

/// Probability maps are binarized with `p >= 0.5`.
pub const THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    /// Counts over every pixel, or only inside `region` when given.
    pub fn count(pred: &SegMask, gt: &SegMask, region: Option<&SegMask>) -> Result<Self> {
        check_same("confusion", pred, gt)?;
        if let Some(r) = region {
            check_same("confusion", pred, r)?;
        }
        let mut c = ConfusionCounts::default();
        for i in 0..pred.len() {
            if region.is_some_and(|r| r.data()[i] == 0) {
                continue;
            }
            match (pred.data()[i] == 1, gt.data()[i] == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_same(op: &'static str, a: &SegMask, b: &SegMask) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// `num / den`, or `empty` when `den == 0`.
fn ratio(num: usize, den: usize, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionMetrics {
    pub dice: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub acc: f64,
}

/// Confusion-based scores. An empty prediction against an empty ground
/// truth scores 1 everywhere.
pub fn region_metrics(pred: &SegMask, gt: &SegMask) -> Result<RegionMetrics> {
    let c = ConfusionCounts::count(pred, gt, None)?;
    Ok(from_counts(&c))
}

fn from_counts(c: &ConfusionCounts) -> RegionMetrics {
    let gt_empty = c.tp + c.fn_ == 0;
    let pred_empty = c.tp + c.fp == 0;
    RegionMetrics {
        dice: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, 1.0),
        iou: ratio(c.tp, c.tp + c.fp + c.fn_, 1.0),
        precision: ratio(c.tp, c.tp + c.fp, if gt_empty { 1.0 } else { 0.0 }),
        recall: ratio(c.tp, c.tp + c.fn_, if pred_empty { 1.0 } else { 0.0 }),
        acc: ratio(c.tp + c.tn, c.total(), 1.0),
    }
}

/// Dice with the empty/empty convention.
pub fn dice(pred: &SegMask, gt: &SegMask) -> Result<f64> {
    Ok(region_metrics(pred, gt)?.dice)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnatomicalMetrics {
    /// `FP_hf / (TN_hf + FP_hf) · 100` inside the fold region.
    pub hf_miss_pct: f64,
    /// Set when the fold region has no pixels; `hf_miss_pct` is then 0.
    pub hf_region_empty: bool,
    pub npv: f64,
    pub fdr: f64,
    pub specificity: f64,
}

pub fn anatomical_metrics(pred: &SegMask, gt: &SegMask, hf_region: &SegMask) -> Result<AnatomicalMetrics> {
    if !hf_region.is_disjoint(gt) {
        return Err(Error::Invalid("fold region overlaps ground-truth positives".into()));
    }
    let all = ConfusionCounts::count(pred, gt, None)?;
    let hf = ConfusionCounts::count(pred, gt, Some(hf_region))?;
    let hf_n = hf.fp + hf.tn;
    Ok(AnatomicalMetrics {
        hf_miss_pct: ratio(hf.fp, hf_n, 0.0) * 100.0,
        hf_region_empty: hf_n == 0,
        npv: ratio(all.tn, all.tn + all.fn_, 1.0),
        fdr: ratio(all.fp, all.fp + all.tp, 0.0),
        specificity: ratio(all.tn, all.tn + all.fp, 1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(bits: &[u8]) -> SegMask {
        SegMask::new(1, bits.len(), bits.to_vec()).unwrap()
    }

    #[test]
    fn region_examples() {
        let g = row(&[1, 1, 1, 1, 0, 0, 0, 0]);
        let m = region_metrics(&g, &g).unwrap();
        assert_eq!((m.dice, m.iou), (1.0, 1.0));
        let p = row(&[0, 0, 0, 0, 1, 1, 0, 0]);
        assert_eq!(region_metrics(&p, &g).unwrap().dice, 0.0);
        let p = row(&[0, 0, 1, 1, 1, 1, 0, 0]);
        let m = region_metrics(&p, &g).unwrap();
        assert_eq!(m.dice, 0.5);
        assert!((m.iou - 1.0 / 3.0).abs() < 1e-15);
        let e = row(&[0; 4]);
        let m = region_metrics(&e, &e).unwrap();
        assert_eq!((m.dice, m.iou, m.precision, m.recall, m.acc), (1.0, 1.0, 1.0, 1.0, 1.0));
        assert!(region_metrics(&e, &g).is_err());
    }

    #[test]
    fn hf_miss_fixture() {
        // Ten fold pixels, two of them predicted positive.
        let gt = SegMask::zeros(1, 12);
        let hf = row(&[1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0]);
        let pred = row(&[1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1]);
        let a = anatomical_metrics(&pred, &gt, &hf).unwrap();
        assert_eq!(a.hf_miss_pct, 20.0);
        assert!(!a.hf_region_empty);
    }

    #[test]
    fn npv_and_empty_prediction() {
        let gt = row(&[1, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        let pred = SegMask::zeros(1, 10);
        let hf = row(&[0, 1, 1, 0, 0, 0, 0, 0, 0, 0]);
        let a = anatomical_metrics(&pred, &gt, &hf).unwrap();
        assert!((a.npv - 0.9).abs() < 1e-15);
        assert_eq!(a.hf_miss_pct, 0.0);
        assert_eq!(a.specificity, 1.0);
        let a = anatomical_metrics(&pred, &gt, &SegMask::zeros(1, 10)).unwrap();
        assert!(a.hf_region_empty);
        assert!(anatomical_metrics(&pred, &gt, &gt).is_err());
    }
}
