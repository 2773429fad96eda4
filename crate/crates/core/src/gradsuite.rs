//! Finite-difference gradient checks over every trainable module, shared by
//! the `gradcheck` command and the test suite.

use crate::error::Result;
use crate::gaam::GaamParams;
use crate::gcafm::GcafmParams;
use crate::mask::SegMask;
use crate::msrm::{msrm_loss, MsrmParams};
use crate::pedm::{bio_loss_with_targets, guidance_targets, LossWeights, ModelConfig, Pedm};
use crate::tensor::gradcheck::{check_params, GroupResult, Options, DEFAULT_STEP, DEFAULT_TOLERANCE};
use crate::tensor::init::{rng, uniform};
use crate::tensor::{Params, Shape, Tensor};

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Side of the square end-to-end input; a multiple of 16.
    pub size: usize,
    /// Coordinates sampled per parameter tensor.
    pub per_tensor: usize,
    pub step: f64,
    /// Parameter group whose convolution gradient is deliberately scaled.
    /// Only honoured with the `fault-injection` feature.
    pub corrupt: Option<String>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            seed: 0,
            size: 32,
            per_tensor: 3,
            step: DEFAULT_STEP,
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteRow {
    pub module: &'static str,
    pub result: GroupResult,
}

impl SuiteRow {
    pub fn passed(&self) -> bool {
        self.result.passed(DEFAULT_TOLERANCE)
    }
}

/// Widths used for the end-to-end check; small enough for many seeds.
pub const PEDM_WIDTHS: [usize; 4] = [4, 8, 8, 8];

#[cfg(feature = "fault-injection")]
fn arm(model: &dyn Params, group: &dyn Fn(&str) -> String, target: Option<&str>) -> Option<u64> {
    let target = target?;
    let mut id = None;
    model.visit("", &mut |n, t| {
        if id.is_none() && n.ends_with("weight") && group(n) == target {
            id = Some(t.id());
        }
    });
    if let Some(id) = id {
        crate::tensor::fault::corrupt(id, 1.5);
    }
    id
}

#[cfg(not(feature = "fault-injection"))]
fn arm(_: &dyn Params, _: &dyn Fn(&str) -> String, _: Option<&str>) -> Option<u64> {
    None
}

fn disarm(id: Option<u64>) {
    #[cfg(feature = "fault-injection")]
    if let Some(id) = id {
        crate::tensor::fault::clear(id);
    }
    #[cfg(not(feature = "fault-injection"))]
    let _ = id;
}

fn check<M: Params>(
    module: &'static str,
    model: &mut M,
    loss: impl Fn(&M) -> Result<Tensor>,
    group: impl Fn(&str) -> String,
    opts: &SuiteOptions,
) -> Result<Vec<SuiteRow>> {
    let armed = arm(model, &group, opts.corrupt.as_deref());
    let o = Options {
        step: opts.step,
        per_tensor: opts.per_tensor,
        seed: opts.seed,
    };
    let res = check_params(model, loss, group, &o);
    disarm(armed);
    Ok(res?.into_iter().map(|result| SuiteRow { module, result }).collect())
}

/// Fixed random projection so the loss depends on every output element.
fn probe(seed: u64, like: &Tensor) -> Tensor {
    uniform(&mut rng(seed), like.shape(), -1.0, 1.0)
}

fn blob_masks(b: usize, size: usize, seed: u64) -> Vec<SegMask> {
    (0..b)
        .map(|i| {
            let c = (size / 3 + (seed as usize + i) % (size / 3)) as f64;
            let r = size as f64 / 4.0;
            SegMask::from_fn(size, size, |y, x| (y as f64 - c).powi(2) + (x as f64 - c).powi(2) < r * r)
        })
        .collect()
}

pub fn check_gaam(opts: &SuiteOptions) -> Result<Vec<SuiteRow>> {
    let s = opts.seed;
    let mut r = rng(s.wrapping_add(1000));
    let mut p = GaamParams::new(&mut r, 8, 4)?;
    let x = uniform(&mut r, Shape::new(1, 8, 12, 12), -1.0, 1.0);
    let g = uniform(&mut r, Shape::new(1, 8, 1, 1), 0.2, 1.0);
    let w = probe(s, &x);
    check("gaam", &mut p, |p| p.forward(&x, Some(&g))?.refined.mul(&w).map(|t| t.sum_all()), |_| "gaam".into(), opts)
}

pub fn check_msrm(opts: &SuiteOptions) -> Result<Vec<SuiteRow>> {
    let s = opts.seed;
    let mut r = rng(s.wrapping_add(2000));
    let mut p = MsrmParams::new(&mut r, 4);
    let x = uniform(&mut r, Shape::new(2, 4, 12, 12), -1.0, 1.0);
    let gt = blob_masks(2, 12, s);
    let gt_t = SegMask::stack(&gt)?;
    // Histogram MI is piecewise constant in the parameters; freeze it.
    p.stored_weights = p.forward(&x, Some(&gt))?.weights;
    let w = probe(s, &x);
    check(
        "msrm",
        &mut p,
        |p| {
            let out = p.forward(&x, None)?;
            msrm_loss(&out.seg_pred, &gt_t, &out.gate, 0.1)?.add(&out.features.mul(&w)?.sum_all())
        },
        |_| "msrm".into(),
        opts,
    )
}

pub fn check_gcafm(opts: &SuiteOptions) -> Result<Vec<SuiteRow>> {
    let s = opts.seed;
    let mut r = rng(s.wrapping_add(3000));
    let mut p = GcafmParams::new(&mut r, 6, 4, 4)?;
    p.pool_to = 4;
    let h = uniform(&mut r, Shape::new(1, 6, 4, 4), -1.0, 1.0);
    let l = uniform(&mut r, Shape::new(1, 4, 8, 8), -1.0, 1.0);
    let w = probe(s, &l);
    check(
        "gcafm",
        &mut p,
        |p| {
            let out = p.forward(&h, &l)?;
            out.refined_low
                .mul(&w)?
                .sum_all()
                .add(&out.attention.sum_all())?
                .add(&out.feedback_gate.sum_all())
        },
        |_| "gcafm".into(),
        opts,
    )
}

/// End-to-end check of the composite objective plus the cross-entropy
/// auxiliary term at `1×3×size×size`, grouped by top-level component.
pub fn check_pedm(opts: &SuiteOptions) -> Result<Vec<SuiteRow>> {
    let s = opts.seed;
    let mut r = rng(s.wrapping_add(4000));
    let cfg = ModelConfig {
        widths: PEDM_WIDTHS,
        gaam_reduction: 4,
        d_k: 4,
        pool_to: 4,
        ..ModelConfig::default()
    };
    let mut m = Pedm::new(&mut r, cfg)?;
    let img = uniform(&mut r, Shape::new(1, 3, opts.size, opts.size), 0.0, 1.0);
    let gt = blob_masks(1, opts.size, s);
    let gt_t = SegMask::stack(&gt)?;
    m.msrm.stored_weights = m.forward(&img, Some(&gt))?.msrm.map(|o| o.weights).unwrap_or([0.25; 4]);
    // The distribution terms compare against stop-gradient guidance; hold it
    // at the unperturbed value.
    let targets = guidance_targets(&m.forward(&img, None)?)?;
    let w = LossWeights::default();
    let lambda_gate = m.msrm.lambda_gate;
    check(
        "pedm",
        &mut m,
        |m| {
            let out = m.forward(&img, None)?;
            let terms = bio_loss_with_targets(&out, &gt_t, lambda_gate, Some(&targets))?;
            terms.weighted_total(&w)?.add(&terms.cross_entropy.scale(w.lambda2))
        },
        Pedm::group_of,
        opts,
    )
}

/// All four checks for one seed.
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<SuiteRow>> {
    let mut rows = check_gaam(opts)?;
    rows.extend(check_msrm(opts)?);
    rows.extend(check_gcafm(opts)?);
    rows.extend(check_pedm(opts)?);
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_seed_passes_with_all_groups() {
        let rows = run_suite(&SuiteOptions::default()).unwrap();
        assert!(rows.iter().all(SuiteRow::passed), "{rows:#?}");
        let pedm: Vec<&str> = rows.iter().filter(|r| r.module == "pedm").map(|r| r.result.group.as_str()).collect();
        for g in ["encoder", "msrm", "gaam", "gcafm", "decoder", "heads"] {
            assert!(pedm.contains(&g), "{pedm:?}");
        }
    }
}
