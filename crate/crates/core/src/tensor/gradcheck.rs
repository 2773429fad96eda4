//! Central finite-difference verification of analytic gradients.
//!
//! Error per check is `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞, 1e-7)` over the checked
//! coordinates, where `a` is the analytic and `n` the numerical gradient.
//!
//! Parameter checks are kink-aware: a coordinate whose forward and backward
//! one-sided slopes disagree sits next to a non-differentiable point (ReLU,
//! max, clamp) and is retried with a smaller step. If no step gives a smooth
//! interval the coordinate is skipped and counted. The test uses loss values
//! only, never the analytic gradient.

use std::collections::BTreeMap;

use rand::seq::index::sample;

use super::init::rng;
use super::{Params, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
const FLOOR: f64 = 1e-7;
/// Step shrink factors tried at a kink.
const RETRIES: [f64; 3] = [1.0, 0.1, 0.01];
/// Allowed relative disagreement of the one-sided slopes.
const SMOOTH_TOL: f64 = 1e-3;

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let inf = |v: &mut dyn Iterator<Item = f64>| v.fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = inf(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = inf(&mut analytic.iter().copied())
        .max(inf(&mut numeric.iter().copied()))
        .max(FLOOR);
    diff / scale
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupResult {
    pub group: String,
    pub max_rel_error: f64,
    /// Number of coordinates compared.
    pub coords: usize,
    /// Coordinates dropped because every step straddled a kink.
    pub skipped: usize,
}

impl GroupResult {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

#[derive(Clone, Debug)]
pub struct Options {
    pub step: f64,
    /// Coordinates sampled per tensor; `0` checks every coordinate.
    pub per_tensor: usize,
    pub seed: u64,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            step: DEFAULT_STEP,
            per_tensor: 6,
            seed: 0,
        }
    }
}

fn scalar_loss(t: Result<Tensor>) -> Result<f64> {
    let t = t?;
    if t.numel() != 1 {
        return Err(Error::shape("gradcheck", format!("loss must be scalar, got {}", t.shape())));
    }
    Ok(t.item())
}

fn pick(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if k == 0 || k >= n {
        return (0..n).collect();
    }
    let mut idx = sample(&mut rng(seed), n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Checks the gradients of every parameter of `model`. Parameters are
/// grouped by `group(name)`; each group's error is computed over all of its
/// sampled coordinates together.
pub fn check_params<M: Params>(
    model: &mut M,
    loss: impl Fn(&M) -> Result<Tensor>,
    group: impl Fn(&str) -> String,
    opts: &Options,
) -> Result<Vec<GroupResult>> {
    model.zero_grad();
    let out = loss(model)?;
    let f0 = out.item();
    out.backward()?;
    let named = model.named_params();
    let mut per_group: BTreeMap<String, (Vec<f64>, Vec<f64>, usize)> = BTreeMap::new();

    for (ti, (name, t)) in named.iter().enumerate() {
        let grad = t.grad_or_zeros();
        let coords = pick(t.numel(), opts.per_tensor, opts.seed.wrapping_mul(7919).wrapping_add(ti as u64));
        let (an, nu, skipped) = per_group.entry(group(name)).or_default();
        for i in coords {
            let mut eval = |delta: f64| -> Result<f64> {
                let mut data = t.to_vec();
                data[i] += delta;
                let probe = Tensor::parameter(t.shape(), data)?;
                swap(model, name, probe);
                let v = scalar_loss(loss(model));
                swap(model, name, t.clone());
                v
            };
            let mut smooth = None;
            for k in RETRIES {
                let h = opts.step * k;
                let (fp, fm) = (eval(h)?, eval(-h)?);
                let (fwd, bwd) = ((fp - f0) / h, (f0 - fm) / h);
                if (fwd - bwd).abs() <= SMOOTH_TOL * fwd.abs().max(bwd.abs()).max(FLOOR) {
                    smooth = Some((fp - fm) / (2.0 * h));
                    break;
                }
            }
            match smooth {
                Some(n) => {
                    an.push(grad[i]);
                    nu.push(n);
                }
                None => *skipped += 1,
            }
        }
    }
    Ok(per_group
        .into_iter()
        .map(|(group, (an, nu, skipped))| GroupResult {
            max_rel_error: relative_error(&an, &nu),
            coords: an.len(),
            skipped,
            group,
        })
        .collect())
}

fn swap<M: Params>(model: &mut M, target: &str, with: Tensor) {
    let mut with = Some(with);
    model.visit_mut("", &mut |n, t| {
        if n == target {
            if let Some(w) = with.take() {
                *t = w;
            }
        }
    });
}

/// Checks the gradient of `f` with respect to each input tensor over every
/// coordinate. Returns the worst relative error across inputs.
pub fn check_inputs(inputs: &[Tensor], f: impl Fn(&[Tensor]) -> Result<Tensor>, step: f64) -> Result<f64> {
    let leaves: Vec<Tensor> = inputs.iter().map(Tensor::to_parameter).collect();
    f(&leaves)?.backward()?;
    let mut worst = 0.0f64;
    for k in 0..leaves.len() {
        let grad = leaves[k].grad_or_zeros();
        let mut num = Vec::with_capacity(grad.len());
        for i in 0..leaves[k].numel() {
            let at = |delta: f64| -> Result<f64> {
                let mut probe: Vec<Tensor> = leaves.iter().map(Tensor::detach).collect();
                let mut d = probe[k].to_vec();
                d[i] += delta;
                probe[k] = Tensor::new(probe[k].shape(), d)?;
                scalar_loss(f(&probe))
            };
            num.push((at(step)? - at(-step)?) / (2.0 * step));
        }
        worst = worst.max(relative_error(&grad, &num));
    }
    Ok(worst)
}
