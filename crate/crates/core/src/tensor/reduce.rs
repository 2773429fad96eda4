//! Reductions onto a target shape whose axes are either kept or collapsed to 1.

use super::{Shape, Tensor};
use crate::error::{Error, Result};

fn check_target(op: &'static str, from: Shape, to: Shape) -> Result<()> {
    for d in 0..4 {
        if to.0[d] != from.0[d] && to.0[d] != 1 {
            return Err(Error::shape(op, format!("cannot reduce {from} to {to}")));
        }
    }
    Ok(())
}

/// Index into the reduced tensor for every source element, in source order.
fn target_index(from: Shape, to: Shape) -> impl Iterator<Item = usize> {
    let ts = to.strides();
    let keep: [usize; 4] = std::array::from_fn(|d| if to.0[d] == 1 { 0 } else { ts[d] });
    let [nb, nc, nh, nw] = from.0;
    (0..nb).flat_map(move |b| {
        (0..nc).flat_map(move |c| {
            (0..nh).flat_map(move |h| (0..nw).map(move |w| b * keep[0] + c * keep[1] + h * keep[2] + w * keep[3]))
        })
    })
}

impl Tensor {
    pub fn sum_all(&self) -> Tensor {
        self.sum_to(Shape::scalar()).expect("scalar target is always valid")
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Sums over every axis where `to` has extent 1.
    pub fn sum_to(&self, to: Shape) -> Result<Tensor> {
        let from = self.shape();
        check_target("sum_to", from, to)?;
        if from == to {
            return Ok(self.clone());
        }
        let mut data = vec![0.0; to.numel()];
        for (v, j) in self.data().iter().zip(target_index(from, to)) {
            data[j] += v;
        }
        Ok(Tensor::from_op(to, data, "sum_to", vec![self.clone()], move |g, _| {
            let gx = target_index(from, to).map(|j| g[j]).collect();
            vec![Some(gx)]
        }))
    }

    pub fn mean_to(&self, to: Shape) -> Result<Tensor> {
        let from = self.shape();
        check_target("mean_to", from, to)?;
        let count = (from.numel() / to.numel()) as f64;
        Ok(self.sum_to(to)?.scale(1.0 / count))
    }

    /// Per-image sum over `(C, H, W)`: shape `(B, 1, 1, 1)`.
    pub fn sum_per_image(&self) -> Tensor {
        self.sum_to(Shape::new(self.shape().b(), 1, 1, 1)).expect("valid target")
    }

    /// Mean over channels: `(B, 1, H, W)`.
    pub fn mean_channels(&self) -> Tensor {
        let s = self.shape();
        self.mean_to(Shape::new(s.b(), 1, s.h(), s.w())).expect("valid target")
    }

    /// Maximum over collapsed axes; the gradient goes to the first maximiser.
    pub fn max_to(&self, to: Shape) -> Result<Tensor> {
        self.extreme_to(to, true)
    }

    /// Minimum over collapsed axes; the gradient goes to the first minimiser.
    pub fn min_to(&self, to: Shape) -> Result<Tensor> {
        self.extreme_to(to, false)
    }

    fn extreme_to(&self, to: Shape, is_max: bool) -> Result<Tensor> {
        let from = self.shape();
        let op = if is_max { "max_to" } else { "min_to" };
        check_target(op, from, to)?;
        let init = if is_max { f64::NEG_INFINITY } else { f64::INFINITY };
        let mut data = vec![init; to.numel()];
        let mut arg = vec![usize::MAX; to.numel()];
        for (i, (v, j)) in self.data().iter().zip(target_index(from, to)).enumerate() {
            let better = if is_max { *v > data[j] } else { *v < data[j] };
            if better || arg[j] == usize::MAX {
                data[j] = *v;
                arg[j] = i;
            }
        }
        let n = from.numel();
        Ok(Tensor::from_op(to, data, op, vec![self.clone()], move |g, _| {
            let mut gx = vec![0.0; n];
            for (j, &i) in arg.iter().enumerate() {
                gx[i] += g[j];
            }
            vec![Some(gx)]
        }))
    }
}
