use super::{Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Avg,
    Max,
    GlobalAvg,
    GlobalMax,
}

impl Tensor {
    /// Non-overlapping pooling. `window` is ignored by the global kinds,
    /// which return `(B, C, 1, 1)`.
    pub fn pool(&self, kind: PoolKind, window: usize) -> Result<Tensor> {
        let s = self.shape();
        match kind {
            PoolKind::GlobalAvg => self.mean_to(Shape::new(s.b(), s.c(), 1, 1)),
            PoolKind::GlobalMax => self.max_to(Shape::new(s.b(), s.c(), 1, 1)),
            PoolKind::Avg => self.window_pool((window, window), false),
            PoolKind::Max => self.window_pool((window, window), true),
        }
    }

    /// Average pooling down to `(out_h, out_w)`; both must divide the input.
    pub fn adaptive_avg_pool(&self, out_h: usize, out_w: usize) -> Result<Tensor> {
        let s = self.shape();
        if out_h == 0 || out_w == 0 || s.h() % out_h != 0 || s.w() % out_w != 0 {
            return Err(Error::shape(
                "adaptive_avg_pool",
                format!("{}x{} is not divisible into {out_h}x{out_w}", s.h(), s.w()),
            ));
        }
        self.window_pool((s.h() / out_h, s.w() / out_w), false)
    }

    fn window_pool(&self, win: (usize, usize), is_max: bool) -> Result<Tensor> {
        let s = self.shape();
        let (wh, ww) = win;
        if wh == 0 || ww == 0 || s.h() % wh != 0 || s.w() % ww != 0 {
            return Err(Error::shape(
                "pool",
                format!("window {wh}x{ww} does not divide spatial dims {}x{}", s.h(), s.w()),
            ));
        }
        if win == (1, 1) {
            return Ok(self.clone());
        }
        let (ho, wo) = (s.h() / wh, s.w() / ww);
        let out_shape = Shape::new(s.b(), s.c(), ho, wo);
        let planes = s.b() * s.c();
        let mut out = vec![0.0; out_shape.numel()];
        // Source index feeding each output (max) or unused (avg).
        let mut arg = if is_max { vec![0usize; out.len()] } else { Vec::new() };
        let x = self.data();
        let area = (wh * ww) as f64;
        for p in 0..planes {
            for oh in 0..ho {
                for ow in 0..wo {
                    let o = (p * ho + oh) * wo + ow;
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    let mut acc = 0.0;
                    for i in 0..wh {
                        for j in 0..ww {
                            let idx = (p * s.h() + oh * wh + i) * s.w() + ow * ww + j;
                            let v = x[idx];
                            acc += v;
                            if v > best || (i == 0 && j == 0) {
                                best = v;
                                best_i = idx;
                            }
                        }
                    }
                    if is_max {
                        out[o] = best;
                        arg[o] = best_i;
                    } else {
                        out[o] = acc / area;
                    }
                }
            }
        }
        let n = s.numel();
        let op = if is_max { "max_pool" } else { "avg_pool" };
        Ok(Tensor::from_op(out_shape, out, op, vec![self.clone()], move |g, _| {
            let mut gx = vec![0.0; n];
            if is_max {
                for (o, &i) in arg.iter().enumerate() {
                    gx[i] += g[o];
                }
            } else {
                for p in 0..planes {
                    for oh in 0..ho {
                        for ow in 0..wo {
                            let go = g[(p * ho + oh) * wo + ow] / area;
                            for i in 0..wh {
                                let row = (p * s.h() + oh * wh + i) * s.w() + ow * ww;
                                for v in &mut gx[row..row + ww] {
                                    *v += go;
                                }
                            }
                        }
                    }
                }
            }
            vec![Some(gx)]
        }))
    }
}
