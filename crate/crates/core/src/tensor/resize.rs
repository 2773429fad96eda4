//! Bilinear resampling with the half-pixel-centre convention: output pixel
//! `o` samples the input at `(o + 0.5)·in/out − 0.5`, clamped to the valid
//! range. Interpolation is written as `a + f·(b − a)` so constant fields are
//! reproduced exactly and a same-size resize is the identity.

use super::{Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    f: f64,
}

fn axis_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(input - 1);
            Tap { i0, i1, f: src - i0 as f64 }
        })
        .collect()
}

impl Tensor {
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<Tensor> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::Invalid(format!("resize target {out_h}x{out_w} must be positive")));
        }
        let s = self.shape();
        let (h, w) = (s.h(), s.w());
        let ty = axis_taps(h, out_h);
        let tx = axis_taps(w, out_w);
        let out_shape = Shape::new(s.b(), s.c(), out_h, out_w);
        let planes = s.b() * s.c();
        let x = self.data();
        let mut out = vec![0.0; out_shape.numel()];
        for p in 0..planes {
            let src = &x[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * out_h * out_w..(p + 1) * out_h * out_w];
            for (oy, ry) in ty.iter().enumerate() {
                let top = &src[ry.i0 * w..(ry.i0 + 1) * w];
                let bot = &src[ry.i1 * w..(ry.i1 + 1) * w];
                for (ox, rx) in tx.iter().enumerate() {
                    let r0 = top[rx.i0] + rx.f * (top[rx.i1] - top[rx.i0]);
                    let r1 = bot[rx.i0] + rx.f * (bot[rx.i1] - bot[rx.i0]);
                    dst[oy * out_w + ox] = r0 + ry.f * (r1 - r0);
                }
            }
        }
        let n = s.numel();
        Ok(Tensor::from_op(out_shape, out, "resize_bilinear", vec![self.clone()], move |g, _| {
            let mut gx = vec![0.0; n];
            for p in 0..planes {
                let gsrc = &g[p * out_h * out_w..(p + 1) * out_h * out_w];
                let gdst = &mut gx[p * h * w..(p + 1) * h * w];
                for (oy, ry) in ty.iter().enumerate() {
                    for (ox, rx) in tx.iter().enumerate() {
                        let go = gsrc[oy * out_w + ox];
                        let (wy0, wy1) = (1.0 - ry.f, ry.f);
                        let (wx0, wx1) = (1.0 - rx.f, rx.f);
                        gdst[ry.i0 * w + rx.i0] += go * wy0 * wx0;
                        gdst[ry.i0 * w + rx.i1] += go * wy0 * wx1;
                        gdst[ry.i1 * w + rx.i0] += go * wy1 * wx0;
                        gdst[ry.i1 * w + rx.i1] += go * wy1 * wx1;
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Resizes to the spatial size of `like`.
    pub fn resize_like(&self, like: &Tensor) -> Result<Tensor> {
        let s = like.shape();
        self.resize_bilinear(s.h(), s.w())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_is_exact() {
        let x = Tensor::full(Shape::new(1, 2, 3, 5), 0.7);
        for (h, w) in [(1, 1), (6, 10), (7, 3), (3, 5), (13, 17)] {
            let y = x.resize_bilinear(h, w).unwrap();
            assert!(y.data().iter().all(|&v| v == 0.7), "{h}x{w}");
        }
    }

    #[test]
    fn single_sample_broadcasts() {
        let x = Tensor::full(Shape::new(1, 1, 1, 1), 5.0);
        assert_eq!(x.resize_bilinear(4, 4).unwrap().to_vec(), vec![5.0; 16]);
    }

    #[test]
    fn rows_stay_monotone() {
        let x = Tensor::new(Shape::new(1, 1, 2, 2), vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let y = x.resize_bilinear(2, 4).unwrap();
        for r in 0..2 {
            let row: Vec<f64> = (0..4).map(|c| y.at([0, 0, r, c])).collect();
            assert!(row.windows(2).all(|p| p[0] <= p[1]), "{row:?}");
        }
        assert_eq!(y.to_vec(), vec![0.0, 0.25, 0.75, 1.0, 0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn same_size_is_identity() {
        let x = Tensor::new(Shape::new(1, 1, 2, 3), vec![1.0, -2.0, 3.5, 0.25, 9.0, -7.0]).unwrap();
        assert_eq!(x.resize_bilinear(2, 3).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn commutes_with_vertical_flip() {
        let mut rng = crate::tensor::init::rng(2);
        let x = crate::tensor::init::uniform(&mut rng, Shape::new(1, 1, 5, 4), 0.0, 1.0);
        let flip = |t: &Tensor| {
            let s = t.shape();
            Tensor::from_fn(s, |[b, c, h, w]| t.at([b, c, s.h() - 1 - h, w]))
        };
        let a = flip(&x.resize_bilinear(9, 7).unwrap());
        let b = flip(&x).resize_bilinear(9, 7).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_target_rejected() {
        assert!(Tensor::zeros(Shape::new(1, 1, 2, 2)).resize_bilinear(0, 3).is_err());
    }
}
