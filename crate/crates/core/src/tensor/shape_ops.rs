use super::{Shape, Tensor};
use crate::error::{Error, Result};

impl Tensor {
    /// Concatenates along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Invalid("concat of zero tensors".into()))?
            .shape();
        for p in parts {
            let s = p.shape();
            if s.b() != first.b() || s.h() != first.h() || s.w() != first.w() {
                return Err(Error::shape("concat_channels", format!("{s} does not match {first}")));
            }
        }
        let plane = first.plane();
        let chans: Vec<usize> = parts.iter().map(|p| p.shape().c()).collect();
        let total: usize = chans.iter().sum();
        let out_shape = Shape::new(first.b(), total, first.h(), first.w());
        let mut out = Vec::with_capacity(out_shape.numel());
        for b in 0..first.b() {
            for (p, &c) in parts.iter().zip(&chans) {
                out.extend_from_slice(&p.data()[b * c * plane..(b + 1) * c * plane]);
            }
        }
        let nb = first.b();
        let parents: Vec<Tensor> = parts.iter().map(|&t| t.clone()).collect();
        let want: Vec<bool> = parents.iter().map(Tensor::requires_grad).collect();
        Ok(Tensor::from_op(out_shape, out, "concat_channels", parents, move |g, _| {
            let mut grads: Vec<Option<Vec<f64>>> = chans
                .iter()
                .zip(&want)
                .map(|(&c, &w)| w.then(|| Vec::with_capacity(nb * c * plane)))
                .collect();
            let mut off = 0;
            for _ in 0..nb {
                for (gp, &c) in grads.iter_mut().zip(&chans) {
                    if let Some(gp) = gp {
                        gp.extend_from_slice(&g[off..off + c * plane]);
                    }
                    off += c * plane;
                }
            }
            grads
        }))
    }

    /// Channels `[start, start + len)`.
    pub fn narrow_channels(&self, start: usize, len: usize) -> Result<Tensor> {
        let s = self.shape();
        if start + len > s.c() || len == 0 {
            return Err(Error::shape(
                "narrow_channels",
                format!("range {start}..{} outside {} channels", start + len, s.c()),
            ));
        }
        let plane = s.plane();
        let out_shape = Shape::new(s.b(), len, s.h(), s.w());
        let mut out = Vec::with_capacity(out_shape.numel());
        for b in 0..s.b() {
            let base = (b * s.c() + start) * plane;
            out.extend_from_slice(&self.data()[base..base + len * plane]);
        }
        let n = s.numel();
        Ok(Tensor::from_op(out_shape, out, "narrow_channels", vec![self.clone()], move |g, _| {
            let mut gx = vec![0.0; n];
            for b in 0..s.b() {
                let base = (b * s.c() + start) * plane;
                gx[base..base + len * plane].copy_from_slice(&g[b * len * plane..(b + 1) * len * plane]);
            }
            vec![Some(gx)]
        }))
    }

    pub fn reshape(&self, shape: Shape) -> Result<Tensor> {
        if shape.numel() != self.numel() {
            return Err(Error::shape("reshape", format!("{} to {shape}", self.shape())));
        }
        Ok(Tensor::from_op(shape, self.to_vec(), "reshape", vec![self.clone()], |g, _| {
            vec![Some(g.to_vec())]
        }))
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(&self) -> Tensor {
        let s = self.shape();
        let (h, w) = (s.h(), s.w());
        let out_shape = Shape::new(s.b(), s.c(), w, h);
        let planes = s.b() * s.c();
        let x = self.data();
        let mut out = vec![0.0; s.numel()];
        for p in 0..planes {
            for i in 0..h {
                for j in 0..w {
                    out[p * h * w + j * h + i] = x[p * h * w + i * w + j];
                }
            }
        }
        Tensor::from_op(out_shape, out, "transpose_last2", vec![self.clone()], move |g, _| {
            let mut gx = vec![0.0; g.len()];
            for p in 0..planes {
                for i in 0..h {
                    for j in 0..w {
                        gx[p * h * w + i * w + j] = g[p * h * w + j * h + i];
                    }
                }
            }
            vec![Some(gx)]
        })
    }

    /// `(B, C, H, W)` to token rows `(B, 1, H·W, C)`.
    pub fn to_tokens(&self) -> Tensor {
        let s = self.shape();
        self.reshape(Shape::new(s.b(), 1, s.c(), s.plane()))
            .expect("same numel")
            .transpose_last2()
    }

    /// Inverse of [`Tensor::to_tokens`].
    pub fn from_tokens(&self, h: usize, w: usize) -> Result<Tensor> {
        let s = self.shape();
        if s.c() != 1 || s.h() != h * w {
            return Err(Error::shape("from_tokens", format!("{s} is not a {h}x{w} token grid")));
        }
        self.transpose_last2().reshape(Shape::new(s.b(), s.w(), h, w))
    }

    /// Flip about the horizontal axis (row `r` to `H − 1 − r`).
    pub fn vflip(&self) -> Tensor {
        let s = self.shape();
        let (h, w) = (s.h(), s.w());
        let planes = s.b() * s.c();
        let flip = move |src: &[f64]| {
            let mut out = vec![0.0; src.len()];
            for p in 0..planes {
                for r in 0..h {
                    let from = (p * h + r) * w;
                    let to = (p * h + h - 1 - r) * w;
                    out[to..to + w].copy_from_slice(&src[from..from + w]);
                }
            }
            out
        };
        let data = flip(self.data());
        Tensor::from_op(s, data, "vflip", vec![self.clone()], move |g, _| vec![Some(flip(g))])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_narrow_round_trips_with_grad() {
        let a = Tensor::parameter(Shape::new(2, 1, 1, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::parameter(Shape::new(2, 2, 1, 2), (5..13).map(f64::from).collect()).unwrap();
        let c = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), Shape::new(2, 3, 1, 2));
        assert_eq!(c.to_vec(), vec![1.0, 2.0, 5.0, 6.0, 7.0, 8.0, 3.0, 4.0, 9.0, 10.0, 11.0, 12.0]);
        let back = c.narrow_channels(1, 2).unwrap();
        assert_eq!(back.to_vec(), b.to_vec());
        back.sum_all().backward().unwrap();
        assert_eq!(a.grad_or_zeros(), vec![0.0; 4]);
        assert_eq!(b.grad().unwrap(), vec![1.0; 8]);
    }

    #[test]
    fn tokens_round_trip() {
        let x = Tensor::from_fn(Shape::new(2, 3, 2, 2), |[b, c, h, w]| (b * 100 + c * 10 + h * 2 + w) as f64);
        let t = x.to_tokens();
        assert_eq!(t.shape(), Shape::new(2, 1, 4, 3));
        assert_eq!(t.at([0, 0, 1, 2]), 21.0);
        assert_eq!(t.from_tokens(2, 2).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn vflip_is_involution() {
        let x = Tensor::from_fn(Shape::new(1, 2, 3, 2), |[_, c, h, w]| (c * 6 + h * 2 + w) as f64);
        assert_eq!(x.vflip().at([0, 1, 0, 1]), x.at([0, 1, 2, 1]));
        assert_eq!(x.vflip().vflip().to_vec(), x.to_vec());
    }
}
