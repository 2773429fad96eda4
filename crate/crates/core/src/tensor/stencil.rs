//! Fixed (non-learnable) per-channel stencils with replicate padding.

use super::Tensor;
use crate::error::{Error, Result};

pub const SOBEL_X: [f64; 9] = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
pub const SOBEL_Y: [f64; 9] = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];
pub const LAPLACIAN: [f64; 9] = [0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0];

/// Normalized 1-D Gaussian taps truncated at radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Invalid(format!("gaussian sigma must be positive, got {sigma}")));
    }
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let z: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= z);
    Ok(k)
}

/// Replicate-padding source index.
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

impl Tensor {
    /// Applies the same odd-sized `kh × kw` kernel to every channel,
    /// reading out-of-range pixels from the nearest edge.
    pub fn stencil(&self, kernel: &[f64], kh: usize, kw: usize) -> Result<Tensor> {
        if kernel.len() != kh * kw || kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape("stencil", format!("{} taps for odd {kh}x{kw}", kernel.len())));
        }
        let s = self.shape();
        let (h, w) = (s.h(), s.w());
        let (rh, rw) = ((kh / 2) as isize, (kw / 2) as isize);
        // Flattened (output, source, weight) triples for one plane.
        let mut taps: Vec<(usize, usize, f64)> = Vec::with_capacity(h * w * kh * kw);
        for y in 0..h {
            for x in 0..w {
                for i in 0..kh {
                    for j in 0..kw {
                        let k = kernel[i * kw + j];
                        if k == 0.0 {
                            continue;
                        }
                        let sy = clamp_index(y as isize + i as isize - rh, h);
                        let sx = clamp_index(x as isize + j as isize - rw, w);
                        taps.push((y * w + x, sy * w + sx, k));
                    }
                }
            }
        }
        let plane = h * w;
        let planes = s.b() * s.c();
        let mut out = vec![0.0; s.numel()];
        let src = self.data();
        for p in 0..planes {
            let (xs, ys) = (&src[p * plane..(p + 1) * plane], &mut out[p * plane..(p + 1) * plane]);
            for &(o, i, k) in &taps {
                ys[o] += k * xs[i];
            }
        }
        Ok(Tensor::from_op(s, out, "stencil", vec![self.clone()], move |g, _| {
            let mut gx = vec![0.0; g.len()];
            for p in 0..planes {
                let (gs, gd) = (&g[p * plane..(p + 1) * plane], &mut gx[p * plane..(p + 1) * plane]);
                for &(o, i, k) in &taps {
                    gd[i] += k * gs[o];
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Separable Gaussian blur; preserves constant fields.
    pub fn gaussian_blur(&self, sigma: f64) -> Result<Tensor> {
        let k = gaussian_kernel(sigma)?;
        let n = k.len();
        self.stencil(&k, 1, n)?.stencil(&k, n, 1)
    }
}
