//! Synthetic endoscopy-like scenes: smooth mucosa, elliptical polyps with
//! soft intensity bumps, and bright fold ridges that look similar but are
//! labelled as background.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Sample;
use crate::error::{Error, Result};
use crate::mask::SegMask;
use crate::tensor::{Shape, Tensor};

pub const MIN_BLOB_AREA: usize = 50;
/// Largest polyp area at 64×64; scales with the image area.
const MAX_BLOB_AREA_64: f64 = 400.0;
const MAX_TRIES: usize = 100;
const PIXEL_NOISE: f64 = 0.02;

fn max_blob_area(size: usize) -> usize {
    (MAX_BLOB_AREA_64 * (size as f64 / 64.0).powi(2)).round() as usize
}

/// Bilinearly upsampled coarse random grid in `[0, 1]`.
fn smooth_noise(rng: &mut impl Rng, size: usize, cells: usize) -> Result<Vec<f64>> {
    let coarse: Vec<f64> = (0..cells * cells).map(|_| rng.random::<f64>()).collect();
    let t = Tensor::new(Shape::new(1, 1, cells, cells), coarse)?;
    Ok(t.resize_bilinear(size, size)?.to_vec())
}

struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    /// Squared normalised radius; inside when `< 1`.
    fn rho2(&self, y: f64, x: f64) -> f64 {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2)
    }
}

fn sample_ellipse(rng: &mut impl Rng, size: usize) -> Option<(Ellipse, SegMask)> {
    let (lo, hi) = (MIN_BLOB_AREA as f64, max_blob_area(size) as f64);
    for _ in 0..MAX_TRIES {
        // Log-uniform area so small and large polyps are both common.
        let area = (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp();
        let aspect = rng.random_range(0.6..1.0f64);
        let a = (area / (std::f64::consts::PI * aspect)).sqrt();
        let b = a * aspect;
        let margin = a + 1.0;
        if 2.0 * margin >= size as f64 {
            continue;
        }
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let e = Ellipse {
            cy: rng.random_range(margin..size as f64 - margin),
            cx: rng.random_range(margin..size as f64 - margin),
            a,
            b,
            cos: theta.cos(),
            sin: theta.sin(),
        };
        let m = SegMask::from_fn(size, size, |r, c| e.rho2(r as f64 + 0.5, c as f64 + 0.5) < 1.0);
        if (MIN_BLOB_AREA..=max_blob_area(size)).contains(&m.count()) {
            return Some((e, m));
        }
    }
    None
}

/// Pixels within `half_width` of a gently curved polyline across the image.
fn sample_ridge(rng: &mut impl Rng, size: usize) -> SegMask {
    let s = size as f64;
    let theta = rng.random_range(0.0..std::f64::consts::PI);
    let (dy, dx) = (theta.sin(), theta.cos());
    let (ny, nx) = (-dx, dy);
    let (cy, cx) = (rng.random_range(0.2 * s..0.8 * s), rng.random_range(0.2 * s..0.8 * s));
    let len = rng.random_range(0.4 * s..0.9 * s);
    let bend = rng.random_range(-0.15..0.15) * s;
    let half_width = rng.random_range(0.8..1.6) * (s / 64.0).max(1.0);
    let steps = (4.0 * len) as usize;
    let mut m = SegMask::zeros(size, size);
    let r = half_width.ceil() as isize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64 - 0.5;
        let off = bend * (1.0 - 4.0 * t * t);
        let py = cy + t * len * dy + off * ny;
        let px = cx + t * len * dx + off * nx;
        for oy in -r..=r {
            for ox in -r..=r {
                let (yy, xx) = (py.floor() as isize + oy, px.floor() as isize + ox);
                if yy < 0 || xx < 0 || yy >= size as isize || xx >= size as isize {
                    continue;
                }
                let d2 = (yy as f64 + 0.5 - py).powi(2) + (xx as f64 + 0.5 - px).powi(2);
                if d2 <= half_width * half_width {
                    m.set(yy as usize, xx as usize, true);
                }
            }
        }
    }
    m
}

/// One synthetic sample. Polyps are filled ellipses whose pixel areas lie in
/// `[50, 400·(size/64)²]`; ridges never touch a polyp (each is redrawn up to
/// 100 times, then dropped).
pub fn synth_scene(rng: &mut impl Rng, size: usize, n_blobs: usize, n_ridges: usize) -> Result<Sample> {
    if size < 32 {
        return Err(Error::Invalid(format!("synthetic scenes need size >= 32, got {size}")));
    }
    let n = size * size;
    let base = [
        rng.random_range(0.55..0.75),
        rng.random_range(0.30..0.42),
        rng.random_range(0.25..0.38),
    ];
    let shade = smooth_noise(rng, size, 4)?;
    let texture = smooth_noise(rng, size, (size / 8).max(4))?;
    let mut img = vec![0.0; 3 * n];
    for c in 0..3 {
        for i in 0..n {
            img[c * n + i] = base[c] * (0.75 + 0.35 * shade[i]) + 0.05 * (texture[i] - 0.5);
        }
    }

    let mut mask = SegMask::zeros(size, size);
    for _ in 0..n_blobs {
        let Some((e, m)) = sample_ellipse(rng, size) else {
            continue;
        };
        let gain = rng.random_range(0.18..0.3);
        let tint = [1.0, 0.55, 0.35];
        for r in 0..size {
            for col in 0..size {
                let rho2 = e.rho2(r as f64 + 0.5, col as f64 + 0.5);
                if rho2 < 1.0 {
                    let bump = gain * (1.0 - 0.6 * rho2);
                    for (c, t) in tint.iter().enumerate() {
                        img[c * n + r * size + col] += bump * t;
                    }
                }
            }
        }
        for i in 0..size {
            for j in 0..size {
                if m.get(i, j) {
                    mask.set(i, j, true);
                }
            }
        }
    }

    let mut hf = SegMask::zeros(size, size);
    for _ in 0..n_ridges {
        let ridge = (0..MAX_TRIES).map(|_| sample_ridge(rng, size)).find(|m| m.is_disjoint(&mask));
        let Some(ridge) = ridge else { continue };
        let gain = rng.random_range(0.15..0.25);
        for i in 0..n {
            if ridge.data()[i] == 1 {
                for c in 0..3 {
                    img[c * n + i] += gain * [0.9, 0.6, 0.5][c];
                }
                hf.set(i / size, i % size, true);
            }
        }
    }

    let noise = Normal::new(0.0, PIXEL_NOISE).expect("positive std");
    for v in img.iter_mut() {
        *v = (*v + noise.sample(rng)).clamp(0.0, 1.0);
    }
    let image = Tensor::new(Shape::new(1, 3, size, size), img)?;
    Sample::new(image, mask, Some(hf), "synth")
}
