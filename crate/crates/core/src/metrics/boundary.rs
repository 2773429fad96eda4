use crate::error::{Error, Result};
use crate::mask::SegMask;
use crate::tensor::{Shape, Tensor, SOBEL_X, SOBEL_Y};

pub const DEFAULT_BF1_TOLERANCE: f64 = 2.0;
/// Sobel magnitudes above this fraction of the map's maximum are edges.
pub const EDGE_FRACTION: f64 = 0.2;
/// Gradient peaks below this are resampling round-off, not edges.
const EDGE_FLOOR: f64 = 1e-9;

/// Positives with at least one 4-neighbour that is negative or off-image.
pub fn boundary_pixels(m: &SegMask) -> Vec<(usize, usize)> {
    let (h, w) = m.dims();
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if !m.get(r, c) {
                continue;
            }
            let edge = r == 0 || c == 0 || r + 1 == h || c + 1 == w || !m.get(r - 1, c) || !m.get(r + 1, c) || !m.get(r, c - 1) || !m.get(r, c + 1);
            if edge {
                out.push((r, c));
            }
        }
    }
    out
}

/// Fraction of `from` within Euclidean distance `tol` of some point of `to`.
fn matched_fraction(from: &[(usize, usize)], to: &[(usize, usize)], tol: f64) -> f64 {
    let t2 = tol * tol;
    let hits = from
        .iter()
        .filter(|&&(r, c)| {
            to.iter().any(|&(y, x)| {
                let (dy, dx) = (r as f64 - y as f64, c as f64 - x as f64);
                dy * dy + dx * dx <= t2
            })
        })
        .count();
    hits as f64 / from.len() as f64
}

/// Harmonic mean of boundary precision and recall under distance tolerance
/// `tol`. Both boundaries empty gives 1; exactly one empty gives 0.
pub fn boundary_f1(pred: &SegMask, gt: &SegMask, tol: f64) -> Result<f64> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape("boundary_f1", format!("{:?} vs {:?}", pred.dims(), gt.dims())));
    }
    if !(tol >= 0.0) {
        return Err(Error::Invalid(format!("boundary tolerance {tol} must be non-negative")));
    }
    let (bp, bg) = (boundary_pixels(pred), boundary_pixels(gt));
    match (bp.is_empty(), bg.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let p = matched_fraction(&bp, &bg, tol);
    let r = matched_fraction(&bg, &bp, tol);
    Ok(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
}

/// Sobel magnitude (replicate padding) above `EDGE_FRACTION · max`.
pub fn sobel_edges(values: &[f64], h: usize, w: usize) -> Result<SegMask> {
    let t = Tensor::new(Shape::new(1, 1, h, w), values.to_vec())?;
    let gx = t.stencil(&SOBEL_X, 3, 3)?;
    let gy = t.stencil(&SOBEL_Y, 3, 3)?;
    let mag: Vec<f64> = gx.data().iter().zip(gy.data()).map(|(a, b)| a.hypot(*b)).collect();
    let max = mag.iter().cloned().fold(0.0, f64::max);
    let cut = EDGE_FRACTION * max;
    Ok(SegMask::from_fn(h, w, |r, c| max > EDGE_FLOOR && mag[r * w + c] > cut))
}

/// `|A ∩ B| / |A ∪ B|`, 1 when both are empty.
pub fn edge_jaccard(a: &SegMask, b: &SegMask) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::shape("edge_jaccard", format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    let inter = a.intersection_count(b);
    let union = a.count() + b.count() - inter;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Mean edge-set Jaccard between each attention map (resized to the mask)
/// and the ground-truth edges.
pub fn boundary_preservation(stack: &[Tensor], gt: &SegMask) -> Result<f64> {
    if stack.is_empty() {
        return Err(Error::Invalid("boundary preservation needs at least one map".into()));
    }
    let (h, w) = gt.dims();
    let g_edges = sobel_edges(&gt.to_f64(), h, w)?;
    let mut acc = 0.0;
    for a in stack {
        let a = a.resize_bilinear(h, w)?;
        acc += edge_jaccard(&sobel_edges(a.plane(0, 0), h, w)?, &g_edges)?;
    }
    Ok(acc / stack.len() as f64)
}
