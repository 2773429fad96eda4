use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{dice, THRESHOLD};
use crate::error::{Error, Result};
use crate::mask::SegMask;
use crate::tensor::Tensor;

/// Below this many pixels the direct O(n²) correlation is cheaper than FFT.
const DIRECT_LIMIT: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorrelationMethod {
    Direct,
    Fft,
    Auto,
}

fn single_plane(op: &'static str, t: &Tensor) -> Result<()> {
    let s = t.shape();
    if s.b() != 1 || s.c() != 1 {
        return Err(Error::shape(op, format!("expected a (1,1,H,W) map, got {s}")));
    }
    Ok(())
}

fn check_stack(op: &'static str, stack: &[Tensor]) -> Result<()> {
    if stack.len() < 2 {
        return Err(Error::Invalid(format!("{op} needs at least two maps, got {}", stack.len())));
    }
    stack.iter().try_for_each(|t| single_plane(op, t))
}

/// Resizes the coarser of a pair to the finer one's grid.
fn to_finer(a: &Tensor, b: &Tensor) -> Result<(Tensor, Tensor)> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.h() * sa.w() >= sb.h() * sb.w() {
        Ok((a.clone(), b.resize_bilinear(sa.h(), sa.w())?))
    } else {
        Ok((a.resize_bilinear(sb.h(), sb.w())?, b.clone()))
    }
}

/// Pearson correlation; 0 when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Mean adjacent-scale Pearson correlation, in percent.
pub fn attention_consistency(stack: &[Tensor]) -> Result<f64> {
    check_stack("attention_consistency", stack)?;
    let mut acc = 0.0;
    for pair in stack.windows(2) {
        let (a, b) = to_finer(&pair[0], &pair[1])?;
        acc += pearson(a.data(), b.data());
    }
    Ok(acc / (stack.len() - 1) as f64 * 100.0)
}

fn direct_max(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let mut best = 0.0f64;
    for dy in -(h as isize - 1)..h as isize {
        for dx in -(w as isize - 1)..w as isize {
            let mut s = 0.0;
            for r in 0..h as isize {
                let rb = r + dy;
                if rb < 0 || rb >= h as isize {
                    continue;
                }
                for c in 0..w as isize {
                    let cb = c + dx;
                    if cb < 0 || cb >= w as isize {
                        continue;
                    }
                    s += a[(r as usize) * w + c as usize] * b[(rb as usize) * w + cb as usize];
                }
            }
            best = best.max(s.abs());
        }
    }
    best
}

fn fft_2d(planner: &mut FftPlanner<f64>, buf: &mut [Complex<f64>], ph: usize, pw: usize, inverse: bool) {
    let row = if inverse { planner.plan_fft_inverse(pw) } else { planner.plan_fft_forward(pw) };
    buf.chunks_exact_mut(pw).for_each(|r| row.process(r));
    let col = if inverse { planner.plan_fft_inverse(ph) } else { planner.plan_fft_forward(ph) };
    let mut tmp = vec![Complex::new(0.0, 0.0); ph];
    for c in 0..pw {
        for r in 0..ph {
            tmp[r] = buf[r * pw + c];
        }
        col.process(&mut tmp);
        for r in 0..ph {
            buf[r * pw + c] = tmp[r];
        }
    }
}

fn fft_max(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    // Padding to (2h-1)×(2w-1) makes the circular correlation equal the
    // zero-padded linear one at every shift.
    let (ph, pw) = (2 * h - 1, 2 * w - 1);
    let pad = |x: &[f64]| {
        let mut out = vec![Complex::new(0.0, 0.0); ph * pw];
        for r in 0..h {
            for c in 0..w {
                out[r * pw + c].re = x[r * w + c];
            }
        }
        out
    };
    let mut planner = FftPlanner::new();
    let (mut fa, mut fb) = (pad(a), pad(b));
    fft_2d(&mut planner, &mut fa, ph, pw, false);
    fft_2d(&mut planner, &mut fb, ph, pw, false);
    let mut prod: Vec<Complex<f64>> = fa.iter().zip(&fb).map(|(x, y)| x.conj() * y).collect();
    fft_2d(&mut planner, &mut prod, ph, pw, true);
    let n = (ph * pw) as f64;
    prod.iter().map(|z| (z.re / n).abs()).fold(0.0, f64::max)
}

/// `max over shifts |Σ a(p)·b(p + s)|` with zero padding outside the grid.
pub fn cross_correlation_max(a: &[f64], b: &[f64], h: usize, w: usize, method: CorrelationMethod) -> Result<f64> {
    if a.len() != h * w || b.len() != h * w || h == 0 || w == 0 {
        return Err(Error::shape("cross_correlation", format!("{} and {} values for {h}x{w}", a.len(), b.len())));
    }
    let direct = match method {
        CorrelationMethod::Direct => true,
        CorrelationMethod::Fft => false,
        CorrelationMethod::Auto => h * w <= DIRECT_LIMIT,
    };
    Ok(if direct { direct_max(a, b, h, w) } else { fft_max(a, b, h, w) })
}

/// Mean adjacent-scale normalised peak cross-correlation. Pair values are
/// clipped to `[0, 1]`; a pair containing a zero-norm map contributes 0.
pub fn scale_coherence(stack: &[Tensor], method: CorrelationMethod) -> Result<f64> {
    check_stack("scale_coherence", stack)?;
    let (h, w) = stack
        .iter()
        .map(|t| (t.shape().h(), t.shape().w()))
        .max_by_key(|&(h, w)| h * w)
        .expect("non-empty");
    let maps = stack.iter().map(|t| t.resize_bilinear(h, w)).collect::<Result<Vec<_>>>()?;
    let mut acc = 0.0;
    for pair in maps.windows(2) {
        let (a, b) = (pair[0].data(), pair[1].data());
        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            continue;
        }
        acc += (cross_correlation_max(a, b, h, w, method)? / (na * nb)).clamp(0.0, 1.0);
    }
    Ok(acc / (maps.len() - 1) as f64)
}

/// Mean per-scale Dice of each prediction binarized at 0.5 and resized to
/// the mask grid.
pub fn multiscale_dice(preds: &[Tensor], gt: &SegMask) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Invalid("multiscale dice needs at least one prediction".into()));
    }
    let (h, w) = gt.dims();
    let mut acc = 0.0;
    for p in preds {
        single_plane("multiscale_dice", p)?;
        let s = p.shape();
        let bin = SegMask::threshold(s.h(), s.w(), p.data(), THRESHOLD)?;
        acc += dice(&bin.resize_nearest(h, w), gt)?;
    }
    Ok(acc / preds.len() as f64)
}
