//! Binary 2-D masks.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Row-major grid of {0, 1}.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SegMask {
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl SegMask {
    pub fn new(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::shape("SegMask", format!("{} values for {h}x{w}", data.len())));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Invalid(format!("mask value {v} is not binary")));
        }
        Ok(SegMask { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        SegMask {
            h,
            w,
            data: vec![0; h * w],
        }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                data.push(f(r, c) as u8);
            }
        }
        SegMask { h, w, data }
    }

    /// Positions where `value ≥ threshold`.
    pub fn threshold(h: usize, w: usize, values: &[f64], threshold: f64) -> Result<Self> {
        if values.len() != h * w {
            return Err(Error::shape("SegMask::threshold", format!("{} values for {h}x{w}", values.len())));
        }
        Ok(SegMask {
            h,
            w,
            data: values.iter().map(|&v| (v >= threshold) as u8).collect(),
        })
    }

    /// Binarizes every plane of a `(B, 1, H, W)` tensor at `threshold`.
    pub fn batch_from_tensor(t: &Tensor, threshold: f64) -> Result<Vec<Self>> {
        let s = t.shape();
        if s.c() != 1 {
            return Err(Error::shape("SegMask::batch_from_tensor", format!("{s} is not single-channel")));
        }
        (0..s.b())
            .map(|b| Self::threshold(s.h(), s.w(), t.plane(b, 0), threshold))
            .collect()
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.w + c] == 1
    }

    pub fn set(&mut self, r: usize, c: usize, on: bool) {
        self.data[r * self.w + c] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn intersection_count(&self, other: &SegMask) -> usize {
        self.data.iter().zip(&other.data).filter(|(a, b)| **a == 1 && **b == 1).count()
    }

    pub fn is_disjoint(&self, other: &SegMask) -> bool {
        self.intersection_count(other) == 0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// `(1, 1, H, W)` constant tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(Shape::new(1, 1, self.h, self.w), self.to_f64()).expect("sized")
    }

    /// Stacks masks into a `(B, 1, H, W)` tensor.
    pub fn stack(masks: &[SegMask]) -> Result<Tensor> {
        let first = masks.first().ok_or_else(|| Error::Invalid("no masks to stack".into()))?;
        let mut data = Vec::with_capacity(first.len() * masks.len());
        for m in masks {
            if m.dims() != first.dims() {
                return Err(Error::shape("SegMask::stack", format!("{:?} vs {:?}", m.dims(), first.dims())));
            }
            data.extend(m.data.iter().map(|&v| v as f64));
        }
        Tensor::new(Shape::new(masks.len(), 1, first.h, first.w), data)
    }

    /// Row `r` becomes row `H − 1 − r`.
    pub fn vflip(&self) -> SegMask {
        let mut data = Vec::with_capacity(self.data.len());
        for r in (0..self.h).rev() {
            data.extend_from_slice(&self.data[r * self.w..(r + 1) * self.w]);
        }
        SegMask { h: self.h, w: self.w, data }
    }

    /// Nearest-neighbour resize using pixel centres.
    pub fn resize_nearest(&self, h: usize, w: usize) -> SegMask {
        let src = |o: usize, n_out: usize, n_in: usize| ((o * 2 + 1) * n_in / (2 * n_out)).min(n_in - 1);
        SegMask::from_fn(h, w, |r, c| self.get(src(r, h, self.h), src(c, w, self.w)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_binary() {
        assert!(SegMask::new(1, 2, vec![0, 2]).is_err());
    }

    #[test]
    fn vflip_moves_rows() {
        let m = SegMask::from_fn(4, 3, |r, c| r == 0 && c == 1);
        let f = m.vflip();
        assert!(f.get(3, 1));
        assert_eq!(f.count(), 1);
        assert_eq!(f.vflip(), m);
    }

    #[test]
    fn nearest_resize_keeps_blocks() {
        let m = SegMask::from_fn(2, 2, |r, c| r == c);
        let big = m.resize_nearest(4, 4);
        assert_eq!(big.count(), 8);
        assert_eq!(big.resize_nearest(2, 2), m);
    }

    #[test]
    fn threshold_is_inclusive() {
        let m = SegMask::threshold(1, 3, &[0.49, 0.5, 0.51], 0.5).unwrap();
        assert_eq!(m.data(), &[0, 1, 1]);
    }
}
