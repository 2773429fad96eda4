use super::conv::gemm;
use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Row-wise softmax over consecutive chunks of `row_len`. Rejects non-finite
/// input rather than propagating NaN.
pub fn softmax_rows(data: &[f64], row_len: usize) -> Result<Vec<f64>> {
    if row_len == 0 || data.len() % row_len != 0 {
        return Err(Error::shape("softmax", format!("{} values in rows of {row_len}", data.len())));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let mut out = vec![0.0; data.len()];
    for (src, dst) in data.chunks(row_len).zip(out.chunks_mut(row_len)) {
        let m = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - m).exp();
            z += *d;
        }
        for d in dst.iter_mut() {
            *d /= z;
        }
    }
    Ok(out)
}

impl Tensor {
    /// Batched matrix product over the last two axes:
    /// `(B, C, N, K) × (B, C, K, M) → (B, C, N, M)`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.shape(), rhs.shape());
        if a.b() != b.b() || a.c() != b.c() || a.w() != b.h() {
            return Err(Error::shape("matmul", format!("{a} x {b}")));
        }
        let (n, k, m) = (a.h(), a.w(), b.w());
        let batches = a.b() * a.c();
        let out_shape = Shape::new(a.b(), a.c(), n, m);
        let mut out = vec![0.0; out_shape.numel()];
        for p in 0..batches {
            gemm(
                n,
                k,
                m,
                &self.data()[p * n * k..],
                (k as isize, 1),
                &rhs.data()[p * k * m..],
                (m as isize, 1),
                0.0,
                &mut out[p * n * m..(p + 1) * n * m],
            );
        }
        let (want_a, want_b) = (self.requires_grad(), rhs.requires_grad());
        let (lhs_c, rhs_c) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(out_shape, out, "matmul", vec![self.clone(), rhs.clone()], move |g, _| {
            let ga = want_a.then(|| {
                // dA = G · Bᵀ
                let mut ga = vec![0.0; batches * n * k];
                for p in 0..batches {
                    gemm(
                        n,
                        m,
                        k,
                        &g[p * n * m..],
                        (m as isize, 1),
                        &rhs_c.data()[p * k * m..],
                        (1, m as isize),
                        0.0,
                        &mut ga[p * n * k..(p + 1) * n * k],
                    );
                }
                ga
            });
            let gb = want_b.then(|| {
                // dB = Aᵀ · G
                let mut gb = vec![0.0; batches * k * m];
                for p in 0..batches {
                    gemm(
                        k,
                        n,
                        m,
                        &lhs_c.data()[p * n * k..],
                        (1, k as isize),
                        &g[p * n * m..],
                        (m as isize, 1),
                        0.0,
                        &mut gb[p * k * m..(p + 1) * k * m],
                    );
                }
                gb
            });
            vec![ga, gb]
        }))
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&self) -> Result<Tensor> {
        let w = self.shape().w();
        let out = softmax_rows(self.data(), w)?;
        Ok(Tensor::from_op(self.shape(), out, "softmax", vec![self.clone()], move |g, y| {
            let mut gx = vec![0.0; g.len()];
            for ((gr, yr), dst) in g.chunks(w).zip(y.chunks(w)).zip(gx.chunks_mut(w)) {
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for ((d, &gi), &yi) in dst.iter_mut().zip(gr).zip(yr) {
                    *d = yi * (gi - dot);
                }
            }
            vec![Some(gx)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Tensor::new(Shape::new(1, 1, 2, 3), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::new(Shape::new(1, 1, 3, 2), vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().to_vec(), vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_grads_match_closed_form() {
        let a = Tensor::parameter(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::parameter(Shape::new(1, 1, 2, 2), vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        a.matmul(&b).unwrap().sum_all().backward().unwrap();
        // d/dA sum(AB) = 1·Bᵀ row sums; d/dB = column sums of A.
        assert_eq!(a.grad().unwrap(), vec![11.0, 15.0, 11.0, 15.0]);
        assert_eq!(b.grad().unwrap(), vec![4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let s = softmax_rows(&[0.0; 4], 4).unwrap();
        assert_eq!(s, vec![0.25; 4]);
    }

    #[test]
    fn softmax_is_shift_stable() {
        let s = softmax_rows(&[1000.0, 1000.0], 2).unwrap();
        assert_eq!(s, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_rejects_nan() {
        assert!(matches!(softmax_rows(&[0.0, f64::NAN], 2), Err(Error::NonFinite(_))));
    }

    #[test]
    fn softmax_grad_sums_to_zero() {
        let x = Tensor::parameter(Shape::new(1, 1, 1, 3), vec![0.1, -0.5, 2.0]).unwrap();
        let w = Tensor::new(Shape::new(1, 1, 1, 3), vec![1.0, 2.0, 3.0]).unwrap();
        x.softmax_last().unwrap().mul(&w).unwrap().sum_all().backward().unwrap();
        let g: f64 = x.grad().unwrap().iter().sum();
        assert!(g.abs() < 1e-14);
    }
}
