//! Broadcasting binary ops and pointwise unary ops.

use super::{Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

fn broadcast_shape(op: &'static str, a: Shape, b: Shape) -> Result<Shape> {
    let mut out = [0; 4];
    for d in 0..4 {
        let (x, y) = (a.0[d], b.0[d]);
        out[d] = if x == y {
            x
        } else if x == 1 {
            y
        } else if y == 1 {
            x
        } else {
            return Err(Error::shape(op, format!("cannot broadcast {a} with {b}")));
        };
    }
    Ok(Shape(out))
}

/// Strides of `s` viewed inside the broadcast shape `out` (0 on broadcast axes).
fn broadcast_strides(s: Shape, out: Shape) -> [usize; 4] {
    let st = s.strides();
    let mut r = [0; 4];
    for d in 0..4 {
        r[d] = if s.0[d] == out.0[d] { st[d] } else { 0 };
    }
    r
}

/// Calls `f(out_index, a_index, b_index)` for every output element.
fn for_each_broadcast(out: Shape, sa: [usize; 4], sb: [usize; 4], mut f: impl FnMut(usize, usize, usize)) {
    let [nb, nc, nh, nw] = out.0;
    let mut o = 0;
    for ib in 0..nb {
        for ic in 0..nc {
            for ih in 0..nh {
                let ia = ib * sa[0] + ic * sa[1] + ih * sa[2];
                let jb = ib * sb[0] + ic * sb[1] + ih * sb[2];
                for iw in 0..nw {
                    f(o, ia + iw * sa[3], jb + iw * sb[3]);
                    o += 1;
                }
            }
        }
    }
}

impl Tensor {
    fn binary(&self, other: &Tensor, op: BinOp) -> Result<Tensor> {
        let name = match op {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        };
        let (sa, sb) = (self.shape(), other.shape());
        let out = broadcast_shape(name, sa, sb)?;
        let (ad, bd) = (self.data(), other.data());
        let mut data = vec![0.0; out.numel()];
        if sa == sb {
            for ((o, &x), &y) in data.iter_mut().zip(ad).zip(bd) {
                *o = apply(op, x, y);
            }
        } else {
            let (stra, strb) = (broadcast_strides(sa, out), broadcast_strides(sb, out));
            for_each_broadcast(out, stra, strb, |o, i, j| data[o] = apply(op, ad[i], bd[j]));
        }

        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(out, data, name, vec![self.clone(), other.clone()], move |g, _| {
            let (sa, sb) = (a.shape(), b.shape());
            let (stra, strb) = (broadcast_strides(sa, out), broadcast_strides(sb, out));
            let mut ga = a.requires_grad().then(|| vec![0.0; sa.numel()]);
            let mut gb = b.requires_grad().then(|| vec![0.0; sb.numel()]);
            let (ad, bd) = (a.data(), b.data());
            for_each_broadcast(out, stra, strb, |o, i, j| {
                let go = g[o];
                let (x, y) = (ad[i], bd[j]);
                let (dx, dy) = match op {
                    BinOp::Add => (go, go),
                    BinOp::Sub => (go, -go),
                    BinOp::Mul => (go * y, go * x),
                    BinOp::Div => (go / y, -go * x / (y * y)),
                };
                if let Some(ga) = ga.as_mut() {
                    ga[i] += dx;
                }
                if let Some(gb) = gb.as_mut() {
                    gb[j] += dy;
                }
            });
            vec![ga, gb]
        }))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinOp::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinOp::Sub)
    }

    /// Hadamard product with broadcasting.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinOp::Mul)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinOp::Div)
    }

    /// Pointwise map with derivative `df(x, y)` where `y = f(x)`.
    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| f(x)).collect();
        let x = self.clone();
        Tensor::from_op(self.shape(), data, op, vec![self.clone()], move |g, y| {
            let gx = g
                .iter()
                .zip(x.data())
                .zip(y)
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect();
            vec![Some(gx)]
        })
    }

    pub fn relu(&self) -> Tensor {
        self.unary("relu", |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary("sigmoid", sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn exp(&self) -> Tensor {
        self.unary("exp", f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Tensor {
        self.unary("ln", f64::ln, |x, _| 1.0 / x)
    }

    /// Square root; the derivative at 0 is taken as 0.
    pub fn sqrt(&self) -> Tensor {
        self.unary("sqrt", f64::sqrt, |_, y| if y > 0.0 { 0.5 / y } else { 0.0 })
    }

    pub fn abs(&self) -> Tensor {
        self.unary("abs", f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn square(&self) -> Tensor {
        self.unary("square", |x| x * x, |x, _| 2.0 * x)
    }

    pub fn recip(&self) -> Tensor {
        self.unary("recip", |x| 1.0 / x, |_, y| -y * y)
    }

    /// Clamp into `[lo, hi]`; gradient passes only strictly inside.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.unary(
            "clamp",
            move |x| x.clamp(lo, hi),
            move |x, _| if x > lo && x < hi { 1.0 } else { 0.0 },
        )
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.unary("scale", move |x| k * x, move |_, _| k)
    }

    pub fn add_scalar(&self, k: f64) -> Tensor {
        self.unary("add_scalar", move |x| x + k, |_, _| 1.0)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    /// `1 - x`.
    pub fn one_minus(&self) -> Tensor {
        self.unary("one_minus", |x| 1.0 - x, |_, _| -1.0)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn apply(op: BinOp, x: f64, y: f64) -> f64 {
    match op {
        BinOp::Add => x + y,
        BinOp::Sub => x - y,
        BinOp::Mul => x * y,
        BinOp::Div => x / y,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, v: &[f64]) -> Tensor {
        Tensor::parameter(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn activations_basic_values() {
        let x = Tensor::new(Shape::new(1, 1, 1, 3), vec![-3.0, 0.0, 3.0]).unwrap();
        assert_eq!(x.relu().to_vec(), vec![0.0, 0.0, 3.0]);
        assert_eq!(x.sigmoid().data()[1], 0.5);
        assert!(x.sigmoid().data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn broadcast_channel_gate() {
        let x = t(Shape::new(1, 2, 1, 2), &[1.0, 2.0, 3.0, 4.0]);
        let g = t(Shape::new(1, 2, 1, 1), &[10.0, 100.0]);
        let y = x.mul(&g).unwrap();
        assert_eq!(y.to_vec(), vec![10.0, 20.0, 300.0, 400.0]);
        y.sum_all().backward().unwrap();
        assert_eq!(g.grad().unwrap(), vec![3.0, 7.0]);
        assert_eq!(x.grad().unwrap(), vec![10.0, 10.0, 100.0, 100.0]);
    }

    #[test]
    fn broadcast_rejects_mismatch() {
        let a = Tensor::zeros(Shape::new(1, 2, 3, 3));
        let b = Tensor::zeros(Shape::new(1, 3, 3, 3));
        let err = a.add(&b).unwrap_err().to_string();
        assert!(err.contains("(1, 2, 3, 3)") && err.contains("(1, 3, 3, 3)"), "{err}");
    }

    #[test]
    fn div_gradient() {
        let a = t(Shape::scalar(), &[3.0]);
        let b = t(Shape::scalar(), &[2.0]);
        a.div(&b).unwrap().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![0.5]);
        assert_eq!(b.grad().unwrap(), vec![-0.75]);
    }

    #[test]
    fn sqrt_at_zero_has_zero_grad() {
        let x = t(Shape::new(1, 1, 1, 2), &[0.0, 4.0]);
        x.sqrt().sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.25]);
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(20.0) - 1.0).abs() < 1e-8);
    }
}
