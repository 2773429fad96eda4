//! 2-D convolution lowered to GEMM over an im2col buffer.
//!
//! Binary kernel masks drop taps from the column buffer entirely, so a masked
//! 7×7 diagonal kernel costs the same as a 1×7 one and its masked weights
//! always receive exactly zero gradient.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PadMode {
    /// Out-of-image samples read as 0.
    #[default]
    Zero,
    /// Out-of-image samples read the nearest edge pixel.
    Replicate,
}

#[derive(Clone, Debug)]
pub struct ConvParams {
    /// `(C_out, C_in, kH, kW)`.
    pub weight: Tensor,
    /// `(1, C_out, 1, 1)`.
    pub bias: Option<Tensor>,
    pub stride: usize,
    /// `(rows, cols)` of padding on each side.
    pub padding: (usize, usize),
    /// Binary `kH × kW` mask multiplied into the weight on every evaluation.
    pub mask: Option<Vec<f64>>,
    pub pad_mode: PadMode,
}

impl ConvParams {
    pub fn new(weight: Tensor, bias: Option<Tensor>, stride: usize, padding: (usize, usize)) -> Result<Self> {
        let ws = weight.shape();
        if stride == 0 {
            return Err(Error::Invalid("conv stride must be positive".into()));
        }
        if let Some(b) = &bias {
            if b.shape() != Shape::new(1, ws.b(), 1, 1) {
                return Err(Error::shape(
                    "ConvParams",
                    format!("bias {} does not match weight {ws}", b.shape()),
                ));
            }
        }
        Ok(ConvParams {
            weight,
            bias,
            stride,
            padding,
            mask: None,
            pad_mode: PadMode::Zero,
        })
    }

    /// He-normal weights, zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn kaiming(
        rng: &mut impl Rng,
        c_out: usize,
        c_in: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: (usize, usize),
        bias: bool,
    ) -> Self {
        let fan_in = (c_in * kernel.0 * kernel.1) as f64;
        Self::normal(rng, c_out, c_in, kernel, stride, padding, bias, (2.0 / fan_in).sqrt())
    }

    #[allow(clippy::too_many_arguments)]
    pub fn normal(
        rng: &mut impl Rng,
        c_out: usize,
        c_in: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: (usize, usize),
        bias: bool,
        std: f64,
    ) -> Self {
        let shape = Shape::new(c_out, c_in, kernel.0, kernel.1);
        let normal = Normal::new(0.0, std).expect("positive std");
        let w: Vec<f64> = (0..shape.numel()).map(|_| normal.sample(rng)).collect();
        let weight = Tensor::parameter(shape, w).expect("sized");
        let bias = bias.then(|| Tensor::parameter(Shape::new(1, c_out, 1, 1), vec![0.0; c_out]).expect("sized"));
        Self::new(weight, bias, stride, padding).expect("valid by construction")
    }

    /// All-zero weights and bias.
    pub fn zeros(c_out: usize, c_in: usize, kernel: (usize, usize), padding: (usize, usize), bias: bool) -> Self {
        let shape = Shape::new(c_out, c_in, kernel.0, kernel.1);
        let weight = Tensor::parameter(shape, vec![0.0; shape.numel()]).expect("sized");
        let bias = bias.then(|| Tensor::parameter(Shape::new(1, c_out, 1, 1), vec![0.0; c_out]).expect("sized"));
        Self::new(weight, bias, 1, padding).expect("valid by construction")
    }

    /// Kernel whose only nonzero tap is 1 at the centre of each `(o, o)`
    /// channel pair; with "same" padding this is the identity map.
    pub fn delta(channels: usize, kernel: (usize, usize), bias: bool) -> Self {
        let (kh, kw) = kernel;
        let shape = Shape::new(channels, channels, kh, kw);
        let mut w = vec![0.0; shape.numel()];
        for o in 0..channels {
            w[((o * channels + o) * kh + kh / 2) * kw + kw / 2] = 1.0;
        }
        let weight = Tensor::parameter(shape, w).expect("sized");
        let bias = bias.then(|| Tensor::parameter(Shape::new(1, channels, 1, 1), vec![0.0; channels]).expect("sized"));
        Self::new(weight, bias, 1, (kh / 2, kw / 2)).expect("valid by construction")
    }

    pub fn with_mask(mut self, mask: Vec<f64>) -> Result<Self> {
        let (kh, kw) = self.kernel();
        if mask.len() != kh * kw {
            return Err(Error::shape(
                "ConvParams::with_mask",
                format!("mask has {} entries, kernel is {kh}x{kw}", mask.len()),
            ));
        }
        if mask.iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::Invalid("conv mask must be binary".into()));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn with_pad_mode(mut self, mode: PadMode) -> Self {
        self.pad_mode = mode;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride.max(1);
        self
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape().b()
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape().c()
    }

    pub fn kernel(&self) -> (usize, usize) {
        let s = self.weight.shape();
        (s.h(), s.w())
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel();
        let (ph, pw) = self.padding;
        let (hp, wp) = (h + 2 * ph, w + 2 * pw);
        if hp < kh || wp < kw {
            return Err(Error::shape(
                "conv2d",
                format!("input {h}x{w} with padding {ph},{pw} is smaller than kernel {kh}x{kw}"),
            ));
        }
        Ok(((hp - kh) / self.stride + 1, (wp - kw) / self.stride + 1))
    }

    fn taps(&self) -> Vec<(usize, usize)> {
        let (kh, kw) = self.kernel();
        (0..kh)
            .flat_map(|i| (0..kw).map(move |j| (i, j)))
            .filter(|&(i, j)| self.mask.as_ref().map_or(true, |m| m[i * kw + j] != 0.0))
            .collect()
    }

    /// Visits `weight` then `bias` under `prefix`.
    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&super::join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&super::join(prefix, "bias"), b);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&super::join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&super::join(prefix, "bias"), b);
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, self)
    }
}

/// Geometry shared by the forward and backward passes.
#[derive(Clone)]
struct Plan {
    c_in: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: (usize, usize),
    mode: PadMode,
    taps: Vec<(usize, usize)>,
}

impl Plan {
    fn k(&self) -> usize {
        self.c_in * self.taps.len()
    }

    fn n(&self) -> usize {
        self.ho * self.wo
    }

    /// True when the column buffer would equal the input plane stack.
    fn is_pointwise(&self) -> bool {
        self.taps.len() == 1 && self.taps[0] == (0, 0) && self.stride == 1 && self.pad == (0, 0)
    }

    /// Source index for output `(o, tap)` along one axis, or `None` when it
    /// lands in zero padding.
    #[inline]
    fn src(&self, out: usize, tap: usize, pad: usize, len: usize) -> Option<usize> {
        let pos = (out * self.stride + tap) as isize - pad as isize;
        if pos >= 0 && (pos as usize) < len {
            Some(pos as usize)
        } else {
            match self.mode {
                PadMode::Zero => None,
                PadMode::Replicate => Some(pos.clamp(0, len as isize - 1) as usize),
            }
        }
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let (n, t) = (self.n(), self.taps.len());
        for ci in 0..self.c_in {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for (ti, &(kh, kw)) in self.taps.iter().enumerate() {
                let row = &mut cols[(ci * t + ti) * n..(ci * t + ti + 1) * n];
                for oh in 0..self.ho {
                    let out = &mut row[oh * self.wo..(oh + 1) * self.wo];
                    match self.src(oh, kh, self.pad.0, self.h) {
                        None => out.fill(0.0),
                        Some(ih) => {
                            let src_row = &plane[ih * self.w..(ih + 1) * self.w];
                            for (ow, o) in out.iter_mut().enumerate() {
                                *o = match self.src(ow, kw, self.pad.1, self.w) {
                                    Some(iw) => src_row[iw],
                                    None => 0.0,
                                };
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], gx: &mut [f64]) {
        let (n, t) = (self.n(), self.taps.len());
        for ci in 0..self.c_in {
            let plane = &mut gx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for (ti, &(kh, kw)) in self.taps.iter().enumerate() {
                let row = &cols[(ci * t + ti) * n..(ci * t + ti + 1) * n];
                for oh in 0..self.ho {
                    let Some(ih) = self.src(oh, kh, self.pad.0, self.h) else { continue };
                    for ow in 0..self.wo {
                        if let Some(iw) = self.src(ow, kw, self.pad.1, self.w) {
                            plane[ih * self.w + iw] += row[oh * self.wo + ow];
                        }
                    }
                }
            }
        }
    }
}

/// `c (m×n) = a (m×k) · b (k×n) + beta·c`, with explicit strides so that
/// transposed operands need no copy.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides describe views that lie inside `a`, `b` and `c`:
    // callers pass row-major or transposed-row-major views of buffers sized
    // m·k, k·n and m·n respectively (checked by the debug assertions above
    // and at each call site).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Convolution (cross-correlation) of `x` with `p`.
pub fn conv2d(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let xs = x.shape();
    if xs.c() != p.c_in() {
        return Err(Error::shape(
            "conv2d",
            format!("input {xs} has {} channels, kernel {} expects {}", xs.c(), p.weight.shape(), p.c_in()),
        ));
    }
    if let Some(m) = &p.mask {
        let (kh, kw) = p.kernel();
        if m.len() != kh * kw {
            return Err(Error::shape("conv2d", "mask does not match kernel"));
        }
    }
    let (ho, wo) = p.output_hw(xs.h(), xs.w())?;
    let plan = Plan {
        c_in: xs.c(),
        h: xs.h(),
        w: xs.w(),
        ho,
        wo,
        stride: p.stride,
        pad: p.padding,
        mode: p.pad_mode,
        taps: p.taps(),
    };
    let c_out = p.c_out();
    let (k, n) = (plan.k(), plan.n());
    let w_eff = effective_weight(&p.weight, &plan);

    let out_shape = Shape::new(xs.b(), c_out, ho, wo);
    let mut out = vec![0.0; out_shape.numel()];
    let in_img = xs.c() * xs.plane();
    let mut cols = if plan.is_pointwise() { Vec::new() } else { vec![0.0; k * n] };
    for b in 0..xs.b() {
        let xb = &x.data()[b * in_img..(b + 1) * in_img];
        let colsb: &[f64] = if plan.is_pointwise() {
            xb
        } else {
            plan.im2col(xb, &mut cols);
            &cols
        };
        let ob = &mut out[b * c_out * n..(b + 1) * c_out * n];
        if let Some(bias) = &p.bias {
            for (co, chunk) in ob.chunks_mut(n).enumerate() {
                chunk.fill(bias.data()[co]);
            }
        }
        gemm(c_out, k, n, &w_eff, (k as isize, 1), colsb, (n as isize, 1), 1.0, ob);
    }

    let mut parents = vec![x.clone(), p.weight.clone()];
    if let Some(b) = &p.bias {
        parents.push(b.clone());
    }
    let (xc, wc, has_bias) = (x.clone(), p.weight.clone(), p.bias.is_some());
    Ok(Tensor::from_op(out_shape, out, "conv2d", parents, move |g, _| {
        conv_backward(g, &xc, &wc, has_bias, &plan, c_out)
    }))
}

fn effective_weight(weight: &Tensor, plan: &Plan) -> Vec<f64> {
    let ws = weight.shape();
    let (kh, kw) = (ws.h(), ws.w());
    let t = plan.taps.len();
    let mut w_eff = Vec::with_capacity(ws.b() * plan.c_in * t);
    for co in 0..ws.b() {
        for ci in 0..plan.c_in {
            let base = (co * plan.c_in + ci) * kh * kw;
            for &(i, j) in &plan.taps {
                w_eff.push(weight.data()[base + i * kw + j]);
            }
        }
    }
    w_eff
}

fn conv_backward(
    g: &[f64],
    x: &Tensor,
    weight: &Tensor,
    has_bias: bool,
    plan: &Plan,
    c_out: usize,
) -> Vec<Option<Vec<f64>>> {
    let xs = x.shape();
    let (k, n) = (plan.k(), plan.n());
    let in_img = xs.c() * xs.plane();
    let want_x = x.requires_grad();
    let want_w = weight.requires_grad();

    let w_eff = effective_weight(weight, plan);
    let mut gw_eff = want_w.then(|| vec![0.0; c_out * k]);
    let mut gx = want_x.then(|| vec![0.0; xs.numel()]);
    let mut cols = vec![0.0; if plan.is_pointwise() { 0 } else { k * n }];
    let mut gcols = vec![0.0; if want_x { k * n } else { 0 }];

    for b in 0..xs.b() {
        let gb = &g[b * c_out * n..(b + 1) * c_out * n];
        if let Some(gw) = gw_eff.as_mut() {
            let xb = &x.data()[b * in_img..(b + 1) * in_img];
            let colsb: &[f64] = if plan.is_pointwise() {
                xb
            } else {
                plan.im2col(xb, &mut cols);
                &cols
            };
            // gW (c_out × k) += g_b (c_out × n) · cols_bᵀ (n × k)
            gemm(c_out, n, k, gb, (n as isize, 1), colsb, (1, n as isize), 1.0, gw);
        }
        if let Some(gx) = gx.as_mut() {
            // gcols (k × n) = W_effᵀ (k × c_out) · g_b (c_out × n)
            gemm(k, c_out, n, &w_eff, (1, k as isize), gb, (n as isize, 1), 0.0, &mut gcols);
            let gxb = &mut gx[b * in_img..(b + 1) * in_img];
            if plan.is_pointwise() {
                for (a, v) in gxb.iter_mut().zip(&gcols) {
                    *a += v;
                }
            } else {
                plan.col2im(&gcols, gxb);
            }
        }
    }

    let gw = gw_eff.map(|gw_eff| {
        let ws = weight.shape();
        let (kh, kw) = (ws.h(), ws.w());
        let t = plan.taps.len();
        let mut full = vec![0.0; ws.numel()];
        for co in 0..c_out {
            for ci in 0..plan.c_in {
                let base = (co * plan.c_in + ci) * kh * kw;
                for (ti, &(i, j)) in plan.taps.iter().enumerate() {
                    full[base + i * kw + j] = gw_eff[co * k + ci * t + ti];
                }
            }
        }
        #[cfg(feature = "fault-injection")]
        super::fault::apply(weight.id(), &mut full);
        full
    });

    let mut grads = vec![gx, gw];
    if has_bias {
        let mut gbias = vec![0.0; c_out];
        for b in 0..xs.b() {
            for (co, acc) in gbias.iter_mut().enumerate() {
                let start = (b * c_out + co) * n;
                *acc += g[start..start + n].iter().sum::<f64>();
            }
        }
        grads.push(Some(gbias));
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones_kernel(k: usize) -> ConvParams {
        let w = Tensor::parameter(Shape::new(1, 1, k, k), vec![1.0; k * k]).unwrap();
        ConvParams::new(w, None, 1, (k / 2, k / 2)).unwrap()
    }

    /// Direct summation over receptive fields, independent of im2col.
    fn direct_conv(x: &Tensor, p: &ConvParams) -> Vec<f64> {
        let xs = x.shape();
        let ws = p.weight.shape();
        let (ho, wo) = p.output_hw(xs.h(), xs.w()).unwrap();
        let mut out = vec![0.0; xs.b() * ws.b() * ho * wo];
        for b in 0..xs.b() {
            for co in 0..ws.b() {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = p.bias.as_ref().map_or(0.0, |t| t.data()[co]);
                        for ci in 0..ws.c() {
                            for i in 0..ws.h() {
                                for j in 0..ws.w() {
                                    let m = p.mask.as_ref().map_or(1.0, |m| m[i * ws.w() + j]);
                                    let ih = (oh * p.stride + i) as isize - p.padding.0 as isize;
                                    let iw = (ow * p.stride + j) as isize - p.padding.1 as isize;
                                    if ih < 0 || iw < 0 || ih >= xs.h() as isize || iw >= xs.w() as isize {
                                        continue;
                                    }
                                    acc += m * p.weight.at([co, ci, i, j]) * x.at([b, ci, ih as usize, iw as usize]);
                                }
                            }
                        }
                        out[((b * ws.b() + co) * ho + oh) * wo + ow] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn ones_kernel_on_ones_counts_receptive_field() {
        let x = Tensor::full(Shape::new(1, 1, 3, 3), 1.0);
        let y = conv2d(&x, &ones_kernel(3)).unwrap();
        assert_eq!(y.at([0, 0, 1, 1]), 9.0);
        for corner in [[0, 0, 0, 0], [0, 0, 0, 2], [0, 0, 2, 0], [0, 0, 2, 2]] {
            assert_eq!(y.at(corner), 4.0);
        }
        assert_eq!(y.at([0, 0, 0, 1]), 6.0);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = crate::tensor::init::rng(3);
        let x = crate::tensor::init::uniform(&mut rng, Shape::new(2, 3, 5, 6), -1.0, 1.0);
        for k in [(1, 1), (3, 3), (5, 5), (1, 7), (7, 1)] {
            let p = ConvParams::delta(3, k, false);
            assert_eq!(conv2d(&x, &p).unwrap().to_vec(), x.to_vec(), "kernel {k:?}");
        }
    }

    #[test]
    fn diagonal_mask_counts_seven_taps() {
        let c = 1.7;
        let x = Tensor::full(Shape::new(1, 1, 11, 11), c);
        let mask: Vec<f64> = (0..49).map(|i| if i / 7 == i % 7 { 1.0 } else { 0.0 }).collect();
        let p = ones_kernel(7).with_mask(mask).unwrap();
        let y = conv2d(&x, &p).unwrap();
        assert!((y.at([0, 0, 5, 5]) - 7.0 * c).abs() < 1e-12);
    }

    #[test]
    fn matches_direct_summation() {
        let mut rng = crate::tensor::init::rng(11);
        let x = crate::tensor::init::uniform(&mut rng, Shape::new(2, 3, 7, 6), -1.0, 1.0);
        for (k, stride, pad) in [((3, 3), 1, (1, 1)), ((3, 3), 2, (1, 1)), ((1, 7), 1, (0, 3)), ((2, 2), 2, (0, 0))] {
            let p = ConvParams::normal(&mut rng, 4, 3, k, stride, pad, true, 0.5);
            let y = conv2d(&x, &p).unwrap();
            let want = direct_conv(&x, &p);
            for (a, b) in y.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{k:?} s{stride}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn masked_taps_get_zero_gradient() {
        let mut rng = crate::tensor::init::rng(5);
        let x = crate::tensor::init::uniform(&mut rng, Shape::new(1, 2, 9, 9), -1.0, 1.0);
        let mask: Vec<f64> = (0..49).map(|i| if i / 7 + i % 7 == 6 { 1.0 } else { 0.0 }).collect();
        let p = ConvParams::normal(&mut rng, 2, 2, (7, 7), 1, (3, 3), false, 0.3)
            .with_mask(mask.clone())
            .unwrap();
        conv2d(&x, &p).unwrap().square().sum_all().backward().unwrap();
        let g = p.weight.grad().unwrap();
        for (i, gv) in g.iter().enumerate() {
            if mask[i % 49] == 0.0 {
                assert_eq!(*gv, 0.0);
            }
        }
        assert!(g.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let x = Tensor::zeros(Shape::new(1, 2, 4, 4));
        let err = conv2d(&x, &ones_kernel(3)).unwrap_err().to_string();
        assert!(err.contains("2 channels") && err.contains("expects 1"), "{err}");
    }

    #[test]
    fn non_binary_mask_rejected() {
        assert!(ones_kernel(3).with_mask(vec![0.5; 9]).is_err());
        assert!(ones_kernel(3).with_mask(vec![1.0; 4]).is_err());
    }

    #[test]
    fn replicate_padding_preserves_constants() {
        let x = Tensor::full(Shape::new(1, 1, 4, 4), 2.5);
        let w = Tensor::parameter(Shape::new(1, 1, 3, 3), vec![1.0 / 9.0; 9]).unwrap();
        let p = ConvParams::new(w, None, 1, (1, 1)).unwrap().with_pad_mode(PadMode::Replicate);
        for v in conv2d(&x, &p).unwrap().data() {
            assert!((v - 2.5).abs() < 1e-14);
        }
    }
}
