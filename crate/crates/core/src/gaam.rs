//! Guided asymmetric attention: directional, centre-surround and edge
//! branches fused into a spatial map, combined with a channel gate and
//! applied as a residual refinement `x + x ⊙ A_s ⊙ a_c`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::mask::SegMask;
use crate::tensor::{join, ConvParams, Params, PoolKind, Shape, Tensor, LAPLACIAN, SOBEL_X, SOBEL_Y};

pub const SURROUND_WEIGHT: f64 = 0.6;
pub const DEFAULT_REDUCTION: usize = 8;
pub const DEFAULT_TAU_GUIDED: f64 = 0.5;
const DIAG: usize = 7;

/// Main-diagonal (`anti = false`) or anti-diagonal 7×7 binary mask.
pub fn diagonal_mask(anti: bool) -> Vec<f64> {
    (0..DIAG * DIAG)
        .map(|k| {
            let (i, j) = (k / DIAG, k % DIAG);
            let on = if anti { i + j == DIAG - 1 } else { i == j };
            on as u8 as f64
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct GaamParams {
    pub f_h: ConvParams,
    pub f_v: ConvParams,
    pub f_d1: ConvParams,
    pub f_d2: ConvParams,
    pub f_c: ConvParams,
    pub f_s: ConvParams,
    pub f_e: ConvParams,
    /// `6C → C` then `C → 1`, ReLU between.
    pub fusion: [ConvParams; 2],
    pub f_c1: ConvParams,
    pub f_c2: ConvParams,
    pub direction_gate: ConvParams,
    pub tau_guided: f64,
    /// Test hook: replaces the spatial attention with zeros.
    pub force_spatial_zero: bool,
}

#[derive(Clone, Debug)]
pub struct GaamOutput {
    pub refined: Tensor,
    pub spatial_attn: Tensor,
    pub channel_attn: Tensor,
    /// `(B, 4, 1, 1)` softmax weights for the h, v, d1, d2 branches.
    pub direction_weights: Tensor,
}

impl GaamParams {
    pub fn new(rng: &mut impl Rng, channels: usize, reduction: usize) -> Result<Self> {
        if channels == 0 || reduction == 0 || channels % reduction != 0 {
            return Err(Error::Invalid(format!(
                "GAAM channels {channels} must be a positive multiple of reduction {reduction}"
            )));
        }
        let c = channels;
        let hidden = c / reduction;
        let k = |rng: &mut _, co, ci, ks, pad| ConvParams::kaiming(rng, co, ci, ks, 1, pad, true);
        Ok(GaamParams {
            f_h: k(rng, c, c, (1, 7), (0, 3)),
            f_v: k(rng, c, c, (7, 1), (3, 0)),
            f_d1: k(rng, c, c, (7, 7), (3, 3)).with_mask(diagonal_mask(false))?,
            f_d2: k(rng, c, c, (7, 7), (3, 3)).with_mask(diagonal_mask(true))?,
            f_c: k(rng, c, c, (3, 3), (1, 1)),
            f_s: k(rng, c, c, (9, 9), (4, 4)),
            f_e: k(rng, c, c, (3, 3), (1, 1)),
            fusion: [k(rng, c, 6 * c, (1, 1), (0, 0)), k(rng, 1, c, (1, 1), (0, 0))],
            f_c1: k(rng, hidden, 2 * c, (1, 1), (0, 0)),
            f_c2: k(rng, c, hidden, (1, 1), (0, 0)),
            direction_gate: k(rng, 4, c, (1, 1), (0, 0)),
            tau_guided: DEFAULT_TAU_GUIDED,
            force_spatial_zero: false,
        })
    }

    pub fn channels(&self) -> usize {
        self.f_c.c_out()
    }

    pub fn forward(&self, x: &Tensor, g_feedback: Option<&Tensor>) -> Result<GaamOutput> {
        gaam_forward(x, self, g_feedback)
    }
}

impl Params for GaamParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (name, conv) in self.named_convs() {
            conv.visit(&join(prefix, name), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        let GaamParams {
            f_h,
            f_v,
            f_d1,
            f_d2,
            f_c,
            f_s,
            f_e,
            fusion,
            f_c1,
            f_c2,
            direction_gate,
            ..
        } = self;
        let [fu0, fu1] = fusion;
        let convs: [(&str, &mut ConvParams); 12] = [
            ("f_h", f_h),
            ("f_v", f_v),
            ("f_d1", f_d1),
            ("f_d2", f_d2),
            ("f_c", f_c),
            ("f_s", f_s),
            ("f_e", f_e),
            ("fusion.0", fu0),
            ("fusion.1", fu1),
            ("f_c1", f_c1),
            ("f_c2", f_c2),
            ("direction_gate", direction_gate),
        ];
        for (name, conv) in convs {
            conv.visit_mut(&join(prefix, name), f);
        }
    }
}

impl GaamParams {
    fn named_convs(&self) -> [(&'static str, &ConvParams); 12] {
        [
            ("f_h", &self.f_h),
            ("f_v", &self.f_v),
            ("f_d1", &self.f_d1),
            ("f_d2", &self.f_d2),
            ("f_c", &self.f_c),
            ("f_s", &self.f_s),
            ("f_e", &self.f_e),
            ("fusion.0", &self.fusion[0]),
            ("fusion.1", &self.fusion[1]),
            ("f_c1", &self.f_c1),
            ("f_c2", &self.f_c2),
            ("direction_gate", &self.direction_gate),
        ]
    }
}

/// `f_c(x) − 0.6·f_s(x)`.
pub fn center_surround(x: &Tensor, p: &GaamParams) -> Result<Tensor> {
    p.f_c.forward(x)?.sub(&p.f_s.forward(x)?.scale(SURROUND_WEIGHT))
}

/// Per-channel `sqrt(Gx² + Gy²) + |∇²x|`, min-max normalized to [0, 1] per
/// image. An image with no variation maps to zeros.
pub fn edge_magnitude(x: &Tensor) -> Result<Tensor> {
    let gx = x.stencil(&SOBEL_X, 3, 3)?;
    let gy = x.stencil(&SOBEL_Y, 3, 3)?;
    let lap = x.stencil(&LAPLACIAN, 3, 3)?;
    let mag = gx.square().add(&gy.square())?.sqrt().add(&lap.abs())?;
    let per_image = Shape::new(x.shape().b(), 1, 1, 1);
    let lo = mag.min_to(per_image)?;
    let hi = mag.max_to(per_image)?;
    let range = hi.sub(&lo)?;
    // Zero range leaves a zero numerator; dividing by 1 keeps it zero.
    let guard = Tensor::new(per_image, range.data().iter().map(|&r| (r == 0.0) as u8 as f64).collect())?;
    mag.sub(&lo)?.div(&range.add(&guard)?)
}

/// `f_e(x ⊙ EdgeMagnitude(x))`.
pub fn edge_features(x: &Tensor, p: &GaamParams) -> Result<Tensor> {
    p.f_e.forward(&x.mul(&edge_magnitude(x)?)?)
}

/// Softmax over four direction logits from the pooled context `(B, C, 1, 1)`.
pub fn directional_weights(context: &Tensor, p: &GaamParams) -> Result<Tensor> {
    let logits = p.direction_gate.forward(context)?;
    let s = logits.shape();
    if s.h() != 1 || s.w() != 1 {
        return Err(Error::shape("directional_weights", format!("context must be pooled, got {s}")));
    }
    logits.reshape(Shape::new(s.b(), 1, 1, 4))?.softmax_last()?.reshape(s)
}

/// The six `C`-channel branches in fixed order h, v, d1, d2, cs, e, the first
/// four rescaled by their direction weight.
fn branches(x: &Tensor, p: &GaamParams) -> Result<(Vec<Tensor>, Tensor)> {
    let ctx = x.pool(PoolKind::GlobalAvg, 0)?;
    let w = directional_weights(&ctx, p)?;
    let dirs = [&p.f_h, &p.f_v, &p.f_d1, &p.f_d2];
    let mut out = Vec::with_capacity(6);
    for (i, conv) in dirs.into_iter().enumerate() {
        out.push(conv.forward(x)?.mul(&w.narrow_channels(i, 1)?)?);
    }
    out.push(center_surround(x, p)?);
    out.push(edge_features(x, p)?);
    Ok((out, w))
}

fn fused_stack(x: &Tensor, p: &GaamParams, g_feedback: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
    let (mut parts, w) = branches(x, p)?;
    if let Some(g) = g_feedback {
        let s = x.shape();
        if g.shape() != Shape::new(s.b(), s.c(), 1, 1) {
            return Err(Error::shape(
                "gaam feedback",
                format!("expected ({}, {}, 1, 1), got {}", s.b(), s.c(), g.shape()),
            ));
        }
        for part in &mut parts {
            *part = part.mul(g)?;
        }
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    Ok((Tensor::concat_channels(&refs)?.relu(), w))
}

fn spatial_from_stack(stack: &Tensor, p: &GaamParams) -> Result<Tensor> {
    Ok(p.fusion[1].forward(&p.fusion[0].forward(stack)?.relu())?.sigmoid())
}

/// `σ(fusion(Φ([F_h, F_v, F_d1, F_d2, F_cs, F_e])))`, shape `(B, 1, H, W)`.
pub fn spatial_attention(x: &Tensor, p: &GaamParams) -> Result<Tensor> {
    spatial_from_stack(&fused_stack(x, p, None)?.0, p)
}

/// `σ(f_c2(ReLU(f_c1([GAP(x), GMP(x)]))))`, shape `(B, C, 1, 1)`.
pub fn channel_attention(x: &Tensor, p: &GaamParams) -> Result<Tensor> {
    let gap = x.pool(PoolKind::GlobalAvg, 0)?;
    let gmp = x.pool(PoolKind::GlobalMax, 0)?;
    let pooled = Tensor::concat_channels(&[&gap, &gmp])?;
    Ok(p.f_c2.forward(&p.f_c1.forward(&pooled)?.relu())?.sigmoid())
}

pub fn gaam_forward(x: &Tensor, p: &GaamParams, g_feedback: Option<&Tensor>) -> Result<GaamOutput> {
    if x.shape().c() != p.channels() {
        return Err(Error::shape(
            "gaam",
            format!("input has {} channels, module expects {}", x.shape().c(), p.channels()),
        ));
    }
    let (stack, direction_weights) = fused_stack(x, p, g_feedback)?;
    let spatial_attn = if p.force_spatial_zero {
        let s = x.shape();
        Tensor::zeros(Shape::new(s.b(), 1, s.h(), s.w()))
    } else {
        spatial_from_stack(&stack, p)?
    };
    let channel_attn = channel_attention(x, p)?;
    let refined = x.add(&x.mul(&spatial_attn)?.mul(&channel_attn)?)?;
    Ok(GaamOutput {
        refined,
        spatial_attn,
        channel_attn,
        direction_weights,
    })
}

/// Positions where `attn · g > τ` (strict).
pub fn guided_region_mask(attn: &Tensor, g_cortical: &Tensor, tau_guided: f64) -> Result<Vec<SegMask>> {
    if attn.shape() != g_cortical.shape() || attn.shape().c() != 1 {
        return Err(Error::shape(
            "guided_region_mask",
            format!("{} vs {}", attn.shape(), g_cortical.shape()),
        ));
    }
    let s = attn.shape();
    (0..s.b())
        .map(|b| {
            let data = attn
                .plane(b, 0)
                .iter()
                .zip(g_cortical.plane(b, 0))
                .map(|(a, g)| (a * g > tau_guided) as u8)
                .collect();
            SegMask::new(s.h(), s.w(), data)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::init::{rng, uniform};

    fn zero_conv(c: &ConvParams) -> ConvParams {
        let mut z = c.clone();
        z.visit_mut("", &mut |_, t| *t = Tensor::zeros(t.shape()).to_parameter());
        z
    }

    fn params(c: usize) -> GaamParams {
        GaamParams::new(&mut rng(1), c, c.min(DEFAULT_REDUCTION)).unwrap()
    }

    #[test]
    fn masks_pick_diagonals() {
        let d = diagonal_mask(false);
        let a = diagonal_mask(true);
        assert_eq!(d.iter().sum::<f64>(), 7.0);
        assert_eq!(d[8], 1.0);
        assert_eq!(a[6], 1.0);
        assert_eq!(a[0], 0.0);
    }

    #[test]
    fn center_surround_delta_case() {
        let mut p = params(2);
        p.f_c = ConvParams::delta(2, (3, 3), true);
        p.f_s = ConvParams::delta(2, (9, 9), true);
        let x = Tensor::full(Shape::new(1, 2, 10, 10), 2.5);
        let y = center_surround(&x, &p).unwrap();
        assert!(y.data().iter().all(|&v| v == 2.5 - 0.6 * 2.5), "{:?}", &y.data()[..3]);
    }

    #[test]
    fn center_surround_zero_input_is_zero() {
        let p = params(2);
        let y = center_surround(&Tensor::zeros(Shape::new(1, 2, 5, 5)), &p).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_image_has_no_edges() {
        let x = Tensor::full(Shape::new(2, 3, 6, 6), 0.3);
        assert!(edge_magnitude(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn edge_magnitude_peaks_at_step() {
        let x = Tensor::from_fn(Shape::new(1, 1, 6, 8), |[_, _, _, w]| (w >= 4) as u8 as f64);
        let m = edge_magnitude(&x).unwrap();
        let row: Vec<f64> = (0..8).map(|c| m.at([0, 0, 3, c])).collect();
        assert_eq!(row[3].max(row[4]), 1.0);
        assert_eq!(row[0], 0.0);
    }

    #[test]
    fn zero_fusion_gives_half() {
        let mut p = params(4);
        p.fusion = [zero_conv(&p.fusion[0]), zero_conv(&p.fusion[1])];
        let x = uniform(&mut rng(3), Shape::new(2, 4, 6, 6), -1.0, 1.0);
        let a = spatial_attention(&x, &p).unwrap();
        assert_eq!(a.shape(), Shape::new(2, 1, 6, 6));
        assert!(a.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn saturated_fusion_bias() {
        let mut p = params(4);
        p.fusion[1] = zero_conv(&p.fusion[1]);
        p.fusion[1].bias = Some(Tensor::full(Shape::new(1, 1, 1, 1), 20.0).to_parameter());
        let x = uniform(&mut rng(3), Shape::new(1, 4, 5, 5), -1.0, 1.0);
        let a = spatial_attention(&x, &p).unwrap();
        assert!(a.data().iter().all(|&v| (1.0 - v) < 1e-8));
    }

    #[test]
    fn zero_channel_head_gives_half_and_is_permutation_invariant() {
        let mut p = params(8);
        let x = uniform(&mut rng(5), Shape::new(1, 8, 4, 4), -1.0, 1.0);
        let perm = Tensor::from_fn(x.shape(), |[b, c, h, w]| x.at([b, c, 3 - w, h]));
        let a = channel_attention(&x, &p).unwrap();
        let b = channel_attention(&perm, &p).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-14);
        }
        p.f_c2 = zero_conv(&p.f_c2);
        assert!(channel_attention(&x, &p).unwrap().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn zero_heads_scale_by_five_quarters() {
        let mut p = params(4);
        p.fusion[1] = zero_conv(&p.fusion[1]);
        p.f_c2 = zero_conv(&p.f_c2);
        let x = uniform(&mut rng(7), Shape::new(1, 4, 6, 6), -1.0, 1.0);
        let out = p.forward(&x, None).unwrap();
        for (r, v) in out.refined.data().iter().zip(x.data()) {
            assert!((r - 1.25 * v).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_input_stays_zero() {
        let p = params(4);
        let out = p.forward(&Tensor::zeros(Shape::new(1, 4, 4, 4)), None).unwrap();
        assert!(out.refined.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_feedback_matches_absent() {
        let p = params(4);
        let x = uniform(&mut rng(9), Shape::new(2, 4, 6, 6), -1.0, 1.0);
        let ones = Tensor::full(Shape::new(2, 4, 1, 1), 1.0);
        let a = p.forward(&x, None).unwrap();
        let b = p.forward(&x, Some(&ones)).unwrap();
        assert_eq!(a.refined.to_vec(), b.refined.to_vec());
    }

    #[test]
    fn feedback_shape_checked() {
        let p = params(4);
        let x = Tensor::zeros(Shape::new(1, 4, 4, 4));
        let bad = Tensor::zeros(Shape::new(1, 3, 1, 1));
        assert!(p.forward(&x, Some(&bad)).is_err());
    }

    #[test]
    fn forced_zero_spatial_is_identity() {
        let mut p = params(4);
        p.force_spatial_zero = true;
        let x = uniform(&mut rng(11), Shape::new(1, 4, 6, 6), -1.0, 1.0);
        assert_eq!(p.forward(&x, None).unwrap().refined.to_vec(), x.to_vec());
    }

    #[test]
    fn direction_weights_normalize() {
        let mut p = params(4);
        let ctx = uniform(&mut rng(2), Shape::new(3, 4, 1, 1), -3.0, 3.0);
        let w = directional_weights(&ctx, &p).unwrap();
        for b in 0..3 {
            let s: f64 = (0..4).map(|d| w.at([b, d, 0, 0])).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        p.direction_gate = zero_conv(&p.direction_gate);
        assert!(directional_weights(&ctx, &p).unwrap().data().iter().all(|&v| v == 0.25));
        p.direction_gate.bias = Some(Tensor::new(Shape::new(1, 4, 1, 1), vec![20.0, 0.0, 0.0, 0.0]).unwrap());
        let w = directional_weights(&ctx, &p).unwrap();
        assert!(w.at([0, 0, 0, 0]) > 1.0 - 1e-8);
    }

    #[test]
    fn guided_mask_examples() {
        let s = Shape::new(1, 1, 1, 2);
        let a = Tensor::new(s, vec![0.9, 0.2]).unwrap();
        let g = Tensor::new(s, vec![0.8, 0.9]).unwrap();
        assert_eq!(guided_region_mask(&a, &g, 0.5).unwrap()[0].data(), &[1, 0]);
        let ones = Tensor::full(s, 1.0);
        assert_eq!(guided_region_mask(&ones, &ones, 0.5).unwrap()[0].count(), 2);
        let half = Tensor::full(s, 0.5);
        assert_eq!(guided_region_mask(&half, &ones, 0.5).unwrap()[0].count(), 0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        use crate::tensor::gradcheck::{check_params, Options, DEFAULT_TOLERANCE};
        let mut p = params(8);
        let mut r = rng(21);
        let x = uniform(&mut r, Shape::new(1, 8, 8, 8), -1.0, 1.0);
        let g = uniform(&mut r, Shape::new(1, 8, 1, 1), 0.2, 1.0);
        let res = check_params(
            &mut p,
            |p| Ok(p.forward(&x, Some(&g))?.refined.square().mean_all()),
            |n| n.split('.').next().unwrap_or(n).to_string(),
            &Options::default(),
        )
        .unwrap();
        assert!(res.iter().all(|r| r.passed(DEFAULT_TOLERANCE)), "{res:#?}");
    }

    #[test]
    fn rejects_indivisible_reduction() {
        assert!(GaamParams::new(&mut rng(0), 12, 8).is_err());
    }
}
