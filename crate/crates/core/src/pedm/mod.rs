//! Encoder-decoder assembly: a 4-stage residual encoder, MSRM on the finest
//! level, GCAFM top-down chaining with GAAM refinement, resolution-adapted
//! guidance, attention-weighted skips and a sigmoid segmentation head.

mod blocks;
pub mod objective;
pub mod optim;
pub mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaam::{GaamOutput, GaamParams, DEFAULT_REDUCTION};
use crate::gcafm::{FeedbackResult, GcafmParams, DEFAULT_D_K, DEFAULT_POOL_TO};
use crate::mask::SegMask;
use crate::msrm::{pathway_forward, pathway_weights, MsrmOutput, MsrmParams};
use crate::tensor::{join, ConvParams, PadMode, Params, Tensor};

pub use blocks::{DecoderBlock, EncoderStage, ResBlock};
pub use objective::{bio_loss, bio_loss_with_targets, guidance_targets, BioTerms, LossBreakdown, LossWeights};
pub use optim::Adam;
pub use train::{train_step, AuxSchedule, AuxTerm, StepReport, TrainConfig};

pub const LEVELS: usize = 4;
/// Attention logits start here so `σ ≈ 0.88` and the weighted skips begin
/// nearly open.
const ATTN_BIAS_INIT: f64 = 2.0;
pub const DEFAULT_WIDTHS: [usize; LEVELS] = [16, 32, 64, 128];

/// Which optional components are wired in. Disabled modules become identity
/// pass-throughs so every tensor keeps its shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toggles {
    pub msrm: bool,
    pub gaam: bool,
    pub gcafm: bool,
    /// Multi-scale integration: guidance-driven attention on the skips.
    pub msi: bool,
}

impl Toggles {
    pub const ALL: Toggles = Toggles {
        msrm: true,
        gaam: true,
        gcafm: true,
        msi: true,
    };
    pub const NONE: Toggles = Toggles {
        msrm: false,
        gaam: false,
        gcafm: false,
        msi: false,
    };
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles::ALL
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub widths: [usize; LEVELS],
    pub gaam_reduction: usize,
    pub d_k: usize,
    pub pool_to: usize,
    pub toggles: Toggles,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            widths: DEFAULT_WIDTHS,
            gaam_reduction: DEFAULT_REDUCTION,
            d_k: DEFAULT_D_K,
            pool_to: DEFAULT_POOL_TO,
            toggles: Toggles::ALL,
        }
    }
}

/// `E_1..E_4`, each level half the spatial size of the one before.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub levels: Vec<Tensor>,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<Tensor>) -> Result<Self> {
        if levels.len() != LEVELS {
            return Err(Error::Invalid(format!("pyramid needs {LEVELS} levels, got {}", levels.len())));
        }
        for pair in levels.windows(2) {
            let (a, b) = (pair[0].shape(), pair[1].shape());
            if a.h() != 2 * b.h() || a.w() != 2 * b.w() || a.b() != b.b() {
                return Err(Error::shape("FeaturePyramid", format!("{a} then {b}")));
            }
        }
        Ok(FeaturePyramid { levels })
    }

    pub fn level(&self, i: usize) -> &Tensor {
        &self.levels[i - 1]
    }
}

#[derive(Clone, Debug)]
pub struct GuidanceSignal {
    /// `G_1..G_4`, single channel, each on its level's grid.
    pub per_level: Vec<Tensor>,
    /// Feedback gate from the finest GCAFM, when present.
    pub feedback_gate: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub struct TopDown {
    pub pyramid: FeaturePyramid,
    /// Indexed by level - 1; level 4 is always `None`.
    pub gcafm: Vec<Option<FeedbackResult>>,
    pub gaam: Vec<Option<GaamOutput>>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Tensor,
    pub prob: Tensor,
    pub pyramid: FeaturePyramid,
    /// `Attn_1..Attn_4`.
    pub attn: Vec<Tensor>,
    pub guidance: GuidanceSignal,
    pub topdown: TopDown,
    pub msrm: Option<MsrmOutput>,
}

impl ForwardOutput {
    /// Attention-weighted predictions `min(1, 2·Attn_i·p_i)` per level, where
    /// `p_i` is the probability map resized to the level grid.
    pub fn multiscale_preds(&self) -> Result<Vec<Tensor>> {
        self.attn
            .iter()
            .map(|a| Ok(a.mul(&self.prob.resize_like(a)?)?.scale(2.0).clamp(0.0, 1.0)))
            .collect()
    }

    /// GCAFM target attention maps for the levels that have one.
    pub fn targets(&self) -> Vec<&Tensor> {
        self.topdown.gcafm.iter().flatten().map(|f| &f.target).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Heads {
    /// `C_1` on `E_i`, per level.
    pub attn_e: Vec<ConvParams>,
    /// `C_1` on `G_{i+1}`, levels 1..3.
    pub attn_g: Vec<ConvParams>,
    /// Per-level 3×3 resample kernels, delta-initialised.
    pub resample: Vec<ConvParams>,
    pub seg: ConvParams,
}

#[derive(Clone, Debug)]
pub struct Pedm {
    pub config: ModelConfig,
    pub encoder: Vec<EncoderStage>,
    pub msrm: MsrmParams,
    pub gaam: Vec<GaamParams>,
    /// Level `i` module at index `i - 1`, levels 1..3.
    pub gcafm: Vec<GcafmParams>,
    pub decoder: Vec<DecoderBlock>,
    pub heads: Heads,
}

impl Pedm {
    pub fn new(rng: &mut impl Rng, config: ModelConfig) -> Result<Self> {
        let w = config.widths;
        if w.iter().any(|&c| c == 0) {
            return Err(Error::Config("model widths must be positive".into()));
        }
        let mut encoder = Vec::with_capacity(LEVELS);
        let mut c_in = 3;
        for &c in &w {
            encoder.push(EncoderStage::new(rng, c_in, c));
            c_in = c;
        }
        let msrm = MsrmParams::new(rng, w[0]);
        let gaam = w
            .iter()
            .map(|&c| GaamParams::new(rng, c, config.gaam_reduction.min(c)))
            .collect::<Result<Vec<_>>>()?;
        let gcafm = (0..LEVELS - 1)
            .map(|i| {
                let mut g = GcafmParams::new(rng, w[i + 1], w[i], config.d_k)?;
                g.pool_to = config.pool_to;
                Ok(g)
            })
            .collect::<Result<Vec<_>>>()?;
        let decoder = (0..LEVELS)
            .map(|i| {
                let c_in = if i + 1 < LEVELS { w[i] + w[i + 1] } else { w[i] };
                DecoderBlock::new(rng, c_in, w[i])
            })
            .collect();
        let head = |rng: &mut _, c| ConvParams::kaiming(rng, 1, c, (1, 1), 1, (0, 0), true);
        let open_gate = |rng: &mut _, c| {
            let mut h = head(rng, c);
            h.bias = Some(Tensor::full(crate::Shape::new(1, 1, 1, 1), ATTN_BIAS_INIT).to_parameter());
            h
        };
        let heads = Heads {
            attn_e: w.iter().map(|&c| open_gate(rng, c)).collect(),
            attn_g: (0..LEVELS - 1).map(|_| head(rng, 1)).collect(),
            resample: (0..LEVELS)
                .map(|_| ConvParams::delta(1, (3, 3), true).with_pad_mode(PadMode::Replicate))
                .collect(),
            seg: head(rng, w[0]),
        };
        Ok(Pedm {
            config,
            encoder,
            msrm,
            gaam,
            gcafm,
            decoder,
            heads,
        })
    }

    pub fn toggles(&self) -> Toggles {
        self.config.toggles
    }

    /// Backbone pyramid with MSRM applied to the finest level.
    pub fn encoder_forward(&self, img: &Tensor, gt: Option<&[SegMask]>) -> Result<(FeaturePyramid, Option<MsrmOutput>)> {
        let s = img.shape();
        if s.c() != 3 {
            return Err(Error::shape("encoder", format!("expected 3 input channels, got {s}")));
        }
        if s.h() % 16 != 0 || s.w() % 16 != 0 || s.h() == 0 || s.w() == 0 {
            return Err(Error::shape(
                "encoder",
                format!(
                    "input {}x{} must be divisible by 16; pad to {}x{}",
                    s.h(),
                    s.w(),
                    s.h().div_ceil(16).max(1) * 16,
                    s.w().div_ceil(16).max(1) * 16
                ),
            ));
        }
        let mut levels = Vec::with_capacity(LEVELS);
        let mut msrm_out = None;
        let mut x = img.clone();
        for (i, stage) in self.encoder.iter().enumerate() {
            x = stage.forward(&x)?;
            if i == 0 && self.toggles().msrm {
                let out = self.msrm.forward(&x, gt)?;
                x = out.features.clone();
                msrm_out = Some(out);
            }
            levels.push(x.clone());
        }
        Ok((FeaturePyramid::new(levels)?, msrm_out))
    }

    /// `E_4' = GAAM_4(E_4)`, then for `i = 3, 2, 1`:
    /// `E_i' = GAAM_i(GCAFM_i(E_{i+1}', E_i))`.
    pub fn topdown_refine(&self, pyr: &FeaturePyramid) -> Result<TopDown> {
        let t = self.toggles();
        let mut levels: Vec<Tensor> = pyr.levels.clone();
        let mut gcafm = vec![None; LEVELS];
        let mut gaam = vec![None; LEVELS];
        if t.gaam {
            let out = self.gaam[LEVELS - 1].forward(&levels[LEVELS - 1], None)?;
            levels[LEVELS - 1] = out.refined.clone();
            gaam[LEVELS - 1] = Some(out);
        }
        for i in (0..LEVELS - 1).rev() {
            let (low, gate) = if t.gcafm {
                let fb = self.gcafm[i].forward(&levels[i + 1], &levels[i])?;
                let pair = (fb.refined_low.clone(), Some(fb.feedback_gate.clone()));
                gcafm[i] = Some(fb);
                pair
            } else {
                (levels[i].clone(), None)
            };
            levels[i] = if t.gaam {
                let out = self.gaam[i].forward(&low, gate.as_ref())?;
                let refined = out.refined.clone();
                gaam[i] = Some(out);
                refined
            } else {
                low
            };
        }
        Ok(TopDown {
            pyramid: FeaturePyramid::new(levels)?,
            gcafm,
            gaam,
        })
    }

    /// `G_i = W_i ∗ Pool(g_raw)`, pooled to the grid of level `level`.
    pub fn adapt_guidance(&self, g_raw: &Tensor, level: usize, like: &Tensor) -> Result<Tensor> {
        if !(1..=LEVELS).contains(&level) {
            return Err(Error::Invalid(format!("guidance level {level} outside 1..={LEVELS}")));
        }
        let s = like.shape();
        self.heads.resample[level - 1].forward(&g_raw.adaptive_avg_pool(s.h(), s.w())?)
    }

    /// Raw guidance: the finest GCAFM attention, or the squashed channel mean
    /// of `E_1'` when GCAFM is disabled.
    fn raw_guidance(&self, td: &TopDown) -> Tensor {
        match &td.gcafm[0] {
            Some(fb) => fb.attention.clone(),
            None => td.pyramid.level(1).mean_channels().sigmoid(),
        }
    }

    pub fn guidance(&self, td: &TopDown) -> Result<GuidanceSignal> {
        let g_raw = self.raw_guidance(td);
        let per_level = (1..=LEVELS)
            .map(|i| self.adapt_guidance(&g_raw, i, td.pyramid.level(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(GuidanceSignal {
            per_level,
            feedback_gate: td.gcafm[0].as_ref().map(|f| f.feedback_gate.clone()),
        })
    }

    /// `Attn_i = σ(C_1(E_i) + U(C_1(G_{i+1})))`, the guidance term omitted at
    /// the coarsest level.
    pub fn hierarchical_coordination(&self, pyr: &FeaturePyramid, guidance: &GuidanceSignal) -> Result<Vec<Tensor>> {
        (0..LEVELS)
            .map(|i| {
                let e = self.heads.attn_e[i].forward(&pyr.levels[i])?;
                let pre = if i + 1 < LEVELS {
                    let g = self.heads.attn_g[i].forward(&guidance.per_level[i + 1])?;
                    e.add(&g.resize_like(&e)?)?
                } else {
                    e
                };
                Ok(pre.sigmoid())
            })
            .collect()
    }

    /// Coarse-to-fine decoding over `[E_i ⊙ Attn_i, U(D_{i+1})]`, then the
    /// 1×1 head upsampled to `out_hw`.
    pub fn decoder_forward(&self, pyr: &FeaturePyramid, attn: &[Tensor], out_hw: (usize, usize)) -> Result<(Tensor, Tensor)> {
        let mut d: Option<Tensor> = None;
        for i in (0..LEVELS).rev() {
            let e = &pyr.levels[i];
            let skip = if self.toggles().msi { e.mul(&attn[i])? } else { e.clone() };
            let input = match &d {
                None => skip,
                Some(prev) => Tensor::concat_channels(&[&skip, &prev.resize_like(e)?])?,
            };
            d = Some(self.decoder[i].forward(&input)?);
        }
        let d = d.expect("at least one level");
        let logits = self.heads.seg.forward(&d)?.resize_bilinear(out_hw.0, out_hw.1)?;
        let prob = logits.sigmoid();
        Ok((logits, prob))
    }

    /// Full forward pass. With `gt`, MSRM weighs its pathways by mutual
    /// information; without, it uses its stored weights.
    pub fn forward(&self, img: &Tensor, gt: Option<&[SegMask]>) -> Result<ForwardOutput> {
        let (pyr, msrm) = self.encoder_forward(img, gt)?;
        let topdown = self.topdown_refine(&pyr)?;
        let guidance = self.guidance(&topdown)?;
        let attn = self.hierarchical_coordination(&topdown.pyramid, &guidance)?;
        let s = img.shape();
        let (logits, prob) = self.decoder_forward(&topdown.pyramid, &attn, (s.h(), s.w()))?;
        Ok(ForwardOutput {
            logits,
            prob,
            pyramid: topdown.pyramid.clone(),
            attn,
            guidance,
            topdown,
            msrm,
        })
    }

    /// Mutual information of each MSRM pathway with `gt` and the softmax
    /// weights it implies, or `None` when MSRM is disabled.
    pub fn pathway_diagnostics(&self, img: &Tensor, gt: &[SegMask]) -> Result<Option<([f64; 4], [f64; 4])>> {
        if !self.toggles().msrm {
            return Ok(None);
        }
        let e1 = self.encoder[0].forward(img)?;
        let bundle = pathway_forward(&e1, &self.msrm)?;
        let (w, mi) = pathway_weights(&bundle, gt)?;
        Ok(Some((mi, w)))
    }

    /// Top-level parameter group of a dotted parameter name.
    pub fn group_of(name: &str) -> String {
        name.split('.').next().unwrap_or(name).to_string()
    }
}

fn visit_list<T: Params>(items: &[T], prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
    for (i, item) in items.iter().enumerate() {
        item.visit(&join(prefix, &(i + 1).to_string()), f);
    }
}

fn visit_list_mut<T: Params>(items: &mut [T], prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
    for (i, item) in items.iter_mut().enumerate() {
        item.visit_mut(&join(prefix, &(i + 1).to_string()), f);
    }
}

impl Params for Heads {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        visit_list(&self.attn_e, &join(prefix, "attn_e"), f);
        visit_list(&self.attn_g, &join(prefix, "attn_g"), f);
        visit_list(&self.resample, &join(prefix, "resample"), f);
        self.seg.visit(&join(prefix, "seg"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        visit_list_mut(&mut self.attn_e, &join(prefix, "attn_e"), f);
        visit_list_mut(&mut self.attn_g, &join(prefix, "attn_g"), f);
        visit_list_mut(&mut self.resample, &join(prefix, "resample"), f);
        self.seg.visit_mut(&join(prefix, "seg"), f);
    }
}

impl Params for Pedm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        visit_list(&self.encoder, &join(prefix, "encoder"), f);
        self.msrm.visit(&join(prefix, "msrm"), f);
        visit_list(&self.gaam, &join(prefix, "gaam"), f);
        visit_list(&self.gcafm, &join(prefix, "gcafm"), f);
        visit_list(&self.decoder, &join(prefix, "decoder"), f);
        self.heads.visit(&join(prefix, "heads"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        visit_list_mut(&mut self.encoder, &join(prefix, "encoder"), f);
        self.msrm.visit_mut(&join(prefix, "msrm"), f);
        visit_list_mut(&mut self.gaam, &join(prefix, "gaam"), f);
        visit_list_mut(&mut self.gcafm, &join(prefix, "gcafm"), f);
        visit_list_mut(&mut self.decoder, &join(prefix, "decoder"), f);
        self.heads.visit_mut(&join(prefix, "heads"), f);
    }
}

/// Batch of images `(B, 3, H, W)` with their masks.
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor,
    pub masks: Vec<SegMask>,
}

impl Batch {
    pub fn new(images: Tensor, masks: Vec<SegMask>) -> Result<Self> {
        let s = images.shape();
        if masks.len() != s.b() || masks.iter().any(|m| m.dims() != (s.h(), s.w())) {
            return Err(Error::shape("Batch", format!("images {s} vs {} masks", masks.len())));
        }
        Ok(Batch { images, masks })
    }

    pub fn gt_tensor(&self) -> Result<Tensor> {
        SegMask::stack(&self.masks)
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::init::{rng, uniform};
    use crate::tensor::Shape;

    fn small(toggles: Toggles) -> Pedm {
        let cfg = ModelConfig {
            widths: [8, 8, 16, 16],
            toggles,
            ..ModelConfig::default()
        };
        Pedm::new(&mut rng(1), cfg).unwrap()
    }

    fn image(seed: u64, b: usize, size: usize) -> Tensor {
        uniform(&mut rng(seed), Shape::new(b, 3, size, size), 0.0, 1.0)
    }

    #[test]
    fn pyramid_geometry() {
        let m = Pedm::new(&mut rng(2), ModelConfig::default()).unwrap();
        let (pyr, _) = m.encoder_forward(&image(3, 1, 64), None).unwrap();
        let dims: Vec<_> = pyr.levels.iter().map(|t| (t.shape().c(), t.shape().h())).collect();
        assert_eq!(dims, vec![(16, 32), (32, 16), (64, 8), (128, 4)]);
    }

    #[test]
    fn indivisible_input_names_padding() {
        let m = small(Toggles::ALL);
        let err = m.encoder_forward(&image(3, 1, 40), None).unwrap_err().to_string();
        assert!(err.contains("48x48"), "{err}");
    }

    #[test]
    fn zero_input_and_biases_give_zero_pyramid() {
        let mut m = small(Toggles::NONE);
        for stage in &mut m.encoder {
            stage.visit_mut("", &mut |n, t| {
                if n.ends_with("bias") {
                    *t = Tensor::zeros(t.shape()).to_parameter();
                }
            });
        }
        let (pyr, _) = m.encoder_forward(&Tensor::zeros(Shape::new(1, 3, 32, 32)), None).unwrap();
        assert!(pyr.levels.iter().all(|l| l.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn zeroed_feedback_leaves_pyramid_unchanged() {
        let mut m = small(Toggles {
            gaam: false,
            ..Toggles::ALL
        });
        m.gcafm.iter_mut().for_each(|g| g.zero_feedback = true);
        let (pyr, _) = m.encoder_forward(&image(4, 1, 32), None).unwrap();
        let td = m.topdown_refine(&pyr).unwrap();
        for (a, b) in td.pyramid.levels.iter().zip(&pyr.levels) {
            assert_eq!(a.to_vec(), b.to_vec());
        }
    }

    #[test]
    fn refinement_order_matters() {
        let m = small(Toggles::ALL);
        let (pyr, _) = m.encoder_forward(&image(5, 1, 32), None).unwrap();
        let td = m.topdown_refine(&pyr).unwrap();
        // Reverse order: level 2 sees the unrefined level 3.
        let e4 = m.gaam[3].forward(pyr.level(4), None).unwrap().refined;
        let fb2 = m.gcafm[1].forward(pyr.level(3), pyr.level(2)).unwrap();
        let e2 = m.gaam[1].forward(&fb2.refined_low, Some(&fb2.feedback_gate)).unwrap().refined;
        let fb3 = m.gcafm[2].forward(&e4, pyr.level(3)).unwrap();
        let e3 = m.gaam[2].forward(&fb3.refined_low, Some(&fb3.feedback_gate)).unwrap().refined;
        assert_eq!(e3.to_vec(), td.pyramid.level(3).to_vec());
        assert_ne!(e2.to_vec(), td.pyramid.level(2).to_vec());
    }

    #[test]
    fn guidance_matches_level_grids() {
        let m = small(Toggles::ALL);
        let out = m.forward(&image(6, 2, 32), None).unwrap();
        for (g, e) in out.guidance.per_level.iter().zip(&out.pyramid.levels) {
            assert_eq!(g.shape(), Shape::new(2, 1, e.shape().h(), e.shape().w()));
        }
        for (a, e) in out.attn.iter().zip(&out.pyramid.levels) {
            assert_eq!((a.shape().h(), a.shape().w()), (e.shape().h(), e.shape().w()));
        }
    }

    #[test]
    fn constant_guidance_stays_constant() {
        let m = small(Toggles::ALL);
        let g = Tensor::full(Shape::new(1, 1, 16, 16), 0.3);
        for level in 1..=LEVELS {
            let like = Tensor::zeros(Shape::new(1, 1, 16 >> (level - 1), 16 >> (level - 1)));
            let out = m.adapt_guidance(&g, level, &like).unwrap();
            assert_eq!(out.shape(), like.shape());
            assert!(out.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
        }
        assert!(m.adapt_guidance(&g, 0, &g).is_err());
    }

    #[test]
    fn zero_heads_give_half_attention() {
        let mut m = small(Toggles::ALL);
        m.heads.attn_e.iter_mut().chain(m.heads.attn_g.iter_mut()).for_each(|h| {
            h.visit_mut("", &mut |_, t| *t = Tensor::zeros(t.shape()).to_parameter())
        });
        let out = m.forward(&image(7, 1, 32), None).unwrap();
        assert!(out.attn.iter().all(|a| a.data().iter().all(|&v| v == 0.5)));
    }

    #[test]
    fn guidance_term_changes_attention() {
        let m = small(Toggles::ALL);
        let out = m.forward(&image(8, 1, 32), None).unwrap();
        let mut g = out.guidance.clone();
        g.per_level.iter_mut().for_each(|t| *t = Tensor::zeros(t.shape()));
        let without = m.hierarchical_coordination(&out.pyramid, &g).unwrap();
        assert_ne!(without[0].to_vec(), out.attn[0].to_vec());
        assert_eq!(without[3].to_vec(), out.attn[3].to_vec());
    }

    #[test]
    fn prediction_shape_range_and_purity() {
        let m = small(Toggles::ALL);
        let img = image(9, 2, 32);
        let a = m.forward(&img, None).unwrap();
        let b = m.forward(&img, None).unwrap();
        assert_eq!(a.logits.shape(), Shape::new(2, 1, 32, 32));
        assert!(a.prob.data().iter().all(|&p| p > 0.0 && p < 1.0));
        assert_eq!(a.prob.to_vec(), b.prob.to_vec());
    }

    #[test]
    fn toggles_preserve_shapes() {
        let img = image(10, 1, 32);
        let reference = small(Toggles::ALL).forward(&img, None).unwrap();
        for bits in 0..16u8 {
            let t = Toggles {
                msrm: bits & 1 != 0,
                gaam: bits & 2 != 0,
                gcafm: bits & 4 != 0,
                msi: bits & 8 != 0,
            };
            let out = small(t).forward(&img, None).unwrap();
            assert_eq!(out.prob.shape(), reference.prob.shape());
            for (a, b) in out.pyramid.levels.iter().zip(&reference.pyramid.levels) {
                assert_eq!(a.shape(), b.shape());
            }
            for (a, b) in out.attn.iter().zip(&reference.attn) {
                assert_eq!(a.shape(), b.shape());
            }
        }
    }

    #[test]
    fn parameter_groups() {
        let m = small(Toggles::ALL);
        let mut groups: Vec<String> = m.named_params().iter().map(|(n, _)| Pedm::group_of(n)).collect();
        groups.dedup();
        assert_eq!(groups, ["encoder", "msrm", "gaam", "gcafm", "decoder", "heads"]);
    }
}
