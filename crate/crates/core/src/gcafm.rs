//! Guided cortical attention feedback: high-level features attend over
//! low-level ones, a gated residual refines the low-level map, and a
//! top-down attention map is iteratively pulled toward a learned target.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{join, ConvParams, Params, PoolKind, Tensor};

pub const DEFAULT_POOL_TO: usize = 16;
pub const DEFAULT_D_K: usize = 32;
pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_BETA: f64 = 0.3;
pub const DEFAULT_ETA: f64 = 0.25;
const ALIGN_INIT_SCALE: f64 = 0.1;
pub const DEFAULT_REFINE_STEPS: usize = 3;

#[derive(Clone, Debug)]
pub struct GcafmParams {
    /// `C_h → C_m` on the resized high-level map.
    pub hcomp: ConvParams,
    /// `C_l → C_m`.
    pub lenh: ConvParams,
    pub proj_q: ConvParams,
    pub proj_k: ConvParams,
    pub proj_v: ConvParams,
    /// `C_h → C_m`, sigmoid context gate.
    pub gate: ConvParams,
    /// `d_k → C_m` on the attended features.
    pub conv_attn: ConvParams,
    /// `2·C_m → C_l`.
    pub align: ConvParams,
    /// Target-attention head `W_c`, `C_h → 1`.
    pub target_head: ConvParams,
    /// Refinement target head `φ`, `C_m → 1`.
    pub phi: ConvParams,
    /// Modulation head of the guided combination, `C_h → 1`.
    pub mod_head: ConvParams,
    /// Compatibility head of the local score, `C_l + 1 → 1`.
    pub compat: ConvParams,
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    pub pool_to: usize,
    pub refine_steps: usize,
    /// Test hook: zeroes the aligned feedback before the residual add.
    pub zero_feedback: bool,
}

#[derive(Clone, Debug)]
pub struct FeedbackResult {
    pub refined_low: Tensor,
    /// Final refined attention `A_T`, `(B, 1, H_l, W_l)`.
    pub attention: Tensor,
    /// `σ(GAP(F_feedback))`, `(B, C_m, 1, 1)`.
    pub feedback_gate: Tensor,
    /// `A_0, …, A_T`.
    pub attention_seq: Vec<Tensor>,
    /// Target attention `Â(H)` resized to the low-level grid.
    pub target: Tensor,
}

#[derive(Clone, Debug)]
pub struct CrossAttention {
    /// `(B, d_k, H_l, W_l)`.
    pub output: Tensor,
    /// `(B, 1, P², P²)` row-stochastic attention weights.
    pub weights: Tensor,
}

impl GcafmParams {
    pub fn new(rng: &mut impl Rng, c_h: usize, c_l: usize, d_k: usize) -> Result<Self> {
        if c_h == 0 || c_l == 0 || d_k == 0 {
            return Err(Error::Invalid("GCAFM channel counts must be positive".into()));
        }
        let c_m = c_l;
        let k = |rng: &mut _, co, ci| ConvParams::kaiming(rng, co, ci, (1, 1), 1, (0, 0), true);
        let mut align = k(rng, c_l, 2 * c_m);
        // A small residual branch keeps the untrained module close to identity.
        align.weight = align.weight.scale(ALIGN_INIT_SCALE).to_parameter();
        Ok(GcafmParams {
            hcomp: k(rng, c_m, c_h),
            lenh: k(rng, c_m, c_l),
            proj_q: k(rng, d_k, c_m),
            proj_k: k(rng, d_k, c_m),
            proj_v: k(rng, d_k, c_m),
            gate: k(rng, c_m, c_h),
            conv_attn: k(rng, c_m, d_k),
            align,
            target_head: k(rng, 1, c_h),
            phi: k(rng, 1, c_m),
            mod_head: k(rng, 1, c_h),
            compat: k(rng, 1, c_l + 1),
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            eta: DEFAULT_ETA,
            pool_to: DEFAULT_POOL_TO,
            refine_steps: DEFAULT_REFINE_STEPS,
            zero_feedback: false,
        })
    }

    pub fn d_k(&self) -> usize {
        self.proj_q.c_out()
    }

    pub fn forward(&self, h: &Tensor, l: &Tensor) -> Result<FeedbackResult> {
        gcafm_forward(h, l, self)
    }

    fn convs(&self) -> [(&'static str, &ConvParams); 12] {
        [
            ("hcomp", &self.hcomp),
            ("lenh", &self.lenh),
            ("proj_q", &self.proj_q),
            ("proj_k", &self.proj_k),
            ("proj_v", &self.proj_v),
            ("gate", &self.gate),
            ("conv_attn", &self.conv_attn),
            ("align", &self.align),
            ("target_head", &self.target_head),
            ("phi", &self.phi),
            ("mod_head", &self.mod_head),
            ("compat", &self.compat),
        ]
    }
}

impl Params for GcafmParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (name, conv) in self.convs() {
            conv.visit(&join(prefix, name), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        let convs: [(&str, &mut ConvParams); 12] = [
            ("hcomp", &mut self.hcomp),
            ("lenh", &mut self.lenh),
            ("proj_q", &mut self.proj_q),
            ("proj_k", &mut self.proj_k),
            ("proj_v", &mut self.proj_v),
            ("gate", &mut self.gate),
            ("conv_attn", &mut self.conv_attn),
            ("align", &mut self.align),
            ("target_head", &mut self.target_head),
            ("phi", &mut self.phi),
            ("mod_head", &mut self.mod_head),
            ("compat", &mut self.compat),
        ];
        for (name, conv) in convs {
            conv.visit_mut(&join(prefix, name), f);
        }
    }
}

/// `Ĥ = resize(h, l)`, `H_c = f_hcomp(Ĥ)`, `L_e = f_lenh(l)`.
pub fn align_and_compress(h: &Tensor, l: &Tensor, p: &GcafmParams) -> Result<(Tensor, Tensor)> {
    let h_hat = h.resize_like(l)?;
    Ok((p.hcomp.forward(&h_hat)?, p.lenh.forward(l)?))
}

fn pooled_side(n: usize, pool_to: usize) -> usize {
    pool_to.clamp(1, n)
}

/// `Softmax(QKᵀ/√d_k)V` on a pooled grid, queries from `l_e`, keys and values
/// from `h_c`, resized back to the low-level grid.
pub fn cross_attention(l_e: &Tensor, h_c: &Tensor, p: &GcafmParams) -> Result<CrossAttention> {
    let s = l_e.shape();
    let (ph, pw) = (pooled_side(s.h(), p.pool_to), pooled_side(s.w(), p.pool_to));
    let lp = l_e.adaptive_avg_pool(ph, pw)?;
    let hp = h_c.adaptive_avg_pool(ph, pw)?;
    let q = p.proj_q.forward(&lp)?.to_tokens();
    let k = p.proj_k.forward(&hp)?.to_tokens();
    let v = p.proj_v.forward(&hp)?.to_tokens();
    let scale = 1.0 / (p.d_k() as f64).sqrt();
    let weights = q.matmul(&k.transpose_last2())?.scale(scale).softmax_last()?;
    let attended = weights.matmul(&v)?.from_tokens(ph, pw)?;
    Ok(CrossAttention {
        output: attended.resize_bilinear(s.h(), s.w())?,
        weights,
    })
}

/// `f_conv(A) ⊙ σ(f_gate(H))`, the gate resized to `a`'s grid.
pub fn context_gate_and_feedback(a: &Tensor, h: &Tensor, p: &GcafmParams) -> Result<Tensor> {
    let g = p.gate.forward(h)?.sigmoid().resize_like(a)?;
    p.conv_attn.forward(a)?.mul(&g)
}

/// `Â(H) = σ(W_c H + b_c)` at `h`'s resolution.
pub fn target_attention(h: &Tensor, p: &GcafmParams) -> Result<Tensor> {
    Ok(p.target_head.forward(h)?.sigmoid())
}

/// Refinement target `σ(φ(H_c ⊙ L))`.
pub fn refine_target(h_c: &Tensor, l: &Tensor, p: &GcafmParams) -> Result<Tensor> {
    Ok(p.phi.forward(&h_c.mul(l)?)?.sigmoid())
}

/// One descent step on `‖A − T‖²`: `clip(A − 2η(A − T), 0, 1)`.
pub fn attention_refine_step(a_t: &Tensor, target: &Tensor, eta: f64) -> Result<Tensor> {
    if !(eta >= 0.0) {
        return Err(Error::Invalid(format!("refinement step must be non-negative, got {eta}")));
    }
    Ok(a_t.sub(&a_t.sub(target)?.scale(2.0 * eta))?.clamp(0.0, 1.0))
}

pub fn gcafm_forward(h: &Tensor, l: &Tensor, p: &GcafmParams) -> Result<FeedbackResult> {
    let (hs, ls) = (h.shape(), l.shape());
    if hs.b() != ls.b() || hs.c() != p.hcomp.c_in() || ls.c() != p.lenh.c_in() {
        return Err(Error::shape("gcafm", format!("high {hs} / low {ls} do not fit the module")));
    }
    let (h_c, l_e) = align_and_compress(h, l, p)?;
    let attn = cross_attention(&l_e, &h_c, p)?;
    let fb = context_gate_and_feedback(&attn.output, h, p)?;
    let feedback_gate = fb.pool(PoolKind::GlobalAvg, 0)?.sigmoid();
    let refined_low = if p.zero_feedback {
        l.add(&Tensor::zeros(ls))?
    } else {
        let y = p.align.forward(&Tensor::concat_channels(&[&fb, &l_e])?)?;
        l.add(&y.mul(&y.sigmoid())?)?
    };

    let target = target_attention(h, p)?.resize_like(l)?;
    let goal = refine_target(&h_c, l, p)?;
    let mut seq = vec![target.clone()];
    for _ in 0..p.refine_steps {
        let next = attention_refine_step(seq.last().expect("non-empty"), &goal, p.eta)?;
        seq.push(next);
    }
    Ok(FeedbackResult {
        refined_low,
        attention: seq.last().expect("non-empty").clone(),
        feedback_gate,
        attention_seq: seq,
        target,
    })
}

/// `F_g = L ⊙ M_g(H) + α·(L − P(H)) + β·(a ⊙ P(H))` with `P = f_hcomp ∘ resize`.
pub fn guided_combine(h: &Tensor, l: &Tensor, a: &Tensor, p: &GcafmParams) -> Result<Tensor> {
    let h_hat = h.resize_like(l)?;
    let m_g = p.mod_head.forward(&h_hat)?.sigmoid();
    let proj = p.hcomp.forward(&h_hat)?;
    let e_p = l.sub(&proj)?;
    let g_att = a.mul(&proj)?;
    l.mul(&m_g)?.add(&e_p.scale(p.alpha))?.add(&g_att.scale(p.beta))
}

/// `f_local ⊙ σ(compat([f_local, a]))`.
pub fn guided_local_score(f_local: &Tensor, a: &Tensor, p: &GcafmParams) -> Result<Tensor> {
    let prob = p.compat.forward(&Tensor::concat_channels(&[f_local, a])?)?.sigmoid();
    f_local.mul(&prob)
}
