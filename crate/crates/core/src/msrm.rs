//! Multiscale retinal module: four parallel pathways fused with lateral
//! inhibition and divisive normalization, weighted by their mutual
//! information with the ground truth, and constrained by a contextual gate.

use rand::Rng;

use crate::error::{Error, Result};
use crate::loss::dice_loss;
use crate::mask::SegMask;
use crate::tensor::{join, ConvParams, Params, Shape, Tensor};

pub const MAGNO_SIGMA: f64 = 1.5;
pub const MI_BINS: usize = 32;
pub const DEFAULT_LAMBDA_INHIBIT: f64 = 0.5;
pub const DEFAULT_LAMBDA_GATE: f64 = 0.01;
pub const DEFAULT_EPS: f64 = 1e-6;
pub const DEFAULT_TAU_GUID: f64 = 0.3;
/// Decay of the running pathway weights used at inference.
pub const WEIGHT_EMA: f64 = 0.9;
/// Upper bound on the gate-constraint rescale factor.
pub const MAX_RESCALE: f64 = 2.0;
const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct MsrmParams {
    pub w_p: ConvParams,
    pub w_m: ConvParams,
    pub w_k: ConvParams,
    /// `(1, C, 1, 1)`.
    pub b_k: Tensor,
    pub w_on: ConvParams,
    pub w_off: ConvParams,
    pub gate_head: ConvParams,
    pub lambda_inhibit: f64,
    pub lambda_gate: f64,
    pub tau_guid: f64,
    pub eps: f64,
    /// Pathway weights used when no ground truth is available.
    pub stored_weights: [f64; 4],
}

#[derive(Clone, Debug)]
pub struct PathwayBundle {
    pub parvo: Tensor,
    pub magno: Tensor,
    pub konio: Tensor,
    pub onoff: Tensor,
    pub weights: Option<[f64; 4]>,
}

impl PathwayBundle {
    pub fn maps(&self) -> [&Tensor; 4] {
        [&self.parvo, &self.magno, &self.konio, &self.onoff]
    }
}

#[derive(Clone, Debug)]
pub struct GateResult {
    /// `(B, 1, H, W)`.
    pub gate: Tensor,
    /// Per image: spatial mean of the gate reaches `τ_guid`.
    pub satisfied: Vec<bool>,
    /// The fused map after the soft constraint projection.
    pub projected: Tensor,
}

#[derive(Clone, Debug)]
pub struct MsrmOutput {
    pub features: Tensor,
    pub gate: Tensor,
    pub satisfied: Vec<bool>,
    pub weights: [f64; 4],
    /// Batch-mean MI per pathway in bits, when ground truth was supplied.
    pub mi: Option<[f64; 4]>,
    /// Effective information `Σ w_i MI_i + λ·MI(fused)`, diagnostic only.
    pub i_eff: Option<f64>,
    /// `(B, 1, H, W)` auxiliary segmentation in (0, 1).
    pub seg_pred: Tensor,
}

impl MsrmParams {
    pub fn new(rng: &mut impl Rng, channels: usize) -> Self {
        let c = channels;
        let k = |rng: &mut _, bias| ConvParams::kaiming(rng, c, c, (3, 3), 1, (1, 1), bias);
        MsrmParams {
            w_p: k(rng, true),
            w_m: k(rng, true),
            w_k: k(rng, false),
            b_k: Tensor::zeros(Shape::new(1, c, 1, 1)).to_parameter(),
            w_on: k(rng, false),
            w_off: k(rng, false),
            gate_head: ConvParams::kaiming(rng, 1, c, (1, 1), 1, (0, 0), true),
            lambda_inhibit: DEFAULT_LAMBDA_INHIBIT,
            lambda_gate: DEFAULT_LAMBDA_GATE,
            tau_guid: DEFAULT_TAU_GUID,
            eps: DEFAULT_EPS,
            stored_weights: [0.25; 4],
        }
    }

    pub fn channels(&self) -> usize {
        self.w_p.c_out()
    }

    /// Blends freshly estimated weights into the stored running weights.
    pub fn update_stored_weights(&mut self, fresh: [f64; 4]) {
        for (s, f) in self.stored_weights.iter_mut().zip(fresh) {
            *s = WEIGHT_EMA * *s + (1.0 - WEIGHT_EMA) * f;
        }
        let z: f64 = self.stored_weights.iter().sum();
        self.stored_weights.iter_mut().for_each(|s| *s /= z);
    }

    /// Full module. With `gt`, pathway weights come from mutual information;
    /// otherwise the stored weights are used.
    pub fn forward(&self, x: &Tensor, gt: Option<&[SegMask]>) -> Result<MsrmOutput> {
        let mut bundle = pathway_forward(x, self)?;
        let (weights, mi) = match gt {
            Some(gt) => {
                let (w, mi) = pathway_weights(&bundle, gt)?;
                (w, Some(mi))
            }
            None => (self.stored_weights, None),
        };
        bundle.weights = Some(weights);
        let fused = msrm_fuse(&bundle, self)?;
        let g = contextual_gate(&fused, self)?;
        let i_eff = match (gt, mi) {
            (Some(gt), Some(mi)) => {
                let fused_mi = batch_mi(&fused.mean_channels(), gt)?;
                Some(weights.iter().zip(mi).map(|(w, m)| w * m).sum::<f64>() + self.lambda_inhibit * fused_mi)
            }
            _ => None,
        };
        let seg_pred = weighted_sum(&bundle, &weights)?.mul(&g.gate)?.mean_channels().sigmoid();
        Ok(MsrmOutput {
            features: g.projected,
            gate: g.gate,
            satisfied: g.satisfied,
            weights,
            mi,
            i_eff,
            seg_pred,
        })
    }
}

impl Params for MsrmParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.w_p.visit(&join(prefix, "w_p"), f);
        self.w_m.visit(&join(prefix, "w_m"), f);
        self.w_k.visit(&join(prefix, "w_k"), f);
        f(&join(prefix, "b_k"), &self.b_k);
        self.w_on.visit(&join(prefix, "w_on"), f);
        self.w_off.visit(&join(prefix, "w_off"), f);
        self.gate_head.visit(&join(prefix, "gate_head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.w_p.visit_mut(&join(prefix, "w_p"), f);
        self.w_m.visit_mut(&join(prefix, "w_m"), f);
        self.w_k.visit_mut(&join(prefix, "w_k"), f);
        f(&join(prefix, "b_k"), &mut self.b_k);
        self.w_on.visit_mut(&join(prefix, "w_on"), f);
        self.w_off.visit_mut(&join(prefix, "w_off"), f);
        self.gate_head.visit_mut(&join(prefix, "gate_head"), f);
    }
}

pub fn pathway_forward(x: &Tensor, p: &MsrmParams) -> Result<PathwayBundle> {
    Ok(PathwayBundle {
        parvo: p.w_p.forward(x)?,
        magno: p.w_m.forward(x)?.gaussian_blur(MAGNO_SIGMA)?,
        konio: p.w_k.forward(x)?.add(&p.b_k)?.relu(),
        onoff: p.w_on.forward(x)?.sub(&p.w_off.forward(x)?)?,
        weights: None,
    })
}

/// Mean across the four pathway maps.
pub fn lateral_inhibition(b: &PathwayBundle) -> Result<Tensor> {
    Ok(b.parvo.add(&b.magno)?.add(&b.konio)?.add(&b.onoff)?.scale(0.25))
}

/// Per `(batch, channel)` plane: `(y − μ)/(σ + ε)` with population σ.
pub fn divisive_normalize(y: &Tensor, eps: f64) -> Result<Tensor> {
    if !(eps > 0.0) {
        return Err(Error::Invalid(format!("eps must be positive, got {eps}")));
    }
    let s = y.shape();
    let planes = Shape::new(s.b(), s.c(), 1, 1);
    let centred = y.sub(&y.mean_to(planes)?)?;
    let sigma = centred.square().mean_to(planes)?.sqrt();
    centred.div(&sigma.add_scalar(eps))
}

fn check_weights(w: &[f64; 4]) -> Result<()> {
    let sum: f64 = w.iter().sum();
    if w.iter().any(|&v| v < 0.0 || !v.is_finite()) || (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::Invalid(format!("pathway weights {w:?} are not a distribution")));
    }
    Ok(())
}

fn weighted_sum(b: &PathwayBundle, w: &[f64; 4]) -> Result<Tensor> {
    let m = b.maps();
    let mut acc = m[0].scale(w[0]);
    for i in 1..4 {
        acc = acc.add(&m[i].scale(w[i]))?;
    }
    Ok(acc)
}

/// `Norm(Σ w_i L_i − λ·I)`.
pub fn msrm_fuse(b: &PathwayBundle, p: &MsrmParams) -> Result<Tensor> {
    let w = b
        .weights
        .ok_or_else(|| Error::Invalid("pathway weights are unset".into()))?;
    check_weights(&w)?;
    let inhibited = weighted_sum(b, &w)?.sub(&lateral_inhibition(b)?.scale(p.lambda_inhibit))?;
    divisive_normalize(&inhibited, p.eps)
}

/// Mutual information in bits between an activation plane in [0, 1]
/// (quantized into 32 uniform bins) and a binary mask of the same size.
pub fn mutual_information(activation: &[f64], gt: &SegMask) -> Result<f64> {
    if activation.len() != gt.len() {
        return Err(Error::shape(
            "mutual_information",
            format!("{} activations for a {:?} mask", activation.len(), gt.dims()),
        ));
    }
    let n = activation.len() as f64;
    let mut joint = [[0usize; 2]; MI_BINS];
    for (&a, &y) in activation.iter().zip(gt.data()) {
        let bin = ((a.clamp(0.0, 1.0) * MI_BINS as f64) as usize).min(MI_BINS - 1);
        joint[bin][y as usize] += 1;
    }
    let py = [0, 1].map(|y| joint.iter().map(|r| r[y]).sum::<usize>() as f64 / n);
    let mut mi = 0.0;
    for row in &joint {
        let pa = (row[0] + row[1]) as f64 / n;
        for y in 0..2 {
            if row[y] > 0 {
                let pj = row[y] as f64 / n;
                mi += pj * (pj / (pa * py[y])).ln();
            }
        }
    }
    Ok((mi / std::f64::consts::LN_2).max(0.0))
}

/// Min-max normalizes a plane into [0, 1]; constant planes map to zeros.
fn unit_range(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let r = hi - lo;
    v.iter().map(|x| if r > 0.0 { (x - lo) / r } else { 0.0 }).collect()
}

/// Batch-mean MI of a `(B, 1, h, w)` map (resized to the mask size and
/// normalized to [0, 1] per image) against the masks.
fn batch_mi(map: &Tensor, gt: &[SegMask]) -> Result<f64> {
    let s = map.shape();
    if gt.len() != s.b() {
        return Err(Error::shape("pathway MI", format!("{} masks for batch {}", gt.len(), s.b())));
    }
    let (h, w) = gt[0].dims();
    let up = map.detach().resize_bilinear(h, w)?;
    let mut acc = 0.0;
    for (b, m) in gt.iter().enumerate() {
        acc += mutual_information(&unit_range(up.plane(b, 0)), m)?;
    }
    Ok(acc / s.b() as f64)
}

/// Softmax over the four batch-mean pathway MI values. Returns the weights
/// and the MI values (bits). Treated as constants by the gradient engine.
pub fn pathway_weights(b: &PathwayBundle, gt: &[SegMask]) -> Result<([f64; 4], [f64; 4])> {
    let mut mi = [0.0; 4];
    for (i, m) in b.maps().into_iter().enumerate() {
        mi[i] = batch_mi(&m.mean_channels(), gt)?;
    }
    let w = crate::tensor::softmax_rows(&mi, 4)?;
    Ok(([w[0], w[1], w[2], w[3]], mi))
}

/// Gate `σ(gate_head(fused))` and the soft projection that rescales `fused`
/// by `clamp(τ / mean(gate), 1, 2)` per image.
pub fn contextual_gate(fused: &Tensor, p: &MsrmParams) -> Result<GateResult> {
    let gate = p.gate_head.forward(fused)?.sigmoid();
    let per_image = Shape::new(fused.shape().b(), 1, 1, 1);
    let mean = gate.mean_to(per_image)?;
    let satisfied = mean.data().iter().map(|&m| m >= p.tau_guid).collect();
    let factor = mean.recip().scale(p.tau_guid).clamp(1.0, MAX_RESCALE);
    let projected = fused.mul(&factor)?;
    Ok(GateResult {
        gate,
        satisfied,
        projected,
    })
}

/// Dice of the auxiliary prediction plus `λ_gate·‖gate‖₂` (per image, batch
/// mean). `pred` is resized to the ground-truth resolution first.
pub fn msrm_loss(pred: &Tensor, gt: &Tensor, gate: &Tensor, lambda_gate: f64) -> Result<Tensor> {
    let gs = gt.shape();
    let pred = pred.resize_bilinear(gs.h(), gs.w())?;
    let dice = dice_loss(&pred, gt)?;
    if lambda_gate == 0.0 {
        return Ok(dice);
    }
    let norm = gate.square().sum_per_image().sqrt().mean_all();
    dice.add(&norm.scale(lambda_gate))
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

    fn bundle_of(maps: [Tensor; 4]) -> PathwayBundle {
        let [parvo, magno, konio, onoff] = maps;
        PathwayBundle {
            parvo,
            magno,
            konio,
            onoff,
            weights: None,
        }
    }

    #[test]
    fn onoff_cancels_with_equal_weights() {
        let mut p = MsrmParams::new(&mut rng(1), 3);
        p.w_off = p.w_on.clone();
        let x = uniform(&mut rng(2), Shape::new(1, 3, 5, 5), -1.0, 1.0);
        let b = pathway_forward(&x, &p).unwrap();
        assert!(b.onoff.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn konio_cut_off_by_negative_bias() {
        let mut p = MsrmParams::new(&mut rng(1), 2);
        p.b_k = Tensor::full(Shape::new(1, 2, 1, 1), -1e9);
        let x = uniform(&mut rng(2), Shape::new(1, 2, 4, 4), -1.0, 1.0);
        assert!(pathway_forward(&x, &p).unwrap().konio.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn magno_keeps_constants_with_delta_kernel() {
        let mut p = MsrmParams::new(&mut rng(1), 2);
        p.w_m = ConvParams::delta(2, (3, 3), true).with_pad_mode(crate::tensor::PadMode::Replicate);
        let x = Tensor::full(Shape::new(1, 2, 6, 6), 0.7);
        let m = pathway_forward(&x, &p).unwrap().magno;
        assert!(m.data().iter().all(|&v| (v - 0.7).abs() < 1e-14));
    }

    #[test]
    fn inhibition_is_pathway_mean() {
        let s = Shape::new(1, 1, 1, 1);
        let b = bundle_of([1.0, 3.0, 5.0, 7.0].map(|v| Tensor::full(s, v)));
        assert_eq!(lateral_inhibition(&b).unwrap().item(), 4.0);
        let m = Tensor::full(s, 2.5);
        let same = bundle_of([m.clone(), m.clone(), m.clone(), m]);
        assert_eq!(lateral_inhibition(&same).unwrap().item(), 2.5);
    }

    #[test]
    fn normalize_example() {
        let y = Tensor::new(Shape::new(1, 1, 1, 4), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let n = divisive_normalize(&y, 1e-8).unwrap();
        let expect = [-1.3416, -0.4472, 0.4472, 1.3416];
        for (a, e) in n.data().iter().zip(expect) {
            assert!((a - e).abs() < 1e-4);
        }
        let c = divisive_normalize(&Tensor::full(Shape::new(1, 2, 3, 3), 4.0), 1e-6).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
        let big = divisive_normalize(&y.scale(10.0), 1e-8).unwrap();
        for (a, b) in n.data().iter().zip(big.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn fuse_examples() {
        let mut p = MsrmParams::new(&mut rng(1), 1);
        let s = Shape::new(1, 1, 2, 2);
        let m = Tensor::new(s, vec![0.1, 0.5, -0.3, 0.9]).unwrap();
        let mut eq = bundle_of([m.clone(), m.clone(), m.clone(), m.clone()]);
        eq.weights = Some([0.1, 0.2, 0.3, 0.4]);
        p.lambda_inhibit = 1.0;
        let out = msrm_fuse(&eq, &p).unwrap();
        assert!(out.data().iter().all(|v| v.abs() < 1e-9), "{:?}", out.data());

        p.lambda_inhibit = 0.0;
        let parvo = uniform(&mut rng(3), s, 0.0, 1.0);
        let mut sel = bundle_of([parvo.clone(), m.clone(), m.clone(), m.clone()]);
        sel.weights = Some([1.0, 0.0, 0.0, 0.0]);
        let expect = divisive_normalize(&parvo, p.eps).unwrap();
        assert_eq!(msrm_fuse(&sel, &p).unwrap().to_vec(), expect.to_vec());

        sel.weights = Some([0.5, 0.6, 0.0, 0.0]);
        assert!(msrm_fuse(&sel, &p).is_err());
    }

    #[test]
    fn mi_examples() {
        let gt = SegMask::from_fn(4, 4, |r, _| r < 2);
        let same: Vec<f64> = gt.to_f64();
        let flipped: Vec<f64> = same.iter().map(|v| 1.0 - v).collect();
        assert!((mutual_information(&same, &gt).unwrap() - 1.0).abs() < 1e-12);
        assert!((mutual_information(&flipped, &gt).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(mutual_information(&[0.3; 16], &gt).unwrap(), 0.0);
        let empty = SegMask::zeros(4, 4);
        assert_eq!(mutual_information(&same, &empty).unwrap(), 0.0);
    }

    #[test]
    fn weights_favour_informative_pathway() {
        let gt = SegMask::from_fn(4, 4, |_, c| c < 2);
        let good = gt.to_tensor();
        let flat = Tensor::full(Shape::new(1, 1, 4, 4), 0.2);
        let b = bundle_of([good, flat.clone(), flat.clone(), flat]);
        let (w, mi) = pathway_weights(&b, std::slice::from_ref(&gt)).unwrap();
        assert!((mi[0] - 1.0).abs() < 1e-12);
        let e = std::f64::consts::E;
        assert!((w[0] - e / (e + 3.0)).abs() < 1e-12);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let m = uniform(&mut rng(5), Shape::new(1, 1, 4, 4), 0.0, 1.0);
        let same = bundle_of([m.clone(), m.clone(), m.clone(), m]);
        assert_eq!(pathway_weights(&same, &[gt]).unwrap().0, [0.25; 4]);
    }

    #[test]
    fn gate_examples() {
        let mut p = MsrmParams::new(&mut rng(1), 2);
        p.gate_head = zero_conv(&p.gate_head);
        let fused = uniform(&mut rng(2), Shape::new(1, 2, 3, 3), -1.0, 1.0);
        p.tau_guid = 0.5;
        let g = contextual_gate(&fused, &p).unwrap();
        assert!(g.gate.data().iter().all(|&v| v == 0.5));
        assert_eq!(g.satisfied, vec![true]);
        assert_eq!(g.projected.to_vec(), fused.to_vec());
        p.tau_guid = 0.6;
        assert_eq!(contextual_gate(&fused, &p).unwrap().satisfied, vec![false]);
        p.tau_guid = 0.0;
        assert_eq!(contextual_gate(&fused, &p).unwrap().projected.to_vec(), fused.to_vec());
        // Mean gate 0.25 against τ = 0.5 doubles the map.
        p.gate_head.bias = Some(Tensor::full(Shape::new(1, 1, 1, 1), -(3.0f64).ln()));
        p.tau_guid = 0.5;
        let g = contextual_gate(&fused, &p).unwrap();
        for (a, b) in g.projected.data().iter().zip(fused.data()) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_examples() {
        let s = Shape::new(1, 1, 2, 2);
        let gt = Tensor::new(s, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let gate = Tensor::full(s, 0.5);
        assert_eq!(msrm_loss(&gt, &gt, &gate, 0.0).unwrap().item(), 0.0);
        let disjoint = gt.one_minus();
        let l = msrm_loss(&disjoint, &gt, &gate, 0.0).unwrap().item();
        assert!((l - (1.0 - 1.0 / 5.0)).abs() < 1e-12);
        assert!((msrm_loss(&gt, &gt, &gate, 1.0).unwrap().item() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stored_weights_track_fresh_ones() {
        let mut p = MsrmParams::new(&mut rng(1), 1);
        for _ in 0..200 {
            p.update_stored_weights([0.7, 0.1, 0.1, 0.1]);
        }
        assert!((p.stored_weights[0] - 0.7).abs() < 1e-6);
    }

    #[test]
    fn gradients_match_finite_differences() {
        use crate::tensor::gradcheck::{check_params, Options, DEFAULT_TOLERANCE};
        let mut p = MsrmParams::new(&mut rng(8), 4);
        let mut r = rng(9);
        let x = uniform(&mut r, Shape::new(2, 4, 8, 8), -1.0, 1.0);
        let gt: Vec<SegMask> = (0..2).map(|b| SegMask::from_fn(8, 8, |i, j| i + j + b < 8)).collect();
        let gt_t = SegMask::stack(&gt).unwrap();
        let frozen = p.forward(&x, Some(&gt)).unwrap().weights;
        p.stored_weights = frozen;
        let res = check_params(
            &mut p,
            |p| {
                let out = p.forward(&x, None)?;
                let l = msrm_loss(&out.seg_pred, &gt_t, &out.gate, 0.1)?;
                l.add(&out.features.square().mean_all())
            },
            |n| n.split('.').next().unwrap_or(n).to_string(),
            &Options::default(),
        )
        .unwrap();
        assert!(res.iter().all(|r| r.passed(DEFAULT_TOLERANCE)), "{res:#?}");
    }
}
