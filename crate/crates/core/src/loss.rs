//! Scalar training objectives. Batch inputs are `(B, 1, H, W)`; every loss is
//! computed per image and averaged over the batch.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const DICE_SMOOTH: f64 = 1.0;
pub const BCE_CLAMP: f64 = 1e-12;
/// Below this mass a map is replaced by the uniform distribution.
pub const JS_MIN_MASS: f64 = 1e-12;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{} vs {}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `1 − (2Σpg + s)/(Σp + Σg + s)` with `s = 1`.
pub fn dice_loss(prob: &Tensor, gt: &Tensor) -> Result<Tensor> {
    same_shape("dice_loss", prob, gt)?;
    let inter = prob.mul(gt)?.sum_per_image().scale(2.0).add_scalar(DICE_SMOOTH);
    let denom = prob.sum_per_image().add(&gt.sum_per_image())?.add_scalar(DICE_SMOOTH);
    Ok(inter.div(&denom)?.one_minus().mean_all())
}

/// Binary cross-entropy against a constant target, predictions clamped away
/// from 0 and 1.
pub fn bce(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    same_shape("bce", pred, target)?;
    let p = pred.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    let t = target.detach();
    let pos = t.mul(&p.ln())?;
    let neg = t.one_minus().mul(&p.one_minus().ln())?;
    Ok(pos.add(&neg)?.neg().mean_all())
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mse", a, b)?;
    Ok(a.sub(b)?.square().mean_all())
}

/// Normalizes a non-negative map to a distribution, or uniform when its mass
/// is below [`JS_MIN_MASS`].
pub fn normalize_distribution(map: &[f64]) -> (Vec<f64>, bool) {
    let s: f64 = map.iter().sum();
    if s < JS_MIN_MASS {
        (vec![1.0 / map.len() as f64; map.len()], true)
    } else {
        (map.iter().map(|v| v / s).collect(), false)
    }
}

fn xlogy_ratio(x: f64, m: f64) -> f64 {
    if x > 0.0 {
        x * (x / m).ln()
    } else {
        0.0
    }
}

/// Jensen-Shannon divergence in nats between two distributions.
pub fn js_value(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let m = 0.5 * (a + b);
            0.5 * (xlogy_ratio(a, m) + xlogy_ratio(b, m))
        })
        .sum::<f64>()
        .max(0.0)
}

/// Per-image JS divergence between `p_map` and the stop-gradient `q_map`
/// (clipped to [0, 1]), each normalized over its spatial positions, averaged
/// over the batch. Only `p_map` receives a gradient.
pub fn js_divergence(p_map: &Tensor, q_map: &Tensor) -> Result<Tensor> {
    same_shape("js_divergence", p_map, q_map)?;
    let s = p_map.shape();
    if s.c() != 1 {
        return Err(Error::shape("js_divergence", format!("{s} is not single-channel")));
    }
    if p_map.data().iter().any(|&v| v < 0.0) {
        return Err(Error::Invalid("js_divergence needs a non-negative map".into()));
    }
    let (nb, n) = (s.b(), s.plane());
    let mut value = 0.0;
    let mut grad_p = vec![0.0; s.numel()];
    for b in 0..nb {
        let q_raw: Vec<f64> = q_map.plane(b, 0).iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let (q, _) = normalize_distribution(&q_raw);
        let raw = p_map.plane(b, 0);
        let (p, uniform) = normalize_distribution(raw);
        value += js_value(&p, &q);
        if uniform {
            continue;
        }
        // dJS/dP_i = ½ ln(P_i / M_i); chain through P = p / Σp.
        let mass: f64 = raw.iter().sum();
        let dp: Vec<f64> = p
            .iter()
            .zip(&q)
            .map(|(&a, &c)| if a > 0.0 { 0.5 * (2.0 * a / (a + c)).ln() } else { 0.0 })
            .collect();
        let mean_term: f64 = dp.iter().zip(&p).map(|(d, a)| d * a).sum();
        for i in 0..n {
            grad_p[b * n + i] = (dp[i] - mean_term) / mass / nb as f64;
        }
    }
    let value = value / nb as f64;
    Ok(Tensor::from_op(Shape::scalar(), vec![value], "js_divergence", vec![p_map.clone()], move |g, _| {
        vec![Some(grad_p.iter().map(|v| v * g[0]).collect())]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::check_inputs;
    use crate::tensor::init::{rng, uniform};

    fn t(h: usize, w: usize, v: &[f64]) -> Tensor {
        Tensor::new(Shape::new(1, 1, h, w), v.to_vec()).unwrap()
    }

    #[test]
    fn dice_examples() {
        let g = t(1, 4, &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(dice_loss(&g, &g).unwrap().item(), 0.0);
        let z = t(1, 4, &[0.0; 4]);
        assert!((dice_loss(&z, &g).unwrap().item() - (1.0 - 1.0 / 3.0)).abs() < 1e-15);
        assert_eq!(dice_loss(&z, &z).unwrap().item(), 0.0);
    }

    #[test]
    fn js_examples() {
        let p = [1.0, 0.0];
        let q = [0.0, 1.0];
        assert!((js_value(&p, &q) - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(js_value(&p, &p), 0.0);
        let a = [0.2, 0.3, 0.5];
        let b = [0.6, 0.1, 0.3];
        assert!((js_value(&a, &b) - js_value(&b, &a)).abs() < 1e-15);
    }

    #[test]
    fn js_tensor_on_point_masses() {
        let p = t(1, 2, &[1.0, 0.0]);
        let q = t(1, 2, &[0.0, 1.0]);
        let v = js_divergence(&p, &q).unwrap().item();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-10);
    }

    #[test]
    fn js_gradient_matches_finite_differences() {
        let mut r = rng(3);
        let p = uniform(&mut r, Shape::new(2, 1, 3, 3), 0.05, 1.0);
        let q = uniform(&mut r, Shape::new(2, 1, 3, 3), 0.0, 1.0);
        let err = check_inputs(&[p], |v| js_divergence(&v[0], &q), 1e-6).unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn bce_and_dice_gradients() {
        let mut r = rng(4);
        let p = uniform(&mut r, Shape::new(2, 1, 3, 3), 0.05, 0.95);
        let g = Tensor::from_fn(Shape::new(2, 1, 3, 3), |[b, _, h, w]| ((b + h + w) % 2) as f64);
        assert!(check_inputs(&[p.clone()], |v| bce(&v[0], &g), 1e-6).unwrap() < 1e-6);
        assert!(check_inputs(&[p], |v| dice_loss(&v[0], &g), 1e-6).unwrap() < 1e-6);
    }

    #[test]
    fn bce_survives_hard_zero() {
        let p = t(1, 2, &[0.0, 1.0]);
        let g = t(1, 2, &[1.0, 0.0]);
        assert!(bce(&p, &g).unwrap().item().is_finite());
    }
}
