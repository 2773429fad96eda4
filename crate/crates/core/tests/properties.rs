use polypseg::metrics::{anatomical_metrics, boundary_f1, dice, multiscale_dice, region_metrics};
use polypseg::msrm::divisive_normalize;
use polypseg::tensor::softmax_rows;
use polypseg::{SegMask, Shape, Tensor};
use proptest::collection::vec;
use proptest::prelude::*;

fn mask_pair(max: usize) -> impl Strategy<Value = (SegMask, SegMask)> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| {
        (vec(any::<bool>(), h * w), vec(any::<bool>(), h * w)).prop_map(move |(a, b)| {
            (SegMask::from_fn(h, w, |y, x| a[y * w + x]), SegMask::from_fn(h, w, |y, x| b[y * w + x]))
        })
    })
}

fn counts(p: &SegMask, g: &SegMask) -> (usize, usize, usize, usize) {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&a, &b) in p.data().iter().zip(g.data()) {
        match (a != 0, b != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    (tp, fp, tn, fn_)
}

proptest! {
    #[test]
    fn region_scores_match_counts((p, g) in mask_pair(12)) {
        let m = region_metrics(&p, &g).unwrap();
        let (tp, fp, tn, fn_) = counts(&p, &g);
        if tp + fp + fn_ > 0 {
            prop_assert_eq!(m.dice, (2 * tp) as f64 / (2 * tp + fp + fn_) as f64);
            prop_assert_eq!(m.iou, tp as f64 / (tp + fp + fn_) as f64);
        } else {
            prop_assert_eq!((m.dice, m.iou), (1.0, 1.0));
        }
        prop_assert_eq!(m.acc, (tp + tn) as f64 / p.len() as f64);
    }

    #[test]
    fn scores_are_bounded_and_dice_dominates_iou((p, g) in mask_pair(12)) {
        let m = region_metrics(&p, &g).unwrap();
        for v in [m.dice, m.iou, m.precision, m.recall, m.acc] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(m.dice >= m.iou);
        let bf1 = boundary_f1(&p, &g, 2.0).unwrap();
        prop_assert!((0.0..=1.0).contains(&bf1));
    }

    #[test]
    fn region_scores_are_flip_invariant((p, g) in mask_pair(12)) {
        prop_assert_eq!(region_metrics(&p, &g).unwrap(), region_metrics(&p.vflip(), &g.vflip()).unwrap());
    }

    #[test]
    fn dice_is_symmetric((p, g) in mask_pair(12)) {
        prop_assert_eq!(dice(&p, &g).unwrap(), dice(&g, &p).unwrap());
    }

    #[test]
    fn single_scale_md_is_dice((p, g) in mask_pair(12)) {
        let t = Tensor::new(Shape::new(1, 1, p.height(), p.width()), p.to_f64()).unwrap();
        prop_assert_eq!(multiscale_dice(&[t], &g).unwrap(), dice(&p, &g).unwrap());
    }

    #[test]
    fn fold_miss_is_a_percentage((p, g) in mask_pair(10), fold in vec(any::<bool>(), 100)) {
        let (h, w) = (g.height(), g.width());
        let hf = SegMask::from_fn(h, w, |y, x| fold[(y * w + x) % 100] && !g.get(y, x));
        let a = anatomical_metrics(&p, &g, &hf).unwrap();
        prop_assert!((0.0..=100.0).contains(&a.hf_miss_pct));
        prop_assert_eq!(a.hf_region_empty, hf.count() == 0);
        if hf.count() > 0 {
            let hits = p.intersection_count(&hf);
            prop_assert!((a.hf_miss_pct - 100.0 * hits as f64 / hf.count() as f64).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(row_len in 1usize..20, rows in 1usize..6, seed in vec(-30.0f64..30.0, 120)) {
        let data: Vec<f64> = seed.iter().cycle().take(rows * row_len).copied().collect();
        let s = softmax_rows(&data, row_len).unwrap();
        for r in s.chunks(row_len) {
            prop_assert!(r.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn divisive_normalization_is_affine_invariant(
        vals in vec(-5.0f64..5.0, 36),
        scale in 0.5f64..20.0,
        shift in -10.0f64..10.0,
    ) {
        prop_assume!(vals.iter().any(|&v| (v - vals[0]).abs() > 0.5));
        let y = Tensor::new(Shape::new(1, 1, 6, 6), vals.clone()).unwrap();
        let moved = Tensor::new(Shape::new(1, 1, 6, 6), vals.iter().map(|v| v * scale + shift).collect()).unwrap();
        let a = divisive_normalize(&y, 1e-12).unwrap();
        let b = divisive_normalize(&moved, 1e-12).unwrap();
        for (x, z) in a.data().iter().zip(b.data()) {
            prop_assert!((x - z).abs() <= 1e-9);
        }
    }
}
