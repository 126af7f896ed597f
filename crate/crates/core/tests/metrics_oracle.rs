use std::collections::HashSet;

use livervis_core::metrics::{balancing_weights, bce, dice_per_case, score_masks, score_slices, weighted_bce, MetricsError};
use livervis_core::volume::Image2D;
use livervis_core::{Dims, LabelMask};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_masks(rng: &mut ChaCha8Rng) -> Vec<Image2D<u8>> {
    let n = rng.gen_range(1..=10);
    let density = rng.gen_range(0.0..0.5);
    (0..n)
        .map(|_| {
            let empty = rng.gen_bool(0.3);
            let data = (0..64).map(|_| u8::from(!empty && rng.gen_bool(density))).collect();
            Image2D::new(8, 8, data)
        })
        .collect()
}

/// Per-pixel loop with exact integer counts, no shared code with the library.
fn counting_oracle(masks: &[Image2D<u8>]) -> Option<(f64, f64)> {
    let mut pos = 0u64;
    let mut neg = 0u64;
    let mut pos_img_px = 0u64;
    let mut all_px = 0u64;
    for m in masks {
        let mut has = false;
        for y in 0..m.height {
            for x in 0..m.width {
                all_px += 1;
                if m.get(x, y) != 0 {
                    pos += 1;
                    has = true;
                } else {
                    neg += 1;
                }
            }
        }
        if has {
            pos_img_px += (m.width * m.height) as u64;
        }
    }
    (pos_img_px > 0).then(|| (pos as f64 / pos_img_px as f64, neg as f64 / all_px as f64))
}

#[test]
fn balancing_matches_counting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..2000 {
        let masks = random_masks(&mut rng);
        match (balancing_weights(&masks), counting_oracle(&masks)) {
            (Ok(w), Some((rp, rm))) => {
                assert_eq!((w.raw_plus, w.raw_minus), (rp, rm));
                assert_eq!(w.w_plus, rp / (rp + rm));
                assert!((w.w_plus + w.w_minus - 1.0).abs() < 1e-12);
            }
            (Err(MetricsError::NoPositiveImages), None) => {}
            (got, want) => panic!("{got:?} vs {want:?}"),
        }
    }
}

#[test]
fn balancing_worked_example() {
    let a = Image2D::new(2, 2, vec![1, 0, 0, 0]);
    let b = Image2D::new(2, 2, vec![0; 4]);
    let w = balancing_weights(&[a, b]).unwrap();
    assert_eq!((w.raw_plus, w.raw_minus), (0.25, 0.875));
    assert!((w.w_plus - 2.0 / 9.0).abs() < 1e-15);
    assert!((w.w_minus - 7.0 / 9.0).abs() < 1e-15);
}

#[test]
fn half_weight_is_half_bce() {
    for i in 0..=999 {
        let p = i as f64 / 999.0;
        for y in [0.0, 1.0] {
            assert!((weighted_bce(y, p, 0.5) - 0.5 * bce(y, p)).abs() < 1e-12);
        }
    }
}

#[test]
fn bce_is_convex_in_prediction() {
    let h = 1e-4;
    for y in [0.0, 1.0] {
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            if p - h <= 0.0 || p + h >= 1.0 {
                continue;
            }
            let second = bce(y, p + h) - 2.0 * bce(y, p) + bce(y, p - h);
            assert!(second >= -1e-12, "y={y} p={p} second difference {second}");
        }
    }
}

fn set_oracle(pred: &[u8], truth: &[u8]) -> (usize, usize, usize) {
    let p: HashSet<usize> = pred.iter().enumerate().filter(|(_, &v)| v != 0).map(|(i, _)| i).collect();
    let t: HashSet<usize> = truth.iter().enumerate().filter(|(_, &v)| v != 0).map(|(i, _)| i).collect();
    (p.intersection(&t).count(), p.difference(&t).count(), t.difference(&p).count())
}

#[test]
fn dice_matches_set_arithmetic() {
    let dims = Dims::new(16, 16, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let (dp, dt) = (rng.gen_range(0.0..0.6), rng.gen_range(0.0..0.6));
        let pred: Vec<u8> = (0..dims.len()).map(|_| u8::from(rng.gen_bool(dp))).collect();
        let truth: Vec<u8> = (0..dims.len()).map(|_| u8::from(rng.gen_bool(dt))).collect();
        let (i, only_p, only_t) = set_oracle(&pred, &truth);
        let s = score_masks(&LabelMask::new(dims, pred).unwrap(), &LabelMask::new(dims, truth).unwrap()).unwrap();
        assert_eq!((s.tp, s.fp, s.fn_), (i as u64, only_p as u64, only_t as u64));
        let (p_sz, t_sz) = (i + only_p, i + only_t);
        let dice = if p_sz + t_sz == 0 { 1.0 } else { 2.0 * i as f64 / (p_sz + t_sz) as f64 };
        assert!((s.dice() - dice).abs() <= 1e-15, "{} vs {dice}", s.dice());
    }
}

#[test]
fn per_slice_scores_partition_the_volume() {
    let dims = Dims::new(4, 3, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pred = LabelMask::from_fn(dims, |_, _, _| u8::from(rng.gen_bool(0.4)));
    let truth = LabelMask::from_fn(dims, |x, _, z| u8::from((x + z) % 3 == 0));
    let whole = score_masks(&pred, &truth).unwrap();
    let slices = score_slices(&pred, &truth).unwrap();
    assert_eq!(slices.len(), 5);
    assert_eq!(slices.iter().map(|s| s.tp).sum::<u64>(), whole.tp);
    assert_eq!(slices.iter().map(|s| s.fp).sum::<u64>(), whole.fp);
    assert_eq!(slices.iter().map(|s| s.fn_).sum::<u64>(), whole.fn_);
}

#[test]
fn dice_per_case_is_the_mean() {
    assert_eq!(dice_per_case(&[0.9, 0.7]).unwrap(), 0.8);
    assert_eq!(dice_per_case(&[]), Err(MetricsError::EmptySequence));
}

proptest! {
    #[test]
    fn weighted_bce_is_a_convex_combination(y in prop::bool::ANY, p in 0.0f64..=1.0, w in 0.0f64..=1.0) {
        let y = f64::from(u8::from(y));
        let expected = if y == 1.0 { (1.0 - w) * bce(1.0, p) } else { w * bce(0.0, p) };
        prop_assert!((weighted_bce(y, p, w) - expected).abs() < 1e-12);
        prop_assert!(bce(y, p).is_finite());
    }
}
