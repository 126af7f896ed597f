use livervis_core::roi::{
    agreement_filter, bounding_box, classify_box, crop, crop_roi, embed, fit_slice_gaussian, place_detector_boxes, select_slice_range,
    DetectorBox, LesionCountClassifier, Verdict,
};
use livervis_core::volume::Image2D;
use livervis_core::{Dims, LabelMask};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A few random ellipses, so window overlaps land on both sides of the threshold.
fn blob_slice(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image2D<u8> {
    let mut img = Image2D::filled(w, h, 0u8);
    for _ in 0..rng.gen_range(1..5) {
        let (cx, cy) = (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64));
        let (rx, ry) = (rng.gen_range(5.0..120.0), rng.gen_range(5.0..120.0));
        for y in 0..h {
            for x in 0..w {
                if ((x as f64 - cx) / rx).powi(2) + ((y as f64 - cy) / ry).powi(2) <= 1.0 {
                    img.set(x, y, 1);
                }
            }
        }
    }
    img
}

fn exhaustive_boxes(img: &Image2D<u8>) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut y = 0;
    while y + 50 <= img.height {
        let mut x = 0;
        while x + 50 <= img.width {
            let mut n = 0;
            for yy in y..y + 50 {
                for xx in x..x + 50 {
                    n += usize::from(img.get(xx, yy) != 0);
                }
            }
            if 4 * n >= 50 * 50 {
                out.push((x, y));
            }
            x += 25;
        }
        y += 25;
    }
    out
}

#[test]
fn detector_boxes_match_exhaustive_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for i in 0..50 {
        let img = blob_slice(&mut rng, 512, 512);
        let boxes = place_detector_boxes(&img, i).unwrap();
        let got: Vec<_> = boxes.iter().map(|b| (b.inner.x0, b.inner.y0)).collect();
        assert_eq!(got, exhaustive_boxes(&img), "mask {i}");
        for b in &boxes {
            assert_eq!(b.slice, i);
            assert_eq!(b.inner.area(), 2500);
            assert!(b.context.x0 <= b.inner.x0 && b.context.x1 >= b.inner.x1 && b.context.x1 <= 512);
        }
    }
}

#[test]
fn boxes_on_odd_sizes() {
    let img = Image2D::filled(130, 77, 1u8);
    let got: Vec<_> = place_detector_boxes(&img, 0).unwrap().iter().map(|b| (b.inner.x0, b.inner.y0)).collect();
    assert_eq!(got, exhaustive_boxes(&img));
    assert_eq!(got.len(), 4 * 2);
    assert!(place_detector_boxes(&Image2D::filled(49, 100, 1u8), 0).is_err());
}

#[test]
fn gaussian_fit_matches_weighted_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let dims = Dims::new(rng.gen_range(1..9), rng.gen_range(1..9), rng.gen_range(1..40));
        let centre = rng.gen_range(0.0..dims.nz as f64);
        let spread = rng.gen_range(0.5..10.0);
        let mask = LabelMask::from_fn(dims, |_, _, z| {
            let p = (-((z as f64 - centre) / spread).powi(2)).exp();
            u8::from(rng.gen_bool(p * 0.9))
        });
        let zs: Vec<f64> = (0..dims.len()).filter(|&i| mask.labels()[i] != 0).map(|i| dims.coords(i).2 as f64).collect();
        if zs.is_empty() {
            assert!(fit_slice_gaussian(&mask).is_err());
            continue;
        }
        let n = zs.len() as f64;
        let mean = zs.iter().sum::<f64>() / n;
        let var = zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / n;
        let fit = fit_slice_gaussian(&mask).unwrap();
        assert_eq!(fit.total_positive, zs.len() as u64);
        assert!((fit.mean - mean).abs() < 1e-9 && (fit.variance - var).abs() < 1e-9);
        let (lo, hi) = select_slice_range(&fit, 2.0, dims.nz);
        assert!(lo <= hi && hi < dims.nz);
    }
}

#[test]
fn crop_then_embed_restores_the_inside() {
    let dims = Dims::new(20, 18, 16);
    let liver = LabelMask::from_fn(dims, |x, y, z| u8::from((5..12).contains(&x) && (3..9).contains(&y) && (7..10).contains(&z)));
    let data: Vec<u16> = (0..dims.len() as u16).collect();
    let (cropped, roi) = crop_roi(&data, &liver, 2).unwrap();
    assert_eq!(roi.min, [3, 1, 5]);
    assert_eq!(roi.max, [13, 10, 11]);
    assert_eq!(cropped.len(), roi.dims().len());
    let back = embed(&cropped, &roi, dims, u16::MAX).unwrap();
    for (i, (&b, &d)) in back.iter().zip(&data).enumerate() {
        let (x, y, z) = dims.coords(i);
        assert_eq!(b, if roi.contains(x, y, z) { d } else { u16::MAX });
    }
    assert_eq!(crop(&data, dims, &bounding_box(&liver, 100).unwrap()).unwrap(), data);
}

#[test]
fn count_classifier_threshold() {
    let mut lesion = Image2D::filled(100, 100, 0u8);
    for x in 0..49 {
        lesion.set(x, 10, 1);
    }
    let mut b = DetectorBox::at(0, 0, 0, 100, 100);
    assert_eq!(classify_box(&mut b, &lesion, &LesionCountClassifier::default()), Verdict::Negative);
    lesion.set(49, 11, 1);
    assert_eq!(classify_box(&mut b, &lesion, &LesionCountClassifier::default()), Verdict::Positive);
    assert_eq!(b.verdict, Verdict::Positive);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn agreement_output_is_a_subset(seed in any::<u64>(), nboxes in 0usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = Dims::new(rng.gen_range(50..130), rng.gen_range(50..130), rng.gen_range(1..4));
        let lesion = LabelMask::from_fn(dims, |_, _, _| u8::from(rng.gen_bool(0.3)));
        let boxes: Vec<DetectorBox> = (0..nboxes)
            .map(|_| {
                let mut b = DetectorBox::at(
                    rng.gen_range(0..dims.nz + 1),
                    rng.gen_range(0..=dims.nx - 50),
                    rng.gen_range(0..=dims.ny - 50),
                    dims.nx,
                    dims.ny,
                );
                b.verdict = [Verdict::Positive, Verdict::Negative, Verdict::Unset][rng.gen_range(0..3)];
                b
            })
            .collect();
        let out = agreement_filter(&lesion, &boxes);
        for (i, (&o, &l)) in out.labels().iter().zip(lesion.labels()).enumerate() {
            prop_assert!(o == 0 || o == l);
            let (x, y, z) = dims.coords(i);
            let covered = boxes.iter().any(|b| b.verdict == Verdict::Positive && b.slice == z && b.inner.contains(x, y));
            prop_assert_eq!(o, if covered { l } else { 0 });
        }
    }
}
