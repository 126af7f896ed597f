use livervis_core::crf::{crf_energy, mean_field_refine, unary_from_probability, CrfParams};
use livervis_core::metrics::score_masks;
use livervis_core::phantom::noisy_sphere;
use livervis_core::{Dims, IntensityKind, LabelMask, ProbabilityVolume, Spacing, Volume3D};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every labelling of a tiny volume, sorted by exact energy.
fn ranked_labellings(prob: &ProbabilityVolume, vol: &Volume3D, p: &CrfParams) -> Vec<(f64, Vec<u8>)> {
    let dims = vol.dims();
    let n = dims.len();
    let u = unary_from_probability(prob);
    let mut all: Vec<(f64, Vec<u8>)> = (0u32..1 << n)
        .map(|bits| {
            let l: Vec<u8> = (0..n).map(|b| ((bits >> b) & 1) as u8).collect();
            let e = crf_energy(&LabelMask::new(dims, l.clone()).unwrap(), &u, vol, p).unwrap();
            (e, l)
        })
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    all
}

/// Mean-field marginals approximate the Gibbs distribution, so their argmax can
/// miss the MAP labelling even when it is separated; agreement is high but not total.
#[test]
fn mean_field_mostly_matches_brute_force_on_separated_2x2_instances() {
    let dims = Dims::new(2, 2, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut checked, mut agree) = (0, 0);
    while checked < 400 {
        let prob = ProbabilityVolume::new(dims, (0..4).map(|_| rng.gen_range(0.02f32..0.98)).collect()).unwrap();
        let vol = Volume3D::new(dims, Spacing::UNIT, (0..4).map(|_| rng.gen_range(0.0f32..1.0)).collect(), IntensityKind::Normalized01)
            .unwrap();
        let p = CrfParams { w_pos: 2.0, sigma_pos: 2.0, w_bil: 0.0, iterations: 10, ..CrfParams::default() };
        let ranked = ranked_labellings(&prob, &vol, &p);
        if ranked[1].0 - ranked[0].0 <= 0.5 {
            continue;
        }
        let out = mean_field_refine(&prob, &vol, &p).unwrap();
        assert!(out.normalization_error.iter().all(|&e| e < 1e-9));
        agree += usize::from(out.labels.labels() == ranked[0].1.as_slice());
        checked += 1;
    }
    assert!(agree as f64 >= 0.97 * checked as f64, "{agree}/{checked}");
}

#[test]
fn refinement_improves_noisy_sphere() {
    let ph = noisy_sphere(20, 6.0, 0.7, 0.15, 7);
    let p = CrfParams { w_pos: 3.0, sigma_pos: 1.5, w_bil: 5.0, sigma_bil: 3.0, sigma_int: 0.1, ..CrfParams::default() };
    let out = mean_field_refine(&ph.prob, &ph.intensity, &p).unwrap();
    let before = score_masks(&ph.prob.argmax(), &ph.truth).unwrap().f1;
    let after = score_masks(&out.labels, &ph.truth).unwrap().f1;
    assert!(after >= before + 0.05, "before {before:.4} after {after:.4}");
}

#[test]
fn refinement_is_deterministic() {
    let ph = noisy_sphere(10, 3.0, 0.7, 0.2, 3);
    let p = CrfParams { sigma_bil: 3.0, ..CrfParams::default() };
    let a = mean_field_refine(&ph.prob, &ph.intensity, &p).unwrap();
    let b = mean_field_refine(&ph.prob, &ph.intensity, &p).unwrap();
    assert_eq!(a.labels, b.labels);
    assert_eq!(a.marginals, b.marginals);
}

fn reflect<T: Copy>(data: &[T], dims: Dims, axis: usize) -> Vec<T> {
    let mut out = data.to_vec();
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let (rx, ry, rz) = match axis {
                    0 => (dims.nx - 1 - x, y, z),
                    1 => (x, dims.ny - 1 - y, z),
                    _ => (x, y, dims.nz - 1 - z),
                };
                out[dims.index(rx, ry, rz)] = data[dims.index(x, y, z)];
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mirror_symmetry(seed in any::<u64>(), axis in 0usize..3) {
        let dims = Dims::new(5, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prob: Vec<f32> = (0..dims.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let inten: Vec<f32> = (0..dims.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let p = CrfParams { w_pos: 1.0, sigma_pos: 1.0, w_bil: 1.0, sigma_bil: 2.0, sigma_int: 0.2, ..CrfParams::default() };
        let run = |pr: Vec<f32>, it: Vec<f32>| {
            let pv = ProbabilityVolume::new(dims, pr).unwrap();
            let v = Volume3D::new(dims, Spacing::UNIT, it, IntensityKind::Normalized01).unwrap();
            mean_field_refine(&pv, &v, &p).unwrap().labels.into_labels()
        };
        let direct = run(prob.clone(), inten.clone());
        let mirrored = run(reflect(&prob, dims, axis), reflect(&inten, dims, axis));
        prop_assert_eq!(reflect(&direct, dims, axis), mirrored);
    }

    #[test]
    fn marginals_stay_normalized(seed in any::<u64>()) {
        let ph = noisy_sphere(6, 2.0, 0.8, 0.3, seed);
        let p = CrfParams { w_pos: 5.0, w_bil: 20.0, sigma_bil: 2.0, iterations: 4, ..CrfParams::default() };
        let out = mean_field_refine(&ph.prob, &ph.intensity, &p).unwrap();
        prop_assert_eq!(out.normalization_error.len(), 4);
        prop_assert!(out.normalization_error.iter().all(|&e| e < 1e-9));
    }
}
