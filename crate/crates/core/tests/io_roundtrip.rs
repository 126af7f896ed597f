use livervis_core::volume::{parse_nifti, read_raw_sidecar, write_raw_sidecar, VolumeError};
use livervis_core::{Dims, IntensityKind, ScalarType, Spacing, Volume3D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Writes the NIfTI-1 fields we rely on at their C-struct offsets.
fn nifti_bytes(big: bool, dims: [i16; 4], datatype: i16, pixdim: [f32; 4], data: &[u8]) -> Vec<u8> {
    let mut h = vec![0u8; 352];
    let put16 = |h: &mut Vec<u8>, off: usize, v: i16| h[off..off + 2].copy_from_slice(&if big { v.to_be_bytes() } else { v.to_le_bytes() });
    let put32 = |h: &mut Vec<u8>, off: usize, v: [u8; 4]| h[off..off + 4].copy_from_slice(&v);
    let i32b = |v: i32| if big { v.to_be_bytes() } else { v.to_le_bytes() };
    let f32b = |v: f32| if big { v.to_be_bytes() } else { v.to_le_bytes() };
    put32(&mut h, 0, i32b(348));
    for (i, d) in dims.iter().enumerate() {
        put16(&mut h, 40 + 2 * i, *d);
    }
    for i in 4..8 {
        put16(&mut h, 40 + 2 * i, 1);
    }
    put16(&mut h, 70, datatype);
    let bitpix = match datatype {
        2 => 8,
        4 => 16,
        _ => 32,
    };
    put16(&mut h, 72, bitpix);
    for (i, p) in pixdim.iter().enumerate() {
        put32(&mut h, 76 + 4 * i, f32b(*p));
    }
    put32(&mut h, 108, f32b(352.0));
    h[344..348].copy_from_slice(b"n+1\0");
    h.extend_from_slice(data);
    h
}

#[test]
fn crafted_headers() {
    let data: Vec<u8> = [100i16, -150, 7, 0, 1, 2, 3, -4].iter().flat_map(|v| v.to_le_bytes()).collect();
    let v = parse_nifti(&nifti_bytes(false, [3, 2, 2, 2], 4, [1.0, 0.7, 0.8, 2.5], &data)).unwrap();
    assert_eq!(v.dims(), Dims::new(2, 2, 2));
    assert_eq!(v.spacing(), Spacing::new(0.7f32 as f64, 0.8f32 as f64, 2.5));
    assert_eq!(v.voxels(), &[100.0, -150.0, 7.0, 0.0, 1.0, 2.0, 3.0, -4.0]);
    assert_eq!(v.scalar_type(), ScalarType::I16);

    let be: Vec<u8> = [100i16, -150, 7, 0, 1, 2, 3, -4].iter().flat_map(|v| v.to_be_bytes()).collect();
    assert_eq!(parse_nifti(&nifti_bytes(true, [3, 2, 2, 2], 4, [1.0, 0.7, 0.8, 2.5], &be)).unwrap(), v);

    let mut bad = nifti_bytes(false, [3, 2, 2, 2], 4, [1.0; 4], &data);
    bad[344..348].copy_from_slice(b"xyz\0");
    assert!(matches!(parse_nifti(&bad), Err(VolumeError::BadMagic)));

    let short = nifti_bytes(false, [3, 2, 2, 2], 4, [1.0; 4], &data[..10]);
    assert!(matches!(parse_nifti(&short), Err(VolumeError::TruncatedData { needed: 16, available: 10 })));

    let f64_type = nifti_bytes(false, [3, 1, 1, 1], 64, [1.0; 4], &[0; 8]);
    assert!(matches!(parse_nifti(&f64_type), Err(VolumeError::UnsupportedScalarType(64))));
    assert!(parse_nifti(&[0u8; 100]).is_err());
}

#[test]
fn large_i16_header_example() {
    let n = 512 * 512 * 100;
    let data = vec![0u8; 2 * n];
    let v = parse_nifti(&nifti_bytes(false, [3, 512, 512, 100], 4, [1.0, 0.7, 0.7, 2.5], &data)).unwrap();
    assert_eq!(v.dims(), Dims::new(512, 512, 100));
    assert_eq!(v.voxels().len(), n);
    assert_eq!(v.spacing().sz, 2.5);
}

fn random_volume(rng: &mut ChaCha8Rng, scalar: ScalarType) -> Volume3D {
    let dims = Dims::new(rng.gen_range(1..12), rng.gen_range(1..12), rng.gen_range(1..12));
    let spacing = Spacing::new(rng.gen_range(0.1..3.0), rng.gen_range(0.1..3.0), rng.gen_range(0.1..3.0));
    let (voxels, kind): (Vec<f32>, _) = match scalar {
        ScalarType::U8 => ((0..dims.len()).map(|_| f32::from(rng.gen::<u8>())).collect(), IntensityKind::Uint8),
        ScalarType::I16 => ((0..dims.len()).map(|_| f32::from(rng.gen::<i16>())).collect(), IntensityKind::Hu),
        ScalarType::F32 => ((0..dims.len()).map(|_| rng.gen_range(-1e6f32..1e6)).collect(), IntensityKind::Hu),
    };
    Volume3D::with_scalar(dims, spacing, voxels, kind, scalar).unwrap()
}

#[test]
fn raw_sidecar_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (raw, json) = (dir.path().join("v.raw"), dir.path().join("v.json"));
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for i in 0..300 {
        let scalar = [ScalarType::U8, ScalarType::I16, ScalarType::F32][i % 3];
        let v = random_volume(&mut rng, scalar);
        write_raw_sidecar(&v, &raw, &json).unwrap();
        let back = read_raw_sidecar(&raw, &json).unwrap();
        assert_eq!(back.dims(), v.dims());
        assert_eq!(back.spacing().as_array().map(f64::to_bits), v.spacing().as_array().map(f64::to_bits));
        assert_eq!(back.scalar_type(), scalar);
        assert!(back.voxels().iter().zip(v.voxels()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(std::fs::metadata(&raw).unwrap().len() as usize, v.dims().len() * scalar.size());
    }
}

#[test]
fn sidecar_length_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("v.json");
    std::fs::write(&json, r#"{"dims":[2,2,2],"spacing":[1,1,1],"scalar_type":"u8","endianness":"little","intensity_kind":"uint8","extra":1}"#).unwrap();
    let raw = dir.path().join("v.raw");
    std::fs::write(&raw, [0u8; 7]).unwrap();
    assert!(matches!(read_raw_sidecar(&raw, &json), Err(VolumeError::SidecarMismatch { expected: 8, actual: 7 })));
    std::fs::write(&raw, [0u8; 8]).unwrap();
    assert!(read_raw_sidecar(&raw, &json).is_ok());
}
