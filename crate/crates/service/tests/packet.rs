use livervis_core::render::{PixelFormat, RenderFrame};
use livervis_service::packet::{decode_frame_packet, encode_frame_packet, PacketError, HEADER_LEN, MAGIC};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_frame(rng: &mut ChaCha8Rng) -> RenderFrame {
    let width = rng.gen_range(1..=48u16);
    let height = rng.gen_range(1..=48u16);
    let pixel_format = if rng.gen_bool(0.5) { PixelFormat::Rgb8 } else { PixelFormat::Rgba8 };
    let n = usize::from(width) * usize::from(height) * pixel_format.bytes_per_pixel();
    let mut pixels = vec![0u8; n];
    rng.fill(&mut pixels[..]);
    RenderFrame { width, height, pixel_format, frame_id: rng.gen(), timestamp_us: rng.gen(), pixels }
}

#[test]
fn encode_decode_is_a_bijection_on_1000_random_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..1000 {
        let f = random_frame(&mut rng);
        let bytes = encode_frame_packet(&f);
        assert_eq!(bytes.len(), HEADER_LEN + f.pixels.len());
        assert_eq!(&bytes[0..4], &MAGIC.to_le_bytes());
        let back = decode_frame_packet(&bytes).unwrap();
        assert_eq!(back, f);
        assert_eq!(encode_frame_packet(&back), bytes);
    }
}

#[test]
fn damaged_packets_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let f = random_frame(&mut rng);
        let bytes = encode_frame_packet(&f);
        let cut = rng.gen_range(HEADER_LEN..bytes.len());
        assert!(matches!(decode_frame_packet(&bytes[..cut]), Err(PacketError::LengthMismatch { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_frame_packet(&extra), Err(PacketError::LengthMismatch { .. })));
        let mut bad = bytes.clone();
        bad[0] ^= 0xff;
        assert!(matches!(decode_frame_packet(&bad), Err(PacketError::BadMagic(_))));
        let mut v = bytes.clone();
        v[4] = 2;
        assert_eq!(decode_frame_packet(&v), Err(PacketError::UnsupportedVersion(2)));
        let mut pf = bytes;
        pf[13] = 7;
        assert_eq!(decode_frame_packet(&pf), Err(PacketError::UnknownPixelFormat(7)));
    }
}
