//! Committed corruption outputs; regenerate with `MRMON_BLESS=1`.

use std::path::PathBuf;

use mrmon::corrupt::{CorruptionKind, CorruptionSpec, CorruptionStream};
use mrmon::imgops::{decode_ppm, encode_ppm, Image, HEIGHT, WIDTH};

fn test_image() -> Image {
    Image::from_fn(WIDTH, HEIGHT, |x, y| {
        let lane = if (x as i64 - 80).abs() == 40 + (y as i64 / 6) { 255 } else { 0 };
        [((x * 3 + y) % 200) as u8 + 20, lane, ((y * 2) % 256) as u8]
    })
}

fn check(kind: CorruptionKind, severity: u8, file: &str) {
    let spec = CorruptionSpec::new(kind, severity, 0, 42).unwrap();
    let out = CorruptionStream::new(spec).unwrap().apply(0, &test_image());
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("testdata").join(file);
    if std::env::var_os("MRMON_BLESS").is_some_and(|v| v == "1") {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, encode_ppm(&out)).unwrap();
    }
    let golden = decode_ppm(&std::fs::read(&path).unwrap()).unwrap();
    assert_eq!(out, golden, "{file} drifted");
}

#[test]
fn gaussian_noise_matches_golden() {
    check(CorruptionKind::GaussianNoise, 3, "gaussian_noise_s3_seed42.ppm");
}

#[test]
fn fog_matches_golden() {
    check(CorruptionKind::Fog, 4, "fog_s4_seed42.ppm");
}
