//! Binary PPM (P6) encoding: `P6\n<w> <h>\n255\n` followed by raw RGB.

use std::fs;
use std::path::Path;

use super::{Image, ImageError};

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", img.width(), img.height());
    let mut out = Vec::with_capacity(header.len() + img.data().len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(img.data());
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image, ImageError> {
    let mut pos = 0;
    let mut tokens = [0usize; 3];
    let magic = next_token(bytes, &mut pos)?;
    if magic != b"P6" {
        return Err(ImageError::Format("missing P6 magic".into()));
    }
    for slot in tokens.iter_mut() {
        let tok = next_token(bytes, &mut pos)?;
        let s = std::str::from_utf8(tok).map_err(|_| ImageError::Format("non-ascii header".into()))?;
        *slot = s
            .parse()
            .map_err(|_| ImageError::Format(format!("bad header field {s:?}")))?;
    }
    let [width, height, maxval] = tokens;
    if maxval != 255 {
        return Err(ImageError::Format(format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(ImageError::Format("truncated header".into()));
    }
    pos += 1;
    Image::new(width, height, bytes[pos..].to_vec())
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8], ImageError> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if *pos < bytes.len() && bytes[*pos] == b'#' {
        return Err(ImageError::Format("comments are not supported".into()));
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(ImageError::Format("truncated header".into()));
    }
    Ok(&bytes[start..*pos])
}

pub fn write_ppm(path: impl AsRef<Path>, img: &Image) -> Result<(), ImageError> {
    fs::write(path, encode_ppm(img))?;
    Ok(())
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image, ImageError> {
    decode_ppm(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_canonical() {
        let img = Image::new(2, 1, vec![1, 2, 3, 4, 5, 6]).unwrap();
        let enc = encode_ppm(&img);
        assert!(enc.starts_with(b"P6\n2 1\n255\n"));
        assert_eq!(decode_ppm(&enc).unwrap(), img);
    }

    #[test]
    fn rejects_truncated_raster() {
        let mut enc = encode_ppm(&Image::filled(4, 4, [9, 9, 9]));
        enc.truncate(enc.len() - 1);
        assert!(decode_ppm(&enc).is_err());
    }

    #[test]
    fn rejects_comments() {
        assert!(decode_ppm(b"P6\n# hi\n1 1\n255\n\0\0\0").is_err());
    }
}
