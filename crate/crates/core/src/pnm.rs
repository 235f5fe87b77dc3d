//! Binary Netpbm IO: grayscale PGM (`P5`, maxval 255) and color PPM (`P6`).
//!
//! Intensities are normalized by 255 on load. On save each value is quantized
//! as `floor(v·255 + 0.5)` clamped to `[0, 255]` (round half up, so 0.5 maps
//! to byte 128). A byte `b` loads as `b/255` and quantizes back to `b`, which
//! makes load/save byte-stable.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::ImageGrid;

/// 8-bit RGB raster, row-major, used for color visualizations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<[u8; 3]>,
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

pub fn save_image(img: &ImageGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

pub fn save_ppm(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

pub fn encode_pgm(img: &ImageGrid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    out
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    for p in &img.pixels {
        out.extend_from_slice(p);
    }
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<ImageGrid> {
    let (header, body) = parse_header(bytes, b"P5")?;
    let n = header.width * header.height;
    if body.len() < n {
        return Err(Error::Format(format!(
            "truncated payload: expected {n} bytes, found {}",
            body.len()
        )));
    }
    let data = body[..n].iter().map(|&b| b as f64 / 255.0).collect();
    ImageGrid::new(header.height, header.width, data)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let (header, body) = parse_header(bytes, b"P6")?;
    let n = header.width * header.height;
    if body.len() < 3 * n {
        return Err(Error::Format(format!(
            "truncated payload: expected {} bytes, found {}",
            3 * n,
            body.len()
        )));
    }
    let pixels = body[..3 * n]
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    Ok(RgbImage {
        height: header.height,
        width: header.width,
        pixels,
    })
}

struct Header {
    width: usize,
    height: usize,
}

fn parse_header<'a>(bytes: &'a [u8], magic: &[u8; 2]) -> Result<(Header, &'a [u8])> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::Format(format!(
            "bad magic number, expected {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, name) in ["width", "height", "maxval"].iter().enumerate() {
        // whitespace and '#' comments may separate header fields
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format(format!(
                "missing or non-numeric {name} in header"
            )));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        fields[i] = text
            .parse()
            .map_err(|_| Error::Format(format!("{name} out of range: {text}")))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("header not terminated by whitespace".into())),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::Format(format!(
            "zero image dimension {width}x{height}"
        )));
    }
    if maxval != 255 {
        return Err(Error::Format(format!(
            "unsupported maxval {maxval}, only 255 is accepted"
        )));
    }
    Ok((Header { width, height }, &bytes[pos..]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pgm(w: usize, h: usize, body: &[u8]) -> Vec<u8> {
        let mut v = format!("P5\n{w} {h}\n255\n").into_bytes();
        v.extend_from_slice(body);
        v
    }

    #[test]
    fn normalizes_bytes() {
        let img = decode_pgm(&pgm(2, 2, &[0, 255, 128, 64])).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
    }

    #[test]
    fn quantization_rules() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(-0.3), 0);
        assert_eq!(quantize(1.7), 255);
        let zeros = encode_pgm(&ImageGrid::filled(3, 4, 0.0));
        assert!(zeros.ends_with(&[0u8; 12]));
        let ones = encode_pgm(&ImageGrid::filled(3, 4, 1.0));
        assert!(ones.ends_with(&[255u8; 12]));
    }

    #[test]
    fn all_bytes_round_trip() {
        let body: Vec<u8> = (0..=255u8).collect();
        let file = pgm(16, 16, &body);
        assert_eq!(encode_pgm(&decode_pgm(&file).unwrap()), file);
    }

    #[test]
    fn errors_name_the_defect() {
        let e = decode_pgm(b"P6\n1 1\n255\n\0\0\0").unwrap_err().to_string();
        assert!(e.contains("magic"), "{e}");
        let e = decode_pgm(&pgm(2, 2, &[1, 2, 3])).unwrap_err().to_string();
        assert!(e.contains("truncated"), "{e}");
        let e = decode_pgm(b"P5\n2 2\n65535\n").unwrap_err().to_string();
        assert!(e.contains("maxval"), "{e}");
        let e = decode_pgm(b"P5\n2 x\n255\n").unwrap_err().to_string();
        assert!(e.contains("height"), "{e}");
    }

    #[test]
    fn ppm_round_trip() {
        let img = RgbImage {
            height: 1,
            width: 2,
            pixels: vec![[1, 2, 3], [250, 251, 252]],
        };
        assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let file = pgm(3, 2, &[9, 8, 7, 6, 5, 4]);
        std::fs::write(&p, &file).unwrap();
        let img = load_image(&p).unwrap();
        let q = dir.path().join("b.pgm");
        save_image(&img, &q).unwrap();
        assert_eq!(std::fs::read(&q).unwrap(), file);
        assert!(save_image(&img, dir.path().join("missing/dir/x.pgm")).is_err());
    }

    proptest::proptest! {
        #[test]
        fn save_load_save_is_byte_stable(h in 1usize..8, w in 1usize..8, seed in 0u64..10_000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let img = ImageGrid::from_fn(h, w, |_, _| rng.random::<f64>());
            let once = encode_pgm(&img);
            let twice = encode_pgm(&decode_pgm(&once).unwrap());
            proptest::prop_assert_eq!(once, twice);
        }
    }
}
