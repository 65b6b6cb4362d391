//! Binary PPM (P6) and PGM (P5) writers, maxval 255.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::io::Write;
use std::path::Path;

pub fn to_byte(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Write a `[3, h, w]` image with values in [0,1] as binary PPM.
pub fn write_ppm(path: &Path, img: &Tensor) -> Result<()> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::InvalidShape {
            op: "write_ppm",
            shape: s.to_vec(),
            reason: "[3,h,w] image required".into(),
        });
    }
    let (h, w) = (s[1], s[2]);
    let mut buf = Vec::with_capacity(32 + 3 * h * w);
    write!(buf, "P6\n{} {}\n255\n", w, h)?;
    let data = img.data();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                buf.push(to_byte(data[(c * h + y) * w + x]));
            }
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Write a `[h, w]` map with values in [0,1] as binary PGM.
pub fn write_pgm(path: &Path, img: &Tensor) -> Result<()> {
    let s = img.shape();
    if s.len() != 2 {
        return Err(Error::InvalidShape {
            op: "write_pgm",
            shape: s.to_vec(),
            reason: "[h,w] map required".into(),
        });
    }
    let (h, w) = (s[0], s[1]);
    let mut buf = Vec::with_capacity(32 + h * w);
    write!(buf, "P5\n{} {}\n255\n", w, h)?;
    buf.extend(img.data().iter().map(|&v| to_byte(v)));
    std::fs::write(path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_mapping_rounds_and_clamps() {
        assert_eq!(to_byte(0.0), 0);
        assert_eq!(to_byte(1.0), 255);
        assert_eq!(to_byte(0.5), 128);
        assert_eq!(to_byte(-0.1), 0);
        assert_eq!(to_byte(1.5), 255);
    }

    #[test]
    fn ppm_header_and_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ppm");
        let img = Tensor::from_vec(&[3, 1, 2], vec![0.0, 1.0, 0.5, 0.5, 1.0, 0.0]).unwrap();
        write_ppm(&path, &img).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P6\n2 1\n255\n"));
        // pixel (0,0): r=0.0 g=0.5 b=1.0; pixel (0,1): r=1.0 g=0.5 b=0.0
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 128, 255, 255, 128, 0]);
    }

    #[test]
    fn pgm_roundtrip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        let img = Tensor::from_vec(&[2, 2], vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        write_pgm(&path, &img).unwrap();
        let first = std::fs::read(&path).unwrap();
        write_pgm(&path, &img).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
    }
}
