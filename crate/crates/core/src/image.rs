//! 8-bit raster images and binary PPM/PGM I/O.

use std::path::Path;

use crate::error::{Error, Result};

/// An 8-bit image with 1 (gray) or 3 (RGB) interleaved planes, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    height: usize,
    width: usize,
    planes: usize,
    samples: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, planes: usize, samples: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Format("image must be nonempty".into()));
        }
        if planes != 1 && planes != 3 {
            return Err(Error::Format(format!("unsupported plane count {planes}")));
        }
        if samples.len() != height * width * planes {
            return Err(Error::Format(format!(
                "expected {} samples, got {}",
                height * width * planes,
                samples.len()
            )));
        }
        Ok(Image {
            height,
            width,
            planes,
            samples,
        })
    }

    pub fn filled(height: usize, width: usize, planes: usize, value: u8) -> Self {
        Image::new(height, width, planes, vec![value; height * width * planes])
            .expect("valid dimensions")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn planes(&self) -> usize {
        self.planes
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, plane: usize) -> u8 {
        self.samples[(row * self.width + col) * self.planes + plane]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, plane: usize, value: u8) {
        self.samples[(row * self.width + col) * self.planes + plane] = value;
    }

    /// Parses a binary PGM (`P5`) or PPM (`P6`) with maxval 255.
    pub fn from_pnm(bytes: &[u8]) -> Result<Self> {
        let mut cursor = 0usize;
        let magic = next_token(bytes, &mut cursor)?;
        let planes = match magic.as_str() {
            "P5" => 1,
            "P6" => 3,
            other => return Err(Error::Format(format!("unsupported magic {other:?}"))),
        };
        let width = parse_header_number(bytes, &mut cursor)?;
        let height = parse_header_number(bytes, &mut cursor)?;
        let maxval = parse_header_number(bytes, &mut cursor)?;
        if maxval != 255 {
            return Err(Error::Format(format!("maxval {maxval} not supported")));
        }
        // exactly one whitespace byte separates the header from the raster
        cursor += 1;
        let need = width * height * planes;
        let raster = bytes
            .get(cursor..cursor + need)
            .ok_or_else(|| Error::Format("truncated raster".into()))?;
        Image::new(height, width, planes, raster.to_vec())
    }

    pub fn to_pnm(&self) -> Vec<u8> {
        let magic = if self.planes == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.samples);
        out
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Image::from_pnm(&std::fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_pnm())?;
        Ok(())
    }
}

fn next_token(bytes: &[u8], cursor: &mut usize) -> Result<String> {
    loop {
        match bytes.get(*cursor) {
            Some(b'#') => {
                while let Some(&b) = bytes.get(*cursor) {
                    *cursor += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            Some(b) if b.is_ascii_whitespace() => *cursor += 1,
            Some(_) => break,
            None => return Err(Error::Format("truncated header".into())),
        }
    }
    let start = *cursor;
    while bytes.get(*cursor).is_some_and(|b| !b.is_ascii_whitespace()) {
        *cursor += 1;
    }
    Ok(String::from_utf8_lossy(&bytes[start..*cursor]).into_owned())
}

fn parse_header_number(bytes: &[u8], cursor: &mut usize) -> Result<usize> {
    let tok = next_token(bytes, cursor)?;
    tok.parse()
        .map_err(|_| Error::Format(format!("bad header field {tok:?}")))
}

/// Mean squared error over all samples. Dimensions must match.
pub fn mse(a: &Image, b: &Image) -> f64 {
    assert_eq!(
        (a.height, a.width, a.planes),
        (b.height, b.width, b.planes),
        "image dimensions differ"
    );
    let sum: f64 = a
        .samples
        .iter()
        .zip(&b.samples)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    sum / a.samples.len() as f64
}

/// Largest PSNR reported; identical images map here.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Peak signal-to-noise ratio for 8-bit samples, capped at [`PSNR_CAP_DB`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (255.0 * 255.0 / mse).log10()).min(PSNR_CAP_DB)
}

pub fn psnr(a: &Image, b: &Image) -> f64 {
    psnr_from_mse(mse(a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pnm_roundtrip_gray_and_color() {
        let gray = Image::new(2, 3, 1, vec![0, 1, 2, 3, 4, 255]).unwrap();
        assert_eq!(Image::from_pnm(&gray.to_pnm()).unwrap(), gray);
        let rgb = Image::new(1, 2, 3, vec![9, 8, 7, 6, 5, 4]).unwrap();
        assert_eq!(Image::from_pnm(&rgb.to_pnm()).unwrap(), rgb);
    }

    #[test]
    fn pnm_header_comments() {
        let mut bytes = b"P5\n# made by hand\n2 1\n# max\n255\n".to_vec();
        bytes.extend_from_slice(&[7, 9]);
        let img = Image::from_pnm(&bytes).unwrap();
        assert_eq!((img.height(), img.width(), img.get(0, 1, 0)), (1, 2, 9));
    }

    #[test]
    fn pnm_rejects_bad_input() {
        assert!(Image::from_pnm(b"P3\n1 1\n255\n0 0 0").is_err());
        assert!(Image::from_pnm(b"P5\n1 1\n65535\n\0\0").is_err());
        assert!(Image::from_pnm(b"P5\n4 4\n255\n\0").is_err());
    }

    #[test]
    fn psnr_conventions() {
        let a = Image::filled(4, 4, 1, 0);
        let b = Image::filled(4, 4, 1, 255);
        assert_eq!(psnr(&a, &a), PSNR_CAP_DB);
        assert!(psnr(&a, &b).abs() < 1e-12);
    }
}
