//! Block-transform tokenizer: images to quantized token grids and back.
//!
//! Each 16×16 block of the (edge-replicated) padded image becomes one token.
//! The block is transformed with an orthonormal separable cosine basis and the
//! first `channels` coefficients in zigzag order are quantized with step
//! `quality * (1 + zigzag_index / channels)`, rounded, and clamped to
//! `[-clamp, clamp]`. For multi-plane images channel `c` carries plane
//! `c % planes` at zigzag index `c / planes`.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::image::Image;

/// Side length of a token block in pixels.
pub const BLOCK: usize = 16;

/// Zero-based `(row, col)` of a token in the grid.
pub type Position = (usize, usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CodecConfig {
    /// Coefficients kept per token.
    pub channels: usize,
    /// Quantizer step scale.
    pub quality: f64,
    /// Token values are clamped to `[-clamp, clamp]`.
    pub clamp: i32,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            channels: 64,
            quality: 40.0,
            clamp: 127,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.channels > BLOCK * BLOCK {
            return Err(Error::InvalidConfig(format!(
                "channel count {} outside 1..=256",
                self.channels
            )));
        }
        if !(self.quality > 0.0 && self.quality.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "quality must be positive, got {}",
                self.quality
            )));
        }
        if self.clamp < 1 || self.clamp > 32767 {
            return Err(Error::InvalidConfig(format!(
                "clamp bound {} outside 1..=32767",
                self.clamp
            )));
        }
        Ok(())
    }

    /// Quantizer step for a zigzag coefficient index.
    pub fn step(&self, zigzag_index: usize) -> f64 {
        self.quality * (1.0 + zigzag_index as f64 / self.channels as f64)
    }

    /// Number of symbols in the token alphabet.
    pub fn alphabet(&self) -> usize {
        (2 * self.clamp + 1) as usize
    }
}

/// Pixel dimensions the receiver needs to undo padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub height: usize,
    pub width: usize,
    pub planes: usize,
}

impl Geometry {
    pub fn of(image: &Image) -> Self {
        Geometry {
            height: image.height(),
            width: image.width(),
            planes: image.planes(),
        }
    }

    pub fn token_rows(&self) -> usize {
        self.height.div_ceil(BLOCK)
    }

    pub fn token_cols(&self) -> usize {
        self.width.div_ceil(BLOCK)
    }
}

/// Quantized tokens on a `rows × cols` grid, `channels` values per token,
/// with a presence flag per position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenGrid {
    rows: usize,
    cols: usize,
    channels: usize,
    values: Vec<i32>,
    known: Vec<bool>,
}

impl TokenGrid {
    /// A grid with every position masked.
    pub fn masked(rows: usize, cols: usize, channels: usize) -> Self {
        TokenGrid {
            rows,
            cols,
            channels,
            values: vec![0; rows * cols * channels],
            known: vec![false; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    fn offset(&self, (row, col): Position) -> usize {
        debug_assert!(row < self.rows && col < self.cols);
        row * self.cols + col
    }

    #[inline]
    pub fn is_known(&self, pos: Position) -> bool {
        self.known[self.offset(pos)]
    }

    /// The token's channel values, or `None` when masked.
    #[inline]
    pub fn token(&self, pos: Position) -> Option<&[i32]> {
        let i = self.offset(pos);
        self.known[i].then(|| &self.values[i * self.channels..(i + 1) * self.channels])
    }

    /// Writes a token and marks it known.
    pub fn set(&mut self, pos: Position, values: &[i32]) {
        assert_eq!(values.len(), self.channels);
        let i = self.offset(pos);
        self.values[i * self.channels..(i + 1) * self.channels].copy_from_slice(values);
        self.known[i] = true;
    }

    /// Masks a position; its stored values are zeroed.
    pub fn mask(&mut self, pos: Position) {
        let i = self.offset(pos);
        self.known[i] = false;
        self.values[i * self.channels..(i + 1) * self.channels].fill(0);
    }

    pub fn known_count(&self) -> usize {
        self.known.iter().filter(|&&k| k).count()
    }

    pub fn all_known(&self) -> bool {
        self.known.iter().all(|&k| k)
    }

    pub fn positions(&self) -> impl Iterator<Item = Position> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| (r, c)))
    }

    pub fn masked_positions(&self) -> Vec<Position> {
        self.positions().filter(|&p| !self.is_known(p)).collect()
    }

    /// Copies the listed positions (known or not) from `other`.
    pub fn copy_from(&mut self, other: &TokenGrid, positions: &[Position]) {
        for &p in positions {
            match other.token(p) {
                Some(v) => self.set(p, v),
                None => self.mask(p),
            }
        }
    }
}

/// Orthonormal DCT-II basis, `basis[k][n]`.
fn basis() -> &'static [[f64; BLOCK]; BLOCK] {
    static BASIS: OnceLock<[[f64; BLOCK]; BLOCK]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; BLOCK]; BLOCK];
        let n = BLOCK as f64;
        for (k, row) in b.iter_mut().enumerate() {
            let scale = if k == 0 {
                (1.0 / n).sqrt()
            } else {
                (2.0 / n).sqrt()
            };
            for (i, v) in row.iter_mut().enumerate() {
                *v = scale
                    * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2.0 * n)).cos();
            }
        }
        b
    })
}

/// `(row, col)` of each zigzag index within a block.
pub fn zigzag() -> &'static [(usize, usize); BLOCK * BLOCK] {
    static ORDER: OnceLock<[(usize, usize); BLOCK * BLOCK]> = OnceLock::new();
    ORDER.get_or_init(|| {
        let mut order = [(0, 0); BLOCK * BLOCK];
        let mut i = 0;
        for s in 0..(2 * BLOCK - 1) {
            let lo = s.saturating_sub(BLOCK - 1);
            let hi = s.min(BLOCK - 1);
            if s % 2 == 0 {
                for r in (lo..=hi).rev() {
                    order[i] = (r, s - r);
                    i += 1;
                }
            } else {
                for r in lo..=hi {
                    order[i] = (r, s - r);
                    i += 1;
                }
            }
        }
        order
    })
}

type Block = [[f64; BLOCK]; BLOCK];

fn forward(block: &Block) -> Block {
    let b = basis();
    let mut tmp = [[0.0; BLOCK]; BLOCK];
    // rows
    for r in 0..BLOCK {
        for k in 0..BLOCK {
            tmp[r][k] = (0..BLOCK).map(|n| b[k][n] * block[r][n]).sum();
        }
    }
    let mut out = [[0.0; BLOCK]; BLOCK];
    for k in 0..BLOCK {
        for c in 0..BLOCK {
            out[k][c] = (0..BLOCK).map(|n| b[k][n] * tmp[n][c]).sum();
        }
    }
    out
}

fn inverse(coef: &Block) -> Block {
    let b = basis();
    let mut tmp = [[0.0; BLOCK]; BLOCK];
    for n in 0..BLOCK {
        for c in 0..BLOCK {
            tmp[n][c] = (0..BLOCK).map(|k| b[k][n] * coef[k][c]).sum();
        }
    }
    let mut out = [[0.0; BLOCK]; BLOCK];
    for r in 0..BLOCK {
        for n in 0..BLOCK {
            out[r][n] = (0..BLOCK).map(|k| b[k][n] * tmp[r][k]).sum();
        }
    }
    out
}

/// Channel `c` → `(plane, zigzag index)`.
#[inline]
fn channel_layout(channel: usize, planes: usize) -> (usize, usize) {
    (channel % planes, channel / planes)
}

/// Unquantized transform coefficients per token and channel, in
/// `TokenGrid` value order.
pub fn coefficients(image: &Image, cfg: &CodecConfig) -> Vec<f64> {
    let geo = Geometry::of(image);
    let (rows, cols) = (geo.token_rows(), geo.token_cols());
    let zz = zigzag();
    let mut out = Vec::with_capacity(rows * cols * cfg.channels);
    let mut transformed: Vec<Block> = vec![[[0.0; BLOCK]; BLOCK]; geo.planes];
    for tr in 0..rows {
        for tc in 0..cols {
            for (plane, t) in transformed.iter_mut().enumerate() {
                let mut block = [[0.0; BLOCK]; BLOCK];
                for (r, row) in block.iter_mut().enumerate() {
                    let y = (tr * BLOCK + r).min(geo.height - 1);
                    for (c, v) in row.iter_mut().enumerate() {
                        let x = (tc * BLOCK + c).min(geo.width - 1);
                        *v = image.get(y, x, plane) as f64;
                    }
                }
                *t = forward(&block);
            }
            for ch in 0..cfg.channels {
                let (plane, z) = channel_layout(ch, geo.planes);
                let (u, v) = zz[z.min(BLOCK * BLOCK - 1)];
                out.push(if z < BLOCK * BLOCK {
                    transformed[plane][u][v]
                } else {
                    0.0
                });
            }
        }
    }
    out
}

/// Tokenizes an image. Also returns how many coefficients hit the clamp.
pub fn analyze_with_stats(image: &Image, cfg: &CodecConfig) -> (TokenGrid, usize) {
    let geo = Geometry::of(image);
    let coefs = coefficients(image, cfg);
    let mut grid = TokenGrid::masked(geo.token_rows(), geo.token_cols(), cfg.channels);
    let mut clamped = 0;
    let mut token = vec![0i32; cfg.channels];
    let cols = grid.cols;
    for (i, pos) in (0..grid.len()).map(|i| (i, (i / cols, i % cols))) {
        for (ch, t) in token.iter_mut().enumerate() {
            let (_, z) = channel_layout(ch, geo.planes);
            let q = (coefs[i * cfg.channels + ch] / cfg.step(z)).round();
            let limit = cfg.clamp as f64;
            if q.abs() > limit {
                clamped += 1;
            }
            *t = q.clamp(-limit, limit) as i32;
        }
        grid.set(pos, &token);
    }
    (grid, clamped)
}

pub fn analyze(image: &Image, cfg: &CodecConfig) -> TokenGrid {
    analyze_with_stats(image, cfg).0
}

/// Reconstructs an image from a fully known token grid.
pub fn synthesize(tokens: &TokenGrid, cfg: &CodecConfig, geo: Geometry) -> Result<Image> {
    if let Some(&(row, col)) = tokens.masked_positions().first() {
        return Err(Error::MaskedToken { row, col });
    }
    if tokens.rows() != geo.token_rows() || tokens.cols() != geo.token_cols() {
        return Err(Error::InvalidConfig(format!(
            "token grid {}x{} does not cover a {}x{} image",
            tokens.rows(),
            tokens.cols(),
            geo.height,
            geo.width
        )));
    }
    let zz = zigzag();
    let mut img = Image::filled(geo.height, geo.width, geo.planes, 0);
    for pos in tokens.positions() {
        let values = tokens.token(pos).expect("all known");
        let mut blocks: Vec<Block> = vec![[[0.0; BLOCK]; BLOCK]; geo.planes];
        for (ch, &v) in values.iter().enumerate() {
            let (plane, z) = channel_layout(ch, geo.planes);
            if z < BLOCK * BLOCK {
                let (u, w) = zz[z];
                blocks[plane][u][w] = v as f64 * cfg.step(z);
            }
        }
        for (plane, coef) in blocks.iter().enumerate() {
            let pix = inverse(coef);
            for (r, row) in pix.iter().enumerate() {
                let y = pos.0 * BLOCK + r;
                if y >= geo.height {
                    break;
                }
                for (c, &v) in row.iter().enumerate() {
                    let x = pos.1 * BLOCK + c;
                    if x >= geo.width {
                        break;
                    }
                    img.set(y, x, plane, v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::image::psnr;

    #[test]
    fn zigzag_is_a_permutation_and_starts_like_jpeg() {
        let zz = zigzag();
        assert_eq!(&zz[..6], &[(0, 0), (0, 1), (1, 0), (2, 0), (1, 1), (0, 2)]);
        let mut seen = [[false; BLOCK]; BLOCK];
        for &(r, c) in zz.iter() {
            assert!(!seen[r][c]);
            seen[r][c] = true;
        }
    }

    #[test]
    fn constant_image_is_dc_only() {
        let cfg = CodecConfig::default();
        for (h, w) in [(16, 16), (24, 40), (33, 17)] {
            let grid = analyze(&Image::filled(h, w, 1, 128), &cfg);
            let dc = (16.0 * 128.0 / cfg.step(0)).round() as i32;
            for pos in grid.positions() {
                let t = grid.token(pos).unwrap();
                assert_eq!(t[0], dc);
                assert!(t[1..].iter().all(|&v| v == 0));
            }
        }
    }

    #[test]
    fn grid_dimensions() {
        let cfg = CodecConfig::default();
        let g = analyze(&Image::filled(16, 16, 1, 3), &cfg);
        assert_eq!((g.rows(), g.cols()), (1, 1));
        let g = analyze(&Image::filled(24, 40, 1, 3), &cfg);
        assert_eq!((g.rows(), g.cols()), (2, 3));
        assert!(g.all_known());
    }

    #[test]
    fn zero_tokens_give_black_image() {
        let cfg = CodecConfig::default();
        let mut grid = TokenGrid::masked(2, 2, cfg.channels);
        for pos in grid.clone().positions() {
            grid.set(pos, &vec![0; cfg.channels]);
        }
        let geo = Geometry {
            height: 32,
            width: 30,
            planes: 1,
        };
        let img = synthesize(&grid, &cfg, geo).unwrap();
        assert!(img.samples().iter().all(|&s| s == 0));
    }

    #[test]
    fn masked_token_rejected() {
        let cfg = CodecConfig::default();
        let grid = TokenGrid::masked(1, 1, cfg.channels);
        let geo = Geometry {
            height: 16,
            width: 16,
            planes: 1,
        };
        assert!(matches!(
            synthesize(&grid, &cfg, geo),
            Err(Error::MaskedToken { row: 0, col: 0 })
        ));
    }

    #[test]
    fn fine_quantizer_roundtrip_is_high_quality() {
        let img = corpus::smooth(64, 96);
        let cfg = CodecConfig {
            channels: 64,
            quality: 0.25,
            clamp: 32767,
        };
        let rec = synthesize(&analyze(&img, &cfg), &cfg, Geometry::of(&img)).unwrap();
        let p = psnr(&img, &rec);
        assert!(p >= 40.0, "psnr {p}");
    }

    #[test]
    fn reanalysis_is_a_fixed_point() {
        let cfg = CodecConfig::default();
        let img = corpus::image(3, 64, 96);
        let geo = Geometry::of(&img);
        let once = synthesize(&analyze(&img, &cfg), &cfg, geo).unwrap();
        let twice = synthesize(&analyze(&once, &cfg), &cfg, geo).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn quantizer_error_bound_in_coefficient_domain() {
        let cfg = CodecConfig::default();
        let img = corpus::image(5, 48, 80);
        let coefs = coefficients(&img, &cfg);
        let grid = analyze(&img, &cfg);
        for (i, pos) in grid.positions().enumerate() {
            let t = grid.token(pos).unwrap();
            for ch in 0..cfg.channels {
                let step = cfg.step(ch);
                let err = (t[ch] as f64 * step - coefs[i * cfg.channels + ch]).abs();
                assert!(err <= step / 2.0 + 1e-9);
            }
        }
    }

    #[test]
    fn color_images_tokenize_and_reconstruct() {
        let gray = corpus::image(1, 32, 48);
        let mut samples = Vec::new();
        for &s in gray.samples() {
            samples.extend_from_slice(&[s, 255 - s, s / 2]);
        }
        let rgb = Image::new(32, 48, 3, samples).unwrap();
        let cfg = CodecConfig {
            quality: 8.0,
            clamp: 1023,
            ..CodecConfig::default()
        };
        let rec = synthesize(&analyze(&rgb, &cfg), &cfg, Geometry::of(&rgb)).unwrap();
        assert_eq!(rec.planes(), 3);
        assert!(psnr(&rgb, &rec) > 25.0);
    }

    #[test]
    fn analysis_is_deterministic() {
        let cfg = CodecConfig::default();
        let img = corpus::image(2, 64, 64);
        assert_eq!(analyze(&img, &cfg), analyze(&img, &cfg));
    }
}
