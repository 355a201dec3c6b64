//! Deterministic synthetic test images.
//!
//! Each image mixes a gradient, a few low-frequency waves, soft-edged
//! ellipses and multi-octave value noise, which gives block statistics close
//! enough to natural photographs for the codec and concealment experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Image;

/// Default corpus image height.
pub const HEIGHT: usize = 128;
/// Default corpus image width.
pub const WIDTH: usize = 192;

/// Synthetic grayscale image number `index`.
pub fn image(index: u64, height: usize, width: usize) -> Image {
    let mut rng =
        ChaCha8Rng::seed_from_u64(0x5eed_0000 ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let h = height as f64;
    let w = width as f64;
    let mut field = vec![0.0f64; height * width];

    let base = rng.gen_range(70.0..180.0);
    let gx = rng.gen_range(-60.0..60.0);
    let gy = rng.gen_range(-60.0..60.0);

    struct Wave {
        kx: f64,
        ky: f64,
        phase: f64,
        amp: f64,
    }
    let waves: Vec<Wave> = (0..rng.gen_range(2..5))
        .map(|_| {
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let period = rng.gen_range(40.0..160.0);
            let k = 2.0 * std::f64::consts::PI / period;
            Wave {
                kx: k * angle.cos(),
                ky: k * angle.sin(),
                phase: rng.gen_range(0.0..6.3),
                amp: rng.gen_range(5.0..22.0),
            }
        })
        .collect();

    struct Blob {
        cy: f64,
        cx: f64,
        ry: f64,
        rx: f64,
        level: f64,
    }
    let blobs: Vec<Blob> = (0..rng.gen_range(2..6))
        .map(|_| Blob {
            cy: rng.gen_range(0.0..h),
            cx: rng.gen_range(0.0..w),
            ry: rng.gen_range(4.0..(h / 2.0).max(5.0)),
            rx: rng.gen_range(4.0..(w / 2.0).max(5.0)),
            level: rng.gen_range(-55.0..55.0),
        })
        .collect();

    let octaves: Vec<(usize, f64, Vec<f64>)> = [(32usize, 14.0), (16, 7.0), (8, 3.5)]
        .iter()
        .map(|&(cell, amp)| {
            let gh = height / cell + 2;
            let gw = width / cell + 2;
            let lattice = (0..gh * gw).map(|_| rng.gen_range(-1.0..1.0)).collect();
            (cell, amp, lattice)
        })
        .collect();

    for y in 0..height {
        for x in 0..width {
            let (yf, xf) = (y as f64, x as f64);
            let mut v = base + gx * (xf / w - 0.5) + gy * (yf / h - 0.5);
            for wv in &waves {
                v += wv.amp * (wv.kx * xf + wv.ky * yf + wv.phase).sin();
            }
            for b in &blobs {
                let d = ((yf - b.cy) / b.ry).powi(2) + ((xf - b.cx) / b.rx).powi(2);
                // soft edge roughly 3 px wide
                let edge = (1.0 - d.sqrt()) * b.rx.min(b.ry) / 1.5;
                v += b.level / (1.0 + (-edge).exp());
            }
            for (cell, amp, lattice) in &octaves {
                let gw = width / cell + 2;
                let fy = yf / *cell as f64;
                let fx = xf / *cell as f64;
                let (iy, ix) = (fy as usize, fx as usize);
                let (ty, tx) = (smoothstep(fy - iy as f64), smoothstep(fx - ix as f64));
                let at = |r: usize, c: usize| lattice[r * gw + c];
                let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
                let bot = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
                v += amp * (top * (1.0 - ty) + bot * ty);
            }
            v += rng.gen_range(-2.0..2.0);
            field[y * width + x] = v;
        }
    }
    let samples = field
        .iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    Image::new(height, width, 1, samples).expect("valid dimensions")
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// The first `count` corpus images at the default size.
pub fn images(count: usize) -> Vec<Image> {
    (0..count as u64).map(|i| image(i, HEIGHT, WIDTH)).collect()
}

/// A smooth two-wave test pattern without noise.
pub fn smooth(height: usize, width: usize) -> Image {
    let mut samples = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let v = 128.0
                + 50.0 * (x as f64 / width as f64 * std::f64::consts::PI).sin()
                + 30.0 * (y as f64 / 37.0).cos();
            samples.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Image::new(height, width, 1, samples).expect("valid dimensions")
}
