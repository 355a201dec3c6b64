//! Pinned elementary functions.
//!
//! Everything that feeds a frequency table on both ends of the link goes
//! through these routines instead of the platform libm, so that encoder and
//! decoder builds on different targets agree bit for bit. They use only
//! IEEE-754 add, multiply, divide and exact power-of-two scaling.

const LN2_HI: f64 = 6.931_471_803_691_238e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;

/// `2^k` for `k` in the normal exponent range.
fn pow2i(k: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&k));
    f64::from_bits(((k + 1023) as u64) << 52)
}

/// e^x.
pub fn exp(x: f64) -> f64 {
    if x.is_nan() {
        return x;
    }
    if x > 709.0 {
        return f64::INFINITY;
    }
    if x < -745.0 {
        return 0.0;
    }
    // x = k ln2 + r, |r| <= ln2 / 2
    let kf = (x * std::f64::consts::LOG2_E).round();
    let k = kf as i32;
    let r = (x - kf * LN2_HI) - kf * LN2_LO;

    // Taylor series to degree 14, Horner order from the highest term.
    let mut p = 1.0 / 87_178_291_200.0;
    for d in (1..14u32).rev() {
        p = p * r + 1.0 / factorial(d);
    }
    let er = p * r + 1.0;

    if k < -1020 {
        // two-step scaling keeps the intermediate normal
        er * pow2i(k + 60) * pow2i(-60)
    } else if k > 1023 {
        er * pow2i(k - 1) * 2.0
    } else {
        er * pow2i(k)
    }
}

fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

/// Natural logarithm for positive finite inputs.
pub fn ln(x: f64) -> f64 {
    if x.is_nan() || x < 0.0 {
        return f64::NAN;
    }
    if x == 0.0 {
        return f64::NEG_INFINITY;
    }
    if x.is_infinite() {
        return x;
    }
    // split x = m * 2^e with m in [sqrt(1/2), sqrt(2))
    let (mut m, mut e) = frexp(x);
    if m < std::f64::consts::FRAC_1_SQRT_2 {
        m *= 2.0;
        e -= 1;
    }
    // ln(m) = 2 atanh(s), s = (m-1)/(m+1), |s| < 0.1716
    let s = (m - 1.0) / (m + 1.0);
    let s2 = s * s;
    let mut p = 0.0;
    for k in (0..20u32).rev() {
        p = p * s2 + 1.0 / (2 * k + 1) as f64;
    }
    let ef = e as f64;
    (ef * LN2_HI + 2.0 * s * p) + ef * LN2_LO
}

/// Returns `(m, e)` with `x = m * 2^e` and `m` in `[0.5, 1)`.
fn frexp(x: f64) -> (f64, i32) {
    let bits = x.to_bits();
    let exp_bits = ((bits >> 52) & 0x7ff) as i32;
    if exp_bits == 0 {
        // subnormal: normalize first
        let (m, e) = frexp(x * pow2i(64));
        return (m, e - 64);
    }
    let e = exp_bits - 1022;
    let m = f64::from_bits((bits & !(0x7ffu64 << 52)) | (1022u64 << 52));
    (m, e)
}

/// x^y for positive x.
pub fn powf(x: f64, y: f64) -> f64 {
    if y == 0.0 {
        return 1.0;
    }
    exp(y * ln(x))
}

/// Softmax over a fixed-size logit vector.
pub fn softmax<const K: usize>(logits: [f64; K]) -> [f64; K] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; K];
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits.iter()) {
        *o = exp(l - max);
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    out
}
