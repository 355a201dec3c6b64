//! Discretized Gaussian-mixture models over the token alphabet and their
//! quantization to integer frequency tables for the range coder.
//!
//! The normal CDF uses a fixed rational approximation (Abramowitz & Stegun
//! 7.1.26) evaluated with the pinned [`crate::detmath::exp`], so that the
//! encoder and decoder derive identical [`FreqTable`]s on any platform.

use crate::detmath;

/// Number of mixture components.
pub const MIXTURES: usize = 3;

/// Lower bound on every component's standard deviation.
pub const SIGMA_FLOOR: f64 = 0.11;

/// log2 of the frequency-table total.
pub const FREQ_BITS: u32 = 16;

/// Sum of every frequency table.
pub const FREQ_TOTAL: u32 = 1 << FREQ_BITS;

/// Beyond this many standard deviations the CDF is taken as exactly 0 or 1.
const SATURATION_Z: f64 = 8.0;

/// Parameters of a `MIXTURES`-component Gaussian mixture.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GmmParams {
    pub weights: [f64; MIXTURES],
    pub means: [f64; MIXTURES],
    pub sigmas: [f64; MIXTURES],
}

impl GmmParams {
    /// A mixture that collapses to one Gaussian.
    pub fn single(mean: f64, sigma: f64) -> Self {
        GmmParams {
            weights: [1.0, 0.0, 0.0],
            means: [mean; MIXTURES],
            sigmas: [sigma.max(SIGMA_FLOOR); MIXTURES],
        }
    }

    pub fn is_valid(&self) -> bool {
        let sum: f64 = self.weights.iter().sum();
        (sum - 1.0).abs() <= 1e-9
            && self.weights.iter().all(|w| (0.0..=1.0).contains(w))
            && self.sigmas.iter().all(|&s| s >= SIGMA_FLOOR)
            && self.means.iter().all(|m| m.is_finite())
    }

    /// Index of the component with the largest weight (lowest index on ties).
    pub fn dominant(&self) -> usize {
        let mut best = 0;
        for k in 1..MIXTURES {
            if self.weights[k] > self.weights[best] {
                best = k;
            }
        }
        best
    }
}

/// A probability mass function over the contiguous integer alphabet
/// `min_symbol ..= min_symbol + probs.len() - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pmf {
    pub min_symbol: i32,
    pub probs: Vec<f64>,
}

impl Pmf {
    pub fn uniform(min_symbol: i32, len: usize) -> Self {
        Pmf {
            min_symbol,
            probs: vec![1.0 / len as f64; len],
        }
    }

    pub fn max_symbol(&self) -> i32 {
        self.min_symbol + self.probs.len() as i32 - 1
    }

    /// Probability of `symbol`, zero outside the alphabet.
    pub fn prob(&self, symbol: i32) -> f64 {
        let idx = symbol - self.min_symbol;
        if idx < 0 {
            return 0.0;
        }
        self.probs.get(idx as usize).copied().unwrap_or(0.0)
    }

    pub fn argmax(&self) -> i32 {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        self.min_symbol + best as i32
    }

    /// Shannon entropy in bits.
    pub fn entropy(&self) -> f64 {
        self.probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.log2())
            .sum()
    }
}

/// Integer frequencies summing to [`FREQ_TOTAL`], each at least 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FreqTable {
    counts: Vec<u32>,
    /// `cumulative[i]` is the sum of `counts[..i]`; one longer than `counts`.
    cumulative: Vec<u32>,
}

impl FreqTable {
    pub fn from_counts(counts: Vec<u32>) -> Option<Self> {
        if counts.is_empty() || counts.contains(&0) {
            return None;
        }
        let mut cumulative = Vec::with_capacity(counts.len() + 1);
        let mut acc = 0u32;
        cumulative.push(0);
        for &c in &counts {
            acc = acc.checked_add(c)?;
            cumulative.push(acc);
        }
        (acc == FREQ_TOTAL).then_some(FreqTable { counts, cumulative })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total(&self) -> u32 {
        FREQ_TOTAL
    }

    #[inline]
    pub fn freq(&self, index: usize) -> u32 {
        self.counts[index]
    }

    #[inline]
    pub fn cum(&self, index: usize) -> u32 {
        self.cumulative[index]
    }

    /// The symbol index whose cumulative interval contains `target`.
    #[inline]
    pub fn lookup(&self, target: u32) -> usize {
        debug_assert!(target < FREQ_TOTAL);
        // last index with cumulative <= target
        self.cumulative.partition_point(|&c| c <= target) - 1
    }

    /// Code length in bits of symbol `index` under this table.
    pub fn bits(&self, index: usize) -> f64 {
        FREQ_BITS as f64 - (self.counts[index] as f64).log2()
    }
}

/// Standard normal CDF, Abramowitz & Stegun 7.1.26 (|error| < 1.5e-7).
///
/// Evaluation order: `t = 1 / (1 + p*x)`, then the degree-5 polynomial in `t`
/// in Horner form from `a5` down to `a1`, multiplied by `exp(-x*x)`; the result
/// is mirrored for negative arguments. Saturates to exactly 0 or 1 beyond
/// |z| = 8.
pub fn normal_cdf(z: f64) -> f64 {
    const P: f64 = 0.327_591_1;
    const A1: f64 = 0.254_829_592;
    const A2: f64 = -0.284_496_736;
    const A3: f64 = 1.421_413_741;
    const A4: f64 = -1.453_152_027;
    const A5: f64 = 1.061_405_429;

    if z >= SATURATION_Z {
        return 1.0;
    }
    if z <= -SATURATION_Z {
        return 0.0;
    }
    let x = z.abs() * std::f64::consts::FRAC_1_SQRT_2;
    let t = 1.0 / (1.0 + P * x);
    let poly = ((((A5 * t + A4) * t + A3) * t + A2) * t + A1) * t;
    // erfc(x) ~= poly * e^{-x^2}
    let half_erfc = 0.5 * poly * detmath::exp(-x * x);
    if z >= 0.0 {
        1.0 - half_erfc
    } else {
        half_erfc
    }
}

/// Integrates the mixture over unit bins centred on `-clamp ..= clamp`,
/// folding both tails into the edge symbols.
pub fn discretize(gmm: &GmmParams, clamp: i32) -> Pmf {
    let len = (2 * clamp + 1) as usize;
    // mixture CDF at the bin edges -clamp + 1/2, ..., clamp - 1/2
    let mut edges = vec![0.0f64; len - 1];
    for k in 0..MIXTURES {
        let w = gmm.weights[k];
        if w == 0.0 {
            continue;
        }
        let mu = gmm.means[k];
        let sigma = gmm.sigmas[k];
        // edges strictly below lo are 0, at or above hi are 1
        let lo = mu - SATURATION_Z * sigma;
        let hi = mu + SATURATION_Z * sigma;
        for (i, e) in edges.iter_mut().enumerate() {
            let b = (i as i32 - clamp) as f64 + 0.5;
            if b <= lo {
                continue;
            }
            if b >= hi {
                *e += w;
            } else {
                *e += w * normal_cdf((b - mu) / sigma);
            }
        }
    }
    let total: f64 = gmm.weights.iter().sum();
    let mut probs = Vec::with_capacity(len);
    let mut prev = 0.0;
    for &e in &edges {
        probs.push((e - prev).max(0.0));
        prev = e;
    }
    probs.push((total - prev).max(0.0));
    Pmf {
        min_symbol: -clamp,
        probs,
    }
}

/// Quantizes a pmf to counts summing to [`FREQ_TOTAL`] with a floor of one
/// per symbol. The spare mass is split by largest remainder, ties going to
/// the lower symbol.
///
/// # Panics
/// If the alphabet has more than `FREQ_TOTAL` symbols.
pub fn to_freq_table(pmf: &Pmf) -> FreqTable {
    let n = pmf.probs.len();
    assert!(n > 0 && n <= FREQ_TOTAL as usize, "alphabet size {n}");
    let spare = (FREQ_TOTAL as usize - n) as f64;
    let mass: f64 = pmf.probs.iter().sum();
    let norm = if mass > 0.0 { 1.0 / mass } else { 0.0 };

    let mut counts = Vec::with_capacity(n);
    let mut remainders = Vec::with_capacity(n);
    let mut assigned: i64 = 0;
    for &p in &pmf.probs {
        let q = p * norm * spare;
        let f = q.floor();
        counts.push(1 + f as u32);
        remainders.push(q - f);
        assigned += 1 + f as i64;
    }
    let mut deficit = FREQ_TOTAL as i64 - assigned;

    if deficit > 0 {
        let mut order: Vec<usize> = (0..n).collect();
        let by_remainder = |a: &usize, b: &usize| {
            remainders[*b]
                .partial_cmp(&remainders[*a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(b))
        };
        let take = deficit as usize;
        if take < n {
            order.select_nth_unstable_by(take, by_remainder);
        }
        for &i in order.iter().take(take.min(n)) {
            counts[i] += 1;
        }
        deficit -= take.min(n) as i64;
        // only reachable for an all-zero pmf
        let mut i = 0;
        while deficit > 0 {
            counts[i % n] += 1;
            deficit -= 1;
            i += 1;
        }
    }
    while deficit < 0 {
        // rounding pushed us over: trim the largest count
        let (i, _) = counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("nonempty");
        counts[i] -= 1;
        deficit += 1;
    }
    FreqTable::from_counts(counts).expect("counts sum to total")
}

/// −log2 of the probability of `symbol`.
pub fn bits_of(pmf: &Pmf, symbol: i32) -> f64 {
    -pmf.prob(symbol).log2()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn erf_oracle(z: f64) -> f64 {
        0.5 * (1.0 + statrs::function::erf::erf(z / std::f64::consts::SQRT_2))
    }

    #[test]
    fn cdf_accuracy() {
        let mut z = -9.0;
        while z < 9.0 {
            assert!((normal_cdf(z) - erf_oracle(z)).abs() < 1.5e-7, "z={z}");
            z += 0.01;
        }
    }

    #[test]
    fn single_gaussian_centre_mass() {
        let pmf = discretize(&GmmParams::single(0.0, 0.5), 127);
        let want = erf_oracle(1.0) - erf_oracle(-1.0);
        assert!((pmf.prob(0) - want).abs() < 3e-7);
        assert!((pmf.prob(0) - 0.6827).abs() < 1e-4);
        assert!((pmf.prob(1) - pmf.prob(-1)).abs() < 1e-15);
    }

    #[test]
    fn far_mean_folds_into_edge() {
        let pmf = discretize(&GmmParams::single(1270.0, 1.0), 127);
        assert!((pmf.prob(127) - 1.0).abs() < 1e-12);
        let pmf = discretize(&GmmParams::single(-1270.0, 1.0), 127);
        assert!((pmf.prob(-127) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn freq_table_uniform() {
        let t = to_freq_table(&Pmf::uniform(0, 256));
        assert!(t.counts().iter().all(|&c| c == 256));
    }

    #[test]
    fn freq_table_zero_prob_gets_floor() {
        let mut probs = vec![0.0; 10];
        probs[3] = 0.5;
        probs[7] = 0.5;
        let t = to_freq_table(&Pmf {
            min_symbol: 0,
            probs,
        });
        assert_eq!(t.freq(0), 1);
        assert_eq!(t.counts().iter().map(|&c| c as u64).sum::<u64>(), 65536);
        assert_eq!(t.freq(3), t.freq(7));
    }

    #[test]
    fn freq_table_lookup() {
        let t = FreqTable::from_counts(vec![10, 65496, 30]).unwrap();
        assert_eq!(t.lookup(0), 0);
        assert_eq!(t.lookup(9), 0);
        assert_eq!(t.lookup(10), 1);
        assert_eq!(t.lookup(65535), 2);
    }

    #[test]
    fn bits_examples() {
        let pmf = Pmf {
            min_symbol: 0,
            probs: vec![0.6827, 0.3173],
        };
        assert!((bits_of(&pmf, 0) - 0.551).abs() < 1e-3);
        let certain = Pmf {
            min_symbol: 0,
            probs: vec![1.0, 0.0],
        };
        assert_eq!(bits_of(&certain, 0), 0.0);
        assert!((bits_of(&Pmf::uniform(0, 256), 5) - 8.0).abs() < 1e-12);
    }

    fn arb_gmm() -> impl Strategy<Value = GmmParams> {
        (
            prop::array::uniform3(0.01f64..1.0),
            prop::array::uniform3(-150.0f64..150.0),
            prop::array::uniform3(SIGMA_FLOOR..60.0),
        )
            .prop_map(|(w, means, sigmas)| {
                let s: f64 = w.iter().sum();
                GmmParams {
                    weights: [w[0] / s, w[1] / s, w[2] / s],
                    means,
                    sigmas,
                }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn pmf_normalized(g in arb_gmm()) {
            let pmf = discretize(&g, 127);
            prop_assert!((pmf.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(pmf.probs.iter().all(|&p| p >= 0.0));
        }

        #[test]
        fn freq_table_sums_and_tracks_pmf(g in arb_gmm()) {
            let pmf = discretize(&g, 127);
            let t = to_freq_table(&pmf);
            let sum: u64 = t.counts().iter().map(|&c| c as u64).sum();
            prop_assert_eq!(sum, FREQ_TOTAL as u64);
            let n = pmf.probs.len() as f64;
            for (i, &p) in pmf.probs.iter().enumerate() {
                let q = t.freq(i) as f64 / FREQ_TOTAL as f64;
                // floor effect: each symbol's reserved unit shifts mass by at most n/total
                prop_assert!((q - p).abs() <= 2.0 / FREQ_TOTAL as f64 + n * p / FREQ_TOTAL as f64 + 1.0 / FREQ_TOTAL as f64);
            }
        }

        #[test]
        fn cross_entropy_equals_entropy(g in arb_gmm()) {
            let pmf = discretize(&g, 127);
            let ce: f64 = (pmf.min_symbol..=pmf.max_symbol())
                .filter(|&v| pmf.prob(v) > 0.0)
                .map(|v| pmf.prob(v) * bits_of(&pmf, v))
                .sum();
            prop_assert!((ce - pmf.entropy()).abs() < 1e-9);
        }

        #[test]
        fn mean_shift_moves_argmax(mu in -100i32..100, sigma in SIGMA_FLOOR..0.3) {
            let a = discretize(&GmmParams::single(mu as f64, sigma), 127).argmax();
            let b = discretize(&GmmParams::single(mu as f64 + 1.0, sigma), 127).argmax();
            prop_assert_eq!(b, a + 1);
        }
    }
}
