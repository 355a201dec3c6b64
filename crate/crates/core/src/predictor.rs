//! Masked-token predictor with two heads: a Gaussian-mixture density for
//! every masked token channel (drives entropy coding) and a point estimate of
//! its value (drives concealment). Both heads come from one call.
//!
//! The reference predictor is statistical. Component 1 of each mixture is
//! the inverse-distance-weighted mean and spread of the known neighbours
//! inside a square window; components 2 and 3 are the per-channel prior.
//! Component 1's logit is lowered by the log of the window weight that is
//! not known, so sparse context defers to the prior. Without any known
//! neighbour the prior is used alone. The concealment value is the rounded
//! mixture mean.

use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;

use crate::context_modes::ContextMode;
use crate::corpus;
use crate::density::{GmmParams, MIXTURES, SIGMA_FLOOR};
use crate::detmath;
use crate::error::{Error, Result};
use crate::partition::SlicePlan;
use crate::token_codec::{analyze, CodecConfig, Position, TokenGrid};

/// Side of the square neighbourhood window, in tokens.
pub const WINDOW: usize = 11;

/// Mixture logits used whenever at least one neighbour is known.
pub const LOGITS: [f64; MIXTURES] = [3.0, 0.0, 0.0];

const MAGIC: &[u8; 4] = b"RCPM";
const VERSION: u8 = 1;

/// Per-channel fallback statistics plus the predictor constants.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorModel {
    means: Vec<f64>,
    stds: Vec<f64>,
    window: usize,
    logits: [f64; MIXTURES],
}

impl PriorModel {
    pub fn new(means: Vec<f64>, stds: Vec<f64>) -> Result<Self> {
        if means.is_empty() || means.len() != stds.len() {
            return Err(Error::Format(
                "prior means and stds must have equal nonzero length".into(),
            ));
        }
        if means.iter().chain(&stds).any(|v| !v.is_finite()) {
            return Err(Error::Format("prior statistics must be finite".into()));
        }
        Ok(PriorModel {
            means,
            stds: stds.into_iter().map(|s| s.max(SIGMA_FLOOR)).collect(),
            window: WINDOW,
            logits: LOGITS,
        })
    }

    /// Per-channel mean and standard deviation over every known token.
    pub fn fit(grids: &[TokenGrid]) -> Result<Self> {
        let channels = grids
            .first()
            .map(TokenGrid::channels)
            .ok_or_else(|| Error::InvalidConfig("cannot fit a prior on zero grids".into()))?;
        let mut sum = vec![0.0f64; channels];
        let mut sq = vec![0.0f64; channels];
        let mut n = 0usize;
        for g in grids {
            if g.channels() != channels {
                return Err(Error::InvalidConfig(
                    "grids disagree on channel count".into(),
                ));
            }
            for pos in g.positions() {
                if let Some(t) = g.token(pos) {
                    n += 1;
                    for (c, &v) in t.iter().enumerate() {
                        sum[c] += v as f64;
                        sq[c] += v as f64 * v as f64;
                    }
                }
            }
        }
        if n == 0 {
            return Err(Error::InvalidConfig("no known tokens to fit".into()));
        }
        let means: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let stds = sq
            .iter()
            .zip(&means)
            .map(|(q, m)| (q / n as f64 - m * m).max(0.0).sqrt())
            .collect();
        PriorModel::new(means, stds)
    }

    /// Prior fitted on a held-out slice of the synthetic corpus.
    pub fn builtin(cfg: &CodecConfig) -> Self {
        let grids: Vec<TokenGrid> = (1000..1012u64)
            .map(|i| analyze(&corpus::image(i, corpus::HEIGHT, corpus::WIDTH), cfg))
            .collect();
        PriorModel::fit(&grids).expect("corpus tokens")
    }

    pub fn channels(&self) -> usize {
        self.means.len()
    }

    pub fn mean(&self, channel: usize) -> f64 {
        self.means[channel]
    }

    pub fn std(&self, channel: usize) -> f64 {
        self.stds[channel]
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn logits(&self) -> [f64; MIXTURES] {
        self.logits
    }

    /// The mixture used for a token channel with no known neighbour.
    pub fn fallback(&self, channel: usize) -> GmmParams {
        let m = self.means[channel];
        let s = self.stds[channel];
        GmmParams {
            weights: detmath::softmax(self.logits),
            means: [m; MIXTURES],
            sigmas: [s; MIXTURES],
        }
    }

    /// Little-endian model file: magic `RCPM`, version (u8), channels (u16),
    /// window (u8), mixture count (u8), logits (f64 each), then per channel
    /// mean and std (f64).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(9 + 8 * MIXTURES + 16 * self.channels());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.channels() as u16).to_le_bytes());
        out.push(self.window as u8);
        out.push(MIXTURES as u8);
        for l in self.logits {
            out.extend_from_slice(&l.to_le_bytes());
        }
        for (m, s) in self.means.iter().zip(&self.stds) {
            out.extend_from_slice(&m.to_le_bytes());
            out.extend_from_slice(&s.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |what: &str| Error::Format(format!("model file: {what}"));
        if bytes.len() < 9 || &bytes[..4] != MAGIC {
            return Err(bad("missing RCPM magic"));
        }
        if bytes[4] != VERSION {
            return Err(bad("unsupported version"));
        }
        let channels = u16::from_le_bytes([bytes[5], bytes[6]]) as usize;
        let window = bytes[7] as usize;
        let mixtures = bytes[8] as usize;
        if mixtures != MIXTURES {
            return Err(bad("mixture count must be 3"));
        }
        if window == 0 || window.is_multiple_of(2) {
            return Err(bad("window must be odd"));
        }
        let need = 9 + 8 * MIXTURES + 16 * channels;
        if bytes.len() != need {
            return Err(bad("length does not match header"));
        }
        let f = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let mut logits = [0.0; MIXTURES];
        for (k, l) in logits.iter_mut().enumerate() {
            *l = f(9 + 8 * k);
        }
        let base = 9 + 8 * MIXTURES;
        let means = (0..channels).map(|c| f(base + 16 * c)).collect();
        let stds = (0..channels).map(|c| f(base + 16 * c + 8)).collect();
        let mut model = PriorModel::new(means, stds)?;
        model.window = window;
        model.logits = logits;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        PriorModel::from_bytes(&std::fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

/// Predictions for a set of masked positions.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorOutput {
    positions: Vec<Position>,
    channels: usize,
    gmm: Vec<GmmParams>,
    values: Vec<i32>,
}

impl PredictorOutput {
    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Density head for the `i`-th predicted position.
    pub fn gmm(&self, i: usize) -> &[GmmParams] {
        &self.gmm[i * self.channels..(i + 1) * self.channels]
    }

    /// Concealment head for the `i`-th predicted position.
    pub fn values(&self, i: usize) -> &[i32] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }
}

fn window_weights(window: usize) -> Vec<(isize, isize, f64)> {
    static CACHE: OnceLock<Vec<(isize, isize, f64)>> = OnceLock::new();
    let build = |window: usize| {
        let r = (window / 2) as isize;
        let mut w = Vec::new();
        for dr in -r..=r {
            for dc in -r..=r {
                if dr != 0 || dc != 0 {
                    w.push((dr, dc, 1.0 / ((dr * dr + dc * dc) as f64).sqrt()));
                }
            }
        }
        w
    };
    if window == WINDOW {
        CACHE.get_or_init(|| build(WINDOW)).clone()
    } else {
        build(window)
    }
}

/// Mean of the mixture, the squared-error optimal point estimate.
pub fn mixture_mean(g: &GmmParams) -> f64 {
    g.weights.iter().zip(&g.means).map(|(w, m)| w * m).sum()
}

/// Predicts every masked position of `masked`.
pub fn predict(masked: &TokenGrid, prior: &PriorModel) -> PredictorOutput {
    predict_at(masked, prior, &masked.masked_positions())
}

/// Predicts only `targets`, which should be masked in `masked`.
pub fn predict_at(masked: &TokenGrid, prior: &PriorModel, targets: &[Position]) -> PredictorOutput {
    assert_eq!(
        masked.channels(),
        prior.channels(),
        "prior/grid channel mismatch"
    );
    let channels = masked.channels();
    let offsets = window_weights(prior.window);
    let full: f64 = offsets.iter().map(|o| o.2).sum();

    let per_target: Vec<(Vec<GmmParams>, Vec<i32>)> = targets
        .par_iter()
        .map(|&(row, col)| {
            let mut neighbours: Vec<(&[i32], f64)> = Vec::new();
            for &(dr, dc, w) in &offsets {
                let r = row as isize + dr;
                let c = col as isize + dc;
                if r < 0 || c < 0 || r >= masked.rows() as isize || c >= masked.cols() as isize {
                    continue;
                }
                if let Some(t) = masked.token((r as usize, c as usize)) {
                    neighbours.push((t, w));
                }
            }
            let wsum: f64 = neighbours.iter().map(|n| n.1).sum();
            // the local component's logit drops by the log of the missing
            // share of the window, so sparse context leans on the prior
            let mut logits = prior.logits;
            if wsum > 0.0 {
                logits[0] += detmath::ln(wsum / full);
            }
            let mixture = detmath::softmax(logits);
            let mut gmms = Vec::with_capacity(channels);
            let mut values = Vec::with_capacity(channels);
            for ch in 0..channels {
                if neighbours.is_empty() {
                    let g = prior.fallback(ch);
                    values.push(mixture_mean(&g).round() as i32);
                    gmms.push(g);
                    continue;
                }
                let mean = neighbours
                    .iter()
                    .map(|(t, w)| w * t[ch] as f64)
                    .sum::<f64>()
                    / wsum;
                let var = neighbours
                    .iter()
                    .map(|(t, w)| {
                        let d = t[ch] as f64 - mean;
                        w * d * d
                    })
                    .sum::<f64>()
                    / wsum;
                let pm = prior.mean(ch);
                let ps = prior.std(ch);
                let g = GmmParams {
                    weights: mixture,
                    means: [mean, pm, pm],
                    sigmas: [var.sqrt().max(SIGMA_FLOOR), ps, ps],
                };
                values.push(mixture_mean(&g).round() as i32);
                gmms.push(g);
            }
            (gmms, values)
        })
        .collect();

    let mut gmm = Vec::with_capacity(targets.len() * channels);
    let mut values = Vec::with_capacity(targets.len() * channels);
    for (g, v) in per_target {
        gmm.extend(g);
        values.extend(v);
    }
    PredictorOutput {
        positions: targets.to_vec(),
        channels,
        gmm,
        values,
    }
}

/// Builds the context grid for slice `slice`: the decoded tokens of every
/// context slice, everything else masked. Fails on the first context slice
/// whose packet was not received.
pub fn collect_context(
    slice: usize,
    mode: &ContextMode,
    received: &[bool],
    plan: &SlicePlan,
    decoded: &TokenGrid,
) -> Result<TokenGrid> {
    let mut grid = TokenGrid::masked(decoded.rows(), decoded.cols(), decoded.channels());
    for k in mode.contexts(slice) {
        if !received[k] {
            return Err(Error::Synchronization { slice, missing: k });
        }
        grid.copy_from(decoded, plan.slice(k));
    }
    Ok(grid)
}

/// Fills masked positions with the concealment head; known positions pass
/// through untouched.
pub fn conceal(grid: &TokenGrid, output: &PredictorOutput) -> Result<TokenGrid> {
    let masked = grid.len() - grid.known_count();
    if output.positions.len() != masked || output.positions.iter().any(|&p| grid.is_known(p)) {
        return Err(Error::InvalidConfig(
            "predictor output must cover exactly the masked positions".into(),
        ));
    }
    let mut out = grid.clone();
    for (i, &pos) in output.positions.iter().enumerate() {
        out.set(pos, output.values(i));
    }
    Ok(out)
}
