//! Quantized low-discrepancy traversal of the token grid and its split into
//! slices whose sizes follow the context-count power schedule.

use crate::context_modes::ContextMode;
use crate::detmath;
use crate::error::{Error, Result};
use crate::token_codec::Position;

/// Plastic constant, the real root of x³ = x + 1.
const PLASTIC: f64 = 1.324_717_957_244_746;

/// Ordered traversal of the `rows × cols` grid.
///
/// Points of the additive recurrence `(frac(½ + n/g²), frac(½ + n/g))` are
/// floored onto the lattice, already-visited cells are skipped, and the walk
/// continues until every cell is visited. `seed` shifts the start index.
pub fn qlds_positions(rows: usize, cols: usize, seed: u64) -> Vec<Position> {
    let total = rows * cols;
    let mut visited = vec![false; total];
    let mut order = Vec::with_capacity(total);
    let a_row = 1.0 / (PLASTIC * PLASTIC);
    let a_col = 1.0 / PLASTIC;
    let start = splitmix64(seed) >> 44;
    // The recurrence is equidistributed, so every cell is eventually hit;
    // the cap only bounds pathological grid shapes.
    let cap = (total as u64).saturating_mul(256).max(1 << 16);
    let mut n = 0u64;
    while order.len() < total && n < cap {
        let idx = (start + n) as f64;
        let y = (0.5 + a_row * idx).fract();
        let x = (0.5 + a_col * idx).fract();
        let r = ((y * rows as f64) as usize).min(rows - 1);
        let c = ((x * cols as f64) as usize).min(cols - 1);
        let cell = r * cols + c;
        if !visited[cell] {
            visited[cell] = true;
            order.push((r, c));
        }
        n += 1;
    }
    for (cell, seen) in visited.iter().enumerate() {
        if !seen {
            order.push((cell / cols, cell % cols));
        }
    }
    order
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Slice sizes proportional to `(1 + C_l / L)^beta`, integerized by largest
/// remainder (ties to the lower slice) so they sum to `total`; every slice
/// gets at least one token.
pub fn slice_sizes(total: usize, context_counts: &[usize], beta: f64) -> Result<Vec<usize>> {
    let slices = context_counts.len();
    if slices == 0 || total < slices {
        return Err(Error::TooFewTokens {
            tokens: total,
            slices,
        });
    }
    let weights: Vec<f64> = context_counts
        .iter()
        .map(|&c| detmath::powf(1.0 + c as f64 / slices as f64, beta))
        .collect();
    let sum: f64 = weights.iter().sum();
    let mut sizes = Vec::with_capacity(slices);
    let mut remainders = Vec::with_capacity(slices);
    for &w in &weights {
        let quota = total as f64 * w / sum;
        let floor = quota.floor();
        sizes.push(floor as usize);
        remainders.push(quota - floor);
    }
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..slices).collect();
    order.sort_by(|&a, &b| {
        remainders[b]
            .partial_cmp(&remainders[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    // float error can leave the floors summing to total or total - slices..
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    // enforce the one-token floor by borrowing from the largest slice
    for i in 0..slices {
        while sizes[i] == 0 {
            let donor = (0..slices)
                .max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
                .expect("nonempty");
            sizes[donor] -= 1;
            sizes[i] += 1;
        }
    }
    debug_assert_eq!(sizes.iter().sum::<usize>(), total);
    Ok(sizes)
}

/// Shared description of how the token grid is split into slices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlicePlan {
    rows: usize,
    cols: usize,
    seed: u64,
    beta_milli: u16,
    positions: Vec<Position>,
    boundaries: Vec<usize>,
}

/// Rounds a schedule exponent to the thousandths carried on the wire.
pub fn beta_to_milli(beta: f64) -> Result<u16> {
    let m = (beta * 1000.0).round();
    if !(0.0..=u16::MAX as f64).contains(&m) {
        return Err(Error::InvalidConfig(format!("beta {beta} out of range")));
    }
    Ok(m as u16)
}

/// Plan using the mode's default exponent.
pub fn build_plan(rows: usize, cols: usize, mode: &ContextMode, seed: u64) -> Result<SlicePlan> {
    build_plan_with_beta(rows, cols, mode, seed, beta_to_milli(mode.default_beta())?)
}

/// Plan with an explicit exponent in thousandths.
pub fn build_plan_with_beta(
    rows: usize,
    cols: usize,
    mode: &ContextMode,
    seed: u64,
    beta_milli: u16,
) -> Result<SlicePlan> {
    let total = rows * cols;
    let sizes = slice_sizes(total, &mode.context_counts(), beta_milli as f64 / 1000.0)?;
    let mut boundaries = Vec::with_capacity(sizes.len() + 1);
    boundaries.push(0);
    for s in sizes {
        boundaries.push(boundaries.last().unwrap() + s);
    }
    Ok(SlicePlan {
        rows,
        cols,
        seed,
        beta_milli,
        positions: qlds_positions(rows, cols, seed),
        boundaries,
    })
}

impl SlicePlan {
    pub fn slices(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn beta_milli(&self) -> u16 {
        self.beta_milli
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    /// Token positions of slice `l` in coding order.
    pub fn slice(&self, l: usize) -> &[Position] {
        &self.positions[self.boundaries[l]..self.boundaries[l + 1]]
    }

    pub fn slice_len(&self, l: usize) -> usize {
        self.boundaries[l + 1] - self.boundaries[l]
    }

    /// Canonical little-endian layout: rows, cols, L (u32), seed (u64),
    /// beta×1000 (u32), L+1 boundaries (u32), then every position as a
    /// `(row, col)` pair of u32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 4 * self.boundaries.len() + 8 * self.positions.len());
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        out.extend_from_slice(&(self.slices() as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.beta_milli as u32).to_le_bytes());
        for &b in &self.boundaries {
            out.extend_from_slice(&(b as u32).to_le_bytes());
        }
        for &(r, c) in &self.positions {
            out.extend_from_slice(&(r as u32).to_le_bytes());
            out.extend_from_slice(&(c as u32).to_le_bytes());
        }
        out
    }
}
