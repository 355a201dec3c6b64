//! Slice dependency matrices ("context modes") and their decode schedules.
//!
//! `G[l][k] = true` means slice `l` is entropy coded conditioned on slice `k`.
//! A usable mode is strictly lower triangular (every slice is decodable once
//! its own packet and its contexts' packets arrive) and transitively closed
//! (a slice inherits all contexts of its contexts). Slice indices are zero
//! based in the API; diagnostics print them one based.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Preset family of a context mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModeKind {
    /// Independent slice coding: no contexts.
    Isc,
    /// Layered coding: slice `l` conditions on every earlier slice.
    Lc,
    /// Multiple-description coding with `descriptions` independent chains.
    Mdc { descriptions: usize },
    /// Scalable layered coding: a base slice plus `enhancement` layers.
    Slc { enhancement: usize },
    /// User supplied matrix.
    Custom,
}

impl ModeKind {
    /// Wire identifier carried in packet headers.
    pub fn id(&self) -> u8 {
        match self {
            ModeKind::Isc => 0,
            ModeKind::Lc => 1,
            ModeKind::Mdc { .. } => 2,
            ModeKind::Slc { .. } => 3,
            ModeKind::Custom => 255,
        }
    }

    /// Slice-size schedule exponent used when none is given.
    pub fn default_beta(&self) -> f64 {
        match self {
            ModeKind::Isc => 0.0,
            ModeKind::Lc => 1.0,
            ModeKind::Mdc { .. } => 0.5,
            ModeKind::Slc { .. } => 1.0,
            ModeKind::Custom => 1.0,
        }
    }
}

impl fmt::Display for ModeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModeKind::Isc => write!(f, "ISC"),
            ModeKind::Lc => write!(f, "LC"),
            ModeKind::Mdc { descriptions } => write!(f, "MDC({descriptions})"),
            ModeKind::Slc { enhancement } => write!(f, "SLC({enhancement})"),
            ModeKind::Custom => write!(f, "CUSTOM"),
        }
    }
}

impl FromStr for ModeKind {
    type Err = Error;

    /// Accepts `ISC`, `LC`, `MDC(2)`, `MDC:2`, `SLC(1)`, `SLC:1`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = match s.find(['(', ':']) {
            Some(i) => {
                let arg = s[i + 1..].trim_end_matches(')').trim();
                (&s[..i], Some(arg))
            }
            None => (s, None),
        };
        let param = |what: &str| -> Result<usize> {
            let arg = arg.ok_or_else(|| Error::InvalidMode(format!("{name} requires {what}")))?;
            arg.parse()
                .map_err(|_| Error::InvalidMode(format!("bad {what} {arg:?}")))
        };
        match name.trim().to_ascii_uppercase().as_str() {
            "ISC" => Ok(ModeKind::Isc),
            "LC" => Ok(ModeKind::Lc),
            "MDC" => Ok(ModeKind::Mdc {
                descriptions: param("N_d")?,
            }),
            "SLC" => Ok(ModeKind::Slc {
                enhancement: param("enhancement count")?,
            }),
            other => Err(Error::InvalidMode(format!("unknown mode {other:?}"))),
        }
    }
}

/// Why a dependency matrix is not a usable context mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Violation {
    /// `G[row][col]` is set on or above the diagonal.
    Recoverability { row: usize, col: usize },
    /// `slice` uses `via`, which uses `missing`, but `slice` does not use `missing`.
    Inheritance {
        slice: usize,
        via: usize,
        missing: usize,
    },
    /// Matrix is not `L × L`.
    Shape,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::Recoverability { row, col } => {
                write!(f, "recoverability at ({},{})", row + 1, col + 1)
            }
            Violation::Inheritance {
                slice,
                via,
                missing,
            } => write!(
                f,
                "inheritance at ({},{},{})",
                slice + 1,
                via + 1,
                missing + 1
            ),
            Violation::Shape => write!(f, "matrix is not square"),
        }
    }
}

impl std::error::Error for Violation {}

/// A dependency matrix over `L` slices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextMode {
    slices: usize,
    matrix: Vec<bool>,
    kind: ModeKind,
}

/// Predictor passes needed to decode every slice.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schedule {
    /// Slices without contexts; their all-mask prediction is cacheable.
    pub cached: Vec<usize>,
    /// `passes[d]` holds the slices at dependency depth `d + 1`.
    pub passes: Vec<Vec<usize>>,
}

impl Schedule {
    /// Predictor passes beyond the cached all-mask pass.
    pub fn pass_count(&self) -> usize {
        self.passes.len()
    }
}

/// Builds a preset mode.
pub fn make_mode(kind: ModeKind, slices: usize) -> Result<ContextMode> {
    if slices == 0 {
        return Err(Error::InvalidMode("slice count must be at least 1".into()));
    }
    let mut mode = ContextMode {
        slices,
        matrix: vec![false; slices * slices],
        kind,
    };
    match kind {
        ModeKind::Isc => {}
        ModeKind::Lc => {
            for l in 0..slices {
                for k in 0..l {
                    mode.set(l, k);
                }
            }
        }
        ModeKind::Mdc { descriptions } => {
            if descriptions == 0 || descriptions > slices {
                return Err(Error::InvalidMode(format!(
                    "MDC needs 1 <= N_d <= L, got N_d={descriptions}, L={slices}"
                )));
            }
            // Round-robin chains of depth floor(L / N_d). The L mod N_d
            // leftover slices join descriptions as siblings of each chain's
            // last slice so that no chain grows deeper than the full rounds.
            let depth = slices / descriptions;
            let full = depth * descriptions;
            for l in 0..slices {
                let (desc, level) = if l < full {
                    (l % descriptions, l / descriptions)
                } else {
                    (l - full, depth - 1)
                };
                for t in 0..level {
                    mode.set(l, desc + t * descriptions);
                }
            }
        }
        ModeKind::Slc { enhancement } => {
            if enhancement == 0 || enhancement >= slices {
                return Err(Error::InvalidMode(format!(
                    "SLC needs 1 <= E < L, got E={enhancement}, L={slices}"
                )));
            }
            // slice 0 is the base; the rest split into E contiguous layers
            let rest = slices - 1;
            let mut layer_of = vec![0usize; slices];
            let mut next = 1;
            for layer in 1..=enhancement {
                let size = rest / enhancement + usize::from(layer <= rest % enhancement);
                for slot in layer_of.iter_mut().skip(next).take(size) {
                    *slot = layer;
                }
                next += size;
            }
            for l in 1..slices {
                for k in 0..l {
                    if layer_of[k] < layer_of[l] {
                        mode.set(l, k);
                    }
                }
            }
        }
        ModeKind::Custom => {
            return Err(Error::InvalidMode(
                "custom modes are built with ContextMode::custom".into(),
            ))
        }
    }
    debug_assert!(mode.validate().is_ok());
    Ok(mode)
}

impl ContextMode {
    /// A validated user-supplied matrix; `rows[l][k]` nonzero means slice
    /// `l` conditions on slice `k`.
    pub fn custom(rows: &[Vec<u8>]) -> Result<Self> {
        let mode = ContextMode::unchecked(rows);
        match mode.validate() {
            Ok(()) => Ok(mode),
            Err(v) => Err(Error::InvalidMode(v.to_string())),
        }
    }

    /// Builds a matrix without validating it. Non-square input yields a mode
    /// that fails [`ContextMode::validate`] with [`Violation::Shape`].
    pub fn unchecked(rows: &[Vec<u8>]) -> Self {
        let slices = rows.len();
        let square = rows.iter().all(|r| r.len() == slices);
        let matrix = if square {
            rows.iter().flatten().map(|&v| v != 0).collect()
        } else {
            Vec::new()
        };
        ContextMode {
            slices,
            matrix,
            kind: ModeKind::Custom,
        }
    }

    fn set(&mut self, l: usize, k: usize) {
        self.matrix[l * self.slices + k] = true;
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    pub fn kind(&self) -> ModeKind {
        self.kind
    }

    pub fn mode_id(&self) -> u8 {
        self.kind.id()
    }

    pub fn default_beta(&self) -> f64 {
        self.kind.default_beta()
    }

    /// Whether slice `l` conditions on slice `k`.
    #[inline]
    pub fn depends(&self, l: usize, k: usize) -> bool {
        self.matrix[l * self.slices + k]
    }

    /// Context slices of `l`, ascending.
    pub fn contexts(&self, l: usize) -> Vec<usize> {
        (0..self.slices).filter(|&k| self.depends(l, k)).collect()
    }

    /// Row sums of the matrix.
    pub fn context_counts(&self) -> Vec<usize> {
        (0..self.slices).map(|l| self.contexts(l).len()).collect()
    }

    /// Checks strict lower triangularity, then transitive closure.
    pub fn validate(&self) -> Result<(), Violation> {
        let n = self.slices;
        if self.matrix.len() != n * n {
            return Err(Violation::Shape);
        }
        for row in 0..n {
            for col in row..n {
                if self.depends(row, col) {
                    return Err(Violation::Recoverability { row, col });
                }
            }
        }
        for slice in 0..n {
            for via in 0..slice {
                if !self.depends(slice, via) {
                    continue;
                }
                for missing in 0..via {
                    if self.depends(via, missing) && !self.depends(slice, missing) {
                        return Err(Violation::Inheritance {
                            slice,
                            via,
                            missing,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Dependency depth of every slice: 0 without contexts, otherwise one
    /// more than the deepest context.
    pub fn depths(&self) -> Vec<usize> {
        let mut depth = vec![0usize; self.slices];
        for l in 0..self.slices {
            depth[l] = self
                .contexts(l)
                .iter()
                .map(|&k| depth[k] + 1)
                .max()
                .unwrap_or(0);
        }
        depth
    }

    /// Groups slices by dependency depth. Slices at equal depth have all their
    /// contexts available after the previous pass and share one pass.
    pub fn iteration_schedule(&self) -> Schedule {
        let depth = self.depths();
        let max = depth.iter().copied().max().unwrap_or(0);
        let mut cached = Vec::new();
        let mut passes = vec![Vec::new(); max];
        for (l, &d) in depth.iter().enumerate() {
            if d == 0 {
                cached.push(l);
            } else {
                passes[d - 1].push(l);
            }
        }
        Schedule { cached, passes }
    }

    /// Renders the matrix as rows of `0`/`1`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for l in 0..self.slices {
            for k in 0..self.slices {
                out.push(if self.depends(l, k) { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(m: &ContextMode) -> Vec<String> {
        m.render().lines().map(str::to_owned).collect()
    }

    #[test]
    fn lc_three() {
        let m = make_mode(ModeKind::Lc, 3).unwrap();
        assert_eq!(rows(&m), ["000", "100", "110"]);
        assert_eq!(
            make_mode(ModeKind::Lc, 4).unwrap().context_counts(),
            [0, 1, 2, 3]
        );
    }

    #[test]
    fn isc_is_zero() {
        let m = make_mode(ModeKind::Isc, 6).unwrap();
        assert!(m.render().chars().all(|c| c != '1'));
        assert_eq!(m.context_counts(), [0; 6]);
    }

    #[test]
    fn mdc_two_of_four() {
        let m = make_mode(ModeKind::Mdc { descriptions: 2 }, 4).unwrap();
        // one-based G[3,1] and G[4,2]
        assert!(m.depends(2, 0));
        assert!(m.depends(3, 1));
        assert_eq!(m.context_counts(), [0, 0, 1, 1]);
    }

    #[test]
    fn mdc_two_of_ten_counts() {
        let m = make_mode(ModeKind::Mdc { descriptions: 2 }, 10).unwrap();
        assert_eq!(m.context_counts(), [0, 0, 1, 1, 2, 2, 3, 3, 4, 4]);
    }

    #[test]
    fn mdc_leftover_slices_stay_shallow() {
        let m = make_mode(ModeKind::Mdc { descriptions: 2 }, 5).unwrap();
        assert_eq!(m.depths(), [0, 0, 1, 1, 1]);
        assert_eq!(m.contexts(4), [0]);
    }

    #[test]
    fn slc_layers() {
        let m = make_mode(ModeKind::Slc { enhancement: 1 }, 5).unwrap();
        assert_eq!(m.context_counts(), [0, 1, 1, 1, 1]);
        let m = make_mode(ModeKind::Slc { enhancement: 2 }, 6).unwrap();
        assert_eq!(m.context_counts(), [0, 1, 1, 1, 4, 4]);
        assert_eq!(m.iteration_schedule().pass_count(), 2);
    }

    #[test]
    fn bad_params() {
        assert!(make_mode(ModeKind::Mdc { descriptions: 0 }, 4).is_err());
        assert!(make_mode(ModeKind::Mdc { descriptions: 5 }, 4).is_err());
        assert!(make_mode(ModeKind::Slc { enhancement: 0 }, 4).is_err());
        assert!(make_mode(ModeKind::Lc, 0).is_err());
    }

    #[test]
    fn validation_diagnoses() {
        let ok = ContextMode::unchecked(&[vec![0, 0, 0], vec![1, 0, 0], vec![1, 1, 0]]);
        assert_eq!(ok.validate(), Ok(()));

        let upper = ContextMode::unchecked(&[vec![0, 1], vec![0, 0]]);
        let v = upper.validate().unwrap_err();
        assert_eq!(v, Violation::Recoverability { row: 0, col: 1 });
        assert!(v.to_string().starts_with("recoverability"));

        let open = ContextMode::unchecked(&[vec![0, 0, 0], vec![1, 0, 0], vec![0, 1, 0]]);
        let v = open.validate().unwrap_err();
        assert_eq!(v.to_string(), "inheritance at (3,2,1)");

        let diag = ContextMode::unchecked(&[vec![1]]);
        assert!(matches!(
            diag.validate(),
            Err(Violation::Recoverability { .. })
        ));
        assert!(ContextMode::custom(&[vec![0, 1], vec![0, 0]]).is_err());
    }

    #[test]
    fn parse_kinds() {
        assert_eq!("lc".parse::<ModeKind>().unwrap(), ModeKind::Lc);
        assert_eq!(
            "MDC(4)".parse::<ModeKind>().unwrap(),
            ModeKind::Mdc { descriptions: 4 }
        );
        assert_eq!(
            "SLC:1".parse::<ModeKind>().unwrap(),
            ModeKind::Slc { enhancement: 1 }
        );
        assert!("MDC".parse::<ModeKind>().is_err());
        assert!("XYZ".parse::<ModeKind>().is_err());
    }

    #[test]
    fn presets_valid_and_closed_exhaustive() {
        for l in 1..=32 {
            let mut kinds = vec![ModeKind::Isc, ModeKind::Lc];
            kinds.extend((1..=l).map(|d| ModeKind::Mdc { descriptions: d }));
            kinds.extend((1..l).map(|e| ModeKind::Slc { enhancement: e }));
            for kind in kinds {
                let m = make_mode(kind, l).unwrap();
                assert_eq!(m.validate(), Ok(()), "{kind} L={l}");
                // boolean closure fixed point: G ∪ G·G == G
                for a in 0..l {
                    for c in 0..l {
                        let via = (0..l).any(|b| m.depends(a, b) && m.depends(b, c));
                        assert!(!via || m.depends(a, c));
                    }
                }
                // schedule respects dependencies
                let sched = m.iteration_schedule();
                let mut pass_of = vec![0usize; l];
                for (p, group) in sched.passes.iter().enumerate() {
                    for &s in group {
                        pass_of[s] = p + 1;
                    }
                }
                for a in 0..l {
                    for c in m.contexts(a) {
                        assert!(pass_of[c] < pass_of[a]);
                    }
                }
            }
        }
    }
}
