//! Sweep configuration: flat `key = value` text with optional `[section]`
//! headers. Every key belongs to one section and may also appear before the
//! first header. `#` starts a comment. Unknown sections or keys, duplicate
//! keys and malformed lines are rejected with their line number.
//!
//! ```text
//! [input]
//! images = corpus:10          # or a directory of .pgm/.ppm files
//! [codec]
//! quality = 40
//! clamp = 127
//! channels = 64
//! [scheme]
//! mode = LC, ISC, MDC         # bare MDC takes N_d, bare SLC takes E
//! N_d = 2
//! L = 10                      # list allowed
//! beta = 1.0                  # default: per mode
//! fec = 7:3, 8:2              # N_k:N_r pairs, LC with L = N_k
//! uep = 0                     # slices given a backup copy
//! [channel]
//! presets = EP1, EP3, EP5, iid:0.1
//! [run]
//! repetitions = 5
//! seed = 1
//! output = sweep.csv
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use resicomp::context_modes::{make_mode, ContextMode, ModeKind};
use resicomp::partition::beta_to_milli;
use resicomp::pipeline::{Channel, PipelineConfig, Protection, MAX_SLICES};
use resicomp::token_codec::CodecConfig;
use resicomp::transport::PRESETS;

use crate::error::{CliError, CliResult};

const KEYS: &[(&str, &str)] = &[
    ("images", "input"),
    ("quality", "codec"),
    ("clamp", "codec"),
    ("channels", "codec"),
    ("mode", "scheme"),
    ("modes", "scheme"),
    ("N_d", "scheme"),
    ("E", "scheme"),
    ("matrix", "scheme"),
    ("L", "scheme"),
    ("beta", "scheme"),
    ("plan_seed", "scheme"),
    ("fec", "scheme"),
    ("uep", "scheme"),
    ("presets", "channel"),
    ("repetitions", "run"),
    ("seed", "run"),
    ("output", "run"),
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ImageSource {
    /// The first `n` synthetic corpus images.
    Corpus(usize),
    /// Every `.pgm`/`.ppm` file in a directory, sorted by name.
    Dir(PathBuf),
}

/// One coding scheme compared in a sweep.
#[derive(Clone, Debug)]
pub struct Scheme {
    pub label: String,
    pub config: PipelineConfig,
    pub protection: Protection,
}

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub images: ImageSource,
    pub codec: CodecConfig,
    pub modes: Vec<ModeKind>,
    pub matrix: Option<Vec<Vec<u8>>>,
    pub slices: Vec<usize>,
    pub beta: Option<f64>,
    pub plan_seed: u64,
    pub fec: Vec<(usize, usize)>,
    pub uep: Vec<usize>,
    pub presets: Vec<String>,
    pub repetitions: usize,
    pub seed: u64,
    pub output: PathBuf,
}

#[derive(Default)]
struct Raw {
    values: BTreeMap<&'static str, (String, usize)>,
}

fn canonical(key: &str) -> Option<(&'static str, &'static str)> {
    KEYS.iter().copied().find(|(k, _)| *k == key).map(|(k, s)| {
        if k == "modes" {
            ("mode", s)
        } else {
            (k, s)
        }
    })
}

fn parse_error(line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("line {line}: {msg}"))
}

fn semantic(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{key}: {msg}"))
}

fn parse_raw(text: &str) -> CliResult<Raw> {
    let mut raw = Raw::default();
    let mut section: Option<String> = None;
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| parse_error(n, "unterminated section header"))?
                .trim();
            if !KEYS.iter().any(|(_, s)| *s == name) {
                return Err(parse_error(n, format!("unknown section [{name}]")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_error(n, "expected `key = value`"))?;
        let key = key.trim();
        let (canon, home) =
            canonical(key).ok_or_else(|| parse_error(n, format!("unknown key `{key}`")))?;
        if let Some(s) = &section {
            if s != home {
                return Err(parse_error(
                    n,
                    format!("key `{key}` belongs in [{home}], not [{s}]"),
                ));
            }
        }
        if raw
            .values
            .insert(canon, (value.trim().to_string(), n))
            .is_some()
        {
            return Err(parse_error(n, format!("duplicate key `{key}`")));
        }
    }
    Ok(raw)
}

fn list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn number<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .trim()
        .parse()
        .map_err(|_| semantic(key, format!("cannot parse {value:?}")))
}

/// Parses `rows` written as `000;100;110`.
pub fn parse_matrix(text: &str) -> CliResult<Vec<Vec<u8>>> {
    text.split(';')
        .map(|row| {
            row.trim()
                .chars()
                .map(|c| match c {
                    '0' => Ok(0),
                    '1' => Ok(1),
                    other => Err(semantic(
                        "matrix",
                        format!("unexpected character {other:?}"),
                    )),
                })
                .collect()
        })
        .collect()
}

/// Parses one mode entry. Bare `MDC`/`SLC` take their parameter from
/// `n_d`/`e`, naming the missing key otherwise.
pub fn parse_mode(entry: &str, n_d: Option<usize>, e: Option<usize>) -> CliResult<ModeKind> {
    match entry.trim().to_ascii_uppercase().as_str() {
        "MDC" => n_d
            .map(|d| ModeKind::Mdc { descriptions: d })
            .ok_or_else(|| semantic("N_d", "required when mode MDC is selected")),
        "SLC" => e
            .map(|e| ModeKind::Slc { enhancement: e })
            .ok_or_else(|| semantic("E", "required when mode SLC is selected")),
        "CUSTOM" => Ok(ModeKind::Custom),
        _ => entry
            .parse()
            .map_err(|err: resicomp::Error| semantic("mode", err)),
    }
}

/// Resolves a loss-channel name: `EP1`..`EP6` or `iid:<eps>`.
pub fn channel(name: &str) -> CliResult<Channel> {
    let lower = name.trim().to_ascii_lowercase();
    if let Some(eps) = lower.strip_prefix("iid:") {
        let eps: f64 = number("presets", eps)?;
        return Channel::iid(eps).map_err(|e| semantic("presets", e));
    }
    if PRESETS
        .iter()
        .any(|p| p.name.eq_ignore_ascii_case(name.trim()))
    {
        return Channel::preset(name).map_err(|e| semantic("presets", e));
    }
    Err(semantic("presets", format!("unknown preset {name:?}")))
}

/// Builds a context mode, using `matrix` for `CUSTOM`.
pub fn build_mode(
    kind: ModeKind,
    slices: usize,
    matrix: Option<&[Vec<u8>]>,
) -> CliResult<ContextMode> {
    if slices == 0 || slices > MAX_SLICES {
        return Err(semantic(
            "L",
            format!("must be in 1..={MAX_SLICES}, got {slices}"),
        ));
    }
    match kind {
        ModeKind::Custom => {
            let rows = matrix
                .ok_or_else(|| semantic("matrix", "required when mode CUSTOM is selected"))?;
            if rows.len() != slices {
                return Err(semantic(
                    "matrix",
                    format!("has {} rows but L = {slices}", rows.len()),
                ));
            }
            ContextMode::custom(rows).map_err(|e| semantic("matrix", e))
        }
        ModeKind::Mdc { .. } => {
            make_mode(kind, slices).map_err(|e| semantic("N_d", format!("{e} (L = {slices})")))
        }
        ModeKind::Slc { .. } => {
            make_mode(kind, slices).map_err(|e| semantic("E", format!("{e} (L = {slices})")))
        }
        _ => make_mode(kind, slices).map_err(|e| semantic("mode", e)),
    }
}

/// Parses and validates a sweep config. `overrides` are `(key, value)`
/// pairs applied on top of the file, as from `--set key=value`.
pub fn parse_config(text: &str, overrides: &[(String, String)]) -> CliResult<SweepSpec> {
    let mut raw = parse_raw(text)?;
    for (key, value) in overrides {
        let (canon, _) = canonical(key.trim())
            .ok_or_else(|| CliError::Usage(format!("--set: unknown key `{key}`")))?;
        raw.values.insert(canon, (value.trim().to_string(), 0));
    }
    let get = |k: &str| raw.values.get(k).map(|(v, _)| v.as_str());

    let images = match get("images").unwrap_or("corpus:10") {
        v if v.starts_with("corpus:") => ImageSource::Corpus(number("images", &v[7..])?),
        v => ImageSource::Dir(PathBuf::from(v)),
    };
    if images == ImageSource::Corpus(0) {
        return Err(semantic("images", "corpus count must be at least 1"));
    }

    let mut codec = CodecConfig::default();
    if let Some(v) = get("quality") {
        codec.quality = number("quality", v)?;
    }
    if let Some(v) = get("clamp") {
        codec.clamp = number("clamp", v)?;
    }
    if let Some(v) = get("channels") {
        codec.channels = number("channels", v)?;
    }
    codec.validate().map_err(|e| semantic("codec", e))?;

    let n_d = get("N_d").map(|v| number::<usize>("N_d", v)).transpose()?;
    let e = get("E").map(|v| number::<usize>("E", v)).transpose()?;
    let modes = list(get("mode").unwrap_or("LC"))
        .iter()
        .map(|m| parse_mode(m, n_d, e))
        .collect::<CliResult<Vec<_>>>()?;
    if modes.is_empty() {
        return Err(semantic("mode", "at least one mode is required"));
    }
    let matrix = get("matrix").map(parse_matrix).transpose()?;

    let slices = list(get("L").unwrap_or("10"))
        .iter()
        .map(|v| number::<usize>("L", v))
        .collect::<CliResult<Vec<_>>>()?;
    if slices.is_empty() {
        return Err(semantic("L", "at least one value is required"));
    }
    let beta = get("beta").map(|v| number::<f64>("beta", v)).transpose()?;
    if let Some(b) = beta {
        beta_to_milli(b).map_err(|e| semantic("beta", e))?;
    }
    let plan_seed = get("plan_seed")
        .map(|v| number("plan_seed", v))
        .transpose()?
        .unwrap_or(0);

    let fec = list(get("fec").unwrap_or(""))
        .iter()
        .map(|pair| {
            let (k, r) = pair
                .split_once(':')
                .ok_or_else(|| semantic("fec", format!("expected N_k:N_r, got {pair:?}")))?;
            let k: usize = number("fec", k)?;
            let r: usize = number("fec", r)?;
            if k == 0 || k > MAX_SLICES {
                return Err(semantic("fec", format!("N_k must be in 1..={MAX_SLICES}")));
            }
            Ok((k, r))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let uep = list(get("uep").unwrap_or(""))
        .iter()
        .map(|v| number::<usize>("uep", v))
        .collect::<CliResult<Vec<_>>>()?;

    let presets = list(get("presets").unwrap_or("EP1,EP2,EP3,EP4,EP5,EP6"));
    if presets.is_empty() {
        return Err(semantic("presets", "at least one preset is required"));
    }
    for p in &presets {
        channel(p)?;
    }

    let repetitions: usize = get("repetitions")
        .map(|v| number("repetitions", v))
        .transpose()?
        .unwrap_or(1);
    if repetitions == 0 {
        return Err(semantic("repetitions", "must be at least 1"));
    }
    let seed = get("seed")
        .map(|v| number("seed", v))
        .transpose()?
        .unwrap_or(0);
    let output = PathBuf::from(get("output").unwrap_or("sweep.csv"));

    let spec = SweepSpec {
        images,
        codec,
        modes,
        matrix,
        slices,
        beta,
        plan_seed,
        fec,
        uep,
        presets,
        repetitions,
        seed,
        output,
    };
    spec.schemes()?;
    Ok(spec)
}

impl SweepSpec {
    /// Every (mode, L) pair, its UEP variant when `uep` is set, then the FEC
    /// baselines.
    pub fn schemes(&self) -> CliResult<Vec<Scheme>> {
        let mut out = Vec::new();
        for &kind in &self.modes {
            for &slices in &self.slices {
                let mode = build_mode(kind, slices, self.matrix.as_deref())?;
                let mut config = PipelineConfig::with_mode(mode);
                config.codec = self.codec;
                config.plan_seed = self.plan_seed;
                if let Some(b) = self.beta {
                    config.beta_milli = beta_to_milli(b).map_err(|e| semantic("beta", e))?;
                }
                let base = format!("{kind}/L{slices}");
                out.push(Scheme {
                    label: base.clone(),
                    config: config.clone(),
                    protection: Protection::None,
                });
                if !self.uep.is_empty() {
                    if let Some(&bad) = self.uep.iter().find(|&&s| s >= slices) {
                        return Err(semantic(
                            "uep",
                            format!("slice {bad} out of range for L = {slices}"),
                        ));
                    }
                    out.push(Scheme {
                        label: format!("{base}+UEP"),
                        config,
                        protection: Protection::Uep {
                            protected: self.uep.clone(),
                        },
                    });
                }
            }
        }
        for &(k, r) in &self.fec {
            let mut config = PipelineConfig::with_mode(
                make_mode(ModeKind::Lc, k).map_err(|e| semantic("fec", e))?,
            );
            config.codec = self.codec;
            config.plan_seed = self.plan_seed;
            out.push(Scheme {
                label: format!("LC/L{k}+FEC({k}:{r})"),
                config,
                protection: Protection::Fec { parity: r },
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn err(text: &str) -> String {
        parse_config(text, &[]).unwrap_err().to_string()
    }

    #[test]
    fn defaults() {
        let spec = parse_config("", &[]).unwrap();
        assert_eq!(spec.slices, vec![10]);
        assert_eq!(spec.modes, vec![ModeKind::Lc]);
        assert_eq!(spec.beta, None);
        let schemes = spec.schemes().unwrap();
        assert_eq!(schemes.len(), 1);
        assert_eq!(schemes[0].config.beta_milli, 1000);
        assert_eq!(spec.repetitions, 1);
        assert_eq!(spec.presets.len(), 6);
    }

    #[test]
    fn sections_and_lists() {
        let spec = parse_config(
            "# sweep\n[scheme]\nmode = LC, MDC, ISC\nN_d = 2\nL = 4, 10\nfec = 7:3\n[channel]\npresets = EP3, iid:0.2\n[run]\nrepetitions = 3\n",
            &[],
        )
        .unwrap();
        assert_eq!(
            spec.modes,
            vec![
                ModeKind::Lc,
                ModeKind::Mdc { descriptions: 2 },
                ModeKind::Isc
            ]
        );
        let schemes = spec.schemes().unwrap();
        assert_eq!(schemes.len(), 7);
        assert_eq!(schemes[1].config.beta_milli, 1000);
        assert_eq!(schemes[2].config.beta_milli, 500);
        assert_eq!(schemes[6].label, "LC/L7+FEC(7:3)");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        assert_eq!(err("L = 4\nbogus"), "line 2: expected `key = value`");
        assert_eq!(err("\n\nspeed = 3"), "line 3: unknown key `speed`");
        assert_eq!(err("[nope]"), "line 1: unknown section [nope]");
        assert_eq!(err("L = 4\nL = 5"), "line 2: duplicate key `L`");
        assert!(err("[run]\nL = 4").starts_with("line 2: key `L` belongs in [scheme]"));
    }

    #[test]
    fn semantic_errors_name_the_key() {
        assert_eq!(err("repetitions = 0"), "repetitions: must be at least 1");
        assert!(err("mode = MDC").starts_with("N_d:"));
        assert!(err("mode = SLC").starts_with("E:"));
        assert!(err("mode = MDC\nN_d = 20\nL = 4").starts_with("N_d:"));
        assert!(err("presets = EP9").starts_with("presets:"));
        assert!(err("mode = CUSTOM\nL = 3").starts_with("matrix:"));
        assert!(err("mode = CUSTOM\nL = 3\nmatrix = 000;001;000").starts_with("matrix:"));
        assert!(err("uep = 12").starts_with("uep:"));
        assert!(err("quality = -1").starts_with("codec:"));
        assert!(err("L = 0").starts_with("L:"));
    }

    #[test]
    fn overrides() {
        let spec = parse_config(
            "L = 4",
            &[("L".into(), "6".into()), ("mode".into(), "ISC".into())],
        )
        .unwrap();
        assert_eq!(spec.slices, vec![6]);
        assert_eq!(spec.modes, vec![ModeKind::Isc]);
        let e = parse_config("", &[("nope".into(), "1".into())]).unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn custom_matrix() {
        let spec = parse_config("mode = CUSTOM\nL = 3\nmatrix = 000;100;110", &[]).unwrap();
        let schemes = spec.schemes().unwrap();
        assert_eq!(schemes[0].config.mode.kind(), ModeKind::Custom);
        assert!(schemes[0].config.mode.depends(2, 0));
    }
}
