//! Subcommand definitions and handlers.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use resicomp::context_modes::{make_mode, ModeKind};
use resicomp::corpus;
use resicomp::image::Image;
use resicomp::partition::{beta_to_milli, splitmix64};
use resicomp::pipeline::{evaluate, run_episode, PipelineConfig, Protection, Session, CSV_HEADER};
use resicomp::predictor::PriorModel;
use resicomp::token_codec::{analyze, CodecConfig};
use resicomp::transport::{format_traces, parse_traces, sample_trace, LossTrace, Packet};

use crate::config::{build_mode, channel, parse_config, parse_matrix, parse_mode, ImageSource};
use crate::error::{CliError, CliResult};
use crate::load_prior;
use crate::session_file::{SessionFile, FILE_NAME};
use crate::sweep::{load_images, run_sweep, write_results};

#[derive(Parser, Debug)]
#[command(
    name = "resicomp",
    version,
    about = "Loss-resilient slice-based image codec"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Encode one image into per-slice packet files.
    Encode(EncodeArgs),
    /// Decode a packet directory, optionally dropping packets per a trace.
    Decode(DecodeArgs),
    /// Sample loss traces from a channel preset.
    Trace(TraceArgs),
    /// Run one send/lose/receive episode and print its CSV row.
    Simulate(SimulateArgs),
    /// Run a configured sweep and write the episode and summary CSVs.
    Sweep(SweepArgs),
    /// Print preset context matrices and their schedules.
    Modes(ModesArgs),
    /// Fit a predictor prior on images and write the model file.
    FitPrior(FitPriorArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CodecArgs {
    /// Quantizer step scale.
    #[arg(long)]
    pub quality: Option<f64>,
    /// Token clamp bound.
    #[arg(long)]
    pub clamp: Option<i32>,
    /// Coefficients kept per token.
    #[arg(long)]
    pub channels: Option<usize>,
}

impl CodecArgs {
    fn codec(&self) -> CliResult<CodecConfig> {
        let mut c = CodecConfig::default();
        if let Some(q) = self.quality {
            c.quality = q;
        }
        if let Some(v) = self.clamp {
            c.clamp = v;
        }
        if let Some(v) = self.channels {
            c.channels = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args, Debug, Clone)]
pub struct SchemeArgs {
    /// ISC, LC, MDC, MDC(2), SLC, SLC(1) or CUSTOM.
    #[arg(long, default_value = "LC")]
    pub mode: String,
    /// Description count for bare MDC.
    #[arg(long)]
    pub nd: Option<usize>,
    /// Enhancement layer count for bare SLC.
    #[arg(long)]
    pub enhancement: Option<usize>,
    /// Context matrix for CUSTOM, rows separated by `;`, e.g. `000;100;110`.
    #[arg(long)]
    pub matrix: Option<String>,
    /// Slice count.
    #[arg(long = "L", default_value_t = 10)]
    pub slices: usize,
    /// Slice-size exponent; defaults to the mode's own.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Traversal seed.
    #[arg(long, default_value_t = 0)]
    pub plan_seed: u64,
    #[command(flatten)]
    pub codec: CodecArgs,
}

impl SchemeArgs {
    fn config(&self) -> CliResult<PipelineConfig> {
        let kind = parse_mode(&self.mode, self.nd, self.enhancement)?;
        let matrix = self.matrix.as_deref().map(parse_matrix).transpose()?;
        let mut config =
            PipelineConfig::with_mode(build_mode(kind, self.slices, matrix.as_deref())?);
        if let Some(b) = self.beta {
            config.beta_milli =
                beta_to_milli(b).map_err(|e| CliError::Validation(format!("beta: {e}")))?;
        }
        config.plan_seed = self.plan_seed;
        config.codec = self.codec.codec()?;
        Ok(config)
    }
}

#[derive(Args, Debug, Clone)]
#[group(required = false, multiple = false)]
pub struct ImageArgs {
    /// PGM/PPM file to encode.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Synthetic corpus image index.
    #[arg(long)]
    pub corpus_index: Option<u64>,
}

impl ImageArgs {
    /// The image and its default id. Defaults to corpus image 0.
    fn load(&self) -> CliResult<(Image, u64)> {
        match &self.input {
            Some(path) => Ok((read_image(path)?, 0)),
            None => {
                let i = self.corpus_index.unwrap_or(0);
                Ok((corpus::image(i, corpus::HEIGHT, corpus::WIDTH), i))
            }
        }
    }
}

fn read_image(path: &Path) -> CliResult<Image> {
    Image::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[command(flatten)]
    pub image: ImageArgs,
    /// Output directory for packets and session.json.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub scheme: SchemeArgs,
    /// Image id written into packet headers.
    #[arg(long)]
    pub image_id: Option<u64>,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    /// Directory written by `encode`.
    #[arg(long)]
    pub packets: PathBuf,
    /// Trace file; packet `i` is dropped when flag `i` of the episode is 0.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Trace line to use.
    #[arg(long, default_value_t = 0)]
    pub episode: usize,
    /// Reconstructed image path (PGM/PPM).
    #[arg(long)]
    pub out: PathBuf,
    /// Original image, for PSNR.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TraceArgs {
    /// EP1..EP6 or iid:<eps>.
    #[arg(long)]
    pub preset: String,
    /// Packets per episode.
    #[arg(short = 'n', long = "packets", default_value_t = 1000)]
    pub packets: usize,
    #[arg(long, default_value_t = 1)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trace file; one line of 0/1 flags per episode.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scheme: SchemeArgs,
    #[command(flatten)]
    pub image: ImageArgs,
    /// EP1..EP6 or iid:<eps>.
    #[arg(long, default_value = "EP1")]
    pub preset: String,
    /// Trace seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Add this many parity packets (ideal erasure code).
    #[arg(long, conflicts_with = "protect")]
    pub fec: Option<usize>,
    /// Comma-separated slices sent twice.
    #[arg(long, value_delimiter = ',')]
    pub protect: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Sweep config file; all keys default when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set L=4,10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Episode CSV path; overrides `output`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ModesArgs {
    #[arg(long = "L", default_value_t = 10)]
    pub slices: usize,
    /// Only this mode; all presets otherwise.
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Args, Debug)]
pub struct FitPriorArgs {
    /// `corpus:N` or a directory of PGM/PPM files.
    #[arg(long)]
    pub images: String,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub codec: CodecArgs,
}

pub fn dispatch(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Encode(a) => encode(a, out),
        Command::Decode(a) => decode(a, out),
        Command::Trace(a) => trace(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::Sweep(a) => sweep(a, out),
        Command::Modes(a) => modes(a, out),
        Command::FitPrior(a) => fit_prior(a, out),
    }
}

fn session(config: PipelineConfig) -> CliResult<Session> {
    let prior = load_prior(&config.codec)?;
    Ok(Session::new(config, prior)?)
}

fn encode(a: EncodeArgs, out: &mut dyn Write) -> CliResult<()> {
    let (image, default_id) = a.image.load()?;
    let mut config = a.scheme.config()?;
    config.image_id = a.image_id.unwrap_or(default_id);
    let s = session(config)?;
    let tx = s.send(&image)?;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let file = SessionFile::new(s.config(), tx.geometry);
    for (p, name) in tx.packets.iter().zip(&file.packets) {
        let path = a.out.join(name);
        fs::write(&path, p.to_bytes()).map_err(io_err(&path))?;
    }
    file.write(&a.out.join(FILE_NAME))?;
    let bits: usize = tx.packets.iter().map(Packet::payload_bits).sum();
    let pixels = (image.height() * image.width()) as f64;
    writeln!(
        out,
        "packets={} bits_payload={} bpp={:.6} dir={}",
        tx.packets.len(),
        bits,
        bits as f64 / pixels,
        a.out.display()
    )?;
    Ok(())
}

fn decode(a: DecodeArgs, out: &mut dyn Write) -> CliResult<()> {
    let file = SessionFile::read(&a.packets.join(FILE_NAME))?;
    let config = file.config()?;
    let slices = config.slices();
    let trace = match &a.trace {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            let traces = parse_traces(&text)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let t = traces.into_iter().nth(a.episode).ok_or_else(|| {
                CliError::Validation(format!("episode: trace file has no episode {}", a.episode))
            })?;
            if t.len() < slices {
                return Err(CliError::Validation(format!(
                    "trace: episode {} has {} flags, need {slices}",
                    a.episode,
                    t.len()
                )));
            }
            t
        }
        None => LossTrace::all_received(slices),
    };
    let mut delivered = Vec::new();
    let mut sent = Vec::new();
    for (i, name) in file.packets.iter().enumerate() {
        let path = a.packets.join(name);
        // a missing or unreadable packet file is a lost packet
        let Ok(bytes) = fs::read(&path) else { continue };
        let Ok(packet) = Packet::from_bytes(&bytes) else {
            continue;
        };
        sent.push(packet.clone());
        if trace.flags[i] {
            delivered.push(packet);
        }
    }
    let s = session(config)?;
    let rx = s.receive(file.geometry(), &delivered)?;
    rx.image
        .write(&a.out)
        .map_err(|e| CliError::Io(format!("{}: {e}", a.out.display())))?;
    let decoded = rx.decoded.iter().filter(|&&d| d).count();
    let bits_payload: usize = sent.iter().map(Packet::payload_bits).sum();
    let bpp = bits_payload as f64 / (file.height * file.width) as f64;
    write!(
        out,
        "outcome={} slices_decoded={decoded}/{slices} bits_payload={bits_payload} bpp={bpp:.6}",
        rx.outcome
    )?;
    if let Some(path) = &a.reference {
        let reference = read_image(path)?;
        if (reference.height(), reference.width(), reference.planes())
            != (file.height, file.width, file.planes)
        {
            return Err(CliError::Validation(
                "reference: dimensions differ from the encoded image".into(),
            ));
        }
        let m = evaluate(&reference, &rx.image, rx.outcome, &sent);
        write!(out, " psnr_db={:.4}", m.psnr_db)?;
    }
    writeln!(out)?;
    Ok(())
}

fn trace(a: TraceArgs, out: &mut dyn Write) -> CliResult<()> {
    let ch = channel(&a.preset)
        .map_err(|e| CliError::Validation(e.to_string().replacen("presets", "preset", 1)))?;
    if a.packets == 0 || a.episodes == 0 {
        return Err(CliError::Validation(
            "packets and episodes must be at least 1".into(),
        ));
    }
    let traces: Vec<LossTrace> = (0..a.episodes as u64)
        .map(|e| sample_trace(&ch.model, a.packets, splitmix64(a.seed ^ splitmix64(e))))
        .collect();
    fs::write(&a.out, format_traces(&traces)).map_err(io_err(&a.out))?;
    let all = LossTrace {
        flags: traces
            .iter()
            .flat_map(|t| t.flags.iter().copied())
            .collect(),
    };
    writeln!(
        out,
        "preset={} packets={} eps={:.6} gamma={:.4} eps_target={}",
        ch.name,
        all.len(),
        all.loss_rate(),
        all.mean_burst(),
        ch.eps_target
    )?;
    Ok(())
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> CliResult<()> {
    let (image, id) = a.image.load()?;
    let mut config = a.scheme.config()?;
    config.image_id = id;
    let ch = channel(&a.preset)
        .map_err(|e| CliError::Validation(e.to_string().replacen("presets", "preset", 1)))?;
    let protection = match (a.fec, a.protect) {
        (Some(parity), _) => Protection::Fec { parity },
        (None, Some(protected)) => {
            if let Some(bad) = protected.iter().find(|&&p| p >= config.slices()) {
                return Err(CliError::Validation(format!(
                    "protect: slice {bad} out of range"
                )));
            }
            Protection::Uep { protected }
        }
        (None, None) => Protection::None,
    };
    let s = session(config)?;
    let ep = run_episode(&s, &image, id, &ch, a.seed, &protection)?;
    writeln!(out, "{CSV_HEADER}")?;
    writeln!(out, "{}", ep.csv_row())?;
    Ok(())
}

fn sweep(a: SweepArgs, out: &mut dyn Write) -> CliResult<()> {
    let text = match &a.config {
        Some(path) => fs::read_to_string(path).map_err(io_err(path))?,
        None => String::new(),
    };
    let overrides = a
        .set
        .iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut spec = parse_config(&text, &overrides)?;
    if let Some(path) = a.out {
        spec.output = path;
    }
    let jobs = a
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let result = run_sweep(&spec, jobs)?;
    let summary = write_results(&result, &spec.output)?;
    writeln!(
        out,
        "{:<8} {:<24} {:>8} {:>12} {:>13}",
        "preset", "scheme", "episodes", "mean_psnr_db", "failure_ratio"
    )?;
    for r in &result.summary {
        writeln!(
            out,
            "{:<8} {:<24} {:>8} {:>12.3} {:>13.4}",
            r.preset, r.scheme, r.episodes, r.mean_psnr_db, r.failure_ratio
        )?;
    }
    writeln!(
        out,
        "wrote {} episodes to {} and summary to {}",
        result.episodes.len(),
        spec.output.display(),
        summary.display()
    )?;
    Ok(())
}

fn modes(a: ModesArgs, out: &mut dyn Write) -> CliResult<()> {
    let kinds = match &a.mode {
        Some(m) => vec![parse_mode(m, None, None)?],
        None => vec![
            ModeKind::Isc,
            ModeKind::Lc,
            ModeKind::Mdc { descriptions: 2 },
            ModeKind::Mdc { descriptions: 4 },
            ModeKind::Slc { enhancement: 1 },
        ],
    };
    for kind in kinds {
        if kind == ModeKind::Custom {
            return Err(CliError::Validation(
                "mode: CUSTOM has no preset matrix".into(),
            ));
        }
        let mode = match make_mode(kind, a.slices) {
            Ok(m) => m,
            Err(e) => {
                writeln!(out, "{kind} L={}: {e}\n", a.slices)?;
                continue;
            }
        };
        let schedule = mode.iteration_schedule();
        let counts: Vec<String> = mode
            .context_counts()
            .iter()
            .map(|c| c.to_string())
            .collect();
        writeln!(
            out,
            "{kind} L={} beta={} K_t={} contexts=[{}]",
            a.slices,
            mode.default_beta(),
            schedule.pass_count(),
            counts.join(",")
        )?;
        write!(out, "{}", mode.render())?;
        writeln!(out)?;
    }
    Ok(())
}

fn fit_prior(a: FitPriorArgs, out: &mut dyn Write) -> CliResult<()> {
    let codec = a.codec.codec()?;
    let source = match a.images.strip_prefix("corpus:") {
        Some(n) => ImageSource::Corpus(
            n.parse()
                .map_err(|_| CliError::Validation(format!("images: bad corpus count {n:?}")))?,
        ),
        None => ImageSource::Dir(PathBuf::from(&a.images)),
    };
    let images = load_images(&source)?;
    let grids: Vec<_> = images.iter().map(|(_, img)| analyze(img, &codec)).collect();
    let prior = PriorModel::fit(&grids)?;
    prior
        .save(&a.out)
        .map_err(|e| CliError::Io(format!("{}: {e}", a.out.display())))?;
    writeln!(
        out,
        "fitted {} channels on {} images, wrote {}",
        prior.channels(),
        images.len(),
        a.out.display()
    )?;
    Ok(())
}
