//! Sender, receiver, metrics, training-objective evaluation and simulated
//! episodes.

use std::fmt;
use std::sync::OnceLock;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::context_modes::{make_mode, ContextMode, ModeKind};
use crate::density::{discretize, to_freq_table, FreqTable};
use crate::entropy_coder::{Bitstring, RangeDecoder, RangeEncoder};
use crate::error::{Error, Result};
use crate::image::{mse, psnr, Image};
use crate::partition::{beta_to_milli, build_plan_with_beta, SlicePlan};
use crate::predictor::{collect_context, conceal, predict, predict_at, PriorModel};
use crate::token_codec::{analyze, synthesize, CodecConfig, Geometry, Position, TokenGrid};
use crate::transport::{
    apply_loss, fec_channel, received_slices, sample_trace, uep_backup, LossModel, LossTrace,
    Packet, PacketHeader, VERSION,
};

/// PSNR reported for an episode in which no slice could be decoded.
pub const FAILED_PSNR_DB: f64 = 13.0;

/// Largest slice count the one-byte header fields can carry.
pub const MAX_SLICES: usize = 255;

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub codec: CodecConfig,
    pub mode: ContextMode,
    pub beta_milli: u16,
    pub plan_seed: u64,
    pub image_id: u64,
}

impl PipelineConfig {
    /// Preset mode with default codec settings, the mode's default exponent
    /// and plan seed 0.
    pub fn new(kind: ModeKind, slices: usize) -> Result<Self> {
        let mode = make_mode(kind, slices)?;
        Ok(PipelineConfig::with_mode(mode))
    }

    pub fn with_mode(mode: ContextMode) -> Self {
        let beta_milli = beta_to_milli(mode.default_beta()).expect("preset exponents are in range");
        PipelineConfig {
            codec: CodecConfig::default(),
            mode,
            beta_milli,
            plan_seed: 0,
            image_id: 0,
        }
    }

    pub fn slices(&self) -> usize {
        self.mode.slices()
    }

    pub fn beta(&self) -> f64 {
        self.beta_milli as f64 / 1000.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Lossless,
    Concealed,
    Failed,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Lossless => "lossless",
            Outcome::Concealed => "concealed",
            Outcome::Failed => "failed",
        })
    }
}

/// What the sender produced for one image.
#[derive(Clone, Debug)]
pub struct Transmission {
    pub packets: Vec<Packet>,
    pub geometry: Geometry,
    pub tokens: TokenGrid,
    pub plan: SlicePlan,
}

/// What the receiver reconstructed.
#[derive(Clone, Debug)]
pub struct Reception {
    pub tokens: TokenGrid,
    pub image: Image,
    pub outcome: Outcome,
    /// Slices with at least one intact packet.
    pub received: Vec<bool>,
    /// Slices that were entropy decoded.
    pub decoded: Vec<bool>,
    /// Context-conditioned predictor passes, plus one if concealment ran.
    pub predictor_passes: usize,
}

enum Tables {
    Prior,
    Predicted(Vec<FreqTable>),
}

/// A configured codec instance: config, predictor prior and the cached
/// all-mask tables.
pub struct Session {
    config: PipelineConfig,
    prior: PriorModel,
    prior_tables: Vec<FreqTable>,
}

fn builtin_default_prior() -> &'static PriorModel {
    static PRIOR: OnceLock<PriorModel> = OnceLock::new();
    PRIOR.get_or_init(|| PriorModel::builtin(&CodecConfig::default()))
}

impl Session {
    pub fn new(config: PipelineConfig, prior: PriorModel) -> Result<Self> {
        config.codec.validate()?;
        if prior.channels() != config.codec.channels {
            return Err(Error::InvalidConfig(format!(
                "prior has {} channels, codec has {}",
                prior.channels(),
                config.codec.channels
            )));
        }
        if config.slices() > MAX_SLICES {
            return Err(Error::InvalidConfig(format!("at most {MAX_SLICES} slices")));
        }
        let clamp = config.codec.clamp;
        let prior_tables = (0..prior.channels())
            .map(|c| to_freq_table(&discretize(&prior.fallback(c), clamp)))
            .collect();
        Ok(Session {
            config,
            prior,
            prior_tables,
        })
    }

    /// Session using the prior fitted on the synthetic corpus.
    pub fn with_builtin_prior(config: PipelineConfig) -> Result<Self> {
        let prior = if config.codec == CodecConfig::default() {
            builtin_default_prior().clone()
        } else {
            config.codec.validate()?;
            PriorModel::builtin(&config.codec)
        };
        Session::new(config, prior)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn prior(&self) -> &PriorModel {
        &self.prior
    }

    pub fn plan(&self, geometry: Geometry) -> Result<SlicePlan> {
        build_plan_with_beta(
            geometry.token_rows(),
            geometry.token_cols(),
            &self.config.mode,
            self.config.plan_seed,
            self.config.beta_milli,
        )
    }

    fn tables(&self, context: &TokenGrid, targets: &[Position]) -> Tables {
        if context.known_count() == 0 {
            return Tables::Prior;
        }
        let out = predict_at(context, &self.prior, targets);
        let clamp = self.config.codec.clamp;
        let tables = (0..targets.len())
            .flat_map(|i| out.gmm(i).iter())
            .map(|g| to_freq_table(&discretize(g, clamp)))
            .collect();
        Tables::Predicted(tables)
    }

    fn table<'a>(&'a self, tables: &'a Tables, i: usize, ch: usize) -> &'a FreqTable {
        match tables {
            Tables::Prior => &self.prior_tables[ch],
            Tables::Predicted(t) => &t[i * self.config.codec.channels + ch],
        }
    }

    fn header(&self, plan: &SlicePlan, slice: usize) -> PacketHeader {
        PacketHeader {
            version: VERSION,
            flags: 0,
            image_id: self.config.image_id,
            slice_index: slice as u8,
            total_slices: plan.slices() as u8,
            mode_id: self.config.mode.mode_id(),
            plan_seed: plan.seed(),
            grid_rows: plan.rows() as u16,
            grid_cols: plan.cols() as u16,
            channels: self.config.codec.channels as u16,
            beta_milli: plan.beta_milli(),
            payload_len: 0,
            crc32: 0,
        }
    }

    fn encode_slice(
        &self,
        tokens: &TokenGrid,
        plan: &SlicePlan,
        slice: usize,
    ) -> Result<Bitstring> {
        let all = vec![true; plan.slices()];
        let context = collect_context(slice, &self.config.mode, &all, plan, tokens)?;
        let targets = plan.slice(slice);
        let tables = self.tables(&context, targets);
        let clamp = self.config.codec.clamp;
        let mut enc = RangeEncoder::new();
        for (i, &pos) in targets.iter().enumerate() {
            let token = tokens.token(pos).expect("sender grid is fully known");
            for (ch, &v) in token.iter().enumerate() {
                enc.encode((v + clamp) as usize, self.table(&tables, i, ch));
            }
        }
        Ok(enc.finish())
    }

    fn decode_slice(
        &self,
        context: &TokenGrid,
        plan: &SlicePlan,
        slice: usize,
        payload: &Bitstring,
    ) -> Result<Vec<i32>> {
        let targets = plan.slice(slice);
        let tables = self.tables(context, targets);
        let clamp = self.config.codec.clamp;
        let channels = self.config.codec.channels;
        let mut dec = RangeDecoder::new(&payload.bytes)?;
        let mut values = Vec::with_capacity(targets.len() * channels);
        for i in 0..targets.len() {
            for ch in 0..channels {
                values.push(dec.decode(self.table(&tables, i, ch))? as i32 - clamp);
            }
        }
        if dec.remaining() != 0 {
            return Err(Error::CorruptStream("trailing bytes after last symbol"));
        }
        Ok(values)
    }

    /// Tokenizes, partitions and codes every slice into one packet each,
    /// in slice order.
    pub fn send(&self, image: &Image) -> Result<Transmission> {
        let geometry = Geometry::of(image);
        let tokens = analyze(image, &self.config.codec);
        let plan = self.plan(geometry)?;
        let schedule = self.config.mode.iteration_schedule();
        let mut payloads: Vec<Option<Bitstring>> = vec![None; plan.slices()];
        for &slice in schedule
            .cached
            .iter()
            .chain(schedule.passes.iter().flatten())
        {
            payloads[slice] = Some(self.encode_slice(&tokens, &plan, slice)?);
        }
        let packets = payloads
            .into_iter()
            .enumerate()
            .map(|(slice, p)| {
                Packet::new(
                    self.header(&plan, slice),
                    p.expect("every slice is scheduled"),
                )
            })
            .collect();
        Ok(Transmission {
            packets,
            geometry,
            tokens,
            plan,
        })
    }

    fn check_header(&self, plan: &SlicePlan, p: &Packet) -> Result<()> {
        let mut want = self.header(plan, p.slice_index());
        want.flags = p.header.flags;
        want.payload_len = p.header.payload_len;
        want.crc32 = p.header.crc32;
        if want != p.header {
            return Err(Error::Format(format!(
                "packet for slice {} does not match the session",
                p.slice_index()
            )));
        }
        Ok(())
    }

    /// Decodes whatever the delivered packets allow, in schedule order, and
    /// conceals the remaining tokens in one final predictor pass.
    pub fn receive(&self, geometry: Geometry, delivered: &[Packet]) -> Result<Reception> {
        let plan = self.plan(geometry)?;
        let slices = plan.slices();
        let intact: Vec<&Packet> = delivered.iter().filter(|p| p.verify()).collect();
        for p in &intact {
            self.check_header(&plan, p)?;
        }
        let received = received_slices(delivered, slices);
        let mut flags = received.clone();
        let mut grid = TokenGrid::masked(plan.rows(), plan.cols(), self.config.codec.channels);
        let schedule = self.config.mode.iteration_schedule();
        let mut passes = 0;

        let groups = std::iter::once(&schedule.cached).chain(schedule.passes.iter());
        for (depth, group) in groups.enumerate() {
            let mut ran = false;
            for &slice in group {
                if !flags[slice] {
                    continue;
                }
                let context = match collect_context(slice, &self.config.mode, &flags, &plan, &grid)
                {
                    Ok(c) => c,
                    Err(Error::Synchronization { .. }) => {
                        flags[slice] = false;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let payload = &intact
                    .iter()
                    .find(|p| p.slice_index() == slice)
                    .expect("received slice has an intact packet")
                    .payload;
                match self.decode_slice(&context, &plan, slice, payload) {
                    Ok(values) => {
                        let c = self.config.codec.channels;
                        for (i, &pos) in plan.slice(slice).iter().enumerate() {
                            grid.set(pos, &values[i * c..(i + 1) * c]);
                        }
                        ran = true;
                    }
                    Err(Error::CorruptStream(_)) => flags[slice] = false,
                    Err(e) => return Err(e),
                }
            }
            if ran && depth > 0 {
                passes += 1;
            }
        }
        self.finish(geometry, grid, received, flags, passes)
    }

    fn finish(
        &self,
        geometry: Geometry,
        mut grid: TokenGrid,
        received: Vec<bool>,
        decoded: Vec<bool>,
        mut passes: usize,
    ) -> Result<Reception> {
        if !grid.all_known() {
            let out = predict(&grid, &self.prior);
            grid = conceal(&grid, &out)?;
            passes += 1;
        }
        let image = synthesize(&grid, &self.config.codec, geometry)?;
        let count = decoded.iter().filter(|&&d| d).count();
        let outcome = if count == decoded.len() {
            Outcome::Lossless
        } else if count == 0 {
            Outcome::Failed
        } else {
            Outcome::Concealed
        };
        Ok(Reception {
            tokens: grid,
            image,
            outcome,
            received,
            decoded,
            predictor_passes: passes,
        })
    }

    /// Reconstructions from the first `k` packets for `k = 0..=L`.
    ///
    /// The full stream is decoded once; a prefix then keeps exactly the
    /// slices whose contexts all fall inside the decodable part of the
    /// prefix, which matches what [`Session::receive`] would recover from
    /// those packets alone.
    pub fn progressive_receive(
        &self,
        geometry: Geometry,
        packets: &[Packet],
    ) -> Result<Vec<Reception>> {
        let full = self.receive(geometry, packets)?;
        let plan = self.plan(geometry)?;
        let slices = plan.slices();
        let schedule = self.config.mode.iteration_schedule();
        let mut order_of_packets: Vec<usize> = packets.iter().map(Packet::slice_index).collect();
        order_of_packets.dedup();

        let mut out = Vec::with_capacity(order_of_packets.len() + 1);
        for k in 0..=order_of_packets.len() {
            let mut received = vec![false; slices];
            for &s in &order_of_packets[..k] {
                received[s] = full.received[s];
            }
            let mut decoded = vec![false; slices];
            let mut passes = 0;
            let groups = std::iter::once(&schedule.cached).chain(schedule.passes.iter());
            for (depth, group) in groups.enumerate() {
                let mut ran = false;
                for &s in group {
                    if received[s]
                        && full.decoded[s]
                        && self.config.mode.contexts(s).iter().all(|&j| decoded[j])
                    {
                        decoded[s] = true;
                        ran = true;
                    }
                }
                if ran && depth > 0 {
                    passes += 1;
                }
            }
            let mut grid = TokenGrid::masked(plan.rows(), plan.cols(), self.config.codec.channels);
            for s in (0..slices).filter(|&s| decoded[s]) {
                grid.copy_from(&full.tokens, plan.slice(s));
            }
            out.push(self.finish(geometry, grid, received, decoded, passes)?);
        }
        Ok(out)
    }

    /// Evaluates the training objective at one random masking ratio.
    pub fn objective(
        &self,
        image: &Image,
        ratio: f64,
        alpha: f64,
        lambda: f64,
        seed: u64,
    ) -> Result<ObjectiveReport> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::InvalidConfig(format!(
                "mask ratio {ratio} outside [0, 1]"
            )));
        }
        let geometry = Geometry::of(image);
        let tokens = analyze(image, &self.config.codec);
        let n = tokens.len();
        let count = (ratio * n as f64).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut masked = tokens.clone();
        let positions: Vec<Position> = tokens.positions().collect();
        for i in sample(&mut rng, n, count).into_iter() {
            masked.mask(positions[i]);
        }
        let out = predict(&masked, &self.prior);
        let clamp = self.config.codec.clamp;
        let mut rate_bits = 0.0;
        for (i, &pos) in out.positions().iter().enumerate() {
            let truth = tokens.token(pos).expect("sender grid is fully known");
            for (g, &v) in out.gmm(i).iter().zip(truth) {
                rate_bits += to_freq_table(&discretize(g, clamp)).bits((v + clamp) as usize);
            }
        }
        let quantized = synthesize(&tokens, &self.config.codec, geometry)?;
        let concealed = synthesize(&conceal(&masked, &out)?, &self.config.codec, geometry)?;
        let distortion_quantized = mse(image, &quantized);
        let distortion_concealed = mse(image, &concealed);
        let efficiency = rate_bits + lambda * distortion_quantized;
        let resilience = distortion_concealed;
        Ok(ObjectiveReport {
            rate_bits,
            distortion_quantized,
            distortion_concealed,
            efficiency,
            resilience,
            total: efficiency + alpha * resilience,
        })
    }
}

/// Masked-location rate, the two distortions and the combined losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveReport {
    pub rate_bits: f64,
    pub distortion_quantized: f64,
    pub distortion_concealed: f64,
    /// Rate plus `lambda` times the quantized distortion.
    pub efficiency: f64,
    /// Distortion after concealment.
    pub resilience: f64,
    /// `efficiency + alpha * resilience`.
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub psnr_db: f64,
    pub bits_payload: usize,
    pub bits_total: usize,
    pub bpp: f64,
    pub bpp_with_headers: f64,
}

/// Quality and rate of one reconstruction. Failed outcomes report
/// [`FAILED_PSNR_DB`] regardless of the pixels.
pub fn evaluate(
    original: &Image,
    reconstructed: &Image,
    outcome: Outcome,
    packets: &[Packet],
) -> Metrics {
    let pixels = (original.height() * original.width()) as f64;
    let bits_payload: usize = packets.iter().map(Packet::payload_bits).sum();
    let bits_total: usize = packets.iter().map(Packet::wire_bits).sum();
    let psnr_db = match outcome {
        Outcome::Failed => FAILED_PSNR_DB,
        _ => psnr(original, reconstructed),
    };
    Metrics {
        psnr_db,
        bits_payload,
        bits_total,
        bpp: bits_payload as f64 / pixels,
        bpp_with_headers: bits_total as f64 / pixels,
    }
}

/// Channel protection applied on top of the coded stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Protection {
    None,
    /// Ideal erasure code adding `parity` packets, each as large as the
    /// largest data packet. The stream is either fully recovered or lost.
    Fec {
        parity: usize,
    },
    /// Backup copies of the listed slices.
    Uep {
        protected: Vec<usize>,
    },
}

impl Protection {
    pub fn label(&self, mode: &str, slices: usize) -> String {
        match self {
            Protection::None => mode.to_string(),
            Protection::Fec { parity } => format!("{mode}+FEC({slices}:{parity})"),
            Protection::Uep { protected } => {
                let list: Vec<String> = protected.iter().map(|p| p.to_string()).collect();
                format!("{mode}+UEP({})", list.join(";"))
            }
        }
    }
}

/// One simulated transmission.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub image_id: u64,
    pub mode: String,
    pub slices: usize,
    pub beta: f64,
    pub loss_preset: String,
    pub seed: u64,
    pub eps_target: f64,
    pub slice_bits: Vec<usize>,
    pub flags: Vec<bool>,
    pub outcome: Outcome,
    pub metrics: Metrics,
    pub slices_decoded: usize,
}

pub const CSV_HEADER: &str =
    "image_id,mode,L,beta,loss_preset,seed,eps_target,bits_payload,bits_total,bpp,outcome,psnr_db,slices_decoded";

impl Episode {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.3},{},{},{},{},{},{:.6},{},{:.4},{}",
            self.image_id,
            self.mode,
            self.slices,
            self.beta,
            self.loss_preset,
            self.seed,
            self.eps_target,
            self.metrics.bits_payload,
            self.metrics.bits_total,
            self.metrics.bpp,
            self.outcome,
            self.metrics.psnr_db,
            self.slices_decoded
        )
    }
}

/// A named loss model for episodes.
#[derive(Clone, Debug)]
pub struct Channel {
    pub name: String,
    pub model: LossModel,
    pub eps_target: f64,
}

impl Channel {
    pub fn preset(name: &str) -> Result<Self> {
        let model = LossModel::preset(name)?;
        let eps_target = model.preset_record().map(|r| r.eps).unwrap_or(0.0);
        Ok(Channel {
            name: name.to_ascii_uppercase(),
            model,
            eps_target,
        })
    }

    pub fn iid(eps: f64) -> Result<Self> {
        Ok(Channel {
            name: format!("iid({eps})"),
            model: LossModel::iid(eps)?,
            eps_target: eps,
        })
    }
}

/// Sends `image`, pushes the packets through `channel` with a trace drawn
/// from `seed`, receives and scores the result.
pub fn run_episode(
    session: &Session,
    image: &Image,
    image_id: u64,
    channel: &Channel,
    seed: u64,
    protection: &Protection,
) -> Result<Episode> {
    let tx = session.send(image)?;
    let slices = tx.packets.len();
    let slice_bits: Vec<usize> = tx.packets.iter().map(Packet::payload_bits).collect();
    let mode = protection.label(&session.config().mode.kind().to_string(), slices);

    let (reception, sent, flags) = match protection {
        Protection::Fec { parity } => {
            let trace = sample_trace(&channel.model, slices + parity, seed);
            let recovered = fec_channel(slices, *parity, &trace);
            let delivered = if recovered {
                tx.packets.clone()
            } else {
                Vec::new()
            };
            let mut reception = session.receive(tx.geometry, &delivered)?;
            if !recovered {
                reception.outcome = Outcome::Failed;
            }
            // parity packets carry as much payload as the largest data packet
            let largest = tx
                .packets
                .iter()
                .map(|p| p.payload.bytes.len())
                .max()
                .unwrap_or(0);
            let mut sent = tx.packets.clone();
            for i in 0..*parity {
                let mut h = tx.packets[0].header;
                h.slice_index = (i % slices) as u8;
                sent.push(Packet::new(h, Bitstring::from_bytes(vec![0; largest])));
            }
            (reception, sent, trace.flags)
        }
        Protection::Uep { protected } => {
            let sent = uep_backup(&tx.packets, protected)?;
            let trace = sample_trace(&channel.model, sent.len(), seed);
            let (delivered, flags) = apply_loss(&sent, &trace);
            (session.receive(tx.geometry, &delivered)?, sent, flags)
        }
        Protection::None => {
            let trace = sample_trace(&channel.model, slices, seed);
            let (delivered, flags) = apply_loss(&tx.packets, &trace);
            (
                session.receive(tx.geometry, &delivered)?,
                tx.packets.clone(),
                flags,
            )
        }
    };

    let metrics = evaluate(image, &reception.image, reception.outcome, &sent);
    Ok(Episode {
        image_id,
        mode,
        slices,
        beta: session.config().beta(),
        loss_preset: channel.name.clone(),
        seed,
        eps_target: channel.eps_target,
        slice_bits,
        flags,
        outcome: reception.outcome,
        metrics,
        slices_decoded: reception.decoded.iter().filter(|&&d| d).count(),
    })
}

/// Receives with an explicit per-packet trace instead of a loss model.
pub fn receive_with_trace(
    session: &Session,
    tx: &Transmission,
    trace: &LossTrace,
) -> Result<Reception> {
    let (delivered, _) = apply_loss(&tx.packets, trace);
    session.receive(tx.geometry, &delivered)
}
