//! Packets, packet-loss models and the loss channel, plus the ideal-FEC and
//! backup-packet (UEP) baselines.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::entropy_coder::Bitstring;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RCPK";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 40;
/// Header flag set on backup copies made by [`uep_backup`].
pub const FLAG_BACKUP: u8 = 1;

/// Fixed-size packet header. All multi-byte fields are little-endian on the
/// wire. `channels` is stored in one byte with 0 standing for 256.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PacketHeader {
    pub version: u8,
    pub flags: u8,
    pub image_id: u64,
    pub slice_index: u8,
    pub total_slices: u8,
    pub mode_id: u8,
    pub plan_seed: u64,
    pub grid_rows: u16,
    pub grid_cols: u16,
    pub channels: u16,
    pub beta_milli: u16,
    pub payload_len: u32,
    pub crc32: u32,
}

impl PacketHeader {
    fn write_without_crc(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.push(self.version);
        out.push(self.flags);
        out.extend_from_slice(&self.image_id.to_le_bytes());
        out.push(self.slice_index);
        out.push(self.total_slices);
        out.push(self.mode_id);
        out.extend_from_slice(&self.plan_seed.to_le_bytes());
        out.extend_from_slice(&self.grid_rows.to_le_bytes());
        out.extend_from_slice(&self.grid_cols.to_le_bytes());
        out.push((self.channels % 256) as u8);
        out.extend_from_slice(&self.beta_milli.to_le_bytes());
        out.extend_from_slice(&self.payload_len.to_le_bytes());
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packet {
    pub header: PacketHeader,
    pub payload: Bitstring,
}

fn checksum(header: &PacketHeader, payload: &[u8]) -> u32 {
    let mut buf = Vec::with_capacity(HEADER_LEN - 4);
    header.write_without_crc(&mut buf);
    let mut h = crc32fast::Hasher::new();
    h.update(&buf);
    h.update(payload);
    h.finalize()
}

impl Packet {
    /// Builds a packet, filling in `payload_len` and `crc32`.
    pub fn new(mut header: PacketHeader, payload: Bitstring) -> Self {
        header.payload_len = payload.bytes.len() as u32;
        header.crc32 = checksum(&header, &payload.bytes);
        Packet { header, payload }
    }

    /// True when the header is self-consistent and the CRC matches.
    pub fn verify(&self) -> bool {
        let h = &self.header;
        h.slice_index < h.total_slices
            && h.payload_len as usize == self.payload.bytes.len()
            && h.crc32 == checksum(h, &self.payload.bytes)
    }

    pub fn slice_index(&self) -> usize {
        self.header.slice_index as usize
    }

    pub fn payload_bits(&self) -> usize {
        self.payload.bit_length
    }

    pub fn wire_bits(&self) -> usize {
        8 * HEADER_LEN + self.payload.bit_length
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.bytes.len());
        self.header.write_without_crc(&mut out);
        out.extend_from_slice(&self.header.crc32.to_le_bytes());
        out.extend_from_slice(&self.payload.bytes);
        out
    }

    /// Parses and integrity-checks one packet.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::CorruptStream("packet shorter than header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::CorruptStream("bad packet magic"));
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let header = PacketHeader {
            version: bytes[4],
            flags: bytes[5],
            image_id: u64_at(6),
            slice_index: bytes[14],
            total_slices: bytes[15],
            mode_id: bytes[16],
            plan_seed: u64_at(17),
            grid_rows: u16_at(25),
            grid_cols: u16_at(27),
            channels: match bytes[29] {
                0 => 256,
                c => c as u16,
            },
            beta_milli: u16_at(30),
            payload_len: u32_at(32),
            crc32: u32_at(36),
        };
        if header.version != VERSION {
            return Err(Error::CorruptStream("unsupported packet version"));
        }
        if bytes.len() - HEADER_LEN != header.payload_len as usize {
            return Err(Error::CorruptStream("payload length mismatch"));
        }
        let packet = Packet {
            header,
            payload: Bitstring::from_bytes(bytes[HEADER_LEN..].to_vec()),
        };
        if !packet.verify() {
            return Err(Error::CorruptStream("checksum mismatch"));
        }
        Ok(packet)
    }
}

/// One row of the published three-state parameter table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PresetRecord {
    pub name: &'static str,
    pub p_g: f64,
    pub p_b: f64,
    pub p_i: f64,
    pub p_b_to_g: f64,
    pub eps: f64,
    pub gamma: f64,
}

pub const PRESETS: [PresetRecord; 6] = [
    PresetRecord {
        name: "EP1",
        p_g: 0.99968,
        p_b: 0.8462,
        p_i: 0.0000,
        p_b_to_g: 0.1538,
        eps: 0.002,
        gamma: 6.50,
    },
    PresetRecord {
        name: "EP2",
        p_g: 0.9798,
        p_b: 0.3720,
        p_i: 0.3333,
        p_b_to_g: 0.6304,
        eps: 0.031,
        gamma: 1.59,
    },
    PresetRecord {
        name: "EP3",
        p_g: 0.9500,
        p_b: 0.8000,
        p_i: 0.6000,
        p_b_to_g: 0.8000,
        eps: 0.065,
        gamma: 5.00,
    },
    PresetRecord {
        name: "EP4",
        p_g: 0.9363,
        p_b: 0.4072,
        p_i: 0.5662,
        p_b_to_g: 0.3631,
        eps: 0.138,
        gamma: 1.69,
    },
    PresetRecord {
        name: "EP5",
        p_g: 0.9000,
        p_b: 0.9000,
        p_i: 0.1000,
        p_b_to_g: 0.1000,
        eps: 0.214,
        gamma: 10.0,
    },
    PresetRecord {
        name: "EP6",
        p_g: 0.8507,
        p_b: 0.6305,
        p_i: 0.2000,
        p_b_to_g: 0.2982,
        eps: 0.323,
        gamma: 2.71,
    },
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Markov3,
    Markov2,
    Iid,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Markov3 => "markov3",
            LossKind::Markov2 => "markov2",
            LossKind::Iid => "iid",
        })
    }
}

/// A finite Markov chain whose `loss_states` drop the packet sent while the
/// chain is in them.
#[derive(Clone, Debug, PartialEq)]
pub struct LossModel {
    kind: LossKind,
    transition: Vec<Vec<f64>>,
    loss_states: Vec<bool>,
    preset: Option<PresetRecord>,
}

const ROW_TOLERANCE: f64 = 1e-12;

impl LossModel {
    /// Two- or three-state chain from a full transition matrix. A
    /// three-state chain must have exactly one loss state.
    pub fn markov(transition: Vec<Vec<f64>>, loss_states: Vec<bool>) -> Result<Self> {
        let n = transition.len();
        let kind = match n {
            2 => LossKind::Markov2,
            3 => LossKind::Markov3,
            _ => {
                return Err(Error::InvalidLossModel(format!(
                    "{n} states; expected 2 or 3"
                )))
            }
        };
        if loss_states.len() != n {
            return Err(Error::InvalidLossModel("loss-state mask length".into()));
        }
        if kind == LossKind::Markov3 && loss_states.iter().filter(|&&b| b).count() != 1 {
            return Err(Error::InvalidLossModel(
                "three-state chain needs exactly one loss state".into(),
            ));
        }
        for (i, row) in transition.iter().enumerate() {
            if row.len() != n || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidLossModel(format!(
                    "row {i} is not a distribution"
                )));
            }
            if (row.iter().sum::<f64>() - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::InvalidLossModel(format!(
                    "row {i} does not sum to 1"
                )));
            }
        }
        Ok(LossModel {
            kind,
            transition,
            loss_states,
            preset: None,
        })
    }

    /// Independent losses with probability `eps`.
    pub fn iid(eps: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::InvalidLossModel(format!("loss probability {eps}")));
        }
        let row = vec![1.0 - eps, eps];
        let mut m = LossModel::markov(vec![row.clone(), row], vec![false, true])?;
        m.kind = LossKind::Iid;
        Ok(m)
    }

    /// Good/bad chain with stationary loss rate `eps` and mean burst length
    /// `gamma`.
    pub fn calibrated(eps: f64, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&eps) || gamma < 1.0 || !gamma.is_finite() {
            return Err(Error::InvalidLossModel(format!("eps={eps} gamma={gamma}")));
        }
        let p_bb = 1.0 - 1.0 / gamma;
        let p_gb = eps / (gamma * (1.0 - eps));
        if p_gb > 1.0 {
            return Err(Error::InvalidLossModel(format!(
                "eps={eps} gamma={gamma} unreachable"
            )));
        }
        LossModel::markov(
            vec![vec![1.0 - p_gb, p_gb], vec![1.0 - p_bb, p_bb]],
            vec![false, true],
        )
    }

    /// Calibrated chain for a named preset (`EP1`..`EP6`).
    pub fn preset(name: &str) -> Result<Self> {
        let rec = PRESETS
            .iter()
            .find(|p| p.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::InvalidLossModel(format!("unknown preset {name}")))?;
        let mut m = LossModel::calibrated(rec.eps, rec.gamma)?;
        m.preset = Some(*rec);
        Ok(m)
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn loss_states(&self) -> &[bool] {
        &self.loss_states
    }

    pub fn preset_record(&self) -> Option<&PresetRecord> {
        self.preset.as_ref()
    }

    pub fn states(&self) -> usize {
        self.transition.len()
    }

    fn closed_classes(&self) -> usize {
        let n = self.states();
        let mut reach = vec![vec![false; n]; n];
        for (i, row) in reach.iter_mut().enumerate() {
            row[i] = true;
            for (j, r) in row.iter_mut().enumerate() {
                if self.transition[i][j] > 0.0 {
                    *r = true;
                }
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if reach[i][k] && reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
        // a state is in a closed class iff everything it reaches reaches back
        let closed: Vec<bool> = (0..n)
            .map(|i| (0..n).all(|j| !reach[i][j] || reach[j][i]))
            .collect();
        let mut seen = vec![false; n];
        let mut classes = 0;
        for i in 0..n {
            if closed[i] && !seen[i] {
                classes += 1;
                for j in 0..n {
                    if reach[i][j] {
                        seen[j] = true;
                    }
                }
            }
        }
        classes
    }

    /// Stationary distribution by power iteration on the lazy chain.
    pub fn stationary_distribution(&self) -> Result<Vec<f64>> {
        if self.closed_classes() != 1 {
            return Err(Error::ReducibleChain);
        }
        let n = self.states();
        let mut pi = vec![1.0 / n as f64; n];
        for _ in 0..1_000_000 {
            let mut next = vec![0.0; n];
            for (i, (&p, row)) in pi.iter().zip(&self.transition).enumerate() {
                for (j, (slot, &t)) in next.iter_mut().zip(row).enumerate() {
                    *slot += p * 0.5 * (t + if i == j { 1.0 } else { 0.0 });
                }
            }
            let s: f64 = next.iter().sum();
            next.iter_mut().for_each(|p| *p /= s);
            let delta = pi
                .iter()
                .zip(&next)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            pi = next;
            if delta <= 1e-15 {
                break;
            }
        }
        Ok(pi)
    }
}

/// Analytic loss rate and mean burst length of a chain.
pub fn stationary(model: &LossModel) -> Result<(f64, f64)> {
    let pi = model.stationary_distribution()?;
    let loss = &model.loss_states;
    let eps: f64 = pi
        .iter()
        .zip(loss)
        .filter(|(_, &l)| l)
        .map(|(p, _)| p)
        .sum();
    let singles: Vec<usize> = (0..loss.len()).filter(|&i| loss[i]).collect();
    let gamma = if let [s] = singles[..] {
        1.0 / (1.0 - model.transition[s][s])
    } else {
        // expected run length = loss mass / rate of entering a loss state
        let entering: f64 = (0..loss.len())
            .filter(|&i| !loss[i])
            .flat_map(|i| singles.iter().map(move |&j| (i, j)))
            .map(|(i, j)| pi[i] * model.transition[i][j])
            .sum();
        eps / entering
    };
    Ok((eps, gamma))
}

/// Per-packet delivery flags; `true` means received.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LossTrace {
    pub flags: Vec<bool>,
}

impl LossTrace {
    pub fn all_received(n: usize) -> Self {
        LossTrace {
            flags: vec![true; n],
        }
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn loss_rate(&self) -> f64 {
        if self.flags.is_empty() {
            return 0.0;
        }
        self.flags.iter().filter(|&&f| !f).count() as f64 / self.flags.len() as f64
    }

    /// Mean length of maximal runs of consecutive losses (0 without losses).
    pub fn mean_burst(&self) -> f64 {
        let mut runs = 0usize;
        let mut lost = 0usize;
        let mut prev = true;
        for &f in &self.flags {
            if !f {
                lost += 1;
                if prev {
                    runs += 1;
                }
            }
            prev = f;
        }
        if runs == 0 {
            0.0
        } else {
            lost as f64 / runs as f64
        }
    }
}

impl fmt::Display for LossTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = self
            .flags
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect();
        f.write_str(&s)
    }
}

impl FromStr for LossTrace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.trim()
            .chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                other => Err(Error::Format(format!("trace character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(|flags| LossTrace { flags })
    }
}

/// Parses a trace file: one episode per non-empty line.
pub fn parse_traces(text: &str) -> Result<Vec<LossTrace>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::parse)
        .collect()
}

pub fn format_traces(traces: &[LossTrace]) -> String {
    let mut out = String::new();
    for t in traces {
        out.push_str(&t.to_string());
        out.push('\n');
    }
    out
}

fn draw(rng: &mut ChaCha8Rng, dist: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding slack: last state with nonzero mass
    dist.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Samples `n_packets` delivery flags, starting from the stationary
/// distribution (state 0 for reducible chains).
pub fn sample_trace(model: &LossModel, n_packets: usize, seed: u64) -> LossTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = model.stationary_distribution().unwrap_or_else(|_| {
        let mut d = vec![0.0; model.states()];
        d[0] = 1.0;
        d
    });
    let mut state = draw(&mut rng, &start);
    let mut flags = Vec::with_capacity(n_packets);
    for i in 0..n_packets {
        if i > 0 {
            state = draw(&mut rng, &model.transition[state]);
        }
        flags.push(!model.loss_states[state]);
    }
    LossTrace { flags }
}

/// Drops the packets whose flag is false and those failing their checksum.
/// Returns the delivered packets in order and the effective flags.
pub fn apply_loss(packets: &[Packet], trace: &LossTrace) -> (Vec<Packet>, Vec<bool>) {
    assert_eq!(
        packets.len(),
        trace.len(),
        "trace length must equal packet count"
    );
    let flags: Vec<bool> = packets
        .iter()
        .zip(&trace.flags)
        .map(|(p, &f)| f && p.verify())
        .collect();
    let delivered = packets
        .iter()
        .zip(&flags)
        .filter(|(_, &f)| f)
        .map(|(p, _)| p.clone())
        .collect();
    (delivered, flags)
}

/// Ideal erasure code: `n_data` sources survive iff at least `n_data` of the
/// `n_data + n_parity` packets arrive.
pub fn fec_channel(n_data: usize, n_parity: usize, trace: &LossTrace) -> bool {
    assert_eq!(
        trace.len(),
        n_data + n_parity,
        "trace length must be N_k + N_r"
    );
    trace.flags.iter().filter(|&&f| f).count() >= n_data
}

/// Fraction of sent packets that are parity.
pub fn parity_ratio(n_data: usize, n_parity: usize) -> f64 {
    n_parity as f64 / (n_data + n_parity) as f64
}

/// Bandwidth relative to the unprotected stream.
pub fn bandwidth_multiplier(n_data: usize, n_parity: usize) -> f64 {
    (n_data + n_parity) as f64 / n_data as f64
}

/// Appends one backup copy of each protected slice's packet.
pub fn uep_backup(packets: &[Packet], protected: &[usize]) -> Result<Vec<Packet>> {
    let mut out = packets.to_vec();
    for &slice in protected {
        let original = packets
            .iter()
            .find(|p| p.slice_index() == slice)
            .ok_or_else(|| {
                Error::InvalidConfig(format!("no packet for protected slice {slice}"))
            })?;
        let mut header = original.header;
        header.flags |= FLAG_BACKUP;
        out.push(Packet::new(header, original.payload.clone()));
    }
    Ok(out)
}

/// Per-slice reception: a slice counts as received if any intact copy of
/// its packet was delivered.
pub fn received_slices(delivered: &[Packet], total_slices: usize) -> Vec<bool> {
    let mut got = vec![false; total_slices];
    for p in delivered {
        if p.verify() && p.slice_index() < total_slices {
            got[p.slice_index()] = true;
        }
    }
    got
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{Binomial, DiscreteCDF};

    fn header(slice: u8, total: u8) -> PacketHeader {
        PacketHeader {
            version: VERSION,
            flags: 0,
            image_id: 0xDEAD_BEEF,
            slice_index: slice,
            total_slices: total,
            mode_id: 1,
            plan_seed: 42,
            grid_rows: 8,
            grid_cols: 12,
            channels: 64,
            beta_milli: 1000,
            payload_len: 0,
            crc32: 0,
        }
    }

    fn packet(slice: u8, total: u8, payload: &[u8]) -> Packet {
        Packet::new(
            header(slice, total),
            Bitstring::from_bytes(payload.to_vec()),
        )
    }

    #[test]
    fn header_layout() {
        let p = packet(2, 5, &[9, 8, 7]);
        let b = p.to_bytes();
        assert_eq!(b.len(), HEADER_LEN + 3);
        assert_eq!(&b[..4], b"RCPK");
        assert_eq!(b[14], 2);
        assert_eq!(b[15], 5);
        assert_eq!(u16::from_le_bytes([b[25], b[26]]), 8);
        assert_eq!(b[29], 64);
        assert_eq!(u16::from_le_bytes([b[30], b[31]]), 1000);
        assert_eq!(u32::from_le_bytes(b[32..36].try_into().unwrap()), 3);
        let crc = crc32fast::hash(&[&b[..36], &b[40..]].concat());
        assert_eq!(u32::from_le_bytes(b[36..40].try_into().unwrap()), crc);
        assert_eq!(Packet::from_bytes(&b).unwrap(), p);
    }

    #[test]
    fn channel_byte_wraps_at_256() {
        let mut h = header(0, 1);
        h.channels = 256;
        let p = Packet::new(h, Bitstring::from_bytes(vec![1]));
        let b = p.to_bytes();
        assert_eq!(b[29], 0);
        assert_eq!(Packet::from_bytes(&b).unwrap().header.channels, 256);
    }

    #[test]
    fn corruption_is_detected() {
        let p = packet(0, 3, &[1, 2, 3, 4]);
        let mut b = p.to_bytes();
        b[HEADER_LEN + 1] ^= 0x10;
        assert!(Packet::from_bytes(&b).is_err());
        let mut q = p.clone();
        q.payload.bytes[0] ^= 1;
        assert!(!q.verify());
        let (delivered, flags) = apply_loss(&[p.clone(), q], &LossTrace::all_received(2));
        assert_eq!(delivered, vec![p]);
        assert_eq!(flags, vec![true, false]);
    }

    #[test]
    fn apply_loss_keeps_order() {
        let ps: Vec<Packet> = (0..3).map(|i| packet(i, 3, &[i])).collect();
        let (d, f) = apply_loss(&ps, &"101".parse().unwrap());
        assert_eq!(f, vec![true, false, true]);
        assert_eq!(d, vec![ps[0].clone(), ps[2].clone()]);
        let (d, _) = apply_loss(&ps, &LossTrace::all_received(3));
        assert_eq!(d, ps);
    }

    #[test]
    fn preset_examples() {
        let ep3 = LossModel::preset("EP3").unwrap();
        assert!((ep3.transition()[1][1] - 0.8).abs() < 1e-15);
        let ep1 = LossModel::preset("EP1").unwrap();
        assert!((ep1.transition()[1][1] - (1.0 - 1.0 / 6.5)).abs() < 1e-15);
        assert!((ep1.transition()[0][1] - 0.002 / (6.5 * 0.998)).abs() < 1e-15);
        let (_, g5) = stationary(&LossModel::preset("EP5").unwrap()).unwrap();
        assert!((g5 - 10.0).abs() < 1e-12);
        assert_eq!(ep3.preset_record().unwrap().p_i, 0.6);
        assert!(LossModel::preset("EP7").is_err());
    }

    // closed-form stationary vector of a two-state chain as an oracle
    fn two_state_oracle(m: &LossModel) -> f64 {
        let a = m.transition()[0][1];
        let b = m.transition()[1][0];
        a / (a + b)
    }

    #[test]
    fn stationary_matches_targets() {
        for rec in PRESETS {
            let m = LossModel::preset(rec.name).unwrap();
            let (eps, gamma) = stationary(&m).unwrap();
            assert!((eps - rec.eps).abs() < 1e-6, "{}: {eps}", rec.name);
            assert!((eps - two_state_oracle(&m)).abs() < 1e-12);
            assert!((gamma - rec.gamma).abs() < 1e-6, "{}: {gamma}", rec.name);
        }
        let (eps, gamma) = stationary(&LossModel::iid(0.1).unwrap()).unwrap();
        assert!((eps - 0.1).abs() < 1e-12);
        assert!((gamma - 1.0 / 0.9).abs() < 1e-12);
        let absorbing =
            LossModel::markov(vec![vec![1.0, 0.0], vec![0.5, 0.5]], vec![false, true]).unwrap();
        assert!(stationary(&absorbing).unwrap().0 < 1e-12);
    }

    #[test]
    fn three_state_chain() {
        let m = LossModel::markov(
            vec![
                vec![0.9, 0.05, 0.05],
                vec![0.3, 0.6, 0.1],
                vec![0.2, 0.1, 0.7],
            ],
            vec![false, false, true],
        )
        .unwrap();
        assert_eq!(m.kind(), LossKind::Markov3);
        let pi = m.stationary_distribution().unwrap();
        for j in 0..3 {
            let back: f64 = (0..3).map(|i| pi[i] * m.transition()[i][j]).sum();
            assert!((back - pi[j]).abs() < 1e-12);
        }
        let (_, gamma) = stationary(&m).unwrap();
        assert!((gamma - 1.0 / 0.3).abs() < 1e-12);
        let t = sample_trace(&m, 200_000, 5);
        assert!((t.loss_rate() - pi[2]).abs() / pi[2] < 0.05);
        assert!((t.mean_burst() - 1.0 / 0.3).abs() / (1.0 / 0.3) < 0.05);
    }

    #[test]
    fn validation() {
        assert!(
            LossModel::markov(vec![vec![0.5, 0.6], vec![0.5, 0.5]], vec![false, true]).is_err()
        );
        assert!(LossModel::markov(vec![vec![1.0, 0.0, 0.0]; 3], vec![false, true, true]).is_err());
        let reducible =
            LossModel::markov(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![false, true]).unwrap();
        assert!(matches!(stationary(&reducible), Err(Error::ReducibleChain)));
        assert!(LossModel::iid(1.5).is_err());
    }

    #[test]
    fn traces() {
        let clean = LossModel::iid(0.0).unwrap();
        assert!(sample_trace(&clean, 1000, 1).flags.iter().all(|&f| f));
        let ep2 = LossModel::preset("EP2").unwrap();
        assert_eq!(sample_trace(&ep2, 5000, 9), sample_trace(&ep2, 5000, 9));
        assert_ne!(sample_trace(&ep2, 5000, 9), sample_trace(&ep2, 5000, 10));
        let t: LossTrace = "0011101".parse().unwrap();
        assert_eq!(t.mean_burst(), 1.5);
        assert_eq!(t.to_string(), "0011101");
        let many = vec![t.clone(), LossTrace::all_received(3)];
        assert_eq!(parse_traces(&format_traces(&many)).unwrap(), many);
        assert!("01x".parse::<LossTrace>().is_err());
    }

    #[test]
    fn fec_exhaustive_small() {
        for total in 1..=8usize {
            for n_data in 1..=total {
                for mask in 0u32..(1 << total) {
                    let flags: Vec<bool> = (0..total).map(|i| mask >> i & 1 == 1).collect();
                    let got = mask.count_ones() as usize;
                    assert_eq!(
                        fec_channel(n_data, total - n_data, &LossTrace { flags }),
                        got >= n_data
                    );
                }
            }
        }
        assert!((bandwidth_multiplier(7, 3) - 10.0 / 7.0).abs() < 1e-12);
        assert!((parity_ratio(7, 3) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn fec_binomial_oracle() {
        let exact = Binomial::new(0.8, 10).unwrap().cdf(6);
        assert!((exact - 0.1209).abs() < 1e-4);
        let m = LossModel::iid(0.2).unwrap();
        let trials = 20_000;
        let fails = (0..trials)
            .filter(|&s| !fec_channel(7, 3, &sample_trace(&m, 10, s)))
            .count();
        let rate = fails as f64 / trials as f64;
        let sd = (exact * (1.0 - exact) / trials as f64).sqrt();
        assert!((rate - exact).abs() < 4.0 * sd, "{rate} vs {exact}");
    }

    #[test]
    fn uep_or_rule() {
        let ps: Vec<Packet> = (0..3).map(|i| packet(i, 3, &[i, i])).collect();
        assert_eq!(uep_backup(&ps, &[]).unwrap(), ps);
        let sent = uep_backup(&ps, &[1]).unwrap();
        assert_eq!(sent.len(), 4);
        assert_eq!(sent[3].slice_index(), 1);
        assert!(sent[3].verify());
        assert_eq!(sent[3].header.flags & FLAG_BACKUP, FLAG_BACKUP);
        for mask in 0u32..16 {
            let trace = LossTrace {
                flags: (0..4).map(|i| mask >> i & 1 == 1).collect(),
            };
            let (d, f) = apply_loss(&sent, &trace);
            assert_eq!(received_slices(&d, 3)[1], f[1] || f[3]);
        }
        assert!(uep_backup(&ps, &[5]).is_err());
    }

    #[test]
    fn backup_squares_base_loss() {
        let eps = 0.3;
        let m = LossModel::iid(eps).unwrap();
        let trials = 40_000;
        let lost = (0..trials)
            .filter(|&s| {
                let t = sample_trace(&m, 2, s);
                !t.flags[0] && !t.flags[1]
            })
            .count() as f64
            / trials as f64;
        let sd = (eps * eps * (1.0 - eps * eps) / trials as f64).sqrt();
        assert!((lost - eps * eps).abs() < 4.0 * sd);
    }

    proptest! {
        #[test]
        fn packet_bytes_roundtrip(payload in prop::collection::vec(any::<u8>(), 0..300), slice in 0u8..10, seed: u64) {
            let mut h = header(slice, 10);
            h.plan_seed = seed;
            let p = Packet::new(h, Bitstring::from_bytes(payload));
            prop_assert_eq!(Packet::from_bytes(&p.to_bytes()).unwrap(), p);
        }

        #[test]
        fn apply_loss_is_order_preserving_filter(mask in prop::collection::vec(any::<bool>(), 1..20)) {
            let n = mask.len() as u8;
            let ps: Vec<Packet> = (0..n).map(|i| packet(i, n, &[i])).collect();
            let (d, f) = apply_loss(&ps, &LossTrace { flags: mask.clone() });
            prop_assert_eq!(&f, &mask);
            let idx: Vec<usize> = d.iter().map(Packet::slice_index).collect();
            let want: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
            prop_assert_eq!(idx, want);
        }
    }
}
