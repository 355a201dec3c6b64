//! Byte-oriented range coder over 16-bit frequency tables.
//!
//! 32-bit range, 64-bit low register with carry propagation through a cached
//! byte (the LZMA arrangement). The always-zero leading byte of that scheme
//! is not emitted, so an empty message costs four bytes. Every symbol is
//! coded with its own table, which the decoder may compute lazily from
//! symbols it has already recovered.

use crate::density::{FreqTable, FREQ_BITS};
use crate::error::{Error, Result};

const TOP: u32 = 1 << 24;

/// A coded payload.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Bitstring {
    pub bytes: Vec<u8>,
    pub bit_length: usize,
}

impl Bitstring {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        let bit_length = bytes.len() * 8;
        Bitstring { bytes, bit_length }
    }
}

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    leading: bool,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            leading: true,
            out: Vec::new(),
        }
    }

    /// Codes symbol `index` of `table`.
    pub fn encode(&mut self, index: usize, table: &FreqTable) {
        let r = self.range >> FREQ_BITS;
        self.low += r as u64 * table.cum(index) as u64;
        self.range = r * table.freq(index);
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.emit(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    fn emit(&mut self, byte: u8) {
        if self.leading {
            debug_assert_eq!(byte, 0);
            self.leading = false;
        } else {
            self.out.push(byte);
        }
    }

    pub fn finish(mut self) -> Bitstring {
        for _ in 0..5 {
            self.shift_low();
        }
        Bitstring::from_bytes(self.out)
    }
}

pub struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    input: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Result<Self> {
        if input.len() < 4 {
            return Err(Error::CorruptStream("payload shorter than coder state"));
        }
        let code = u32::from_be_bytes([input[0], input[1], input[2], input[3]]);
        Ok(RangeDecoder {
            code,
            range: u32::MAX,
            input,
            pos: 4,
        })
    }

    /// Decodes one symbol index under `table`.
    pub fn decode(&mut self, table: &FreqTable) -> Result<usize> {
        let r = self.range >> FREQ_BITS;
        let target = self.code / r;
        if target >= table.total() {
            return Err(Error::CorruptStream("code outside coder interval"));
        }
        let index = table.lookup(target);
        self.code -= r * table.cum(index);
        self.range = r * table.freq(index);
        while self.range < TOP {
            let byte = *self
                .input
                .get(self.pos)
                .ok_or(Error::CorruptStream("truncated payload"))?;
            self.pos += 1;
            self.code = (self.code << 8) | byte as u32;
            self.range <<= 8;
        }
        Ok(index)
    }

    /// Bytes not consumed yet.
    pub fn remaining(&self) -> usize {
        self.input.len() - self.pos
    }
}

/// Codes `symbols[i]` (an index into `tables[i]`) for every `i`.
pub fn encode(symbols: &[usize], tables: &[&FreqTable]) -> Bitstring {
    assert_eq!(symbols.len(), tables.len());
    let mut enc = RangeEncoder::new();
    for (&s, t) in symbols.iter().zip(tables) {
        enc.encode(s, t);
    }
    enc.finish()
}

/// Decodes one symbol per table.
pub fn decode(bits: &Bitstring, tables: &[&FreqTable]) -> Result<Vec<usize>> {
    let mut dec = RangeDecoder::new(&bits.bytes)?;
    let out = tables
        .iter()
        .map(|t| dec.decode(t))
        .collect::<Result<Vec<_>>>()?;
    if dec.remaining() != 0 {
        return Err(Error::CorruptStream("trailing bytes after last symbol"));
    }
    Ok(out)
}
