//! Integer arithmetic coder with a 32-bit state, after the classic
//! low/high/underflow design. All arithmetic is on `u64`, so the output is
//! identical on every platform.

use crate::codec::cdf::QuantizedCdf;
use crate::error::{Error, Result};

const STATE_BITS: u32 = 32;
const FULL: u64 = 1 << STATE_BITS;
const HALF: u64 = FULL >> 1;
const QUARTER: u64 = HALF >> 1;
const MASK: u64 = FULL - 1;

#[derive(Default)]
struct BitWriter {
    bytes: Vec<u8>,
    cur: u8,
    n: u32,
}

impl BitWriter {
    fn push(&mut self, bit: u8) {
        self.cur = (self.cur << 1) | bit;
        self.n += 1;
        if self.n == 8 {
            self.bytes.push(self.cur);
            self.cur = 0;
            self.n = 0;
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.n > 0 {
            self.bytes.push(self.cur << (8 - self.n));
        }
        self.bytes
    }
}

pub struct ArithEncoder {
    low: u64,
    high: u64,
    pending: u64,
    out: BitWriter,
}

impl Default for ArithEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl ArithEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            high: MASK,
            pending: 0,
            out: BitWriter::default(),
        }
    }

    fn emit(&mut self, bit: u8) {
        self.out.push(bit);
        for _ in 0..self.pending {
            self.out.push(bit ^ 1);
        }
        self.pending = 0;
    }

    /// Codes bin `bin` of `cdf`.
    pub fn encode(&mut self, cdf: &QuantizedCdf, bin: usize) {
        let (lo, hi) = cdf.range(bin);
        debug_assert!(lo < hi);
        let total = cdf.total() as u64;
        let range = self.high - self.low + 1;
        self.high = self.low + hi as u64 * range / total - 1;
        self.low += lo as u64 * range / total;
        while (self.low ^ self.high) & HALF == 0 {
            let bit = (self.low >> (STATE_BITS - 1)) as u8;
            self.emit(bit);
            self.low = (self.low << 1) & MASK;
            self.high = ((self.high << 1) & MASK) | 1;
        }
        while self.low & !self.high & QUARTER != 0 {
            self.pending += 1;
            self.low = (self.low << 1) ^ HALF;
            self.high = ((self.high ^ HALF) << 1) | HALF | 1;
        }
    }

    /// Terminates the stream with a single `1` bit, padded with zeros.
    pub fn finish(mut self) -> Vec<u8> {
        self.out.push(1);
        self.out.finish()
    }
}

pub struct ArithDecoder<'a> {
    data: &'a [u8],
    bit_pos: usize,
    low: u64,
    high: u64,
    code: u64,
    /// Shifts since the start, and outstanding underflow steps.
    steps: u64,
    pending: u64,
    symbols: usize,
}

impl<'a> ArithDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        let mut d = Self {
            data,
            bit_pos: 0,
            low: 0,
            high: MASK,
            code: 0,
            steps: 0,
            pending: 0,
            symbols: 0,
        };
        for _ in 0..STATE_BITS {
            d.code = (d.code << 1) | d.read_bit();
        }
        d
    }

    fn read_bit(&mut self) -> u64 {
        let byte = self.bit_pos / 8;
        let bit = if byte < self.data.len() {
            (self.data[byte] >> (7 - self.bit_pos % 8)) & 1
        } else {
            0
        };
        self.bit_pos += 1;
        bit as u64
    }

    /// Decodes one bin of `cdf`.
    pub fn decode(&mut self, cdf: &QuantizedCdf) -> usize {
        let total = cdf.total() as u64;
        let range = self.high - self.low + 1;
        let offset = self.code - self.low;
        let value = ((offset + 1) * total - 1) / range;
        let bin = cdf.find(value as u32);
        let (lo, hi) = cdf.range(bin);
        self.high = self.low + hi as u64 * range / total - 1;
        self.low += lo as u64 * range / total;
        while (self.low ^ self.high) & HALF == 0 {
            self.steps += 1;
            self.pending = 0;
            self.low = (self.low << 1) & MASK;
            self.high = ((self.high << 1) & MASK) | 1;
            self.code = ((self.code << 1) & MASK) | self.read_bit();
        }
        while self.low & !self.high & QUARTER != 0 {
            self.steps += 1;
            self.pending += 1;
            self.low = (self.low << 1) ^ HALF;
            self.high = ((self.high ^ HALF) << 1) | HALF | 1;
            self.code = (self.code & HALF) | ((self.code << 1) & (MASK >> 1)) | self.read_bit();
        }
        self.symbols += 1;
        bin
    }

    /// Number of symbols decoded so far.
    pub fn position(&self) -> usize {
        self.symbols
    }

    /// Checks that the stream has exactly the length the encoder would have
    /// produced for the symbols decoded so far.
    pub fn finish(self) -> Result<()> {
        let emitted_bits = self.steps - self.pending + 1;
        let expected = emitted_bits.div_ceil(8) as usize;
        if expected != self.data.len() {
            let reason = if self.data.len() < expected {
                format!("stream truncated: {} bytes, coder needs {expected}", self.data.len())
            } else {
                format!("{} unread trailing bytes", self.data.len() - expected)
            };
            return Err(Error::CorruptStream {
                position: self.symbols,
                reason,
            });
        }
        Ok(())
    }
}

/// Codes a sequence of `(table, bin)` pairs.
pub fn ac_encode<'c>(symbols: impl IntoIterator<Item = (&'c QuantizedCdf, usize)>) -> Vec<u8> {
    let mut enc = ArithEncoder::new();
    for (cdf, bin) in symbols {
        enc.encode(cdf, bin);
    }
    enc.finish()
}

/// Decodes one bin per table, in order, and validates the stream length.
pub fn ac_decode<'c>(bytes: &[u8], tables: impl IntoIterator<Item = &'c QuantizedCdf>) -> Result<Vec<usize>> {
    let mut dec = ArithDecoder::new(bytes);
    let out = tables.into_iter().map(|c| dec.decode(c)).collect();
    dec.finish()?;
    Ok(out)
}
