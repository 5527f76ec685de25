//! Container layout (all integers little-endian, lengths in bytes):
//!
//! ```text
//! 0   4  magic "CAE1"
//! 4   1  version
//! 5   1  profile id
//! 6   4  original width
//! 10  4  original height
//! 14  1  hybrid flag
//! 15  1  lambda id
//! 16  4  z payload length
//! 20  4  y (or y1) payload length
//! 24  4  y2 payload length (0 unless hybrid)
//! 28  1  flags (bit 0: per-position table checksums follow the payloads)
//! 29  4  checksum count
//! 33     z payload, y/y1 payload, y2 payload, checksums (u32 each)
//! ```

use crate::error::{Error, Result};
use crate::transforms::BLOCK;

pub const MAGIC: &[u8; 4] = b"CAE1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 33;
const FLAG_CHECKSUMS: u8 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Header {
    pub profile_id: u8,
    pub width: u32,
    pub height: u32,
    pub hybrid: bool,
    pub lambda_id: u8,
}

impl Header {
    /// Dimensions after padding to the transform block size.
    pub fn padded_dims(&self) -> (usize, usize) {
        let up = |v: u32| (v as usize).div_ceil(BLOCK) * BLOCK;
        (up(self.height), up(self.width))
    }

    /// `(h, w)` of the `ŷ` grid.
    pub fn y_dims(&self) -> (usize, usize) {
        let (h, w) = self.padded_dims();
        (h / crate::transforms::Y_DOWNSCALE, w / crate::transforms::Y_DOWNSCALE)
    }

    /// `(h, w)` of the `ẑ` grid.
    pub fn z_dims(&self) -> (usize, usize) {
        let (h, w) = self.padded_dims();
        (h / BLOCK, w / BLOCK)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitstream {
    pub header: Header,
    pub z: Vec<u8>,
    pub y1: Vec<u8>,
    pub y2: Vec<u8>,
    /// CRC32 of every table used, in coding order; empty unless requested.
    pub checksums: Vec<u32>,
}

fn corrupt(position: usize, reason: impl Into<String>) -> Error {
    Error::CorruptStream {
        position,
        reason: reason.into(),
    }
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

impl Bitstream {
    /// Entropy-coded payload size in bits (header and checksums excluded).
    pub fn payload_bits(&self) -> u64 {
        8 * (self.z.len() + self.y1.len() + self.y2.len()) as u64
    }

    pub fn bpp(&self) -> f64 {
        self.payload_bits() as f64 / (self.header.width as f64 * self.header.height as f64)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(HEADER_LEN + self.z.len() + self.y1.len() + self.y2.len() + 4 * self.checksums.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(h.profile_id);
        out.extend_from_slice(&h.width.to_le_bytes());
        out.extend_from_slice(&h.height.to_le_bytes());
        out.push(u8::from(h.hybrid));
        out.push(h.lambda_id);
        for len in [self.z.len(), self.y1.len(), self.y2.len()] {
            out.extend_from_slice(&(len as u32).to_le_bytes());
        }
        out.push(if self.checksums.is_empty() { 0 } else { FLAG_CHECKSUMS });
        out.extend_from_slice(&(self.checksums.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.z);
        out.extend_from_slice(&self.y1);
        out.extend_from_slice(&self.y2);
        for c in &self.checksums {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    /// Parses just the header; enough to size every buffer.
    pub fn parse_header(b: &[u8]) -> Result<(Header, [usize; 3], bool, usize)> {
        if b.len() < HEADER_LEN {
            return Err(corrupt(b.len(), format!("header needs {HEADER_LEN} bytes, got {}", b.len())));
        }
        if &b[0..4] != MAGIC {
            return Err(corrupt(0, "bad magic"));
        }
        if b[4] != VERSION {
            return Err(corrupt(4, format!("unsupported version {}", b[4])));
        }
        let header = Header {
            profile_id: b[5],
            width: u32_at(b, 6),
            height: u32_at(b, 10),
            hybrid: match b[14] {
                0 => false,
                1 => true,
                v => return Err(corrupt(14, format!("hybrid flag {v}"))),
            },
            lambda_id: b[15],
        };
        if header.width == 0 || header.height == 0 {
            return Err(corrupt(6, "zero image dimension"));
        }
        let lens = [u32_at(b, 16) as usize, u32_at(b, 20) as usize, u32_at(b, 24) as usize];
        let flags = b[28];
        if flags & !FLAG_CHECKSUMS != 0 {
            return Err(corrupt(28, format!("unknown flags {flags:#x}")));
        }
        let count = u32_at(b, 29) as usize;
        let with_sums = flags & FLAG_CHECKSUMS != 0;
        if !with_sums && count != 0 {
            return Err(corrupt(29, "checksum count without checksum flag"));
        }
        if !header.hybrid && lens[2] != 0 {
            return Err(corrupt(24, "y2 payload in a non-hybrid stream"));
        }
        Ok((header, lens, with_sums, count))
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        let (header, lens, _, count) = Self::parse_header(b)?;
        let expected = lens
            .iter()
            .try_fold(HEADER_LEN, |acc, &l| acc.checked_add(l))
            .and_then(|acc| acc.checked_add(count.checked_mul(4)?))
            .ok_or_else(|| corrupt(16, "declared lengths overflow"))?;
        if b.len() != expected {
            return Err(corrupt(
                b.len().min(expected),
                format!("stream is {} bytes, header declares {expected}", b.len()),
            ));
        }
        let mut at = HEADER_LEN;
        let mut take = |n: usize| {
            let s = b[at..at + n].to_vec();
            at += n;
            s
        };
        let z = take(lens[0]);
        let y1 = take(lens[1]);
        let y2 = take(lens[2]);
        let checksums = take(4 * count).chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self {
            header,
            z,
            y1,
            y2,
            checksums,
        })
    }
}
