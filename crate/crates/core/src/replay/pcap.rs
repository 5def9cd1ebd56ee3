//! Classic libpcap file format (not pcapng).
//!
//! Reads both microsecond (`0xa1b2c3d4`) and nanosecond (`0xa1b23c4d`) files in
//! either byte order. Writes nanosecond little-endian files.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::packet::RawFrame;

const MAGIC_USEC: u32 = 0xa1b2c3d4;
const MAGIC_NSEC: u32 = 0xa1b23c4d;
const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;
pub const LINKTYPE_ETHERNET: u32 = 1;
const WRITE_SNAPLEN: u32 = 262_144;

#[derive(Debug, Error)]
pub enum PcapError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("not a pcap file: magic {0:#010x}")]
    BadMagic(u32),
    #[error("file shorter than the 24-byte pcap header")]
    TruncatedHeader,
    #[error("record {index} is truncated")]
    TruncatedRecord { index: usize },
    #[error("unsupported link type {0}, only Ethernet (1) is handled")]
    UnsupportedLinkType(u32),
    #[error("frame {index} timestamp {ts_ns} ns does not fit a 32-bit seconds field")]
    TimestampOverflow { index: usize, ts_ns: u64 },
}

impl PcapError {
    /// Errors about file contents, as opposed to I/O failures.
    pub fn is_format(&self) -> bool {
        !matches!(self, PcapError::Io { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsResolution {
    Micro,
    Nano,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PcapHeader {
    pub big_endian: bool,
    pub resolution: TsResolution,
    pub snaplen: u32,
    pub link_type: u32,
}

struct Reader<'a> {
    data: &'a [u8],
    big_endian: bool,
}

impl Reader<'_> {
    fn u32_at(&self, off: usize) -> u32 {
        let b: [u8; 4] = self.data[off..off + 4].try_into().unwrap();
        if self.big_endian {
            u32::from_be_bytes(b)
        } else {
            u32::from_le_bytes(b)
        }
    }
}

/// Parses an in-memory pcap image.
pub fn parse_pcap(data: &[u8]) -> Result<(PcapHeader, Vec<RawFrame>), PcapError> {
    if data.len() < 4 {
        return Err(PcapError::TruncatedHeader);
    }
    let le_magic = u32::from_le_bytes(data[..4].try_into().unwrap());
    let (big_endian, resolution) = match (le_magic, le_magic.swap_bytes()) {
        (MAGIC_USEC, _) => (false, TsResolution::Micro),
        (MAGIC_NSEC, _) => (false, TsResolution::Nano),
        (_, MAGIC_USEC) => (true, TsResolution::Micro),
        (_, MAGIC_NSEC) => (true, TsResolution::Nano),
        _ => return Err(PcapError::BadMagic(le_magic)),
    };
    if data.len() < GLOBAL_HEADER_LEN {
        return Err(PcapError::TruncatedHeader);
    }
    let r = Reader { data, big_endian };
    let header = PcapHeader {
        big_endian,
        resolution,
        snaplen: r.u32_at(16),
        link_type: r.u32_at(20),
    };
    if header.link_type != LINKTYPE_ETHERNET {
        return Err(PcapError::UnsupportedLinkType(header.link_type));
    }

    let sub_sec_ns = match resolution {
        TsResolution::Micro => 1_000,
        TsResolution::Nano => 1,
    };
    let mut frames = Vec::new();
    let mut off = GLOBAL_HEADER_LEN;
    while off < data.len() {
        let index = frames.len();
        if data.len() - off < RECORD_HEADER_LEN {
            return Err(PcapError::TruncatedRecord { index });
        }
        let secs = u64::from(r.u32_at(off));
        let frac = u64::from(r.u32_at(off + 4));
        let incl_len = r.u32_at(off + 8) as usize;
        let body = off + RECORD_HEADER_LEN;
        if data.len() - body < incl_len {
            return Err(PcapError::TruncatedRecord { index });
        }
        frames.push(RawFrame::new(
            data[body..body + incl_len].to_vec(),
            secs * 1_000_000_000 + frac * sub_sec_ns,
        ));
        off = body + incl_len;
    }
    Ok((header, frames))
}

pub fn read_pcap(path: &Path) -> Result<Vec<RawFrame>, PcapError> {
    let data = fs::read(path).map_err(|source| PcapError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(parse_pcap(&data)?.1)
}

/// Encodes frames as a nanosecond-resolution little-endian pcap image.
pub fn encode_pcap(frames: &[RawFrame]) -> Result<Vec<u8>, PcapError> {
    let body: usize = frames.iter().map(|f| RECORD_HEADER_LEN + f.len()).sum();
    let mut out = Vec::with_capacity(GLOBAL_HEADER_LEN + body);
    out.extend_from_slice(&MAGIC_NSEC.to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&4u16.to_le_bytes());
    out.extend_from_slice(&0i32.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&WRITE_SNAPLEN.to_le_bytes());
    out.extend_from_slice(&LINKTYPE_ETHERNET.to_le_bytes());
    for (index, f) in frames.iter().enumerate() {
        let secs =
            u32::try_from(f.ts_ns / 1_000_000_000).map_err(|_| PcapError::TimestampOverflow {
                index,
                ts_ns: f.ts_ns,
            })?;
        let len = f.len() as u32;
        out.extend_from_slice(&secs.to_le_bytes());
        out.extend_from_slice(&((f.ts_ns % 1_000_000_000) as u32).to_le_bytes());
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&f.bytes);
    }
    Ok(out)
}

pub fn write_pcap(path: &Path, frames: &[RawFrame]) -> Result<(), PcapError> {
    let image = encode_pcap(frames)?;
    fs::write(path, image).map_err(|source| PcapError::Io {
        path: path.display().to_string(),
        source,
    })
}
