//! Ethernet II / IPv4 / UDP / TCP header parsing and UDP frame construction.
//!
//! Parsing never fails: every byte sequence is classified as [`ParseResult::Parsed`],
//! [`ParseResult::NonIpv4`] or [`ParseResult::Malformed`].

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ETH_HEADER_LEN: usize = 14;
pub const IPV4_MIN_HEADER_LEN: usize = 20;
pub const UDP_HEADER_LEN: usize = 8;
pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const IPPROTO_TCP: u8 = 6;
pub const IPPROTO_UDP: u8 = 17;

/// Largest UDP payload that still fits a 1500-byte MTU.
pub const MAX_UDP_PAYLOAD: usize = 1500 - IPV4_MIN_HEADER_LEN - UDP_HEADER_LEN;

/// A captured layer-2 frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawFrame {
    pub bytes: Vec<u8>,
    /// Capture time in nanoseconds since the epoch (virtual or real).
    pub ts_ns: u64,
}

impl RawFrame {
    pub fn new(bytes: Vec<u8>, ts_ns: u64) -> Self {
        Self { bytes, ts_ns }
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

/// Decoded header fields of an IPv4 frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParsedPacket {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub ip_proto: u8,
    /// `(src_port, dst_port)`, present only for UDP/TCP with a complete port pair.
    pub ports: Option<(u16, u16)>,
    pub frame_len: usize,
    pub ts_ns: u64,
}

impl ParsedPacket {
    pub fn src_port(&self) -> Option<u16> {
        self.ports.map(|(s, _)| s)
    }

    pub fn dst_port(&self) -> Option<u16> {
        self.ports.map(|(_, d)| d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MalformedReason {
    TruncatedEthernet,
    TruncatedIpv4,
    BadIhl,
    BadTotalLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseResult {
    Parsed(ParsedPacket),
    NonIpv4,
    Malformed(MalformedReason),
}

fn be16(b: &[u8], off: usize) -> u16 {
    u16::from_be_bytes([b[off], b[off + 1]])
}

fn ipv4_at(b: &[u8], off: usize) -> Ipv4Addr {
    Ipv4Addr::new(b[off], b[off + 1], b[off + 2], b[off + 3])
}

/// Classifies a frame and decodes its IPv4 and transport headers.
pub fn parse_frame(frame: &RawFrame) -> ParseResult {
    let b = frame.bytes.as_slice();
    if b.len() < ETH_HEADER_LEN {
        return ParseResult::Malformed(MalformedReason::TruncatedEthernet);
    }
    if be16(b, 12) != ETHERTYPE_IPV4 {
        return ParseResult::NonIpv4;
    }

    let ip = &b[ETH_HEADER_LEN..];
    if ip.len() < IPV4_MIN_HEADER_LEN {
        return ParseResult::Malformed(MalformedReason::TruncatedIpv4);
    }
    let version = ip[0] >> 4;
    let ihl = usize::from(ip[0] & 0x0f);
    // A version other than 4 under the IPv4 ethertype is treated like a bad IHL:
    // the header cannot be interpreted.
    if version != 4 || ihl < 5 {
        return ParseResult::Malformed(MalformedReason::BadIhl);
    }
    let header_len = ihl * 4;
    if ip.len() < header_len {
        return ParseResult::Malformed(MalformedReason::TruncatedIpv4);
    }
    let total_len = usize::from(be16(ip, 2));
    if total_len < header_len || total_len > ip.len() {
        return ParseResult::Malformed(MalformedReason::BadTotalLength);
    }

    let ip_proto = ip[9];
    let fragment_offset = be16(ip, 6) & 0x1fff;
    let transport = &ip[header_len..total_len];
    let ports = match ip_proto {
        IPPROTO_UDP | IPPROTO_TCP if fragment_offset == 0 && transport.len() >= 4 => {
            Some((be16(transport, 0), be16(transport, 2)))
        }
        _ => None,
    };

    ParseResult::Parsed(ParsedPacket {
        src_ip: ipv4_at(ip, 12),
        dst_ip: ipv4_at(ip, 16),
        ip_proto,
        ports,
        frame_len: b.len(),
        ts_ns: frame.ts_ns,
    })
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PacketError {
    #[error("udp payload of {0} bytes exceeds the {MAX_UDP_PAYLOAD}-byte MTU budget")]
    PayloadTooLarge(usize),
    #[error("checksum input has odd length {0}")]
    OddLength(usize),
}

/// RFC 1071 Internet checksum over 16-bit big-endian words.
///
/// The caller zeroes the checksum field before calling. Writing the result back
/// into the header makes the whole header sum to zero.
pub fn compute_ipv4_checksum(header: &[u8]) -> Result<u16, PacketError> {
    if header.len() & 1 != 0 {
        return Err(PacketError::OddLength(header.len()));
    }
    Ok(!ones_complement_sum(header))
}

/// Folded ones'-complement sum. A header carrying a correct checksum sums to `0xffff`.
pub(crate) fn ones_complement_sum(data: &[u8]) -> u16 {
    let mut sum: u32 = data
        .chunks_exact(2)
        .map(|w| u32::from(u16::from_be_bytes([w[0], w[1]])))
        .sum();
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    sum as u16
}

/// Returns true if `header` (checksum included) verifies.
pub fn ipv4_checksum_ok(header: &[u8]) -> bool {
    header.len() & 1 == 0 && !ones_complement_sum(header) == 0
}

fn mac_for(ip: Ipv4Addr) -> [u8; 6] {
    let o = ip.octets();
    [0x02, 0x00, o[0], o[1], o[2], o[3]]
}

/// Builds a well-formed Ethernet/IPv4/UDP frame with a zero-filled payload.
///
/// MAC addresses are locally administered and derived from the IPs. The IPv4
/// header has DF set, TTL 64 and a valid checksum; the UDP checksum is 0.
pub fn build_udp_frame(
    src_ip: Ipv4Addr,
    dst_ip: Ipv4Addr,
    src_port: u16,
    dst_port: u16,
    payload_len: usize,
    ts_ns: u64,
) -> Result<RawFrame, PacketError> {
    if payload_len > MAX_UDP_PAYLOAD {
        return Err(PacketError::PayloadTooLarge(payload_len));
    }
    let udp_len = UDP_HEADER_LEN + payload_len;
    let ip_total = IPV4_MIN_HEADER_LEN + udp_len;
    let mut b = Vec::with_capacity(ETH_HEADER_LEN + ip_total);

    b.extend_from_slice(&mac_for(dst_ip));
    b.extend_from_slice(&mac_for(src_ip));
    b.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());

    let ip_start = b.len();
    b.extend_from_slice(&[0x45, 0x00]);
    b.extend_from_slice(&(ip_total as u16).to_be_bytes());
    b.extend_from_slice(&[0x00, 0x00, 0x40, 0x00, 64, IPPROTO_UDP, 0x00, 0x00]);
    b.extend_from_slice(&src_ip.octets());
    b.extend_from_slice(&dst_ip.octets());
    let csum = compute_ipv4_checksum(&b[ip_start..])?;
    b[ip_start + 10..ip_start + 12].copy_from_slice(&csum.to_be_bytes());

    b.extend_from_slice(&src_port.to_be_bytes());
    b.extend_from_slice(&dst_port.to_be_bytes());
    b.extend_from_slice(&(udp_len as u16).to_be_bytes());
    b.extend_from_slice(&[0x00, 0x00]);
    b.resize(b.len() + payload_len, 0);

    Ok(RawFrame::new(b, ts_ns))
}
