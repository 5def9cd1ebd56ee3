//! Brute-force reference for the datapath's verdicts.
//!
//! Recounts every packet from scratch by scanning earlier packets, with a plain
//! list for blocked sources. It is quadratic on purpose and shares nothing with
//! `datapath` beyond the verdict vocabulary. Expects non-decreasing timestamps
//! and ignores `table_capacity`, so it agrees with the datapath only while the
//! number of distinct sources fits the table.

use std::net::Ipv4Addr;

use crate::datapath::{DropReason, FilterConfig, Verdict};
use crate::packet::{parse_frame, ParseResult, RawFrame};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Source(Ipv4Addr),
    NonIpv4,
    Malformed,
}

pub fn oracle_verdicts(frames: &[RawFrame], config: &FilterConfig) -> Vec<Verdict> {
    let window_ns = u128::from(config.window_ms) * 1_000_000;
    let window_of = |ts: u64| u128::from(ts) / window_ns;

    let classes: Vec<Class> = frames
        .iter()
        .map(|f| match parse_frame(f) {
            ParseResult::Parsed(p) => Class::Source(p.src_ip),
            ParseResult::NonIpv4 => Class::NonIpv4,
            ParseResult::Malformed(_) => Class::Malformed,
        })
        .collect();

    let mut blocked: Vec<Ipv4Addr> = Vec::new();
    let mut verdicts = Vec::with_capacity(frames.len());

    for (i, frame) in frames.iter().enumerate() {
        let src = match classes[i] {
            Class::NonIpv4 => {
                verdicts.push(Verdict::Pass);
                continue;
            }
            Class::Malformed => {
                verdicts.push(Verdict::Drop(DropReason::Malformed));
                continue;
            }
            Class::Source(s) => s,
        };
        if blocked.contains(&src) {
            verdicts.push(Verdict::Drop(DropReason::Blocklisted));
            continue;
        }

        let window = window_of(frame.ts_ns);
        let mut count: u64 = 1;
        for j in (0..i).rev() {
            if window_of(frames[j].ts_ns) != window {
                break;
            }
            if classes[j] == Class::Source(src) {
                count += 1;
            }
        }

        if count <= config.threshold_pkts {
            verdicts.push(Verdict::Pass);
        } else {
            blocked.push(src);
            verdicts.push(Verdict::Drop(DropReason::RateExceeded));
        }
    }
    verdicts
}

/// Index of the first position where the two sequences differ, including length mismatch.
pub fn first_divergence(a: &[Verdict], b: &[Verdict]) -> Option<usize> {
    a.iter()
        .zip(b)
        .position(|(x, y)| x != y)
        .or_else(|| (a.len() != b.len()).then(|| a.len().min(b.len())))
}
