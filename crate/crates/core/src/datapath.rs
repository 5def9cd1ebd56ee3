//! Per-source tumbling-window rate limiter with an absorbing blocklist.
//!
//! This is the in-process analogue of an XDP program plus its BPF maps: every
//! frame receives exactly one [`Verdict`], and the packet that pushes a source
//! over `threshold_pkts` within a window is dropped, blocklists the source and
//! yields one [`AlertEvent`].

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::net::Ipv4Addr;
use std::sync::mpsc::Receiver;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::packet::{parse_frame, ParseResult, RawFrame};

const NS_PER_MS: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub threshold_pkts: u64,
    pub window_ms: u64,
    pub table_capacity: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            threshold_pkts: 800,
            window_ms: 1000,
            table_capacity: 65536,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("threshold_pkts must be at least 1")]
    ZeroThreshold,
    #[error("window_ms must be at least 1")]
    ZeroWindow,
    #[error("table_capacity must be at least 1")]
    ZeroCapacity,
}

impl FilterConfig {
    /// A config whose threshold can never be reached; used for unfiltered baselines.
    pub fn unlimited(self) -> Self {
        Self {
            threshold_pkts: u64::MAX,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.threshold_pkts == 0 {
            return Err(ConfigError::ZeroThreshold);
        }
        if self.window_ms == 0 {
            return Err(ConfigError::ZeroWindow);
        }
        if self.table_capacity == 0 {
            return Err(ConfigError::ZeroCapacity);
        }
        Ok(())
    }
}

/// Epoch-aligned tumbling window index.
pub fn window_id(ts_ns: u64, window_ms: u64) -> u64 {
    ts_ns / (window_ms * NS_PER_MS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RateEntry {
    pub window_id: u64,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DropReason {
    RateExceeded,
    Blocklisted,
    Malformed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Drop(DropReason),
}

impl Verdict {
    pub fn is_drop(self) -> bool {
        matches!(self, Verdict::Drop(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlertEvent {
    pub src_ip: Ipv4Addr,
    pub observed_count: u64,
    pub window_id: u64,
    pub ts_ns: u64,
}

impl fmt::Display for AlertEvent {
    /// The alert log line, without the trailing newline.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ALERT ts_ns={} src={} count={} window={}",
            self.ts_ns, self.src_ip, self.observed_count, self.window_id
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictCounters {
    pub total: u64,
    pub passed: u64,
    pub passed_non_ipv4: u64,
    pub dropped_rate: u64,
    pub dropped_blocklist: u64,
    pub dropped_malformed: u64,
    pub alerts_emitted: u64,
}

impl VerdictCounters {
    pub fn is_conserved(&self) -> bool {
        self.total
            == self.passed
                + self.passed_non_ipv4
                + self.dropped_rate
                + self.dropped_blocklist
                + self.dropped_malformed
    }
}

/// Requests accepted by the datapath owner between packets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatapathCommand {
    Unblock(Ipv4Addr),
}

#[derive(Debug, Clone)]
pub struct FilterState {
    config: FilterConfig,
    rate_table: HashMap<Ipv4Addr, RateEntry>,
    // (window_id, ip) for every rate_table entry; its first element is the eviction victim.
    by_age: BTreeSet<(u64, u32)>,
    blocklist: HashMap<Ipv4Addr, u64>,
    counters: VerdictCounters,
}

impl FilterState {
    pub fn new(config: FilterConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(Self {
            config,
            rate_table: HashMap::new(),
            by_age: BTreeSet::new(),
            blocklist: HashMap::new(),
            counters: VerdictCounters::default(),
        })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    pub fn rate_entry(&self, ip: Ipv4Addr) -> Option<RateEntry> {
        self.rate_table.get(&ip).copied()
    }

    pub fn tracked_sources(&self) -> usize {
        self.rate_table.len()
    }

    pub fn is_blocked(&self, ip: Ipv4Addr) -> bool {
        self.blocklist.contains_key(&ip)
    }

    pub fn blocked_at(&self, ip: Ipv4Addr) -> Option<u64> {
        self.blocklist.get(&ip).copied()
    }

    pub fn blocked_count(&self) -> usize {
        self.blocklist.len()
    }

    /// Installs a block without emitting an alert (e.g. rules restored from disk).
    pub fn install_block(&mut self, ip: Ipv4Addr, blocked_at_ns: u64) {
        self.forget(ip);
        self.blocklist.entry(ip).or_insert(blocked_at_ns);
    }

    /// Removes `ip` from the blocklist and clears its rate entry.
    pub fn unblock(&mut self, ip: Ipv4Addr) -> bool {
        let removed = self.blocklist.remove(&ip).is_some();
        if removed {
            self.forget(ip);
        }
        removed
    }

    /// String-boundary form of [`FilterState::unblock`].
    pub fn unblock_str(&mut self, ip: &str) -> Result<bool, InvalidAddress> {
        Ok(self.unblock(parse_ipv4(ip)?))
    }

    /// Applies every command currently queued, without blocking.
    pub fn drain_commands(&mut self, commands: &Receiver<DatapathCommand>) -> usize {
        let mut n = 0;
        while let Ok(cmd) = commands.try_recv() {
            match cmd {
                DatapathCommand::Unblock(ip) => {
                    self.unblock(ip);
                }
            }
            n += 1;
        }
        n
    }

    pub fn snapshot_counters(&self) -> VerdictCounters {
        self.counters
    }

    pub fn process_packet(&mut self, frame: &RawFrame) -> (Verdict, Option<AlertEvent>) {
        self.process_classified(&parse_frame(frame), frame.ts_ns)
    }

    /// [`FilterState::process_packet`] for a frame the caller has already parsed.
    pub fn process_classified(
        &mut self,
        parsed: &ParseResult,
        ts_ns: u64,
    ) -> (Verdict, Option<AlertEvent>) {
        self.counters.total += 1;
        let pkt = match parsed {
            ParseResult::Parsed(p) => p,
            ParseResult::NonIpv4 => {
                self.counters.passed_non_ipv4 += 1;
                return (Verdict::Pass, None);
            }
            ParseResult::Malformed(_) => {
                self.counters.dropped_malformed += 1;
                return (Verdict::Drop(DropReason::Malformed), None);
            }
        };
        let src = pkt.src_ip;

        if self.blocklist.contains_key(&src) {
            self.counters.dropped_blocklist += 1;
            return (Verdict::Drop(DropReason::Blocklisted), None);
        }

        let window = window_id(ts_ns, self.config.window_ms);
        let count = self.count(src, window);

        if count <= self.config.threshold_pkts {
            self.counters.passed += 1;
            return (Verdict::Pass, None);
        }

        // Only the (threshold + 1)-th packet gets here: the source is blocked right after.
        self.forget(src);
        self.blocklist.insert(src, ts_ns);
        self.counters.dropped_rate += 1;
        self.counters.alerts_emitted += 1;
        let alert = AlertEvent {
            src_ip: src,
            observed_count: count,
            window_id: window,
            ts_ns,
        };
        (Verdict::Drop(DropReason::RateExceeded), Some(alert))
    }

    /// Bumps the counter for `src` in `window` and returns the new count.
    fn count(&mut self, src: Ipv4Addr, window: u64) -> u64 {
        let key = u32::from(src);
        if let Some(entry) = self.rate_table.get_mut(&src) {
            if entry.window_id == window {
                entry.count += 1;
                return entry.count;
            }
            self.by_age.remove(&(entry.window_id, key));
            self.by_age.insert((window, key));
            *entry = RateEntry {
                window_id: window,
                count: 1,
            };
            return 1;
        }

        if self.rate_table.len() >= self.config.table_capacity {
            if let Some((_, victim)) = self.by_age.pop_first() {
                self.rate_table.remove(&Ipv4Addr::from(victim));
            }
        }
        self.rate_table.insert(
            src,
            RateEntry {
                window_id: window,
                count: 1,
            },
        );
        self.by_age.insert((window, key));
        1
    }

    fn forget(&mut self, ip: Ipv4Addr) {
        if let Some(entry) = self.rate_table.remove(&ip) {
            self.by_age.remove(&(entry.window_id, u32::from(ip)));
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid IPv4 address: {0:?}")]
pub struct InvalidAddress(pub String);

/// Parses a dotted-quad IPv4 address.
pub fn parse_ipv4(s: &str) -> Result<Ipv4Addr, InvalidAddress> {
    s.trim().parse().map_err(|_| InvalidAddress(s.to_string()))
}
