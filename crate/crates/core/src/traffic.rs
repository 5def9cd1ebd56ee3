//! Deterministic flood and benign-client scenarios on a virtual clock.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fs;
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::packet::{build_udp_frame, RawFrame, MAX_UDP_PAYLOAD};

const NS_PER_SEC: u128 = 1_000_000_000;
const NS_PER_MS: u64 = 1_000_000;

const ATTACK_SRC_PORT: u16 = 40000;
const BENIGN_SRC_PORT: u16 = 50000;
const VICTIM_PORT: u16 = 9999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    #[serde(alias = "Attacker")]
    Attacker,
    #[serde(alias = "Benign")]
    Benign,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub rate_pps: u64,
    #[serde(default)]
    pub start_ms: u64,
    pub duration_ms: u64,
    #[serde(default)]
    pub payload_len: usize,
    pub role: Role,
}

impl FlowSpec {
    /// `floor(rate_pps * duration_ms / 1000)`.
    pub fn packet_count(&self) -> u64 {
        (u128::from(self.rate_pps) * u128::from(self.duration_ms) / 1000) as u64
    }

    /// Timestamp of the `seq`-th packet (0-based).
    pub fn packet_ts_ns(&self, seq: u64) -> u64 {
        let offset = u128::from(seq) * NS_PER_SEC / u128::from(self.rate_pps);
        self.start_ms * NS_PER_MS + offset as u64
    }

    fn src_port(&self) -> u16 {
        match self.role {
            Role::Attacker => ATTACK_SRC_PORT,
            Role::Benign => BENIGN_SRC_PORT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub label: String,
    pub flows: Vec<FlowSpec>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario has no flows")]
    NoFlows,
    #[error("flow {index}: rate_pps must be at least 1")]
    ZeroRate { index: usize },
    #[error("flow {index}: duration_ms must be at least 1")]
    ZeroDuration { index: usize },
    #[error("flow {index}: payload_len {len} exceeds {MAX_UDP_PAYLOAD}")]
    PayloadTooLarge { index: usize, len: usize },
    #[error("reading scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing scenario {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.flows.is_empty() {
            return Err(ScenarioError::NoFlows);
        }
        for (index, f) in self.flows.iter().enumerate() {
            if f.rate_pps == 0 {
                return Err(ScenarioError::ZeroRate { index });
            }
            if f.duration_ms == 0 {
                return Err(ScenarioError::ZeroDuration { index });
            }
            if f.payload_len > MAX_UDP_PAYLOAD {
                return Err(ScenarioError::PayloadTooLarge {
                    index,
                    len: f.payload_len,
                });
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: Self = serde_json::from_str(&text).map_err(|source| ScenarioError::Json {
            path: path.display().to_string(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Source → role. A source listed with both roles is reported as an attacker.
    pub fn roles(&self) -> BTreeMap<Ipv4Addr, Role> {
        let mut roles = BTreeMap::new();
        for f in &self.flows {
            roles
                .entry(f.src_ip)
                .and_modify(|r: &mut Role| *r = (*r).min(f.role))
                .or_insert(f.role);
        }
        roles
    }

    pub fn total_packets(&self) -> u64 {
        self.flows.iter().map(FlowSpec::packet_count).sum()
    }

    pub fn has_attackers(&self) -> bool {
        self.flows.iter().any(|f| f.role == Role::Attacker)
    }
}

/// Lazily merged frame stream of a scenario, in `(ts, src_ip, seq)` order.
pub struct ScenarioStream {
    flows: Vec<FlowSpec>,
    // (ts_ns, src_ip, seq, flow index)
    heap: BinaryHeap<Reverse<(u64, u32, u64, usize)>>,
}

impl ScenarioStream {
    pub fn new(config: &ScenarioConfig) -> Result<Self, ScenarioError> {
        config.validate()?;
        let flows = config.flows.clone();
        let heap = flows
            .iter()
            .enumerate()
            .filter(|(_, f)| f.packet_count() > 0)
            .map(|(i, f)| Reverse((f.packet_ts_ns(0), u32::from(f.src_ip), 0, i)))
            .collect();
        Ok(Self { flows, heap })
    }
}

impl Iterator for ScenarioStream {
    type Item = RawFrame;

    fn next(&mut self) -> Option<RawFrame> {
        let Reverse((ts, src, seq, idx)) = self.heap.pop()?;
        let flow = &self.flows[idx];
        if seq + 1 < flow.packet_count() {
            self.heap
                .push(Reverse((flow.packet_ts_ns(seq + 1), src, seq + 1, idx)));
        }
        // payload_len was validated in new().
        let frame = build_udp_frame(
            flow.src_ip,
            flow.dst_ip,
            flow.src_port(),
            VICTIM_PORT,
            flow.payload_len,
            ts,
        )
        .expect("payload validated");
        Some(frame)
    }
}

/// Materializes the full time-ordered frame sequence of a scenario.
pub fn generate_scenario(config: &ScenarioConfig) -> Result<Vec<RawFrame>, ScenarioError> {
    Ok(ScenarioStream::new(config)?.collect())
}

const VICTIM: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 1);
const ATTACKER: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 66);
const BENIGN_CLIENT: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 20);
// Smallest payload that still yields a 60-byte minimum Ethernet frame.
const SCENARIO_PAYLOAD: usize = 18;

fn flow(src_ip: Ipv4Addr, rate_pps: u64, duration_ms: u64, role: Role) -> FlowSpec {
    FlowSpec {
        src_ip,
        dst_ip: VICTIM,
        rate_pps,
        start_ms: 0,
        duration_ms,
        payload_len: SCENARIO_PAYLOAD,
        role,
    }
}

/// The three built-in scenarios: `pi-flood`, `docker-flood` and `benign-only`.
pub fn builtin_scenarios() -> Vec<ScenarioConfig> {
    let benign = flow(BENIGN_CLIENT, 100, 10_000, Role::Benign);
    vec![
        ScenarioConfig {
            label: "pi-flood".into(),
            flows: vec![
                flow(ATTACKER, 30_000, 10_000, Role::Attacker),
                benign.clone(),
            ],
        },
        ScenarioConfig {
            label: "docker-flood".into(),
            flows: vec![
                flow(ATTACKER, 100_000, 10_000, Role::Attacker),
                benign.clone(),
            ],
        },
        ScenarioConfig {
            label: "benign-only".into(),
            flows: vec![benign],
        },
    ]
}

pub fn builtin_scenario(name: &str) -> Option<ScenarioConfig> {
    builtin_scenarios().into_iter().find(|s| s.label == name)
}
