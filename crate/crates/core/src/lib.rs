//! Portable per-source-IP DDoS mitigation engine.
//!
//! The [`datapath`] decides a verdict for each frame and raises alerts, the
//! [`controller`] turns alerts into firewall rules and notifications, the
//! [`traffic`] generator produces flood scenarios on a virtual clock, and
//! [`replay`] drives everything end to end and writes reports.

pub mod controller;
pub mod datapath;
pub mod packet;
pub mod replay;
pub mod traffic;

pub use controller::{
    ActionKind, ActionRecord, AlertLog, BlockRule, BlocklistStore, Controller, FirewallExecutor,
    MockExecutor, MockNotifier, Notifier, Outcome, RuleOrigin,
};
pub use datapath::{
    window_id, AlertEvent, DatapathCommand, DropReason, FilterConfig, FilterState, RateEntry,
    Verdict, VerdictCounters,
};
pub use packet::{
    build_udp_frame, compute_ipv4_checksum, parse_frame, ParseResult, ParsedPacket, RawFrame,
};
pub use replay::{
    oracle_verdicts, read_pcap, run_engine, write_pcap, write_report, Engine, Report, ReportFormat,
    RunOptions,
};
pub use traffic::{
    builtin_scenario, builtin_scenarios, generate_scenario, FlowSpec, Role, ScenarioConfig,
};
