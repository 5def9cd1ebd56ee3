//! End-to-end replay: frames through the datapath, alerts through the
//! controller, totals into a [`Report`].

mod oracle;
mod pcap;
mod report;

use std::collections::{BTreeMap, HashMap};
use std::net::Ipv4Addr;
use std::sync::mpsc::{self, Receiver, TrySendError};
use std::thread;
use std::time::{Duration, Instant};

use crate::controller::{
    ActionRecord, AlertLog, BlocklistStore, Controller, MockExecutor, MockNotifier,
};
use crate::datapath::{
    AlertEvent, ConfigError, DatapathCommand, FilterConfig, FilterState, Verdict,
};
use crate::packet::{parse_frame, ParseResult, RawFrame};
use crate::traffic::Role;

pub use oracle::{first_divergence, oracle_verdicts};
pub use pcap::{
    encode_pcap, parse_pcap, read_pcap, write_pcap, PcapError, PcapHeader, TsResolution,
};
pub use report::{write_report, Report, ReportError, ReportFormat, SourceStats, INVALID_SOURCE};

/// Capacity of the datapath → controller alert queue.
pub const ALERT_QUEUE_CAPACITY: usize = 1024;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub label: String,
    pub filter: FilterConfig,
    pub roles: BTreeMap<Ipv4Addr, Role>,
    pub input_resorted: bool,
}

/// What the controller context did during a run.
#[derive(Debug, Default)]
pub struct ControllerSummary {
    pub alerts_handled: u64,
    pub actions: Vec<ActionRecord>,
    pub response_latencies: Vec<Duration>,
    pub failures: u64,
}

pub struct RunResult {
    pub report: Report,
    pub controller: Controller,
    pub summary: ControllerSummary,
    pub state: FilterState,
}

/// A controller with an in-memory store and recording mocks.
pub fn mock_controller() -> Controller {
    Controller::new(
        BlocklistStore::in_memory(),
        Box::new(MockExecutor::new()),
        Box::new(MockNotifier::new()),
        AlertLog::default(),
    )
}

/// Stably sorts frames by timestamp; returns whether anything was out of order.
pub fn sort_frames(frames: &mut [RawFrame]) -> bool {
    let unsorted = frames.windows(2).any(|w| w[1].ts_ns < w[0].ts_ns);
    if unsorted {
        frames.sort_by_key(|f| f.ts_ns);
    }
    unsorted
}

/// Replays `frames` with a mock controller.
pub fn run_engine<I>(frames: I, options: &RunOptions) -> Result<Report, ConfigError>
where
    I: IntoIterator<Item = RawFrame>,
{
    Ok(Engine::new(options.clone(), mock_controller())?
        .run(frames)
        .report)
}

/// Datapath-only verdict sequence, for comparison with [`oracle_verdicts`].
pub fn datapath_verdicts(
    frames: &[RawFrame],
    config: FilterConfig,
) -> Result<Vec<Verdict>, ConfigError> {
    let mut state = FilterState::new(config)?;
    Ok(frames.iter().map(|f| state.process_packet(f).0).collect())
}

#[derive(Default, Clone, Copy)]
struct Tally {
    sent: u64,
    passed: u64,
    dropped: u64,
    first_ts: u64,
}

pub struct Engine {
    options: RunOptions,
    state: FilterState,
    controller: Controller,
    commands: Option<Receiver<DatapathCommand>>,
}

impl Engine {
    /// Blocks already in the controller's store are installed into the datapath.
    pub fn new(options: RunOptions, controller: Controller) -> Result<Self, ConfigError> {
        let mut state = FilterState::new(options.filter)?;
        for rule in controller.store().rules() {
            state.install_block(rule.src_ip, rule.created_at_ms.saturating_mul(1_000_000));
        }
        Ok(Self {
            options,
            state,
            controller,
            commands: None,
        })
    }

    /// Commands on this queue are applied between packets.
    pub fn with_commands(mut self, commands: Receiver<DatapathCommand>) -> Self {
        self.commands = Some(commands);
        self
    }

    pub fn run<I>(self, frames: I) -> RunResult
    where
        I: IntoIterator<Item = RawFrame>,
    {
        let Engine {
            options,
            mut state,
            mut controller,
            commands,
        } = self;
        let (tx, rx) = mpsc::sync_channel::<(AlertEvent, Instant)>(ALERT_QUEUE_CAPACITY);

        let (dp, summary) = thread::scope(|scope| {
            let ctl = scope.spawn(|| drain_alerts(&mut controller, rx));
            let dp = replay_frames(&mut state, frames, commands.as_ref(), &options.roles, tx);
            let summary = ctl.join().expect("controller thread panicked");
            (dp, summary)
        });

        let report = build_report(&options, &state, &dp, &summary);
        RunResult {
            report,
            controller,
            summary,
            state,
        }
    }
}

struct DatapathTotals {
    tallies: HashMap<Ipv4Addr, Tally>,
    invalid: Tally,
    first_alert: Option<AlertEvent>,
    first_attacker_ts: Option<u64>,
    busy: Duration,
    overflow: u64,
}

fn replay_frames<I>(
    state: &mut FilterState,
    frames: I,
    commands: Option<&Receiver<DatapathCommand>>,
    roles: &BTreeMap<Ipv4Addr, Role>,
    alerts: mpsc::SyncSender<(AlertEvent, Instant)>,
) -> DatapathTotals
where
    I: IntoIterator<Item = RawFrame>,
{
    let mut t = DatapathTotals {
        tallies: HashMap::new(),
        invalid: Tally::default(),
        first_alert: None,
        first_attacker_ts: None,
        busy: Duration::ZERO,
        overflow: 0,
    };

    for frame in frames {
        if let Some(rx) = commands {
            state.drain_commands(rx);
        }
        let started = Instant::now();
        let parsed = parse_frame(&frame);
        let (verdict, alert) = state.process_classified(&parsed, frame.ts_ns);
        t.busy += started.elapsed();

        let tally = match parsed {
            ParseResult::Parsed(p) => {
                if t.first_attacker_ts.is_none() && roles.get(&p.src_ip) == Some(&Role::Attacker) {
                    t.first_attacker_ts = Some(frame.ts_ns);
                }
                t.tallies.entry(p.src_ip).or_insert(Tally {
                    first_ts: frame.ts_ns,
                    ..Tally::default()
                })
            }
            _ => &mut t.invalid,
        };
        tally.sent += 1;
        if verdict.is_drop() {
            tally.dropped += 1;
        } else {
            tally.passed += 1;
        }

        if let Some(alert) = alert {
            t.first_alert.get_or_insert(alert);
            match alerts.try_send((alert, Instant::now())) {
                Ok(()) => {}
                Err(TrySendError::Full(_)) => t.overflow += 1,
                Err(TrySendError::Disconnected(_)) => t.overflow += 1,
            }
        }
    }
    t
}

fn drain_alerts(
    controller: &mut Controller,
    alerts: Receiver<(AlertEvent, Instant)>,
) -> ControllerSummary {
    let mut summary = ControllerSummary::default();
    for (alert, enqueued) in alerts {
        let actions = match controller.handle_alert(&alert) {
            Ok(actions) => actions,
            Err(e) => {
                summary.failures += 1;
                e.actions
            }
        };
        summary.response_latencies.push(enqueued.elapsed());
        summary.failures += actions.iter().filter(|a| !a.outcome.is_done()).count() as u64;
        summary.alerts_handled += 1;
        summary.actions.extend(actions);
    }
    summary
}

fn role_name(role: Option<Role>) -> &'static str {
    match role {
        Some(Role::Attacker) => "attacker",
        Some(Role::Benign) => "benign",
        None => "unknown",
    }
}

fn build_report(
    options: &RunOptions,
    state: &FilterState,
    dp: &DatapathTotals,
    summary: &ControllerSummary,
) -> Report {
    let counters = state.snapshot_counters();

    let mut sources: Vec<(&Ipv4Addr, &Tally)> = dp.tallies.iter().collect();
    sources.sort_by_key(|(ip, _)| u32::from(**ip));

    let mut per_source: Vec<SourceStats> = sources
        .iter()
        .map(|(ip, t)| SourceStats {
            src_ip: ip.to_string(),
            role: role_name(options.roles.get(ip).copied()).to_string(),
            sent: t.sent,
            passed: t.passed,
            dropped: t.dropped,
        })
        .collect();
    if dp.invalid.sent > 0 {
        per_source.push(SourceStats {
            src_ip: INVALID_SOURCE.to_string(),
            role: role_name(None).to_string(),
            sent: dp.invalid.sent,
            passed: dp.invalid.passed,
            dropped: dp.invalid.dropped,
        });
    }

    let by_role = |role: Role| {
        sources
            .iter()
            .filter(|(ip, _)| options.roles.get(ip) == Some(&role))
            .fold((0u64, 0u64), |(s, d), (_, t)| (s + t.sent, d + t.dropped))
    };
    let (attack_sent, attack_dropped) = by_role(Role::Attacker);
    let (_, benign_dropped) = by_role(Role::Benign);

    let detection_latency_ms = dp.first_alert.map(|a| {
        let origin = if options.roles.is_empty() {
            dp.tallies.get(&a.src_ip).map(|t| t.first_ts)
        } else {
            dp.first_attacker_ts
        };
        a.ts_ns.saturating_sub(origin.unwrap_or(a.ts_ns)) as f64 / 1e6
    });

    Report {
        label: options.label.clone(),
        threshold_pkts: options.filter.threshold_pkts,
        window_ms: options.filter.window_ms,
        counters,
        per_source,
        detection_latency_ms,
        drop_ratio_attackers: if attack_sent == 0 {
            0.0
        } else {
            attack_dropped as f64 / attack_sent as f64
        },
        benign_drop_count: benign_dropped,
        mean_processing_ns: if counters.total == 0 {
            0.0
        } else {
            dp.busy.as_nanos() as f64 / counters.total as f64
        },
        input_resorted: options.input_resorted,
        alerts_handled: summary.alerts_handled,
        alert_queue_overflow: dp.overflow,
        response_latency_ms_max: summary
            .response_latencies
            .iter()
            .max()
            .map(|d| d.as_secs_f64() * 1e3),
        controller_failures: summary.failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::RuleOrigin;
    use crate::packet::build_udp_frame;
    use crate::traffic::{builtin_scenario, ScenarioConfig, ScenarioStream};

    fn options_for(s: &ScenarioConfig) -> RunOptions {
        RunOptions {
            label: s.label.clone(),
            filter: FilterConfig::default(),
            roles: s.roles(),
            input_resorted: false,
        }
    }

    #[test]
    fn empty_stream_is_vacuous() {
        let r = run_engine(Vec::new(), &RunOptions::default()).unwrap();
        assert_eq!(r.counters, Default::default());
        assert_eq!(r.detection_latency_ms, None);
        assert!(r.per_source.is_empty());
        assert_eq!(r.drop_ratio_attackers, 0.0);
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert!(json["detection_latency_ms"].is_null());
        assert_eq!(json["counters"]["total"], 0);
    }

    #[test]
    fn benign_only_has_no_drops_or_alerts() {
        let s = builtin_scenario("benign-only").unwrap();
        let r = run_engine(ScenarioStream::new(&s).unwrap(), &options_for(&s)).unwrap();
        assert_eq!(r.benign_drop_count, 0);
        assert_eq!(r.counters.alerts_emitted, 0);
        assert_eq!(r.counters.total, 1000);
        assert_eq!(r.detection_latency_ms, None);
    }

    #[test]
    fn short_flood_report() {
        let mut s = builtin_scenario("pi-flood").unwrap();
        for f in &mut s.flows {
            f.duration_ms = 2000;
        }
        let r = run_engine(ScenarioStream::new(&s).unwrap(), &options_for(&s)).unwrap();
        assert_eq!(r.counters.total, 60_000 + 200);
        assert_eq!(r.counters.passed, 800 + 200);
        assert_eq!(r.counters.alerts_emitted, 1);
        assert_eq!(r.alerts_handled, 1);
        assert_eq!(r.benign_drop_count, 0);
        assert_eq!(r.drop_ratio_attackers, 59_200.0 / 60_000.0);
        assert_eq!(r.detection_latency_ms, Some(26.666666));
        let sent: u64 = r.per_source.iter().map(|s| s.sent).sum();
        assert_eq!(sent, r.counters.total);
    }

    #[test]
    fn invalid_frames_grouped() {
        let mut arp = vec![0u8; 42];
        arp[12..14].copy_from_slice(&[0x08, 0x06]);
        let frames = vec![
            RawFrame::new(arp, 0),
            RawFrame::new(vec![1, 2, 3], 1),
            build_udp_frame([1, 1, 1, 1].into(), [2, 2, 2, 2].into(), 1, 2, 0, 2).unwrap(),
        ];
        let r = run_engine(frames, &RunOptions::default()).unwrap();
        let invalid = r.per_source.last().unwrap();
        assert_eq!(invalid.src_ip, INVALID_SOURCE);
        assert_eq!((invalid.sent, invalid.passed, invalid.dropped), (2, 1, 1));
        assert_eq!(r.per_source[0].role, "unknown");
        let csv = r.to_csv().unwrap();
        assert_eq!(
            csv,
            "src_ip,role,sent,passed,dropped\n1.1.1.1,unknown,1,1,0\ninvalid,unknown,2,1,1\n_totals,,3,2,1\n"
        );
    }

    #[test]
    fn stored_blocks_are_preinstalled() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bl.csv");
        std::fs::write(&path, "1.1.1.1,5\n").unwrap();
        let store = BlocklistStore::open(&path).unwrap();
        assert_eq!(store.rules()[0].origin, RuleOrigin::LoadedFromDisk);
        let controller = Controller::new(
            store,
            Box::new(MockExecutor::new()),
            Box::new(MockNotifier::new()),
            AlertLog::default(),
        );
        let engine = Engine::new(RunOptions::default(), controller).unwrap();
        let frame = build_udp_frame([1, 1, 1, 1].into(), [2, 2, 2, 2].into(), 1, 2, 0, 0).unwrap();
        let result = engine.run(vec![frame]);
        assert_eq!(result.report.counters.dropped_blocklist, 1);
        assert_eq!(
            result.state.blocked_at([1, 1, 1, 1].into()),
            Some(5_000_000)
        );
    }

    #[test]
    fn unblock_command_applies_between_packets() {
        let (tx, rx) = mpsc::channel();
        let mut controller_store = BlocklistStore::in_memory();
        controller_store
            .insert(crate::controller::BlockRule {
                src_ip: [1, 1, 1, 1].into(),
                created_at_ms: 0,
                origin: RuleOrigin::LoadedFromDisk,
            })
            .unwrap();
        let controller = Controller::new(
            controller_store,
            Box::new(MockExecutor::new()),
            Box::new(MockNotifier::new()),
            AlertLog::default(),
        );
        tx.send(DatapathCommand::Unblock([1, 1, 1, 1].into()))
            .unwrap();
        let engine = Engine::new(RunOptions::default(), controller)
            .unwrap()
            .with_commands(rx);
        let frame = build_udp_frame([1, 1, 1, 1].into(), [2, 2, 2, 2].into(), 1, 2, 0, 0).unwrap();
        let result = engine.run(vec![frame]);
        assert_eq!(result.report.counters.passed, 1);
    }

    #[test]
    fn sorting_is_stable_and_flagged() {
        let mk = |b: u8, ts| RawFrame::new(vec![b], ts);
        let mut frames = vec![mk(1, 5), mk(2, 3), mk(3, 5), mk(4, 1)];
        assert!(sort_frames(&mut frames));
        let order: Vec<u8> = frames.iter().map(|f| f.bytes[0]).collect();
        assert_eq!(order, vec![4, 2, 1, 3]);
        assert!(!sort_frames(&mut frames));
    }
}
