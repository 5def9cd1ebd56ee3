use std::collections::{BTreeSet, HashMap};
use std::net::Ipv4Addr;

use edgeguard_core::controller::{load_blocklist, persist_blocklist, BlockRule, RuleOrigin};
use edgeguard_core::packet::{
    build_udp_frame, compute_ipv4_checksum, ipv4_checksum_ok, parse_frame, ParseResult, RawFrame,
    MAX_UDP_PAYLOAD,
};
use edgeguard_core::replay::{datapath_verdicts, encode_pcap, oracle_verdicts, parse_pcap};
use edgeguard_core::traffic::{generate_scenario, FlowSpec, Role, ScenarioConfig};
use edgeguard_core::{window_id, DropReason, FilterConfig, FilterState, Verdict};
use proptest::prelude::*;

const VICTIM: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 1);

fn source(i: u8) -> Ipv4Addr {
    Ipv4Addr::new(10, 0, 1, i)
}

/// One trace step: (source index or 255 for a junk frame, gap to previous frame in ns).
fn trace_strategy() -> impl Strategy<Value = Vec<(u8, u64)>> {
    let step = (prop_oneof![20 => 0u8..10, 1 => Just(255u8)], 0u64..400_000);
    prop::collection::vec(step, 0..5000)
}

fn materialize(steps: &[(u8, u64)]) -> Vec<RawFrame> {
    let mut ts = 0u64;
    steps
        .iter()
        .enumerate()
        .map(|(i, &(src, gap))| {
            ts += gap;
            if src == 255 {
                // Alternate ARP and truncated frames.
                if i % 2 == 0 {
                    let mut b = vec![0u8; 42];
                    b[12..14].copy_from_slice(&[0x08, 0x06]);
                    RawFrame::new(b, ts)
                } else {
                    RawFrame::new(vec![0u8; 9], ts)
                }
            } else {
                build_udp_frame(source(src), VICTIM, 40000, 9999, 0, ts).unwrap()
            }
        })
        .collect()
}

fn src_of(f: &RawFrame) -> Option<Ipv4Addr> {
    match parse_frame(f) {
        ParseResult::Parsed(p) => Some(p.src_ip),
        _ => None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn datapath_matches_oracle(
        steps in trace_strategy(),
        threshold in 1u64..=1000,
        window_ms in 100u64..=2000,
    ) {
        let frames = materialize(&steps);
        let cfg = FilterConfig { threshold_pkts: threshold, window_ms, ..FilterConfig::default() };
        prop_assert_eq!(datapath_verdicts(&frames, cfg).unwrap(), oracle_verdicts(&frames, &cfg));
    }

    #[test]
    fn datapath_invariants(
        steps in trace_strategy(),
        threshold in 1u64..=300,
        window_ms in 100u64..=2000,
    ) {
        let frames = materialize(&steps);
        let cfg = FilterConfig { threshold_pkts: threshold, window_ms, ..FilterConfig::default() };
        let mut state = FilterState::new(cfg).unwrap();

        let mut passes: HashMap<(Ipv4Addr, u64), u64> = HashMap::new();
        let mut arrivals: HashMap<(Ipv4Addr, u64), u64> = HashMap::new();
        let mut dropped: HashMap<Ipv4Addr, u64> = HashMap::new();
        let mut alerted: BTreeSet<Ipv4Addr> = BTreeSet::new();
        let mut verdicts = Vec::new();

        for f in &frames {
            let (v, alert) = state.process_packet(f);
            verdicts.push(v);
            prop_assert!(state.snapshot_counters().is_conserved());
            let Some(src) = src_of(f) else { continue };
            let w = window_id(f.ts_ns, window_ms);
            *arrivals.entry((src, w)).or_default() += 1;

            if alerted.contains(&src) {
                prop_assert_eq!(v, Verdict::Drop(DropReason::Blocklisted));
            }
            match v {
                Verdict::Pass => *passes.entry((src, w)).or_default() += 1,
                Verdict::Drop(_) => *dropped.entry(src).or_default() += 1,
            }
            if let Some(a) = alert {
                prop_assert_eq!(a.observed_count, threshold + 1);
                prop_assert_eq!(v, Verdict::Drop(DropReason::RateExceeded));
                prop_assert!(alerted.insert(a.src_ip), "second alert for {}", a.src_ip);
            }
        }

        prop_assert!(passes.values().all(|&n| n <= threshold));
        let c = state.snapshot_counters();
        prop_assert_eq!(c.alerts_emitted as usize, alerted.len());
        prop_assert_eq!(state.blocked_count(), alerted.len());

        for i in 0..10 {
            let s = source(i);
            let calm = arrivals.iter().filter(|((ip, _), _)| *ip == s).all(|(_, &n)| n <= threshold);
            if calm {
                prop_assert_eq!(dropped.get(&s).copied().unwrap_or(0), 0);
            }
        }

        let again = datapath_verdicts(&frames, cfg).unwrap();
        prop_assert_eq!(again, verdicts);
    }

    #[test]
    fn build_parse_round_trip(
        src in any::<u32>(), dst in any::<u32>(),
        sport in any::<u16>(), dport in any::<u16>(),
        payload in 0usize..=MAX_UDP_PAYLOAD, ts in any::<u64>(),
    ) {
        let (src, dst) = (Ipv4Addr::from(src), Ipv4Addr::from(dst));
        let f = build_udp_frame(src, dst, sport, dport, payload, ts).unwrap();
        prop_assert_eq!(f.len(), 42 + payload);
        prop_assert!(ipv4_checksum_ok(&f.bytes[14..34]));
        let ParseResult::Parsed(p) = parse_frame(&f) else {
            return Err(TestCaseError::fail("not parsed"));
        };
        prop_assert_eq!((p.src_ip, p.dst_ip, p.ip_proto), (src, dst, 17));
        prop_assert_eq!(p.ports, Some((sport, dport)));
        prop_assert_eq!((p.frame_len, p.ts_ns), (f.len(), ts));
    }

    #[test]
    fn parse_is_total(bytes in prop::collection::vec(any::<u8>(), 0..65536)) {
        let r = parse_frame(&RawFrame::new(bytes.clone(), 0));
        if let ParseResult::Parsed(p) = r {
            prop_assert_eq!(p.frame_len, bytes.len());
            prop_assert_eq!(p.ports.is_some(), p.src_port().is_some() && p.dst_port().is_some());
        }
    }

    #[test]
    fn parse_is_total_near_valid(
        payload in 0usize..64,
        flips in prop::collection::vec((0usize..120, any::<u8>()), 1..6),
        cut in 0usize..120,
    ) {
        let mut b = build_udp_frame(source(1), VICTIM, 1, 2, payload, 0).unwrap().bytes;
        for (at, v) in flips {
            if at < b.len() { b[at] = v; }
        }
        b.truncate(cut.max(1));
        let _ = parse_frame(&RawFrame::new(b, 0));
    }

    #[test]
    fn checksum_verifies(words in prop::collection::vec(any::<u16>(), 10..=30)) {
        let mut h: Vec<u8> = words.iter().flat_map(|w| w.to_be_bytes()).collect();
        h[10] = 0;
        h[11] = 0;
        let c = compute_ipv4_checksum(&h).unwrap();
        h[10..12].copy_from_slice(&c.to_be_bytes());
        prop_assert_eq!(compute_ipv4_checksum(&h).unwrap(), 0);
    }

    #[test]
    fn pcap_round_trip(
        frames in prop::collection::vec(
            (prop::collection::vec(any::<u8>(), 0..200), 0u64..4_000_000_000_000_000_000),
            0..50,
        )
    ) {
        let frames: Vec<RawFrame> = frames.into_iter().map(|(b, ts)| RawFrame::new(b, ts)).collect();
        let (_, back) = parse_pcap(&encode_pcap(&frames).unwrap()).unwrap();
        prop_assert_eq!(back, frames);
    }

    #[test]
    fn blocklist_file_round_trip(
        rules in prop::collection::btree_map(any::<u32>(), any::<u64>(), 0..40)
    ) {
        let rules: Vec<BlockRule> = rules
            .into_iter()
            .map(|(ip, ms)| BlockRule { src_ip: ip.into(), created_at_ms: ms, origin: RuleOrigin::AlertTriggered })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bl.csv");
        persist_blocklist(&path, &rules).unwrap();
        let back = load_blocklist(&path).unwrap();
        prop_assert_eq!(back.len(), rules.len());
        for (a, b) in back.iter().zip(&rules) {
            prop_assert_eq!((a.src_ip, a.created_at_ms), (b.src_ip, b.created_at_ms));
            prop_assert_eq!(a.origin, RuleOrigin::LoadedFromDisk);
        }
    }

    #[test]
    fn generator_orders_and_counts(
        flows in prop::collection::vec((0u8..4, 1u64..3000, 0u64..500, 1u64..1500), 1..5)
    ) {
        let cfg = ScenarioConfig {
            label: "p".into(),
            flows: flows.iter().map(|&(s, rate, start, dur)| FlowSpec {
                src_ip: source(s),
                dst_ip: VICTIM,
                rate_pps: rate,
                start_ms: start,
                duration_ms: dur,
                payload_len: 0,
                role: if s == 0 { Role::Attacker } else { Role::Benign },
            }).collect(),
        };
        let frames = generate_scenario(&cfg).unwrap();
        prop_assert!(frames.windows(2).all(|w| w[0].ts_ns <= w[1].ts_ns));
        let want: u64 = cfg.flows.iter().map(|f| f.rate_pps * f.duration_ms / 1000).sum();
        prop_assert_eq!(frames.len() as u64, want);
        prop_assert_eq!(generate_scenario(&cfg).unwrap(), frames);
    }
}

#[test]
fn eviction_keeps_table_bounded() {
    let cfg = FilterConfig {
        threshold_pkts: 5,
        window_ms: 1000,
        table_capacity: 8,
    };
    let mut state = FilterState::new(cfg).unwrap();
    for i in 0..2000u64 {
        let src = Ipv4Addr::from(0x0a00_0000 + (i * 7919 % 50) as u32);
        state.process_packet(&build_udp_frame(src, VICTIM, 1, 2, 0, i * 1_000_000).unwrap());
        assert!(state.tracked_sources() <= 8);
    }
}
