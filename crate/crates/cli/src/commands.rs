use std::fs;
use std::io::Write;
use std::path::Path;

use edgeguard_core::controller::{
    AlertLog, BlocklistStore, Controller, FirewallExecutor, MockExecutor, MockNotifier, Notifier,
    ShellExecutor, StoreError, WebhookConfig, WebhookNotifier,
};
use edgeguard_core::replay::{
    datapath_verdicts, first_divergence, oracle_verdicts, parse_pcap, sort_frames, write_report,
    Engine, PcapError, Report, RunOptions,
};
use edgeguard_core::traffic::{builtin_scenario, ScenarioConfig, ScenarioError, ScenarioStream};
use edgeguard_core::{generate_scenario, RawFrame};

use crate::config::{CliConfig, FirewallMode};
use crate::CliError;

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io { .. } => CliError::Io(e.to_string()),
            StoreError::Parse { .. } => CliError::Usage(e.to_string()),
        }
    }
}

impl From<PcapError> for CliError {
    fn from(e: PcapError) -> Self {
        if e.is_format() {
            CliError::Usage(e.to_string())
        } else {
            CliError::Io(e.to_string())
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

fn build_controller(cfg: &CliConfig) -> Result<Controller, CliError> {
    let store = BlocklistStore::open(&cfg.blocklist_path)?;
    let executor: Box<dyn FirewallExecutor> = match cfg.firewall_mode {
        FirewallMode::Mock => Box::new(MockExecutor::new()),
        FirewallMode::Exec => Box::new(ShellExecutor),
    };
    let notifier: Box<dyn Notifier> = match &cfg.webhook_url {
        Some(url) => Box::new(WebhookNotifier::new(WebhookConfig {
            url: url.clone(),
            chat_id: cfg.chat_id.clone(),
        })),
        None => Box::new(MockNotifier::new()),
    };
    let log = AlertLog {
        path: cfg.alert_log.clone(),
        echo_stderr: true,
    };
    Ok(Controller::new(store, executor, notifier, log))
}

/// A built-in scenario name, or a path to a scenario JSON file.
pub fn resolve_scenario(name: &str) -> Result<ScenarioConfig, CliError> {
    if let Some(s) = builtin_scenario(name) {
        return Ok(s);
    }
    let path = Path::new(name);
    if !path.is_file() {
        return Err(CliError::Usage(format!(
            "unknown scenario {name:?}: not a built-in (pi-flood, docker-flood, benign-only) or a file"
        )));
    }
    let mut cfg = ScenarioConfig::from_json_file(path)?;
    if cfg.label.is_empty() {
        cfg.label = name.to_string();
    }
    Ok(cfg)
}

fn run<I>(cfg: &CliConfig, options: RunOptions, frames: I) -> Result<Report, CliError>
where
    I: IntoIterator<Item = RawFrame>,
{
    let controller = build_controller(cfg)?;
    let engine = Engine::new(options, controller).map_err(|e| CliError::Usage(e.to_string()))?;
    let result = engine.run(frames);
    Ok(result.report)
}

fn emit(cfg: &CliConfig, report: &Report) -> Result<(), CliError> {
    match &cfg.output_path {
        Some(path) => {
            write_report(report, cfg.format.into(), path)
                .map_err(|e| CliError::Io(e.to_string()))?;
            eprintln!(
                "{}: {} frames, {} alerts, attacker drop ratio {:.5} -> {}",
                report.label,
                report.counters.total,
                report.counters.alerts_emitted,
                report.drop_ratio_attackers,
                path.display()
            );
        }
        None => {
            let text = report
                .render(cfg.format.into())
                .map_err(|e| CliError::Io(e.to_string()))?;
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| CliError::Io(e.to_string()))?;
        }
    }
    Ok(())
}

pub fn simulate(scenario: &str, cfg: &CliConfig) -> Result<(), CliError> {
    let sc = resolve_scenario(scenario)?;
    let options = RunOptions {
        label: sc.label.clone(),
        filter: cfg.effective_filter(),
        roles: sc.roles(),
        input_resorted: false,
    };
    let report = run(cfg, options, ScenarioStream::new(&sc)?)?;
    emit(cfg, &report)
}

fn load_pcap(path: &Path) -> Result<(Vec<RawFrame>, bool), CliError> {
    let data = fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let (_, mut frames) = parse_pcap(&data)?;
    let resorted = sort_frames(&mut frames);
    Ok((frames, resorted))
}

pub fn replay(pcap: &Path, cfg: &CliConfig) -> Result<(), CliError> {
    let (frames, resorted) = load_pcap(pcap)?;
    let options = RunOptions {
        label: pcap.display().to_string(),
        filter: cfg.effective_filter(),
        roles: Default::default(),
        input_resorted: resorted,
    };
    let report = run(cfg, options, frames)?;
    emit(cfg, &report)
}

fn looks_like_pcap(path: &Path) -> bool {
    let Ok(mut f) = fs::File::open(path) else {
        return false;
    };
    let mut magic = [0u8; 4];
    if std::io::Read::read_exact(&mut f, &mut magic).is_err() {
        return false;
    }
    let m = u32::from_le_bytes(magic);
    [0xa1b2c3d4u32, 0xa1b23c4d]
        .iter()
        .any(|&k| m == k || m.swap_bytes() == k)
}

/// Runs the datapath and the brute-force oracle over the same frames.
/// `inject_fault` shifts the datapath threshold by one to check the checker.
pub fn oracle(input: &str, cfg: &CliConfig, inject_fault: bool) -> Result<(), CliError> {
    let path = Path::new(input);
    let frames = if builtin_scenario(input).is_none() && looks_like_pcap(path) {
        load_pcap(path)?.0
    } else {
        generate_scenario(&resolve_scenario(input)?)?
    };
    let filter = cfg.effective_filter();
    let mut engine_filter = filter;
    if inject_fault {
        engine_filter.threshold_pkts = engine_filter.threshold_pkts.saturating_add(1);
    }
    let engine =
        datapath_verdicts(&frames, engine_filter).map_err(|e| CliError::Usage(e.to_string()))?;
    let reference = oracle_verdicts(&frames, &filter);
    match first_divergence(&engine, &reference) {
        None => {
            println!("oracle: {} verdicts identical", frames.len());
            Ok(())
        }
        Some(i) => {
            println!(
                "oracle: divergence at frame {i}: datapath {:?}, oracle {:?}",
                engine.get(i),
                reference.get(i)
            );
            Err(CliError::Divergence(i))
        }
    }
}

pub fn report(path: &Path) -> Result<(), CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let r = Report::from_json(&text)
        .map_err(|e| CliError::Usage(format!("{}: not a report: {e}", path.display())))?;
    print!("{}", render_table(&r));
    Ok(())
}

fn render_table(r: &Report) -> String {
    let c = &r.counters;
    let mut out = String::new();
    let threshold = if r.threshold_pkts == u64::MAX {
        "off".to_string()
    } else {
        r.threshold_pkts.to_string()
    };
    out += &format!("run            {}\n", r.label);
    out += &format!("threshold      {} pkts / {} ms\n", threshold, r.window_ms);
    out += &format!("frames         {}\n", c.total);
    out += &format!(
        "passed         {} (+{} non-IPv4)\n",
        c.passed, c.passed_non_ipv4
    );
    out += &format!(
        "dropped        {} rate, {} blocklist, {} malformed\n",
        c.dropped_rate, c.dropped_blocklist, c.dropped_malformed
    );
    out += &format!("alerts         {}\n", c.alerts_emitted);
    out += &format!("attacker drop  {:.2}%\n", r.drop_ratio_attackers * 100.0);
    out += &format!("benign drops   {}\n", r.benign_drop_count);
    match r.detection_latency_ms {
        Some(ms) => out += &format!("detection      {ms:.3} ms (virtual)\n"),
        None => out += "detection      -\n",
    }
    if let Some(ms) = r.response_latency_ms_max {
        out += &format!("response max   {ms:.3} ms (wall)\n");
    }
    out += &format!(
        "per-packet     {:.0} ns (wall, mean)\n",
        r.mean_processing_ns
    );
    out += "\nsource           role      sent      passed    dropped\n";
    for s in &r.per_source {
        out += &format!(
            "{:<16} {:<9} {:<9} {:<9} {}\n",
            s.src_ip, s.role, s.sent, s.passed, s.dropped
        );
    }
    out
}
