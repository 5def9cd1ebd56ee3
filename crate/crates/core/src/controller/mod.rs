//! User-space response to datapath alerts: block, persist, notify, log.

mod firewall;
mod notify;
mod store;

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datapath::AlertEvent;

pub use firewall::{
    firewall_command, render_firewall_command, FirewallExecutor, MockExecutor, ShellExecutor,
};
pub use notify::{
    notification_text, send_notification, MockNotifier, Notifier, WebhookConfig, WebhookNotifier,
    NOTIFY_ATTEMPTS, NOTIFY_ATTEMPT_TIMEOUT, NOTIFY_BACKOFF,
};
pub use store::{
    load_blocklist, persist_blocklist, BlockRule, BlocklistStore, RuleOrigin, StoreError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionKind {
    FirewallBlock,
    Notify,
    Log,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Done,
    Failed(String),
}

impl Outcome {
    pub fn is_done(&self) -> bool {
        matches!(self, Outcome::Done)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub kind: ActionKind,
    pub payload: String,
    pub outcome: Outcome,
    pub at_ms: u64,
}

impl ActionRecord {
    fn new(kind: ActionKind, payload: String, outcome: Outcome) -> Self {
        Self {
            kind,
            payload,
            outcome,
            at_ms: now_ms(),
        }
    }
}

#[derive(Debug, Error)]
#[error("block for {src} applied but not persisted: {source}")]
pub struct PersistError {
    pub src: std::net::Ipv4Addr,
    /// Actions completed before the failure (the firewall block).
    pub actions: Vec<ActionRecord>,
    #[source]
    pub source: StoreError,
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Destination of alert log lines.
#[derive(Debug, Clone, Default)]
pub struct AlertLog {
    pub path: Option<PathBuf>,
    pub echo_stderr: bool,
}

impl AlertLog {
    fn append(&self, line: &str) -> Outcome {
        if self.echo_stderr {
            eprintln!("{line}");
        }
        let Some(path) = &self.path else {
            return Outcome::Done;
        };
        let res = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .and_then(|mut f| writeln!(f, "{line}"));
        match res {
            Ok(()) => Outcome::Done,
            Err(e) => Outcome::Failed(format!("{}: {e}", path.display())),
        }
    }
}

pub struct Controller {
    store: BlocklistStore,
    executor: Box<dyn FirewallExecutor>,
    notifier: Box<dyn Notifier>,
    log: AlertLog,
}

impl Controller {
    pub fn new(
        store: BlocklistStore,
        executor: Box<dyn FirewallExecutor>,
        notifier: Box<dyn Notifier>,
        log: AlertLog,
    ) -> Self {
        Self {
            store,
            executor,
            notifier,
            log,
        }
    }

    pub fn store(&self) -> &BlocklistStore {
        &self.store
    }

    /// Blocks, persists, notifies and logs, in that order.
    ///
    /// Sources already in the store produce no actions. A failed firewall
    /// command stops the sequence; a failed notification does not.
    pub fn handle_alert(&mut self, alert: &AlertEvent) -> Result<Vec<ActionRecord>, PersistError> {
        if self.store.contains(alert.src_ip) {
            return Ok(Vec::new());
        }

        let command = firewall_command(alert.src_ip);
        let outcome = match self.executor.execute(&command) {
            Ok(()) => Outcome::Done,
            Err(e) => Outcome::Failed(e),
        };
        let blocked = outcome.is_done();
        let mut actions = vec![ActionRecord::new(
            ActionKind::FirewallBlock,
            command,
            outcome,
        )];
        if !blocked {
            return Ok(actions);
        }

        let rule = BlockRule {
            src_ip: alert.src_ip,
            created_at_ms: now_ms(),
            origin: RuleOrigin::AlertTriggered,
        };
        if let Err(source) = self.store.insert(rule) {
            return Err(PersistError {
                src: alert.src_ip,
                actions,
                source,
            });
        }

        let outcome = self.notifier.notify(alert);
        actions.push(ActionRecord::new(
            ActionKind::Notify,
            notification_text(alert),
            outcome,
        ));

        let line = alert.to_string();
        let outcome = self.log.append(&line);
        actions.push(ActionRecord::new(ActionKind::Log, line, outcome));
        Ok(actions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::Ipv4Addr;

    fn alert(ip: &str) -> AlertEvent {
        AlertEvent {
            src_ip: ip.parse().unwrap(),
            observed_count: 801,
            window_id: 0,
            ts_ns: 26_666_666,
        }
    }

    fn kinds(actions: &[ActionRecord]) -> Vec<(ActionKind, bool)> {
        actions
            .iter()
            .map(|a| (a.kind, a.outcome.is_done()))
            .collect()
    }

    struct Rig {
        _dir: tempfile::TempDir,
        controller: Controller,
        exec: MockExecutor,
        notifier: MockNotifier,
        log_path: PathBuf,
    }

    fn rig(exec: MockExecutor, notifier: MockNotifier) -> Rig {
        let dir = tempfile::tempdir().unwrap();
        let log_path = dir.path().join("alerts.log");
        let store = BlocklistStore::open(dir.path().join("bl.csv")).unwrap();
        let controller = Controller::new(
            store,
            Box::new(exec.clone()),
            Box::new(notifier.clone()),
            AlertLog {
                path: Some(log_path.clone()),
                echo_stderr: false,
            },
        );
        Rig {
            _dir: dir,
            controller,
            exec,
            notifier,
            log_path,
        }
    }

    #[test]
    fn happy_path_blocks_notifies_logs() {
        let mut r = rig(MockExecutor::new(), MockNotifier::new());
        let actions = r.controller.handle_alert(&alert("10.0.0.9")).unwrap();
        assert_eq!(
            kinds(&actions),
            vec![
                (ActionKind::FirewallBlock, true),
                (ActionKind::Notify, true),
                (ActionKind::Log, true)
            ]
        );
        assert_eq!(actions[0].payload, "iptables -A INPUT -s 10.0.0.9 -j DROP");
        assert!(r.controller.store().contains(Ipv4Addr::new(10, 0, 0, 9)));
        assert_eq!(r.exec.commands().len(), 1);
        assert_eq!(r.notifier.sent().len(), 1);
        assert_eq!(
            std::fs::read_to_string(&r.log_path).unwrap(),
            "ALERT ts_ns=26666666 src=10.0.0.9 count=801 window=0\n"
        );
    }

    #[test]
    fn duplicate_alert_is_silent() {
        let mut r = rig(MockExecutor::new(), MockNotifier::new());
        r.controller.handle_alert(&alert("10.0.0.9")).unwrap();
        assert!(r
            .controller
            .handle_alert(&alert("10.0.0.9"))
            .unwrap()
            .is_empty());
        assert_eq!(r.exec.commands().len(), 1);
        assert_eq!(r.notifier.sent().len(), 1);
    }

    #[test]
    fn notify_failure_keeps_block() {
        let mut r = rig(MockExecutor::new(), MockNotifier::unreachable());
        let actions = r.controller.handle_alert(&alert("10.0.0.9")).unwrap();
        assert_eq!(
            kinds(&actions),
            vec![
                (ActionKind::FirewallBlock, true),
                (ActionKind::Notify, false),
                (ActionKind::Log, true)
            ]
        );
        assert!(r.controller.store().contains(Ipv4Addr::new(10, 0, 0, 9)));
    }

    #[test]
    fn firewall_failure_aborts_before_persist_and_notify() {
        let mut r = rig(MockExecutor::failing(), MockNotifier::new());
        let actions = r.controller.handle_alert(&alert("10.0.0.9")).unwrap();
        assert_eq!(kinds(&actions), vec![(ActionKind::FirewallBlock, false)]);
        assert!(r.controller.store().is_empty());
        assert!(r.notifier.sent().is_empty());
    }

    #[test]
    fn persistence_failure_surfaces_after_block() {
        let dir = tempfile::tempdir().unwrap();
        let store = BlocklistStore::open(dir.path().join("no").join("bl.csv")).unwrap();
        let notifier = MockNotifier::new();
        let mut c = Controller::new(
            store,
            Box::new(MockExecutor::new()),
            Box::new(notifier.clone()),
            AlertLog::default(),
        );
        let err = c.handle_alert(&alert("10.0.0.9")).unwrap_err();
        assert_eq!(kinds(&err.actions), vec![(ActionKind::FirewallBlock, true)]);
        assert!(notifier.sent().is_empty());
    }

    #[test]
    fn dedup_survives_restart() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bl.csv");
        let mut c = Controller::new(
            BlocklistStore::open(&path).unwrap(),
            Box::new(MockExecutor::new()),
            Box::new(MockNotifier::new()),
            AlertLog::default(),
        );
        c.handle_alert(&alert("10.0.0.9")).unwrap();
        drop(c);
        let notifier = MockNotifier::new();
        let mut c = Controller::new(
            BlocklistStore::open(&path).unwrap(),
            Box::new(MockExecutor::new()),
            Box::new(notifier.clone()),
            AlertLog::default(),
        );
        assert!(c.handle_alert(&alert("10.0.0.9")).unwrap().is_empty());
        assert!(notifier.sent().is_empty());
    }
}
