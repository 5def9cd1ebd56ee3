use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::json;

use super::Outcome;
use crate::datapath::AlertEvent;

/// Total attempts per notification, including the first.
pub const NOTIFY_ATTEMPTS: u32 = 3;
pub const NOTIFY_BACKOFF: Duration = Duration::from_millis(200);
/// Per-attempt budget. Three attempts plus two backoffs stay under 2 s.
pub const NOTIFY_ATTEMPT_TIMEOUT: Duration = Duration::from_millis(400);

pub fn notification_text(alert: &AlertEvent) -> String {
    format!(
        "DDoS alert: blocked {} after {} pkts in window {}",
        alert.src_ip, alert.observed_count, alert.window_id
    )
}

pub trait Notifier: Send {
    fn notify(&mut self, alert: &AlertEvent) -> Outcome;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WebhookConfig {
    pub url: String,
    pub chat_id: String,
}

/// Posts Telegram `sendMessage`-shaped JSON to a webhook endpoint.
pub struct WebhookNotifier {
    config: WebhookConfig,
    agent: ureq::Agent,
}

impl WebhookNotifier {
    pub fn new(config: WebhookConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(NOTIFY_ATTEMPT_TIMEOUT)
            .build();
        Self { config, agent }
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<(), String> {
        match self.agent.post(&self.config.url).send_json(body.clone()) {
            Ok(resp) if (200..300).contains(&resp.status()) => Ok(()),
            Ok(resp) => Err(format!("http status {}", resp.status())),
            Err(ureq::Error::Status(code, _)) => Err(format!("http status {code}")),
            Err(ureq::Error::Transport(t)) => Err(format!("transport: {t}")),
        }
    }
}

impl Notifier for WebhookNotifier {
    fn notify(&mut self, alert: &AlertEvent) -> Outcome {
        send_notification(self, alert)
    }
}

/// Sends one alert with up to [`NOTIFY_ATTEMPTS`] tries and a fixed backoff.
pub fn send_notification(notifier: &WebhookNotifier, alert: &AlertEvent) -> Outcome {
    let body = json!({
        "chat_id": notifier.config.chat_id,
        "text": notification_text(alert),
    });
    let mut last = String::new();
    for attempt in 1..=NOTIFY_ATTEMPTS {
        match notifier.attempt(&body) {
            Ok(()) => return Outcome::Done,
            Err(e) => last = e,
        }
        if attempt < NOTIFY_ATTEMPTS {
            thread::sleep(NOTIFY_BACKOFF);
        }
    }
    Outcome::Failed(format!("{last} after {NOTIFY_ATTEMPTS} attempts"))
}

/// Records notification texts in memory. Clones share the record.
#[derive(Debug, Clone, Default)]
pub struct MockNotifier {
    sent: Arc<Mutex<Vec<String>>>,
    fail: bool,
}

impl MockNotifier {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn unreachable() -> Self {
        Self {
            fail: true,
            ..Self::default()
        }
    }

    pub fn sent(&self) -> Vec<String> {
        self.sent.lock().unwrap().clone()
    }
}

impl Notifier for MockNotifier {
    fn notify(&mut self, alert: &AlertEvent) -> Outcome {
        self.sent.lock().unwrap().push(notification_text(alert));
        if self.fail {
            Outcome::Failed("transport: mock endpoint unreachable".into())
        } else {
            Outcome::Done
        }
    }
}
