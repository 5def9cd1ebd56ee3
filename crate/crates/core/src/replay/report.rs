use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datapath::VerdictCounters;

/// Key used for frames that cannot be attributed to an IPv4 source.
pub const INVALID_SOURCE: &str = "invalid";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceStats {
    pub src_ip: String,
    /// `attacker`, `benign` or `unknown`.
    pub role: String,
    pub sent: u64,
    pub passed: u64,
    pub dropped: u64,
}

/// Totals and latencies of one replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub label: String,
    pub threshold_pkts: u64,
    pub window_ms: u64,
    pub counters: VerdictCounters,
    pub per_source: Vec<SourceStats>,
    /// Virtual time from the first attacker frame to the first alert.
    pub detection_latency_ms: Option<f64>,
    pub drop_ratio_attackers: f64,
    pub benign_drop_count: u64,
    /// Host wall-clock cost of parse + verdict, averaged per frame.
    pub mean_processing_ns: f64,
    /// Input timestamps were out of order and got stably sorted before replay.
    pub input_resorted: bool,
    pub alerts_handled: u64,
    pub alert_queue_overflow: u64,
    /// Worst wall-clock time from alert enqueue to the controller finishing it.
    pub response_latency_ms_max: Option<f64>,
    pub controller_failures: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format {other:?} (json|csv)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("report encoding: {0}")]
    Encode(String),
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// One row per source plus a trailing `_totals` row.
    pub fn to_csv(&self) -> Result<String, ReportError> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(Vec::new());
        let enc = |e: csv::Error| ReportError::Encode(e.to_string());
        w.write_record(["src_ip", "role", "sent", "passed", "dropped"])
            .map_err(enc)?;
        let (mut sent, mut passed, mut dropped) = (0u64, 0u64, 0u64);
        for s in &self.per_source {
            w.serialize(s).map_err(enc)?;
            sent += s.sent;
            passed += s.passed;
            dropped += s.dropped;
        }
        w.write_record([
            "_totals".to_string(),
            String::new(),
            sent.to_string(),
            passed.to_string(),
            dropped.to_string(),
        ])
        .map_err(enc)?;
        let bytes = w
            .into_inner()
            .map_err(|e| ReportError::Encode(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn render(&self, format: ReportFormat) -> Result<String, ReportError> {
        match format {
            ReportFormat::Json => Ok(self.to_json() + "\n"),
            ReportFormat::Csv => self.to_csv(),
        }
    }
}

pub fn write_report(report: &Report, format: ReportFormat, path: &Path) -> Result<(), ReportError> {
    let text = report.render(format)?;
    fs::write(path, text).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}
