use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use edgeguard_core::replay::ReportFormat;
use edgeguard_core::FilterConfig;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FirewallMode {
    Mock,
    Exec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
        }
    }
}

/// Flags shared by every engine-running subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct EngineFlags {
    /// Packets per window a source may send before it is blocked
    #[arg(long)]
    pub threshold: Option<u64>,
    /// Tumbling window length in milliseconds
    #[arg(long)]
    pub window_ms: Option<u64>,
    /// Maximum number of tracked sources
    #[arg(long)]
    pub capacity: Option<usize>,
    /// Persistent blocklist file
    #[arg(long)]
    pub blocklist: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub firewall_mode: Option<FirewallMode>,
    /// Webhook receiving Telegram sendMessage-style JSON
    #[arg(long)]
    pub webhook_url: Option<String>,
    /// File the alert log lines are appended to
    #[arg(long)]
    pub alert_log: Option<PathBuf>,
    /// Report destination; stdout when absent
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Disable rate limiting to get an unmitigated baseline
    #[arg(long)]
    pub no_filter: bool,
    /// JSON file with defaults for any of the above
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Required together with --firewall-mode exec
    #[arg(long)]
    pub i_have_privileges: bool,
}

/// Optional keys of the `--config` JSON file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    threshold_pkts: Option<u64>,
    window_ms: Option<u64>,
    table_capacity: Option<usize>,
    blocklist_path: Option<PathBuf>,
    firewall_mode: Option<FirewallMode>,
    webhook_url: Option<String>,
    chat_id: Option<String>,
    alert_log: Option<PathBuf>,
    output_path: Option<PathBuf>,
    format: Option<Format>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub filter: FilterConfig,
    pub blocklist_path: PathBuf,
    pub firewall_mode: FirewallMode,
    pub webhook_url: Option<String>,
    pub chat_id: String,
    pub alert_log: Option<PathBuf>,
    pub output_path: Option<PathBuf>,
    pub format: Format,
    pub no_filter: bool,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            filter: FilterConfig::default(),
            blocklist_path: PathBuf::from("./blocklist.csv"),
            firewall_mode: FirewallMode::Mock,
            webhook_url: None,
            chat_id: "edgeguard-admin".into(),
            alert_log: None,
            output_path: None,
            format: Format::Json,
            no_filter: false,
        }
    }
}

fn read_file_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

impl CliConfig {
    /// Flags override the config file, which overrides defaults.
    pub fn resolve(flags: &EngineFlags) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(p) => read_file_config(p)?,
            None => FileConfig::default(),
        };
        let d = CliConfig::default();
        let cfg = CliConfig {
            filter: FilterConfig {
                threshold_pkts: flags
                    .threshold
                    .or(file.threshold_pkts)
                    .unwrap_or(d.filter.threshold_pkts),
                window_ms: flags
                    .window_ms
                    .or(file.window_ms)
                    .unwrap_or(d.filter.window_ms),
                table_capacity: flags
                    .capacity
                    .or(file.table_capacity)
                    .unwrap_or(d.filter.table_capacity),
            },
            blocklist_path: flags
                .blocklist
                .clone()
                .or(file.blocklist_path)
                .unwrap_or(d.blocklist_path),
            firewall_mode: flags
                .firewall_mode
                .or(file.firewall_mode)
                .unwrap_or(d.firewall_mode),
            webhook_url: flags.webhook_url.clone().or(file.webhook_url),
            chat_id: file.chat_id.unwrap_or(d.chat_id),
            alert_log: flags.alert_log.clone().or(file.alert_log),
            output_path: flags.output.clone().or(file.output_path),
            format: flags.format.or(file.format).unwrap_or(d.format),
            no_filter: flags.no_filter,
        };
        cfg.filter
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        if cfg.firewall_mode == FirewallMode::Exec && !flags.i_have_privileges {
            return Err(CliError::Usage(
                "--firewall-mode exec runs iptables on this host; pass --i-have-privileges to confirm"
                    .into(),
            ));
        }
        Ok(cfg)
    }

    /// The filter actually applied, honouring `--no-filter`.
    pub fn effective_filter(&self) -> FilterConfig {
        if self.no_filter {
            self.filter.unlimited()
        } else {
            self.filter
        }
    }
}
