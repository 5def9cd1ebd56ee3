use std::net::Ipv4Addr;
use std::process::Command;
use std::sync::{Arc, Mutex};

use crate::datapath::{parse_ipv4, InvalidAddress};

pub fn firewall_command(ip: Ipv4Addr) -> String {
    format!("iptables -A INPUT -s {ip} -j DROP")
}

/// Renders the iptables rule that drops all input from `src_ip`.
pub fn render_firewall_command(src_ip: &str) -> Result<String, InvalidAddress> {
    Ok(firewall_command(parse_ipv4(src_ip)?))
}

/// Port through which the controller applies firewall rules.
pub trait FirewallExecutor: Send {
    fn execute(&mut self, command: &str) -> Result<(), String>;
}

/// Records commands instead of running them. Clones share the record.
#[derive(Debug, Clone, Default)]
pub struct MockExecutor {
    commands: Arc<Mutex<Vec<String>>>,
    fail: bool,
}

impl MockExecutor {
    pub fn new() -> Self {
        Self::default()
    }

    /// An executor that rejects every command.
    pub fn failing() -> Self {
        Self {
            fail: true,
            ..Self::default()
        }
    }

    pub fn commands(&self) -> Vec<String> {
        self.commands.lock().unwrap().clone()
    }
}

impl FirewallExecutor for MockExecutor {
    fn execute(&mut self, command: &str) -> Result<(), String> {
        self.commands.lock().unwrap().push(command.to_string());
        if self.fail {
            Err("mock executor configured to fail".into())
        } else {
            Ok(())
        }
    }
}

/// Runs commands through `sh -c`. Mutates host firewall state; needs root.
#[derive(Debug, Clone, Default)]
pub struct ShellExecutor;

impl FirewallExecutor for ShellExecutor {
    fn execute(&mut self, command: &str) -> Result<(), String> {
        let out = Command::new("sh")
            .arg("-c")
            .arg(command)
            .output()
            .map_err(|e| format!("spawn failed: {e}"))?;
        if out.status.success() {
            Ok(())
        } else {
            Err(format!(
                "{}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_iptables_rule() {
        assert_eq!(
            render_firewall_command("10.0.0.9").unwrap(),
            "iptables -A INPUT -s 10.0.0.9 -j DROP"
        );
        assert_eq!(
            render_firewall_command("192.168.1.200").unwrap(),
            "iptables -A INPUT -s 192.168.1.200 -j DROP"
        );
        assert!(render_firewall_command("10.0.0").is_err());
        assert!(render_firewall_command("10.0.0.256").is_err());
    }

    #[test]
    fn mock_records() {
        let mock = MockExecutor::new();
        let mut handle = mock.clone();
        handle
            .execute("iptables -A INPUT -s 1.2.3.4 -j DROP")
            .unwrap();
        assert_eq!(
            mock.commands(),
            vec!["iptables -A INPUT -s 1.2.3.4 -j DROP"]
        );
        assert!(MockExecutor::failing().execute("x").is_err());
    }

    #[test]
    fn shell_executor_reports_exit_status() {
        let mut sh = ShellExecutor;
        assert!(sh.execute("true").is_ok());
        assert!(sh.execute("exit 3").is_err());
    }
}
