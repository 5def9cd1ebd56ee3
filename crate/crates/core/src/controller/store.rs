use std::collections::HashSet;
use std::fs;
use std::io::{self, Write};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleOrigin {
    AlertTriggered,
    LoadedFromDisk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockRule {
    pub src_ip: Ipv4Addr,
    pub created_at_ms: u64,
    pub origin: RuleOrigin,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("blocklist {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("blocklist {path}, line {line}: malformed record {content:?}")]
    Parse {
        path: PathBuf,
        line: usize,
        content: String,
    },
}

impl StoreError {
    fn io(path: &Path, source: io::Error) -> Self {
        StoreError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Atomically replaces `path` with one `<ip>,<created_at_ms>` line per rule.
pub fn persist_blocklist(path: &Path, rules: &[BlockRule]) -> Result<(), StoreError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut body = String::with_capacity(rules.len() * 24);
    for r in rules {
        body.push_str(&format!("{},{}\n", r.src_ip, r.created_at_ms));
    }
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| StoreError::io(path, e))?;
    tmp.write_all(body.as_bytes())
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| StoreError::io(path, e))?;
    tmp.persist(path)
        .map_err(|e| StoreError::io(path, e.error))?;
    Ok(())
}

/// Reads a blocklist file. A missing file is an empty blocklist; any bad line fails the whole load.
pub fn load_blocklist(path: &Path) -> Result<Vec<BlockRule>, StoreError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(StoreError::io(path, e)),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            parse_line(line).ok_or_else(|| StoreError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                content: line.to_string(),
            })
        })
        .collect()
}

fn parse_line(line: &str) -> Option<BlockRule> {
    let (ip, ts) = line.trim().split_once(',')?;
    Some(BlockRule {
        src_ip: ip.trim().parse().ok()?,
        created_at_ms: ts.trim().parse().ok()?,
        origin: RuleOrigin::LoadedFromDisk,
    })
}

/// The persisted set of blocked sources, in insertion order.
#[derive(Debug)]
pub struct BlocklistStore {
    path: Option<PathBuf>,
    rules: Vec<BlockRule>,
    index: HashSet<Ipv4Addr>,
}

impl BlocklistStore {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        let rules = load_blocklist(&path)?;
        let index = rules.iter().map(|r| r.src_ip).collect();
        Ok(Self {
            path: Some(path),
            rules,
            index,
        })
    }

    /// A store that is never written to disk.
    pub fn in_memory() -> Self {
        Self {
            path: None,
            rules: Vec::new(),
            index: HashSet::new(),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn rules(&self) -> &[BlockRule] {
        &self.rules
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        self.index.contains(&ip)
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Appends `rule` and rewrites the file. On failure the in-memory set is unchanged.
    pub fn insert(&mut self, rule: BlockRule) -> Result<bool, StoreError> {
        if self.contains(rule.src_ip) {
            return Ok(false);
        }
        self.rules.push(rule);
        if let Some(path) = &self.path {
            if let Err(e) = persist_blocklist(path, &self.rules) {
                self.rules.pop();
                return Err(e);
            }
        }
        self.index.insert(rule.src_ip);
        Ok(true)
    }
}
