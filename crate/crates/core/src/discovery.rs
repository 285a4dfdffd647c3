//! Node discovery: CNAME-aware resolution over an in-memory zone, and a
//! versioned registry of node id to service name with delta queries.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::identity::NodeId;

pub const DEFAULT_MAX_DEPTH: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiscoveryError {
    #[error("name not found: {0}")]
    NameNotFound(String),
    #[error("CNAME chain from {name} exceeds depth {max_depth}")]
    ChainTooDeep { name: String, max_depth: usize },
    #[error("CNAME loop through {0}")]
    CnameLoop(String),
    #[error("version {requested} is ahead of current version {current}")]
    FutureVersion { requested: u64, current: u64 },
    #[error("zone line {line}: {reason}")]
    ZoneSyntax { line: usize, reason: String },
    #[error("{name} is already a {existing} record")]
    KindConflict { name: String, existing: &'static str },
    #[error("max_depth must be at least 1")]
    ZeroDepth,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DnsRecordSet {
    cnames: BTreeMap<String, String>,
    endpoints: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolution {
    pub endpoint: String,
    /// CNAME links followed.
    pub chain_len: usize,
}

impl DnsRecordSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `CNAME <name> <target>` and `ENDPT <name> <address>` lines.
    /// Blank lines and `#` comments are skipped.
    pub fn parse(zone: &str) -> Result<Self, DiscoveryError> {
        let mut set = Self::new();
        for (i, raw) in zone.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let syntax = |reason: &str| DiscoveryError::ZoneSyntax { line: i + 1, reason: reason.into() };
            match fields.as_slice() {
                ["CNAME", name, target] => set.add_cname(name, target)?,
                ["ENDPT", name, addr] => set.add_endpoint(name, addr)?,
                ["CNAME" | "ENDPT", ..] => return Err(syntax("expected exactly two operands")),
                [kind, ..] => return Err(syntax(&format!("unknown record kind {kind}"))),
                [] => unreachable!("blank lines skipped"),
            }
        }
        Ok(set)
    }

    pub fn add_cname(&mut self, name: &str, target: &str) -> Result<(), DiscoveryError> {
        if self.endpoints.contains_key(name) {
            return Err(DiscoveryError::KindConflict { name: name.into(), existing: "ENDPT" });
        }
        self.cnames.insert(name.into(), target.into());
        Ok(())
    }

    pub fn add_endpoint(&mut self, name: &str, addr: &str) -> Result<(), DiscoveryError> {
        if self.cnames.contains_key(name) {
            return Err(DiscoveryError::KindConflict { name: name.into(), existing: "CNAME" });
        }
        self.endpoints.insert(name.into(), addr.into());
        Ok(())
    }

    /// Points an existing CNAME somewhere else. The new chain is only checked
    /// when it is next resolved.
    pub fn rebind_cname(&mut self, name: &str, new_target: &str) -> Result<(), DiscoveryError> {
        match self.cnames.get_mut(name) {
            Some(t) => {
                *t = new_target.into();
                Ok(())
            }
            None => Err(DiscoveryError::NameNotFound(name.into())),
        }
    }

    pub fn to_zone(&self) -> String {
        let mut out = String::new();
        for (n, t) in &self.cnames {
            out.push_str(&format!("CNAME {n} {t}\n"));
        }
        for (n, a) in &self.endpoints {
            out.push_str(&format!("ENDPT {n} {a}\n"));
        }
        out
    }
}

pub fn resolve(records: &DnsRecordSet, name: &str, max_depth: usize) -> Result<Resolution, DiscoveryError> {
    if max_depth == 0 {
        return Err(DiscoveryError::ZeroDepth);
    }
    let mut visited = BTreeSet::new();
    let mut current = name;
    let mut chain_len = 0;
    loop {
        if let Some(addr) = records.endpoints.get(current) {
            return Ok(Resolution { endpoint: addr.clone(), chain_len });
        }
        let Some(next) = records.cnames.get(current) else {
            return Err(DiscoveryError::NameNotFound(current.into()));
        };
        if !visited.insert(current) {
            return Err(DiscoveryError::CnameLoop(current.into()));
        }
        if chain_len == max_depth {
            return Err(DiscoveryError::ChainTooDeep { name: name.into(), max_depth });
        }
        chain_len += 1;
        current = next;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registration {
    pub nid: NodeId,
    pub service: String,
    /// Endpoint the service name resolved to when registered; informational.
    pub endpoint_at_registration: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mutation {
    pub version: u64,
    pub entries: Vec<Registration>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Registry {
    entries: BTreeMap<NodeId, Registration>,
    version: u64,
    log: Vec<Mutation>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn get(&self, nid: &NodeId) -> Option<&Registration> {
        self.entries.get(nid)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn register(&mut self, records: &DnsRecordSet, nid: NodeId, service: &str) -> u64 {
        self.bulk_register(records, &[(nid, service.to_string())])
    }

    /// Registers a batch under one version. Re-registering a nid replaces it.
    pub fn bulk_register(&mut self, records: &DnsRecordSet, batch: &[(NodeId, String)]) -> u64 {
        if batch.is_empty() {
            return self.version;
        }
        self.version += 1;
        let entries: Vec<Registration> = batch
            .iter()
            .map(|(nid, service)| Registration {
                nid: *nid,
                service: service.clone(),
                endpoint_at_registration: resolve(records, service, DEFAULT_MAX_DEPTH).ok().map(|r| r.endpoint),
            })
            .collect();
        for e in &entries {
            self.entries.insert(e.nid, e.clone());
        }
        self.log.push(Mutation { version: self.version, entries });
        self.version
    }

    /// Mutations with version strictly greater than `version`, oldest first.
    pub fn delta_since(&self, version: u64) -> Result<&[Mutation], DiscoveryError> {
        if version > self.version {
            return Err(DiscoveryError::FutureVersion { requested: version, current: self.version });
        }
        let start = self.log.partition_point(|m| m.version <= version);
        Ok(&self.log[start..])
    }

    /// Rebuilds a registry by folding a mutation list.
    pub fn replay(log: &[Mutation]) -> Self {
        let mut r = Self::new();
        for m in log {
            for e in &m.entries {
                r.entries.insert(e.nid, e.clone());
            }
            r.version = m.version;
            r.log.push(m.clone());
        }
        r
    }

    /// Resolves a node's service name now, not from the cached endpoint.
    pub fn dial(&self, records: &DnsRecordSet, nid: &NodeId) -> Result<Resolution, DiscoveryError> {
        let reg = self.entries.get(nid).ok_or_else(|| DiscoveryError::NameNotFound(nid.to_hex()))?;
        resolve(records, &reg.service, DEFAULT_MAX_DEPTH)
    }
}
