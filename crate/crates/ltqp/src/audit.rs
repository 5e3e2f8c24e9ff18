//! Audit plumbing: the append-only security-event log shared by the fetch,
//! traversal and query stages, the per-run clock, and the audit report the
//! CLI serializes.

use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::model::{Iri, SecurityEvent};

/// Monotonic clock anchored at engine start; all timestamps in quads,
/// result rows and audit records are milliseconds on this clock.
#[derive(Debug, Clone)]
pub struct Clock {
    start: Instant,
}

impl Clock {
    pub fn new() -> Self {
        Clock { start: Instant::now() }
    }

    pub fn now_millis(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }
}

impl Default for Clock {
    fn default() -> Self {
        Clock::new()
    }
}

/// Append-only event log, safe for concurrent fetch workers.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    events: Arc<Mutex<Vec<SecurityEvent>>>,
}

impl EventLog {
    pub fn new() -> Self {
        EventLog::default()
    }

    pub fn push(&self, event: SecurityEvent) {
        self.events.lock().expect("event log poisoned").push(event);
    }

    pub fn snapshot(&self) -> Vec<SecurityEvent> {
        self.events.lock().expect("event log poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.events.lock().expect("event log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One fetched (or attempted) document in the audit report.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DocumentRecord {
    pub url: Iri,
    /// HTTP status, or 0 when the request never produced a response
    /// (blocked scheme, transport error, redirect trap).
    pub status: u16,
    pub bytes: u64,
    pub from_cache: bool,
    pub depth: u32,
}

/// Evidence for one scenario of an attack-suite run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExploitMarker {
    pub scenario: String,
    pub succeeded: bool,
    pub evidence: String,
}

/// The machine-readable trail of one query execution: which documents were
/// touched, which security events fired, and (in attack-suite runs) which
/// exploit predicates held.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AuditReport {
    pub query_id: String,
    pub config: serde_json::Value,
    pub documents_fetched: Vec<DocumentRecord>,
    pub events: Vec<SecurityEvent>,
    pub results: usize,
    pub wall_millis: u64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub exploit_markers: Vec<ExploitMarker>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{SecurityEvent, Vulnerability};

    #[test]
    fn event_log_appends_and_snapshots() {
        let log = EventLog::new();
        log.push(SecurityEvent::observed(Vulnerability::None, "first"));
        log.push(SecurityEvent::blocked(Vulnerability::LinkTraversalTrap, "second"));
        let events = log.snapshot();
        assert_eq!(events.len(), 2);
        assert_eq!(events[0].detail, "first");
        assert_eq!(events[1].detail, "second");
    }

    #[test]
    fn clock_is_monotone() {
        let clock = Clock::new();
        let a = clock.now_millis();
        let b = clock.now_millis();
        assert!(b >= a);
    }
}
