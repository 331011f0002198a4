//! Pluggable reasoning backends for the five-whys loop: a deterministic
//! rule-table backend and a remote HTTP backend.
//!
//! Both implement the same request/response contract; the caller applies the
//! citation guard uniformly, so a backend can propose anything without
//! corrupting a chain.

use std::collections::BTreeSet;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::classify::RootCauseClass;
use crate::funnel::{categorize, ReasoningRequest, ReasoningResponse};
use crate::kg::{NodeId, NodeKind};

/// Cause text shared by the rule table's fallback row and the remote
/// backend's malformed-response handling.
pub const FALLBACK_CAUSE: &str = "no supported cause";

/// Environment variable holding the remote backend bearer token.
pub const TOKEN_ENV_VAR: &str = "CAUSEWAY_BACKEND_TOKEN";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unavailable after {attempts} attempts: {message}")]
    Unavailable { attempts: u32, message: String },
}

pub trait ReasoningBackend: Send + Sync {
    fn next_cause(&self, request: &ReasoningRequest) -> Result<ReasoningResponse, BackendError>;
    fn name(&self) -> &'static str;
}

// ---------------------------------------------------------------------------
// Deterministic rule backend
// ---------------------------------------------------------------------------

/// One row of the deterministic backend's table. A row fires when the
/// incident's symptom category matches, every required node kind appears in
/// the offered evidence, and the step depth is inside the range. The first
/// firing row wins.
#[derive(Debug, Clone)]
pub struct RuleRow {
    /// None matches any category.
    pub category: Option<String>,
    /// Node kinds that must all be present in the evidence.
    pub requires: BTreeSet<NodeKind>,
    pub depth_min: usize,
    pub depth_max: usize,
    /// Cause text; "{category}" is substituted.
    pub cause: String,
    /// Evidence nodes of these kinds get cited, in evidence order.
    pub cite: BTreeSet<NodeKind>,
    pub actionable_hint: bool,
    pub class_hint: Option<RootCauseClass>,
}

impl RuleRow {
    fn matches(&self, category: &str, kinds: &BTreeSet<NodeKind>, depth: usize) -> bool {
        if let Some(wanted) = &self.category {
            if wanted != category {
                return false;
            }
        }
        if depth < self.depth_min || depth > self.depth_max {
            return false;
        }
        self.requires.is_subset(kinds)
    }
}

/// Deterministic stand-in for a remote reasoning model: a total function
/// from (category, evidence kinds, depth) to a templated cause.
pub struct RuleBackend {
    rows: Vec<RuleRow>,
    taxonomy: std::collections::BTreeMap<String, Vec<String>>,
}

fn kinds(raw: &[NodeKind]) -> BTreeSet<NodeKind> {
    raw.iter().copied().collect()
}

fn row(
    category: Option<&str>,
    requires: &[NodeKind],
    depth: (usize, usize),
    cause: &str,
    cite: &[NodeKind],
    actionable_hint: bool,
    class_hint: Option<RootCauseClass>,
) -> RuleRow {
    RuleRow {
        category: category.map(|c| c.to_string()),
        requires: kinds(requires),
        depth_min: depth.0,
        depth_max: depth.1,
        cause: cause.to_string(),
        cite: kinds(cite),
        actionable_hint,
        class_hint,
    }
}

const ANY_DEPTH: (usize, usize) = (1, usize::MAX);

/// Default table. Category-specific rows that can pin a cause to a concrete
/// code file or change request come first; generic narrowing rows follow;
/// the final row is the unsupported fallback, making the table total.
pub fn default_rule_rows() -> Vec<RuleRow> {
    use NodeKind::{ChangeRequest, CodeFile, Incident, Service};
    use RootCauseClass::{
        AutomationGap, InfrastructureCapacity, InternalCodeDefect, ProcessManagement,
        VendorExternal,
    };
    vec![
        row(
            Some("deadlock"),
            &[CodeFile],
            ANY_DEPTH,
            "missing lock-ordering fix in application code",
            &[CodeFile],
            true,
            Some(InternalCodeDefect),
        ),
        row(
            Some("deadlock"),
            &[ChangeRequest],
            ANY_DEPTH,
            "missing lock-ordering fix",
            &[ChangeRequest],
            true,
            Some(InternalCodeDefect),
        ),
        row(
            Some("long-running-sql"),
            &[CodeFile],
            ANY_DEPTH,
            "unoptimized sql query shipped in application code",
            &[CodeFile],
            true,
            Some(InternalCodeDefect),
        ),
        row(
            Some("long-running-sql"),
            &[ChangeRequest],
            ANY_DEPTH,
            "query plan regression addressed by change",
            &[ChangeRequest],
            true,
            None,
        ),
        row(
            Some("backup-failure"),
            &[ChangeRequest],
            ANY_DEPTH,
            "lack of automation in backup verification",
            &[ChangeRequest],
            true,
            Some(AutomationGap),
        ),
        row(
            Some("storage-exhaustion"),
            &[Incident],
            ANY_DEPTH,
            "infrastructure capacity shortfall, storage tier exhausted",
            &[Incident],
            false,
            Some(InfrastructureCapacity),
        ),
        row(
            Some(crate::funnel::UNCATEGORIZED),
            &[Incident],
            ANY_DEPTH,
            "known third-party vendor outage, upstream dependency",
            &[Incident],
            false,
            Some(VendorExternal),
        ),
        row(
            None,
            &[Incident],
            ANY_DEPTH,
            "recurring symptom cluster: {category}",
            &[Incident],
            false,
            None,
        ),
        row(
            Some(crate::funnel::UNCATEGORIZED),
            &[Service],
            (1, 1),
            "initially attributed to service delays",
            &[Service],
            false,
            None,
        ),
        row(
            None,
            &[ChangeRequest],
            (2, usize::MAX),
            "lack of automation",
            &[ChangeRequest],
            true,
            Some(AutomationGap),
        ),
        row(
            Some(crate::funnel::UNCATEGORIZED),
            &[Service],
            (2, usize::MAX),
            "process breakdown in manual approval handover for the service",
            &[Service],
            false,
            Some(ProcessManagement),
        ),
        row(None, &[], ANY_DEPTH, FALLBACK_CAUSE, &[], false, None),
    ]
}

impl RuleBackend {
    pub fn new(
        rows: Vec<RuleRow>,
        taxonomy: std::collections::BTreeMap<String, Vec<String>>,
    ) -> RuleBackend {
        RuleBackend { rows, taxonomy }
    }

    pub fn with_default_rules(
        taxonomy: std::collections::BTreeMap<String, Vec<String>>,
    ) -> RuleBackend {
        RuleBackend::new(default_rule_rows(), taxonomy)
    }

    fn fallback() -> ReasoningResponse {
        ReasoningResponse {
            cause: FALLBACK_CAUSE.to_string(),
            cited: vec![],
            actionable_hint: false,
            class_hint: None,
        }
    }

    fn respond(&self, request: &ReasoningRequest) -> ReasoningResponse {
        let (_, category) = categorize(&request.incident_summary, &self.taxonomy);
        let present: BTreeSet<NodeKind> = request.evidence.iter().map(|e| e.node.kind()).collect();
        for row in &self.rows {
            if !row.matches(&category, &present, request.depth) {
                continue;
            }
            let cited: Vec<NodeId> = request
                .evidence
                .iter()
                .filter(|e| row.cite.contains(&e.node.kind()))
                .map(|e| e.node.clone())
                .collect();
            return ReasoningResponse {
                cause: row.cause.replace("{category}", &category),
                cited,
                actionable_hint: row.actionable_hint,
                class_hint: row.class_hint,
            };
        }
        RuleBackend::fallback()
    }
}

impl ReasoningBackend for RuleBackend {
    fn next_cause(&self, request: &ReasoningRequest) -> Result<ReasoningResponse, BackendError> {
        Ok(self.respond(request))
    }

    fn name(&self) -> &'static str {
        "rule"
    }
}

// ---------------------------------------------------------------------------
// Remote HTTP backend
// ---------------------------------------------------------------------------

/// Counting gate bounding concurrent outbound requests.
struct InFlightGate {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlightGate {
    fn new(limit: usize) -> InFlightGate {
        InFlightGate {
            limit: limit.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightSlot<'_> {
        let mut active = self.active.lock().expect("gate lock");
        while *active >= self.limit {
            active = self.freed.wait(active).expect("gate lock");
        }
        *active += 1;
        InFlightSlot { gate: self }
    }
}

struct InFlightSlot<'a> {
    gate: &'a InFlightGate,
}

impl Drop for InFlightSlot<'_> {
    fn drop(&mut self) {
        let mut active = self.gate.active.lock().expect("gate lock");
        *active -= 1;
        self.gate.freed.notify_one();
    }
}

/// Response shape on the wire. Citations arrive as plain strings so one bad
/// id does not poison the rest.
#[derive(Debug, Deserialize)]
struct WireResponse {
    cause: String,
    #[serde(default)]
    cited: Vec<String>,
    #[serde(default)]
    actionable_hint: bool,
    #[serde(default)]
    class_hint: Option<String>,
}

/// HTTP reasoning backend: one POST per why-step, bearer auth from the
/// environment, bounded retries with exponential backoff, and a cap on
/// concurrent in-flight requests.
pub struct RemoteBackend {
    url: String,
    token: Option<String>,
    client: reqwest::blocking::Client,
    attempts: u32,
    initial_backoff: Duration,
    gate: InFlightGate,
}

impl RemoteBackend {
    pub fn new(url: impl Into<String>) -> RemoteBackend {
        RemoteBackend {
            url: url.into(),
            token: std::env::var(TOKEN_ENV_VAR).ok(),
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(30))
                .build()
                .expect("client construction"),
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
            gate: InFlightGate::new(4),
        }
    }

    /// Override the retry policy; tests shrink the backoff.
    pub fn with_retry(mut self, attempts: u32, initial_backoff: Duration) -> RemoteBackend {
        self.attempts = attempts.max(1);
        self.initial_backoff = initial_backoff;
        self
    }

    pub fn with_max_in_flight(mut self, limit: usize) -> RemoteBackend {
        self.gate = InFlightGate::new(limit);
        self
    }

    pub fn with_token(mut self, token: Option<String>) -> RemoteBackend {
        self.token = token;
        self
    }

    fn convert(wire: WireResponse) -> ReasoningResponse {
        let cited = wire
            .cited
            .into_iter()
            .filter_map(|raw| NodeId::new(raw).ok())
            .collect();
        let class_hint = wire.class_hint.as_deref().and_then(RootCauseClass::from_label);
        ReasoningResponse {
            cause: wire.cause,
            cited,
            actionable_hint: wire.actionable_hint,
            class_hint,
        }
    }

    fn post_once(&self, request: &ReasoningRequest) -> Result<ReasoningResponse, String> {
        let mut builder = self.client.post(&self.url).json(request);
        if let Some(token) = &self.token {
            builder = builder.bearer_auth(token);
        }
        let response = builder.send().map_err(|e| e.to_string())?;
        let status = response.status();
        if !status.is_success() {
            return Err(format!("unexpected status {status}"));
        }
        let body = response.text().map_err(|e| e.to_string())?;
        // A 2xx body that fails to parse is a model problem, not a transport
        // problem: treat it as an unsupported step rather than retrying.
        Ok(match serde_json::from_str::<WireResponse>(&body) {
            Ok(wire) => RemoteBackend::convert(wire),
            Err(_) => RuleBackend::fallback(),
        })
    }
}

impl ReasoningBackend for RemoteBackend {
    fn next_cause(&self, request: &ReasoningRequest) -> Result<ReasoningResponse, BackendError> {
        let _slot = self.gate.acquire();
        let mut last_error = String::new();
        for attempt in 1..=self.attempts {
            match self.post_once(request) {
                Ok(response) => return Ok(response),
                Err(message) => last_error = message,
            }
            if attempt < self.attempts {
                let factor = 2u32.saturating_pow(attempt - 1);
                std::thread::sleep(self.initial_backoff.saturating_mul(factor));
            }
        }
        Err(BackendError::Unavailable {
            attempts: self.attempts,
            message: last_error,
        })
    }

    fn name(&self) -> &'static str {
        "remote"
    }
}
