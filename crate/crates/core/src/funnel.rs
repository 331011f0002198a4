//! Symptom extraction, graph-grounded evidence retrieval, and the iterative
//! five-whys loop.
//!
//! Each step retrieves evidence around the incident node, asks the reasoning
//! backend for the next cause, and strips any citation that was not actually
//! offered as evidence. A step with no surviving citations is unsupported
//! and ends the chain.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ReasoningBackend};
use crate::classify::RootCauseClass;
use crate::config::FunnelConfig;
use crate::ingest::{IncidentRecord, ATTR_SERVICE};
use crate::kg::{KgError, KnowledgeGraph, NodeId, NodeKind};
use crate::text::{keyword_matches, token_set, tokenize};

#[derive(Debug, Error)]
pub enum FunnelError {
    #[error("unknown incident node {0}")]
    UnknownIncident(NodeId),
    #[error("node {0} is not an incident")]
    NotAnIncident(NodeId),
    #[error("reasoning backend unavailable: {message}")]
    BackendUnavailable {
        message: String,
        /// Steps completed before the failure; termination is recorded as
        /// NoSupportedCause.
        partial: Box<WhyChain>,
    },
}

/// What the symptom pass extracted from one incident.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymptomSignature {
    /// All taxonomy keywords found in the description, sorted ascending.
    pub tags: BTreeSet<String>,
    pub service: String,
    /// Best-scoring taxonomy category, or "uncategorized".
    pub category: String,
}

pub const UNCATEGORIZED: &str = "uncategorized";

/// One piece of graph evidence offered to the backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRef {
    pub node: NodeId,
    /// First 200 chars of the node text.
    pub snippet: String,
    pub score: f64,
    #[serde(rename = "hop")]
    pub hop_distance: usize,
}

/// One answered "why".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhyStep {
    pub depth: usize,
    pub question: String,
    pub cause: String,
    /// Citations surviving the evidence guard.
    pub cited: Vec<NodeId>,
    /// True iff cited is non-empty after the guard.
    pub supported: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    ActionableCauseFound,
    MaxDepthReached,
    NoSupportedCause,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Termination::ActionableCauseFound => "ActionableCauseFound",
            Termination::MaxDepthReached => "MaxDepthReached",
            Termination::NoSupportedCause => "NoSupportedCause",
        };
        f.write_str(name)
    }
}

/// A complete five-whys run for one incident.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhyChain {
    pub incident: NodeId,
    pub steps: Vec<WhyStep>,
    pub terminal_cause: String,
    pub termination: Termination,
    /// Class hint attached to the final step's backend response, if any.
    pub class_hint: Option<RootCauseClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorStep {
    pub question: String,
    pub cause: String,
}

/// What the backend sees at each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningRequest {
    pub incident_summary: String,
    pub prior_steps: Vec<PriorStep>,
    pub evidence: Vec<EvidenceRef>,
    /// Always len(prior_steps) + 1.
    pub depth: usize,
}

/// What the backend proposes; citations are validated by the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningResponse {
    pub cause: String,
    pub cited: Vec<NodeId>,
    /// Advisory only; termination is decided structurally from citations.
    pub actionable_hint: bool,
    pub class_hint: Option<RootCauseClass>,
}

/// Tags and best category for a description under a taxonomy. Ties go to the
/// lexicographically smallest category name; zero hits yield "uncategorized".
pub fn categorize(
    description: &str,
    taxonomy: &std::collections::BTreeMap<String, Vec<String>>,
) -> (BTreeSet<String>, String) {
    let tokens = tokenize(description);
    let mut tags = BTreeSet::new();
    let mut best: Option<(&str, usize)> = None;
    for (category, keywords) in taxonomy {
        let mut hits = 0;
        for keyword in keywords {
            if keyword_matches(keyword, &tokens) {
                tags.insert(keyword.to_ascii_lowercase());
                hits += 1;
            }
        }
        if hits > 0 && best.is_none_or(|(_, b)| hits > b) {
            best = Some((category, hits));
        }
    }
    let category = best.map_or_else(|| UNCATEGORIZED.to_string(), |(c, _)| c.to_string());
    (tags, category)
}

/// Symptom signature for an ingested incident record.
pub fn extract_symptoms(
    incident: &IncidentRecord,
    taxonomy: &std::collections::BTreeMap<String, Vec<String>>,
) -> SymptomSignature {
    let (tags, category) = categorize(&incident.description, taxonomy);
    SymptomSignature {
        tags,
        service: incident.service.clone(),
        category,
    }
}

/// Symptom signature for an incident node already in the graph; description
/// comes from the node text and the service from its attributes.
pub fn signature_for_node(
    graph: &KnowledgeGraph,
    incident: &NodeId,
    taxonomy: &std::collections::BTreeMap<String, Vec<String>>,
) -> Result<SymptomSignature, FunnelError> {
    let node = graph
        .node(incident)
        .ok_or_else(|| FunnelError::UnknownIncident(incident.clone()))?;
    if node.kind != NodeKind::Incident {
        return Err(FunnelError::NotAnIncident(incident.clone()));
    }
    let (tags, category) = categorize(&node.text, taxonomy);
    Ok(SymptomSignature {
        tags,
        service: node.attrs.get(ATTR_SERVICE).cloned().unwrap_or_default(),
        category,
    })
}

/// Evidence candidates are every node within `evidence_hops` of the incident
/// that shares at least one token with the hypothesis, ordered by score
/// descending, hop ascending, newest timestamp first (absent last), id
/// ascending, truncated to `evidence_top_n`.
pub fn retrieve_evidence(
    graph: &KnowledgeGraph,
    incident: &NodeId,
    hypothesis: &str,
    config: &FunnelConfig,
) -> Result<Vec<EvidenceRef>, KgError> {
    let candidates = graph.k_hop(incident, config.evidence_hops, None)?;
    let query = token_set(hypothesis);
    let mut refs: Vec<EvidenceRef> = Vec::new();
    for (id, hop) in candidates {
        let tokens = graph.node_tokens(&id).expect("candidate is in graph");
        let score = crate::text::overlap_score(&query, tokens);
        if score == 0 {
            continue;
        }
        let node = graph.node(&id).expect("candidate is in graph");
        refs.push(EvidenceRef {
            snippet: node.text.chars().take(200).collect(),
            node: id,
            score: score as f64,
            hop_distance: hop,
        });
    }
    refs.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("scores are finite")
            .then_with(|| a.hop_distance.cmp(&b.hop_distance))
            .then_with(|| {
                let ta = graph.node(&a.node).and_then(|n| n.ts);
                let tb = graph.node(&b.node).and_then(|n| n.ts);
                match (ta, tb) {
                    (Some(x), Some(y)) => y.cmp(&x),
                    (Some(_), None) => std::cmp::Ordering::Less,
                    (None, Some(_)) => std::cmp::Ordering::Greater,
                    (None, None) => std::cmp::Ordering::Equal,
                }
            })
            .then_with(|| a.node.cmp(&b.node))
    });
    refs.truncate(config.evidence_top_n);
    Ok(refs)
}

/// One backend call plus the evidence guard, also surfacing the response's
/// class hint for the classifier.
fn guarded_step(
    backend: &dyn ReasoningBackend,
    request: &ReasoningRequest,
) -> Result<(WhyStep, Option<RootCauseClass>), BackendError> {
    let basis = request
        .prior_steps
        .last()
        .map_or(request.incident_summary.as_str(), |s| s.cause.as_str());
    let question = format!("Why: {basis}?");
    let response = backend.next_cause(request)?;
    let offered: BTreeSet<&NodeId> = request.evidence.iter().map(|e| &e.node).collect();
    let cited: Vec<NodeId> = response
        .cited
        .into_iter()
        .filter(|id| offered.contains(id))
        .collect();
    let supported = !cited.is_empty();
    let step = WhyStep {
        depth: request.depth,
        question,
        cause: response.cause,
        cited,
        supported,
    };
    Ok((step, response.class_hint))
}

/// Ask the backend for the next cause and apply the evidence guard: any
/// cited id not offered in `request.evidence` is removed, and the step is
/// unsupported when nothing survives. The step is returned even then.
pub fn next_why(
    backend: &dyn ReasoningBackend,
    request: &ReasoningRequest,
) -> Result<WhyStep, BackendError> {
    guarded_step(backend, request).map(|(step, _)| step)
}

fn cites_actionable(step: &WhyStep) -> bool {
    step.cited
        .iter()
        .any(|id| matches!(id.kind(), NodeKind::CodeFile | NodeKind::ChangeRequest))
}

/// Run the funnel loop for one ingested incident. The initial hypothesis is
/// the incident node's text; each later hypothesis is the previous cause.
///
/// Termination: ActionableCauseFound when a supported step cites a CodeFile
/// or ChangeRequest, NoSupportedCause on the first unsupported step,
/// MaxDepthReached otherwise. A backend transport failure aborts with the
/// partial chain preserved inside the error.
pub fn run_funnel(
    graph: &KnowledgeGraph,
    incident: &NodeId,
    backend: &dyn ReasoningBackend,
    config: &FunnelConfig,
) -> Result<WhyChain, FunnelError> {
    let node = graph
        .node(incident)
        .ok_or_else(|| FunnelError::UnknownIncident(incident.clone()))?;
    if node.kind != NodeKind::Incident {
        return Err(FunnelError::NotAnIncident(incident.clone()));
    }
    let summary = node.text.clone();
    let mut hypothesis = summary.clone();
    let mut prior: Vec<PriorStep> = Vec::new();
    let mut steps: Vec<WhyStep> = Vec::new();
    let mut class_hint = None;
    let mut termination = Termination::MaxDepthReached;
    for depth in 1..=config.max_depth {
        let evidence = retrieve_evidence(graph, incident, &hypothesis, config).map_err(|_| {
            // The incident was checked above; k_hop can only fail on an
            // unknown start node.
            FunnelError::UnknownIncident(incident.clone())
        })?;
        let request = ReasoningRequest {
            incident_summary: summary.clone(),
            prior_steps: prior.clone(),
            evidence,
            depth,
        };
        let (step, hint) = match guarded_step(backend, &request) {
            Ok(result) => result,
            Err(e) => {
                let terminal_cause = steps.last().map(|s| s.cause.clone()).unwrap_or_default();
                return Err(FunnelError::BackendUnavailable {
                    message: e.to_string(),
                    partial: Box::new(WhyChain {
                        incident: incident.clone(),
                        steps,
                        terminal_cause,
                        termination: Termination::NoSupportedCause,
                        class_hint,
                    }),
                });
            }
        };
        class_hint = hint;
        hypothesis = step.cause.clone();
        prior.push(PriorStep {
            question: step.question.clone(),
            cause: step.cause.clone(),
        });
        let actionable = step.supported && cites_actionable(&step);
        let unsupported = !step.supported;
        steps.push(step);
        if actionable {
            termination = Termination::ActionableCauseFound;
            break;
        }
        if unsupported {
            termination = Termination::NoSupportedCause;
            break;
        }
    }
    let terminal_cause = steps.last().map(|s| s.cause.clone()).unwrap_or_default();
    Ok(WhyChain {
        incident: incident.clone(),
        steps,
        terminal_cause,
        termination,
        class_hint,
    })
}
