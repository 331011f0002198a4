//! Orchestration: run the analysis stages over a sealed graph for a set of
//! incidents and assemble a self-consistent report.
//!
//! Per-incident work fans out across a bounded worker pool; the graph is
//! immutable, so workers share it without locks. Aggregates are computed
//! exactly the way [`PipelineReport::verify_consistency`] recomputes them.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::backend::ReasoningBackend;
use crate::classify::{
    attribution_shift, classify, detect_recurrence, pareto_rank, validate_against_history,
    ClassifiedCause,
};
use crate::config::Config;
use crate::funnel::{run_funnel, signature_for_node, FunnelError, SymptomSignature};
use crate::ingest::ATTR_ORIGINAL_ATTRIBUTION;
use crate::kg::{KnowledgeGraph, NodeId, NodeKind};
use crate::report::{IncidentEntry, PipelineReport, ReportMeta, VALIDATION_NOTE};

pub const REPORT_VERSION: u32 = 1;

/// An assembled report plus any backend failures. A failed incident keeps
/// its partial chain in the report; the failure is recorded here so callers
/// can signal it without discarding the rest of the run.
#[derive(Debug)]
pub struct AnalysisOutcome {
    pub report: PipelineReport,
    /// incident id -> transport failure message.
    pub backend_failures: BTreeMap<NodeId, String>,
}

/// Every non-stub incident in the graph, ascending by id. Stub incidents
/// (known only from cross-references) carry no symptom text to analyze.
pub fn all_incident_targets(graph: &KnowledgeGraph) -> Vec<NodeId> {
    graph
        .nodes()
        .filter(|n| n.kind == NodeKind::Incident && !n.stub)
        .map(|n| n.id.clone())
        .collect()
}

/// Run the funnel and classification for `targets` (default: every non-stub
/// incident) and assemble the report. `jobs` bounds the worker count; any
/// value produces identical output.
pub fn analyze_graph(
    graph: &KnowledgeGraph,
    config: &Config,
    backend: &dyn ReasoningBackend,
    targets: Option<&[NodeId]>,
    jobs: usize,
) -> Result<AnalysisOutcome, FunnelError> {
    let targets: Vec<NodeId> = match targets {
        Some(list) => list.to_vec(),
        None => all_incident_targets(graph),
    };

    let analyze_one = |id: &NodeId| -> Result<(IncidentEntry, Option<String>), FunnelError> {
        let signature = signature_for_node(graph, id, &config.funnel.symptom_taxonomy)?;
        let (chain, failure) = match run_funnel(graph, id, backend, &config.funnel) {
            Ok(chain) => (chain, None),
            Err(FunnelError::BackendUnavailable { message, partial }) => (*partial, Some(message)),
            Err(other) => return Err(other),
        };
        let (class, rationale) = classify(&chain, chain.class_hint, &config.classify_keywords);
        let original_attribution = graph
            .node(id)
            .and_then(|n| n.attrs.get(ATTR_ORIGINAL_ATTRIBUTION).cloned())
            .unwrap_or_else(|| "unknown".to_string());
        Ok((
            IncidentEntry {
                id: id.clone(),
                signature,
                chain,
                class,
                rationale,
                original_attribution,
                // Set below once every entry is known.
                validated: false,
            },
            failure,
        ))
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("worker pool");
    let results: Vec<Result<(IncidentEntry, Option<String>), FunnelError>> =
        pool.install(|| targets.par_iter().map(analyze_one).collect());

    let mut entries = Vec::with_capacity(results.len());
    let mut backend_failures = BTreeMap::new();
    for (id, result) in targets.iter().zip(results) {
        let (entry, failure) = result?;
        if let Some(message) = failure {
            backend_failures.insert(id.clone(), message);
        }
        entries.push(entry);
    }

    let (from, to) = incident_window(graph, &targets);
    let meta = ReportMeta {
        version: REPORT_VERSION,
        backend: backend.name().to_string(),
        incidents_from: from,
        incidents_to: to,
        max_depth: config.funnel.max_depth,
        evidence_hops: config.funnel.evidence_hops,
        evidence_top_n: config.funnel.evidence_top_n,
        validation_note: VALIDATION_NOTE.to_string(),
    };
    Ok(AnalysisOutcome {
        report: assemble(meta, entries, None),
        backend_failures,
    })
}

/// Re-run classification over the chains saved in a report, preserving each
/// chain's backend hint, and rebuild the aggregates.
pub fn reclassify(report: &PipelineReport, keywords: &BTreeMap<String, Vec<String>>) -> PipelineReport {
    let entries: Vec<IncidentEntry> = report
        .incidents
        .iter()
        .map(|e| {
            let (class, rationale) = classify(&e.chain, e.chain.class_hint, keywords);
            IncidentEntry {
                class,
                rationale,
                validated: false,
                ..e.clone()
            }
        })
        .collect();
    assemble(report.meta.clone(), entries, report.scan.clone())
}

/// Oldest and newest opened timestamp among the analyzed incidents.
fn incident_window(graph: &KnowledgeGraph, targets: &[NodeId]) -> (Option<i64>, Option<i64>) {
    let stamps: Vec<i64> = targets
        .iter()
        .filter_map(|id| graph.node(id).and_then(|n| n.ts))
        .collect();
    (stamps.iter().min().copied(), stamps.iter().max().copied())
}

/// Compute validated flags and aggregates from the entries; the single
/// source of truth shared by analysis and reclassification.
fn assemble(
    meta: ReportMeta,
    mut entries: Vec<IncidentEntry>,
    scan: Option<crate::scan::ScanSummary>,
) -> PipelineReport {
    let signatures: Vec<(NodeId, SymptomSignature)> = entries
        .iter()
        .map(|e| (e.id.clone(), e.signature.clone()))
        .collect();
    let patterns = detect_recurrence(&signatures);
    let causes: Vec<ClassifiedCause> = entries
        .iter()
        .map(|e| ClassifiedCause {
            incident: e.id.clone(),
            class: e.class,
            rationale: e.rationale.clone(),
            chain_ref: e.chain.clone(),
            validated: false,
        })
        .collect();
    let flags: Vec<bool> = causes
        .iter()
        .map(|c| validate_against_history(c, &patterns, &causes))
        .collect();
    for (entry, flag) in entries.iter_mut().zip(flags) {
        entry.validated = flag;
    }
    let originals: Vec<(NodeId, String)> = entries
        .iter()
        .map(|e| (e.id.clone(), e.original_attribution.clone()))
        .collect();
    let shift = (!entries.is_empty()).then(|| attribution_shift(&originals, &causes));
    let pareto =
        (!patterns.is_empty()).then(|| pareto_rank(&patterns).expect("patterns are non-empty"));
    PipelineReport {
        meta,
        incidents: entries,
        patterns,
        shift,
        pareto,
        scan,
    }
}
