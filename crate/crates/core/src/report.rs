//! Structured analysis reports: a line-delimited machine format that
//! round-trips losslessly, a human-readable text rendering, and a
//! self-consistency check that recomputes every aggregate from the
//! per-incident entries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{
    attribution_shift, detect_recurrence, pareto_rank, validate_against_history, AttributionShift,
    ClassifiedCause, ParetoCut, RecurrencePattern, RootCauseClass,
};
use crate::funnel::{SymptomSignature, WhyChain};
use crate::kg::NodeId;
use crate::scan::ScanSummary;

/// Wording required on every report: "validated" is a recurrence proxy, not
/// a human review outcome.
pub const VALIDATION_NOTE: &str = "validated is a recurrence-based proxy: the class agrees with \
another incident in the same recurrence pattern; human post-incident review outcomes are not \
reproduced";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("report is missing its meta line")]
    MissingMeta,
    #[error("report has more than one {0} line")]
    DuplicateSection(&'static str),
}

/// Run parameters and analysis context. Timestamps are derived from the
/// analyzed incidents, not from the wall clock, so identical inputs give
/// identical reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub version: u32,
    pub backend: String,
    pub incidents_from: Option<i64>,
    pub incidents_to: Option<i64>,
    pub max_depth: usize,
    pub evidence_hops: usize,
    pub evidence_top_n: usize,
    pub validation_note: String,
}

/// Everything the pipeline concluded about one incident.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentEntry {
    pub id: NodeId,
    pub signature: SymptomSignature,
    pub chain: WhyChain,
    pub class: RootCauseClass,
    pub rationale: String,
    pub original_attribution: String,
    pub validated: bool,
}

/// A full analysis run: per-incident entries plus aggregates recomputable
/// from them.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub meta: ReportMeta,
    pub incidents: Vec<IncidentEntry>,
    pub patterns: Vec<RecurrencePattern>,
    pub shift: Option<AttributionShift>,
    pub pareto: Option<ParetoCut>,
    pub scan: Option<ScanSummary>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ReportLine {
    Meta(ReportMeta),
    Incident(IncidentEntry),
    Pattern(RecurrencePattern),
    Shift(AttributionShift),
    Pareto(ParetoCut),
    Scan(ScanSummary),
}

impl PipelineReport {
    /// Canonical line-delimited serialization: meta, incidents, patterns,
    /// shift, pareto, scan. Byte-stable for a given report.
    pub fn to_jsonl(&self) -> String {
        let mut lines: Vec<String> = Vec::new();
        let mut push = |line: &ReportLine| {
            lines.push(serde_json::to_string(line).expect("report serializes"));
        };
        push(&ReportLine::Meta(self.meta.clone()));
        for entry in &self.incidents {
            push(&ReportLine::Incident(entry.clone()));
        }
        for pattern in &self.patterns {
            push(&ReportLine::Pattern(pattern.clone()));
        }
        if let Some(shift) = &self.shift {
            push(&ReportLine::Shift(shift.clone()));
        }
        if let Some(pareto) = &self.pareto {
            push(&ReportLine::Pareto(pareto.clone()));
        }
        if let Some(scan) = &self.scan {
            push(&ReportLine::Scan(scan.clone()));
        }
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }

    pub fn from_jsonl(content: &str) -> Result<PipelineReport, ReportError> {
        let mut meta = None;
        let mut incidents = Vec::new();
        let mut patterns = Vec::new();
        let mut shift = None;
        let mut pareto = None;
        let mut scan = None;
        for (idx, line) in content.lines().enumerate() {
            let line_no = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let parsed: ReportLine =
                serde_json::from_str(trimmed).map_err(|e| ReportError::Malformed {
                    line: line_no,
                    message: e.to_string(),
                })?;
            match parsed {
                ReportLine::Meta(m) => {
                    if meta.replace(m).is_some() {
                        return Err(ReportError::DuplicateSection("meta"));
                    }
                }
                ReportLine::Incident(e) => incidents.push(e),
                ReportLine::Pattern(p) => patterns.push(p),
                ReportLine::Shift(s) => {
                    if shift.replace(s).is_some() {
                        return Err(ReportError::DuplicateSection("shift"));
                    }
                }
                ReportLine::Pareto(p) => {
                    if pareto.replace(p).is_some() {
                        return Err(ReportError::DuplicateSection("pareto"));
                    }
                }
                ReportLine::Scan(s) => {
                    if scan.replace(s).is_some() {
                        return Err(ReportError::DuplicateSection("scan"));
                    }
                }
            }
        }
        Ok(PipelineReport {
            meta: meta.ok_or(ReportError::MissingMeta)?,
            incidents,
            patterns,
            shift,
            pareto,
            scan,
        })
    }

    fn causes(&self) -> Vec<ClassifiedCause> {
        self.incidents
            .iter()
            .map(|e| ClassifiedCause {
                incident: e.id.clone(),
                class: e.class,
                rationale: e.rationale.clone(),
                chain_ref: e.chain.clone(),
                validated: e.validated,
            })
            .collect()
    }

    /// Recompute every aggregate from the per-incident entries and compare
    /// with the stored sections.
    pub fn verify_consistency(&self) -> Result<(), String> {
        let signatures: Vec<(NodeId, SymptomSignature)> = self
            .incidents
            .iter()
            .map(|e| (e.id.clone(), e.signature.clone()))
            .collect();
        let patterns = detect_recurrence(&signatures);
        if patterns != self.patterns {
            return Err("stored recurrence patterns do not match the incident entries".into());
        }
        let causes = self.causes();
        for (entry, cause) in self.incidents.iter().zip(&causes) {
            let expected = validate_against_history(cause, &patterns, &causes);
            if expected != entry.validated {
                return Err(format!(
                    "validated flag for {} does not match recurrence agreement",
                    entry.id
                ));
            }
        }
        let originals: Vec<(NodeId, String)> = self
            .incidents
            .iter()
            .map(|e| (e.id.clone(), e.original_attribution.clone()))
            .collect();
        let shift = (!self.incidents.is_empty()).then(|| attribution_shift(&originals, &causes));
        if shift != self.shift {
            return Err("stored attribution shift does not match the incident entries".into());
        }
        let pareto = (!patterns.is_empty())
            .then(|| pareto_rank(&patterns).expect("patterns are non-empty"));
        if pareto != self.pareto {
            return Err("stored pareto ranking does not match the incident entries".into());
        }
        Ok(())
    }

    /// Human-readable rendering: per-incident why tables, the shift matrix,
    /// and the Pareto cut.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let line = |out: &mut String, s: String| {
            out.push_str(&s);
            out.push('\n');
        };
        line(&mut out, "ROOT CAUSE ANALYSIS".into());
        line(&mut out, format!("backend: {}", self.meta.backend));
        line(
            &mut out,
            format!(
                "funnel: max_depth={} evidence_hops={} evidence_top_n={}",
                self.meta.max_depth, self.meta.evidence_hops, self.meta.evidence_top_n
            ),
        );
        match (self.meta.incidents_from, self.meta.incidents_to) {
            (Some(from), Some(to)) => {
                line(&mut out, format!("incident window: {from}..{to}"));
            }
            _ => line(&mut out, "incident window: none".into()),
        }
        line(&mut out, format!("note: {}", self.meta.validation_note));
        line(&mut out, String::new());
        line(
            &mut out,
            format!("INCIDENTS ({} analyzed)", self.incidents.len()),
        );
        for entry in &self.incidents {
            let validated = if entry.validated { "validated" } else { "unvalidated" };
            line(
                &mut out,
                format!(
                    "- {} [{}] class {} ({validated}, originally {})",
                    entry.id,
                    entry.signature.category,
                    entry.class.label(),
                    entry.original_attribution
                ),
            );
            for step in &entry.chain.steps {
                line(&mut out, format!("  {}. {}", step.depth, step.question));
                let cites = if step.cited.is_empty() {
                    "no citations".to_string()
                } else {
                    let ids: Vec<String> = step.cited.iter().map(|c| c.to_string()).collect();
                    format!("cites {}", ids.join(", "))
                };
                let support = if step.supported { "supported" } else { "unsupported" };
                line(
                    &mut out,
                    format!("     -> {} [{cites}] ({support})", step.cause),
                );
            }
            line(
                &mut out,
                format!("  termination: {}", entry.chain.termination),
            );
            line(&mut out, format!("  rationale: {}", entry.rationale));
        }
        line(&mut out, String::new());
        line(&mut out, "RECURRENCE PATTERNS".into());
        if self.patterns.is_empty() {
            line(&mut out, "- none detected".into());
        }
        for pattern in &self.patterns {
            let ids: Vec<String> = pattern.incidents.iter().map(|i| i.to_string()).collect();
            line(
                &mut out,
                format!("- {}: {} incidents ({})", pattern.category, pattern.count, ids.join(", ")),
            );
        }
        line(&mut out, String::new());
        line(&mut out, "ATTRIBUTION SHIFT".into());
        match &self.shift {
            None => line(&mut out, "- no incidents".into()),
            Some(shift) => {
                for (original, row) in &shift.matrix {
                    for (class, count) in row {
                        line(
                            &mut out,
                            format!("- {original} -> {}: {count}", class.label()),
                        );
                    }
                }
                line(
                    &mut out,
                    format!("internal share before: {:.3}", shift.internal_share_before),
                );
                let after = if shift.internal_share_after_defined {
                    format!("{:.3}", shift.internal_share_after)
                } else {
                    "undefined (all classes unknown)".to_string()
                };
                line(&mut out, format!("internal share after: {after}"));
                let reattributed = match shift.external_to_internal_share() {
                    Some(share) => format!("{share:.3}"),
                    None => "undefined".to_string(),
                };
                line(
                    &mut out,
                    format!("external-to-internal reattribution: {reattributed}"),
                );
            }
        }
        line(&mut out, String::new());
        line(&mut out, "PARETO RANKING".into());
        match &self.pareto {
            None => line(&mut out, "- no recurrence patterns".into()),
            Some(pareto) => {
                for entry in &pareto.ranked {
                    let marker = if pareto.cut.contains(&entry.category) {
                        " [cut]"
                    } else {
                        ""
                    };
                    line(
                        &mut out,
                        format!(
                            "- {}: {} (cumulative {:.3}){marker}",
                            entry.category, entry.count, entry.cumulative_fraction
                        ),
                    );
                }
            }
        }
        if let Some(scan) = &self.scan {
            line(&mut out, String::new());
            line(&mut out, "SCAN SUMMARY".into());
            line(
                &mut out,
                format!(
                    "- {} of {} projects matched, {} files",
                    scan.matched_projects, scan.total_projects, scan.matched_files
                ),
            );
            for (rule, stats) in &scan.per_rule {
                line(
                    &mut out,
                    format!(
                        "- rule {rule}: {} projects, {} files",
                        stats.projects, stats.files
                    ),
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funnel::{Termination, WhyStep};
    use std::collections::BTreeSet;

    fn id(raw: &str) -> NodeId {
        NodeId::new(raw).unwrap()
    }

    fn entry(raw_id: &str, category: &str, class: RootCauseClass) -> IncidentEntry {
        let chain = WhyChain {
            incident: id(raw_id),
            steps: vec![WhyStep {
                depth: 1,
                question: "Why: symptom?".into(),
                cause: "cause".into(),
                cited: vec![id("chg:CR-1")],
                supported: true,
            }],
            terminal_cause: "cause".into(),
            termination: Termination::ActionableCauseFound,
            class_hint: None,
        };
        IncidentEntry {
            id: id(raw_id),
            signature: SymptomSignature {
                tags: BTreeSet::new(),
                service: "db".into(),
                category: category.into(),
            },
            chain,
            class,
            rationale: "test".into(),
            original_attribution: "vendor-external".into(),
            validated: false,
        }
    }

    fn sample_report() -> PipelineReport {
        let incidents = vec![
            entry("inc:A1", "deadlock", RootCauseClass::InternalCodeDefect),
            entry("inc:A2", "deadlock", RootCauseClass::InternalCodeDefect),
        ];
        let signatures: Vec<(NodeId, SymptomSignature)> = incidents
            .iter()
            .map(|e| (e.id.clone(), e.signature.clone()))
            .collect();
        let patterns = detect_recurrence(&signatures);
        let mut report = PipelineReport {
            meta: ReportMeta {
                version: 1,
                backend: "rule".into(),
                incidents_from: Some(100),
                incidents_to: Some(200),
                max_depth: 5,
                evidence_hops: 2,
                evidence_top_n: 10,
                validation_note: VALIDATION_NOTE.into(),
            },
            incidents,
            patterns,
            shift: None,
            pareto: None,
            scan: None,
        };
        let causes = report.causes();
        let flags: Vec<bool> = causes
            .iter()
            .map(|c| validate_against_history(c, &report.patterns, &causes))
            .collect();
        for (entry, flag) in report.incidents.iter_mut().zip(flags) {
            entry.validated = flag;
        }
        let originals: Vec<(NodeId, String)> = report
            .incidents
            .iter()
            .map(|e| (e.id.clone(), e.original_attribution.clone()))
            .collect();
        report.shift = Some(attribution_shift(&originals, &report.causes()));
        report.pareto = Some(pareto_rank(&report.patterns).unwrap());
        report
    }

    #[test]
    fn jsonl_round_trip_is_lossless_and_byte_stable() {
        let report = sample_report();
        let first = report.to_jsonl();
        let reloaded = PipelineReport::from_jsonl(&first).unwrap();
        assert_eq!(reloaded.to_jsonl(), first);
        assert_eq!(reloaded.incidents, report.incidents);
    }

    #[test]
    fn missing_meta_rejected() {
        let err = PipelineReport::from_jsonl("").unwrap_err();
        assert!(matches!(err, ReportError::MissingMeta));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let report = sample_report();
        let mut content = report.to_jsonl();
        content.push_str("{nope\n");
        let err = PipelineReport::from_jsonl(&content).unwrap_err();
        match err {
            ReportError::Malformed { line, .. } => assert!(line > 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn consistency_check_accepts_computed_report() {
        sample_report().verify_consistency().unwrap();
    }

    #[test]
    fn consistency_check_catches_tampered_pattern() {
        let mut report = sample_report();
        report.patterns[0].count = 99;
        assert!(report.verify_consistency().is_err());
    }

    #[test]
    fn consistency_check_catches_tampered_share() {
        let mut report = sample_report();
        if let Some(shift) = &mut report.shift {
            shift.internal_share_after = 0.123;
        }
        assert!(report.verify_consistency().is_err());
    }

    #[test]
    fn text_rendering_mentions_validation_proxy() {
        let report = sample_report();
        let text = report.render_text();
        assert!(text.contains("recurrence-based proxy"));
        assert!(text.contains("PARETO RANKING"));
        assert!(text.contains("ATTRIBUTION SHIFT"));
    }

    #[test]
    fn empty_report_renders_placeholders() {
        let report = PipelineReport {
            meta: ReportMeta {
                version: 1,
                backend: "rule".into(),
                incidents_from: None,
                incidents_to: None,
                max_depth: 5,
                evidence_hops: 2,
                evidence_top_n: 10,
                validation_note: VALIDATION_NOTE.into(),
            },
            incidents: vec![],
            patterns: vec![],
            shift: None,
            pareto: None,
            scan: None,
        };
        report.verify_consistency().unwrap();
        let text = report.render_text();
        assert!(text.contains("incident window: none"));
        assert!(text.contains("none detected"));
    }
}
