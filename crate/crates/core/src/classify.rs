//! Root-cause classification: recurrence detection over symptom signatures,
//! the class decision ladder, historical validation, attribution shift, and
//! Pareto ranking.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::funnel::{SymptomSignature, WhyChain, WhyStep, UNCATEGORIZED};
use crate::kg::{NodeId, NodeKind};
use crate::text::{keyword_matches, tokenize};

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("pareto ranking needs at least one pattern")]
    EmptyInput,
}

/// Closed root-cause taxonomy. Internal classes are defects the organization
/// can fix in its own code or automation; external classes sit with process
/// or vendors; Unknown is neither.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "kebab-case")]
pub enum RootCauseClass {
    InternalCodeDefect,
    AutomationGap,
    ProcessManagement,
    VendorExternal,
    InfrastructureCapacity,
    Unknown,
}

impl RootCauseClass {
    pub const ALL: [RootCauseClass; 6] = [
        RootCauseClass::InternalCodeDefect,
        RootCauseClass::AutomationGap,
        RootCauseClass::ProcessManagement,
        RootCauseClass::VendorExternal,
        RootCauseClass::InfrastructureCapacity,
        RootCauseClass::Unknown,
    ];

    pub fn label(self) -> &'static str {
        match self {
            RootCauseClass::InternalCodeDefect => "internal-code-defect",
            RootCauseClass::AutomationGap => "automation-gap",
            RootCauseClass::ProcessManagement => "process-management",
            RootCauseClass::VendorExternal => "vendor-external",
            RootCauseClass::InfrastructureCapacity => "infrastructure-capacity",
            RootCauseClass::Unknown => "unknown",
        }
    }

    pub fn from_label(label: &str) -> Option<RootCauseClass> {
        RootCauseClass::ALL.iter().copied().find(|c| c.label() == label)
    }

    pub fn is_internal(self) -> bool {
        matches!(
            self,
            RootCauseClass::InternalCodeDefect
                | RootCauseClass::AutomationGap
                | RootCauseClass::InfrastructureCapacity
        )
    }

    pub fn is_external(self) -> bool {
        matches!(
            self,
            RootCauseClass::ProcessManagement | RootCauseClass::VendorExternal
        )
    }
}

/// A group of incidents sharing one symptom category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrencePattern {
    pub category: String,
    /// Sorted ascending.
    pub incidents: Vec<NodeId>,
    pub count: usize,
}

/// A classified funnel outcome for one incident.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedCause {
    pub incident: NodeId,
    pub class: RootCauseClass,
    /// Which ladder rung fired.
    pub rationale: String,
    pub chain_ref: WhyChain,
    /// Class agreement with another incident in the same recurrence pattern.
    pub validated: bool,
}

/// Original-label versus pipeline-class comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionShift {
    /// original label -> new class -> count.
    pub matrix: BTreeMap<String, BTreeMap<RootCauseClass, usize>>,
    pub internal_share_before: f64,
    pub internal_share_after: f64,
    /// False when every new class is Unknown, leaving the share undefined
    /// (reported as 0).
    pub internal_share_after_defined: bool,
}

impl AttributionShift {
    pub fn total(&self) -> usize {
        self.matrix.values().flat_map(|row| row.values()).sum()
    }

    /// Among incidents originally labeled external, the fraction reclassified
    /// internal. Unknown new classes are excluded from both sides; None when
    /// nothing remains.
    pub fn external_to_internal_share(&self) -> Option<f64> {
        let mut numerator = 0usize;
        let mut denominator = 0usize;
        for (original, row) in &self.matrix {
            let externally_labeled = RootCauseClass::from_label(original)
                .is_some_and(RootCauseClass::is_external);
            if !externally_labeled {
                continue;
            }
            for (class, count) in row {
                if *class == RootCauseClass::Unknown {
                    continue;
                }
                denominator += count;
                if class.is_internal() {
                    numerator += count;
                }
            }
        }
        (denominator > 0).then(|| numerator as f64 / denominator as f64)
    }
}

/// One ranked row of the Pareto table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoEntry {
    pub category: String,
    pub count: usize,
    pub cumulative_fraction: f64,
}

/// Categories ranked by incident count with the 80% cut.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoCut {
    /// Sorted by count descending, category ascending on ties.
    pub ranked: Vec<ParetoEntry>,
    /// Categories of the shortest prefix whose cumulative fraction reaches
    /// 0.8, decided in exact integer arithmetic.
    pub cut: Vec<String>,
}

/// Group signatures by category, drop "uncategorized", keep groups of two
/// or more, order by count descending then category ascending.
pub fn detect_recurrence(signatures: &[(NodeId, SymptomSignature)]) -> Vec<RecurrencePattern> {
    let mut groups: BTreeMap<&str, BTreeSet<&NodeId>> = BTreeMap::new();
    for (incident, signature) in signatures {
        if signature.category == UNCATEGORIZED {
            continue;
        }
        groups.entry(&signature.category).or_default().insert(incident);
    }
    let mut patterns: Vec<RecurrencePattern> = groups
        .into_iter()
        .filter(|(_, members)| members.len() >= 2)
        .map(|(category, members)| RecurrencePattern {
            category: category.to_string(),
            count: members.len(),
            incidents: members.into_iter().cloned().collect(),
        })
        .collect();
    patterns.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.category.cmp(&b.category)));
    patterns
}

fn hint_required_kind(class: RootCauseClass) -> Option<NodeKind> {
    match class {
        RootCauseClass::InternalCodeDefect => Some(NodeKind::CodeFile),
        RootCauseClass::AutomationGap => Some(NodeKind::ChangeRequest),
        _ => None,
    }
}

fn cites_kind(step: &WhyStep, kind: NodeKind) -> bool {
    step.cited.iter().any(|id| id.kind() == kind)
}

fn cause_matches_any(tokens: &[String], keywords: Option<&Vec<String>>) -> bool {
    keywords
        .map(|list| list.iter().any(|k| keyword_matches(k, tokens)))
        .unwrap_or(false)
}

/// Decision ladder over a completed chain. Rungs, first hit wins:
/// 1. an honored backend hint (hints for code-defect and automation-gap
///    require the matching citation kind; other hints require a supported
///    final step),
/// 2. a cited code file,
/// 3. an automation keyword in the terminal cause plus a cited change,
/// 4. keyword tables for process, vendor, and infrastructure,
/// 5. Unknown.
pub fn classify(
    chain: &WhyChain,
    class_hint: Option<RootCauseClass>,
    keywords: &BTreeMap<String, Vec<String>>,
) -> (RootCauseClass, String) {
    let final_step = match chain.steps.last() {
        Some(step) => step,
        None => return (RootCauseClass::Unknown, "no reasoning steps".to_string()),
    };
    if let Some(hint) = class_hint {
        match hint_required_kind(hint) {
            Some(kind) if cites_kind(final_step, kind) => {
                let what = match kind {
                    NodeKind::CodeFile => "a code file",
                    NodeKind::ChangeRequest => "a change request",
                    _ => "required evidence",
                };
                return (
                    hint,
                    format!("backend hint {} accepted: final step cites {what}", hint.label()),
                );
            }
            None if final_step.supported => {
                return (
                    hint,
                    format!(
                        "backend hint {} accepted: final step is supported",
                        hint.label()
                    ),
                );
            }
            _ => {}
        }
    }
    if cites_kind(final_step, NodeKind::CodeFile) {
        return (
            RootCauseClass::InternalCodeDefect,
            "final step cites a code file".to_string(),
        );
    }
    let cause_tokens = tokenize(&chain.terminal_cause);
    if cause_matches_any(&cause_tokens, keywords.get(RootCauseClass::AutomationGap.label()))
        && cites_kind(final_step, NodeKind::ChangeRequest)
    {
        return (
            RootCauseClass::AutomationGap,
            "terminal cause names an automation gap and the final step cites a change request"
                .to_string(),
        );
    }
    for class in [
        RootCauseClass::ProcessManagement,
        RootCauseClass::VendorExternal,
        RootCauseClass::InfrastructureCapacity,
    ] {
        if cause_matches_any(&cause_tokens, keywords.get(class.label())) {
            return (
                class,
                format!("terminal cause matches {} keywords", class.label()),
            );
        }
    }
    (RootCauseClass::Unknown, "no classification rung matched".to_string())
}

/// True iff a pattern contains this incident together with at least one
/// other incident whose classification agrees.
pub fn validate_against_history(
    classified: &ClassifiedCause,
    patterns: &[RecurrencePattern],
    prior: &[ClassifiedCause],
) -> bool {
    for pattern in patterns {
        if !pattern.incidents.contains(&classified.incident) {
            continue;
        }
        let agrees = pattern.incidents.iter().any(|peer| {
            *peer != classified.incident
                && prior
                    .iter()
                    .any(|p| p.incident == *peer && p.class == classified.class)
        });
        if agrees {
            return true;
        }
    }
    false
}

/// Cross-tabulate original team labels against pipeline classes and compute
/// internal shares. Labels or classes mapping to Unknown are excluded from
/// the share denominators; the matrix itself counts everything.
pub fn attribution_shift(
    originals: &[(NodeId, String)],
    classified: &[ClassifiedCause],
) -> AttributionShift {
    let label_by_incident: BTreeMap<&NodeId, &str> = originals
        .iter()
        .map(|(id, label)| (id, label.as_str()))
        .collect();
    let mut matrix: BTreeMap<String, BTreeMap<RootCauseClass, usize>> = BTreeMap::new();
    let mut before_internal = 0usize;
    let mut before_total = 0usize;
    let mut after_internal = 0usize;
    let mut after_total = 0usize;
    for cause in classified {
        let original = label_by_incident
            .get(&cause.incident)
            .copied()
            .unwrap_or("unknown");
        *matrix
            .entry(original.to_string())
            .or_default()
            .entry(cause.class)
            .or_insert(0) += 1;
        if let Some(original_class) = RootCauseClass::from_label(original) {
            if original_class.is_internal() || original_class.is_external() {
                before_total += 1;
                if original_class.is_internal() {
                    before_internal += 1;
                }
            }
        }
        if cause.class != RootCauseClass::Unknown {
            after_total += 1;
            if cause.class.is_internal() {
                after_internal += 1;
            }
        }
    }
    let share = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    AttributionShift {
        matrix,
        internal_share_before: share(before_internal, before_total),
        internal_share_after: share(after_internal, after_total),
        internal_share_after_defined: after_total > 0,
    }
}

/// Rank categories by incident count and take the shortest prefix whose
/// cumulative fraction reaches 0.8. The threshold test is 5*cum >= 4*total
/// in integers, so the cut is exact and invariant under rescaling counts.
pub fn pareto_rank(patterns: &[RecurrencePattern]) -> Result<ParetoCut, ClassifyError> {
    if patterns.is_empty() {
        return Err(ClassifyError::EmptyInput);
    }
    let mut counts: Vec<(String, usize)> = patterns
        .iter()
        .map(|p| (p.category.clone(), p.count))
        .collect();
    counts.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let total: u128 = counts.iter().map(|(_, c)| *c as u128).sum();
    let mut ranked = Vec::with_capacity(counts.len());
    let mut cut_len = None;
    let mut cumulative: u128 = 0;
    for (index, (category, count)) in counts.iter().enumerate() {
        cumulative += *count as u128;
        ranked.push(ParetoEntry {
            category: category.clone(),
            count: *count,
            cumulative_fraction: cumulative as f64 / total as f64,
        });
        if cut_len.is_none() && 5 * cumulative >= 4 * total {
            cut_len = Some(index + 1);
        }
    }
    // The full prefix always reaches 1.0, so cut_len is set by the last entry.
    let cut_len = cut_len.unwrap_or(counts.len());
    let cut = counts.iter().take(cut_len).map(|(c, _)| c.clone()).collect();
    Ok(ParetoCut { ranked, cut })
}
