//! Cross-project defect scanner: line-oriented literal and regex rules over
//! a corpus laid out as `root/<project>/<paths...>`.
//!
//! Scanning is read-only, skips binary and unreadable files without failing,
//! and merges parallel results into one deterministic order.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::funnel::{Termination, WhyChain};
use crate::kg::{NodeId, NodeKind};
use crate::text::tokenize;

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("rule {rule}: invalid pattern: {detail}")]
    InvalidPattern { rule: String, detail: String },
    #[error("rule file line {line}: {message}")]
    InvalidRuleLine { line: usize, message: String },
    #[error("rule {0} is a draft; confirm it before scanning")]
    UnconfirmedRule(String),
    #[error("cannot scan corpus root {path}: {message}")]
    CorpusRoot { path: String, message: String },
    #[error("not actionable: {0}")]
    NotActionable(String),
}

/// Whether a file must contain all matchers or any one of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchMode {
    #[serde(rename = "all")]
    AllOf,
    #[serde(rename = "any")]
    AnyOf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatcherKind {
    Literal,
    Regex,
}

/// On-disk rule shape: one JSON object per line in a rule file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub id: String,
    pub description: String,
    pub mode: MatchMode,
    /// Glob over project-relative paths, e.g. `**/*.sql`.
    pub glob: String,
    pub matchers: Vec<MatcherSpec>,
    /// Rules written by hand are confirmed; drafts must be confirmed before
    /// a scan will accept them.
    #[serde(default = "confirmed_default")]
    pub confirmed: bool,
}

fn confirmed_default() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatcherSpec {
    pub kind: MatcherKind,
    pub pattern: String,
}

#[derive(Debug, Clone)]
enum CompiledMatcher {
    Literal(String),
    Pattern(Regex),
}

impl CompiledMatcher {
    fn hits(&self, line: &str) -> bool {
        match self {
            CompiledMatcher::Literal(needle) => line.contains(needle),
            CompiledMatcher::Pattern(re) => re.is_match(line),
        }
    }

    fn spec(&self) -> MatcherSpec {
        match self {
            CompiledMatcher::Literal(p) => MatcherSpec {
                kind: MatcherKind::Literal,
                pattern: p.clone(),
            },
            CompiledMatcher::Pattern(re) => MatcherSpec {
                kind: MatcherKind::Regex,
                pattern: re.as_str().to_string(),
            },
        }
    }
}

/// Translate a path glob into an anchored regex. `**/` crosses directories,
/// `*` and `?` stay within one path segment.
fn glob_to_regex(glob: &str) -> String {
    let mut re = String::from("^");
    let mut chars = glob.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '*' => {
                if chars.peek() == Some(&'*') {
                    chars.next();
                    if chars.peek() == Some(&'/') {
                        chars.next();
                        re.push_str("(?:[^/]+/)*");
                    } else {
                        re.push_str(".*");
                    }
                } else {
                    re.push_str("[^/]*");
                }
            }
            '?' => re.push_str("[^/]"),
            other => re.push_str(&regex::escape(&other.to_string())),
        }
    }
    re.push('$');
    re
}

/// A compiled, ready-to-run rule.
#[derive(Debug, Clone)]
pub struct ScanRule {
    pub id: String,
    pub description: String,
    pub mode: MatchMode,
    pub file_glob: String,
    pub confirmed: bool,
    glob_re: Regex,
    matchers: Vec<CompiledMatcher>,
}

impl ScanRule {
    pub fn compile(spec: &RuleSpec) -> Result<ScanRule, ScanError> {
        if spec.matchers.is_empty() {
            return Err(ScanError::InvalidPattern {
                rule: spec.id.clone(),
                detail: "a rule needs at least one matcher".into(),
            });
        }
        let glob_re = Regex::new(&glob_to_regex(&spec.glob)).map_err(|e| {
            ScanError::InvalidPattern {
                rule: spec.id.clone(),
                detail: format!("glob: {e}"),
            }
        })?;
        let mut matchers = Vec::with_capacity(spec.matchers.len());
        for m in &spec.matchers {
            matchers.push(match m.kind {
                MatcherKind::Literal => CompiledMatcher::Literal(m.pattern.clone()),
                MatcherKind::Regex => CompiledMatcher::Pattern(Regex::new(&m.pattern).map_err(
                    |e| ScanError::InvalidPattern {
                        rule: spec.id.clone(),
                        detail: e.to_string(),
                    },
                )?),
            });
        }
        Ok(ScanRule {
            id: spec.id.clone(),
            description: spec.description.clone(),
            mode: spec.mode,
            file_glob: spec.glob.clone(),
            confirmed: spec.confirmed,
            glob_re,
            matchers,
        })
    }

    /// The serializable shape of this rule (used when emitting drafts).
    pub fn spec(&self) -> RuleSpec {
        RuleSpec {
            id: self.id.clone(),
            description: self.description.clone(),
            mode: self.mode,
            glob: self.file_glob.clone(),
            matchers: self.matchers.iter().map(CompiledMatcher::spec).collect(),
            confirmed: self.confirmed,
        }
    }

    pub fn confirm(mut self) -> ScanRule {
        self.confirmed = true;
        self
    }

    pub fn glob_matches(&self, relative_path: &str) -> bool {
        self.glob_re.is_match(relative_path)
    }

    /// 1-based line numbers where any matcher hits, if the file qualifies
    /// under the rule's mode.
    fn match_lines(&self, content: &str) -> Option<Vec<usize>> {
        let mut matcher_hit = vec![false; self.matchers.len()];
        let mut lines: BTreeSet<usize> = BTreeSet::new();
        for (idx, line) in content.lines().enumerate() {
            for (mi, matcher) in self.matchers.iter().enumerate() {
                if matcher.hits(line) {
                    matcher_hit[mi] = true;
                    lines.insert(idx + 1);
                }
            }
        }
        let qualifies = match self.mode {
            MatchMode::AnyOf => matcher_hit.iter().any(|h| *h),
            MatchMode::AllOf => matcher_hit.iter().all(|h| *h),
        };
        qualifies.then(|| lines.into_iter().collect())
    }
}

/// Parse and compile one rule-file line.
pub fn compile_rule(line: &str) -> Result<ScanRule, ScanError> {
    let spec: RuleSpec = serde_json::from_str(line).map_err(|e| ScanError::InvalidRuleLine {
        line: 1,
        message: e.to_string(),
    })?;
    ScanRule::compile(&spec)
}

/// Parse a whole rule file (one JSON object per non-empty line).
pub fn load_rules(content: &str) -> Result<Vec<ScanRule>, ScanError> {
    let mut rules = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let spec: RuleSpec =
            serde_json::from_str(trimmed).map_err(|e| ScanError::InvalidRuleLine {
                line: idx + 1,
                message: e.to_string(),
            })?;
        rules.push(ScanRule::compile(&spec)?);
    }
    Ok(rules)
}

/// One matching file for one rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanMatch {
    pub project: String,
    /// Project-relative path with `/` separators.
    pub path: String,
    /// Sorted, unique, 1-based.
    pub lines: Vec<usize>,
    pub rule: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RuleStats {
    pub projects: usize,
    pub files: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScanSummary {
    pub total_projects: usize,
    pub matched_projects: usize,
    pub matched_files: usize,
    /// rule id -> distinct matched projects and files.
    pub per_rule: BTreeMap<String, RuleStats>,
    /// "project/path" -> reason for files skipped instead of scanned.
    pub skipped: BTreeMap<String, String>,
}

/// True when the first 8 KiB contain a NUL byte.
fn looks_binary(bytes: &[u8]) -> bool {
    bytes.iter().take(8192).any(|b| *b == 0)
}

fn relative_path(base: &Path, full: &Path) -> String {
    let rel = full.strip_prefix(base).expect("walked under base");
    let parts: Vec<String> = rel
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect();
    parts.join("/")
}

/// Scan every project under `corpus_root` with the given rules. Results are
/// sorted by (project, path, rule id) regardless of `parallelism`, so any
/// worker count produces identical output.
pub fn scan_corpus(
    corpus_root: &Path,
    rules: &[ScanRule],
    parallelism: usize,
) -> Result<(Vec<ScanMatch>, ScanSummary), ScanError> {
    if !corpus_root.is_dir() {
        return Err(ScanError::CorpusRoot {
            path: corpus_root.display().to_string(),
            message: "not a directory".into(),
        });
    }
    if let Some(draft) = rules.iter().find(|r| !r.confirmed) {
        return Err(ScanError::UnconfirmedRule(draft.id.clone()));
    }

    let mut projects: Vec<(String, std::path::PathBuf)> = Vec::new();
    let entries = std::fs::read_dir(corpus_root).map_err(|e| ScanError::CorpusRoot {
        path: corpus_root.display().to_string(),
        message: e.to_string(),
    })?;
    for entry in entries.flatten() {
        let path = entry.path();
        if path.is_dir() {
            projects.push((entry.file_name().to_string_lossy().into_owned(), path));
        }
    }
    projects.sort();

    // (project, relative path, absolute path, indexes of applicable rules)
    let mut work: Vec<(String, String, std::path::PathBuf, Vec<usize>)> = Vec::new();
    for (project, project_dir) in &projects {
        for entry in walkdir::WalkDir::new(project_dir)
            .sort_by_file_name()
            .into_iter()
            .flatten()
        {
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = relative_path(project_dir, entry.path());
            let applicable: Vec<usize> = rules
                .iter()
                .enumerate()
                .filter(|(_, r)| r.glob_matches(&rel))
                .map(|(i, _)| i)
                .collect();
            if !applicable.is_empty() {
                work.push((project.clone(), rel, entry.path().to_path_buf(), applicable));
            }
        }
    }

    type FileOutcome = (Vec<ScanMatch>, Option<(String, String)>);
    let scan_one = |(project, rel, abs, applicable): &(
        String,
        String,
        std::path::PathBuf,
        Vec<usize>,
    )|
     -> FileOutcome {
        let qualified = format!("{project}/{rel}");
        let bytes = match std::fs::read(abs) {
            Ok(bytes) => bytes,
            Err(e) => return (vec![], Some((qualified, e.to_string()))),
        };
        if looks_binary(&bytes) {
            return (
                vec![],
                Some((qualified, "binary file (NUL byte in first 8 KiB)".into())),
            );
        }
        let content = String::from_utf8_lossy(&bytes);
        let mut matches = Vec::new();
        for rule_idx in applicable {
            if let Some(lines) = rules[*rule_idx].match_lines(&content) {
                matches.push(ScanMatch {
                    project: project.clone(),
                    path: rel.clone(),
                    lines,
                    rule: rules[*rule_idx].id.clone(),
                });
            }
        }
        (matches, None)
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .expect("worker pool");
    let outcomes: Vec<FileOutcome> = pool.install(|| work.par_iter().map(scan_one).collect());

    let mut matches: Vec<ScanMatch> = Vec::new();
    let mut skipped: BTreeMap<String, String> = BTreeMap::new();
    for (file_matches, skip) in outcomes {
        matches.extend(file_matches);
        if let Some((path, reason)) = skip {
            skipped.insert(path, reason);
        }
    }
    matches.sort_by(|a, b| {
        a.project
            .cmp(&b.project)
            .then_with(|| a.path.cmp(&b.path))
            .then_with(|| a.rule.cmp(&b.rule))
    });

    let matched_projects: BTreeSet<&str> = matches.iter().map(|m| m.project.as_str()).collect();
    let matched_files: BTreeSet<(&str, &str)> = matches
        .iter()
        .map(|m| (m.project.as_str(), m.path.as_str()))
        .collect();
    let mut per_rule: BTreeMap<String, RuleStats> = BTreeMap::new();
    for rule in rules {
        let rule_projects: BTreeSet<&str> = matches
            .iter()
            .filter(|m| m.rule == rule.id)
            .map(|m| m.project.as_str())
            .collect();
        let rule_files: BTreeSet<(&str, &str)> = matches
            .iter()
            .filter(|m| m.rule == rule.id)
            .map(|m| (m.project.as_str(), m.path.as_str()))
            .collect();
        per_rule.insert(
            rule.id.clone(),
            RuleStats {
                projects: rule_projects.len(),
                files: rule_files.len(),
            },
        );
    }
    let summary = ScanSummary {
        total_projects: projects.len(),
        matched_projects: matched_projects.len(),
        matched_files: matched_files.len(),
        per_rule,
        skipped,
    };
    Ok((matches, summary))
}

const DRAFT_STOPWORDS: [&str; 18] = [
    "the", "this", "that", "with", "from", "into", "over", "under", "after", "before", "their",
    "there", "then", "than", "have", "been", "were", "when",
];

/// Draft a scan rule from an actionable chain: literal matchers from the
/// terminal cause's distinct tokens (at least four chars, minus stopwords),
/// glob from the first cited code file's extension. Drafts are unconfirmed.
pub fn rule_from_chain(chain: &WhyChain) -> Result<ScanRule, ScanError> {
    if chain.termination != Termination::ActionableCauseFound {
        return Err(ScanError::NotActionable(
            "chain did not terminate at an actionable cause".into(),
        ));
    }
    let cited_file: Option<&NodeId> = chain
        .steps
        .last()
        .into_iter()
        .flat_map(|s| s.cited.iter())
        .find(|id| id.kind() == NodeKind::CodeFile);
    let cited_file = cited_file.ok_or_else(|| {
        ScanError::NotActionable("final step cites no code file".into())
    })?;
    let mut seen = BTreeSet::new();
    let matchers: Vec<MatcherSpec> = tokenize(&chain.terminal_cause)
        .into_iter()
        .filter(|t| t.len() >= 4 && !DRAFT_STOPWORDS.contains(&t.as_str()))
        .filter(|t| seen.insert(t.clone()))
        .map(|t| MatcherSpec {
            kind: MatcherKind::Literal,
            pattern: t,
        })
        .collect();
    if matchers.is_empty() {
        return Err(ScanError::NotActionable(
            "terminal cause has no usable tokens".into(),
        ));
    }
    let local = cited_file.local();
    let file_name = local.rsplit('/').next().unwrap_or(local);
    let glob = match file_name.rsplit_once('.') {
        Some((stem, ext)) if !stem.is_empty() && !ext.is_empty() => format!("**/*.{ext}"),
        _ => "**/*".to_string(),
    };
    ScanRule::compile(&RuleSpec {
        id: format!("draft-{}", chain.incident.local()),
        description: format!(
            "drafted from the terminal cause of {}: {:?}",
            chain.incident, chain.terminal_cause
        ),
        mode: MatchMode::AnyOf,
        glob,
        matchers,
        confirmed: false,
    })
}
