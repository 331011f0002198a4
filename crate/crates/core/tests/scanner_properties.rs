//! Scanner properties on randomly generated corpora: worker-count
//! determinism, exact agreement with an in-memory oracle, summary
//! consistency, binary skipping, and read-only behavior.

use proptest::prelude::*;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use causeway_core::fixture::{generate, FixtureProfile};
use causeway_core::scan::{load_rules, scan_corpus, ScanMatch};

const LINES: &[&str] = &[
    "LOCK TABLE accounts NOWAIT;",
    "SELECT * FROM accounts;",
    "-- migration step",
    "CREATE INDEX idx ON accounts (id);",
    "UPDATE accounts SET x = 1;",
    "update accounts set y = 2;",
];

const PATHS: &[&str] = &[
    "src/a.sql",
    "db/mig.sql",
    "deep/x/y.sql",
    "notes/readme.md",
    "scripts/run.py",
];

const RULES: &str = r#"{"id":"lit","description":"literal lock statement","mode":"any","glob":"**/*.sql","matchers":[{"kind":"literal","pattern":"LOCK TABLE accounts NOWAIT"}]}
{"id":"pair","description":"index creation next to a select","mode":"all","glob":"**/*.sql","matchers":[{"kind":"literal","pattern":"CREATE INDEX"},{"kind":"literal","pattern":"SELECT"}]}
{"id":"rx","description":"update of the accounts table","mode":"any","glob":"**/*","matchers":[{"kind":"regex","pattern":"^UPDATE\\s+accounts"}]}
"#;

#[derive(Debug, Clone)]
struct FilePlan {
    project: usize,
    path_idx: usize,
    line_idxs: Vec<usize>,
    binary: bool,
}

fn arb_corpus() -> impl Strategy<Value = Vec<FilePlan>> {
    prop::collection::vec(
        (
            0..4usize,
            0..PATHS.len(),
            prop::collection::vec(0..LINES.len(), 1..8),
            prop::bool::weighted(0.15),
        )
            .prop_map(|(project, path_idx, line_idxs, binary)| FilePlan {
                project,
                path_idx,
                line_idxs,
                binary,
            }),
        1..16,
    )
    .prop_map(|plans| {
        // One plan per (project, path); first wins.
        let mut seen = BTreeSet::new();
        plans
            .into_iter()
            .filter(|p| seen.insert((p.project, p.path_idx)))
            .collect()
    })
}

fn write_corpus(root: &Path, plans: &[FilePlan]) {
    for plan in plans {
        let full = root
            .join(format!("proj-{}", plan.project))
            .join(PATHS[plan.path_idx]);
        fs::create_dir_all(full.parent().unwrap()).unwrap();
        let text: String = plan
            .line_idxs
            .iter()
            .map(|i| format!("{}\n", LINES[*i]))
            .collect();
        if plan.binary {
            let mut bytes = vec![0u8, b'\n'];
            bytes.extend_from_slice(text.as_bytes());
            fs::write(full, bytes).unwrap();
        } else {
            fs::write(full, text).unwrap();
        }
    }
}

/// Oracle over the in-memory plan, independent of the scanner's file walk,
/// glob translation, and matcher plumbing.
fn expected_matches(plans: &[FilePlan]) -> Vec<ScanMatch> {
    let update_re = regex::Regex::new("^UPDATE\\s+accounts").unwrap();
    let mut out: Vec<ScanMatch> = Vec::new();
    for plan in plans.iter().filter(|p| !p.binary) {
        let project = format!("proj-{}", plan.project);
        let path = PATHS[plan.path_idx].to_string();
        let is_sql = path.ends_with(".sql");
        let lines_where = |pred: &dyn Fn(&str) -> bool| -> Vec<usize> {
            plan.line_idxs
                .iter()
                .enumerate()
                .filter(|(_, idx)| pred(LINES[**idx]))
                .map(|(i, _)| i + 1)
                .collect()
        };
        if is_sql {
            let hits = lines_where(&|l| l.contains("LOCK TABLE accounts NOWAIT"));
            if !hits.is_empty() {
                out.push(ScanMatch {
                    project: project.clone(),
                    path: path.clone(),
                    lines: hits,
                    rule: "lit".to_string(),
                });
            }
            let index_hits = lines_where(&|l| l.contains("CREATE INDEX"));
            let select_hits = lines_where(&|l| l.contains("SELECT"));
            if !index_hits.is_empty() && !select_hits.is_empty() {
                let union: BTreeSet<usize> =
                    index_hits.into_iter().chain(select_hits).collect();
                out.push(ScanMatch {
                    project: project.clone(),
                    path: path.clone(),
                    lines: union.into_iter().collect(),
                    rule: "pair".to_string(),
                });
            }
        }
        let update_hits = lines_where(&|l| update_re.is_match(l));
        if !update_hits.is_empty() {
            out.push(ScanMatch {
                project,
                path,
                lines: update_hits,
                rule: "rx".to_string(),
            });
        }
    }
    out.sort_by(|a, b| {
        a.project
            .cmp(&b.project)
            .then_with(|| a.path.cmp(&b.path))
            .then_with(|| a.rule.cmp(&b.rule))
    });
    out
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 40, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn scan_agrees_with_oracle_and_worker_count_is_irrelevant(plans in arb_corpus()) {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &plans);
        let rules = load_rules(RULES).unwrap();

        let (serial, serial_summary) = scan_corpus(dir.path(), &rules, 1).unwrap();
        let (parallel, parallel_summary) = scan_corpus(dir.path(), &rules, 4).unwrap();
        prop_assert_eq!(&serial, &parallel);
        prop_assert_eq!(&serial_summary, &parallel_summary);
        prop_assert_eq!(
            serde_json::to_string(&serial_summary).unwrap(),
            serde_json::to_string(&parallel_summary).unwrap()
        );

        // Exact agreement with the oracle: precision and recall are both 1.
        prop_assert_eq!(&serial, &expected_matches(&plans));

        // Summary recomputed from the match list and the plan.
        let projects: BTreeSet<usize> = plans.iter().map(|p| p.project).collect();
        prop_assert_eq!(serial_summary.total_projects, projects.len());
        let matched_projects: BTreeSet<&str> = serial.iter().map(|m| m.project.as_str()).collect();
        let matched_files: BTreeSet<(&str, &str)> = serial
            .iter()
            .map(|m| (m.project.as_str(), m.path.as_str()))
            .collect();
        prop_assert_eq!(serial_summary.matched_projects, matched_projects.len());
        prop_assert_eq!(serial_summary.matched_files, matched_files.len());
        if !serial.is_empty() {
            prop_assert!(serial_summary.matched_files >= serial_summary.matched_projects);
        }
        type RuleTally<'a> = (BTreeSet<&'a str>, BTreeSet<(&'a str, &'a str)>);
        let mut per_rule: BTreeMap<&str, RuleTally> = BTreeMap::new();
        for m in &serial {
            let entry = per_rule.entry(m.rule.as_str()).or_default();
            entry.0.insert(m.project.as_str());
            entry.1.insert((m.project.as_str(), m.path.as_str()));
        }
        // One entry per loaded rule, zeroed when the rule never matched.
        let rule_ids: Vec<&str> = serial_summary.per_rule.keys().map(String::as_str).collect();
        prop_assert_eq!(rule_ids, vec!["lit", "pair", "rx"]);
        for (rule, stats) in &serial_summary.per_rule {
            match per_rule.get(rule.as_str()) {
                Some((projects, files)) => {
                    prop_assert_eq!(stats.projects, projects.len());
                    prop_assert_eq!(stats.files, files.len());
                }
                None => {
                    prop_assert_eq!(stats.projects, 0);
                    prop_assert_eq!(stats.files, 0);
                }
            }
        }

        // Binary files are skipped, recorded, and never matched.
        let expected_skipped: BTreeSet<String> = plans
            .iter()
            .filter(|p| p.binary)
            .map(|p| format!("proj-{}/{}", p.project, PATHS[p.path_idx]))
            .collect();
        let got_skipped: BTreeSet<String> = serial_summary.skipped.keys().cloned().collect();
        prop_assert_eq!(got_skipped, expected_skipped);
        for key in serial_summary.skipped.keys() {
            let clean = !serial
                .iter()
                .any(|m| format!("{}/{}", m.project, m.path) == *key);
            prop_assert!(clean, "skipped file {} appeared in matches", key);
        }
    }
}

#[test]
fn scanning_leaves_the_corpus_untouched() {
    let dir = tempfile::tempdir().unwrap();
    generate(FixtureProfile::Corpus, 5, dir.path()).unwrap();
    let corpus = dir.path().join("corpus");
    let rules = load_rules(&fs::read_to_string(dir.path().join("rules.jsonl")).unwrap()).unwrap();

    let snapshot = |root: &Path| -> BTreeMap<String, Vec<u8>> {
        walkdir::WalkDir::new(root)
            .sort_by_file_name()
            .into_iter()
            .map(|e| e.unwrap())
            .filter(|e| e.file_type().is_file())
            .map(|e| {
                (
                    e.path().to_string_lossy().into_owned(),
                    fs::read(e.path()).unwrap(),
                )
            })
            .collect()
    };
    let before = snapshot(&corpus);
    let (matches, _) = scan_corpus(&corpus, &rules, 4).unwrap();
    assert!(!matches.is_empty());
    let after = snapshot(&corpus);
    assert_eq!(before, after, "scan must not modify the corpus");
}
