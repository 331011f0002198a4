//! Synthetic fixture generator. Real incident corpora are proprietary, so
//! acceptance tests run against generated data whose ground truth is written
//! into a manifest at generation time.
//!
//! Regenerating with the same profile and seed reproduces identical bytes.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{ChangeRecord, CodeManifestRecord, DeploymentRecord, IncidentRecord};
use crate::scan::{MatchMode, MatcherKind, MatcherSpec, RuleSpec};

pub const MANIFEST_FILE: &str = "fixture_manifest.json";
pub const RULES_FILE: &str = "rules.jsonl";
pub const CORPUS_DIR: &str = "corpus";

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixtureProfile {
    /// Eleven incidents across four services forming four recurrence groups.
    Recurrence,
    /// One incident resolved by one change touching one file; replays the
    /// five-whys walk to "lack of automation".
    Replay,
    /// One hundred incidents with planted original labels and ground-truth
    /// classes; most externally-attributed incidents have internal causes.
    Reattribution,
    /// Fifty projects with seven planted defect files across four projects,
    /// plus the scan rule that finds exactly those.
    Corpus,
}

impl FixtureProfile {
    pub const ALL: [FixtureProfile; 4] = [
        FixtureProfile::Recurrence,
        FixtureProfile::Replay,
        FixtureProfile::Reattribution,
        FixtureProfile::Corpus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FixtureProfile::Recurrence => "recurrence",
            FixtureProfile::Replay => "replay",
            FixtureProfile::Reattribution => "reattribution",
            FixtureProfile::Corpus => "corpus",
        }
    }
}

impl std::fmt::Display for FixtureProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FixtureProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<FixtureProfile, String> {
        FixtureProfile::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                format!("unknown profile {s:?} (expected recurrence, replay, reattribution, or corpus)")
            })
    }
}

/// One planted defect occurrence the scanner is expected to find.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedDefect {
    pub path: String,
    /// 1-based line of the defect statement.
    pub line: usize,
}

/// Expected recurrence group, in detection order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceExpectation {
    pub category: String,
    /// Incident node ids, ascending.
    pub incidents: Vec<String>,
}

/// Oracle numbers the acceptance tests compare against, filled per profile.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExpectedNumbers {
    #[serde(default)]
    pub node_count: usize,
    #[serde(default)]
    pub edge_count: usize,
    #[serde(default)]
    pub recurrence: Vec<RecurrenceExpectation>,
    #[serde(default)]
    pub terminal_cause: String,
    #[serde(default)]
    pub incident_total: usize,
    #[serde(default)]
    pub external_origin_total: usize,
    #[serde(default)]
    pub external_origin_reclassified_internal: usize,
    #[serde(default)]
    pub internal_before: usize,
    #[serde(default)]
    pub internal_after: usize,
    #[serde(default)]
    pub pareto_cut: Vec<String>,
    #[serde(default)]
    pub total_projects: usize,
    #[serde(default)]
    pub matched_projects: usize,
    #[serde(default)]
    pub matched_files: usize,
}

/// Ground truth written next to every generated fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureManifest {
    pub profile: FixtureProfile,
    pub seed: u64,
    pub incident_count: usize,
    /// Incident node id -> planted root-cause class label.
    pub planted_class: BTreeMap<String, String>,
    /// Project -> planted defect files.
    pub planted_defects: BTreeMap<String, Vec<PlantedDefect>>,
    pub expected: ExpectedNumbers,
}

impl FixtureManifest {
    pub fn load(path: &Path) -> Result<FixtureManifest, FixtureError> {
        let raw = std::fs::read_to_string(path).map_err(|source| FixtureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&raw).map_err(|e| FixtureError::Io {
            path: path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()),
        })
    }
}

fn write_bytes(path: &Path, content: &[u8]) -> Result<(), FixtureError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| FixtureError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, content).map_err(|source| FixtureError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), FixtureError> {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}

/// Generate one fixture profile into `out_dir` and return its manifest
/// (which is also written as `fixture_manifest.json`).
pub fn generate(
    profile: FixtureProfile,
    seed: u64,
    out_dir: &Path,
) -> Result<FixtureManifest, FixtureError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let manifest = match profile {
        FixtureProfile::Recurrence => gen_recurrence(seed, out_dir)?,
        FixtureProfile::Replay => gen_replay(seed, out_dir)?,
        FixtureProfile::Reattribution => gen_reattribution(seed, &mut rng, out_dir)?,
        FixtureProfile::Corpus => gen_corpus(seed, &mut rng, out_dir)?,
    };
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    write_bytes(&out_dir.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(manifest)
}

fn write_input_files(
    out_dir: &Path,
    incidents: &[IncidentRecord],
    changes: &[ChangeRecord],
    deployments: &[DeploymentRecord],
    manifests: &[CodeManifestRecord],
) -> Result<(), FixtureError> {
    write_jsonl(&out_dir.join("incidents.jsonl"), incidents)?;
    write_jsonl(&out_dir.join("changes.jsonl"), changes)?;
    write_jsonl(&out_dir.join("deployments.jsonl"), deployments)?;
    write_jsonl(&out_dir.join("manifest.jsonl"), manifests)
}

const DEADLOCK_TEXT: &str =
    "Ineffective deadlock detection, resulting in unresolved locks and system delays.";
const STORAGE_TEXT: &str =
    "Inadequate capacity monitoring, leading to space exhaustion and service disruptions.";
const BACKUP_TEXT: &str = "Systemic failures in backup processes, affecting disaster recovery.";
const SQL_TEXT: &str =
    "Inefficient query optimization, leading to repeated performance degradation and resource exhaustion.";

fn gen_recurrence(seed: u64, out_dir: &Path) -> Result<FixtureManifest, FixtureError> {
    let specs: [(&str, &str, &str); 11] = [
        ("INC1", "orders-db", DEADLOCK_TEXT),
        ("INC2", "orders-db", DEADLOCK_TEXT),
        ("INC3", "orders-db", "Expired TLS certificate on the api gateway"),
        ("INC4", "storage-nas", "Misrouted traffic after failover drill"),
        ("INC5", "storage-nas", STORAGE_TEXT),
        ("INC6", "storage-nas", STORAGE_TEXT),
        ("INC7", "storage-nas", STORAGE_TEXT),
        ("INC8", "backup-vault", BACKUP_TEXT),
        ("INC9", "backup-vault", BACKUP_TEXT),
        ("INC10", "reporting-db", SQL_TEXT),
        ("INC11", "reporting-db", SQL_TEXT),
    ];
    let incidents: Vec<IncidentRecord> = specs
        .iter()
        .enumerate()
        .map(|(i, (id, service, text))| IncidentRecord {
            id: (*id).to_string(),
            opened_ts: 1_700_000_000 + (i as i64) * 86_400,
            service: (*service).to_string(),
            description: (*text).to_string(),
            original_attribution: "unknown".to_string(),
            resolution_note: None,
            resolved_by_change: None,
        })
        .collect();
    write_input_files(out_dir, &incidents, &[], &[], &[])?;

    let group = |category: &str, ids: &[&str]| RecurrenceExpectation {
        category: category.to_string(),
        incidents: ids.iter().map(|i| format!("inc:{i}")).collect(),
    };
    Ok(FixtureManifest {
        profile: FixtureProfile::Recurrence,
        seed,
        incident_count: incidents.len(),
        planted_class: BTreeMap::new(),
        planted_defects: BTreeMap::new(),
        expected: ExpectedNumbers {
            node_count: 15,
            edge_count: 11,
            recurrence: vec![
                group("storage-exhaustion", &["INC5", "INC6", "INC7"]),
                group("backup-failure", &["INC8", "INC9"]),
                group("deadlock", &["INC1", "INC2"]),
                group("long-running-sql", &["INC10", "INC11"]),
            ],
            ..ExpectedNumbers::default()
        },
    })
}

fn gen_replay(seed: u64, out_dir: &Path) -> Result<FixtureManifest, FixtureError> {
    let incidents = [IncidentRecord {
        id: "I1".to_string(),
        opened_ts: 1_700_000_000,
        service: "payment-service".to_string(),
        description:
            "Payment service unreachable for several minutes, initially attributed to service delays"
                .to_string(),
        original_attribution: "vendor-external".to_string(),
        resolution_note: Some("Restart automation added after the incident".to_string()),
        resolved_by_change: Some("CR-7".to_string()),
    }];
    let changes = [ChangeRecord {
        id: "CR-7".to_string(),
        created_ts: 1_700_003_600,
        description: "Add automation for payment service restart after failed deploy".to_string(),
        touched_files: vec!["proj-a/deploy/restart.sh".to_string()],
        linked_incidents: vec![],
    }];
    let manifests = [CodeManifestRecord {
        project: "proj-a".to_string(),
        path: "deploy/restart.sh".to_string(),
        content_hash: pseudo_hash("proj-a/deploy/restart.sh"),
    }];
    write_input_files(out_dir, &incidents, &changes, &[], &manifests)?;

    let mut planted_class = BTreeMap::new();
    planted_class.insert("inc:I1".to_string(), "automation-gap".to_string());
    Ok(FixtureManifest {
        profile: FixtureProfile::Replay,
        seed,
        incident_count: 1,
        planted_class,
        planted_defects: BTreeMap::new(),
        expected: ExpectedNumbers {
            node_count: 5,
            edge_count: 4,
            terminal_cause: "lack of automation".to_string(),
            ..ExpectedNumbers::default()
        },
    })
}

/// Per-change file path stem; the full path gains the incident id so every
/// defect file is distinct.
struct ChangeTemplate {
    descriptions: [&'static str; 2],
    file_stem: Option<&'static str>,
}

struct CategoryPlan {
    category: &'static str,
    external: usize,
    /// Original label planted on the externally-attributed incidents.
    external_label: &'static str,
    internal: usize,
    /// Original label planted on the internally-attributed incidents; equals
    /// the ground-truth class.
    class_label: &'static str,
    descriptions: [&'static str; 2],
    services: &'static [&'static str],
    change: Option<ChangeTemplate>,
}

struct IncidentPlan {
    category: &'static str,
    service: String,
    description: String,
    original: &'static str,
    class_label: &'static str,
    change: Option<(String, Option<String>)>,
}

fn gen_reattribution(
    seed: u64,
    rng: &mut ChaCha8Rng,
    out_dir: &Path,
) -> Result<FixtureManifest, FixtureError> {
    let categories = [
        CategoryPlan {
            category: "deadlock",
            external: 15,
            external_label: "vendor-external",
            internal: 12,
            class_label: "internal-code-defect",
            descriptions: [
                "Database deadlock detected, transactions aborted under lock contention",
                "Application deadlock, sessions stuck waiting on row lock queue",
            ],
            services: &[
                "orders-db-0",
                "orders-db-1",
                "orders-db-2",
                "orders-db-3",
                "orders-db-4",
                "orders-db-5",
                "orders-db-6",
            ],
            change: Some(ChangeTemplate {
                descriptions: [
                    "Fix lock ordering in transaction retry path",
                    "Rework lock acquisition order for deadlock retry",
                ],
                file_stem: Some("db/lock_ordering"),
            }),
        },
        CategoryPlan {
            category: "long-running-sql",
            external: 10,
            external_label: "vendor-external",
            internal: 8,
            class_label: "internal-code-defect",
            descriptions: [
                "Long-running SQL query exhausted connection pool on reporting database",
                "Slow SQL query blocked batch processing, connection pool saturated",
            ],
            services: &[
                "reporting-db-0",
                "reporting-db-1",
                "reporting-db-2",
                "reporting-db-3",
                "reporting-db-4",
            ],
            change: Some(ChangeTemplate {
                descriptions: [
                    "Optimize slow SQL query plan for reporting database",
                    "Rewrite SQL query to avoid full scan on reporting tables",
                ],
                file_stem: Some("reports/slow_query"),
            }),
        },
        CategoryPlan {
            category: "backup-failure",
            external: 10,
            external_label: "process-management",
            internal: 15,
            class_label: "automation-gap",
            descriptions: [
                "Nightly backup failed, recovery point objective missed",
                "Backup job aborted, restore point missing for nightly window",
            ],
            services: &[
                "backup-vault-0",
                "backup-vault-1",
                "backup-vault-2",
                "backup-vault-3",
                "backup-vault-4",
                "backup-vault-5",
                "backup-vault-6",
            ],
            change: Some(ChangeTemplate {
                descriptions: [
                    "Automate backup verification script for nightly job",
                    "Script nightly backup verification, automate restore checks",
                ],
                file_stem: None,
            }),
        },
        CategoryPlan {
            category: "storage-exhaustion",
            external: 5,
            external_label: "vendor-external",
            internal: 15,
            class_label: "infrastructure-capacity",
            descriptions: [
                "Storage capacity exhausted on volume, disk space alert",
                "Storage pool at capacity, filesystem space critical",
            ],
            services: &[
                "storage-nas-0",
                "storage-nas-1",
                "storage-nas-2",
                "storage-nas-3",
                "storage-nas-4",
            ],
            change: None,
        },
        CategoryPlan {
            category: "vendor",
            external: 6,
            external_label: "vendor-external",
            internal: 0,
            class_label: "vendor-external",
            descriptions: [
                "Third-party vendor outage reported by upstream provider",
                "Vendor outage upstream, third-party provider degraded",
            ],
            services: &["partner-gateway-0", "partner-gateway-1"],
            change: None,
        },
    ];

    let mut plans: Vec<IncidentPlan> = Vec::new();
    for plan in &categories {
        let total = plan.external + plan.internal;
        for i in 0..total {
            let original = if i < plan.external {
                plan.external_label
            } else {
                plan.class_label
            };
            let variant = rng.gen_range(0..2usize);
            let change = plan.change.as_ref().map(|c| {
                (
                    c.descriptions[variant].to_string(),
                    c.file_stem.map(str::to_string),
                )
            });
            plans.push(IncidentPlan {
                category: plan.category,
                service: plan.services[i % plan.services.len()].to_string(),
                description: plan.descriptions[variant].to_string(),
                original,
                class_label: plan.class_label,
                change,
            });
        }
    }
    // Process-gap incidents: one per singleton service, with the service
    // name inside the description so hop-1 evidence stays in scope.
    for i in 0..4usize {
        let service = format!("approvals-service-{i:02}");
        plans.push(IncidentPlan {
            category: "process",
            service: service.clone(),
            description: format!("Deployment window missed for {service} rollout"),
            original: "process-management",
            class_label: "process-management",
            change: None,
        });
    }
    plans.shuffle(rng);

    let mut incidents = Vec::new();
    let mut changes = Vec::new();
    let mut deployments = Vec::new();
    let mut manifests = Vec::new();
    let mut planted_class = BTreeMap::new();
    let mut per_category: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for (i, plan) in plans.iter().enumerate() {
        let rid = format!("R{:03}", i + 1);
        let node_id = format!("inc:{rid}");
        let opened_ts = 1_700_000_000 + (i as i64) * 3_600 + rng.gen_range(0..3_000);
        let resolved_by_change = plan.change.as_ref().map(|_| format!("C-{rid}"));
        incidents.push(IncidentRecord {
            id: rid.clone(),
            opened_ts,
            service: plan.service.clone(),
            description: plan.description.clone(),
            original_attribution: plan.original.to_string(),
            resolution_note: None,
            resolved_by_change: resolved_by_change.clone(),
        });
        if let Some((description, file_stem)) = &plan.change {
            let change_id = resolved_by_change.expect("set when a change is planned");
            let created_ts = opened_ts + 1_800 + rng.gen_range(0..600);
            let touched_files = match file_stem {
                Some(stem) => {
                    let path = format!("{stem}_{rid}.sql");
                    manifests.push(CodeManifestRecord {
                        project: "app".to_string(),
                        path: path.clone(),
                        content_hash: pseudo_hash(&format!("app/{path}")),
                    });
                    deployments.push(DeploymentRecord {
                        id: format!("D-{rid}"),
                        ts: created_ts + 3_600,
                        change_id: change_id.clone(),
                        environment: "production".to_string(),
                    });
                    vec![format!("app/{path}")]
                }
                None => vec![],
            };
            changes.push(ChangeRecord {
                id: change_id,
                created_ts,
                description: description.clone(),
                touched_files,
                linked_incidents: vec![],
            });
        }
        planted_class.insert(node_id.clone(), plan.class_label.to_string());
        per_category.entry(plan.category).or_default().push(node_id);
    }
    write_input_files(out_dir, &incidents, &changes, &deployments, &manifests)?;

    let recurrence = ["deadlock", "backup-failure", "storage-exhaustion", "long-running-sql"]
        .into_iter()
        .map(|category| {
            let mut ids = per_category.remove(category).expect("category planned");
            ids.sort();
            RecurrenceExpectation {
                category: category.to_string(),
                incidents: ids,
            }
        })
        .collect();
    Ok(FixtureManifest {
        profile: FixtureProfile::Reattribution,
        seed,
        incident_count: incidents.len(),
        planted_class,
        planted_defects: BTreeMap::new(),
        expected: ExpectedNumbers {
            incident_total: 100,
            external_origin_total: 50,
            external_origin_reclassified_internal: 40,
            internal_before: 50,
            internal_after: 90,
            recurrence,
            pareto_cut: vec![
                "deadlock".to_string(),
                "backup-failure".to_string(),
                "storage-exhaustion".to_string(),
            ],
            ..ExpectedNumbers::default()
        },
    })
}

const DEFECT_LINE: &str = "LOCK TABLE accounts NOWAIT;";

fn gen_corpus(
    seed: u64,
    rng: &mut ChaCha8Rng,
    out_dir: &Path,
) -> Result<FixtureManifest, FixtureError> {
    let corpus = out_dir.join(CORPUS_DIR);
    let planted_counts: BTreeMap<&str, usize> =
        [("proj-03", 2), ("proj-11", 2), ("proj-27", 2), ("proj-42", 1)]
            .into_iter()
            .collect();
    let defect_paths = ["db/migrations/0007_locks.sql", "reports/cleanup_locks.sql"];

    let mut planted_defects: BTreeMap<String, Vec<PlantedDefect>> = BTreeMap::new();
    for p in 0..50usize {
        let project = format!("proj-{p:02}");
        let dir = corpus.join(&project);

        let ticket = rng.gen_range(1_000..10_000);
        let shard = rng.gen_range(2..9);
        write_bytes(
            &dir.join("db/schema.sql"),
            format!(
                "-- schema for {project} (ticket {ticket})\n\
                 CREATE TABLE accounts (id BIGINT PRIMARY KEY, status TEXT);\n\
                 CREATE INDEX idx_accounts_status_{shard} ON accounts (status);\n"
            )
            .as_bytes(),
        )?;
        write_bytes(
            &dir.join("reports/usage.sql"),
            format!(
                "-- weekly usage rollup\n\
                 SELECT status, COUNT(*) FROM accounts GROUP BY status;\n\
                 -- refresh marker {ticket}\n"
            )
            .as_bytes(),
        )?;
        if rng.gen_bool(0.5) {
            write_bytes(
                &dir.join("src/main.py"),
                format!(
                    "import sys\n\n\ndef main() -> int:\n    print(\"{project}\")\n    return 0\n\n\nif __name__ == \"__main__\":\n    sys.exit(main())\n"
                )
                .as_bytes(),
            )?;
        }
        if rng.gen_bool(0.5) {
            write_bytes(
                &dir.join("README.md"),
                format!("# {project}\n\nBatch jobs for the {project} data set.\n").as_bytes(),
            )?;
        }

        if let Some(count) = planted_counts.get(project.as_str()) {
            for &path in &defect_paths[..*count] {
                let extra = rng.gen_range(0..3usize);
                let mut content = format!("-- hold accounts during backfill (ticket {ticket})\n");
                for n in 0..extra {
                    content.push_str(&format!("-- reviewer note {n}: retry window checked\n"));
                }
                content.push_str("BEGIN;\n");
                let line = 2 + extra + 1;
                content.push_str(DEFECT_LINE);
                content.push('\n');
                content.push_str(&format!(
                    "UPDATE accounts SET status = 'migrating' WHERE id % {shard} = 0;\nCOMMIT;\n"
                ));
                write_bytes(&dir.join(path), content.as_bytes())?;
                planted_defects
                    .entry(project.clone())
                    .or_default()
                    .push(PlantedDefect {
                        path: path.to_string(),
                        line,
                    });
            }
        }
        // One binary file whose bytes contain the defect literal: the
        // scanner must skip it, keeping matched_files at the planted count.
        if project == "proj-07" {
            let mut blob = vec![0u8, 1, 2, 0];
            blob.extend_from_slice(DEFECT_LINE.as_bytes());
            blob.push(0);
            write_bytes(&dir.join("data/blob.sql"), &blob)?;
        }
    }

    let rule = RuleSpec {
        id: "lock-table-nowait".to_string(),
        description: "table lock taken with NOWAIT fails immediately under contention".to_string(),
        mode: MatchMode::AnyOf,
        glob: "**/*.sql".to_string(),
        matchers: vec![MatcherSpec {
            kind: MatcherKind::Literal,
            pattern: "LOCK TABLE accounts NOWAIT".to_string(),
        }],
        confirmed: true,
    };
    write_jsonl(&out_dir.join(RULES_FILE), &[rule])?;

    Ok(FixtureManifest {
        profile: FixtureProfile::Corpus,
        seed,
        incident_count: 0,
        planted_class: BTreeMap::new(),
        planted_defects,
        expected: ExpectedNumbers {
            total_projects: 50,
            matched_projects: 4,
            matched_files: 7,
            ..ExpectedNumbers::default()
        },
    })
}

/// Stable content-free hash stand-in for manifest entries.
fn pseudo_hash(input: &str) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in input.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}
