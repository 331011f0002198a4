//! Parse line-delimited SDLC artifact exports and build a sealed knowledge
//! graph.
//!
//! Parsing never fails hard: every bad line becomes a reject with its line
//! number and reason, and dangling cross-references become flagged stub
//! nodes, because real ITSM exports are incomplete and the analysis must
//! still run.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::RootCauseClass;
use crate::kg::{Edge, EdgeKind, GraphBuilder, KnowledgeGraph, Node, NodeId, NodeKind};

pub const ATTR_SERVICE: &str = "service";
pub const ATTR_ORIGINAL_ATTRIBUTION: &str = "original_attribution";
pub const ATTR_RESOLUTION_NOTE: &str = "resolution_note";
pub const ATTR_PROJECT: &str = "project";
pub const ATTR_PATH: &str = "path";
pub const ATTR_CONTENT_HASH: &str = "content_hash";
pub const ATTR_ENVIRONMENT: &str = "environment";

/// The four expected input file names inside an ingest directory.
pub const INPUT_FILES: [&str; 4] = [
    "incidents.jsonl",
    "changes.jsonl",
    "deployments.jsonl",
    "manifest.jsonl",
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing input file {0}")]
    MissingInput(PathBuf),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentRecord {
    pub id: String,
    /// UTC epoch seconds.
    pub opened_ts: i64,
    pub service: String,
    pub description: String,
    /// Root-cause label recorded by the original team ("unknown" allowed).
    pub original_attribution: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution_note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_by_change: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeRecord {
    pub id: String,
    pub created_ts: i64,
    pub description: String,
    /// "project/path" strings.
    #[serde(default)]
    pub touched_files: Vec<String>,
    #[serde(default)]
    pub linked_incidents: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentRecord {
    pub id: String,
    pub ts: i64,
    pub change_id: String,
    pub environment: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeManifestRecord {
    pub project: String,
    pub path: String,
    pub content_hash: String,
}

/// One rejected input line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    pub file: String,
    pub line: usize,
    pub reason: String,
}

/// What ingestion accepted, rejected, and fabricated.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IngestReport {
    /// Record type -> accepted line count.
    pub accepted: BTreeMap<String, usize>,
    pub rejected: Vec<Reject>,
    /// Distinct stub nodes created for dangling references.
    pub stubs_created: usize,
    /// Non-fatal oddities, e.g. duplicate ids resolved keep-first.
    pub anomalies: Vec<String>,
}

/// A record parsed from one JSON line, with validation beyond the schema.
pub trait RecordSchema: Sized {
    const KIND: &'static str;
    fn validate(&self) -> Result<(), String>;
}

fn parse_reason(e: &serde_json::Error) -> String {
    let message = e.to_string();
    if let Some(rest) = message.strip_prefix("missing field `") {
        if let Some(name) = rest.split('`').next() {
            return format!("missing {name}");
        }
    }
    message
}

fn id_char_check(what: &str, value: &str) -> Result<(), String> {
    if value.is_empty() {
        return Err(format!("empty {what}"));
    }
    if value.contains(':') {
        return Err(format!("{what} must not contain ':'"));
    }
    Ok(())
}

impl RecordSchema for IncidentRecord {
    const KIND: &'static str = "incidents";
    fn validate(&self) -> Result<(), String> {
        id_char_check("id", &self.id)?;
        if self.opened_ts <= 0 {
            return Err("opened_ts must be positive".into());
        }
        id_char_check("service", &self.service)?;
        if RootCauseClass::from_label(&self.original_attribution).is_none() {
            return Err(format!(
                "original_attribution {:?} is not a known label",
                self.original_attribution
            ));
        }
        if let Some(change) = &self.resolved_by_change {
            id_char_check("resolved_by_change", change)?;
        }
        Ok(())
    }
}

impl RecordSchema for ChangeRecord {
    const KIND: &'static str = "changes";
    fn validate(&self) -> Result<(), String> {
        id_char_check("id", &self.id)?;
        for file in &self.touched_files {
            id_char_check("touched_files entry", file)?;
            match file.split_once('/') {
                None => {
                    return Err(format!(
                        "touched_files entry {file:?} lacks a project/path separator"
                    ));
                }
                Some((project, path)) if project.is_empty() || path.is_empty() => {
                    return Err(format!(
                        "touched_files entry {file:?} has an empty project or path"
                    ));
                }
                Some(_) => {}
            }
        }
        for incident in &self.linked_incidents {
            id_char_check("linked_incidents entry", incident)?;
        }
        Ok(())
    }
}

impl RecordSchema for DeploymentRecord {
    const KIND: &'static str = "deployments";
    fn validate(&self) -> Result<(), String> {
        id_char_check("id", &self.id)?;
        id_char_check("change_id", &self.change_id)?;
        Ok(())
    }
}

impl RecordSchema for CodeManifestRecord {
    const KIND: &'static str = "manifest";
    fn validate(&self) -> Result<(), String> {
        id_char_check("project", &self.project)?;
        if self.project.contains('/') {
            return Err("project must not contain '/'".into());
        }
        id_char_check("path", &self.path)?;
        Ok(())
    }
}

/// Parse one line-delimited file's content. Blank lines are skipped; every
/// other line yields a record or a reject.
pub fn parse_records<T>(content: &str, file: &str) -> (Vec<T>, Vec<Reject>)
where
    T: RecordSchema + for<'de> Deserialize<'de>,
{
    let mut records = Vec::new();
    let mut rejects = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(trimmed) {
            Ok(record) => match record.validate() {
                Ok(()) => records.push(record),
                Err(reason) => rejects.push(Reject {
                    file: file.to_string(),
                    line: line_no,
                    reason,
                }),
            },
            Err(e) => rejects.push(Reject {
                file: file.to_string(),
                line: line_no,
                reason: parse_reason(&e),
            }),
        }
    }
    (records, rejects)
}

struct Builder {
    graph: GraphBuilder,
    stubs: BTreeSet<NodeId>,
    anomalies: Vec<String>,
}

impl Builder {
    fn add_defined(&mut self, node: Node) {
        let id = node.id.clone();
        if self.graph.contains(&id) {
            self.anomalies
                .push(format!("duplicate id {id}, keeping the first record"));
            return;
        }
        self.graph.add_node(node).expect("validated node");
    }

    /// Idempotently add a derived node (service, project); identical
    /// re-additions are no-ops by construction.
    fn add_derived(&mut self, node: Node) {
        self.graph.add_node(node).expect("derived nodes are identical");
    }

    /// Ensure a referenced node exists, fabricating a stub when it does not.
    fn ensure(&mut self, id: NodeId, kind: NodeKind) {
        if self.graph.contains(&id) {
            return;
        }
        self.stubs.insert(id.clone());
        self.graph
            .add_node(Node::new(id, kind).expect("prefix matches kind").as_stub())
            .expect("new stub");
    }

    fn edge(&mut self, src: &NodeId, dst: &NodeId, kind: EdgeKind) {
        self.graph
            .add_edge(Edge::new(src.clone(), dst.clone(), kind))
            .expect("endpoints ensured and kinds fixed by construction");
    }
}

fn incident_id(raw: &str) -> NodeId {
    NodeId::for_kind(NodeKind::Incident, raw).expect("validated id chars")
}

fn change_id(raw: &str) -> NodeId {
    NodeId::for_kind(NodeKind::ChangeRequest, raw).expect("validated id chars")
}

fn file_id(project: &str, path: &str) -> NodeId {
    NodeId::for_kind(NodeKind::CodeFile, &format!("{project}/{path}")).expect("validated id chars")
}

fn project_id(raw: &str) -> NodeId {
    NodeId::for_kind(NodeKind::Project, raw).expect("validated id chars")
}

fn service_id(raw: &str) -> NodeId {
    NodeId::for_kind(NodeKind::Service, raw).expect("validated id chars")
}

fn project_node(project: &str) -> Node {
    Node::new(project_id(project), NodeKind::Project)
        .expect("prefix matches")
        .with_text(project)
}

/// Build and seal the graph from parsed records. Node creation runs before
/// edge creation so the result is independent of record order; dangling
/// references become stub nodes counted in the report.
pub fn build_graph(
    incidents: &[IncidentRecord],
    changes: &[ChangeRecord],
    deployments: &[DeploymentRecord],
    manifests: &[CodeManifestRecord],
) -> (KnowledgeGraph, IngestReport) {
    let mut b = Builder {
        graph: GraphBuilder::new(),
        stubs: BTreeSet::new(),
        anomalies: Vec::new(),
    };
    let mut report = IngestReport::default();
    report.accepted.insert(IncidentRecord::KIND.into(), incidents.len());
    report.accepted.insert(ChangeRecord::KIND.into(), changes.len());
    report.accepted.insert(DeploymentRecord::KIND.into(), deployments.len());
    report.accepted.insert(CodeManifestRecord::KIND.into(), manifests.len());

    for inc in incidents {
        let mut node = Node::new(incident_id(&inc.id), NodeKind::Incident)
            .expect("prefix matches")
            .with_ts(inc.opened_ts)
            .with_text(&inc.description)
            .with_attr(ATTR_SERVICE, &inc.service)
            .with_attr(ATTR_ORIGINAL_ATTRIBUTION, &inc.original_attribution);
        if let Some(note) = &inc.resolution_note {
            node = node.with_attr(ATTR_RESOLUTION_NOTE, note);
        }
        b.add_defined(node);
    }
    for chg in changes {
        b.add_defined(
            Node::new(change_id(&chg.id), NodeKind::ChangeRequest)
                .expect("prefix matches")
                .with_ts(chg.created_ts)
                .with_text(&chg.description),
        );
    }
    for dep in deployments {
        b.add_defined(
            Node::new(
                NodeId::for_kind(NodeKind::DeploymentEvent, &dep.id).expect("validated id chars"),
                NodeKind::DeploymentEvent,
            )
            .expect("prefix matches")
            .with_ts(dep.ts)
            .with_text(&dep.environment)
            .with_attr(ATTR_ENVIRONMENT, &dep.environment),
        );
    }
    for entry in manifests {
        let fid = file_id(&entry.project, &entry.path);
        if b.graph.contains(&fid) {
            b.anomalies.push(format!(
                "duplicate manifest entry {fid}, keeping the first record"
            ));
            continue;
        }
        b.add_defined(
            Node::new(fid, NodeKind::CodeFile)
                .expect("prefix matches")
                .with_text(format!("{}/{}", entry.project, entry.path))
                .with_attr(ATTR_PROJECT, &entry.project)
                .with_attr(ATTR_PATH, &entry.path)
                .with_attr(ATTR_CONTENT_HASH, &entry.content_hash),
        );
        b.add_derived(project_node(&entry.project));
    }
    // Services are derived from incidents; identical node per service name.
    for inc in incidents {
        b.add_derived(
            Node::new(service_id(&inc.service), NodeKind::Service)
                .expect("prefix matches")
                .with_text(&inc.service),
        );
    }

    // Edges, fabricating stubs for references to anything undefined above.
    for inc in incidents {
        let iid = incident_id(&inc.id);
        b.edge(&iid, &service_id(&inc.service), EdgeKind::Affects);
        if let Some(change) = &inc.resolved_by_change {
            let cid = change_id(change);
            b.ensure(cid.clone(), NodeKind::ChangeRequest);
            b.edge(&iid, &cid, EdgeKind::ResolvedBy);
        }
    }
    for chg in changes {
        let cid = change_id(&chg.id);
        for file in &chg.touched_files {
            let (project, path) = file.split_once('/').expect("validated separator");
            let fid = file_id(project, path);
            if !b.graph.contains(&fid) {
                b.stubs.insert(fid.clone());
                b.graph
                    .add_node(
                        Node::new(fid.clone(), NodeKind::CodeFile)
                            .expect("prefix matches")
                            .with_text(file)
                            .with_attr(ATTR_PROJECT, project)
                            .with_attr(ATTR_PATH, path)
                            .as_stub(),
                    )
                    .expect("new stub");
            }
            b.add_derived(project_node(project));
            b.edge(&cid, &fid, EdgeKind::Touches);
            b.edge(&fid, &project_id(project), EdgeKind::BelongsTo);
        }
        for linked in &chg.linked_incidents {
            let iid = incident_id(linked);
            b.ensure(iid.clone(), NodeKind::Incident);
            b.edge(&iid, &cid, EdgeKind::ResolvedBy);
        }
    }
    for dep in deployments {
        let did = NodeId::for_kind(NodeKind::DeploymentEvent, &dep.id).expect("validated id chars");
        let cid = change_id(&dep.change_id);
        b.ensure(cid.clone(), NodeKind::ChangeRequest);
        b.edge(&did, &cid, EdgeKind::Deploys);
    }

    report.stubs_created = b.stubs.len();
    report.anomalies = b.anomalies;
    (b.graph.seal(), report)
}

/// Read the four fixed-name input files from a directory, parse, and build.
/// A missing file is an error; empty files are fine.
pub fn ingest_dir(dir: &Path) -> Result<(KnowledgeGraph, IngestReport), IngestError> {
    let mut contents = Vec::new();
    for name in INPUT_FILES {
        let path = dir.join(name);
        if !path.is_file() {
            return Err(IngestError::MissingInput(path));
        }
        let raw = std::fs::read_to_string(&path).map_err(|source| IngestError::Io {
            path: path.clone(),
            source,
        })?;
        contents.push(raw);
    }
    let (incidents, mut rejects) = parse_records::<IncidentRecord>(&contents[0], INPUT_FILES[0]);
    let (changes, r2) = parse_records::<ChangeRecord>(&contents[1], INPUT_FILES[1]);
    let (deployments, r3) = parse_records::<DeploymentRecord>(&contents[2], INPUT_FILES[2]);
    let (manifests, r4) = parse_records::<CodeManifestRecord>(&contents[3], INPUT_FILES[3]);
    rejects.extend(r2);
    rejects.extend(r3);
    rejects.extend(r4);
    let (graph, mut report) = build_graph(&incidents, &changes, &deployments, &manifests);
    report.rejected = rejects;
    Ok((graph, report))
}
