//! Typed property graph over SDLC artifacts.
//!
//! Nodes are incidents, change requests, code files, projects, services,
//! deployment events, teams, and requirements; edges carry a fixed
//! domain/range per kind. The graph is built through [`GraphBuilder`] and
//! sealed into an immutable [`KnowledgeGraph`] whose query operations are
//! pure, so a sealed graph can be shared across concurrent analyses.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{overlap_score, token_set};

#[derive(Debug, Error)]
pub enum KgError {
    #[error("invalid node id {0:?}: {1}")]
    InvalidNodeId(String, String),
    #[error("node id {0} already present with different content")]
    DuplicateIdConflict(NodeId),
    #[error("node id {id} has prefix for {prefix_kind:?} but is declared {declared:?}")]
    KindPrefixMismatch {
        id: NodeId,
        prefix_kind: NodeKind,
        declared: NodeKind,
    },
    #[error("edge endpoint {0} is not in the graph")]
    MissingEndpoint(NodeId),
    #[error("{kind:?} edges must go {expected_src:?} -> {expected_dst:?}, got {actual_src:?} -> {actual_dst:?}")]
    DomainRangeViolation {
        kind: EdgeKind,
        expected_src: NodeKind,
        expected_dst: NodeKind,
        actual_src: NodeKind,
        actual_dst: NodeKind,
    },
    #[error("edge weight {0} outside [0, 1]")]
    InvalidWeight(f64),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("graph file line {line}: {message}")]
    Serialization { line: usize, message: String },
}

/// The closed set of artifact kinds the graph stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Incident,
    ChangeRequest,
    CodeFile,
    Project,
    Service,
    DeploymentEvent,
    Team,
    Requirement,
}

impl NodeKind {
    pub const ALL: [NodeKind; 8] = [
        NodeKind::Incident,
        NodeKind::ChangeRequest,
        NodeKind::CodeFile,
        NodeKind::Project,
        NodeKind::Service,
        NodeKind::DeploymentEvent,
        NodeKind::Team,
        NodeKind::Requirement,
    ];

    /// Each kind owns exactly one id prefix.
    pub fn prefix(self) -> &'static str {
        match self {
            NodeKind::Incident => "inc",
            NodeKind::ChangeRequest => "chg",
            NodeKind::CodeFile => "file",
            NodeKind::Project => "proj",
            NodeKind::Service => "svc",
            NodeKind::DeploymentEvent => "dep",
            NodeKind::Team => "team",
            NodeKind::Requirement => "req",
        }
    }

    pub fn from_prefix(prefix: &str) -> Option<NodeKind> {
        NodeKind::ALL.iter().copied().find(|k| k.prefix() == prefix)
    }
}

/// Graph-wide node identifier, `"<kind-prefix>:<local-id>"`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct NodeId(String);

impl NodeId {
    /// Parse and validate an id string such as `"inc:INC10"`.
    pub fn new(value: impl Into<String>) -> Result<NodeId, KgError> {
        let value = value.into();
        let mut parts = value.splitn(2, ':');
        let prefix = parts.next().unwrap_or("");
        let local = match parts.next() {
            Some(local) => local,
            None => {
                return Err(KgError::InvalidNodeId(value.clone(), "missing ':'".into()));
            }
        };
        if local.is_empty() {
            return Err(KgError::InvalidNodeId(value.clone(), "empty local id".into()));
        }
        if local.contains(':') {
            return Err(KgError::InvalidNodeId(
                value.clone(),
                "more than one ':'".into(),
            ));
        }
        if NodeKind::from_prefix(prefix).is_none() {
            return Err(KgError::InvalidNodeId(
                value.clone(),
                format!("unknown kind prefix {prefix:?}"),
            ));
        }
        Ok(NodeId(value))
    }

    /// Build an id from a kind and a bare local id.
    pub fn for_kind(kind: NodeKind, local: &str) -> Result<NodeId, KgError> {
        NodeId::new(format!("{}:{local}", kind.prefix()))
    }

    /// The kind encoded in the prefix. Total for validated ids.
    pub fn kind(&self) -> NodeKind {
        let prefix = self.0.split(':').next().unwrap_or("");
        NodeKind::from_prefix(prefix).expect("validated at construction")
    }

    /// The part after the prefix, e.g. `"INC10"` for `"inc:INC10"`.
    pub fn local(&self) -> &str {
        self.0.split_once(':').map_or("", |(_, local)| local)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for NodeId {
    type Error = String;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        NodeId::new(value).map_err(|e| e.to_string())
    }
}

impl From<NodeId> for String {
    fn from(id: NodeId) -> String {
        id.0
    }
}

/// One SDLC artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    /// UTC epoch seconds; absent for artifacts without a natural time.
    pub ts: Option<i64>,
    pub text: String,
    pub attrs: BTreeMap<String, String>,
    /// Set only on placeholder nodes created for dangling references.
    pub stub: bool,
}

impl Node {
    pub fn new(id: NodeId, kind: NodeKind) -> Result<Node, KgError> {
        if id.kind() != kind {
            return Err(KgError::KindPrefixMismatch {
                prefix_kind: id.kind(),
                declared: kind,
                id,
            });
        }
        Ok(Node {
            id,
            kind,
            ts: None,
            text: String::new(),
            attrs: BTreeMap::new(),
            stub: false,
        })
    }

    pub fn with_ts(mut self, ts: i64) -> Node {
        self.ts = Some(ts);
        self
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Node {
        self.text = text.into();
        self
    }

    pub fn with_attr(mut self, key: impl Into<String>, value: impl Into<String>) -> Node {
        self.attrs.insert(key.into(), value.into());
        self
    }

    pub fn as_stub(mut self) -> Node {
        self.stub = true;
        self
    }
}

/// Relation kinds with fixed endpoint domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EdgeKind {
    Affects,
    ResolvedBy,
    Touches,
    BelongsTo,
    Deploys,
    OwnedBy,
    DependsOn,
    Implements,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 8] = [
        EdgeKind::Affects,
        EdgeKind::ResolvedBy,
        EdgeKind::Touches,
        EdgeKind::BelongsTo,
        EdgeKind::Deploys,
        EdgeKind::OwnedBy,
        EdgeKind::DependsOn,
        EdgeKind::Implements,
    ];

    /// The (source-kind, target-kind) pair every edge of this kind must obey.
    pub fn domain_range(self) -> (NodeKind, NodeKind) {
        match self {
            EdgeKind::Affects => (NodeKind::Incident, NodeKind::Service),
            EdgeKind::ResolvedBy => (NodeKind::Incident, NodeKind::ChangeRequest),
            EdgeKind::Touches => (NodeKind::ChangeRequest, NodeKind::CodeFile),
            EdgeKind::BelongsTo => (NodeKind::CodeFile, NodeKind::Project),
            EdgeKind::Deploys => (NodeKind::DeploymentEvent, NodeKind::ChangeRequest),
            EdgeKind::OwnedBy => (NodeKind::Service, NodeKind::Team),
            EdgeKind::DependsOn => (NodeKind::Service, NodeKind::Service),
            EdgeKind::Implements => (NodeKind::ChangeRequest, NodeKind::Requirement),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: EdgeKind,
    pub weight: f64,
}

impl Edge {
    pub fn new(src: NodeId, dst: NodeId, kind: EdgeKind) -> Edge {
        Edge {
            src,
            dst,
            kind,
            weight: 1.0,
        }
    }

    fn key(&self) -> (NodeId, NodeId, EdgeKind) {
        (self.src.clone(), self.dst.clone(), self.kind)
    }
}

/// Mutable construction phase. Single writer; seal before querying.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    nodes: BTreeMap<NodeId, Node>,
    edges: BTreeMap<(NodeId, NodeId, EdgeKind), Edge>,
}

impl GraphBuilder {
    pub fn new() -> GraphBuilder {
        GraphBuilder::default()
    }

    /// Insert a node. Re-adding an identical node is a no-op; the same id
    /// with different content is a conflict.
    pub fn add_node(&mut self, node: Node) -> Result<(), KgError> {
        if node.id.kind() != node.kind {
            return Err(KgError::KindPrefixMismatch {
                prefix_kind: node.id.kind(),
                declared: node.kind,
                id: node.id,
            });
        }
        match self.nodes.get(&node.id) {
            Some(existing) if *existing == node => Ok(()),
            Some(_) => Err(KgError::DuplicateIdConflict(node.id)),
            None => {
                self.nodes.insert(node.id.clone(), node);
                Ok(())
            }
        }
    }

    /// Insert an edge between existing nodes. Duplicate (src, dst, kind)
    /// keys are a no-op keeping the first weight.
    pub fn add_edge(&mut self, edge: Edge) -> Result<(), KgError> {
        if !(0.0..=1.0).contains(&edge.weight) {
            return Err(KgError::InvalidWeight(edge.weight));
        }
        let src = self
            .nodes
            .get(&edge.src)
            .ok_or_else(|| KgError::MissingEndpoint(edge.src.clone()))?;
        let dst = self
            .nodes
            .get(&edge.dst)
            .ok_or_else(|| KgError::MissingEndpoint(edge.dst.clone()))?;
        let (expected_src, expected_dst) = edge.kind.domain_range();
        if src.kind != expected_src || dst.kind != expected_dst {
            return Err(KgError::DomainRangeViolation {
                kind: edge.kind,
                expected_src,
                expected_dst,
                actual_src: src.kind,
                actual_dst: dst.kind,
            });
        }
        self.edges.entry(edge.key()).or_insert(edge);
        Ok(())
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.nodes.get(id)
    }

    /// Freeze the graph. Adjacency and token indexes are computed once here;
    /// everything afterwards is read-only.
    pub fn seal(self) -> KnowledgeGraph {
        let mut adjacency: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
        for id in self.nodes.keys() {
            adjacency.insert(id.clone(), BTreeSet::new());
        }
        for (src, dst, _) in self.edges.keys() {
            adjacency.get_mut(src).expect("endpoint checked").insert(dst.clone());
            adjacency.get_mut(dst).expect("endpoint checked").insert(src.clone());
        }
        let tokens = self
            .nodes
            .iter()
            .map(|(id, node)| (id.clone(), token_set(&node.text)))
            .collect();
        KnowledgeGraph {
            nodes: self.nodes,
            edges: self.edges,
            adjacency,
            tokens,
        }
    }
}

/// Sealed, immutable graph. All queries are pure and deterministically
/// ordered, with ties broken by ascending node id.
#[derive(Debug)]
pub struct KnowledgeGraph {
    nodes: BTreeMap<NodeId, Node>,
    edges: BTreeMap<(NodeId, NodeId, EdgeKind), Edge>,
    adjacency: BTreeMap<NodeId, BTreeSet<NodeId>>,
    tokens: BTreeMap<NodeId, BTreeSet<String>>,
}

impl KnowledgeGraph {
    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Token set of a node's text, precomputed at seal time.
    pub fn node_tokens(&self, id: &NodeId) -> Option<&BTreeSet<String>> {
        self.tokens.get(id)
    }

    /// Undirected neighbors of a node.
    pub fn neighbors(&self, id: &NodeId) -> impl Iterator<Item = &NodeId> {
        self.adjacency.get(id).into_iter().flatten()
    }

    /// Nodes reachable within `k` undirected hops of `start`, excluding
    /// `start` itself. Distances are minimal; output is sorted by
    /// (distance, id).
    pub fn k_hop(
        &self,
        start: &NodeId,
        k: usize,
        kind_filter: Option<&BTreeSet<NodeKind>>,
    ) -> Result<Vec<(NodeId, usize)>, KgError> {
        if !self.contains(start) {
            return Err(KgError::UnknownNode(start.clone()));
        }
        let mut dist: BTreeMap<NodeId, usize> = BTreeMap::new();
        let mut queue = VecDeque::new();
        dist.insert(start.clone(), 0);
        queue.push_back(start.clone());
        while let Some(current) = queue.pop_front() {
            let d = dist[&current];
            if d == k {
                continue;
            }
            for next in self.neighbors(&current) {
                if !dist.contains_key(next) {
                    dist.insert(next.clone(), d + 1);
                    queue.push_back(next.clone());
                }
            }
        }
        let mut result: Vec<(NodeId, usize)> = dist
            .into_iter()
            .filter(|(_, d)| *d > 0 && *d <= k)
            .filter(|(id, _)| match kind_filter {
                Some(kinds) => kinds.contains(&id.kind()),
                None => true,
            })
            .collect();
        result.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        Ok(result)
    }

    /// Rank nodes by how many distinct query tokens appear in their text.
    /// Only positive scores are returned, ordered by score descending,
    /// newest timestamp first (absent timestamps last), then id ascending.
    pub fn text_search(
        &self,
        terms: &[String],
        kind_filter: Option<&BTreeSet<NodeKind>>,
    ) -> Vec<(NodeId, usize)> {
        let query: BTreeSet<String> = terms.iter().cloned().collect();
        let mut hits: Vec<(NodeId, usize)> = Vec::new();
        for (id, tokens) in &self.tokens {
            if let Some(kinds) = kind_filter {
                if !kinds.contains(&id.kind()) {
                    continue;
                }
            }
            let score = overlap_score(&query, tokens);
            if score > 0 {
                hits.push((id.clone(), score));
            }
        }
        hits.sort_by(|a, b| {
            b.1.cmp(&a.1)
                .then_with(|| {
                    let ta = self.nodes[&a.0].ts;
                    let tb = self.nodes[&b.0].ts;
                    match (ta, tb) {
                        (Some(x), Some(y)) => y.cmp(&x),
                        (Some(_), None) => std::cmp::Ordering::Less,
                        (None, Some(_)) => std::cmp::Ordering::Greater,
                        (None, None) => std::cmp::Ordering::Equal,
                    }
                })
                .then_with(|| a.0.cmp(&b.0))
        });
        hits
    }

    /// Serialize to line-delimited JSON: all nodes (by id), then all edges
    /// (by src, dst, kind). Deterministic byte-for-byte for a given graph.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for node in self.nodes.values() {
            out.push_str(&serde_json::to_string(node).expect("node serializes"));
            out.push('\n');
        }
        for edge in self.edges.values() {
            out.push_str(&serde_json::to_string(edge).expect("edge serializes"));
            out.push('\n');
        }
        out
    }

    /// Rebuild a sealed graph from [`KnowledgeGraph::to_jsonl`] output.
    /// Lines with a `src` field are edges, everything else is a node.
    pub fn from_jsonl(content: &str) -> Result<KnowledgeGraph, KgError> {
        let mut builder = GraphBuilder::new();
        let mut pending_edges = Vec::new();
        for (idx, line) in content.lines().enumerate() {
            let line_no = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let value: serde_json::Value =
                serde_json::from_str(trimmed).map_err(|e| KgError::Serialization {
                    line: line_no,
                    message: e.to_string(),
                })?;
            if value.get("src").is_some() {
                let edge: Edge =
                    serde_json::from_value(value).map_err(|e| KgError::Serialization {
                        line: line_no,
                        message: e.to_string(),
                    })?;
                pending_edges.push((line_no, edge));
            } else {
                let node: Node =
                    serde_json::from_value(value).map_err(|e| KgError::Serialization {
                        line: line_no,
                        message: e.to_string(),
                    })?;
                builder.add_node(node).map_err(|e| KgError::Serialization {
                    line: line_no,
                    message: e.to_string(),
                })?;
            }
        }
        for (line_no, edge) in pending_edges {
            builder.add_edge(edge).map_err(|e| KgError::Serialization {
                line: line_no,
                message: e.to_string(),
            })?;
        }
        Ok(builder.seal())
    }
}
