//! Deterministic root-cause analysis for software-delivery incidents.
//!
//! The pipeline narrows from symptoms to a classified cause in stages:
//! ingestion builds a sealed knowledge graph from incident, change,
//! deployment, and code-manifest records; symptom analysis buckets each
//! incident against a keyword taxonomy; an iterative five-whys loop asks a
//! reasoning backend for causes grounded in retrieved graph evidence; the
//! classifier maps finished chains onto a fixed class set and measures how
//! attribution shifts against the original labels; and a rule scanner looks
//! for the same defect across a project corpus.
//!
//! Everything downstream of ingestion is pure with respect to the graph, so
//! the same inputs and configuration always produce byte-identical reports,
//! whatever the worker count.

pub mod backend;
pub mod classify;
pub mod config;
pub mod fixture;
pub mod funnel;
pub mod ingest;
pub mod kg;
pub mod pipeline;
pub mod report;
pub mod scan;
pub mod text;

pub use backend::{BackendError, ReasoningBackend, RemoteBackend, RuleBackend};
pub use classify::RootCauseClass;
pub use config::{Config, FunnelConfig};
pub use funnel::{run_funnel, Termination, WhyChain};
pub use kg::{KnowledgeGraph, NodeId, NodeKind};
pub use pipeline::analyze_graph;
pub use report::PipelineReport;
