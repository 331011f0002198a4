//! Pipeline configuration: funnel parameters, the symptom taxonomy, and the
//! classification keyword tables, all loadable from one JSON file.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Parameters steering evidence retrieval and the five-whys loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelConfig {
    /// Maximum number of why-steps per chain.
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
    /// Graph radius for evidence candidates around the incident node.
    #[serde(default = "default_evidence_hops")]
    pub evidence_hops: usize,
    /// How many scored evidence refs each step keeps.
    #[serde(default = "default_evidence_top_n")]
    pub evidence_top_n: usize,
    /// Symptom category -> keyword list.
    #[serde(default = "default_symptom_taxonomy")]
    pub symptom_taxonomy: BTreeMap<String, Vec<String>>,
}

impl Default for FunnelConfig {
    fn default() -> FunnelConfig {
        FunnelConfig {
            max_depth: default_max_depth(),
            evidence_hops: default_evidence_hops(),
            evidence_top_n: default_evidence_top_n(),
            symptom_taxonomy: default_symptom_taxonomy(),
        }
    }
}

impl FunnelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_depth < 1 {
            return Err(ConfigError::Invalid("max_depth must be >= 1".into()));
        }
        if self.evidence_top_n < 1 {
            return Err(ConfigError::Invalid("evidence_top_n must be >= 1".into()));
        }
        if self.symptom_taxonomy.is_empty() {
            return Err(ConfigError::Invalid(
                "symptom_taxonomy needs at least one category".into(),
            ));
        }
        Ok(())
    }
}

fn default_max_depth() -> usize {
    5
}

fn default_evidence_hops() -> usize {
    2
}

fn default_evidence_top_n() -> usize {
    10
}

/// The four seed categories with their keyword lists. Keywords are matched
/// as contiguous token runs, so "long-running" hits "long running SQL" too.
pub fn default_symptom_taxonomy() -> BTreeMap<String, Vec<String>> {
    let mut taxonomy = BTreeMap::new();
    taxonomy.insert(
        "long-running-sql".to_string(),
        strings(&["sql", "query", "queries", "long-running", "optimization"]),
    );
    taxonomy.insert(
        "deadlock".to_string(),
        strings(&["deadlock", "deadlocks", "lock", "locks"]),
    );
    taxonomy.insert(
        "storage-exhaustion".to_string(),
        strings(&["storage", "capacity", "space", "exhaustion", "disk"]),
    );
    taxonomy.insert(
        "backup-failure".to_string(),
        strings(&["backup", "backups", "restore", "recovery"]),
    );
    taxonomy
}

/// Keyword tables for the classifier ladder, keyed by class label.
pub fn default_classify_keywords() -> BTreeMap<String, Vec<String>> {
    let mut tables = BTreeMap::new();
    tables.insert(
        "automation-gap".to_string(),
        strings(&["automation", "manual", "script"]),
    );
    tables.insert(
        "process-management".to_string(),
        strings(&[
            "process",
            "approval",
            "handover",
            "escalation",
            "coordination",
            "ownership",
        ]),
    );
    tables.insert(
        "vendor-external".to_string(),
        strings(&["vendor", "third-party", "supplier", "external"]),
    );
    tables.insert(
        "infrastructure-capacity".to_string(),
        strings(&["capacity", "infrastructure", "hardware", "disk", "storage"]),
    );
    tables
}

fn strings(raw: &[&str]) -> Vec<String> {
    raw.iter().map(|s| s.to_string()).collect()
}

/// Whole-pipeline configuration file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    #[serde(flatten)]
    pub funnel: FunnelConfig,
    /// Class label -> keyword list for the classifier's keyword rungs.
    #[serde(default = "default_classify_keywords")]
    pub classify_keywords: BTreeMap<String, Vec<String>>,
}

impl Default for Config {
    fn default() -> Config {
        Config {
            funnel: FunnelConfig::default(),
            classify_keywords: default_classify_keywords(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let display = path.display().to_string();
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: display.clone(),
            source,
        })?;
        let config: Config = serde_json::from_str(&raw).map_err(|e| ConfigError::Parse {
            path: display,
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.funnel.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        Config::default().validate().unwrap();
        let funnel = FunnelConfig::default();
        assert_eq!(funnel.max_depth, 5);
        assert_eq!(funnel.evidence_hops, 2);
        assert_eq!(funnel.evidence_top_n, 10);
        assert_eq!(funnel.symptom_taxonomy.len(), 4);
    }

    #[test]
    fn empty_json_object_yields_defaults() {
        let config: Config = serde_json::from_str("{}").unwrap();
        assert_eq!(config, Config::default());
    }

    #[test]
    fn partial_overrides_keep_other_defaults() {
        let config: Config = serde_json::from_str(r#"{"max_depth": 3}"#).unwrap();
        assert_eq!(config.funnel.max_depth, 3);
        assert_eq!(config.funnel.evidence_top_n, 10);
    }

    #[test]
    fn zero_max_depth_rejected() {
        let config: Config = serde_json::from_str(r#"{"max_depth": 0}"#).unwrap();
        assert!(config.validate().is_err());
    }

    #[test]
    fn load_round_trips_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, serde_json::to_string(&Config::default()).unwrap()).unwrap();
        let loaded = Config::load(&path).unwrap();
        assert_eq!(loaded, Config::default());
    }
}
