//! JSON run files.
//!
//! ```json
//! {
//!   "schema": "cedas-run/1",
//!   "name": "cedas_grid",
//!   "algorithm": "cedas",
//!   "problem": { "kind": "logistic", "n": 25, "p": 40, "samples_per_agent": 50,
//!                "heterogeneity": 0.5, "rho": 0.2, "seed": 1 },
//!   "topology": { "kind": "grid" },
//!   "compressor": { "kind": "scaled_rand_k", "fraction": 0.05 },
//!   "schedule": { "kind": "harmonic", "c0": 5.0, "c1": 100.0 },
//!   "alpha": 0.1,
//!   "gamma": 0.04,
//!   "iters": 2000,
//!   "seed": 7
//! }
//! ```
//!
//! An optional `"sweep": ["choco_sgd", "dsgd"]` runs further algorithms on
//! the same setup. `problem` and `topology` may instead be `{ "path": "file.json" }`,
//! resolved relative to the run file. Every field can be overridden with a
//! dotted `key=value` pair, e.g. `gamma=0.1` or `topology.kind=ring`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::algo::{AlgoError, Algorithm, BitConvention, RunConfig, StepSchedule};
use crate::compress::{CompressError, CompressorSpec};
use crate::objective::{Batch, ObjectiveError, Problem, ProblemParams};
use crate::topology::{DegreeCount, Graph, GraphKind, MixingMatrix, TopologyError, TopologyFile};

pub const SCHEMA: &str = "cedas-run/1";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid run file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad override `{0}`: {1}")]
    Override(String, String),
    #[error("unsupported schema `{0}`, expected `{SCHEMA}`")]
    Schema(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Compress(#[from] CompressError),
    #[error(transparent)]
    Algo(#[from] AlgoError),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemSource {
    File { path: PathBuf },
    Params(ProblemParams),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TopologySource {
    File {
        path: PathBuf,
    },
    Generated {
        kind: GraphKind,
        /// Defaults to the problem's agent count.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n: Option<usize>,
        #[serde(default)]
        degree: DegreeCount,
    },
}

fn default_name() -> String {
    "run".into()
}
fn default_alpha() -> f64 {
    1.0
}
fn default_gamma() -> f64 {
    0.5
}
fn default_reps() -> usize {
    1
}
fn default_schema() -> String {
    SCHEMA.into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    #[serde(default = "default_schema")]
    pub schema: String,
    #[serde(default = "default_name")]
    pub name: String,
    pub algorithm: Algorithm,
    /// Extra algorithms run on the same setup; each gets its own CSV and
    /// all share one plot.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<Algorithm>,
    pub problem: ProblemSource,
    pub topology: TopologySource,
    #[serde(default = "identity_spec")]
    pub compressor: CompressorSpec,
    pub schedule: StepSchedule,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    pub iters: usize,
    #[serde(default)]
    pub batch: Batch,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub bits: BitConvention,
    /// Record `‖∇f(x̄)‖²`; defaults to on for nonconvex problems only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_grad_norm: Option<bool>,
    /// Emit SVG plots next to the CSV.
    #[serde(default)]
    pub plot: bool,
}

fn identity_spec() -> CompressorSpec {
    CompressorSpec::Identity
}

impl RunFile {
    pub fn from_value(value: Value) -> Result<Self> {
        let file: RunFile = serde_json::from_value(value)?;
        if file.schema != SCHEMA {
            return Err(ConfigError::Schema(file.schema));
        }
        Ok(file)
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut file = Self::parse(&text, overrides)?;
        if let Some(base) = path.parent() {
            file.rebase(base);
        }
        Ok(file)
    }

    /// Makes relative `path` entries relative to `base`.
    pub fn rebase(&mut self, base: &Path) {
        if let ProblemSource::File { path } = &mut self.problem {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        if let TopologySource::File { path } = &mut self.topology {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("run files serialize")
    }

    /// Hex SHA-256 of the canonical JSON form (object keys sorted).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_value().to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn problem(&self) -> Result<Problem> {
        Ok(match &self.problem {
            ProblemSource::Params(p) => Problem::synthesize(p.clone())?,
            ProblemSource::File { path } => Problem::load(path)?,
        })
    }

    pub fn mixing(&self, agents: usize) -> Result<MixingMatrix> {
        let w = match &self.topology {
            TopologySource::File { path } => TopologyFile::load(path)?.mixing()?,
            TopologySource::Generated { kind, n, degree } => {
                let n = n.unwrap_or(agents);
                MixingMatrix::lazy_metropolis_with(&Graph::build(*kind, n)?, *degree)
            }
        };
        if w.n() != agents {
            return Err(ConfigError::Invalid(format!("topology has {} nodes, problem has {agents} agents", w.n())));
        }
        Ok(w)
    }

    /// Builds and validates the run configuration.
    pub fn resolve(&self) -> Result<RunConfig> {
        let problem = self.problem()?;
        let mixing = self.mixing(problem.n())?;
        let compressor = self.compressor.build(problem.p())?;
        let mut cfg = RunConfig::new(self.algorithm, Arc::new(problem), Arc::new(mixing), self.schedule, self.iters);
        cfg.compressor = compressor;
        cfg.alpha = self.alpha;
        cfg.gamma = self.gamma;
        cfg.batch = self.batch;
        cfg.seed = self.seed;
        cfg.repetitions = self.reps;
        cfg.bits = self.bits;
        if let Some(t) = self.track_grad_norm {
            cfg.track_grad_norm = t;
        }
        cfg.config_hash = self.hash();
        cfg.validate()?;
        Ok(cfg)
    }

    /// `algorithm` followed by the `sweep` entries, duplicates removed.
    pub fn algorithms(&self) -> Vec<Algorithm> {
        let mut out = vec![self.algorithm];
        for a in &self.sweep {
            if !out.contains(a) {
                out.push(*a);
            }
        }
        out
    }
}

/// Applies `a.b.c=value` to a JSON tree. The value is read as JSON when it
/// parses and as a plain string otherwise. Missing objects are created.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let bad = |m: &str| ConfigError::Override(spec.to_string(), m.to_string());
    let (key, raw) = spec.split_once('=').ok_or_else(|| bad("expected key=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(bad("empty key segment"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        let obj = node.as_object_mut().ok_or_else(|| bad(&format!("`{part}` is not inside an object")))?;
        if parts.peek().is_none() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("key has at least one segment")
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"{
        "schema": "cedas-run/1",
        "name": "t",
        "algorithm": "cedas",
        "problem": {"kind": "logistic", "n": 4, "p": 6, "samples_per_agent": 10, "rho": 0.2, "seed": 1},
        "topology": {"kind": "ring"},
        "compressor": {"kind": "scaled_rand_k", "k": 2},
        "schedule": {"kind": "constant", "eta": 0.05},
        "alpha": 0.1, "gamma": 0.2, "iters": 5
    }"#;

    #[test]
    fn parses_and_resolves() {
        let f = RunFile::parse(BASIC, &[]).unwrap();
        let cfg = f.resolve().unwrap();
        assert_eq!(cfg.n(), 4);
        assert_eq!(cfg.compressor.name(), "scaled_rand_k(K=2)");
        assert_eq!(cfg.config_hash.len(), 64);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let f = RunFile::parse(BASIC, &["gamma=0.3".into(), "topology.kind=path".into(), "name=other".into()]).unwrap();
        assert_eq!(f.gamma, 0.3);
        assert_eq!(f.name, "other");
        assert!(matches!(f.topology, TopologySource::Generated { kind: GraphKind::Path, .. }));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunFile::parse(BASIC, &[]).unwrap();
        let b = RunFile::parse(BASIC, &["seed=3".into()]).unwrap();
        assert_eq!(a.hash(), RunFile::parse(BASIC, &[]).unwrap().hash());
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(RunFile::parse(BASIC, &["schema=v0".into()]), Err(ConfigError::Schema(_))));
        assert!(matches!(RunFile::parse(BASIC, &["gamma".into()]), Err(ConfigError::Override(..))));
        assert!(RunFile::parse(BASIC, &["colour=red".into()]).is_err());
        let f = RunFile::parse(BASIC, &["topology.n=5".into()]).unwrap();
        assert!(matches!(f.resolve(), Err(ConfigError::Invalid(_))));
        let f = RunFile::parse(BASIC, &["compressor={\"kind\":\"top_k\",\"k\":2}".into()]).unwrap();
        assert!(matches!(f.resolve(), Err(ConfigError::Algo(AlgoError::ConfigInvalid(_)))));
    }

    #[test]
    fn missing_file_names_path() {
        let err = RunFile::load(Path::new("/nonexistent/run.json"), &[]).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/run.json"));
    }
}
