//! Experiment configuration: JSON files plus dotted `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::exec::Scheduling;
use crate::federation::{BoostConfig, DiagnosticsConfig, ModelConfig, RoundConfig, TrainConfig};
use crate::graph::{BlockOverride, SynthConfig};

/// Where the global graph comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum GraphSource {
    /// A directory holding `nodes.tsv` and `edges.tsv`.
    Path(PathBuf),
    Synth(SynthConfig),
}

impl Default for GraphSource {
    fn default() -> Self {
        GraphSource::Synth(benchmark_graph())
    }
}

/// The default synthetic benchmark: four classes, one rare class whose
/// links mostly go to other classes.
pub fn benchmark_graph() -> SynthConfig {
    let cross = |a, b| BlockOverride { a, b, prob: 0.045 };
    SynthConfig {
        block_overrides: vec![
            BlockOverride {
                a: 3,
                b: 3,
                prob: 0.0,
            },
            cross(3, 0),
            cross(3, 1),
            cross(3, 2),
        ],
        ..SynthConfig::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: GraphSource,
    /// Cumulative labeled-mass ratio defining the minority classes.
    pub q: f64,
    /// Homophily threshold of the heterophilous group (inclusive).
    pub tau_h: f64,
    /// Number of clients.
    pub clients: usize,
    pub seeds: Vec<u64>,
    pub federation: RoundConfig,
    pub model: ModelConfig,
    pub boost: BoostConfig,
    pub diagnostics: DiagnosticsConfig,
    pub scheduling: Scheduling,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            graph: GraphSource::default(),
            q: 0.2,
            tau_h: 0.5,
            clients: 5,
            seeds: vec![0, 1, 2, 3, 4],
            federation: RoundConfig::default(),
            model: ModelConfig::default(),
            boost: BoostConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
            scheduling: Scheduling::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let config: Self =
            serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Applies `key=value` overrides (dotted paths, JSON or bare-string
    /// values) and revalidates.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut value = self.to_value();
        for o in overrides {
            apply_override(&mut value, o.as_ref())?;
        }
        Self::from_value(value)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::Config(format!("q = {} must lie in (0, 1)", self.q)));
        }
        if !(0.0..=1.0).contains(&self.tau_h) {
            return Err(Error::Config(format!(
                "tau_h = {} must lie in [0, 1]",
                self.tau_h
            )));
        }
        if self.clients == 0 {
            return Err(Error::Config("clients must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if let GraphSource::Synth(s) = &self.graph {
            s.validate()?;
        }
        self.train_config(self.seeds[0]).validate()
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            round: self.federation.clone(),
            model: self.model.clone(),
            boost: self.boost.clone(),
            diagnostics: self.diagnostics.clone(),
            scheduling: self.scheduling,
            seed,
        }
    }
}

/// Sets `path` (dot separated) in a JSON object tree to `raw`, parsed as JSON
/// when possible and taken as a string otherwise. Missing or null
/// intermediate objects are created.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let path = path.trim();
    if path.is_empty() {
        return Err(Error::Config(format!(
            "override {assignment:?} has an empty key"
        )));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let mut keys = path.split('.').peekable();
    while let Some(key) = keys.next() {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let obj = node.as_object_mut().ok_or_else(|| {
            Error::Config(format!(
                "override {path:?}: {key:?} is not inside an object"
            ))
        })?;
        if keys.peek().is_none() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj.entry(key.to_string()).or_insert(Value::Null);
    }
    unreachable!("split yields at least one key")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(ExperimentConfig::from_value(c.to_value()).unwrap(), c);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let c = ExperimentConfig::default()
            .with_overrides(&[
                "boost.lambda_n=0",
                "federation.method=fedavg",
                "federation.dp.clip_norm=1",
                "federation.dp.noise_std=0.01",
                "seeds=[7]",
            ])
            .unwrap();
        assert_eq!(c.boost.lambda_n, 0.0);
        assert_eq!(c.federation.method, crate::federation::Method::FedAvg);
        assert_eq!(c.federation.dp.unwrap().noise_std, 0.01);
        assert_eq!(c.seeds, vec![7]);
    }

    #[test]
    fn bad_overrides_are_rejected() {
        let c = ExperimentConfig::default();
        assert!(c.with_overrides(&["q=2"]).is_err());
        assert!(c.with_overrides(&["no_such_field=1"]).is_err());
        assert!(c.with_overrides(&["q"]).is_err());
        assert!(c.with_overrides(&["q.inner=1"]).is_err());
    }
}
