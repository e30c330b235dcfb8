//! Declarative run configuration (TOML).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::sha256;
use crate::eval::EvalConfig;
use crate::policy::PolicyConfig;
use crate::sim::SimConfig;
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecConfig {
    #[serde(rename = "V")]
    pub v: usize,
    pub iters: usize,
    /// Meters per radian used when a dimension has no spread to standardize by.
    pub yaw_scale: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self { v: 1024, iters: 25, yaw_scale: 10.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    pub sim: SimConfig,
    pub codec: CodecConfig,
    pub model: PolicyConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Parse { path: String::new(), message: e.to_string() })?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: String| ConfigError::Invalid(e);
        if self.codec.v == 0 {
            return Err(inv("codec.V violates V >= 1".into()));
        }
        if !(self.codec.yaw_scale > 0.0) {
            return Err(inv("codec.yaw_scale must be positive".into()));
        }
        self.train.validate().map_err(|e| inv(e.to_string()))?;
        self.sim.validate().map_err(|e| inv(e.to_string()))?;
        self.model.validate().map_err(|e| inv(e.to_string()))?;
        if self.train.b > self.model.max_branches {
            return Err(inv(format!("train.B={} exceeds model.max_branches={}", self.train.b, self.model.max_branches)));
        }
        if self.eval.samples_per_clip == 0 {
            return Err(inv("eval.samples_per_clip must be positive".into()));
        }
        Ok(())
    }

    /// Digest of the canonical serialization.
    pub fn hash(&self) -> [u8; 32] {
        sha256(self.to_toml().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!((c.train.k, c.train.b, c.train.lambda, c.codec.v, c.train.group), (5, 2, 0.1, 1024, 8));
        assert_eq!((c.train.temperature, c.train.top_p), (0.6, 0.98));
    }

    #[test]
    fn constraint_and_unknown_key_errors() {
        let e = RunConfig::parse("[train]\nK = 7\n").unwrap_err().to_string();
        assert!(e.contains("K*10 <= 64"), "{e}");
        let e = RunConfig::parse("[train]\nbogus = 1\n").unwrap_err().to_string();
        assert!(e.contains("train") && e.contains("bogus"), "{e}");
        let e = RunConfig::parse("[model.lwm]\nm = \"two\"\n").unwrap_err().to_string();
        assert!(e.contains("model.lwm.m"), "{e}");
        assert!(RunConfig::parse("[train]\nG = 1\n").is_err());
        assert!(RunConfig::parse("[codec]\nV = 0\n").is_err());
    }

    #[test]
    fn round_trip() {
        let c = RunConfig::parse("seed = 9\n[train]\nK = 3\nB = 1\n[model]\nd_model = 32\nheads = 2\n").unwrap();
        let again = RunConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.hash(), again.hash());
    }
}
