//! Run configuration: defaults, optional JSON file, then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use latentkg::cluster::{FeatureMode, DEFAULT_QUANTILE};
use latentkg::embedsim::{DEFAULT_ATTRIBUTE_DIM, DEFAULT_SCALES, MIN_ATTRIBUTE_DIM};
use latentkg::trace::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelChoice {
    /// Built-in seeded transformer.
    #[default]
    Toy,
    /// Traces and outputs produced elsewhere, read from the trace directory.
    ExternalTrace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySettings {
    pub layers: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
    pub max_new_tokens: usize,
}

impl Default for ToySettings {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            layers: m.layer_count,
            hidden_dim: m.hidden_dim,
            vocab_size: m.vocab_size,
            max_new_tokens: m.max_new_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Claim corpus, line-delimited JSON.
    pub dataset: Option<PathBuf>,
    /// External traces, one directory per claim id.
    pub trace_dir: Option<PathBuf>,
    /// Output directory. Not written back, so runs into different
    /// directories produce identical trees.
    #[serde(skip_serializing)]
    pub out: PathBuf,
    pub model: ModelChoice,
    /// Seeds both sampling and the toy model's weights.
    pub seed: u64,
    /// Claims to sample after filtering; all when absent.
    pub sample: Option<usize>,
    pub scales: usize,
    pub attribute_dim: usize,
    pub quantile: f64,
    pub feature: FeatureMode,
    pub include_layer_0: bool,
    pub fallback_uniform: bool,
    /// Divide the merged vector by the weight sum.
    pub normalize_merge: bool,
    pub toy: ToySettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            trace_dir: None,
            out: PathBuf::from("out"),
            model: ModelChoice::Toy,
            seed: 7,
            sample: None,
            scales: DEFAULT_SCALES,
            attribute_dim: DEFAULT_ATTRIBUTE_DIM,
            quantile: DEFAULT_QUANTILE,
            feature: FeatureMode::Profile,
            include_layer_0: false,
            fallback_uniform: false,
            normalize_merge: false,
            toy: ToySettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> CliResult<()> {
        let usage = |m: String| Err(CliError::Usage(m));
        if !(self.quantile > 0.0 && self.quantile <= 1.0) {
            return usage(format!("quantile must be in (0, 1], got {}", self.quantile));
        }
        if self.attribute_dim < MIN_ATTRIBUTE_DIM {
            return usage(format!("attribute_dim must be at least {MIN_ATTRIBUTE_DIM}"));
        }
        if self.sample == Some(0) {
            return usage("sample must be positive".into());
        }
        if self.model == ModelChoice::Toy {
            self.model_config().validate().map_err(|e| CliError::Usage(e.to_string()))?;
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            layer_count: self.toy.layers,
            hidden_dim: self.toy.hidden_dim,
            vocab_size: self.toy.vocab_size,
            max_new_tokens: self.toy.max_new_tokens,
            seed: self.seed,
        }
    }

    pub fn dataset_path(&self) -> CliResult<&Path> {
        let p = self
            .dataset
            .as_deref()
            .ok_or_else(|| CliError::Usage("no dataset given (use --dataset or the config file)".into()))?;
        if !p.is_file() {
            return Err(CliError::Usage(format!("dataset {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn trace_dir_path(&self) -> CliResult<&Path> {
        let p = self.trace_dir.as_deref().ok_or_else(|| {
            CliError::Usage("--model external-trace needs --trace-dir or trace_dir in the config file".into())
        })?;
        if !p.is_dir() {
            return Err(CliError::Usage(format!("trace directory {} does not exist", p.display())));
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_defaults_and_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"seed": 3, "feature": "mean", "toy": {"layers": 4}}"#).unwrap();
        let c = RunConfig::from_file(&p).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.feature, FeatureMode::Mean);
        assert_eq!(c.toy.layers, 4);
        assert_eq!(c.toy.hidden_dim, ToySettings::default().hidden_dim);
        fs::write(&p, r#"{"sed": 3}"#).unwrap();
        assert!(matches!(RunConfig::from_file(&p), Err(CliError::Usage(_))));
    }

    #[test]
    fn output_dir_is_not_serialized() {
        let c = RunConfig {
            out: "/tmp/somewhere".into(),
            ..RunConfig::default()
        };
        let v = serde_json::to_value(&c).unwrap();
        assert!(v.get("out").is_none());
        assert_eq!(v["model"], "toy");
    }

    #[test]
    fn validation() {
        let bad = RunConfig {
            quantile: 0.0,
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }
}
