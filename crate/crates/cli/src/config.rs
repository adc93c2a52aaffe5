//! Run configuration: one TOML document with a section per experiment.

use std::path::{Path, PathBuf};

use isd_core::aircraft::{GridModel, SyntheticSpec};
use isd_core::dp::DpSettings;
use isd_core::montecarlo::{ExperimentSpec, RuleVariant};
use isd_core::{Belief, GaussianPair, ResetPolicy, TransitionModel};
use serde::{Deserialize, Serialize};

use crate::error::{in_section, CliError};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for single-sequence commands and the DP cost check.
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` takes precedence. Not part of the recorded
    /// config since it does not affect results.
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detect: Option<DetectConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp: Option<DpConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aircraft: Option<AircraftConfig>,
}

/// Two-state chain and Gaussian measurement pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub rho: f64,
    pub a: f64,
    #[serde(default = "one")]
    pub mu1: f64,
    #[serde(default = "two")]
    pub mu2: f64,
    pub sigma2: f64,
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

impl ModelConfig {
    pub fn transition(&self, section: &str) -> Result<TransitionModel, CliError> {
        TransitionModel::new(self.rho, self.a).map_err(in_section(section))
    }

    pub fn observation(&self, section: &str) -> Result<GaussianPair, CliError> {
        GaussianPair::new(self.mu1, self.mu2, self.sigma2).map_err(in_section(section))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_length")]
    pub length: usize,
    /// Scripted toggle times; the chain is simulated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switches: Option<Vec<usize>>,
    /// Law of `X_0`; stationary law of the model when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_belief: Option<Vec<f64>>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            length: default_length(),
            switches: None,
            initial_belief: None,
        }
    }
}

fn default_length() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectConfig {
    pub threshold: f64,
    #[serde(default = "default_variants")]
    pub variants: Vec<RuleVariant>,
    #[serde(default)]
    pub reset_policy: ResetPolicy,
    /// Detector prior; stationary law of the model when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_belief: Option<Vec<f64>>,
}

fn default_variants() -> Vec<RuleVariant> {
    vec![RuleVariant::Isd]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpConfig {
    pub rho: f64,
    pub a: f64,
    #[serde(default = "one")]
    pub mu1: f64,
    #[serde(default = "two")]
    pub mu2: f64,
    pub sigma2: f64,
    pub c: f64,
    #[serde(default)]
    pub solver: DpSettings,
    /// Optional Monte-Carlo check of the DP threshold against a sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<DpValidation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpValidation {
    pub trials: usize,
    #[serde(default = "default_validation_horizon")]
    pub horizon: usize,
    #[serde(default = "default_sweep")]
    pub thresholds: Vec<f64>,
    #[serde(default = "normal_start")]
    pub initial_belief: Vec<f64>,
}

fn default_validation_horizon() -> usize {
    20_000
}

/// 0.05, 0.10, ..., 0.95.
pub fn default_sweep() -> Vec<f64> {
    (1..=19).map(|i| i as f64 / 20.0).collect()
}

fn normal_start() -> Vec<f64> {
    vec![1.0, 0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AircraftConfig {
    #[serde(default = "default_h_c")]
    pub h_c: f64,
    #[serde(default)]
    pub grid: GridModel,
    /// Synthetic sequence to generate (seeded by the top-level `seed`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<SyntheticSpec>,
    /// Raster file to scan instead of generating one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
}

fn default_h_c() -> f64 {
    0.99
}

impl RunConfig {
    pub fn section<'a, T>(value: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        value.as_ref().ok_or_else(|| CliError::Invalid {
            field: name.to_string(),
            reason: "section is required for this command".into(),
        })
    }
}

pub fn belief_from(field: &str, p: &[f64]) -> Result<Belief, CliError> {
    Belief::new(p.to_vec()).map_err(|e| CliError::Invalid {
        field: field.to_string(),
        reason: e.to_string(),
    })
}

/// Reads `path` (empty document if `None`), applies `key.path=value`
/// overrides and deserialises the result.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let source = path.map_or_else(|| "<defaults>".to_string(), |p| p.display().to_string());
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Config {
            source_name: source.clone(),
            message: e.to_string(),
        })?,
        None => String::new(),
    };
    let mut doc: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Config {
            source_name: source.clone(),
            message: e.to_string(),
        })?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let resolved = toml::to_string(&doc).map_err(|e| CliError::Config {
        source_name: source.clone(),
        message: e.to_string(),
    })?;
    toml::from_str(&resolved).map_err(|e: toml::de::Error| CliError::Config {
        source_name: source,
        message: e.message().to_string(),
    })
}

fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let bad = |reason: &str| CliError::Config {
        source_name: format!("--set {spec}"),
        message: reason.to_string(),
    };
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| bad("expected key=value"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(bad("empty key segment"));
    }
    // Anything that parses as a TOML value keeps its type; the rest is a string.
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    if value.is_table() {
        return Err(bad("only scalar and array fields can be overridden"));
    }
    let (last, parents) = parts.split_last().unwrap();
    let mut table = doc;
    for p in parents {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| bad(&format!("`{p}` is not a section")))?;
    }
    if table.get(*last).is_some_and(toml::Value::is_table) {
        return Err(bad(&format!("`{key}` is a section, not a field")));
    }
    table.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_keep_types() {
        let mut doc: toml::Table = "[model]\nrho = 0.01\n".parse().unwrap();
        apply_override(&mut doc, "model.rho=0.02").unwrap();
        apply_override(&mut doc, "model.a = 0.9").unwrap();
        apply_override(&mut doc, "seed=7").unwrap();
        apply_override(&mut doc, "detect.variants=[\"isd\", \"sbd\"]").unwrap();
        assert_eq!(doc["model"]["rho"].as_float(), Some(0.02));
        assert_eq!(doc["model"]["a"].as_float(), Some(0.9));
        assert_eq!(doc["seed"].as_integer(), Some(7));
        assert_eq!(doc["detect"]["variants"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn overrides_reject_sections() {
        let mut doc: toml::Table = "[model]\nrho = 0.01\n".parse().unwrap();
        assert!(apply_override(&mut doc, "model=3").is_err());
        assert!(apply_override(&mut doc, "model.rho.x=3").is_err());
        assert!(apply_override(&mut doc, "noequals").is_err());
    }

    #[test]
    fn unknown_field_is_named() {
        let err = load(None, &["model.rhoo=0.1".into()]).unwrap_err();
        assert!(err.to_string().contains("rhoo"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn empty_config_loads() {
        let cfg = load(None, &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }
}
