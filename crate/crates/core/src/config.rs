//! Full pipeline configuration and its STFT/detection fingerprint.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clustering::HdbscanConfig;
use crate::events::DetectionConfig;
use crate::frontend::StftConfig;
use crate::pursuit::MpConfig;

#[derive(Debug, Error, PartialEq)]
#[error("invalid configuration: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Templates fitted per individual.
    #[default]
    Single,
    /// Templates fitted on the pooled support of all individuals.
    Multi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_min: f64,
    /// Number of log-spaced bag-of-syllables frequency bins over the
    /// analysis band, used when `bos_edges` is absent.
    pub bos_bins: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bos_edges: Option<Vec<f64>>,
    /// Cut-off for the truncated retrieval score.
    pub map_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_min: 0.3,
            bos_bins: 10,
            bos_edges: None,
            map_k: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_root: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation_root: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_root: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_support_minutes")]
    pub support_minutes: f64,
    #[serde(default = "default_merge_h")]
    pub merge_h: f64,
    #[serde(default)]
    pub stft: StftConfig,
    #[serde(default)]
    pub detect: DetectionConfig,
    #[serde(default)]
    pub hdbscan: HdbscanConfig,
    /// Settings of the per-cluster split pass; defaults to `hdbscan`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_hdbscan: Option<HdbscanConfig>,
    #[serde(default)]
    pub mp: MpConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

fn default_support_minutes() -> f64 {
    10.0
}

fn default_merge_h() -> f64 {
    0.33
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Single,
            seed: 0,
            support_minutes: default_support_minutes(),
            merge_h: default_merge_h(),
            stft: StftConfig::default(),
            detect: DetectionConfig::default(),
            hdbscan: HdbscanConfig::default(),
            split_hdbscan: None,
            mp: MpConfig::default(),
            eval: EvalConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn split(&self) -> &HdbscanConfig {
        self.split_hdbscan.as_ref().unwrap_or(&self.hdbscan)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError(m));
        self.stft.validate().map_err(|e| ConfigError(e.to_string()))?;
        self.detect.validate().map_err(ConfigError)?;
        self.hdbscan.validate().map_err(ConfigError)?;
        self.split().validate().map_err(ConfigError)?;
        self.mp.validate().map_err(|e| ConfigError(e.to_string()))?;
        if !(self.merge_h > 0.0 && self.merge_h.is_finite()) {
            return err(format!("merge_h must be positive, got {}", self.merge_h));
        }
        if !(self.support_minutes > 0.0) {
            return err(format!("support_minutes must be positive, got {}", self.support_minutes));
        }
        if !(self.eval.iou_min > 0.0 && self.eval.iou_min <= 1.0) {
            return err(format!("eval.iou_min must lie in (0, 1], got {}", self.eval.iou_min));
        }
        if self.eval.bos_bins == 0 || self.eval.map_k == 0 {
            return err("eval.bos_bins and eval.map_k must be positive".into());
        }
        if let Some(e) = &self.eval.bos_edges {
            if e.len() < 2 || e.windows(2).any(|w| w[1] <= w[0]) {
                return err("eval.bos_edges must be strictly increasing with >= 2 entries".into());
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the STFT and detection settings.
    pub fn fingerprint(&self) -> String {
        fingerprint(&self.stft, &self.detect)
    }
}

pub fn fingerprint(stft: &StftConfig, detect: &DetectionConfig) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        stft: &'a StftConfig,
        detect: &'a DetectionConfig,
    }
    let json = serde_json::to_vec(&Key { stft, detect }).expect("plain data serialises");
    hex::encode(Sha256::digest(&json))
}

/// Seed derived from a base seed and a name, stable across platforms and
/// independent of iteration order.
pub fn stable_seed(seed: u64, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}
