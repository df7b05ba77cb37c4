//! Pipeline configuration: a single JSON document whose keys mirror
//! [`PipelineConfig`]. Missing keys take their defaults, unknown keys are
//! rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::spec::BackendsConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("config parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ConfigError {
    fn invalid(key: &str, message: impl Into<String>) -> Self {
        Self::Invalid {
            key: key.to_string(),
            message: message.into(),
        }
    }
}

/// Which stages run. Persist writes the output manifest and audio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    pub enhance: bool,
    pub segment: bool,
    pub cluster: bool,
    pub tse: bool,
    pub filter: bool,
    pub asr: bool,
    pub persist: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            enhance: true,
            segment: true,
            cluster: true,
            tse: true,
            filter: true,
            asr: true,
            persist: true,
        }
    }
}

impl StageToggles {
    pub fn none() -> Self {
        Self {
            enhance: false,
            segment: false,
            cluster: false,
            tse: false,
            filter: false,
            asr: false,
            persist: false,
        }
    }

    /// Parses a comma-separated list such as `enhance,segment,cluster`.
    /// Persist is always on.
    pub fn from_list(list: &str) -> Result<Self, ConfigError> {
        let mut t = Self::none();
        t.persist = true;
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match name {
                "enhance" => t.enhance = true,
                "segment" => t.segment = true,
                "cluster" => t.cluster = true,
                "tse" => t.tse = true,
                "filter" => t.filter = true,
                "asr" => t.asr = true,
                "persist" => t.persist = true,
                other => {
                    return Err(ConfigError::invalid(
                        "stages",
                        format!("unknown stage `{other}`"),
                    ))
                }
            }
        }
        Ok(t)
    }
}

/// How segments are grouped into clustering batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchingPolicy {
    /// Pack consecutive recordings into one batch while under the cap.
    #[default]
    Pooled,
    /// Every recording is clustered on its own.
    PerRecording,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub enhance_window_s: f64,
    pub enhance_shift_s: f64,
    pub vad_threshold: f64,
    pub silence_split_s: f64,
    pub pad_s: f64,
    pub min_segment_s: f64,
    pub soft_max_segment_s: f64,
    pub hard_max_segment_s: f64,
    pub embed_window_s: f64,
    pub embed_shift_s: f64,
    pub cluster_merge_threshold: f64,
    pub batch_max_hours: f64,
    pub seg_sim_threshold: f64,
    pub cluster_avg_threshold: f64,
    pub cluster_max_threshold: f64,
    pub ovrl_threshold: f64,
    pub k_max: usize,
    pub rng_seed: u64,
    pub stages: StageToggles,
    pub batching: BatchingPolicy,
    /// Write labelless segments that pass quality to `manifest.unlabeled.jsonl`.
    pub export_unlabeled: bool,
    pub backends: BackendsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            enhance_window_s: 12.0,
            enhance_shift_s: 4.0,
            vad_threshold: 0.76,
            silence_split_s: 1.0,
            pad_s: 0.4,
            min_segment_s: 1.5,
            soft_max_segment_s: 30.0,
            hard_max_segment_s: 40.0,
            embed_window_s: 1.5,
            embed_shift_s: 0.75,
            cluster_merge_threshold: 0.75,
            batch_max_hours: 2.0,
            seg_sim_threshold: 0.5,
            cluster_avg_threshold: 0.55,
            cluster_max_threshold: 0.6,
            ovrl_threshold: 2.4,
            k_max: 20,
            rng_seed: 0,
            stages: StageToggles::default(),
            batching: BatchingPolicy::default(),
            export_unlabeled: true,
            backends: BackendsConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Checks every invariant, naming the first offending key.
    pub fn check(&self) -> Result<(), ConfigError> {
        let durations = [
            ("enhance_window_s", self.enhance_window_s),
            ("enhance_shift_s", self.enhance_shift_s),
            ("silence_split_s", self.silence_split_s),
            ("pad_s", self.pad_s),
            ("min_segment_s", self.min_segment_s),
            ("soft_max_segment_s", self.soft_max_segment_s),
            ("hard_max_segment_s", self.hard_max_segment_s),
            ("embed_window_s", self.embed_window_s),
            ("embed_shift_s", self.embed_shift_s),
            ("batch_max_hours", self.batch_max_hours),
        ];
        for (key, v) in durations {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::invalid(key, format!("must be a positive duration, got {v}")));
            }
        }
        if self.enhance_window_s <= self.enhance_shift_s {
            return Err(ConfigError::invalid(
                "enhance_window_s",
                format!(
                    "window ({}) must exceed shift ({})",
                    self.enhance_window_s, self.enhance_shift_s
                ),
            ));
        }
        if self.min_segment_s > self.soft_max_segment_s {
            return Err(ConfigError::invalid(
                "min_segment_s",
                "must not exceed soft_max_segment_s",
            ));
        }
        if self.soft_max_segment_s >= self.hard_max_segment_s {
            return Err(ConfigError::invalid(
                "soft_max_segment_s",
                "must be below hard_max_segment_s",
            ));
        }
        let ranged = [
            ("vad_threshold", self.vad_threshold, 0.0, 1.0),
            ("cluster_merge_threshold", self.cluster_merge_threshold, -1.0, 1.0),
            ("seg_sim_threshold", self.seg_sim_threshold, -1.0, 1.0),
            ("cluster_avg_threshold", self.cluster_avg_threshold, -1.0, 1.0),
            ("cluster_max_threshold", self.cluster_max_threshold, -1.0, 1.0),
            ("ovrl_threshold", self.ovrl_threshold, 1.0, 5.0),
        ];
        for (key, v, lo, hi) in ranged {
            if !(v.is_finite() && (lo..=hi).contains(&v)) {
                return Err(ConfigError::invalid(
                    key,
                    format!("must lie in [{lo}, {hi}], got {v}"),
                ));
            }
        }
        if self.k_max == 0 {
            return Err(ConfigError::invalid("k_max", "must be at least 1"));
        }
        self.backends.check()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses, fills defaults and validates a raw config document.
pub fn validate_config(raw: &str) -> Result<PipelineConfig, ConfigError> {
    let raw = if raw.trim().is_empty() { "{}" } else { raw };
    let de = &mut serde_json::Deserializer::from_str(raw);
    let cfg: PipelineConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::Parse {
            path,
            message: e.into_inner().to_string(),
        }
    })?;
    cfg.check()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    validate_config(&raw)
}
