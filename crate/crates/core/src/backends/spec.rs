//! Backend selection as it appears in the config file under `backends`.
//!
//! ```json
//! "backends": {
//!   "enhancer": {"kind": "gain", "gain": 0.5},
//!   "embedder": {"kind": "fixture", "path": "embeddings.jsonl"},
//!   "scorer": {"kind": "process", "command": ["python", "dnsmos_adapter.py"], "pool": 2}
//! }
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::mocks::{
    ConstantScorer, ConstantTranscriber, EnergyVad, FixtureEmbedder, GainEnhancer, GainExtractor,
    HashEmbedder, IdentityEnhancer, PassthroughExtractor, ScriptedScorer, ScriptedTranscriber,
};
use super::remote::{ConnectionPool, RemoteBackend};
use super::{BackendError, BackendRole, BackendSet};
use crate::config::ConfigError;

fn default_pool() -> usize {
    1
}

/// An adapter in another process, reached over stdin/stdout or a Unix socket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RemoteSpec {
    Process {
        command: Vec<String>,
        #[serde(default = "default_pool")]
        pool: usize,
    },
    Socket {
        path: PathBuf,
        #[serde(default = "default_pool")]
        pool: usize,
    },
}

impl RemoteSpec {
    fn check(&self, key: &str) -> Result<(), ConfigError> {
        let (pool, ok, what) = match self {
            RemoteSpec::Process { command, pool } => (*pool, !command.is_empty(), "command"),
            RemoteSpec::Socket { path, pool } => (*pool, !path.as_os_str().is_empty(), "path"),
        };
        if !ok {
            return Err(invalid(format!("backends.{key}.{what}"), "must not be empty"));
        }
        if pool == 0 {
            return Err(invalid(format!("backends.{key}.pool"), "must be at least 1"));
        }
        Ok(())
    }

    fn open(&self, role: BackendRole, base: &Path) -> Result<Arc<RemoteBackend>, BackendError> {
        let pool = match self {
            RemoteSpec::Process { command, pool } => ConnectionPool::spawning(command.clone(), *pool),
            RemoteSpec::Socket { path, pool } => ConnectionPool::unix(base.join(path), *pool),
        };
        Ok(Arc::new(RemoteBackend::open(role, pool)?))
    }
}

fn invalid(key: String, message: &str) -> ConfigError {
    ConfigError::Invalid {
        key,
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnhancerSpec {
    Identity,
    Gain { gain: f32 },
    #[serde(untagged)]
    Remote(RemoteSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VadSpec {
    Energy { hop_s: f64, rms_threshold: f64 },
    #[serde(untagged)]
    Remote(RemoteSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedderSpec {
    Fixture { path: PathBuf },
    Hash { dim: usize },
    #[serde(untagged)]
    Remote(RemoteSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExtractorSpec {
    Passthrough,
    Gain { gain: f32 },
    #[serde(untagged)]
    Remote(RemoteSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScorerSpec {
    Scripted {
        path: PathBuf,
    },
    Constant {
        ovrl: f64,
        #[serde(default)]
        pdnsmos: Option<f64>,
    },
    #[serde(untagged)]
    Remote(RemoteSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TranscriberSpec {
    Scripted { path: PathBuf },
    Constant { text: String },
    #[serde(untagged)]
    Remote(RemoteSpec),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub enhancer: Option<EnhancerSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vad: Option<VadSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedder: Option<EmbedderSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extractor: Option<ExtractorSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scorer: Option<ScorerSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transcriber: Option<TranscriberSpec>,
}

impl BackendsConfig {
    pub fn check(&self) -> Result<(), ConfigError> {
        let finite_pos = |v: f64, key: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(key.to_string(), "must be a positive number"))
            }
        };
        match &self.enhancer {
            Some(EnhancerSpec::Gain { gain }) if !gain.is_finite() => {
                return Err(invalid("backends.enhancer.gain".into(), "must be finite"))
            }
            Some(EnhancerSpec::Remote(r)) => r.check("enhancer")?,
            _ => {}
        }
        match &self.vad {
            Some(VadSpec::Energy {
                hop_s,
                rms_threshold,
            }) => {
                finite_pos(*hop_s, "backends.vad.hop_s")?;
                finite_pos(*rms_threshold, "backends.vad.rms_threshold")?;
            }
            Some(VadSpec::Remote(r)) => r.check("vad")?,
            None => {}
        }
        match &self.embedder {
            Some(EmbedderSpec::Hash { dim: 0 }) => {
                return Err(invalid("backends.embedder.dim".into(), "must be at least 1"))
            }
            Some(EmbedderSpec::Remote(r)) => r.check("embedder")?,
            _ => {}
        }
        match &self.extractor {
            Some(ExtractorSpec::Gain { gain }) if !gain.is_finite() => {
                return Err(invalid("backends.extractor.gain".into(), "must be finite"))
            }
            Some(ExtractorSpec::Remote(r)) => r.check("extractor")?,
            _ => {}
        }
        if let Some(ScorerSpec::Remote(r)) = &self.scorer {
            r.check("scorer")?;
        }
        if let Some(TranscriberSpec::Remote(r)) = &self.transcriber {
            r.check("transcriber")?;
        }
        Ok(())
    }

    /// Instantiates every configured backend. `base` is the directory that
    /// relative fixture and socket paths are resolved against.
    pub fn build(&self, base: &Path) -> Result<BackendSet, BackendError> {
        let mut set = BackendSet::default();
        set.enhancer = match &self.enhancer {
            None => None,
            Some(EnhancerSpec::Identity) => Some(Arc::new(IdentityEnhancer::default())),
            Some(EnhancerSpec::Gain { gain }) => Some(Arc::new(GainEnhancer::new(*gain))),
            Some(EnhancerSpec::Remote(r)) => Some(r.open(BackendRole::Enhancer, base)?),
        };
        set.vad = match &self.vad {
            None => None,
            Some(VadSpec::Energy {
                hop_s,
                rms_threshold,
            }) => Some(Arc::new(EnergyVad::new(*hop_s, *rms_threshold))),
            Some(VadSpec::Remote(r)) => Some(r.open(BackendRole::VoiceActivityDetector, base)?),
        };
        set.embedder = match &self.embedder {
            None => None,
            Some(EmbedderSpec::Fixture { path }) => {
                Some(Arc::new(FixtureEmbedder::load(&base.join(path))?))
            }
            Some(EmbedderSpec::Hash { dim }) => Some(Arc::new(HashEmbedder::new(*dim))),
            Some(EmbedderSpec::Remote(r)) => Some(r.open(BackendRole::SpeakerEmbedder, base)?),
        };
        set.extractor = match &self.extractor {
            None => None,
            Some(ExtractorSpec::Passthrough) => Some(Arc::new(PassthroughExtractor)),
            Some(ExtractorSpec::Gain { gain }) => Some(Arc::new(GainExtractor::new(*gain))),
            Some(ExtractorSpec::Remote(r)) => Some(r.open(BackendRole::TargetExtractor, base)?),
        };
        set.scorer = match &self.scorer {
            None => None,
            Some(ScorerSpec::Scripted { path }) => {
                Some(Arc::new(ScriptedScorer::load(&base.join(path))?))
            }
            Some(ScorerSpec::Constant { ovrl, pdnsmos }) => {
                Some(Arc::new(ConstantScorer::new(*ovrl, *pdnsmos)))
            }
            Some(ScorerSpec::Remote(r)) => Some(r.open(BackendRole::QualityScorer, base)?),
        };
        set.transcriber = match &self.transcriber {
            None => None,
            Some(TranscriberSpec::Scripted { path }) => {
                Some(Arc::new(ScriptedTranscriber::load(&base.join(path))?))
            }
            Some(TranscriberSpec::Constant { text }) => {
                Some(Arc::new(ConstantTranscriber::new(text.clone())))
            }
            Some(TranscriberSpec::Remote(r)) => Some(r.open(BackendRole::Transcriber, base)?),
        };
        Ok(set)
    }
}
