//! Model artifacts, their publication through the data mover, and the
//! edge-side deployment gate.
//!
//! The gate deploys an incoming model only if its training cutoff is strictly
//! newer than the deployed one, so deployed freshness never goes backwards
//! even when a slower pipeline finishes after a faster one that started later.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_mover::{FileVersion, MoverError, Repository};
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[non_exhaustive]
pub enum ModelType {
    Pinn,
    Fno,
    Pcr,
}

impl ModelType {
    pub const ALL: [ModelType; 3] = [ModelType::Pinn, ModelType::Fno, ModelType::Pcr];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelType::Pinn => "pinn",
            ModelType::Fno => "fno",
            ModelType::Pcr => "pcr",
        }
    }

    /// Data mover file name for the artifact content.
    pub fn file_name(self) -> String {
        format!("model/{}", self.as_str())
    }

    /// Data mover file name for the metadata sidecar.
    pub fn meta_file_name(self) -> String {
        format!("model/{}/meta", self.as_str())
    }
}

impl fmt::Display for ModelType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "pinn" => Ok(ModelType::Pinn),
            "fno" => Ok(ModelType::Fno),
            "pcr" => Ok(ModelType::Pcr),
            other => Err(format!("unknown model type {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceTier {
    Dedicated,
    Opportunistic,
}

impl SourceTier {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceTier::Dedicated => "dedicated",
            SourceTier::Opportunistic => "opportunistic",
        }
    }
}

impl fmt::Display for SourceTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum LifecycleError {
    #[error(transparent)]
    Mover(#[from] MoverError),
    #[error("invalid artifact: {0}")]
    InvalidArtifact(String),
    #[error("slot holds {slot} models, incoming is {incoming}")]
    TypeMismatch { slot: ModelType, incoming: ModelType },
    #[error("no model deployed")]
    EmptySlot,
    #[error("content is at version {content} but metadata at {meta}")]
    VersionSkew { content: u32, meta: u32 },
    #[error("metadata: {0}")]
    Metadata(#[from] serde_json::Error),
}

pub type Result<T, E = LifecycleError> = std::result::Result<T, E>;

/// Everything about an artifact except its bytes. This is what the metadata
/// sidecar stores and what the deployment gate looks at.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMetadata {
    pub model_type: ModelType,
    /// Latest sensor timestamp included in the training data.
    pub cutoff_time: Timestamp,
    /// Training completion.
    pub produced_time: Timestamp,
    pub source_tier: SourceTier,
    pub history_window_h: f64,
    pub size_bytes: u64,
}

/// Field names and order of the sidecar JSON (keys sorted).
#[derive(Serialize, Deserialize)]
struct MetaJson {
    cutoff_time_ms: i64,
    history_window_h: f64,
    model_type: ModelType,
    produced_time_ms: i64,
    size_bytes: u64,
    source_tier: SourceTier,
}

impl ModelMetadata {
    pub fn validate(&self) -> Result<()> {
        if self.cutoff_time > self.produced_time {
            return Err(LifecycleError::InvalidArtifact(format!(
                "cutoff {} is after produced time {}",
                self.cutoff_time, self.produced_time
            )));
        }
        if !(self.history_window_h.is_finite() && self.history_window_h >= 0.0) {
            return Err(LifecycleError::InvalidArtifact("history window must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Canonical key-sorted JSON.
    pub fn to_json(&self) -> String {
        let wire = MetaJson {
            cutoff_time_ms: self.cutoff_time.0,
            history_window_h: self.history_window_h,
            model_type: self.model_type,
            produced_time_ms: self.produced_time.0,
            size_bytes: self.size_bytes,
            source_tier: self.source_tier,
        };
        // Going through Value sorts keys regardless of struct field order.
        serde_json::to_value(&wire).expect("plain struct").to_string()
    }

    pub fn from_json(s: &[u8]) -> Result<Self> {
        let w: MetaJson = serde_json::from_slice(s)?;
        Ok(ModelMetadata {
            model_type: w.model_type,
            cutoff_time: Timestamp(w.cutoff_time_ms),
            produced_time: Timestamp(w.produced_time_ms),
            source_tier: w.source_tier,
            history_window_h: w.history_window_h,
            size_bytes: w.size_bytes,
        })
    }
}

/// A published surrogate model: opaque bytes plus metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub meta: ModelMetadata,
    pub content: Vec<u8>,
    /// Data mover version; 0 until published.
    pub artifact_version: u32,
}

impl ModelArtifact {
    pub fn new(
        model_type: ModelType,
        content: Vec<u8>,
        cutoff_time: Timestamp,
        produced_time: Timestamp,
        source_tier: SourceTier,
        history_window_h: f64,
    ) -> Result<Self> {
        let meta =
            ModelMetadata { model_type, cutoff_time, produced_time, source_tier, history_window_h, size_bytes: content.len() as u64 };
        meta.validate()?;
        Ok(ModelArtifact { meta, content, artifact_version: 0 })
    }

    pub fn size_bytes(&self) -> u64 {
        self.meta.size_bytes
    }

    fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        if self.meta.size_bytes != self.content.len() as u64 {
            return Err(LifecycleError::InvalidArtifact(format!(
                "size_bytes {} but content is {} bytes",
                self.meta.size_bytes,
                self.content.len()
            )));
        }
        Ok(())
    }
}

fn latest_or_zero<R: Repository + ?Sized>(repo: &R, name: &str) -> Result<u32> {
    match repo.latest(name) {
        Ok(fv) => Ok(fv.version),
        Err(MoverError::UnknownFile(_)) => Ok(0),
        Err(e) => Err(e.into()),
    }
}

/// Pushes the metadata sidecar, then the content. Content version `k` is only
/// ever visible once metadata version `k` exists.
pub fn publish_model<R: Repository + ?Sized>(repo: &R, artifact: &ModelArtifact) -> Result<FileVersion> {
    artifact.validate()?;
    let ty = artifact.meta.model_type;
    let content_v = latest_or_zero(repo, &ty.file_name())?;
    let meta_v = latest_or_zero(repo, &ty.meta_file_name())?;
    if content_v != meta_v {
        return Err(LifecycleError::VersionSkew { content: content_v, meta: meta_v });
    }
    let meta_fv = repo.push(&ty.meta_file_name(), artifact.meta.to_json().as_bytes())?;
    let fv = repo.push(&ty.file_name(), &artifact.content)?;
    if fv.version != meta_fv.version {
        return Err(LifecycleError::VersionSkew { content: fv.version, meta: meta_fv.version });
    }
    Ok(fv)
}

/// Pulls content and metadata for a version (latest if `None`).
pub fn fetch_model<R: Repository + ?Sized>(repo: &R, model_type: ModelType, version: Option<u32>) -> Result<ModelArtifact> {
    let version = match version {
        Some(v) => v,
        None => repo.latest(&model_type.file_name())?.version,
    };
    let content = repo.pull(&model_type.file_name(), Some(version))?;
    let meta = ModelMetadata::from_json(&repo.pull(&model_type.meta_file_name(), Some(version))?)?;
    let artifact = ModelArtifact { meta, content, artifact_version: version };
    artifact.validate()?;
    if artifact.meta.model_type != model_type {
        return Err(LifecycleError::TypeMismatch { slot: model_type, incoming: artifact.meta.model_type });
    }
    Ok(artifact)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeployDecision {
    Deployed,
    SkippedStale,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeployedModel {
    pub meta: ModelMetadata,
    pub artifact_version: u32,
    pub deployed_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeployRecord {
    pub time: Timestamp,
    pub artifact_version: u32,
    pub cutoff_time: Timestamp,
    pub source_tier: SourceTier,
}

/// The edge's deployed model for one type.
#[derive(Debug, Clone, PartialEq)]
pub struct DeployedSlot {
    model_type: ModelType,
    current: Option<DeployedModel>,
    history: Vec<DeployRecord>,
}

impl DeployedSlot {
    pub fn new(model_type: ModelType) -> Self {
        DeployedSlot { model_type, current: None, history: Vec::new() }
    }

    pub fn model_type(&self) -> ModelType {
        self.model_type
    }

    pub fn current(&self) -> Option<&DeployedModel> {
        self.current.as_ref()
    }

    pub fn history(&self) -> &[DeployRecord] {
        &self.history
    }

    /// Deploys iff the slot is empty or `incoming.cutoff_time` is strictly newer.
    pub fn maybe_deploy(&mut self, incoming: &ModelMetadata, artifact_version: u32, now: Timestamp) -> Result<DeployDecision> {
        if incoming.model_type != self.model_type {
            return Err(LifecycleError::TypeMismatch { slot: self.model_type, incoming: incoming.model_type });
        }
        if let Some(cur) = &self.current {
            if incoming.cutoff_time <= cur.meta.cutoff_time {
                return Ok(DeployDecision::SkippedStale);
            }
        }
        self.history.push(DeployRecord {
            time: now,
            artifact_version,
            cutoff_time: incoming.cutoff_time,
            source_tier: incoming.source_tier,
        });
        self.current = Some(DeployedModel { meta: incoming.clone(), artifact_version, deployed_at: now });
        Ok(DeployDecision::Deployed)
    }

    pub fn maybe_deploy_artifact(&mut self, incoming: &ModelArtifact, now: Timestamp) -> Result<DeployDecision> {
        self.maybe_deploy(&incoming.meta, incoming.artifact_version, now)
    }

    /// Milliseconds since the deployed model's training cutoff.
    pub fn model_age(&self, now: Timestamp) -> Result<i64> {
        self.current.as_ref().map(|c| now - c.meta.cutoff_time).ok_or(LifecycleError::EmptySlot)
    }

    /// Milliseconds since the deployed model finished training.
    pub fn publish_age(&self, now: Timestamp) -> Result<i64> {
        self.current.as_ref().map(|c| now - c.meta.produced_time).ok_or(LifecycleError::EmptySlot)
    }

    /// `time_ms,version,cutoff_ms,source_tier`
    pub fn write_history_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time_ms,version,cutoff_ms,source_tier")?;
        for r in &self.history {
            writeln!(w, "{},{},{},{}", r.time.0, r.artifact_version, r.cutoff_time.0, r.source_tier)?;
        }
        Ok(())
    }
}
