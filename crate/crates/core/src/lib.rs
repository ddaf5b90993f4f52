//! Edge/HPC model-update coordination: an append-only log, a versioned data
//! mover on top of it, a monotonic model deployment gate, an overlapping
//! simulation/training pipeline across a dedicated and a batch-queue tier,
//! and a virtual-time simulator tying them together.

pub mod data_mover;
pub mod des;
pub mod event_log;
pub mod lifecycle;
pub mod num;
pub mod pipeline;
pub mod sim;
pub mod stats;
pub mod time;

pub use data_mover::{FileVersion, LocalRepository, MoverError, RemoteRepository, Repository};
pub use event_log::{EventLog, LogEntry, LogError, TopicName};
pub use lifecycle::{DeployDecision, DeployedSlot, ModelArtifact, ModelMetadata, ModelType, SourceTier};
pub use num::{Exact, Real};
pub use pipeline::{BatchTier, Publish, StageDurations};
pub use sim::{run_scenario, ScenarioConfig, SimTrace};
pub use time::{Clock, ManualClock, SystemClock, Timestamp};

pub type IntervalStats64 = stats::IntervalStats<f64>;
pub type IntervalStats32 = stats::IntervalStats<f32>;
pub type DecayCurve64 = sim::DecayCurve<f64>;
pub type DecayCurve32 = sim::DecayCurve<f32>;
pub type LinkModel64 = sim::LinkModel<f64>;
pub type LinkModel32 = sim::LinkModel<f32>;
