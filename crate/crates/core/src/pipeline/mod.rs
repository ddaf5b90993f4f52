//! The sim → transform → train → publish pipeline.
//!
//! A [`PipelineInstance`] is a forward-only state machine. Its sim stage is a
//! set of parallel tasks; the transform stage starts when the last one
//! finishes (barrier), and all models then train in parallel, each publishing
//! at its own completion. Every publish carries the instance's launch time as
//! its training cutoff. Tier drivers in [`tier`] launch instances back-to-back
//! on the dedicated tier and inside batch allocations on opportunistic tiers.

mod durations;
pub mod tier;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use durations::*;
pub use tier::{run_batch_loop, run_dedicated_loop, Allocation, BatchDriver, DedicatedDriver, TierDriver, TierEvent, TierOutput, TierRun};

use crate::lifecycle::{ModelMetadata, ModelType, SourceTier};
use crate::time::Timestamp;

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("no active allocation with time remaining")]
    NoActiveAllocation,
    #[error("invalid transition: {event:?} in state {state:?}")]
    InvalidTransition { state: StageState, event: StageEvent },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageState {
    /// Passive data collection; the instance has not launched.
    Pdc,
    Sim,
    Transform,
    Train,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageEvent {
    SimTaskDone(u32),
    TransformDone,
    TrainDone(ModelType),
}

/// A model becoming available for deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Publish {
    pub time: Timestamp,
    pub model_type: ModelType,
    pub tier: SourceTier,
    pub cutoff: Timestamp,
    pub instance_id: u64,
    pub allocation_id: Option<u64>,
    pub history_window_h: f64,
}

impl Publish {
    pub fn metadata(&self, size_bytes: u64) -> ModelMetadata {
        ModelMetadata {
            model_type: self.model_type,
            cutoff_time: self.cutoff,
            produced_time: self.time,
            source_tier: self.tier,
            history_window_h: self.history_window_h,
            size_bytes,
        }
    }
}

/// Events an instance asks to have delivered later.
pub type Scheduled = Vec<(Timestamp, StageEvent)>;

#[derive(Debug, Default, Clone, PartialEq)]
pub struct Step {
    pub publishes: Vec<Publish>,
    pub schedule: Scheduled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineInstance {
    pub id: u64,
    pub tier: SourceTier,
    pub allocation_id: Option<u64>,
    pub data_cutoff: Timestamp,
    pub history_window_h: f64,
    state: StageState,
    plan: InstancePlan,
    sim_done: Vec<bool>,
    sim_tasks_remaining: u32,
    sim_finished_at: Option<Timestamp>,
    train_started_at: Option<Timestamp>,
    train_done: BTreeMap<ModelType, Timestamp>,
}

impl fmt::Display for PipelineInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{} ({:?})", self.tier, self.id, self.state)
    }
}

/// Launches an instance at `now` with the given pre-drawn plan. Opportunistic
/// instances need an allocation with time remaining.
pub fn launch_instance(
    id: u64,
    tier: SourceTier,
    now: Timestamp,
    history_window_h: f64,
    plan: InstancePlan,
    allocation: Option<&Allocation>,
) -> Result<(PipelineInstance, Scheduled), PipelineError> {
    if tier == SourceTier::Opportunistic && !allocation.is_some_and(|a| a.remaining(now) > 0) {
        return Err(PipelineError::NoActiveAllocation);
    }
    if plan.sim_tasks.is_empty() || plan.train.is_empty() {
        return Err(PipelineError::InvalidConfig("plan needs sim tasks and trainings".into()));
    }
    let n = plan.sim_tasks.len();
    let mut inst = PipelineInstance {
        id,
        tier,
        allocation_id: allocation.map(|a| a.id),
        data_cutoff: now,
        history_window_h,
        state: StageState::Pdc,
        plan,
        sim_done: vec![false; n],
        sim_tasks_remaining: n as u32,
        sim_finished_at: None,
        train_started_at: None,
        train_done: BTreeMap::new(),
    };
    inst.state = StageState::Sim;
    let schedule = inst.plan.sim_tasks.iter().enumerate().map(|(i, d)| (now + *d, StageEvent::SimTaskDone(i as u32))).collect();
    Ok((inst, schedule))
}

impl PipelineInstance {
    pub fn state(&self) -> StageState {
        self.state
    }

    pub fn plan(&self) -> &InstancePlan {
        &self.plan
    }

    pub fn sim_tasks_remaining(&self) -> u32 {
        self.sim_tasks_remaining
    }

    pub fn sim_finished_at(&self) -> Option<Timestamp> {
        self.sim_finished_at
    }

    pub fn train_started_at(&self) -> Option<Timestamp> {
        self.train_started_at
    }

    pub fn train_completions(&self) -> &BTreeMap<ModelType, Timestamp> {
        &self.train_done
    }

    pub fn is_done(&self) -> bool {
        self.state == StageState::Done
    }

    pub fn advance(&mut self, event: StageEvent, now: Timestamp) -> Result<Step, PipelineError> {
        let invalid = || PipelineError::InvalidTransition { state: self.state, event };
        let mut step = Step::default();
        match (self.state, event) {
            (StageState::Sim, StageEvent::SimTaskDone(i)) => {
                let slot = self.sim_done.get_mut(i as usize).filter(|done| !**done).ok_or_else(invalid)?;
                *slot = true;
                self.sim_tasks_remaining -= 1;
                if self.sim_tasks_remaining == 0 {
                    self.sim_finished_at = Some(now);
                    self.state = StageState::Transform;
                    step.schedule.push((now + self.plan.transform, StageEvent::TransformDone));
                }
            }
            (StageState::Transform, StageEvent::TransformDone) => {
                debug_assert_eq!(self.sim_tasks_remaining, 0);
                self.state = StageState::Train;
                self.train_started_at = Some(now);
                for (m, d) in &self.plan.train {
                    step.schedule.push((now + *d, StageEvent::TrainDone(*m)));
                }
            }
            (StageState::Train, StageEvent::TrainDone(m)) => {
                if !self.plan.train.contains_key(&m) || self.train_done.contains_key(&m) {
                    return Err(invalid());
                }
                self.train_done.insert(m, now);
                step.publishes.push(Publish {
                    time: now,
                    model_type: m,
                    tier: self.tier,
                    cutoff: self.data_cutoff,
                    instance_id: self.id,
                    allocation_id: self.allocation_id,
                    history_window_h: self.history_window_h,
                });
                if self.train_done.len() == self.plan.train.len() {
                    self.state = StageState::Done;
                }
            }
            _ => return Err(invalid()),
        }
        Ok(step)
    }
}
