//! Tier drivers: who launches instances, when.
//!
//! Drivers are passive. The caller owns the event queue, delivers
//! [`TierEvent`]s, and schedules whatever the driver returns. The same drivers
//! run standalone in [`run_dedicated_loop`]/[`run_batch_loop`] and together
//! inside the continuum simulator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{launch_instance, BatchTier, PipelineError, PipelineInstance, Publish, StageDurations, StageEvent};
use crate::des::{EventQueue, Ranked};
use crate::lifecycle::SourceTier;
use crate::time::{hours_to_ms, Timestamp};

/// One granted batch job.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub id: u64,
    pub start: Timestamp,
    pub expiry: Timestamp,
}

impl Allocation {
    pub fn remaining(&self, now: Timestamp) -> i64 {
        self.expiry - now
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        self.start <= t && t <= self.expiry
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TierEvent {
    Stage { instance: u64, event: StageEvent },
    AllocationOpen { allocation: u64 },
    AllocationExpire { allocation: u64 },
}

impl Ranked for TierEvent {
    /// Stage completions first so a training that ends exactly at expiry
    /// still publishes.
    fn rank(&self) -> u8 {
        match self {
            TierEvent::Stage { event: StageEvent::SimTaskDone(_), .. } => 0,
            TierEvent::Stage { event: StageEvent::TransformDone, .. } => 1,
            TierEvent::Stage { event: StageEvent::TrainDone(_), .. } => 2,
            TierEvent::AllocationExpire { .. } => 3,
            TierEvent::AllocationOpen { .. } => 4,
        }
    }
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct TierOutput {
    pub publishes: Vec<Publish>,
    pub schedule: Vec<(Timestamp, TierEvent)>,
    pub launched: Vec<u64>,
    pub opened: Option<Allocation>,
    pub expired: Option<Allocation>,
}

impl TierOutput {
    fn absorb_stage(&mut self, instance: u64, step: super::Step) {
        self.publishes.extend(step.publishes);
        self.schedule.extend(step.schedule.into_iter().map(|(t, event)| (t, TierEvent::Stage { instance, event })));
    }
}

pub trait TierDriver {
    fn tier(&self) -> SourceTier;
    fn start(&mut self, now: Timestamp) -> Result<TierOutput, PipelineError>;
    fn handle(&mut self, now: Timestamp, event: TierEvent) -> Result<TierOutput, PipelineError>;
    fn active(&self) -> Option<&PipelineInstance>;
}

/// Always-available tier; relaunches the moment the slowest model finishes.
#[derive(Debug, Clone)]
pub struct DedicatedDriver {
    durations: StageDurations,
    history_window_h: f64,
    rng: ChaCha8Rng,
    active: Option<PipelineInstance>,
    next_id: u64,
}

impl DedicatedDriver {
    pub fn new(durations: StageDurations, history_window_h: f64, rng: ChaCha8Rng) -> Result<Self, PipelineError> {
        durations.validate()?;
        Ok(DedicatedDriver { durations, history_window_h, rng, active: None, next_id: 1 })
    }

    fn launch(&mut self, now: Timestamp) -> Result<TierOutput, PipelineError> {
        let plan = self.durations.draw_plan(&mut self.rng);
        let id = self.next_id;
        self.next_id += 1;
        let (inst, sched) = launch_instance(id, SourceTier::Dedicated, now, self.history_window_h, plan, None)?;
        self.active = Some(inst);
        let mut out = TierOutput { launched: vec![id], ..Default::default() };
        out.absorb_stage(id, super::Step { publishes: Vec::new(), schedule: sched });
        Ok(out)
    }
}

impl TierDriver for DedicatedDriver {
    fn tier(&self) -> SourceTier {
        SourceTier::Dedicated
    }

    fn start(&mut self, now: Timestamp) -> Result<TierOutput, PipelineError> {
        self.launch(now)
    }

    fn handle(&mut self, now: Timestamp, event: TierEvent) -> Result<TierOutput, PipelineError> {
        let TierEvent::Stage { instance, event } = event else {
            return Ok(TierOutput::default());
        };
        let Some(inst) = self.active.as_mut().filter(|i| i.id == instance) else {
            return Ok(TierOutput::default());
        };
        let step = inst.advance(event, now)?;
        let done = inst.is_done();
        let mut out = TierOutput::default();
        out.absorb_stage(instance, step);
        if done {
            let next = self.launch(now)?;
            out.publishes.extend(next.publishes);
            out.schedule.extend(next.schedule);
            out.launched.extend(next.launched);
        }
        Ok(out)
    }

    fn active(&self) -> Option<&PipelineInstance> {
        self.active.as_ref()
    }
}

/// Batch-queue tier: wait in queue, run iterations back-to-back while the
/// admission policy allows, lose the allocation at expiry, resubmit.
#[derive(Debug, Clone)]
pub struct BatchDriver {
    tier: BatchTier,
    history_window_h: f64,
    rng: ChaCha8Rng,
    allocation: Option<Allocation>,
    active: Option<PipelineInstance>,
    next_instance: u64,
    next_allocation: u64,
}

impl BatchDriver {
    pub fn new(tier: BatchTier, history_window_h: f64, rng: ChaCha8Rng) -> Result<Self, PipelineError> {
        tier.validate()?;
        Ok(BatchDriver { tier, history_window_h, rng, allocation: None, active: None, next_instance: 1, next_allocation: 1 })
    }

    pub fn allocation(&self) -> Option<Allocation> {
        self.allocation
    }

    fn submit(&mut self, now: Timestamp, out: &mut TierOutput) {
        let wait = self.tier.queue_wait.sample_ms(&mut self.rng);
        let id = self.next_allocation;
        self.next_allocation += 1;
        out.schedule.push((now + wait, TierEvent::AllocationOpen { allocation: id }));
    }

    fn try_launch(&mut self, now: Timestamp, out: &mut TierOutput) -> Result<(), PipelineError> {
        let Some(alloc) = self.allocation else { return Ok(()) };
        let remaining = alloc.remaining(now);
        if remaining <= 0 || remaining < self.tier.admission_threshold_ms() {
            return Ok(());
        }
        let plan = self.tier.draw_plan(&mut self.rng);
        let id = self.next_instance;
        self.next_instance += 1;
        let (inst, sched) = launch_instance(id, SourceTier::Opportunistic, now, self.history_window_h, plan, Some(&alloc))?;
        self.active = Some(inst);
        out.launched.push(id);
        out.absorb_stage(id, super::Step { publishes: Vec::new(), schedule: sched });
        Ok(())
    }
}

impl TierDriver for BatchDriver {
    fn tier(&self) -> SourceTier {
        SourceTier::Opportunistic
    }

    fn start(&mut self, now: Timestamp) -> Result<TierOutput, PipelineError> {
        let mut out = TierOutput::default();
        self.submit(now, &mut out);
        Ok(out)
    }

    fn handle(&mut self, now: Timestamp, event: TierEvent) -> Result<TierOutput, PipelineError> {
        let mut out = TierOutput::default();
        match event {
            TierEvent::AllocationOpen { allocation } => {
                let alloc = Allocation { id: allocation, start: now, expiry: now + hours_to_ms(self.tier.allocation_limit_h) };
                self.allocation = Some(alloc);
                out.opened = Some(alloc);
                out.schedule.push((alloc.expiry, TierEvent::AllocationExpire { allocation }));
                self.try_launch(now, &mut out)?;
            }
            TierEvent::AllocationExpire { allocation } => {
                if self.allocation.is_some_and(|a| a.id == allocation) {
                    out.expired = self.allocation.take();
                    // Work in flight cannot checkpoint; it is lost.
                    self.active = None;
                    self.submit(now, &mut out);
                }
            }
            TierEvent::Stage { instance, event } => {
                let Some(inst) = self.active.as_mut().filter(|i| i.id == instance) else {
                    return Ok(out);
                };
                let step = inst.advance(event, now)?;
                let done = inst.is_done();
                out.absorb_stage(instance, step);
                if done {
                    self.active = None;
                    self.try_launch(now, &mut out)?;
                }
            }
        }
        Ok(out)
    }

    fn active(&self) -> Option<&PipelineInstance> {
        self.active.as_ref()
    }
}

/// Result of running one tier alone.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct TierRun {
    pub publishes: Vec<Publish>,
    pub allocations: Vec<Allocation>,
    pub launches: Vec<(Timestamp, u64)>,
}

/// Runs a single driver over `[start, end)`.
pub fn run_tier<D: TierDriver>(driver: &mut D, start: Timestamp, end: Timestamp) -> Result<TierRun, PipelineError> {
    let mut run = TierRun::default();
    if start >= end {
        return Ok(run);
    }
    let mut queue = EventQueue::new(start);
    let apply = |out: TierOutput, now: Timestamp, queue: &mut EventQueue<TierEvent>, run: &mut TierRun| {
        run.publishes.extend(out.publishes);
        run.launches.extend(out.launched.into_iter().map(|id| (now, id)));
        if let Some(a) = out.opened {
            run.allocations.push(a);
        }
        for (t, ev) in out.schedule {
            queue.schedule(t, ev);
        }
    };
    let out = driver.start(start)?;
    apply(out, start, &mut queue, &mut run);
    while let Some((now, ev)) = queue.pop_before(end) {
        let out = driver.handle(now, ev)?;
        apply(out, now, &mut queue, &mut run);
    }
    Ok(run)
}

pub fn run_dedicated_loop(
    durations: &StageDurations,
    history_window_h: f64,
    seed: u64,
    start: Timestamp,
    end: Timestamp,
) -> Result<Vec<Publish>, PipelineError> {
    let mut driver = DedicatedDriver::new(durations.clone(), history_window_h, ChaCha8Rng::seed_from_u64(seed))?;
    Ok(run_tier(&mut driver, start, end)?.publishes)
}

pub fn run_batch_loop(
    batch: &BatchTier,
    history_window_h: f64,
    seed: u64,
    start: Timestamp,
    end: Timestamp,
) -> Result<TierRun, PipelineError> {
    let mut driver = BatchDriver::new(batch.clone(), history_window_h, ChaCha8Rng::seed_from_u64(seed))?;
    run_tier(&mut driver, start, end)
}
