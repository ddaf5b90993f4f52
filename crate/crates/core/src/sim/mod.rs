//! Virtual-time simulation of sensors, pipeline tiers, downloads and edge
//! deployment.

mod config;
mod decay;
mod export;
mod link;
mod staleness;
mod trace;

pub use config::ScenarioConfig;
pub use decay::{
    default_decay_curves, empirical_mean_gap, evaluate_decay, expected_decay_period, indistinguishability, time_averaged_mae, DecayCurve,
    Indistinguishability, REPORTED_EXTRA_GENERATIONS,
};
pub use export::{write_decay_report, write_outputs, DecayReportError, TierFilter};
pub use link::{default_model_sizes, transfer_time, LinkModel, LinkProfile, MIB};
pub use staleness::{staleness_series, StalenessSegment, StalenessSeries};
pub use trace::{SimTrace, TraceRecord};

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::des::{EventQueue, Ranked};
use crate::lifecycle::{DeployedSlot, LifecycleError, ModelType};
use crate::pipeline::{BatchDriver, DedicatedDriver, PipelineError, Publish, TierDriver, TierEvent, TierOutput};
use crate::time::{hours_to_ms, minutes_to_ms, Timestamp, MS_PER_SECOND};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid-config: {0}")]
    InvalidConfig(String),
    #[error("unconfigured model type {0}")]
    UnconfiguredModel(ModelType),
    #[error("empty decay curve")]
    EmptyCurve,
    #[error("no deploys of {0} in trace")]
    NoDeploys(ModelType),
}

impl From<PipelineError> for SimError {
    fn from(e: PipelineError) -> Self {
        SimError::InvalidConfig(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimEvent {
    Tier { tier: usize, event: TierEvent },
    TransferDone { transfer: usize },
    PollTick,
    SensorEmit,
}

impl Ranked for SimEvent {
    /// Pipeline events, then arrivals at the edge, then the edge's poll, then
    /// the sensor tick that samples ages after everything else at that instant.
    fn rank(&self) -> u8 {
        match self {
            SimEvent::Tier { event, .. } => event.rank(),
            SimEvent::TransferDone { .. } => 5,
            SimEvent::PollTick => 6,
            SimEvent::SensorEmit => 7,
        }
    }
}

enum Driver {
    Dedicated(DedicatedDriver),
    Batch(String, BatchDriver),
}

impl Driver {
    fn as_dyn(&mut self) -> &mut dyn TierDriver {
        match self {
            Driver::Dedicated(d) => d,
            Driver::Batch(_, d) => d,
        }
    }

    fn name(&self) -> &str {
        match self {
            Driver::Dedicated(_) => "dedicated",
            Driver::Batch(n, _) => n,
        }
    }
}

/// Random stream for tier `index`: the dedicated tier is stream 0, batch
/// tiers follow. Adding a tier leaves the other tiers' draws unchanged.
pub fn tier_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

struct Artifact {
    publish: Publish,
    version: u32,
}

struct Transfer {
    model: ModelType,
    artifact: usize,
    started: Timestamp,
}

struct Edge {
    artifacts: BTreeMap<ModelType, Vec<Artifact>>,
    next_unseen: BTreeMap<ModelType, usize>,
    best_fetched: BTreeMap<ModelType, Timestamp>,
    slots: BTreeMap<ModelType, DeployedSlot>,
    transfers: Vec<Transfer>,
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<SimTrace, SimError> {
    config.validate()?;
    let start = Timestamp::ZERO;
    let end = start + hours_to_ms(config.horizon_h);
    let mut trace = SimTrace::new(start, end);
    if end <= start {
        return Ok(trace);
    }

    let mut drivers = Vec::new();
    if config.dedicated_enabled {
        drivers.push(Driver::Dedicated(DedicatedDriver::new(config.dedicated.clone(), config.history_window_h, tier_rng(config.seed, 0))?));
    }
    for (i, b) in config.batch.iter().enumerate() {
        drivers.push(Driver::Batch(b.name.clone(), BatchDriver::new(b.clone(), config.history_window_h, tier_rng(config.seed, i + 1))?));
    }

    let mut queue = EventQueue::new(start);
    for (tier, d) in drivers.iter_mut().enumerate() {
        let out = d.as_dyn().start(start)?;
        absorb(&mut queue, &mut trace, tier, d.name(), out, None);
    }
    queue.schedule(start, SimEvent::PollTick);
    queue.schedule(start, SimEvent::SensorEmit);

    let poll_ms = ((config.poll_interval_s * MS_PER_SECOND as f64).round() as i64).max(1);
    let sensor_ms = minutes_to_ms(config.sensor_interval_min).max(1);
    let mut edge = Edge {
        artifacts: ModelType::ALL.iter().map(|m| (*m, Vec::new())).collect(),
        next_unseen: BTreeMap::new(),
        best_fetched: BTreeMap::new(),
        slots: ModelType::ALL.iter().map(|m| (*m, DeployedSlot::new(*m))).collect(),
        transfers: Vec::new(),
    };
    let mut sensor_seq = 0u64;

    while let Some((now, ev)) = queue.pop_before(end) {
        match ev {
            SimEvent::Tier { tier, event } => {
                let d = &mut drivers[tier];
                let out = d.as_dyn().handle(now, event)?;
                absorb(&mut queue, &mut trace, tier, d.name(), out, Some(&mut edge));
            }
            SimEvent::PollTick => {
                poll(config, now, &mut edge, &mut queue)?;
                queue.schedule(now + poll_ms, SimEvent::PollTick);
            }
            SimEvent::TransferDone { transfer } => {
                let t = &edge.transfers[transfer];
                let a = &edge.artifacts[&t.model][t.artifact];
                let size = config.model_sizes[&t.model];
                let meta = a.publish.metadata(size);
                let decision = edge
                    .slots
                    .get_mut(&t.model)
                    .expect("slot per model")
                    .maybe_deploy(&meta, a.version, now)
                    .map_err(|e: LifecycleError| SimError::InvalidConfig(e.to_string()))?;
                trace.push(TraceRecord::Transfer {
                    time: now,
                    model: t.model,
                    version: a.version,
                    cutoff: a.publish.cutoff,
                    started: t.started,
                    duration_ms: now - t.started,
                });
                trace.push(TraceRecord::Deploy {
                    time: now,
                    model: t.model,
                    version: a.version,
                    cutoff: a.publish.cutoff,
                    source_tier: a.publish.tier,
                    decision,
                });
            }
            SimEvent::SensorEmit => {
                trace.push(TraceRecord::Sensor { time: now, seq: sensor_seq });
                sensor_seq += 1;
                for (m, slot) in &edge.slots {
                    if let (Ok(age_ms), Ok(publish_age_ms)) = (slot.model_age(now), slot.publish_age(now)) {
                        trace.push(TraceRecord::Age { time: now, model: *m, age_ms, publish_age_ms });
                    }
                }
                queue.schedule(now + sensor_ms, SimEvent::SensorEmit);
            }
        }
    }
    Ok(trace)
}

fn absorb(queue: &mut EventQueue<SimEvent>, trace: &mut SimTrace, tier: usize, tier_name: &str, out: TierOutput, edge: Option<&mut Edge>) {
    if let Some(a) = out.opened {
        trace.push(TraceRecord::AllocationOpen { time: a.start, tier: tier_name.to_string(), allocation: a.id, expiry: a.expiry });
    }
    if let Some(a) = out.expired {
        trace.push(TraceRecord::AllocationExpire { time: a.expiry, tier: tier_name.to_string(), allocation: a.id });
    }
    if let Some(edge) = edge {
        for p in out.publishes {
            let list = edge.artifacts.get_mut(&p.model_type).expect("list per model");
            let version = list.len() as u32 + 1;
            trace.push(TraceRecord::Publish {
                time: p.time,
                model: p.model_type,
                tier: p.tier,
                tier_name: tier_name.to_string(),
                cutoff: p.cutoff,
                instance: p.instance_id,
                allocation: p.allocation_id,
                version,
            });
            list.push(Artifact { publish: p, version });
        }
    }
    for (t, event) in out.schedule {
        queue.schedule(t, SimEvent::Tier { tier, event });
    }
}

/// The edge looks at everything published since its last poll and fetches
/// the freshest artifact per model, if it beats what it already fetched.
fn poll(config: &ScenarioConfig, now: Timestamp, edge: &mut Edge, queue: &mut EventQueue<SimEvent>) -> Result<(), SimError> {
    for m in ModelType::ALL {
        let list = &edge.artifacts[&m];
        let from = edge.next_unseen.get(&m).copied().unwrap_or(0);
        if from >= list.len() {
            continue;
        }
        edge.next_unseen.insert(m, list.len());
        let Some(best) = (from..list.len()).max_by_key(|i| (list[*i].publish.cutoff, std::cmp::Reverse(*i))) else {
            continue;
        };
        let cutoff = list[best].publish.cutoff;
        if edge.best_fetched.get(&m).is_some_and(|c| *c > cutoff) {
            continue;
        }
        edge.best_fetched.insert(m, cutoff);
        let size = *config.model_sizes.get(&m).ok_or(SimError::UnconfiguredModel(m))?;
        let dur = transfer_time(&config.network, m, size)?;
        edge.transfers.push(Transfer { model: m, artifact: best, started: now });
        queue.schedule(now + dur, SimEvent::TransferDone { transfer: edge.transfers.len() - 1 });
    }
    Ok(())
}

/// Dedicated cadence in minutes: the configured override, else the expected
/// instance duration.
pub fn base_period_min(config: &ScenarioConfig) -> f64 {
    config.base_period_min.unwrap_or_else(|| config.dedicated.expected_total_min(20_000))
}

/// Physical bounds on useful cadence for `config`.
pub fn indistinguishability_bound(config: &ScenarioConfig) -> Indistinguishability {
    indistinguishability(config.sensor_interval_min, config.measurement_error_band, base_period_min(config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifecycle::SourceTier;
    use crate::pipeline::{BatchTier, StageDurations};
    use crate::time::MS_PER_HOUR;

    fn deterministic(horizon_h: f64) -> ScenarioConfig {
        ScenarioConfig { horizon_h, dedicated: StageDurations::deterministic(), ..ScenarioConfig::default() }
    }

    #[test]
    fn zero_horizon_is_empty() {
        assert!(run_scenario(&deterministic(0.0)).unwrap().is_empty());
    }

    #[test]
    fn deterministic_dedicated_publishes_every_134_8_minutes() {
        let trace = run_scenario(&deterministic(24.0)).unwrap();
        for m in ModelType::ALL {
            let s = trace.interval_stats(m, TierFilter::All).unwrap();
            assert_eq!((s.min, s.max), (134.8, 134.8));
            // Deploys follow publishes within one poll plus the download.
            let deploys = trace.deploys(m);
            assert!(!deploys.is_empty());
            for w in deploys.windows(2) {
                assert!(((w[1].0 - w[0].0) - minutes_to_ms(134.8)).abs() <= 60_000 + 3_000);
            }
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let cfg = ScenarioConfig { horizon_h: 72.0, seed: 11, batch: vec![BatchTier::default()], ..ScenarioConfig::default() };
        assert_eq!(run_scenario(&cfg).unwrap(), run_scenario(&cfg).unwrap());
        let other = ScenarioConfig { seed: 12, ..cfg.clone() };
        assert_ne!(run_scenario(&cfg).unwrap(), run_scenario(&other).unwrap());
    }

    #[test]
    fn adding_a_batch_tier_keeps_dedicated_publishes_and_lowers_age() {
        for seed in 0..5 {
            let base = ScenarioConfig { horizon_h: 96.0, seed, ..ScenarioConfig::default() };
            let with = ScenarioConfig { batch: vec![BatchTier::default()], ..base.clone() };
            let (a, b) = (run_scenario(&base).unwrap(), run_scenario(&with).unwrap());
            let ded =
                |t: &SimTrace| t.publishes().filter(|p| p.tier == SourceTier::Dedicated).map(|p| (p.time, p.model)).collect::<Vec<_>>();
            assert_eq!(ded(&a), ded(&b));
            for m in ModelType::ALL {
                let (sa, sb) = (staleness_series(&a, m).unwrap(), staleness_series(&b, m).unwrap());
                let from = sa.segments[0].start;
                assert!(sb.time_averaged_age(from, a.end).unwrap() <= sa.time_averaged_age(from, a.end).unwrap());
            }
        }
    }

    #[test]
    fn recorded_ages_match_the_sawtooth() {
        let cfg = ScenarioConfig { horizon_h: 72.0, seed: 3, batch: vec![BatchTier::default()], ..ScenarioConfig::default() };
        let trace = run_scenario(&cfg).unwrap();
        for m in ModelType::ALL {
            let series = staleness_series(&trace, m).unwrap();
            let samples = trace.age_samples(m);
            assert!(!samples.is_empty());
            for (t, age) in samples {
                assert_eq!(series.age_at(t), Some(age));
            }
        }
    }

    #[test]
    fn allocations_and_publishes_recorded() {
        let cfg = ScenarioConfig { horizon_h: 96.0, seed: 5, batch: vec![BatchTier::default()], ..ScenarioConfig::default() };
        let trace = run_scenario(&cfg).unwrap();
        assert!(trace.records.iter().any(|r| matches!(r, TraceRecord::AllocationOpen { .. })));
        assert!(trace.publishes().any(|p| p.tier == SourceTier::Opportunistic));
        assert!(trace.records.windows(2).all(|w| w[0].time() <= w[1].time()));
        assert!(trace.records.iter().all(|r| r.time() < trace.end));
        for r in &trace.records {
            if let TraceRecord::Age { age_ms, publish_age_ms, .. } = r {
                assert!(0 <= *publish_age_ms && publish_age_ms < age_ms);
            }
        }
        assert_eq!(trace.end, Timestamp(96 * MS_PER_HOUR));
    }

    #[test]
    fn ndjson_round_trip() {
        let cfg = ScenarioConfig { horizon_h: 12.0, ..ScenarioConfig::default() };
        let trace = run_scenario(&cfg).unwrap();
        let mut buf = Vec::new();
        trace.write_ndjson(&mut buf).unwrap();
        assert_eq!(SimTrace::read_ndjson(&buf[..]).unwrap(), trace);
        assert!(SimTrace::read_ndjson(&b""[..]).is_err());
    }

    #[test]
    fn bound_uses_dedicated_nominal_period() {
        let b = indistinguishability_bound(&deterministic(1.0));
        assert_eq!((b.min_useful_period_min, b.error_floor_mps), (5.0, 0.44));
        assert!((b.base_period_min - 134.8).abs() < 1e-9);
    }
}
