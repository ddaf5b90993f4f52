//! Deployed-model age over time.

use crate::lifecycle::ModelType;
use crate::num::Exact;
use crate::time::{Timestamp, MS_PER_MINUTE};

use super::{SimError, SimTrace};

/// Between `start` and `end` the age grows one-for-one from `age_at_start_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StalenessSegment {
    pub start: Timestamp,
    pub end: Timestamp,
    pub cutoff: Timestamp,
    pub age_at_start_ms: i64,
}

impl StalenessSegment {
    pub fn age_at(&self, t: Timestamp) -> i64 {
        self.age_at_start_ms + (t - self.start)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StalenessSeries {
    pub model: ModelType,
    pub segments: Vec<StalenessSegment>,
}

impl StalenessSeries {
    /// Age at `t`, or `None` before the first deploy.
    pub fn age_at(&self, t: Timestamp) -> Option<i64> {
        let i = self.segments.partition_point(|s| s.start <= t);
        i.checked_sub(1).map(|i| self.segments[i].age_at(t))
    }

    /// Breakpoints `(t, age_min)`: each segment contributes its start and end.
    pub fn points(&self) -> Vec<(Timestamp, f64)> {
        let per_min = MS_PER_MINUTE as f64;
        self.segments
            .iter()
            .flat_map(|s| [(s.start, s.age_at_start_ms as f64 / per_min), (s.end, s.age_at(s.end) as f64 / per_min)])
            .collect()
    }

    /// Exact mean age in ms over `[from, to]`. `None` if nothing is deployed
    /// at `from` or the window is empty.
    pub fn time_averaged_age(&self, from: Timestamp, to: Timestamp) -> Option<Exact> {
        if to <= from || self.age_at(from).is_none() {
            return None;
        }
        let mut area = Exact::from_integer(0);
        for s in &self.segments {
            let (a, b) = (s.start.max(from), s.end.min(to));
            if b <= a {
                continue;
            }
            let (ya, yb) = (s.age_at(a) as i128, s.age_at(b) as i128);
            area += Exact::new((ya + yb) * (b - a) as i128, 2);
        }
        Some(area / Exact::from_integer((to - from) as i128))
    }
}

/// Sawtooth of deployed age for `model`: resets to `deploy − cutoff` at every
/// deploy and grows with slope 1 until the next, or the end of the trace.
pub fn staleness_series(trace: &SimTrace, model: ModelType) -> Result<StalenessSeries, SimError> {
    let deploys = trace.deploys(model);
    if deploys.is_empty() {
        return Err(SimError::NoDeploys(model));
    }
    let mut segments: Vec<StalenessSegment> = Vec::with_capacity(deploys.len());
    for (i, &(t, cutoff)) in deploys.iter().enumerate() {
        let end = deploys.get(i + 1).map_or(trace.end.max(t), |d| d.0);
        segments.push(StalenessSegment { start: t, end, cutoff, age_at_start_ms: t - cutoff });
    }
    Ok(StalenessSeries { model, segments })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifecycle::{DeployDecision, SourceTier};
    use crate::sim::TraceRecord;
    use crate::time::minutes_to_ms;

    fn deploy(t: i64, cutoff: i64) -> TraceRecord {
        TraceRecord::Deploy {
            time: Timestamp(t),
            model: ModelType::Fno,
            version: 1,
            cutoff: Timestamp(cutoff),
            source_tier: SourceTier::Dedicated,
            decision: DeployDecision::Deployed,
        }
    }

    #[test]
    fn single_deploy_grows_from_initial_age() {
        let mut trace = SimTrace::new(Timestamp(0), Timestamp(minutes_to_ms(60.0)));
        trace.push(deploy(0, -minutes_to_ms(134.8)));
        let s = staleness_series(&trace, ModelType::Fno).unwrap();
        assert_eq!(s.age_at(Timestamp(minutes_to_ms(30.0))), Some(minutes_to_ms(164.8)));
        assert_eq!(s.points(), vec![(Timestamp(0), 134.8), (Timestamp(minutes_to_ms(60.0)), 194.8)]);
    }

    #[test]
    fn resets_and_average() {
        let mut trace = SimTrace::new(Timestamp(0), Timestamp(100));
        trace.push(deploy(0, 0));
        trace.push(deploy(50, 45));
        let s = staleness_series(&trace, ModelType::Fno).unwrap();
        assert_eq!(s.age_at(Timestamp(49)), Some(49));
        assert_eq!(s.age_at(Timestamp(50)), Some(5));
        assert_eq!(s.age_at(Timestamp(-1)), None);
        // (0+50)/2*50 + (5+55)/2*50 = 1250 + 1500 over 100.
        assert_eq!(s.time_averaged_age(Timestamp(0), Timestamp(100)), Some(Exact::new(2750, 100)));
        assert!(staleness_series(&trace, ModelType::Pcr).is_err());
    }
}
