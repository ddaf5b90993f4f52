//! Inter-publish interval statistics.
//!
//! Standard deviation is the population form throughout.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::{exact_to_f64, Exact, Real};
use crate::time::{Timestamp, MS_PER_MINUTE};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StatsError {
    #[error("empty-selection: {0}")]
    EmptySelection(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalStats<T> {
    pub label: String,
    pub count: u32,
    pub min: T,
    pub avg: T,
    pub max: T,
    pub std: T,
}

impl<T: Real> IntervalStats<T> {
    /// Two-pass statistics over gap lengths.
    pub fn from_gaps(label: impl Into<String>, gaps: &[T]) -> Result<Self, StatsError> {
        let label = label.into();
        if gaps.is_empty() {
            return Err(StatsError::EmptySelection(label));
        }
        let n = T::of(gaps.len() as f64);
        let (mut min, mut max, mut sum) = (gaps[0], gaps[0], T::zero());
        for &g in gaps {
            min = min.min(g);
            max = max.max(g);
            sum = sum + g;
        }
        let avg = sum / n;
        let var = gaps.iter().fold(T::zero(), |acc, &g| acc + (g - avg) * (g - avg)) / n;
        Ok(IntervalStats { label, count: gaps.len() as u32, min, avg: avg.max(min).min(max), max, std: var.sqrt() })
    }

    /// Renders `min avg max std` in minutes with one decimal.
    pub fn one_decimal(&self) -> String {
        format!("{:.1} {:.1} {:.1} {:.1}", self.min.as_f64(), self.avg.as_f64(), self.max.as_f64(), self.std.as_f64())
    }
}

/// Gaps between consecutive sorted timestamps, in minutes.
pub fn gaps_minutes<T: Real>(times: &[Timestamp]) -> Vec<T> {
    let mut sorted = times.to_vec();
    sorted.sort();
    sorted.windows(2).map(|w| T::of((w[1] - w[0]) as f64 / MS_PER_MINUTE as f64)).collect()
}

pub fn gaps_ms(times: &[Timestamp]) -> Vec<i64> {
    let mut sorted = times.to_vec();
    sorted.sort();
    sorted.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Exact statistics over integer-millisecond gaps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExactStats {
    pub count: u64,
    pub min_ms: i64,
    pub max_ms: i64,
    pub mean_ms: Exact,
    pub variance_ms2: Exact,
}

impl ExactStats {
    pub fn to_minutes<T: Real>(&self, label: impl Into<String>) -> IntervalStats<T> {
        let per_min = MS_PER_MINUTE as f64;
        IntervalStats {
            label: label.into(),
            count: self.count as u32,
            min: T::of(self.min_ms as f64 / per_min),
            avg: T::of(exact_to_f64(&self.mean_ms) / per_min),
            max: T::of(self.max_ms as f64 / per_min),
            std: T::of(exact_to_f64(&self.variance_ms2).sqrt() / per_min),
        }
    }
}

/// Single-pass accumulator: count, sum and sum of squares held exactly.
#[derive(Debug, Clone, Default)]
pub struct StreamingStats {
    count: u64,
    sum: i128,
    sum_sq: i128,
    min: Option<i64>,
    max: Option<i64>,
}

impl StreamingStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, gap_ms: i64) {
        self.count += 1;
        self.sum += gap_ms as i128;
        self.sum_sq += (gap_ms as i128) * (gap_ms as i128);
        self.min = Some(self.min.map_or(gap_ms, |m| m.min(gap_ms)));
        self.max = Some(self.max.map_or(gap_ms, |m| m.max(gap_ms)));
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn finish(&self) -> Option<ExactStats> {
        let (min_ms, max_ms) = (self.min?, self.max?);
        let n = self.count as i128;
        let mean = Exact::new(self.sum, n);
        let variance = Exact::new(self.sum_sq, n) - mean * mean;
        Some(ExactStats { count: self.count, min_ms, max_ms, mean_ms: mean, variance_ms2: variance })
    }
}

impl Extend<i64> for StreamingStats {
    fn extend<I: IntoIterator<Item = i64>>(&mut self, iter: I) {
        for g in iter {
            self.push(g);
        }
    }
}

/// Reference computation: explicit mean, then squared deviations from it.
pub fn brute_force_stats(gaps_ms: &[i64]) -> Option<ExactStats> {
    let min_ms = *gaps_ms.iter().min()?;
    let max_ms = *gaps_ms.iter().max()?;
    let n = Exact::from_integer(gaps_ms.len() as i128);
    let mean = gaps_ms.iter().map(|&g| Exact::from_integer(g as i128)).sum::<Exact>() / n;
    let variance = gaps_ms
        .iter()
        .map(|&g| {
            let d = Exact::from_integer(g as i128) - mean;
            d * d
        })
        .sum::<Exact>()
        / n;
    Some(ExactStats { count: gaps_ms.len() as u64, min_ms, max_ms, mean_ms: mean, variance_ms2: variance })
}

/// Exact statistics of the gaps between `times`.
pub fn interval_stats(label: impl Into<String>, times: &[Timestamp]) -> Result<IntervalStats<f64>, StatsError> {
    let label = label.into();
    let mut acc = StreamingStats::new();
    acc.extend(gaps_ms(times));
    acc.finish().map(|s| s.to_minutes(label.clone())).ok_or(StatsError::EmptySelection(label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::minutes_to_ms;
    use proptest::prelude::*;

    // Gap list whose statistics round to 113.4 / 134.8 / 200.4 / 32.9.
    const DEDICATED_ROW_GAPS: [f64; 5] = [113.4, 120.0, 200.4, 120.1, 120.1];

    #[test]
    fn dedicated_row_identity() {
        let s = IntervalStats::from_gaps("ded", &DEDICATED_ROW_GAPS).unwrap();
        assert_eq!(s.one_decimal(), "113.4 134.8 200.4 32.9");
        let s32 = IntervalStats::<f32>::from_gaps("ded", &DEDICATED_ROW_GAPS.map(|g| g as f32)).unwrap();
        assert_eq!(s32.one_decimal(), "113.4 134.8 200.4 32.9");

        let ms: Vec<i64> = DEDICATED_ROW_GAPS.iter().map(|g| minutes_to_ms(*g)).collect();
        let mut acc = StreamingStats::new();
        acc.extend(ms.iter().copied());
        let streaming = acc.finish().unwrap();
        assert_eq!(streaming, brute_force_stats(&ms).unwrap());
        assert_eq!(streaming.to_minutes::<f64>("ded").one_decimal(), "113.4 134.8 200.4 32.9");
        assert_eq!(streaming.mean_ms, Exact::from_integer(minutes_to_ms(134.8) as i128));
    }

    #[test]
    fn two_publishes_ten_minutes_apart() {
        let s = interval_stats("x", &[Timestamp(0), Timestamp(10 * MS_PER_MINUTE)]).unwrap();
        assert_eq!((s.min, s.avg, s.max, s.std, s.count), (10.0, 10.0, 10.0, 0.0, 1));
    }

    #[test]
    fn one_publish_is_empty_selection() {
        assert_eq!(interval_stats("x", &[Timestamp(5)]), Err(StatsError::EmptySelection("x".into())));
        assert!(IntervalStats::<f64>::from_gaps("x", &[]).is_err());
    }

    #[test]
    fn gaps_are_taken_after_sorting() {
        let t = [Timestamp(30), Timestamp(0), Timestamp(10)];
        assert_eq!(gaps_ms(&t), vec![10, 20]);
    }

    proptest! {
        #[test]
        fn streaming_matches_brute_force(gaps in proptest::collection::vec(0i64..86_400_000, 1..200)) {
            let mut acc = StreamingStats::new();
            acc.extend(gaps.iter().copied());
            let a = acc.finish().unwrap();
            let b = brute_force_stats(&gaps).unwrap();
            prop_assert_eq!(&a, &b);
            let (fa, fb) = (a.to_minutes::<f64>("a"), b.to_minutes::<f64>("a"));
            prop_assert_eq!(fa.std.to_bits(), fb.std.to_bits());
            prop_assert!(fa.min <= fa.avg && fa.avg <= fa.max && fa.std >= 0.0);
        }
    }
}
