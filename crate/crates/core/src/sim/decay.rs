//! Accuracy decay against model age, and what extra generations buy.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::lifecycle::ModelType;
use crate::num::Real;

/// MAE (m/s) as a function of model age in minutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecayCurve<T> {
    Linear {
        intercept: T,
        /// MAE gained per minute of age.
        slope: T,
        #[serde(default)]
        history_window_h: Option<f64>,
    },
    Piecewise {
        /// `(age_min, mae_mps)` pairs, strictly increasing in age. Ages
        /// before the first knot take its value; ages past the last take
        /// the last value.
        knots: Vec<(T, T)>,
        #[serde(default)]
        history_window_h: Option<f64>,
    },
}

impl<T: Real> DecayCurve<T> {
    pub fn piecewise(knots: &[(f64, f64)]) -> Self {
        DecayCurve::Piecewise { knots: knots.iter().map(|&(a, m)| (T::of(a), T::of(m))).collect(), history_window_h: None }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        match self {
            DecayCurve::Linear { intercept, slope, .. } => {
                if !intercept.is_finite() || !slope.is_finite() || *intercept < T::zero() {
                    return Err(SimError::InvalidConfig("linear decay curve needs a finite, non-negative intercept".into()));
                }
            }
            DecayCurve::Piecewise { knots, .. } => {
                if knots.is_empty() {
                    return Err(SimError::EmptyCurve);
                }
                if knots.iter().any(|(a, m)| !a.is_finite() || !m.is_finite() || *m < T::zero() || *a < T::zero()) {
                    return Err(SimError::InvalidConfig("decay knots must be finite with age >= 0 and MAE >= 0".into()));
                }
                if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(SimError::InvalidConfig("decay knots must be strictly increasing in age".into()));
                }
            }
        }
        Ok(())
    }

    fn knot_ages(&self) -> Vec<T> {
        match self {
            DecayCurve::Linear { .. } => Vec::new(),
            DecayCurve::Piecewise { knots, .. } => knots.iter().map(|k| k.0).collect(),
        }
    }
}

/// MAE at `age_min`.
pub fn evaluate_decay<T: Real>(curve: &DecayCurve<T>, age_min: T) -> Result<T, SimError> {
    if age_min < T::zero() || !age_min.is_finite() {
        return Err(SimError::InvalidConfig(format!("negative or non-finite age {age_min}")));
    }
    match curve {
        DecayCurve::Linear { intercept, slope, .. } => Ok(*intercept + *slope * age_min),
        DecayCurve::Piecewise { knots, .. } => {
            let (first, last) = match (knots.first(), knots.last()) {
                (Some(f), Some(l)) => (*f, *l),
                _ => return Err(SimError::EmptyCurve),
            };
            if age_min <= first.0 {
                return Ok(first.1);
            }
            if age_min >= last.0 {
                return Ok(last.1);
            }
            let i = knots.partition_point(|k| k.0 <= age_min);
            let ((a0, m0), (a1, m1)) = (knots[i - 1], knots[i]);
            Ok(m0 + (m1 - m0) * (age_min - a0) / (a1 - a0))
        }
    }
}

/// Mean MAE over ages `[start_age, start_age + period]`: what a deployed
/// model averages when replaced every `period` minutes.
pub fn time_averaged_mae<T: Real>(curve: &DecayCurve<T>, start_age_min: T, period_min: T) -> Result<T, SimError> {
    if period_min <= T::zero() {
        return Err(SimError::InvalidConfig("averaging period must be positive".into()));
    }
    let end = start_age_min + period_min;
    let mut points = vec![start_age_min];
    points.extend(curve.knot_ages().into_iter().filter(|a| *a > start_age_min && *a < end));
    points.push(end);
    let half = T::of(0.5);
    let mut area = T::zero();
    for w in points.windows(2) {
        area = area + (w[1] - w[0]) * (evaluate_decay(curve, w[0])? + evaluate_decay(curve, w[1])?) * half;
    }
    Ok(area / period_min)
}

/// Average interval once `extra_generations` evenly counted extra models
/// land inside each base period.
pub fn expected_decay_period<T: Real>(base_period_min: T, extra_generations: u32) -> T {
    base_period_min / T::of(f64::from(extra_generations) + 1.0)
}

/// Mean gap when each base period of length `period` holds `k` extra
/// arrivals drawn uniformly inside it, across `periods` periods.
pub fn empirical_mean_gap<R: Rng + ?Sized>(rng: &mut R, period: f64, k: u32, periods: u32) -> f64 {
    let mut times = Vec::with_capacity((periods as usize) * (k as usize + 1) + 1);
    for p in 0..periods {
        let base = f64::from(p) * period;
        times.push(base);
        times.extend((0..k).map(|_| base + rng.random::<f64>() * period));
    }
    times.push(f64::from(periods) * period);
    times.sort_by(f64::total_cmp);
    let gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.iter().sum::<f64>() / gaps.len() as f64
}

/// Reference count of extra generations per 134.8-minute period, reported next to the computed one.
pub const REPORTED_EXTRA_GENERATIONS: u32 = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Indistinguishability {
    /// No gain from generating models faster than new data arrives.
    pub min_useful_period_min: f64,
    /// MAE below this cannot be told apart from measurement error.
    pub error_floor_mps: f64,
    pub base_period_min: f64,
    /// `base_period / sensor_interval`.
    pub ratio: f64,
    /// Generations that fit per base period at the sensor rate, minus the base one.
    pub computed_extra_generations: u32,
    pub reported_extra_generations: u32,
}

pub fn indistinguishability(sensor_interval_min: f64, error_band: (f64, f64), base_period_min: f64) -> Indistinguishability {
    let ratio = base_period_min / sensor_interval_min;
    Indistinguishability {
        min_useful_period_min: sensor_interval_min,
        error_floor_mps: error_band.0,
        base_period_min,
        ratio,
        computed_extra_generations: (ratio.floor() as u32).saturating_sub(1),
        reported_extra_generations: REPORTED_EXTRA_GENERATIONS,
    }
}

/// Synthetic curves with the qualitative shape of field measurements:
/// monotone growth, FNO and PCR crossing at 360 minutes.
pub fn default_decay_curves<T: Real>() -> BTreeMap<ModelType, DecayCurve<T>> {
    BTreeMap::from([
        (ModelType::Pinn, DecayCurve::piecewise(&[(0.0, 0.60), (60.0, 0.66), (180.0, 0.78), (360.0, 0.95), (720.0, 1.20), (1440.0, 1.50)])),
        (ModelType::Fno, DecayCurve::piecewise(&[(0.0, 0.50), (60.0, 0.56), (180.0, 0.70), (360.0, 0.90), (720.0, 1.25), (1440.0, 1.70)])),
        (ModelType::Pcr, DecayCurve::piecewise(&[(0.0, 0.70), (60.0, 0.74), (180.0, 0.82), (360.0, 0.90), (720.0, 1.05), (1440.0, 1.25)])),
    ])
}
