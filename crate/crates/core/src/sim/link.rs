//! Model-download link: per-model throughput with optional contention and
//! slicing. Sizes and throughputs share the binary megabyte (2^20 bytes).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::lifecycle::ModelType;
use crate::num::Real;

pub const MIB: f64 = 1_048_576.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkProfile<T> {
    /// MB/s with the distribution flow alone on the link.
    pub isolated: T,
    /// Fractional throughput loss when the sensor flow competes, unsliced.
    pub degradation: T,
    /// MB/s alone on the link with slicing configured.
    pub sliced_isolated: T,
    /// Fractional loss under contention with slicing configured.
    pub sliced_degradation: T,
}

impl<T: Real> LinkProfile<T> {
    /// Builds a profile from four measured throughputs. A throughput that
    /// rises under contention is treated as noise: its degradation is 0.
    pub fn from_throughputs(isolated: f64, contention: f64, sliced_isolated: f64, sliced_contention: f64) -> Self {
        let deg = |iso: f64, cont: f64| T::of((1.0 - cont / iso).max(0.0));
        LinkProfile {
            isolated: T::of(isolated),
            degradation: deg(isolated, contention),
            sliced_isolated: T::of(sliced_isolated),
            sliced_degradation: deg(sliced_isolated, sliced_contention),
        }
    }

    pub fn validate(&self, model: ModelType) -> Result<(), SimError> {
        let ok_thr = |v: T| v.is_finite() && v > T::zero();
        let ok_deg = |v: T| v >= T::zero() && v < T::one();
        if !ok_thr(self.isolated) || !ok_thr(self.sliced_isolated) || !ok_deg(self.degradation) || !ok_deg(self.sliced_degradation) {
            return Err(SimError::InvalidConfig(format!("link profile for {model}: throughput must be > 0 and degradation in [0, 1)")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkModel<T> {
    pub slicing: bool,
    pub contention_active: bool,
    pub models: BTreeMap<ModelType, LinkProfile<T>>,
}

impl<T: Real> Default for LinkModel<T> {
    fn default() -> Self {
        let models = BTreeMap::from([
            (ModelType::Pcr, LinkProfile::from_throughputs(2.68, 2.15, 2.67, 2.50)),
            (ModelType::Pinn, LinkProfile::from_throughputs(1.37, 1.06, 1.28, 1.31)),
            (ModelType::Fno, LinkProfile::from_throughputs(4.92, 3.88, 4.72, 4.62)),
        ]);
        LinkModel { slicing: false, contention_active: false, models }
    }
}

impl<T: Real> LinkModel<T> {
    pub fn validate(&self) -> Result<(), SimError> {
        self.models.iter().try_for_each(|(m, p)| p.validate(*m))
    }

    /// MB/s actually seen by a download of `model`.
    pub fn effective_throughput(&self, model: ModelType) -> Result<T, SimError> {
        let p = self.models.get(&model).ok_or(SimError::UnconfiguredModel(model))?;
        let (base, deg) = if self.slicing { (p.sliced_isolated, p.sliced_degradation) } else { (p.isolated, p.degradation) };
        let deg = if self.contention_active { deg } else { T::zero() };
        Ok(base * (T::one() - deg))
    }

    pub fn transfer_seconds(&self, model: ModelType, size_bytes: u64) -> Result<T, SimError> {
        if size_bytes == 0 {
            return Err(SimError::InvalidConfig(format!("{model}: transfer of 0 bytes")));
        }
        let thr = self.effective_throughput(model)?;
        Ok(T::of(size_bytes as f64 / MIB) / thr)
    }
}

/// Download duration in milliseconds, rounded to the nearest.
pub fn transfer_time<T: Real>(link: &LinkModel<T>, model: ModelType, size_bytes: u64) -> Result<i64, SimError> {
    let secs = link.transfer_seconds(model, size_bytes)?;
    Ok((secs.as_f64() * 1000.0).round() as i64)
}

/// Default artifact sizes.
pub fn default_model_sizes() -> BTreeMap<ModelType, u64> {
    BTreeMap::from([
        (ModelType::Pinn, 290 * 1024),
        (ModelType::Fno, (9.1 * MIB).round() as u64),
        (ModelType::Pcr, (1.1 * MIB).round() as u64),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fno() -> u64 {
        default_model_sizes()[&ModelType::Fno]
    }

    #[test]
    fn fno_reference_transfers() {
        let mut link = LinkModel::<f64>::default();
        assert!((link.transfer_seconds(ModelType::Fno, fno()).unwrap() - 1.85).abs() < 0.01);
        link.contention_active = true;
        assert!((link.transfer_seconds(ModelType::Fno, fno()).unwrap() - 2.35).abs() < 0.01);
        link.slicing = true;
        assert!((link.transfer_seconds(ModelType::Fno, fno()).unwrap() - 1.97).abs() < 0.01);
        assert_eq!(transfer_time(&link, ModelType::Fno, fno()).unwrap(), 1970);
    }

    #[test]
    fn degradation_reproduces_contention_throughput() {
        let p = LinkProfile::<f64>::from_throughputs(4.92, 3.88, 4.72, 4.62);
        assert!((p.isolated * (1.0 - p.degradation) - 3.88).abs() < 1e-12);
        assert!((p.degradation - 0.2114).abs() < 1e-4);
    }

    #[test]
    fn throughput_gain_under_contention_clamps_to_zero() {
        let link = LinkModel::<f64> { slicing: true, contention_active: true, ..Default::default() };
        assert_eq!(link.models[&ModelType::Pinn].sliced_degradation, 0.0);
        assert_eq!(link.effective_throughput(ModelType::Pinn).unwrap(), 1.28);
    }

    #[test]
    fn zero_degradation_equals_isolated_exactly() {
        let mut link = LinkModel::<f64>::default();
        let iso = link.transfer_seconds(ModelType::Fno, fno()).unwrap();
        link.contention_active = true;
        link.models.get_mut(&ModelType::Fno).unwrap().degradation = 0.0;
        assert_eq!(link.transfer_seconds(ModelType::Fno, fno()).unwrap(), iso);
    }

    #[test]
    fn f32_agrees_with_f64() {
        let a = LinkModel::<f32>::default().transfer_seconds(ModelType::Fno, fno()).unwrap();
        assert!((a - 1.8496).abs() < 1e-3);
    }

    #[test]
    fn errors() {
        let mut link = LinkModel::<f64>::default();
        assert!(link.transfer_seconds(ModelType::Fno, 0).is_err());
        link.models.remove(&ModelType::Pcr);
        assert_eq!(link.transfer_seconds(ModelType::Pcr, 10), Err(SimError::UnconfiguredModel(ModelType::Pcr)));
        link.models.get_mut(&ModelType::Fno).unwrap().degradation = 1.0;
        assert!(link.validate().is_err());
    }

    proptest::proptest! {
        #[test]
        fn linear_in_size_decreasing_in_throughput(size in 1u64..50_000_000, iso in 0.1f64..20.0, bump in 0.01f64..5.0) {
            let mut link = LinkModel::<f64>::default();
            link.models.insert(ModelType::Fno, LinkProfile::from_throughputs(iso, iso, iso, iso));
            let t1 = link.transfer_seconds(ModelType::Fno, size).unwrap();
            let t2 = link.transfer_seconds(ModelType::Fno, size * 2).unwrap();
            proptest::prop_assert!((t2 - 2.0 * t1).abs() <= 1e-9 * t2);
            link.models.insert(ModelType::Fno, LinkProfile::from_throughputs(iso + bump, iso + bump, iso, iso));
            proptest::prop_assert!(link.transfer_seconds(ModelType::Fno, size).unwrap() < t1);
        }
    }
}
