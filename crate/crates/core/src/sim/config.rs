//! Scenario configuration, read from TOML. Every field has a default.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{default_decay_curves, default_model_sizes, DecayCurve, LinkModel, SimError};
use crate::lifecycle::ModelType;
use crate::pipeline::{BatchTier, StageDurations};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub horizon_h: f64,
    pub sensor_interval_min: f64,
    pub seed: u64,
    /// Training history each instance uses.
    pub history_window_h: f64,
    /// How often the edge checks the repository.
    pub poll_interval_s: f64,
    pub dedicated_enabled: bool,
    pub dedicated: StageDurations,
    pub batch: Vec<BatchTier>,
    pub network: LinkModel<f64>,
    pub model_sizes: BTreeMap<ModelType, u64>,
    pub decay_curves: BTreeMap<ModelType, DecayCurve<f64>>,
    /// Sensor measurement error, m/s.
    pub measurement_error_band: (f64, f64),
    /// Base period for the decay report; defaults to the dedicated tier's
    /// expected instance duration.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_period_min: Option<f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            horizon_h: 168.0,
            sensor_interval_min: 5.0,
            seed: 0,
            history_window_h: 6.0,
            poll_interval_s: 60.0,
            dedicated_enabled: true,
            dedicated: StageDurations::calibrated(),
            batch: Vec::new(),
            network: LinkModel::default(),
            model_sizes: default_model_sizes(),
            decay_curves: default_decay_curves(),
            measurement_error_band: (0.44, 0.87),
            base_period_min: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, SimError> {
        let mut cfg: ScenarioConfig = toml::from_str(s).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        cfg.fill_per_model_defaults();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. I/O failures come back as
    /// `std::io::Error`, everything else as [`SimError`].
    pub fn load(path: &Path) -> Result<Result<Self, SimError>, std::io::Error> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_toml_str(&text))
    }

    /// Per-model tables given in a file override single entries; models left
    /// out keep their defaults.
    pub fn fill_per_model_defaults(&mut self) {
        let d = ScenarioConfig::default();
        for (m, v) in d.model_sizes {
            self.model_sizes.entry(m).or_insert(v);
        }
        for (m, v) in d.network.models {
            self.network.models.entry(m).or_insert(v);
        }
        for (m, v) in d.decay_curves {
            self.decay_curves.entry(m).or_insert(v);
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !(self.horizon_h >= 0.0 && self.horizon_h.is_finite()) {
            return bad("horizon_h must be >= 0");
        }
        if !(self.sensor_interval_min > 0.0 && self.sensor_interval_min.is_finite()) {
            return bad("sensor_interval_min must be > 0");
        }
        if !(self.poll_interval_s > 0.0 && self.poll_interval_s.is_finite()) {
            return bad("poll_interval_s must be > 0");
        }
        if !(self.history_window_h > 0.0 && self.history_window_h.is_finite()) {
            return bad("history_window_h must be > 0");
        }
        let (lo, hi) = self.measurement_error_band;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return bad("measurement_error_band must satisfy 0 <= min <= max");
        }
        if self.base_period_min.is_some_and(|p| !(p > 0.0 && p.is_finite())) {
            return bad("base_period_min must be > 0");
        }
        self.dedicated.validate()?;
        for b in &self.batch {
            b.validate()?;
        }
        self.network.validate()?;
        for m in ModelType::ALL {
            match self.model_sizes.get(&m) {
                Some(s) if *s > 0 => {}
                _ => return Err(SimError::InvalidConfig(format!("model_sizes.{m} must be > 0"))),
            }
            if !self.network.models.contains_key(&m) {
                return Err(SimError::UnconfiguredModel(m));
            }
        }
        for c in self.decay_curves.values() {
            c.validate()?;
        }
        Ok(())
    }
}
