//! Experiment configuration: one JSON document with `layout`, `channel`,
//! `scenario` and `estimator` sections. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use vanetloc::channel::{ChannelModel, SurveyLayout};
use vanetloc::geometry::GlobalPosition;
use vanetloc::nn::TrainConfig;
use vanetloc::positioning::SelectionPolicy;

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub layout: SurveyLayout,
    pub channel: ChannelModel,
    pub scenario: Scenario,
    pub estimator: EstimatorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub seed: u64,
    /// `[x_start, x_end]` stretches of road without satellite reception.
    pub gps_outages: Vec<[f64; 2]>,
    pub speed_mps: f64,
    /// Global position of the local frame origin.
    pub origin: GlobalPosition,
    pub policy: SelectionPolicy,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 1,
            gps_outages: Vec::new(),
            speed_mps: 10.0,
            origin: GlobalPosition { latitude_deg: 24.7136, longitude_deg: 46.6753, altitude_m: 612.0 },
            policy: SelectionPolicy::default(),
        }
    }
}

impl Scenario {
    pub fn in_outage(&self, x_m: f64) -> bool {
        self.gps_outages.iter().any(|[a, b]| *a <= x_m && x_m <= *b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EstimatorConfig {
    /// Quartic RSS → range fits. With `rsu` set, that unit's fit is shared by
    /// every RSU; otherwise each RSU gets its own.
    Poly {
        #[serde(default)]
        rsu: Option<String>,
        #[serde(default = "default_cutoff")]
        cutoff_m: f64,
    },
    /// One trained network mapping the RSS vector to road position.
    Nn {
        #[serde(default = "default_hidden")]
        hidden: usize,
        #[serde(default = "default_init_seed")]
        init_seed: u64,
        #[serde(default)]
        split_seed: u64,
        #[serde(default = "TrainConfig::converging")]
        train: TrainConfig,
    },
}

fn default_cutoff() -> f64 {
    60.0
}
fn default_hidden() -> usize {
    10
}
fn default_init_seed() -> u64 {
    1
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig::Poly { rsu: None, cutoff_m: default_cutoff() }
    }
}

impl EstimatorConfig {
    /// Training settings for sweeps: the network section's, else the
    /// converging preset.
    pub fn train_config(&self) -> TrainConfig {
        match self {
            EstimatorConfig::Nn { train, .. } => *train,
            EstimatorConfig::Poly { .. } => TrainConfig::converging(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let config: Self = serde_json::from_str(text).map_err(|e| HarnessError::Data(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Data(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Data(msg));
        self.layout.validate().map_err(|e| HarnessError::Data(format!("layout: {e}")))?;
        self.channel.validate().map_err(|e| HarnessError::Data(format!("channel: {e}")))?;
        self.scenario.policy.validate().map_err(|e| HarnessError::Data(format!("policy: {e}")))?;
        self.scenario.origin.validate().map_err(|e| HarnessError::Data(format!("origin: {e}")))?;
        if !(self.scenario.speed_mps.is_finite() && self.scenario.speed_mps > 0.0) {
            return bad("scenario.speed_mps must be > 0".into());
        }
        for [a, b] in &self.scenario.gps_outages {
            if !(a <= b && *a >= self.layout.start_m && *b <= self.layout.end_m) {
                return bad(format!(
                    "outage [{a}, {b}] must lie within [{}, {}]",
                    self.layout.start_m, self.layout.end_m
                ));
            }
        }
        match &self.estimator {
            EstimatorConfig::Poly { rsu, cutoff_m } => {
                if let Some(id) = rsu {
                    if self.layout.rsu(id).is_none() {
                        return bad(format!("estimator.rsu {id:?} is not in the layout"));
                    }
                }
                if !(cutoff_m.is_finite() && *cutoff_m >= 0.0) {
                    return bad("estimator.cutoff_m must be >= 0".into());
                }
            }
            EstimatorConfig::Nn { hidden, .. } => {
                if *hidden == 0 {
                    return bad("estimator.hidden must be >= 1".into());
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(ScenarioConfig::from_json("{}").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ScenarioConfig::from_json(r#"{"scenaro": {}}"#).is_err());
        assert!(ScenarioConfig::from_json(r#"{"channel": {"path_loss": 3}}"#).is_err());
        assert!(ScenarioConfig::from_json(r#"{"estimator": {"kind": "poly", "cutoff": 3}}"#).is_err());
    }

    #[test]
    fn outage_must_lie_on_the_road() {
        let err = ScenarioConfig::from_json(r#"{"scenario": {"gps_outages": [[150, 260]]}}"#).unwrap_err();
        assert!(matches!(err, HarnessError::Data(_)));
    }

    #[test]
    fn outage_membership_is_inclusive() {
        let s = Scenario { gps_outages: vec![[80.0, 160.0]], ..Scenario::default() };
        assert!(!s.in_outage(75.0));
        assert!(s.in_outage(80.0) && s.in_outage(160.0));
        assert!(!s.in_outage(165.0));
    }
}
