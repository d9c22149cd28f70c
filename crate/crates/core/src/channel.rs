//! Synthetic propagation and site-survey generation.
//!
//! RSS follows the log-distance law with Gaussian shadowing whose spread
//! depends on distance (chaotic below `near_field_m`) and on the number of
//! co-channel interferers. Surveys reproduce the two road layouts: a straight
//! test line sampled every few meters, with three roadside units placed
//! along a parallel line.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::LocalPoint;

/// Lowest and highest 2.4 GHz Wi-Fi channel numbers accepted.
pub const MIN_CHANNEL: u8 = 1;
pub const MAX_CHANNEL: u8 = 13;

/// Channels this far apart (or more) do not overlap.
pub const NON_OVERLAP_SEPARATION: u8 = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("distance {distance_m} m is below the reference distance {reference_m} m")]
    BelowReferenceDistance { distance_m: f64, reference_m: f64 },
    #[error("channel {0} outside 1..=13")]
    ChannelOutOfRange(u8),
    #[error("invalid channel model: {0}")]
    InvalidModel(String),
    #[error("invalid survey layout: {0}")]
    InvalidLayout(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rsu {
    pub id: String,
    pub position: LocalPoint,
    pub channel: u8,
    /// Overrides the model's reference RSS for this unit's transmitter.
    #[serde(default)]
    pub tx_ref_rss_dbm: Option<f64>,
    #[serde(default = "default_beacon_interval")]
    pub beacon_interval_ms: u32,
}

fn default_beacon_interval() -> u32 {
    100
}

impl Rsu {
    pub fn new(id: impl Into<String>, position: LocalPoint, channel: u8) -> Self {
        Self {
            id: id.into(),
            position,
            channel,
            tx_ref_rss_dbm: None,
            beacon_interval_ms: default_beacon_interval(),
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        check_channel(self.channel)?;
        if self.beacon_interval_ms == 0 {
            return Err(ChannelError::InvalidLayout(format!("RSU {} has a zero beacon interval", self.id)));
        }
        if !self.position.is_finite() {
            return Err(ChannelError::InvalidLayout(format!("RSU {} has a non-finite position", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelModel {
    pub ref_distance_m: f64,
    pub ref_rss_dbm: f64,
    pub path_loss_exponent: f64,
    pub far_sigma_db: f64,
    pub near_sigma_db: f64,
    pub near_field_m: f64,
    pub interference_sigma_db: f64,
    pub rss_floor_dbm: f64,
    /// Beyond the near field the shadowing spread is
    /// `far_sigma_db · (near_field_m / d)^far_decay_exponent`; 0 keeps it
    /// constant.
    pub far_decay_exponent: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            ref_distance_m: 1.0,
            ref_rss_dbm: -40.0,
            path_loss_exponent: 2.7,
            far_sigma_db: 2.0,
            near_sigma_db: 8.0,
            near_field_m: 60.0,
            interference_sigma_db: 6.0,
            rss_floor_dbm: -110.0,
            far_decay_exponent: 0.0,
        }
    }
}

impl ChannelModel {
    /// Spread calibrated against the published curve-fit residuals: the
    /// 21 samples beyond 100 m carry SSE 85 m² while the 8 samples between 60
    /// and 100 m add another ~340 m², so the shadowing spread keeps falling
    /// well past the near field (≈0.9 dB at 80 m, ≈0.15 dB at 150 m).
    ///
    /// The near-field spread is 3 dB: a network fed three clean channels then
    /// lands near the published 7.6 m worst case, where 8 dB gives 40–50 m.
    pub fn field_calibrated() -> Self {
        Self { far_decay_exponent: 2.8, near_sigma_db: 3.0, ..Self::default() }
    }

    /// The same propagation law with every noise term switched off.
    pub fn noiseless(&self) -> Self {
        Self { far_sigma_db: 0.0, near_sigma_db: 0.0, interference_sigma_db: 0.0, ..*self }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |msg: &str| Err(ChannelError::InvalidModel(msg.to_string()));
        if !(self.ref_distance_m.is_finite() && self.ref_distance_m > 0.0) {
            return bad("ref_distance_m must be > 0");
        }
        if !(self.path_loss_exponent.is_finite() && self.path_loss_exponent > 0.0) {
            return bad("path_loss_exponent must be > 0");
        }
        for (name, sigma) in [
            ("far_sigma_db", self.far_sigma_db),
            ("near_sigma_db", self.near_sigma_db),
            ("interference_sigma_db", self.interference_sigma_db),
        ] {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return Err(ChannelError::InvalidModel(format!("{name} must be >= 0")));
            }
        }
        if !(self.near_field_m.is_finite() && self.near_field_m >= 0.0) {
            return bad("near_field_m must be >= 0");
        }
        if !(self.far_decay_exponent.is_finite() && self.far_decay_exponent >= 0.0) {
            return bad("far_decay_exponent must be >= 0");
        }
        if !self.ref_rss_dbm.is_finite() || !self.rss_floor_dbm.is_finite() {
            return bad("reference RSS and floor must be finite");
        }
        Ok(())
    }

    fn with_reference(&self, ref_rss_dbm: Option<f64>) -> Self {
        Self { ref_rss_dbm: ref_rss_dbm.unwrap_or(self.ref_rss_dbm), ..*self }
    }

    /// Shadowing standard deviation at `distance_m` with `n_interferers`
    /// co-channel transmitters.
    pub fn noise_sigma_db(&self, distance_m: f64, n_interferers: usize) -> f64 {
        let base = if distance_m < self.near_field_m {
            self.near_sigma_db
        } else if self.far_decay_exponent > 0.0 {
            self.far_sigma_db * (self.near_field_m / distance_m).powf(self.far_decay_exponent)
        } else {
            self.far_sigma_db
        };
        (base * base + n_interferers as f64 * self.interference_sigma_db.powi(2)).sqrt()
    }
}

pub fn check_channel(channel: u8) -> Result<(), ChannelError> {
    if (MIN_CHANNEL..=MAX_CHANNEL).contains(&channel) {
        Ok(())
    } else {
        Err(ChannelError::ChannelOutOfRange(channel))
    }
}

/// Mean received power at `distance_m`, clamped at the receiver floor.
pub fn expected_rss(model: &ChannelModel, distance_m: f64) -> Result<f64, ChannelError> {
    if !(distance_m >= model.ref_distance_m) {
        return Err(ChannelError::BelowReferenceDistance { distance_m, reference_m: model.ref_distance_m });
    }
    let rss = model.ref_rss_dbm - 10.0 * model.path_loss_exponent * (distance_m / model.ref_distance_m).log10();
    Ok(rss.max(model.rss_floor_dbm))
}

/// Whether two 2.4 GHz channels interfere. 1/6/11 count as non-overlapping.
pub fn channels_overlap(a: u8, b: u8) -> Result<bool, ChannelError> {
    check_channel(a)?;
    check_channel(b)?;
    Ok(a.abs_diff(b) < NON_OVERLAP_SEPARATION)
}

/// One noisy RSS draw. Deterministic for a given generator state.
pub fn sample_rss<R: Rng + ?Sized>(
    model: &ChannelModel,
    distance_m: f64,
    n_cochannel_interferers: usize,
    rng: &mut R,
) -> Result<f64, ChannelError> {
    let mean = expected_rss(model, distance_m)?;
    let sigma = model.noise_sigma_db(distance_m, n_cochannel_interferers);
    let z: f64 = rng.sample(StandardNormal);
    Ok((mean + sigma * z).max(model.rss_floor_dbm))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveyLayout {
    pub rsus: Vec<Rsu>,
    #[serde(default = "default_start")]
    pub start_m: f64,
    #[serde(default = "default_end")]
    pub end_m: f64,
    #[serde(default = "default_step")]
    pub step_m: f64,
    /// Lateral offset of the test line from the RSU line.
    #[serde(default = "default_lane")]
    pub lane_y_m: f64,
    /// Vehicle antenna height.
    #[serde(default = "default_antenna")]
    pub antenna_z_m: f64,
}

fn default_start() -> f64 {
    0.0
}
fn default_end() -> f64 {
    200.0
}
fn default_step() -> f64 {
    5.0
}
fn default_lane() -> f64 {
    7.0
}
fn default_antenna() -> f64 {
    1.10
}

impl Default for SurveyLayout {
    fn default() -> Self {
        Self::with_channels([1, 7, 13])
    }
}

impl SurveyLayout {
    /// Three RSUs at 0, 100 and 200 m on the given channels, 110 cm high, with
    /// the test line 7 m away, sampled every 5 m over 0–200 m.
    pub fn with_channels(channels: [u8; 3]) -> Self {
        let rsus = [0.0, 100.0, 200.0]
            .iter()
            .zip(channels)
            .map(|(&x, ch)| Rsu::new(format!("ap{}", x as u32), LocalPoint::new(x, 0.0, default_antenna()), ch))
            .collect();
        Self {
            rsus,
            start_m: default_start(),
            end_m: default_end(),
            step_m: default_step(),
            lane_y_m: default_lane(),
            antenna_z_m: default_antenna(),
        }
    }

    /// All units on channel 6.
    pub fn co_channel() -> Self {
        Self::with_channels([6, 6, 6])
    }

    /// Non-overlapping channels 1, 7 and 13.
    pub fn clean_channel() -> Self {
        Self::with_channels([1, 7, 13])
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.step_m.is_finite() && self.step_m > 0.0) {
            return Err(ChannelError::InvalidLayout("step_m must be > 0".into()));
        }
        if !(self.start_m.is_finite() && self.end_m.is_finite() && self.end_m >= self.start_m) {
            return Err(ChannelError::InvalidLayout("end_m must be >= start_m".into()));
        }
        if !self.lane_y_m.is_finite() || !self.antenna_z_m.is_finite() {
            return Err(ChannelError::InvalidLayout("lane and antenna offsets must be finite".into()));
        }
        if self.rsus.is_empty() {
            return Err(ChannelError::InvalidLayout("no RSUs".into()));
        }
        let mut ids: Vec<&str> = self.rsus.iter().map(|r| r.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(ChannelError::InvalidLayout("duplicate RSU id".into()));
        }
        self.rsus.iter().try_for_each(Rsu::validate)
    }

    /// Longitudinal survey positions `start, start + step, …, ≤ end`.
    pub fn positions(&self) -> Vec<f64> {
        let count = ((self.end_m - self.start_m) / self.step_m + 1e-9).floor() as usize + 1;
        (0..count).map(|i| self.start_m + i as f64 * self.step_m).collect()
    }

    /// Vehicle antenna location at longitudinal position `x_m`.
    pub fn vehicle_at(&self, x_m: f64) -> LocalPoint {
        LocalPoint::new(x_m, self.lane_y_m, self.antenna_z_m)
    }

    pub fn rsu(&self, id: &str) -> Option<&Rsu> {
        self.rsus.iter().find(|r| r.id == id)
    }

    /// Number of other units whose channel overlaps this one's.
    pub fn interferers(&self, rsu: &Rsu) -> Result<usize, ChannelError> {
        let mut n = 0;
        for other in &self.rsus {
            if other.id != rsu.id && channels_overlap(rsu.channel, other.channel)? {
                n += 1;
            }
        }
        Ok(n)
    }

    /// RSUs in id order, which is also the sample order within a position.
    pub fn rsus_by_id(&self) -> Vec<&Rsu> {
        let mut v: Vec<&Rsu> = self.rsus.iter().collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RssSample {
    pub x_m: f64,
    pub rsu_id: String,
    pub rss_dbm: f64,
    pub true_distance_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurveyDataset {
    pub layout: SurveyLayout,
    /// Ordered by position, then RSU id.
    pub samples: Vec<RssSample>,
    pub seed: u64,
}

impl SurveyDataset {
    /// Samples of one RSU, in position order.
    pub fn for_rsu<'a>(&'a self, rsu_id: &'a str) -> impl Iterator<Item = &'a RssSample> + 'a {
        self.samples.iter().filter(move |s| s.rsu_id == rsu_id)
    }
}

/// Draws one RSS sample per (position, RSU) on the layout's grid.
pub fn generate_survey(layout: &SurveyLayout, model: &ChannelModel, seed: u64) -> Result<SurveyDataset, ChannelError> {
    layout.validate()?;
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rsus = layout.rsus_by_id();
    let interferers: Vec<usize> = rsus.iter().map(|r| layout.interferers(r)).collect::<Result<_, _>>()?;
    let positions = layout.positions();
    let mut samples = Vec::with_capacity(positions.len() * rsus.len());
    for x in positions {
        let vehicle = layout.vehicle_at(x);
        for (rsu, &n_int) in rsus.iter().zip(&interferers) {
            let distance = vehicle.distance_to(&rsu.position);
            let rsu_model = model.with_reference(rsu.tx_ref_rss_dbm);
            let rss = sample_rss(&rsu_model, distance, n_int, &mut rng)?;
            samples.push(RssSample { x_m: x, rsu_id: rsu.id.clone(), rss_dbm: rss, true_distance_m: Some(distance) });
        }
    }
    Ok(SurveyDataset { layout: layout.clone(), samples, seed })
}

/// Draws the beacons heard at one vehicle position: RSUs whose sampled RSS
/// sits at the receiver floor are not heard.
pub fn sample_beacons<R: Rng + ?Sized>(
    layout: &SurveyLayout,
    model: &ChannelModel,
    vehicle: &LocalPoint,
    rng: &mut R,
) -> Result<Vec<(Rsu, f64)>, ChannelError> {
    let mut heard = Vec::new();
    for rsu in layout.rsus_by_id() {
        let n_int = layout.interferers(rsu)?;
        let distance = vehicle.distance_to(&rsu.position);
        let rss = sample_rss(&model.with_reference(rsu.tx_ref_rss_dbm), distance, n_int, rng)?;
        if rss > model.rss_floor_dbm {
            heard.push((rsu.clone(), rss));
        }
    }
    Ok(heard)
}
