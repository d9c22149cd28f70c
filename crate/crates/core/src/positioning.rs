//! Hybrid positioning engine.
//!
//! A fix comes from differential GPS whenever the receiver has good
//! satellite signals *and* correction data. Otherwise the vehicle falls back
//! to the beacons it hears: it picks the weakest (farthest) RSUs on mutually
//! non-overlapping channels, converts their RSS to ranges, multilaterates
//! every minimal subset and averages the results. A trained network can
//! replace the range/multilateration path on a calibrated road segment.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{channels_overlap, ChannelError, Rsu};
use crate::fit::{evaluate_poly4, FitInput, Polynomial4};
use crate::geometry::{
    fuse_fixes, multilaterate, to_global, to_local, AnchorRange, Dimension, GeometryError, GlobalPosition,
    LocalPoint,
};
use crate::metrics::FitReport;
use crate::nn::{forward, MlpModel, NnError};

/// 1σ error attributed to a differential GPS fix.
pub const DGPS_QUALITY_M: f64 = 1.0;

/// Multiplier applied to the calibration RMSE when a fix relied on clamped
/// RSS or on the same-channel fallback.
pub const DEGRADED_QUALITY_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PositioningError {
    #[error("need at least {need} RSUs, heard {have}")]
    InsufficientAnchors { need: usize, have: usize },
    #[error("no GPS fix and no beacons heard")]
    NoCoverage,
    #[error("GPS status claims DGPS but carries no position")]
    InvalidGpsStatus,
    #[error("invalid selection policy: {0}")]
    InvalidPolicy(String),
    #[error("RSUs {a} and {b} are {distance_m:.1} m apart, below the {min_m} m minimum")]
    SpacingViolation { a: String, b: String, distance_m: f64, min_m: f64 },
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Network(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GpsStatus {
    pub satellites_ok: bool,
    pub dgps_corrections: bool,
    pub dgps_position: Option<GlobalPosition>,
}

impl GpsStatus {
    pub fn outage() -> Self {
        Self::default()
    }

    pub fn dgps(position: GlobalPosition) -> Self {
        Self { satellites_ok: true, dgps_corrections: true, dgps_position: Some(position) }
    }

    pub fn use_dgps(&self) -> bool {
        self.satellites_ok && self.dgps_corrections
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionPolicy {
    /// 2 for a 2D fix, 3 for 3D.
    pub min_rsu_count: usize,
    pub require_distinct_channels: bool,
    pub prefer_weakest_rss: bool,
    pub min_rsu_spacing_m: f64,
    /// RSUs estimated closer than this are dropped when enough farther ones
    /// remain.
    pub near_field_m: f64,
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        Self {
            min_rsu_count: 2,
            require_distinct_channels: true,
            prefer_weakest_rss: true,
            min_rsu_spacing_m: 100.0,
            near_field_m: 60.0,
        }
    }
}

impl SelectionPolicy {
    pub fn validate(&self) -> Result<(), PositioningError> {
        if !(2..=3).contains(&self.min_rsu_count) {
            return Err(PositioningError::InvalidPolicy(format!("min_rsu_count {} not in 2..=3", self.min_rsu_count)));
        }
        if !(self.min_rsu_spacing_m >= 0.0 && self.near_field_m >= 0.0) {
            return Err(PositioningError::InvalidPolicy("distances must be >= 0".into()));
        }
        Ok(())
    }

    pub fn dimension(&self) -> Dimension {
        if self.min_rsu_count >= 3 {
            Dimension::ThreeD
        } else {
            Dimension::TwoD
        }
    }
}

/// Checks that every pair of RSUs respects the minimum spacing.
pub fn validate_deployment(rsus: &[Rsu], policy: &SelectionPolicy) -> Result<(), PositioningError> {
    for (i, a) in rsus.iter().enumerate() {
        for b in &rsus[i + 1..] {
            let d = a.position.distance_to(&b.position);
            if d < policy.min_rsu_spacing_m {
                return Err(PositioningError::SpacingViolation {
                    a: a.id.clone(),
                    b: b.id.clone(),
                    distance_m: d,
                    min_m: policy.min_rsu_spacing_m,
                });
            }
        }
    }
    Ok(())
}

/// A received beacon: the RSU's advertised identity, channel and absolute
/// position, plus the measured RSS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Beacon {
    pub rsu_id: String,
    pub channel: u8,
    pub position: GlobalPosition,
    pub rss_dbm: f64,
}

impl Beacon {
    /// Builds the beacon an RSU at a local-frame position would broadcast.
    pub fn from_rsu(rsu: &Rsu, origin: &GlobalPosition, rss_dbm: f64) -> Result<Self, PositioningError> {
        Ok(Self { rsu_id: rsu.id.clone(), channel: rsu.channel, position: to_global(&rsu.position, origin)?, rss_dbm })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub beacons: Vec<Beacon>,
    /// Distinct-channel selection could not reach the requested count.
    pub channel_fallback: bool,
}

fn dedup_strongest(beacons: &[Beacon]) -> Vec<Beacon> {
    let mut best: BTreeMap<&str, &Beacon> = BTreeMap::new();
    for b in beacons {
        best.entry(&b.rsu_id)
            .and_modify(|cur| {
                if b.rss_dbm > cur.rss_dbm {
                    *cur = b;
                }
            })
            .or_insert(b);
    }
    best.into_values().cloned().collect()
}

fn ranked(beacons: &[Beacon], policy: &SelectionPolicy) -> Vec<Beacon> {
    let mut v = dedup_strongest(beacons);
    v.sort_by(|a, b| {
        let by_rss = a.rss_dbm.total_cmp(&b.rss_dbm);
        let by_rss = if policy.prefer_weakest_rss { by_rss } else { by_rss.reverse() };
        by_rss.then_with(|| a.rsu_id.cmp(&b.rsu_id))
    });
    v
}

/// Greedy pass over ranked beacons keeping those whose channel does not
/// overlap any already kept.
fn distinct_channels(ranked: &[Beacon], cap: usize) -> Result<Vec<Beacon>, PositioningError> {
    let mut kept: Vec<Beacon> = Vec::new();
    for b in ranked {
        if kept.len() == cap {
            break;
        }
        let mut clash = false;
        for k in &kept {
            if channels_overlap(k.channel, b.channel)? {
                clash = true;
                break;
            }
        }
        if !clash {
            kept.push(b.clone());
        }
    }
    Ok(kept)
}

/// Picks `needed` RSUs: weakest RSS first (the farthest units), each on a
/// channel that does not overlap the others. Falls back to plain RSS order
/// when the channel rule cannot supply enough units.
pub fn select_rsus(beacons: &[Beacon], policy: &SelectionPolicy, needed: usize) -> Result<Selection, PositioningError> {
    let ranked = ranked(beacons, policy);
    if ranked.len() < needed {
        return Err(PositioningError::InsufficientAnchors { need: needed, have: ranked.len() });
    }
    if policy.require_distinct_channels {
        let kept = distinct_channels(&ranked, needed)?;
        if kept.len() == needed {
            return Ok(Selection { beacons: kept, channel_fallback: false });
        }
        return Ok(Selection { beacons: ranked[..needed].to_vec(), channel_fallback: true });
    }
    Ok(Selection { beacons: ranked[..needed].to_vec(), channel_fallback: false })
}

/// A fitted quartic together with the RSS range it was fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibratedPolynomial {
    pub poly: Polynomial4,
    pub rss_min_dbm: f64,
    pub rss_max_dbm: f64,
    /// Calibration RMSE, meters.
    pub rmse_m: f64,
}

impl CalibratedPolynomial {
    pub fn new(poly: Polynomial4, input: &FitInput, report: &FitReport) -> Result<Self, PositioningError> {
        let (lo, hi) = input
            .rss_domain()
            .ok_or_else(|| PositioningError::InvalidCalibration("empty calibration input".into()))?;
        if !poly.is_finite() {
            return Err(PositioningError::InvalidCalibration("non-finite coefficients".into()));
        }
        Ok(Self { poly, rss_min_dbm: lo, rss_max_dbm: hi, rmse_m: report.rmse })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeEstimate {
    pub range_m: f64,
    /// RSS was outside the calibrated domain, or the quartic went negative.
    pub clamped: bool,
    /// RSS was stronger than anything seen in calibration: the unit is
    /// closer than the calibrated distances.
    pub too_close: bool,
}

/// Evaluates the quartic with RSS clamped into its calibrated domain; the
/// range never goes below zero.
pub fn rss_to_range(cal: &CalibratedPolynomial, rss_dbm: f64) -> RangeEstimate {
    let r = rss_dbm.clamp(cal.rss_min_dbm, cal.rss_max_dbm);
    let raw = evaluate_poly4(&cal.poly, r);
    RangeEstimate { range_m: raw.max(0.0), clamped: r != rss_dbm || raw < 0.0, too_close: rss_dbm > cal.rss_max_dbm }
}

/// RSS → range calibrations, per RSU with an optional shared fallback.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PolynomialRanging {
    pub per_rsu: BTreeMap<String, CalibratedPolynomial>,
    pub shared: Option<CalibratedPolynomial>,
}

impl PolynomialRanging {
    pub fn shared(cal: CalibratedPolynomial) -> Self {
        Self { per_rsu: BTreeMap::new(), shared: Some(cal) }
    }

    pub fn for_rsu(&self, id: &str) -> Option<&CalibratedPolynomial> {
        self.per_rsu.get(id).or(self.shared.as_ref())
    }
}

/// Straight road segment along local `x` on which a network was trained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadSegment {
    pub start_m: f64,
    pub end_m: f64,
    pub lane_y_m: f64,
    pub z_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEstimator {
    pub model: MlpModel,
    /// RSU ids in network input order.
    pub rsu_order: Vec<String>,
    pub rmse_m: f64,
    pub road: RoadSegment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RangeEstimator {
    Polynomial(PolynomialRanging),
    Network(NetworkEstimator),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FixSource {
    Dgps,
    Rss,
}

impl FixSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            FixSource::Dgps => "DGPS",
            FixSource::Rss => "RSS",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionFix {
    pub global: GlobalPosition,
    pub local: LocalPoint,
    pub source: FixSource,
    pub used_rsu_ids: Vec<String>,
    /// Estimated 1σ error, meters.
    pub quality_m: f64,
    /// Clamped RSS or the same-channel fallback contributed to the fix.
    pub degraded: bool,
}

/// Index subsets of size `k` from `0..n`, in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Produces one position fix from the GPS status and the beacons heard.
pub fn locate(
    gps: &GpsStatus,
    beacons: &[Beacon],
    estimator: &RangeEstimator,
    policy: &SelectionPolicy,
    origin: &GlobalPosition,
    hint: Option<LocalPoint>,
) -> Result<PositionFix, PositioningError> {
    if gps.use_dgps() {
        let global = gps.dgps_position.ok_or(PositioningError::InvalidGpsStatus)?;
        return Ok(PositionFix {
            global,
            local: to_local(&global, origin)?,
            source: FixSource::Dgps,
            used_rsu_ids: Vec::new(),
            quality_m: DGPS_QUALITY_M,
            degraded: false,
        });
    }
    if beacons.is_empty() {
        return Err(PositioningError::NoCoverage);
    }
    policy.validate()?;
    match estimator {
        RangeEstimator::Polynomial(ranging) => locate_by_ranges(beacons, ranging, policy, origin, hint),
        RangeEstimator::Network(net) => locate_by_network(beacons, net, origin),
    }
}

struct Ranged {
    beacon: Beacon,
    cal: CalibratedPolynomial,
    estimate: RangeEstimate,
}

fn locate_by_ranges(
    beacons: &[Beacon],
    ranging: &PolynomialRanging,
    policy: &SelectionPolicy,
    origin: &GlobalPosition,
    hint: Option<LocalPoint>,
) -> Result<PositionFix, PositioningError> {
    let needed = policy.min_rsu_count;
    let calibrated: Vec<Beacon> = beacons.iter().filter(|b| ranging.for_rsu(&b.rsu_id).is_some()).cloned().collect();
    let ranked_all = ranked(&calibrated, policy);
    if ranked_all.len() < needed {
        return Err(PositioningError::InsufficientAnchors { need: needed, have: ranked_all.len() });
    }
    let usable = if policy.require_distinct_channels {
        distinct_channels(&ranked_all, usize::MAX)?
    } else {
        ranked_all.clone()
    };
    let (candidates, channel_fallback) = if usable.len() >= needed {
        (usable, false)
    } else {
        let sel = select_rsus(&calibrated, policy, needed)?;
        (sel.beacons, sel.channel_fallback)
    };

    let ranged: Vec<Ranged> = candidates
        .into_iter()
        .map(|beacon| {
            let cal = *ranging.for_rsu(&beacon.rsu_id).expect("filtered to calibrated RSUs");
            let estimate = rss_to_range(&cal, beacon.rss_dbm);
            Ranged { beacon, cal, estimate }
        })
        .collect();
    let is_far = |r: &&Ranged| !r.estimate.too_close && r.estimate.range_m >= policy.near_field_m;
    let far: Vec<&Ranged> = ranged.iter().filter(is_far).collect();
    let used: Vec<&Ranged> = if far.len() >= needed { far } else { ranged.iter().collect() };

    let anchors: Vec<AnchorRange> = used
        .iter()
        .map(|r| Ok(AnchorRange::new(to_local(&r.beacon.position, origin)?, r.estimate.range_m)))
        .collect::<Result<_, GeometryError>>()?;
    let fixes: Vec<LocalPoint> = combinations(anchors.len(), needed)
        .iter()
        .map(|subset| {
            let sub: Vec<AnchorRange> = subset.iter().map(|&i| anchors[i]).collect();
            multilaterate(&sub, policy.dimension(), hint)
        })
        .collect::<Result<_, _>>()?;
    let local = fuse_fixes(&fixes)?;

    let degraded = channel_fallback || used.iter().any(|r| r.estimate.clamped);
    let rmse = used.iter().map(|r| r.cal.rmse_m).fold(0.0, f64::max);
    Ok(PositionFix {
        global: to_global(&local, origin)?,
        local,
        source: FixSource::Rss,
        used_rsu_ids: used.iter().map(|r| r.beacon.rsu_id.clone()).collect(),
        quality_m: if degraded { DEGRADED_QUALITY_FACTOR * rmse } else { rmse },
        degraded,
    })
}

fn locate_by_network(
    beacons: &[Beacon],
    net: &NetworkEstimator,
    origin: &GlobalPosition,
) -> Result<PositionFix, PositioningError> {
    let heard = dedup_strongest(beacons);
    let inputs: Vec<f64> = net
        .rsu_order
        .iter()
        .filter_map(|id| heard.iter().find(|b| &b.rsu_id == id).map(|b| b.rss_dbm))
        .collect();
    if inputs.len() < net.rsu_order.len() {
        return Err(PositioningError::InsufficientAnchors { need: net.rsu_order.len(), have: inputs.len() });
    }
    let raw_x = forward(&net.model, &inputs)?;
    let x = raw_x.clamp(net.road.start_m, net.road.end_m);
    let degraded = x != raw_x;
    let local = LocalPoint::new(x, net.road.lane_y_m, net.road.z_m);
    Ok(PositionFix {
        global: to_global(&local, origin)?,
        local,
        source: FixSource::Rss,
        used_rsu_ids: net.rsu_order.clone(),
        quality_m: if degraded { DEGRADED_QUALITY_FACTOR * net.rmse_m } else { net.rmse_m },
        degraded,
    })
}
