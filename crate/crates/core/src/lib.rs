//! RSS-based vehicle positioning for vehicular ad-hoc networks.
//!
//! Roadside units (RSUs) broadcast beacons carrying their absolute position.
//! A vehicle without usable differential GPS converts the received signal
//! strength of those beacons into an estimate of its own position, either by
//! mapping RSS to range with a fitted quartic and multilaterating, or by a
//! small feedforward network trained on a site survey.
//!
//! Modules:
//! - [`geometry`]: local/global frames, multilateration, fix averaging.
//! - [`channel`]: log-distance propagation with near-field and co-channel
//!   noise, and the site-survey generator.
//! - [`metrics`]: error and goodness-of-fit statistics.
//! - [`fit`]: the degree-4 RSS → distance estimator.
//! - [`nn`]: the feedforward network estimator and its model-selection sweep.
//! - [`positioning`]: RSU selection and the DGPS-or-RSS positioning engine.

pub mod channel;
pub mod fit;
pub mod geometry;
pub mod metrics;
pub mod nn;
pub mod positioning;
