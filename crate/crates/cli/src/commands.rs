//! The four harness commands. Each returns its result as data and writes
//! progress lines to the given sink; `main` maps errors to exit codes.

use std::io::Write;
use std::ops::RangeInclusive;
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vanetloc::channel::{generate_survey, sample_beacons, RssSample, SurveyDataset};
use vanetloc::fit::{filter_near_field, fit_poly4, FitError};
use vanetloc::geometry::{to_global, GeometryError, LocalPoint};
use vanetloc::nn::{init_mlp, split_dataset, sweep, train, NnDataset, NnError, SweepConfig, SweepTable, TrainConfig};
use vanetloc::positioning::{
    locate, Beacon, CalibratedPolynomial, GpsStatus, NetworkEstimator, PolynomialRanging, PositioningError,
    RangeEstimator, RoadSegment,
};

use crate::config::{EstimatorConfig, ScenarioConfig};
use crate::csvio::{self, fmt4};
use crate::HarnessError;

/// Random stream of the drive's beacon noise; the calibration survey uses
/// stream 0 of the same seed.
const DRIVE_STREAM: u64 = 1;

fn say(out: &mut impl Write, line: std::fmt::Arguments) -> Result<(), HarnessError> {
    writeln!(out, "{line}").map_err(|e| HarnessError::Data(format!("stdout: {e}")))
}

fn fit_err(e: FitError) -> HarnessError {
    match e {
        FitError::TooFewSamples { .. } | FitError::RankDeficient { .. } => HarnessError::Insufficient(e.to_string()),
        _ => HarnessError::Data(e.to_string()),
    }
}

fn nn_err(e: NnError) -> HarnessError {
    match e {
        NnError::TooFewSamples { .. } => HarnessError::Insufficient(e.to_string()),
        _ => HarnessError::Data(e.to_string()),
    }
}

fn positioning_err(e: PositioningError) -> HarnessError {
    match e {
        PositioningError::NoCoverage
        | PositioningError::InsufficientAnchors { .. }
        | PositioningError::Geometry(GeometryError::InsufficientAnchors { .. }) => {
            HarnessError::Insufficient(e.to_string())
        }
        _ => HarnessError::Data(e.to_string()),
    }
}

pub fn cmd_survey(
    config: &ScenarioConfig,
    seed: Option<u64>,
    out_path: &Path,
    out: &mut impl Write,
) -> Result<SurveyDataset, HarnessError> {
    let seed = seed.unwrap_or(config.scenario.seed);
    let survey = generate_survey(&config.layout, &config.channel, seed).map_err(|e| HarnessError::Data(e.to_string()))?;
    csvio::write_survey(out_path, &survey)?;
    say(out, format_args!("wrote {} rows to {}", survey.samples.len(), out_path.display()))?;
    Ok(survey)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReportFile {
    pub rsu_id: String,
    pub min_distance_m: f64,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
    pub p5: f64,
    pub sse: f64,
    pub r_square: f64,
    pub adj_r_square: f64,
    pub rmse: f64,
    pub n: usize,
    pub rss_min_dbm: f64,
    pub rss_max_dbm: f64,
}

/// Fits one RSU's samples at or beyond `min_distance_m`.
pub fn fit_rsu(samples: &[RssSample], rsu_id: &str, min_distance_m: f64) -> Result<FitReportFile, HarnessError> {
    if !samples.iter().any(|s| s.rsu_id == rsu_id) {
        return Err(HarnessError::Data(format!("no samples for RSU {rsu_id:?}")));
    }
    let input = filter_near_field(samples.iter().filter(|s| s.rsu_id == rsu_id), min_distance_m).map_err(fit_err)?;
    let (poly, report) = fit_poly4(&input).map_err(fit_err)?;
    let (lo, hi) = input.rss_domain().expect("filter guarantees samples");
    Ok(FitReportFile {
        rsu_id: rsu_id.to_string(),
        min_distance_m,
        p1: poly.p1,
        p2: poly.p2,
        p3: poly.p3,
        p4: poly.p4,
        p5: poly.p5,
        sse: report.sse,
        r_square: report.r_square,
        adj_r_square: report.adj_r_square,
        rmse: report.rmse,
        n: report.n,
        rss_min_dbm: lo,
        rss_max_dbm: hi,
    })
}

pub fn cmd_fit(
    in_csv: &Path,
    rsu_id: &str,
    min_distance_m: f64,
    report_path: &Path,
    out: &mut impl Write,
) -> Result<FitReportFile, HarnessError> {
    let samples = csvio::read_survey(in_csv)?;
    let report = fit_rsu(&samples, rsu_id, min_distance_m)?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| HarnessError::Data(e.to_string()))?;
    std::fs::write(report_path, text + "\n")
        .map_err(|e| HarnessError::Data(format!("{}: {e}", report_path.display())))?;
    say(
        out,
        format_args!(
            "{rsu_id}: n = {}, SSE = {:.4}, R² = {:.4}, adj R² = {:.4}, RMSE = {:.4} m",
            report.n, report.sse, report.r_square, report.adj_r_square, report.rmse
        ),
    )?;
    Ok(report)
}

/// Parses `LO..HI` (inclusive).
pub fn parse_hidden_range(text: &str) -> Result<RangeInclusive<usize>, HarnessError> {
    let usage = || HarnessError::Usage(format!("--hidden expects LO..HI, got {text:?}"));
    let (lo, hi) = text.split_once("..").ok_or_else(usage)?;
    let lo: usize = lo.trim().parse().map_err(|_| usage())?;
    let hi: usize = hi.trim().parse().map_err(|_| usage())?;
    if lo == 0 || lo > hi {
        return Err(usage());
    }
    Ok(lo..=hi)
}

pub fn cmd_sweep(
    in_csv: &Path,
    hidden: RangeInclusive<usize>,
    n_seeds: u64,
    train_config: TrainConfig,
    out_csv: &Path,
    out: &mut impl Write,
) -> Result<SweepTable, HarnessError> {
    if n_seeds == 0 {
        return Err(HarnessError::Usage("--seeds must be >= 1".into()));
    }
    let samples = csvio::read_survey(in_csv)?;
    let dataset = NnDataset::from_samples(&samples).map_err(nn_err)?;
    let config = SweepConfig { hidden_sizes: hidden.collect(), seeds: (1..=n_seeds).collect(), split_seed: 0, train: train_config };
    let table = sweep(&dataset, &config).map_err(nn_err)?;
    let rows = csvio::sweep_rows(&table);
    csvio::write_rows(out_csv, &csvio::SWEEP_HEADER, &rows)?;
    say(out, format_args!("{} networks trained; top 5:", rows.len()))?;
    csvio::print_table(out, &csvio::SWEEP_HEADER, &rows[..rows.len().min(5)])
        .map_err(|e| HarnessError::Data(format!("stdout: {e}")))?;
    Ok(table)
}

/// Builds the configured estimator from a calibration survey. Returns it
/// with its calibration RMSE (the largest one for per-RSU fits).
pub fn build_estimator(config: &ScenarioConfig, survey: &SurveyDataset) -> Result<(RangeEstimator, f64), HarnessError> {
    match &config.estimator {
        EstimatorConfig::Poly { rsu, cutoff_m } => {
            let calibrate = |id: &str| -> Result<CalibratedPolynomial, HarnessError> {
                let input = filter_near_field(survey.for_rsu(id), *cutoff_m).map_err(fit_err)?;
                let (poly, report) = fit_poly4(&input).map_err(fit_err)?;
                CalibratedPolynomial::new(poly, &input, &report).map_err(|e| HarnessError::Data(e.to_string()))
            };
            let ranging = match rsu {
                Some(id) => PolynomialRanging::shared(calibrate(id)?),
                None => PolynomialRanging {
                    per_rsu: config
                        .layout
                        .rsus_by_id()
                        .iter()
                        .map(|r| Ok((r.id.clone(), calibrate(&r.id)?)))
                        .collect::<Result<_, HarnessError>>()?,
                    shared: None,
                },
            };
            let rmse = ranging.per_rsu.values().chain(ranging.shared.iter()).map(|c| c.rmse_m).fold(0.0, f64::max);
            Ok((RangeEstimator::Polynomial(ranging), rmse))
        }
        EstimatorConfig::Nn { hidden, init_seed, split_seed, train: train_config } => {
            let dataset = NnDataset::from_survey(survey).map_err(nn_err)?;
            let splits = split_dataset(dataset.len(), *split_seed).map_err(nn_err)?;
            let init = init_mlp(dataset.feature_names.len(), *hidden, *init_seed).map_err(nn_err)?;
            let cfg = TrainConfig { seed: *init_seed, ..*train_config };
            let (model, _) = train(&init, &dataset.examples, &splits, &cfg).map_err(nn_err)?;
            let mut sse = 0.0;
            for ex in &dataset.examples {
                sse += (vanetloc::nn::forward(&model, &ex.inputs).map_err(nn_err)? - ex.target).powi(2);
            }
            let rmse = (sse / dataset.len() as f64).sqrt();
            let road = RoadSegment {
                start_m: config.layout.start_m,
                end_m: config.layout.end_m,
                lane_y_m: config.layout.lane_y_m,
                z_m: config.layout.antenna_z_m,
            };
            Ok((RangeEstimator::Network(NetworkEstimator { model, rsu_order: dataset.feature_names, rmse_m: rmse, road }), rmse))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t_s: f64,
    pub x_true_m: f64,
    pub x_est_m: f64,
    pub y_est_m: f64,
    pub source: &'static str,
    pub used_rsus: Vec<String>,
    pub quality_m: f64,
    /// Along-road error `|x_est − x_true|`.
    pub abs_error_m: f64,
    pub in_outage: bool,
}

impl TraceRow {
    pub fn to_record(&self) -> Vec<String> {
        vec![
            fmt4(self.t_s),
            fmt4(self.x_true_m),
            fmt4(self.x_est_m),
            fmt4(self.y_est_m),
            self.source.to_string(),
            self.used_rsus.join(";"),
            fmt4(self.quality_m),
            fmt4(self.abs_error_m),
        ]
    }
}

/// Error statistics over the rounded `abs_error_m` column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveSummary {
    pub steps: usize,
    pub outage_steps: usize,
    pub mean_abs_error_m: f64,
    pub max_abs_error_m: f64,
    pub outage_mean_abs_error_m: Option<f64>,
    pub outage_max_abs_error_m: Option<f64>,
    pub calibration_rmse_m: f64,
}

fn mean_max(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    Some((values.iter().sum::<f64>() / values.len() as f64, values.iter().copied().fold(0.0, f64::max)))
}

pub fn summarize(rows: &[TraceRow], calibration_rmse_m: f64) -> DriveSummary {
    let rounded = |r: &TraceRow| fmt4(r.abs_error_m).parse::<f64>().expect("formatted number");
    let all: Vec<f64> = rows.iter().map(rounded).collect();
    let outage: Vec<f64> = rows.iter().filter(|r| r.in_outage).map(rounded).collect();
    let (mean, max) = mean_max(&all).unwrap_or((0.0, 0.0));
    let outage_stats = mean_max(&outage);
    DriveSummary {
        steps: rows.len(),
        outage_steps: outage.len(),
        mean_abs_error_m: mean,
        max_abs_error_m: max,
        outage_mean_abs_error_m: outage_stats.map(|s| s.0),
        outage_max_abs_error_m: outage_stats.map(|s| s.1),
        calibration_rmse_m,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriveRun {
    pub rows: Vec<TraceRow>,
    pub summary: DriveSummary,
}

/// Calibrates the estimator on a survey, then drives the lane once,
/// locating the vehicle at every survey position.
pub fn simulate_drive(config: &ScenarioConfig) -> Result<DriveRun, HarnessError> {
    config.validate()?;
    let layout = &config.layout;
    let scenario = &config.scenario;
    let survey =
        generate_survey(layout, &config.channel, scenario.seed).map_err(|e| HarnessError::Data(e.to_string()))?;
    let (estimator, rmse) = build_estimator(config, &survey)?;

    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    rng.set_stream(DRIVE_STREAM);
    let origin = scenario.origin;
    let mut hint: Option<LocalPoint> = None;
    let mut rows = Vec::new();
    for x in layout.positions() {
        let truth = layout.vehicle_at(x);
        let heard = sample_beacons(layout, &config.channel, &truth, &mut rng)
            .map_err(|e| HarnessError::Data(e.to_string()))?;
        let beacons: Vec<Beacon> = heard
            .iter()
            .map(|(rsu, rss)| Beacon::from_rsu(rsu, &origin, *rss))
            .collect::<Result<_, _>>()
            .map_err(positioning_err)?;
        let in_outage = scenario.in_outage(x);
        let gps = if in_outage {
            GpsStatus::outage()
        } else {
            GpsStatus::dgps(to_global(&truth, &origin).map_err(|e| HarnessError::Data(e.to_string()))?)
        };
        let fix = locate(&gps, &beacons, &estimator, &scenario.policy, &origin, hint)
            .map_err(|e| match positioning_err(e) {
                HarnessError::Insufficient(m) => HarnessError::Insufficient(format!("at x = {x} m: {m}")),
                other => other,
            })?;
        rows.push(TraceRow {
            t_s: (x - layout.start_m) / scenario.speed_mps,
            x_true_m: x,
            x_est_m: fix.local.x_m,
            y_est_m: fix.local.y_m,
            source: fix.source.as_str(),
            used_rsus: fix.used_rsu_ids.clone(),
            quality_m: fix.quality_m,
            abs_error_m: (fix.local.x_m - x).abs(),
            in_outage,
        });
        hint = Some(fix.local);
    }
    let summary = summarize(&rows, rmse);
    Ok(DriveRun { rows, summary })
}

pub fn cmd_drive(config: &ScenarioConfig, out_csv: &Path, out: &mut impl Write) -> Result<DriveRun, HarnessError> {
    let run = simulate_drive(config)?;
    let records: Vec<Vec<String>> = run.rows.iter().map(TraceRow::to_record).collect();
    csvio::write_rows(out_csv, &csvio::TRACE_HEADER, &records)?;
    let s = &run.summary;
    say(out, format_args!("steps {}", s.steps))?;
    say(out, format_args!("outage_steps {}", s.outage_steps))?;
    say(out, format_args!("mean_abs_error_m {}", s.mean_abs_error_m))?;
    say(out, format_args!("max_abs_error_m {}", s.max_abs_error_m))?;
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| v.to_string());
    say(out, format_args!("outage_mean_abs_error_m {}", opt(s.outage_mean_abs_error_m)))?;
    say(out, format_args!("outage_max_abs_error_m {}", opt(s.outage_max_abs_error_m)))?;
    say(out, format_args!("calibration_rmse_m {}", s.calibration_rmse_m))?;
    Ok(run)
}
