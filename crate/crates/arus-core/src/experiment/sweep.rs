//! Camera-distance sweep: repeat the full calibration at several distances
//! and aggregate the held-out error per distance.

use super::sim::run_single_calibration;
use super::ExperimentError;
use crate::config::{ConfigError, ExperimentConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One calibration run inside a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRunRow {
    pub distance_mm: f64,
    pub repeat: usize,
    pub seed: u64,
    pub ok: bool,
    pub error_mean_mm: Option<f64>,
    pub error_sd_mm: Option<f64>,
    pub rms_fit_mm: Option<f64>,
    pub n_correspondences: usize,
    pub n_frames_dropped: usize,
}

/// Aggregate over the repeats of one distance: mean and sd of the per-run
/// mean errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepDistanceRow {
    pub distance_mm: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub error_mean_mm: f64,
    pub error_sd_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<String>,
    pub base_seed: u64,
    pub rows: Vec<SweepDistanceRow>,
    pub runs: Vec<SweepRunRow>,
}

/// Run the distance sweep: every (distance, repeat) pair is an independent
/// calibration with seed `base_seed + run_index`. Runs execute in parallel
/// but are aggregated in (distance, repeat) order, so the report does not
/// depend on the thread schedule. Failed runs are logged and skipped in
/// the aggregates.
pub fn run_distance_sweep(config: &ExperimentConfig) -> Result<SweepReport, ExperimentError> {
    config.validate()?;
    let distances = config.camera_distance_mm.values();
    if distances.len() < 2 {
        return Err(ConfigError::Invalid(format!(
            "a sweep needs at least 2 distances, got {distances:?}"
        ))
        .into());
    }
    let repeats = config.seeds.n_seeds;
    if repeats < 2 {
        return Err(ConfigError::Invalid(format!("a sweep needs at least 2 repeats, got {repeats}")).into());
    }

    let jobs: Vec<(usize, usize)> = (0..distances.len())
        .flat_map(|d| (0..repeats).map(move |r| (d, r)))
        .collect();
    let mut runs: Vec<SweepRunRow> = jobs
        .par_iter()
        .map(|&(d_idx, repeat)| {
            let run_index = (d_idx * repeats + repeat) as u64;
            let seed = config.seeds.base_seed + run_index;
            let distance = distances[d_idx];
            match run_single_calibration(config, distance, seed) {
                Ok(out) => SweepRunRow {
                    distance_mm: distance,
                    repeat,
                    seed,
                    ok: true,
                    error_mean_mm: Some(out.report.error_mean),
                    error_sd_mm: Some(out.report.error_sd),
                    rms_fit_mm: Some(out.report.rms_fit),
                    n_correspondences: out.report.n_correspondences,
                    n_frames_dropped: out.n_frames_dropped,
                },
                Err(e) => {
                    log::warn!("sweep run (distance {distance} mm, repeat {repeat}) failed: {e}");
                    SweepRunRow {
                        distance_mm: distance,
                        repeat,
                        seed,
                        ok: false,
                        error_mean_mm: None,
                        error_sd_mm: None,
                        rms_fit_mm: None,
                        n_correspondences: 0,
                        n_frames_dropped: 0,
                    }
                }
            }
        })
        .collect();
    runs.sort_by(|a, b| {
        a.distance_mm
            .total_cmp(&b.distance_mm)
            .then(a.repeat.cmp(&b.repeat))
    });

    let rows = distances
        .iter()
        .map(|&distance| {
            let means: Vec<f64> = runs
                .iter()
                .filter(|r| r.distance_mm == distance && r.ok)
                .filter_map(|r| r.error_mean_mm)
                .collect();
            let n_ok = means.len();
            let n_failed = repeats - n_ok;
            let mean = means.iter().sum::<f64>() / n_ok.max(1) as f64;
            let sd = if n_ok > 1 {
                (means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n_ok - 1) as f64).sqrt()
            } else {
                0.0
            };
            SweepDistanceRow {
                distance_mm: distance,
                n_ok,
                n_failed,
                error_mean_mm: mean,
                error_sd_mm: sd,
            }
        })
        .collect();

    Ok(SweepReport {
        schema_version: crate::io::SCHEMA_VERSION.to_string(),
        generated_at: None,
        base_seed: config.seeds.base_seed,
        rows,
        runs,
    })
}
