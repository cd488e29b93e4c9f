//! `sweep`: basin-of-attraction study over a gain grid. Each (gain, sample)
//! pair runs an independent scenario; samples are drawn once and shared
//! across gains so fractions are comparable. Runs execute in parallel;
//! results are aggregated in memory and written once, in deterministic order.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::anyhow;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use vslam_core::simulation::{
    run_basin_sample, sample_basin_frames, BasinOutcome, BasinSampleConfig,
    ConvergenceThresholds, RunOptions,
};
use vslam_core::vslam_group::{output as output_map, LandmarkFrame};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Serialize)]
struct GainSummary {
    gain: f64,
    samples: usize,
    converged: usize,
    fraction: f64,
    failures: usize,
}

#[derive(Debug, Serialize)]
struct SweepSummary {
    samples: usize,
    excluded_draws: u32,
    chi_margin: f64,
    max_bearing_angle: f64,
    gains: Vec<GainSummary>,
    fractions_non_decreasing: bool,
}

pub fn run(config: &RunConfig, gains: &[f64], samples: usize, out_dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::usage(anyhow!("creating {}: {e}", out_dir.display())))?;
    if gains.is_empty() {
        return Err(CliError::usage(anyhow!("gain grid is empty")));
    }
    let scenario = config
        .scenario
        .build()
        .map_err(|e| CliError::usage(anyhow!(e)))?;
    let bearings = output_map(&scenario.initial).map_err(|e| CliError::usage(anyhow!(e)))?;
    let ranges = scenario.initial.ranges();

    let ic = BasinSampleConfig {
        chi_margin: config.sweep.chi_margin,
        max_bearing_angle: config.sweep.max_bearing_angle,
        range_ratio_low: config.sweep.range_ratio_low,
        range_ratio_high: config.sweep.range_ratio_high,
    };
    let thresholds = ConvergenceThresholds {
        bearing: config.sweep.bearing_tol,
        ..ConvergenceThresholds::default()
    };

    // One initial-condition set, shared by every gain.
    let mut rng = ChaCha8Rng::seed_from_u64(config.sweep.seed);
    let mut excluded_draws = 0u32;
    let ic_set: Vec<Vec<LandmarkFrame>> = (0..samples)
        .map(|_| {
            let (frames, excluded) = sample_basin_frames(
                &mut rng,
                bearings.bearings(),
                &ranges,
                config.observer.initial_depth,
                &ic,
            );
            excluded_draws += excluded;
            frames
        })
        .collect();

    let options = RunOptions::default();
    let outcomes: Vec<(usize, usize, BasinOutcome)> = gains
        .iter()
        .enumerate()
        .flat_map(|(gi, _)| (0..samples).map(move |si| (gi, si)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(gi, si)| {
            let mut observer = config.observer.clone();
            observer.bearing_gain = gains[gi];
            let outcome = run_basin_sample(
                &scenario,
                &observer,
                ic_set[si].clone(),
                &options,
                &thresholds,
            );
            (gi, si, outcome)
        })
        .collect();

    let mut w = BufWriter::new(
        File::create(out_dir.join("sweep.csv")).map_err(|e| CliError::usage(anyhow!(e)))?,
    );
    writeln!(w, "# vslam sweep v1").map_err(|e| CliError::usage(anyhow!(e)))?;
    writeln!(
        w,
        "gain,sample,converged,max_bearing_error,max_range_ratio_error,storage_decreased,error"
    )
    .map_err(|e| CliError::usage(anyhow!(e)))?;
    let mut sorted = outcomes;
    sorted.sort_by_key(|(gi, si, _)| (*gi, *si));
    let mut per_gain: Vec<GainSummary> = gains
        .iter()
        .map(|g| GainSummary {
            gain: *g,
            samples,
            converged: 0,
            fraction: 0.0,
            failures: 0,
        })
        .collect();
    for (gi, si, outcome) in &sorted {
        if outcome.converged {
            per_gain[*gi].converged += 1;
        }
        if outcome.error.is_some() {
            per_gain[*gi].failures += 1;
        }
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            gains[*gi],
            si,
            outcome.converged as u8,
            outcome.max_bearing_error,
            outcome.max_range_ratio_error,
            outcome.storage_decreased as u8,
            outcome.error.as_deref().unwrap_or("").replace(',', ";")
        )
        .map_err(|e| CliError::usage(anyhow!(e)))?;
    }
    for g in &mut per_gain {
        g.fraction = g.converged as f64 / samples.max(1) as f64;
    }
    let non_decreasing = per_gain.windows(2).all(|p| p[0].fraction <= p[1].fraction);

    let summary = SweepSummary {
        samples,
        excluded_draws,
        chi_margin: ic.chi_margin,
        max_bearing_angle: ic.max_bearing_angle,
        gains: per_gain,
        fractions_non_decreasing: non_decreasing,
    };
    let text = toml::to_string_pretty(&summary)
        .map_err(|e| CliError::usage(anyhow!("serializing sweep summary: {e}")))?;
    std::fs::write(out_dir.join("sweep_summary.toml"), text)
        .map_err(|e| CliError::usage(anyhow!(e)))?;
    Ok(())
}
