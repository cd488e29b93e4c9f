//! `replay`: stream recorded bearing/velocity logs through the observer with
//! the landmark lifecycle, optionally aligning the estimated trajectory to a
//! reference.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::anyhow;
use vslam_core::evaluation::umeyama_align;
use vslam_core::geometry::Vec3;
use vslam_core::simulation::interpolate_velocity;

use crate::config::RunConfig;
use crate::engine::{run_stream, EngineConfig};
use crate::error::{CliError, CliResult};
use crate::output;
use crate::records::{read_records, read_reference, read_velocities};

pub struct ReplayInputs<'a> {
    pub records: &'a Path,
    pub velocities: &'a Path,
    pub reference: Option<&'a Path>,
    pub align_scale: bool,
}

pub fn run(config: &RunConfig, inputs: &ReplayInputs<'_>, out_dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::usage(anyhow!("creating {}: {e}", out_dir.display())))?;

    let frames = read_records(BufReader::new(File::open(inputs.records).map_err(|e| {
        CliError::usage(anyhow!("opening {}: {e}", inputs.records.display()))
    })?))?;
    let samples = read_velocities(BufReader::new(File::open(inputs.velocities).map_err(
        |e| CliError::usage(anyhow!("opening {}: {e}", inputs.velocities.display())),
    )?))?;

    let velocity = |t: f64| interpolate_velocity(&samples, t);
    let engine_cfg = EngineConfig::new(config.observer.clone());
    let result = run_stream(frames.into_iter().map(Ok), &velocity, &engine_cfg, None)?;

    output::write_trajectory(out_dir, &result.rows, None)?;
    output::write_landmarks(out_dir, &result.rows)?;
    output::write_innovation(out_dir, &result.rows)?;
    output::write_map(out_dir, &result.map)?;

    let mut summary = output::Summary {
        frames: result.rows.len(),
        final_time: result.rows.last().map(|r| r.t).unwrap_or(0.0),
        landmark_count: result.final_ids.len(),
        rejected_substeps: result.rejected_substeps,
        degenerate_wls_steps: result.degenerate_steps,
        added_landmarks: result.added.len(),
        removed_landmarks: result.removed.len(),
        ..Default::default()
    };
    if let Some(last) = result.rows.last() {
        summary.final_max_bearing_error = Some(
            last.landmarks
                .iter()
                .map(|l| l.error_angle)
                .filter(|a| a.is_finite())
                .fold(0.0f64, f64::max),
        );
    }

    if let Some(reference_path) = inputs.reference {
        let reference = read_reference(BufReader::new(File::open(reference_path).map_err(
            |e| CliError::usage(anyhow!("opening {}: {e}", reference_path.display())),
        )?))?;
        if reference.len() < 2 {
            return Err(CliError::data(anyhow!(
                "reference trajectory needs at least two rows"
            )));
        }
        let est: Vec<Vec3> = result
            .rows
            .iter()
            .map(|r| *r.estimate_pose.translation())
            .collect();
        let matched: Vec<Vec3> = result
            .rows
            .iter()
            .map(|r| interpolate_reference(&reference, r.t))
            .collect();
        let fit = umeyama_align(&est, &matched, inputs.align_scale)
            .map_err(|e| CliError::data(anyhow!("alignment failed: {e}")))?;
        summary.alignment = Some(output::AlignmentSummary {
            rmse: fit.rmse,
            scale: fit.scale,
            rotation_angle: fit.transform.rotation().angle(),
            translation: [
                fit.transform.translation().x,
                fit.transform.translation().y,
                fit.transform.translation().z,
            ],
        });
    }

    output::write_summary(out_dir, &summary)?;
    Ok(())
}

fn interpolate_reference(reference: &[(f64, Vec3)], t: f64) -> Vec3 {
    if t <= reference[0].0 {
        return reference[0].1;
    }
    let last = &reference[reference.len() - 1];
    if t >= last.0 {
        return last.1;
    }
    for pair in reference.windows(2) {
        if t <= pair[1].0 {
            let alpha = (t - pair[0].0) / (pair[1].0 - pair[0].0);
            return pair[0].1 + (pair[1].1 - pair[0].1) * alpha;
        }
    }
    last.1
}
