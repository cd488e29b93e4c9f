//! `simulate`: run the ground-truth scenario through the streaming engine,
//! emitting measurement records consumable by `replay` along with the trace
//! CSVs and a summary.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::anyhow;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vslam_core::evaluation::{equivalence_residual, umeyama_align};
use vslam_core::geometry::Vec3;
use vslam_core::simulation::{measure, true_step, Scenario, VelocitySampleConfig};
use vslam_core::vslam_group::TotalState;

use crate::config::RunConfig;
use crate::engine::{run_stream, EngineConfig, EngineOutput};
use crate::error::{CliError, CliResult};
use crate::output;
use crate::records::{write_records, write_velocities, Frame, Measurement};

pub fn run(config: &RunConfig, out_dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::usage(anyhow!("creating {}: {e}", out_dir.display())))?;
    let scenario = config
        .scenario
        .build()
        .map_err(|e| CliError::usage(anyhow!(e)))?;

    let (frames, velocities, worlds) = synthesize(&scenario)?;
    {
        let w = BufWriter::new(
            File::create(out_dir.join("records.csv")).map_err(|e| CliError::usage(anyhow!(e)))?,
        );
        write_records(w, &frames)?;
        let w = BufWriter::new(
            File::create(out_dir.join("velocities.csv"))
                .map_err(|e| CliError::usage(anyhow!(e)))?,
        );
        write_velocities(w, &velocities)?;
    }

    let dt = scenario.dt;
    let truth = |t: f64| -> TotalState {
        let index = ((t / dt).round() as usize).min(worlds.len() - 1);
        worlds[index].clone()
    };
    let velocity = |t: f64| scenario.velocity_at(t);
    let engine_cfg = EngineConfig::new(config.observer.clone());
    let result = run_stream(
        frames.iter().cloned().map(Ok),
        &velocity,
        &engine_cfg,
        Some(&truth),
    )?;

    write_outputs(config, out_dir, &result, &truth)?;
    Ok(())
}

/// Truth trajectory, measurement frames and velocity samples on the step grid.
fn synthesize(
    scenario: &Scenario,
) -> CliResult<(Vec<Frame>, Vec<VelocitySampleConfig>, Vec<TotalState>)> {
    let steps = (scenario.duration / scenario.dt).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    rng.set_stream(1);

    let mut worlds = Vec::with_capacity(steps + 1);
    let mut frames = Vec::with_capacity(steps + 1);
    let mut velocities = Vec::with_capacity(steps + 1);
    let mut world = scenario.initial.clone();
    for k in 0..=steps {
        let t = k as f64 * scenario.dt;
        let u = scenario.velocity_at(t);
        let y = measure(&world, scenario.bearing_noise, &mut rng)
            .map_err(|e| CliError::numerical(anyhow!(e)))?;
        frames.push(Frame {
            t,
            measurements: y
                .bearings()
                .iter()
                .enumerate()
                .map(|(i, b)| Measurement {
                    id: i as u64,
                    bearing: *b,
                    depth: None,
                })
                .collect(),
        });
        velocities.push(VelocitySampleConfig {
            t,
            angular: [u.angular.x, u.angular.y, u.angular.z],
            linear: [u.linear.x, u.linear.y, u.linear.z],
        });
        worlds.push(world.clone());
        if k < steps {
            world = true_step(&world, &u, scenario.dt);
        }
    }
    Ok((frames, velocities, worlds))
}

fn write_outputs(
    config: &RunConfig,
    out_dir: &Path,
    result: &EngineOutput,
    truth: &dyn Fn(f64) -> TotalState,
) -> CliResult<()> {
    output::write_trajectory(out_dir, &result.rows, Some(truth))?;
    output::write_landmarks(out_dir, &result.rows)?;
    output::write_storage(out_dir, &result.rows)?;
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
        let max_bearing = last
            .landmarks
            .iter()
            .map(|l| l.error_angle)
            .fold(0.0f64, f64::max);
        summary.final_max_bearing_error = Some(max_bearing);
        let max_ratio = last
            .landmarks
            .iter()
            .filter_map(|l| l.range_ratio)
            .map(|r| (r - 1.0).abs())
            .fold(0.0f64, f64::max);
        summary.final_max_range_ratio_error = Some(max_ratio);

        // Equivalence residual between the final estimate and the truth,
        // with truth landmarks matched by id.
        let world = truth(last.t);
        let matched: Vec<Vec3> = result
            .final_ids
            .iter()
            .map(|id| *world.landmark(*id as usize))
            .collect();
        if !matched.is_empty() {
            let truth_state = TotalState::new(*world.pose(), matched)
                .map_err(|e| CliError::numerical(anyhow!(e)))?;
            summary.equivalence_residual = Some(
                equivalence_residual(&result.final_estimate, &truth_state)
                    .map_err(|e| CliError::numerical(anyhow!(e)))?,
            );
        }

        let est: Vec<Vec3> = result
            .rows
            .iter()
            .map(|r| *r.estimate_pose.translation())
            .collect();
        let reference: Vec<Vec3> = result
            .rows
            .iter()
            .map(|r| *truth(r.t).pose().translation())
            .collect();
        summary.trajectory_rmse = umeyama_align(&est, &reference, false).map(|a| a.rmse).ok();
    }

    let slack = config.output.monotonicity_slack;
    let max_increase = output::max_storage_increase(result);
    summary.max_storage_increase = Some(max_increase);
    summary.storage_monotone = Some(max_increase <= slack);
    summary.monotonicity_slack = Some(slack);

    output::write_summary(out_dir, &summary)?;
    Ok(())
}
