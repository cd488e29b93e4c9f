//! CSV trace writers and the run summary. Every file starts with a versioned
//! `#` comment line; all floats use the shortest round-trip formatting, so
//! outputs are byte-identical across runs with the same config and seed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::anyhow;
use serde::Serialize;
use vslam_core::geometry::Vec3;
use vslam_core::vslam_group::TotalState;

use crate::engine::{EngineOutput, EngineRow};
use crate::error::{CliError, CliResult};

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| {
        CliError::usage(anyhow!("creating {}: {e}", path.display()))
    })?))
}

/// `trajectory.csv`: estimate positions, plus truth columns when available.
pub fn write_trajectory(
    dir: &Path,
    rows: &[EngineRow],
    truth: Option<&dyn Fn(f64) -> TotalState>,
) -> CliResult<()> {
    let mut w = create(&dir.join("trajectory.csv"))?;
    writeln!(w, "# vslam trajectory v1").map_err(|e| CliError::usage(anyhow!(e)))?;
    if truth.is_some() {
        writeln!(w, "t,est_x,est_y,est_z,true_x,true_y,true_z")
            .map_err(|e| CliError::usage(anyhow!(e)))?;
    } else {
        writeln!(w, "t,est_x,est_y,est_z").map_err(|e| CliError::usage(anyhow!(e)))?;
    }
    for row in rows {
        let p = row.estimate_pose.translation();
        match truth {
            Some(f) => {
                let world = f(row.t);
                let q = world.pose().translation();
                writeln!(w, "{},{},{},{},{},{},{}", row.t, p.x, p.y, p.z, q.x, q.y, q.z)
            }
            None => writeln!(w, "{},{},{},{}", row.t, p.x, p.y, p.z),
        }
        .map_err(|e| CliError::usage(anyhow!(e)))?;
    }
    Ok(())
}

/// `landmarks.csv`: per-landmark estimates and the output-error angle.
pub fn write_landmarks(dir: &Path, rows: &[EngineRow]) -> CliResult<()> {
    let mut w = create(&dir.join("landmarks.csv"))?;
    writeln!(w, "# vslam landmarks v1").map_err(|e| CliError::usage(anyhow!(e)))?;
    writeln!(w, "t,id,x,y,z,range,error_angle").map_err(|e| CliError::usage(anyhow!(e)))?;
    for row in rows {
        for l in &row.landmarks {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                row.t, l.id, l.position.x, l.position.y, l.position.z, l.range, l.error_angle
            )
            .map_err(|e| CliError::usage(anyhow!(e)))?;
        }
    }
    Ok(())
}

/// `storage.csv`: per-landmark storage values and range ratios (needs truth).
pub fn write_storage(dir: &Path, rows: &[EngineRow]) -> CliResult<()> {
    let mut w = create(&dir.join("storage.csv"))?;
    writeln!(w, "# vslam storage v1").map_err(|e| CliError::usage(anyhow!(e)))?;
    writeln!(w, "t,id,storage,range_ratio").map_err(|e| CliError::usage(anyhow!(e)))?;
    for row in rows {
        for l in &row.landmarks {
            if let (Some(s), Some(r)) = (l.storage, l.range_ratio) {
                writeln!(w, "{},{},{},{}", row.t, l.id, s, r)
                    .map_err(|e| CliError::usage(anyhow!(e)))?;
            }
        }
    }
    Ok(())
}

/// `innovation.csv`: pose innovation, innovation magnitudes, solver health.
pub fn write_innovation(dir: &Path, rows: &[EngineRow]) -> CliResult<()> {
    let mut w = create(&dir.join("innovation.csv"))?;
    writeln!(w, "# vslam innovation v1").map_err(|e| CliError::usage(anyhow!(e)))?;
    writeln!(
        w,
        "t,dwx,dwy,dwz,dvx,dvy,dvz,max_frame,max_scale,wls_condition,wls_degenerate,rejected_substeps"
    )
    .map_err(|e| CliError::usage(anyhow!(e)))?;
    for row in rows {
        let a = row.innovation_pose.angular;
        let v = row.innovation_pose.linear;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            row.t,
            a.x,
            a.y,
            a.z,
            v.x,
            v.y,
            v.z,
            row.max_frame_innovation,
            row.max_scale_innovation,
            row.wls_condition,
            row.wls_degenerate as u8,
            row.rejected_substeps
        )
        .map_err(|e| CliError::usage(anyhow!(e)))?;
    }
    Ok(())
}

/// `map.csv`: final landmark estimates.
pub fn write_map(dir: &Path, map: &[(u64, Vec3)]) -> CliResult<()> {
    let mut w = create(&dir.join("map.csv"))?;
    writeln!(w, "# vslam map v1").map_err(|e| CliError::usage(anyhow!(e)))?;
    writeln!(w, "id,x,y,z").map_err(|e| CliError::usage(anyhow!(e)))?;
    for (id, p) in map {
        writeln!(w, "{},{},{},{}", id, p.x, p.y, p.z).map_err(|e| CliError::usage(anyhow!(e)))?;
    }
    Ok(())
}

#[derive(Debug, Default, Serialize)]
pub struct AlignmentSummary {
    pub rmse: f64,
    pub scale: f64,
    pub rotation_angle: f64,
    pub translation: [f64; 3],
}

#[derive(Debug, Default, Serialize)]
pub struct Summary {
    pub frames: usize,
    pub final_time: f64,
    pub landmark_count: usize,
    pub rejected_substeps: u64,
    pub degenerate_wls_steps: u64,
    pub added_landmarks: usize,
    pub removed_landmarks: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_max_bearing_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_max_range_ratio_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub equivalence_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory_rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub storage_monotone: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_storage_increase: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monotonicity_slack: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alignment: Option<AlignmentSummary>,
}

pub fn write_summary(dir: &Path, summary: &Summary) -> CliResult<()> {
    let text = toml::to_string_pretty(summary)
        .map_err(|e| CliError::usage(anyhow!("serializing summary: {e}")))?;
    std::fs::write(dir.join("summary.toml"), text)
        .map_err(|e| CliError::usage(anyhow!("writing summary: {e}")))?;
    Ok(())
}

/// Largest single-step storage increase across landmarks, from engine rows.
pub fn max_storage_increase(output: &EngineOutput) -> f64 {
    use std::collections::BTreeMap;
    let mut previous: BTreeMap<u64, f64> = BTreeMap::new();
    let mut max_increase = 0.0f64;
    for row in &output.rows {
        for l in &row.landmarks {
            if let Some(s) = l.storage {
                if let Some(prev) = previous.get(&l.id) {
                    max_increase = max_increase.max(s - prev);
                }
                previous.insert(l.id, s);
            }
        }
    }
    max_increase
}
