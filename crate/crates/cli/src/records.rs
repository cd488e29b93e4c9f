//! Record file formats.
//!
//! Measurement records: one row per sighting, grouped into frames by
//! timestamp. Velocities: one row per sample, linearly interpolated to
//! measurement timestamps on ingest. Both are plain CSV with a versioned
//! `#` header comment line.
//!
//! ```text
//! # vslam records v1
//! t,id,y1,y2,y3,depth
//! 0,3,0.1,0.2,0.97,          <- empty depth column means "use the default"
//! ```
//!
//! ```text
//! # vslam velocities v1
//! t,wx,wy,wz,vx,vy,vz
//! ```

use std::io::{BufRead, Write};

use anyhow::{anyhow, Context};
use vslam_core::geometry::{Bearing, Vec3};
use vslam_core::simulation::VelocitySampleConfig;

use crate::error::{CliError, CliResult};

pub const RECORDS_HEADER: &str = "# vslam records v1";
pub const VELOCITIES_HEADER: &str = "# vslam velocities v1";

/// Bearings are renormalized on ingest; deviations beyond this are data
/// errors.
pub const INGEST_UNIT_TOL: f64 = 1e-6;

/// One sighting of one landmark.
#[derive(Clone, Debug)]
pub struct Measurement {
    pub id: u64,
    pub bearing: Bearing,
    pub depth: Option<f64>,
}

/// All sightings sharing a timestamp.
#[derive(Clone, Debug)]
pub struct Frame {
    pub t: f64,
    pub measurements: Vec<Measurement>,
}

fn parse_f64(field: &str, what: &str, record: usize) -> CliResult<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| CliError::data(anyhow!("record {record}: bad {what} field {field:?}")))
}

/// Parses the records file into frames. Rows sharing a timestamp form one
/// frame; timestamps must be non-decreasing row to row and strictly
/// increasing frame to frame. Errors name the offending record number
/// (1-based data rows).
pub fn read_records<R: BufRead>(reader: R) -> CliResult<Vec<Frame>> {
    let mut frames: Vec<Frame> = Vec::new();
    let mut record = 0usize;
    for (line_index, line) in reader.lines().enumerate() {
        let line = line
            .with_context(|| format!("reading records line {}", line_index + 1))
            .map_err(CliError::data)?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with("t,") {
            continue;
        }
        record += 1;
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 5 && fields.len() != 6 {
            return Err(CliError::data(anyhow!(
                "record {record}: expected 5 or 6 fields, found {}",
                fields.len()
            )));
        }
        let t = parse_f64(fields[0], "time", record)?;
        let id = fields[1]
            .trim()
            .parse::<u64>()
            .map_err(|_| CliError::data(anyhow!("record {record}: bad id field {:?}", fields[1])))?;
        let raw = Vec3::new(
            parse_f64(fields[2], "bearing", record)?,
            parse_f64(fields[3], "bearing", record)?,
            parse_f64(fields[4], "bearing", record)?,
        );
        if (raw.norm() - 1.0).abs() > INGEST_UNIT_TOL {
            return Err(CliError::data(anyhow!(
                "record {record}: bearing norm {:.6} deviates from 1 beyond {INGEST_UNIT_TOL}",
                raw.norm()
            )));
        }
        let bearing = Bearing::from_vector(raw)
            .map_err(|e| CliError::data(anyhow!("record {record}: {e}")))?;
        let depth = match fields.get(5).map(|s| s.trim()) {
            None | Some("") => None,
            Some(s) => Some(
                s.parse::<f64>()
                    .map_err(|_| CliError::data(anyhow!("record {record}: bad depth field {s:?}")))?,
            ),
        };

        match frames.last_mut() {
            Some(frame) if frame.t == t => {
                if frame.measurements.iter().any(|m| m.id == id) {
                    return Err(CliError::data(anyhow!(
                        "record {record}: duplicate landmark id {id} at t = {t}"
                    )));
                }
                frame.measurements.push(Measurement { id, bearing, depth });
            }
            Some(frame) if t < frame.t => {
                return Err(CliError::data(anyhow!(
                    "record {record}: time {t} is not monotone (previous frame at {})",
                    frame.t
                )));
            }
            _ => frames.push(Frame {
                t,
                measurements: vec![Measurement { id, bearing, depth }],
            }),
        }
    }
    Ok(frames)
}

pub fn write_records<W: Write>(mut writer: W, frames: &[Frame]) -> CliResult<()> {
    writeln!(writer, "{RECORDS_HEADER}").map_err(|e| CliError::usage(anyhow!(e)))?;
    writeln!(writer, "t,id,y1,y2,y3,depth").map_err(|e| CliError::usage(anyhow!(e)))?;
    for frame in frames {
        for m in &frame.measurements {
            let d = m.bearing.direction();
            let depth = m.depth.map(|v| v.to_string()).unwrap_or_default();
            writeln!(writer, "{},{},{},{},{},{}", frame.t, m.id, d.x, d.y, d.z, depth)
                .map_err(|e| CliError::usage(anyhow!(e)))?;
        }
    }
    Ok(())
}

/// Parses the velocity samples; timestamps must be strictly increasing.
pub fn read_velocities<R: BufRead>(reader: R) -> CliResult<Vec<VelocitySampleConfig>> {
    let mut samples: Vec<VelocitySampleConfig> = Vec::new();
    let mut record = 0usize;
    for (line_index, line) in reader.lines().enumerate() {
        let line = line
            .with_context(|| format!("reading velocities line {}", line_index + 1))
            .map_err(CliError::data)?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with("t,") {
            continue;
        }
        record += 1;
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 7 {
            return Err(CliError::data(anyhow!(
                "velocity record {record}: expected 7 fields, found {}",
                fields.len()
            )));
        }
        let values: Vec<f64> = fields
            .iter()
            .map(|f| parse_f64(f, "velocity", record))
            .collect::<CliResult<_>>()?;
        if let Some(last) = samples.last() {
            if values[0] <= last.t {
                return Err(CliError::data(anyhow!(
                    "velocity record {record}: time {} is not strictly increasing",
                    values[0]
                )));
            }
        }
        samples.push(VelocitySampleConfig {
            t: values[0],
            angular: [values[1], values[2], values[3]],
            linear: [values[4], values[5], values[6]],
        });
    }
    if samples.is_empty() {
        return Err(CliError::data(anyhow!("velocity file holds no samples")));
    }
    Ok(samples)
}

pub fn write_velocities<W: Write>(
    mut writer: W,
    samples: &[VelocitySampleConfig],
) -> CliResult<()> {
    writeln!(writer, "{VELOCITIES_HEADER}").map_err(|e| CliError::usage(anyhow!(e)))?;
    writeln!(writer, "t,wx,wy,wz,vx,vy,vz").map_err(|e| CliError::usage(anyhow!(e)))?;
    for s in samples {
        writeln!(
            writer,
            "{},{},{},{},{},{},{}",
            s.t, s.angular[0], s.angular[1], s.angular[2], s.linear[0], s.linear[1], s.linear[2]
        )
        .map_err(|e| CliError::usage(anyhow!(e)))?;
    }
    Ok(())
}


/// Reference trajectory rows `(t, x, y, z)` for alignment.
pub fn read_reference<R: BufRead>(reader: R) -> CliResult<Vec<(f64, Vec3)>> {
    let mut rows = Vec::new();
    let mut record = 0usize;
    for line in reader.lines() {
        let line = line.map_err(|e| CliError::data(anyhow!(e)))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with("t,") {
            continue;
        }
        record += 1;
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() < 4 {
            return Err(CliError::data(anyhow!(
                "reference record {record}: expected at least 4 fields"
            )));
        }
        let t = parse_f64(fields[0], "time", record)?;
        rows.push((
            t,
            Vec3::new(
                parse_f64(fields[1], "position", record)?,
                parse_f64(fields[2], "position", record)?,
                parse_f64(fields[3], "position", record)?,
            ),
        ));
    }
    Ok(rows)
}
