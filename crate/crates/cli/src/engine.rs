//! Streaming engine shared by simulate and replay: feeds measurement frames
//! through the observer with the landmark lifecycle (register after two
//! sightings, drop after two consecutive missed frames).
//!
//! Frame k is ingested when it arrives and its measurements are held until
//! frame k+1 fixes the step length; the emitted row for frame k carries the
//! state at time `t_k` and the innovation of the step taken from it.

use std::collections::BTreeMap;

use anyhow::anyhow;
use vslam_core::geometry::{Bearing, Pose, RigidVelocity, Vec3};
use vslam_core::observer::{ObserverConfig, ObserverState};
use vslam_core::vslam_group::TotalState;

use crate::error::{CliError, CliResult};
use crate::records::Frame;

#[derive(Clone, Debug)]
pub struct EngineConfig {
    pub observer: ObserverConfig,
    /// Sightings required before a landmark enters the state.
    pub sightings_to_add: u32,
    /// Consecutive missed frames after which a landmark is dropped.
    pub misses_to_remove: u32,
}

impl EngineConfig {
    pub fn new(observer: ObserverConfig) -> Self {
        EngineConfig {
            observer,
            sightings_to_add: 2,
            misses_to_remove: 2,
        }
    }
}

/// Per-landmark entry of an emitted row.
#[derive(Clone, Debug)]
pub struct LandmarkRow {
    pub id: u64,
    pub position: Vec3,
    pub range: f64,
    /// Angle between the output error and the landmark's origin bearing.
    pub error_angle: f64,
    /// Filled when ground truth is supplied.
    pub storage: Option<f64>,
    pub range_ratio: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct EngineRow {
    pub t: f64,
    pub estimate_pose: Pose,
    pub landmarks: Vec<LandmarkRow>,
    pub innovation_pose: RigidVelocity,
    pub max_frame_innovation: f64,
    pub max_scale_innovation: f64,
    pub wls_condition: f64,
    pub wls_degenerate: bool,
    pub rejected_substeps: u32,
}

#[derive(Clone, Debug)]
pub struct EngineOutput {
    pub rows: Vec<EngineRow>,
    /// Final landmark estimates, in registration order.
    pub map: Vec<(u64, Vec3)>,
    pub final_estimate: TotalState,
    pub final_ids: Vec<u64>,
    pub rejected_substeps: u64,
    pub degenerate_steps: u64,
    pub added: Vec<(u64, f64)>,
    pub removed: Vec<(u64, f64)>,
}

/// Ground truth provider for simulation runs: the configuration at a given
/// time, with landmark ids indexing its landmark list.
pub type TruthFn<'a> = &'a dyn Fn(f64) -> TotalState;

pub fn run_stream<I>(
    frames: I,
    velocity: &dyn Fn(f64) -> RigidVelocity,
    cfg: &EngineConfig,
    truth: Option<TruthFn<'_>>,
) -> CliResult<EngineOutput>
where
    I: IntoIterator<Item = CliResult<Frame>>,
{
    let mut observer = ObserverState::empty(Pose::identity());
    let mut pending: BTreeMap<u64, u32> = BTreeMap::new();
    let mut misses: BTreeMap<u64, u32> = BTreeMap::new();

    let mut rows: Vec<EngineRow> = Vec::new();
    let mut added = Vec::new();
    let mut removed = Vec::new();
    let mut rejected_total = 0u64;
    let mut degenerate_total = 0u64;

    struct Held {
        t: f64,
        aligned: Vec<Option<Bearing>>,
        row: EngineRow,
    }
    let mut held: Option<Held> = None;
    let mut frame_index = 0usize;

    for frame in frames {
        let frame = frame?;
        frame_index += 1;
        if let Some(h) = &held {
            if frame.t <= h.t {
                return Err(CliError::data(anyhow!(
                    "frame {frame_index}: time {} is not strictly increasing (previous {})",
                    frame.t,
                    h.t
                )));
            }
        }

        // Take the step the previous frame was waiting for.
        if let Some(mut h) = held.take() {
            let dt = frame.t - h.t;
            let mut step_cfg = cfg.observer.clone();
            step_cfg.dt = dt;
            let u = velocity(h.t);
            let (innovation, diag) = observer
                .step(&u, &h.aligned, &step_cfg)
                .map_err(|e| CliError::numerical(anyhow!("step at frame {frame_index}: {e}")))?;
            h.row.innovation_pose = innovation.pose;
            h.row.max_frame_innovation = innovation.max_frame_norm();
            h.row.max_scale_innovation = innovation.max_scale_abs();
            h.row.wls_condition = diag.wls.condition();
            h.row.wls_degenerate = diag.wls.is_degenerate();
            h.row.rejected_substeps = diag.rejected_substeps;
            rejected_total += diag.rejected_substeps as u64;
            if diag.wls.is_degenerate() {
                degenerate_total += 1;
            }
            rows.push(h.row);
        }

        // Lifecycle against this frame's sightings.
        let mut seen: BTreeMap<u64, (Bearing, Option<f64>)> = BTreeMap::new();
        for m in &frame.measurements {
            if seen.insert(m.id, (m.bearing, m.depth)).is_some() {
                return Err(CliError::data(anyhow!(
                    "frame {frame_index}: duplicate landmark id {} at t = {}",
                    m.id,
                    frame.t
                )));
            }
        }

        let registered: Vec<u64> = observer.ids().to_vec();
        for id in registered {
            if seen.contains_key(&id) {
                misses.insert(id, 0);
            } else {
                let count = misses.entry(id).or_insert(0);
                *count += 1;
                if *count >= cfg.misses_to_remove {
                    observer
                        .remove_landmark(id)
                        .map_err(|e| CliError::numerical(anyhow!(e)))?;
                    misses.remove(&id);
                    removed.push((id, frame.t));
                }
            }
        }
        for (id, (bearing, depth)) in &seen {
            if observer.index_of(*id).is_some() {
                continue;
            }
            let count = pending.entry(*id).or_insert(0);
            *count += 1;
            if *count >= cfg.sightings_to_add {
                let depth = depth.unwrap_or(cfg.observer.initial_depth);
                observer
                    .add_landmark(*id, bearing, depth, &cfg.observer)
                    .map_err(|e| CliError::data(anyhow!("frame {frame_index}: {e}")))?;
                pending.remove(id);
                misses.insert(*id, 0);
                added.push((*id, frame.t));
            }
        }

        // Hold this frame's measurements for the next step and capture the
        // row contents at its timestamp.
        let aligned: Vec<Option<Bearing>> = observer
            .ids()
            .iter()
            .map(|id| seen.get(id).map(|(b, _)| *b))
            .collect();
        let row = capture_row(frame.t, &observer, &aligned, cfg, truth)?;
        held = Some(Held {
            t: frame.t,
            aligned,
            row,
        });
    }

    // Final frame: no step follows it.
    if let Some(h) = held {
        rows.push(h.row);
    }

    let final_estimate = observer.state_estimate();
    let map = observer
        .ids()
        .iter()
        .zip(final_estimate.landmarks())
        .map(|(id, p)| (*id, *p))
        .collect();
    Ok(EngineOutput {
        rows,
        map,
        final_ids: observer.ids().to_vec(),
        final_estimate,
        rejected_substeps: rejected_total,
        degenerate_steps: degenerate_total,
        added,
        removed,
    })
}

fn capture_row(
    t: f64,
    observer: &ObserverState,
    aligned: &[Option<Bearing>],
    cfg: &EngineConfig,
    truth: Option<TruthFn<'_>>,
) -> CliResult<EngineRow> {
    let estimate = observer.state_estimate();
    let diagnostics = observer
        .diagnose(aligned)
        .map_err(|e| CliError::numerical(anyhow!(e)))?;
    let truth_state = truth.map(|f| f(t));

    let mut landmarks = Vec::with_capacity(observer.landmark_count());
    for (i, id) in observer.ids().iter().enumerate() {
        let position = *estimate.landmark(i);
        let range = observer.estimated_ranges()[i];
        let (mut storage_value, mut ratio) = (None, None);
        let error_angle = match &diagnostics[i] {
            Some(d) => {
                if let Some(world) = &truth_state {
                    let true_range =
                        (world.landmark(*id as usize) - world.pose().translation()).norm();
                    ratio = Some(d.range / true_range);
                    storage_value = vslam_core::observer::storage(
                        &d.output_error,
                        &observer.origin_bearings()[i],
                        d.range,
                        true_range,
                        cfg.observer.depth_gain,
                    )
                    .ok();
                }
                d.error_angle
            }
            None => f64::NAN,
        };
        landmarks.push(LandmarkRow {
            id: *id,
            position,
            range,
            error_angle,
            storage: storage_value,
            range_ratio: ratio,
        });
    }

    Ok(EngineRow {
        t,
        estimate_pose: *estimate.pose(),
        landmarks,
        innovation_pose: RigidVelocity::zero(),
        max_frame_innovation: 0.0,
        max_scale_innovation: 0.0,
        wls_condition: f64::NAN,
        wls_degenerate: false,
        rejected_substeps: 0,
    })
}
