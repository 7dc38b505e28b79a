//! Temporal pole matching within a sensor and cross-sensor candidate pairs.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{CalibrationSet, FeatureFrame, FrameStreams, SensorConfig};
use crate::features::{pole_pole_distance, transform_pole};
use crate::geometry::wrap_angle;
use crate::{Pole, Pose};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssociationError {
    #[error("no pair of sensors has overlapping fields of view")]
    NoNeighbors,
    #[error("calibration guess has no entry for sensor {0}")]
    MissingSensor(String),
}

/// Pole correspondences between two consecutive frames of one sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalMatchSet {
    pub t_prev: f64,
    pub t_curr: f64,
    /// `(pole at t_prev, pole at t_curr)`, each in its own sensor frame.
    pub pairs: Vec<(Pole, Pole)>,
}

impl TemporalMatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Distance used for matching; the mean of both directed pole distances so
/// that the result does not depend on which frame is called "previous".
pub fn symmetric_pole_distance(p: &Pole, q: &Pole) -> Option<f64> {
    let a = pole_pole_distance(p, q).ok()?;
    let b = pole_pole_distance(q, p).ok()?;
    Some((0.5 * (a * a + b * b)).sqrt())
}

/// Greedy one-to-one assignment by ascending distance. Returns `(i, j, d)`.
pub fn greedy_assign(
    prev: &[Pole],
    curr: &[Pole],
    max_dist: f64,
) -> Vec<(usize, usize, f64)> {
    let mut cand = Vec::new();
    for (i, p) in prev.iter().enumerate() {
        for (j, q) in curr.iter().enumerate() {
            // cheap reject on centroid separation (a lower bound up to √2)
            if (p.centroid() - q.centroid()).xy().norm() > 4.0 * max_dist + 1.0 {
                continue;
            }
            if let Some(d) = symmetric_pole_distance(p, q) {
                if d <= max_dist {
                    cand.push((i, j, d));
                }
            }
        }
    }
    cand.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut used_p = vec![false; prev.len()];
    let mut used_q = vec![false; curr.len()];
    let mut out = Vec::new();
    for (i, j, d) in cand {
        if !used_p[i] && !used_q[j] {
            used_p[i] = true;
            used_q[j] = true;
            out.push((i, j, d));
        }
    }
    out
}

/// Matches poles of two consecutive frames. `predicted` is the sensor-frame
/// increment mapping current coordinates into the previous frame.
pub fn match_consecutive(
    prev: &FeatureFrame,
    curr: &FeatureFrame,
    predicted: Option<&Pose>,
    max_dist: f64,
) -> TemporalMatchSet {
    let mapped: Vec<Pole> = match predicted {
        Some(t) => curr.poles.iter().map(|p| transform_pole(t, p)).collect(),
        None => curr.poles.clone(),
    };
    let pairs = greedy_assign(&prev.poles, &mapped, max_dist)
        .into_iter()
        .map(|(i, j, _)| (prev.poles[i], curr.poles[j]))
        .collect();
    TemporalMatchSet {
        t_prev: prev.timestamp,
        t_curr: curr.timestamp,
        pairs,
    }
}

/// Angular width of the overlap of two wedges, if they overlap.
pub fn overlap_angle(a: &SensorConfig, b: &SensorConfig, yaw_a: f64, yaw_b: f64) -> Option<f64> {
    let diff = wrap_angle(yaw_a - yaw_b).abs();
    let v = 0.5 * (a.fov + b.fov) - diff;
    (v > 0.0).then_some(v)
}

/// Manual overlap region for one sensor pair, as a bearing interval about
/// the vehicle origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WedgeOverride {
    pub sensor_a: String,
    pub sensor_b: String,
    pub bearing_min: f64,
    pub bearing_max: f64,
}

impl WedgeOverride {
    fn applies(&self, a: &str, b: &str) -> bool {
        (self.sensor_a == a && self.sensor_b == b) || (self.sensor_a == b && self.sensor_b == a)
    }

    fn contains(&self, p: &Vector3<f64>, gate: f64) -> bool {
        let r = p.xy().norm();
        let margin = if r > gate { (gate / r).asin() } else { PI };
        let mid = 0.5 * (self.bearing_min + self.bearing_max);
        let half = 0.5 * (self.bearing_max - self.bearing_min).abs();
        wrap_angle(p.y.atan2(p.x) - mid).abs() <= half + margin
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CandidateConfig {
    /// XY distance gate between the two mapped base points (meters).
    pub gate: f64,
    /// Maximum number of candidates per sensor pair.
    pub cap: usize,
    pub overrides: Vec<WedgeOverride>,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        Self {
            gate: 3.0,
            cap: 400,
            overrides: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub sensor_a: String,
    pub sensor_b: String,
    pub pole_a: Pole,
    pub pole_b: Pole,
    pub timestamp: f64,
    pub index: usize,
}

/// A sensor placed in the vehicle frame under some calibration.
#[derive(Debug, Clone, Copy)]
pub struct PlacedSensor<'a> {
    pub config: &'a SensorConfig,
    pub pose: Pose,
}

impl PlacedSensor<'_> {
    /// Whether a disk of radius `gate` around vehicle-frame point `p` touches
    /// this sensor's wedge.
    pub fn wedge_touches(&self, p: &Vector3<f64>, gate: f64) -> bool {
        let d = (p - self.pose.translation()).xy();
        let r = d.norm();
        if r <= gate {
            return true;
        }
        if r > self.config.max_range + gate {
            return false;
        }
        if self.config.fov >= 2.0 * PI {
            return true;
        }
        let yaw = self.pose.euler().yaw;
        let margin = (gate / r).min(1.0).asin();
        wrap_angle(d.y.atan2(d.x) - yaw).abs() <= 0.5 * self.config.fov + margin
    }
}

/// Neighboring sensor pairs `(i, j)` with `i < j` in `sensors` order.
pub fn neighbor_pairs(
    sensors: &[SensorConfig],
    calib: &CalibrationSet,
) -> Result<Vec<(usize, usize)>, AssociationError> {
    let mut yaws = Vec::with_capacity(sensors.len());
    for s in sensors {
        yaws.push(
            calib
                .yaw(&s.id)
                .ok_or_else(|| AssociationError::MissingSensor(s.id.clone()))?,
        );
    }
    let mut out = Vec::new();
    for i in 0..sensors.len() {
        for j in i + 1..sensors.len() {
            if overlap_angle(&sensors[i], &sensors[j], yaws[i], yaws[j]).is_some() {
                out.push((i, j));
            }
        }
    }
    Ok(out)
}

/// Indices `floor(k·n/cap)` for `k < cap`, or all of `0..n`.
pub fn stride_subsample(n: usize, cap: usize) -> Vec<usize> {
    if n <= cap {
        (0..n).collect()
    } else {
        (0..cap).map(|k| k * n / cap).collect()
    }
}

/// Pairs of frames of two streams sharing a timestamp.
pub fn common_frames<'a>(
    a: &'a [FeatureFrame],
    b: &'a [FeatureFrame],
) -> Vec<(&'a FeatureFrame, &'a FeatureFrame)> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let (ta, tb) = (a[i].timestamp, b[j].timestamp);
        if (ta - tb).abs() <= 1e-9 {
            out.push((&a[i], &b[j]));
            i += 1;
            j += 1;
        } else if ta < tb {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

/// Builds cross-sensor candidate pole pairs inside overlap wedges.
pub fn build_candidates(
    frames: &FrameStreams,
    calib_guess: &CalibrationSet,
    sensors: &[SensorConfig],
    config: &CandidateConfig,
) -> Result<Vec<CandidatePair>, AssociationError> {
    let pairs = neighbor_pairs(sensors, calib_guess)?;
    if pairs.is_empty() {
        return Err(AssociationError::NoNeighbors);
    }
    let empty = Vec::new();
    let gate = config.gate;
    let mut out = Vec::new();
    for (ia, ib) in pairs {
        let (sa, sb) = (&sensors[ia], &sensors[ib]);
        let pa = PlacedSensor {
            config: sa,
            pose: calib_guess.sensors[&sa.id],
        };
        let pb = PlacedSensor {
            config: sb,
            pose: calib_guess.sensors[&sb.id],
        };
        let over = config.overrides.iter().find(|o| o.applies(&sa.id, &sb.id));
        let inside = |p: &Vector3<f64>| match over {
            Some(o) => o.contains(p, gate),
            None => pa.wedge_touches(p, gate) && pb.wedge_touches(p, gate),
        };
        let fa = frames.get(&sa.id).unwrap_or(&empty);
        let fb = frames.get(&sb.id).unwrap_or(&empty);
        let mut local = Vec::new();
        for (frame_a, frame_b) in common_frames(fa, fb) {
            let va: Vec<_> = frame_a
                .poles
                .iter()
                .map(|p| (p, pa.pose.transform_point(&p.base)))
                .filter(|(_, v)| inside(v))
                .collect();
            let vb: Vec<_> = frame_b
                .poles
                .iter()
                .map(|p| (p, pb.pose.transform_point(&p.base)))
                .filter(|(_, v)| inside(v))
                .collect();
            for (pole_a, xa) in &va {
                for (pole_b, xb) in &vb {
                    if (xa - xb).xy().norm() <= gate {
                        local.push(CandidatePair {
                            sensor_a: sa.id.clone(),
                            sensor_b: sb.id.clone(),
                            pole_a: **pole_a,
                            pole_b: **pole_b,
                            timestamp: frame_a.timestamp,
                            index: 0,
                        });
                    }
                }
            }
        }
        for k in stride_subsample(local.len(), config.cap) {
            let mut c = local[k].clone();
            c.index = out.len();
            out.push(c);
        }
    }
    Ok(out)
}
