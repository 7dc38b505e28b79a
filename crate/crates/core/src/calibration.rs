//! Sensor, vehicle and calibration data shared by all stages.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, EulerAngles};
use crate::{Pole, Pose};

/// Static per-sensor information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub id: String,
    /// Horizontal field of view (radians).
    pub fov: f64,
    pub max_range: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw_guess: Option<f64>,
    #[serde(default)]
    pub roll_guess: f64,
    #[serde(default)]
    pub pitch_guess: f64,
}

impl SensorConfig {
    pub fn new(id: impl Into<String>, fov: f64, max_range: f64) -> Self {
        Self {
            id: id.into(),
            fov,
            max_range,
            yaw_guess: None,
            roll_guess: 0.0,
            pitch_guess: 0.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.fov > 0.0
            && self.fov <= 2.0 * std::f64::consts::PI + 1e-12
            && self.max_range > 0.0
            && self.roll_guess.is_finite()
            && self.pitch_guess.is_finite()
    }

    /// Calibration built from the roll/pitch guesses and a yaw, with zero translation.
    pub fn guess_with_yaw(&self, yaw: f64) -> Pose {
        Pose::from_euler(
            Vector3::zeros(),
            EulerAngles::new(self.roll_guess, self.pitch_guess, yaw),
        )
    }

    /// Whether a sensor-frame point lies inside the horizontal wedge and range.
    pub fn sees(&self, p: &Vector3<f64>) -> bool {
        let r = p.xy().norm();
        if r > self.max_range {
            return false;
        }
        self.fov >= 2.0 * std::f64::consts::PI || p.y.atan2(p.x).abs() <= 0.5 * self.fov
    }
}

/// Vehicle footprint used to bound sensor positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleGeometry {
    pub length: f64,
    pub width: f64,
    pub offset_x: f64,
    pub offset_y: f64,
}

impl Default for VehicleGeometry {
    fn default() -> Self {
        Self {
            length: 4.8,
            width: 1.9,
            offset_x: 1.4,
            offset_y: 0.0,
        }
    }
}

impl VehicleGeometry {
    pub fn x_bounds(&self) -> (f64, f64) {
        (
            -0.5 * self.length + self.offset_x,
            0.5 * self.length + self.offset_x,
        )
    }

    pub fn y_bounds(&self) -> (f64, f64) {
        (
            -0.5 * self.width + self.offset_y,
            0.5 * self.width + self.offset_y,
        )
    }

    pub fn diagonal(&self) -> f64 {
        self.length.hypot(self.width)
    }

    pub fn contains_xy(&self, x: f64, y: f64, tol: f64) -> bool {
        let (x0, x1) = self.x_bounds();
        let (y0, y1) = self.y_bounds();
        x >= x0 - tol && x <= x1 + tol && y >= y0 - tol && y <= y1 + tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    YawOnly,
    XyYaw,
    Full,
}

/// Per-sensor extrinsics `T^V_S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<f64>,
    pub sensors: BTreeMap<String, Pose>,
}

impl CalibrationSet {
    pub fn new(stage: Stage) -> Self {
        Self {
            stage,
            timestamp: None,
            sensors: BTreeMap::new(),
        }
    }

    pub fn from_poses<I, S>(stage: Stage, poses: I) -> Self
    where
        I: IntoIterator<Item = (S, Pose)>,
        S: Into<String>,
    {
        Self {
            stage,
            timestamp: None,
            sensors: poses.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&Pose> {
        self.sensors.get(id)
    }

    pub fn insert(&mut self, id: impl Into<String>, pose: Pose) {
        self.sensors.insert(id.into(), pose);
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.sensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    pub fn yaw(&self, id: &str) -> Option<f64> {
        self.get(id).map(|p| wrap_angle(p.euler().yaw))
    }
}

/// Features observed by one sensor at one timestamp, in that sensor's frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFrame {
    pub sensor_id: String,
    pub timestamp: f64,
    pub poles: Vec<Pole>,
    #[serde(default)]
    pub ground: Vec<Vector3<f64>>,
}

impl FeatureFrame {
    pub fn new(sensor_id: impl Into<String>, timestamp: f64) -> Self {
        Self {
            sensor_id: sensor_id.into(),
            timestamp,
            poles: Vec::new(),
            ground: Vec::new(),
        }
    }
}

/// Per-sensor, time-sorted frame streams.
pub type FrameStreams = BTreeMap<String, Vec<FeatureFrame>>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vehicle_bounds() {
        let v = VehicleGeometry::default();
        let (x0, x1) = v.x_bounds();
        assert!((x0 + 1.0).abs() < 1e-12 && (x1 - 3.8).abs() < 1e-12);
        let (y0, y1) = v.y_bounds();
        assert!((y0 + 0.95).abs() < 1e-12 && (y1 - 0.95).abs() < 1e-12);
        assert!(v.contains_xy(3.8, -0.95, 0.0));
        assert!(!v.contains_xy(3.81, 0.0, 0.0));
    }

    #[test]
    fn sensor_wedge() {
        let s = SensorConfig::new("f", 60f64.to_radians(), 40.0);
        assert!(s.sees(&Vector3::new(10.0, 0.0, -1.0)));
        assert!(s.sees(&Vector3::new(10.0, 5.0, 0.0)));
        assert!(!s.sees(&Vector3::new(10.0, 6.0, 0.0)));
        assert!(!s.sees(&Vector3::new(-10.0, 0.0, 0.0)));
        assert!(!s.sees(&Vector3::new(41.0, 0.0, 0.0)));
    }

    #[test]
    fn calibration_json_round_trip() {
        let mut c = CalibrationSet::new(Stage::Full);
        c.insert(
            "a",
            Pose::from_euler(Vector3::new(1.0, 2.0, 0.5), EulerAngles::new(0.01, -0.02, 2.0)),
        );
        let s = serde_json::to_string(&c).unwrap();
        let back: CalibrationSet = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        assert!(s.contains("\"stage\":\"full\""));
        assert!((c.yaw("a").unwrap() - 2.0).abs() < 1e-12);
    }
}
