//! Deterministic synthetic scenes: pole worlds, vehicle trajectories, sensor
//! rigs, feature rendering and input distortions.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, UnitSphere};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{
    CalibrationSet, FeatureFrame, FrameStreams, SensorConfig, Stage, VehicleGeometry,
};
use crate::features::{transform_pole, Frame};
use crate::geometry::EulerAngles;
use crate::{Pole, Pose, TimedPose};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scenario parameters: {0}")]
    InvalidParams(String),
    #[error("time {t} outside trajectory span [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },
    #[error("unknown sensor {0}")]
    UnknownSensor(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajectoryKind {
    /// Rounded rectangle driven counter-clockwise; `length`/`width` are the
    /// straight segment lengths.
    Loop {
        length: f64,
        width: f64,
        corner_radius: f64,
    },
    /// Constant-velocity drive along +x.
    Straight,
    /// The vehicle does not move.
    Stationary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RigKind {
    /// Eight 60° sensors around the vehicle.
    Ring8,
    /// Front, rear, left and right sensors with mixed fields of view.
    Quad4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MountedSensor {
    pub config: SensorConfig,
    pub mount: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundGrid {
    pub range_min: f64,
    pub range_max: f64,
    pub range_step: f64,
    /// Bearing spacing (radians).
    pub bearing_step: f64,
}

impl Default for GroundGrid {
    fn default() -> Self {
        Self {
            range_min: 3.0,
            range_max: 21.0,
            range_step: 1.0,
            bearing_step: 1f64.to_radians(),
        }
    }
}

/// Raised ground next to the road, present in a random subset of frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sidewalk {
    /// Fraction of frames containing the sidewalk.
    pub fraction: f64,
    pub height: f64,
    /// Lateral distance from the vehicle axis where the sidewalk starts.
    pub lateral: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioParams {
    pub trajectory: TrajectoryKind,
    pub speed: f64,
    pub rate_hz: f64,
    pub frames: usize,
    /// Poles per square meter.
    pub pole_density: f64,
    /// Poles are kept at distances `[inner, outer]` from the path; `None`
    /// spreads them over `open_area` instead.
    pub corridor: Option<(f64, f64)>,
    /// Side lengths of the open sampling area centered on the path.
    pub open_area: (f64, f64),
    pub pole_height: (f64, f64),
    pub rig: RigKind,
    /// Overrides the built-in rig when non-empty.
    pub sensors: Vec<MountedSensor>,
    pub vehicle: VehicleGeometry,
    pub ground: GroundGrid,
    /// Per-pole detection miss probability.
    pub dropout: Option<f64>,
    pub sidewalk: Option<Sidewalk>,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            trajectory: TrajectoryKind::Loop {
                length: 50.0,
                width: 20.0,
                corner_radius: 8.0,
            },
            speed: 5.0,
            rate_hz: 10.0,
            frames: 300,
            pole_density: 0.02,
            corridor: Some((3.0, 15.0)),
            open_area: (200.0, 200.0),
            pole_height: (3.0, 8.0),
            rig: RigKind::Ring8,
            sensors: Vec::new(),
            vehicle: VehicleGeometry::default(),
            ground: GroundGrid::default(),
            dropout: None,
            sidewalk: None,
        }
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidParams(m.to_string()));
        if !(self.pole_density > 0.0) {
            return bad("pole density must be positive");
        }
        if !(self.rate_hz > 0.0) || self.frames < 2 {
            return bad("need a positive rate and at least two frames");
        }
        if !(self.speed >= 0.0) {
            return bad("speed must be non-negative");
        }
        if let TrajectoryKind::Loop {
            length,
            width,
            corner_radius,
        } = self.trajectory
        {
            if !(length >= 0.0 && width >= 0.0 && corner_radius > 0.0) {
                return bad("loop dimensions must be non-negative with a positive corner radius");
            }
        }
        if let Some((a, b)) = self.corridor {
            if !(a >= 0.0 && b > a) {
                return bad("corridor must satisfy 0 <= inner < outer");
            }
        }
        if !(self.pole_height.0 > 0.0 && self.pole_height.1 >= self.pole_height.0) {
            return bad("pole heights must be positive and ordered");
        }
        if let Some(p) = self.dropout {
            if !(0.0..1.0).contains(&p) {
                return bad("dropout must lie in [0, 1)");
            }
        }
        if self.ground.range_step <= 0.0 || self.ground.bearing_step <= 0.0 {
            return bad("ground grid steps must be positive");
        }
        Ok(())
    }

    pub fn rig_sensors(&self) -> Vec<MountedSensor> {
        if !self.sensors.is_empty() {
            return self.sensors.clone();
        }
        match self.rig {
            RigKind::Ring8 => ring8_rig(),
            RigKind::Quad4 => quad4_rig(),
        }
    }
}

fn mounted(id: &str, fov_deg: f64, xyz: [f64; 3], rpy_deg: [f64; 3]) -> MountedSensor {
    let [r, p, y] = rpy_deg.map(f64::to_radians);
    MountedSensor {
        config: SensorConfig::new(id, fov_deg.to_radians(), 40.0),
        mount: Pose::from_euler(Vector3::from(xyz), EulerAngles::new(r, p, y)),
    }
}

/// Eight 60° sensors on the boundary of the default vehicle footprint.
pub fn ring8_rig() -> Vec<MountedSensor> {
    let xyz = [
        [3.8, 0.0, 0.6],
        [3.8, 0.95, 0.7],
        [1.4, 0.95, 1.0],
        [-1.0, 0.95, 0.9],
        [-1.0, 0.0, 0.8],
        [-1.0, -0.95, 0.9],
        [1.4, -0.95, 1.0],
        [3.8, -0.95, 0.7],
    ];
    let roll = [0.2, -0.3, 0.1, 0.25, -0.15, 0.3, -0.2, 0.05];
    let pitch = [-0.1, 0.2, -0.25, 0.15, 0.3, -0.05, 0.1, -0.2];
    (0..8)
        .map(|k| {
            mounted(
                &format!("s{k}"),
                60.0,
                xyz[k],
                [roll[k], pitch[k], 45.0 * k as f64],
            )
        })
        .collect()
}

/// Front, rear, left and right sensors.
pub fn quad4_rig() -> Vec<MountedSensor> {
    vec![
        mounted("front", 120.0, [3.8, 0.0, 0.5], [0.2, -0.3, 0.0]),
        mounted("rear", 110.0, [-1.0, 0.0, 0.6], [-0.2, 0.25, 180.0]),
        mounted("left", 100.0, [1.4, 0.95, 1.1], [0.3, 0.1, 90.0]),
        mounted("right", 100.0, [1.4, -0.95, 1.1], [-0.1, 0.2, -90.0]),
    ]
}

/// A change of one sensor's mount from `time` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MountChange {
    pub sensor_id: String,
    pub time: f64,
    pub delta: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub params: ScenarioParams,
    pub poles_world: Vec<Pole>,
    pub trajectory: Vec<TimedPose>,
    pub sensors: Vec<MountedSensor>,
    pub changes: Vec<MountChange>,
}

/// Applies a mount change: translations add, rotations compose on the
/// vehicle side (`R ← R_δ·R`).
pub fn apply_mount_delta(mount: &Pose, delta: &Pose) -> Pose {
    Pose::new(
        mount.translation() + delta.translation(),
        delta.rotation() * mount.rotation(),
    )
}

impl Scenario {
    pub fn sensor_configs(&self) -> Vec<SensorConfig> {
        self.sensors.iter().map(|s| s.config.clone()).collect()
    }

    pub fn vehicle(&self) -> VehicleGeometry {
        self.params.vehicle
    }

    /// True mount of one sensor at time `t`.
    pub fn mount_at(&self, index: usize, t: f64) -> Pose {
        let s = &self.sensors[index];
        self.changes
            .iter()
            .filter(|c| c.sensor_id == s.config.id && t >= c.time)
            .fold(s.mount, |acc, c| apply_mount_delta(&acc, &c.delta))
    }

    pub fn true_calibration(&self, t: f64) -> CalibrationSet {
        let mut c = CalibrationSet::from_poses(
            Stage::Full,
            self.sensors
                .iter()
                .enumerate()
                .map(|(i, s)| (s.config.id.clone(), self.mount_at(i, t))),
        );
        c.timestamp = Some(t);
        c
    }

    pub fn time_span(&self) -> (f64, f64) {
        (
            self.trajectory.first().map_or(0.0, |p| p.timestamp),
            self.trajectory.last().map_or(0.0, |p| p.timestamp),
        )
    }
}

/// Signed distance from `p` to an axis-aligned rectangle.
fn rect_signed_distance(p: (f64, f64), min: (f64, f64), max: (f64, f64)) -> f64 {
    let cx = 0.5 * (min.0 + max.0);
    let cy = 0.5 * (min.1 + max.1);
    let hx = 0.5 * (max.0 - min.0);
    let hy = 0.5 * (max.1 - min.1);
    let dx = (p.0 - cx).abs() - hx;
    let dy = (p.1 - cy).abs() - hy;
    let outside = dx.max(0.0).hypot(dy.max(0.0));
    outside + dx.max(dy).min(0.0)
}

/// Vehicle pose after driving `s` meters.
fn path_pose(kind: &TrajectoryKind, s: f64) -> (f64, f64, f64) {
    match *kind {
        TrajectoryKind::Stationary => (0.0, 0.0, 0.0),
        TrajectoryKind::Straight => (s, 0.0, 0.0),
        TrajectoryKind::Loop {
            length,
            width,
            corner_radius: rc,
        } => {
            let arc = FRAC_PI_2 * rc;
            let perimeter = 2.0 * (length + width) + 4.0 * arc;
            let mut s = s.rem_euclid(perimeter);
            // inner rectangle corners, counter-clockwise from the bottom-left
            let corners = [(length, 0.0), (length, width), (0.0, width), (0.0, 0.0)];
            let sides = [length, width, length, width];
            let mut start = (0.0, -rc);
            let mut heading = 0.0f64;
            for k in 0..4 {
                if s <= sides[k] {
                    return (start.0 + s * heading.cos(), start.1 + s * heading.sin(), heading);
                }
                s -= sides[k];
                let c = corners[k];
                if s <= arc {
                    let a = heading - FRAC_PI_2 + s / rc;
                    return (c.0 + rc * a.cos(), c.1 + rc * a.sin(), heading + s / rc);
                }
                s -= arc;
                heading += FRAC_PI_2;
                let a = heading - FRAC_PI_2;
                start = (c.0 + rc * a.cos(), c.1 + rc * a.sin());
            }
            (start.0, start.1, heading)
        }
    }
}

fn path_distance(kind: &TrajectoryKind, p: (f64, f64), total: f64) -> f64 {
    match *kind {
        TrajectoryKind::Stationary => p.0.hypot(p.1),
        TrajectoryKind::Straight => {
            if p.0 < 0.0 {
                p.0.hypot(p.1)
            } else if p.0 > total {
                (p.0 - total).hypot(p.1)
            } else {
                p.1.abs()
            }
        }
        TrajectoryKind::Loop {
            length,
            width,
            corner_radius,
        } => (rect_signed_distance(p, (0.0, 0.0), (length, width)) - corner_radius).abs(),
    }
}

fn path_bbox(kind: &TrajectoryKind, total: f64) -> ((f64, f64), (f64, f64)) {
    match *kind {
        TrajectoryKind::Stationary => ((0.0, 0.0), (0.0, 0.0)),
        TrajectoryKind::Straight => ((0.0, 0.0), (total, 0.0)),
        TrajectoryKind::Loop {
            length,
            width,
            corner_radius,
        } => (
            (-corner_radius, -corner_radius),
            (length + corner_radius, width + corner_radius),
        ),
    }
}

/// Builds a reproducible scenario from parameters and a seed.
pub fn generate_scenario(params: &ScenarioParams, seed: u64) -> Result<Scenario, SimError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = 1.0 / params.rate_hz;
    let duration = dt * (params.frames - 1) as f64;
    let total = params.speed * duration;
    let trajectory: Vec<TimedPose> = (0..params.frames)
        .map(|k| {
            let t = k as f64 * dt;
            let (x, y, yaw) = path_pose(&params.trajectory, params.speed * t);
            TimedPose::new(
                t,
                Pose::from_euler(Vector3::new(x, y, 0.0), EulerAngles::yaw_only(yaw)),
            )
        })
        .collect();

    let (lo, hi) = match params.corridor {
        Some((_, outer)) => {
            let (a, b) = path_bbox(&params.trajectory, total);
            ((a.0 - outer, a.1 - outer), (b.0 + outer, b.1 + outer))
        }
        None => {
            let (a, b) = path_bbox(&params.trajectory, total);
            let c = (0.5 * (a.0 + b.0), 0.5 * (a.1 + b.1));
            let h = (0.5 * params.open_area.0, 0.5 * params.open_area.1);
            ((c.0 - h.0, c.1 - h.1), (c.0 + h.0, c.1 + h.1))
        }
    };
    let area = (hi.0 - lo.0) * (hi.1 - lo.1);
    let mean = params.pole_density * area;
    let count = if mean > 0.0 {
        Poisson::new(mean)
            .map_err(|e| SimError::InvalidParams(e.to_string()))?
            .sample(&mut rng) as usize
    } else {
        0
    };
    let mut poles_world = Vec::with_capacity(count);
    for _ in 0..count {
        let x = rng.random_range(lo.0..=hi.0);
        let y = rng.random_range(lo.1..=hi.1);
        let h = rng.random_range(params.pole_height.0..=params.pole_height.1);
        let keep = match params.corridor {
            Some((inner, outer)) => {
                let d = path_distance(&params.trajectory, (x, y), total);
                d >= inner && d <= outer
            }
            None => true,
        };
        if keep {
            poles_world.push(Pole::new(
                Vector3::new(x, y, 0.0),
                Vector3::new(x, y, h),
                Frame::World,
            ));
        }
    }

    Ok(Scenario {
        seed,
        params: params.clone(),
        poles_world,
        trajectory,
        sensors: params.rig_sensors(),
        changes: Vec::new(),
    })
}

/// Returns a copy of the scenario where `sensor_id`'s mount is changed by
/// `delta` from `at_time` on.
pub fn perturb_mount(
    scn: &Scenario,
    sensor_id: &str,
    delta: Pose,
    at_time: f64,
) -> Result<Scenario, SimError> {
    let (start, end) = scn.time_span();
    if !(at_time >= start && at_time <= end) {
        return Err(SimError::OutOfRange {
            t: at_time,
            start,
            end,
        });
    }
    if !scn.sensors.iter().any(|s| s.config.id == sensor_id) {
        return Err(SimError::UnknownSensor(sensor_id.to_string()));
    }
    let mut out = scn.clone();
    out.changes.push(MountChange {
        sensor_id: sensor_id.to_string(),
        time: at_time,
        delta,
    });
    Ok(out)
}

/// Ground samples of one sensor in the vehicle frame (flat ground at z = 0).
fn ground_samples(
    grid: &GroundGrid,
    sensor: &SensorConfig,
    mount: &Pose,
) -> Vec<Vector3<f64>> {
    let yaw = mount.euler().yaw;
    let origin = mount.translation();
    let half = 0.5 * sensor.fov.min(2.0 * PI);
    let nb = (2.0 * half / grid.bearing_step).floor() as i64;
    let mut out = Vec::new();
    let mut r = grid.range_min;
    while r <= grid.range_max.min(sensor.max_range) + 1e-9 {
        for k in 0..=nb {
            let b = yaw - half + k as f64 * grid.bearing_step;
            out.push(Vector3::new(origin.x + r * b.cos(), origin.y + r * b.sin(), 0.0));
        }
        r += grid.range_step;
    }
    out
}

/// Renders per-sensor feature frames and the egomotion stream.
pub fn render_frames(scn: &Scenario) -> (FrameStreams, Vec<TimedPose>) {
    let p = &scn.params;
    // independent stream so rendering never disturbs scenario sampling
    let mut rng = ChaCha8Rng::seed_from_u64(scn.seed ^ 0x5eed_f00d_cafe_d00d);
    let mut streams = FrameStreams::new();
    for s in &scn.sensors {
        streams.insert(s.config.id.clone(), Vec::with_capacity(scn.trajectory.len()));
    }
    for tp in &scn.trajectory {
        let sidewalk_now = p
            .sidewalk
            .filter(|sw| rng.random::<f64>() < sw.fraction);
        for (i, s) in scn.sensors.iter().enumerate() {
            let mount = scn.mount_at(i, tp.timestamp);
            let world_to_sensor = tp.pose.compose(&mount).inverse();
            let reach = s.config.max_range + 1.0;
            let here = tp.pose.translation() + tp.pose.rotation() * mount.translation();
            let mut frame = FeatureFrame::new(s.config.id.clone(), tp.timestamp);
            for pole in &scn.poles_world {
                if (pole.base - here).xy().norm() > reach {
                    continue;
                }
                let mut local = transform_pole(&world_to_sensor, pole);
                if !s.config.sees(&local.base) {
                    continue;
                }
                if let Some(pd) = p.dropout {
                    if rng.random::<f64>() < pd {
                        continue;
                    }
                }
                local.frame = Frame::Sensor;
                frame.poles.push(local);
            }
            let vehicle_to_sensor = mount.inverse();
            frame.ground = ground_samples(&p.ground, &s.config, &mount)
                .into_iter()
                .map(|mut g| {
                    if let Some(sw) = sidewalk_now {
                        if g.y.abs() > sw.lateral {
                            g.z += sw.height;
                        }
                    }
                    vehicle_to_sensor.transform_point(&g)
                })
                .collect();
            streams.get_mut(&s.config.id).expect("sensor stream").push(frame);
        }
    }
    (streams, scn.trajectory.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionKind {
    PolesPosition,
    PolesOrientation,
    PolesPose,
    PointsRadial,
    Combined,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 5] = [
        DistortionKind::PolesPosition,
        DistortionKind::PolesOrientation,
        DistortionKind::PolesPose,
        DistortionKind::PointsRadial,
        DistortionKind::Combined,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DistortionKind::PolesPosition => "poles_position",
            DistortionKind::PolesOrientation => "poles_orientation",
            DistortionKind::PolesPose => "poles_pose",
            DistortionKind::PointsRadial => "points_radial",
            DistortionKind::Combined => "combined",
        }
    }

    fn position(&self) -> bool {
        matches!(self, Self::PolesPosition | Self::PolesPose | Self::Combined)
    }

    fn orientation(&self) -> bool {
        matches!(self, Self::PolesOrientation | Self::PolesPose | Self::Combined)
    }

    fn radial(&self) -> bool {
        matches!(self, Self::PointsRadial | Self::Combined)
    }
}

impl std::str::FromStr for DistortionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .find(|k| k.name() == s)
            .copied()
            .ok_or_else(|| format!("unknown distortion kind '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    /// Meters for pole positions, radians for orientations, relative range
    /// change for ground points.
    pub amount: f64,
    pub seed: u64,
}

/// Perturbs features in place of a detector's errors. Deterministic in the seed.
pub fn apply_distortion(frames: &FrameStreams, spec: &DistortionSpec) -> FrameStreams {
    let mut out = frames.clone();
    let a = spec.amount.max(0.0);
    if a == 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let kind = spec.kind;
    for stream in out.values_mut() {
        for frame in stream.iter_mut() {
            for pole in frame.poles.iter_mut() {
                if kind.orientation() {
                    let axis: [f64; 3] = UnitSphere.sample(&mut rng);
                    let angle = rng.random_range(-a..=a);
                    let q = UnitQuaternion::from_axis_angle(
                        &Unit::new_normalize(Vector3::from(axis)),
                        angle,
                    );
                    let c = pole.centroid();
                    pole.base = c + q * (pole.base - c);
                    pole.top = c + q * (pole.top - c);
                }
                if kind.position() {
                    let d = Vector3::new(rng.random_range(-a..=a), rng.random_range(-a..=a), 0.0);
                    pole.base += d;
                    pole.top += d;
                }
            }
            if kind.radial() {
                for g in frame.ground.iter_mut() {
                    *g *= 1.0 + rng.random_range(-a..=a);
                }
            }
        }
    }
    out
}
