//! Streaming calibration monitoring: damped yaw, tilt/height and x/y/yaw
//! updates over a sliding window of recent observations.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::{
    build_candidates, match_consecutive, CandidateConfig, CandidatePair, TemporalMatchSet,
};
use crate::calibration::{CalibrationSet, FeatureFrame, FrameStreams, SensorConfig, Stage, VehicleGeometry};
use crate::geometry::{conjugate_increment, interpolate_pose, relative_increment, wrap_angle, EulerAngles};
use crate::refine::{collect_plane_pairs, refine, PlanePairConfig, PlanePairObservation, RefineConfig};
use crate::yaw::{minimize_yaw, with_yaw, yaw_cost};
use crate::{Pose, TimedPose};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OnlineError {
    #[error("initial calibration has no pose for sensor {0}")]
    MissingSensor(String),
    #[error("invalid online configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnlineConfig {
    /// Number of frame batches kept.
    pub window: usize,
    /// Fraction of the way to each new estimate that is applied per step.
    pub alpha: f64,
    /// Vehicle-frame XY distance below which two sensors' poles are paired (meters).
    pub pair_gate: f64,
    /// Temporal pole matching gate (meters).
    pub match_dist: f64,
    /// Yaw search half-width around the current value (radians).
    pub yaw_window: f64,
    pub yaw_samples: usize,
    /// Box half-width for the yaw change of the x/y/yaw update (radians).
    pub gamma: f64,
    pub rho_xy: f64,
    pub rho_theta: f64,
    /// Travel (meters) and turning (radians) over the window below which
    /// motion is treated as degenerate.
    pub min_travel: f64,
    pub min_turn: f64,
    pub planes: PlanePairConfig,
    /// Plane pairs per sensor pair used by one tilt/height update.
    pub planes_per_update: usize,
    pub refine: RefineConfig,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        let planes = PlanePairConfig {
            max_per_pair: 1,
            ..PlanePairConfig::default()
        };
        let refine = RefineConfig {
            regularize: [true; 6],
            free: [false, false, true, true, true, false],
            max_iters: 5,
            ..RefineConfig::default()
        };
        Self {
            window: 100,
            alpha: 0.2,
            pair_gate: 0.5,
            match_dist: 1.0,
            yaw_window: 5f64.to_radians(),
            yaw_samples: 11,
            gamma: 5f64.to_radians(),
            rho_xy: 0.01,
            rho_theta: 0.01,
            min_travel: 0.5,
            min_turn: 1f64.to_radians(),
            planes,
            planes_per_update: 10,
            refine,
        }
    }
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<(), OnlineError> {
        let bad = |m: &str| Err(OnlineError::Invalid(m.to_string()));
        if self.window < 2 {
            return bad("window must hold at least two batches");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        if !(self.pair_gate > 0.0 && self.match_dist > 0.0) {
            return bad("gates must be positive");
        }
        if !(self.yaw_window > 0.0 && self.gamma > 0.0) {
            return bad("yaw windows must be positive");
        }
        if self.rho_xy < 0.0 || self.rho_theta < 0.0 {
            return bad("regularization weights must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HealthFlag {
    /// The vehicle barely moved over the window; yaw was left alone.
    DegenerateMotion,
    NoTemporalMatches,
    NoGroundPairs,
    NoPolePairs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorStatus {
    pub sensor_id: String,
    pub pose: Pose,
    pub flags: Vec<HealthFlag>,
    pub temporal_matches: usize,
    pub pole_pairs: usize,
    pub plane_pairs: usize,
    /// RMS of the gated cross-sensor pole residuals after the update (meters).
    pub pair_rms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub timestamp: f64,
    pub step: usize,
    pub sensors: Vec<SensorStatus>,
    pub compute_ms: f64,
}

/// Time of the last effective run of each update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LastUpdates {
    pub yaw: Option<f64>,
    pub rph: Option<f64>,
    pub xyyaw: Option<f64>,
}

#[derive(Debug, Clone)]
struct Motion {
    vehicle_inc: Pose,
    matches: TemporalMatchSet,
}

#[derive(Debug, Clone)]
pub struct OnlineState {
    config: OnlineConfig,
    sensors: Vec<SensorConfig>,
    vehicle: VehicleGeometry,
    calibration: CalibrationSet,
    ego: Vec<TimedPose>,
    last_frame: BTreeMap<String, (FeatureFrame, Pose)>,
    motion: BTreeMap<String, VecDeque<Motion>>,
    pole_pairs: VecDeque<Vec<CandidatePair>>,
    plane_pairs: VecDeque<Vec<PlanePairObservation>>,
    health: BTreeMap<String, BTreeSet<HealthFlag>>,
    last_updates: LastUpdates,
    now: Option<f64>,
    steps: usize,
}

fn xy(v: &Vector3<f64>) -> Vector2<f64> {
    Vector2::new(v.x, v.y)
}

impl OnlineState {
    /// Starts monitoring from an existing (typically offline) calibration.
    pub fn new(
        initial: &CalibrationSet,
        sensors: &[SensorConfig],
        vehicle: &VehicleGeometry,
        config: OnlineConfig,
    ) -> Result<Self, OnlineError> {
        config.validate()?;
        let mut calibration = CalibrationSet::new(Stage::Full);
        calibration.timestamp = initial.timestamp;
        for s in sensors {
            let pose = initial
                .get(&s.id)
                .ok_or_else(|| OnlineError::MissingSensor(s.id.clone()))?;
            calibration.insert(&s.id, *pose);
        }
        Ok(Self {
            config,
            sensors: sensors.to_vec(),
            vehicle: *vehicle,
            calibration,
            ego: Vec::new(),
            last_frame: BTreeMap::new(),
            motion: sensors.iter().map(|s| (s.id.clone(), VecDeque::new())).collect(),
            pole_pairs: VecDeque::new(),
            plane_pairs: VecDeque::new(),
            health: BTreeMap::new(),
            last_updates: LastUpdates::default(),
            now: None,
            steps: 0,
        })
    }

    pub fn calibration(&self) -> &CalibrationSet {
        &self.calibration
    }

    pub fn config(&self) -> &OnlineConfig {
        &self.config
    }

    pub fn last_updates(&self) -> LastUpdates {
        self.last_updates
    }

    pub fn health(&self, sensor_id: &str) -> Vec<HealthFlag> {
        self.health
            .get(sensor_id)
            .map(|f| f.iter().copied().collect())
            .unwrap_or_default()
    }

    /// Number of frame batches currently held.
    pub fn window_len(&self) -> usize {
        self.pole_pairs.len()
    }

    fn flag(&mut self, id: &str, f: HealthFlag) {
        self.health.entry(id.to_string()).or_default().insert(f);
    }

    /// Adds one batch of frames (at most one per sensor, common timestamp) and
    /// any new egomotion samples to the window.
    pub fn ingest(&mut self, batch: &[FeatureFrame], ego: &[TimedPose]) {
        for p in ego {
            if self.ego.last().is_none_or(|l| p.timestamp > l.timestamp) {
                self.ego.push(*p);
            }
        }
        if batch.is_empty() {
            return;
        }
        let t = batch[0].timestamp;
        let vehicle_pose = interpolate_pose(&self.ego, t).ok();
        if vehicle_pose.is_none() {
            log::debug!("no egomotion at t={t:.3}; temporal matching skipped");
        }
        let known: BTreeSet<&str> = self.sensors.iter().map(|s| s.id.as_str()).collect();
        let mut streams = FrameStreams::new();
        for f in batch {
            if !known.contains(f.sensor_id.as_str()) {
                log::warn!("frame from unknown sensor {} ignored", f.sensor_id);
                continue;
            }
            streams.insert(f.sensor_id.clone(), vec![f.clone()]);
            let Some(pose) = vehicle_pose else {
                self.last_frame.remove(&f.sensor_id);
                continue;
            };
            if let Some((prev, prev_pose)) = self.last_frame.get(&f.sensor_id) {
                let inc = relative_increment(prev_pose, &pose);
                let predicted = conjugate_increment(&self.calibration.sensors[&f.sensor_id], &inc);
                let matches = match_consecutive(prev, f, Some(&predicted), self.config.match_dist);
                let q = self.motion.get_mut(&f.sensor_id).expect("sensor queue");
                q.push_back(Motion {
                    vehicle_inc: inc,
                    matches,
                });
                while q.len() >= self.config.window {
                    q.pop_front();
                }
            }
            self.last_frame.insert(f.sensor_id.clone(), (f.clone(), pose));
        }
        let gate = CandidateConfig {
            gate: self.config.pair_gate,
            ..CandidateConfig::default()
        };
        let poles = build_candidates(&streams, &self.calibration, &self.sensors, &gate).unwrap_or_default();
        let poles = one_to_one(poles, &self.calibration);
        let planes =
            collect_plane_pairs(&streams, &self.calibration, &self.sensors, &self.config.planes).unwrap_or_default();
        self.pole_pairs.push_back(poles);
        self.plane_pairs.push_back(planes);
        while self.pole_pairs.len() > self.config.window {
            self.pole_pairs.pop_front();
            self.plane_pairs.pop_front();
        }
        // egomotion older than the newest frame is no longer needed
        let keep = self.ego.partition_point(|p| p.timestamp < t).saturating_sub(1);
        self.ego.drain(..keep);
        self.now = Some(t);
    }

    /// Damped yaw re-estimation from temporal pole matches over the window.
    pub fn update_yaw(&mut self) {
        let alpha = self.config.alpha;
        let mut changed = false;
        for s in self.sensors.clone() {
            let q = &self.motion[&s.id];
            let count: usize = q.iter().map(|m| m.matches.len()).sum();
            if count == 0 {
                self.flag(&s.id, HealthFlag::NoTemporalMatches);
                continue;
            }
            let travel: f64 = q.iter().map(|m| m.vehicle_inc.translation().norm()).sum();
            let turn: f64 = q.iter().map(|m| wrap_angle(m.vehicle_inc.euler().yaw).abs()).sum();
            if travel < self.config.min_travel && turn < self.config.min_turn {
                self.flag(&s.id, HealthFlag::DegenerateMotion);
                continue;
            }
            let incs: Vec<Pose> = q.iter().map(|m| m.vehicle_inc).collect();
            let matches: Vec<TemporalMatchSet> = q.iter().map(|m| m.matches.clone()).collect();
            let current = self.calibration.sensors[&s.id];
            let center = current.euler().yaw;
            let cost = |th: f64| yaw_cost(th, &current, &incs, &matches).unwrap_or(f64::INFINITY);
            let (est, _, spread) = minimize_yaw(cost, center, self.config.yaw_window, self.config.yaw_samples);
            if !(spread > 0.0) {
                self.flag(&s.id, HealthFlag::DegenerateMotion);
                continue;
            }
            let yaw = center + alpha * wrap_angle(est - center);
            self.calibration.insert(&s.id, with_yaw(&current, yaw));
            changed = true;
        }
        if changed {
            self.last_updates.yaw = self.now;
        }
    }

    /// Damped roll, pitch and height update from ground plane pairs, pinned to
    /// the current values by the regularizer.
    pub fn update_rph(&mut self) {
        let mut groups: BTreeMap<(&str, &str), Vec<&PlanePairObservation>> = BTreeMap::new();
        for o in self.plane_pairs.iter().flatten() {
            groups
                .entry((o.sensor_a.as_str(), o.sensor_b.as_str()))
                .or_default()
                .push(o);
        }
        let mut planes = Vec::new();
        for g in groups.values() {
            for k in crate::association::stride_subsample(g.len(), self.config.planes_per_update) {
                planes.push(g[k].clone());
            }
        }
        let seen: BTreeSet<String> = planes
            .iter()
            .flat_map(|o| [o.sensor_a.clone(), o.sensor_b.clone()])
            .collect();
        for s in self.sensors.clone() {
            if !seen.contains(&s.id) {
                self.flag(&s.id, HealthFlag::NoGroundPairs);
            }
        }
        if planes.is_empty() {
            return;
        }
        let current = self.calibration.clone();
        let outcome = match refine(&current, &current, &[], &planes, &self.config.refine) {
            Ok(o) => o,
            Err(e) => {
                log::warn!("tilt/height update skipped: {e}");
                return;
            }
        };
        let a = self.config.alpha;
        for id in &seen {
            let (Some(cur), Some(est)) = (current.get(id), outcome.calibration.get(id)) else {
                continue;
            };
            let (ec, ee) = (cur.euler(), est.euler());
            let angles = EulerAngles::new(
                ec.roll + a * wrap_angle(ee.roll - ec.roll),
                ec.pitch + a * wrap_angle(ee.pitch - ec.pitch),
                ec.yaw,
            );
            let mut t = *cur.translation();
            t.z += a * (est.translation().z - t.z);
            self.calibration.insert(id, Pose::from_euler(t, angles));
        }
        self.last_updates.rph = self.now;
    }

    /// Window pole pairs still within the gate under the current calibration.
    fn gated_pairs(&self) -> Vec<&CandidatePair> {
        let cal = &self.calibration.sensors;
        self.pole_pairs
            .iter()
            .flatten()
            .filter(|c| match (cal.get(&c.sensor_a), cal.get(&c.sensor_b)) {
                (Some(a), Some(b)) => {
                    (xy(&a.transform_point(&c.pole_a.base)) - xy(&b.transform_point(&c.pole_b.base))).norm()
                        <= self.config.pair_gate
                }
                _ => false,
            })
            .collect()
    }

    /// Damped x/y/yaw update: a box-constrained least-squares fit of the gated
    /// pole pairs with rotations linearized at the current yaws.
    pub fn update_xyyaw(&mut self) {
        let pairs: Vec<CandidatePair> = self.gated_pairs().into_iter().cloned().collect();
        let index: BTreeMap<&str, usize> = self
            .sensors
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect();
        let n = 3 * self.sensors.len();
        let mut h = DMatrix::<f64>::zeros(n, n);
        let mut g = DVector::<f64>::zeros(n);
        let mut used = vec![false; self.sensors.len()];
        for c in &pairs {
            let (ia, ib) = (index[c.sensor_a.as_str()], index[c.sensor_b.as_str()]);
            let va = self.calibration.sensors[&c.sensor_a].transform_point(&c.pole_a.base);
            let vb = self.calibration.sensors[&c.sensor_b].transform_point(&c.pole_b.base);
            // lever arms of the rotated points about each sensor origin
            let la = va - self.calibration.sensors[&c.sensor_a].translation();
            let lb = vb - self.calibration.sensors[&c.sensor_b].translation();
            let r = xy(&va) - xy(&vb);
            let cols = [3 * ia, 3 * ia + 1, 3 * ia + 2, 3 * ib, 3 * ib + 1, 3 * ib + 2];
            let jx = [1.0, 0.0, -la.y, -1.0, 0.0, lb.y];
            let jy = [0.0, 1.0, la.x, 0.0, -1.0, -lb.x];
            for (j, res) in [(jx, r.x), (jy, r.y)] {
                for p in 0..6 {
                    g[cols[p]] += j[p] * res;
                    for q in 0..6 {
                        h[(cols[p], cols[q])] += j[p] * j[q];
                    }
                }
            }
            used[ia] = true;
            used[ib] = true;
        }
        for (i, s) in self.sensors.clone().iter().enumerate() {
            if !used[i] {
                self.flag(&s.id, HealthFlag::NoPolePairs);
            }
        }
        if pairs.is_empty() {
            return;
        }
        for i in 0..self.sensors.len() {
            h[(3 * i, 3 * i)] += self.config.rho_xy;
            h[(3 * i + 1, 3 * i + 1)] += self.config.rho_xy;
            h[(3 * i + 2, 3 * i + 2)] += self.config.rho_theta;
        }
        let (x0, x1) = self.vehicle.x_bounds();
        let (y0, y1) = self.vehicle.y_bounds();
        let mut lo = DVector::<f64>::zeros(n);
        let mut hi = DVector::<f64>::zeros(n);
        for (i, s) in self.sensors.iter().enumerate() {
            let t = self.calibration.sensors[&s.id].translation();
            lo[3 * i] = (x0 - t.x).min(0.0);
            hi[3 * i] = (x1 - t.x).max(0.0);
            lo[3 * i + 1] = (y0 - t.y).min(0.0);
            hi[3 * i + 1] = (y1 - t.y).max(0.0);
            lo[3 * i + 2] = -self.config.gamma;
            hi[3 * i + 2] = self.config.gamma;
        }
        let Some(delta) = box_qp(&h, &(-g), &lo, &hi) else {
            log::warn!("x/y/yaw update skipped: singular system");
            return;
        };
        let a = self.config.alpha;
        for (i, s) in self.sensors.iter().enumerate() {
            if !used[i] {
                continue;
            }
            let cur = self.calibration.sensors[&s.id];
            let e = cur.euler();
            let mut t = *cur.translation();
            t.x += a * delta[3 * i];
            t.y += a * delta[3 * i + 1];
            let yaw = e.yaw + a * delta[3 * i + 2];
            self.calibration.insert(
                &s.id,
                Pose::from_euler(t, EulerAngles::new(e.roll, e.pitch, yaw)),
            );
        }
        self.last_updates.xyyaw = self.now;
    }

    fn report(&self, compute_ms: f64) -> StepReport {
        let pairs = self.gated_pairs();
        let mut sq: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
        let cal = &self.calibration.sensors;
        for c in &pairs {
            let r = (xy(&cal[&c.sensor_a].transform_point(&c.pole_a.base))
                - xy(&cal[&c.sensor_b].transform_point(&c.pole_b.base)))
            .norm_squared();
            for id in [c.sensor_a.as_str(), c.sensor_b.as_str()] {
                let e = sq.entry(id).or_default();
                e.0 += r;
                e.1 += 1;
            }
        }
        let mut planes: BTreeMap<&str, usize> = BTreeMap::new();
        for o in self.plane_pairs.iter().flatten() {
            *planes.entry(o.sensor_a.as_str()).or_default() += 1;
            *planes.entry(o.sensor_b.as_str()).or_default() += 1;
        }
        let sensors = self
            .sensors
            .iter()
            .map(|s| {
                let (sum, count) = sq.get(s.id.as_str()).copied().unwrap_or_default();
                SensorStatus {
                    sensor_id: s.id.clone(),
                    pose: cal[&s.id],
                    flags: self.health(&s.id),
                    temporal_matches: self.motion[&s.id].iter().map(|m| m.matches.len()).sum(),
                    pole_pairs: count,
                    plane_pairs: planes.get(s.id.as_str()).copied().unwrap_or(0),
                    pair_rms: (count > 0).then(|| (sum / count as f64).sqrt()),
                }
            })
            .collect();
        StepReport {
            timestamp: self.now.unwrap_or(f64::NAN),
            step: self.steps,
            sensors,
            compute_ms,
        }
    }

    /// Ingests a batch and runs the yaw, tilt/height and x/y/yaw updates in
    /// that order. An empty batch changes nothing.
    pub fn step(&mut self, batch: &[FeatureFrame], ego: &[TimedPose]) -> StepReport {
        let start = Instant::now();
        if batch.is_empty() {
            return self.report(0.0);
        }
        self.health.clear();
        self.ingest(batch, ego);
        self.update_yaw();
        self.update_rph();
        self.update_xyyaw();
        self.steps += 1;
        self.calibration.timestamp = self.now;
        self.report(start.elapsed().as_secs_f64() * 1e3)
    }
}

/// Keeps each pole in at most one pair per sensor pair, closest pairs first.
/// Two poles standing closer than the gate otherwise yield crossed pairs.
fn one_to_one(mut pairs: Vec<CandidatePair>, calib: &CalibrationSet) -> Vec<CandidatePair> {
    let dist = |c: &CandidatePair| {
        (xy(&calib.sensors[&c.sensor_a].transform_point(&c.pole_a.base))
            - xy(&calib.sensors[&c.sensor_b].transform_point(&c.pole_b.base)))
        .norm()
    };
    pairs.sort_by(|a, b| dist(a).total_cmp(&dist(b)));
    let key = |id: &str, v: &Vector3<f64>| (id.to_string(), v.x.to_bits(), v.y.to_bits(), v.z.to_bits());
    let mut used = BTreeSet::new();
    let mut out = Vec::with_capacity(pairs.len());
    for c in pairs {
        let (ka, kb) = (key(&c.sensor_a, &c.pole_a.base), key(&c.sensor_b, &c.pole_b.base));
        // a pole may pair once with each neighbor
        let (ka, kb) = ((ka, c.sensor_b.clone()), (kb, c.sensor_a.clone()));
        if used.contains(&ka) || used.contains(&kb) {
            continue;
        }
        used.insert(ka);
        used.insert(kb);
        out.push(c);
    }
    out.sort_by_key(|c| c.index);
    out
}

/// Minimizes `½ xᵀHx − bᵀx` over `lo ≤ x ≤ hi` for positive definite `H`:
/// the unconstrained solution when it is inside the box, projected
/// Gauss-Seidel otherwise.
pub fn box_qp(h: &DMatrix<f64>, b: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> Option<DVector<f64>> {
    let chol = h.clone().cholesky()?;
    let mut x = chol.solve(b);
    let inside = (0..x.len()).all(|i| x[i] >= lo[i] && x[i] <= hi[i]);
    if inside {
        return Some(x);
    }
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
    for _ in 0..500 {
        let mut moved: f64 = 0.0;
        for i in 0..x.len() {
            let hii = h[(i, i)];
            if hii <= 0.0 {
                continue;
            }
            let r = b[i] - h.row(i).dot(&x.transpose()) + hii * x[i];
            let v = (r / hii).clamp(lo[i], hi[i]);
            moved = moved.max((v - x[i]).abs());
            x[i] = v;
        }
        if moved < 1e-12 {
            break;
        }
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_qp_matches_unconstrained_inside() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let b = DVector::from_vec(vec![1.0, 0.2]);
        let x = box_qp(&h, &b, &DVector::from_element(2, -10.0), &DVector::from_element(2, 10.0)).unwrap();
        assert!((&h * &x - &b).norm() < 1e-12);
    }

    #[test]
    fn box_qp_respects_bounds() {
        // optimum (1, 1) is outside; with x ≤ 0.5 the best y is 1 − 0.5·0.5/1
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let b = &h * DVector::from_vec(vec![1.0, 1.0]);
        let x = box_qp(&h, &b, &DVector::from_element(2, -5.0), &DVector::from_vec(vec![0.5, 5.0])).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-9);
        assert!((x[1] - 1.25).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = OnlineConfig {
            alpha: 0.0,
            ..OnlineConfig::default()
        };
        assert!(cfg.validate().is_err());
        let sensors = vec![SensorConfig::new("a", 1.0, 30.0)];
        let empty = CalibrationSet::new(Stage::Full);
        let err = OnlineState::new(&empty, &sensors, &VehicleGeometry::default(), OnlineConfig::default());
        assert!(matches!(err, Err(OnlineError::MissingSensor(_))));
    }
}
