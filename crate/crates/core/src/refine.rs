//! Joint 6-DoF refinement of all sensor calibrations from matched poles,
//! matched ground planes and the flat-ground prior, plus height anchoring.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::{common_frames, neighbor_pairs, CandidatePair, PlacedSensor};
use crate::calibration::{CalibrationSet, FeatureFrame, FrameStreams, SensorConfig, Stage};
use crate::features::{
    fit_plane, plane_angular_distance, plane_plane_distance, plane_point_distance,
    plane_probe_points, pole_pole_distance, transform_plane, transform_pole, PlaneFitConfig,
};
use crate::geometry::{pose_log_difference, skew, so3_exp, so3_log, so3_right_jacobian_inv};
use crate::{Plane, Pose};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RefineError {
    #[error("sensor {0} missing from calibration")]
    MissingSensor(String),
    #[error("no usable ground plane for sensor {0}")]
    InsufficientGround(String),
}

/// Ground planes fitted by two neighboring sensors at one timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanePairObservation {
    pub sensor_a: String,
    pub sensor_b: String,
    /// In sensor A's frame.
    pub plane_a: Plane,
    /// In sensor B's frame.
    pub plane_b: Plane,
    pub timestamp: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanePairConfig {
    pub fit: PlaneFitConfig,
    /// Largest vehicle-frame angle between the two normals (radians).
    pub max_angle: f64,
    /// Per sensor pair, keep at most this many timestamps (evenly strided).
    pub max_per_pair: usize,
}

impl Default for PlanePairConfig {
    fn default() -> Self {
        Self {
            fit: PlaneFitConfig::default(),
            max_angle: 10f64.to_radians(),
            max_per_pair: 100,
        }
    }
}

/// Fits ground planes to the points each neighbor pair sees in common and
/// keeps the pairs whose normals agree.
pub fn collect_plane_pairs(
    frames: &FrameStreams,
    calib: &CalibrationSet,
    sensors: &[SensorConfig],
    config: &PlanePairConfig,
) -> Result<Vec<PlanePairObservation>, RefineError> {
    let pairs = neighbor_pairs(sensors, calib)
        .map_err(|e| RefineError::MissingSensor(e.to_string()))?;
    let empty = Vec::new();
    let mut out = Vec::new();
    for (ia, ib) in pairs {
        let (sa, sb) = (&sensors[ia], &sensors[ib]);
        let pa = PlacedSensor {
            config: sa,
            pose: calib.sensors[&sa.id],
        };
        let pb = PlacedSensor {
            config: sb,
            pose: calib.sensors[&sb.id],
        };
        let in_overlap = |p: &Vector3<f64>| pa.wedge_touches(p, 0.0) && pb.wedge_touches(p, 0.0);
        let select = |f: &FeatureFrame, pose: &Pose| -> Vec<Vector3<f64>> {
            f.ground
                .iter()
                .filter(|p| in_overlap(&pose.transform_point(p)))
                .copied()
                .collect()
        };
        let fa = frames.get(&sa.id).unwrap_or(&empty);
        let fb = frames.get(&sb.id).unwrap_or(&empty);
        let mut local = Vec::new();
        for (frame_a, frame_b) in common_frames(fa, fb) {
            let Ok(plane_a) = fit_plane(&select(frame_a, &pa.pose), &config.fit) else {
                continue;
            };
            let Ok(plane_b) = fit_plane(&select(frame_b, &pb.pose), &config.fit) else {
                continue;
            };
            let na = pa.pose.transform_vector(&plane_a.normal);
            let nb = pb.pose.transform_vector(&plane_b.normal);
            let angle = na.normalize().dot(&nb.normalize()).abs().min(1.0).acos();
            if angle > config.max_angle {
                continue;
            }
            local.push(PlanePairObservation {
                sensor_a: sa.id.clone(),
                sensor_b: sb.id.clone(),
                plane_a,
                plane_b,
                timestamp: frame_a.timestamp,
                weight: 1.0,
            });
        }
        for k in crate::association::stride_subsample(local.len(), config.max_per_pair) {
            out.push(local[k].clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostWeights {
    pub regularization: f64,
    pub poles: f64,
    pub planes: f64,
    pub angular: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            regularization: 1.0,
            poles: 1.0,
            planes: 1.0,
            angular: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub weights: CostWeights,
    /// Which of `(x, y, z, rx, ry, rz)` of the log difference are regularized.
    pub regularize: [bool; 6],
    /// Which of the six local parameters per sensor may move.
    pub free: [bool; 6],
    /// Distance of the tangent probe points from a plane's centroid (meters).
    pub probe_step: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub step_tol: f64,
    pub damping_init: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            weights: CostWeights::default(),
            regularize: [true, true, false, false, false, true],
            free: [true; 6],
            probe_step: 1.0,
            max_iters: 100,
            rel_tol: 1e-8,
            step_tol: 1e-8,
            damping_init: 1e-3,
        }
    }
}

/// Per-term contributions to the joint cost, already weighted and normalized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub regularization: f64,
    pub poles: f64,
    pub planes: f64,
    pub angular: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.regularization + self.poles + self.planes + self.angular
    }
}

fn mean_weight(w: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        w / n as f64
    }
}

fn masked(v: &Vector6<f64>, mask: &[bool; 6]) -> Vector6<f64> {
    Vector6::from_fn(|i, _| if mask[i] { v[i] } else { 0.0 })
}

fn pose_of<'a>(calib: &'a CalibrationSet, id: &str) -> Result<&'a Pose, RefineError> {
    calib
        .get(id)
        .ok_or_else(|| RefineError::MissingSensor(id.to_string()))
}

/// Weighted, normalized joint cost with its per-term split.
pub fn joint_cost_breakdown(
    calib: &CalibrationSet,
    anchors: &CalibrationSet,
    pole_pairs: &[CandidatePair],
    plane_pairs: &[PlanePairObservation],
    config: &RefineConfig,
) -> Result<CostBreakdown, RefineError> {
    let w = &config.weights;
    let mut out = CostBreakdown::default();
    let mut reg = 0.0;
    let mut n_reg = 0;
    for (id, pose) in &calib.sensors {
        if let Some(anchor) = anchors.get(id) {
            reg += masked(&pose_log_difference(pose, anchor), &config.regularize).norm_squared();
            n_reg += 1;
        }
    }
    out.regularization = mean_weight(w.regularization, n_reg) * reg;

    let mut poles = 0.0;
    for c in pole_pairs {
        let pa = transform_pole(pose_of(calib, &c.sensor_a)?, &c.pole_a);
        let pb = transform_pole(pose_of(calib, &c.sensor_b)?, &c.pole_b);
        poles += pole_pole_distance(&pa, &pb).unwrap_or(0.0);
    }
    out.poles = mean_weight(w.poles, pole_pairs.len()) * poles;

    let ground = Plane::ground();
    let (mut planes, mut angular) = (0.0, 0.0);
    for o in plane_pairs {
        let a = transform_plane(pose_of(calib, &o.sensor_a)?, &o.plane_a);
        let b = transform_plane(pose_of(calib, &o.sensor_b)?, &o.plane_b);
        planes += o.weight * plane_plane_distance(&a, &b, config.probe_step);
        angular += o.weight
            * (plane_angular_distance(&a, &ground) + plane_angular_distance(&b, &ground));
    }
    out.planes = mean_weight(w.planes, plane_pairs.len()) * planes;
    out.angular = mean_weight(w.angular, plane_pairs.len()) * angular;
    Ok(out)
}

pub fn joint_cost(
    calib: &CalibrationSet,
    anchors: &CalibrationSet,
    pole_pairs: &[CandidatePair],
    plane_pairs: &[PlanePairObservation],
    config: &RefineConfig,
) -> Result<f64, RefineError> {
    joint_cost_breakdown(calib, anchors, pole_pairs, plane_pairs, config).map(|b| b.total())
}

/// Jacobian of `R p + t` with respect to `(dt, dω)` under `R ← R exp(dω)`.
fn point_jacobian(pose: &Pose, p: &Vector3<f64>) -> nalgebra::Matrix3x6<f64> {
    let mut j = nalgebra::Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    j.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(-pose.rotation_matrix() * skew(p)));
    j
}

fn vector_jacobian(pose: &Pose, v: &Vector3<f64>) -> nalgebra::Matrix3x6<f64> {
    let mut j = nalgebra::Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(-pose.rotation_matrix() * skew(v)));
    j
}

/// Gradient and majorizing Hessian of the joint cost in local coordinates.
struct Accumulator {
    g: DVector<f64>,
    h: DMatrix<f64>,
}

impl Accumulator {
    fn new(n: usize) -> Self {
        Self {
            g: DVector::zeros(6 * n),
            h: DMatrix::zeros(6 * n, 6 * n),
        }
    }

    /// Adds `gs·Jᵀr` to the gradient and `hs·JᵀJ` to the Hessian; `J` has six
    /// columns per entry of `sensors`.
    fn add(&mut self, sensors: &[usize], r: &DVector<f64>, j: &DMatrix<f64>, gs: f64, hs: f64) {
        let jt_r = j.transpose() * r;
        let jt_j = j.transpose() * j;
        for (bi, &si) in sensors.iter().enumerate() {
            for a in 0..6 {
                self.g[6 * si + a] += gs * jt_r[6 * bi + a];
                for (bk, &sk) in sensors.iter().enumerate() {
                    for b in 0..6 {
                        self.h[(6 * si + a, 6 * sk + b)] += hs * jt_j[(6 * bi + a, 6 * bk + b)];
                    }
                }
            }
        }
    }

    /// Norm term `w·‖r‖` with an iteratively reweighted quadratic bound.
    fn add_norm(&mut self, sensors: &[usize], r: &DVector<f64>, j: &DMatrix<f64>, w: f64) {
        const FLOOR: f64 = 1e-6;
        let n = r.norm();
        let gs = if n > 0.0 { w / n } else { 0.0 };
        self.add(sensors, r, j, gs, w / n.max(FLOOR));
    }
}

/// Cost, gradient and Hessian approximation for `ids` in order.
fn linearize(
    calib: &CalibrationSet,
    anchors: &CalibrationSet,
    ids: &[String],
    pole_pairs: &[CandidatePair],
    plane_pairs: &[PlanePairObservation],
    config: &RefineConfig,
) -> Result<(f64, Accumulator), RefineError> {
    let index = |id: &str| {
        ids.iter()
            .position(|s| s == id)
            .ok_or_else(|| RefineError::MissingSensor(id.to_string()))
    };
    let poses: Vec<Pose> = ids
        .iter()
        .map(|id| pose_of(calib, id).copied())
        .collect::<Result<_, _>>()?;
    let mut acc = Accumulator::new(ids.len());
    let w = &config.weights;

    let n_reg = ids.iter().filter(|id| anchors.get(id).is_some()).count();
    let wr = mean_weight(w.regularization, n_reg);
    for (k, id) in ids.iter().enumerate() {
        let Some(anchor) = anchors.get(id) else {
            continue;
        };
        let d = pose_log_difference(&poses[k], anchor);
        let r = masked(&d, &config.regularize);
        let phi = so3_log(&(anchor.rotation().inverse() * poses[k].rotation()));
        let mut j = DMatrix::zeros(6, 6);
        let jr = so3_right_jacobian_inv(&phi);
        for a in 0..3 {
            if config.regularize[a] {
                j[(a, a)] = 1.0;
            }
            if config.regularize[3 + a] {
                for b in 0..3 {
                    j[(3 + a, 3 + b)] = jr[(a, b)];
                }
            }
        }
        let r = DVector::from_column_slice(r.as_slice());
        acc.add(&[k], &r, &j, 2.0 * wr, 2.0 * wr);
    }

    let wp = mean_weight(w.poles, pole_pairs.len());
    for c in pole_pairs {
        let (ka, kb) = (index(&c.sensor_a)?, index(&c.sensor_b)?);
        let (ta, tb) = (&poses[ka], &poses[kb]);
        let len = c.pole_a.length();
        if len < 1e-9 || c.pole_b.is_degenerate() {
            continue;
        }
        let top = ta.transform_point(&c.pole_a.top);
        let base = ta.transform_point(&c.pole_a.base);
        let j_top = point_jacobian(ta, &c.pole_a.top);
        let j_base = point_jacobian(ta, &c.pole_a.base);
        let mut r = DVector::zeros(6);
        let mut j = DMatrix::zeros(6, 12);
        for (row, q_local) in [c.pole_b.base, c.pole_b.top].iter().enumerate() {
            let q = tb.transform_point(q_local);
            let (u, v) = (q - top, q - base);
            let cr = u.cross(&v) / len;
            r.fixed_rows_mut::<3>(3 * row).copy_from(&cr);
            // d(u×v) = [b − a]× dq + [v]× da − [u]× db
            let ja = (skew(&v) * j_top - skew(&u) * j_base) / len;
            let jb = skew(&(base - top)) * point_jacobian(tb, q_local) / len;
            j.view_mut((3 * row, 0), (3, 6)).copy_from(&ja);
            j.view_mut((3 * row, 6), (3, 6)).copy_from(&jb);
        }
        acc.add_norm(&[ka, kb], &r, &j, wp);
    }

    let wg = mean_weight(w.planes, plane_pairs.len());
    let wa = mean_weight(w.angular, plane_pairs.len());
    for o in plane_pairs {
        let (ka, kb) = (index(&o.sensor_a)?, index(&o.sensor_b)?);
        let (ta, tb) = (&poses[ka], &poses[kb]);
        let nb_local = o.plane_b.normal.normalize();
        let nb = tb.transform_vector(&nb_local);
        let pb = tb.transform_point(&o.plane_b.point);
        let jn_b = vector_jacobian(tb, &nb_local);
        let jp_b = point_jacobian(tb, &o.plane_b.point);
        for probe in plane_probe_points(&o.plane_a, config.probe_step) {
            let x = ta.transform_point(&probe);
            let e = nb.dot(&(x - pb));
            let ja = nb.transpose() * point_jacobian(ta, &probe);
            let jb = (x - pb).transpose() * jn_b - nb.transpose() * jp_b;
            let mut j = DMatrix::zeros(1, 12);
            j.view_mut((0, 0), (1, 6)).copy_from(&ja);
            j.view_mut((0, 6), (1, 6)).copy_from(&jb);
            acc.add_norm(&[ka, kb], &DVector::from_element(1, e), &j, wg * o.weight);
        }
        for (k, pose, plane) in [(ka, ta, &o.plane_a), (kb, tb, &o.plane_b)] {
            let n_local = plane.normal.normalize();
            let n = pose.transform_vector(&n_local);
            let jn = vector_jacobian(pose, &n_local);
            // gradient of 1 − |n_z|; curvature from ½(n_x² + n_y²)
            let sign = if n.z > 0.0 { 1.0 } else if n.z < 0.0 { -1.0 } else { 0.0 };
            let gs = -sign * wa * o.weight;
            for a in 0..6 {
                acc.g[6 * k + a] += gs * jn[(2, a)];
            }
            let jxy = DMatrix::from_fn(2, 6, |r, c| jn[(r, c)]);
            let zero = DVector::zeros(2);
            acc.add(&[k], &zero, &jxy, 0.0, wa * o.weight);
        }
    }
    let cost = joint_cost(calib, anchors, pole_pairs, plane_pairs, config)?;
    Ok((cost, acc))
}

/// Cost and analytic gradient with respect to `(dt, dω)` per sensor, in
/// calibration id order.
pub fn cost_and_gradient(
    calib: &CalibrationSet,
    anchors: &CalibrationSet,
    pole_pairs: &[CandidatePair],
    plane_pairs: &[PlanePairObservation],
    config: &RefineConfig,
) -> Result<(f64, DVector<f64>), RefineError> {
    let ids: Vec<String> = calib.ids().map(str::to_string).collect();
    let (c, acc) = linearize(calib, anchors, &ids, pole_pairs, plane_pairs, config)?;
    Ok((c, acc.g))
}

/// Applies local steps `(dt, dω)` per sensor.
pub fn retract_calibration(calib: &CalibrationSet, step: &DVector<f64>) -> CalibrationSet {
    let mut out = calib.clone();
    for (k, pose) in out.sensors.values_mut().enumerate() {
        let dt = Vector3::new(step[6 * k], step[6 * k + 1], step[6 * k + 2]);
        let dw = Vector3::new(step[6 * k + 3], step[6 * k + 4], step[6 * k + 5]);
        *pose = pose.retract(&dt, &dw);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineOutcome {
    pub calibration: CalibrationSet,
    pub cost_history: Vec<f64>,
    pub iterations: usize,
    /// False when the iteration limit was hit first; the best iterate is returned.
    pub converged: bool,
}

/// Damped second-order minimization of the joint cost from `init`.
pub fn refine(
    init: &CalibrationSet,
    anchors: &CalibrationSet,
    pole_pairs: &[CandidatePair],
    plane_pairs: &[PlanePairObservation],
    config: &RefineConfig,
) -> Result<RefineOutcome, RefineError> {
    let ids: Vec<String> = init.ids().map(str::to_string).collect();
    let free: Vec<usize> = (0..6 * ids.len()).filter(|i| config.free[i % 6]).collect();
    let mut calib = init.clone();
    let (mut cost, mut acc) = linearize(&calib, anchors, &ids, pole_pairs, plane_pairs, config)?;
    let mut history = vec![cost];
    let mut mu = config.damping_init;
    let mut converged = false;
    let mut iterations = 0;
    if free.is_empty() {
        converged = true;
    }
    while !converged && iterations < config.max_iters {
        iterations += 1;
        let m = free.len();
        let g = DVector::from_fn(m, |i, _| acc.g[free[i]]);
        let mut h = DMatrix::from_fn(m, m, |i, k| acc.h[(free[i], free[k])]);
        let scale = h.diagonal().map(|d| d.max(1e-9));
        let mut accepted = false;
        while mu < 1e12 {
            for i in 0..m {
                h[(i, i)] = acc.h[(free[i], free[i])] + mu * scale[i];
            }
            let Some(step) = h.clone().cholesky().map(|c| c.solve(&(-&g))) else {
                mu *= 10.0;
                continue;
            };
            let mut full = DVector::zeros(6 * ids.len());
            for (i, &fi) in free.iter().enumerate() {
                full[fi] = step[i];
            }
            let step_norm = step.norm();
            let trial = retract_calibration(&calib, &full);
            let trial_cost = joint_cost(&trial, anchors, pole_pairs, plane_pairs, config)?;
            if trial_cost < cost {
                let decrease = (cost - trial_cost) / cost.abs().max(1e-300);
                calib = trial;
                cost = trial_cost;
                history.push(cost);
                mu = (mu / 3.0).max(1e-12);
                accepted = true;
                if decrease < config.rel_tol || step_norm < config.step_tol {
                    converged = true;
                }
                break;
            }
            if step_norm < config.step_tol {
                converged = true;
                break;
            }
            mu *= 10.0;
        }
        if !accepted && !converged {
            // no descent direction left at any damping
            converged = true;
        }
        if accepted && !converged {
            let (_, next) = linearize(&calib, anchors, &ids, pole_pairs, plane_pairs, config)?;
            acc = next;
        }
    }
    if !converged {
        log::warn!("refinement stopped at the iteration limit ({iterations})");
    }
    if config.free.iter().all(|&f| f) {
        let settled = settle_common_motion(&calib, anchors, plane_pairs, config)?;
        let settled_cost = joint_cost(&settled, anchors, pole_pairs, plane_pairs, config)?;
        if settled_cost < cost {
            calib = settled;
            history.push(settled_cost);
        }
    }
    calib.stage = Stage::Full;
    Ok(RefineOutcome {
        calibration: calib,
        cost_history: history,
        iterations,
        converged,
    })
}

/// Applies the common rigid motion `exp(ξ)` to every sensor in the vehicle frame.
fn move_rig(calib: &CalibrationSet, xi: &Vector6<f64>) -> CalibrationSet {
    let g = Pose::new(xi.fixed_rows::<3>(0).into_owned(), so3_exp(&xi.fixed_rows::<3>(3).into_owned()));
    let mut out = calib.clone();
    for pose in out.sensors.values_mut() {
        *pose = g.compose(pose);
    }
    out
}

/// Pair terms do not change when the whole rig moves rigidly, so along those
/// six directions only the regularization and the flat-ground prior act.
/// They are weak next to the reweighted pair terms and the full solve barely
/// moves along them; this Newton solve over the common motion finishes the job.
fn settle_common_motion(
    calib: &CalibrationSet,
    anchors: &CalibrationSet,
    plane_pairs: &[PlanePairObservation],
    config: &RefineConfig,
) -> Result<CalibrationSet, RefineError> {
    let f = |xi: &Vector6<f64>| joint_cost(&move_rig(calib, xi), anchors, &[], plane_pairs, config);
    let h = 1e-4;
    let unit = |i: usize| Vector6::from_fn(|k, _| if k == i { h } else { 0.0 });
    let mut xi = Vector6::zeros();
    let mut fx = f(&xi)?;
    for _ in 0..10 {
        let mut g = Vector6::zeros();
        let mut hess = nalgebra::Matrix6::zeros();
        let mut plus = [0.0; 6];
        let mut minus = [0.0; 6];
        for i in 0..6 {
            plus[i] = f(&(xi + unit(i)))?;
            minus[i] = f(&(xi - unit(i)))?;
            g[i] = (plus[i] - minus[i]) / (2.0 * h);
            hess[(i, i)] = (plus[i] - 2.0 * fx + minus[i]) / (h * h);
        }
        for i in 0..6 {
            for k in i + 1..6 {
                let pp = f(&(xi + unit(i) + unit(k)))?;
                let mm = f(&(xi - unit(i) - unit(k)))?;
                // from f(x ± h(eᵢ + eₖ)) and the diagonal terms
                let v = (pp + mm - plus[i] - minus[i] - plus[k] - minus[k] + 2.0 * fx) / (2.0 * h * h);
                hess[(i, k)] = v;
                hess[(k, i)] = v;
            }
        }
        let mut damping = 1e-9 * hess.diagonal().amax().max(1e-12);
        let mut improved = false;
        for _ in 0..20 {
            let mut damped = hess;
            for i in 0..6 {
                damped[(i, i)] += damping;
            }
            if let Some(step) = damped.cholesky().map(|c| c.solve(&(-g))) {
                let trial = xi + step;
                let ft = f(&trial)?;
                if ft < fx {
                    let done = step.norm() < 1e-12;
                    xi = trial;
                    fx = ft;
                    improved = !done;
                    break;
                }
            }
            damping = (damping * 10.0).max(1e-12);
        }
        if !improved {
            break;
        }
    }
    Ok(move_rig(calib, &xi))
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Height of a sensor above ground from its own ground patches: the median
/// distance from the sensor origin to the fitted planes.
pub fn ground_height(frames: &[FeatureFrame], fit: &PlaneFitConfig) -> Option<f64> {
    let heights: Vec<f64> = frames
        .iter()
        .filter_map(|f| fit_plane(&f.ground, fit).ok())
        .map(|pl| plane_point_distance(&pl, &Vector3::zeros()).abs())
        .collect();
    median(heights)
}

/// Shifts all sensors in z so the anchor sensor sits at its measured height.
pub fn anchor_absolute_height(
    calib: &CalibrationSet,
    anchor_id: &str,
    anchor_frames: &[FeatureFrame],
    fit: &PlaneFitConfig,
) -> Result<CalibrationSet, RefineError> {
    let current = pose_of(calib, anchor_id)?.translation().z;
    let height = ground_height(anchor_frames, fit)
        .ok_or_else(|| RefineError::InsufficientGround(anchor_id.to_string()))?;
    let shift = height - current;
    let mut out = calib.clone();
    for pose in out.sensors.values_mut() {
        let t = pose.translation() + Vector3::new(0.0, 0.0, shift);
        *pose = pose.with_translation(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Frame;
    use crate::geometry::EulerAngles;
    use crate::Pole;

    fn two_sensors() -> CalibrationSet {
        CalibrationSet::from_poses(
            Stage::XyYaw,
            [
                ("a", Pose::from_euler(Vector3::new(3.8, 0.0, 1.6), EulerAngles::yaw_only(0.0))),
                ("b", Pose::from_euler(Vector3::new(3.0, 0.95, 1.7), EulerAngles::yaw_only(0.8))),
            ],
        )
    }

    #[test]
    fn identical_calibrations_cost_nothing() {
        let c = two_sensors();
        let cost = joint_cost(&c, &c, &[], &[], &RefineConfig::default()).unwrap();
        assert_eq!(cost, 0.0);
    }

    #[test]
    fn yaw_offset_costs_its_square() {
        let anchors = CalibrationSet::from_poses(Stage::XyYaw, [("a", Pose::from_yaw(0.3))]);
        let moved = CalibrationSet::from_poses(Stage::XyYaw, [("a", Pose::from_yaw(0.3 + 0.05))]);
        let cost = joint_cost(&moved, &anchors, &[], &[], &RefineConfig::default()).unwrap();
        assert!((cost - 0.05f64.powi(2)).abs() < 1e-12);
    }

    #[test]
    fn unregularized_components_are_free() {
        let anchors = two_sensors();
        let mut moved = anchors.clone();
        let p = moved.sensors["a"];
        moved.insert("a", p.with_translation(p.translation() + Vector3::new(0.0, 0.0, 0.4)));
        let cost = joint_cost(&moved, &anchors, &[], &[], &RefineConfig::default()).unwrap();
        assert!(cost.abs() < 1e-15);
    }

    fn world_pole_pair(calib: &CalibrationSet, w: Vector3<f64>) -> CandidatePair {
        let up = Vector3::new(0.0, 0.0, 4.0);
        let local = |id: &str, p: Vector3<f64>| calib.sensors[id].inverse().transform_point(&p);
        CandidatePair {
            sensor_a: "a".into(),
            sensor_b: "b".into(),
            pole_a: Pole::new(local("a", w), local("a", w + up), Frame::Sensor),
            pole_b: Pole::new(local("b", w), local("b", w + up), Frame::Sensor),
            timestamp: 0.0,
            index: 0,
        }
    }

    fn ground_pair(calib: &CalibrationSet, c: Vector3<f64>, n: Vector3<f64>) -> PlanePairObservation {
        let g = Plane::from_point_normal(c, n);
        let inv = |id: &str| calib.sensors[id].inverse();
        PlanePairObservation {
            sensor_a: "a".into(),
            sensor_b: "b".into(),
            plane_a: transform_plane(&inv("a"), &g),
            plane_b: transform_plane(&inv("b"), &g),
            timestamp: 0.0,
            weight: 1.0,
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let truth = two_sensors();
        let poles: Vec<_> = (0..5)
            .map(|k| world_pole_pair(&truth, Vector3::new(12.0 + k as f64, 6.0 - k as f64, 0.0)))
            .collect();
        let planes: Vec<_> = (0..3)
            .map(|k| ground_pair(&truth, Vector3::new(8.0, 3.0 + k as f64, 0.1), Vector3::new(0.05, 0.0, 1.0)))
            .collect();
        let cfg = RefineConfig {
            regularize: [true; 6],
            ..RefineConfig::default()
        };
        for _ in 0..10 {
            let step = DVector::from_fn(12, |_, _| rng.random_range(-0.05..0.05));
            let state = retract_calibration(&truth, &step);
            let (_, g) = cost_and_gradient(&state, &truth, &poles, &planes, &cfg).unwrap();
            let h = 1e-6;
            for i in 0..12 {
                let mut e = DVector::zeros(12);
                e[i] = h;
                let fp = joint_cost(&retract_calibration(&state, &e), &truth, &poles, &planes, &cfg).unwrap();
                let fm = joint_cost(&retract_calibration(&state, &(-e)), &truth, &poles, &planes, &cfg).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-3);
                assert!(err < 1e-4, "component {i}: fd {fd} analytic {}", g[i]);
            }
        }
    }

    #[test]
    fn common_z_shift_leaves_pair_terms_unchanged() {
        let truth = two_sensors();
        let poles = vec![world_pole_pair(&truth, Vector3::new(14.0, 5.0, 0.0))];
        let planes = vec![ground_pair(&truth, Vector3::new(8.0, 3.0, 0.0), Vector3::z())];
        let mut state = retract_calibration(&truth, &DVector::from_fn(12, |i, _| 0.01 * (i as f64 - 5.0)));
        let cfg = RefineConfig::default();
        let before = joint_cost_breakdown(&state, &truth, &poles, &planes, &cfg).unwrap();
        for p in state.sensors.values_mut() {
            *p = p.with_translation(p.translation() + Vector3::new(0.0, 0.0, 0.7));
        }
        let after = joint_cost_breakdown(&state, &truth, &poles, &planes, &cfg).unwrap();
        assert!((before.poles - after.poles).abs() < 1e-9);
        assert!((before.planes - after.planes).abs() < 1e-9);
        assert!((before.angular - after.angular).abs() < 1e-9);
    }

    #[test]
    fn truth_is_a_fixed_point() {
        let truth = two_sensors();
        let poles: Vec<_> = (0..4)
            .map(|k| world_pole_pair(&truth, Vector3::new(12.0 + 2.0 * k as f64, 5.0, 0.0)))
            .collect();
        let planes = vec![ground_pair(&truth, Vector3::new(8.0, 3.0, 0.0), Vector3::z())];
        let out = refine(&truth, &truth, &poles, &planes, &RefineConfig::default()).unwrap();
        assert!(out.converged);
        for id in ["a", "b"] {
            let d = pose_log_difference(&out.calibration.sensors[id], &truth.sensors[id]);
            assert!(d.norm() < 1e-8, "{id}: {d:?}");
        }
        assert_eq!(out.calibration.stage, Stage::Full);
    }

    #[test]
    fn roll_error_recovered_by_ground_terms() {
        let truth = two_sensors();
        let planes: Vec<_> = (0..6)
            .map(|k| ground_pair(&truth, Vector3::new(6.0 + k as f64, 2.0 + 0.5 * k as f64, 0.0), Vector3::z()))
            .collect();
        let poles: Vec<_> = (0..6)
            .map(|k| world_pole_pair(&truth, Vector3::new(12.0 + 2.0 * k as f64, 5.0 + k as f64, 0.0)))
            .collect();
        let mut init = truth.clone();
        let p = init.sensors["b"];
        let e = p.euler();
        init.insert("b", Pose::from_euler(*p.translation(), EulerAngles::new(e.roll + 2f64.to_radians(), e.pitch, e.yaw)));
        let out = refine(&init, &truth, &poles, &planes, &RefineConfig::default()).unwrap();
        let roll = out.calibration.sensors["b"].euler().roll;
        assert!(roll.to_degrees().abs() < 0.2, "roll {}", roll.to_degrees());
        assert!(out.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn height_anchor_shifts_everything() {
        let truth = two_sensors();
        let mut frames = Vec::new();
        for t in 0..5 {
            let mut f = FeatureFrame::new("a", t as f64);
            let inv = truth.sensors["a"].inverse();
            for i in 0..8 {
                for j in 0..5 {
                    f.ground.push(inv.transform_point(&Vector3::new(6.0 + i as f64, -2.0 + j as f64, 0.0)));
                }
            }
            frames.push(f);
        }
        let mut lifted = truth.clone();
        for p in lifted.sensors.values_mut() {
            *p = p.with_translation(p.translation() + Vector3::new(0.0, 0.0, -1.2));
        }
        let out = anchor_absolute_height(&lifted, "a", &frames, &PlaneFitConfig::default()).unwrap();
        for id in ["a", "b"] {
            assert!((out.sensors[id].translation().z - truth.sensors[id].translation().z).abs() < 1e-9);
        }
        assert_eq!(
            anchor_absolute_height(&lifted, "a", &[], &PlaneFitConfig::default()),
            Err(RefineError::InsufficientGround("a".into()))
        );
    }
}
