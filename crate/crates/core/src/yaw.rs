//! Per-sensor yaw estimation from egomotion and temporally matched poles.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::{match_consecutive, TemporalMatchSet};
use crate::calibration::FeatureFrame;
use crate::features::{pole_pole_distance, transform_pole};
use crate::geometry::{
    conjugate_increment, interpolate_pose, relative_increment, wrap_angle, EulerAngles,
    GeometryError,
};
use crate::{Pose, TimedPose};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum YawError {
    #[error("need at least two frames, got {0}")]
    TooFewFrames(usize),
    #[error("no temporal pole matches")]
    EmptyMatches,
    #[error("yaw did not converge (last change {delta:.3e} rad)")]
    NonConvergence { yaw: f64, delta: f64 },
    #[error("yaw cost is flat; the motion does not constrain the yaw")]
    Unobservable,
    #[error(transparent)]
    Ego(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YawWarning {
    /// The vehicle barely rotated over the sequence; `total` is the summed
    /// absolute heading change in radians.
    LowRotation { total: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct YawConfig {
    pub max_match_dist: f64,
    pub grid_samples: usize,
    pub yaw_tol: f64,
    pub max_iters: usize,
    /// Total absolute vehicle rotation (radians) below which a warning is attached.
    pub min_rotation: f64,
}

impl Default for YawConfig {
    fn default() -> Self {
        Self {
            max_match_dist: 1.0,
            grid_samples: 721,
            yaw_tol: 1e-4,
            max_iters: 20,
            min_rotation: 10f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YawEstimate {
    pub sensor_id: String,
    pub yaw: f64,
    /// Mean matched-pole distance at the estimate (meters).
    pub residual: f64,
    pub iterations: usize,
    pub match_count: usize,
    /// Outer objective after each iteration: matched distances plus the match
    /// gate for every unmatched pole, averaged over all current poles.
    pub cost_history: Vec<f64>,
    pub warnings: Vec<YawWarning>,
}

/// Replaces the yaw of `template`, keeping its roll, pitch and translation.
pub fn with_yaw(template: &Pose, yaw: f64) -> Pose {
    let e = template.euler();
    Pose::from_euler(*template.translation(), EulerAngles::new(e.roll, e.pitch, yaw))
}

/// Mean distance between matched previous poles and current poles mapped by
/// the increment predicted for calibration yaw `theta`.
pub fn yaw_cost(
    theta: f64,
    template: &Pose,
    vehicle_incs: &[Pose],
    matches: &[TemporalMatchSet],
) -> Result<f64, YawError> {
    let calib = with_yaw(template, theta);
    let mut sum = 0.0;
    let mut n = 0usize;
    for (inc, m) in vehicle_incs.iter().zip(matches) {
        if m.is_empty() {
            continue;
        }
        let s = conjugate_increment(&calib, inc);
        for (q, p) in &m.pairs {
            let moved = transform_pole(&s, p);
            sum += pole_pole_distance(q, &moved).unwrap_or(0.0);
            n += 1;
        }
    }
    if n == 0 {
        return Err(YawError::EmptyMatches);
    }
    Ok(sum / n as f64)
}

/// Vehicle increments between consecutive frame timestamps.
pub fn vehicle_increments(frames: &[FeatureFrame], ego: &[TimedPose]) -> Result<Vec<Pose>, GeometryError> {
    let poses: Vec<Pose> = frames
        .iter()
        .map(|f| interpolate_pose(ego, f.timestamp))
        .collect::<Result<_, _>>()?;
    Ok(poses
        .windows(2)
        .map(|w| relative_increment(&w[0], &w[1]))
        .collect())
}

/// Golden-section minimization of `f` on `[lo, hi]`.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > tol {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Grid-seeded golden-section minimization over `[center − half, center + half]`.
/// Returns `(argmin, min, grid_spread)` where `grid_spread` is max − min over the grid.
pub fn minimize_yaw<F: FnMut(f64) -> f64>(
    mut f: F,
    center: f64,
    half_width: f64,
    samples: usize,
) -> (f64, f64, f64) {
    let samples = samples.max(3);
    let step = 2.0 * half_width / (samples - 1) as f64;
    let mut best = (0usize, f64::INFINITY);
    let mut worst = f64::NEG_INFINITY;
    for k in 0..samples {
        let v = f(center - half_width + step * k as f64);
        if v < best.1 {
            best = (k, v);
        }
        worst = worst.max(v);
    }
    let x0 = center - half_width + step * best.0 as f64;
    let (x, v) = golden_section(&mut f, x0 - step, x0 + step, 1e-10);
    let (x, v) = if v <= best.1 { (x, v) } else { (x0, best.1) };
    (x, v, worst - best.1)
}

/// Options for one estimation run beyond the static config.
#[derive(Debug, Clone, Copy)]
pub struct YawSearch {
    /// Calibration providing roll, pitch and translation.
    pub template: Pose,
    /// Starting yaw used for the first matching pass.
    pub initial: Option<f64>,
    /// Search interval `center ± half_width`; the whole circle when `None`.
    pub window: Option<(f64, f64)>,
    /// Skip increments turning more than this (rad). With an unknown mount
    /// translation the lever arm biases turning increments, while pure
    /// translations predict the sensor motion from yaw alone.
    pub max_step_turn: Option<f64>,
}

const MIN_STRAIGHT_STEPS: usize = 10;

/// Estimates a sensor's yaw by alternating pole matching and 1-D minimization.
pub fn estimate_yaw(
    sensor_id: &str,
    frames: &[FeatureFrame],
    ego: &[TimedPose],
    search: &YawSearch,
    config: &YawConfig,
) -> Result<YawEstimate, YawError> {
    if frames.len() < 2 {
        return Err(YawError::TooFewFrames(frames.len()));
    }
    let incs = vehicle_increments(frames, ego)?;
    let rotation: f64 = incs.iter().map(|v| wrap_angle(v.euler().yaw).abs()).sum();
    let mut warnings = Vec::new();
    if rotation < config.min_rotation {
        log::warn!(
            "sensor {sensor_id}: vehicle rotated only {:.2} deg; yaw is weakly constrained",
            rotation.to_degrees()
        );
        warnings.push(YawWarning::LowRotation { total: rotation });
    }

    let (center, half) = search
        .window
        .unwrap_or((0.0, std::f64::consts::PI));
    let gate = config.max_match_dist;
    let mut usable: Vec<bool> = match search.max_step_turn {
        Some(lim) => incs.iter().map(|v| wrap_angle(v.euler().yaw).abs() <= lim).collect(),
        None => vec![true; incs.len()],
    };
    if usable.iter().filter(|&&u| u).count() < MIN_STRAIGHT_STEPS {
        usable = vec![true; incs.len()];
    }
    let curr_poles: usize = frames[1..]
        .iter()
        .zip(&usable)
        .filter(|(_, &u)| u)
        .map(|(f, _)| f.poles.len())
        .sum();
    // outer objective: matched distances plus `gate` per unmatched current
    // pole, so that alternating matching and minimization never increases it
    let objective = |theta: f64, matches: &[TemporalMatchSet]| -> f64 {
        let n: usize = matches.iter().map(TemporalMatchSet::len).sum();
        match yaw_cost(theta, &search.template, &incs, matches) {
            Ok(mean) => (mean * n as f64 + gate * (curr_poles - n) as f64) / curr_poles.max(1) as f64,
            Err(_) => gate,
        }
    };

    let mut yaw = search.initial;
    let mut kept: Option<Vec<TemporalMatchSet>> = None;
    let mut history = Vec::new();
    let mut last_delta = f64::INFINITY;
    let mut result = None;
    for it in 1..=config.max_iters {
        let fresh: Vec<TemporalMatchSet> = frames
            .windows(2)
            .zip(&incs)
            .zip(&usable)
            .map(|((w, inc), &u)| {
                if !u {
                    return TemporalMatchSet {
                        t_prev: w[0].timestamp,
                        t_curr: w[1].timestamp,
                        pairs: Vec::new(),
                    };
                }
                let pred = yaw.map(|y| conjugate_increment(&with_yaw(&search.template, y), inc));
                match_consecutive(&w[0], &w[1], pred.as_ref(), gate)
            })
            .collect();
        let matches = match (kept.take(), yaw) {
            (Some(old), Some(y)) if objective(y, &old) < objective(y, &fresh) => old,
            _ => fresh,
        };
        let count: usize = matches.iter().map(TemporalMatchSet::len).sum();
        if count == 0 {
            return Err(YawError::EmptyMatches);
        }
        let cost = |th: f64| yaw_cost(th, &search.template, &incs, &matches).unwrap_or(f64::INFINITY);
        let (mut est, mut val, spread) = minimize_yaw(cost, center, half, config.grid_samples);
        if spread <= 1e-12 * (1.0 + val.abs()) {
            return Err(YawError::Unobservable);
        }
        if let Some(y) = yaw {
            let at_prev = cost(y);
            if at_prev <= val {
                est = y;
                val = at_prev;
            }
        }
        let est = wrap_angle(est);
        history.push(objective(est, &matches));
        let delta = yaw.map_or(f64::INFINITY, |y| wrap_angle(est - y).abs());
        last_delta = delta;
        yaw = Some(est);
        result = Some((est, val, count, it));
        kept = Some(matches);
        if delta < config.yaw_tol {
            break;
        }
    }
    let (est, val, count, iterations) = result.expect("at least one iteration");
    if iterations == config.max_iters && last_delta >= 10.0 * config.yaw_tol {
        return Err(YawError::NonConvergence {
            yaw: est,
            delta: last_delta,
        });
    }
    Ok(YawEstimate {
        sensor_id: sensor_id.to_string(),
        yaw: est,
        residual: val,
        iterations,
        match_count: count,
        cost_history: history,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Frame;
    use crate::Pole;
    use nalgebra::Vector3;

    fn pole(x: f64, y: f64) -> Pole {
        Pole::new(Vector3::new(x, y, -1.0), Vector3::new(x, y, 2.0), Frame::Sensor)
    }

    #[test]
    fn stationary_vehicle_gives_flat_zero_cost() {
        let p = pole(5.0, 1.0);
        let m = TemporalMatchSet {
            t_prev: 0.0,
            t_curr: 0.1,
            pairs: vec![(p, p)],
        };
        let incs = vec![Pose::identity()];
        for k in 0..36 {
            let th = -3.1 + k as f64 * 0.17;
            let c = yaw_cost(th, &Pose::identity(), &incs, &[m.clone()]).unwrap();
            assert!(c.abs() < 1e-12);
        }
    }

    #[test]
    fn empty_matches_error() {
        let m = TemporalMatchSet {
            t_prev: 0.0,
            t_curr: 0.1,
            pairs: vec![],
        };
        assert_eq!(
            yaw_cost(0.0, &Pose::identity(), &[Pose::identity()], &[m]),
            Err(YawError::EmptyMatches)
        );
    }

    #[test]
    fn single_turn_cost_matches_direct_evaluation() {
        // vehicle moves 2 m forward while turning 90°; sensor mounted at yaw 0.7
        let inc = Pose::from_euler(Vector3::new(2.0, 1.0, 0.0), EulerAngles::yaw_only(std::f64::consts::FRAC_PI_2));
        let truth = Pose::from_yaw(0.7);
        let s = conjugate_increment(&truth, &inc);
        let q = pole(6.0, -1.5);
        let p = transform_pole(&s.inverse(), &q);
        let m = TemporalMatchSet {
            t_prev: 0.0,
            t_curr: 0.1,
            pairs: vec![(q, p)],
        };
        for k in 0..=360 {
            let th = -std::f64::consts::PI + k as f64 * std::f64::consts::PI / 180.0;
            let c = yaw_cost(th, &Pose::identity(), &[inc], &[m.clone()]).unwrap();
            // closed form: rotations commute about z, so the sensor increment is
            // R(-θ)·t_v plus the vehicle rotation
            let rz = |a: f64| nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), a);
            let t = rz(-th) * inc.translation();
            let r = rz(std::f64::consts::FRAC_PI_2);
            let pb = r * p.base + t;
            let pt = r * p.top + t;
            let axis = (q.top - q.base).normalize();
            let perp = |x: Vector3<f64>| {
                let d = x - q.base;
                (d - axis * axis.dot(&d)).norm()
            };
            let expected = perp(pb).hypot(perp(pt));
            assert!((c - expected).abs() < 1e-9, "theta {th}: {c} vs {expected}");
        }
        let at_truth = yaw_cost(0.7, &Pose::identity(), &[inc], &[m]).unwrap();
        assert!(at_truth < 1e-9);
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let (x, v) = golden_section(|x| (x - 0.3).powi(2) + 1.0, -1.0, 2.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-6);
        assert!((v - 1.0).abs() < 1e-12);
        let (x, _, spread) = minimize_yaw(|x| (x - 2.0).abs(), 0.0, std::f64::consts::PI, 721);
        assert!((x - 2.0).abs() < 1e-8);
        assert!(spread > 1.0);
    }

    #[test]
    fn too_few_frames() {
        let f = FeatureFrame::new("s", 0.0);
        let r = estimate_yaw(
            "s",
            &[f],
            &[],
            &YawSearch {
                template: Pose::identity(),
                initial: None,
                window: None,
                max_step_turn: None,
            },
            &YawConfig::default(),
        );
        assert_eq!(r, Err(YawError::TooFewFrames(1)));
    }
}
