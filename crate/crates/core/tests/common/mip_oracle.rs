//! Brute-force enumeration of every pair selection, each selection solved as
//! a plain LP by an independent solver.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{Rotation3, Vector3};
use polecal::association::CandidatePair;
use polecal::calibration::{CalibrationSet, SensorConfig, Stage, VehicleGeometry};
use polecal::features::Frame;
use polecal::geometry::EulerAngles;
use polecal::mip::{build_mip, solve_mip, MipConfig, MipStatus, XyYaw};
use polecal::{Pole, Pose};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Sensor {
    theta_star: f64,
    roll: f64,
    pitch: f64,
}

struct Cand {
    a: usize,
    b: usize,
    pa: Vector3<f64>,
    pb: Vector3<f64>,
}

struct Instance {
    sensors: Vec<Sensor>,
    cands: Vec<Cand>,
    vehicle: VehicleGeometry,
    lambda: f64,
    gamma: f64,
    rho: f64,
}

fn tilt(s: &Sensor, p: &Vector3<f64>) -> Vector3<f64> {
    Rotation3::from_axis_angle(&Vector3::y_axis(), s.pitch)
        * Rotation3::from_axis_angle(&Vector3::x_axis(), s.roll)
        * p
}

/// XY of a sensor point as `(coef_x, coef_y, coef_dtheta, const)` per axis,
/// with `θ = θ* + Δ` and the rotation linearized in `Δ`.
fn xy_terms(s: &Sensor, p: &Vector3<f64>) -> [(f64, f64, f64, f64); 2] {
    let q = tilt(s, p);
    let (sn, cs) = s.theta_star.sin_cos();
    [
        (1.0, 0.0, -sn * q.x - cs * q.y, cs * q.x - sn * q.y),
        (0.0, 1.0, cs * q.x - sn * q.y, sn * q.x + cs * q.y),
    ]
}

/// Optimal value with exactly `subset` selected, or `None` if infeasible.
fn oracle_value(inst: &Instance, subset: &[bool]) -> Option<f64> {
    let mut p = Problem::new(OptimizationDirection::Minimize);
    let (x0, x1) = inst.vehicle.x_bounds();
    let (y0, y1) = inst.vehicle.y_bounds();
    let vars: Vec<_> = inst
        .sensors
        .iter()
        .map(|_| {
            let x = p.add_var(0.0, (x0, x1));
            let y = p.add_var(0.0, (y0, y1));
            let tp = p.add_var(inst.rho, (0.0, inst.gamma));
            let tm = p.add_var(inst.rho, (0.0, inst.gamma));
            (x, y, tp, tm)
        })
        .collect();
    let mut rejected = 0.0;
    for (c, &sel) in inst.cands.iter().zip(subset) {
        if !sel {
            rejected += 1.0;
            continue;
        }
        let ta = xy_terms(&inst.sensors[c.a], &c.pa);
        let tb = xy_terms(&inst.sensors[c.b], &c.pb);
        let mut abs_vars = Vec::new();
        for axis in 0..2 {
            let (va, vb) = (vars[c.a], vars[c.b]);
            let plus = p.add_var(1.0, (0.0, f64::INFINITY));
            let minus = p.add_var(1.0, (0.0, f64::INFINITY));
            let (ax, ay, at, ak) = ta[axis];
            let (bx, by, bt, bk) = tb[axis];
            // residual − (plus − minus) = 0
            p.add_constraint(
                [
                    (va.0, ax),
                    (va.1, ay),
                    (va.2, at),
                    (va.3, -at),
                    (vb.0, -bx),
                    (vb.1, -by),
                    (vb.2, -bt),
                    (vb.3, bt),
                    (plus, -1.0),
                    (minus, 1.0),
                ],
                ComparisonOp::Eq,
                bk - ak,
            );
            abs_vars.push(plus);
            abs_vars.push(minus);
        }
        p.add_constraint(
            abs_vars.iter().map(|&v| (v, 1.0)).collect::<Vec<_>>(),
            ComparisonOp::Le,
            inst.lambda,
        );
    }
    p.solve().ok().map(|s| s.objective() + rejected)
}

fn oracle_residual(inst: &Instance, c: &Cand, poses: &[XyYaw]) -> f64 {
    let mut total = 0.0;
    let ta = xy_terms(&inst.sensors[c.a], &c.pa);
    let tb = xy_terms(&inst.sensors[c.b], &c.pb);
    let (pa, pb) = (&poses[c.a], &poses[c.b]);
    let (da, db) = (
        pa.theta - inst.sensors[c.a].theta_star,
        pb.theta - inst.sensors[c.b].theta_star,
    );
    for axis in 0..2 {
        let (ax, ay, at, ak) = ta[axis];
        let (bx, by, bt, bk) = tb[axis];
        let r = ax * pa.x + ay * pa.y + at * da + ak - (bx * pb.x + by * pb.y + bt * db + bk);
        total += r.abs();
    }
    total
}

fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> (Instance, Vec<CandidatePair>, Vec<SensorConfig>, CalibrationSet) {
    let vehicle = VehicleGeometry::default();
    let (x0, x1) = vehicle.x_bounds();
    let (y0, y1) = vehicle.y_bounds();
    let n_s = rng.random_range(2..=3);
    let mut truth = Vec::new();
    let mut sensors = Vec::new();
    let mut configs = Vec::new();
    let mut guess = CalibrationSet::new(Stage::YawOnly);
    for k in 0..n_s {
        let yaw = rng.random_range(-3.1..3.1);
        let roll = rng.random_range(-0.02..0.02);
        let pitch = rng.random_range(-0.02..0.02);
        let pose = Pose::from_euler(
            Vector3::new(rng.random_range(x0..x1), rng.random_range(y0..y1), 1.5),
            EulerAngles::new(roll, pitch, yaw),
        );
        let theta_star = yaw + rng.random_range(-0.01..0.01);
        let id = format!("s{k}");
        let mut cfg = SensorConfig::new(&id, 1.0, 40.0);
        cfg.roll_guess = roll;
        cfg.pitch_guess = pitch;
        configs.push(cfg);
        guess.insert(&id, Pose::from_euler(Vector3::zeros(), EulerAngles::new(roll, pitch, theta_star)));
        truth.push(pose);
        sensors.push(Sensor { theta_star, roll, pitch });
    }
    let mut cands = Vec::new();
    let mut pairs = Vec::new();
    for index in 0..n {
        let a = rng.random_range(0..n_s);
        let b = (a + rng.random_range(1..n_s)) % n_s;
        let w = Vector3::new(
            rng.random_range(-25.0..25.0),
            rng.random_range(-25.0..25.0),
            rng.random_range(-0.5..0.5),
        );
        let wb = if rng.random_bool(0.6) {
            w
        } else {
            let d = rng.random_range(0.1..4.0);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            w + Vector3::new(d * phi.cos(), d * phi.sin(), 0.0)
        };
        let pa = truth[a].inverse().transform_point(&w);
        let pb = truth[b].inverse().transform_point(&wb);
        let up = Vector3::new(0.0, 0.0, 3.0);
        pairs.push(CandidatePair {
            sensor_a: format!("s{a}"),
            sensor_b: format!("s{b}"),
            pole_a: Pole::new(pa, pa + up, Frame::Sensor),
            pole_b: Pole::new(pb, pb + up, Frame::Sensor),
            timestamp: index as f64,
            index,
        });
        cands.push(Cand { a, b, pa, pb });
    }
    let inst = Instance {
        sensors,
        cands,
        vehicle,
        lambda: rng.random_range(0.3..1.0),
        gamma: [2f64, 5.0][rng.random_range(0..2)].to_radians(),
        rho: [0.0, 0.1, 1.0][rng.random_range(0..3)],
    };
    (inst, pairs, configs, guess)
}

/// Objective gap between branch-and-bound and enumeration on one random
/// instance with `n` candidates; `Err` describes any disagreement.
pub fn check(seed: u64, n: usize) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (inst, pairs, configs, guess) = random_instance(&mut rng, n);
    let cfg = MipConfig {
        lambda: inst.lambda,
        gamma: inst.gamma,
        rho: inst.rho,
        ..MipConfig::default()
    };
    let problem = build_mip(&pairs, &guess, &configs, &inst.vehicle, &cfg).map_err(|e| e.to_string())?;
    let sol = solve_mip(&problem, &cfg);
    if sol.status != MipStatus::Optimal {
        return Err(format!("seed {seed}: status {:?}", sol.status));
    }

    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        let subset: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
        if let Some(v) = oracle_value(&inst, &subset) {
            best = best.min(v);
        }
    }
    let tol = 1e-6 * best.max(1.0);
    let gap = (sol.objective - best).abs();
    if gap > tol {
        return Err(format!("seed {seed}: objective {} vs enumeration {best}", sol.objective));
    }
    if sol.gap > 1e-6 {
        return Err(format!("seed {seed}: reported gap {}", sol.gap));
    }
    let ours: Vec<bool> = (0..n).map(|i| sol.selected.contains(&i)).collect();
    let v = oracle_value(&inst, &ours).ok_or_else(|| format!("seed {seed}: selected set infeasible"))?;
    // ties aside, the selected set must be an optimal one
    if v > best + tol {
        return Err(format!("seed {seed}: selection worth {v}, optimum {best}"));
    }
    // reorder to instance sensor indices; unused sensors keep their guess
    let poses: Vec<XyYaw> = inst
        .sensors
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let id = format!("s{k}");
            match problem.sensors.iter().position(|l| l.id == id) {
                Some(j) => sol.poses[j],
                None => XyYaw { x: 0.0, y: 0.0, theta: s.theta_star },
            }
        })
        .collect();
    for (i, c) in inst.cands.iter().enumerate() {
        if ours[i] {
            let r = oracle_residual(&inst, c, &poses);
            if r > inst.lambda + 1e-6 {
                return Err(format!("seed {seed}: selected pair {i} has error {r}"));
            }
        }
    }
    for (p, s) in sol.poses.iter().zip(&problem.sensors) {
        if !inst.vehicle.contains_xy(p.x, p.y, 1e-9) || (p.theta - s.theta_star).abs() > inst.gamma + 1e-9 {
            return Err(format!("seed {seed}: pose {p:?} out of bounds"));
        }
    }
    Ok(gap)
}
