//! Joint x/y/yaw estimation with pole-pair selection as a mixed-integer
//! linear program, solved by best-first branch-and-bound over LP relaxations.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt::Write as _;

use nalgebra::{Rotation2, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::CandidatePair;
use crate::calibration::{CalibrationSet, SensorConfig, Stage, VehicleGeometry};
use crate::geometry::EulerAngles;
use crate::lp::{LinearProgram, LpStatus};
use crate::Pose;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MipError {
    #[error("no yaw estimate for sensor {0}")]
    MissingYaw(String),
    #[error("no candidate pairs")]
    EmptyCandidates,
    #[error("invalid problem: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MipConfig {
    /// Maximum matching error `|δ| + |ε|` of a selected pair (meters).
    pub lambda: f64,
    /// Yaw trust radius around the linearization point (radians).
    pub gamma: f64,
    /// Weight of `|θ − θ*|` in the objective.
    pub rho: f64,
    pub gap_tol: f64,
    pub node_limit: usize,
    /// Upper bound for the indicator constants; derived from the sensors when `None`.
    pub big_m: Option<f64>,
}

impl Default for MipConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            gamma: 5f64.to_radians(),
            rho: 1.0,
            gap_tol: 1e-6,
            node_limit: 10_000,
            big_m: None,
        }
    }
}

/// Linearization of one sensor's yaw rotation around `theta_star`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorLinearization {
    pub id: String,
    pub theta_star: f64,
    /// `sin θ ≈ m θ + b`
    pub m: f64,
    pub b: f64,
    /// `cos θ ≈ m̄ θ + b̄`
    pub m_bar: f64,
    pub b_bar: f64,
    pub roll: f64,
    pub pitch: f64,
}

impl SensorLinearization {
    pub fn new(id: impl Into<String>, theta_star: f64, roll: f64, pitch: f64) -> Self {
        let m = theta_star.cos();
        let m_bar = -theta_star.sin();
        Self {
            id: id.into(),
            theta_star,
            m,
            b: theta_star.sin() - m * theta_star,
            m_bar,
            b_bar: theta_star.cos() - m_bar * theta_star,
            roll,
            pitch,
        }
    }

    fn is_consistent(&self) -> bool {
        let t = self.theta_star;
        let ok = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + b.abs());
        ok(self.m, t.cos())
            && ok(self.b, t.sin() - t.cos() * t)
            && ok(self.m_bar, -t.sin())
            && ok(self.b_bar, t.cos() + t.sin() * t)
    }

    /// Base point with roll and pitch applied (yaw excluded).
    pub fn tilt(&self, p: &Vector3<f64>) -> Vector3<f64> {
        EulerAngles::new(self.roll, self.pitch, 0.0).to_quaternion() * p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MipCandidate {
    /// Index of the originating [`CandidatePair`].
    pub index: usize,
    pub sensor_a: usize,
    pub sensor_b: usize,
    /// Tilted base points `R_pitch R_roll · base` in each sensor frame.
    pub tilted_a: Vector3<f64>,
    pub tilted_b: Vector3<f64>,
    /// Indicator constant for this candidate.
    pub big_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MipProblem {
    pub sensors: Vec<SensorLinearization>,
    pub vehicle: VehicleGeometry,
    pub gamma: f64,
    pub lambda: f64,
    pub rho: f64,
    pub big_m: f64,
    pub candidates: Vec<MipCandidate>,
}

/// Continuous pose variables of one sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XyYaw {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MipStatus {
    Optimal,
    GapLimit,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MipSolution {
    pub poses: Vec<XyYaw>,
    /// Candidate indices with `a = 0`, ascending.
    pub selected: Vec<usize>,
    pub objective: f64,
    pub gap: f64,
    pub status: MipStatus,
    pub nodes: usize,
}

/// Affine expression `Σ coef·var + constant` over the sensor variables
/// `(x, y, θ)` with sensor-major layout.
#[derive(Debug, Clone, Copy)]
struct Affine {
    sa: usize,
    sb: usize,
    /// coefficients of (x_a, y_a, θ_a, x_b, y_b, θ_b)
    c: [f64; 6],
    k: f64,
}

impl Affine {
    fn eval(&self, poses: &[XyYaw]) -> f64 {
        let (a, b) = (&poses[self.sa], &poses[self.sb]);
        self.c[0] * a.x
            + self.c[1] * a.y
            + self.c[2] * a.theta
            + self.c[3] * b.x
            + self.c[4] * b.y
            + self.c[5] * b.theta
            + self.k
    }
}

impl MipProblem {
    fn residual_exprs(&self, c: &MipCandidate) -> (Affine, Affine) {
        let sa = &self.sensors[c.sensor_a];
        let sb = &self.sensors[c.sensor_b];
        let (pa, pb) = (c.tilted_a, c.tilted_b);
        // XY of R_lin(θ) p̃ + (x, y)
        let rx = |s: &SensorLinearization, p: &Vector3<f64>| {
            (s.m_bar * p.x - s.m * p.y, s.b_bar * p.x - s.b * p.y)
        };
        let ry = |s: &SensorLinearization, p: &Vector3<f64>| {
            (s.m * p.x + s.m_bar * p.y, s.b * p.x + s.b_bar * p.y)
        };
        let (ta, ka) = rx(sa, &pa);
        let (tb, kb) = rx(sb, &pb);
        let ex = Affine {
            sa: c.sensor_a,
            sb: c.sensor_b,
            c: [1.0, 0.0, ta, -1.0, 0.0, -tb],
            k: ka - kb,
        };
        let (ta, ka) = ry(sa, &pa);
        let (tb, kb) = ry(sb, &pb);
        let ey = Affine {
            sa: c.sensor_a,
            sb: c.sensor_b,
            c: [0.0, 1.0, ta, 0.0, -1.0, -tb],
            k: ka - kb,
        };
        (ex, ey)
    }

    /// Linearized XY residual of a candidate at the given poses.
    pub fn residual(&self, candidate: &MipCandidate, poses: &[XyYaw]) -> (f64, f64) {
        let (ex, ey) = self.residual_exprs(candidate);
        (ex.eval(poses), ey.eval(poses))
    }

    fn sensor_bounds(&self, s: usize) -> [(f64, f64); 3] {
        let t = self.sensors[s].theta_star;
        [
            self.vehicle.x_bounds(),
            self.vehicle.y_bounds(),
            (t - self.gamma, t + self.gamma),
        ]
    }

    /// Largest absolute value of an expression over the variable box.
    fn expr_bound(&self, e: &Affine) -> f64 {
        let ba = self.sensor_bounds(e.sa);
        let bb = self.sensor_bounds(e.sb);
        let (mut lo, mut hi) = (e.k, e.k);
        for (k, &(l, h)) in ba.iter().chain(bb.iter()).enumerate() {
            let (p, q) = (e.c[k] * l, e.c[k] * h);
            lo += p.min(q);
            hi += p.max(q);
        }
        lo.abs().max(hi.abs())
    }

    /// Poses at the linearization point with x/y at the box center.
    pub fn nominal_poses(&self) -> Vec<XyYaw> {
        let (x0, x1) = self.vehicle.x_bounds();
        let (y0, y1) = self.vehicle.y_bounds();
        self.sensors
            .iter()
            .map(|s| XyYaw {
                x: 0.5 * (x0 + x1),
                y: 0.5 * (y0 + y1),
                theta: s.theta_star,
            })
            .collect()
    }

    /// Objective value of a selection at given poses (with the split
    /// auxiliaries at their optimal values).
    pub fn objective_at(&self, poses: &[XyYaw], selected: &[bool]) -> f64 {
        let mut obj = 0.0;
        for (c, &sel) in self.candidates.iter().zip(selected) {
            if sel {
                let (dx, dy) = self.residual(c, poses);
                obj += dx.abs() + dy.abs();
            } else {
                obj += 1.0;
            }
        }
        for (p, s) in poses.iter().zip(&self.sensors) {
            obj += self.rho * (p.theta - s.theta_star).abs();
        }
        obj
    }

    pub fn validate(&self) -> Result<(), MipError> {
        let bad = |m: &str| Err(MipError::Invalid(m.to_string()));
        if !(self.lambda > 0.0) {
            return bad("lambda must be positive");
        }
        if !(self.gamma > 0.0) {
            return bad("gamma must be positive");
        }
        if !(self.big_m > self.lambda) {
            return bad("big_M must exceed lambda");
        }
        if self.rho < 0.0 {
            return bad("rho must be non-negative");
        }
        if !self.sensors.iter().all(SensorLinearization::is_consistent) {
            return bad("linearization coefficients do not match theta*");
        }
        Ok(())
    }
}

/// Builds the stage-2 problem from candidates and stage-1 yaws.
pub fn build_mip(
    candidates: &[CandidatePair],
    yaw_estimates: &CalibrationSet,
    sensors: &[SensorConfig],
    vehicle: &VehicleGeometry,
    config: &MipConfig,
) -> Result<MipProblem, MipError> {
    if candidates.is_empty() {
        return Err(MipError::EmptyCandidates);
    }
    let used: std::collections::BTreeSet<&str> = candidates
        .iter()
        .flat_map(|c| [c.sensor_a.as_str(), c.sensor_b.as_str()])
        .collect();
    // configured order first, then anything else alphabetically
    let mut ids: Vec<&str> = sensors
        .iter()
        .map(|s| s.id.as_str())
        .filter(|id| used.contains(id))
        .collect();
    ids.extend(used.iter().filter(|id| !ids.contains(id)).collect::<Vec<_>>());
    let mut lin = Vec::with_capacity(ids.len());
    let mut order: BTreeMap<&str, usize> = BTreeMap::new();
    for id in ids {
        let theta = yaw_estimates
            .yaw(id)
            .ok_or_else(|| MipError::MissingYaw(id.to_string()))?;
        let cfg = sensors.iter().find(|s| s.id == id);
        let (roll, pitch) = cfg.map_or((0.0, 0.0), |s| (s.roll_guess, s.pitch_guess));
        order.insert(id, lin.len());
        lin.push(SensorLinearization::new(id, theta, roll, pitch));
    }
    let pending: Vec<_> = candidates
        .iter()
        .map(|c| (c, order[c.sensor_a.as_str()], order[c.sensor_b.as_str()]))
        .collect();
    let max_range = sensors.iter().map(|s| s.max_range).fold(0.0, f64::max);
    let big_m = config
        .big_m
        .unwrap_or(2.0 * (max_range + vehicle.diagonal()));
    let mut problem = MipProblem {
        sensors: lin,
        vehicle: *vehicle,
        gamma: config.gamma,
        lambda: config.lambda,
        rho: config.rho,
        big_m,
        candidates: Vec::with_capacity(pending.len()),
    };
    for (c, a, b) in pending {
        let mut mc = MipCandidate {
            index: c.index,
            sensor_a: a,
            sensor_b: b,
            tilted_a: problem.sensors[a].tilt(&c.pole_a.base),
            tilted_b: problem.sensors[b].tilt(&c.pole_b.base),
            big_m,
        };
        let (ex, ey) = problem.residual_exprs(&mc);
        let tight = problem.expr_bound(&ex).max(problem.expr_bound(&ey));
        if tight > big_m {
            log::warn!(
                "candidate {} needs an indicator constant of {tight:.2} > big_M {big_m:.2}",
                c.index
            );
        }
        // the bound must hold everywhere so that rejecting stays feasible
        mc.big_m = tight * (1.0 + 1e-9) + 1e-9;
        problem.candidates.push(mc);
    }
    problem.validate()?;
    Ok(problem)
}

/// Names and layout of the LP columns for a set of active candidates.
struct Layout {
    n_sensors: usize,
    /// candidate positions in `problem.candidates` that are in the LP
    active: Vec<usize>,
}

impl Layout {
    fn x(&self, s: usize) -> usize {
        4 * s
    }
    fn y(&self, s: usize) -> usize {
        4 * s + 1
    }
    fn tp(&self, s: usize) -> usize {
        4 * s + 2
    }
    fn tm(&self, s: usize) -> usize {
        4 * s + 3
    }
    fn cand(&self, k: usize) -> usize {
        4 * self.n_sensors + 5 * k
    }
}

/// Row terms of an affine expression in LP columns, plus its constant.
fn expr_terms(layout: &Layout, problem: &MipProblem, e: &Affine) -> (Vec<(usize, f64)>, f64) {
    let mut terms = Vec::with_capacity(8);
    let mut k = e.k;
    for (side, s) in [(0usize, e.sa), (3usize, e.sb)] {
        terms.push((layout.x(s), e.c[side]));
        terms.push((layout.y(s), e.c[side + 1]));
        let ct = e.c[side + 2];
        terms.push((layout.tp(s), ct));
        terms.push((layout.tm(s), -ct));
        k += ct * problem.sensors[s].theta_star;
    }
    (terms, k)
}

/// One row of the model in `lo ≤ Σ coef·col ≤ hi` form.
struct ModelRow {
    name: String,
    terms: Vec<(usize, f64)>,
    lo: Option<f64>,
    hi: Option<f64>,
}

fn model_rows(problem: &MipProblem, layout: &Layout) -> Vec<ModelRow> {
    let mut rows = Vec::with_capacity(5 * layout.active.len());
    for (k, &ci) in layout.active.iter().enumerate() {
        let c = &problem.candidates[ci];
        let base = layout.cand(k);
        let (up, um, vp, vm, a) = (base, base + 1, base + 2, base + 3, base + 4);
        let (ex, ey) = problem.residual_exprs(c);
        for (axis, e, p, m) in [("x", ex, up, um), ("y", ey, vp, vm)] {
            let (terms, konst) = expr_terms(layout, problem, &e);
            // expr − (p − m) ≤ M a
            let mut t1 = terms.clone();
            t1.extend([(p, -1.0), (m, 1.0), (a, -c.big_m)]);
            rows.push(ModelRow {
                name: format!("c{}_{axis}_hi", c.index),
                terms: t1,
                lo: None,
                hi: Some(-konst),
            });
            // (p − m) − expr ≤ M a
            let mut t2: Vec<_> = terms.iter().map(|&(j, v)| (j, -v)).collect();
            t2.extend([(p, 1.0), (m, -1.0), (a, -c.big_m)]);
            rows.push(ModelRow {
                name: format!("c{}_{axis}_lo", c.index),
                terms: t2,
                lo: None,
                hi: Some(konst),
            });
        }
        rows.push(ModelRow {
            name: format!("c{}_cap", c.index),
            terms: vec![
                (up, 1.0),
                (um, 1.0),
                (vp, 1.0),
                (vm, 1.0),
                (a, problem.lambda),
            ],
            lo: None,
            hi: Some(problem.lambda),
        });
    }
    rows
}

/// Fixed value of a candidate's binary, if any.
type Fixing = Option<bool>;

struct NodeLp {
    objective: f64,
    poses: Vec<XyYaw>,
    /// `a` per candidate (fixed ones included)
    a: Vec<f64>,
}

fn node_lp(problem: &MipProblem, fix: &[Fixing]) -> (LinearProgram<f64>, Layout) {
    let n_s = problem.sensors.len();
    let layout = Layout {
        n_sensors: n_s,
        active: (0..problem.candidates.len())
            .filter(|&i| fix[i] != Some(true))
            .collect(),
    };
    let mut lp = LinearProgram::<f64>::new();
    for s in 0..n_s {
        let [bx, by, _] = problem.sensor_bounds(s);
        lp.add_var(0.0, Some(bx.0), Some(bx.1));
        lp.add_var(0.0, Some(by.0), Some(by.1));
        lp.add_var(problem.rho, Some(0.0), Some(problem.gamma));
        lp.add_var(problem.rho, Some(0.0), Some(problem.gamma));
    }
    for &ci in &layout.active {
        for _ in 0..4 {
            lp.add_var(1.0, Some(0.0), Some(problem.lambda));
        }
        let a = match fix[ci] {
            Some(false) => lp.add_var(1.0, Some(0.0), Some(0.0)),
            _ => lp.add_var(1.0, Some(0.0), Some(1.0)),
        };
        lp.set_start_upper(a, fix[ci].is_none());
    }
    for row in model_rows(problem, &layout) {
        lp.add_row(&row.terms, row.lo, row.hi);
    }
    (lp, layout)
}

fn solve_node(problem: &MipProblem, fix: &[Fixing]) -> Option<NodeLp> {
    let n_s = problem.sensors.len();
    let (lp, layout) = node_lp(problem, fix);
    let sol = lp.solve();
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return None,
        other => {
            log::warn!("node LP ended with {other:?}; treating as infeasible");
            return None;
        }
    }
    let rejected = (problem.candidates.len() - layout.active.len()) as f64;
    let poses = (0..n_s)
        .map(|s| XyYaw {
            x: sol.x[layout.x(s)],
            y: sol.x[layout.y(s)],
            theta: problem.sensors[s].theta_star + sol.x[layout.tp(s)] - sol.x[layout.tm(s)],
        })
        .collect();
    let mut a = vec![1.0; problem.candidates.len()];
    for (k, &ci) in layout.active.iter().enumerate() {
        a[ci] = sol.x[layout.cand(k) + 4];
    }
    Some(NodeLp {
        objective: sol.objective + rejected,
        poses,
        a,
    })
}

#[derive(Debug, Clone)]
struct Incumbent {
    objective: f64,
    poses: Vec<XyYaw>,
    selected: Vec<bool>,
}

/// Solves the LP with a fixed selection; `None` when the selection is infeasible.
fn solve_fixed(problem: &MipProblem, selected: &[bool]) -> Option<Incumbent> {
    let fix: Vec<Fixing> = selected.iter().map(|&s| Some(!s)).collect();
    let node = solve_node(problem, &fix)?;
    Some(Incumbent {
        objective: node.objective,
        poses: node.poses,
        selected: selected.to_vec(),
    })
}

/// Selection implied by fixed poses: accept exactly the pairs under the cap.
fn selection_at(problem: &MipProblem, poses: &[XyYaw]) -> Vec<bool> {
    problem
        .candidates
        .iter()
        .map(|c| {
            let (dx, dy) = problem.residual(c, poses);
            dx.abs() + dy.abs() <= problem.lambda * (1.0 - 1e-9)
        })
        .collect()
}

/// Alternates "select by residual" and "solve with that selection".
fn polish(problem: &MipProblem, start: &[XyYaw], best: &mut Incumbent) {
    let mut poses = start.to_vec();
    let mut last: Option<Vec<bool>> = None;
    for _ in 0..10 {
        let sel = selection_at(problem, &poses);
        if last.as_ref() == Some(&sel) {
            break;
        }
        let Some(inc) = solve_fixed(problem, &sel) else {
            break;
        };
        if inc.objective < best.objective - 1e-12 {
            *best = inc.clone();
        }
        poses = inc.poses;
        last = Some(sel);
    }
}

/// Unconstrained L1 fit of the poses to a selection (no cap rows, so it is
/// always feasible). Used to seed the polish from a rough selection.
fn l1_fit(problem: &MipProblem, selected: &[bool]) -> Option<Vec<XyYaw>> {
    let n_s = problem.sensors.len();
    let layout = Layout {
        n_sensors: n_s,
        active: Vec::new(),
    };
    let mut lp = LinearProgram::<f64>::new();
    for s in 0..n_s {
        let [bx, by, _] = problem.sensor_bounds(s);
        lp.add_var(0.0, Some(bx.0), Some(bx.1));
        lp.add_var(0.0, Some(by.0), Some(by.1));
        lp.add_var(problem.rho, Some(0.0), Some(problem.gamma));
        lp.add_var(problem.rho, Some(0.0), Some(problem.gamma));
    }
    for (c, _) in problem.candidates.iter().zip(selected).filter(|(_, &s)| s) {
        let (ex, ey) = problem.residual_exprs(c);
        for e in [ex, ey] {
            let (mut terms, k) = expr_terms(&layout, problem, &e);
            let p = lp.add_var(1.0, Some(0.0), None);
            let m = lp.add_var(1.0, Some(0.0), None);
            terms.push((p, -1.0));
            terms.push((m, 1.0));
            lp.add_row(&terms, Some(-k), Some(-k));
        }
    }
    let sol = lp.solve();
    if sol.status != LpStatus::Optimal {
        return None;
    }
    Some(
        (0..n_s)
            .map(|s| XyYaw {
                x: sol.x[layout.x(s)],
                y: sol.x[layout.y(s)],
                theta: problem.sensors[s].theta_star + sol.x[layout.tp(s)] - sol.x[layout.tm(s)],
            })
            .collect(),
    )
}

/// Per sensor pair, the relative yaw and offset agreed on by most
/// candidates; returns the candidates within `lambda` of it. Hypotheses come
/// from single candidates (no relative yaw) and from candidate pairs far
/// enough apart to fix a rotation, drawn from at most 64 generators per pair.
pub fn consensus_inliers(problem: &MipProblem) -> Vec<bool> {
    let xy = |s: usize, p: &Vector3<f64>| {
        let (sn, cs) = problem.sensors[s].theta_star.sin_cos();
        Vector2::new(cs * p.x - sn * p.y, sn * p.x + cs * p.y)
    };
    let mut by_pair: BTreeMap<(usize, usize), Vec<(usize, Vector2<f64>, Vector2<f64>)>> =
        BTreeMap::new();
    for (i, c) in problem.candidates.iter().enumerate() {
        by_pair.entry((c.sensor_a, c.sensor_b)).or_default().push((
            i,
            xy(c.sensor_a, &c.tilted_a),
            xy(c.sensor_b, &c.tilted_b),
        ));
    }
    let lam = problem.lambda;
    let max_rot = 2.0 * problem.gamma;
    let mut selected = vec![false; problem.candidates.len()];
    for list in by_pair.values() {
        let err = |rot: &Rotation2<f64>, d: &Vector2<f64>, pa: &Vector2<f64>, pb: &Vector2<f64>| {
            let r = pa - rot * pb - d;
            r.x.abs() + r.y.abs()
        };
        let score = |rot: &Rotation2<f64>, d: &Vector2<f64>| -> f64 {
            list.iter()
                .map(|(_, pa, pb)| {
                    let e = err(rot, d, pa, pb);
                    if e <= lam {
                        e
                    } else {
                        1.0
                    }
                })
                .sum()
        };
        let mut best: Option<(Rotation2<f64>, Vector2<f64>, f64)> = None;
        let mut consider = |rot: Rotation2<f64>, d: Vector2<f64>| {
            let v = score(&rot, &d);
            if best.as_ref().is_none_or(|b| v < b.2) {
                best = Some((rot, d, v));
            }
        };
        let gens: Vec<_> = crate::association::stride_subsample(list.len(), 64)
            .into_iter()
            .map(|k| &list[k])
            .collect();
        for (k, (_, pa, pb)) in gens.iter().enumerate() {
            consider(Rotation2::identity(), pa - pb);
            for (_, qa, qb) in gens[k + 1..].iter() {
                let (ua, ub) = (qa - pa, qb - pb);
                if ua.norm() < 2.0 || ub.norm() < 2.0 {
                    continue;
                }
                let ang = ub.perp(&ua).atan2(ub.dot(&ua));
                if ang.abs() > max_rot {
                    continue;
                }
                let rot = Rotation2::new(ang);
                let d = 0.5 * ((pa - rot * pb) + (qa - rot * qb));
                consider(rot, d);
            }
        }
        if let Some((rot, d, _)) = best {
            for (i, pa, pb) in list {
                if err(&rot, &d, pa, pb) <= lam {
                    selected[*i] = true;
                }
            }
        }
    }
    selected
}

#[derive(Debug)]
struct OpenNode {
    bound: f64,
    seq: usize,
    fix: Vec<Fixing>,
}

impl PartialEq for OpenNode {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for OpenNode {}
impl PartialOrd for OpenNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OpenNode {
    // BinaryHeap is a max-heap: smallest bound first, then oldest node
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(other.seq.cmp(&self.seq))
    }
}

fn relative_gap(ub: f64, lb: f64) -> f64 {
    ((ub - lb) / ub.abs().max(1e-9)).max(0.0)
}

/// Solves the problem to `gap_tol` or until `node_limit` nodes were processed.
pub fn solve_mip(problem: &MipProblem, config: &MipConfig) -> MipSolution {
    let n = problem.candidates.len();
    let mut best = Incumbent {
        objective: problem.objective_at(&problem.nominal_poses(), &vec![false; n]),
        poses: problem.nominal_poses(),
        selected: vec![false; n],
    };
    // one sensor pair whose consensus is a coincidence of false matches can
    // bend the whole fit, so also restart with each pair left out
    let inliers = consensus_inliers(problem);
    let pairs: BTreeSet<(usize, usize)> = problem
        .candidates
        .iter()
        .map(|c| (c.sensor_a, c.sensor_b))
        .collect();
    for skip in std::iter::once(None).chain(pairs.iter().map(Some)) {
        let sel: Vec<bool> = problem
            .candidates
            .iter()
            .zip(&inliers)
            .map(|(c, &ok)| ok && skip != Some(&(c.sensor_a, c.sensor_b)))
            .collect();
        if let Some(start) = l1_fit(problem, &sel) {
            polish(problem, &start, &mut best);
        }
    }

    let mut heap = BinaryHeap::new();
    let mut seq = 0usize;
    heap.push(OpenNode {
        bound: 0.0,
        seq,
        fix: vec![None; n],
    });
    let mut nodes = 0usize;
    let mut status = MipStatus::Optimal;
    let abs_tol = |ub: f64| (config.gap_tol * ub.abs()).max(1e-9);
    while let Some(node) = heap.pop() {
        if node.bound >= best.objective - abs_tol(best.objective) {
            // best-first: every remaining node is at least as bad
            heap.clear();
            break;
        }
        if nodes >= config.node_limit {
            heap.push(node);
            status = MipStatus::GapLimit;
            break;
        }
        nodes += 1;
        let Some(lp) = solve_node(problem, &node.fix) else {
            continue;
        };
        debug_assert!(
            lp.objective >= node.bound - 1e-6 * (1.0 + node.bound.abs()),
            "child relaxation {} below parent bound {}",
            lp.objective,
            node.bound
        );
        let bound = lp.objective.max(node.bound);
        if nodes == 1 {
            polish(problem, &lp.poses, &mut best);
        }
        if bound >= best.objective - abs_tol(best.objective) {
            continue;
        }
        // most fractional binary, lowest index on ties
        let mut branch: Option<(usize, f64)> = None;
        for (i, &a) in lp.a.iter().enumerate() {
            if node.fix[i].is_some() {
                continue;
            }
            let frac = a.min(1.0 - a);
            if frac > 1e-7 && branch.is_none_or(|(_, f)| frac > f + 1e-12) {
                branch = Some((i, frac));
            }
        }
        match branch {
            None => {
                let selected: Vec<bool> = lp.a.iter().map(|&a| a < 0.5).collect();
                if lp.objective < best.objective {
                    best = Incumbent {
                        objective: lp.objective,
                        poses: lp.poses.clone(),
                        selected,
                    };
                }
            }
            Some((i, _)) => {
                for value in [false, true] {
                    let mut fix = node.fix.clone();
                    fix[i] = Some(value);
                    seq += 1;
                    heap.push(OpenNode { bound, seq, fix });
                }
            }
        }
    }
    let lower = heap
        .iter()
        .map(|n| n.bound)
        .fold(best.objective, f64::min);
    let gap = relative_gap(best.objective, lower);
    if status == MipStatus::GapLimit && gap <= config.gap_tol {
        status = MipStatus::Optimal;
    }
    MipSolution {
        selected: (0..n)
            .filter(|&i| best.selected[i])
            .map(|i| problem.candidates[i].index)
            .collect(),
        poses: best.poses,
        objective: best.objective,
        gap,
        status,
        nodes,
    }
}

/// Candidates whose binary is zero in `solution`, in their original order.
pub fn extract_feasible_pairs(
    solution: &MipSolution,
    candidates: &[CandidatePair],
) -> Vec<CandidatePair> {
    candidates
        .iter()
        .filter(|c| solution.selected.binary_search(&c.index).is_ok())
        .cloned()
        .collect()
}

/// Calibration implied by a solution: x, y and yaw from the solution, roll and
/// pitch from the linearization, z = 0.
pub fn solution_calibration(problem: &MipProblem, solution: &MipSolution) -> CalibrationSet {
    CalibrationSet::from_poses(
        Stage::XyYaw,
        problem.sensors.iter().zip(&solution.poses).map(|(s, p)| {
            (
                s.id.clone(),
                Pose::from_euler(
                    Vector3::new(p.x, p.y, 0.0),
                    EulerAngles::new(s.roll, s.pitch, p.theta),
                ),
            )
        }),
    )
}

/// Optimal selection for poses taken from `calib` (x, y and yaw): with the
/// poses fixed, a candidate is worth keeping exactly when its linearized
/// error is within `λ`. Returns original candidate indices.
pub fn select_at_calibration(problem: &MipProblem, calib: &CalibrationSet) -> Vec<usize> {
    let poses: Vec<XyYaw> = problem
        .sensors
        .iter()
        .map(|s| match calib.get(&s.id) {
            Some(p) => XyYaw {
                x: p.translation().x,
                y: p.translation().y,
                theta: s.theta_star + crate::geometry::wrap_angle(p.euler().yaw - s.theta_star),
            },
            None => XyYaw {
                x: 0.0,
                y: 0.0,
                theta: s.theta_star,
            },
        })
        .collect();
    let sel = selection_at(problem, &poses);
    problem
        .candidates
        .iter()
        .zip(sel)
        .filter(|(_, s)| *s)
        .map(|(c, _)| c.index)
        .collect()
}

/// Writes the full problem in CPLEX LP text format.
pub fn to_lp_format(problem: &MipProblem) -> String {
    let n_s = problem.sensors.len();
    let layout = Layout {
        n_sensors: n_s,
        active: (0..problem.candidates.len()).collect(),
    };
    let mut names = Vec::new();
    for s in 0..n_s {
        names.extend([
            format!("x_{s}"),
            format!("y_{s}"),
            format!("tp_{s}"),
            format!("tm_{s}"),
        ]);
    }
    for c in &problem.candidates {
        let i = c.index;
        names.extend([
            format!("dp_{i}"),
            format!("dm_{i}"),
            format!("ep_{i}"),
            format!("em_{i}"),
            format!("a_{i}"),
        ]);
    }
    let term = |v: f64, name: &str| {
        if v < 0.0 {
            format!(" - {} {name}", -v)
        } else {
            format!(" + {v} {name}")
        }
    };
    let mut out = String::new();
    out.push_str("\\ pole-pair selection, x/y/yaw per sensor\n");
    for (s, lin) in problem.sensors.iter().enumerate() {
        let _ = writeln!(
            out,
            "\\ sensor {s}: {} theta* {} (theta = theta* + tp_{s} - tm_{s})",
            lin.id, lin.theta_star
        );
    }
    out.push_str("Minimize\n obj:");
    for s in 0..n_s {
        out.push_str(&term(problem.rho, &names[layout.tp(s)]));
        out.push_str(&term(problem.rho, &names[layout.tm(s)]));
    }
    for k in 0..problem.candidates.len() {
        for j in 0..5 {
            out.push_str(&term(1.0, &names[layout.cand(k) + j]));
        }
    }
    out.push_str("\nSubject To\n");
    for row in model_rows(problem, &layout) {
        let _ = write!(out, " {}:", row.name);
        for (j, v) in &row.terms {
            if *v != 0.0 {
                out.push_str(&term(*v, &names[*j]));
            }
        }
        match (row.lo, row.hi) {
            (_, Some(h)) => {
                let _ = writeln!(out, " <= {h}");
            }
            (Some(l), None) => {
                let _ = writeln!(out, " >= {l}");
            }
            (None, None) => out.push('\n'),
        }
    }
    out.push_str("Bounds\n");
    for s in 0..n_s {
        let [bx, by, _] = problem.sensor_bounds(s);
        let _ = writeln!(out, " {} <= {} <= {}", bx.0, names[layout.x(s)], bx.1);
        let _ = writeln!(out, " {} <= {} <= {}", by.0, names[layout.y(s)], by.1);
        let _ = writeln!(out, " 0 <= {} <= {}", names[layout.tp(s)], problem.gamma);
        let _ = writeln!(out, " 0 <= {} <= {}", names[layout.tm(s)], problem.gamma);
    }
    for k in 0..problem.candidates.len() {
        for j in 0..4 {
            let _ = writeln!(out, " 0 <= {} <= {}", names[layout.cand(k) + j], problem.lambda);
        }
    }
    out.push_str("Binaries\n");
    for k in 0..problem.candidates.len() {
        let _ = writeln!(out, " {}", names[layout.cand(k) + 4]);
    }
    out.push_str("End\n");
    out
}
