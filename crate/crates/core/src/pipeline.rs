//! Offline calibration chain, evaluation against ground truth and the
//! distortion sweep.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::{build_candidates, stride_subsample, AssociationError, CandidateConfig, CandidatePair};
use crate::calibration::{CalibrationSet, FrameStreams, SensorConfig, Stage, VehicleGeometry};
use crate::features::PlaneFitConfig;
use crate::mip::{
    build_mip, consensus_inliers, extract_feasible_pairs, select_at_calibration, solution_calibration, solve_mip,
    MipConfig, MipError, MipProblem, MipStatus,
};
use crate::refine::{
    anchor_absolute_height, collect_plane_pairs, refine, PlanePairConfig, RefineConfig,
    RefineError,
};
use crate::sim::{apply_distortion, generate_scenario, render_frames, DistortionKind, DistortionSpec, ScenarioParams, SimError};
use crate::yaw::{estimate_yaw, with_yaw, YawConfig, YawError, YawEstimate, YawSearch, YawWarning};
use crate::TimedPose;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("no sensors configured")]
    NoSensors,
    #[error("yaw stage, sensor {sensor}: {source}")]
    Yaw { sensor: String, source: YawError },
    #[error("candidate stage: {0}")]
    Candidates(#[from] AssociationError),
    #[error("selection stage: {0}")]
    Mip(#[from] MipError),
    #[error("refinement stage: {0}")]
    Refine(#[from] RefineError),
    #[error("sensor sets differ: {0}")]
    SensorMismatch(String),
    #[error("scenario: {0}")]
    Scenario(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OfflineOptions {
    pub yaw: YawConfig,
    pub candidates: CandidateConfig,
    pub mip: MipConfig,
    /// Extra rounds of yaw re-estimation with the selected x/y as the
    /// translation template, each followed by a new pair selection.
    pub yaw_rounds: usize,
    /// Search half-width around the previous yaw in those rounds (radians).
    pub yaw_round_window: f64,
    /// Per-frame turn limit (radians) for the first yaw pass, which runs
    /// before any translation is known; `None` uses every increment.
    pub first_pass_max_turn: Option<f64>,
    /// Candidates per sensor pair handed to branch-and-bound; the selection
    /// is then extended to every candidate at the resulting poses.
    pub mip_per_pair: usize,
    /// Re-estimate every yaw against the refined poses and refine again.
    pub final_yaw_pass: bool,
    pub planes: PlanePairConfig,
    pub refine: RefineConfig,
    /// Sensor whose measured ground height fixes the common z; the first
    /// configured sensor when unset.
    pub anchor_sensor: Option<String>,
    pub anchor_fit: PlaneFitConfig,
}

impl Default for OfflineOptions {
    fn default() -> Self {
        Self {
            yaw: YawConfig::default(),
            candidates: CandidateConfig::default(),
            mip: MipConfig {
                node_limit: 50,
                ..MipConfig::default()
            },
            yaw_rounds: 1,
            yaw_round_window: 5f64.to_radians(),
            first_pass_max_turn: Some(0.2f64.to_radians()),
            mip_per_pair: 8,
            final_yaw_pass: true,
            planes: PlanePairConfig::default(),
            refine: RefineConfig::default(),
            anchor_sensor: None,
            anchor_fit: PlaneFitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub yaw: f64,
    pub candidates: f64,
    pub mip: f64,
    pub refine: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineResult {
    pub calibration: CalibrationSet,
    pub yaw_only: CalibrationSet,
    pub xy_yaw: CalibrationSet,
    pub yaw_estimates: Vec<YawEstimate>,
    pub candidate_count: usize,
    pub selected_count: usize,
    pub plane_pair_count: usize,
    /// The pair-selection instance of the last round, as solved.
    pub selection_problem: MipProblem,
    pub mip_status: MipStatus,
    pub mip_gap: f64,
    pub refine_converged: bool,
    pub warnings: Vec<String>,
    pub timings: StageTimings,
}

fn secs(since: Instant) -> f64 {
    since.elapsed().as_secs_f64()
}

/// Per sensor pair, at most `cap` evenly strided candidates.
fn cap_per_pair(candidates: &[CandidatePair], cap: usize, inliers: &BTreeSet<usize>) -> Vec<CandidatePair> {
    let mut groups: BTreeMap<(&str, &str), (Vec<&CandidatePair>, Vec<&CandidatePair>)> = BTreeMap::new();
    for c in candidates {
        let g = groups
            .entry((c.sensor_a.as_str(), c.sensor_b.as_str()))
            .or_default();
        if inliers.contains(&c.index) {
            g.0.push(c);
        } else {
            g.1.push(c);
        }
    }
    // mostly consensus inliers, plus a few others so a bad consensus can be overruled
    let mut out: Vec<CandidatePair> = Vec::new();
    for (good, rest) in groups.values() {
        let n_good = good.len().min(cap - cap / 4);
        let n_rest = rest.len().min(cap - n_good);
        for (list, n) in [(good, n_good), (rest, n_rest)] {
            out.extend(stride_subsample(list.len(), n).into_iter().map(|k| list[k].clone()));
        }
    }
    out.sort_by_key(|c| c.index);
    out
}

/// Yaw estimation, pole-pair selection, joint refinement and height anchoring.
pub fn run_offline(
    frames: &FrameStreams,
    ego: &[TimedPose],
    sensors: &[SensorConfig],
    vehicle: &VehicleGeometry,
    options: &OfflineOptions,
) -> Result<OfflineResult, PipelineError> {
    if sensors.is_empty() {
        return Err(PipelineError::NoSensors);
    }
    let start = Instant::now();
    let mut timings = StageTimings::default();
    let mut warnings = Vec::new();
    let empty = Vec::new();

    let t = Instant::now();
    let mut yaw_only = CalibrationSet::new(Stage::YawOnly);
    let mut estimates = Vec::with_capacity(sensors.len());
    for s in sensors {
        let search = YawSearch {
            template: s.guess_with_yaw(0.0),
            initial: s.yaw_guess,
            window: None,
            max_step_turn: options.first_pass_max_turn,
        };
        let est = estimate_yaw(&s.id, frames.get(&s.id).unwrap_or(&empty), ego, &search, &options.yaw)
            .map_err(|source| PipelineError::Yaw {
                sensor: s.id.clone(),
                source,
            })?;
        for w in &est.warnings {
            match w {
                YawWarning::LowRotation { total } => warnings.push(format!(
                    "{}: trajectory turns only {:.1} deg in total; yaw is weakly observable",
                    s.id,
                    total.to_degrees()
                )),
            }
        }
        yaw_only.insert(&s.id, s.guess_with_yaw(est.yaw));
        estimates.push(est);
    }
    timings.yaw = secs(t);

    let t = Instant::now();
    let candidates = build_candidates(frames, &yaw_only, sensors, &options.candidates)?;
    timings.candidates = secs(t);

    let t = Instant::now();
    let mut yaw_set = yaw_only.clone();
    let mut round = 0;
    let (full_problem, problem, solution, xy_yaw) = loop {
        let full_problem = build_mip(&candidates, &yaw_set, sensors, vehicle, &options.mip)?;
        let inliers: BTreeSet<usize> = full_problem
            .candidates
            .iter()
            .zip(consensus_inliers(&full_problem))
            .filter(|(_, ok)| *ok)
            .map(|(c, _)| c.index)
            .collect();
        let subset = cap_per_pair(&candidates, options.mip_per_pair.max(1), &inliers);
        let problem = build_mip(&subset, &yaw_set, sensors, vehicle, &options.mip)?;
        let solution = solve_mip(&problem, &options.mip);
        if solution.status != MipStatus::Optimal {
            log::info!(
                "pair selection stopped at gap {:.3e} after {} nodes",
                solution.gap,
                solution.nodes
            );
        }
        let mut xy_yaw = solution_calibration(&problem, &solution);
        for s in sensors {
            if xy_yaw.get(&s.id).is_none() {
                if round == 0 {
                    warnings.push(format!("{}: no candidate pole pairs; x/y left at zero", s.id));
                }
                xy_yaw.insert(&s.id, yaw_set.sensors[&s.id]);
            }
        }
        if round == options.yaw_rounds {
            break (full_problem, problem, solution, xy_yaw);
        }
        round += 1;
        // the translation bias of the first yaw pass is gone once x/y are known
        for (s, est) in sensors.iter().zip(estimates.iter_mut()) {
            let template = xy_yaw.sensors[&s.id];
            let center = template.euler().yaw;
            let search = YawSearch {
                template,
                initial: Some(center),
                window: Some((center, options.yaw_round_window)),
                max_step_turn: None,
            };
            match estimate_yaw(&s.id, frames.get(&s.id).unwrap_or(&empty), ego, &search, &options.yaw) {
                Ok(e) => {
                    yaw_set.insert(&s.id, s.guess_with_yaw(e.yaw));
                    *est = e;
                }
                Err(e) => log::warn!("{}: yaw re-estimation failed ({e}); keeping {center:.5}", s.id),
            }
        }
    };
    let mut extended = solution.clone();
    extended.selected = select_at_calibration(&full_problem, &xy_yaw);
    let feasible = extract_feasible_pairs(&extended, &candidates);
    timings.mip = secs(t);

    let t = Instant::now();
    let planes = collect_plane_pairs(frames, &xy_yaw, sensors, &options.planes)?;
    if planes.is_empty() {
        warnings.push("no ground plane pairs; heights and tilts rely on guesses".into());
    }
    let mut outcome = refine(&xy_yaw, &xy_yaw, &feasible, &planes, &options.refine)?;
    if options.final_yaw_pass {
        // yaw from motion is only unbiased once height and tilt are right;
        // cross-sensor terms cannot see a common yaw error, so redo it here
        let mut anchors = xy_yaw.clone();
        for (s, est) in sensors.iter().zip(estimates.iter_mut()) {
            let template = outcome.calibration.sensors[&s.id];
            let center = template.euler().yaw;
            let search = YawSearch {
                template,
                initial: Some(center),
                window: Some((center, options.yaw_round_window)),
                max_step_turn: None,
            };
            match estimate_yaw(&s.id, frames.get(&s.id).unwrap_or(&empty), ego, &search, &options.yaw) {
                Ok(e) => {
                    anchors.insert(&s.id, with_yaw(&anchors.sensors[&s.id], e.yaw));
                    *est = e;
                }
                Err(e) => log::warn!("{}: final yaw pass failed ({e}); keeping {center:.5}", s.id),
            }
        }
        outcome = refine(&outcome.calibration, &anchors, &feasible, &planes, &options.refine)?;
    }
    if !outcome.converged {
        warnings.push(format!(
            "refinement hit the iteration limit ({})",
            outcome.iterations
        ));
    }
    let anchor = options
        .anchor_sensor
        .clone()
        .unwrap_or_else(|| sensors[0].id.clone());
    let mut calibration = anchor_absolute_height(
        &outcome.calibration,
        &anchor,
        frames.get(&anchor).unwrap_or(&empty),
        &options.anchor_fit,
    )?;
    calibration.stage = Stage::Full;
    calibration.timestamp = ego.last().map(|p| p.timestamp);
    timings.refine = secs(t);
    timings.total = secs(start);
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(OfflineResult {
        calibration,
        yaw_only,
        xy_yaw,
        yaw_estimates: estimates,
        candidate_count: candidates.len(),
        selected_count: feasible.len(),
        plane_pair_count: planes.len(),
        selection_problem: problem,
        mip_status: solution.status,
        mip_gap: solution.gap,
        refine_converged: outcome.converged,
        warnings,
        timings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorError {
    pub sensor_id: String,
    /// Euclidean translation error (meters).
    pub translation: f64,
    /// Geodesic rotation error (degrees).
    pub orientation_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub sensors: Vec<SensorError>,
    pub translation_mean: f64,
    pub translation_std: f64,
    pub orientation_mean_deg: f64,
    pub orientation_std_deg: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_s: Option<f64>,
}

impl EvaluationReport {
    pub fn max_translation(&self) -> f64 {
        self.sensors.iter().map(|s| s.translation).fold(0.0, f64::max)
    }

    pub fn max_orientation_deg(&self) -> f64 {
        self.sensors
            .iter()
            .map(|s| s.orientation_deg)
            .fold(0.0, f64::max)
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Compares an estimate with ground truth, sensor by sensor.
pub fn evaluate(calib: &CalibrationSet, truth: &CalibrationSet) -> Result<EvaluationReport, PipelineError> {
    let ids: Vec<&str> = calib.ids().collect();
    let truth_ids: Vec<&str> = truth.ids().collect();
    if ids != truth_ids {
        return Err(PipelineError::SensorMismatch(format!(
            "estimate has [{}], truth has [{}]",
            ids.join(", "),
            truth_ids.join(", ")
        )));
    }
    let sensors: Vec<SensorError> = ids
        .iter()
        .map(|id| {
            let (e, g) = (&calib.sensors[*id], &truth.sensors[*id]);
            SensorError {
                sensor_id: id.to_string(),
                translation: (e.translation() - g.translation()).norm(),
                orientation_deg: e.angle_to(g).to_degrees(),
            }
        })
        .collect();
    let (translation_mean, translation_std) =
        mean_std(&sensors.iter().map(|s| s.translation).collect::<Vec<_>>());
    let (orientation_mean_deg, orientation_std_deg) =
        mean_std(&sensors.iter().map(|s| s.orientation_deg).collect::<Vec<_>>());
    Ok(EvaluationReport {
        sensors,
        translation_mean,
        translation_std,
        orientation_mean_deg,
        orientation_std_deg,
        runtime_s: None,
    })
}

/// One simulated end-to-end run: render, distort, calibrate, evaluate.
pub fn simulate_and_evaluate(
    params: &ScenarioParams,
    seed: u64,
    distortion: Option<&DistortionSpec>,
    options: &OfflineOptions,
) -> Result<(OfflineResult, EvaluationReport), PipelineError> {
    let scn = generate_scenario(params, seed)?;
    let (frames, ego) = render_frames(&scn);
    let frames = match distortion {
        Some(spec) => apply_distortion(&frames, spec),
        None => frames,
    };
    let t = Instant::now();
    let result = run_offline(&frames, &ego, &scn.sensor_configs(), &scn.vehicle(), options)?;
    let mut report = evaluate(&result.calibration, &scn.true_calibration(scn.time_span().0))?;
    report.runtime_s = Some(secs(t));
    Ok((result, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kind: String,
    pub amount: f64,
    pub translation_mean: f64,
    pub translation_std: f64,
    pub orientation_mean_deg: f64,
    pub orientation_std_deg: f64,
    /// Mean wall-clock seconds per successful run.
    pub runtime_s: f64,
    pub runs: usize,
    pub failures: usize,
    /// `ok`, or `failed` with the first error message.
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub kinds: Vec<DistortionKind>,
    pub amounts: Vec<f64>,
    pub reps: usize,
    pub base_seed: u64,
    pub workers: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            kinds: DistortionKind::ALL.to_vec(),
            amounts: vec![0.0, 0.05, 0.1, 0.2, 0.3],
            reps: 10,
            base_seed: 0,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

/// Seed of the distortion draw for one repetition of one cell.
fn distortion_seed(kind: DistortionKind, amount: f64, rep: usize, base: u64) -> u64 {
    let k = DistortionKind::ALL.iter().position(|x| *x == kind).unwrap_or(0) as u64;
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (k << 48)
        ^ ((amount * 1e6).round() as u64).rotate_left(20)
        ^ rep as u64
}

type RunOutcome = Result<EvaluationReport, String>;

/// Runs every (kind, amount, repetition) experiment. Scenario seeds are
/// `base_seed + rep`, so the same scene is reused across cells.
pub fn sweep_distortions(
    params: &ScenarioParams,
    spec: &SweepSpec,
    options: &OfflineOptions,
) -> Vec<SweepRow> {
    let mut jobs = Vec::new();
    for &kind in &spec.kinds {
        for &amount in &spec.amounts {
            for rep in 0..spec.reps {
                jobs.push((kind, amount, rep));
            }
        }
    }
    let run = |&(kind, amount, rep): &(DistortionKind, f64, usize)| -> RunOutcome {
        let d = DistortionSpec {
            kind,
            amount,
            seed: distortion_seed(kind, amount, rep, spec.base_seed),
        };
        simulate_and_evaluate(params, spec.base_seed + rep as u64, Some(&d), options)
            .map(|(_, r)| r)
            .map_err(|e| e.to_string())
    };
    let workers = spec.workers.clamp(1, jobs.len().max(1));
    let mut results: Vec<Option<RunOutcome>> = vec![None; jobs.len()];
    if workers == 1 {
        for (slot, job) in results.iter_mut().zip(&jobs) {
            *slot = Some(run(job));
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let done = std::sync::Mutex::new(Vec::new());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if i >= jobs.len() {
                        break;
                    }
                    let r = run(&jobs[i]);
                    done.lock().expect("worker panicked").push((i, r));
                });
            }
        });
        for (i, r) in done.into_inner().expect("worker panicked") {
            results[i] = Some(r);
        }
    }

    let mut rows = Vec::new();
    for (cell, chunk) in results.chunks(spec.reps.max(1)).enumerate() {
        let (kind, amount, _) = jobs[cell * spec.reps.max(1)];
        let mut t = Vec::new();
        let mut o = Vec::new();
        let mut runtime = Vec::new();
        let mut first_error = None;
        let mut failures = 0;
        for r in chunk.iter().flatten() {
            match r {
                Ok(rep) => {
                    t.extend(rep.sensors.iter().map(|s| s.translation));
                    o.extend(rep.sensors.iter().map(|s| s.orientation_deg));
                    runtime.push(rep.runtime_s.unwrap_or(0.0));
                }
                Err(e) => {
                    failures += 1;
                    first_error.get_or_insert_with(|| e.clone());
                }
            }
        }
        let (tm, ts) = mean_std(&t);
        let (om, os) = mean_std(&o);
        rows.push(SweepRow {
            kind: kind.name().to_string(),
            amount,
            translation_mean: tm,
            translation_std: ts,
            orientation_mean_deg: om,
            orientation_std_deg: os,
            runtime_s: mean_std(&runtime).0,
            runs: chunk.len(),
            failures,
            status: match first_error {
                None => "ok".into(),
                Some(e) => format!("failed: {e}"),
            },
        });
    }
    rows
}

pub const SWEEP_CSV_HEADER: &str =
    "kind,amount,translation_mean_m,translation_std_m,orientation_mean_deg,orientation_std_deg,runtime_s,runs,failures,status";

/// CSV with a header line; the status column is quoted.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.3},{},{},\"{}\"\n",
            r.kind,
            r.amount,
            r.translation_mean,
            r.translation_std,
            r.orientation_mean_deg,
            r.orientation_std_deg,
            r.runtime_s,
            r.runs,
            r.failures,
            r.status.replace('"', "'")
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::EulerAngles;
    use crate::Pose;
    use nalgebra::Vector3;

    fn set(poses: &[(&str, Pose)]) -> CalibrationSet {
        CalibrationSet::from_poses(Stage::Full, poses.iter().map(|(i, p)| (*i, *p)))
    }

    #[test]
    fn identical_sets_have_zero_error() {
        let a = set(&[("a", Pose::from_yaw(0.4)), ("b", Pose::identity())]);
        let r = evaluate(&a, &a).unwrap();
        assert_eq!(r.translation_mean, 0.0);
        assert!(r.orientation_mean_deg < 1e-6);
    }

    #[test]
    fn three_four_five() {
        let truth = set(&[("a", Pose::identity()), ("b", Pose::identity())]);
        let est = set(&[
            ("a", Pose::from_translation(Vector3::new(0.03, 0.04, 0.0))),
            ("b", Pose::identity()),
        ]);
        let r = evaluate(&est, &truth).unwrap();
        assert!((r.sensors[0].translation - 0.05).abs() < 1e-12);
        assert!((r.translation_mean - 0.025).abs() < 1e-12);
        assert!((r.translation_std - 0.025).abs() < 1e-12);
    }

    #[test]
    fn orientation_error_ignores_world_frame() {
        let truth = set(&[("a", Pose::from_euler(Vector3::new(1.0, 0.0, 0.0), EulerAngles::new(0.1, 0.0, 0.3)))]);
        let est = set(&[("a", Pose::from_euler(Vector3::new(1.0, 0.1, 0.0), EulerAngles::new(0.12, -0.02, 0.31)))]);
        let base = evaluate(&est, &truth).unwrap().orientation_mean_deg;
        let g = Pose::from_euler(Vector3::new(5.0, -2.0, 1.0), EulerAngles::new(0.3, -0.7, 2.0));
        let moved = |s: &CalibrationSet| set(&[("a", g * s.sensors["a"])]);
        let rotated = evaluate(&moved(&est), &moved(&truth)).unwrap().orientation_mean_deg;
        assert!((base - rotated).abs() < 1e-9);
    }

    #[test]
    fn mismatched_sets_are_rejected() {
        let a = set(&[("a", Pose::identity())]);
        let b = set(&[("b", Pose::identity())]);
        assert!(matches!(evaluate(&a, &b), Err(PipelineError::SensorMismatch(_))));
    }

    #[test]
    fn csv_has_one_row_per_cell() {
        let row = SweepRow {
            kind: "combined".into(),
            amount: 0.1,
            translation_mean: 0.01,
            translation_std: 0.0,
            orientation_mean_deg: 0.1,
            orientation_std_deg: 0.0,
            runtime_s: 1.0,
            runs: 2,
            failures: 0,
            status: "ok".into(),
        };
        let csv = sweep_to_csv(&[row.clone(), row]);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().all(|l| l.split(',').count() == 10));
    }
}
