use nalgebra::Vector3;
use polecal::calibration::{CalibrationSet, FeatureFrame, FrameStreams};
use polecal::geometry::{wrap_angle, EulerAngles};
use polecal::online::{HealthFlag, OnlineConfig, OnlineState, StepReport};
use polecal::sim::{generate_scenario, perturb_mount, render_frames, ScenarioParams, Scenario, TrajectoryKind};
use polecal::{Pose, TimedPose};

fn batches(frames: &FrameStreams) -> Vec<Vec<FeatureFrame>> {
    let n = frames.values().map(Vec::len).min().unwrap_or(0);
    (0..n).map(|k| frames.values().map(|v| v[k].clone()).collect()).collect()
}

fn replay(
    scn: &Scenario,
    state: &mut OnlineState,
    mut each: impl FnMut(usize, &OnlineState, &StepReport),
) {
    let (frames, ego) = render_frames(scn);
    for (k, b) in batches(&frames).iter().enumerate() {
        let report = state.step(b, &ego[k..=k]);
        each(k, state, &report);
    }
}

fn worst_error(a: &CalibrationSet, b: &CalibrationSet) -> (f64, f64) {
    a.sensors.iter().fold((0.0, 0.0), |acc, (id, p)| {
        let q = &b.sensors[id];
        (
            acc.0.max((p.translation() - q.translation()).norm()),
            acc.1.max(p.angle_to(q).to_degrees()),
        )
    })
}

fn start(scn: &Scenario) -> OnlineState {
    OnlineState::new(
        &scn.true_calibration(0.0),
        &scn.sensor_configs(),
        &scn.vehicle(),
        OnlineConfig::default(),
    )
    .unwrap()
}

#[test]
fn unperturbed_replay_stays_put() {
    let params = ScenarioParams {
        frames: 1000,
        ..ScenarioParams::default()
    };
    let scn = generate_scenario(&params, 11).unwrap();
    let truth = scn.true_calibration(0.0);
    let mut state = start(&scn);
    let mut prev = truth.clone();
    let mut worst = (0.0f64, 0.0f64);
    let mut worst_step = 0.0f64;
    replay(&scn, &mut state, |_, s, _| {
        let (t, o) = worst_error(s.calibration(), &truth);
        worst = (worst.0.max(t), worst.1.max(o));
        for (id, p) in &s.calibration().sensors {
            let dyaw = wrap_angle(p.euler().yaw - prev.sensors[id].euler().yaw).abs();
            worst_step = worst_step.max(dyaw);
        }
        prev = s.calibration().clone();
    });
    assert!(worst.0 < 0.01, "translation drift {}", worst.0);
    assert!(worst.1 < 0.05, "orientation drift {} deg", worst.1);
    assert!(worst_step < 1e-4, "yaw moved {worst_step} rad in one step");
}

#[test]
fn tracks_yaw_and_translation_steps() {
    let params = ScenarioParams {
        frames: 601,
        ..ScenarioParams::default()
    };
    let scn = generate_scenario(&params, 4).unwrap();
    let yaw = Pose::from_euler(Vector3::zeros(), EulerAngles::new(0.0, 0.0, 2f64.to_radians()));
    let scn = perturb_mount(&scn, "s4", yaw, 10.0).unwrap();
    let scn = perturb_mount(&scn, "s4", Pose::from_translation(Vector3::new(0.0, 0.1, 0.0)), 35.0).unwrap();
    let mut state = start(&scn);
    let mut after = Vec::new();
    replay(&scn, &mut state, |k, s, r| {
        let t = r.timestamp;
        let truth = scn.true_calibration(t);
        let est = s.calibration().sensors["s4"];
        let tr = truth.sensors["s4"];
        if (25.0..35.0).contains(&t) || t >= 50.0 {
            after.push((k, est.angle_to(&tr).to_degrees(), (est.translation() - tr.translation()).norm()));
        }
    });
    for (k, o, t) in after {
        assert!(o <= 0.2 && t <= 0.02, "step {k}: {o:.3} deg, {t:.4} m");
    }
}

#[test]
fn recovers_pitch_from_ground() {
    let params = ScenarioParams {
        frames: 401,
        ..ScenarioParams::default()
    };
    let scn = generate_scenario(&params, 5).unwrap();
    let pitch = Pose::from_euler(Vector3::zeros(), EulerAngles::new(0.0, 1f64.to_radians(), 0.0));
    let scn = perturb_mount(&scn, "s2", pitch, 5.0).unwrap();
    let mut state = start(&scn);
    replay(&scn, &mut state, |_, _, _| {});
    let truth = scn.true_calibration(40.0);
    let err = state.calibration().sensors["s2"].angle_to(&truth.sensors["s2"]).to_degrees();
    assert!(err < 0.1, "pitch error {err} deg");
}

#[test]
fn stationary_vehicle_is_flagged() {
    let params = ScenarioParams {
        frames: 30,
        trajectory: TrajectoryKind::Stationary,
        ..ScenarioParams::default()
    };
    let scn = generate_scenario(&params, 2).unwrap();
    let mut state = start(&scn);
    let before = state.calibration().clone();
    let mut last = None;
    replay(&scn, &mut state, |_, _, r| last = Some(r.clone()));
    let last = last.unwrap();
    for s in &last.sensors {
        assert!(
            s.flags.contains(&HealthFlag::DegenerateMotion) || s.flags.contains(&HealthFlag::NoTemporalMatches),
            "{}: {:?}",
            s.sensor_id,
            s.flags
        );
        let (a, b) = (s.pose.euler().yaw, before.sensors[&s.sensor_id].euler().yaw);
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn empty_batch_changes_nothing() {
    let scn = generate_scenario(&ScenarioParams { frames: 40, ..ScenarioParams::default() }, 3).unwrap();
    let mut state = start(&scn);
    replay(&scn, &mut state, |_, _, _| {});
    let before = state.calibration().clone();
    let steps = state.window_len();
    let report = state.step(&[], &[]);
    assert_eq!(state.calibration(), &before);
    assert_eq!(state.window_len(), steps);
    assert_eq!(report.sensors.len(), before.len());
}

#[test]
fn isolated_sensor_is_left_alone() {
    // s4 faces backwards and overlaps neither s0 nor s1
    let mut params = ScenarioParams {
        frames: 200,
        ..ScenarioParams::default()
    };
    params.sensors = params.rig_sensors().into_iter().filter(|s| ["s0", "s1", "s4"].contains(&s.config.id.as_str())).collect();
    let scn = generate_scenario(&params, 6).unwrap();
    let shift = Pose::from_translation(Vector3::new(0.0, 0.05, 0.0));
    let scn = perturb_mount(&scn, "s1", shift, 0.0).unwrap();
    let mut state = OnlineState::new(
        &generate_scenario(&params, 6).unwrap().true_calibration(0.0),
        &scn.sensor_configs(),
        &scn.vehicle(),
        OnlineConfig::default(),
    )
    .unwrap();
    let x4 = state.calibration().sensors["s4"].translation().xy();
    let mut flagged = false;
    let mut moved = false;
    let s1 = state.calibration().sensors["s1"];
    replay(&scn, &mut state, |_, s, r| {
        flagged |= r.sensors.iter().any(|x| x.sensor_id == "s4" && x.flags.contains(&HealthFlag::NoPolePairs));
        moved |= s.calibration().sensors["s1"].translation() != s1.translation();
    });
    assert!(flagged);
    assert!(moved);
    assert_eq!(state.calibration().sensors["s4"].translation().xy(), x4);
}

#[test]
fn replay_is_deterministic() {
    let scn = generate_scenario(&ScenarioParams { frames: 120, ..ScenarioParams::default() }, 8).unwrap();
    let scn = perturb_mount(&scn, "s3", Pose::from_translation(Vector3::new(0.03, 0.0, 0.0)), 1.0).unwrap();
    let run = || {
        let mut state = start(&scn);
        let mut trace = Vec::new();
        replay(&scn, &mut state, |_, s, _| trace.push(s.calibration().clone()));
        trace
    };
    assert_eq!(run(), run());
}

#[test]
fn x_y_stay_inside_the_vehicle() {
    let scn = generate_scenario(&ScenarioParams { frames: 150, ..ScenarioParams::default() }, 9).unwrap();
    // pushes s2 against the left edge of the footprint
    let scn = perturb_mount(&scn, "s2", Pose::from_translation(Vector3::new(0.0, 0.3, 0.0)), 0.1).unwrap();
    let (y0, y1) = scn.vehicle().y_bounds();
    let mut state = start(&scn);
    replay(&scn, &mut state, |_, s, _| {
        for p in s.calibration().sensors.values() {
            assert!(p.translation().y >= y0 - 1e-12 && p.translation().y <= y1 + 1e-12);
        }
    });
}

#[test]
fn ego_can_arrive_ahead_of_frames() {
    let scn = generate_scenario(&ScenarioParams { frames: 60, ..ScenarioParams::default() }, 10).unwrap();
    let (frames, ego) = render_frames(&scn);
    let mut state = start(&scn);
    let all: Vec<TimedPose> = ego.clone();
    for (k, b) in batches(&frames).iter().enumerate() {
        let feed = if k == 0 { &all[..] } else { &all[..0] };
        state.step(b, feed);
    }
    let (t, o) = worst_error(state.calibration(), &scn.true_calibration(0.0));
    assert!(t < 1e-3 && o < 1e-2);
    assert!(state.last_updates().yaw.is_some());
}
