use polecal::geometry::wrap_angle;
use polecal::sim::{
    apply_distortion, generate_scenario, render_frames, DistortionKind, DistortionSpec, ScenarioParams, TrajectoryKind,
};
use polecal::yaw::{estimate_yaw, YawConfig, YawSearch, YawWarning};

#[test]
fn loop_recovers_every_yaw() {
    let scn = generate_scenario(&ScenarioParams::default(), 17).unwrap();
    let (frames, ego) = render_frames(&scn);
    let truth = scn.true_calibration(0.0);
    for s in scn.sensor_configs() {
        let search = YawSearch {
            template: s.guess_with_yaw(0.0),
            initial: None,
            window: None,
            max_step_turn: None,
        };
        let est = estimate_yaw(&s.id, &frames[&s.id], &ego, &search, &YawConfig::default()).unwrap();
        let err = wrap_angle(est.yaw - truth.yaw(&s.id).unwrap()).abs().to_degrees();
        assert!(err <= 0.05, "{}: {err} deg", s.id);
        assert!(est.warnings.is_empty());
        assert!(est.cost_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }
}

#[test]
fn straight_line_warns() {
    let params = ScenarioParams {
        trajectory: TrajectoryKind::Straight,
        frames: 120,
        ..ScenarioParams::default()
    };
    let scn = generate_scenario(&params, 3).unwrap();
    let (frames, ego) = render_frames(&scn);
    let s = &scn.sensor_configs()[0];
    let search = YawSearch {
        template: s.guess_with_yaw(0.0),
        initial: None,
        window: None,
        max_step_turn: None,
    };
    match estimate_yaw(&s.id, &frames[&s.id], &ego, &search, &YawConfig::default()) {
        Ok(est) => assert!(
            est.warnings.iter().any(|w| matches!(w, YawWarning::LowRotation { .. })),
            "{est:?}"
        ),
        Err(e) => assert!(!e.to_string().is_empty()),
    }
}

#[test]
fn missing_egomotion_is_an_error() {
    let scn = generate_scenario(&ScenarioParams { frames: 20, ..ScenarioParams::default() }, 2).unwrap();
    let (frames, _) = render_frames(&scn);
    let s = &scn.sensor_configs()[0];
    let search = YawSearch {
        template: s.guess_with_yaw(0.0),
        initial: None,
        window: None,
        max_step_turn: None,
    };
    assert!(estimate_yaw(&s.id, &frames[&s.id], &[], &search, &YawConfig::default()).is_err());
}

#[test]
fn skipping_turns_removes_lever_arm_bias_under_noise() {
    let scn = generate_scenario(&ScenarioParams::default(), 5).unwrap();
    let (clean, ego) = render_frames(&scn);
    let spec = DistortionSpec {
        kind: DistortionKind::PolesPosition,
        amount: 0.1,
        seed: 9,
    };
    let frames = apply_distortion(&clean, &spec);
    let truth = scn.true_calibration(0.0);
    let mut worst = [0.0f64; 2];
    for s in scn.sensor_configs() {
        for (k, turn) in [None, Some(0.2f64.to_radians())].into_iter().enumerate() {
            let search = YawSearch {
                template: s.guess_with_yaw(0.0),
                initial: None,
                window: None,
                max_step_turn: turn,
            };
            let est = estimate_yaw(&s.id, &frames[&s.id], &ego, &search, &YawConfig::default()).unwrap();
            let err = wrap_angle(est.yaw - truth.yaw(&s.id).unwrap()).abs().to_degrees();
            worst[k] = worst[k].max(err);
        }
    }
    assert!(worst[1] < 0.5, "{worst:?}");
    assert!(worst[1] < worst[0], "{worst:?}");
}
