use std::path::PathBuf;

use wmpc::harness::{
    compute_metrics, export_trace, load_scenario, load_trace, parse_scenario, replay, run_closed_loop, Scenario, Session,
};

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.json"));
    load_scenario(path).unwrap()
}

const TWO_LINK: &str = r#"{
  "robot": {
    "link_lengths": [1.0, 0.8],
    "spheres": [
      {"link": 0, "fraction": 1.0, "radius": 0.08},
      {"link": 1, "fraction": 1.0, "radius": 0.06}
    ]
  },
  "world": [{"kind": "sphere", "center": [-1.5, -1.0], "radius": 0.1}],
  "start": [0.0, 0.0],
  "waypoints": [{"joint": [0.5, 0.5]}, {"joint": [0.8, 0.2]}],
  "events": [
    {"t": 0.2, "action": "move_obstacle", "payload": {"index": 4, "position": [0.0, 0.0]}},
    {"t": 0.3, "action": "move_obstacle", "payload": {"index": 0, "position": [-1.6, -1.0]}},
    {"t": 0.5, "action": "move_waypoint", "payload": {"index": 0, "joint": [0.6, 0.5]}}
  ]
}"#;

#[test]
fn free_space_run_rests_at_goal() {
    let s = scenario("free_collinear");
    let out = run_closed_loop(&s, 500).unwrap();
    let last = out.trace.last().unwrap();
    assert!(out.metrics.reached_goal);
    assert!(out.metrics.failure.is_none());
    assert!(last.final_mode);
    for (q, g) in last.x0.q.iter().zip(s.waypoints.last().unwrap()) {
        assert!((q - g).abs() <= s.params.eps);
    }
    assert_eq!(out.metrics.waypoint_pass_errors.len(), 1);
}

#[test]
fn runs_are_deterministic() {
    let s = scenario("corridor");
    let a = run_closed_loop(&s, 300).unwrap();
    let b = run_closed_loop(&s, 300).unwrap();
    assert_eq!(a.trace.len(), b.trace.len());
    for (x, y) in a.trace.iter().zip(&b.trace) {
        assert_eq!(x.without_timing(), y.without_timing());
    }
}

#[test]
fn trace_file_round_trips_exactly() {
    let s = scenario("free_collinear");
    let out = run_closed_loop(&s, 500).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.jsonl");
    export_trace(&out.trace, &path).unwrap();
    let back = load_trace(&path).unwrap();
    assert_eq!(back, out.trace);
    assert_eq!(compute_metrics(&back).unwrap(), out.metrics);
    let report = replay(&back).unwrap();
    assert!(report.passes(), "{report:?}");
    assert!(report.max_defect <= 1e-12);
}

#[test]
fn events_are_applied_or_logged_as_rejected() {
    let s = parse_scenario(TWO_LINK).unwrap();
    let mut session = Session::new(s).unwrap();
    let mut seen = Vec::new();
    for _ in 0..8 {
        let r = session.step().unwrap();
        if !r.events.is_empty() {
            seen.push((r.n, r.events.clone()));
        }
    }
    assert_eq!(
        seen,
        vec![
            (2, vec!["move_obstacle (rejected)".to_string()]),
            (3, vec!["move_obstacle".to_string()]),
            (5, vec!["move_waypoint".to_string()]),
        ]
    );
    assert!(session.pending_events().is_empty());
    match &session.world().obstacles[0] {
        wmpc::collision::Obstacle::Sphere { center, .. } => assert_eq!(*center, [-1.6, -1.0]),
        o => panic!("{o:?}"),
    }
    assert_eq!(session.planner().state().sequence.points[0], vec![0.6, 0.5]);
}

#[test]
fn path_length_sums_executed_steps() {
    let s = parse_scenario(TWO_LINK).unwrap();
    let out = run_closed_loop(&s, 500).unwrap();
    let mut expected = 0.0;
    let mut q = s.start.clone();
    for r in &out.trace {
        assert_eq!(r.x0.q, q);
        let next = &r.states[1].q;
        expected += q.iter().zip(next).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        q = next.clone();
    }
    approx::assert_relative_eq!(out.metrics.path_length, expected, max_relative = 1e-12);
    // Never shorter than the straight joint-space route through the waypoints.
    let route: [[f64; 2]; 3] = [[0.0, 0.0], [0.6, 0.5], [0.8, 0.2]];
    let straight: f64 = route.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).sum();
    assert!(out.metrics.path_length >= straight - 2.0 * s.params.eps);
}

