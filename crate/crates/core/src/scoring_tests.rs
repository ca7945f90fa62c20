use super::*;
use crate::geometry::ConvexPolygon;
use crate::scene::{generate_scenario, Agent, AgentKind, EgoState, Route, ScenarioKind, TurnLabel};
use alloc::vec;
use proptest::prelude::*;

fn scene_with(agents: Vec<Agent>, half_width: f64) -> Scene {
    Scene {
        scene_id: "t".into(),
        kind: ScenarioKind::Straight,
        seed: 0,
        drivable_area: vec![ConvexPolygon::rect(-20.0, 200.0, -half_width, half_width)],
        agents,
        ego: EgoState { speed: 5.0, heading: 0.0, footprint_half_extents: Vec2::new(2.4, 1.0) },
        route: Route {
            points: vec![Vec2::new(-20.0, 0.0), Vec2::new(200.0, 0.0)],
            turn: TurnLabel::Straight,
            speed_limit: 5.0,
        },
        horizon_n: 16,
        dt: 0.25,
        reference_trajectory: ContinuousTrajectory::new(vec![], 0.25),
    }
}

fn uniform_line(speed: f64, lateral: f64) -> ContinuousTrajectory {
    let pts = (1..=16).map(|j| Vec2::new(speed * 0.25 * j as f64, lateral)).collect();
    ContinuousTrajectory::new(pts, 0.25)
}

fn static_box(x: f64, y: f64) -> Agent {
    Agent::new(Vec2::new(x, y), 0.0, Vec2::new(1.0, 1.0), Vec2::ZERO, AgentKind::Static)
}

#[test]
fn nc_examples() {
    let cfg = ScoringConfig::default();
    let traj = uniform_line(5.0, 0.0);
    assert_eq!(metric_nc(&traj, &scene_with(vec![], 5.0), &cfg), 1.0);
    assert_eq!(metric_nc(&traj, &scene_with(vec![static_box(10.0, 0.0)], 5.0), &cfg), 0.5);

    // A vehicle crossing the path so that it meets the ego front at waypoint 6
    // (t = 1.75 s, ego center at x = 8.75).
    let t = 1.75;
    let meet = Vec2::new(8.75 + 2.4, 0.0);
    let v = Vec2::new(0.0, 3.0);
    let mover = Agent::new(meet - v * t, core::f64::consts::FRAC_PI_2, Vec2::new(0.5, 0.5), v, AgentKind::Vehicle);
    let s = scene_with(vec![mover], 5.0);
    let checks = check_trajectory(&traj, &s, &cfg);
    assert_eq!(checks[6].collision, Some(CollisionFault::Other));
    assert_eq!(metric_nc(&traj, &s, &cfg), 0.0);
}

#[test]
fn moving_agent_hitting_ego_rear_is_not_at_fault() {
    let cfg = ScoringConfig::default();
    let traj = uniform_line(5.0, 0.0);
    // Overlaps only the rear half of the ego at waypoint 0 (center x = 1.25).
    let follower = Agent::new(Vec2::new(-1.2, 0.0), 0.0, Vec2::new(0.2, 0.5), Vec2::new(5.0, 0.0), AgentKind::Vehicle);
    let s = scene_with(vec![follower], 5.0);
    assert_eq!(check_trajectory(&traj, &s, &cfg)[0].collision, None);
}

#[test]
fn dac_examples() {
    let traj = uniform_line(5.0, 0.0);
    assert_eq!(metric_dac(&traj, &scene_with(vec![], 3.0)), 1.0);
    let mut off = traj.clone();
    off.waypoints[5].y = 3.0;
    assert_eq!(metric_dac(&off, &scene_with(vec![], 3.0)), 0.0);
    // Ego sides 0.05 m past the boundary, then exactly on it.
    assert_eq!(metric_dac(&traj, &scene_with(vec![], 0.95)), 0.0);
    assert_eq!(metric_dac(&traj, &scene_with(vec![], 1.0)), 1.0);
}

#[test]
fn ttc_examples() {
    let cfg = ScoringConfig::default();
    let still = ContinuousTrajectory::new(vec![Vec2::ZERO; 16], 0.25);
    assert_eq!(metric_ttc(&still, &scene_with(vec![], 5.0), &cfg), 1.0);

    // Single waypoint check: ego at 5 m/s, box 3 m / 12 m ahead of the front bumper.
    let pose = EgoPose { center: Vec2::ZERO, heading: 0.0, speed: 5.0, time: 0.25 };
    let near = scene_with(vec![static_box(2.4 + 3.0 + 1.0, 0.0)], 5.0);
    let far = scene_with(vec![static_box(2.4 + 12.0 + 1.0, 0.0)], 5.0);
    assert!(check_waypoint(&pose, &near, &cfg).ttc_breach);
    assert!(!check_waypoint(&pose, &far, &cfg).ttc_breach);
}

/// Overlap time by stepping at 1 ms, independent of the 0.1 s schedule.
fn fine_ttc_breach(pose: &EgoPose, scene: &Scene, horizon: f64) -> bool {
    let steps = (horizon * 1000.0).round() as usize;
    let dir = Vec2::from_angle(pose.heading);
    (0..=steps).any(|k| {
        let tau = k as f64 * 1e-3;
        let ego = scene.ego_footprint(pose.center + dir * (pose.speed * tau), pose.heading);
        scene
            .agents
            .iter()
            .any(|a| boxes_intersect(&ego, &a.pose_at(pose.time + tau, AgentFutureMode::ConstantVelocity)))
    })
}

#[test]
fn ttc_against_fine_step_oracle_for_static_obstacles() {
    let cfg = ScoringConfig::default();
    let pose = EgoPose { center: Vec2::ZERO, heading: 0.0, speed: 5.0, time: 0.25 };
    // Gap in front of the bumper swept in 0.25 m steps; the 0.1 s grid at
    // 5 m/s advances 0.5 m, so gaps that are exact multiples agree.
    for i in 0..60 {
        let gap = i as f64 * 0.5;
        let s = scene_with(vec![static_box(2.4 + gap + 1.0, 0.0)], 5.0);
        assert_eq!(check_waypoint(&pose, &s, &cfg).ttc_breach, fine_ttc_breach(&pose, &s, 2.0), "gap {gap}");
    }
}

#[test]
fn comfort_examples() {
    let limits = ComfortLimits::default();
    assert_eq!(metric_comfort(&uniform_line(5.0, 0.0), &limits, 0.0).unwrap(), 1.0);
    let mut zigzag = uniform_line(5.0, 0.0);
    for (j, p) in zigzag.waypoints.iter_mut().enumerate() {
        p.y = if j % 2 == 0 { 5.0 } else { -5.0 };
    }
    assert_eq!(metric_comfort(&zigzag, &limits, 0.0).unwrap(), 0.0);
    let short = ContinuousTrajectory::new(vec![Vec2::ZERO; 3], 0.25);
    assert!(matches!(metric_comfort(&short, &limits, 0.0), Err(Error::TrajectoryTooShort { .. })));
}

#[test]
fn comfort_detects_hard_braking() {
    let limits = ComfortLimits::default();
    // 5 m/s^2 deceleration from 10 m/s.
    let pts = (1..=16)
        .map(|j| {
            let t = (0.25 * j as f64).min(2.0);
            Vec2::new(10.0 * t - 2.5 * t * t, 0.0)
        })
        .collect();
    assert_eq!(metric_comfort(&ContinuousTrajectory::new(pts, 0.25), &limits, 0.0).unwrap(), 0.0);
}

#[test]
fn ep_examples() {
    let s = scene_with(vec![], 5.0);
    let still = ContinuousTrajectory::new(vec![Vec2::ZERO; 16], 0.25);
    assert_eq!(metric_ep(&still, &s).unwrap(), 0.0);
    assert!((metric_ep(&uniform_line(5.0, 0.0), &s).unwrap() - 1.0).abs() < 0.05);
    assert!((metric_ep(&uniform_line(2.5, 0.0), &s).unwrap() - 0.5).abs() < 0.05);
    let mut degenerate = s.clone();
    degenerate.route.points.truncate(1);
    assert_eq!(metric_ep(&still, &degenerate), Err(Error::DegenerateRoute));
}

#[test]
fn breakdown_composition() {
    let b = ScoreBreakdown::from_metrics(1.0, 1.0, 0.8, 1.0, 1.0);
    assert!((b.total - 11.0 / 12.0).abs() < 1e-12);
    assert_eq!(ScoreBreakdown::from_metrics(1.0, 0.0, 1.0, 1.0, 1.0).total, 0.0);
    assert_eq!(ScoreBreakdown::from_metrics(0.0, 0.0, 0.0, 0.0, 0.0).total, 0.0);
}

#[test]
fn safety_report_window_propagation() {
    let mut checks = vec![WaypointCheck::default(); 16];
    checks[7].off_road = true;
    let cfg = ScoringConfig { window: 1, ..ScoringConfig::default() };
    let r = report_from_checks(&checks, &cfg);
    for j in 0..16 {
        let expected = if (6..=8).contains(&j) { 0.0 } else { 1.0 };
        assert_eq!(r.per_waypoint_score[j], expected);
    }
    assert_eq!(r.first_violation_index, Some(6));
    assert_eq!(r.violation_kind, Some(ViolationKind::DrivableArea));

    let r0 = report_from_checks(&checks, &ScoringConfig::default());
    assert_eq!(r0.first_violation_index, Some(7));
}

#[test]
fn safety_report_precedence_and_safe_case() {
    let mut checks = vec![WaypointCheck::default(); 16];
    assert!(report_from_checks(&checks, &ScoringConfig::default()).is_safe());
    checks[3].collision = Some(CollisionFault::Other);
    checks[3].ttc_breach = true;
    let r = report_from_checks(&checks, &ScoringConfig::default());
    assert_eq!(r.first_violation_index, Some(3));
    assert_eq!(r.violation_kind, Some(ViolationKind::Collision));

    let mut ttc_only = vec![WaypointCheck::default(); 16];
    ttc_only[2].ttc_breach = true;
    let r = report_from_checks(&ttc_only, &ScoringConfig::default());
    assert_eq!(r.per_waypoint_score[2], 0.5);
    assert_eq!(r.violation_kind, Some(ViolationKind::Ttc));
}

#[test]
fn local_score_examples() {
    let cb = Codebook::default();
    let cfg = ScoringConfig::default();
    let s = scene_with(vec![], 3.0);
    let base = uniform_line(4.0, 0.0).quantize(&cb).unwrap();
    // Collinear original pair on a safe trajectory.
    assert!((local_score(base.pair(5), 5, &base, &s, &cb, &cfg).unwrap() - 1.0).abs() < 1e-12);
    // 3 m off the neighbor midpoint on a road wide enough to stay safe.
    let wide = scene_with(vec![], 6.0);
    let p = base.pair(5);
    let shifted = TokenPair::new(p.x, p.y + 6);
    let v = local_score(shifted, 5, &base, &wide, &cb, &cfg).unwrap();
    assert!((v - (-9.0f64).exp()).abs() < 1e-12, "{v}");

    // An out-of-area waypoint scores 0; moving it back inside scores > 0.
    let bad = base.with_pair(5, TokenPair::new(p.x, p.y + 8));
    assert_eq!(local_score(bad.pair(5), 5, &bad, &s, &cb, &cfg).unwrap(), 0.0);
    assert!(local_score(p, 5, &bad, &s, &cb, &cfg).unwrap() > 0.0);
}

#[test]
fn local_score_endpoint_uses_extrapolation() {
    let cb = Codebook::default();
    let cfg = ScoringConfig::default();
    let s = scene_with(vec![], 6.0);
    let base = uniform_line(4.0, 0.0).quantize(&cb).unwrap();
    assert!((local_score(base.pair(15), 15, &base, &s, &cb, &cfg).unwrap() - 1.0).abs() < 1e-12);
    assert!((local_score(base.pair(0), 0, &base, &s, &cb, &cfg).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn reference_trajectories_score_clean() {
    let cfg = ScoringConfig::default();
    for kind in ScenarioKind::ALL {
        let scene = generate_scenario(kind, 3).unwrap();
        let b = global_score(&scene.reference_trajectory, &scene, &cfg).unwrap();
        assert_eq!((b.m_nc, b.m_dac, b.m_ttc, b.m_comfort), (1.0, 1.0, 1.0, 1.0), "{}", scene.scene_id);
    }
}

fn arb_traj() -> impl Strategy<Value = ContinuousTrajectory> {
    prop::collection::vec((-5.0f64..40.0, -6.0f64..6.0), 16)
        .prop_map(|v| ContinuousTrajectory::new(v.into_iter().map(|(x, y)| Vec2::new(x, y)).collect(), 0.25))
}

proptest! {
    #[test]
    fn total_bounded_by_factors(traj in arb_traj(), ax in 0.0f64..40.0, ay in -4.0f64..4.0) {
        let s = scene_with(vec![static_box(ax, ay)], 3.0);
        let b = global_score(&traj, &s, &ScoringConfig::default()).unwrap();
        prop_assert!(b.total <= b.quality + 1e-12);
        prop_assert!(b.total <= b.hard + 1e-12);
        if b.m_nc == 0.0 || b.m_dac == 0.0 {
            prop_assert_eq!(b.total, 0.0);
        }
    }

    #[test]
    fn zero_window_report_matches_per_waypoint_checks(traj in arb_traj(), ax in 0.0f64..40.0) {
        let s = scene_with(vec![static_box(ax, 0.0)], 3.0);
        let cfg = ScoringConfig::default();
        let r = safety_report(&traj, &s, &cfg);
        let poses = ego_poses(&traj, 0.0);
        for (j, pose) in poses.iter().enumerate() {
            let ego = s.ego_footprint(pose.center, pose.heading);
            let collided = s.agents.iter().any(|a| boxes_intersect(&ego, &a.pose_at(pose.time, AgentFutureMode::ConstantVelocity)));
            let off = !crate::scene::footprint_in_drivable(&ego, &s);
            let ttc = fine_ttc_breach_grid(pose, &s);
            let flagged = r.per_waypoint_score[j] < 1.0;
            prop_assert_eq!(flagged, collided || off || ttc);
        }
    }

    #[test]
    fn ttc_monotone_in_obstacle_distance(gap in 0.0f64..20.0, extra in 0.0f64..10.0, speed in 0.0f64..10.0) {
        let cfg = ScoringConfig::default();
        let pose = EgoPose { center: Vec2::ZERO, heading: 0.0, speed, time: 0.25 };
        let near = scene_with(vec![static_box(3.4 + gap, 0.0)], 5.0);
        let far = scene_with(vec![static_box(3.4 + gap + extra, 0.0)], 5.0);
        if !check_waypoint(&pose, &near, &cfg).ttc_breach {
            prop_assert!(!check_waypoint(&pose, &far, &cfg).ttc_breach);
        }
    }

    #[test]
    fn boxes_intersect_is_symmetric(
        ax in -5.0f64..5.0, ay in -5.0f64..5.0, ah in -3.2f64..3.2,
        bx in -5.0f64..5.0, by in -5.0f64..5.0, bh in -3.2f64..3.2,
    ) {
        let a = OrientedBox::new(Vec2::new(ax, ay), ah, 2.0, 0.8);
        let b = OrientedBox::new(Vec2::new(bx, by), bh, 1.5, 1.0);
        prop_assert_eq!(boxes_intersect(&a, &b), boxes_intersect(&b, &a));
    }
}

/// Static-only scene: TTC breach iff any 0.1 s projection step touches the box.
fn fine_ttc_breach_grid(pose: &EgoPose, scene: &Scene) -> bool {
    let dir = Vec2::from_angle(pose.heading);
    (0..=20).any(|k| {
        let tau = k as f64 * 0.1;
        let ego = scene.ego_footprint(pose.center + dir * (pose.speed * tau), pose.heading);
        scene.agents.iter().any(|a| boxes_intersect(&ego, &a.pose_at(0.0, AgentFutureMode::ConstantVelocity)))
    })
}
