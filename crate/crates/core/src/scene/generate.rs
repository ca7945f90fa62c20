//! Seeded procedural scenes. Each kind draws a layout, then searches goal
//! distances from the most ambitious downwards until the kinematic reference
//! passes every check; a layout without any valid goal is redrawn.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use super::{
    footprint_in_drivable, kinematic_reference, Agent, AgentFutureMode, AgentKind, EgoState, Route, ScenarioKind,
    Scene, ScriptedPose, TurnLabel,
};
use crate::codebook::{Codebook, ContinuousTrajectory};
use crate::error::{Error, Result};
use crate::geometry::{ConvexPolygon, Vec2};
use crate::rng::{self, StreamRng};
use crate::scoring::{check_trajectory, metric_comfort, ScoringConfig};

pub const MAX_ATTEMPTS: usize = 64;

/// Fixed parameters shared by every generated scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationParams {
    pub horizon_n: usize,
    pub dt: f64,
    pub codebook: Codebook,
    /// (length / 2, width / 2)
    pub ego_half_extents: Vec2,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self { horizon_n: 16, dt: 0.25, codebook: Codebook::default(), ego_half_extents: Vec2::new(2.4, 1.0) }
    }
}

struct Layout {
    drivable_area: Vec<ConvexPolygon>,
    agents: Vec<Agent>,
    route: Route,
    speed: f64,
    /// Goal arc lengths tried, measured from the ego projection.
    max_goal_distance: f64,
    min_goal_distance: f64,
}

pub fn generate_scenario(kind: ScenarioKind, seed: u64) -> Result<Scene> {
    generate_scenario_with(kind, seed, &GenerationParams::default())
}

pub fn generate_scenario_with(kind: ScenarioKind, seed: u64, params: &GenerationParams) -> Result<Scene> {
    let kind_salt = ScenarioKind::ALL.iter().position(|&k| k == kind).unwrap_or(0) as u64;
    let base = rng::derive(seed, 0x5CE7_0000 + kind_salt);
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = rng::stream(base, attempt as u64);
        let horizon = params.horizon_n as f64 * params.dt;
        let layout = match kind {
            ScenarioKind::Straight => straight(&mut rng, horizon),
            ScenarioKind::Curve => curve(&mut rng, horizon),
            ScenarioKind::LeftTurn => turn(&mut rng, horizon, 1.0),
            ScenarioKind::RightTurn => turn(&mut rng, horizon, -1.0),
            ScenarioKind::LeadVehicle => lead_vehicle(&mut rng, horizon),
            ScenarioKind::CrossingPedestrian => crossing_pedestrian(&mut rng, horizon),
            ScenarioKind::NarrowCorridor => narrow_corridor(&mut rng, horizon),
        };
        let mut agents = layout.agents;
        for agent in &mut agents {
            script_future(agent, &mut rng, params);
        }
        let mut scene = Scene {
            scene_id: format!("{}-{:06}", kind.as_str(), seed),
            kind,
            seed,
            drivable_area: layout.drivable_area,
            agents,
            ego: EgoState { speed: layout.speed, heading: 0.0, footprint_half_extents: params.ego_half_extents },
            route: layout.route,
            horizon_n: params.horizon_n,
            dt: params.dt,
            reference_trajectory: ContinuousTrajectory::new(Vec::new(), params.dt),
        };
        if !footprint_in_drivable(&scene.ego_footprint(Vec2::ZERO, 0.0), &scene) {
            continue;
        }
        let bounds = (layout.max_goal_distance, layout.min_goal_distance.min(layout.max_goal_distance));
        if let Some(reference) = search_goal(&scene, bounds, params) {
            scene.reference_trajectory = reference;
            return Ok(scene);
        }
    }
    Err(Error::Generation { kind, seed, attempts: MAX_ATTEMPTS })
}

fn search_goal(scene: &Scene, (max_d, min_d): (f64, f64), params: &GenerationParams) -> Option<ContinuousTrajectory> {
    let start = scene.route.project(Vec2::ZERO).ok()?.arc_length;
    let mut d = max_d;
    while d >= min_d - 1e-9 {
        let goal = scene.route.point_at(start + d).ok()?;
        if let Ok(reference) = kinematic_reference(scene, goal) {
            if reference_is_valid(scene, &reference, &params.codebook) {
                return Some(reference);
            }
        }
        d -= 0.5;
    }
    None
}

/// Solvability: the continuous reference is collision-free, in the drivable
/// area, TTC-clean and comfortable under both agent-future modes, and its
/// quantized form still passes the hard-safety gate.
pub(crate) fn reference_is_valid(scene: &Scene, reference: &ContinuousTrajectory, cb: &Codebook) -> bool {
    let in_range = reference.waypoints.iter().all(|p| cb.contains_value(p.x) && cb.contains_value(p.y));
    if !in_range {
        return false;
    }
    let quantized = match reference.quantize(cb).and_then(|t| t.dequantize(cb)) {
        Ok(q) => q,
        Err(_) => return false,
    };
    let comfortable = matches!(
        metric_comfort(reference, &ScoringConfig::default().comfort, scene.ego.heading),
        Ok(c) if c == 1.0
    );
    if !comfortable {
        return false;
    }
    [AgentFutureMode::ConstantVelocity, AgentFutureMode::ScriptedGroundTruth].into_iter().all(|mode| {
        let cfg = ScoringConfig { agent_mode: mode, ..ScoringConfig::default() };
        let continuous_ok = check_trajectory(reference, scene, &cfg)
            .iter()
            .all(|c| c.collision.is_none() && !c.off_road && !c.ttc_breach);
        let quantized_ok =
            check_trajectory(&quantized, scene, &cfg).iter().all(|c| c.collision.is_none() && !c.off_road);
        continuous_ok && quantized_ok
    })
}

fn uniform(rng: &mut StreamRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn straight_route(x_end: f64, speed_limit: f64) -> Route {
    Route { points: vec![Vec2::new(-20.0, 0.0), Vec2::new(x_end, 0.0)], turn: TurnLabel::Straight, speed_limit }
}

fn straight(rng: &mut StreamRng, horizon: f64) -> Layout {
    let half_width = uniform(rng, 2.5, 4.0);
    let speed = uniform(rng, 4.0, 10.0);
    let mut agents = Vec::new();
    if rng.random::<f64>() < 0.5 {
        let x = uniform(rng, 30.0, 90.0);
        let v = uniform(rng, 5.0, 12.0);
        agents.push(Agent::new(
            Vec2::new(x, half_width + 1.8),
            PI,
            Vec2::new(2.3, 0.95),
            Vec2::new(-v, 0.0),
            AgentKind::Vehicle,
        ));
    }
    if rng.random::<f64>() < 0.5 {
        let x = uniform(rng, 8.0, 60.0);
        agents.push(parked(Vec2::new(x, -(half_width + 1.2))));
    }
    let d = speed * horizon;
    Layout {
        drivable_area: vec![ConvexPolygon::rect(-20.0, 120.0, -half_width, half_width)],
        agents,
        route: straight_route(120.0, speed),
        speed,
        max_goal_distance: d,
        min_goal_distance: d,
    }
}

fn parked(center: Vec2) -> Agent {
    Agent::new(center, 0.0, Vec2::new(2.2, 0.9), Vec2::ZERO, AgentKind::Static)
}

/// Road band of convex quads along `points` (which must be spaced densely
/// enough for the band to stay convex per segment).
fn band(points: &[Vec2], half_width: f64) -> Vec<ConvexPolygon> {
    let normals: Vec<Vec2> = (0..points.len())
        .map(|i| {
            let (a, b) = if i + 1 < points.len() { (points[i], points[i + 1]) } else { (points[i - 1], points[i]) };
            (b - a).normalized().unwrap_or(Vec2::new(1.0, 0.0)).perp()
        })
        .collect();
    points
        .windows(2)
        .zip(normals.windows(2))
        .map(|(p, n)| {
            // Neighbouring quads share the normal at their common vertex.
            ConvexPolygon::new(vec![
                p[0] - n[0] * half_width,
                p[1] - n[1] * half_width,
                p[1] + n[1] * half_width,
                p[0] + n[0] * half_width,
            ])
        })
        .collect()
}

fn arc_points(start: Vec2, radius: f64, sign: f64, max_angle: f64) -> Vec<Vec2> {
    let step = (2.0 / radius).min(max_angle);
    let count = (max_angle / step).ceil() as usize;
    (0..=count)
        .map(|i| {
            let theta = (i as f64 * step).min(max_angle);
            Vec2::new(start.x + radius * theta.sin(), start.y + sign * radius * (1.0 - theta.cos()))
        })
        .collect()
}

fn curve(rng: &mut StreamRng, horizon: f64) -> Layout {
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let radius = uniform(rng, 35.0, 80.0);
    let curve_start = uniform(rng, 0.0, 10.0);
    let half_width = uniform(rng, 2.8, 4.0);
    let speed = uniform(rng, 5.0, 10.0);
    let arc = arc_points(Vec2::new(curve_start, 0.0), radius, sign, (120.0 / radius).min(FRAC_PI_2));
    let mut drivable_area = vec![ConvexPolygon::rect(-20.0, curve_start, -half_width, half_width)];
    drivable_area.extend(band(&arc, half_width));
    let mut points = vec![Vec2::new(-20.0, 0.0)];
    points.extend(arc);
    let d = speed * horizon;
    Layout {
        drivable_area,
        agents: Vec::new(),
        route: Route { points, turn: TurnLabel::Straight, speed_limit: speed },
        speed,
        max_goal_distance: d,
        min_goal_distance: d,
    }
}

fn turn(rng: &mut StreamRng, horizon: f64, sign: f64) -> Layout {
    let turn_start = uniform(rng, 3.0, 10.0);
    let radius = uniform(rng, 8.0, 12.0);
    let half_width = uniform(rng, 2.5, 3.5);
    let speed = uniform(rng, 3.0, 5.5);
    let arc = arc_points(Vec2::new(turn_start, 0.0), radius, sign, FRAC_PI_2);
    let exit_x = turn_start + radius;
    let mut points = vec![Vec2::new(-20.0, 0.0)];
    points.extend(arc);
    points.push(Vec2::new(exit_x, sign * (radius + 60.0)));

    let (box_y0, box_y1) = if sign > 0.0 { (-half_width, radius) } else { (-radius, half_width) };
    let (exit_y0, exit_y1) = if sign > 0.0 { (radius, radius + 60.0) } else { (-radius - 60.0, -radius) };
    let drivable_area = vec![
        ConvexPolygon::rect(-20.0, turn_start, -half_width, half_width),
        ConvexPolygon::rect(turn_start, exit_x + half_width, box_y0, box_y1),
        ConvexPolygon::rect(exit_x - half_width, exit_x + half_width, exit_y0, exit_y1),
    ];
    let mut agents = Vec::new();
    if rng.random::<f64>() < 0.5 {
        // Parked car on the far side of the exit road.
        let y = sign * uniform(rng, radius + 8.0, radius + 30.0);
        agents.push(Agent::new(
            Vec2::new(exit_x + half_width + 1.2, y),
            FRAC_PI_2,
            Vec2::new(2.2, 0.9),
            Vec2::ZERO,
            AgentKind::Static,
        ));
    }
    let d = speed * horizon;
    Layout {
        drivable_area,
        agents,
        route: Route { points, turn: if sign > 0.0 { TurnLabel::Left } else { TurnLabel::Right }, speed_limit: speed },
        speed,
        max_goal_distance: d,
        min_goal_distance: d * 0.75,
    }
}

fn lead_vehicle(rng: &mut StreamRng, horizon: f64) -> Layout {
    let half_width = uniform(rng, 1.6, 2.2);
    let speed = uniform(rng, 6.0, 10.0);
    let gap = uniform(rng, 14.0, 26.0);
    let lead_speed = speed * uniform(rng, 0.3, 0.75);
    let agents = vec![Agent::new(
        Vec2::new(gap, 0.0),
        0.0,
        Vec2::new(2.3, 0.95),
        Vec2::new(lead_speed, 0.0),
        AgentKind::Vehicle,
    )];
    let d = speed * horizon;
    Layout {
        drivable_area: vec![ConvexPolygon::rect(-20.0, 150.0, -half_width, half_width)],
        agents,
        route: straight_route(150.0, speed),
        speed,
        max_goal_distance: d,
        min_goal_distance: d * 0.5,
    }
}

fn crossing_pedestrian(rng: &mut StreamRng, horizon: f64) -> Layout {
    let half_width = uniform(rng, 2.5, 3.5);
    let speed = uniform(rng, 4.0, 8.0);
    let crossing_x = uniform(rng, 18.0, 35.0);
    let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let start_y = -side * (half_width + uniform(rng, 0.5, 3.0));
    let walk = uniform(rng, 1.0, 1.6);
    let agents = vec![Agent::new(
        Vec2::new(crossing_x, start_y),
        side * FRAC_PI_2,
        Vec2::new(0.3, 0.3),
        Vec2::new(0.0, side * walk),
        AgentKind::Pedestrian,
    )];
    let d = speed * horizon;
    Layout {
        drivable_area: vec![ConvexPolygon::rect(-20.0, 120.0, -half_width, half_width)],
        agents,
        route: straight_route(120.0, speed),
        speed,
        max_goal_distance: d,
        min_goal_distance: d * 0.5,
    }
}

fn narrow_corridor(rng: &mut StreamRng, horizon: f64) -> Layout {
    let half_width = 1.0 + uniform(rng, 0.3, 0.6);
    let speed = uniform(rng, 4.0, 8.0);
    let walls = rng.random_range(0..=3);
    let agents = (0..walls)
        .map(|_| {
            let x = uniform(rng, 5.0, 45.0);
            let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
            parked(Vec2::new(x, side * (half_width + 1.0)))
        })
        .collect();
    let d = speed * horizon;
    Layout {
        drivable_area: vec![ConvexPolygon::rect(-20.0, 120.0, -half_width, half_width)],
        agents,
        route: straight_route(120.0, speed),
        speed,
        max_goal_distance: d,
        min_goal_distance: d,
    }
}

/// Ground-truth futures that deviate from constant velocity: vehicles
/// accelerate or brake, pedestrians change pace. Static agents stay put.
fn script_future(agent: &mut Agent, rng: &mut StreamRng, params: &GenerationParams) {
    let samples = params.horizon_n + 1;
    match agent.kind {
        AgentKind::Static => {}
        AgentKind::Vehicle => {
            let accel = uniform(rng, -0.8, 0.4);
            let speed0 = agent.velocity.norm();
            let dir = agent.velocity.normalized().unwrap_or(Vec2::from_angle(agent.heading));
            let stop_time = if accel < 0.0 { speed0 / -accel } else { f64::INFINITY };
            agent.scripted_future = Some(
                (0..samples)
                    .map(|k| {
                        let t = k as f64 * params.dt;
                        let tm = t.min(stop_time);
                        let dist = speed0 * tm + 0.5 * accel * tm * tm;
                        ScriptedPose { t, center: agent.center + dir * dist, heading: agent.heading }
                    })
                    .collect(),
            );
        }
        AgentKind::Pedestrian => {
            let pace = uniform(rng, 0.6, 1.2);
            agent.scripted_future = Some(
                (0..samples)
                    .map(|k| {
                        let t = k as f64 * params.dt;
                        ScriptedPose { t, center: agent.center + agent.velocity * (pace * t), heading: agent.heading }
                    })
                    .collect(),
            );
        }
    }
}
