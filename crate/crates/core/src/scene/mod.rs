//! Synthetic driving scenes: drivable area, agents with predictable motion, ego
//! state and route. Everything is expressed in the ego frame at t = 0.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::codebook::ContinuousTrajectory;
use crate::error::{Error, Result};
use crate::geometry::{union_contains, ConvexPolygon, OrientedBox, Vec2, EPS};

mod generate;

pub use generate::{generate_scenario, generate_scenario_with, GenerationParams, MAX_ATTEMPTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Straight,
    Curve,
    LeftTurn,
    RightTurn,
    LeadVehicle,
    CrossingPedestrian,
    NarrowCorridor,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 7] = [
        ScenarioKind::Straight,
        ScenarioKind::Curve,
        ScenarioKind::LeftTurn,
        ScenarioKind::RightTurn,
        ScenarioKind::LeadVehicle,
        ScenarioKind::CrossingPedestrian,
        ScenarioKind::NarrowCorridor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Straight => "straight",
            ScenarioKind::Curve => "curve",
            ScenarioKind::LeftTurn => "left_turn",
            ScenarioKind::RightTurn => "right_turn",
            ScenarioKind::LeadVehicle => "lead_vehicle",
            ScenarioKind::CrossingPedestrian => "crossing_pedestrian",
            ScenarioKind::NarrowCorridor => "narrow_corridor",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnLabel {
    Left,
    Right,
    Straight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Vehicle,
    Pedestrian,
    Static,
}

/// Where agent futures come from when scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentFutureMode {
    /// Constant-velocity rollout from the current state.
    #[default]
    ConstantVelocity,
    /// Scripted future poses stored with the scene; agents without a script
    /// fall back to constant velocity.
    ScriptedGroundTruth,
}

/// A timestamped pose of a scripted agent future.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptedPose {
    pub t: f64,
    pub center: Vec2,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub center: Vec2,
    pub heading: f64,
    /// (length / 2, width / 2)
    pub half_extents: Vec2,
    pub velocity: Vec2,
    pub kind: AgentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scripted_future: Option<Vec<ScriptedPose>>,
}

impl Agent {
    pub fn new(center: Vec2, heading: f64, half_extents: Vec2, velocity: Vec2, kind: AgentKind) -> Self {
        Self { center, heading, half_extents, velocity, kind, scripted_future: None }
    }

    pub fn is_static(&self) -> bool {
        self.kind == AgentKind::Static
    }

    /// Oriented footprint at time `t` under `mode`.
    pub fn pose_at(&self, t: f64, mode: AgentFutureMode) -> OrientedBox {
        let (center, heading) = match (mode, self.scripted_future.as_deref()) {
            (AgentFutureMode::ScriptedGroundTruth, Some(samples)) if !samples.is_empty() => scripted_pose(samples, t),
            _ => (self.center + self.velocity * t, self.heading),
        };
        OrientedBox::new(center, heading, self.half_extents.x, self.half_extents.y)
    }
}

/// Constant-velocity footprint of `agent` at time `t`.
pub fn agent_pose_at(agent: &Agent, t: f64) -> OrientedBox {
    agent.pose_at(t, AgentFutureMode::ConstantVelocity)
}

fn scripted_pose(samples: &[ScriptedPose], t: f64) -> (Vec2, f64) {
    if samples.len() == 1 || t <= samples[0].t {
        return (samples[0].center, samples[0].heading);
    }
    for w in samples.windows(2) {
        let (a, b) = (w[0], w[1]);
        if t <= b.t {
            let span = b.t - a.t;
            let u = if span > EPS { (t - a.t) / span } else { 1.0 };
            return (a.center.lerp(b.center, u), a.heading + (b.heading - a.heading) * u);
        }
    }
    // Past the script: continue with the velocity of the last segment.
    let a = samples[samples.len() - 2];
    let b = samples[samples.len() - 1];
    let span = (b.t - a.t).max(EPS);
    let v = (b.center - a.center) * (1.0 / span);
    (b.center + v * (t - b.t), b.heading)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub speed: f64,
    /// Radians, 0 along +x.
    pub heading: f64,
    /// (length / 2, width / 2)
    pub footprint_half_extents: Vec2,
}

impl EgoState {
    pub fn footprint(&self, center: Vec2, heading: f64) -> OrientedBox {
        OrientedBox::new(center, heading, self.footprint_half_extents.x, self.footprint_half_extents.y)
    }
}

/// Route centerline with its navigation command and speed limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub points: Vec<Vec2>,
    pub turn: TurnLabel,
    /// m/s; caps the feasible progress over the horizon.
    pub speed_limit: f64,
}

/// Closest point on a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteProjection {
    pub arc_length: f64,
    pub point: Vec2,
    pub distance: f64,
}

impl Route {
    fn check(&self) -> Result<()> {
        if self.points.len() < 2 || self.length() <= EPS {
            return Err(Error::DegenerateRoute);
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| w[0].distance(w[1])).sum()
    }

    /// Projection onto the nearest segment; ties go to the earliest segment.
    pub fn project(&self, p: Vec2) -> Result<RouteProjection> {
        self.check()?;
        let mut best = RouteProjection { arc_length: 0.0, point: self.points[0], distance: f64::INFINITY };
        let mut offset = 0.0;
        for w in self.points.windows(2) {
            let (a, b) = (w[0], w[1]);
            let seg = b - a;
            let len2 = seg.dot(seg);
            let len = len2.sqrt();
            let u = if len2 > EPS { ((p - a).dot(seg) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let q = a + seg * u;
            let d = q.distance(p);
            if d < best.distance - 1e-12 {
                best = RouteProjection { arc_length: offset + u * len, point: q, distance: d };
            }
            offset += len;
        }
        Ok(best)
    }

    /// Point at arc length `s`, clamped to the polyline.
    pub fn point_at(&self, s: f64) -> Result<Vec2> {
        self.check()?;
        let mut remaining = s.max(0.0);
        for w in self.points.windows(2) {
            let len = w[0].distance(w[1]);
            if remaining <= len && len > EPS {
                return Ok(w[0].lerp(w[1], remaining / len));
            }
            remaining -= len;
        }
        Ok(*self.points.last().expect("non-empty route"))
    }

    /// Unit tangent at arc length `s`.
    pub fn tangent_at(&self, s: f64) -> Result<Vec2> {
        self.check()?;
        let mut remaining = s.max(0.0);
        let mut last = Vec2::new(1.0, 0.0);
        for w in self.points.windows(2) {
            let seg = w[1] - w[0];
            let len = seg.norm();
            if len > EPS {
                last = seg * (1.0 / len);
                if remaining <= len {
                    return Ok(last);
                }
            }
            remaining -= len;
        }
        Ok(last)
    }
}

/// Scene context shared by scoring, the oracle denoiser and the feature
/// encoder of the trainable denoiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    pub kind: ScenarioKind,
    pub seed: u64,
    pub drivable_area: Vec<ConvexPolygon>,
    pub agents: Vec<Agent>,
    pub ego: EgoState,
    pub route: Route,
    #[serde(rename = "horizon_N")]
    pub horizon_n: usize,
    pub dt: f64,
    /// Hidden kinematic solution; only the oracle denoiser and scenario
    /// validation may read it.
    pub reference_trajectory: ContinuousTrajectory,
}

impl Scene {
    pub fn horizon_time(&self) -> f64 {
        self.horizon_n as f64 * self.dt
    }

    pub fn ego_footprint(&self, center: Vec2, heading: f64) -> OrientedBox {
        self.ego.footprint(center, heading)
    }
}

/// Compliance test used for drivable-area checks: every corner and the
/// center of `footprint` must lie in the union of drivable polygons.
pub fn footprint_in_drivable(footprint: &OrientedBox, scene: &Scene) -> bool {
    footprint_in_polygons(footprint, &scene.drivable_area)
}

pub fn footprint_in_polygons(footprint: &OrientedBox, polygons: &[ConvexPolygon]) -> bool {
    union_contains(polygons, footprint.center) && footprint.corners().iter().all(|&c| union_contains(polygons, c))
}

/// Smooth goal-reaching trajectory: a cubic Hermite curve in time from the
/// ego state at the origin to `goal`, arriving tangent to the route.
///
/// The terminal speed is chosen so that a goal straight ahead at
/// `speed * N * dt` yields uniform motion.
pub fn kinematic_reference(scene: &Scene, goal: Vec2) -> Result<ContinuousTrajectory> {
    let n = scene.horizon_n;
    if n == 0 {
        return Err(Error::EmptyTrajectory);
    }
    let horizon = scene.horizon_time();
    let forward = Vec2::from_angle(scene.ego.heading);
    if goal.dot(forward) < -1.0 {
        return Err(Error::InfeasibleGoal { x: goal.x, y: goal.y });
    }
    let start_velocity = forward * scene.ego.speed;
    let end_speed = (2.0 * goal.norm() / horizon - scene.ego.speed).max(0.0);
    let end_dir = match scene.route.project(goal) {
        Ok(proj) => scene.route.tangent_at(proj.arc_length)?,
        Err(_) => goal.normalized().unwrap_or(forward),
    };
    let end_velocity = end_dir * end_speed;

    let waypoints = (1..=n)
        .map(|j| {
            let u = j as f64 / n as f64;
            let u2 = u * u;
            let u3 = u2 * u;
            let h10 = u3 - 2.0 * u2 + u;
            let h01 = -2.0 * u3 + 3.0 * u2;
            let h11 = u3 - u2;
            start_velocity * (h10 * horizon) + goal * h01 + end_velocity * (h11 * horizon)
        })
        .collect();
    Ok(ContinuousTrajectory::new(waypoints, scene.dt))
}
