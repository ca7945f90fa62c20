//! Rule-based trajectory scorers.
//!
//! The total score is `H * Q` where the hard gate `H = NC * DAC` zeroes any
//! trajectory with an at-fault collision or a drivable-area infraction and
//! `Q = (5 EP + 5 TTC + 2 C) / 12`. The same per-waypoint checks back the
//! windowed safety report that drives the repair loop and the local scorer
//! that ranks candidate token pairs.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::codebook::{Codebook, ContinuousTrajectory, TokenPair, TokenTrajectory};
use crate::error::{Error, Result};
use crate::geometry::{boxes_intersect, OrientedBox, Vec2, EPS};
use crate::scene::{footprint_in_drivable, AgentFutureMode, Scene};

pub const WEIGHT_EP: f64 = 5.0;
pub const WEIGHT_TTC: f64 = 5.0;
pub const WEIGHT_COMFORT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComfortLimits {
    /// m/s^2
    pub max_lon_accel: f64,
    /// m/s^2
    pub max_lat_accel: f64,
    /// m/s^3
    pub max_jerk: f64,
}

impl Default for ComfortLimits {
    fn default() -> Self {
        Self { max_lon_accel: 4.0, max_lat_accel: 4.9, max_jerk: 8.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoringConfig {
    pub comfort: ComfortLimits,
    /// Seconds of forward projection for the time-to-collision check.
    pub ttc_horizon: f64,
    pub ttc_step: f64,
    /// Width of the Gaussian coherence kernel of the local scorer, meters.
    pub coherence_sigma: f64,
    /// Half-width of the safety window in waypoints.
    pub window: usize,
    pub safety_threshold: f64,
    pub agent_mode: AgentFutureMode,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            comfort: ComfortLimits::default(),
            ttc_horizon: 2.0,
            ttc_step: 0.1,
            coherence_sigma: 1.0,
            window: 0,
            safety_threshold: 1.0,
            agent_mode: AgentFutureMode::ConstantVelocity,
        }
    }
}

impl ScoringConfig {
    fn ttc_steps(&self) -> usize {
        if self.ttc_step <= 0.0 {
            return 0;
        }
        (self.ttc_horizon / self.ttc_step).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub m_nc: f64,
    pub m_dac: f64,
    pub m_ep: f64,
    pub m_ttc: f64,
    pub m_comfort: f64,
    pub hard: f64,
    pub quality: f64,
    pub total: f64,
}

impl ScoreBreakdown {
    pub fn from_metrics(m_nc: f64, m_dac: f64, m_ep: f64, m_ttc: f64, m_comfort: f64) -> Self {
        let hard = m_nc * m_dac;
        let quality = (WEIGHT_EP * m_ep + WEIGHT_TTC * m_ttc + WEIGHT_COMFORT * m_comfort)
            / (WEIGHT_EP + WEIGHT_TTC + WEIGHT_COMFORT);
        Self { m_nc, m_dac, m_ep, m_ttc, m_comfort, hard, quality, total: hard * quality }
    }
}

/// Ego pose implied by a waypoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoPose {
    pub center: Vec2,
    pub heading: f64,
    pub speed: f64,
    pub time: f64,
}

/// Heading from the backward difference, with the ego origin before the
/// first waypoint; zero-length segments inherit the previous heading.
pub fn ego_poses(traj: &ContinuousTrajectory, initial_heading: f64) -> Vec<EgoPose> {
    let w = &traj.waypoints;
    let n = w.len();
    let mut out = Vec::with_capacity(n);
    let mut heading = initial_heading;
    for j in 0..n {
        let seg = if j > 0 { w[j] - w[j - 1] } else { w[0] };
        let len = seg.norm();
        let speed = if traj.dt > 0.0 { len / traj.dt } else { 0.0 };
        if len > EPS {
            heading = seg.angle();
        }
        out.push(EgoPose { center: w[j], heading, speed, time: traj.time_of(j) });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionFault {
    /// Any overlap with a static object.
    Static,
    /// Ego-front overlap with a moving agent.
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WaypointCheck {
    pub collision: Option<CollisionFault>,
    pub off_road: bool,
    pub ttc_breach: bool,
}

impl WaypointCheck {
    /// 0 for collisions and drivable-area infractions, 0.5 for a TTC breach,
    /// 1 otherwise.
    pub fn score(&self) -> f64 {
        if self.collision.is_some() || self.off_road {
            0.0
        } else if self.ttc_breach {
            0.5
        } else {
            1.0
        }
    }

    /// Most severe violation present, by precedence collision > drivable
    /// area > ttc.
    pub fn kind(&self) -> Option<ViolationKind> {
        if self.collision.is_some() {
            Some(ViolationKind::Collision)
        } else if self.off_road {
            Some(ViolationKind::DrivableArea)
        } else if self.ttc_breach {
            Some(ViolationKind::Ttc)
        } else {
            None
        }
    }
}

/// Ordered by precedence: `Collision` is the most severe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Collision,
    DrivableArea,
    Ttc,
}

fn at_fault_collision(ego: &OrientedBox, t: f64, scene: &Scene, mode: AgentFutureMode) -> Option<CollisionFault> {
    let front = ego.front_half();
    let mut worst = None;
    for agent in &scene.agents {
        let other = agent.pose_at(t, mode);
        if !boxes_intersect(ego, &other) {
            continue;
        }
        if agent.is_static() {
            worst = worst.max(Some(CollisionFault::Static));
        } else if boxes_intersect(&front, &other) {
            return Some(CollisionFault::Other);
        }
    }
    worst
}

fn ttc_breach(pose: &EgoPose, scene: &Scene, cfg: &ScoringConfig) -> bool {
    if scene.agents.is_empty() {
        return false;
    }
    let dir = Vec2::from_angle(pose.heading);
    (0..=cfg.ttc_steps()).any(|k| {
        let tau = k as f64 * cfg.ttc_step;
        let ego = scene.ego_footprint(pose.center + dir * (pose.speed * tau), pose.heading);
        scene.agents.iter().any(|a| boxes_intersect(&ego, &a.pose_at(pose.time + tau, cfg.agent_mode)))
    })
}

/// Every hard-safety and TTC check at one waypoint.
pub fn check_waypoint(pose: &EgoPose, scene: &Scene, cfg: &ScoringConfig) -> WaypointCheck {
    let ego = scene.ego_footprint(pose.center, pose.heading);
    WaypointCheck {
        collision: at_fault_collision(&ego, pose.time, scene, cfg.agent_mode),
        off_road: !footprint_in_drivable(&ego, scene),
        ttc_breach: ttc_breach(pose, scene, cfg),
    }
}

pub fn check_trajectory(traj: &ContinuousTrajectory, scene: &Scene, cfg: &ScoringConfig) -> Vec<WaypointCheck> {
    ego_poses(traj, scene.ego.heading).iter().map(|p| check_waypoint(p, scene, cfg)).collect()
}

fn nc_from_checks(checks: &[WaypointCheck]) -> f64 {
    match checks.iter().filter_map(|c| c.collision).max() {
        None => 1.0,
        Some(CollisionFault::Static) => 0.5,
        Some(CollisionFault::Other) => 0.0,
    }
}

/// No at-fault collision: 1, 0.5 if the only at-fault collisions are with
/// static objects, 0 otherwise.
pub fn metric_nc(traj: &ContinuousTrajectory, scene: &Scene, cfg: &ScoringConfig) -> f64 {
    nc_from_checks(&check_trajectory(traj, scene, cfg))
}

/// Drivable-area compliance at every waypoint.
pub fn metric_dac(traj: &ContinuousTrajectory, scene: &Scene) -> f64 {
    let all_in = ego_poses(traj, scene.ego.heading)
        .iter()
        .all(|p| footprint_in_drivable(&scene.ego_footprint(p.center, p.heading), scene));
    if all_in {
        1.0
    } else {
        0.0
    }
}

/// 1 iff no forward projection within the TTC horizon overlaps an agent.
pub fn metric_ttc(traj: &ContinuousTrajectory, scene: &Scene, cfg: &ScoringConfig) -> f64 {
    let breach = ego_poses(traj, scene.ego.heading).iter().any(|p| ttc_breach(p, scene, cfg));
    if breach {
        0.0
    } else {
        1.0
    }
}

/// Finite-difference acceleration and jerk against the comfort limits.
pub fn metric_comfort(traj: &ContinuousTrajectory, limits: &ComfortLimits, initial_heading: f64) -> Result<f64> {
    let p = &traj.waypoints;
    if p.len() < 4 {
        return Err(Error::TrajectoryTooShort { needed: 4, got: p.len() });
    }
    let dt = traj.dt;
    let vel: Vec<Vec2> = p.windows(2).map(|w| (w[1] - w[0]) * (1.0 / dt)).collect();
    let acc: Vec<Vec2> = vel.windows(2).map(|w| (w[1] - w[0]) * (1.0 / dt)).collect();
    let mut dir = Vec2::from_angle(initial_heading);
    for (j, a) in acc.iter().enumerate() {
        if let Some(d) = (vel[j] + vel[j + 1]).normalized() {
            dir = d;
        }
        let lon = a.dot(dir);
        let lat = dir.cross(*a);
        if lon.abs() > limits.max_lon_accel || lat.abs() > limits.max_lat_accel {
            return Ok(0.0);
        }
    }
    let jerk_ok = acc.windows(2).all(|w| ((w[1] - w[0]) * (1.0 / dt)).norm() <= limits.max_jerk);
    Ok(if jerk_ok { 1.0 } else { 0.0 })
}

/// Route progress of the final waypoint over the feasible bound
/// `min(remaining route, speed_limit * horizon)`, clamped to `[0, 1]`.
pub fn metric_ep(traj: &ContinuousTrajectory, scene: &Scene) -> Result<f64> {
    let route = &scene.route;
    let start = route.project(Vec2::ZERO)?.arc_length;
    let last = *traj.waypoints.last().ok_or(Error::EmptyTrajectory)?;
    let end = route.project(last)?.arc_length;
    let horizon = traj.waypoints.len() as f64 * traj.dt;
    let bound = (route.length() - start).min(route.speed_limit * horizon);
    if bound <= EPS {
        return Ok(1.0);
    }
    Ok(((end - start) / bound).clamp(0.0, 1.0))
}

/// Full breakdown; `total = H * Q`.
pub fn global_score(traj: &ContinuousTrajectory, scene: &Scene, cfg: &ScoringConfig) -> Result<ScoreBreakdown> {
    let poses = ego_poses(traj, scene.ego.heading);
    let checks: Vec<WaypointCheck> = poses.iter().map(|p| check_waypoint(p, scene, cfg)).collect();
    let m_nc = nc_from_checks(&checks);
    let m_dac = if checks.iter().any(|c| c.off_road) { 0.0 } else { 1.0 };
    let m_ttc = if checks.iter().any(|c| c.ttc_breach) { 0.0 } else { 1.0 };
    let m_comfort = metric_comfort(traj, &cfg.comfort, scene.ego.heading)?;
    let m_ep = metric_ep(traj, scene)?;
    Ok(ScoreBreakdown::from_metrics(m_nc, m_dac, m_ep, m_ttc, m_comfort))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointSafetyReport {
    pub per_waypoint_score: Vec<f64>,
    pub first_violation_index: Option<usize>,
    pub violation_kind: Option<ViolationKind>,
}

impl WaypointSafetyReport {
    pub fn is_safe(&self) -> bool {
        self.first_violation_index.is_none()
    }
}

fn window_bounds(j: usize, window: usize, n: usize) -> (usize, usize) {
    (j.saturating_sub(window), (j + window).min(n - 1))
}

/// Windowed per-waypoint safety: each waypoint takes the worst outcome over
/// `[j - w, j + w]`; the first index below the threshold is reported.
pub fn safety_report(traj: &ContinuousTrajectory, scene: &Scene, cfg: &ScoringConfig) -> WaypointSafetyReport {
    let checks = check_trajectory(traj, scene, cfg);
    report_from_checks(&checks, cfg)
}

pub fn report_from_checks(checks: &[WaypointCheck], cfg: &ScoringConfig) -> WaypointSafetyReport {
    let n = checks.len();
    let raw: Vec<f64> = checks.iter().map(WaypointCheck::score).collect();
    let per_waypoint_score: Vec<f64> = (0..n)
        .map(|j| {
            let (lo, hi) = window_bounds(j, cfg.window, n);
            raw[lo..=hi].iter().copied().fold(1.0, f64::min)
        })
        .collect();
    let first_violation_index = per_waypoint_score.iter().position(|&s| s < cfg.safety_threshold);
    let violation_kind = first_violation_index.and_then(|j| {
        let (lo, hi) = window_bounds(j, cfg.window, n);
        checks[lo..=hi].iter().filter_map(WaypointCheck::kind).min()
    });
    WaypointSafetyReport { per_waypoint_score, first_violation_index, violation_kind }
}

/// Scores candidate token pairs at one waypoint of a fixed base trajectory.
/// The base is dequantized once so that repeated queries stay cheap.
pub struct LocalScorer<'a> {
    scene: &'a Scene,
    cfg: &'a ScoringConfig,
    cb: &'a Codebook,
    base: ContinuousTrajectory,
}

impl<'a> LocalScorer<'a> {
    pub fn new(base: &TokenTrajectory, scene: &'a Scene, cb: &'a Codebook, cfg: &'a ScoringConfig) -> Result<Self> {
        Ok(Self { scene, cfg, cb, base: base.dequantize(cb)? })
    }

    pub fn base(&self) -> &ContinuousTrajectory {
        &self.base
    }

    /// `hard_local * exp(-d^2 / sigma^2)`: windowed safety at `at_index`
    /// after substitution, times a Gaussian on the distance to the midpoint
    /// of the neighbors (linear extrapolation at the ends).
    pub fn score(&self, candidate: TokenPair, at_index: usize) -> Result<f64> {
        let n = self.base.len();
        if at_index >= n {
            return Err(Error::InvalidArgument(alloc::format!("waypoint {at_index} out of {n}")));
        }
        let point = Vec2::new(self.cb.dequantize(candidate.x)?, self.cb.dequantize(candidate.y)?);
        let mut traj = self.base.clone();
        traj.waypoints[at_index] = point;

        let poses = ego_poses(&traj, self.scene.ego.heading);
        let (lo, hi) = window_bounds(at_index, self.cfg.window, n);
        let hard_local =
            poses[lo..=hi].iter().map(|p| check_waypoint(p, self.scene, self.cfg).score()).fold(1.0, f64::min);
        if hard_local == 0.0 {
            return Ok(0.0);
        }
        let d = point.distance(neighbor_target(&traj.waypoints, at_index));
        let sigma = self.cfg.coherence_sigma;
        Ok(hard_local * (-(d * d) / (sigma * sigma)).exp())
    }
}

/// Where a smooth trajectory would put waypoint `j` given its neighbors:
/// the midpoint of the two neighbors, or a linear extrapolation for the last
/// waypoint. The ego origin precedes waypoint 0.
fn neighbor_target(w: &[Vec2], j: usize) -> Vec2 {
    let at = |i: isize| if i < 0 { Vec2::ZERO } else { w[i as usize] };
    let j = j as isize;
    if (j as usize) + 1 < w.len() {
        (at(j - 1) + at(j + 1)) * 0.5
    } else if j == 0 {
        Vec2::ZERO
    } else {
        at(j - 1) * 2.0 - at(j - 2)
    }
}

/// One-shot form of [`LocalScorer::score`].
pub fn local_score(
    candidate: TokenPair,
    at_index: usize,
    base: &TokenTrajectory,
    scene: &Scene,
    cb: &Codebook,
    cfg: &ScoringConfig,
) -> Result<f64> {
    LocalScorer::new(base, scene, cb, cfg)?.score(candidate, at_index)
}

#[cfg(test)]
#[path = "scoring_tests.rs"]
mod tests;
