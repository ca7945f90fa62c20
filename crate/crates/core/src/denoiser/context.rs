//! Fixed-length scene features for the trainable denoiser.

use alloc::vec::Vec;

use crate::geometry::Vec2;
use crate::scene::{AgentKind, Scene, TurnLabel};

/// Agent slots in the feature vector; farther agents are dropped.
pub const MAX_AGENTS: usize = 8;
const AGENT_FEATURES: usize = 9;
/// Route lookahead as fractions of the speed-limit horizon distance.
const LOOKAHEAD_FRACTIONS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
/// Route lookahead at fixed arc distances, meters.
const LOOKAHEAD_METERS: [f64; 2] = [10.0, 30.0];
const BASE_FEATURES: usize = 2 + 3 + 3 + 2 * (LOOKAHEAD_FRACTIONS.len() + LOOKAHEAD_METERS.len());

pub const FEATURE_DIM: usize = BASE_FEATURES + MAX_AGENTS * AGENT_FEATURES;

const POS_SCALE: f64 = 50.0;
const SPEED_SCALE: f64 = 10.0;
const EXTENT_SCALE: f64 = 5.0;

/// Scene encoding: ego and speed limit, turn one-hot, optional goal,
/// route lookahead points, then up to [`MAX_AGENTS`] agents nearest-first.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneContext {
    pub features: Vec<f64>,
    pub null: bool,
}

impl SceneContext {
    pub fn encode(scene: &Scene, goal: Option<Vec2>) -> Self {
        let mut f = Vec::with_capacity(FEATURE_DIM);
        f.push(scene.ego.speed / SPEED_SCALE);
        f.push(scene.route.speed_limit / SPEED_SCALE);
        f.extend(match scene.route.turn {
            TurnLabel::Left => [1.0, 0.0, 0.0],
            TurnLabel::Right => [0.0, 1.0, 0.0],
            TurnLabel::Straight => [0.0, 0.0, 1.0],
        });
        match goal {
            Some(g) => f.extend([1.0, g.x / POS_SCALE, g.y / POS_SCALE]),
            None => f.extend([0.0, 0.0, 0.0]),
        }
        let start = scene.route.project(Vec2::ZERO).map(|p| p.arc_length).unwrap_or(0.0);
        let reach = scene.route.speed_limit * scene.horizon_time();
        let distances = LOOKAHEAD_FRACTIONS.iter().map(|k| k * reach).chain(LOOKAHEAD_METERS);
        for d in distances {
            let p = scene.route.point_at(start + d).unwrap_or(Vec2::ZERO);
            f.extend([p.x / POS_SCALE, p.y / POS_SCALE]);
        }

        let mut order: Vec<usize> = (0..scene.agents.len()).collect();
        order.sort_by(|&a, &b| {
            let da = scene.agents[a].center.norm();
            let db = scene.agents[b].center.norm();
            da.total_cmp(&db).then(a.cmp(&b))
        });
        for &i in order.iter().take(MAX_AGENTS) {
            let a = &scene.agents[i];
            f.extend([
                a.center.x / POS_SCALE,
                a.center.y / POS_SCALE,
                a.velocity.x / SPEED_SCALE,
                a.velocity.y / SPEED_SCALE,
                a.half_extents.x / EXTENT_SCALE,
                a.half_extents.y / EXTENT_SCALE,
            ]);
            f.extend(match a.kind {
                AgentKind::Vehicle => [1.0, 0.0, 0.0],
                AgentKind::Pedestrian => [0.0, 1.0, 0.0],
                AgentKind::Static => [0.0, 0.0, 1.0],
            });
        }
        f.resize(FEATURE_DIM, 0.0);
        Self { features: f, null: false }
    }

    /// The unconditional context used for guidance and dropout.
    pub fn null() -> Self {
        Self { features: alloc::vec![0.0; FEATURE_DIM], null: true }
    }
}
