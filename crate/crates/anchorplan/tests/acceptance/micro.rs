//! Handcrafted single-agent, single-polygon scenes scored twice: by the
//! library and by slow checkers that share no code with it (dense point
//! sampling for footprints, 0.01 s projection steps, dense route sampling).

use std::f64::consts::PI;

use anchorplan_core::scoring::{
    global_score, metric_comfort, metric_dac, metric_ep, metric_nc, metric_ttc, ScoringConfig,
};
use anchorplan_core::{
    Agent, AgentKind, ContinuousTrajectory, ConvexPolygon, EgoState, Route, ScenarioKind, Scene, TurnLabel, Vec2,
};

const N: usize = 16;
const DT: f64 = 0.25;
const EGO: (f64, f64) = (2.4, 1.0);
const SPEED_LIMIT: f64 = 15.0;

fn rot(p: (f64, f64), th: f64) -> (f64, f64) {
    let (s, c) = th.sin_cos();
    (c * p.0 - s * p.1, s * p.0 + c * p.1)
}

fn v2(p: (f64, f64)) -> Vec2 {
    Vec2::new(p.0, p.1)
}

struct AgentSpec {
    center: (f64, f64),
    heading: f64,
    half: (f64, f64),
    velocity: (f64, f64),
    kind: AgentKind,
}

fn vehicle(x: f64, y: f64, vx: f64) -> AgentSpec {
    let heading = if vx < 0.0 { PI } else { 0.0 };
    AgentSpec { center: (x, y), heading, half: (2.4, 1.0), velocity: (vx, 0.0), kind: AgentKind::Vehicle }
}

fn pedestrian(x: f64, y: f64, vy: f64) -> AgentSpec {
    AgentSpec { center: (x, y), heading: PI / 2.0, half: (0.3, 0.3), velocity: (0.0, vy), kind: AgentKind::Pedestrian }
}

fn obstacle(x: f64, y: f64) -> AgentSpec {
    AgentSpec { center: (x, y), heading: 0.0, half: (1.0, 0.8), velocity: (0.0, 0.0), kind: AgentKind::Static }
}

/// Local-frame description of one micro-scene; `rotation` turns the whole
/// scene about the ego origin.
struct Micro {
    name: String,
    road: [(f64, f64); 4],
    route: Vec<(f64, f64)>,
    agent: AgentSpec,
    path: Vec<(f64, f64)>,
    rotation: f64,
}

fn road(x0: f64, x1: f64, y0: f64, y1: f64) -> [(f64, f64); 4] {
    [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
}

fn path(f: impl Fn(f64) -> (f64, f64)) -> Vec<(f64, f64)> {
    (1..=N).map(|j| f(j as f64 * DT)).collect()
}

fn straight_route() -> Vec<(f64, f64)> {
    vec![(-10.0, 0.0), (120.0, 0.0)]
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

fn catalogue() -> Vec<Micro> {
    let mut out = Vec::new();
    let lane = road(-10.0, 120.0, -3.0, 3.0);
    let mut add =
        |name: String, road: [(f64, f64); 4], route: Vec<(f64, f64)>, agent: AgentSpec, path: Vec<(f64, f64)>| {
            let rotation = [0.0, 0.35, -0.6][out.len() % 3];
            out.push(Micro { name, road, route, agent, path, rotation });
        };

    for v in [3.0, 6.0, 9.0, 12.0, 14.5] {
        add(format!("cruise {v}"), lane, straight_route(), vehicle(4.0 * v + 30.0, 0.0, v), path(|t| (v * t, 0.0)));
    }
    for a in [1.0, 1.6, 2.4, -2.4, 3.5] {
        add(
            format!("drift {a}"),
            lane,
            straight_route(),
            pedestrian(50.0, 12.0, 0.0),
            path(|t| (8.0 * t, a * smoothstep(t / 4.0))),
        );
    }
    for x in [12.0, 22.0, 30.0, 45.0, 60.0] {
        add(format!("stopped vehicle {x}"), lane, straight_route(), vehicle(x, 0.0, 0.0), path(|t| (8.0 * t, 0.0)));
    }
    for x in [14.0, 26.0, 41.0, 70.0] {
        add(format!("obstacle {x}"), lane, straight_route(), obstacle(x, 0.5), path(|t| (8.0 * t, 0.0)));
    }
    for u in [7.35, 7.5, 10.0, 5.0] {
        add(format!("from behind {u}"), lane, straight_route(), vehicle(-9.0, 0.0, u), path(|t| (6.0 * t, 0.0)));
    }
    for x in [8.0, 12.0, 17.0, 20.0, 28.0, 40.0] {
        add(format!("crossing {x}"), lane, straight_route(), pedestrian(x, -5.0, 1.4), path(|t| (6.0 * t, 0.0)));
    }
    for a in [1.5, 3.0, 3.8, 4.3] {
        add(
            format!("braking {a}"),
            lane,
            straight_route(),
            pedestrian(0.0, 20.0, 0.0),
            path(|t| (18.0 * t - 0.5 * a * t * t, 0.0)),
        );
    }
    for (amp, period) in [(0.2, 4.0), (0.4, 2.0), (1.0, 4.0), (0.15, 2.0)] {
        add(
            format!("weave {amp} {period}"),
            lane,
            straight_route(),
            pedestrian(0.0, -20.0, 0.0),
            path(|t| (8.0 * t, amp * (2.0 * PI * t / period).sin())),
        );
    }
    let two_lanes = road(-10.0, 120.0, -2.5, 6.0);
    for y in [3.6, 2.4, 1.8] {
        add(format!("oncoming {y}"), two_lanes, straight_route(), vehicle(60.0, y, -8.0), path(|t| (8.0 * t, 0.0)));
    }
    for x in [10.0, 40.0, 3.0] {
        add(
            format!("lane change {x}"),
            two_lanes,
            straight_route(),
            vehicle(x, 3.5, 8.0),
            path(|t| (8.0 * t, 3.5 * smoothstep(t / 3.0))),
        );
    }
    for (radius, y_max) in [(20.0, 40.0), (40.0, 40.0), (20.0, 4.0), (12.0, 40.0)] {
        let arc = |s: f64| (radius * (s / radius).sin(), radius * (1.0 - (s / radius).cos()));
        let route: Vec<(f64, f64)> = (0..=200).map(|i| arc(i as f64 * 0.25)).collect();
        add(
            format!("arc {radius} {y_max}"),
            road(-10.0, 45.0, -10.0, y_max),
            route,
            obstacle(-5.0, -6.0),
            path(|t| arc(6.0 * t)),
        );
    }
    for v in [0.0, 0.01, 2.0] {
        add(format!("creep {v}"), lane, straight_route(), vehicle(-20.0, 0.0, 0.0), path(|t| (v * t, 0.0)));
    }
    out
}

impl Micro {
    fn scene(&self) -> (Scene, ContinuousTrajectory) {
        let th = self.rotation;
        let a = &self.agent;
        let agent = Agent::new(v2(rot(a.center, th)), a.heading + th, v2(a.half), v2(rot(a.velocity, th)), a.kind);
        let waypoints: Vec<Vec2> = self.path.iter().map(|&p| v2(rot(p, th))).collect();
        let traj = ContinuousTrajectory::new(waypoints, DT);
        let scene = Scene {
            scene_id: self.name.clone(),
            kind: ScenarioKind::Straight,
            seed: 0,
            drivable_area: vec![ConvexPolygon::new(self.road.iter().map(|&p| v2(rot(p, th))).collect())],
            agents: vec![agent],
            ego: EgoState { speed: 8.0, heading: th, footprint_half_extents: v2(EGO) },
            route: Route {
                points: self.route.iter().map(|&p| v2(rot(p, th))).collect(),
                turn: TurnLabel::Straight,
                speed_limit: SPEED_LIMIT,
            },
            horizon_n: N,
            dt: DT,
            reference_trajectory: traj.clone(),
        };
        (scene, traj)
    }
}

#[derive(Clone, Copy)]
struct Rect {
    c: (f64, f64),
    heading: f64,
    hl: f64,
    hw: f64,
}

impl Rect {
    fn local(&self, p: (f64, f64)) -> (f64, f64) {
        let (dx, dy) = (p.0 - self.c.0, p.1 - self.c.1);
        let (s, c) = self.heading.sin_cos();
        (c * dx + s * dy, -s * dx + c * dy)
    }

    fn holds(&self, p: (f64, f64)) -> bool {
        let (u, v) = self.local(p);
        u.abs() <= self.hl && v.abs() <= self.hw
    }

    /// Grid of points over the rectangle, edges and corners included, about
    /// 5 cm apart.
    fn samples(&self) -> Vec<(f64, f64)> {
        let nl = (2.0 * self.hl / 0.05).ceil() as usize;
        let nw = (2.0 * self.hw / 0.05).ceil() as usize;
        let (s, c) = self.heading.sin_cos();
        let mut pts = Vec::with_capacity((nl + 1) * (nw + 1));
        for i in 0..=nl {
            let u = -self.hl + 2.0 * self.hl * i as f64 / nl as f64;
            for k in 0..=nw {
                let v = -self.hw + 2.0 * self.hw * k as f64 / nw as f64;
                pts.push((self.c.0 + c * u - s * v, self.c.1 + s * u + c * v));
            }
        }
        pts
    }

    fn front(&self) -> Rect {
        let (s, c) = self.heading.sin_cos();
        Rect { c: (self.c.0 + c * self.hl / 2.0, self.c.1 + s * self.hl / 2.0), hl: self.hl / 2.0, ..*self }
    }

    fn radius(&self) -> f64 {
        self.hl.hypot(self.hw)
    }
}

fn overlap(a: &Rect, b: &Rect) -> bool {
    if (a.c.0 - b.c.0).hypot(a.c.1 - b.c.1) > a.radius() + b.radius() {
        return false;
    }
    a.samples().iter().any(|&p| b.holds(p)) || b.samples().iter().any(|&p| a.holds(p))
}

struct Pose {
    c: (f64, f64),
    heading: f64,
    speed: f64,
    t: f64,
}

fn poses(w: &[(f64, f64)], h0: f64) -> Vec<Pose> {
    let mut prev = (0.0, 0.0);
    let mut heading = h0;
    w.iter()
        .enumerate()
        .map(|(j, &p)| {
            let (dx, dy) = (p.0 - prev.0, p.1 - prev.1);
            let len = dx.hypot(dy);
            if len > 1e-9 {
                heading = dy.atan2(dx);
            }
            prev = p;
            Pose { c: p, heading, speed: len / DT, t: (j + 1) as f64 * DT }
        })
        .collect()
}

fn ego_rect(c: (f64, f64), heading: f64) -> Rect {
    Rect { c, heading, hl: EGO.0, hw: EGO.1 }
}

fn agent_rect(a: &AgentSpec, th: f64, t: f64) -> Rect {
    let c = rot(a.center, th);
    let v = rot(a.velocity, th);
    Rect { c: (c.0 + v.0 * t, c.1 + v.1 * t), heading: a.heading + th, hl: a.half.0, hw: a.half.1 }
}

fn in_convex(poly: &[(f64, f64)], p: (f64, f64)) -> bool {
    let n = poly.len();
    let area: f64 = (0..n).map(|i| poly[i].0 * poly[(i + 1) % n].1 - poly[(i + 1) % n].0 * poly[i].1).sum();
    (0..n).all(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        cross * area.signum() >= -1e-12
    })
}

struct Brute {
    nc: f64,
    dac: f64,
    ttc: f64,
    comfort: f64,
    ep: f64,
}

fn brute(m: &Micro) -> Brute {
    let th = m.rotation;
    let w: Vec<(f64, f64)> = m.path.iter().map(|&p| rot(p, th)).collect();
    let poly: Vec<(f64, f64)> = m.road.iter().map(|&p| rot(p, th)).collect();
    let ps = poses(&w, th);

    let dac = ps.iter().all(|p| ego_rect(p.c, p.heading).samples().iter().all(|&q| in_convex(&poly, q)));

    let mut nc: f64 = 1.0;
    for p in &ps {
        let ego = ego_rect(p.c, p.heading);
        let other = agent_rect(&m.agent, th, p.t);
        if overlap(&ego, &other) {
            if m.agent.kind == AgentKind::Static {
                nc = nc.min(0.5);
            } else if overlap(&ego.front(), &other) {
                nc = 0.0;
            }
        }
    }

    let ttc = !ps.iter().any(|p| {
        (0..=200).any(|k| {
            let tau = k as f64 * 0.01;
            let d = p.speed * tau;
            let ego = ego_rect((p.c.0 + d * p.heading.cos(), p.c.1 + d * p.heading.sin()), p.heading);
            overlap(&ego, &agent_rect(&m.agent, th, p.t + tau))
        })
    });

    let mut comfort = true;
    let dt2 = DT * DT;
    for j in 0..N - 2 {
        let (a, b, c) = (w[j], w[j + 1], w[j + 2]);
        let acc = ((c.0 - 2.0 * b.0 + a.0) / dt2, (c.1 - 2.0 * b.1 + a.1) / dt2);
        let (mx, my) = (c.0 - a.0, c.1 - a.1);
        let len = mx.hypot(my);
        let dir = if len > 1e-9 { (mx / len, my / len) } else { (th.cos(), th.sin()) };
        let lon = acc.0 * dir.0 + acc.1 * dir.1;
        let lat = dir.0 * acc.1 - dir.1 * acc.0;
        if lon.abs() > 4.0 || lat.abs() > 4.9 {
            comfort = false;
        }
    }
    for j in 0..N - 3 {
        let jx = (w[j + 3].0 - 3.0 * w[j + 2].0 + 3.0 * w[j + 1].0 - w[j].0) / (dt2 * DT);
        let jy = (w[j + 3].1 - 3.0 * w[j + 2].1 + 3.0 * w[j + 1].1 - w[j].1) / (dt2 * DT);
        if jx.hypot(jy) > 8.0 {
            comfort = false;
        }
    }

    let route: Vec<(f64, f64)> = m.route.iter().map(|&p| rot(p, th)).collect();
    let mut dense = Vec::new();
    let mut s = 0.0;
    for seg in route.windows(2) {
        let len = (seg[1].0 - seg[0].0).hypot(seg[1].1 - seg[0].1);
        let n = (len / 0.002).ceil() as usize;
        for i in 0..n {
            let u = i as f64 / n as f64;
            dense.push((s + u * len, (seg[0].0 + u * (seg[1].0 - seg[0].0), seg[0].1 + u * (seg[1].1 - seg[0].1))));
        }
        s += len;
    }
    let nearest = |q: (f64, f64)| {
        dense
            .iter()
            .min_by(|a, b| {
                let da = (a.1 .0 - q.0).hypot(a.1 .1 - q.1);
                let db = (b.1 .0 - q.0).hypot(b.1 .1 - q.1);
                da.total_cmp(&db)
            })
            .unwrap()
            .0
    };
    let s0 = nearest((0.0, 0.0));
    let s1 = nearest(w[N - 1]);
    let bound = (s - s0).min(SPEED_LIMIT * N as f64 * DT);
    let ep = ((s1 - s0) / bound).clamp(0.0, 1.0);

    let bit = |b: bool| if b { 1.0 } else { 0.0 };
    Brute { nc, dac: bit(dac), ttc: bit(ttc), comfort: bit(comfort), ep }
}

pub fn scorer_equivalence() -> Result<String, String> {
    let cfg = ScoringConfig::default();
    let scenes = catalogue();
    if scenes.len() != 50 {
        return Err(format!("catalogue has {} scenes", scenes.len()));
    }
    let mut seen = [[0usize; 3]; 4];
    let mut worst_ep: f64 = 0.0;
    let mut mismatches = Vec::new();
    for m in &scenes {
        let (scene, traj) = m.scene();
        let want = brute(m);
        let e = |x: anchorplan_core::Error| x.to_string();
        let got = [
            metric_nc(&traj, &scene, &cfg),
            metric_dac(&traj, &scene),
            metric_ttc(&traj, &scene, &cfg),
            metric_comfort(&traj, &cfg.comfort, scene.ego.heading).map_err(e)?,
        ];
        let ep = metric_ep(&traj, &scene).map_err(e)?;
        let expected = [want.nc, want.dac, want.ttc, want.comfort];
        for (i, name) in ["NC", "DAC", "TTC", "Comfort"].iter().enumerate() {
            if got[i] != expected[i] {
                mismatches.push(format!("{} {name}: {} vs {}", m.name, got[i], expected[i]));
            }
            seen[i][(expected[i] * 2.0) as usize] += 1;
        }
        worst_ep = worst_ep.max((ep - want.ep).abs());
        if (ep - want.ep).abs() > 0.02 {
            mismatches.push(format!("{} EP: {ep:.4} vs {:.4}", m.name, want.ep));
        }
        let total = global_score(&traj, &scene, &cfg).map_err(e)?;
        if [total.m_nc, total.m_dac, total.m_ttc, total.m_comfort, total.m_ep] != [got[0], got[1], got[2], got[3], ep] {
            mismatches.push(format!("{}: breakdown disagrees with the metric functions", m.name));
        }
    }
    if !mismatches.is_empty() {
        return Err(mismatches.join("; "));
    }
    let covered = seen[0].iter().all(|&c| c > 0) && seen[1..].iter().all(|s| s[0] > 0 && s[2] > 0);
    if !covered {
        return Err(format!("outcome coverage too narrow: {seen:?}"));
    }
    Ok(format!(
        "50 scenes agree; NC 0/0.5/1 = {:?}, DAC 0/1 = {}/{}, TTC 0/1 = {}/{}, comfort 0/1 = {}/{}, worst EP gap {worst_ep:.4}",
        seen[0], seen[1][0], seen[1][2], seen[2][0], seen[2][2], seen[3][0], seen[3][2]
    ))
}
