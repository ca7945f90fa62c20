//! SVG overlay of one planned scene: drivable area, route, agents, goals
//! and the trajectory of every repair iteration, darker as the loop goes on.

use std::fmt::Write;

use anchorplan_core::{AgentKind, OrientedBox, Scene, Vec2};

use crate::report::SceneResult;

const PX_PER_M: f64 = 10.0;
const MARGIN_M: f64 = 3.0;

struct Frame {
    min: Vec2,
    max: Vec2,
}

impl Frame {
    fn px(&self, p: Vec2) -> (f64, f64) {
        ((p.x - self.min.x) * PX_PER_M, (self.max.y - p.y) * PX_PER_M)
    }

    fn points(&self, pts: &[Vec2]) -> String {
        pts.iter()
            .map(|&p| {
                let (x, y) = self.px(p);
                format!("{x:.1},{y:.1}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn bounds(scene: &Scene, result: Option<&SceneResult>) -> Frame {
    let mut pts: Vec<Vec2> = scene.drivable_area.iter().flat_map(|p| p.vertices().iter().copied()).collect();
    pts.push(Vec2::ZERO);
    if let Some(r) = result {
        pts.extend(&r.waypoints);
    }
    let (mut min, mut max) = (pts[0], pts[0]);
    for p in &pts {
        min = Vec2::new(min.x.min(p.x), min.y.min(p.y));
        max = Vec2::new(max.x.max(p.x), max.y.max(p.y));
    }
    let m = Vec2::new(MARGIN_M, MARGIN_M);
    Frame { min: min - m, max: max + m }
}

/// Grey levels from light to black over `n` trajectories.
fn shade(i: usize, n: usize) -> String {
    let t = if n <= 1 { 1.0 } else { i as f64 / (n - 1) as f64 };
    let v = (200.0 * (1.0 - t)).round() as u8;
    format!("#{v:02x}{v:02x}{v:02x}")
}

fn polyline(out: &mut String, f: &Frame, pts: &[Vec2], color: &str, width: f64, extra: &str) {
    let mut all = vec![Vec2::ZERO];
    all.extend_from_slice(pts);
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>"#,
        f.points(&all)
    );
}

fn rect(out: &mut String, f: &Frame, b: &OrientedBox, fill: &str) {
    let _ = writeln!(out, r#"<polygon points="{}" fill="{fill}" fill-opacity="0.8"/>"#, f.points(&b.corners()));
}

pub fn render(scene: &Scene, result: Option<&SceneResult>) -> String {
    let f = bounds(scene, result);
    let (w, h) = ((f.max.x - f.min.x) * PX_PER_M, (f.max.y - f.min.y) * PX_PER_M);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.1} {h:.1}">"#
    );
    let _ = writeln!(out, r#"<title>{}</title>"#, scene.scene_id);
    let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="#5a6b4f"/>"##);
    for poly in &scene.drivable_area {
        let _ = writeln!(
            out,
            r##"<polygon points="{}" fill="#d9d9d9" stroke="#d9d9d9" stroke-width="0.5"/>"##,
            f.points(poly.vertices())
        );
    }
    let _ = writeln!(
        out,
        r##"<polyline points="{}" fill="none" stroke="#ffffff" stroke-width="1" stroke-dasharray="6 4"/>"##,
        f.points(&scene.route.points)
    );
    for agent in &scene.agents {
        let fill = match agent.kind {
            AgentKind::Vehicle => "#3b6fb6",
            AgentKind::Pedestrian => "#e08a1e",
            AgentKind::Static => "#555555",
        };
        rect(
            &mut out,
            &f,
            &OrientedBox::new(agent.center, agent.heading, agent.half_extents.x, agent.half_extents.y),
            fill,
        );
    }
    rect(&mut out, &f, &scene.ego_footprint(Vec2::ZERO, scene.ego.heading), "#2e8b57");

    if let Some(r) = result {
        for g in &r.goals {
            let (x, y) = f.px(g.position);
            let _ = writeln!(
                out,
                r##"<circle cx="{x:.1}" cy="{y:.1}" r="4" fill="none" stroke="#8e44ad" stroke-width="1.5"/>"##
            );
        }
        let mut layers: Vec<&[Vec2]> = Vec::new();
        if let Some(t) = &r.trace {
            layers.push(&t.initial);
            layers.extend(t.iterations.iter().map(|it| it.waypoints.as_slice()));
        }
        let n = layers.len();
        for (i, pts) in layers.iter().enumerate().take(n.saturating_sub(1)) {
            polyline(&mut out, &f, pts, &shade(i, n), 1.5, r#" stroke-opacity="0.9""#);
        }
        polyline(&mut out, &f, &r.waypoints, "#000000", 2.5, "");
        for p in &r.waypoints {
            let (x, y) = f.px(*p);
            let _ = writeln!(out, r##"<circle cx="{x:.1}" cy="{y:.1}" r="1.5" fill="#000000"/>"##);
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use anchorplan_core::scene::generate_scenario;
    use anchorplan_core::ScenarioKind;

    #[test]
    fn shades_darken() {
        assert_eq!(shade(0, 3), "#c8c8c8");
        assert_eq!(shade(2, 3), "#000000");
        assert_eq!(shade(0, 1), "#000000");
    }

    #[test]
    fn renders_every_agent() {
        let scene = generate_scenario(ScenarioKind::NarrowCorridor, 2).unwrap();
        let svg = render(&scene, None);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polygon").count(), scene.drivable_area.len() + scene.agents.len() + 1);
    }
}
