//! Static picture of one run: lanes, trajectories, conflict regions and the
//! wait-for cycle, if any.

use std::fmt::Write;

use dlfuzz::feedback::ConflictRegion;
use dlfuzz::oracle::OracleVerdict;
use dlfuzz::road_network::LaneGraph;
use dlfuzz::scenario::{AgentKind, Observation};
use dlfuzz::Point;

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22"];
const SCALE: f64 = 6.0;
const PAD: f64 = 10.0;

struct Frame {
    min: Point,
    height: f64,
}

impl Frame {
    fn map(&self, p: Point) -> (f64, f64) {
        ((p.x - self.min.x + PAD) * SCALE, (self.height - (p.y - self.min.y) + PAD) * SCALE)
    }

    fn path(&self, pts: impl IntoIterator<Item = Point>) -> String {
        let mut d = String::new();
        for (k, p) in pts.into_iter().enumerate() {
            let (x, y) = self.map(p);
            let _ = write!(d, "{}{x:.1},{y:.1} ", if k == 0 { "M" } else { "L" });
        }
        d
    }
}

pub fn render(graph: &LaneGraph, obs: &Observation, regions: &[ConflictRegion], verdict: Option<&OracleVerdict>) -> String {
    let all = graph.lanes().iter().flat_map(|l| l.centerline.iter().copied());
    let (mut lo, mut hi) = (Point::new(f64::INFINITY, f64::INFINITY), Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
    for p in all {
        lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let frame = Frame { min: lo, height: hi.y - lo.y };
    let (w, h) = ((hi.x - lo.x + 2.0 * PAD) * SCALE, (hi.y - lo.y + 2.0 * PAD) * SCALE);

    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#);
    out.push_str(
        r##"<defs><marker id="arrow" viewBox="0 0 10 10" refX="9" refY="5" markerWidth="6" markerHeight="6" orient="auto"><path d="M0,0 L10,5 L0,10 z" fill="#d62728"/></marker></defs>
<rect width="100%" height="100%" fill="white"/>
"##,
    );
    for lane in graph.lanes() {
        let _ = writeln!(
            out,
            r##"<path d="{}" stroke="#d0d0d0" stroke-width="{:.1}" fill="none"/>"##,
            frame.path(lane.centerline.iter().copied()),
            3.0 * SCALE
        );
    }
    for (k, info) in obs.agents.iter().enumerate() {
        let trace: Vec<Point> = obs.scenes.iter().filter_map(|s| s.agents.get(&info.id).map(|a| a.p)).collect();
        let (color, dash) = match info.kind {
            AgentKind::Av => (PALETTE[k % PALETTE.len()], ""),
            AgentKind::Npc => ("#7f7f7f", r#" stroke-dasharray="6 4""#),
        };
        let _ = writeln!(out, r#"<path d="{}" stroke="{color}" stroke-width="2" fill="none"{dash}/>"#, frame.path(trace.iter().copied()));
        if let Some(&last) = trace.last() {
            let (x, y) = frame.map(last);
            let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="12" fill="{color}">{}</text>"#, x + 4.0, y - 4.0, info.id.0);
        }
    }
    for r in regions {
        let (x, y) = frame.map(r.point);
        let _ = writeln!(out, r##"<circle cx="{x:.1}" cy="{y:.1}" r="{:.1}" fill="#d62728" fill-opacity="0.25" stroke="#d62728"/>"##, 2.0 * SCALE);
    }
    if let Some(v) = verdict {
        if let (Some(cycle), Some(t)) = (&v.cycle, v.t_detect) {
            let i = obs.scene_index(t);
            let pos: Vec<Point> = cycle.iter().filter_map(|id| obs.state(i, *id).map(|s| s.p)).collect();
            for (k, &p) in pos.iter().enumerate() {
                let (x1, y1) = frame.map(p);
                let (x2, y2) = frame.map(pos[(k + 1) % pos.len()]);
                let _ = writeln!(
                    out,
                    r##"<line x1="{x1:.1}" y1="{y1:.1}" x2="{x2:.1}" y2="{y2:.1}" stroke="#d62728" stroke-width="2" marker-end="url(#arrow)"/>"##
                );
                let _ = writeln!(out, r##"<circle cx="{x1:.1}" cy="{y1:.1}" r="5" fill="#d62728"/>"##);
            }
            let ids: Vec<String> = cycle.iter().map(|id| id.0.to_string()).collect();
            let _ = writeln!(out, r#"<text x="10" y="20" font-size="14">wait-for cycle [{}] at t = {t} s</text>"#, ids.join(", "));
        }
    }
    out.push_str("</svg>\n");
    out
}
