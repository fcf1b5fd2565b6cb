//! SVG rendering of one scene with its predictions.

use std::fmt::Write;

use crate::types::{HybridSequence, Point, SceneRecord};

const SIZE: f64 = 600.0;
const MARGIN: f64 = 10.0;

struct Frame {
    min: Point,
    scale: f64,
}

impl Frame {
    fn map(&self, p: Point) -> (f64, f64) {
        let x = (p[0] - self.min[0]) * self.scale;
        let y = (p[1] - self.min[1]) * self.scale;
        (x, SIZE - y)
    }
}

fn polyline(out: &mut String, f: &Frame, pts: &[Point], color: &str, width: f64) {
    if pts.is_empty() {
        return;
    }
    let coords: Vec<String> = pts
        .iter()
        .map(|&p| {
            let (x, y) = f.map(p);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}"/>"#,
        coords.join(" ")
    );
}

fn dot(out: &mut String, f: &Frame, p: Point, color: &str, r: f64) {
    let (x, y) = f.map(p);
    let _ = writeln!(
        out,
        r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{color}"/>"#
    );
}

/// Past track in blue, ground truth in cyan, predictions in red with a red
/// dot wherever a prediction changes mode. Lane centerlines are drawn in
/// grey and clipped to the trajectories' bounding box.
pub fn render_scene_svg(record: &SceneRecord, predictions: &[HybridSequence]) -> String {
    let mut pts: Vec<Point> = record
        .observed
        .iter()
        .chain(&record.future)
        .copied()
        .collect();
    for p in predictions {
        pts.extend(p.positions());
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &pts {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    if pts.is_empty() {
        lo = [0.0, 0.0];
        hi = [1.0, 1.0];
    }
    let pad = 5.0;
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1.0) + 2.0 * pad;
    let cx = (lo[0] + hi[0]) / 2.0;
    let cy = (lo[1] + hi[1]) / 2.0;
    let inner = SIZE - 2.0 * MARGIN;
    let scale = inner / span;
    let min = [
        cx - span / 2.0 - MARGIN / scale,
        cy - span / 2.0 - MARGIN / scale,
    ];
    let frame = Frame { min, scale };
    let max = [min[0] + SIZE / scale, min[1] + SIZE / scale];
    let inside = |p: &Point| p[0] >= min[0] && p[0] <= max[0] && p[1] >= min[1] && p[1] <= max[1];

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, "<title>{}</title>", record.scene_id);
    for line in &record.centerlines {
        let clipped: Vec<Point> = line.iter().filter(|p| inside(p)).copied().collect();
        polyline(&mut out, &frame, &clipped, "#bbbbbb", 1.0);
    }
    polyline(&mut out, &frame, &record.observed, "blue", 2.0);
    let mut gt = vec![*record.observed.last().unwrap_or(&[0.0, 0.0])];
    gt.extend(&record.future);
    polyline(&mut out, &frame, &gt, "cyan", 2.0);
    for p in predictions {
        let mut line = vec![*record.observed.last().unwrap_or(&[0.0, 0.0])];
        line.extend(p.positions());
        polyline(&mut out, &frame, &line, "red", 1.2);
        for w in p.steps.windows(2) {
            if w[0].mode != w[1].mode {
                dot(&mut out, &frame, w[1].position, "red", 2.5);
            }
        }
    }
    out.push_str("</svg>\n");
    out
}
