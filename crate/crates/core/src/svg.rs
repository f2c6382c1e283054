//! Minimal SVG rendering of planar data and first-layer breaklines.

use std::fmt::Write;

use nalgebra::DMatrix;

use crate::net::ReluNetwork;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 0.15;

/// A breakline `{x : wᵀx + b = 0}` clipped to a box, in data coordinates.
pub type Segment = ([f64; 2], [f64; 2]);

/// Clips the line `w·x + b = 0` to `[lo, hi]²`.
pub fn clip_line(w: [f64; 2], b: f64, lo: [f64; 2], hi: [f64; 2]) -> Option<Segment> {
    if w[0] == 0.0 && w[1] == 0.0 {
        return None;
    }
    let mut pts: Vec<[f64; 2]> = Vec::new();
    // Intersections with the four box edges.
    if w[1] != 0.0 {
        for x in [lo[0], hi[0]] {
            let y = -(b + w[0] * x) / w[1];
            if y >= lo[1] - 1e-12 && y <= hi[1] + 1e-12 {
                pts.push([x, y]);
            }
        }
    }
    if w[0] != 0.0 {
        for y in [lo[1], hi[1]] {
            let x = -(b + w[1] * y) / w[0];
            if x >= lo[0] - 1e-12 && x <= hi[0] + 1e-12 {
                pts.push([x, y]);
            }
        }
    }
    pts.dedup_by(|a, b| (a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
    let first = *pts.first()?;
    let far = pts
        .iter()
        .copied()
        .max_by(|a, b| {
            let da = (a[0] - first[0]).hypot(a[1] - first[1]);
            let db = (b[0] - first[0]).hypot(b[1] - first[1]);
            da.total_cmp(&db)
        })?;
    Some((first, far))
}

/// Scatter of the samples (colored by the sign of the first label) with the
/// breakline of every first-layer neuron.
pub fn breaklines(net: &ReluNetwork, x: &DMatrix<f64>, y: &DMatrix<f64>) -> String {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for r in x.row_iter() {
        for k in 0..2 {
            lo[k] = lo[k].min(r[k]);
            hi[k] = hi[k].max(r[k]);
        }
    }
    for k in 0..2 {
        let span = (hi[k] - lo[k]).max(1.0);
        lo[k] -= MARGIN * span;
        hi[k] += MARGIN * span;
    }
    let sx = |v: f64| (v - lo[0]) / (hi[0] - lo[0]) * SIZE;
    let sy = |v: f64| SIZE - (v - lo[1]) / (hi[1] - lo[1]) * SIZE;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let l0 = &net.layers[0];
    for j in 0..l0.outputs() {
        let w = [l0.w[(j, 0)], l0.w[(j, 1)]];
        let b = l0.b.as_ref().map_or(0.0, |b| b[j]);
        if let Some((p, q)) = clip_line(w, b, lo, hi) {
            let _ = writeln!(
                s,
                r##"<line class="breakline" x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="#1f5fbf" stroke-width="1.5"/>"##,
                sx(p[0]),
                sy(p[1]),
                sx(q[0]),
                sy(q[1])
            );
        }
    }
    for (i, r) in x.row_iter().enumerate() {
        let label = if y.ncols() > 0 { y[(i, 0)] } else { 0.0 };
        let fill = if label > 0.0 { "#d62728" } else { "#333333" };
        let _ = writeln!(
            s,
            r#"<circle class="sample" cx="{:.3}" cy="{:.3}" r="4" fill="{fill}"/>"#,
            sx(r[0]),
            sy(r[1])
        );
    }
    s.push_str("</svg>\n");
    s
}
