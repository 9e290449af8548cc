//! SVG heatmaps of grid tensors with optional box overlays.

use std::fmt::Write as _;

use mmdr_core::fusion::DetectionSet;
use mmdr_core::gridnet::Tensor;

/// Pedestrian, car, cyclist.
pub const CLASS_COLORS: [[u8; 3]; 3] = [[230, 60, 60], [60, 200, 90], [70, 120, 240]];

/// One heatmap: a `(1, C, G, G)` tensor whose channels are mixed additively
/// with `colors[c]` weighted by the clamped cell value.
pub struct Panel<'a> {
    pub title: String,
    pub grid: &'a Tensor,
    pub colors: Vec<[u8; 3]>,
    pub boxes: Option<&'a DetectionSet>,
}

const PANEL_PX: f64 = 320.0;
const GAP_PX: f64 = 24.0;
const TITLE_PX: f64 = 20.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Lays the panels out left to right. Tensor axis 2 runs along the SVG x
/// axis and axis 3 along y, matching normalized box coordinates.
pub fn render(panels: &[Panel<'_>]) -> String {
    let n = panels.len().max(1) as f64;
    let width = n * PANEL_PX + (n + 1.0) * GAP_PX;
    let height = PANEL_PX + TITLE_PX + 2.0 * GAP_PX;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="monospace" font-size="13">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, p) in panels.iter().enumerate() {
        let x0 = GAP_PX + k as f64 * (PANEL_PX + GAP_PX);
        let y0 = GAP_PX + TITLE_PX;
        let _ = writeln!(out, r#"<text x="{x0}" y="{}">{}</text>"#, y0 - 6.0, esc(&p.title));
        let _ = writeln!(out, r#"<g transform="translate({x0},{y0})">"#);
        let _ = writeln!(out, r#"<rect width="{PANEL_PX}" height="{PANEL_PX}" fill="black"/>"#);
        let [_, c, g, _] = p.grid.shape();
        let cell = PANEL_PX / g as f64;
        for i in 0..g {
            for j in 0..g {
                let mut rgb = [0.0f64; 3];
                for ch in 0..c.min(p.colors.len()) {
                    let v = p.grid.get(0, ch, i, j).clamp(0.0, 1.0);
                    for (acc, &col) in rgb.iter_mut().zip(&p.colors[ch]) {
                        *acc += v * col as f64;
                    }
                }
                if rgb.iter().all(|&v| v <= 0.0) {
                    continue;
                }
                let [r, gg, b] = rgb.map(|v| v.round().min(255.0) as u8);
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="rgb({r},{gg},{b})"/>"#,
                    i as f64 * cell,
                    j as f64 * cell,
                    cell,
                    cell
                );
            }
        }
        if let Some(dets) = p.boxes {
            for d in dets.iter() {
                let [r, gg, b] = CLASS_COLORS[d.class % CLASS_COLORS.len()];
                let dash = if d.block == Some(true) { r#" stroke-dasharray="4 3""# } else { "" };
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="none" stroke="rgb({r},{gg},{b})" stroke-width="1.5"{dash}><title>class {} score {:.3}</title></rect>"#,
                    d.x1 * PANEL_PX,
                    d.y1 * PANEL_PX,
                    d.width() * PANEL_PX,
                    d.height() * PANEL_PX,
                    d.class,
                    d.score
                );
            }
        }
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    out
}
