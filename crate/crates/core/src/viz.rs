//! SVG overlays of true and predicted actions on a frame.

use std::fmt::Write;

use crate::dataset::ActionLabel;
use crate::geometry::{rot6d_to_rotmat, Rot6D};
use crate::gripper::GripperState;
use crate::image::ImageTensor;
use crate::policy::Prediction;

const PANEL: f64 = 256.0;
const SIDE: f64 = 96.0;
const TRUE_COLOR: &str = "#00e5e5";
const PRED_COLOR: &str = "#ffd400";
const ROT_TRUE: &str = "#1f5fff";
const ROT_PRED: &str = "#1faa3f";

fn arrow(s: &mut String, x0: f64, y0: f64, x1: f64, y1: f64, color: &str, width: f64) {
    let (dx, dy) = (x1 - x0, y1 - y0);
    let len = dx.hypot(dy);
    let _ = writeln!(
        s,
        r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y1:.2}" stroke="{color}" stroke-width="{width}" stroke-linecap="round"/>"#
    );
    if len > 1e-6 {
        let (ux, uy) = (dx / len, dy / len);
        let h = (3.0 * width).min(len);
        let (bx, by) = (x1 - ux * h, y1 - uy * h);
        let _ = writeln!(
            s,
            r#"<polygon points="{x1:.2},{y1:.2} {:.2},{:.2} {:.2},{:.2}" fill="{color}"/>"#,
            bx - uy * h * 0.6,
            by + ux * h * 0.6,
            bx + uy * h * 0.6,
            by - ux * h * 0.6
        );
    }
}

/// Vertical glyph for motion along the optical axis: it points down for
/// motion toward the scene and its opacity grows with magnitude.
fn depth_glyph(s: &mut String, x: f64, y: f64, dz: f64, color: &str) {
    let a = dz.abs().min(1.0);
    let dir = if dz >= 0.0 { 1.0 } else { -1.0 };
    let _ = writeln!(
        s,
        r#"<g opacity="{:.3}">"#,
        0.15 + 0.85 * a
    );
    arrow(s, x, y - dir * 14.0, x, y + dir * 14.0, color, 4.0);
    s.push_str("</g>\n");
}

fn rotation_tip(w: &Rot6D) -> Option<(f64, f64)> {
    let r = rot6d_to_rotmat(w).ok()?;
    let v = r.0.column(0);
    Some((v[0], v[1]))
}

/// One frame with the label and prediction overlaid. The right column
/// holds the rotation plot and the gripper probabilities.
pub fn frame_svg(img: &ImageTensor, label: Option<&ActionLabel>, pred: Option<&Prediction>, caption: &str) -> String {
    let (h, w) = (img.height(), img.width());
    let px = PANEL / w.max(h) as f64;
    let total_w = PANEL + SIDE;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{}" viewBox="0 0 {total_w} {}">"#,
        PANEL + 20.0,
        PANEL + 20.0
    );
    s.push_str(r##"<rect width="100%" height="100%" fill="#202020"/>"##);
    s.push('\n');
    s.push_str(r#"<g shape-rendering="crispEdges">"#);
    s.push('\n');
    for y in 0..h {
        for x in 0..w {
            let p = img.pixel(y, x).map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
            let _ = writeln!(
                s,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#{:02x}{:02x}{:02x}"/>"##,
                x as f64 * px,
                y as f64 * px,
                px + 0.05,
                px + 0.05,
                p[0],
                p[1],
                p[2]
            );
        }
    }
    s.push_str("</g>\n");

    // Transverse motion: image right and down are camera +x and +y.
    let (cx, cy) = (PANEL / 2.0, PANEL / 2.0);
    let k = PANEL / 4.0;
    if let Some(l) = label {
        arrow(&mut s, cx, cy, cx + l.dx[0] * k, cy + l.dx[1] * k, TRUE_COLOR, 3.0);
        depth_glyph(&mut s, 18.0, PANEL - 22.0, l.dx[2], TRUE_COLOR);
    }
    if let Some(p) = pred {
        arrow(&mut s, cx, cy, cx + p.x_hat[0] * k, cy + p.x_hat[1] * k, PRED_COLOR, 3.0);
        depth_glyph(&mut s, 40.0, PANEL - 22.0, p.x_hat[2], PRED_COLOR);
    }

    // Rotation plot: R·(1, 0, 0) projected on the image plane.
    let (rx, ry, rr) = (PANEL + SIDE / 2.0, SIDE / 2.0, SIDE / 2.0 - 8.0);
    let _ = writeln!(
        s,
        r##"<circle cx="{rx}" cy="{ry}" r="{rr}" fill="none" stroke="#808080" stroke-width="1"/>"##
    );
    if let Some((x, y)) = label.and_then(|l| rotation_tip(&l.w)) {
        arrow(&mut s, rx, ry, rx + x * rr, ry + y * rr, ROT_TRUE, 2.0);
    }
    if let Some((x, y)) = pred.and_then(|p| rotation_tip(&Rot6D(p.w_hat))) {
        arrow(&mut s, rx, ry, rx + x * rr, ry + y * rr, ROT_PRED, 2.0);
    }

    // Gripper bars: open, then close.
    let base = PANEL - 10.0;
    let bar_h = PANEL - SIDE - 40.0;
    let probs = pred.map(|p| {
        let c = p.close_probability();
        [1.0 - c, c]
    });
    for (i, name) in ["open", "close"].iter().enumerate() {
        let x = PANEL + 16.0 + i as f64 * 36.0;
        let truth = label.map(|l| (l.g == GripperState::Close) == (i == 1)).unwrap_or(false);
        let outline = if truth { "#20d040" } else { "#808080" };
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{:.2}" width="28" height="{bar_h:.2}" fill="none" stroke="{outline}" stroke-width="2"/>"#,
            base - bar_h
        );
        if let Some(pr) = probs {
            let hh = bar_h * pr[i];
            let _ = writeln!(
                s,
                r##"<rect x="{x}" y="{:.2}" width="28" height="{hh:.2}" fill="#c0c0c0"/>"##,
                base - hh
            );
        }
        let _ = writeln!(
            s,
            r##"<text x="{:.1}" y="{:.1}" font-size="9" fill="#e0e0e0" text-anchor="middle">{name}</text>"##,
            x + 14.0,
            base + 9.0
        );
    }
    let _ = writeln!(
        s,
        r##"<text x="4" y="{:.1}" font-size="11" fill="#e0e0e0">{}</text>"##,
        PANEL + 14.0,
        escape(caption)
    );
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
