use nalgebra::Vector3;

use super::world::{Body, Shape, WorldState};
use super::{CameraConfig, SimConfig, TaskSpec};
use crate::image::ImageTensor;

/// Finger width in meters.
const FINGER_WIDTH: f64 = 0.007;
const SIDE_SHADE: f32 = 0.75;

/// Native-pixel fingertip positions `[left, right]` for a finger gap.
/// The fingers are rigid in the camera frame, so only the gap matters.
pub fn finger_keypoints(cam: &CameraConfig, gap: f64) -> [[f64; 2]; 2] {
    let f = cam.focal();
    let c = cam.principal();
    let dx = f * gap / 2.0 / cam.height;
    let y = c + f * cam.ahead / cam.height;
    [[c - dx, y], [c + dx, y]]
}

pub fn render_native_keypoints(spec: &TaskSpec, state: &WorldState) -> [[f64; 2]; 2] {
    finger_keypoints(&spec.config.camera, state.gap)
}

fn hit_body(b: &Body, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, bool)> {
    let mut best: Option<(f64, bool)> = None;
    let mut take = |t: f64, top: bool| {
        if t > 1e-9 && best.map_or(true, |(bt, _)| t < bt) {
            best = Some((t, top));
        }
    };
    if d.z.abs() > 1e-12 {
        let t = (b.z1 - o.z) / d.z;
        let p = o + d * t;
        if b.contains([p.x, p.y], 1.0) {
            take(t, true);
        }
    }
    let in_z = |t: f64| {
        let z = o.z + d.z * t;
        z >= b.z0 && z <= b.z1
    };
    let (lx, ly) = (o.x - b.center[0], o.y - b.center[1]);
    match b.shape {
        Shape::Disc { radius } => {
            let a = d.x * d.x + d.y * d.y;
            if a > 1e-18 {
                let bq = 2.0 * (lx * d.x + ly * d.y);
                let cq = lx * lx + ly * ly - radius * radius;
                let disc = bq * bq - 4.0 * a * cq;
                if disc >= 0.0 {
                    let t = (-bq - disc.sqrt()) / (2.0 * a);
                    if in_z(t) {
                        take(t, false);
                    }
                }
            }
        }
        Shape::Block { half, yaw } => {
            let (s, c) = yaw.sin_cos();
            let (ox, oy) = (c * lx + s * ly, -s * lx + c * ly);
            let (dx, dy) = (c * d.x + s * d.y, -s * d.x + c * d.y);
            for (oo, dd, po, pd) in [(ox, dx, oy, dy), (oy, dy, ox, dx)] {
                if dd.abs() < 1e-15 {
                    continue;
                }
                for wall in [-half, half] {
                    let t = (wall - oo) / dd;
                    if (po + pd * t).abs() <= half && in_z(t) {
                        take(t, false);
                    }
                }
            }
        }
    }
    best
}

fn shade_ray(spec: &TaskSpec, state: &WorldState, o: &Vector3<f64>, d: &Vector3<f64>) -> [f32; 3] {
    let mut best: Option<(f64, [f32; 3])> = None;
    for b in &state.bodies {
        if let Some((t, top)) = hit_body(b, o, d) {
            if best.map_or(true, |(bt, _)| t < bt) {
                let k = if top { 1.0 } else { SIDE_SHADE };
                best = Some((t, b.color.map(|v| v * k)));
            }
        }
    }
    if let Some((_, c)) = best {
        return c;
    }
    let ap = &spec.appearance;
    if d.z >= 0.0 {
        return ap.table;
    }
    let t = -o.z / d.z;
    let p = o + d * t;
    if let Some(g) = state.goal {
        if (p.x - g[0]).hypot(p.y - g[1]) <= state.goal_radius {
            return ap.goal_color;
        }
    }
    let [amp, fx, fy, px, py] = ap.texture;
    let m = (1.0 + amp * (fx * p.x + px).sin() * (fy * p.y + py).sin()) as f32;
    ap.table.map(|v| (v * m).clamp(0.0, 1.0))
}

/// Render the wrist camera view as a square `px × px` image.
pub fn render(spec: &TaskSpec, state: &WorldState, px: usize) -> ImageTensor {
    let cfg: &SimConfig = &spec.config;
    let cam = &cfg.camera;
    let pose = state.camera_pose(cam);
    let ss = cfg.supersample.max(1);
    let n = px * ss;
    let native = cam.native_px as f64;
    let (f, c) = (cam.focal(), cam.principal());
    let kp = finger_keypoints(cam, state.gap);
    let half_w = f * FINGER_WIDTH / 2.0 / cam.height;
    let norm = 1.0 / (ss * ss) as f32;
    let mut img = ImageTensor::filled(px, px, [0.0; 3]);
    for y in 0..px {
        for x in 0..px {
            let mut acc = [0.0f32; 3];
            for sy in 0..ss {
                for sx in 0..ss {
                    let u = ((x * ss + sx) as f64 + 0.5) / n as f64 * native;
                    let v = ((y * ss + sy) as f64 + 0.5) / n as f64 * native;
                    let finger = v >= kp[0][1] && kp.iter().any(|k| (u - k[0]).abs() <= half_w);
                    let rgb = if finger {
                        spec.appearance.finger_color
                    } else {
                        let d = pose.rotation.apply(&Vector3::new((u - c) / f, (v - c) / f, 1.0));
                        shade_ray(spec, state, &pose.translation, &d)
                    };
                    for k in 0..3 {
                        acc[k] += rgb[k];
                    }
                }
            }
            img.set_pixel(y, x, acc.map(|v| v * norm));
        }
    }
    img.quantized()
}
