//! Depth rendering by sphere tracing.
//!
//! Rays are cast in parallel through an orthographic window centered on the
//! origin; each traced distance is normalized linearly between a near plane
//! at `distance - 1.1` and a far plane at `distance + 1.1`. Missed rays (and
//! rays that fail to converge within the step budget) read exactly 1.0.

use crate::camera::CameraPose;
use crate::vec3::{add, scale, Vec3};

pub const MAX_STEPS: usize = 128;
pub const HIT_TOL: f64 = 1e-4;
/// Half-extent of the square image window, in bounding radii.
pub const WINDOW_HALF: f64 = 1.1;
/// Near/far planes sit this far on either side of the camera distance.
pub const DEPTH_HALF_RANGE: f64 = 1.1;

#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    depths: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, depths: Vec<f64>) -> Self {
        assert_eq!(depths.len(), width * height);
        debug_assert!(depths.iter().all(|d| (0.0..=1.0).contains(d)));
        Self { width, height, depths }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.depths[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.depths[y * self.width + x] = v;
    }
}

/// Snaps a depth to the nearest f32-representable value. Pixels are stored
/// as f32 in the view archive; quantizing at render time makes the archive
/// round-trip exact.
pub fn quantize_depth(d: f64) -> f64 {
    (d as f32) as f64
}

/// Marches one ray; `Some(t)` is the hit distance from the ray origin.
fn trace(sdf: &dyn Fn(Vec3) -> f64, origin: Vec3, dir: Vec3, t_max: f64) -> Option<f64> {
    let mut t = 0.0;
    for _ in 0..MAX_STEPS {
        let d = sdf(add(origin, scale(dir, t)));
        if d < HIT_TOL {
            return Some(t);
        }
        t += d;
        if t > t_max {
            return None;
        }
    }
    None
}

/// Renders an arbitrary SDF from `cam`. Row 0 is the top of the image.
pub fn render_sdf(sdf: &dyn Fn(Vec3) -> f64, cam: &CameraPose, res: usize) -> DepthImage {
    assert!(res >= 8, "resolution below the supported minimum");
    let frame = cam.frame();
    let near = cam.distance - DEPTH_HALF_RANGE;
    let far = cam.distance + DEPTH_HALF_RANGE;
    let range = far - near;
    let mut depths = vec![1.0; res * res];
    for py in 0..res {
        let v = 1.0 - 2.0 * (py as f64 + 0.5) / res as f64;
        for px in 0..res {
            let u = 2.0 * (px as f64 + 0.5) / res as f64 - 1.0;
            let origin = add(
                frame.center,
                add(scale(frame.right, u * WINDOW_HALF), scale(frame.up, v * WINDOW_HALF)),
            );
            if let Some(t) = trace(sdf, origin, frame.forward, far) {
                depths[py * res + px] = quantize_depth(((t - near) / range).clamp(0.0, 1.0));
            }
        }
    }
    DepthImage::new(res, res, depths)
}

/// Renders a single clean shape.
pub fn render_depth(spec: &crate::shape::ShapeSpec, cam: &CameraPose, res: usize) -> DepthImage {
    render_sdf(&|p| crate::shape::sdf_eval(spec, p), cam, res)
}
