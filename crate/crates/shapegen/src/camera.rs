//! The multi-view camera rig: a horizontal ring of poses plus two poles.

use serde::{Deserialize, Serialize};

use crate::vec3::{cross, normalize, scale, Vec3};

pub const DEFAULT_CAMERA_DISTANCE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    /// Distance from the origin in multiples of the shape bounding radius.
    pub distance: f64,
}

impl CameraPose {
    pub fn new(azimuth_deg: f64, elevation_deg: f64, distance: f64) -> Self {
        debug_assert!((-90.0..=90.0).contains(&elevation_deg));
        debug_assert!(distance > 1.0);
        Self { azimuth_deg, elevation_deg, distance }
    }

    /// Unit direction from the origin toward the camera.
    pub fn direction(&self) -> Vec3 {
        let az = self.azimuth_deg.to_radians();
        let el = self.elevation_deg.to_radians();
        [el.cos() * az.cos(), el.sin(), el.cos() * az.sin()]
    }

    /// Camera center plus an orthonormal image basis (right, up), with the
    /// viewing direction pointing at the origin. Polar poses fall back to a
    /// fixed +x right vector so the frame stays well-defined.
    pub fn frame(&self) -> CameraFrame {
        let dir = self.direction();
        let center = scale(dir, self.distance);
        let forward = scale(dir, -1.0);
        let world_up = [0.0, 1.0, 0.0];
        let r = cross(forward, world_up);
        let right = if crate::vec3::norm(r) < 1e-9 { [1.0, 0.0, 0.0] } else { normalize(r) };
        let up = cross(right, forward);
        CameraFrame { center, forward, right, up }
    }
}

pub struct CameraFrame {
    pub center: Vec3,
    pub forward: Vec3,
    pub right: Vec3,
    pub up: Vec3,
}

/// `n_ring` equally spaced poses at elevation 0 (azimuth i·360/n_ring for
/// i = 0..n_ring−1), then the +90 and −90 poles at azimuth 0. The default
/// ring of 8 yields 10 cameras.
pub fn camera_ring(n_ring: usize) -> Vec<CameraPose> {
    camera_ring_at(n_ring, DEFAULT_CAMERA_DISTANCE)
}

pub fn camera_ring_at(n_ring: usize, distance: f64) -> Vec<CameraPose> {
    assert!(n_ring >= 1, "ring needs at least one camera");
    let step = 360.0 / n_ring as f64;
    let mut poses: Vec<CameraPose> =
        (0..n_ring).map(|i| CameraPose::new(i as f64 * step, 0.0, distance)).collect();
    poses.push(CameraPose::new(0.0, 90.0, distance));
    poses.push(CameraPose::new(0.0, -90.0, distance));
    poses
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vec3::{dot, norm};

    #[test]
    fn default_ring_has_ten_cameras_at_45_degree_steps() {
        let poses = camera_ring(8);
        assert_eq!(poses.len(), 10);
        assert_eq!(poses[2].azimuth_deg, 90.0);
        assert_eq!(poses[2].elevation_deg, 0.0);
        assert_eq!(poses[8].azimuth_deg, 0.0);
        assert_eq!(poses[8].elevation_deg, 90.0);
        assert_eq!(poses[9].elevation_deg, -90.0);
        // Ring azimuths strictly increase.
        for w in poses[..8].windows(2) {
            assert!(w[1].azimuth_deg > w[0].azimuth_deg);
        }
    }

    #[test]
    fn four_camera_ring_axes() {
        let az: Vec<f64> = camera_ring(4)[..4].iter().map(|p| p.azimuth_deg).collect();
        assert_eq!(az, vec![0.0, 90.0, 180.0, 270.0]);
    }

    #[test]
    fn directions_are_unit_and_frames_orthonormal() {
        for pose in camera_ring(8) {
            assert!((norm(pose.direction()) - 1.0).abs() < 1e-12);
            let f = pose.frame();
            assert!(dot(f.forward, f.right).abs() < 1e-12);
            assert!(dot(f.forward, f.up).abs() < 1e-12);
            assert!(dot(f.right, f.up).abs() < 1e-12);
            assert!((norm(f.right) - 1.0).abs() < 1e-12);
            assert!((norm(f.up) - 1.0).abs() < 1e-12);
            // Forward points back at the origin.
            let to_origin = crate::vec3::scale(f.center, -1.0);
            assert!(dot(normalize(to_origin), f.forward) > 0.999_999);
        }
    }
}
