//! Occlusion and background clutter.
//!
//! Occlusion is geometric: a second shape of a different category is unioned
//! into the scene before rendering. Clutter is photometric: background pixels
//! of a finished render are replaced by a smooth bounded heightfield.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::render::DepthImage;
use crate::shape::{sdf_eval, ShapeCategory, ShapeSpec};
use crate::vec3::{scale, sub, Vec3};

/// Test-time occluder sizes from the robustness protocol.
pub const OCCLUDER_SIZE_MIN: f64 = 0.3;
pub const OCCLUDER_SIZE_MAX: f64 = 2.1;
/// Train-time occluder size unless overridden.
pub const OCCLUDER_SIZE_TRAIN: f64 = 1.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccluderNoise {
    /// Occluder family; sampled from the non-target categories when absent.
    pub category: Option<ShapeCategory>,
    /// Occluder scale in multiples of the target bounding radius.
    pub relative_size: f64,
    /// Occluder center; sampled at 1.0..1.6 bounding radii when absent.
    pub offset: Option<[f64; 3]>,
}

impl OccluderNoise {
    pub fn sized(relative_size: f64) -> Self {
        Self { category: None, relative_size, offset: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClutterNoise {
    /// Heightfield seed; drawn from the injection rng when absent.
    pub seed: Option<u64>,
    /// Strength in [0, 1]: 0 leaves the image untouched, 1 uses the full
    /// [0.6, 1.0) band.
    pub amplitude: f64,
}

impl ClutterNoise {
    pub fn full() -> Self {
        Self { seed: None, amplitude: 1.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub occluder: Option<OccluderNoise>,
    pub clutter: Option<ClutterNoise>,
}

/// A fully resolved occluder: instance, scale, and world offset.
#[derive(Debug, Clone, PartialEq)]
pub struct OccluderPlacement {
    pub spec: ShapeSpec,
    pub relative_size: f64,
    pub offset: Vec3,
}

/// What the renderer sees: the target alone or a union with its occluder.
#[derive(Debug, Clone, PartialEq)]
pub enum Scene {
    Single(ShapeSpec),
    Occluded { target: ShapeSpec, occluder: OccluderPlacement },
}

impl Scene {
    pub fn target(&self) -> &ShapeSpec {
        match self {
            Scene::Single(s) => s,
            Scene::Occluded { target, .. } => target,
        }
    }

    pub fn sdf(&self, p: Vec3) -> f64 {
        match self {
            Scene::Single(s) => sdf_eval(s, p),
            Scene::Occluded { target, occluder } => {
                let d_target = sdf_eval(target, p);
                let s = occluder.relative_size;
                let local = scale(sub(p, occluder.offset), 1.0 / s);
                let d_occ = s * sdf_eval(&occluder.spec, local);
                d_target.min(d_occ)
            }
        }
    }

    pub fn render(&self, cam: &crate::camera::CameraPose, res: usize) -> DepthImage {
        crate::render::render_sdf(&|p| self.sdf(p), cam, res)
    }
}

/// Builds the occluded scene. Unset occluder fields (category, offset) are
/// sampled from `rng` before `relative_size` is consulted, so size sweeps
/// over a fixed rng seed keep the same occluder and placement.
pub fn inject_occluder(scene: &ShapeSpec, noise: &NoiseSpec, rng: &mut ChaCha8Rng) -> Scene {
    let occ = noise.occluder.as_ref().expect("occluder noise requested but absent");
    let category = occ.category.unwrap_or_else(|| {
        let others: Vec<ShapeCategory> =
            ShapeCategory::ALL.into_iter().filter(|c| *c != scene.category).collect();
        others[rng.gen_range(0..others.len())]
    });
    let instance_seed = rng.gen::<u64>();
    let offset = occ.offset.unwrap_or_else(|| {
        let z: f64 = rng.gen_range(-1.0..1.0);
        let az: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let r = (1.0 - z * z).sqrt();
        let dir = [r * az.cos(), z, r * az.sin()];
        scale(dir, rng.gen_range(1.0..1.6))
    });
    if occ.relative_size == 0.0 {
        // Degenerate occluder: a zero-scaled SDF has no surface, so the
        // scene reduces to the target alone.
        return Scene::Single(scene.clone());
    }
    Scene::Occluded {
        target: scene.clone(),
        occluder: OccluderPlacement {
            spec: ShapeSpec::generate(category, instance_seed),
            relative_size: occ.relative_size,
            offset,
        },
    }
}

/// Replaces background pixels (exactly 1.0) with a smooth seeded heightfield
/// in [0.6, 1.0) scaled by `amplitude`; object pixels are never altered.
pub fn inject_clutter(img: &DepthImage, noise: &NoiseSpec, rng: &mut ChaCha8Rng) -> DepthImage {
    let clutter = noise.clutter.as_ref().expect("clutter noise requested but absent");
    let field_seed = clutter.seed.unwrap_or_else(|| rng.gen());
    if clutter.amplitude == 0.0 {
        return img.clone();
    }
    assert!(
        (0.0..=1.0).contains(&clutter.amplitude),
        "clutter amplitude out of [0, 1]"
    );
    let field = ValueNoise::new(field_seed);
    let (w, h) = (img.width(), img.height());
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            if img.get(x, y) < 1.0 {
                continue;
            }
            let n = field.sample(x as f64 / (w - 1) as f64, y as f64 / (h - 1) as f64);
            // Deviation stays in (0, 0.4): the result is strictly below 1.0
            // and at or above 0.6 for full amplitude. Quantize like the
            // renderer, but never let rounding reach exactly 1.0.
            let deviation = clutter.amplitude * (0.004 + 0.392 * n);
            let mut q = (1.0 - deviation) as f32;
            if q >= 1.0 {
                q = f32::from_bits(0x3F7F_FFFF);
            }
            out.set(x, y, q as f64);
        }
    }
    out
}

/// Bilinear value noise on a fixed coarse grid; smooth and bounded in [0, 1].
struct ValueNoise {
    grid: Vec<f64>,
    cells: usize,
}

impl ValueNoise {
    fn new(seed: u64) -> Self {
        let cells = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = (0..(cells + 1) * (cells + 1)).map(|_| rng.gen_range(0.0..1.0)).collect();
        Self { grid, cells }
    }

    /// `u`, `v` in [0, 1].
    fn sample(&self, u: f64, v: f64) -> f64 {
        let side = self.cells + 1;
        let fx = u.clamp(0.0, 1.0) * self.cells as f64;
        let fy = v.clamp(0.0, 1.0) * self.cells as f64;
        let x0 = (fx as usize).min(self.cells - 1);
        let y0 = (fy as usize).min(self.cells - 1);
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        let g = |x: usize, y: usize| self.grid[y * side + x];
        let top = g(x0, y0) * (1.0 - tx) + g(x0 + 1, y0) * tx;
        let bottom = g(x0, y0 + 1) * (1.0 - tx) + g(x0 + 1, y0 + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::CameraPose;
    use crate::shape::ShapeParams;

    fn test_rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1234)
    }

    fn sphere_half() -> ShapeSpec {
        ShapeSpec {
            category: ShapeCategory::Sphere,
            params: ShapeParams::Sphere { r: 0.5 },
            subcategory: 0,
            rotation: [0.0; 3],
            seed: 0,
        }
    }

    #[test]
    fn zero_size_occluder_leaves_scene_unchanged() {
        let target = sphere_half();
        let noise = NoiseSpec { occluder: Some(OccluderNoise::sized(0.0)), clutter: None };
        let scene = inject_occluder(&target, &noise, &mut test_rng());
        assert_eq!(scene, Scene::Single(target));
    }

    #[test]
    fn self_union_at_zero_offset_is_idempotent() {
        let target = sphere_half();
        let cam = CameraPose::new(0.0, 0.0, 3.0);
        let clean = Scene::Single(target.clone()).render(&cam, 24);
        let unioned = Scene::Occluded {
            target: target.clone(),
            occluder: OccluderPlacement {
                spec: target,
                relative_size: 1.0,
                offset: [0.0; 3],
            },
        }
        .render(&cam, 24);
        assert_eq!(clean.depths(), unioned.depths());
    }

    #[test]
    fn front_occluder_reduces_center_depth() {
        let target = sphere_half();
        let cam = CameraPose::new(0.0, 0.0, 3.0);
        let clean = Scene::Single(target.clone()).render(&cam, 33);
        let noise = NoiseSpec {
            occluder: Some(OccluderNoise {
                category: Some(ShapeCategory::Box3),
                relative_size: 1.2,
                // Camera sits on +x; the occluder center lies on the axis in
                // front of the target.
                offset: Some([1.3, 0.0, 0.0]),
            }),
            clutter: None,
        };
        let scene = inject_occluder(&target, &noise, &mut test_rng());
        let occluded = scene.render(&cam, 33);
        assert!(
            occluded.get(16, 16) < clean.get(16, 16),
            "occluded {} vs clean {}",
            occluded.get(16, 16),
            clean.get(16, 16)
        );
    }

    #[test]
    fn occluder_size_sweep_shares_placement() {
        let target = ShapeSpec::generate(ShapeCategory::Capsule, 9);
        let scene_at = |size: f64| {
            let noise = NoiseSpec { occluder: Some(OccluderNoise::sized(size)), clutter: None };
            inject_occluder(&target, &noise, &mut ChaCha8Rng::seed_from_u64(55))
        };
        let (a, b) = (scene_at(0.3), scene_at(2.1));
        let (Scene::Occluded { occluder: oa, .. }, Scene::Occluded { occluder: ob, .. }) = (a, b)
        else {
            panic!("expected occluded scenes");
        };
        assert_eq!(oa.spec, ob.spec);
        assert_eq!(oa.offset, ob.offset);
        assert_ne!(oa.relative_size, ob.relative_size);
        let dist = crate::vec3::norm(oa.offset);
        assert!((1.0..1.6).contains(&dist), "offset distance {dist}");
    }

    #[test]
    fn occluder_category_differs_from_target() {
        for seed in 0..20 {
            let target = ShapeSpec::generate(ShapeCategory::Torus, seed);
            let noise = NoiseSpec { occluder: Some(OccluderNoise::sized(1.2)), clutter: None };
            let scene =
                inject_occluder(&target, &noise, &mut ChaCha8Rng::seed_from_u64(seed ^ 0xabc));
            let Scene::Occluded { occluder, .. } = scene else { panic!() };
            assert_ne!(occluder.spec.category, ShapeCategory::Torus);
        }
    }

    #[test]
    fn zero_amplitude_clutter_is_identity() {
        let img = Scene::Single(sphere_half()).render(&CameraPose::new(0.0, 0.0, 3.0), 16);
        let noise = NoiseSpec {
            occluder: None,
            clutter: Some(ClutterNoise { seed: Some(3), amplitude: 0.0 }),
        };
        let out = inject_clutter(&img, &noise, &mut test_rng());
        assert_eq!(img.depths(), out.depths());
    }

    #[test]
    fn clutter_fills_background_within_band_and_preserves_objects() {
        let img = Scene::Single(sphere_half()).render(&CameraPose::new(30.0, 15.0, 3.0), 32);
        let noise = NoiseSpec { occluder: None, clutter: Some(ClutterNoise::full()) };
        let out = inject_clutter(&img, &noise, &mut test_rng());
        for y in 0..32 {
            for x in 0..32 {
                let (before, after) = (img.get(x, y), out.get(x, y));
                if before < 1.0 {
                    assert_eq!(before, after, "object pixel ({x},{y}) was altered");
                } else {
                    assert!((0.6..1.0).contains(&after), "background ({x},{y}) = {after}");
                }
            }
        }
    }

    #[test]
    fn all_background_image_lands_entirely_in_band() {
        let img = DepthImage::new(16, 16, vec![1.0; 256]);
        let noise = NoiseSpec { occluder: None, clutter: Some(ClutterNoise::full()) };
        let out = inject_clutter(&img, &noise, &mut test_rng());
        assert!(out.depths().iter().all(|&d| (0.6..1.0).contains(&d)));
    }

    #[test]
    fn clutter_with_fixed_seed_is_reproducible() {
        let img = DepthImage::new(16, 16, vec![1.0; 256]);
        let noise = NoiseSpec {
            occluder: None,
            clutter: Some(ClutterNoise { seed: Some(42), amplitude: 0.8 }),
        };
        let a = inject_clutter(&img, &noise, &mut test_rng());
        let b = inject_clutter(&img, &noise, &mut ChaCha8Rng::seed_from_u64(999));
        assert_eq!(a.depths(), b.depths());
    }
}
