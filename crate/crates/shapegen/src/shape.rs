//! Primitive shape families defined by signed distance functions.
//!
//! Every generated instance is normalized so its bounding radius is exactly 1
//! (the farthest surface point from the origin lies on the unit sphere).
//! Instances carry a subcategory: an aspect-ratio bucket in {0, 1, 2} that is
//! a pure function of the normalized parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::vec3::{mat_apply_t, rotation_zyx, Mat3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeCategory {
    Sphere,
    Box3,
    Cylinder,
    Cone,
    Torus,
    Capsule,
    Ellipsoid,
    TeeBlock,
}

impl ShapeCategory {
    pub const ALL: [ShapeCategory; 8] = [
        ShapeCategory::Sphere,
        ShapeCategory::Box3,
        ShapeCategory::Cylinder,
        ShapeCategory::Cone,
        ShapeCategory::Torus,
        ShapeCategory::Capsule,
        ShapeCategory::Ellipsoid,
        ShapeCategory::TeeBlock,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeCategory::Sphere => "sphere",
            ShapeCategory::Box3 => "box",
            ShapeCategory::Cylinder => "cylinder",
            ShapeCategory::Cone => "cone",
            ShapeCategory::Torus => "torus",
            ShapeCategory::Capsule => "capsule",
            ShapeCategory::Ellipsoid => "ellipsoid",
            ShapeCategory::TeeBlock => "tee-block",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

/// Family-specific dimensionless sizes. All lengths are positive and scaled
/// so the bounding radius is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ShapeParams {
    Sphere { r: f64 },
    Box3 { half: [f64; 3] },
    /// Capped cylinder along y: radius `r`, half-height `h`.
    Cylinder { r: f64, h: f64 },
    /// Capped cone along y: base radius `r1` at −h, top radius `r2` at +h.
    Cone { r1: f64, r2: f64, h: f64 },
    /// Ring radius `ring` in the xz-plane, tube radius `tube`.
    Torus { ring: f64, tube: f64 },
    /// Segment ±h along y with radius `r`.
    Capsule { r: f64, h: f64 },
    Ellipsoid { semi: [f64; 3] },
    /// Vertical stem (half-height `stem`) with a horizontal bar of half-width
    /// `bar` and square thickness `t` sitting on top.
    TeeBlock { bar: f64, t: f64, stem: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub category: ShapeCategory,
    pub params: ShapeParams,
    pub subcategory: u32,
    /// Euler angles (radians) applied as an intrinsic Z·Y·X rotation.
    pub rotation: [f64; 3],
    pub seed: u64,
}

impl ShapeSpec {
    /// Deterministically samples an instance of `category` from `seed`.
    pub fn generate(category: ShapeCategory, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = sample_params(category, &mut rng);
        let params = normalize_params(raw);
        let subcategory = subcategory_of(&params);
        let rotation = [
            rng.gen_range(0.0..std::f64::consts::TAU),
            rng.gen_range(0.0..std::f64::consts::TAU),
            rng.gen_range(0.0..std::f64::consts::TAU),
        ];
        Self { category, params, subcategory, rotation, seed }
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        rotation_zyx(self.rotation[0], self.rotation[1], self.rotation[2])
    }
}

fn sample_params(category: ShapeCategory, rng: &mut ChaCha8Rng) -> ShapeParams {
    match category {
        ShapeCategory::Sphere => ShapeParams::Sphere { r: rng.gen_range(0.6..1.0) },
        ShapeCategory::Box3 => ShapeParams::Box3 {
            half: [
                rng.gen_range(0.35..1.0),
                rng.gen_range(0.35..1.0),
                rng.gen_range(0.35..1.0),
            ],
        },
        ShapeCategory::Cylinder => ShapeParams::Cylinder {
            r: rng.gen_range(0.3..0.9),
            h: rng.gen_range(0.4..1.1),
        },
        ShapeCategory::Cone => {
            let r1 = rng.gen_range(0.4..0.9);
            let taper = rng.gen_range(0.0..0.35);
            ShapeParams::Cone { r1, r2: r1 * taper, h: rng.gen_range(0.5..1.1) }
        }
        ShapeCategory::Torus => {
            let ring = rng.gen_range(0.55..0.85);
            ShapeParams::Torus { ring, tube: ring * rng.gen_range(0.15..0.55) }
        }
        ShapeCategory::Capsule => ShapeParams::Capsule {
            r: rng.gen_range(0.25..0.6),
            h: rng.gen_range(0.3..1.0),
        },
        ShapeCategory::Ellipsoid => ShapeParams::Ellipsoid {
            semi: [
                rng.gen_range(0.4..1.0),
                rng.gen_range(0.4..1.0),
                rng.gen_range(0.4..1.0),
            ],
        },
        ShapeCategory::TeeBlock => ShapeParams::TeeBlock {
            bar: rng.gen_range(0.6..1.0),
            t: rng.gen_range(0.12..0.3),
            stem: rng.gen_range(0.4..0.9),
        },
    }
}

/// Exact farthest surface distance from the origin.
pub fn bounding_radius(params: &ShapeParams) -> f64 {
    match params {
        ShapeParams::Sphere { r } => *r,
        ShapeParams::Box3 { half: [a, b, c] } => (a * a + b * b + c * c).sqrt(),
        ShapeParams::Cylinder { r, h } => (r * r + h * h).sqrt(),
        ShapeParams::Cone { r1, r2, h } => {
            let r = r1.max(*r2);
            (r * r + h * h).sqrt()
        }
        ShapeParams::Torus { ring, tube } => ring + tube,
        ShapeParams::Capsule { r, h } => r + h,
        ShapeParams::Ellipsoid { semi } => semi[0].max(semi[1]).max(semi[2]),
        ShapeParams::TeeBlock { bar, t, stem } => {
            // Bar spans y in [stem, stem + 2t]; stem spans [-stem, stem].
            let bar_corner = (bar * bar + (stem + 2.0 * t).powi(2) + t * t).sqrt();
            let stem_corner = (2.0 * t * t + stem * stem).sqrt();
            bar_corner.max(stem_corner)
        }
    }
}

fn scale_params(params: ShapeParams, s: f64) -> ShapeParams {
    match params {
        ShapeParams::Sphere { r } => ShapeParams::Sphere { r: r * s },
        ShapeParams::Box3 { half } => ShapeParams::Box3 { half: half.map(|v| v * s) },
        ShapeParams::Cylinder { r, h } => ShapeParams::Cylinder { r: r * s, h: h * s },
        ShapeParams::Cone { r1, r2, h } => {
            ShapeParams::Cone { r1: r1 * s, r2: r2 * s, h: h * s }
        }
        ShapeParams::Torus { ring, tube } => ShapeParams::Torus { ring: ring * s, tube: tube * s },
        ShapeParams::Capsule { r, h } => ShapeParams::Capsule { r: r * s, h: h * s },
        ShapeParams::Ellipsoid { semi } => ShapeParams::Ellipsoid { semi: semi.map(|v| v * s) },
        ShapeParams::TeeBlock { bar, t, stem } => {
            ShapeParams::TeeBlock { bar: bar * s, t: t * s, stem: stem * s }
        }
    }
}

/// Rescales so the bounding radius is exactly 1.
pub fn normalize_params(params: ShapeParams) -> ShapeParams {
    let r = bounding_radius(&params);
    scale_params(params, 1.0 / r)
}

/// Aspect-ratio bucket in {0, 1, 2}, a pure function of the (normalized)
/// parameters. Spheres are all congruent after normalization, so the family
/// has a single bucket.
pub fn subcategory_of(params: &ShapeParams) -> u32 {
    fn bucket(aspect: f64, lo: f64, hi: f64) -> u32 {
        if aspect < lo {
            0
        } else if aspect < hi {
            1
        } else {
            2
        }
    }
    match params {
        ShapeParams::Sphere { .. } => 0,
        ShapeParams::Box3 { half } | ShapeParams::Ellipsoid { semi: half } => {
            let max = half[0].max(half[1]).max(half[2]);
            let min = half[0].min(half[1]).min(half[2]);
            bucket(max / min, 1.4, 2.0)
        }
        ShapeParams::Cylinder { r, h } => bucket(h / r, 1.0, 2.0),
        ShapeParams::Cone { r1, h, .. } => bucket(h / r1, 1.0, 1.8),
        ShapeParams::Torus { ring, tube } => bucket(tube / ring, 0.25, 0.45),
        ShapeParams::Capsule { r, h } => bucket((h + r) / r, 2.5, 3.5),
        ShapeParams::TeeBlock { bar, stem, .. } => bucket(stem / bar, 0.6, 1.1),
    }
}

/// Signed distance from `point` to the instance surface: negative inside,
/// positive outside. Exact for sphere and box; other families are exact or
/// conservative lower bounds adequate for sphere tracing.
pub fn sdf_eval(spec: &ShapeSpec, point: Vec3) -> f64 {
    let local = mat_apply_t(&spec.rotation_matrix(), point);
    sdf_params(&spec.params, local)
}

pub fn sdf_params(params: &ShapeParams, p: Vec3) -> f64 {
    match params {
        ShapeParams::Sphere { r } => (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - r,
        ShapeParams::Box3 { half } => sd_box(p, *half),
        ShapeParams::Cylinder { r, h } => {
            let dx = (p[0] * p[0] + p[2] * p[2]).sqrt() - r;
            let dy = p[1].abs() - h;
            dx.max(dy).min(0.0) + (dx.max(0.0).powi(2) + dy.max(0.0).powi(2)).sqrt()
        }
        ShapeParams::Cone { r1, r2, h } => sd_capped_cone(p, *h, *r1, *r2),
        ShapeParams::Torus { ring, tube } => {
            let qx = (p[0] * p[0] + p[2] * p[2]).sqrt() - ring;
            (qx * qx + p[1] * p[1]).sqrt() - tube
        }
        ShapeParams::Capsule { r, h } => {
            let py = p[1].clamp(-h, *h);
            let d = [p[0], p[1] - py, p[2]];
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() - r
        }
        ShapeParams::Ellipsoid { semi } => sd_ellipsoid(p, *semi),
        ShapeParams::TeeBlock { bar, t, stem } => {
            let bar_d = sd_box([p[0], p[1] - (stem + t), p[2]], [*bar, *t, *t]);
            let stem_d = sd_box(p, [*t, *stem, *t]);
            bar_d.min(stem_d)
        }
    }
}

fn sd_box(p: Vec3, half: [f64; 3]) -> f64 {
    let q = [p[0].abs() - half[0], p[1].abs() - half[1], p[2].abs() - half[2]];
    let outside = (q[0].max(0.0).powi(2) + q[1].max(0.0).powi(2) + q[2].max(0.0).powi(2)).sqrt();
    outside + q[0].max(q[1]).max(q[2]).min(0.0)
}

fn sd_capped_cone(p: Vec3, h: f64, r1: f64, r2: f64) -> f64 {
    let q = [(p[0] * p[0] + p[2] * p[2]).sqrt(), p[1]];
    let k1 = [r2, h];
    let k2 = [r2 - r1, 2.0 * h];
    let ca = [
        q[0] - q[0].min(if q[1] < 0.0 { r1 } else { r2 }),
        q[1].abs() - h,
    ];
    let t = ((k1[0] - q[0]) * k2[0] + (k1[1] - q[1]) * k2[1]) / (k2[0] * k2[0] + k2[1] * k2[1]);
    let t = t.clamp(0.0, 1.0);
    let cb = [q[0] - k1[0] + k2[0] * t, q[1] - k1[1] + k2[1] * t];
    let s = if cb[0] < 0.0 && ca[1] < 0.0 { -1.0 } else { 1.0 };
    s * (ca[0] * ca[0] + ca[1] * ca[1]).min(cb[0] * cb[0] + cb[1] * cb[1]).sqrt()
}

/// Near-surface distance bound for an axis-aligned ellipsoid, scaled by 0.9
/// so sphere-tracing steps never overshoot. The zero level set is exact.
fn sd_ellipsoid(p: Vec3, semi: [f64; 3]) -> f64 {
    let k0 = ((p[0] / semi[0]).powi(2) + (p[1] / semi[1]).powi(2) + (p[2] / semi[2]).powi(2))
        .sqrt();
    if k0 == 0.0 {
        return -semi[0].min(semi[1]).min(semi[2]);
    }
    let k1 = ((p[0] / (semi[0] * semi[0])).powi(2)
        + (p[1] / (semi[1] * semi[1])).powi(2)
        + (p[2] / (semi[2] * semi[2])).powi(2))
    .sqrt();
    0.9 * k0 * (k0 - 1.0) / k1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unrotated(category: ShapeCategory, params: ShapeParams) -> ShapeSpec {
        let subcategory = subcategory_of(&params);
        ShapeSpec { category, params, subcategory, rotation: [0.0; 3], seed: 0 }
    }

    #[test]
    fn sphere_sdf_is_radial_distance() {
        let s = unrotated(ShapeCategory::Sphere, ShapeParams::Sphere { r: 1.0 });
        assert_eq!(sdf_eval(&s, [0.0, 0.0, 0.0]), -1.0);
        assert_eq!(sdf_eval(&s, [2.0, 0.0, 0.0]), 1.0);
        assert!(sdf_eval(&s, [1.0, 0.0, 0.0]).abs() < 1e-12);
    }

    #[test]
    fn box_sdf_face_distance() {
        let s = unrotated(ShapeCategory::Box3, ShapeParams::Box3 { half: [1.0, 1.0, 1.0] });
        assert!((sdf_eval(&s, [1.5, 0.0, 0.0]) - 0.5).abs() < 1e-12);
        // Corner distance: point (2,2,2) is sqrt(3) past the (1,1,1) corner.
        assert!((sdf_eval(&s, [2.0, 2.0, 2.0]) - 3f64.sqrt()).abs() < 1e-12);
        // Inside: nearest face is 0.6 away.
        assert!((sdf_eval(&s, [0.4, 0.0, 0.0]) - -0.6).abs() < 1e-12);
    }

    #[test]
    fn generated_instances_have_unit_bounding_radius() {
        for category in ShapeCategory::ALL {
            for seed in 0..24 {
                let spec = ShapeSpec::generate(category, seed * 7919 + 13);
                let r = bounding_radius(&spec.params);
                assert!(
                    (r - 1.0).abs() < 1e-12,
                    "{:?} seed {seed}: bounding radius {r}",
                    category
                );
                assert!(spec.subcategory <= 2);
                assert_eq!(spec.subcategory, subcategory_of(&spec.params));
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = ShapeSpec::generate(ShapeCategory::Cone, 42);
        let b = ShapeSpec::generate(ShapeCategory::Cone, 42);
        assert_eq!(a, b);
        let c = ShapeSpec::generate(ShapeCategory::Cone, 43);
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn surface_points_sit_near_zero_level() {
        // March the +x axis to the surface for every family; the bounding
        // radius point along the farthest direction must read ~0 for shapes
        // whose farthest point lies on +x before rotation is applied.
        let sphere = unrotated(ShapeCategory::Sphere, ShapeParams::Sphere { r: 1.0 });
        assert!(sdf_eval(&sphere, [1.0, 0.0, 0.0]).abs() < 1e-9);
        let torus = unrotated(
            ShapeCategory::Torus,
            normalize_params(ShapeParams::Torus { ring: 0.7, tube: 0.2 }),
        );
        assert!(sdf_eval(&torus, [1.0, 0.0, 0.0]).abs() < 1e-9);
        let capsule = unrotated(
            ShapeCategory::Capsule,
            normalize_params(ShapeParams::Capsule { r: 0.4, h: 0.8 }),
        );
        assert!(sdf_eval(&capsule, [0.0, 1.0, 0.0]).abs() < 1e-9);
    }

    #[test]
    fn sdf_sign_separates_inside_and_outside() {
        for category in ShapeCategory::ALL {
            let spec = ShapeSpec::generate(category, 99);
            // Well outside the unit bounding sphere.
            assert!(sdf_eval(&spec, [2.0, 1.0, -1.5]) > 0.0, "{category:?} outside");
            // Every family's thinnest feature is wider than this grid pitch,
            // so an interior sample must exist inside the unit ball.
            let mut found = false;
            let steps = 26;
            'scan: for ix in 0..steps {
                for iy in 0..steps {
                    for iz in 0..steps {
                        let p = [
                            -1.0 + 2.0 * ix as f64 / (steps - 1) as f64,
                            -1.0 + 2.0 * iy as f64 / (steps - 1) as f64,
                            -1.0 + 2.0 * iz as f64 / (steps - 1) as f64,
                        ];
                        if sdf_eval(&spec, p) < 0.0 {
                            found = true;
                            break 'scan;
                        }
                    }
                }
            }
            assert!(found, "{category:?}: no interior grid point found");
        }
    }

    #[test]
    fn ellipsoid_zero_level_is_exact() {
        let e = ShapeParams::Ellipsoid { semi: [1.0, 0.5, 0.7] };
        assert!(sdf_params(&e, [1.0, 0.0, 0.0]).abs() < 1e-12);
        assert!(sdf_params(&e, [0.0, 0.5, 0.0]).abs() < 1e-12);
        assert!(sdf_params(&e, [0.0, 0.0, 0.0]) < 0.0);
        assert!(sdf_params(&e, [1.5, 0.0, 0.0]) > 0.0);
    }

    #[test]
    fn tee_block_contains_bar_and_stem() {
        let p = ShapeParams::TeeBlock { bar: 0.8, t: 0.2, stem: 0.6 };
        // Stem interior near origin, bar interior above the stem top.
        assert!(sdf_params(&p, [0.0, 0.0, 0.0]) < 0.0);
        assert!(sdf_params(&p, [0.6, 0.8, 0.0]) < 0.0);
        // Beside the stem below the bar: outside.
        assert!(sdf_params(&p, [0.6, 0.0, 0.0]) > 0.0);
    }
}
