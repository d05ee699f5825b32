use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::frame::ImageRGBA;
use crate::raster::{render, RenderOptions, DEFAULT_RESOLUTION};
use crate::splat::{compose_scenes, BasicScene, ComponentId, GaussianPrimitive, LightState};

use super::bundle::{default_camera, BundleDefaults, KnowledgeEntry, SceneBundle};
use super::BundleError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    SphereShell { center: [f64; 3], radius: f64 },
    Box { center: [f64; 3], half_extents: [f64; 3] },
    /// Ring around the y axis.
    Torus { center: [f64; 3], major_radius: f64, minor_radius: f64 },
}

impl Shape {
    pub fn area(&self) -> f64 {
        match *self {
            Shape::SphereShell { radius, .. } => 4.0 * PI * radius * radius,
            Shape::Box { half_extents: [a, b, c], .. } => 8.0 * (a * b + b * c + c * a),
            Shape::Torus {
                major_radius,
                minor_radius,
                ..
            } => 4.0 * PI * PI * major_radius * minor_radius,
        }
    }

    fn check(&self) -> Result<(), String> {
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(format!("{name} must be positive, got {x}"))
            }
        };
        match *self {
            Shape::SphereShell { radius, .. } => positive("radius", radius),
            Shape::Box { half_extents, .. } => half_extents.iter().try_for_each(|&h| positive("half extent", h)),
            Shape::Torus {
                major_radius,
                minor_radius,
                ..
            } => {
                positive("major_radius", major_radius)?;
                positive("minor_radius", minor_radius)?;
                if minor_radius >= major_radius {
                    return Err("minor_radius must be below major_radius".into());
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShadingSpec {
    pub k_ambient: f32,
    pub k_diffuse: f32,
    pub k_specular: f32,
    pub shininess: f32,
}

impl Default for ShadingSpec {
    fn default() -> Self {
        Self {
            k_ambient: 0.35,
            k_diffuse: 0.65,
            k_specular: 0.25,
            shininess: 24.0,
        }
    }
}

fn default_opacity() -> f32 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub id: ComponentId,
    pub label: String,
    pub palette_color: [f64; 3],
    /// Number of primitives to sample.
    pub budget: usize,
    #[serde(flatten)]
    pub shape: Shape,
    #[serde(default = "default_opacity")]
    pub opacity: f32,
    #[serde(default)]
    pub shading: ShadingSpec,
}

fn default_resolution() -> u32 {
    DEFAULT_RESOLUTION
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub scene_id: String,
    pub shapes: Vec<ShapeSpec>,
    #[serde(default)]
    pub knowledge: Vec<KnowledgeEntry>,
    #[serde(default = "default_resolution")]
    pub resolution: u32,
    #[serde(default)]
    pub background: [f64; 3],
    #[serde(default)]
    pub light: LightState,
    /// Render and store the initial frame.
    #[serde(default = "yes")]
    pub golden: bool,
}

fn unit_sphere(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Points on the surface with their outward unit normals, uniform by area.
pub fn sample_shape(shape: &Shape, count: usize, rng: &mut ChaCha8Rng) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    (0..count)
        .map(|_| match *shape {
            Shape::SphereShell { center, radius } => {
                let n = unit_sphere(rng);
                (Vector3::from(center) + n * radius, n)
            }
            Shape::Box { center, half_extents: h } => {
                let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
                let total: f64 = areas.iter().sum();
                let mut pick = rng.random_range(0.0..total);
                let mut axis = 2;
                for (i, a) in areas.iter().enumerate() {
                    if pick < *a {
                        axis = i;
                        break;
                    }
                    pick -= a;
                }
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let mut local = Vector3::zeros();
                for k in 0..3 {
                    local[k] = if k == axis {
                        sign * h[k]
                    } else {
                        rng.random_range(-h[k]..h[k])
                    };
                }
                let mut n = Vector3::zeros();
                n[axis] = sign;
                (Vector3::from(center) + local, n)
            }
            Shape::Torus {
                center,
                major_radius: big,
                minor_radius: small,
            } => loop {
                let u = rng.random_range(0.0..2.0 * PI);
                let v = rng.random_range(0.0..2.0 * PI);
                // area element is proportional to R + r cos v
                if rng.random_range(0.0..big + small) > big + small * v.cos() {
                    continue;
                }
                let n = Vector3::new(v.cos() * u.cos(), v.sin(), v.cos() * u.sin());
                let ring = Vector3::new(big * u.cos(), 0.0, big * u.sin());
                break (Vector3::from(center) + ring + n * small, n);
            },
        })
        .collect()
}

fn f32x3(v: Vector3<f64>) -> [f32; 3] {
    [v.x as f32, v.y as f32, v.z as f32]
}

fn unit_f32(n: Vector3<f64>) -> [f32; 3] {
    let mut out = f32x3(n);
    // re-normalize at f32 precision
    let len = out.iter().map(|c| c * c).sum::<f32>().sqrt();
    out.iter_mut().for_each(|c| *c /= len);
    out
}

/// Sample every shape into a component and assemble a bundle. The output
/// is a pure function of `(spec, seed)`.
pub fn generate_synthetic_scene(spec: &SynthSpec, seed: u64) -> Result<SceneBundle, BundleError> {
    if spec.shapes.is_empty() {
        return Err(BundleError::Argument("spec lists no shapes".into()));
    }
    if spec.resolution == 0 {
        return Err(BundleError::Argument("resolution must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut components = Vec::with_capacity(spec.shapes.len());
    for s in &spec.shapes {
        if s.budget == 0 {
            return Err(BundleError::Argument(format!("shape {} has a zero primitive budget", s.id)));
        }
        s.shape
            .check()
            .map_err(|e| BundleError::Argument(format!("shape {}: {e}", s.id)))?;
        let spacing = (s.shape.area() / s.budget as f64).sqrt();
        let radius = (0.6 * spacing) as f32;
        let primitives = sample_shape(&s.shape, s.budget, &mut rng)
            .into_iter()
            .map(|(p, n)| GaussianPrimitive {
                mean: f32x3(p),
                scale: [radius; 3],
                rotation: [1.0, 0.0, 0.0, 0.0],
                opacity: s.opacity,
                normal: unit_f32(n),
                offset_color: [0.0; 3],
                k_ambient: s.shading.k_ambient,
                k_diffuse: s.shading.k_diffuse,
                k_specular: s.shading.k_specular,
                shininess: s.shading.shininess,
            })
            .collect();
        components.push(BasicScene::new(s.id.clone(), s.label.clone(), s.palette_color, primitives)?);
    }
    let scene = compose_scenes(&components)?;
    let defaults = BundleDefaults {
        camera: default_camera(&scene.bounding_sphere(), spec.resolution),
        light: spec.light,
        background: spec.background,
        render_mode: Default::default(),
        edits: Default::default(),
    };
    let mut bundle = SceneBundle::new(spec.scene_id.clone(), components, defaults)?;
    bundle.knowledge = spec.knowledge.clone();
    if spec.golden {
        let frame = render(
            &bundle.scene,
            &bundle.defaults.edits,
            &bundle.defaults.camera,
            &RenderOptions::default(),
        )?
        .image;
        // stored at PNG precision so that save/load is lossless
        bundle.golden = Some(ImageRGBA::from_rgba8(&frame.to_rgba8()));
    }
    Ok(bundle)
}
