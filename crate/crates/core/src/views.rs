//! Candidate-view sampling and entropy-guided view selection.
//!
//! Each candidate frame is scored by the Shannon entropy of its alpha
//! channel, treating normalized per-pixel opacity as a probability mass.

use std::collections::HashSet;

use nalgebra::{Rotation3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::ImageRGBA;
use crate::raster::{render, Camera, RenderError, RenderOptions};
use crate::splat::{compose_scenes, BasicScene, BoundingSphere, EditMap};

/// Number of views in the reference multi-view capture (a frequency-3 icosphere).
pub const REFERENCE_VIEW_COUNT: usize = 92;
/// Default number of top-entropy frames kept per component.
pub const DEFAULT_TOP_K: usize = 5;
/// Background used for frames handed to embedding providers.
pub const NEUTRAL_GRAY: [f64; 3] = [0.5; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ViewError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Render(#[from] RenderError),
}

/// Field of view and resolution used for candidate views.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewRig {
    pub fov_y: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for ViewRig {
    fn default() -> Self {
        Self {
            fov_y: 40f64.to_radians(),
            width: 256,
            height: 256,
        }
    }
}

impl ViewRig {
    /// Camera distance at which a sphere of `radius` fits the vertical field of view.
    pub fn framing_distance(&self, radius: f64) -> f64 {
        let r = radius.max(1e-3);
        1.15 * r / (self.fov_y / 2.0).sin()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewSample {
    pub camera: Camera,
    pub frame: ImageRGBA,
    /// Nats.
    pub entropy: f64,
    pub frame_index: usize,
}

/// Unit directions, ordered deterministically.
///
/// Counts of the form `10n² + 2` are vertices of a frequency-`n` geodesic
/// icosphere (92 for `n = 3`); other counts use a spherical Fibonacci
/// lattice. The first direction is always `+z`.
pub fn sample_sphere_directions(count: usize) -> Result<Vec<Vector3<f64>>, ViewError> {
    if count < 1 {
        return Err(ViewError::Argument("view count must be at least 1".into()));
    }
    if count == 1 {
        return Ok(vec![Vector3::z()]);
    }
    let freq = (((count - 2) / 10) as f64).sqrt().round() as usize;
    if freq >= 1 && 10 * freq * freq + 2 == count {
        Ok(icosphere(freq))
    } else {
        Ok(fibonacci_sphere(count))
    }
}

fn icosahedron() -> (Vec<Vector3<f64>>, [[usize; 3]; 20]) {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let faces = [
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    // put vertex 5 on the +z pole
    let pole = Vector3::from(raw[5]).normalize();
    let align = Rotation3::rotation_between(&pole, &Vector3::z()).expect("not antiparallel");
    let mut verts: Vec<_> = raw
        .iter()
        .map(|v| align * Vector3::from(*v).normalize())
        .collect();
    verts[5] = Vector3::z();
    (verts, faces)
}

fn icosphere(freq: usize) -> Vec<Vector3<f64>> {
    let (verts, faces) = icosahedron();
    let key = |v: &Vector3<f64>| v.map(|c| (c * 1e9).round() as i64);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for f in faces {
        let (a, b, c) = (verts[f[0]], verts[f[1]], verts[f[2]]);
        for i in 0..=freq {
            for j in 0..=freq - i {
                let p = (a + (b - a) * (i as f64 / freq as f64) + (c - a) * (j as f64 / freq as f64))
                    .normalize();
                if seen.insert(key(&p)) {
                    out.push(p);
                }
            }
        }
    }
    sort_directions(&mut out);
    out
}

fn fibonacci_sphere(count: usize) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * i as f64 / (count - 1) as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let theta = golden * i as f64;
            Vector3::new(r * theta.cos(), r * theta.sin(), z)
        })
        .collect()
}

fn sort_directions(dirs: &mut [Vector3<f64>]) {
    let q = |v: f64| (v * 1e9).round() as i64;
    dirs.sort_by_key(|d| (-q(d.z), q(d.y.atan2(d.x))));
}

/// Cameras on a sphere of `radius` around `center`, all looking at `center`.
pub fn sample_icosphere_cameras(
    count: usize,
    center: [f64; 3],
    radius: f64,
    rig: &ViewRig,
) -> Result<Vec<Camera>, ViewError> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(ViewError::Argument(format!("radius {radius} must be positive")));
    }
    let c = Vector3::from(center);
    Ok(sample_sphere_directions(count)?
        .into_iter()
        .map(|d| Camera::look_at((c + d * radius).into(), center, rig.fov_y, rig.width, rig.height))
        .collect())
}

/// Cameras framing a bounding sphere.
pub fn cameras_around(
    sphere: &BoundingSphere,
    count: usize,
    rig: &ViewRig,
) -> Result<Vec<Camera>, ViewError> {
    sample_icosphere_cameras(count, sphere.center, rig.framing_distance(sphere.radius), rig)
}

/// `H = −Σ pᵢ ln pᵢ` with `pᵢ = αᵢ / Σα`. A fully transparent frame has `H = 0`.
pub fn image_alpha_entropy(frame: &ImageRGBA) -> f64 {
    alpha_entropy(frame.alpha())
}

pub fn alpha_entropy(alpha: impl Iterator<Item = f32> + Clone) -> f64 {
    let total: f64 = alpha.clone().map(|a| a.max(0.0) as f64).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let h: f64 = alpha
        .filter(|&a| a > 0.0)
        .map(|a| {
            let p = a as f64 / total;
            -p * p.ln()
        })
        .sum();
    h.max(0.0)
}

/// Indices of the `k` highest entropies, descending, ties by index.
pub fn rank_by_entropy(entropies: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..entropies.len()).collect();
    order.sort_by(|&a, &b| entropies[b].total_cmp(&entropies[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Render `component` alone at every camera and keep the `k` frames with the
/// highest alpha entropy.
pub fn select_top_k_views(
    component: &BasicScene,
    cameras: &[Camera],
    k: usize,
) -> Result<Vec<ViewSample>, ViewError> {
    if k < 1 {
        return Err(ViewError::Argument("k must be at least 1".into()));
    }
    if cameras.is_empty() {
        return Err(ViewError::Argument("no candidate cameras".into()));
    }
    let scene = compose_scenes(std::slice::from_ref(component)).expect("single component");
    let options = RenderOptions {
        background: Some(NEUTRAL_GRAY),
        parallel: false,
        ..Default::default()
    };
    let edits = EditMap::new();
    let frames = cameras
        .par_iter()
        .map(|cam| render(&scene, &edits, cam, &options).map(|r| r.image))
        .collect::<Result<Vec<_>, _>>()?;
    let entropies: Vec<f64> = frames.iter().map(image_alpha_entropy).collect();
    let mut frames: Vec<Option<ImageRGBA>> = frames.into_iter().map(Some).collect();
    Ok(rank_by_entropy(&entropies, k)
        .into_iter()
        .map(|i| ViewSample {
            camera: cameras[i],
            frame: frames[i].take().expect("indices unique"),
            entropy: entropies[i],
            frame_index: i,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::GaussianPrimitive;

    fn frame_with_alpha(alpha: &[f32]) -> ImageRGBA {
        ImageRGBA::from_pixels(alpha.len() as u32, 1, alpha.iter().map(|&a| [0.0, 0.0, 0.0, a]).collect())
            .unwrap()
    }

    #[test]
    fn icosphere_counts() {
        assert_eq!(sample_sphere_directions(12).unwrap().len(), 12);
        assert_eq!(sample_sphere_directions(42).unwrap().len(), 42);
        assert_eq!(sample_sphere_directions(92).unwrap().len(), 92);
        assert_eq!(sample_sphere_directions(50).unwrap().len(), 50);
        assert!(sample_sphere_directions(0).is_err());
    }

    #[test]
    fn single_camera_sits_on_the_pole() {
        let cams = sample_icosphere_cameras(1, [1.0, 2.0, 3.0], 4.0, &ViewRig::default()).unwrap();
        assert_eq!(cams.len(), 1);
        assert_eq!(cams[0].position, [1.0, 2.0, 7.0]);
        assert_eq!(cams[0].target, [1.0, 2.0, 3.0]);
    }

    #[test]
    fn ninety_two_distinct_views_on_the_sphere() {
        let center = [0.5, -1.0, 2.0];
        let cams = sample_icosphere_cameras(92, center, 3.0, &ViewRig::default()).unwrap();
        assert_eq!(cams.len(), 92);
        let c = Vector3::from(center);
        let dirs: Vec<_> = cams
            .iter()
            .map(|cam| {
                let d = cam.position_vec() - c;
                assert!((d.norm() - 3.0).abs() < 1e-9);
                assert!(cam.validate().is_ok());
                d.normalize()
            })
            .collect();
        let mut min_angle = f64::MAX;
        for i in 0..dirs.len() {
            for j in i + 1..dirs.len() {
                min_angle = min_angle.min(dirs[i].angle(&dirs[j]));
            }
        }
        // frequency-3 geodesic spacing is roughly 20°
        assert!(min_angle > 0.2, "min angle {min_angle}");
        assert_eq!(dirs[0], Vector3::z());
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_sphere_directions(92).unwrap();
        let b = sample_sphere_directions(92).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn entropy_examples() {
        let n = 37;
        let h = image_alpha_entropy(&frame_with_alpha(&vec![0.3; n]));
        assert!((h - (n as f64).ln()).abs() < 1e-9);
        let mut point = vec![0.0; n];
        point[5] = 0.7;
        assert_eq!(image_alpha_entropy(&frame_with_alpha(&point)), 0.0);
        assert_eq!(image_alpha_entropy(&frame_with_alpha(&[0.0; 4])), 0.0);
        // direct Shannon sum for p = (0.25, 0.75)
        let expected = -(0.25f64 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
        let h = image_alpha_entropy(&frame_with_alpha(&[0.2, 0.6]));
        assert!((h - expected).abs() < 1e-7);
        assert!((h - 0.5623).abs() < 1e-4);
    }

    #[test]
    fn ranking_breaks_ties_by_index() {
        assert_eq!(rank_by_entropy(&[1.0, 3.0, 3.0, 2.0], 3), vec![1, 2, 3]);
        assert_eq!(rank_by_entropy(&[1.0], 5), vec![0]);
    }

    #[test]
    fn top_k_rejects_bad_arguments() {
        let comp = BasicScene::new(
            "c",
            "c",
            [0.5; 3],
            vec![GaussianPrimitive::isotropic([0.0; 3], 0.3, 0.9, [0.0, 0.0, 1.0])],
        )
        .unwrap();
        assert!(select_top_k_views(&comp, &[], 1).is_err());
        let cams = cameras_around(&comp.bounding_sphere, 4, &ViewRig::default()).unwrap();
        assert!(select_top_k_views(&comp, &cams, 0).is_err());
        let all = select_top_k_views(&comp, &cams, 10).unwrap();
        assert_eq!(all.len(), 4);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn entropy_bounds_and_scale_invariance(alpha in prop::collection::vec(0.0f32..=0.5, 1..200)) {
                let f = frame_with_alpha(&alpha);
                let h = image_alpha_entropy(&f);
                prop_assert!(h >= 0.0);
                prop_assert!(h <= (alpha.len() as f64).ln() + 1e-9);
                for s in [0.5f32, 2.0] {
                    let scaled: Vec<f32> = alpha.iter().map(|a| a * s).collect();
                    let hs = image_alpha_entropy(&frame_with_alpha(&scaled));
                    prop_assert!((hs - h).abs() < 1e-6);
                }
            }
        }
    }
}
