//! Splat rasterizer: perspective projection of editable Gaussians, Blinn-Phong
//! shading, global depth sort and front-to-back alpha compositing.
//!
//! Rasterization is bounded per primitive but lossless: each splat's
//! rectangle covers every pixel where its alpha can reach the `1/255` floor,
//! so results match an unculled per-pixel blend.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::ImageRGBA;
use crate::splat::{
    covariance_from_scale_rotation, effective_params, vec3, BasicScene, ComponentEdit,
    ComponentId, ComposedScene, EditMap, GaussianPrimitive, LightMode, LightState, ShadingCoeffs,
};

/// Primitives at or closer than this view-space depth are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Isotropic pixel-space low-pass added to every projected covariance.
pub const COVARIANCE_DILATION: f64 = 0.3;
pub const MAX_ALPHA: f64 = 0.99;
pub const MIN_ALPHA: f64 = 1.0 / 255.0;
/// Compositing stops once transmittance drops below this.
pub const TRANSMITTANCE_EPSILON: f64 = 1e-4;
pub const SINGULAR_DETERMINANT: f64 = 1e-12;
pub const DEFAULT_RESOLUTION: u32 = 800;

const BAND_ROWS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("scene has no components")]
    EmptyScene,
}

/// Pinhole camera. Pixel `(x, y)` has its center at `(x + 0.5, y + 0.5)`,
/// with y growing downward and the principal point at the image center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: [f64; 3],
    pub target: [f64; 3],
    pub up: [f64; 3],
    pub fov_y: f64,
    pub width: u32,
    pub height: u32,
}

/// Orthonormal camera frame; rows of the viewing transform.
#[derive(Debug, Clone, Copy)]
pub struct ViewBasis {
    pub right: Vector3<f64>,
    pub down: Vector3<f64>,
    pub forward: Vector3<f64>,
}

impl ViewBasis {
    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_rows(&[
            self.right.transpose(),
            self.down.transpose(),
            self.forward.transpose(),
        ])
    }
}

/// Up vector for a camera looking along `dir`: +y, or +z when nearly vertical.
pub fn default_up(dir: Vector3<f64>) -> Vector3<f64> {
    let d = dir.normalize();
    if d.y.abs() > 0.999 {
        Vector3::z()
    } else {
        Vector3::y()
    }
}

impl Camera {
    pub fn look_at(position: [f64; 3], target: [f64; 3], fov_y: f64, width: u32, height: u32) -> Self {
        let dir = Vector3::from(target) - Vector3::from(position);
        Self {
            position,
            target,
            up: default_up(dir).into(),
            fov_y,
            width,
            height,
        }
    }

    /// Camera on a sphere around `target`; polar angle is measured from +y
    /// and azimuth 0 sits on +z.
    pub fn orbit(
        target: [f64; 3],
        azimuth: f64,
        polar: f64,
        distance: f64,
        fov_y: f64,
        width: u32,
        height: u32,
    ) -> Self {
        let offset = Vector3::new(
            polar.sin() * azimuth.sin(),
            polar.cos(),
            polar.sin() * azimuth.cos(),
        ) * distance;
        let position = Vector3::from(target) + offset;
        Self::look_at(position.into(), target, fov_y, width, height)
    }

    pub fn with_resolution(mut self, width: u32, height: u32) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    pub fn position_vec(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        let fields = self
            .position
            .iter()
            .chain(&self.target)
            .chain(&self.up)
            .chain(std::iter::once(&self.fov_y));
        if fields.clone().any(|v| !v.is_finite()) {
            return Err(RenderError::InvalidCamera("non-finite parameter".into()));
        }
        if !(self.fov_y > 0.0 && self.fov_y < std::f64::consts::PI) {
            return Err(RenderError::InvalidCamera(format!("fov_y {} outside (0, pi)", self.fov_y)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(RenderError::InvalidCamera("zero-sized image".into()));
        }
        let forward = Vector3::from(self.target) - self.position_vec();
        if forward.norm() <= 0.0 {
            return Err(RenderError::InvalidCamera("position equals target".into()));
        }
        if forward.normalize().cross(&Vector3::from(self.up)).norm() < 1e-9 {
            return Err(RenderError::InvalidCamera("up is parallel to the view direction".into()));
        }
        Ok(())
    }

    pub fn basis(&self) -> ViewBasis {
        let forward = (Vector3::from(self.target) - self.position_vec()).normalize();
        let right = forward.cross(&Vector3::from(self.up)).normalize();
        let down = forward.cross(&right);
        ViewBasis {
            right,
            down,
            forward,
        }
    }

    /// Focal length in pixels (square pixels).
    pub fn focal(&self) -> f64 {
        self.height as f64 / (2.0 * (self.fov_y / 2.0).tan())
    }

    pub fn principal_point(&self) -> [f64; 2] {
        [self.width as f64 / 2.0, self.height as f64 / 2.0]
    }

    /// Pixel coordinates of a world point, or `None` behind the near plane.
    pub fn project_point(&self, p: Vector3<f64>) -> Option<[f64; 2]> {
        let t = self.basis().rotation() * (p - self.position_vec());
        if t.z <= NEAR_PLANE {
            return None;
        }
        let f = self.focal();
        let [cx, cy] = self.principal_point();
        Some([f * t.x / t.z + cx, f * t.y / t.z + cy])
    }
}

/// A Gaussian projected to the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedGaussian {
    pub mean_px: [f64; 2],
    /// `J W Σ Wᵀ Jᵀ` plus the low-pass dilation.
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
}

/// Project one primitive through `camera`. Returns `None` for primitives at
/// or behind the near plane, or with an unusable covariance.
pub fn project_gaussian(primitive: &GaussianPrimitive, camera: &Camera) -> Option<ProjectedGaussian> {
    project_with_basis(primitive, camera, &camera.basis().rotation())
}

fn project_with_basis(
    primitive: &GaussianPrimitive,
    camera: &Camera,
    view: &Matrix3<f64>,
) -> Option<ProjectedGaussian> {
    let t = view * (primitive.mean_vec() - camera.position_vec());
    if !(t.z > NEAR_PLANE) {
        return None;
    }
    let sigma = covariance_from_scale_rotation(vec3(primitive.scale), primitive.rotation_quat()).ok()?;
    let f = camera.focal();
    let [cx, cy] = camera.principal_point();
    let z2 = t.z * t.z;
    let jacobian = Matrix2x3::new(
        f / t.z,
        0.0,
        -f * t.x / z2,
        0.0,
        f / t.z,
        -f * t.y / z2,
    );
    let jw = jacobian * view;
    let cov = jw * sigma * jw.transpose();
    let cov = (cov + cov.transpose()) * 0.5 + Matrix2::identity() * COVARIANCE_DILATION;
    Some(ProjectedGaussian {
        mean_px: [f * t.x / t.z + cx, f * t.y / t.z + cy],
        cov2d: cov,
        depth: t.z,
    })
}

/// Where a splat came from: `(component, index within component)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PrimitiveRef {
    pub component: ComponentId,
    pub index: usize,
}

/// A shaded, projected splat ready for compositing.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    pub mean_px: [f64; 2],
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
    pub color: [f64; 3],
    pub alpha_base: f64,
    pub primitive_ref: PrimitiveRef,
}

/// Unit direction from a surface toward the light.
pub fn light_direction(light: &LightState, camera: &Camera) -> Vector3<f64> {
    let (sp, cp) = light.polar.sin_cos();
    let (sa, ca) = light.azimuth.sin_cos();
    match light.mode {
        LightMode::Headlight => {
            let b = camera.basis();
            (-b.forward * cp + (b.right * ca - b.down * sa) * sp).normalize()
        }
        LightMode::Orbital => Vector3::new(sp * ca, cp, sp * sa).normalize(),
    }
}

/// `clamp(base ⊙ (k_a + k_d·max(0,n·l)·L) + k_s·max(0,n·h)^β·L, 0, 1)`.
///
/// `0^0` is taken as 1, so a zero shininess yields a full specular term.
pub fn blinn_phong(
    base: [f64; 3],
    coeffs: &ShadingCoeffs,
    normal: Vector3<f64>,
    light_dir: Vector3<f64>,
    view_dir: Vector3<f64>,
    magnitude: f64,
) -> [f64; 3] {
    let diffuse = coeffs.diffuse * normal.dot(&light_dir).max(0.0) * magnitude;
    let half = light_dir + view_dir;
    let n_h = if half.norm() > 0.0 {
        normal.dot(&half.normalize()).max(0.0)
    } else {
        0.0
    };
    let specular = coeffs.specular * n_h.powf(coeffs.shininess) * magnitude;
    base.map(|c| (c * (coeffs.ambient + diffuse) + specular).clamp(0.0, 1.0))
}

/// Shade a primitive at `position` seen from `camera` under the global light.
pub fn shade_primitive(
    base_color: [f64; 3],
    coeffs: &ShadingCoeffs,
    normal: Vector3<f64>,
    light: &LightState,
    camera: &Camera,
    position: Vector3<f64>,
) -> [f64; 3] {
    let l = light_direction(light, camera);
    shade_with_light_dir(base_color, coeffs, normal, l, light.magnitude, camera, position)
}

fn shade_with_light_dir(
    base_color: [f64; 3],
    coeffs: &ShadingCoeffs,
    normal: Vector3<f64>,
    l: Vector3<f64>,
    magnitude: f64,
    camera: &Camera,
    position: Vector3<f64>,
) -> [f64; 3] {
    let to_eye = camera.position_vec() - position;
    let v = if to_eye.norm() > 0.0 {
        to_eye.normalize()
    } else {
        -camera.basis().forward
    };
    blinn_phong(base_color, coeffs, normal, l, v, magnitude)
}

/// Front-to-back blend of `(color, alpha)` layers:
/// `rgb = Σ cᵢαᵢ∏ⱼ<ᵢ(1−αⱼ)`, `alpha = 1 − ∏(1−αᵢ)`, stopping once
/// transmittance falls below [`TRANSMITTANCE_EPSILON`].
pub fn composite_pixel(contributions: &[([f64; 3], f64)]) -> ([f64; 3], f64) {
    let mut rgb = [0.0; 3];
    let mut transmittance = 1.0;
    for &(c, a) in contributions {
        for k in 0..3 {
            rgb[k] += c[k] * a * transmittance;
        }
        transmittance *= 1.0 - a;
        if transmittance < TRANSMITTANCE_EPSILON {
            break;
        }
    }
    (rgb, 1.0 - transmittance)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    #[default]
    Shaded,
    /// Base color only, no lighting.
    Unlit,
    /// Coverage (alpha) mapped to a blue-green-red ramp.
    AlphaHeatmap,
}

impl RenderMode {
    pub const ALL: [RenderMode; 3] = [RenderMode::Shaded, RenderMode::Unlit, RenderMode::AlphaHeatmap];

    pub fn name(self) -> &'static str {
        match self {
            RenderMode::Shaded => "shaded",
            RenderMode::Unlit => "unlit",
            RenderMode::AlphaHeatmap => "alpha_heatmap",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions {
    /// Overrides the scene background.
    pub background: Option<[f64; 3]>,
    /// Overrides the scene's global light.
    pub light: Option<LightState>,
    pub mode: RenderMode,
    /// Rasterize row bands on the rayon pool. Output is identical either way.
    pub parallel: bool,
    pub collect_stats: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            background: None,
            light: None,
            mode: RenderMode::Shaded,
            parallel: true,
            collect_stats: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RenderStats {
    pub primitives: usize,
    pub culled: usize,
    pub transparent: usize,
    pub singular: usize,
    pub drawn: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub image: ImageRGBA,
    pub stats: Option<RenderStats>,
}

/// A primitive with its component edit already applied.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatPrimitive {
    pub key: PrimitiveRef,
    pub primitive: GaussianPrimitive,
    pub base_color: [f64; 3],
    pub opacity: f64,
    pub coeffs: ShadingCoeffs,
}

/// Concatenate component primitive sets, applying each component's edit.
pub fn flatten_components(components: &[BasicScene], edits: &EditMap) -> Vec<FlatPrimitive> {
    let identity = ComponentEdit::default();
    let mut out = Vec::with_capacity(components.iter().map(|c| c.primitives.len()).sum());
    for comp in components {
        let edit = edits.get(&comp.id).unwrap_or(&identity);
        for (index, p) in comp.primitives.iter().enumerate() {
            let e = effective_params(p, comp.palette_color, edit);
            out.push(FlatPrimitive {
                key: PrimitiveRef {
                    component: comp.id.clone(),
                    index,
                },
                primitive: *p,
                base_color: e.base_color,
                opacity: e.opacity,
                coeffs: e.coeffs,
            });
        }
    }
    out
}

pub fn render(
    scene: &ComposedScene,
    edits: &EditMap,
    camera: &Camera,
    options: &RenderOptions,
) -> Result<Rendered, RenderError> {
    if scene.components.is_empty() {
        return Err(RenderError::EmptyScene);
    }
    let flat = flatten_components(&scene.components, edits);
    let light = options.light.unwrap_or(scene.global_light);
    let background = options.background.unwrap_or(scene.background);
    render_flat(&flat, camera, &light, background, options)
}

struct PreparedSplat {
    center: [f64; 2],
    conic: [f64; 3],
    color: [f64; 3],
    opacity: f64,
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

/// Project, shade and sort splats for one camera. Sorted by depth, then
/// `(component, index)`.
pub fn prepare_splats(
    primitives: &[FlatPrimitive],
    camera: &Camera,
    light: &LightState,
    mode: RenderMode,
    stats: &mut RenderStats,
) -> Vec<Splat2D> {
    let view = camera.basis().rotation();
    let l = light_direction(light, camera);
    stats.primitives += primitives.len();
    let mut splats: Vec<Splat2D> = primitives
        .iter()
        .filter_map(|fp| {
            if fp.opacity < MIN_ALPHA {
                stats.transparent += 1;
                return None;
            }
            let Some(proj) = project_with_basis(&fp.primitive, camera, &view) else {
                stats.culled += 1;
                return None;
            };
            let color = match mode {
                RenderMode::Unlit => fp.base_color,
                _ => shade_with_light_dir(
                    fp.base_color,
                    &fp.coeffs,
                    fp.primitive.normal_vec(),
                    l,
                    light.magnitude,
                    camera,
                    fp.primitive.mean_vec(),
                ),
            };
            Some(Splat2D {
                mean_px: proj.mean_px,
                cov2d: proj.cov2d,
                depth: proj.depth,
                color,
                alpha_base: fp.opacity,
                primitive_ref: fp.key.clone(),
            })
        })
        .collect();
    splats.sort_by(|a, b| {
        a.depth
            .total_cmp(&b.depth)
            .then_with(|| a.primitive_ref.cmp(&b.primitive_ref))
    });
    splats
}

fn bounds(splat: &Splat2D, width: usize, height: usize) -> Option<PreparedSplat> {
    let cov = splat.cov2d;
    let (a, b, c) = (cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]);
    let det = a * c - b * b;
    if !(det >= SINGULAR_DETERMINANT) {
        return None;
    }
    // Mahalanobis radius beyond which w·opacity < 1/255, never below 3σ.
    let reach = (2.0 * (splat.alpha_base / MIN_ALPHA).ln()).max(0.0).sqrt().max(3.0);
    let hx = reach * a.sqrt();
    let hy = reach * c.sqrt();
    let [u, v] = splat.mean_px;
    let clamp = |lo: f64, hi: usize| lo.clamp(0.0, hi as f64) as usize;
    Some(PreparedSplat {
        center: [u, v],
        conic: [c / det, -b / det, a / det],
        color: splat.color,
        opacity: splat.alpha_base,
        x0: clamp((u - hx - 1.5).floor(), width),
        x1: clamp((u + hx + 1.5).ceil(), width),
        y0: clamp((v - hy - 1.5).floor(), height),
        y1: clamp((v + hy + 1.5).ceil(), height),
    })
}

/// Render a flat primitive collection.
pub fn render_flat(
    primitives: &[FlatPrimitive],
    camera: &Camera,
    light: &LightState,
    background: [f64; 3],
    options: &RenderOptions,
) -> Result<Rendered, RenderError> {
    camera.validate()?;
    let width = camera.width as usize;
    let height = camera.height as usize;
    let mut stats = RenderStats::default();
    let splats = prepare_splats(primitives, camera, light, options.mode, &mut stats);
    let mut prepared = Vec::with_capacity(splats.len());
    for s in &splats {
        match bounds(s, width, height) {
            Some(p) if p.x0 < p.x1 && p.y0 < p.y1 => prepared.push(p),
            Some(_) => stats.culled += 1,
            None => stats.singular += 1,
        }
    }
    stats.drawn = prepared.len();

    let mut pixels = vec![[0.0f32; 4]; width * height];
    let band_len = BAND_ROWS * width;
    let rasterize = |(band, out): (usize, &mut [[f32; 4]])| {
        rasterize_band(&prepared, band * BAND_ROWS, width, background, options.mode, out)
    };
    if options.parallel {
        pixels.par_chunks_mut(band_len).enumerate().for_each(rasterize);
    } else {
        pixels.chunks_mut(band_len).enumerate().for_each(rasterize);
    }
    Ok(Rendered {
        image: ImageRGBA {
            width: camera.width,
            height: camera.height,
            pixels,
        },
        stats: options.collect_stats.then_some(stats),
    })
}

fn heatmap(a: f64) -> [f64; 3] {
    let t = 2.0 * a - 1.0;
    [t.max(0.0), 1.0 - t.abs(), (-t).max(0.0)]
}

fn rasterize_band(
    splats: &[PreparedSplat],
    row0: usize,
    width: usize,
    background: [f64; 3],
    mode: RenderMode,
    out: &mut [[f32; 4]],
) {
    let rows = out.len() / width;
    let row1 = row0 + rows;
    let mut color = vec![[0.0f64; 3]; out.len()];
    let mut transmittance = vec![1.0f64; out.len()];
    for s in splats {
        if s.y1 <= row0 || s.y0 >= row1 {
            continue;
        }
        for y in s.y0.max(row0)..s.y1.min(row1) {
            let dy = y as f64 + 0.5 - s.center[1];
            let row = (y - row0) * width;
            for x in s.x0..s.x1 {
                let i = row + x;
                let t = transmittance[i];
                if t < TRANSMITTANCE_EPSILON {
                    continue;
                }
                let dx = x as f64 + 0.5 - s.center[0];
                let power = -0.5 * (s.conic[0] * dx * dx + s.conic[2] * dy * dy) - s.conic[1] * dx * dy;
                if power > 0.0 {
                    continue;
                }
                let alpha = (s.opacity * power.exp()).min(MAX_ALPHA);
                if alpha < MIN_ALPHA {
                    continue;
                }
                let c = &mut color[i];
                for k in 0..3 {
                    c[k] += s.color[k] * alpha * t;
                }
                transmittance[i] = t * (1.0 - alpha);
            }
        }
    }
    for (i, px) in out.iter_mut().enumerate() {
        let t = transmittance[i];
        let rgb = match mode {
            RenderMode::AlphaHeatmap => heatmap(1.0 - t).map(|h| h * (1.0 - t)),
            _ => color[i],
        };
        *px = [
            (rgb[0] + t * background[0]).clamp(0.0, 1.0) as f32,
            (rgb[1] + t * background[1]).clamp(0.0, 1.0) as f32,
            (rgb[2] + t * background[2]).clamp(0.0, 1.0) as f32,
            (1.0 - t).clamp(0.0, 1.0) as f32,
        ];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn axis_camera(distance: f64, size: u32) -> Camera {
        Camera::look_at([0.0, 0.0, distance], [0.0; 3], 0.8, size, size)
    }

    fn coeffs(a: f64, d: f64, s: f64, b: f64) -> ShadingCoeffs {
        ShadingCoeffs {
            ambient: a,
            diffuse: d,
            specular: s,
            shininess: b,
        }
    }

    #[test]
    fn camera_basis_is_right_handed() {
        let b = axis_camera(5.0, 10).basis();
        assert!((b.forward - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        assert!((b.right - Vector3::x()).norm() < 1e-12);
        assert!((b.down + Vector3::y()).norm() < 1e-12);
        assert!((b.rotation().determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn camera_validation() {
        let mut c = axis_camera(5.0, 10);
        assert!(c.validate().is_ok());
        c.fov_y = std::f64::consts::PI;
        assert!(c.validate().is_err());
        let mut c = axis_camera(5.0, 10);
        c.target = c.position;
        assert!(c.validate().is_err());
        assert!(axis_camera(5.0, 0).validate().is_err());
    }

    #[test]
    fn behind_camera_is_culled() {
        let p = GaussianPrimitive::isotropic([0.0, 0.0, 10.0], 1.0, 1.0, [0.0, 0.0, 1.0]);
        assert!(project_gaussian(&p, &axis_camera(5.0, 32)).is_none());
        let p = GaussianPrimitive::isotropic([0.0, 0.0, 4.995], 1.0, 1.0, [0.0, 0.0, 1.0]);
        assert!(project_gaussian(&p, &axis_camera(5.0, 32)).is_none());
    }

    #[test]
    fn isotropic_on_axis_projects_isotropic() {
        let p = GaussianPrimitive::isotropic([0.0; 3], 0.7, 1.0, [0.0, 0.0, 1.0]);
        let proj = project_gaussian(&p, &axis_camera(5.0, 64)).unwrap();
        let raw = proj.cov2d - Matrix2::identity() * COVARIANCE_DILATION;
        assert!((raw[(0, 0)] - raw[(1, 1)]).abs() < 1e-6);
        assert!(raw[(0, 1)].abs() < 1e-6);
        assert_eq!(proj.mean_px, [32.0, 32.0]);
        assert!((proj.depth - 5.0).abs() < 1e-12);
    }

    #[test]
    fn doubling_depth_quarters_covariance() {
        // On the optical axis J = diag(f/z), so Σ' = (f/z)²·s² for a unit-rotation Gaussian.
        let cam_near = axis_camera(3.0, 64);
        let cam_far = axis_camera(6.0, 64);
        let p = GaussianPrimitive::isotropic([0.0; 3], 1.0, 1.0, [0.0, 0.0, 1.0]);
        let f = cam_near.focal();
        let near = project_gaussian(&p, &cam_near).unwrap().cov2d - Matrix2::identity() * COVARIANCE_DILATION;
        let far = project_gaussian(&p, &cam_far).unwrap().cov2d - Matrix2::identity() * COVARIANCE_DILATION;
        let analytic = |z: f64| (f / z).powi(2);
        assert!((near[(0, 0)] - analytic(3.0)).abs() < 1e-9 * analytic(3.0));
        assert!((far[(0, 0)] / near[(0, 0)] - 0.25).abs() < 1e-9);
        assert!((far[(1, 1)] / near[(1, 1)] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn shading_examples() {
        let n = Vector3::new(0.0, 0.0, 1.0);
        let base = [0.3, 0.6, 0.9];
        // ambient only
        let out = blinn_phong(base, &coeffs(1.0, 0.0, 0.0, 8.0), n, Vector3::x(), n, 5.0);
        assert_eq!(out, base);
        // grazing diffuse
        let out = blinn_phong(base, &coeffs(0.0, 1.0, 0.0, 8.0), n, Vector3::x(), n, 1.0);
        assert_eq!(out, [0.0; 3]);
        // n = l = v = h
        let out = blinn_phong([0.4; 3], &coeffs(0.0, 1.0, 0.0, 8.0), n, n, n, 1.0);
        for c in out {
            assert!((c - 0.4).abs() < 1e-12);
        }
        // 0^0 := 1
        let out = blinn_phong([0.0; 3], &coeffs(0.0, 0.0, 0.25, 0.0), n, Vector3::x(), -Vector3::x(), 2.0);
        assert_eq!(out, [0.5; 3]);
    }

    #[test]
    fn headlight_polar_zero_points_back_at_camera() {
        let cam = axis_camera(5.0, 8);
        let l = light_direction(&LightState::default(), &cam);
        assert!((l - Vector3::z()).norm() < 1e-12);
        let tilted = LightState {
            azimuth: FRAC_PI_2,
            polar: FRAC_PI_2,
            ..Default::default()
        };
        // azimuth π/2 is screen-up, which is world +y for this camera
        assert!((light_direction(&tilted, &cam) - Vector3::y()).norm() < 1e-12);
    }

    #[test]
    fn composite_examples() {
        let (rgb, a) = composite_pixel(&[([0.2, 0.4, 0.6], 1.0)]);
        assert_eq!((rgb, a), ([0.2, 0.4, 0.6], 1.0));
        let (rgb, a) = composite_pixel(&[([1.0, 0.0, 0.0], 0.5), ([0.0, 0.0, 1.0], 1.0)]);
        assert_eq!(rgb, [0.5, 0.0, 0.5]);
        assert_eq!(a, 1.0);
        assert_eq!(composite_pixel(&[]), ([0.0; 3], 0.0));
    }

    #[test]
    fn composite_matches_recursive_over_operator() {
        use rand::{Rng, SeedableRng};
        // back-to-front recursion: C = c₁α₁ + (1−α₁)·C_rest
        fn over(layers: &[([f64; 3], f64)]) -> ([f64; 3], f64) {
            match layers.split_first() {
                None => ([0.0; 3], 0.0),
                Some((&(c, a), rest)) => {
                    let (rc, ra) = over(rest);
                    (std::array::from_fn(|k| c[k] * a + (1.0 - a) * rc[k]), a + (1.0 - a) * ra)
                }
            }
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let layers: Vec<_> = (0..5)
                .map(|_| ([rng.random(), rng.random(), rng.random()], rng.random_range(0.0..0.8)))
                .collect();
            let (rgb, a) = composite_pixel(&layers);
            let (orgb, oa) = over(&layers);
            assert!((a - oa).abs() < 1e-12);
            for k in 0..3 {
                assert!((rgb[k] - orgb[k]).abs() < 1e-12);
            }
        }
    }

    fn one_component(prims: Vec<GaussianPrimitive>) -> ComposedScene {
        let c = BasicScene::new("c", "c", [0.2, 0.5, 0.8], prims).unwrap();
        crate::splat::compose_scenes(&[c]).unwrap()
    }

    #[test]
    fn single_opaque_splat_dominates_its_pixel() {
        let mut p = GaussianPrimitive::isotropic([0.0; 3], 2.0, 1.0, [0.0, 0.0, 1.0]);
        p.k_ambient = 1.0;
        let scene = one_component(vec![p]);
        // 3 pixels on a 33 px image: pixel 16 has center 16.5 = principal point
        let cam = axis_camera(5.0, 33);
        let r = render(&scene, &EditMap::new(), &cam, &RenderOptions::default()).unwrap();
        let px = r.image.get(16, 16);
        // coverage saturates at MAX_ALPHA, the rest is the (black) background
        for k in 0..3 {
            let expected = MAX_ALPHA * scene.components[0].palette_color[k];
            assert!((px[k] as f64 - expected).abs() < 1e-3);
        }
        assert!((px[3] as f64 - MAX_ALPHA).abs() < 1e-6);
    }

    #[test]
    fn hidden_scene_is_pure_background() {
        let p = GaussianPrimitive::isotropic([0.0; 3], 0.5, 0.9, [0.0, 0.0, 1.0]);
        let scene = one_component(vec![p]);
        let mut edits = EditMap::new();
        edits.insert(
            ComponentId::new("c"),
            ComponentEdit {
                visible: false,
                ..Default::default()
            },
        );
        let opts = RenderOptions {
            background: Some([0.1, 0.2, 0.3]),
            ..Default::default()
        };
        let r = render(&scene, &edits, &axis_camera(5.0, 16), &opts).unwrap();
        assert!(r.image.pixels.iter().all(|p| *p == [0.1f32, 0.2, 0.3, 0.0]));
    }

    #[test]
    fn stats_count_culled_primitives() {
        let front = GaussianPrimitive::isotropic([0.0; 3], 0.5, 0.9, [0.0, 0.0, 1.0]);
        let behind = GaussianPrimitive::isotropic([0.0, 0.0, 9.0], 0.5, 0.9, [0.0, 0.0, 1.0]);
        let scene = one_component(vec![front, behind]);
        let opts = RenderOptions {
            collect_stats: true,
            ..Default::default()
        };
        let stats = render(&scene, &EditMap::new(), &axis_camera(5.0, 16), &opts)
            .unwrap()
            .stats
            .unwrap();
        assert_eq!(stats.primitives, 2);
        assert_eq!(stats.culled, 1);
        assert_eq!(stats.drawn, 1);
    }

    #[test]
    fn empty_scene_rejected() {
        let scene = crate::splat::compose_scenes(&[]).unwrap();
        let err = render(&scene, &EditMap::new(), &axis_camera(5.0, 8), &RenderOptions::default());
        assert_eq!(err.unwrap_err(), RenderError::EmptyScene);
    }

    #[test]
    fn render_mode_names_round_trip() {
        for m in RenderMode::ALL {
            assert_eq!(RenderMode::from_name(m.name()), Some(m));
        }
        assert_eq!(RenderMode::from_name("wireframe"), None);
    }
}
