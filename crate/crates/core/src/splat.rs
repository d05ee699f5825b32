//! Editable Gaussian primitives, basic scenes and their composition.
//!
//! A basic scene is one semantic component: a set of Gaussians sharing a
//! palette color. Scenes compose by concatenating their primitive sets, and
//! per-component [`ComponentEdit`]s are folded into render-time parameters by
//! [`effective_params`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on unit-length invariants of stored primitives.
pub const UNIT_TOLERANCE: f64 = 1e-6;
/// Quaternions further than this from unit length are rejected instead of renormalized.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid primitive: {0}")]
    InvalidPrimitive(String),
    #[error("invalid component `{id}`: {reason}")]
    InvalidComponent { id: ComponentId, reason: String },
    #[error("duplicate component id `{0}`")]
    DuplicateComponent(ComponentId),
    #[error("invalid edit: {0}")]
    InvalidEdit(String),
}

/// Identifier of a semantic component.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ComponentId(pub String);

impl ComponentId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ComponentId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

/// One editable splat. Geometry is `{mean, scale, rotation, opacity}`,
/// shading is `{normal, offset_color, k_*, shininess}`.
///
/// Stored at 32-bit precision, which is also the on-disk precision.
/// Rotation is `[w, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrimitive {
    pub mean: [f32; 3],
    pub scale: [f32; 3],
    pub rotation: [f32; 4],
    pub opacity: f32,
    pub normal: [f32; 3],
    pub offset_color: [f32; 3],
    pub k_ambient: f32,
    pub k_diffuse: f32,
    pub k_specular: f32,
    pub shininess: f32,
}

impl GaussianPrimitive {
    /// Number of `f32` fields in a serialized record.
    pub const FIELD_COUNT: usize = 21;

    /// An isotropic, white-lit primitive at `mean`; handy for tests and fixtures.
    pub fn isotropic(mean: [f32; 3], radius: f32, opacity: f32, normal: [f32; 3]) -> Self {
        Self {
            mean,
            scale: [radius; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity,
            normal,
            offset_color: [0.0; 3],
            k_ambient: 1.0,
            k_diffuse: 0.0,
            k_specular: 0.0,
            shininess: 1.0,
        }
    }

    pub fn mean_vec(&self) -> Vector3<f64> {
        vec3(self.mean)
    }

    pub fn normal_vec(&self) -> Vector3<f64> {
        vec3(self.normal)
    }

    pub fn rotation_quat(&self) -> Quaternion<f64> {
        let [w, x, y, z] = self.rotation;
        Quaternion::new(w as f64, x as f64, y as f64, z as f64)
    }

    /// Fields in storage order: mean, scale, rotation, opacity, normal,
    /// offset color, k_a, k_d, k_s, shininess.
    pub fn to_fields(&self) -> [f32; Self::FIELD_COUNT] {
        let mut out = [0.0f32; Self::FIELD_COUNT];
        out[0..3].copy_from_slice(&self.mean);
        out[3..6].copy_from_slice(&self.scale);
        out[6..10].copy_from_slice(&self.rotation);
        out[10] = self.opacity;
        out[11..14].copy_from_slice(&self.normal);
        out[14..17].copy_from_slice(&self.offset_color);
        out[17] = self.k_ambient;
        out[18] = self.k_diffuse;
        out[19] = self.k_specular;
        out[20] = self.shininess;
        out
    }

    pub fn from_fields(f: &[f32; Self::FIELD_COUNT]) -> Self {
        Self {
            mean: [f[0], f[1], f[2]],
            scale: [f[3], f[4], f[5]],
            rotation: [f[6], f[7], f[8], f[9]],
            opacity: f[10],
            normal: [f[11], f[12], f[13]],
            offset_color: [f[14], f[15], f[16]],
            k_ambient: f[17],
            k_diffuse: f[18],
            k_specular: f[19],
            shininess: f[20],
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |msg: String| Err(SceneError::InvalidPrimitive(msg));
        if let Some(i) = self.to_fields().iter().position(|v| !v.is_finite()) {
            return bad(format!("field {i} is not finite"));
        }
        if self.scale.iter().any(|&s| s <= 0.0) {
            return bad(format!("scale {:?} must be positive", self.scale));
        }
        let qn = self.rotation_quat().norm();
        if (qn - 1.0).abs() > UNIT_TOLERANCE {
            return bad(format!("rotation norm {qn} is not 1"));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return bad(format!("opacity {} outside [0,1]", self.opacity));
        }
        let nn = self.normal_vec().norm();
        if (nn - 1.0).abs() > UNIT_TOLERANCE {
            return bad(format!("normal norm {nn} is not 1"));
        }
        if self.offset_color.iter().any(|c| !(-1.0..=1.0).contains(c)) {
            return bad(format!("offset color {:?} outside [-1,1]", self.offset_color));
        }
        for (name, k) in [
            ("k_ambient", self.k_ambient),
            ("k_diffuse", self.k_diffuse),
            ("k_specular", self.k_specular),
        ] {
            if !(0.0..=1.0).contains(&k) {
                return bad(format!("{name} {k} outside [0,1]"));
            }
        }
        if self.shininess < 0.0 {
            return bad(format!("shininess {} is negative", self.shininess));
        }
        Ok(())
    }
}

pub(crate) fn vec3(v: [f32; 3]) -> Vector3<f64> {
    Vector3::new(v[0] as f64, v[1] as f64, v[2] as f64)
}

/// `Σ = R·diag(s)²·Rᵀ` with `R` the rotation matrix of `rotation`.
///
/// The quaternion is renormalized when it is within
/// [`RENORMALIZE_TOLERANCE`] of unit length.
pub fn covariance_from_scale_rotation(
    scale: Vector3<f64>,
    rotation: Quaternion<f64>,
) -> Result<Matrix3<f64>, SceneError> {
    if scale.iter().chain(rotation.coords.iter()).any(|v| !v.is_finite()) {
        return Err(SceneError::InvalidPrimitive("non-finite scale or rotation".into()));
    }
    let norm = rotation.norm();
    if (norm - 1.0).abs() > RENORMALIZE_TOLERANCE {
        return Err(SceneError::InvalidPrimitive(format!(
            "rotation norm {norm} too far from 1"
        )));
    }
    let r = UnitQuaternion::from_quaternion(rotation).to_rotation_matrix().into_inner();
    let m = r * Matrix3::from_diagonal(&scale);
    let sigma = m * m.transpose();
    // exact symmetry for downstream consumers
    Ok((sigma + sigma.transpose()) * 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingSphere {
    pub center: [f64; 3],
    pub radius: f64,
}

impl BoundingSphere {
    /// Centroid of the means, with the radius reaching the farthest mean.
    pub fn enclosing(primitives: &[GaussianPrimitive]) -> Self {
        let n = primitives.len().max(1) as f64;
        let c = primitives
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.mean_vec())
            / n;
        let radius = primitives
            .iter()
            .map(|p| (p.mean_vec() - c).norm())
            .fold(0.0, f64::max);
        Self { center: c.into(), radius }
    }

    pub fn center_vec(&self) -> Vector3<f64> {
        Vector3::from(self.center)
    }

    pub fn contains(&self, p: Vector3<f64>, tolerance: f64) -> bool {
        (p - self.center_vec()).norm() <= self.radius + tolerance
    }
}

/// One segmented component: a primitive set sharing a palette color.
#[derive(Debug, Clone, PartialEq)]
pub struct BasicScene {
    pub id: ComponentId,
    pub label: String,
    pub palette_color: [f64; 3],
    pub primitives: Vec<GaussianPrimitive>,
    pub bounding_sphere: BoundingSphere,
}

impl BasicScene {
    pub fn new(
        id: impl Into<ComponentId>,
        label: impl Into<String>,
        palette_color: [f64; 3],
        primitives: Vec<GaussianPrimitive>,
    ) -> Result<Self, SceneError> {
        let id = id.into();
        let invalid = |reason: String| SceneError::InvalidComponent {
            id: id.clone(),
            reason,
        };
        if !in_unit_cube(&palette_color) {
            return Err(invalid(format!("palette color {palette_color:?} outside [0,1]")));
        }
        if primitives.is_empty() {
            return Err(invalid("component has no primitives".into()));
        }
        for (i, p) in primitives.iter().enumerate() {
            p.validate()
                .map_err(|e| invalid(format!("primitive {i}: {e}")))?;
        }
        let bounding_sphere = BoundingSphere::enclosing(&primitives);
        Ok(Self {
            id,
            label: label.into(),
            palette_color,
            primitives,
            bounding_sphere,
        })
    }
}

impl From<String> for ComponentId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightMode {
    /// Direction is expressed in the camera frame and follows the camera.
    #[default]
    Headlight,
    /// Direction is fixed in world space.
    Orbital,
}

/// Global light. For headlights, polar 0 points along the view direction
/// and azimuth 0 tilts toward screen-right, π/2 toward screen-up. Orbital
/// lights use the same angles in world space with +y as the polar axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightState {
    pub azimuth: f64,
    pub polar: f64,
    pub magnitude: f64,
    pub mode: LightMode,
}

impl Default for LightState {
    fn default() -> Self {
        Self {
            azimuth: 0.0,
            polar: 0.0,
            magnitude: 1.0,
            mode: LightMode::Headlight,
        }
    }
}

impl LightState {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !self.azimuth.is_finite() || !(0.0..=std::f64::consts::PI).contains(&self.polar) {
            return Err(SceneError::InvalidEdit(format!(
                "light angles ({}, {}) out of range",
                self.azimuth, self.polar
            )));
        }
        if !(self.magnitude >= 0.0 && self.magnitude.is_finite()) {
            return Err(SceneError::InvalidEdit(format!(
                "light magnitude {} must be non-negative",
                self.magnitude
            )));
        }
        Ok(())
    }
}

/// Live edit state of one component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentEdit {
    pub color_override: Option<[f64; 3]>,
    /// Multiplies the per-primitive opacity, in `[0, 2]`.
    pub opacity_scale: f64,
    pub visible: bool,
    /// Gains on `(k_a, k_d, k_s, shininess)`, each in `[0, 4]`.
    pub light_gains: [f64; 4],
}

impl Default for ComponentEdit {
    fn default() -> Self {
        Self {
            color_override: None,
            opacity_scale: 1.0,
            visible: true,
            light_gains: [1.0; 4],
        }
    }
}

pub const MAX_OPACITY_SCALE: f64 = 2.0;
pub const MAX_LIGHT_GAIN: f64 = 4.0;

impl ComponentEdit {
    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if let Some(c) = self.color_override {
            if !in_unit_cube(&c) {
                return Err(SceneError::InvalidEdit(format!("color {c:?} outside [0,1]")));
            }
        }
        if !(0.0..=MAX_OPACITY_SCALE).contains(&self.opacity_scale) {
            return Err(SceneError::InvalidEdit(format!(
                "opacity scale {} outside [0,2]",
                self.opacity_scale
            )));
        }
        if self.light_gains.iter().any(|g| !(0.0..=MAX_LIGHT_GAIN).contains(g)) {
            return Err(SceneError::InvalidEdit(format!(
                "light gains {:?} outside [0,4]",
                self.light_gains
            )));
        }
        Ok(())
    }
}

pub type EditMap = BTreeMap<ComponentId, ComponentEdit>;

/// Blinn-Phong coefficients after edits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadingCoeffs {
    pub ambient: f64,
    pub diffuse: f64,
    pub specular: f64,
    pub shininess: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveParams {
    pub base_color: [f64; 3],
    pub opacity: f64,
    pub coeffs: ShadingCoeffs,
}

/// Fold a component edit into one primitive's render-time parameters.
///
/// The override replaces the palette color; the primitive's offset color is
/// still added on top. Hidden components get zero opacity.
pub fn effective_params(
    primitive: &GaussianPrimitive,
    palette: [f64; 3],
    edit: &ComponentEdit,
) -> EffectiveParams {
    let chosen = edit.color_override.unwrap_or(palette);
    let base_color =
        std::array::from_fn(|i| (chosen[i] + primitive.offset_color[i] as f64).clamp(0.0, 1.0));
    let opacity = if edit.visible {
        (primitive.opacity as f64 * edit.opacity_scale).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let g = edit.light_gains;
    EffectiveParams {
        base_color,
        opacity,
        coeffs: ShadingCoeffs {
            ambient: primitive.k_ambient as f64 * g[0],
            diffuse: primitive.k_diffuse as f64 * g[1],
            specular: primitive.k_specular as f64 * g[2],
            shininess: primitive.shininess as f64 * g[3],
        },
    }
}

/// A full scene: basic scenes in order, plus global light and background.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedScene {
    pub components: Vec<BasicScene>,
    pub global_light: LightState,
    pub background: [f64; 3],
}

impl ComposedScene {
    pub fn component(&self, id: &ComponentId) -> Option<&BasicScene> {
        self.components.iter().find(|c| &c.id == id)
    }

    /// Resolve a reference by exact id, then by exact label.
    pub fn resolve(&self, reference: &str) -> Option<&BasicScene> {
        self.components
            .iter()
            .find(|c| c.id.as_str() == reference)
            .or_else(|| self.components.iter().find(|c| c.label == reference))
    }

    pub fn primitive_count(&self) -> usize {
        self.components.iter().map(|c| c.primitives.len()).sum()
    }

    /// Sphere enclosing every component's bounding sphere.
    pub fn bounding_sphere(&self) -> BoundingSphere {
        if self.components.is_empty() {
            return BoundingSphere {
                center: [0.0; 3],
                radius: 0.0,
            };
        }
        let n = self.components.len() as f64;
        let c = self
            .components
            .iter()
            .fold(Vector3::zeros(), |acc, s| acc + s.bounding_sphere.center_vec())
            / n;
        let radius = self
            .components
            .iter()
            .map(|s| (s.bounding_sphere.center_vec() - c).norm() + s.bounding_sphere.radius)
            .fold(0.0, f64::max);
        BoundingSphere {
            center: c.into(),
            radius,
        }
    }
}

/// Compose basic scenes by concatenation. Inputs are left untouched.
pub fn compose_scenes(components: &[BasicScene]) -> Result<ComposedScene, SceneError> {
    let mut seen = BTreeSet::new();
    for c in components {
        if !seen.insert(&c.id) {
            return Err(SceneError::DuplicateComponent(c.id.clone()));
        }
    }
    Ok(ComposedScene {
        components: components.to_vec(),
        global_light: LightState::default(),
        background: [0.0; 3],
    })
}

pub(crate) fn in_unit_cube(c: &[f64; 3]) -> bool {
    c.iter().all(|v| (0.0..=1.0).contains(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn prim(mean: [f32; 3]) -> GaussianPrimitive {
        GaussianPrimitive::isotropic(mean, 0.1, 0.8, [0.0, 0.0, 1.0])
    }

    fn assert_mat_eq(a: &Matrix3<f64>, b: &Matrix3<f64>, tol: f64) {
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < tol, "{a} != {b}");
        }
    }

    #[test]
    fn covariance_identity_and_diagonal() {
        let id = Quaternion::new(1.0, 0.0, 0.0, 0.0);
        let s = covariance_from_scale_rotation(Vector3::new(1.0, 1.0, 1.0), id).unwrap();
        assert_mat_eq(&s, &Matrix3::identity(), 1e-12);
        let s = covariance_from_scale_rotation(Vector3::new(2.0, 1.0, 1.0), id).unwrap();
        assert_mat_eq(&s, &Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)), 1e-12);
    }

    #[test]
    fn covariance_rotated_90_about_z() {
        // Expected value multiplied out by hand: R = [[0,-1,0],[1,0,0],[0,0,1]].
        let r = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let oracle = r * Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)) * r.transpose();
        let half = FRAC_PI_2 / 2.0;
        let q = Quaternion::new(half.cos(), 0.0, 0.0, half.sin());
        let s = covariance_from_scale_rotation(Vector3::new(2.0, 1.0, 1.0), q).unwrap();
        assert_mat_eq(&s, &oracle, 1e-12);
        assert_mat_eq(&s, &Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0)), 1e-12);
    }

    #[test]
    fn covariance_rejects_non_finite_and_far_from_unit() {
        let id = Quaternion::new(1.0, 0.0, 0.0, 0.0);
        assert!(covariance_from_scale_rotation(Vector3::new(f64::NAN, 1.0, 1.0), id).is_err());
        let q = Quaternion::new(1.1, 0.0, 0.0, 0.0);
        assert!(covariance_from_scale_rotation(Vector3::new(1.0, 1.0, 1.0), q).is_err());
        // close enough gets renormalized
        let q = Quaternion::new(1.0005, 0.0, 0.0, 0.0);
        assert!(covariance_from_scale_rotation(Vector3::new(1.0, 1.0, 1.0), q).is_ok());
    }

    #[test]
    fn compose_singleton_and_duplicate() {
        let a = BasicScene::new("a", "A", [0.5; 3], vec![prim([0.0; 3])]).unwrap();
        let scene = compose_scenes(std::slice::from_ref(&a)).unwrap();
        assert_eq!(scene.components.len(), 1);
        assert_eq!(scene.components[0].primitives, a.primitives);

        let a2 = BasicScene::new("a", "A again", [0.1; 3], vec![prim([1.0; 3])]).unwrap();
        let err = compose_scenes(&[a, a2]).unwrap_err();
        assert_eq!(err, SceneError::DuplicateComponent(ComponentId::new("a")));
        assert!(err.to_string().contains("`a`"));
    }

    #[test]
    fn basic_scene_validation() {
        assert!(BasicScene::new("a", "A", [0.5; 3], vec![]).is_err());
        assert!(BasicScene::new("a", "A", [1.5, 0.0, 0.0], vec![prim([0.0; 3])]).is_err());
        let mut p = prim([0.0; 3]);
        p.scale[1] = 0.0;
        assert!(BasicScene::new("a", "A", [0.5; 3], vec![p]).is_err());
        let s = BasicScene::new("a", "A", [0.5; 3], vec![prim([1.0, 0.0, 0.0]), prim([-1.0, 0.0, 0.0])])
            .unwrap();
        assert!((s.bounding_sphere.radius - 1.0).abs() < 1e-12);
    }

    #[test]
    fn effective_params_examples() {
        let mut p = prim([0.0; 3]);
        let edit = ComponentEdit {
            opacity_scale: 0.0,
            ..Default::default()
        };
        assert_eq!(effective_params(&p, [0.5, 0.2, 0.1], &edit).opacity, 0.0);

        let e = effective_params(&p, [0.5, 0.2, 0.1], &ComponentEdit::default());
        assert_eq!(e.base_color, [0.5, 0.2, 0.1]);
        assert_eq!(e.opacity, p.opacity as f64);

        p.offset_color = [0.2, 0.0, 0.0];
        let edit = ComponentEdit {
            color_override: Some([1.0, 0.0, 0.0]),
            ..Default::default()
        };
        assert_eq!(effective_params(&p, [0.5, 0.2, 0.1], &edit).base_color, [1.0, 0.0, 0.0]);

        let hidden = ComponentEdit {
            visible: false,
            ..Default::default()
        };
        assert_eq!(effective_params(&p, [0.5; 3], &hidden).opacity, 0.0);
    }

    #[test]
    fn edit_validation_ranges() {
        let mut e = ComponentEdit::default();
        assert!(e.validate().is_ok());
        e.opacity_scale = 2.5;
        assert!(e.validate().is_err());
        e.opacity_scale = 1.0;
        e.light_gains[3] = -0.1;
        assert!(e.validate().is_err());
    }

    fn arb_primitive() -> impl Strategy<Value = GaussianPrimitive> {
        (
            prop::array::uniform3(-5.0f32..5.0),
            prop::array::uniform3(0.01f32..2.0),
            prop::array::uniform4(-1.0f32..1.0),
            0.0f32..=1.0,
            prop::array::uniform3(-1.0f32..=1.0),
            prop::array::uniform4(0.0f32..=1.0),
        )
            .prop_filter("non-degenerate quaternion", |t| {
                t.2.iter().map(|v| v * v).sum::<f32>() > 0.01
            })
            .prop_map(|(mean, scale, q, opacity, dc, k)| {
                let qn = q.iter().map(|v| v * v).sum::<f32>().sqrt();
                GaussianPrimitive {
                    mean,
                    scale,
                    rotation: q.map(|v| v / qn),
                    opacity,
                    normal: [0.0, 1.0, 0.0],
                    offset_color: dc,
                    k_ambient: k[0],
                    k_diffuse: k[1],
                    k_specular: k[2],
                    shininess: k[3] * 64.0,
                }
            })
    }

    fn arb_edit() -> impl Strategy<Value = ComponentEdit> {
        (
            prop::option::of(prop::array::uniform3(0.0f64..=1.0)),
            0.0f64..=2.0,
            any::<bool>(),
            prop::array::uniform4(0.0f64..=4.0),
        )
            .prop_map(|(color_override, opacity_scale, visible, light_gains)| ComponentEdit {
                color_override,
                opacity_scale,
                visible,
                light_gains,
            })
    }

    proptest! {
        #[test]
        fn effective_params_stay_in_range(p in arb_primitive(), palette in prop::array::uniform3(0.0f64..=1.0), edit in arb_edit()) {
            let e = effective_params(&p, palette, &edit);
            prop_assert!((0.0..=1.0).contains(&e.opacity));
            prop_assert!(e.base_color.iter().all(|c| (0.0..=1.0).contains(c)));
        }

        #[test]
        fn identity_edit_is_idempotent(p in arb_primitive(), palette in prop::array::uniform3(0.0f64..=1.0)) {
            let id = ComponentEdit::default();
            let once = effective_params(&p, palette, &id);
            let mut p2 = p;
            p2.opacity = once.opacity as f32;
            let twice = effective_params(&p2, palette, &id);
            prop_assert_eq!(once.opacity, twice.opacity);
            prop_assert_eq!(once.base_color, twice.base_color);
            prop_assert_eq!(once.coeffs, twice.coeffs);
        }

        #[test]
        fn covariance_double_cover(p in arb_primitive()) {
            let q = p.rotation_quat();
            let a = covariance_from_scale_rotation(vec3(p.scale), q).unwrap();
            let b = covariance_from_scale_rotation(vec3(p.scale), -q).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            prop_assert!((a - a.transpose()).abs().max() < 1e-9);
            let eig = a.symmetric_eigenvalues();
            prop_assert!(eig.iter().all(|&v| v >= -1e-9));
        }
    }
}
