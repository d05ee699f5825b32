//! Shared scene setup for the render benchmarks.

use nlvis_core::scene_io::{generate_synthetic_scene, SceneBundle, SynthSpec};

/// Two sphere shells with `primitives` splats in total, framed for a
/// `resolution`² camera.
pub fn two_spheres(primitives: usize, resolution: u32) -> SceneBundle {
    let half = primitives / 2;
    let spec: SynthSpec = serde_json::from_value(serde_json::json!({
        "scene_id": "bench",
        "resolution": resolution,
        "golden": false,
        "shapes": [
            {"id": "a", "label": "a", "kind": "sphere_shell", "center": [-0.6, 0.0, 0.0],
             "radius": 0.4, "palette_color": [0.9, 0.1, 0.1], "budget": primitives - half},
            {"id": "b", "label": "b", "kind": "sphere_shell", "center": [0.6, 0.0, 0.0],
             "radius": 0.4, "palette_color": [0.1, 0.2, 0.9], "budget": half}
        ]
    }))
    .expect("bench spec");
    generate_synthetic_scene(&spec, 7).expect("bench scene")
}
