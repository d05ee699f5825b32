//! Two sessions receiving interleaved commands end up exactly where they
//! would have ended up running alone.

use std::path::PathBuf;
use std::sync::Arc;

use proptest::prelude::*;
use serde_json::json;

use nlvis_core::agent::ScriptedProvider;
use nlvis_core::config::{AppConfig, EmbeddingConfig};
use nlvis_core::scene_io::{generate_synthetic_scene, SynthSpec};
use nlvis_gateway::wire::SessionInfo;
use nlvis_gateway::AppState;

fn command() -> impl Strategy<Value = String> {
    let comp = prop_oneof![Just("red_ball"), Just("blue_ball"), Just("red ball")];
    let unit = 0.0..=1.0f64;
    prop_oneof![
        (comp.clone(), unit.clone(), unit.clone(), unit.clone())
            .prop_map(|(c, r, g, b)| json!({"cmd": "set_color", "component": c, "rgb": [r, g, b]})),
        (comp.clone(), 0.0..=2.0f64).prop_map(|(c, s)| json!({"cmd": "set_opacity", "component": c, "scale": s})),
        (comp.clone(), any::<bool>()).prop_map(|(c, v)| json!({"cmd": "set_visibility", "component": c, "visible": v})),
        (-3.0..3.0f64, 0.2..2.9f64)
            .prop_map(|(a, p)| json!({"cmd": "set_light_direction", "azimuth": a, "polar": p, "mode": "orbital"})),
        (-3.0..3.0f64, 0.3..2.8f64, 2.0..4.0f64)
            .prop_map(|(a, p, d)| json!({"cmd": "set_camera", "azimuth": a, "polar": p, "distance": d, "fov": 0.7})),
        (unit.clone(), unit.clone(), unit).prop_map(|(r, g, b)| json!({"cmd": "set_background", "rgb": [r, g, b]})),
        Just(json!({"cmd": "reset", "target": "all"})),
        comp.prop_map(|c| json!({"cmd": "reset", "target": c})),
    ]
    .prop_map(|v| v.to_string())
}

async fn start() -> (String, reqwest::Client) {
    let text = std::fs::read_to_string(
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/scenes/two_spheres.json"),
    )
    .unwrap();
    let mut spec: SynthSpec = serde_json::from_str(&text).unwrap();
    spec.resolution = 32;
    spec.golden = false;
    let bundle = generate_synthetic_scene(&spec, 2).unwrap();
    let mut config = AppConfig::default();
    config.providers.embedding = EmbeddingConfig::Hash {
        seed: 0,
        dimension: 16,
        captions: false,
    };
    let chat = Arc::new(ScriptedProvider::from_json(r#"{"rules": []}"#).unwrap());
    let state = Arc::new(AppState::new(config, vec![bundle], chat).unwrap().without_persistence());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(nlvis_gateway::serve(state, listener));
    (base, reqwest::Client::new())
}

async fn create(base: &str, http: &reqwest::Client) -> String {
    let info: SessionInfo = http
        .post(format!("{base}/sessions"))
        .json(&json!({"scene_id": "two_spheres"}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    info.session_id
}

async fn run(base: &str, http: &reqwest::Client, id: &str, cmds: &[String]) {
    for c in cmds {
        let r = http
            .post(format!("{base}/sessions/{id}/commands"))
            .body(c.clone())
            .send()
            .await
            .unwrap();
        assert!(r.status().is_success());
        tokio::task::yield_now().await;
    }
}

async fn frame(base: &str, http: &reqwest::Client, id: &str) -> Vec<u8> {
    let png = http
        .get(format!("{base}/sessions/{id}/frame"))
        .send()
        .await
        .unwrap()
        .bytes()
        .await
        .unwrap();
    nlvis_core::frame::decode_png(&png).unwrap().into_raw()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn interleaved_sessions_match_solo_runs(
        a in prop::collection::vec(command(), 1..8),
        b in prop::collection::vec(command(), 1..8),
    ) {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async {
            let (base, http) = start().await;
            let solo_a = create(&base, &http).await;
            run(&base, &http, &solo_a, &a).await;
            let solo_b = create(&base, &http).await;
            run(&base, &http, &solo_b, &b).await;

            let (ia, ib) = (create(&base, &http).await, create(&base, &http).await);
            tokio::join!(run(&base, &http, &ia, &a), run(&base, &http, &ib, &b));

            assert_eq!(frame(&base, &http, &ia).await, frame(&base, &http, &solo_a).await);
            assert_eq!(frame(&base, &http, &ib).await, frame(&base, &http, &solo_b).await);
        });
    }
}
