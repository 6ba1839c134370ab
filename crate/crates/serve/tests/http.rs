use std::time::Instant;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use cdaae_core::data::synthetic::make_synthetic_corpus;
use cdaae_core::data::{decode_image, encode_png};
use cdaae_core::train::{TrainConfig, Trainer};
use cdaae_core::{LabelMode, SkipPosition};
use cdaae_serve::{cors, router, AppState, LoadedModel};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn model(skip: SkipPosition, mode: LabelMode) -> LoadedModel {
    let mut config = TrainConfig::new("m.csv", "out");
    config.skip_position = skip;
    config.label_mode = mode;
    config.seed = 3;
    LoadedModel::from_bytes(&Trainer::new(config).unwrap().checkpoint().to_bytes()).unwrap()
}

fn app(state: AppState) -> Router {
    router(state, cors(None).unwrap())
}

fn face_b64() -> String {
    let synth = make_synthetic_corpus(2, 2, 9).unwrap();
    BASE64.encode(encode_png(&synth.images[0]).unwrap())
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value, axum::http::HeaderMap) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let body = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, body, headers)
}

fn get(path: &str) -> Request<Body> {
    Request::get(path).body(Body::empty()).unwrap()
}

fn post(body: Value) -> Request<Body> {
    Request::post("/synthesize")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

fn au_label() -> Vec<f64> {
    (0..12).map(|i| (i % 4) as f64 / 4.0).collect()
}

#[tokio::test]
async fn health_reports_model_readiness() {
    let state = AppState::empty();
    let app = app(state.clone());
    let (status, body, _) = call(&app, get("/health")).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["error"]["code"], "model_not_loaded");
    let (status, _, _) = call(&app, post(json!({"image": face_b64(), "label": au_label()}))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);

    assert!(state.install(model(SkipPosition::P2, LabelMode::Au)));
    let (status, body, _) = call(&app, get("/health")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
}

#[tokio::test]
async fn model_info_describes_the_checkpoint() {
    let m = model(SkipPosition::P3, LabelMode::Emotion);
    let hash = m.info.checkpoint_hash.clone();
    let app = app(AppState::with_model(m));
    let (status, body, _) = call(&app, get("/model/info")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["z_dim"], 100);
    assert_eq!(body["skip_position"], "p3");
    assert_eq!(body["label_mode"], "emotion");
    assert_eq!(body["label_dim"], 8);
    assert_eq!(body["checkpoint_hash"], hash);
    assert_eq!(hash.len(), 64);
}

#[tokio::test]
async fn synthesis_returns_a_32px_png_deterministically() {
    let app = app(AppState::with_model(model(SkipPosition::P2, LabelMode::Au)));
    let req = json!({"image": face_b64(), "label": au_label()});
    let (status, first, _) = call(&app, post(req.clone())).await;
    assert_eq!(status, StatusCode::OK, "{first}");
    let png = BASE64.decode(first["image"].as_str().unwrap()).unwrap();
    let img = decode_image(&png).unwrap();
    assert_eq!(img.dimensions(), (32, 32));
    assert_eq!(first["model_info"]["skip_position"], "p2");
    assert!(first["latency_ms"].as_f64().unwrap() >= 0.0);
    let (_, second, _) = call(&app, post(req)).await;
    assert_eq!(first["image"], second["image"]);
}

#[tokio::test]
async fn label_errors_are_400_with_a_reason() {
    let app = app(AppState::with_model(model(SkipPosition::P2, LabelMode::Au)));
    let (status, body, _) = call(&app, post(json!({"image": face_b64(), "label": vec![0.0; 11]}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "label_length");
    let msg = body["error"]["message"].as_str().unwrap();
    assert!(msg.contains("12") && msg.contains("11"), "{msg}");

    let mut label = au_label();
    label[3] = 1.5;
    let (status, body, _) = call(&app, post(json!({"image": face_b64(), "label": label}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "label_out_of_range");
}

#[tokio::test]
async fn emotion_labels_must_sum_to_one() {
    let app = app(AppState::with_model(model(SkipPosition::P2, LabelMode::Emotion)));
    let (status, body, _) = call(&app, post(json!({"image": face_b64(), "label": vec![0.5; 8]}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "invalid_label");
    let mut blend = vec![0.0; 8];
    blend[1] = 0.25;
    blend[7] = 0.75;
    let (status, _, _) = call(&app, post(json!({"image": face_b64(), "label": blend}))).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn malformed_requests_are_rejected() {
    let app = app(AppState::with_model(model(SkipPosition::P2, LabelMode::Au)));
    let (status, body, _) = call(&app, post(json!({"image": "not base64!", "label": au_label()}))).await;
    assert_eq!(
        (status, body["error"]["code"].as_str()),
        (StatusCode::BAD_REQUEST, Some("bad_image"))
    );
    let junk = BASE64.encode(b"definitely not a png");
    let (status, body, _) = call(&app, post(json!({"image": junk, "label": au_label()}))).await;
    assert_eq!(
        (status, body["error"]["code"].as_str()),
        (StatusCode::BAD_REQUEST, Some("bad_image"))
    );
    let req = Request::post("/synthesize").body(Body::from("{")).unwrap();
    let (status, body, _) = call(&app, req).await;
    assert_eq!(
        (status, body["error"]["code"].as_str()),
        (StatusCode::BAD_REQUEST, Some("malformed_json"))
    );
}

#[tokio::test]
async fn grid_requests_tile_the_sweep() {
    let app = app(AppState::with_model(model(SkipPosition::P2, LabelMode::Au)));
    let grid = json!({
        "axis_x": {"index": 0, "values": [0.0, 0.5, 1.0]},
        "axis_y": {"index": 5, "values": [0.0, 1.0]},
    });
    let (status, body, _) = call(
        &app,
        post(json!({"image": face_b64(), "label": vec![0.0; 12], "grid": grid})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let img = decode_image(&BASE64.decode(body["image"].as_str().unwrap()).unwrap()).unwrap();
    assert_eq!(img.dimensions(), (96, 64));

    let bad = json!({"axis_x": {"index": 0, "values": [0.0]}, "axis_y": {"index": 0, "values": [0.0]}});
    let (status, body, _) = call(
        &app,
        post(json!({"image": face_b64(), "label": vec![0.0; 12], "grid": bad})),
    )
    .await;
    assert_eq!(
        (status, body["error"]["code"].as_str()),
        (StatusCode::BAD_REQUEST, Some("invalid_grid"))
    );
}

#[tokio::test]
async fn cors_headers_are_set() {
    let app = app(AppState::with_model(model(SkipPosition::P2, LabelMode::Au)));
    let req = Request::get("/model/info")
        .header(header::ORIGIN, "http://editor.local")
        .body(Body::empty())
        .unwrap();
    let (_, _, headers) = call(&app, req).await;
    assert_eq!(headers[header::ACCESS_CONTROL_ALLOW_ORIGIN], "*");

    let pinned = router(AppState::empty(), cors(Some("http://editor.local")).unwrap());
    let req = Request::get("/health")
        .header(header::ORIGIN, "http://editor.local")
        .body(Body::empty())
        .unwrap();
    let (_, _, headers) = call(&pinned, req).await;
    assert_eq!(headers[header::ACCESS_CONTROL_ALLOW_ORIGIN], "http://editor.local");
    assert!(cors(Some("bad\norigin")).is_err());
}

#[tokio::test]
async fn warm_requests_are_fast() {
    let app = app(AppState::with_model(model(SkipPosition::P2, LabelMode::Au)));
    let req = json!({"image": face_b64(), "label": au_label()});
    call(&app, post(req.clone())).await;
    let mut times = Vec::new();
    for _ in 0..10 {
        let start = Instant::now();
        let (status, _, _) = call(&app, post(req.clone())).await;
        assert_eq!(status, StatusCode::OK);
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let median = times[times.len() / 2];
    assert!(median < 200.0, "median warm latency {median:.1} ms");
}
