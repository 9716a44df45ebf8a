use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use http_body_util::BodyExt;
use melsynth::data::smf::SmfWriter;
use melsynth::matrix::Matrix;
use melsynth::mel2mel::{Mel2Mel, Mel2MelConfig, Variant};
use melsynth::midi::NoteEvent;
use melsynth::synth::Synthesizer;
use melsynth::wavenet::{WaveNet, WaveNetConfig};
use melsynth_cli::service::{router, AppState, GridMaps, MATRIX_MIME, WAV_MIME};
use serde_json::{json, Value};
use tokio::sync::Semaphore;
use tower::ServiceExt;

fn model() -> Mel2Mel {
    let config = Mel2MelConfig {
        n_instruments: 3,
        embed_dim: 2,
        hidden: 6,
        lstm_units: 3,
        variant: Variant::Proposed,
    };
    Mel2Mel::new(config, 1).unwrap()
}

fn grid_maps() -> GridMaps {
    let mut centroid = Matrix::zeros(2, 2);
    centroid.set(1, 0, 440.0);
    GridMaps {
        centroid,
        energy: Matrix::zeros(2, 2),
        meta: json!({ "resolution": 2, "bounds": [0, 1, 0, 1], "instruments": [] }),
    }
}

fn app_with(wavenet: bool, grid: bool, static_dir: Option<&std::path::Path>) -> Router {
    let wn = WaveNet::new(WaveNetConfig::tiny(2), 2).unwrap();
    let state = AppState {
        synth: Synthesizer::new(Some(model()), wavenet.then_some(&wn), vec!["flute".into()]),
        grid: grid.then(grid_maps),
        wavenet_streams: Semaphore::new(1),
        checkpoint_dir: None,
    };
    router(Arc::new(state), static_dir)
}

fn app() -> Router {
    app_with(false, true, None)
}

async fn call(app: Router, req: Request<Body>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let res = app.oneshot(req).await.unwrap();
    let status = res.status();
    let headers = res.headers().clone();
    let bytes = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, headers, bytes)
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post(body: Value, accept: Option<&str>) -> Request<Body> {
    let mut b = Request::post("/synthesize").header(header::CONTENT_TYPE, "application/json");
    if let Some(a) = accept {
        b = b.header(header::ACCEPT, a);
    }
    b.body(Body::from(body.to_string())).unwrap()
}

fn json_of(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

#[tokio::test]
async fn health_reports_loaded_parts() {
    let (status, _, body) = call(app(), get("/health")).await;
    assert_eq!(status, StatusCode::OK);
    let v = json_of(&body);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["wavenet"], false);
    assert_eq!(v["grid"], true);
}

#[tokio::test]
async fn embeddings_list_every_instrument() {
    let (status, _, body) = call(app(), get("/embeddings")).await;
    assert_eq!(status, StatusCode::OK);
    let v = json_of(&body);
    assert_eq!(v["dim"], 2);
    let list = v["instruments"].as_array().unwrap();
    assert_eq!(list.len(), 3);
    assert_eq!(list[0]["name"], "flute");
    assert_eq!(list[2]["id"], 2);
    assert_eq!(list[1]["coords"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn grid_serves_json_and_binary() {
    let (status, _, body) = call(app(), get("/grid?map=centroid")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json_of(&body)["values"][1][0], 440.0);

    let req = Request::get("/grid?map=energy").header(header::ACCEPT, MATRIX_MIME).body(Body::empty()).unwrap();
    let (status, headers, body) = call(app(), req).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(headers[header::CONTENT_TYPE], MATRIX_MIME);
    assert_eq!(Matrix::read_dump(body.as_slice()).unwrap(), Matrix::zeros(2, 2));

    assert_eq!(call(app(), get("/grid?map=pitch")).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(app_with(false, false, None), get("/grid?map=energy")).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn synthesize_defaults_to_json_with_preview_audio() {
    let (status, headers, body) = call(app(), post(json!({ "instrument": 1 }), None)).await;
    assert_eq!(status, StatusCode::OK);
    assert!(headers["server-timing"].to_str().unwrap().contains("mel;dur="));
    let v = json_of(&body);
    let mel = Matrix::read_dump(BASE64.decode(v["mel"].as_str().unwrap()).unwrap().as_slice()).unwrap();
    assert_eq!(mel.rows(), 80);
    assert_eq!(v["frames"], mel.cols());
    let wav = BASE64.decode(v["wav"].as_str().unwrap()).unwrap();
    assert_eq!(&wav[..4], b"RIFF");
}

#[tokio::test]
async fn synthesize_negotiates_wav_and_matrix() {
    let notes = [NoteEvent::new(67, 90, 0.0, 0.25)];
    let midi = BASE64.encode(SmfWriter::from_notes(&notes, 120.0, 480).to_bytes());
    let body = json!({ "midi_base64": midi, "embedding": [0.1, -0.2] });
    let (status, headers, wav) = call(app(), post(body.clone(), Some(WAV_MIME))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(headers[header::CONTENT_TYPE], WAV_MIME);
    assert_eq!(&wav[8..12], b"WAVE");

    let mel_only = json!({ "midi_base64": midi, "embedding": [0.1, -0.2], "vocoder": "none" });
    let (status, _, dump) = call(app(), post(mel_only.clone(), Some(MATRIX_MIME))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(Matrix::read_dump(dump.as_slice()).unwrap().rows(), 80);
    assert_eq!(call(app(), post(mel_only, Some(WAV_MIME))).await.0, StatusCode::NOT_ACCEPTABLE);
}

#[tokio::test]
async fn morph_endpoint_matches_instrument() {
    let by_id = call(app(), post(json!({ "instrument": 2, "vocoder": "none" }), Some(MATRIX_MIME))).await.2;
    let morph = json!({ "morph": { "from": 0, "to": 2, "lambda": 1.0 }, "vocoder": "none" });
    assert_eq!(call(app(), post(morph, Some(MATRIX_MIME))).await.2, by_id);
}

#[tokio::test]
async fn bad_requests_are_rejected() {
    let bad_midi = json!({ "midi_base64": BASE64.encode(b"MThd\0\0\0\x06\0\0"), "instrument": 0 });
    let (status, _, body) = call(app(), post(bad_midi, None)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let v = json_of(&body);
    assert!(v["error"].as_str().unwrap().contains("MIDI parse error at byte"));
    assert!(v["offset"].is_u64());

    for body in [
        json!({ "instrument": 0, "embedding": [0.0, 0.0] }),
        json!({}),
        json!({ "instrument": 9 }),
        json!({ "embedding": [0.0] }),
        json!({ "instrument": 0, "vocoder": "griffin" }),
        json!({ "instrument": 0, "volume": 3 }),
    ] {
        assert_eq!(call(app(), post(body, None)).await.0, StatusCode::BAD_REQUEST);
    }
    let req = Request::post("/synthesize").body(Body::from("{")).unwrap();
    assert_eq!(call(app(), req).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn wavenet_requests_need_a_checkpoint() {
    let body = json!({ "instrument": 0, "vocoder": "wavenet" });
    assert_eq!(call(app(), post(body, None)).await.0, StatusCode::SERVICE_UNAVAILABLE);

    let notes = [NoteEvent::new(60, 90, 0.0, 0.02)];
    let midi = BASE64.encode(SmfWriter::from_notes(&notes, 120.0, 480).to_bytes());
    let body = json!({ "midi_base64": midi, "instrument": 0, "vocoder": "wavenet", "seed": 3 });
    let first = call(app_with(true, false, None), post(body.clone(), Some(WAV_MIME))).await;
    let second = call(app_with(true, false, None), post(body, Some(WAV_MIME))).await;
    assert_eq!(first.0, StatusCode::OK);
    assert_eq!(first.2, second.2);
}

#[tokio::test]
async fn static_files_are_served_at_the_root() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<h1>timbre</h1>").unwrap();
    let app = app_with(false, false, Some(dir.path()));
    let (status, _, body) = call(app.clone(), get("/index.html")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"<h1>timbre</h1>");
    assert_eq!(call(app.clone(), get("/")).await.0, StatusCode::OK);
    assert_eq!(call(app, get("/health")).await.0, StatusCode::OK);
}
