//! HTTP front end over a shared read-only [`Synthesizer`].

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use melsynth::dsp::{wav_bytes, SAMPLE_RATE};
use melsynth::matrix::Matrix;
use melsynth::synth::{
    EmbeddingSpec, ErrorClass, MidiSource, SynthError, SynthesisRequest, SynthesisResponse, Synthesizer, Vocoder,
};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::Semaphore;
use tower_http::services::ServeDir;

use crate::commands::{GRID_CENTROID, GRID_ENERGY, GRID_META};

pub const MATRIX_MIME: &str = "application/x-melsynth-matrix";
pub const WAV_MIME: &str = "audio/wav";

/// Precomputed grid maps loaded from the checkpoint directory.
pub struct GridMaps {
    pub centroid: Matrix,
    pub energy: Matrix,
    pub meta: serde_json::Value,
}

impl GridMaps {
    /// `None` when `eval grid` has not been run for this directory.
    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let paths = [GRID_CENTROID, GRID_ENERGY, GRID_META].map(|f| dir.join(f));
        if !paths.iter().all(|p| p.exists()) {
            return Ok(None);
        }
        let read_matrix = |p: &PathBuf| -> Result<Matrix> {
            let file = std::fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
            Ok(Matrix::read_text(std::io::BufReader::new(file))?)
        };
        Ok(Some(Self {
            centroid: read_matrix(&paths[0])?,
            energy: read_matrix(&paths[1])?,
            meta: serde_json::from_str(&std::fs::read_to_string(&paths[2])?)?,
        }))
    }
}

pub struct AppState {
    pub synth: Synthesizer,
    pub grid: Option<GridMaps>,
    /// Caps concurrent WaveNet sampling streams.
    pub wavenet_streams: Semaphore,
    pub checkpoint_dir: Option<PathBuf>,
}

pub fn router(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/embeddings", get(embeddings))
        .route("/grid", get(grid))
        .route("/synthesize", post(synthesize))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `host:port` and serves until the process ends.
pub async fn serve(state: AppState, host: &str, port: u16, static_dir: Option<&Path>) -> Result<()> {
    let addr: SocketAddr = format!("{host}:{port}").parse().with_context(|| format!("bad address {host}:{port}"))?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("cannot listen on {addr}"))?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state), static_dir)).await?;
    Ok(())
}

fn error_response(status: StatusCode, message: String, extra: serde_json::Value) -> Response {
    let mut body = json!({ "error": message });
    if let (Some(b), serde_json::Value::Object(e)) = (body.as_object_mut(), extra) {
        b.extend(e);
    }
    (status, Json(body)).into_response()
}

fn synth_error(e: SynthError) -> Response {
    let status = match e.class() {
        ErrorClass::BadRequest => StatusCode::BAD_REQUEST,
        ErrorClass::Unavailable => StatusCode::SERVICE_UNAVAILABLE,
        ErrorClass::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    };
    let extra = match &e {
        SynthError::Midi(m) => json!({ "offset": m.offset }),
        _ => json!({}),
    };
    error_response(status, e.to_string(), extra)
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "mel2mel": state.synth.mel2mel().map(|m| m.hyperparameters()),
        "wavenet": state.synth.has_wavenet(),
        "grid": state.grid.is_some(),
        "checkpoints": state.checkpoint_dir.as_ref().map(|d| d.display().to_string()),
    }))
}

async fn embeddings(State(state): State<Arc<AppState>>) -> Response {
    let Some(model) = state.synth.mel2mel() else {
        return synth_error(SynthError::MissingCheckpoint("mel2mel"));
    };
    let instruments: Vec<_> = state
        .synth
        .instruments()
        .into_iter()
        .enumerate()
        .map(|(id, (name, coords))| json!({ "id": id, "name": name, "coords": coords }))
        .collect();
    Json(json!({ "dim": model.config.embed_dim, "instruments": instruments })).into_response()
}

#[derive(Debug, Deserialize)]
struct GridQuery {
    map: String,
}

fn wants(headers: &HeaderMap, mime: &str) -> bool {
    headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.split(',').any(|m| m.trim().starts_with(mime)))
}

fn binary(mime: &'static str, bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, HeaderValue::from_static(mime))], bytes).into_response()
}

async fn grid(State(state): State<Arc<AppState>>, Query(q): Query<GridQuery>, headers: HeaderMap) -> Response {
    let Some(maps) = &state.grid else {
        return error_response(StatusCode::NOT_FOUND, "no precomputed grid; run `eval grid` first".into(), json!({}));
    };
    let values = match q.map.as_str() {
        "centroid" => &maps.centroid,
        "energy" => &maps.energy,
        other => {
            return error_response(
                StatusCode::BAD_REQUEST,
                format!("unknown map `{other}`, expected centroid or energy"),
                json!({}),
            )
        }
    };
    if wants(&headers, MATRIX_MIME) {
        return binary(MATRIX_MIME, values.to_dump_bytes());
    }
    let rows: Vec<&[f64]> = (0..values.rows()).map(|r| values.row(r)).collect();
    Json(json!({
        "map": q.map,
        "resolution": maps.meta["resolution"],
        "bounds": maps.meta["bounds"],
        "instruments": maps.meta["instruments"],
        "values": rows,
    }))
    .into_response()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorphBody {
    pub from: usize,
    pub to: usize,
    pub lambda: f64,
}

/// JSON body of `POST /synthesize`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesizeBody {
    /// Standard MIDI File, base64; the middle-C probe when absent.
    pub midi_base64: Option<String>,
    pub instrument: Option<usize>,
    pub embedding: Option<Vec<f64>>,
    pub morph: Option<MorphBody>,
    /// `preview` (default), `wavenet`, or `none` for Mel only.
    pub vocoder: Option<String>,
    pub temperature: Option<f64>,
    pub seed: Option<u64>,
}

impl SynthesizeBody {
    pub fn into_request(self) -> Result<SynthesisRequest, SynthError> {
        let midi = match self.midi_base64 {
            Some(text) => MidiSource::Smf(
                BASE64
                    .decode(text.trim())
                    .map_err(|e| SynthError::Request(format!("midi_base64: {e}")))?,
            ),
            None => MidiSource::Probe,
        };
        let embedding = match (self.instrument, self.embedding, self.morph) {
            (Some(id), None, None) => EmbeddingSpec::Instrument(id),
            (None, Some(v), None) => EmbeddingSpec::Vector(v),
            (None, None, Some(m)) => EmbeddingSpec::Morph {
                from: m.from,
                to: m.to,
                lambda: m.lambda,
            },
            _ => {
                return Err(SynthError::Request(
                    "give exactly one of instrument, embedding or morph".into(),
                ))
            }
        };
        let vocoder = match self.vocoder.as_deref() {
            None => Some(Vocoder::Preview),
            Some("none") => None,
            Some(v) => Some(v.parse()?),
        };
        Ok(SynthesisRequest {
            midi,
            embedding,
            vocoder,
            temperature: self.temperature.unwrap_or(1.0),
            seed: self.seed.unwrap_or(0),
        })
    }
}

fn server_timing(r: &SynthesisResponse) -> HeaderValue {
    let t = r.timings;
    let text = format!(
        "input;dur={:.3}, mel;dur={:.3}, vocoder;dur={:.3}",
        t.input_ms, t.mel_ms, t.vocoder_ms
    );
    HeaderValue::from_str(&text).unwrap_or_else(|_| HeaderValue::from_static(""))
}

async fn synthesize(State(state): State<Arc<AppState>>, headers: HeaderMap, body: axum::body::Bytes) -> Response {
    let parsed: SynthesizeBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, format!("malformed request body: {e}"), json!({})),
    };
    let request = match parsed.into_request() {
        Ok(r) => r,
        Err(e) => return synth_error(e),
    };
    let _permit = if request.vocoder == Some(Vocoder::Wavenet) {
        match state.wavenet_streams.acquire().await {
            Ok(p) => Some(p),
            Err(e) => return error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), json!({})),
        }
    } else {
        None
    };
    let worker = Arc::clone(&state);
    let result = tokio::task::spawn_blocking(move || worker.synth.synthesize(&request)).await;
    let response = match result {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => return synth_error(e),
        Err(e) => return error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), json!({})),
    };
    let timing = server_timing(&response);
    let mut out = if wants(&headers, WAV_MIME) {
        match &response.waveform {
            Some(w) => binary(WAV_MIME, wav_bytes(w)),
            None => return error_response(StatusCode::NOT_ACCEPTABLE, "no waveform was requested".into(), json!({})),
        }
    } else if wants(&headers, MATRIX_MIME) {
        binary(MATRIX_MIME, response.mel.to_dump_bytes())
    } else {
        Json(json!({
            "frames": response.mel.cols(),
            "sample_rate": SAMPLE_RATE,
            "mel": BASE64.encode(response.mel.to_dump_bytes()),
            "wav": response.waveform.as_ref().map(|w| BASE64.encode(wav_bytes(w))),
        }))
        .into_response()
    };
    out.headers_mut().insert("server-timing", timing);
    out
}
