//! Pluggable detection backends behind one wrapper that decodes the image,
//! times the backend call, filters by confidence and applies class-aware NMS.

mod model;
mod stub;

use std::sync::Arc;
use std::time::{Duration, Instant};

use image::DynamicImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::Detection;
use crate::geometry::nms;

pub use model::{load_model_backend, ModelBackend};
pub use stub::{load_stub_backend, StubBackend, SyntheticLatency};

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.25;
pub const DEFAULT_NMS_THRESHOLD: f64 = 0.45;
pub const DEFAULT_MAX_URL_BYTES: usize = 10 * 1024 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum DetectError {
    #[error("video input is not supported; send a single PNG or JPEG image")]
    VideoUnsupported,
    #[error("undecodable image: {0}")]
    Undecodable(String),
    #[error("fetching {url}: {message}")]
    Url { url: String, message: String },
    #[error("image at {url} exceeds the {limit}-byte limit")]
    TooLarge { url: String, limit: usize },
    #[error("backend `{backend}` failed: {message}")]
    Backend { backend: String, message: String },
    #[error("threshold `{name}` = {value} outside (0, 1]")]
    Threshold { name: &'static str, value: f64 },
    #[error("{what} not found: {path}")]
    MissingFile { what: &'static str, path: String },
    #[error("vocabulary has {vocabulary} labels but the model head predicts {model} classes")]
    VocabularyMismatch { vocabulary: usize, model: usize },
    #[error("malformed sidecar {path}: {message}")]
    Sidecar { path: String, message: String },
    #[error("{0}")]
    Unavailable(String),
}

/// What a backend declares about itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capability {
    pub name: String,
    pub vocabulary: Vec<String>,
    /// Network input `(width, height)` when the backend resizes images.
    pub input_size: Option<(u32, u32)>,
}

/// A decoded image plus the identifiers backends may key on.
#[derive(Debug, Clone)]
pub struct ImageInput {
    pub image: DynamicImage,
    pub sha256: String,
    /// File name the image arrived with, when known.
    pub name_hint: Option<String>,
}

pub trait DetectorBackend: Send + Sync {
    fn capability(&self) -> &Capability;
    /// Raw detections, before confidence filtering and NMS.
    fn detect_raw(&self, input: &ImageInput) -> Result<Vec<Detection>, DetectError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormatTag {
    Png,
    Jpeg,
}

#[derive(Debug, Clone)]
pub enum ImageSource {
    Bytes {
        data: Vec<u8>,
        format: Option<ImageFormatTag>,
        name: Option<String>,
    },
    Url(String),
}

#[derive(Debug, Clone)]
pub struct DetectRequest {
    pub source: ImageSource,
    pub confidence_threshold: f64,
    pub nms_threshold: f64,
}

impl DetectRequest {
    pub fn new(source: ImageSource) -> Self {
        Self {
            source,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            nms_threshold: DEFAULT_NMS_THRESHOLD,
        }
    }

    fn validate(&self) -> Result<(), DetectError> {
        for (name, value) in [
            ("confidence_threshold", self.confidence_threshold),
            ("nms_threshold", self.nms_threshold),
        ] {
            if !(value > 0.0 && value <= 1.0) {
                return Err(DetectError::Threshold { name, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub detections: Vec<Detection>,
    pub detect_seconds: f64,
    pub backend: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Sniffed container type of an upload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sniffed {
    Png,
    Jpeg,
    Video,
    Unknown,
}

pub fn sniff(bytes: &[u8]) -> Sniffed {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        Sniffed::Png
    } else if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
        Sniffed::Jpeg
    } else if bytes.len() >= 12 && &bytes[4..8] == b"ftyp"
        || bytes.starts_with(&[0x1A, 0x45, 0xDF, 0xA3])
        || bytes.len() >= 12 && &bytes[0..4] == b"RIFF" && &bytes[8..12] == b"AVI "
        || bytes.starts_with(&[0x00, 0x00, 0x01, 0xBA])
    {
        Sniffed::Video
    } else {
        Sniffed::Unknown
    }
}

/// Decodes a PNG or JPEG upload. Videos get their own error.
pub fn decode_image(data: &[u8], name: Option<String>) -> Result<ImageInput, DetectError> {
    let format = match sniff(data) {
        Sniffed::Png => image::ImageFormat::Png,
        Sniffed::Jpeg => image::ImageFormat::Jpeg,
        Sniffed::Video => return Err(DetectError::VideoUnsupported),
        Sniffed::Unknown => return Err(DetectError::Undecodable("not a PNG or JPEG image".into())),
    };
    let image =
        image::load_from_memory_with_format(data, format).map_err(|e| DetectError::Undecodable(e.to_string()))?;
    Ok(ImageInput {
        image,
        sha256: sha256_hex(data),
        name_hint: name,
    })
}

/// Runs `backend` on an already-decoded image and applies the shared
/// post-processing. `detect_seconds` covers the backend call only.
pub fn detect_decoded(
    input: &ImageInput,
    backend: &dyn DetectorBackend,
    confidence_threshold: f64,
    nms_threshold: f64,
) -> Result<DetectResponse, DetectError> {
    let name = backend.capability().name.clone();
    let started = Instant::now();
    let raw = backend.detect_raw(input).map_err(|e| match e {
        DetectError::Backend { .. } => e,
        other => DetectError::Backend {
            backend: name.clone(),
            message: other.to_string(),
        },
    })?;
    let detect_seconds = started.elapsed().as_secs_f64();
    let kept: Vec<Detection> = raw
        .into_iter()
        .filter(|d| d.confidence >= confidence_threshold)
        .collect();
    Ok(DetectResponse {
        detections: nms(&kept, nms_threshold),
        detect_seconds,
        backend: name,
    })
}

/// Synchronous variant for in-memory bytes.
pub fn detect_bytes(
    data: &[u8],
    name: Option<String>,
    backend: &dyn DetectorBackend,
    confidence_threshold: f64,
    nms_threshold: f64,
) -> Result<DetectResponse, DetectError> {
    let input = decode_image(data, name)?;
    detect_decoded(&input, backend, confidence_threshold, nms_threshold)
}

/// Fetches remote images with a size cap and a content-type allowlist.
#[derive(Debug, Clone)]
pub struct UrlFetcher {
    client: reqwest::Client,
    pub max_bytes: usize,
}

impl UrlFetcher {
    pub fn new(max_bytes: usize, timeout: Duration) -> Result<Self, DetectError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| DetectError::Unavailable(e.to_string()))?;
        Ok(Self { client, max_bytes })
    }

    pub async fn fetch(&self, url: &str) -> Result<(Vec<u8>, Option<String>), DetectError> {
        let url_err = |message: String| DetectError::Url {
            url: url.to_owned(),
            message,
        };
        let parsed = reqwest::Url::parse(url).map_err(|e| url_err(e.to_string()))?;
        if !matches!(parsed.scheme(), "http" | "https") {
            return Err(url_err(format!("unsupported scheme `{}`", parsed.scheme())));
        }
        let mut resp = self
            .client
            .get(parsed.clone())
            .send()
            .await
            .map_err(|e| url_err(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(url_err(format!("HTTP {}", resp.status())));
        }
        let content_type = resp
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .map(|v| v.split(';').next().unwrap_or_default().trim().to_ascii_lowercase())
            .unwrap_or_default();
        if content_type.starts_with("video/") {
            return Err(DetectError::VideoUnsupported);
        }
        if !matches!(content_type.as_str(), "image/png" | "image/jpeg" | "image/jpg") {
            return Err(url_err(format!("content type `{content_type}` not allowed")));
        }
        if resp.content_length().is_some_and(|n| n as usize > self.max_bytes) {
            return Err(DetectError::TooLarge {
                url: url.to_owned(),
                limit: self.max_bytes,
            });
        }
        let mut body = Vec::new();
        while let Some(chunk) = resp.chunk().await.map_err(|e| url_err(e.to_string()))? {
            body.extend_from_slice(&chunk);
            if body.len() > self.max_bytes {
                return Err(DetectError::TooLarge {
                    url: url.to_owned(),
                    limit: self.max_bytes,
                });
            }
        }
        let name = parsed
            .path_segments()
            .and_then(|mut s| s.next_back())
            .filter(|s| !s.is_empty())
            .map(str::to_owned);
        Ok((body, name))
    }
}

/// Full detection: resolves the image source (fetching URLs), then runs the
/// backend on a blocking thread.
pub async fn detect(
    request: DetectRequest,
    backend: Arc<dyn DetectorBackend>,
    fetcher: &UrlFetcher,
) -> Result<DetectResponse, DetectError> {
    request.validate()?;
    let (data, name) = match request.source {
        ImageSource::Bytes { data, name, .. } => (data, name),
        ImageSource::Url(url) => fetcher.fetch(&url).await?,
    };
    let (conf, nms_t) = (request.confidence_threshold, request.nms_threshold);
    tokio::task::spawn_blocking(move || detect_bytes(&data, name, backend.as_ref(), conf, nms_t))
        .await
        .map_err(|e| DetectError::Unavailable(format!("detector task failed: {e}")))?
}
