#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use platescope_server::{router, AppState, Secrets, ServiceConfig};
use serde_json::Value;
use tower::ServiceExt;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn meal_png(stem: &str) -> Vec<u8> {
    std::fs::read(fixtures().join("meals").join(format!("{stem}.png"))).unwrap()
}

pub struct TestApp {
    pub dir: tempfile::TempDir,
    pub state: AppState,
    pub cors: Vec<String>,
}

pub fn base_config(dir: &Path) -> ServiceConfig {
    let mut c = ServiceConfig::default();
    c.detector.fixture_dir = Some(fixtures().join("meals"));
    c.nutrition.table = Some(fixtures().join("nutrition.csv"));
    c.recipes.corpus = Some(fixtures().join("recipes.jsonl"));
    c.store.path = Some(dir.join("food_log.csv"));
    c
}

impl TestApp {
    pub fn new() -> Self {
        Self::with(|_| {})
    }

    pub fn with(edit: impl FnOnce(&mut ServiceConfig)) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut config = base_config(dir.path());
        edit(&mut config);
        let state = AppState::from_config(&config, &Secrets::default()).unwrap();
        Self {
            dir,
            state,
            cors: config.cors_origins,
        }
    }

    pub fn router(&self) -> Router {
        router(self.state.clone(), &self.cors, None)
    }

    pub async fn call(&self, req: Request<Body>) -> (StatusCode, Value) {
        let resp = self.router().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|e| panic!("non-JSON body ({e}): {bytes:?}"))
        };
        (status, value)
    }

    pub async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.call(Request::get(uri).body(Body::empty()).unwrap()).await
    }

    pub async fn put_json(&self, uri: &str, body: &Value) -> (StatusCode, Value) {
        self.call(
            Request::put(uri)
                .header(header::CONTENT_TYPE, "application/json")
                .body(Body::from(body.to_string()))
                .unwrap(),
        )
        .await
    }

    pub async fn post_json(&self, uri: &str, body: &Value) -> (StatusCode, Value) {
        self.call(
            Request::post(uri)
                .header(header::CONTENT_TYPE, "application/json")
                .body(Body::from(body.to_string()))
                .unwrap(),
        )
        .await
    }

    pub async fn upload(&self, parts: &[Part<'_>]) -> (StatusCode, Value) {
        let (content_type, body) = multipart(parts);
        self.call(
            Request::post("/api/meals")
                .header(header::CONTENT_TYPE, content_type)
                .body(Body::from(body))
                .unwrap(),
        )
        .await
    }

    pub async fn upload_image(&self, file_name: &str, data: &[u8]) -> (StatusCode, Value) {
        self.upload(&[Part::file("image", file_name, "image/png", data)]).await
    }

    pub fn log_csv(&self) -> String {
        std::fs::read_to_string(self.dir.path().join("food_log.csv")).unwrap_or_default()
    }
}

pub struct Part<'a> {
    pub name: &'a str,
    pub file_name: Option<&'a str>,
    pub content_type: Option<&'a str>,
    pub data: &'a [u8],
}

impl<'a> Part<'a> {
    pub fn file(name: &'a str, file_name: &'a str, content_type: &'a str, data: &'a [u8]) -> Self {
        Self {
            name,
            file_name: Some(file_name),
            content_type: Some(content_type),
            data,
        }
    }

    pub fn text(name: &'a str, value: &'a str) -> Self {
        Self {
            name,
            file_name: None,
            content_type: None,
            data: value.as_bytes(),
        }
    }
}

const BOUNDARY: &str = "----platescope-test-boundary";

pub fn multipart(parts: &[Part<'_>]) -> (String, Vec<u8>) {
    let mut body = Vec::new();
    for p in parts {
        body.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        let mut disposition = format!("Content-Disposition: form-data; name=\"{}\"", p.name);
        if let Some(f) = p.file_name {
            disposition.push_str(&format!("; filename=\"{f}\""));
        }
        body.extend_from_slice(disposition.as_bytes());
        body.extend_from_slice(b"\r\n");
        if let Some(ct) = p.content_type {
            body.extend_from_slice(format!("Content-Type: {ct}\r\n").as_bytes());
        }
        body.extend_from_slice(b"\r\n");
        body.extend_from_slice(p.data);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    (format!("multipart/form-data; boundary={BOUNDARY}"), body)
}

fn schema_document() -> &'static Value {
    static DOC: OnceLock<Value> = OnceLock::new();
    DOC.get_or_init(|| {
        let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas/api.schema.json")).unwrap();
        serde_json::from_str(&text).unwrap()
    })
}

/// Validates `instance` against `#/$defs/<name>` of the shipped schema file.
pub fn assert_schema(name: &str, instance: &Value) {
    let doc = schema_document();
    assert!(doc["$defs"].get(name).is_some(), "no schema named {name}");
    let schema = serde_json::json!({
        "$schema": doc["$schema"],
        "$defs": doc["$defs"],
        "$ref": format!("#/$defs/{name}"),
    });
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(instance).map(|e| format!("{e} at {}", e.instance_path())).collect();
    assert!(errors.is_empty(), "{name} schema violations: {errors:#?}\ninstance: {instance:#}");
}

/// Error responses must carry `code` and validate as `Error`.
pub fn assert_error(resp: &(StatusCode, Value), status: StatusCode, code: &str) {
    assert_eq!(resp.0, status, "{:#}", resp.1);
    assert_schema("Error", &resp.1);
    assert_eq!(resp.1["code"], code, "{:#}", resp.1);
}

/// Nutrient table parsed independently of the library.
pub fn fixture_table() -> std::collections::BTreeMap<String, [f64; 5]> {
    let text = std::fs::read_to_string(fixtures().join("nutrition.csv")).unwrap();
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            let v: Vec<f64> = cells[1..].iter().map(|c| c.parse().unwrap()).collect();
            (cells[0].to_owned(), [v[0], v[1], v[2], v[3], v[4]])
        })
        .collect()
}

pub fn profile_array(v: &Value) -> [f64; 5] {
    ["calories", "fat_g", "protein_g", "carbs_g", "fiber_g"].map(|k| v[k].as_f64().unwrap())
}
