//! In-process HTTP test doubles for the remote services.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};

pub async fn spawn(router: Router) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router).await.unwrap() });
    format!("http://{addr}")
}

/// Spreadsheet service: two sheets with `append` and `rows` endpoints.
#[derive(Default)]
pub struct Sheet {
    pub token: String,
    pub log: Mutex<Vec<Value>>,
    pub goals: Mutex<Vec<Value>>,
    pub fail_next: AtomicU32,
}

impl Sheet {
    fn check(&self, headers: &HeaderMap) -> Result<(), StatusCode> {
        if self.fail_next.load(Ordering::SeqCst) > 0 {
            self.fail_next.fetch_sub(1, Ordering::SeqCst);
            return Err(StatusCode::SERVICE_UNAVAILABLE);
        }
        let expected = format!("Bearer {}", self.token);
        match headers.get("authorization").and_then(|v| v.to_str().ok()) {
            Some(v) if v == expected => Ok(()),
            _ => Err(StatusCode::UNAUTHORIZED),
        }
    }
}

pub async fn spawn_sheet(token: &str) -> (String, Arc<Sheet>) {
    let sheet = Arc::new(Sheet {
        token: token.into(),
        ..Default::default()
    });
    async fn append(
        State((s, goals)): State<(Arc<Sheet>, bool)>,
        headers: HeaderMap,
        Json(row): Json<Value>,
    ) -> StatusCode {
        if let Err(code) = s.check(&headers) {
            return code;
        }
        let sheet = if goals { &s.goals } else { &s.log };
        sheet.lock().unwrap().push(row);
        StatusCode::OK
    }
    async fn rows(State((s, goals)): State<(Arc<Sheet>, bool)>, headers: HeaderMap) -> Response {
        if let Err(code) = s.check(&headers) {
            return code.into_response();
        }
        let sheet = if goals { &s.goals } else { &s.log };
        Json(Value::Array(sheet.lock().unwrap().clone())).into_response()
    }
    let log = Router::new()
        .route("/append", post(append))
        .route("/rows", get(rows))
        .with_state((sheet.clone(), false));
    let goals = Router::new()
        .route("/goals/append", post(append))
        .route("/goals/rows", get(rows))
        .with_state((sheet.clone(), true));
    (spawn(log.merge(goals)).await, sheet)
}

/// Nutrient-analysis API keyed by food label; per-serving values scaled by
/// the leading quantity of the ingredient line.
pub struct NutritionApi {
    pub table: BTreeMap<String, [f64; 5]>,
    pub hits: AtomicU64,
    pub fail_next: AtomicU32,
    pub last_params: Mutex<HashMap<String, String>>,
}

pub async fn spawn_nutrition_api(table: &[(&str, [f64; 5])]) -> (String, Arc<NutritionApi>) {
    let api = Arc::new(NutritionApi {
        table: table.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        hits: AtomicU64::new(0),
        fail_next: AtomicU32::new(0),
        last_params: Mutex::new(HashMap::new()),
    });
    async fn handler(State(api): State<Arc<NutritionApi>>, Query(q): Query<HashMap<String, String>>) -> Response {
        api.hits.fetch_add(1, Ordering::SeqCst);
        *api.last_params.lock().unwrap() = q.clone();
        if api.fail_next.load(Ordering::SeqCst) > 0 {
            api.fail_next.fetch_sub(1, Ordering::SeqCst);
            return StatusCode::SERVICE_UNAVAILABLE.into_response();
        }
        if q.get("app_key").map(String::as_str) != Some("key") {
            return StatusCode::UNAUTHORIZED.into_response();
        }
        let ingr = q.get("ingr").cloned().unwrap_or_default();
        let Some((qty, label)) = ingr
            .split_once(" serving ")
            .and_then(|(n, l)| n.parse::<f64>().ok().map(|n| (n, l.to_owned())))
        else {
            return StatusCode::UNPROCESSABLE_ENTITY.into_response();
        };
        if label == "gone" {
            return StatusCode::NOT_FOUND.into_response();
        }
        match api.table.get(&label) {
            None => Json(json!({"calories": 0, "totalNutrients": {}})).into_response(),
            Some(v) => {
                let n = |i: usize, unit: &str| json!({"quantity": v[i] * qty, "unit": unit});
                Json(json!({
                    "uri": "http://www.example.com/ontologies/analysis",
                    "calories": v[0] * qty,
                    "totalWeight": 100.0 * qty,
                    "totalNutrients": {
                        "ENERC_KCAL": n(0, "kcal"),
                        "FAT": n(1, "g"),
                        "PROCNT": n(2, "g"),
                        "CHOCDF": n(3, "g"),
                        "FIBTG": n(4, "g"),
                        "SUGAR": {"quantity": 1.0, "unit": "g"}
                    }
                }))
                .into_response()
            }
        }
    }
    let router = Router::new()
        .route("/api/nutrition-data", get(handler))
        .with_state(api.clone());
    (spawn(router).await, api)
}

/// Recipe-search API serving a fixed set of documents.
pub struct RecipeApi {
    pub documents: Vec<Value>,
    pub hits: AtomicU64,
    pub fail_next: AtomicU32,
    pub last_query: Mutex<Vec<(String, String)>>,
}

pub async fn spawn_recipe_api(documents: Vec<Value>) -> (String, Arc<RecipeApi>) {
    let api = Arc::new(RecipeApi {
        documents,
        hits: AtomicU64::new(0),
        fail_next: AtomicU32::new(0),
        last_query: Mutex::new(Vec::new()),
    });
    async fn handler(State(api): State<Arc<RecipeApi>>, Query(q): Query<Vec<(String, String)>>) -> Response {
        api.hits.fetch_add(1, Ordering::SeqCst);
        *api.last_query.lock().unwrap() = q.clone();
        if api.fail_next.load(Ordering::SeqCst) > 0 {
            api.fail_next.fetch_sub(1, Ordering::SeqCst);
            return StatusCode::BAD_GATEWAY.into_response();
        }
        let hits: Vec<Value> = api.documents.iter().map(|d| json!({"recipe": d})).collect();
        Json(json!({"from": 1, "to": hits.len(), "count": hits.len(), "hits": hits})).into_response()
    }
    let router = Router::new()
        .route("/api/recipes/v2", get(handler))
        .with_state(api.clone());
    (spawn(router).await, api)
}

pub fn recipe_doc(id: &str, servings: Option<f64>, totals: [f64; 5], health: &[&str]) -> Value {
    let n = |i: usize| json!({"quantity": totals[i], "unit": if i == 0 { "kcal" } else { "g" }});
    let mut doc = json!({
        "uri": format!("http://www.example.com/ontologies/recipe#recipe_{id}"),
        "label": format!("Recipe {id}"),
        "totalNutrients": {"ENERC_KCAL": n(0), "FAT": n(1), "PROCNT": n(2), "CHOCDF": n(3), "FIBTG": n(4)},
        "healthLabels": health,
        "dietLabels": [],
        "url": format!("https://recipes.example.com/{id}")
    });
    if let Some(s) = servings {
        doc["yield"] = json!(s);
    }
    doc
}
