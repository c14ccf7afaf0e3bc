use std::collections::BTreeSet;

use axum::extract::{FromRequest, Multipart, RawQuery, Request, State};
use axum::http::{header, StatusCode};
use axum::Json;
use chrono::{DateTime, FixedOffset, NaiveDate, Utc};
use futures_util::future::join_all;
use platescope_core::detect::{self, sha256_hex, DetectRequest, ImageSource};
use platescope_core::nutrition::{aggregate_profiles, detections_to_queries, NutritionError};
use platescope_core::recommend::{
    calculate_goals, compute_remaining, normalize_tag, recommend, RecipeQuery, RecommendationRequest, ScoredRecipe,
};
use platescope_core::store::{daily_totals, parse_offset, read_log, FoodLogEntry, ProfileInputs, StoreError, UserGoals};
use platescope_core::{Detection, NutrientProfile};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::ApiError;
use crate::state::{AppState, Modes};

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Ok,
    UnknownFood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MealItem {
    pub label: String,
    pub quantity: u32,
    pub status: ItemStatus,
    pub nutrients: NutrientProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MealAnalysis {
    pub image_id: String,
    pub timestamp: DateTime<Utc>,
    pub backend: String,
    pub detect_seconds: f64,
    pub detections: Vec<Detection>,
    pub items: Vec<MealItem>,
    pub total: NutrientProfile,
    /// Number of food-log entries appended.
    pub logged: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MealUrlRequest {
    image_url: String,
    #[serde(default)]
    image_id: Option<String>,
    #[serde(default)]
    confidence_threshold: Option<f64>,
    #[serde(default)]
    nms_threshold: Option<f64>,
}

struct MealUpload {
    data: Vec<u8>,
    file_name: Option<String>,
    image_id: Option<String>,
    confidence_threshold: Option<f64>,
    nms_threshold: Option<f64>,
}

pub async fn post_meal(State(state): State<AppState>, request: Request) -> ApiResult<MealAnalysis> {
    let content_type = request
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or_default()
        .to_ascii_lowercase();
    let upload = if content_type.starts_with("multipart/form-data") {
        let multipart = Multipart::from_request(request, &state)
            .await
            .map_err(|r| ApiError::bad_request("invalid_multipart", r.body_text()))?;
        read_multipart(multipart).await?
    } else if content_type.starts_with("application/json") {
        let Json(body) = Json::<MealUrlRequest>::from_request(request, &state).await?;
        let (data, file_name) = state.fetcher.fetch(&body.image_url).await?;
        MealUpload {
            data,
            file_name,
            image_id: body.image_id,
            confidence_threshold: body.confidence_threshold,
            nms_threshold: body.nms_threshold,
        }
    } else {
        return Err(ApiError::new(
            StatusCode::UNSUPPORTED_MEDIA_TYPE,
            "unsupported_media_type",
            "send multipart/form-data with an `image` part, or JSON with `image_url`",
        ));
    };
    analyze_meal(&state, upload).await.map(Json)
}

async fn read_multipart(mut multipart: Multipart) -> Result<MealUpload, ApiError> {
    let mut upload = MealUpload {
        data: Vec::new(),
        file_name: None,
        image_id: None,
        confidence_threshold: None,
        nms_threshold: None,
    };
    let mut seen_image = false;
    while let Some(field) = multipart.next_field().await? {
        let name = field.name().unwrap_or_default().to_owned();
        match name.as_str() {
            "image" => {
                if seen_image {
                    return Err(ApiError::bad_request("invalid_multipart", "more than one `image` part"));
                }
                seen_image = true;
                if field.content_type().is_some_and(|ct| ct.to_ascii_lowercase().starts_with("video/")) {
                    return Err(detect::DetectError::VideoUnsupported.into());
                }
                upload.file_name = field.file_name().map(str::to_owned);
                upload.data = field.bytes().await?.to_vec();
            }
            "image_id" => upload.image_id = Some(field.text().await?),
            "confidence_threshold" => upload.confidence_threshold = Some(number_field(&name, &field.text().await?)?),
            "nms_threshold" => upload.nms_threshold = Some(number_field(&name, &field.text().await?)?),
            other => {
                return Err(ApiError::bad_request("invalid_multipart", format!("unexpected part `{other}`")));
            }
        }
    }
    if !seen_image {
        return Err(ApiError::bad_request("missing_image", "multipart body has no `image` part"));
    }
    Ok(upload)
}

fn number_field(name: &str, text: &str) -> Result<f64, ApiError> {
    text.trim()
        .parse()
        .map_err(|_| ApiError::bad_request("invalid_parameter", format!("`{name}` must be a number, got `{text}`")))
}

const MAX_IMAGE_ID_LEN: usize = 128;

fn valid_image_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= MAX_IMAGE_ID_LEN
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

/// Client-supplied id, else the upload's file stem, else a content hash.
fn resolve_image_id(given: Option<String>, file_name: Option<&str>, data: &[u8]) -> Result<String, ApiError> {
    if let Some(id) = given {
        if !valid_image_id(&id) {
            return Err(ApiError::bad_request(
                "invalid_parameter",
                format!("image_id must be 1-{MAX_IMAGE_ID_LEN} characters of [A-Za-z0-9._-]"),
            ));
        }
        return Ok(id);
    }
    let stem = file_name
        .map(|n| n.rsplit(['/', '\\']).next().unwrap_or(n))
        .map(|base| base.rsplit_once('.').map_or(base, |(s, _)| s))
        .filter(|s| valid_image_id(s));
    Ok(match stem {
        Some(s) => s.to_owned(),
        None => format!("img-{}", &sha256_hex(data)[..12]),
    })
}

async fn analyze_meal(state: &AppState, upload: MealUpload) -> Result<MealAnalysis, ApiError> {
    let image_id = resolve_image_id(upload.image_id, upload.file_name.as_deref(), &upload.data)?;
    let request = DetectRequest {
        source: ImageSource::Bytes {
            data: upload.data,
            format: None,
            name: upload.file_name,
        },
        confidence_threshold: upload.confidence_threshold.unwrap_or(state.confidence_threshold),
        nms_threshold: upload.nms_threshold.unwrap_or(state.nms_threshold),
    };
    let detected = detect::detect(request, state.detector.clone(), &state.fetcher).await?;

    let queries = detections_to_queries(&detected.detections);
    let answers = join_all(queries.iter().map(|q| state.nutrition.query(q))).await;
    let mut items = Vec::with_capacity(queries.len());
    for (query, answer) in queries.into_iter().zip(answers) {
        let (status, nutrients) = match answer {
            Ok(p) => (ItemStatus::Ok, p),
            Err(NutritionError::UnknownFood(_)) => (ItemStatus::UnknownFood, NutrientProfile::ZERO),
            // nothing has been written yet, so the log is untouched
            Err(e) => return Err(e.into()),
        };
        items.push(MealItem {
            label: query.label,
            quantity: query.quantity,
            status,
            nutrients,
        });
    }
    let total = aggregate_profiles(items.iter().map(|i| &i.nutrients));

    let timestamp = state.now();
    let entries: Vec<FoodLogEntry> = items
        .iter()
        .map(|i| FoodLogEntry {
            timestamp,
            image_id: image_id.clone(),
            label: i.label.clone(),
            quantity: i.quantity,
            nutrients: i.nutrients,
        })
        .collect();
    state.store.append_entries(&entries).await?;
    tracing::info!(%image_id, detections = detected.detections.len(), logged = entries.len(), "meal analysed");

    Ok(MealAnalysis {
        image_id,
        timestamp,
        backend: detected.backend,
        detect_seconds: detected.detect_seconds,
        detections: detected.detections,
        items,
        total,
        logged: entries.len(),
    })
}

/// Decoded query pairs. A `+` in an unencoded offset arrives as a space.
fn query_pairs(raw: Option<String>, allowed: &[&str]) -> Result<Vec<(String, String)>, ApiError> {
    let raw = raw.unwrap_or_default();
    let pairs: Vec<(String, String)> = form_urlencoded::parse(raw.as_bytes()).into_owned().collect();
    if let Some((k, _)) = pairs.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
        return Err(ApiError::bad_request("invalid_parameter", format!("unknown parameter `{k}`"))
            .with_detail(serde_json::json!({ "allowed": allowed })));
    }
    Ok(pairs)
}

fn single<'a>(pairs: &'a [(String, String)], key: &str) -> Result<Option<&'a str>, ApiError> {
    let mut values = pairs.iter().filter(|(k, _)| k == key).map(|(_, v)| v.as_str());
    let first = values.next();
    if values.next().is_some() {
        return Err(ApiError::bad_request("invalid_parameter", format!("`{key}` given more than once")));
    }
    Ok(first)
}

fn offset_param(pairs: &[(String, String)]) -> Result<(FixedOffset, String), ApiError> {
    let Some(text) = single(pairs, "offset")? else {
        return Ok((FixedOffset::east_opt(0).expect("zero offset"), "+00:00".into()));
    };
    let text = match text.strip_prefix(' ') {
        Some(rest) => format!("+{rest}"),
        None => text.to_owned(),
    };
    let offset = parse_offset(&text).ok_or_else(|| {
        ApiError::bad_request("invalid_offset", format!("offset `{text}` is not ±HH:MM or Z"))
    })?;
    Ok((offset, offset.to_string()))
}

fn today(state: &AppState, offset: FixedOffset) -> NaiveDate {
    state.now().with_timezone(&offset).date_naive()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogResponse {
    pub day: NaiveDate,
    pub offset: String,
    pub entries: Vec<FoodLogEntry>,
    pub daily_total: NutrientProfile,
}

pub async fn get_log(State(state): State<AppState>, RawQuery(raw): RawQuery) -> ApiResult<LogResponse> {
    let pairs = query_pairs(raw, &["day", "offset"])?;
    let (offset, offset_text) = offset_param(&pairs)?;
    let day = match single(&pairs, "day")? {
        None => today(&state, offset),
        Some(text) => NaiveDate::parse_from_str(text, "%Y-%m-%d")
            .ok()
            .filter(|_| text.len() == 10)
            .ok_or_else(|| ApiError::bad_request("invalid_date", format!("day `{text}` is not a valid YYYY-MM-DD date")))?,
    };
    let entries = read_log(state.store.as_ref(), Some(day), offset).await?;
    let daily_total = aggregate_profiles(entries.iter().map(|e| &e.nutrients));
    Ok(Json(LogResponse {
        day,
        offset: offset_text,
        entries,
        daily_total,
    }))
}

pub async fn put_goals(State(state): State<AppState>, body: Result<Json<Value>, axum::extract::rejection::JsonRejection>) -> ApiResult<UserGoals> {
    let Json(body) = body?;
    let goals = goals_from_body(body)?;
    state.store.save_goals(&goals).await?;
    Ok(Json(goals))
}

fn goals_from_body(body: Value) -> Result<UserGoals, ApiError> {
    let schema_err = |message: String| ApiError::bad_request("invalid_goals", message);
    let Value::Object(mut map) = body else {
        return Err(schema_err("body must be an object with `targets` or `profile`".into()));
    };
    if let Some(k) = map.keys().find(|k| !matches!(k.as_str(), "targets" | "profile")) {
        return Err(schema_err(format!("unexpected field `{k}`")));
    }
    match (map.remove("targets"), map.remove("profile")) {
        (Some(targets), None) => {
            let targets: NutrientProfile =
                serde_json::from_value(targets).map_err(|e| schema_err(format!("targets: {e}")))?;
            Ok(UserGoals::entered(targets)?)
        }
        (None, Some(profile)) => {
            let inputs: ProfileInputs =
                serde_json::from_value(profile).map_err(|e| schema_err(format!("profile: {e}")))?;
            Ok(calculate_goals(inputs)?)
        }
        (Some(_), Some(_)) => Err(schema_err("give either `targets` or `profile`, not both".into())),
        (None, None) => Err(schema_err("body needs `targets` or `profile`".into())),
    }
}

pub async fn get_goals(State(state): State<AppState>) -> ApiResult<UserGoals> {
    Ok(Json(state.store.load_goals().await?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationsResponse {
    pub day: NaiveDate,
    pub goals: UserGoals,
    pub consumed: NutrientProfile,
    pub remaining: NutrientProfile,
    pub meals_remaining: u32,
    pub target_per_meal: NutrientProfile,
    pub k: usize,
    pub required: BTreeSet<String>,
    pub excluded: BTreeSet<String>,
    pub recommendations: Vec<ScoredRecipe>,
}

fn tag_list(pairs: &[(String, String)], key: &str) -> BTreeSet<String> {
    pairs
        .iter()
        .filter(|(k, _)| k == key)
        .flat_map(|(_, v)| v.split(','))
        .map(normalize_tag)
        .filter(|t| !t.is_empty())
        .collect()
}

fn positive<T: std::str::FromStr + PartialOrd + Default>(
    pairs: &[(String, String)],
    key: &str,
    default: T,
) -> Result<T, ApiError> {
    match single(pairs, key)? {
        None => Ok(default),
        Some(text) => text
            .trim()
            .parse::<T>()
            .ok()
            .filter(|v| *v > T::default())
            .ok_or_else(|| ApiError::bad_request("invalid_parameter", format!("`{key}` must be a positive integer"))),
    }
}

pub async fn get_recommendations(
    State(state): State<AppState>,
    RawQuery(raw): RawQuery,
) -> ApiResult<RecommendationsResponse> {
    let pairs = query_pairs(raw, &["meals_remaining", "k", "required", "excluded", "offset"])?;
    let meals_remaining: u32 = positive(&pairs, "meals_remaining", 1)?;
    let k: usize = positive(&pairs, "k", RecommendationRequest::DEFAULT_K)?;
    let (offset, _) = offset_param(&pairs)?;
    let required = tag_list(&pairs, "required");
    let excluded = tag_list(&pairs, "excluded");

    let goals = match state.store.load_goals().await {
        Ok(g) => g,
        Err(StoreError::NoGoals) => {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "no_goals",
                "set goals with PUT /api/goals before asking for recommendations",
            ))
        }
        Err(e) => return Err(e.into()),
    };
    let day = today(&state, offset);
    let consumed = daily_totals(state.store.as_ref(), day, offset).await?;
    let remaining = compute_remaining(&goals, &consumed);
    let request = RecommendationRequest {
        remaining,
        meals_remaining_today: meals_remaining,
        required: required.clone(),
        excluded: excluded.clone(),
        k,
    };
    request.validate()?;
    let query = RecipeQuery {
        text: state.recipe_search_text.clone(),
        diet_tags: required.clone(),
        calories: None,
    };
    let corpus = state.recipes.fetch_recipes(&query).await?;
    let recommendations = recommend(&corpus.recipes, &request)?;
    let target_per_meal = remaining
        .try_map(|v| v / meals_remaining as f64)
        .expect("nonnegative remaining over a positive count");
    Ok(Json(RecommendationsResponse {
        day,
        goals,
        consumed,
        remaining,
        meals_remaining,
        target_per_meal,
        k,
        required,
        excluded,
        recommendations,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Health {
    pub status: &'static str,
    pub backend: String,
    pub vocabulary_size: usize,
    pub confidence_threshold: f64,
    pub nms_threshold: f64,
    pub modes: Modes,
}

pub async fn get_health(State(state): State<AppState>) -> Json<Health> {
    let capability = state.detector.capability();
    Json(Health {
        status: "ok",
        backend: capability.name.clone(),
        vocabulary_size: capability.vocabulary.len(),
        confidence_threshold: state.confidence_threshold,
        nms_threshold: state.nms_threshold,
        modes: state.modes.clone(),
    })
}

pub async fn not_found() -> ApiError {
    ApiError::not_found()
}

pub async fn method_not_allowed() -> ApiError {
    ApiError::method_not_allowed()
}
