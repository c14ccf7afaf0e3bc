//! Nutrient lookup (offline table or a remote nutrient-analysis API) and
//! per-meal aggregation.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::domain::{Detection, NutrientProfile, ValidationError};

#[derive(Debug, thiserror::Error)]
pub enum NutritionError {
    #[error("unknown food `{0}`")]
    UnknownFood(String),
    #[error("nutrient source `{source_name}` unavailable: {message}")]
    Unavailable {
        source_name: String,
        message: String,
    },
    #[error("nutrient table line {line}: {message}")]
    Table { line: usize, message: String },
    #[error("quantity must be at least 1")]
    Quantity,
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

impl NutritionError {
    /// Transport and auth failures may succeed on retry; unknown foods never do.
    pub fn is_retriable(&self) -> bool {
        matches!(self, NutritionError::Unavailable { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NutrientQuery {
    pub label: String,
    pub quantity: u32,
    pub serving: String,
}

impl NutrientQuery {
    pub fn new(label: impl Into<String>, quantity: u32) -> Result<Self, NutritionError> {
        if quantity == 0 {
            return Err(NutritionError::Quantity);
        }
        let label = label.into();
        if label.trim().is_empty() {
            return Err(ValidationError::EmptyLabel.into());
        }
        Ok(Self {
            label,
            quantity,
            serving: "1 serving".into(),
        })
    }

    /// Free-text ingredient line sent to the remote API.
    pub fn ingredient_line(&self) -> String {
        format!("{} serving {}", self.quantity, self.label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceMode {
    Remote,
    Fixture,
}

#[async_trait]
pub trait NutrientSource: Send + Sync {
    fn name(&self) -> &str;
    fn mode(&self) -> SourceMode;
    async fn query(&self, query: &NutrientQuery) -> Result<NutrientProfile, NutritionError>;
}

pub async fn query_nutrients(
    source: &dyn NutrientSource,
    query: &NutrientQuery,
) -> Result<NutrientProfile, NutritionError> {
    source.query(query).await
}

/// Fieldwise sum; the empty sum is the zero profile.
pub fn aggregate_profiles<'a>(profiles: impl IntoIterator<Item = &'a NutrientProfile>) -> NutrientProfile {
    profiles
        .into_iter()
        .fold(NutrientProfile::ZERO, |acc, p| acc + *p)
}

/// One query per distinct label, quantity = number of detected instances,
/// ordered by label.
pub fn detections_to_queries(detections: &[Detection]) -> Vec<NutrientQuery> {
    let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
    for d in detections {
        *counts.entry(d.label.as_str()).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(label, n)| NutrientQuery::new(label, n).expect("count >= 1 and label validated"))
        .collect()
}

/// Parses `label,calories,fat_g,protein_g,carbs_g,fiber_g` with a header row.
pub fn parse_nutrient_table(text: &str) -> Result<BTreeMap<String, NutrientProfile>, NutritionError> {
    #[derive(Deserialize)]
    struct Row {
        label: String,
        calories: f64,
        fat_g: f64,
        protein_g: f64,
        carbs_g: f64,
        fiber_g: f64,
    }
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| NutritionError::Table {
        line: 1,
        message: e.to_string(),
    })?;
    let expected = ["label", "calories", "fat_g", "protein_g", "carbs_g", "fiber_g"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(NutritionError::Table {
            line: 1,
            message: format!("header must be `{}`", expected.join(",")),
        });
    }
    let mut table = BTreeMap::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| NutritionError::Table {
            line,
            message: e.to_string(),
        })?;
        let profile = NutrientProfile::new(row.calories, row.fat_g, row.protein_g, row.carbs_g, row.fiber_g)
            .map_err(|e| NutritionError::Table {
                line,
                message: e.to_string(),
            })?;
        if row.label.trim().is_empty() {
            return Err(NutritionError::Table {
                line,
                message: "empty label".into(),
            });
        }
        if table.insert(row.label.clone(), profile).is_some() {
            return Err(NutritionError::Table {
                line,
                message: format!("duplicate label `{}`", row.label),
            });
        }
    }
    Ok(table)
}

/// Offline source backed by a local per-serving nutrient table. Never touches
/// the network.
#[derive(Debug, Clone)]
pub struct FixtureNutrientSource {
    table: BTreeMap<String, NutrientProfile>,
}

impl FixtureNutrientSource {
    pub fn new(table: BTreeMap<String, NutrientProfile>) -> Self {
        Self { table }
    }

    pub fn from_csv(text: &str) -> Result<Self, NutritionError> {
        parse_nutrient_table(text).map(Self::new)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, NutritionError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| NutritionError::Table {
            line: 0,
            message: format!("{}: {e}", path.display()),
        })?;
        Self::from_csv(&text)
    }

    pub fn per_serving(&self, label: &str) -> Option<&NutrientProfile> {
        self.table.get(label)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.table.keys().map(String::as_str)
    }
}

#[async_trait]
impl NutrientSource for FixtureNutrientSource {
    fn name(&self) -> &str {
        "fixture-table"
    }

    fn mode(&self) -> SourceMode {
        SourceMode::Fixture
    }

    async fn query(&self, query: &NutrientQuery) -> Result<NutrientProfile, NutritionError> {
        let per_serving = self
            .table
            .get(&query.label)
            .ok_or_else(|| NutritionError::UnknownFood(query.label.clone()))?;
        Ok(*per_serving * f64::from(query.quantity))
    }
}

/// Retry schedule for remote calls: `attempts` retries after the first try,
/// sleeping `base * 2^k` before retry `k`.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry)
    }
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub base_url: String,
    pub app_id: String,
    pub app_key: String,
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl RemoteConfig {
    pub const DEFAULT_BASE_URL: &'static str = "https://api.edamam.com";

    /// Credentials from `{prefix}_APP_ID` / `{prefix}_APP_KEY`, base URL from
    /// `{prefix}_BASE_URL` when set.
    pub fn from_env(prefix: &str) -> Option<Self> {
        let app_id = std::env::var(format!("{prefix}_APP_ID")).ok()?;
        let app_key = std::env::var(format!("{prefix}_APP_KEY")).ok()?;
        let base_url = std::env::var(format!("{prefix}_BASE_URL"))
            .unwrap_or_else(|_| Self::DEFAULT_BASE_URL.to_owned());
        Some(Self::new(base_url, app_id, app_key))
    }

    pub fn new(base_url: impl Into<String>, app_id: impl Into<String>, app_key: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_owned(),
            app_id: app_id.into(),
            app_key: app_key.into(),
            timeout: Duration::from_secs(10),
            max_in_flight: 4,
            retry: RetryPolicy::default(),
        }
    }
}

/// Subset of the nutrient-analysis response we consume.
#[derive(Debug, Deserialize)]
pub struct NutritionDataResponse {
    #[serde(default)]
    pub calories: f64,
    #[serde(default, rename = "totalNutrients")]
    pub total_nutrients: HashMap<String, NutrientAmount>,
}

#[derive(Debug, Deserialize)]
pub struct NutrientAmount {
    pub quantity: f64,
    #[serde(default)]
    pub unit: String,
}

/// Maps a nutrient-analysis response onto a profile. An empty parse (no
/// calories and no nutrients) means the API did not recognise the food.
pub fn parse_nutrition_response(label: &str, body: &str) -> Result<NutrientProfile, NutritionError> {
    let resp: NutritionDataResponse =
        serde_json::from_str(body).map_err(|_| NutritionError::UnknownFood(label.to_owned()))?;
    if resp.calories == 0.0 && resp.total_nutrients.is_empty() {
        return Err(NutritionError::UnknownFood(label.to_owned()));
    }
    let get = |code: &str| resp.total_nutrients.get(code).map_or(0.0, |n| n.quantity);
    Ok(NutrientProfile::new(
        resp.calories,
        get("FAT"),
        get("PROCNT"),
        get("CHOCDF"),
        get("FIBTG"),
    )?)
}

/// Client for a remote nutrient-analysis API. Responses are cached per
/// `(label, quantity)` for the lifetime of the value.
pub struct RemoteNutrientSource {
    client: reqwest::Client,
    config: RemoteConfig,
    cache: Mutex<HashMap<(String, u32), NutrientProfile>>,
    requests: AtomicU64,
    in_flight: Semaphore,
}

impl RemoteNutrientSource {
    pub fn new(config: RemoteConfig) -> Result<Self, NutritionError> {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| NutritionError::Unavailable {
                source_name: "remote-nutrition".into(),
                message: e.to_string(),
            })?;
        Ok(Self {
            client,
            in_flight: Semaphore::new(config.max_in_flight.max(1)),
            config,
            cache: Mutex::new(HashMap::new()),
            requests: AtomicU64::new(0),
        })
    }

    /// Number of HTTP requests issued so far (cache hits excluded).
    pub fn requests_issued(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    fn unavailable(&self, message: impl Into<String>) -> NutritionError {
        NutritionError::Unavailable {
            source_name: self.name().to_owned(),
            message: message.into(),
        }
    }

    async fn fetch_once(&self, query: &NutrientQuery) -> Result<NutrientProfile, NutritionError> {
        let _permit = self
            .in_flight
            .acquire()
            .await
            .map_err(|e| self.unavailable(e.to_string()))?;
        self.requests.fetch_add(1, Ordering::SeqCst);
        let url = format!("{}/api/nutrition-data", self.config.base_url);
        let resp = self
            .client
            .get(url)
            .query(&[
                ("app_id", self.config.app_id.as_str()),
                ("app_key", self.config.app_key.as_str()),
                ("nutrition-type", "logging"),
                ("ingr", query.ingredient_line().as_str()),
            ])
            .send()
            .await
            .map_err(|e| self.unavailable(e.to_string()))?;
        let status = resp.status();
        if status == reqwest::StatusCode::NOT_FOUND || status == reqwest::StatusCode::UNPROCESSABLE_ENTITY {
            return Err(NutritionError::UnknownFood(query.label.clone()));
        }
        if !status.is_success() {
            return Err(self.unavailable(format!("HTTP {status}")));
        }
        let body = resp.text().await.map_err(|e| self.unavailable(e.to_string()))?;
        parse_nutrition_response(&query.label, &body)
    }
}

#[async_trait]
impl NutrientSource for RemoteNutrientSource {
    fn name(&self) -> &str {
        "remote-nutrition"
    }

    fn mode(&self) -> SourceMode {
        SourceMode::Remote
    }

    async fn query(&self, query: &NutrientQuery) -> Result<NutrientProfile, NutritionError> {
        let key = (query.label.clone(), query.quantity);
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(*hit);
        }
        let mut attempt = 0;
        let profile = loop {
            match self.fetch_once(query).await {
                Ok(p) => break p,
                Err(e) if e.is_retriable() && attempt < self.config.retry.retries => {
                    tracing::warn!(label = %query.label, attempt, error = %e, "retrying nutrient lookup");
                    tokio::time::sleep(self.config.retry.delay(attempt)).await;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        };
        self.cache.lock().expect("cache lock").insert(key, profile);
        Ok(profile)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::BoundingBox;

    const TABLE: &str = "label,calories,fat_g,protein_g,carbs_g,fiber_g\n\
                         waffle,291,14.1,7.9,32.9,1.7\n\
                         wine,125,0,0.1,3.8,0\n";

    fn run<F: std::future::Future>(f: F) -> F::Output {
        tokio::runtime::Builder::new_current_thread()
            .build()
            .unwrap()
            .block_on(f)
    }

    #[test]
    fn fixture_lookup_and_linearity() {
        let src = FixtureNutrientSource::from_csv(TABLE).unwrap();
        let one = run(src.query(&NutrientQuery::new("waffle", 1).unwrap())).unwrap();
        assert_eq!(one, NutrientProfile::new(291.0, 14.1, 7.9, 32.9, 1.7).unwrap());
        let two = run(src.query(&NutrientQuery::new("waffle", 2).unwrap())).unwrap();
        assert_eq!(two, one * 2.0);
        let err = run(src.query(&NutrientQuery::new("unobtainium", 1).unwrap())).unwrap_err();
        assert!(matches!(err, NutritionError::UnknownFood(ref l) if l == "unobtainium"));
    }

    #[test]
    fn table_rejects_bad_rows() {
        assert!(parse_nutrient_table("label,calories\nx,1\n").is_err());
        let neg = "label,calories,fat_g,protein_g,carbs_g,fiber_g\nx,-1,0,0,0,0\n";
        assert!(matches!(parse_nutrient_table(neg), Err(NutritionError::Table { line: 2, .. })));
        let dup = "label,calories,fat_g,protein_g,carbs_g,fiber_g\nx,1,0,0,0,0\nx,1,0,0,0,0\n";
        assert!(parse_nutrient_table(dup).is_err());
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate_profiles(&[]), NutrientProfile::ZERO);
        let p = NutrientProfile::new(100.0, 1.0, 2.0, 3.0, 4.0).unwrap();
        assert_eq!(aggregate_profiles(&[p]), p);
        let q = NutrientProfile::new(50.0, 0.5, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(
            aggregate_profiles(&[p, q]),
            NutrientProfile::new(150.0, 1.5, 3.0, 4.0, 4.0).unwrap()
        );
    }

    #[test]
    fn queries_group_by_label() {
        let b = BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let d = |l: &str| Detection::new(l, b, 0.9).unwrap();
        let q = detections_to_queries(&[d("wine"), d("wine"), d("waffle")]);
        let got: Vec<_> = q.iter().map(|q| (q.label.as_str(), q.quantity)).collect();
        assert_eq!(got, [("waffle", 1), ("wine", 2)]);
        assert!(detections_to_queries(&[]).is_empty());
        assert_eq!(detections_to_queries(&[d("wine")])[0].quantity, 1);
    }

    #[test]
    fn zero_quantity_rejected() {
        assert!(matches!(NutrientQuery::new("wine", 0), Err(NutritionError::Quantity)));
    }

    #[test]
    fn ingredient_line_format() {
        assert_eq!(NutrientQuery::new("waffle", 2).unwrap().ingredient_line(), "2 serving waffle");
    }

    #[test]
    fn parses_recorded_response() {
        let body = r#"{"uri":"x","calories":291,"totalWeight":75,
            "totalNutrients":{"FAT":{"label":"Fat","quantity":14.1,"unit":"g"},
            "PROCNT":{"label":"Protein","quantity":7.9,"unit":"g"},
            "CHOCDF":{"label":"Carbs","quantity":32.9,"unit":"g"},
            "FIBTG":{"label":"Fiber","quantity":1.7,"unit":"g"},
            "NA":{"label":"Sodium","quantity":511,"unit":"mg"}}}"#;
        let p = parse_nutrition_response("waffle", body).unwrap();
        assert_eq!(p, NutrientProfile::new(291.0, 14.1, 7.9, 32.9, 1.7).unwrap());
        let empty = r#"{"calories":0,"totalNutrients":{},"ingredients":[{"text":"1 serving zz","parsed":[]}]}"#;
        assert!(matches!(parse_nutrition_response("zz", empty), Err(NutritionError::UnknownFood(_))));
    }

    #[test]
    fn retry_delays_double() {
        let r = RetryPolicy::default();
        assert_eq!(r.delay(0), Duration::from_millis(500));
        assert_eq!(r.delay(2), Duration::from_millis(2000));
    }
}
