//! Daily goal calculation and recipe ranking against the remaining budget.
//!
//! Goals use the Mifflin-St Jeor resting-energy estimate scaled by an
//! activity factor, split 50/20/30 between carbohydrate, fat and protein
//! (4/9/4 kcal per gram), with 14 g of fiber per 1000 kcal. Recipes are
//! ranked by a weighted, target-normalised L1 distance to the per-meal target.

use std::collections::{BTreeSet, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::domain::{NutrientProfile, NUTRIENT_FIELDS};
use crate::nutrition::RemoteConfig;
use crate::store::{GoalSource, ProfileInputs, Sex, UserGoals};

#[derive(Debug, thiserror::Error)]
pub enum RecommendError {
    #[error("{field} = {value} out of range {range}")]
    OutOfRange {
        field: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("recipe source `{source_name}` unavailable: {message}")]
    Unavailable {
        source_name: String,
        message: String,
    },
    #[error("duplicate recipe_id `{0}`")]
    DuplicateRecipe(String),
}

fn check_range(field: &'static str, value: f64, ok: bool, range: &'static str) -> Result<(), RecommendError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(RecommendError::OutOfRange { field, value, range })
    }
}

pub fn calculate_goals(inputs: ProfileInputs) -> Result<UserGoals, RecommendError> {
    let ProfileInputs {
        age,
        sex,
        weight_kg,
        height_cm,
        activity_factor,
    } = inputs;
    check_range("age", age, (10.0..=120.0).contains(&age), "[10, 120]")?;
    check_range("weight_kg", weight_kg, weight_kg > 0.0, "> 0")?;
    check_range("height_cm", height_cm, height_cm > 0.0, "> 0")?;
    check_range(
        "activity_factor",
        activity_factor,
        (1.2..=2.0).contains(&activity_factor),
        "[1.2, 2.0]",
    )?;

    let sex_term = match sex {
        Sex::Male => 5.0,
        Sex::Female => -161.0,
    };
    let bmr = 10.0 * weight_kg + 6.25 * height_cm - 5.0 * age + sex_term;
    let calories = bmr * activity_factor;
    let targets = NutrientProfile::new(
        calories,
        calories * 0.20 / 9.0,
        calories * 0.30 / 4.0,
        calories * 0.50 / 4.0,
        calories / 1000.0 * 14.0,
    )
    .map_err(|_| RecommendError::OutOfRange {
        field: "calories",
        value: calories,
        range: "> 0",
    })?;
    UserGoals::new(targets, GoalSource::Calculated, Some(inputs)).map_err(|_| RecommendError::OutOfRange {
        field: "calories",
        value: calories,
        range: "> 0",
    })
}

/// Fieldwise `max(goal - consumed, 0)`.
pub fn compute_remaining(goals: &UserGoals, consumed: &NutrientProfile) -> NutrientProfile {
    let g = goals.targets.to_array();
    let c = consumed.to_array();
    let mut out = [0.0; 5];
    for i in 0..5 {
        out[i] = (g[i] - c[i]).max(0.0);
    }
    NutrientProfile::from_array(out).expect("clamped difference of valid profiles")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub recipe_id: String,
    pub title: String,
    pub per_serving: NutrientProfile,
    pub diet_tags: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationRequest {
    pub remaining: NutrientProfile,
    pub meals_remaining_today: u32,
    #[serde(default)]
    pub required: BTreeSet<String>,
    #[serde(default)]
    pub excluded: BTreeSet<String>,
    pub k: usize,
}

impl RecommendationRequest {
    pub const DEFAULT_K: usize = 5;

    pub fn validate(&self) -> Result<(), RecommendError> {
        if self.k == 0 {
            return Err(RecommendError::InvalidRequest("k must be >= 1".into()));
        }
        if self.meals_remaining_today == 0 {
            return Err(RecommendError::InvalidRequest("meals_remaining_today must be >= 1".into()));
        }
        if let Some(tag) = self.required.intersection(&self.excluded).next() {
            return Err(RecommendError::InvalidRequest(format!(
                "tag `{tag}` is both required and excluded"
            )));
        }
        Ok(())
    }
}

/// Nonnegative per-field weights, in [`NUTRIENT_FIELDS`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights(pub [f64; 5]);

impl Default for Weights {
    fn default() -> Self {
        Weights([1.0; 5])
    }
}

/// Per-field contribution to a recipe's score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub calories: f64,
    pub fat_g: f64,
    pub protein_g: f64,
    pub carbs_g: f64,
    pub fiber_g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecipe {
    pub recipe: Recipe,
    pub score: f64,
    pub breakdown: Deviation,
}

/// `Σ weight_f · |recipe_f − target_f| / max(target_f, 1)`; lower is better.
pub fn score_recipe(recipe: &Recipe, target_per_meal: &NutrientProfile, weights: &Weights) -> ScoredRecipe {
    let r = recipe.per_serving.to_array();
    let t = target_per_meal.to_array();
    let mut terms = [0.0; 5];
    for i in 0..NUTRIENT_FIELDS.len() {
        terms[i] = weights.0[i] * (r[i] - t[i]).abs() / t[i].max(1.0);
    }
    let [calories, fat_g, protein_g, carbs_g, fiber_g] = terms;
    ScoredRecipe {
        recipe: recipe.clone(),
        score: terms.iter().sum(),
        breakdown: Deviation {
            calories,
            fat_g,
            protein_g,
            carbs_g,
            fiber_g,
        },
    }
}

pub fn satisfies_tags(recipe: &Recipe, required: &BTreeSet<String>, excluded: &BTreeSet<String>) -> bool {
    required.is_subset(&recipe.diet_tags) && recipe.diet_tags.is_disjoint(excluded)
}

pub fn recommend(corpus: &[Recipe], request: &RecommendationRequest) -> Result<Vec<ScoredRecipe>, RecommendError> {
    recommend_weighted(corpus, request, &Weights::default())
}

/// Filters by hard tag constraints, scores against
/// `remaining / meals_remaining_today`, returns the best `k` (score
/// ascending, ties by recipe id).
pub fn recommend_weighted(
    corpus: &[Recipe],
    request: &RecommendationRequest,
    weights: &Weights,
) -> Result<Vec<ScoredRecipe>, RecommendError> {
    request.validate()?;
    let meals = f64::from(request.meals_remaining_today);
    let target = request
        .remaining
        .try_map(|x| x / meals)
        .expect("dividing a valid profile by a positive count");
    let mut scored: Vec<ScoredRecipe> = corpus
        .iter()
        .filter(|r| satisfies_tags(r, &request.required, &request.excluded))
        .map(|r| score_recipe(r, &target, weights))
        .collect();
    scored.sort_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then_with(|| a.recipe.recipe_id.cmp(&b.recipe.recipe_id))
    });
    scored.truncate(request.k);
    Ok(scored)
}

pub fn check_unique_ids(recipes: &[Recipe]) -> Result<(), RecommendError> {
    let mut seen = HashSet::new();
    for r in recipes {
        if !seen.insert(r.recipe_id.as_str()) {
            return Err(RecommendError::DuplicateRecipe(r.recipe_id.clone()));
        }
    }
    Ok(())
}

/// Recipe document in the remote recipe-search shape: whole-recipe totals
/// plus a declared number of servings.
#[derive(Debug, Deserialize)]
struct RecipeDocument {
    uri: String,
    label: String,
    #[serde(rename = "yield")]
    servings: Option<f64>,
    #[serde(rename = "totalNutrients")]
    total_nutrients: std::collections::HashMap<String, crate::nutrition::NutrientAmount>,
    #[serde(default, rename = "healthLabels")]
    health_labels: Vec<String>,
    #[serde(default, rename = "dietLabels")]
    diet_labels: Vec<String>,
    #[serde(default)]
    url: Option<String>,
}

/// `Gluten-Free` -> `gluten-free`, `Low Carb` -> `low-carb`.
pub fn normalize_tag(tag: &str) -> String {
    tag.trim().to_lowercase().replace([' ', '_'], "-")
}

impl RecipeDocument {
    fn into_recipe(self) -> Result<Recipe, String> {
        let servings = self.servings.ok_or("missing servings count (`yield`)")?;
        if !(servings.is_finite() && servings > 0.0) {
            return Err(format!("servings {servings} must be > 0"));
        }
        let get = |code: &str| self.total_nutrients.get(code).map_or(0.0, |n| n.quantity);
        let total = NutrientProfile::new(get("ENERC_KCAL"), get("FAT"), get("PROCNT"), get("CHOCDF"), get("FIBTG"))
            .map_err(|e| e.to_string())?;
        let recipe_id = self
            .uri
            .rsplit_once("#recipe_")
            .map_or(self.uri.as_str(), |(_, id)| id)
            .to_owned();
        if recipe_id.is_empty() || self.label.trim().is_empty() {
            return Err("empty recipe id or title".into());
        }
        Ok(Recipe {
            recipe_id,
            title: self.label,
            per_serving: total.try_map(|x| x / servings).map_err(|e| e.to_string())?,
            diet_tags: self
                .health_labels
                .iter()
                .chain(&self.diet_labels)
                .map(|t| normalize_tag(t))
                .collect(),
            url: self.url,
        })
    }
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct ParsedRecipes {
    pub recipes: Vec<Recipe>,
    /// Documents skipped as malformed.
    pub skipped: usize,
}

fn parse_documents(values: impl IntoIterator<Item = serde_json::Value>) -> ParsedRecipes {
    let mut out = ParsedRecipes::default();
    for (i, value) in values.into_iter().enumerate() {
        let parsed = serde_json::from_value::<RecipeDocument>(value)
            .map_err(|e| e.to_string())
            .and_then(RecipeDocument::into_recipe);
        match parsed {
            Ok(r) => out.recipes.push(r),
            Err(message) => {
                tracing::warn!(document = i, %message, "skipping malformed recipe");
                out.skipped += 1;
            }
        }
    }
    out
}

/// Parses newline-delimited recipe documents, skipping malformed ones.
pub fn parse_recipe_documents(text: &str) -> ParsedRecipes {
    let mut skipped = 0;
    let values: Vec<serde_json::Value> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .filter_map(|l| match serde_json::from_str(l) {
            Ok(v) => Some(v),
            Err(_) => {
                skipped += 1;
                None
            }
        })
        .collect();
    let mut parsed = parse_documents(values);
    parsed.skipped += skipped;
    parsed
}

/// Parses a recipe-search response body (`{"hits": [{"recipe": …}, …]}`).
pub fn parse_search_response(body: &str) -> Result<ParsedRecipes, serde_json::Error> {
    #[derive(Deserialize)]
    struct Hit {
        recipe: serde_json::Value,
    }
    #[derive(Deserialize)]
    struct Search {
        #[serde(default)]
        hits: Vec<Hit>,
    }
    let search: Search = serde_json::from_str(body)?;
    Ok(parse_documents(search.hits.into_iter().map(|h| h.recipe)))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecipeQuery {
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub diet_tags: BTreeSet<String>,
    /// Inclusive per-serving calorie band.
    #[serde(default)]
    pub calories: Option<(f64, f64)>,
}

#[async_trait]
pub trait RecipeSource: Send + Sync {
    fn name(&self) -> &str;
    async fn fetch_recipes(&self, query: &RecipeQuery) -> Result<ParsedRecipes, RecommendError>;
}

pub async fn fetch_recipes(source: &dyn RecipeSource, query: &RecipeQuery) -> Result<ParsedRecipes, RecommendError> {
    source.fetch_recipes(query).await
}

/// Offline recipe corpus loaded once from a JSONL file.
#[derive(Debug, Clone)]
pub struct FixtureRecipeSource {
    parsed: ParsedRecipes,
}

impl FixtureRecipeSource {
    pub fn from_jsonl(text: &str) -> Result<Self, RecommendError> {
        let parsed = parse_recipe_documents(text);
        check_unique_ids(&parsed.recipes)?;
        Ok(Self { parsed })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, RecommendError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| RecommendError::Unavailable {
            source_name: "fixture-recipes".into(),
            message: format!("{}: {e}", path.display()),
        })?;
        Self::from_jsonl(&text)
    }

    pub fn recipes(&self) -> &[Recipe] {
        &self.parsed.recipes
    }

    pub fn skipped(&self) -> usize {
        self.parsed.skipped
    }
}

fn in_band(recipe: &Recipe, query: &RecipeQuery) -> bool {
    query.diet_tags.is_subset(&recipe.diet_tags)
        && query
            .calories
            .is_none_or(|(lo, hi)| (lo..=hi).contains(&recipe.per_serving.calories))
}

#[async_trait]
impl RecipeSource for FixtureRecipeSource {
    fn name(&self) -> &str {
        "fixture-recipes"
    }

    async fn fetch_recipes(&self, query: &RecipeQuery) -> Result<ParsedRecipes, RecommendError> {
        Ok(ParsedRecipes {
            recipes: self.parsed.recipes.iter().filter(|r| in_band(r, query)).cloned().collect(),
            skipped: self.parsed.skipped,
        })
    }
}

/// Client for a remote recipe-search API.
pub struct RemoteRecipeSource {
    client: reqwest::Client,
    config: RemoteConfig,
    requests: AtomicU64,
    in_flight: tokio::sync::Semaphore,
}

impl RemoteRecipeSource {
    pub fn new(config: RemoteConfig) -> Result<Self, RecommendError> {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| RecommendError::Unavailable {
                source_name: "remote-recipes".into(),
                message: e.to_string(),
            })?;
        Ok(Self {
            client,
            in_flight: tokio::sync::Semaphore::new(config.max_in_flight.max(1)),
            config,
            requests: AtomicU64::new(0),
        })
    }

    pub fn requests_issued(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    fn unavailable(&self, message: impl Into<String>) -> RecommendError {
        RecommendError::Unavailable {
            source_name: self.name().to_owned(),
            message: message.into(),
        }
    }

    async fn fetch_once(&self, params: &[(String, String)]) -> Result<String, RecommendError> {
        let _permit = self.in_flight.acquire().await.map_err(|e| self.unavailable(e.to_string()))?;
        self.requests.fetch_add(1, Ordering::SeqCst);
        let resp = self
            .client
            .get(format!("{}/api/recipes/v2", self.config.base_url))
            .query(params)
            .send()
            .await
            .map_err(|e| self.unavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(self.unavailable(format!("HTTP {}", resp.status())));
        }
        resp.text().await.map_err(|e| self.unavailable(e.to_string()))
    }
}

#[async_trait]
impl RecipeSource for RemoteRecipeSource {
    fn name(&self) -> &str {
        "remote-recipes"
    }

    async fn fetch_recipes(&self, query: &RecipeQuery) -> Result<ParsedRecipes, RecommendError> {
        let mut params = vec![
            ("type".to_owned(), "public".to_owned()),
            ("app_id".to_owned(), self.config.app_id.clone()),
            ("app_key".to_owned(), self.config.app_key.clone()),
            ("q".to_owned(), query.text.clone()),
        ];
        for tag in &query.diet_tags {
            params.push(("health".to_owned(), tag.clone()));
        }
        if let Some((lo, hi)) = query.calories {
            params.push(("calories".to_owned(), format!("{}-{}", lo.floor(), hi.ceil())));
        }
        let mut attempt = 0;
        let body = loop {
            match self.fetch_once(&params).await {
                Ok(b) => break b,
                Err(e) if attempt < self.config.retry.retries => {
                    tracing::warn!(attempt, error = %e, "retrying recipe search");
                    tokio::time::sleep(self.config.retry.delay(attempt)).await;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        };
        if body.trim().is_empty() {
            return Ok(ParsedRecipes::default());
        }
        let mut parsed = parse_search_response(&body).map_err(|e| self.unavailable(format!("bad response: {e}")))?;
        parsed.recipes.retain(|r| in_band(r, query));
        Ok(parsed)
    }
}
