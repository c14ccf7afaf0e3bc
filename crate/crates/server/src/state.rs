use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use platescope_core::detect::{
    load_model_backend, load_stub_backend, DetectError, DetectorBackend, SyntheticLatency, UrlFetcher,
};
use platescope_core::nutrition::{
    FixtureNutrientSource, NutrientSource, NutritionError, RemoteConfig, RemoteNutrientSource,
};
use platescope_core::recommend::{FixtureRecipeSource, RecipeSource, RecommendError, RemoteRecipeSource};
use platescope_core::store::{LocalCsvStore, LogStore, RemoteSheetStore, StoreError};
use serde::Serialize;

use crate::config::{BackendKind, ConfigError, Credentials, Secrets, ServiceConfig, SourceKind, StoreBackend};

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Detector(#[from] DetectError),
    #[error(transparent)]
    Nutrition(#[from] NutritionError),
    #[error(transparent)]
    Recipes(#[from] RecommendError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("binding {addr}: {source}")]
    Bind {
        addr: std::net::SocketAddr,
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Serve(std::io::Error),
}

/// Mode names echoed by the health endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Modes {
    pub nutrition: &'static str,
    pub recipes: &'static str,
    pub store: &'static str,
}

#[derive(Clone)]
pub struct AppState {
    pub detector: Arc<dyn DetectorBackend>,
    pub fetcher: UrlFetcher,
    pub nutrition: Arc<dyn NutrientSource>,
    pub recipes: Arc<dyn RecipeSource>,
    pub store: Arc<dyn LogStore>,
    pub confidence_threshold: f64,
    pub nms_threshold: f64,
    pub max_upload_bytes: usize,
    pub recipe_search_text: String,
    pub modes: Modes,
    pub clock: Clock,
}

impl AppState {
    /// Validates `config` and builds every component it names.
    pub fn from_config(config: &ServiceConfig, secrets: &Secrets) -> Result<Self, StartupError> {
        config.validate(secrets)?;
        let timeout = config.remote_timeout();
        let detector: Arc<dyn DetectorBackend> = match config.detector.backend {
            BackendKind::Stub => {
                let latency = match config.detector.stub_latency_ms {
                    0 => SyntheticLatency::None,
                    ms => SyntheticLatency::Fixed(Duration::from_millis(ms)),
                };
                let dir = config.detector.fixture_dir.as_deref().expect("validated");
                Arc::new(load_stub_backend(dir, latency)?)
            }
            BackendKind::Model => {
                let [w, h] = config.detector.input_size;
                Arc::new(load_model_backend(
                    config.detector.model_file.as_deref().expect("validated"),
                    config.detector.vocabulary_file.as_deref().expect("validated"),
                    (w, h),
                )?)
            }
        };

        let remote = |creds: &Credentials, base: &Option<String>| {
            let mut c = RemoteConfig::new(
                base.as_deref().unwrap_or(RemoteConfig::DEFAULT_BASE_URL),
                &creds.app_id,
                &creds.app_key,
            );
            c.timeout = timeout;
            c
        };
        let nutrition: Arc<dyn NutrientSource> = match config.nutrition.mode {
            SourceKind::Fixture => Arc::new(FixtureNutrientSource::load(
                config.nutrition.table.as_deref().expect("validated"),
            )?),
            SourceKind::Remote => {
                let mut c = remote(secrets.nutrition.as_ref().expect("validated"), &config.nutrition.base_url);
                c.max_in_flight = config.nutrition.max_in_flight;
                Arc::new(RemoteNutrientSource::new(c)?)
            }
        };
        let recipes: Arc<dyn RecipeSource> = match config.recipes.mode {
            SourceKind::Fixture => Arc::new(FixtureRecipeSource::load(
                config.recipes.corpus.as_deref().expect("validated"),
            )?),
            SourceKind::Remote => Arc::new(RemoteRecipeSource::new(remote(
                secrets.recipes.as_ref().expect("validated"),
                &config.recipes.base_url,
            ))?),
        };
        let store: Arc<dyn LogStore> = match config.store.backend {
            StoreBackend::LocalCsv => Arc::new(LocalCsvStore::new(config.store.path.clone().expect("validated"))),
            StoreBackend::RemoteSheet => Arc::new(RemoteSheetStore::new(
                config.store.url.clone().expect("validated"),
                secrets.sheet_token.clone().expect("validated"),
            )?),
        };

        Ok(Self {
            detector,
            fetcher: UrlFetcher::new(config.detector.max_url_bytes, timeout)?,
            nutrition,
            recipes,
            store,
            confidence_threshold: config.detector.confidence_threshold,
            nms_threshold: config.detector.nms_threshold,
            max_upload_bytes: config.detector.max_url_bytes,
            recipe_search_text: config.recipes.search_text.clone(),
            modes: Modes {
                nutrition: mode_name(config.nutrition.mode),
                recipes: mode_name(config.recipes.mode),
                store: match config.store.backend {
                    StoreBackend::LocalCsv => "local-csv",
                    StoreBackend::RemoteSheet => "remote-sheet",
                },
            },
            clock: Arc::new(Utc::now),
        })
    }

    /// Replaces the wall clock, e.g. to pin "today" in tests.
    pub fn with_clock(mut self, clock: impl Fn() -> DateTime<Utc> + Send + Sync + 'static) -> Self {
        self.clock = Arc::new(clock);
        self
    }

    pub fn now(&self) -> DateTime<Utc> {
        (self.clock)()
    }
}

fn mode_name(kind: SourceKind) -> &'static str {
    match kind {
        SourceKind::Fixture => "fixture",
        SourceKind::Remote => "remote",
    }
}
