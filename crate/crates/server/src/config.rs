//! Service configuration: a TOML file, overridden by `PLATESCOPE_*`
//! environment variables, overridden in turn by command-line flags.
//! Credentials are read from the environment only.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use platescope_core::detect::{DEFAULT_CONFIDENCE_THRESHOLD, DEFAULT_MAX_URL_BYTES, DEFAULT_NMS_THRESHOLD};
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "PLATESCOPE";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing config {path}: {source}")]
    Parse {
        path: String,
        source: Box<toml::de::Error>,
    },
    #[error("environment variable {name}: {message}")]
    Env { name: String, message: String },
    #[error("{field}: {message}")]
    Invalid { field: &'static str, message: String },
    #[error("{field}: path does not exist: {path}")]
    MissingPath { field: &'static str, path: String },
    #[error("{field} requires environment variable {name}")]
    MissingSecret { field: &'static str, name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Stub,
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    #[default]
    Fixture,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StoreBackend {
    #[default]
    LocalCsv,
    RemoteSheet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub backend: BackendKind,
    /// Sidecar directory for the stub backend.
    pub fixture_dir: Option<PathBuf>,
    pub model_file: Option<PathBuf>,
    pub vocabulary_file: Option<PathBuf>,
    /// `[width, height]` of the model input.
    pub input_size: [u32; 2],
    /// Fixed delay added to each stub call, in milliseconds.
    pub stub_latency_ms: u64,
    pub confidence_threshold: f64,
    pub nms_threshold: f64,
    pub max_url_bytes: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Stub,
            fixture_dir: None,
            model_file: None,
            vocabulary_file: None,
            input_size: [640, 640],
            stub_latency_ms: 0,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            nms_threshold: DEFAULT_NMS_THRESHOLD,
            max_url_bytes: DEFAULT_MAX_URL_BYTES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NutritionConfig {
    pub mode: SourceKind,
    /// Nutrient table CSV for fixture mode.
    pub table: Option<PathBuf>,
    pub base_url: Option<String>,
    pub max_in_flight: usize,
}

impl Default for NutritionConfig {
    fn default() -> Self {
        Self {
            mode: SourceKind::Fixture,
            table: None,
            base_url: None,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecipesConfig {
    pub mode: SourceKind,
    /// Recipe JSONL corpus for fixture mode.
    pub corpus: Option<PathBuf>,
    pub base_url: Option<String>,
    /// Free-text search sent to the remote recipe API.
    pub search_text: String,
}

impl Default for RecipesConfig {
    fn default() -> Self {
        Self {
            mode: SourceKind::Fixture,
            corpus: None,
            base_url: None,
            search_text: "meal".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StoreConfig {
    pub backend: StoreBackend,
    pub path: Option<PathBuf>,
    pub url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub cors_origins: Vec<String>,
    pub remote_timeout_secs: u64,
    /// Built UI assets served under `/`.
    pub static_dir: Option<PathBuf>,
    pub detector: DetectorConfig,
    pub nutrition: NutritionConfig,
    pub recipes: RecipesConfig,
    pub store: StoreConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            cors_origins: Vec::new(),
            remote_timeout_secs: 10,
            static_dir: None,
            detector: DetectorConfig::default(),
            nutrition: NutritionConfig::default(),
            recipes: RecipesConfig::default(),
            store: StoreConfig::default(),
        }
    }
}

/// Remote API credentials resolved from the environment.
#[derive(Clone, PartialEq, Eq)]
pub struct Credentials {
    pub app_id: String,
    pub app_key: String,
}

impl std::fmt::Debug for Credentials {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Credentials").field("app_id", &self.app_id).finish_non_exhaustive()
    }
}

/// Secrets looked up at startup; never part of [`ServiceConfig`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Secrets {
    pub nutrition: Option<Credentials>,
    pub recipes: Option<Credentials>,
    pub sheet_token: Option<String>,
}

impl Secrets {
    pub fn from_env() -> Self {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Self {
        let pair = |section: &str| {
            Some(Credentials {
                app_id: get(&format!("{ENV_PREFIX}_{section}_APP_ID"))?,
                app_key: get(&format!("{ENV_PREFIX}_{section}_APP_KEY"))?,
            })
        };
        Self {
            nutrition: pair("NUTRITION"),
            recipes: pair("RECIPES"),
            sheet_token: get(&format!("{ENV_PREFIX}_SHEET_TOKEN")),
        }
    }
}

/// Command-line overrides; `None` leaves the lower layers in effect.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub bind: Option<SocketAddr>,
}

impl ServiceConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_owned(),
            source: Box::new(e),
        })
    }

    /// Reads the file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let mut config = Self::from_toml(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.static_dir);
        fix(&mut self.detector.fixture_dir);
        fix(&mut self.detector.model_file);
        fix(&mut self.detector.vocabulary_file);
        fix(&mut self.nutrition.table);
        fix(&mut self.recipes.corpus);
        fix(&mut self.store.path);
    }

    /// Applies `PLATESCOPE_*` variables from the process environment.
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        self.apply_env_from(|k| std::env::var(k).ok())
    }

    pub fn apply_env_from(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        fn parsed<T: std::str::FromStr>(name: &str, value: String) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            value.parse().map_err(|e: T::Err| ConfigError::Env {
                name: name.to_owned(),
                message: e.to_string(),
            })
        }
        fn keyword<T: for<'de> Deserialize<'de>>(name: &str, value: String) -> Result<T, ConfigError> {
            T::deserialize(serde::de::value::StringDeserializer::<serde::de::value::Error>::new(value)).map_err(
                |e| ConfigError::Env {
                    name: name.to_owned(),
                    message: e.to_string(),
                },
            )
        }
        let var = |suffix: &str| {
            let name = format!("{ENV_PREFIX}_{suffix}");
            get(&name).map(|v| (name, v))
        };
        if let Some((n, v)) = var("BIND") {
            self.bind = parsed(&n, v)?;
        }
        if let Some((_, v)) = var("CORS_ORIGINS") {
            self.cors_origins = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
        }
        if let Some((n, v)) = var("REMOTE_TIMEOUT_SECS") {
            self.remote_timeout_secs = parsed(&n, v)?;
        }
        if let Some((_, v)) = var("STATIC_DIR") {
            self.static_dir = Some(v.into());
        }
        if let Some((n, v)) = var("DETECTOR_BACKEND") {
            self.detector.backend = keyword(&n, v)?;
        }
        if let Some((_, v)) = var("DETECTOR_FIXTURE_DIR") {
            self.detector.fixture_dir = Some(v.into());
        }
        if let Some((_, v)) = var("DETECTOR_MODEL_FILE") {
            self.detector.model_file = Some(v.into());
        }
        if let Some((_, v)) = var("DETECTOR_VOCABULARY_FILE") {
            self.detector.vocabulary_file = Some(v.into());
        }
        if let Some((n, v)) = var("DETECTOR_CONFIDENCE_THRESHOLD") {
            self.detector.confidence_threshold = parsed(&n, v)?;
        }
        if let Some((n, v)) = var("DETECTOR_NMS_THRESHOLD") {
            self.detector.nms_threshold = parsed(&n, v)?;
        }
        if let Some((n, v)) = var("NUTRITION_MODE") {
            self.nutrition.mode = keyword(&n, v)?;
        }
        if let Some((_, v)) = var("NUTRITION_TABLE") {
            self.nutrition.table = Some(v.into());
        }
        if let Some((_, v)) = var("NUTRITION_BASE_URL") {
            self.nutrition.base_url = Some(v);
        }
        if let Some((n, v)) = var("RECIPES_MODE") {
            self.recipes.mode = keyword(&n, v)?;
        }
        if let Some((_, v)) = var("RECIPES_CORPUS") {
            self.recipes.corpus = Some(v.into());
        }
        if let Some((_, v)) = var("RECIPES_BASE_URL") {
            self.recipes.base_url = Some(v);
        }
        if let Some((n, v)) = var("STORE_BACKEND") {
            self.store.backend = keyword(&n, v)?;
        }
        if let Some((_, v)) = var("STORE_PATH") {
            self.store.path = Some(v.into());
        }
        if let Some((_, v)) = var("STORE_URL") {
            self.store.url = Some(v);
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, overrides: &Overrides) {
        if let Some(bind) = overrides.bind {
            self.bind = bind;
        }
    }

    pub fn remote_timeout(&self) -> Duration {
        Duration::from_secs(self.remote_timeout_secs)
    }

    /// Checks thresholds, required settings per mode, and that every
    /// referenced path exists.
    pub fn validate(&self, secrets: &Secrets) -> Result<(), ConfigError> {
        for (field, value) in [
            ("detector.confidence_threshold", self.detector.confidence_threshold),
            ("detector.nms_threshold", self.detector.nms_threshold),
        ] {
            if !(value > 0.0 && value <= 1.0) {
                return Err(ConfigError::Invalid {
                    field,
                    message: format!("{value} outside (0, 1]"),
                });
            }
        }
        if self.detector.input_size.contains(&0) {
            return Err(ConfigError::Invalid {
                field: "detector.input_size",
                message: "dimensions must be positive".into(),
            });
        }
        if self.remote_timeout_secs == 0 {
            return Err(ConfigError::Invalid {
                field: "remote_timeout_secs",
                message: "must be positive".into(),
            });
        }
        if self.nutrition.max_in_flight == 0 {
            return Err(ConfigError::Invalid {
                field: "nutrition.max_in_flight",
                message: "must be positive".into(),
            });
        }

        match self.detector.backend {
            BackendKind::Stub => {
                existing("detector.fixture_dir", &self.detector.fixture_dir)?;
            }
            BackendKind::Model => {
                existing("detector.model_file", &self.detector.model_file)?;
                existing("detector.vocabulary_file", &self.detector.vocabulary_file)?;
            }
        }
        match self.nutrition.mode {
            SourceKind::Fixture => existing("nutrition.table", &self.nutrition.table)?,
            SourceKind::Remote => {
                if secrets.nutrition.is_none() {
                    return Err(ConfigError::MissingSecret {
                        field: "nutrition.mode = remote",
                        name: format!("{ENV_PREFIX}_NUTRITION_APP_ID / {ENV_PREFIX}_NUTRITION_APP_KEY"),
                    });
                }
            }
        }
        match self.recipes.mode {
            SourceKind::Fixture => existing("recipes.corpus", &self.recipes.corpus)?,
            SourceKind::Remote => {
                if secrets.recipes.is_none() {
                    return Err(ConfigError::MissingSecret {
                        field: "recipes.mode = remote",
                        name: format!("{ENV_PREFIX}_RECIPES_APP_ID / {ENV_PREFIX}_RECIPES_APP_KEY"),
                    });
                }
            }
        }
        match self.store.backend {
            StoreBackend::LocalCsv => {
                let path = self.store.path.as_ref().ok_or(ConfigError::Invalid {
                    field: "store.path",
                    message: "required for the local-csv store".into(),
                })?;
                let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
                if !parent.is_dir() {
                    return Err(ConfigError::MissingPath {
                        field: "store.path",
                        path: parent.display().to_string(),
                    });
                }
            }
            StoreBackend::RemoteSheet => {
                if self.store.url.is_none() {
                    return Err(ConfigError::Invalid {
                        field: "store.url",
                        message: "required for the remote-sheet store".into(),
                    });
                }
                if secrets.sheet_token.is_none() {
                    return Err(ConfigError::MissingSecret {
                        field: "store.backend = remote-sheet",
                        name: format!("{ENV_PREFIX}_SHEET_TOKEN"),
                    });
                }
            }
        }
        if let Some(dir) = &self.static_dir {
            if !dir.is_dir() {
                return Err(ConfigError::MissingPath {
                    field: "static_dir",
                    path: dir.display().to_string(),
                });
            }
        }
        Ok(())
    }
}

fn existing(field: &'static str, path: &Option<PathBuf>) -> Result<(), ConfigError> {
    match path {
        None => Err(ConfigError::Invalid {
            field,
            message: "required in this mode".into(),
        }),
        Some(p) if !p.exists() => Err(ConfigError::MissingPath {
            field,
            path: p.display().to_string(),
        }),
        Some(_) => Ok(()),
    }
}
