//! HTTP service: meal analysis, food log, goals, recommendations and health,
//! all under `/api`, with JSON error bodies of the form
//! `{code, message, detail?}`.

pub mod api;
pub mod config;
pub mod error;
pub mod state;

use axum::extract::DefaultBodyLimit;
use axum::http::{header, HeaderValue, Method};
use axum::routing::{get, post};
use axum::Router;
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::ServeDir;
use tower_http::trace::TraceLayer;

pub use config::{ConfigError, Overrides, Secrets, ServiceConfig};
pub use error::{ApiError, ErrorBody};
pub use state::{AppState, StartupError};

/// Slack for multipart framing and small text parts on top of the image cap.
const MULTIPART_OVERHEAD: usize = 64 * 1024;

pub fn router(state: AppState, cors_origins: &[String], static_dir: Option<&std::path::Path>) -> Router {
    let body_limit = state.max_upload_bytes + MULTIPART_OVERHEAD;
    let api = Router::new()
        .route("/meals", post(api::post_meal))
        .route("/log", get(api::get_log))
        .route("/goals", get(api::get_goals).put(api::put_goals))
        .route("/recommendations", get(api::get_recommendations))
        .route("/health", get(api::get_health))
        .fallback(api::not_found)
        .method_not_allowed_fallback(api::method_not_allowed)
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state);

    let mut app = Router::new().nest("/api", api);
    app = match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.fallback(api::not_found),
    };
    let origins: Vec<HeaderValue> = cors_origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
    if !origins.is_empty() {
        app = app.layer(
            CorsLayer::new()
                .allow_origin(AllowOrigin::list(origins))
                .allow_methods([Method::GET, Method::POST, Method::PUT, Method::OPTIONS])
                .allow_headers([header::CONTENT_TYPE]),
        );
    }
    app.layer(TraceLayer::new_for_http())
}

/// Builds the state from `config`, binds, and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig, secrets: Secrets) -> Result<(), StartupError> {
    let state = AppState::from_config(&config, &secrets)?;
    tracing::info!(
        backend = %state.detector.capability().name,
        nutrition = state.modes.nutrition,
        recipes = state.modes.recipes,
        store = state.modes.store,
        "starting"
    );
    let app = router(state, &config.cors_origins, config.static_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(config.bind)
        .await
        .map_err(|source| StartupError::Bind {
            addr: config.bind,
            source,
        })?;
    tracing::info!(addr = %config.bind, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(StartupError::Serve)
}
