use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::multipart::MultipartError;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use platescope_core::detect::DetectError;
use platescope_core::nutrition::NutritionError;
use platescope_core::recommend::RecommendError;
use platescope_core::store::StoreError;
use serde::{Deserialize, Serialize};

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.to_owned(),
                message: message.into(),
                detail: None,
            },
        }
    }

    pub fn with_detail(mut self, detail: serde_json::Value) -> Self {
        self.body.detail = Some(detail);
        self
    }

    pub fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn not_found() -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
    }

    pub fn method_not_allowed() -> Self {
        Self::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed on this endpoint")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = %self.body.code, message = %self.body.message, "request failed");
        }
        (self.status, Json(self.body)).into_response()
    }
}

impl From<DetectError> for ApiError {
    fn from(e: DetectError) -> Self {
        let message = e.to_string();
        match e {
            DetectError::VideoUnsupported => Self::bad_request("video_unsupported", message),
            DetectError::Undecodable(_) => Self::bad_request("invalid_image", message),
            DetectError::Url { .. } => Self::bad_request("image_url", message),
            DetectError::TooLarge { .. } => Self::new(StatusCode::PAYLOAD_TOO_LARGE, "payload_too_large", message),
            DetectError::Threshold { .. } => Self::bad_request("invalid_parameter", message),
            DetectError::Backend { .. }
            | DetectError::MissingFile { .. }
            | DetectError::VocabularyMismatch { .. }
            | DetectError::Sidecar { .. }
            | DetectError::Unavailable(_) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "detector_error", message),
        }
    }
}

impl From<NutritionError> for ApiError {
    fn from(e: NutritionError) -> Self {
        let message = e.to_string();
        match e {
            NutritionError::Unavailable { .. } => {
                Self::new(StatusCode::BAD_GATEWAY, "nutrient_source_unavailable", message)
            }
            NutritionError::UnknownFood(_) => Self::new(StatusCode::NOT_FOUND, "unknown_food", message),
            NutritionError::Table { .. } | NutritionError::Quantity | NutritionError::Validation(_) => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "nutrient_source_error", message)
            }
        }
    }
}

impl From<RecommendError> for ApiError {
    fn from(e: RecommendError) -> Self {
        let message = e.to_string();
        match e {
            RecommendError::OutOfRange { field, value, .. } => Self::bad_request("invalid_goals", message)
                .with_detail(serde_json::json!({ "field": field, "value": value })),
            RecommendError::InvalidRequest(_) => Self::bad_request("invalid_parameter", message),
            RecommendError::Unavailable { .. } => Self::new(StatusCode::BAD_GATEWAY, "recipe_source_unavailable", message),
            RecommendError::DuplicateRecipe(_) => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "recipe_source_error", message)
            }
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let message = e.to_string();
        match e {
            StoreError::NoGoals => Self::new(StatusCode::NOT_FOUND, "no_goals", message),
            StoreError::InvalidGoals(_) | StoreError::Validation(_) => Self::bad_request("invalid_goals", message),
            StoreError::Remote { retriable: true, .. } => {
                Self::new(StatusCode::SERVICE_UNAVAILABLE, "store_unavailable", message)
            }
            StoreError::Io { .. } | StoreError::Corrupt { .. } | StoreError::Remote { .. } => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "store_error", message)
            }
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        let code = match r {
            JsonRejection::MissingJsonContentType(_) => {
                return Self::new(StatusCode::UNSUPPORTED_MEDIA_TYPE, "unsupported_media_type", r.body_text())
            }
            JsonRejection::JsonSyntaxError(_) => "invalid_json",
            _ => "invalid_body",
        };
        Self::bad_request(code, r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        Self::bad_request("invalid_parameter", r.body_text())
    }
}

impl From<MultipartError> for ApiError {
    fn from(e: MultipartError) -> Self {
        let status = e.status();
        if status == StatusCode::PAYLOAD_TOO_LARGE {
            Self::new(status, "payload_too_large", e.body_text())
        } else {
            Self::bad_request("invalid_multipart", e.body_text())
        }
    }
}
