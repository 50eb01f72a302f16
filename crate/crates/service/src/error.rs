use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::{json, Value};
use thiserror::Error;

use biastest_core::datastore::DatastoreError;
use biastest_core::genpipeline::GenError;
use biastest_core::metrics::MetricsError;
use biastest_core::scorers::ScoreError;
use biastest_core::specs::ValidationErrorList;
use biastest_core::textquality::QualityError;

/// Failure classes shared by the CLI (exit codes) and the API (statuses).
#[derive(Debug, Error)]
pub enum AppError {
    /// Bad input. Exit 1, HTTP 400. `details` carries structured issues.
    #[error("{message}")]
    Validation { message: String, details: Option<Value> },
    #[error("{0}")]
    NotFound(String),
    /// Job-state conflict. HTTP 409.
    #[error("{0}")]
    Conflict(String),
    /// Chat, scorer or classifier unreachable. Exit 2, HTTP 502.
    #[error("{0}")]
    Backend(String),
    #[error("{0}")]
    Internal(String),
}

impl AppError {
    pub fn validation(message: impl Into<String>) -> Self {
        AppError::Validation {
            message: message.into(),
            details: None,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Backend(_) => 2,
            _ => 1,
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            AppError::Validation { .. } => StatusCode::BAD_REQUEST,
            AppError::NotFound(_) => StatusCode::NOT_FOUND,
            AppError::Conflict(_) => StatusCode::CONFLICT,
            AppError::Backend(_) => StatusCode::BAD_GATEWAY,
            AppError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            AppError::Validation { .. } => "validation",
            AppError::NotFound(_) => "not_found",
            AppError::Conflict(_) => "conflict",
            AppError::Backend(_) => "backend_unavailable",
            AppError::Internal(_) => "internal",
        }
    }
}

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.kind(), "message": self.to_string() });
        if let AppError::Validation { details: Some(d), .. } = &self {
            body["issues"] = d.clone();
        }
        (self.status(), Json(body)).into_response()
    }
}

impl From<ValidationErrorList> for AppError {
    fn from(e: ValidationErrorList) -> Self {
        AppError::Validation {
            message: e.to_string(),
            details: serde_json::to_value(e.issues()).ok(),
        }
    }
}

impl From<DatastoreError> for AppError {
    fn from(e: DatastoreError) -> Self {
        match e {
            DatastoreError::NotFound(m) => AppError::NotFound(m),
            DatastoreError::Io { .. } | DatastoreError::Csv(_) => AppError::Internal(e.to_string()),
            other => AppError::validation(other.to_string()),
        }
    }
}

impl From<ScoreError> for AppError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::BackendUnavailable(_) | ScoreError::Protocol(_) => AppError::Backend(e.to_string()),
            other => AppError::validation(other.to_string()),
        }
    }
}

impl From<MetricsError> for AppError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Score(s) => s.into(),
            other => AppError::validation(other.to_string()),
        }
    }
}

impl From<GenError> for AppError {
    fn from(e: GenError) -> Self {
        match e {
            GenError::ChatBackendUnavailable { .. } | GenError::UnparseableReply { .. } => {
                AppError::Backend(e.to_string())
            }
            other => AppError::validation(other.to_string()),
        }
    }
}

impl From<QualityError> for AppError {
    fn from(e: QualityError) -> Self {
        match e {
            QualityError::BackendUnavailable(_) => AppError::Backend(e.to_string()),
            other => AppError::validation(other.to_string()),
        }
    }
}
