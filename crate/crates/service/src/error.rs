use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use serde::Serialize;

use zeta_core::embed::EmbedError;
use zeta_core::infer::InferError;
use zeta_core::kb::KbError;
use zeta_core::study::StudyError;

/// An error rendered as `application/problem+json`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub detail: String,
}

#[derive(Serialize)]
struct Problem<'a> {
    #[serde(rename = "type")]
    kind: String,
    title: &'a str,
    status: u16,
    code: &'a str,
    detail: &'a str,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, detail: impl Into<String>) -> Self {
        Self {
            status,
            code,
            detail: detail.into(),
        }
    }

    pub fn not_found(code: &'static str, detail: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, detail)
    }

    pub fn internal(detail: impl ToString) -> Self {
        Self::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "internal",
            detail.to_string(),
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = self.code, detail = %self.detail, "request failed");
        }
        let body = Problem {
            kind: format!("urn:zeta:problem:{}", self.code),
            title: self.status.canonical_reason().unwrap_or("error"),
            status: self.status.as_u16(),
            code: self.code,
            detail: &self.detail,
        };
        let json = serde_json::to_vec(&body).unwrap_or_default();
        (
            self.status,
            [(header::CONTENT_TYPE, "application/problem+json")],
            json,
        )
            .into_response()
    }
}

impl From<KbError> for ApiError {
    fn from(e: KbError) -> Self {
        let (status, code) = match &e {
            KbError::AlreadyRejected(_) => (StatusCode::CONFLICT, "already_rejected"),
            KbError::UnknownCandidate(_) => (StatusCode::NOT_FOUND, "unknown_candidate"),
            KbError::MissingRevisedText(_)
            | KbError::MissingReasons { .. }
            | KbError::UnexpectedRevisedText { .. }
            | KbError::UnchangedRevision(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_review"),
            KbError::EmptyPolarity { .. } | KbError::InvalidKnowledgeBase(_) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "invalid_knowledge_base")
            }
            KbError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "io"),
            _ => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_input"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<InferError> for ApiError {
    fn from(e: InferError) -> Self {
        match e {
            InferError::UnknownCondition(_) => Self::not_found("unknown_condition", e.to_string()),
            InferError::Embed(inner) => inner.into(),
            InferError::PairingUnavailable(_) | InferError::DimMismatch { .. } => Self::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "cannot_score",
                e.to_string(),
            ),
            other => Self::internal(other),
        }
    }
}

impl From<EmbedError> for ApiError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::MissingKey(_) => Self::not_found("unknown_sample", e.to_string()),
            EmbedError::HttpError { .. } | EmbedError::Transport(_) => Self::new(
                StatusCode::BAD_GATEWAY,
                "encoder_unavailable",
                e.to_string(),
            ),
            other => Self::internal(other),
        }
    }
}

impl From<StudyError> for ApiError {
    fn from(e: StudyError) -> Self {
        match e {
            StudyError::ConflictingAnswer { .. } => {
                Self::new(StatusCode::CONFLICT, "conflicting_answer", e.to_string())
            }
            StudyError::UnknownCard { .. } | StudyError::WrongSession { .. } => Self::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "unknown_card",
                e.to_string(),
            ),
            other => Self::internal(other),
        }
    }
}
