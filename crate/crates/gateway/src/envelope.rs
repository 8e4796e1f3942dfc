//! The error document every failed request returns, and the mapping from
//! domain errors onto its closed set of codes.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use imo_core::cache::CacheError;
use imo_core::ledger::LedgerError;
use imo_core::pathfinder::{InterpretError, PlanError};
use imo_core::registry::RegistryError;
use imo_core::runtime::RuntimeError;
use imo_core::sim::SimError;
use imo_core::workflow::{TaskError, WorkflowError};

use crate::server::document;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    NotFound,
    InvalidFormat,
    Unauthorized,
    Conflict,
    TooLarge,
    Internal,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::InvalidFormat => StatusCode::BAD_REQUEST,
            ErrorCode::Unauthorized => StatusCode::UNAUTHORIZED,
            ErrorCode::Conflict => StatusCode::CONFLICT,
            ErrorCode::TooLarge => StatusCode::PAYLOAD_TOO_LARGE,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorEnvelope {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub envelope: ErrorEnvelope,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self { status: code.status(), envelope: ErrorEnvelope { code, message: message.into(), detail: None } }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.envelope.detail = Some(detail);
        self
    }

    pub fn with_status(mut self, status: StatusCode) -> Self {
        self.status = status;
        self
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::NotFound, message)
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::InvalidFormat, message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Conflict, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Internal, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        document(self.status, &self.envelope)
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        use RegistryError::*;
        let code = match &e {
            InvalidName(_) | InvalidCapability(_) | InvalidManifest(_) | EmptyBlob => ErrorCode::InvalidFormat,
            StorageFull { .. } => ErrorCode::TooLarge,
            NotFound { .. } | BlobNotFound(_) => ErrorCode::NotFound,
            RollbackToSelf { .. } => ErrorCode::Conflict,
            IntegrityError { .. } | Corrupt(_) | Io(_) => ErrorCode::Internal,
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<PlanError> for ApiError {
    fn from(e: PlanError) -> Self {
        use PlanError::*;
        let code = match &e {
            UnknownModel(_) => ErrorCode::NotFound,
            EmptyPool => ErrorCode::Conflict,
            EmptyTask | IncompleteAssignment(_) | NoCandidates(_) | InfeasiblePlan | MismatchedReport
            | InvalidWeights(_) => ErrorCode::InvalidFormat,
            TooLarge { .. } => ErrorCode::TooLarge,
            Corrupt(_) | Io(_) => ErrorCode::Internal,
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<RuntimeError> for ApiError {
    fn from(e: RuntimeError) -> Self {
        match e {
            RuntimeError::Plan(p) => p.into(),
            RuntimeError::Registry(r) => r.into(),
            RuntimeError::UnknownModel(_) | RuntimeError::UnknownSubtask(_) => ApiError::not_found(e.to_string()),
            _ => ApiError::invalid(e.to_string()),
        }
    }
}

impl From<LedgerError> for ApiError {
    fn from(e: LedgerError) -> Self {
        use LedgerError::*;
        let code = match &e {
            Validation(_) | NegativeAmount(_) => ErrorCode::InvalidFormat,
            NoAgreement(_) | UnknownAccount(_) => ErrorCode::NotFound,
            DuplicateEvent => ErrorCode::Conflict,
            Corrupt { .. } | Io(_) => ErrorCode::Internal,
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<InterpretError> for ApiError {
    fn from(e: InterpretError) -> Self {
        match e {
            InterpretError::EmptyLexicon => ApiError::conflict(e.to_string()),
            _ => ApiError::invalid(e.to_string()),
        }
    }
}

impl From<TaskError> for ApiError {
    fn from(e: TaskError) -> Self {
        ApiError::invalid(e.to_string())
    }
}

impl From<WorkflowError> for ApiError {
    fn from(e: WorkflowError) -> Self {
        ApiError::invalid(e.to_string())
    }
}

impl From<CacheError> for ApiError {
    fn from(e: CacheError) -> Self {
        match e {
            CacheError::OutputTooLarge { .. } => ApiError::new(ErrorCode::TooLarge, e.to_string()),
            _ => ApiError::invalid(e.to_string()),
        }
    }
}

impl From<SimError> for ApiError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidConfig(_) => ApiError::invalid(e.to_string()),
            SimError::Unfinished { ref job_ids, ref report } => ApiError::conflict(e.to_string())
                .with_detail(serde_json::json!({ "job_ids": job_ids, "report": report })),
            SimError::LedgerUnavailable(_) => ApiError::internal(e.to_string()),
        }
    }
}
