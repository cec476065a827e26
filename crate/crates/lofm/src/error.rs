use lofm_core::matrix::MatrixError;
use lofm_core::ml::MlError;
use lofm_core::pipeline::PipelineError;
use lofm_core::tracker::TrackerError;
use lofm_core::trust::TrustError;
use serde::Serialize;

use crate::store::StoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed request or arguments.
    BadRequest,
    NotFound,
    /// Refused by the phase guard or an idempotency clash.
    Conflict,
    /// Well-formed but fails a domain rule.
    Domain,
    Internal,
}

/// `{code, message}` as returned to clients; `kind` picks the HTTP status and
/// exit code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, thiserror::Error)]
#[error("{code}: {message}")]
pub struct AppError {
    #[serde(skip)]
    pub kind: ErrorKind,
    pub code: String,
    pub message: String,
}

impl AppError {
    pub fn new(kind: ErrorKind, code: impl Into<String>, message: impl Into<String>) -> Self {
        AppError { kind, code: code.into(), message: message.into() }
    }

    pub fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self::new(ErrorKind::BadRequest, code, message)
    }

    pub fn not_found(code: &str, message: impl Into<String>) -> Self {
        Self::new(ErrorKind::NotFound, code, message)
    }

    pub fn denied(code: &str, message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Conflict, code, message)
    }

    pub fn domain(code: &str, message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Domain, code, message)
    }
}

impl From<StoreError> for AppError {
    fn from(e: StoreError) -> Self {
        AppError::new(ErrorKind::Internal, "storage", e.to_string())
    }
}

impl From<PipelineError> for AppError {
    fn from(e: PipelineError) -> Self {
        let msg = e.to_string();
        match e {
            PipelineError::InsufficientBaseline { .. } => AppError::domain("insufficient-baseline", msg),
            PipelineError::NoBaselineData(_) => AppError::domain("no-data", msg),
            PipelineError::EmptyPeriod => AppError::bad_request("empty-period", msg),
            PipelineError::InvalidRange(_) => AppError::bad_request("invalid-range", msg),
        }
    }
}

impl From<MlError> for AppError {
    fn from(e: MlError) -> Self {
        let msg = e.to_string();
        match e {
            MlError::InsufficientTrainingData { .. } => AppError::domain("insufficient-training-data", msg),
            MlError::InvalidHyperparams(_) => AppError::bad_request("invalid-hyperparams", msg),
            MlError::InvalidTable(_) => AppError::domain("invalid-table", msg),
            MlError::TooFewRowsForFolds { .. } => AppError::domain("too-few-rows", msg),
        }
    }
}

impl From<MatrixError> for AppError {
    fn from(e: MatrixError) -> Self {
        let msg = e.to_string();
        match e {
            MatrixError::NoSignal => AppError::domain("no-signal", msg),
            MatrixError::UnknownFormat(_) => AppError::bad_request("unknown-format", msg),
            MatrixError::EmptyAssessments => AppError::domain("empty-assessments", msg),
            _ => AppError::domain("invalid-matrix", msg),
        }
    }
}

impl From<TrustError> for AppError {
    fn from(e: TrustError) -> Self {
        let msg = e.to_string();
        let code = match e {
            TrustError::NoSelection => "no-selection",
            TrustError::TooManyChoices(_) => "too-many-choices",
            TrustError::MissingMandatory => "missing-mandatory",
            TrustError::UnknownIntervention(_) => "unknown-intervention",
            TrustError::DuplicateChoice(_) => "duplicate-choice",
            TrustError::ParticipantMismatch(_) => "participant-mismatch",
            TrustError::InsufficientInterventionDays { .. } => "insufficient-intervention-days",
            TrustError::EmptyBaseline(_) => "empty-baseline",
            TrustError::MissingCompliance(_) => "missing-compliance",
            TrustError::CohortTooSmall(_) => "cohort-too-small",
            TrustError::InvalidSleepEfficiency(_) => "invalid-sleep-efficiency",
        };
        AppError::domain(code, msg)
    }
}

impl From<TrackerError> for AppError {
    fn from(e: TrackerError) -> Self {
        let msg = e.to_string();
        let code = match e {
            TrackerError::UnchosenTarget(_) => "unchosen-target",
            TrackerError::MissingTarget(_) => "missing-target",
            TrackerError::DuplicateTarget(_) => "duplicate-target",
            TrackerError::InvalidTarget(..) => "invalid-target",
        };
        AppError::domain(code, msg)
    }
}
