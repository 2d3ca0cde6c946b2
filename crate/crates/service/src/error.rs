use matchbox_core::Error as CoreError;
use serde::{Deserialize, Serialize};

/// Machine-readable error codes. This is the complete set the service and
/// the CLI emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    InvalidInput,
    InvalidImage,
    InvalidTemplate,
    SpoofDetected,
    NoMinutiae,
    DuplicateSubject,
    NotFound,
    EmptyGallery,
    InsufficientData,
    CalibrationFailed,
    ConfigInvalid,
    StorageError,
    InternalError,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 13] = [
        ErrorCode::InvalidInput,
        ErrorCode::InvalidImage,
        ErrorCode::InvalidTemplate,
        ErrorCode::SpoofDetected,
        ErrorCode::NoMinutiae,
        ErrorCode::DuplicateSubject,
        ErrorCode::NotFound,
        ErrorCode::EmptyGallery,
        ErrorCode::InsufficientData,
        ErrorCode::CalibrationFailed,
        ErrorCode::ConfigInvalid,
        ErrorCode::StorageError,
        ErrorCode::InternalError,
    ];

    pub fn http_status(self) -> u16 {
        match self {
            ErrorCode::InvalidInput
            | ErrorCode::InvalidImage
            | ErrorCode::InvalidTemplate
            | ErrorCode::InsufficientData
            | ErrorCode::CalibrationFailed => 400,
            ErrorCode::NotFound => 404,
            ErrorCode::DuplicateSubject | ErrorCode::EmptyGallery => 409,
            ErrorCode::SpoofDetected | ErrorCode::NoMinutiae => 422,
            ErrorCode::ConfigInvalid | ErrorCode::StorageError | ErrorCode::InternalError => 500,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::InvalidInput => "invalid_input",
            ErrorCode::InvalidImage => "invalid_image",
            ErrorCode::InvalidTemplate => "invalid_template",
            ErrorCode::SpoofDetected => "spoof_detected",
            ErrorCode::NoMinutiae => "no_minutiae",
            ErrorCode::DuplicateSubject => "duplicate_subject",
            ErrorCode::NotFound => "not_found",
            ErrorCode::EmptyGallery => "empty_gallery",
            ErrorCode::InsufficientData => "insufficient_data",
            ErrorCode::CalibrationFailed => "calibration_failed",
            ErrorCode::ConfigInvalid => "config_invalid",
            ErrorCode::StorageError => "storage_error",
            ErrorCode::InternalError => "internal_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{}: {message}", code.as_str())]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    pub http_status: u16,
    /// Extra structured context, e.g. the spoof scores behind a rejection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<serde_json::Value>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError { code, message: message.into(), http_status: code.http_status(), details: None }
    }

    pub fn with_details(mut self, details: serde_json::Value) -> Self {
        self.details = Some(details);
        self
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::InvalidInput, message)
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::ConfigInvalid, message)
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let code = match &e {
            CoreError::InvalidInput(_) | CoreError::DegenerateGeometry(_) | CoreError::Json(_) => ErrorCode::InvalidInput,
            CoreError::InsufficientData(_) => ErrorCode::InsufficientData,
            CoreError::DetectionFailure { .. } => ErrorCode::CalibrationFailed,
            CoreError::ImageFormat(_) => ErrorCode::InvalidImage,
            CoreError::TemplateFormat(_) => ErrorCode::InvalidTemplate,
            CoreError::Conflict(_) => ErrorCode::DuplicateSubject,
            CoreError::NotFound(_) => ErrorCode::NotFound,
            CoreError::Storage(_) | CoreError::Io(_) => ErrorCode::StorageError,
        };
        ApiError::new(code, e.to_string())
    }
}
