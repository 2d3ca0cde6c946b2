//! Enrollment, verification and identification service for contactless
//! fingerprint captures, exposed over HTTP and as a command-line tool.

pub mod cli;
pub mod config;
pub mod error;
pub mod http;
pub mod service;

pub use config::PipelineConfig;
pub use error::{ApiError, ErrorCode};
pub use service::{Capture, Frontend, Service};
