//! HTTP and WebSocket API for spoken tutoring sessions.

pub mod app;
pub mod config;

pub use app::{router, AppState, ApiError, Created, ErrorBody};
pub use config::{ConfigError, ServerConfig};
