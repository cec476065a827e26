//! Event-sourced store, command layer, HTTP service and command line around
//! `lofm-core`.

pub mod app;
pub mod cli;
pub mod csv_io;
pub mod error;
pub mod service;
pub mod state;
pub mod store;

pub use app::Lofm;
pub use error::{AppError, ErrorKind};
