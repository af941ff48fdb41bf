//! Lab service and command-line plumbing around `maglab-core`.
// `!(a > b)` is used on purpose to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod api;
pub mod config;
pub mod executor;
pub mod lab;
pub mod plot;
pub mod runlog;
pub mod store;
pub mod server;
pub mod stream;

pub use api::{ApiError, ApiRequest, ApiResponse, StreamEvent, StreamMessage};
pub use config::LabConfig;
pub use executor::Executor;
pub use lab::{Lab, LabError};
