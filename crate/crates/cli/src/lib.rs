//! Command-line tools and the HTTP session service.

pub mod api;
pub mod commands;
pub mod input;
pub mod session;
pub mod store;
