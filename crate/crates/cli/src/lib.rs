//! Command-line stages and the live streaming service.

pub mod commands;
pub mod service;
