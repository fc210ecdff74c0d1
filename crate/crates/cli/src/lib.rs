//! Command-line front end and HTTP service for the fruitpal hub.

pub mod commands;
pub mod server;
