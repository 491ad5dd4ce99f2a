pub mod config;
pub mod ensemble;
pub mod entangle;
pub mod experiment;
pub mod inference;
pub mod models;
pub mod presets;
pub mod quantum;
pub mod record;
mod sparse;
pub mod trajectory;
