//! Retrieval-augmented skill memory for a neuro-symbolic tabletop
//! manipulation policy.
//!
//! The policy decomposes a task into subtasks, asks a language model for a
//! skill program per subtask, runs it in a kinematic simulator and learns
//! from human corrections through the [`skillbook`].

pub mod cluster;
pub mod config;
pub mod dsl;
pub mod embedding;
pub mod feedback;
pub mod geometry;
pub mod model;
pub mod policy;
pub mod prompts;
pub mod scene;
pub mod simenv;
pub mod skillbook;

/// Bundled task suite, fixtures and feedback corpus shipped with the crate.
pub fn asset_dir() -> std::path::PathBuf {
    std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets")
}
