//! Command line and HTTP service around the memo skill memory.

pub mod commands;
pub mod prompt_teacher;
pub mod runtime;
pub mod service;
