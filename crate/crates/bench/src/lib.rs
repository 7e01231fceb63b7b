pub mod ablation;
pub mod config;
pub mod error;
pub mod image_io;
pub mod patterns;
pub mod profile;
pub mod runner;
pub mod svg;
pub mod report;
