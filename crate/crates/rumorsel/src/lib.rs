//! Training engine, annotator and embedding backends, file formats and the
//! command-line driver built on [`rumorsel_core`].

pub mod backend;
pub mod cli;
pub mod config;
pub mod convert;
pub mod dataset;
pub mod engine;
pub mod evaluate;
pub mod export;
pub mod http;
pub mod runlog;

pub use rumorsel_core as core;
