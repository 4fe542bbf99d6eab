//! Conversational construction of safe, locally executable data pipelines.

pub mod catalog;
pub mod engine;
pub mod eval;
pub mod exec;
pub mod intent;
pub mod pipeline;
pub mod provider;
pub mod retrieval;
pub mod safety;
pub mod service;
