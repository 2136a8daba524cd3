//! Multi-agent video question answering over long egocentric videos.
//!
//! Each question is answered by a configurable team of LLM agents. A
//! generator proposes question-specific experts, each expert consults a
//! video tool (caption lookup or frame analysis), and an organizer picks
//! the final choice. Several configurations are combined by majority vote.

pub mod agent;
pub mod cli;
pub mod config;
pub mod dag;
pub mod dataset;
pub mod ensemble;
pub mod eval;
pub mod llm;
pub mod prompts;
pub mod qa;
pub mod runner;
pub mod store;
pub mod tools;
