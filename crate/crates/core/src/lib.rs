//! Decompose, navigate, extract and execute: an LLM web-agent pipeline with
//! dynamic re-planning, run against deterministic simulated websites.
//!
//! The pipeline stages live in [`decomposer`], [`navigator`], [`extractor`]
//! and [`executor`]; [`harness`] wires them together per task. Model access
//! goes through [`gateway`], which also holds the prompt catalog. The
//! simulated sites live in [`env`].

pub mod action;
pub mod answer;
pub mod model;

pub use action::{parse_action, Action, ActionParseError};
pub mod env;
pub mod gateway;
pub mod decomposer;
pub mod navigator;
pub mod extractor;
pub mod sandbox;
pub mod executor;
pub mod harness;
pub mod scripting;
