//! Batch evaluation harness for LLM-generated Avrae commands.
//!
//! The pipeline turns FIREBALL-style game-state records into prompts for a
//! chat-completions backend, extracts and parses the Avrae command from each
//! generation, grounds it against the combat state, and scores it with
//! format, reference, BLEU, ROUGE-1/2/L, and perplexity metrics.
//!
//! Stages are file-to-file and independently re-runnable:
//!
//! ```text
//! ingest -> run -> score -> report
//! ```

pub mod cli;
pub mod command;
pub mod config;
pub mod dataset;
mod digest;
pub mod inference;
pub mod metrics;
pub mod prompts;
pub mod state;
