//! Multimodal audiobook generation engine.
//!
//! A story goes through four stages: speaker personas (face + voice),
//! a per-sentence script (speaker + delivery instruction), sentence-level
//! synthesis with assembly into one WAV, and evaluation.

pub mod audio;
pub mod backends;
pub mod config;
pub mod eval;
pub mod hash;
pub mod persona;
pub mod pipeline;
pub mod prompts;
pub mod runlog;
pub mod script;
pub mod story;
pub mod synthesis;
