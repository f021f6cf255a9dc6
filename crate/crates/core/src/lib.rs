//! Unsupervised syllable discovery and annotation for birdsong recordings.

pub mod archive;
pub mod clustering;
pub mod config;
pub mod evaluation;
pub mod events;
pub mod frontend;
pub mod pipeline;
pub mod pursuit;
pub mod records;
pub mod spg;
pub mod synth;
pub mod templates;
