//! Clinical assertion status detection: a configurable contextual rule
//! engine, a NegEx baseline, a multi-annotator merger and a span-level
//! evaluation harness.

pub mod contextual;
pub mod error;
pub mod eval;
pub mod i2b2;
pub mod io;
pub mod manifest;
pub mod merger;
pub mod negex;
pub mod phrase;
pub mod runner;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
pub use text::{Annotation, AssertionLabel, Chunk, Document, Sentence, Token};
