//! Translate natural-language navigation instructions into behavior plans.
//!
//! The crate spans the whole pipeline: a synthetic corpus generator over
//! behavioral navigation graphs, a tape-based autodiff engine, recurrent
//! encoders with multi-head attention fusion, a plan decoder, training and
//! evaluation loops, and the metrics used to score predicted plans.

pub mod cli;
pub mod corpus;
pub mod decoder;
pub mod encoders;
pub mod fusion;
pub mod graph;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod seeding;
pub mod tensor;
pub mod training;
