//! Lane-change trajectory toolkit: a sinusoidal-acceleration maneuver model,
//! its least-squares fit, a strict answer grammar for language-model outputs,
//! scenario extraction from vehicle tracks, prompt and corpus building, a
//! heuristic baseline and scoring.

// Range guards are written as negated comparisons so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod codec;
pub mod eval;
pub mod fitting;
pub mod kinematics;
pub mod prompt;
pub mod scenario;
pub mod synth;
pub mod tracks;
