//! Three-scale land-surface-temperature fusion.
//!
//! A fine snapshot, a moderate daily observation and a coarse gapless
//! half-hourly field are combined into gapless fine-resolution diurnal LST.
//! The crate provides the raster model ([`grid`]), solar geometry
//! ([`solar`]), diurnal-cycle fitting and temporal normalization ([`dtc`]),
//! global linear sensor normalization ([`sensornorm`]), the filter-based
//! fusion kernel ([`fusion`]), in-situ LST retrieval ([`insitu`]),
//! evaluation metrics ([`evalkit`]), a synthetic scene generator
//! ([`synth`]) and the stage orchestration used by the command-line tool
//! ([`pipeline`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dtc;
pub mod error;
pub mod evalkit;
pub mod fusion;
pub mod grid;
pub mod insitu;
pub mod pipeline;
pub mod sensornorm;
pub mod solar;
pub mod synth;

pub use error::{Error, Result};
