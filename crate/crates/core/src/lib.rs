//! Core algorithms for the obbr workbench: forging data-poisoning attacks on
//! instruction-tuning datasets, assembling benign-rewriting contexts over a
//! retrieved exemplar index, scoring trigger leakage and refusal-based attack
//! success, and checking the mixture-model safety claims by exact
//! enumeration.
//!
//! This crate is `no_std` (with `alloc`) and does no IO; file formats, HTTP
//! transports, and the CLI live in the `obbr-workbench` companion crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod attack;
pub mod client;
pub mod dataset;
pub mod evaluate;
pub mod mixture;
pub mod retrieval;
pub mod rewrite;
pub mod rng;

pub use dataset::{AttackTag, Dataset, Label, Sample};
