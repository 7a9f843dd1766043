//! Evaluation kernels for temporal generalization of language models.
//!
//! Everything in this crate is a pure function of its inputs: document
//! preprocessing and period bucketing, bits-per-character and accuracy
//! metrics, release-relative period classification, trend fitting, and the
//! one-sided two-proportion tests used for bias and degeneration analysis.
//! Model access goes through the [`gateway`] traits so that network
//! backends can live in a std companion crate while deterministic mocks
//! live here.
//!
//! The crate is `no_std` (with `alloc`) when built without the default
//! `std` feature.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod calendar;
pub mod corpus;
pub mod event;
pub mod gateway;
pub mod metrics;
pub mod rng;
pub mod stats;
pub mod temporal;

pub use chrono::NaiveDate;
