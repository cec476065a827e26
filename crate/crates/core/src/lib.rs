//! Parallel expert-rules and per-participant ML models over the same daily
//! observations, contrasted in a Leap-of-Faith (LoFM) matrix, with the
//! demonstrated/deserved trust indices DIRTI, DAFTI and DOTI.
//!
//! The crate is `no_std` (with `alloc`). File formats, persistence, the HTTP
//! service and the command line live in the `lofm` companion crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod matrix;
pub mod ml;
pub mod num;
pub mod pipeline;
pub mod registry;
pub mod rules;
pub mod sim;
pub mod tracker;
pub mod trust;

pub use matrix::{Demarcations, LofmMatrix};
pub use ml::{ImportanceMap, TrainedModel, TrainingTable};
pub use pipeline::{Dataset, DateRange, Observation};
pub use registry::Endpoint;
pub use rules::{Band, Direction, Rule, RuleAssessment, Ruleset};
pub use trust::{ComplianceRecord, Ratio, SelectionRecord, TrustIndex};
