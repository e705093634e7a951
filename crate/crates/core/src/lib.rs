//! Online kernel selection under bandit feedback.
//!
//! Each round a selector samples one candidate kernel, only that kernel's
//! hypothesis predicts and learns, and the observed loss drives the next
//! selection distribution. Three selection rules are provided (OKS, OKS++,
//! IOKS), each over exact RKHS hypotheses or random-feature approximations.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod engine;
pub mod error;
pub mod harness;
pub mod hypotheses;
pub mod kernels;
pub mod losses;
pub mod selectors;

pub use data::{parse_csv, parse_libsvm, permute, preprocess, Dataset, StreamOrder};
pub use engine::{diagnostic_regret, offline_oracle, OnlineRun, RunSummary, Task, TrialRecord};
pub use error::{Error, Result};
pub use harness::{
    budget_emulation, emit_report, run_experiment, run_on_dataset, Algorithm, Param, ResultTable,
    RunConfig,
};
pub use hypotheses::{Hypothesis, RfHypothesis, RkhsHypothesis, ScriptedArm};
pub use kernels::{FeatureMap, KernelSpec};
pub use losses::{LossFunction, LossKind};
pub use selectors::{IoksVariant, SelectorConfig, SelectorState};
