//! Driver workload estimation from asynchronous driving-performance streams.
//!
//! Two estimators share one data model:
//! - a two-state Markov Bayesian filter that tracks the instantaneous workload
//!   level (Low/High) from per-channel likelihood tables learned by KDE
//!   ([`filter`], [`likelihood`]);
//! - a random-convolutional-kernel classifier that assigns a driver to an
//!   average workload profile (L/M/H), fusing per-window scores with a
//!   moving-average sequence filter ([`profiler`]).
//!
//! [`simulator`] produces ground-truth-labelled journeys for verification, and
//! [`eval`] holds the metrics and comparison harness.

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod eval;
pub mod filter;
pub mod labeling;
pub mod likelihood;
pub mod profiler;
pub mod simulator;
pub mod stream;

pub use filter::{
    builtin_matrices, decide, init_filter, run_filter, ContextPolicy, FilterError, FilterState, TransitionMatrix,
    WorkloadPosterior,
};
pub use labeling::{
    awp_from_lwr, expand_labels, label_prompts, lwr, AwpClass, LabelError, LabelWindow, LabeledInstant, LabeledSample,
    Workload,
};
pub use likelihood::{
    fit_kde, train_likelihoods, BandwidthRule, DensityTable, KdeConfig, LikelihoodError, LikelihoodSet, LikelihoodTable,
};
pub use stream::{
    derive_rate_channels, read_journey, write_journey, ChannelSample, ChannelSchema, ContextAnnotation, ContextKind,
    ContextTag, Journey, JourneyError, PromptEvent, RoadType,
};
