//! Directional preference alignment at desk scale.
//!
//! Multi-objective reward regression, unit-vector preferences with linear
//! scalarization, a preference-conditioned autoregressive policy with exact
//! likelihoods, and the iterative rejection-sampling fine-tuning loop that
//! ties them together. Everything runs against a synthetic environment whose
//! Pareto front can be enumerated exactly.
//!
//! The crate is `no_std` (with `alloc`). Enable `parallel` to fan rejection
//! sampling, sweeps and gradient chunks out over a rayon pool; results do not
//! depend on the worker count.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]
// `!(a > b)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod alignment;
pub mod baselines;
pub mod env;
mod error;
pub mod evaluation;
pub mod exec;
mod linalg;
pub mod policy;
pub mod preference;
pub mod reward_model;
pub mod rng;

pub use alignment::{
    build_iteration_dataset, rejection_sample, run_dpa, AlignmentConfig, CandidateSampler,
    DpaInputs, DpaRun, IterationMetrics, PreferenceTriple, ReplayPreference, RunReport,
    TripleSource,
};
pub use baselines::{
    control_error, soup_interpolate, train_scalar_rsf, train_steerlm, RewardConditioning,
};
pub use env::{AnnotatedExample, EnvConfig, Prompt, Response, SynthEnv, Token, Variant};
pub use error::{Error, Result};
pub use evaluation::{
    hypervolume, pareto_dominates, spearman, sweep, EvalConfig, SweepPoint, SweepReport,
};
pub use exec::Executor;
pub use policy::{
    init_policy, FitConfig, GenerationConfig, Optimizer, PolicyArch, PolicyParams, SequenceExample,
};
pub use preference::{
    angle_of, sample_preference, scalarize, DirectionalPreference, PreferenceArc,
    PreferenceDistribution,
};
pub use reward_model::{
    predict, rescale, train_reward_model, FeatureSpec, LearnedScorer, OracleScorer,
    RewardModelConfig, RewardModelParams, RewardVector, Scorer, ScorerKind, Solver,
};
