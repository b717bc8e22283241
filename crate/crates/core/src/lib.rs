//! Deterministic class-incremental learning evaluation over precomputed
//! embedding banks.
//!
//! The engine shuffles classes with a fixed seed, splits them into
//! `B-m Inc-n` stages, feeds each stage to a learner operating on frozen
//! features, and records last accuracy, average accuracy and forgetting.
//!
//! ```no_run
//! use cil_core::{parse_config, run, RunOptions};
//!
//! let config = parse_config("exps/simplecil.json")?;
//! let result = run(&config, &RunOptions::from_env()?)?;
//! println!("{:?}", result.metrics);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod bank;
pub mod config;
pub mod error;
pub mod learners;
pub mod memory;
pub mod metrics;
pub mod protocol;
pub mod rng;
pub mod runner;
pub mod synth;

pub use bank::{
    decode_bank, encode_bank, load_bank, write_bank, ClassId, ClassSubsetView, EmbeddingBank,
    Manifest, Split,
};
pub use config::{parse_config, RunConfig, TaskLabelSpace, DEFAULT_SEED};
pub use error::{Error, Result};
pub use learners::{build_learner, Learner, LearnerKind, StageBatchPlan};
pub use memory::{herding_select, update_store, ExemplarStore};
pub use metrics::{accuracy, average_accuracy, forgetting, AccuracyMatrix, RunMetrics};
pub use protocol::{build_schedule, shuffle_classes, ClassOrder, StageSchedule};
pub use runner::{emit_results, execute, run, RunFailure, RunOptions, RunResult, StageReport};
pub use synth::{generate, SynthSpec};
