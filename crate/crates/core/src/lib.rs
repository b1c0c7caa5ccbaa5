//! Pipeline engine and evaluation harness for tool-learning instruction data.
//!
//! The crate covers the full data machinery: API verification and simulation,
//! query feasibility gating, step-verified trajectory construction,
//! exploration-based reflection mining, the four tool-learning metrics, and
//! the dataset/export plumbing that ties the stages together. Every stage runs
//! against a pluggable chat backend, so the whole pipeline executes
//! deterministically offline under a scripted mock.

pub mod corpus;
pub mod dsl;
pub mod eval;
pub mod explore;
pub mod forge;
pub mod gateway;
pub mod hub;
pub mod model;
pub mod querygate;
pub mod store;

pub use model::{
    AnswerStatus, ApiCall, ErrorKind, Group, InstanceVerdict, Literal, Observation, Origin,
    PassFail, Query, ReflectionInstance, Solvability, Step, StepValidity, Terminal, ToolSpec,
    Trace, VerifiedInstance,
};
