//! Desk-scale performance models for training large transformers with
//! combined pipeline, tensor, and data parallelism.
//!
//! The crate provides:
//!
//! - closed-form parameter counts, FLOP accounting, and wall-clock training
//!   estimates ([`model`]);
//! - a cluster description with rank-to-node placement and an α–β transfer
//!   model ([`hardware`]);
//! - validation of (p, t, d, b, v) configurations ([`parallel`]);
//! - communication volumes, task durations, and memory footprints with
//!   activation recomputation ([`costs`]);
//! - static pipeline schedules (all-forward-first, 1F1B, interleaved) and a
//!   deterministic event simulator with bubble/in-flight metrics and an
//!   independent timeline validator ([`schedule`]);
//! - a configuration planner that enumerates, prices, and ranks parallel
//!   layouts for a device budget ([`planner`]).
//!
//! All evaluation is pure and deterministic: identical inputs produce
//! bit-identical timelines, estimates, and rankings.

pub mod costs;
pub mod hardware;
pub mod model;
pub mod parallel;
pub mod planner;
pub mod schedule;

pub use costs::{CommVolumes, CostParams, MemoryFootprint, TaskDurations};
pub use hardware::{HardwareSpec, LinkClass, RankMapping};
pub use model::{FlopBreakdown, ModelSpec, TrainingJob};
pub use parallel::{DerivedQuantities, ParallelConfig, ScheduleKind};
pub use planner::{PlanOutcome, PlanQuery, PlanResult};
pub use schedule::{StaticSchedule, Timeline};
