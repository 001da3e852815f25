//! Validation of a parallel configuration (p, t, d, b, v) against a model,
//! batch size, and device budget, and the quantities derived from it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Count, ModelSpec, TrainingJob};

/// Pipeline schedule family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// All forwards for the batch, then all backwards.
    Gpipe,
    /// Warm-up forwards, then strict one-forward-one-backward alternation.
    OneFOneB,
    /// 1F1B generalized to `v` model chunks per device.
    Interleaved,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 3] = [
        ScheduleKind::Gpipe,
        ScheduleKind::OneFOneB,
        ScheduleKind::Interleaved,
    ];
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleKind::Gpipe => write!(f, "gpipe"),
            ScheduleKind::OneFOneB => write!(f, "1f1b"),
            ScheduleKind::Interleaved => write!(f, "interleaved"),
        }
    }
}

impl FromStr for ScheduleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gpipe" => Ok(ScheduleKind::Gpipe),
            "1f1b" | "one_f_one_b" => Ok(ScheduleKind::OneFOneB),
            "interleaved" => Ok(ScheduleKind::Interleaved),
            other => Err(format!(
                "unknown schedule `{other}` (expected gpipe, 1f1b, or interleaved)"
            )),
        }
    }
}

/// One point in the parallelization search space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParallelConfig {
    pub pipeline_size: Count,
    pub tensor_size: Count,
    pub data_size: Count,
    pub microbatch_size: Count,
    /// Model chunks per device; 1 means non-interleaved.
    #[serde(default = "one")]
    pub chunks_per_device: Count,
    pub schedule_kind: ScheduleKind,
    #[serde(default)]
    pub scatter_gather: bool,
    #[serde(default = "yes")]
    pub activation_recompute: bool,
}

fn one() -> Count {
    1
}

fn yes() -> bool {
    true
}

impl ParallelConfig {
    pub fn new(p: Count, t: Count, d: Count, b: Count, kind: ScheduleKind) -> Self {
        ParallelConfig {
            pipeline_size: p,
            tensor_size: t,
            data_size: d,
            microbatch_size: b,
            chunks_per_device: 1,
            schedule_kind: kind,
            scatter_gather: false,
            activation_recompute: true,
        }
    }

    pub fn with_chunks(mut self, v: Count) -> Self {
        self.chunks_per_device = v;
        self
    }

    pub fn devices(&self) -> Count {
        self.pipeline_size * self.tensor_size * self.data_size
    }
}

/// Quantities derived from a validated configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedQuantities {
    /// Total devices n = p·t·d.
    pub devices: Count,
    /// Microbatches per pipeline per batch, m = B / (d·b).
    pub microbatches: Count,
    /// B / b: microbatch count summed over all pipelines.
    pub batch_microbatch_ratio: Count,
    /// B / d: sequences processed by one pipeline per batch.
    pub per_pipeline_batch: Count,
    /// Transformer layers per pipeline stage per chunk, l / (p·v).
    pub layers_per_stage: Count,
    /// Transformer layers held by one device across its chunks, l / p.
    pub layers_per_device: Count,
    /// Model-parallel size M = t·p.
    pub model_parallel_size: Count,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConstraintViolation {
    #[error("{0} must be >= 1")]
    ZeroDimension(&'static str),
    #[error("chunks_per_device {v} > 1 requires the interleaved schedule")]
    ChunksRequireInterleaved { v: Count },
    #[error("p·t·d = {actual} does not match the device budget {budget}")]
    DeviceBudget { actual: Count, budget: Count },
    #[error("global batch {batch} is not divisible by data_size·microbatch_size = {per_step}")]
    BatchDivisibility { batch: Count, per_step: Count },
    #[error("{layers} layers are not divisible by pipeline_size·chunks = {stages}")]
    LayerDivisibility { layers: Count, stages: Count },
    #[error("microbatch count {m} must be a multiple of pipeline_size {p} when interleaving")]
    MicrobatchMultiple { m: Count, p: Count },
}

/// Every constraint the configuration violates, in a fixed order.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ValidationErrors {
    pub violations: Vec<ConstraintViolation>,
}

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for v in &self.violations {
            if !first {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
            first = false;
        }
        Ok(())
    }
}

/// Check a configuration against the model, job, and device budget.
///
/// Total: every input yields either the derived quantities or a non-empty
/// violation list. Divisibility is required exactly; partial microbatches or
/// uneven layer assignment are rejected rather than padded.
pub fn validate(
    config: &ParallelConfig,
    model: &ModelSpec,
    job: &TrainingJob,
    device_budget: Count,
) -> Result<DerivedQuantities, ValidationErrors> {
    let mut violations = Vec::new();
    let p = config.pipeline_size;
    let t = config.tensor_size;
    let d = config.data_size;
    let b = config.microbatch_size;
    let v = config.chunks_per_device;
    let batch = job.global_batch;

    for (name, value) in [
        ("pipeline_size", p),
        ("tensor_size", t),
        ("data_size", d),
        ("microbatch_size", b),
        ("chunks_per_device", v),
        ("global_batch", batch),
    ] {
        if value == 0 {
            violations.push(ConstraintViolation::ZeroDimension(name));
        }
    }
    if !violations.is_empty() {
        return Err(ValidationErrors { violations });
    }

    if v > 1 && config.schedule_kind != ScheduleKind::Interleaved {
        violations.push(ConstraintViolation::ChunksRequireInterleaved { v });
    }

    let n = p * t * d;
    if n != device_budget {
        violations.push(ConstraintViolation::DeviceBudget {
            actual: n,
            budget: device_budget,
        });
    }

    let per_step = d * b;
    let mut microbatches = None;
    if !batch.is_multiple_of(per_step) {
        violations.push(ConstraintViolation::BatchDivisibility { batch, per_step });
    } else {
        microbatches = Some(batch / per_step);
    }

    let stages = p * v;
    if !model.layers.is_multiple_of(stages) {
        violations.push(ConstraintViolation::LayerDivisibility {
            layers: model.layers,
            stages,
        });
    }

    if let Some(m) = microbatches {
        if config.schedule_kind == ScheduleKind::Interleaved && m % p != 0 {
            violations.push(ConstraintViolation::MicrobatchMultiple { m, p });
        }
    }

    if !violations.is_empty() {
        return Err(ValidationErrors { violations });
    }

    let m = microbatches.expect("checked above");
    Ok(DerivedQuantities {
        devices: n,
        microbatches: m,
        batch_microbatch_ratio: batch / b,
        per_pipeline_batch: batch / d,
        layers_per_stage: model.layers / stages,
        layers_per_device: model.layers / p,
        model_parallel_size: t * p,
    })
}
