//! Enumeration and ranking of parallel configurations for a device budget
//! and batch size, combining the pipeline-bubble, communication-volume, and
//! memory models into one iteration-time estimate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costs::{
    self, comm_volumes, dp_allreduce_cost, CostParams, MemoryFootprint, TaskDurations,
};
use crate::hardware::{cross_node_mapping, default_mapping, HardwareSpec, RankMapping};
use crate::model::{flops_per_iteration_with, Count, ModelSpec, TrainingJob};
use crate::parallel::{validate, DerivedQuantities, ParallelConfig, ScheduleKind};
use crate::schedule::{build_schedule, simulate, CommSetup};

/// A planning request: find good (p, t, d, b, v, schedule) points for
/// `devices` GPUs at global batch `global_batch`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanQuery {
    pub devices: Count,
    pub global_batch: Count,
    pub model: ModelSpec,
    #[serde(default = "HardwareSpec::selene")]
    pub hardware: HardwareSpec,
    /// Schedule kinds to enumerate. The all-forward-first schedule is never
    /// faster than 1F1B and hungrier for memory, so it is opt-in.
    #[serde(default = "default_schedules")]
    pub schedules: Vec<ScheduleKind>,
    #[serde(default = "default_microbatch_candidates")]
    pub microbatch_candidates: Vec<Count>,
    /// Allow tensor groups wider than a node, priced at inter-node bandwidth.
    #[serde(default)]
    pub allow_cross_node_tensor: bool,
    #[serde(default = "default_true")]
    pub activation_recompute: bool,
    #[serde(default)]
    pub scatter_gather: bool,
    /// Ignore all communication terms (pure compute + bubble model).
    #[serde(default)]
    pub zero_comm: bool,
    #[serde(default)]
    pub cost_params: CostParams,
}

fn default_schedules() -> Vec<ScheduleKind> {
    vec![ScheduleKind::OneFOneB, ScheduleKind::Interleaved]
}

fn default_microbatch_candidates() -> Vec<Count> {
    vec![1, 2, 4, 8, 16]
}

fn default_true() -> bool {
    true
}

impl PlanQuery {
    pub fn new(devices: Count, global_batch: Count, model: ModelSpec) -> Self {
        PlanQuery {
            devices,
            global_batch,
            model,
            hardware: HardwareSpec::selene(),
            schedules: default_schedules(),
            microbatch_candidates: default_microbatch_candidates(),
            allow_cross_node_tensor: false,
            activation_recompute: true,
            scatter_gather: false,
            zero_comm: false,
            cost_params: CostParams::default(),
        }
    }

    fn job(&self) -> TrainingJob {
        TrainingJob::new(self.global_batch)
    }

    fn mapping_for(&self, config: &ParallelConfig) -> Result<RankMapping, String> {
        let build = if self.allow_cross_node_tensor {
            cross_node_mapping
        } else {
            default_mapping
        };
        build(
            config.pipeline_size,
            config.tensor_size,
            config.data_size,
            &self.hardware,
        )
        .map_err(|e| e.to_string())
    }
}

/// Additive decomposition of one modeled iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeBreakdown {
    /// Compute plus pipeline bubble: (m + (p-1)/v) · (t_f + t_b).
    pub compute_and_bubble: f64,
    /// Tensor-parallel all-reduce time, every microbatch.
    pub tensor_allreduce: f64,
    /// Pipeline point-to-point time on the fill/drain path (steady-state
    /// transfers overlap compute and are not charged).
    pub pipeline_p2p: f64,
    /// Data-parallel gradient all-reduce, once per batch.
    pub data_allreduce: f64,
}

impl TimeBreakdown {
    pub fn total(&self) -> f64 {
        self.compute_and_bubble + self.tensor_allreduce + self.pipeline_p2p + self.data_allreduce
    }
}

/// Per-batch communication bytes for one device, split by link class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommSummary {
    pub intra_node_bytes: f64,
    pub inter_node_bytes: f64,
    pub tp_bytes_per_batch: f64,
    pub pp_bytes_per_batch: f64,
    pub dp_bytes_per_batch: f64,
}

/// One ranked plan entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub config: ParallelConfig,
    pub derived: DerivedQuantities,
    pub iteration_seconds: f64,
    /// Modeled sustained FLOP/s per device at this iteration time.
    pub per_device_flops: f64,
    /// Analytical zero-communication bubble fraction (p-1)/(v·m).
    pub bubble_fraction: f64,
    pub memory: MemoryFootprint,
    pub comm: CommSummary,
    pub time_breakdown: TimeBreakdown,
}

/// A rejected candidate and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfeasibleConfig {
    pub config: ParallelConfig,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanOutcome {
    /// Feasible configurations, fastest first.
    pub ranked: Vec<PlanResult>,
    /// Candidates that failed validation or the memory check.
    pub infeasible: Vec<InfeasibleConfig>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error(
        "no feasible configuration for {devices} devices at global batch {global_batch}; \
         binding constraints: {summary}"
    )]
    EmptyPlan {
        devices: Count,
        global_batch: Count,
        summary: String,
        infeasible: Vec<InfeasibleConfig>,
    },
}

fn divisors(x: Count) -> Vec<Count> {
    let mut out: Vec<Count> = (1..=x).filter(|k| x.is_multiple_of(*k)).collect();
    out.sort_unstable();
    out
}

/// Duration model used for planning: the FLOP-derived per-microbatch time
/// plus a fixed kernel overhead per chunk pass. The backward keeps the exact
/// 2x (3x with recomputation) ratio since its passes pay the same overheads.
pub fn planner_durations(
    model: &ModelSpec,
    config: &ParallelConfig,
    derived: &DerivedQuantities,
    hardware: &HardwareSpec,
    params: &CostParams,
) -> TaskDurations {
    let base = costs::task_durations(model, config, derived, hardware);
    let forward = base.forward + params.kernel_overhead * config.chunks_per_device as f64;
    let ratio = if config.activation_recompute {
        3.0
    } else {
        2.0
    };
    TaskDurations::new(forward, ratio * forward)
}

/// Analytical per-iteration time decomposition for a validated config.
pub fn estimate_breakdown(
    model: &ModelSpec,
    config: &ParallelConfig,
    derived: &DerivedQuantities,
    hardware: &HardwareSpec,
    mapping: &RankMapping,
    params: &CostParams,
    zero_comm: bool,
) -> TimeBreakdown {
    let durations = planner_durations(model, config, derived, hardware, params);
    let unit = durations.round_trip();
    let m = derived.microbatches as f64;
    let p = config.pipeline_size;
    let v = config.chunks_per_device as f64;
    let compute_and_bubble = m * unit + (p - 1) as f64 * unit / v;

    if zero_comm {
        return TimeBreakdown {
            compute_and_bubble,
            tensor_allreduce: 0.0,
            pipeline_p2p: 0.0,
            data_allreduce: 0.0,
        };
    }

    let volumes = comm_volumes(model, config, derived, mapping, params);
    let t = config.tensor_size;
    let tensor_allreduce = if t > 1 {
        // Four ring all-reduces per layer per microbatch; each ring step pays
        // the link latency.
        let steps = 4.0 * derived.layers_per_device as f64 * 2.0 * (t - 1) as f64;
        let latency = steps * hardware.latency(volumes.tp_class);
        let volume_time =
            volumes.tp_allreduce_per_microbatch_per_device / hardware.bandwidth(volumes.tp_class);
        m * (latency + volume_time)
    } else {
        0.0
    };

    let total_stages = config.pipeline_size * config.chunks_per_device;
    let pipeline_p2p = if p > 1 {
        // One forward fill and one backward drain across every stage hop.
        let per_hop: f64 = (0..total_stages - 1)
            .map(|s| {
                let class = volumes.pp_boundary_classes[(s % p) as usize];
                hardware.transfer_time(class, volumes.pp_p2p_per_microbatch)
            })
            .sum();
        2.0 * per_hop
    } else {
        0.0
    };

    let d = config.data_size;
    let data_allreduce = if d > 1 {
        let latency = 2.0 * (d - 1) as f64 * hardware.latency(volumes.dp_class);
        latency
            + dp_allreduce_cost(
                volumes.dp_allreduce_per_batch,
                d,
                hardware.bandwidth(volumes.dp_class),
            )
    } else {
        0.0
    };

    TimeBreakdown {
        compute_and_bubble,
        tensor_allreduce,
        pipeline_p2p,
        data_allreduce,
    }
}

/// Modeled seconds per iteration for a validated configuration.
pub fn estimate_iteration_time(
    model: &ModelSpec,
    config: &ParallelConfig,
    derived: &DerivedQuantities,
    hardware: &HardwareSpec,
    mapping: &RankMapping,
    params: &CostParams,
    zero_comm: bool,
) -> f64 {
    estimate_breakdown(model, config, derived, hardware, mapping, params, zero_comm).total()
}

/// Iteration time with the compute + pipeline term taken from the event
/// simulator instead of the closed form; tensor/data all-reduce terms are
/// added analytically as in [`estimate_breakdown`].
pub fn simulated_iteration_time(
    model: &ModelSpec,
    config: &ParallelConfig,
    derived: &DerivedQuantities,
    hardware: &HardwareSpec,
    mapping: &RankMapping,
    params: &CostParams,
    zero_comm: bool,
) -> Result<f64, String> {
    let schedule = build_schedule(
        config.schedule_kind,
        config.pipeline_size,
        derived.microbatches,
        config.chunks_per_device,
    )
    .map_err(|e| e.to_string())?;
    let durations = planner_durations(model, config, derived, hardware, params);
    let volumes = comm_volumes(model, config, derived, mapping, params);
    let setup = if zero_comm {
        None
    } else {
        Some(CommSetup {
            volumes: &volumes,
            hardware,
            mapping,
        })
    };
    let timeline = simulate(&schedule, &durations, setup).map_err(|e| e.to_string())?;
    let analytical =
        estimate_breakdown(model, config, derived, hardware, mapping, params, zero_comm);
    Ok(timeline.span + analytical.tensor_allreduce + analytical.data_allreduce)
}

/// Exact rational form of the zero-communication bubble fraction
/// (p-1)/(v·m), for lossless comparisons.
pub fn bubble_fraction_rational(p: Count, m: Count, v: Count) -> (Count, Count) {
    debug_assert!(p >= 1 && m >= 1 && v >= 1);
    (p - 1, v * m)
}

/// Bubble fraction of a pure pipeline+data split (t = 1) on n devices as the
/// exact rational (n - d) / b', with b' = B/b.
pub fn dp_bubble_fraction(n: Count, d: Count, batch_microbatch_ratio: Count) -> (Count, Count) {
    (n - d, batch_microbatch_ratio)
}

/// All candidate tuples for the query, feasible or not, in deterministic
/// order.
fn enumerate_candidates(query: &PlanQuery) -> Vec<ParallelConfig> {
    let n = query.devices;
    let l = query.model.layers;
    let mut out = Vec::new();
    for p in divisors(n) {
        for t in divisors(n / p) {
            let d = n / (p * t);
            let chunk_options: Vec<Count> = if l.is_multiple_of(p) {
                divisors(l / p)
            } else {
                vec![1]
            };
            for kind in &query.schedules {
                let chunks: &[Count] = if *kind == ScheduleKind::Interleaved {
                    &chunk_options
                } else {
                    &[1]
                };
                for &v in chunks {
                    for &b in &query.microbatch_candidates {
                        let mut config = ParallelConfig::new(p, t, d, b, *kind).with_chunks(v);
                        config.scatter_gather = query.scatter_gather;
                        config.activation_recompute = query.activation_recompute;
                        out.push(config);
                    }
                }
            }
        }
    }
    out
}

/// Feasibility check: validation, node-width policy, and the memory budget.
fn check_candidate(
    query: &PlanQuery,
    config: &ParallelConfig,
) -> Result<(DerivedQuantities, MemoryFootprint), Vec<String>> {
    let mut reasons = Vec::new();
    if !query.allow_cross_node_tensor && config.tensor_size > query.hardware.gpus_per_node {
        reasons.push(format!(
            "tensor size {} exceeds the {}-GPU node (enable cross-node tensor parallelism to allow)",
            config.tensor_size, query.hardware.gpus_per_node
        ));
    }
    let derived = match validate(config, &query.model, &query.job(), query.devices) {
        Ok(q) => Some(q),
        Err(errors) => {
            reasons.extend(errors.violations.iter().map(|v| v.to_string()));
            None
        }
    };
    let Some(derived) = derived else {
        return Err(reasons);
    };
    if !reasons.is_empty() {
        return Err(reasons);
    }
    let memory = costs::memory_footprint(&query.model, config, &derived, &query.cost_params);
    if !memory.fits_capacity {
        reasons.push(format!(
            "memory footprint {:.3e} bytes exceeds device capacity {:.3e}",
            memory.total_bytes, memory.capacity_bytes
        ));
        return Err(reasons);
    }
    Ok((derived, memory))
}

/// Feasible configurations for the query, in enumeration order.
pub fn enumerate_configs(query: &PlanQuery) -> Result<Vec<ParallelConfig>, PlanError> {
    let outcome = plan(query)?;
    Ok(outcome.ranked.into_iter().map(|r| r.config).collect())
}

/// Evaluate one feasible candidate into a plan entry.
fn evaluate(
    query: &PlanQuery,
    config: &ParallelConfig,
    derived: DerivedQuantities,
    memory: MemoryFootprint,
) -> Result<PlanResult, Vec<String>> {
    let mapping = query.mapping_for(config).map_err(|e| vec![e])?;
    let breakdown = estimate_breakdown(
        &query.model,
        config,
        &derived,
        &query.hardware,
        &mapping,
        &query.cost_params,
        query.zero_comm,
    );
    let iteration_seconds = breakdown.total();
    let flops = flops_per_iteration_with(
        &query.model,
        query.global_batch,
        config.activation_recompute,
    );
    let per_device_flops = flops / derived.devices as f64 / iteration_seconds;

    let volumes = comm_volumes(&query.model, config, &derived, &mapping, &query.cost_params);
    let m = derived.microbatches as f64;
    let tp_bytes = m * volumes.tp_allreduce_per_microbatch_per_device;
    // A non-edge device sends one activation and one gradient per chunk per
    // microbatch.
    let pp_bytes = if config.pipeline_size > 1 {
        m * 2.0 * config.chunks_per_device as f64 * volumes.pp_p2p_per_microbatch
    } else {
        0.0
    };
    let dp_bytes = if config.data_size > 1 {
        2.0 * volumes.dp_allreduce_per_batch * (config.data_size - 1) as f64
            / config.data_size as f64
    } else {
        0.0
    };
    let mut intra = 0.0;
    let mut inter = 0.0;
    for (bytes, class) in [
        (tp_bytes, volumes.tp_class),
        (pp_bytes, volumes.pp_boundary_classes[0]),
        (dp_bytes, volumes.dp_class),
    ] {
        match class {
            crate::hardware::LinkClass::IntraNode => intra += bytes,
            crate::hardware::LinkClass::InterNode => inter += bytes,
        }
    }

    let (num, den) = bubble_fraction_rational(
        config.pipeline_size,
        derived.microbatches,
        config.chunks_per_device,
    );
    Ok(PlanResult {
        config: *config,
        derived,
        iteration_seconds,
        per_device_flops,
        bubble_fraction: num as f64 / den as f64,
        memory,
        comm: CommSummary {
            intra_node_bytes: intra,
            inter_node_bytes: inter,
            tp_bytes_per_batch: tp_bytes,
            pp_bytes_per_batch: pp_bytes,
            dp_bytes_per_batch: dp_bytes,
        },
        time_breakdown: breakdown,
    })
}

fn kind_order(kind: ScheduleKind) -> u8 {
    match kind {
        ScheduleKind::OneFOneB => 0,
        ScheduleKind::Interleaved => 1,
        ScheduleKind::Gpipe => 2,
    }
}

/// Enumerate, evaluate, and rank every candidate. Fastest first; ties break
/// toward smaller model-parallel size M = t·p, then larger d, then smaller b.
pub fn plan(query: &PlanQuery) -> Result<PlanOutcome, PlanError> {
    let mut ranked = Vec::new();
    let mut infeasible = Vec::new();
    for config in enumerate_candidates(query) {
        match check_candidate(query, &config) {
            Ok((derived, memory)) => match evaluate(query, &config, derived, memory) {
                Ok(result) => ranked.push(result),
                Err(reasons) => infeasible.push(InfeasibleConfig { config, reasons }),
            },
            Err(reasons) => infeasible.push(InfeasibleConfig { config, reasons }),
        }
    }

    if ranked.is_empty() {
        let mut counts: std::collections::BTreeMap<String, usize> = Default::default();
        for entry in &infeasible {
            for reason in &entry.reasons {
                *counts.entry(reason.clone()).or_insert(0) += 1;
            }
        }
        let mut pairs: Vec<_> = counts.into_iter().collect();
        pairs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let summary = pairs
            .iter()
            .take(3)
            .map(|(reason, count)| format!("{reason} ({count} candidates)"))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(PlanError::EmptyPlan {
            devices: query.devices,
            global_batch: query.global_batch,
            summary,
            infeasible,
        });
    }

    ranked.sort_by(|a, b| {
        a.iteration_seconds
            .total_cmp(&b.iteration_seconds)
            .then(
                a.derived
                    .model_parallel_size
                    .cmp(&b.derived.model_parallel_size),
            )
            .then(b.config.data_size.cmp(&a.config.data_size))
            .then(a.config.microbatch_size.cmp(&b.config.microbatch_size))
            .then(kind_order(a.config.schedule_kind).cmp(&kind_order(b.config.schedule_kind)))
            .then(a.config.chunks_per_device.cmp(&b.config.chunks_per_device))
            .then(a.config.pipeline_size.cmp(&b.config.pipeline_size))
    });

    Ok(PlanOutcome { ranked, infeasible })
}

/// One point of a microbatch-size sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub microbatch_size: Count,
    pub iteration_seconds: Option<f64>,
    pub per_device_flops: Option<f64>,
    pub sequences_per_second: Option<f64>,
    pub skip_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub points: Vec<SweepPoint>,
    /// Index into `points` of the highest-throughput feasible entry.
    pub best: Option<usize>,
}

/// Evaluate the estimate across microbatch candidates for a fixed
/// (p, t, d, v, schedule); infeasible candidates are reported, not dropped.
pub fn microbatch_sweep(
    base: &ParallelConfig,
    model: &ModelSpec,
    job: &TrainingJob,
    hardware: &HardwareSpec,
    params: &CostParams,
    candidates: &[Count],
    zero_comm: bool,
) -> SweepCurve {
    let mut points = Vec::new();
    for &b in candidates {
        let config = ParallelConfig {
            microbatch_size: b,
            ..*base
        };
        let n = config.devices();
        match validate(&config, model, job, n) {
            Ok(derived) => {
                let mapping = match default_mapping(
                    config.pipeline_size,
                    config.tensor_size,
                    config.data_size,
                    hardware,
                )
                .or_else(|_| {
                    cross_node_mapping(
                        config.pipeline_size,
                        config.tensor_size,
                        config.data_size,
                        hardware,
                    )
                }) {
                    Ok(m) => m,
                    Err(e) => {
                        points.push(SweepPoint {
                            microbatch_size: b,
                            iteration_seconds: None,
                            per_device_flops: None,
                            sequences_per_second: None,
                            skip_reason: Some(e.to_string()),
                        });
                        continue;
                    }
                };
                let memory = costs::memory_footprint(model, &config, &derived, params);
                if !memory.fits_capacity {
                    points.push(SweepPoint {
                        microbatch_size: b,
                        iteration_seconds: None,
                        per_device_flops: None,
                        sequences_per_second: None,
                        skip_reason: Some(format!(
                            "memory footprint {:.3e} bytes exceeds device capacity {:.3e}",
                            memory.total_bytes, memory.capacity_bytes
                        )),
                    });
                    continue;
                }
                let seconds = estimate_iteration_time(
                    model, &config, &derived, hardware, &mapping, params, zero_comm,
                );
                let flops =
                    flops_per_iteration_with(model, job.global_batch, config.activation_recompute);
                points.push(SweepPoint {
                    microbatch_size: b,
                    iteration_seconds: Some(seconds),
                    per_device_flops: Some(flops / n as f64 / seconds),
                    sequences_per_second: Some(job.global_batch as f64 / seconds),
                    skip_reason: None,
                });
            }
            Err(errors) => points.push(SweepPoint {
                microbatch_size: b,
                iteration_seconds: None,
                per_device_flops: None,
                sequences_per_second: None,
                skip_reason: Some(errors.to_string()),
            }),
        }
    }
    // Highest throughput wins; with B fixed this is also the lowest
    // iteration time. Ties go to the earlier (smaller) candidate.
    let best = points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.sequences_per_second.map(|s| (i, s)))
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i);
    SweepCurve { points, best }
}
