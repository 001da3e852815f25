//! Static per-device task orders for the pipeline schedules and a
//! deterministic earliest-start event simulator producing a [`Timeline`].
//!
//! The simulator never reorders: each device executes its static order, and a
//! task starts at the later of the device becoming free and its cross-stage
//! dependency arriving (including transfer time when communication is
//! modeled). Identical inputs produce bit-identical timelines.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costs::{CommVolumes, TaskDurations};
use crate::hardware::{HardwareSpec, LinkClass, RankMapping};
use crate::model::Count;
use crate::parallel::ScheduleKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Direction::Forward => write!(f, "forward"),
            Direction::Backward => write!(f, "backward"),
        }
    }
}

/// One unit of work: a microbatch passing through one model chunk in one
/// direction. Microbatch ids are 1-based to match timeline labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Task {
    pub microbatch: Count,
    pub chunk: Count,
    pub direction: Direction,
}

impl Task {
    fn forward(microbatch: Count, chunk: Count) -> Self {
        Task {
            microbatch,
            chunk,
            direction: Direction::Forward,
        }
    }

    fn backward(microbatch: Count, chunk: Count) -> Self {
        Task {
            microbatch,
            chunk,
            direction: Direction::Backward,
        }
    }

    /// Pipeline stage this task runs on when owned by `device` in a
    /// `pipeline_size`-deep pipeline.
    pub fn stage(&self, device: Count, pipeline_size: Count) -> Count {
        self.chunk * pipeline_size + device
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("schedule dimensions must all be >= 1 (p={p}, m={m}, v={v})")]
    InvalidDims { p: Count, m: Count, v: Count },
    #[error("{v} chunks per device require the interleaved schedule")]
    ChunksRequireInterleaved { v: Count },
    #[error(
        "interleaved schedule needs microbatches ({m}) to be a multiple of pipeline size ({p})"
    )]
    MicrobatchMultiple { m: Count, p: Count },
}

/// Per-device task orders for one batch of one pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticSchedule {
    pub kind: ScheduleKind,
    pub pipeline_size: Count,
    pub microbatches: Count,
    pub chunks: Count,
    /// `orders[r]` is device r's execution order; exactly 2·m·v tasks.
    pub orders: Vec<Vec<Task>>,
}

impl StaticSchedule {
    pub fn total_stages(&self) -> Count {
        self.pipeline_size * self.chunks
    }
}

/// Build the static order for one schedule kind.
///
/// - all-forward-first: every device runs all m forwards, then all m backwards;
/// - 1F1B: device r warms up with p-1-r forwards, then alternates strictly;
/// - interleaved: the chunked 1F1B generalization; device r warms up with
///   2·(p-1-r) + (v-1)·p chunk-forwards (capped at m·v), forwards walking the
///   chunks in round-robin blocks of p microbatches, backwards walking the
///   chunks in reverse.
pub fn build_schedule(
    kind: ScheduleKind,
    p: Count,
    m: Count,
    v: Count,
) -> Result<StaticSchedule, ScheduleError> {
    if p == 0 || m == 0 || v == 0 {
        return Err(ScheduleError::InvalidDims { p, m, v });
    }
    if v > 1 && kind != ScheduleKind::Interleaved {
        return Err(ScheduleError::ChunksRequireInterleaved { v });
    }
    if kind == ScheduleKind::Interleaved && !m.is_multiple_of(p) {
        return Err(ScheduleError::MicrobatchMultiple { m, p });
    }

    let orders = (0..p)
        .map(|rank| match kind {
            ScheduleKind::Gpipe => {
                let mut order: Vec<Task> = (1..=m).map(|mb| Task::forward(mb, 0)).collect();
                order.extend((1..=m).map(|mb| Task::backward(mb, 0)));
                order
            }
            ScheduleKind::OneFOneB => {
                let warmup = (p - 1 - rank).min(m);
                one_f_one_b_order(
                    m,
                    warmup,
                    |k| Task::forward(k + 1, 0),
                    |k| Task::backward(k + 1, 0),
                )
            }
            ScheduleKind::Interleaved => {
                let warmup = (2 * (p - 1 - rank) + (v - 1) * p).min(m * v);
                one_f_one_b_order(
                    m * v,
                    warmup,
                    |k| {
                        let group = k / p;
                        Task::forward((group / v) * p + k % p + 1, group % v)
                    },
                    |k| {
                        let group = k / p;
                        Task::backward((group / v) * p + k % p + 1, v - 1 - group % v)
                    },
                )
            }
        })
        .collect();

    Ok(StaticSchedule {
        kind,
        pipeline_size: p,
        microbatches: m,
        chunks: v,
        orders,
    })
}

/// Warm-up forwards, strict 1F1B alternation, then the backward drain, with
/// the k-th forward/backward task supplied by the given sequences.
fn one_f_one_b_order(
    total: Count,
    warmup: Count,
    forward: impl Fn(Count) -> Task,
    backward: impl Fn(Count) -> Task,
) -> Vec<Task> {
    let mut order = Vec::with_capacity(2 * total as usize);
    for k in 0..warmup {
        order.push(forward(k));
    }
    for i in 0..total - warmup {
        order.push(forward(warmup + i));
        order.push(backward(i));
    }
    for i in total - warmup..total {
        order.push(backward(i));
    }
    order
}

/// Peak microbatch-chunks whose forward has completed but whose backward has
/// not, per device, read off the static order alone (a device's own task
/// order fixes its in-flight profile regardless of timing).
pub fn static_peak_inflight(schedule: &StaticSchedule) -> Vec<Count> {
    schedule
        .orders
        .iter()
        .map(|order| {
            let mut live: i64 = 0;
            let mut peak: i64 = 0;
            for task in order {
                match task.direction {
                    Direction::Forward => live += 1,
                    Direction::Backward => live -= 1,
                }
                peak = peak.max(live);
            }
            peak as Count
        })
        .collect()
}

/// A task placed in time on a device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedTask {
    pub device: Count,
    pub batch: Count,
    pub stage: Count,
    #[serde(flatten)]
    pub task: Task,
    pub start: f64,
    pub end: f64,
}

/// A cross-device transfer feeding a dependency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommEvent {
    pub batch: Count,
    pub microbatch: Count,
    pub direction: Direction,
    pub from_stage: Count,
    pub to_stage: Count,
    pub from_device: Count,
    pub to_device: Count,
    pub volume_bytes: f64,
    pub link: LinkClass,
    pub start: f64,
    pub end: f64,
}

/// Result of simulating one or more batches of a static schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub kind: ScheduleKind,
    pub pipeline_size: Count,
    pub microbatches: Count,
    pub chunks: Count,
    pub batches: Count,
    /// Per-device tasks in execution order.
    pub devices: Vec<Vec<TimedTask>>,
    pub comm_events: Vec<CommEvent>,
    pub span: f64,
}

impl Timeline {
    pub fn span_per_batch(&self) -> f64 {
        self.span / self.batches as f64
    }

    /// Total compute seconds on one device across all batches.
    pub fn busy_time(&self, device: usize) -> f64 {
        self.devices[device].iter().map(|t| t.end - t.start).sum()
    }

    /// Fraction of all device-seconds spent idle over the whole span.
    pub fn idle_fraction(&self) -> f64 {
        let devices = self.devices.len() as f64;
        if self.span == 0.0 {
            return 0.0;
        }
        let busy: f64 = (0..self.devices.len()).map(|r| self.busy_time(r)).sum();
        1.0 - busy / (self.span * devices)
    }

    /// Bytes sent from one device to another over all recorded transfers.
    pub fn comm_bytes_by_pair(&self) -> BTreeMap<(Count, Count), f64> {
        let mut map = BTreeMap::new();
        for event in &self.comm_events {
            *map.entry((event.from_device, event.to_device))
                .or_insert(0.0) += event.volume_bytes;
        }
        map
    }

    pub fn comm_bytes_total(&self) -> f64 {
        self.comm_events.iter().map(|e| e.volume_bytes).sum()
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimulateError {
    #[error("static order deadlocks: no device can run its next task")]
    Deadlock,
}

/// Communication model for the simulator; omit for the zero-communication
/// idealization the closed-form bubble results are stated under.
#[derive(Debug, Clone, Copy)]
pub struct CommSetup<'a> {
    pub volumes: &'a CommVolumes,
    pub hardware: &'a HardwareSpec,
    pub mapping: &'a RankMapping,
}

/// Simulate one batch (plus its flush barrier) of the schedule.
///
/// `durations` are whole-device per-microbatch times; each chunk task takes
/// forward/v or backward/v seconds. Transfers occupy link time but never
/// device compute time, so a producer keeps executing while its output is in
/// flight.
pub fn simulate(
    schedule: &StaticSchedule,
    durations: &TaskDurations,
    comm: Option<CommSetup<'_>>,
) -> Result<Timeline, SimulateError> {
    simulate_batches(schedule, durations, comm, 1)
}

/// Simulate `batches` consecutive batches; the flush barrier makes every
/// batch start only after the previous one fully drains, so batch k is batch
/// zero shifted by k spans.
pub fn simulate_batches(
    schedule: &StaticSchedule,
    durations: &TaskDurations,
    comm: Option<CommSetup<'_>>,
    batches: Count,
) -> Result<Timeline, SimulateError> {
    let p = schedule.pipeline_size;
    let v = schedule.chunks;
    let one = simulate_one_batch(schedule, durations, comm)?;
    let batch_span = one.span;

    let mut devices = vec![Vec::new(); p as usize];
    let mut comm_events = Vec::new();
    for batch in 0..batches.max(1) {
        let offset = batch as f64 * batch_span;
        for (r, tasks) in one.devices.iter().enumerate() {
            devices[r].extend(tasks.iter().map(|t| TimedTask {
                batch,
                start: t.start + offset,
                end: t.end + offset,
                ..*t
            }));
        }
        comm_events.extend(one.comm_events.iter().map(|e| CommEvent {
            batch,
            start: e.start + offset,
            end: e.end + offset,
            ..*e
        }));
    }

    Ok(Timeline {
        kind: schedule.kind,
        pipeline_size: p,
        microbatches: schedule.microbatches,
        chunks: v,
        batches: batches.max(1),
        devices,
        comm_events,
        span: batch_span * batches.max(1) as f64,
    })
}

fn simulate_one_batch(
    schedule: &StaticSchedule,
    durations: &TaskDurations,
    comm: Option<CommSetup<'_>>,
) -> Result<Timeline, SimulateError> {
    let p = schedule.pipeline_size;
    let v = schedule.chunks;
    let m = schedule.microbatches;
    let stages = p * v;
    let forward_dur = durations.forward / v as f64;
    let backward_dur = durations.backward / v as f64;

    // end times indexed by (microbatch-1) * stages + stage
    let mut forward_end: Vec<Option<f64>> = vec![None; (m * stages) as usize];
    let mut backward_end: Vec<Option<f64>> = vec![None; (m * stages) as usize];
    let slot = |mb: Count, stage: Count| ((mb - 1) * stages + stage) as usize;

    let mut next_index = vec![0usize; p as usize];
    let mut device_free = vec![0.0f64; p as usize];
    let mut devices: Vec<Vec<TimedTask>> = vec![Vec::new(); p as usize];
    let mut comm_events = Vec::new();
    let mut remaining: usize = schedule.orders.iter().map(Vec::len).sum();

    while remaining > 0 {
        let mut progressed = false;
        for r in 0..p {
            let order = &schedule.orders[r as usize];
            while next_index[r as usize] < order.len() {
                let task = order[next_index[r as usize]];
                let stage = task.stage(r, p);
                // Producer of this task's dependency, if any.
                let dep = match task.direction {
                    Direction::Forward if stage == 0 => Some((None, 0.0)),
                    Direction::Forward => forward_end[slot(task.microbatch, stage - 1)]
                        .map(|end| (Some(stage - 1), end)),
                    Direction::Backward if stage == stages - 1 => {
                        // Loss gradient is local to the last stage.
                        forward_end[slot(task.microbatch, stage)].map(|end| (None, end))
                    }
                    Direction::Backward => backward_end[slot(task.microbatch, stage + 1)]
                        .map(|end| (Some(stage + 1), end)),
                };
                let Some((producer_stage, mut arrival)) = dep else {
                    break;
                };

                if let (Some(from_stage), Some(setup)) = (producer_stage, comm) {
                    let from_device = from_stage % p;
                    if from_device != r {
                        let link = setup.mapping.pipeline_link_class(from_device, r);
                        let volume = setup.volumes.pp_p2p_per_microbatch;
                        let end = arrival + setup.hardware.transfer_time(link, volume);
                        comm_events.push(CommEvent {
                            batch: 0,
                            microbatch: task.microbatch,
                            direction: task.direction,
                            from_stage,
                            to_stage: stage,
                            from_device,
                            to_device: r,
                            volume_bytes: volume,
                            link,
                            start: arrival,
                            end,
                        });
                        arrival = end;
                    }
                }

                let start = device_free[r as usize].max(arrival);
                let duration = match task.direction {
                    Direction::Forward => forward_dur,
                    Direction::Backward => backward_dur,
                };
                let end = start + duration;
                devices[r as usize].push(TimedTask {
                    device: r,
                    batch: 0,
                    stage,
                    task,
                    start,
                    end,
                });
                match task.direction {
                    Direction::Forward => forward_end[slot(task.microbatch, stage)] = Some(end),
                    Direction::Backward => backward_end[slot(task.microbatch, stage)] = Some(end),
                }
                device_free[r as usize] = end;
                next_index[r as usize] += 1;
                remaining -= 1;
                progressed = true;
            }
        }
        if !progressed {
            return Err(SimulateError::Deadlock);
        }
    }

    let span = devices
        .iter()
        .flat_map(|tasks| tasks.iter().map(|t| t.end))
        .fold(0.0f64, f64::max);

    Ok(Timeline {
        kind: schedule.kind,
        pipeline_size: p,
        microbatches: m,
        chunks: v,
        batches: 1,
        devices,
        comm_events,
        span,
    })
}

/// Bubble fraction (span - ideal) / ideal per batch, where ideal is the
/// busiest device's compute time — m·(t_f + t_b) under uniform durations.
/// Communication-induced stalls show up here too; see
/// [`Timeline::idle_fraction`] for the raw idle share.
pub fn bubble_fraction(timeline: &Timeline) -> f64 {
    let batches = timeline.batches as f64;
    let ideal = (0..timeline.devices.len())
        .map(|r| timeline.busy_time(r))
        .fold(0.0f64, f64::max)
        / batches;
    if ideal == 0.0 {
        return 0.0;
    }
    (timeline.span_per_batch() - ideal) / ideal
}

/// Peak in-flight microbatch-chunks per device: forwards completed whose
/// backward has not yet completed, maximized over the timeline.
pub fn peak_inflight(timeline: &Timeline) -> Vec<Count> {
    timeline
        .devices
        .iter()
        .map(|tasks| {
            let mut live: i64 = 0;
            let mut peak: i64 = 0;
            for t in tasks {
                match t.task.direction {
                    Direction::Forward => live += 1,
                    Direction::Backward => live -= 1,
                }
                peak = peak.max(live);
            }
            peak as Count
        })
        .collect()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Violation {
    #[error("device {device} batch {batch} does not execute the static order")]
    TaskOrderMismatch { device: Count, batch: Count },
    #[error(
        "{direction} of microbatch {microbatch} stage {stage} (batch {batch}) \
         starts at {start} before its dependency is ready at {required}"
    )]
    DependencyOrder {
        batch: Count,
        microbatch: Count,
        stage: Count,
        direction: Direction,
        start: f64,
        required: f64,
    },
    #[error("{direction} of microbatch {microbatch} stage {stage} (batch {batch}) has no dependency task")]
    MissingDependency {
        batch: Count,
        microbatch: Count,
        stage: Count,
        direction: Direction,
    },
    #[error("device {device} tasks overlap around t={at}")]
    DeviceOverlap { device: Count, at: f64 },
    #[error("transfer for microbatch {microbatch} into stage {stage} departs at {start} before the producer finishes at {required}")]
    TransferBeforeProducer {
        microbatch: Count,
        stage: Count,
        start: f64,
        required: f64,
    },
    #[error("batch {batch} starts at {start} before batch {prev} drains at {required}")]
    FlushOverlap {
        batch: Count,
        prev: Count,
        start: f64,
        required: f64,
    },
}

/// Independent dependency oracle over a timeline: forward chaining, backward
/// chaining (rooted at the last stage's forward), device exclusivity, and the
/// flush barrier between batches. Returns every violation found.
pub fn validate_timeline(timeline: &Timeline, schedule: &StaticSchedule) -> Vec<Violation> {
    let mut violations = Vec::new();
    let p = timeline.pipeline_size;
    let stages = p * timeline.chunks;
    let tolerance = 1e-12 * timeline.span.abs().max(1.0);

    // (batch, microbatch, stage, direction) -> (start, end)
    let mut times: HashMap<(Count, Count, Count, Direction), (f64, f64)> = HashMap::new();
    for tasks in &timeline.devices {
        for t in tasks {
            times.insert(
                (t.batch, t.task.microbatch, t.stage, t.task.direction),
                (t.start, t.end),
            );
        }
    }
    let mut transfers: HashMap<(Count, Count, Count, Direction), (f64, f64)> = HashMap::new();
    for e in &timeline.comm_events {
        transfers.insert(
            (e.batch, e.microbatch, e.to_stage, e.direction),
            (e.start, e.end),
        );
    }

    // Per device and batch, the executed order must be the static order.
    for (r, tasks) in timeline.devices.iter().enumerate() {
        for batch in 0..timeline.batches {
            let executed: Vec<Task> = tasks
                .iter()
                .filter(|t| t.batch == batch)
                .map(|t| t.task)
                .collect();
            if executed != schedule.orders[r] {
                violations.push(Violation::TaskOrderMismatch {
                    device: r as Count,
                    batch,
                });
            }
        }
    }

    for tasks in &timeline.devices {
        for t in tasks {
            let mb = t.task.microbatch;
            let producer = match t.task.direction {
                Direction::Forward if t.stage == 0 => None,
                Direction::Forward => Some((t.stage - 1, Direction::Forward)),
                Direction::Backward if t.stage == stages - 1 => Some((t.stage, Direction::Forward)),
                Direction::Backward => Some((t.stage + 1, Direction::Backward)),
            };
            let Some((dep_stage, dep_dir)) = producer else {
                continue;
            };
            let Some(&(_, dep_end)) = times.get(&(t.batch, mb, dep_stage, dep_dir)) else {
                violations.push(Violation::MissingDependency {
                    batch: t.batch,
                    microbatch: mb,
                    stage: t.stage,
                    direction: t.task.direction,
                });
                continue;
            };
            // Crossing devices with modeled communication: the task waits for
            // the transfer, and the transfer waits for the producer.
            let mut required = dep_end;
            if dep_stage % p != t.stage % p {
                if let Some(&(c_start, c_end)) =
                    transfers.get(&(t.batch, mb, t.stage, t.task.direction))
                {
                    if c_start + tolerance < dep_end {
                        violations.push(Violation::TransferBeforeProducer {
                            microbatch: mb,
                            stage: t.stage,
                            start: c_start,
                            required: dep_end,
                        });
                    }
                    required = c_end;
                }
            }
            if t.start + tolerance < required {
                violations.push(Violation::DependencyOrder {
                    batch: t.batch,
                    microbatch: mb,
                    stage: t.stage,
                    direction: t.task.direction,
                    start: t.start,
                    required,
                });
            }
        }
    }

    // Device exclusivity.
    for (r, tasks) in timeline.devices.iter().enumerate() {
        let mut sorted: Vec<&TimedTask> = tasks.iter().collect();
        sorted.sort_by(|a, b| a.start.total_cmp(&b.start));
        for pair in sorted.windows(2) {
            if pair[1].start + tolerance < pair[0].end {
                violations.push(Violation::DeviceOverlap {
                    device: r as Count,
                    at: pair[1].start,
                });
            }
        }
    }

    // Flush barrier: a batch begins only after the previous batch drains.
    for batch in 1..timeline.batches {
        let prev_end = timeline
            .devices
            .iter()
            .flatten()
            .filter(|t| t.batch == batch - 1)
            .map(|t| t.end)
            .fold(f64::NEG_INFINITY, f64::max);
        let start = timeline
            .devices
            .iter()
            .flatten()
            .filter(|t| t.batch == batch)
            .map(|t| t.start)
            .fold(f64::INFINITY, f64::min);
        if start + tolerance < prev_end {
            violations.push(Violation::FlushOverlap {
                batch,
                prev: batch - 1,
                start,
                required: prev_end,
            });
        }
    }

    violations
}

#[cfg(test)]
mod tests {
    use super::*;

    fn durations(f: f64, b: f64) -> TaskDurations {
        TaskDurations::new(f, b)
    }

    fn tasks_of(order: &[Task]) -> Vec<(Count, Count, Direction)> {
        order
            .iter()
            .map(|t| (t.microbatch, t.chunk, t.direction))
            .collect()
    }

    #[test]
    fn single_stage_1f1b_alternates() {
        let s = build_schedule(ScheduleKind::OneFOneB, 1, 4, 1).unwrap();
        use Direction::*;
        assert_eq!(
            tasks_of(&s.orders[0]),
            vec![
                (1, 0, Forward),
                (1, 0, Backward),
                (2, 0, Forward),
                (2, 0, Backward),
                (3, 0, Forward),
                (3, 0, Backward),
                (4, 0, Forward),
                (4, 0, Backward),
            ]
        );
    }

    #[test]
    fn gpipe_all_forwards_first() {
        let s = build_schedule(ScheduleKind::Gpipe, 2, 2, 1).unwrap();
        use Direction::*;
        assert_eq!(
            tasks_of(&s.orders[0]),
            vec![
                (1, 0, Forward),
                (2, 0, Forward),
                (1, 0, Backward),
                (2, 0, Backward)
            ]
        );
    }

    #[test]
    fn one_f_one_b_warmup_depth() {
        let s = build_schedule(ScheduleKind::OneFOneB, 4, 8, 1).unwrap();
        // Device 0 performs p-1 = 3 warm-up forwards before its first backward.
        let first_backward = s.orders[0]
            .iter()
            .position(|t| t.direction == Direction::Backward)
            .unwrap();
        assert_eq!(first_backward, 3 + 1); // 3 warmups + the paired forward
        assert_eq!(
            s.orders[0][..4]
                .iter()
                .filter(|t| t.direction == Direction::Forward)
                .count(),
            4
        );
        // Last device alternates from the start.
        assert_eq!(s.orders[3][1].direction, Direction::Backward);
    }

    #[test]
    fn interleaved_warmup_and_chunk_blocks() {
        // p=4, v=2, m=8: device 0 warms up with 2(p-1) + (v-1)p = 10
        // chunk-forwards, walking chunk 0 for microbatches 1-4, chunk 1 for
        // 1-4, then chunk 0 again for 5-6; its first backward is chunk 1.
        let s = build_schedule(ScheduleKind::Interleaved, 4, 8, 2).unwrap();
        let order = &s.orders[0];
        // Leading forwards: the 10 warmups plus the forward paired with the
        // first backward.
        let leading: Vec<(Count, Count)> = order
            .iter()
            .take_while(|t| t.direction == Direction::Forward)
            .map(|t| (t.chunk, t.microbatch))
            .collect();
        assert_eq!(
            leading,
            vec![
                (0, 1),
                (0, 2),
                (0, 3),
                (0, 4),
                (1, 1),
                (1, 2),
                (1, 3),
                (1, 4),
                (0, 5),
                (0, 6),
                (0, 7),
            ]
        );
        let first_backward = order[leading.len()];
        assert_eq!(first_backward.direction, Direction::Backward);
        assert_eq!((first_backward.chunk, first_backward.microbatch), (1, 1));
        // The last device warms up with (v-1)*p = 4 forwards only.
        let last = &s.orders[3];
        assert_eq!(
            last.iter()
                .take_while(|t| t.direction == Direction::Forward)
                .count(),
            4 + 1
        );
    }

    #[test]
    fn every_task_appears_once_per_device() {
        for (kind, v) in [
            (ScheduleKind::Gpipe, 1),
            (ScheduleKind::OneFOneB, 1),
            (ScheduleKind::Interleaved, 1),
            (ScheduleKind::Interleaved, 2),
            (ScheduleKind::Interleaved, 4),
        ] {
            let (p, m) = (4, 8);
            let s = build_schedule(kind, p, m, v).unwrap();
            for order in &s.orders {
                assert_eq!(order.len() as Count, 2 * m * v);
                let mut seen = std::collections::HashSet::new();
                for t in order {
                    assert!(t.microbatch >= 1 && t.microbatch <= m);
                    assert!(t.chunk < v);
                    assert!(seen.insert((t.microbatch, t.chunk, t.direction)));
                }
            }
        }
    }

    #[test]
    fn schedule_build_errors() {
        assert!(matches!(
            build_schedule(ScheduleKind::OneFOneB, 0, 4, 1),
            Err(ScheduleError::InvalidDims { .. })
        ));
        assert!(matches!(
            build_schedule(ScheduleKind::Gpipe, 2, 4, 2),
            Err(ScheduleError::ChunksRequireInterleaved { v: 2 })
        ));
        assert!(matches!(
            build_schedule(ScheduleKind::Interleaved, 4, 6, 2),
            Err(ScheduleError::MicrobatchMultiple { m: 6, p: 4 })
        ));
    }

    #[test]
    fn one_f_one_b_span_matches_fill_drain_formula() {
        for (p, m) in [(1u64, 4u64), (2, 2), (2, 8), (4, 8), (8, 16)] {
            for (f, b) in [(1.0, 2.0), (1.0, 1.0), (2.0, 1.0), (0.3, 1.7)] {
                let s = build_schedule(ScheduleKind::OneFOneB, p, m, 1).unwrap();
                let tl = simulate(&s, &durations(f, b), None).unwrap();
                let expected = (m + p - 1) as f64 * (f + b);
                assert!(
                    (tl.span - expected).abs() < 1e-9 * expected,
                    "p={p} m={m} f={f} b={b}: span {} vs {}",
                    tl.span,
                    expected
                );
            }
        }
    }

    #[test]
    fn interleaved_span_shrinks_bubble_by_chunk_count() {
        for (p, m, v) in [
            (2u64, 2u64, 2u64),
            (4, 8, 2),
            (4, 8, 4),
            (8, 16, 2),
            (2, 4, 1),
        ] {
            for (f, b) in [(1.0, 2.0), (0.7, 0.4)] {
                let s = build_schedule(ScheduleKind::Interleaved, p, m, v).unwrap();
                let tl = simulate(&s, &durations(f, b), None).unwrap();
                let expected = m as f64 * (f + b) + (p - 1) as f64 * (f + b) / v as f64;
                assert!(
                    (tl.span - expected).abs() < 1e-9 * expected,
                    "p={p} m={m} v={v} f={f} b={b}: span {} vs {}",
                    tl.span,
                    expected
                );
            }
        }
    }

    #[test]
    fn single_stage_has_no_bubble() {
        for kind in [
            ScheduleKind::Gpipe,
            ScheduleKind::OneFOneB,
            ScheduleKind::Interleaved,
        ] {
            let s = build_schedule(kind, 1, 6, 1).unwrap();
            let tl = simulate(&s, &durations(1.0, 2.0), None).unwrap();
            assert!((tl.span - 18.0).abs() < 1e-12);
            assert!(bubble_fraction(&tl).abs() < 1e-12);
        }
    }

    #[test]
    fn bubble_fraction_reference_points() {
        let s = build_schedule(ScheduleKind::OneFOneB, 4, 8, 1).unwrap();
        let tl = simulate(&s, &durations(1.0, 2.0), None).unwrap();
        assert!((bubble_fraction(&tl) - 0.375).abs() < 1e-12);

        let s = build_schedule(ScheduleKind::Interleaved, 4, 8, 2).unwrap();
        let tl = simulate(&s, &durations(1.0, 2.0), None).unwrap();
        assert!((bubble_fraction(&tl) - 0.1875).abs() < 1e-12);
    }

    #[test]
    fn gpipe_and_1f1b_same_span_different_inflight() {
        let (p, m) = (4, 12);
        let d = durations(1.0, 2.0);
        let gpipe = simulate(
            &build_schedule(ScheduleKind::Gpipe, p, m, 1).unwrap(),
            &d,
            None,
        )
        .unwrap();
        let one_f = simulate(
            &build_schedule(ScheduleKind::OneFOneB, p, m, 1).unwrap(),
            &d,
            None,
        )
        .unwrap();
        assert!((gpipe.span - one_f.span).abs() < 1e-12);
        assert_eq!(peak_inflight(&gpipe).into_iter().max(), Some(m));
        assert!(peak_inflight(&one_f).into_iter().max().unwrap() <= p);
    }

    #[test]
    fn peak_inflight_reference_points() {
        let tl = simulate(
            &build_schedule(ScheduleKind::Gpipe, 2, 8, 1).unwrap(),
            &durations(1.0, 2.0),
            None,
        )
        .unwrap();
        assert_eq!(peak_inflight(&tl)[0], 8);

        let tl = simulate(
            &build_schedule(ScheduleKind::OneFOneB, 4, 16, 1).unwrap(),
            &durations(1.0, 2.0),
            None,
        )
        .unwrap();
        assert!(peak_inflight(&tl).into_iter().all(|peak| peak <= 4));

        for kind in [ScheduleKind::Gpipe, ScheduleKind::OneFOneB] {
            let tl = simulate(
                &build_schedule(kind, 2, 1, 1).unwrap(),
                &durations(1.0, 2.0),
                None,
            )
            .unwrap();
            assert!(peak_inflight(&tl).into_iter().all(|peak| peak == 1));
        }
    }

    #[test]
    fn static_peak_matches_simulated_peak() {
        for (kind, p, m, v) in [
            (ScheduleKind::Gpipe, 4u64, 8u64, 1u64),
            (ScheduleKind::OneFOneB, 4, 8, 1),
            (ScheduleKind::Interleaved, 4, 8, 2),
        ] {
            let s = build_schedule(kind, p, m, v).unwrap();
            let tl = simulate(&s, &durations(1.0, 2.0), None).unwrap();
            assert_eq!(static_peak_inflight(&s), peak_inflight(&tl));
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let s = build_schedule(ScheduleKind::Interleaved, 4, 8, 2).unwrap();
        let d = durations(0.37, 0.81);
        let a = simulate(&s, &d, None).unwrap();
        let b = simulate(&s, &d, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn built_in_schedules_validate_clean() {
        for (kind, v) in [
            (ScheduleKind::Gpipe, 1),
            (ScheduleKind::OneFOneB, 1),
            (ScheduleKind::Interleaved, 2),
        ] {
            let s = build_schedule(kind, 4, 8, v).unwrap();
            let tl = simulate(&s, &durations(1.3, 0.9), None).unwrap();
            assert_eq!(validate_timeline(&tl, &s), vec![]);
        }
    }

    #[test]
    fn comm_enabled_timeline_validates_and_delays_consumers() {
        use crate::model::{ModelSpec, TrainingJob};
        use crate::parallel::{validate, ParallelConfig};

        let hw = HardwareSpec::selene();
        let model = ModelSpec::new(16, 512, 8, 128, 1024).unwrap();
        let (p, m, v) = (4u64, 8u64, 2u64);
        let mut config =
            ParallelConfig::new(p, 1, 1, 1, ScheduleKind::Interleaved).with_chunks(v);
        config.scatter_gather = true;
        let derived = validate(&config, &model, &TrainingJob::new(m), p).unwrap();
        let mapping = crate::hardware::default_mapping(p, 1, 1, &hw).unwrap();
        let params = crate::costs::CostParams::default();
        let volumes = crate::costs::comm_volumes(&model, &config, &derived, &mapping, &params);

        let s = build_schedule(ScheduleKind::Interleaved, p, m, v).unwrap();
        let d = durations(1e-3, 2e-3);
        let with_comm = simulate(
            &s,
            &d,
            Some(CommSetup { volumes: &volumes, hardware: &hw, mapping: &mapping }),
        )
        .unwrap();
        assert_eq!(validate_timeline(&with_comm, &s), vec![]);
        assert!(!with_comm.comm_events.is_empty());
        // Each microbatch crosses every distinct-device stage boundary once
        // per direction.
        assert_eq!(with_comm.comm_events.len() as Count, 2 * m * (p * v - 1));

        let without = simulate(&s, &d, None).unwrap();
        assert!(with_comm.span > without.span);
    }

    #[test]
    fn validator_flags_backward_before_forward() {
        let s = build_schedule(ScheduleKind::OneFOneB, 1, 1, 1).unwrap();
        let mut tl = simulate(&s, &durations(1.0, 1.0), None).unwrap();
        // Move the backward to start before its forward finishes.
        let backward = &mut tl.devices[0][1];
        backward.start = 0.2;
        backward.end = 1.2;
        let violations = validate_timeline(&tl, &s);
        assert!(violations.iter().any(|v| matches!(
            v,
            Violation::DependencyOrder {
                direction: Direction::Backward,
                ..
            }
        )));
    }

    #[test]
    fn validator_flags_device_overlap() {
        let s = build_schedule(ScheduleKind::OneFOneB, 1, 2, 1).unwrap();
        let mut tl = simulate(&s, &durations(1.0, 1.0), None).unwrap();
        tl.devices[0][1].start = 0.5; // overlaps the first task's [0, 1)
        let violations = validate_timeline(&tl, &s);
        assert!(violations
            .iter()
            .any(|v| matches!(v, Violation::DeviceOverlap { .. })));
    }

    #[test]
    fn validator_flags_flush_overlap() {
        let s = build_schedule(ScheduleKind::OneFOneB, 2, 2, 1).unwrap();
        let mut tl = simulate_batches(&s, &durations(1.0, 1.0), None, 2).unwrap();
        // Pull one second-batch task before the first batch drains.
        let task = tl.devices[0].iter_mut().find(|t| t.batch == 1).unwrap();
        task.start = 0.1;
        task.end = 1.1;
        let violations = validate_timeline(&tl, &s);
        assert!(violations
            .iter()
            .any(|v| matches!(v, Violation::FlushOverlap { .. })));
    }

    #[test]
    fn multi_batch_concatenation_validates() {
        let s = build_schedule(ScheduleKind::OneFOneB, 3, 6, 1).unwrap();
        let tl = simulate_batches(&s, &durations(1.0, 2.0), None, 3).unwrap();
        assert_eq!(validate_timeline(&tl, &s), vec![]);
        assert!((tl.span - 3.0 * tl.span_per_batch()).abs() < 1e-12);
    }

    #[test]
    fn timeline_json_round_trip_revalidates() {
        let s = build_schedule(ScheduleKind::Interleaved, 2, 4, 2).unwrap();
        let tl = simulate(&s, &durations(1.0, 2.0), None).unwrap();
        let text = tl.to_json().unwrap();
        let back = Timeline::from_json(&text).unwrap();
        assert_eq!(tl, back);
        assert_eq!(validate_timeline(&back, &s), vec![]);
    }
}
