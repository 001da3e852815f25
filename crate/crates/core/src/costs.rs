//! Analytical cost models: communication volumes per parallelism axis,
//! FLOP-derived task durations, and the per-device memory footprint with and
//! without activation recomputation.

use serde::{Deserialize, Serialize};

use crate::hardware::{HardwareSpec, LinkClass, RankMapping};
use crate::model::{param_count, Count, ModelSpec};
use crate::parallel::{DerivedQuantities, ParallelConfig};
use crate::schedule::{build_schedule, static_peak_inflight};

/// Knobs of the cost model that are not cluster properties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    /// Bytes per activation/weight element (2 = mixed precision).
    pub element_bytes: f64,
    /// Optimizer state bytes per parameter: fp32 master copy, two fp32
    /// moments, and an fp32 gradient buffer.
    pub optimizer_bytes_per_param: f64,
    /// Intermediate activation size per transformer layer as a multiple of
    /// the layer input size 2·b·s·h.
    pub intermediate_activation_ratio: f64,
    /// Device memory capacity for the out-of-memory marker.
    pub device_memory_bytes: f64,
    /// Fixed kernel launch/overhead time per chunk pass; applied by the
    /// planner's duration model on top of the FLOP-derived durations.
    pub kernel_overhead: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            element_bytes: 2.0,
            optimizer_bytes_per_param: 16.0,
            intermediate_activation_ratio: 17.0,
            device_memory_bytes: 80e9,
            kernel_overhead: 20e-6,
        }
    }
}

/// Tensor-parallel all-reduce traffic per device for one microbatch crossing
/// `layers` layers: four all-reduces of b·s·h elements per layer, each moving
/// 2·(t-1)/t of the payload per rank in a ring.
pub fn tp_allreduce_volume(
    b: Count,
    s: Count,
    h: Count,
    t: Count,
    layers: Count,
    element_bytes: f64,
) -> f64 {
    debug_assert!(t >= 1);
    let payload = (b * s * h) as f64 * element_bytes;
    layers as f64 * 8.0 * payload * ((t - 1) as f64 / t as f64)
}

/// Pipeline point-to-point traffic per stage boundary per direction for one
/// microbatch: the b·s·h boundary activation, cut to 1/t when the
/// scatter/gather optimization sends per-rank chunks over separate NICs.
pub fn pp_p2p_volume(
    b: Count,
    s: Count,
    h: Count,
    t: Count,
    scatter_gather: bool,
    element_bytes: f64,
) -> f64 {
    let full = (b * s * h) as f64 * element_bytes;
    if scatter_gather {
        full / t as f64
    } else {
        full
    }
}

/// Ring all-reduce time for the data-parallel gradient exchange, once per
/// batch: each rank sends and receives 2·(d-1)/d of its gradient bytes.
pub fn dp_allreduce_cost(param_bytes_per_device: f64, d: Count, bandwidth: f64) -> f64 {
    debug_assert!(d >= 1);
    2.0 * param_bytes_per_device * ((d - 1) as f64 / d as f64) / bandwidth
}

/// Communication volumes for one configuration, with the link class each
/// volume travels over under the given rank mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommVolumes {
    /// Bytes per microbatch per stage boundary per direction.
    pub pp_p2p_per_microbatch: f64,
    /// Bytes per microbatch per device across the device's layers.
    pub tp_allreduce_per_microbatch_per_device: f64,
    /// Gradient bytes per device exchanged once per batch.
    pub dp_allreduce_per_batch: f64,
    /// Link class of the hop from pipeline rank r to r+1; the final entry is
    /// the wrap-around hop p-1 -> 0 used by interleaved chunk hand-off.
    pub pp_boundary_classes: Vec<LinkClass>,
    pub tp_class: LinkClass,
    pub dp_class: LinkClass,
}

pub fn comm_volumes(
    model: &ModelSpec,
    config: &ParallelConfig,
    derived: &DerivedQuantities,
    mapping: &RankMapping,
    params: &CostParams,
) -> CommVolumes {
    let b = config.microbatch_size;
    let s = model.sequence_length;
    let h = model.hidden_size;
    let t = config.tensor_size;
    let p = config.pipeline_size;
    let param_bytes_per_device =
        params.element_bytes * param_count(model) as f64 / derived.model_parallel_size as f64;
    let pp_boundary_classes = (0..p)
        .map(|r| mapping.pipeline_link_class(r, (r + 1) % p))
        .collect();
    CommVolumes {
        pp_p2p_per_microbatch: pp_p2p_volume(
            b,
            s,
            h,
            t,
            config.scatter_gather,
            params.element_bytes,
        ),
        tp_allreduce_per_microbatch_per_device: tp_allreduce_volume(
            b,
            s,
            h,
            t,
            derived.layers_per_device,
            params.element_bytes,
        ),
        dp_allreduce_per_batch: param_bytes_per_device,
        pp_boundary_classes,
        tp_class: mapping.tensor_group_link_class(),
        dp_class: mapping.data_group_link_class(),
    }
}

/// Forward/backward time for one microbatch on one device, summed over the
/// device's chunks. The per-chunk task time is forward/v (respectively
/// backward/v); the simulator performs that division.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskDurations {
    pub forward: f64,
    pub backward: f64,
}

impl TaskDurations {
    pub fn new(forward: f64, backward: f64) -> Self {
        TaskDurations { forward, backward }
    }

    pub fn round_trip(&self) -> f64 {
        self.forward + self.backward
    }
}

/// FLOP-derived durations: the forward work of the device's layers for one
/// microbatch, split across t tensor ranks, at the hardware's sustained
/// throughput. Backward costs twice the forward, plus one extra forward when
/// activations are recomputed.
pub fn task_durations(
    model: &ModelSpec,
    config: &ParallelConfig,
    derived: &DerivedQuantities,
    hardware: &HardwareSpec,
) -> TaskDurations {
    let b = config.microbatch_size as f64;
    let s = model.sequence_length as f64;
    let h = model.hidden_size as f64;
    let per_layer_forward = 24.0 * b * s * h * h + 4.0 * b * s * s * h;
    let device_forward_flops =
        derived.layers_per_device as f64 * per_layer_forward / config.tensor_size as f64;
    let forward = device_forward_flops / hardware.effective_flops();
    let backward_factor = if config.activation_recompute {
        3.0
    } else {
        2.0
    };
    TaskDurations {
        forward,
        backward: backward_factor * forward,
    }
}

/// Number of activation checkpoints minimizing c·A_input + (l/c)·A_intermediate
/// over integer c in [1, layers]; ties resolve to the smaller c.
pub fn optimal_checkpoints(layers: Count, a_input: f64, a_intermediate: f64) -> Count {
    debug_assert!(layers >= 1 && a_input > 0.0 && a_intermediate >= 0.0);
    let cost = |c: Count| c as f64 * a_input + layers as f64 / c as f64 * a_intermediate;
    // The objective is strictly convex in real c, so the integer optimum is a
    // neighbor of the real one.
    let real = (layers as f64 * a_intermediate / a_input).sqrt();
    let lo = (real.floor() as Count).clamp(1, layers);
    let hi = (real.ceil() as Count).clamp(1, layers);
    if cost(lo) <= cost(hi) {
        lo
    } else {
        hi
    }
}

/// Per-device memory accounting for one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryFootprint {
    pub weight_bytes: f64,
    pub optimizer_bytes: f64,
    pub activation_bytes: f64,
    pub total_bytes: f64,
    /// Peak microbatch-chunks held in flight on the fullest device.
    pub peak_inflight_chunks: Count,
    pub capacity_bytes: f64,
    /// Out-of-memory marker: false when total exceeds the device capacity.
    pub fits_capacity: bool,
}

/// Model the footprint of weights, optimizer state, and stashed activations.
///
/// In-flight counts come from the static schedule order: all m microbatches
/// for the all-forward-first schedule, at most p for 1F1B, and the measured
/// peak for the interleaved schedule. Chunk activations are 1/v of a device's
/// per-microbatch activation.
pub fn memory_footprint(
    model: &ModelSpec,
    config: &ParallelConfig,
    derived: &DerivedQuantities,
    params: &CostParams,
) -> MemoryFootprint {
    let params_per_device = param_count(model) as f64 / derived.model_parallel_size as f64;
    let weight_bytes = params.element_bytes * params_per_device;
    let optimizer_bytes = params.optimizer_bytes_per_param * params_per_device;

    // Stashed bytes for one microbatch on one chunk of layers_per_stage layers.
    let a_input = params.element_bytes
        * (config.microbatch_size * model.sequence_length * model.hidden_size) as f64;
    let a_intermediate = params.intermediate_activation_ratio * a_input;
    let l_stage = derived.layers_per_stage;
    let per_chunk_microbatch = if config.activation_recompute {
        let c = optimal_checkpoints(l_stage, a_input, a_intermediate);
        c as f64 * a_input + l_stage as f64 / c as f64 * a_intermediate
    } else {
        l_stage as f64 * (a_input + a_intermediate)
    };

    let schedule = build_schedule(
        config.schedule_kind,
        config.pipeline_size,
        derived.microbatches,
        config.chunks_per_device,
    )
    .expect("validated configuration yields a schedule");
    let peak_inflight_chunks = static_peak_inflight(&schedule)
        .into_iter()
        .max()
        .unwrap_or(0);

    let activation_bytes = peak_inflight_chunks as f64 * per_chunk_microbatch;
    let total_bytes = weight_bytes + optimizer_bytes + activation_bytes;
    MemoryFootprint {
        weight_bytes,
        optimizer_bytes,
        activation_bytes,
        total_bytes,
        peak_inflight_chunks,
        capacity_bytes: params.device_memory_bytes,
        fits_capacity: total_bytes <= params.device_memory_bytes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TrainingJob;
    use crate::parallel::{validate, ScheduleKind};
    use proptest::prelude::*;

    #[test]
    fn tp_volume_zero_without_tensor_parallelism() {
        assert_eq!(tp_allreduce_volume(4, 2048, 1024, 1, 12, 2.0), 0.0);
    }

    #[test]
    fn tp_volume_at_reference_point() {
        // 12 layers, fp16, t=8: 12 * 8 * 2048 * 12288 * (7/8) * 2 bytes.
        let v = tp_allreduce_volume(1, 2048, 12288, 8, 12, 2.0);
        assert_eq!(v, 4_227_858_432.0);
    }

    #[test]
    fn tp_volume_linear_in_layers() {
        let one = tp_allreduce_volume(2, 512, 768, 4, 3, 2.0);
        let two = tp_allreduce_volume(2, 512, 768, 4, 6, 2.0);
        assert_eq!(two, 2.0 * one);
    }

    #[test]
    fn pp_volume_reference_and_scatter_gather() {
        let off = pp_p2p_volume(1, 2048, 12288, 8, false, 2.0);
        assert_eq!(off, 50_331_648.0);
        let on = pp_p2p_volume(1, 2048, 12288, 8, true, 2.0);
        assert_eq!(on, off / 8.0);
        // t = 1: the optimization is a no-op.
        assert_eq!(
            pp_p2p_volume(1, 2048, 12288, 1, true, 2.0),
            pp_p2p_volume(1, 2048, 12288, 1, false, 2.0)
        );
    }

    #[test]
    fn dp_cost_ring_scaling() {
        assert_eq!(dp_allreduce_cost(1e9, 1, 1e9), 0.0);
        let d4 = dp_allreduce_cost(1e9, 4, 1e9);
        let d2 = dp_allreduce_cost(1e9, 2, 1e9);
        assert!((d4 / d2 - 1.5).abs() < 1e-12);
        // Large-d asymptote: 2 * volume / bandwidth.
        let dinf = dp_allreduce_cost(1e9, 1_000_000, 1e9);
        assert!((dinf - 2.0).abs() < 1e-4);
    }

    fn small_setup(
        kind: ScheduleKind,
        p: Count,
        t: Count,
        v: Count,
        batch: Count,
        recompute: bool,
    ) -> (ModelSpec, ParallelConfig, DerivedQuantities) {
        // 240 layers divide evenly for every pipeline size the tests sample.
        let model = ModelSpec::new(240, 512, 8, 128, 1024).unwrap();
        let mut config = ParallelConfig::new(p, t, 1, 1, kind).with_chunks(v);
        config.activation_recompute = recompute;
        let derived = validate(&config, &model, &TrainingJob::new(batch), p * t).unwrap();
        (model, config, derived)
    }

    #[test]
    fn durations_ratio_follows_recompute_flag() {
        let hw = HardwareSpec::selene();
        let (model, config, derived) = small_setup(ScheduleKind::OneFOneB, 2, 1, 1, 8, false);
        let d = task_durations(&model, &config, &derived, &hw);
        assert_eq!(d.backward, 2.0 * d.forward);
        let (model, config, derived) = small_setup(ScheduleKind::OneFOneB, 2, 1, 1, 8, true);
        let d = task_durations(&model, &config, &derived, &hw);
        assert_eq!(d.backward, 3.0 * d.forward);
    }

    #[test]
    fn durations_halve_when_tensor_size_doubles() {
        let hw = HardwareSpec::selene();
        let (model, config, derived) = small_setup(ScheduleKind::OneFOneB, 2, 1, 1, 8, true);
        let d1 = task_durations(&model, &config, &derived, &hw);
        let (model, config, derived) = small_setup(ScheduleKind::OneFOneB, 2, 2, 1, 8, true);
        let d2 = task_durations(&model, &config, &derived, &hw);
        assert_eq!(d1.forward, 2.0 * d2.forward);
    }

    fn brute_force_checkpoints(layers: Count, a_input: f64, a_intermediate: f64) -> Count {
        let mut best = 1;
        let mut best_cost = f64::INFINITY;
        for c in 1..=layers {
            let cost = c as f64 * a_input + layers as f64 / c as f64 * a_intermediate;
            if cost < best_cost {
                best_cost = cost;
                best = c;
            }
        }
        best
    }

    #[test]
    fn checkpoint_optimum_examples() {
        assert_eq!(optimal_checkpoints(16, 1.0, 1.0), 4);
        assert_eq!(optimal_checkpoints(4, 1.0, 4.0), 4);
        assert_eq!(optimal_checkpoints(16, 1.0, 0.0), 1);
    }

    #[test]
    fn checkpoint_optimum_matches_brute_force_on_grid() {
        for layers in 1..=512 {
            for num in 1..=64u32 {
                let ratio = num as f64 / 8.0;
                assert_eq!(
                    optimal_checkpoints(layers, 1.0, ratio),
                    brute_force_checkpoints(layers, 1.0, ratio),
                    "layers={layers} ratio={ratio}"
                );
            }
        }
    }

    #[test]
    fn memory_gpipe_vs_1f1b_activation_ratio() {
        // m = 8p: the all-forward-first schedule stashes m microbatches, 1F1B
        // stashes p.
        let p = 4;
        let params = CostParams::default();
        let (model, config, derived) = small_setup(ScheduleKind::Gpipe, p, 1, 1, 8 * p, true);
        let gpipe = memory_footprint(&model, &config, &derived, &params);
        let (model, config, derived) = small_setup(ScheduleKind::OneFOneB, p, 1, 1, 8 * p, true);
        let one_f = memory_footprint(&model, &config, &derived, &params);
        assert_eq!(gpipe.activation_bytes, 8.0 * one_f.activation_bytes);
        assert_eq!(gpipe.peak_inflight_chunks, 8 * p);
        assert_eq!(one_f.peak_inflight_chunks, p);
    }

    #[test]
    fn memory_single_stage_single_microbatch_equal_across_kinds() {
        let params = CostParams::default();
        let (model, config, derived) = small_setup(ScheduleKind::Gpipe, 1, 1, 1, 1, true);
        let gpipe = memory_footprint(&model, &config, &derived, &params);
        let (model, config, derived) = small_setup(ScheduleKind::OneFOneB, 1, 1, 1, 1, true);
        let one_f = memory_footprint(&model, &config, &derived, &params);
        assert_eq!(gpipe.total_bytes, one_f.total_bytes);
        assert_eq!(gpipe.peak_inflight_chunks, 1);
    }

    #[test]
    fn recompute_keeps_large_model_under_capacity() {
        // 145B-class model on (t, p) = (8, 16): without recomputation the
        // stashed activations blow past 80 GB; with it the config fits.
        let model = ModelSpec::new(80, 12288, 96, 2048, 51200).unwrap();
        let params = CostParams::default();
        let job = TrainingJob::new(128);
        for (recompute, expect_fit) in [(true, true), (false, false)] {
            let mut config = ParallelConfig::new(16, 8, 1, 1, ScheduleKind::OneFOneB);
            config.activation_recompute = recompute;
            let derived = validate(&config, &model, &job, 128).unwrap();
            let fp = memory_footprint(&model, &config, &derived, &params);
            assert_eq!(fp.fits_capacity, expect_fit, "recompute={recompute}");
        }
    }

    #[test]
    fn comm_volumes_classify_links() {
        let hw = HardwareSpec::selene();
        let model = ModelSpec::new(16, 512, 8, 128, 1024).unwrap();
        let config = ParallelConfig::new(2, 8, 2, 1, ScheduleKind::OneFOneB);
        let derived = validate(&config, &model, &TrainingJob::new(8), 32).unwrap();
        let mapping = crate::hardware::default_mapping(2, 8, 2, &hw).unwrap();
        let params = CostParams::default();
        let volumes = comm_volumes(&model, &config, &derived, &mapping, &params);
        assert_eq!(volumes.tp_class, LinkClass::IntraNode);
        assert_eq!(volumes.pp_boundary_classes.len(), 2);
        assert_eq!(volumes.pp_boundary_classes[0], LinkClass::InterNode);
        assert!(volumes.pp_p2p_per_microbatch > 0.0);
        assert!(volumes.tp_allreduce_per_microbatch_per_device > 0.0);
        assert!(volumes.dp_allreduce_per_batch > 0.0);
    }

    proptest! {
        #[test]
        fn checkpoint_optimum_matches_brute_force(
            layers in 1u64..200, a_in in 0.5f64..4.0, ratio in 0.05f64..12.0,
        ) {
            let a_int = a_in * ratio;
            prop_assert_eq!(
                optimal_checkpoints(layers, a_in, a_int),
                brute_force_checkpoints(layers, a_in, a_int)
            );
        }

        #[test]
        fn tp_volume_monotone_in_t(
            b in 1u64..8, s in 1u64..512, h in 1u64..2048, layers in 1u64..16, t in 1u64..32,
        ) {
            let v1 = tp_allreduce_volume(b, s, h, t, layers, 2.0);
            let v2 = tp_allreduce_volume(b, s, h, t + 1, layers, 2.0);
            prop_assert!(v2 >= v1);
            prop_assert_eq!(tp_allreduce_volume(b, s, h, 1, layers, 2.0), 0.0);
        }

        #[test]
        fn scatter_gather_divides_exactly(
            b in 1u64..16, s in 1u64..2048, h in 1u64..4096, t in 1u64..64,
        ) {
            let off = pp_p2p_volume(b, s, h, t, false, 2.0);
            let on = pp_p2p_volume(b, s, h, t, true, 2.0);
            prop_assert_eq!(on, off / t as f64);
        }

        /// 1F1B never stashes more than the all-forward-first schedule;
        /// equality exactly when m <= p.
        #[test]
        fn one_f_one_b_activation_never_exceeds_gpipe(
            p in 1u64..6, m in 1u64..24, recompute in proptest::bool::ANY,
        ) {
            let params = CostParams::default();
            let (model, config, derived) =
                small_setup(ScheduleKind::Gpipe, p, 1, 1, m, recompute);
            let gpipe = memory_footprint(&model, &config, &derived, &params);
            let (model, config, derived) =
                small_setup(ScheduleKind::OneFOneB, p, 1, 1, m, recompute);
            let one_f = memory_footprint(&model, &config, &derived, &params);
            prop_assert!(one_f.activation_bytes <= gpipe.activation_bytes);
            if m <= p {
                prop_assert_eq!(one_f.activation_bytes, gpipe.activation_bytes);
            } else {
                prop_assert!(one_f.activation_bytes < gpipe.activation_bytes);
            }
        }
    }
}
