//! Subcommand implementations: estimate, simulate, plan, sweep, render.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ptdp::costs::{self, CostParams};
use ptdp::hardware::{cross_node_mapping, default_mapping, HardwareSpec, LinkClass, RankMapping};
use ptdp::model::{
    flops_breakdown, flops_per_iteration_with, param_count, training_time_estimate, ModelSpec,
    TrainingJob,
};
use ptdp::parallel::{validate, ParallelConfig, ScheduleKind};
use ptdp::planner::{
    estimate_iteration_time, microbatch_sweep, plan, planner_durations, simulated_iteration_time,
    PlanError, PlanQuery, PlanResult,
};
use ptdp::schedule::{bubble_fraction, build_schedule, peak_inflight, CommSetup};

use crate::output::{color_enabled, gib, seconds_with_days, sig6, Table};
use crate::svg::render_svg;

pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl std::fmt::Display) -> Self {
        CliError {
            code: 2,
            message: message.to_string(),
        }
    }

    fn validation(message: impl std::fmt::Display) -> Self {
        CliError {
            code: 2,
            message: message.to_string(),
        }
    }

    fn no_plan(message: impl std::fmt::Display) -> Self {
        CliError {
            code: 3,
            message: message.to_string(),
        }
    }
}

pub type CliResult = Result<(), CliError>;

#[derive(Parser)]
#[command(
    name = "ptdp",
    version,
    about = "Model and plan pipeline/tensor/data parallel transformer training"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parameter count, FLOP accounting, and training-time estimates
    Estimate(EstimateArgs),
    /// Simulate a pipeline schedule and write its timeline (JSON, SVG)
    Simulate(SimulateArgs),
    /// Enumerate and rank parallel configurations for a device budget
    Plan(PlanArgs),
    /// Sweep microbatch size or batch size at a fixed configuration
    Sweep(SweepArgs),
    /// Render a previously written timeline JSON to SVG
    Render(RenderArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
    Csv,
}

fn parse_schedule(s: &str) -> Result<ScheduleKind, String> {
    s.parse()
}

#[derive(Args)]
struct HardwareArgs {
    /// Hardware description JSON file
    #[arg(long, value_name = "FILE")]
    hardware: Option<PathBuf>,
    /// Built-in hardware preset
    #[arg(long, default_value = "selene")]
    preset: String,
}

impl HardwareArgs {
    fn load(&self) -> Result<HardwareSpec, CliError> {
        let hw = match &self.hardware {
            Some(path) => {
                let text = read_file(path)?;
                HardwareSpec::from_json(&text).map_err(|e| {
                    CliError::validation(format!("hardware file {}: {e}", path.display()))
                })?
            }
            None => HardwareSpec::preset(&self.preset).ok_or_else(|| {
                CliError::usage(format!("unknown hardware preset `{}`", self.preset))
            })?,
        };
        hw.validate().map_err(CliError::validation)?;
        Ok(hw)
    }
}

#[derive(Args)]
struct ParallelArgs {
    /// Pipeline-parallel size
    #[arg(long)]
    p: u64,
    /// Tensor-parallel size
    #[arg(long, default_value_t = 1)]
    t: u64,
    /// Data-parallel size
    #[arg(long, default_value_t = 1)]
    d: u64,
    /// Microbatch size in sequences
    #[arg(long, default_value_t = 1)]
    b: u64,
    /// Model chunks per device (interleaved schedule only)
    #[arg(long, default_value_t = 1)]
    v: u64,
    /// Pipeline schedule: gpipe, 1f1b, or interleaved
    #[arg(long, default_value = "1f1b", value_parser = parse_schedule)]
    schedule: ScheduleKind,
    /// Send 1/t-sized boundary chunks over parallel NICs
    #[arg(long)]
    scatter_gather: bool,
    /// Account for activation recomputation (--recompute=false to disable)
    #[arg(long, default_value_t = true, action = ArgAction::Set, num_args = 0..=1,
          default_missing_value = "true")]
    recompute: bool,
}

impl ParallelArgs {
    fn to_config(&self) -> ParallelConfig {
        let mut config =
            ParallelConfig::new(self.p, self.t, self.d, self.b, self.schedule).with_chunks(self.v);
        config.scatter_gather = self.scatter_gather;
        config.activation_recompute = self.recompute;
        config
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<ModelSpec, CliError> {
    let text = read_file(path)?;
    ModelSpec::from_json(&text)
        .map_err(|e| CliError::validation(format!("model file {}: {e}", path.display())))
}

fn mapping_for(
    config: &ParallelConfig,
    hardware: &HardwareSpec,
    cross_node: bool,
) -> Result<RankMapping, CliError> {
    let build = if cross_node {
        cross_node_mapping
    } else {
        default_mapping
    };
    build(
        config.pipeline_size,
        config.tensor_size,
        config.data_size,
        hardware,
    )
    .map_err(CliError::validation)
}

fn write_artifact(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::validation(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents)
        .map_err(|e| CliError::validation(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Plan(args) => cmd_plan(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Render(args) => cmd_render(args),
    }
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

#[derive(Args)]
struct EstimateArgs {
    /// Model description JSON file
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    #[command(flatten)]
    hardware: HardwareArgs,
    /// Global batch size in sequences
    #[arg(long, default_value_t = 1)]
    batch: u64,
    /// Token budget for the end-to-end training-time estimate
    #[arg(long)]
    tokens: Option<f64>,
    /// Device count for the training-time estimate
    #[arg(long)]
    ngpus: Option<u64>,
    /// Sustained per-device FLOP/s; defaults to the hardware's effective rate
    #[arg(long)]
    achieved_flops: Option<f64>,
    /// Count the recomputed forward pass (--recompute=false to disable)
    #[arg(long, default_value_t = true, action = ArgAction::Set, num_args = 0..=1,
          default_missing_value = "true")]
    recompute: bool,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

fn cmd_estimate(args: EstimateArgs) -> CliResult {
    let model = load_model(&args.model)?;
    let hardware = args.hardware.load()?;
    let params = param_count(&model);
    let flops = flops_per_iteration_with(&model, args.batch, args.recompute);
    let breakdown = flops_breakdown(&model, args.batch, args.recompute);

    let training = match args.tokens {
        Some(tokens) if tokens > 0.0 => {
            let devices = args.ngpus.unwrap_or(1);
            let rate = args
                .achieved_flops
                .unwrap_or_else(|| hardware.effective_flops());
            let seconds = training_time_estimate(params, tokens, devices, rate);
            Some((tokens, devices, rate, seconds))
        }
        _ => None,
    };

    match args.format {
        Format::Json => {
            let mut report = json!({
                "model": model,
                "parameters": params,
                "flops_per_iteration": flops,
                "global_batch": args.batch,
                "activation_recompute": args.recompute,
                "flop_breakdown": breakdown,
            });
            if let Some((tokens, devices, rate, seconds)) = training {
                report["training_time"] = json!({
                    "tokens": tokens,
                    "devices": devices,
                    "flops_per_device": rate,
                    "seconds": seconds,
                    "days": seconds / 86_400.0,
                });
            }
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
        }
        _ => {
            println!(
                "model                     l={} h={} a={} s={} V={}",
                model.layers,
                model.hidden_size,
                model.attention_heads,
                model.sequence_length,
                model.vocab_size
            );
            println!(
                "parameters                {}  ({})",
                params,
                sig6(params as f64)
            );
            println!(
                "flops per iteration       {}  (batch {}, recompute {})",
                sig6(flops),
                args.batch,
                if args.recompute { "on" } else { "off" }
            );
            println!("per-layer forward FLOPs:");
            println!(
                "  qkv transform           {}",
                sig6(breakdown.qkv_transform)
            );
            println!(
                "  attention matrix        {}",
                sig6(breakdown.attention_matrix)
            );
            println!(
                "  attention over values   {}",
                sig6(breakdown.attention_over_values)
            );
            println!(
                "  post-attention proj     {}",
                sig6(breakdown.post_attention_projection)
            );
            println!("  feed forward            {}", sig6(breakdown.feed_forward));
            println!(
                "logit layer (fwd+bwd)     {}  pass factor {}",
                sig6(breakdown.logit_layer),
                breakdown.pass_factor
            );
            if let Some((tokens, devices, rate, seconds)) = training {
                println!(
                    "training time             {}  ({} tokens, {} devices at {} FLOP/s)",
                    seconds_with_days(seconds),
                    sig6(tokens),
                    devices,
                    sig6(rate)
                );
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Args)]
struct SimulateArgs {
    /// Model description JSON file
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    #[command(flatten)]
    hardware: HardwareArgs,
    #[command(flatten)]
    parallel: ParallelArgs,
    /// Global batch size in sequences
    #[arg(long)]
    batch: u64,
    /// Consecutive batches to simulate (flush barrier between batches)
    #[arg(long, default_value_t = 1)]
    batches: u64,
    /// Drop all communication (the idealized zero-communication timeline)
    #[arg(long)]
    zero_comm: bool,
    /// Allow tensor groups wider than one node
    #[arg(long)]
    cross_node_tensor: bool,
    /// Output directory for timeline artifacts
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Also write a Gantt chart of the timeline
    #[arg(long)]
    svg: bool,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

fn cmd_simulate(args: SimulateArgs) -> CliResult {
    let model = load_model(&args.model)?;
    let hardware = args.hardware.load()?;
    let config = args.parallel.to_config();
    let job = TrainingJob::new(args.batch);
    let derived = validate(&config, &model, &job, config.devices())
        .map_err(|e| CliError::validation(e.to_string()))?;
    let mapping = mapping_for(&config, &hardware, args.cross_node_tensor)?;
    let cost_params = CostParams::default();

    let schedule = build_schedule(
        config.schedule_kind,
        config.pipeline_size,
        derived.microbatches,
        config.chunks_per_device,
    )
    .map_err(|e| CliError::validation(e.to_string()))?;
    let durations = planner_durations(&model, &config, &derived, &hardware, &cost_params);
    let volumes = costs::comm_volumes(&model, &config, &derived, &mapping, &cost_params);
    let setup = if args.zero_comm {
        None
    } else {
        Some(CommSetup {
            volumes: &volumes,
            hardware: &hardware,
            mapping: &mapping,
        })
    };
    let timeline = ptdp::schedule::simulate_batches(&schedule, &durations, setup, args.batches)
        .map_err(|e| CliError::validation(e.to_string()))?;

    let bubble = bubble_fraction(&timeline);
    let idle = timeline.idle_fraction();
    let peaks = peak_inflight(&timeline);
    let peak_max = peaks.iter().copied().max().unwrap_or(0);
    let mut p2p_intra = 0.0;
    let mut p2p_inter = 0.0;
    for event in &timeline.comm_events {
        match event.link {
            LinkClass::IntraNode => p2p_intra += event.volume_bytes,
            LinkClass::InterNode => p2p_inter += event.volume_bytes,
        }
    }
    let m = derived.microbatches as f64;
    let tp_bytes = m * volumes.tp_allreduce_per_microbatch_per_device;
    let dp_bytes = if config.data_size > 1 {
        2.0 * volumes.dp_allreduce_per_batch * (config.data_size - 1) as f64
            / config.data_size as f64
    } else {
        0.0
    };

    let timeline_path = write_artifact(&args.out, "timeline.json", &timeline.to_json().unwrap())?;
    let svg_path = if args.svg {
        Some(write_artifact(
            &args.out,
            "timeline.svg",
            &render_svg(&timeline),
        )?)
    } else {
        None
    };

    match args.format {
        Format::Json => {
            let report = json!({
                "config": config,
                "microbatches": derived.microbatches,
                "durations": durations,
                "span_seconds": timeline.span,
                "span_per_batch_seconds": timeline.span_per_batch(),
                "bubble_fraction": bubble,
                "idle_fraction": idle,
                "peak_inflight": peaks,
                "comm": {
                    "p2p_intra_bytes": p2p_intra,
                    "p2p_inter_bytes": p2p_inter,
                    "tp_allreduce_bytes_per_device_per_batch": tp_bytes,
                    "dp_allreduce_bytes_per_device_per_batch": dp_bytes,
                },
                "artifacts": {
                    "timeline": timeline_path,
                    "svg": svg_path,
                },
            });
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
        }
        _ => {
            println!(
                "schedule                  {}  p={} t={} d={} b={} v={}",
                config.schedule_kind,
                config.pipeline_size,
                config.tensor_size,
                config.data_size,
                config.microbatch_size,
                config.chunks_per_device
            );
            println!("microbatches per pipeline {}", derived.microbatches);
            println!(
                "task durations            t_f {} s, t_b {} s",
                sig6(durations.forward),
                sig6(durations.backward)
            );
            println!(
                "span                      {} s",
                sig6(timeline.span_per_batch())
            );
            println!("bubble fraction           {}", sig6(bubble));
            println!("idle fraction             {}", sig6(idle));
            println!(
                "peak in-flight            {}  (per device: {})",
                peak_max,
                peaks
                    .iter()
                    .map(|p| p.to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            );
            println!(
                "p2p volume simulated      intra {} GB, inter {} GB",
                gib(p2p_intra),
                gib(p2p_inter)
            );
            println!(
                "tensor all-reduce         {} GB/device/batch",
                gib(tp_bytes)
            );
            println!(
                "data all-reduce           {} GB/device/batch",
                gib(dp_bytes)
            );
            println!("wrote {}", timeline_path.display());
            if let Some(svg) = svg_path {
                println!("wrote {}", svg.display());
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// plan
// ---------------------------------------------------------------------------

#[derive(Args)]
struct PlanArgs {
    /// Plan query JSON; when given, the construction flags below are ignored
    #[arg(long, value_name = "FILE")]
    query: Option<PathBuf>,
    /// Model description JSON file (required without --query)
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    #[command(flatten)]
    hardware: HardwareArgs,
    /// Device budget n (required without --query)
    #[arg(long)]
    devices: Option<u64>,
    /// Global batch size (required without --query)
    #[arg(long)]
    batch: Option<u64>,
    /// Schedule kinds to enumerate
    #[arg(long, value_delimiter = ',', value_parser = parse_schedule)]
    schedules: Option<Vec<ScheduleKind>>,
    /// Microbatch sizes to consider
    #[arg(long, value_delimiter = ',')]
    b_candidates: Option<Vec<u64>>,
    /// Allow tensor groups wider than one node
    #[arg(long)]
    cross_node_tensor: bool,
    #[arg(long)]
    scatter_gather: bool,
    #[arg(long, default_value_t = true, action = ArgAction::Set, num_args = 0..=1,
          default_missing_value = "true")]
    recompute: bool,
    /// Rank with the communication-free model
    #[arg(long)]
    zero_comm: bool,
    /// Rows to print
    #[arg(long, default_value_t = 10)]
    top: usize,
    /// Also list infeasible candidates and why they were rejected
    #[arg(long)]
    explain: bool,
    /// Re-time the top candidates with the event simulator before ranking them
    #[arg(long)]
    simulate: bool,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

fn build_query(args: &PlanArgs) -> Result<PlanQuery, CliError> {
    if let Some(path) = &args.query {
        let text = read_file(path)?;
        return serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("query file {}: {e}", path.display())));
    }
    let model_path = args
        .model
        .as_ref()
        .ok_or_else(|| CliError::usage("either --query or --model is required"))?;
    let devices = args
        .devices
        .ok_or_else(|| CliError::usage("--devices is required without --query"))?;
    let batch = args
        .batch
        .ok_or_else(|| CliError::usage("--batch is required without --query"))?;
    let model = load_model(model_path)?;
    let mut query = PlanQuery::new(devices, batch, model);
    query.hardware = args.hardware.load()?;
    if let Some(kinds) = &args.schedules {
        query.schedules = kinds.clone();
    }
    if let Some(bs) = &args.b_candidates {
        query.microbatch_candidates = bs.clone();
    }
    query.allow_cross_node_tensor = args.cross_node_tensor;
    query.scatter_gather = args.scatter_gather;
    query.activation_recompute = args.recompute;
    query.zero_comm = args.zero_comm;
    Ok(query)
}

fn cmd_plan(args: PlanArgs) -> CliResult {
    let query = build_query(&args)?;
    let outcome = match plan(&query) {
        Ok(outcome) => outcome,
        Err(err @ PlanError::EmptyPlan { .. }) => return Err(CliError::no_plan(err.to_string())),
    };

    let shown = args.top.min(outcome.ranked.len());
    let mut rows: Vec<PlanResult> = outcome.ranked[..shown].to_vec();
    if args.simulate {
        for row in &mut rows {
            let mapping = mapping_for(&row.config, &query.hardware, query.allow_cross_node_tensor)?;
            let seconds = simulated_iteration_time(
                &query.model,
                &row.config,
                &row.derived,
                &query.hardware,
                &mapping,
                &query.cost_params,
                query.zero_comm,
            )
            .map_err(CliError::validation)?;
            let flops = flops_per_iteration_with(
                &query.model,
                query.global_batch,
                row.config.activation_recompute,
            );
            row.iteration_seconds = seconds;
            row.per_device_flops = flops / row.derived.devices as f64 / seconds;
        }
        rows.sort_by(|a, b| a.iteration_seconds.total_cmp(&b.iteration_seconds));
    }

    match args.format {
        Format::Json => {
            let report = json!({
                "devices": query.devices,
                "global_batch": query.global_batch,
                "timing_source": if args.simulate { "simulator" } else { "analytical" },
                "results": rows,
                "infeasible": if args.explain {
                    serde_json::to_value(&outcome.infeasible).unwrap()
                } else {
                    serde_json::Value::Null
                },
            });
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
        }
        _ => {
            let mut table = Table::new(&[
                "rank",
                "p",
                "t",
                "d",
                "b",
                "v",
                "schedule",
                "s/iter",
                "TFLOP/s/dev",
                "bubble",
                "mem GB",
            ]);
            for (i, row) in rows.iter().enumerate() {
                table.add_row(vec![
                    (i + 1).to_string(),
                    row.config.pipeline_size.to_string(),
                    row.config.tensor_size.to_string(),
                    row.config.data_size.to_string(),
                    row.config.microbatch_size.to_string(),
                    row.config.chunks_per_device.to_string(),
                    row.config.schedule_kind.to_string(),
                    sig6(row.iteration_seconds),
                    sig6(row.per_device_flops / 1e12),
                    sig6(row.bubble_fraction),
                    gib(row.memory.total_bytes),
                ]);
            }
            table.highlight = if rows.is_empty() { None } else { Some(0) };
            println!(
                "top {} of {} feasible configurations for n={} B={} ({} timing):",
                shown,
                outcome.ranked.len(),
                query.devices,
                query.global_batch,
                if args.simulate {
                    "simulated"
                } else {
                    "analytical"
                }
            );
            print!("{}", table.render(color_enabled()));
            if args.explain && !outcome.infeasible.is_empty() {
                println!("\ninfeasible candidates:");
                let mut table = Table::new(&["p", "t", "d", "b", "v", "schedule", "reason"]);
                for entry in &outcome.infeasible {
                    table.add_row(vec![
                        entry.config.pipeline_size.to_string(),
                        entry.config.tensor_size.to_string(),
                        entry.config.data_size.to_string(),
                        entry.config.microbatch_size.to_string(),
                        entry.config.chunks_per_device.to_string(),
                        entry.config.schedule_kind.to_string(),
                        entry.reasons.join("; "),
                    ]);
                }
                print!("{}", table.render(color_enabled()));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Args)]
struct SweepArgs {
    /// Model description JSON file
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    #[command(flatten)]
    hardware: HardwareArgs,
    #[command(flatten)]
    parallel: ParallelArgs,
    /// Global batch size (required for microbatch sweeps)
    #[arg(long)]
    batch: Option<u64>,
    /// Microbatch sizes to sweep, comma separated
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    sweep_b: Option<Vec<u64>>,
    /// Batch sizes to sweep, comma separated
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    sweep_batch: Option<Vec<u64>>,
    /// Use the communication-free model
    #[arg(long)]
    zero_comm: bool,
    /// Allow tensor groups wider than one node
    #[arg(long)]
    cross_node_tensor: bool,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

struct SweepRow {
    x: u64,
    seconds: Option<f64>,
    per_device_flops: Option<f64>,
    sequences_per_second: Option<f64>,
    note: Option<String>,
}

fn cmd_sweep(args: SweepArgs) -> CliResult {
    let model = load_model(&args.model)?;
    let hardware = args.hardware.load()?;
    let config = args.parallel.to_config();
    let params = CostParams::default();

    let (x_name, rows) = match (&args.sweep_b, &args.sweep_batch) {
        (Some(bs), None) if !bs.is_empty() => {
            let batch = args
                .batch
                .ok_or_else(|| CliError::usage("--batch is required with --sweep-b"))?;
            let job = TrainingJob::new(batch);
            let curve = microbatch_sweep(
                &config,
                &model,
                &job,
                &hardware,
                &params,
                bs,
                args.zero_comm,
            );
            let rows = curve
                .points
                .into_iter()
                .map(|p| SweepRow {
                    x: p.microbatch_size,
                    seconds: p.iteration_seconds,
                    per_device_flops: p.per_device_flops,
                    sequences_per_second: p.sequences_per_second,
                    note: p.skip_reason,
                })
                .collect::<Vec<_>>();
            ("microbatch", rows)
        }
        (None, Some(batches)) if !batches.is_empty() => {
            let mut rows = Vec::new();
            for &batch in batches {
                let job = TrainingJob::new(batch);
                match validate(&config, &model, &job, config.devices()) {
                    Ok(derived) => {
                        let memory = costs::memory_footprint(&model, &config, &derived, &params);
                        if !memory.fits_capacity {
                            rows.push(SweepRow {
                                x: batch,
                                seconds: None,
                                per_device_flops: None,
                                sequences_per_second: None,
                                note: Some(format!(
                                    "memory footprint {:.3e} bytes exceeds device capacity {:.3e}",
                                    memory.total_bytes, memory.capacity_bytes
                                )),
                            });
                            continue;
                        }
                        let mapping = mapping_for(&config, &hardware, args.cross_node_tensor)?;
                        let seconds = estimate_iteration_time(
                            &model,
                            &config,
                            &derived,
                            &hardware,
                            &mapping,
                            &params,
                            args.zero_comm,
                        );
                        let flops =
                            flops_per_iteration_with(&model, batch, config.activation_recompute);
                        rows.push(SweepRow {
                            x: batch,
                            seconds: Some(seconds),
                            per_device_flops: Some(flops / derived.devices as f64 / seconds),
                            sequences_per_second: Some(batch as f64 / seconds),
                            note: None,
                        });
                    }
                    Err(e) => rows.push(SweepRow {
                        x: batch,
                        seconds: None,
                        per_device_flops: None,
                        sequences_per_second: None,
                        note: Some(e.to_string()),
                    }),
                }
            }
            ("batch", rows)
        }
        (Some(_), Some(_)) => {
            return Err(CliError::usage(
                "--sweep-b and --sweep-batch are mutually exclusive",
            ))
        }
        _ => {
            return Err(CliError::usage(
                "one of --sweep-b or --sweep-batch with a non-empty list is required",
            ))
        }
    };

    // Mark the highest-throughput point; ties go to the earlier candidate.
    let best = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.sequences_per_second.map(|s| (i, s)))
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i);

    let cell = |v: Option<f64>| v.map(sig6).unwrap_or_default();
    match args.format {
        Format::Json => {
            let points: Vec<_> = rows
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    json!({
                        x_name: r.x,
                        "iteration_seconds": r.seconds,
                        "per_device_flops": r.per_device_flops,
                        "sequences_per_second": r.sequences_per_second,
                        "best": best == Some(i),
                        "note": r.note,
                    })
                })
                .collect();
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({ "points": points })).unwrap()
            );
        }
        Format::Csv => {
            println!("{x_name},iteration_seconds,per_device_tflops,sequences_per_second,best,note");
            for (i, r) in rows.iter().enumerate() {
                println!(
                    "{},{},{},{},{},{}",
                    r.x,
                    cell(r.seconds),
                    cell(r.per_device_flops.map(|f| f / 1e12)),
                    cell(r.sequences_per_second),
                    if best == Some(i) { "*" } else { "" },
                    r.note.clone().unwrap_or_default(),
                );
            }
        }
        Format::Table => {
            let mut table = Table::new(&[x_name, "s/iter", "TFLOP/s/dev", "seq/s", "best", "note"]);
            for (i, r) in rows.iter().enumerate() {
                table.add_row(vec![
                    r.x.to_string(),
                    cell(r.seconds),
                    cell(r.per_device_flops.map(|f| f / 1e12)),
                    cell(r.sequences_per_second),
                    if best == Some(i) {
                        "*".into()
                    } else {
                        String::new()
                    },
                    r.note.clone().unwrap_or_default(),
                ]);
            }
            table.highlight = best;
            print!("{}", table.render(color_enabled()));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// render
// ---------------------------------------------------------------------------

#[derive(Args)]
struct RenderArgs {
    /// Timeline JSON written by `ptdp simulate`
    #[arg(long, value_name = "FILE")]
    timeline: PathBuf,
    /// Output directory
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
}

fn cmd_render(args: RenderArgs) -> CliResult {
    let text = read_file(&args.timeline)?;
    let timeline = ptdp::schedule::Timeline::from_json(&text).map_err(|e| {
        CliError::validation(format!("timeline file {}: {e}", args.timeline.display()))
    })?;
    let path = write_artifact(&args.out, "timeline.svg", &render_svg(&timeline))?;
    println!("wrote {}", path.display());
    Ok(())
}
