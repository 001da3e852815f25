//! Transformer architecture description and the closed-form parameter-count,
//! FLOP, and training-time formulas everything else is priced from.
//!
//! All formulas are evaluated in f64. A FLOP is counted as one floating-point
//! operation regardless of precision. Integer results are rounded half-up.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Positive integer quantity (layers, devices, tokens per sequence, ...).
pub type Count = u64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("model field `{0}` must be >= 1")]
    ZeroField(&'static str),
    #[error("hidden size {hidden} is not divisible by {heads} attention heads")]
    HeadDivisibility { hidden: Count, heads: Count },
}

/// GPT-style transformer architecture: `layers` decoder blocks of hidden
/// width `hidden_size`, trained on sequences of `sequence_length` tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawModelSpec")]
pub struct ModelSpec {
    pub layers: Count,
    pub hidden_size: Count,
    pub attention_heads: Count,
    pub sequence_length: Count,
    pub vocab_size: Count,
}

#[derive(Deserialize)]
struct RawModelSpec {
    layers: Count,
    hidden_size: Count,
    attention_heads: Count,
    sequence_length: Count,
    vocab_size: Count,
}

impl TryFrom<RawModelSpec> for ModelSpec {
    type Error = ModelError;

    fn try_from(raw: RawModelSpec) -> Result<Self, ModelError> {
        ModelSpec::new(
            raw.layers,
            raw.hidden_size,
            raw.attention_heads,
            raw.sequence_length,
            raw.vocab_size,
        )
    }
}

impl ModelSpec {
    pub fn new(
        layers: Count,
        hidden_size: Count,
        attention_heads: Count,
        sequence_length: Count,
        vocab_size: Count,
    ) -> Result<Self, ModelError> {
        let spec = ModelSpec {
            layers,
            hidden_size,
            attention_heads,
            sequence_length,
            vocab_size,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, value) in [
            ("layers", self.layers),
            ("hidden_size", self.hidden_size),
            ("attention_heads", self.attention_heads),
            ("sequence_length", self.sequence_length),
            ("vocab_size", self.vocab_size),
        ] {
            if value == 0 {
                return Err(ModelError::ZeroField(name));
            }
        }
        if !self.hidden_size.is_multiple_of(self.attention_heads) {
            return Err(ModelError::HeadDivisibility {
                hidden: self.hidden_size,
                heads: self.attention_heads,
            });
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// One training run: global batch size in sequences, token budget, and the
/// sustained per-device throughput used for wall-clock estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingJob {
    pub global_batch: Count,
    #[serde(default)]
    pub total_tokens: f64,
    /// Achieved FLOP/s per device; falls back to the hardware's effective
    /// throughput when absent.
    #[serde(default)]
    pub achieved_flops_per_device: Option<f64>,
}

impl TrainingJob {
    pub fn new(global_batch: Count) -> Self {
        TrainingJob {
            global_batch,
            total_tokens: 0.0,
            achieved_flops_per_device: None,
        }
    }
}

/// Total parameter count: 12·l·h² for the transformer blocks plus the
/// 13·l·h bias/layernorm terms and the (V+s)·h embedding terms.
pub fn param_count(spec: &ModelSpec) -> Count {
    let l = spec.layers as f64;
    let h = spec.hidden_size as f64;
    let s = spec.sequence_length as f64;
    let v = spec.vocab_size as f64;
    let p = 12.0 * l * h * h * (1.0 + 13.0 / (12.0 * h) + (v + s) / (12.0 * l * h));
    p.round() as Count
}

/// FLOPs for one training iteration at global batch `batch`, counting the
/// recomputed forward pass (the default training configuration).
pub fn flops_per_iteration(spec: &ModelSpec, batch: Count) -> f64 {
    flops_per_iteration_with(spec, batch, true)
}

/// FLOPs for one training iteration; `recompute` selects whether activation
/// recomputation adds a second forward pass (per-layer factor 4 vs 3).
///
/// Closed form; kept independent of [`flops_breakdown`] so the two can be
/// cross-checked against each other.
pub fn flops_per_iteration_with(spec: &ModelSpec, batch: Count, recompute: bool) -> f64 {
    let b = batch as f64;
    let l = spec.layers as f64;
    let h = spec.hidden_size as f64;
    let s = spec.sequence_length as f64;
    let v = spec.vocab_size as f64;
    if recompute {
        96.0 * b * s * l * h * h * (1.0 + s / (6.0 * h) + v / (16.0 * l * h))
    } else {
        72.0 * b * s * l * h * h * (1.0 + s / (6.0 * h)) + 6.0 * b * s * h * v
    }
}

/// Per-layer forward-pass FLOP terms plus the logit layer, with the
/// backward/recompute multiplier carried alongside so the grand total can be
/// reassembled term by term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlopBreakdown {
    /// Key/query/value transformation, per layer, forward: 6·B·s·h²
    pub qkv_transform: f64,
    /// Attention score matrix, per layer, forward: 2·B·s²·h
    pub attention_matrix: f64,
    /// Attention applied over values, per layer, forward: 2·B·s²·h
    pub attention_over_values: f64,
    /// Post-attention linear projection, per layer, forward: 2·B·s·h²
    pub post_attention_projection: f64,
    /// Two-layer MLP at 4x hidden width, per layer, forward: 16·B·s·h²
    pub feed_forward: f64,
    /// Logit layer, forward + backward: 6·B·s·h·V
    pub logit_layer: f64,
    pub layers: Count,
    /// 4 with activation recomputation (fwd + 2x bwd + recomputed fwd),
    /// 3 without.
    pub pass_factor: f64,
}

impl FlopBreakdown {
    /// Forward FLOPs for one transformer layer: 24·B·s·h² + 4·B·s²·h.
    pub fn per_layer_forward(&self) -> f64 {
        self.qkv_transform
            + self.attention_matrix
            + self.attention_over_values
            + self.post_attention_projection
            + self.feed_forward
    }

    /// Grand total for one iteration across all layers plus the logit layer.
    pub fn total(&self) -> f64 {
        self.per_layer_forward() * self.layers as f64 * self.pass_factor + self.logit_layer
    }
}

/// Term-by-term FLOP accounting; sums to [`flops_per_iteration_with`].
pub fn flops_breakdown(spec: &ModelSpec, batch: Count, recompute: bool) -> FlopBreakdown {
    let b = batch as f64;
    let h = spec.hidden_size as f64;
    let s = spec.sequence_length as f64;
    let v = spec.vocab_size as f64;
    FlopBreakdown {
        qkv_transform: 6.0 * b * s * h * h,
        attention_matrix: 2.0 * b * s * s * h,
        attention_over_values: 2.0 * b * s * s * h,
        post_attention_projection: 2.0 * b * s * h * h,
        feed_forward: 16.0 * b * s * h * h,
        logit_layer: 6.0 * b * s * h * v,
        layers: spec.layers,
        pass_factor: if recompute { 4.0 } else { 3.0 },
    }
}

/// Wall-clock seconds for end-to-end training: 8·T·P / (n·X) with `tokens` T,
/// `params` P, `devices` n, and sustained per-device throughput `flops` X.
pub fn training_time_estimate(params: Count, tokens: f64, devices: Count, flops: f64) -> f64 {
    8.0 * tokens * params as f64 / (devices as f64 * flops)
}
