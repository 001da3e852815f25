//! Cluster description and the mapping from logical (pipeline, tensor, data)
//! ranks to physical nodes, so every transfer can be priced as intra-node
//! (NVLink-class) or inter-node (InfiniBand-class).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Count;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HardwareError {
    #[error("hardware field `{0}` must be positive")]
    NonPositive(&'static str),
    #[error("efficiency {0} must lie in (0, 1]")]
    EfficiencyRange(f64),
    #[error(
        "tensor-parallel size {t} exceeds {g} GPUs per node; \
         cross-node tensor parallelism must be enabled explicitly"
    )]
    TensorDegreeExceedsNode { t: Count, g: Count },
    #[error("rank ({0}, {1}, {2}) outside the ({3}, {4}, {5}) grid")]
    RankOutOfRange(Count, Count, Count, Count, Count, Count),
}

/// Physical cluster shape: homogeneous nodes of `gpus_per_node` devices with
/// fast intra-node links and per-device inter-node NICs.
///
/// `efficiency` scales `peak_flops` to the sustained throughput used by the
/// compute-time model; communication uses a latency + volume/bandwidth model
/// with per-class latencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardwareSpec {
    pub gpus_per_node: Count,
    /// Peak per-device throughput, FLOP/s.
    pub peak_flops: f64,
    /// Intra-node (NVLink-class) bandwidth per direction, bytes/s.
    pub intra_node_bw: f64,
    /// Inter-node (InfiniBand-class) bandwidth per link, bytes/s.
    pub inter_node_bw: f64,
    pub links_per_node: Count,
    /// Fraction of peak the compute model assumes is sustained, in (0, 1].
    pub efficiency: f64,
    /// Fixed latency per intra-node transfer, seconds.
    #[serde(default = "default_alpha_intra")]
    pub alpha_intra: f64,
    /// Fixed latency per inter-node transfer, seconds.
    #[serde(default = "default_alpha_inter")]
    pub alpha_inter: f64,
}

fn default_alpha_intra() -> f64 {
    3e-6
}

fn default_alpha_inter() -> f64 {
    10e-6
}

impl HardwareSpec {
    /// DGX-A100-class node: 8 GPUs at 312 TFLOP/s peak, NVLink inside the
    /// node, one 200 Gb/s NIC per GPU. Efficiency 0.5 puts modeled per-GPU
    /// throughput in the 140-160 TFLOP/s band sustained in practice.
    pub fn selene() -> Self {
        HardwareSpec {
            gpus_per_node: 8,
            peak_flops: 312e12,
            intra_node_bw: 300e9,
            inter_node_bw: 25e9,
            links_per_node: 8,
            efficiency: 0.5,
            alpha_intra: default_alpha_intra(),
            alpha_inter: default_alpha_inter(),
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "selene" => Some(Self::selene()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), HardwareError> {
        if self.gpus_per_node == 0 {
            return Err(HardwareError::NonPositive("gpus_per_node"));
        }
        if self.links_per_node == 0 {
            return Err(HardwareError::NonPositive("links_per_node"));
        }
        for (name, value) in [
            ("peak_flops", self.peak_flops),
            ("intra_node_bw", self.intra_node_bw),
            ("inter_node_bw", self.inter_node_bw),
        ] {
            if !value.is_finite() || value <= 0.0 {
                return Err(HardwareError::NonPositive(name));
            }
        }
        if !self.efficiency.is_finite() || self.efficiency <= 0.0 || self.efficiency > 1.0 {
            return Err(HardwareError::EfficiencyRange(self.efficiency));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Sustained per-device throughput the compute model charges against.
    pub fn effective_flops(&self) -> f64 {
        self.peak_flops * self.efficiency
    }

    pub fn bandwidth(&self, class: LinkClass) -> f64 {
        match class {
            LinkClass::IntraNode => self.intra_node_bw,
            LinkClass::InterNode => self.inter_node_bw,
        }
    }

    pub fn latency(&self, class: LinkClass) -> f64 {
        match class {
            LinkClass::IntraNode => self.alpha_intra,
            LinkClass::InterNode => self.alpha_inter,
        }
    }

    /// Latency-plus-bandwidth transfer time for `bytes` over one link.
    pub fn transfer_time(&self, class: LinkClass, bytes: f64) -> f64 {
        self.latency(class) + bytes / self.bandwidth(class)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkClass {
    IntraNode,
    InterNode,
}

impl std::fmt::Display for LinkClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LinkClass::IntraNode => write!(f, "intra-node"),
            LinkClass::InterNode => write!(f, "inter-node"),
        }
    }
}

/// Placement of a device in the cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Placement {
    pub node: Count,
    pub local_device: Count,
}

/// Assignment of every (pipeline, tensor, data) rank to a physical device.
///
/// The default layout keeps each tensor group of `t` ranks inside one node
/// (tensor ranks vary fastest), lets pipeline ranks walk across nodes, and
/// strides data ranks across whole node groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankMapping {
    pipeline: Count,
    tensor: Count,
    data: Count,
    gpus_per_node: Count,
    /// Tensor groups packed per node; 1 when t == g.
    groups_per_node: Count,
}

impl RankMapping {
    pub fn pipeline_size(&self) -> Count {
        self.pipeline
    }

    pub fn tensor_size(&self) -> Count {
        self.tensor
    }

    pub fn data_size(&self) -> Count {
        self.data
    }

    pub fn devices(&self) -> Count {
        self.pipeline * self.tensor * self.data
    }

    pub fn place(
        &self,
        pipeline_rank: Count,
        tensor_rank: Count,
        data_rank: Count,
    ) -> Result<Placement, HardwareError> {
        if pipeline_rank >= self.pipeline || tensor_rank >= self.tensor || data_rank >= self.data {
            return Err(HardwareError::RankOutOfRange(
                pipeline_rank,
                tensor_rank,
                data_rank,
                self.pipeline,
                self.tensor,
                self.data,
            ));
        }
        if self.groups_per_node == 0 {
            return Ok(self.place_flat(pipeline_rank, tensor_rank, data_rank));
        }
        // Tensor groups are atomic; groups fill nodes in (data, pipeline) order.
        let group = data_rank * self.pipeline + pipeline_rank;
        let node = group / self.groups_per_node;
        let slot = group % self.groups_per_node;
        Ok(Placement {
            node,
            local_device: slot * self.tensor + tensor_rank,
        })
    }

    pub fn node_count(&self) -> Count {
        if self.groups_per_node == 0 {
            return self.devices().div_ceil(self.gpus_per_node);
        }
        let groups = self.pipeline * self.data;
        groups.div_ceil(self.groups_per_node)
    }

    pub fn link_class(&self, a: Placement, b: Placement) -> LinkClass {
        if a.node == b.node {
            LinkClass::IntraNode
        } else {
            LinkClass::InterNode
        }
    }

    /// Link class between two consecutive pipeline stages of the same
    /// (tensor, data) lane.
    pub fn pipeline_link_class(&self, from_stage: Count, to_stage: Count) -> LinkClass {
        let a = self.place(from_stage, 0, 0).expect("stage in range");
        let b = self.place(to_stage, 0, 0).expect("stage in range");
        self.link_class(a, b)
    }

    /// Link class of the widest hop inside one tensor group.
    pub fn tensor_group_link_class(&self) -> LinkClass {
        if self.groups_per_node == 0 {
            LinkClass::InterNode
        } else {
            LinkClass::IntraNode
        }
    }

    /// Link class of the widest hop inside one data-parallel group.
    pub fn data_group_link_class(&self) -> LinkClass {
        if self.data == 1 {
            return LinkClass::IntraNode;
        }
        let first = self.place(0, 0, 0).expect("in range");
        let second = self.place(0, 0, 1).expect("in range");
        self.link_class(first, second)
    }
}

/// Build the default rank layout for a (p, t, d) grid on `hardware`.
///
/// Requires t <= gpus_per_node: tensor all-reduce traffic belongs on the fast
/// intra-node links, so a tensor group never spans nodes under this policy.
pub fn default_mapping(
    p: Count,
    t: Count,
    d: Count,
    hardware: &HardwareSpec,
) -> Result<RankMapping, HardwareError> {
    for (name, v) in [("pipeline size", p), ("tensor size", t), ("data size", d)] {
        if v == 0 {
            return Err(HardwareError::NonPositive(name));
        }
    }
    let g = hardware.gpus_per_node;
    if t > g {
        return Err(HardwareError::TensorDegreeExceedsNode { t, g });
    }
    Ok(RankMapping {
        pipeline: p,
        tensor: t,
        data: d,
        gpus_per_node: g,
        groups_per_node: g / t,
    })
}

/// Layout for explicitly-enabled cross-node tensor parallelism: one rank per
/// node position, tensor groups spanning ceil(t/g) nodes.
pub fn cross_node_mapping(
    p: Count,
    t: Count,
    d: Count,
    hardware: &HardwareSpec,
) -> Result<RankMapping, HardwareError> {
    if t <= hardware.gpus_per_node {
        return default_mapping(p, t, d, hardware);
    }
    // Groups wider than a node: mark the group class as inter-node by
    // recording zero whole groups per node and flattening devices in rank
    // order across nodes.
    Ok(RankMapping {
        pipeline: p,
        tensor: t,
        data: d,
        gpus_per_node: hardware.gpus_per_node,
        groups_per_node: 0,
    })
}

impl RankMapping {
    fn place_flat(&self, pipeline_rank: Count, tensor_rank: Count, data_rank: Count) -> Placement {
        let flat = (data_rank * self.pipeline + pipeline_rank) * self.tensor + tensor_rank;
        Placement {
            node: flat / self.gpus_per_node,
            local_device: flat % self.gpus_per_node,
        }
    }
}
