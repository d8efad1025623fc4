//! Objectives, constraint checks and design-space size for a design point on
//! a platform.

use std::fmt;
use std::path::Path;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{node_latency, node_resources, ResourceKind, ResourceVector};
use crate::hdgraph::{folding_domains, DesignPoint, FoldVar, HdGraph, Partition};

pub const DEFAULT_CLOCK_HZ: f64 = 100e6;

fn default_clock() -> f64 {
    DEFAULT_CLOCK_HZ
}

/// Target device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Platform {
    pub name: String,
    pub resources: ResourceVector,
    pub mem_bandwidth_bytes_per_s: f64,
    pub reconfig_time_s: f64,
    #[serde(default = "default_clock")]
    pub clock_hz: f64,
}

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error("cannot read platform file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("platform file {path}: {source}")]
    Syntax {
        path: String,
        source: serde_json::Error,
    },
    #[error("platform '{name}': {message}")]
    Invalid { name: String, message: String },
}

impl Platform {
    pub fn parse(source: &str, origin: &str) -> Result<Platform, PlatformError> {
        let platform: Platform =
            serde_json::from_str(source).map_err(|source| PlatformError::Syntax {
                path: origin.to_string(),
                source,
            })?;
        platform.validate()?;
        Ok(platform)
    }

    pub fn load(path: &Path) -> Result<Platform, PlatformError> {
        let text = std::fs::read_to_string(path).map_err(|source| PlatformError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Platform::parse(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<(), PlatformError> {
        let bad = |message: &str| {
            Err(PlatformError::Invalid {
                name: self.name.clone(),
                message: message.to_string(),
            })
        };
        if !(self.mem_bandwidth_bytes_per_s > 0.0 && self.mem_bandwidth_bytes_per_s.is_finite()) {
            return bad("mem_bandwidth_bytes_per_s must be positive");
        }
        if !(self.reconfig_time_s >= 0.0 && self.reconfig_time_s.is_finite()) {
            return bad("reconfig_time_s must be non-negative");
        }
        if !(self.clock_hz > 0.0 && self.clock_hz.is_finite()) {
            return bad("clock_hz must be positive");
        }
        Ok(())
    }
}

/// What the optimisers minimise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Objective {
    /// Single-input latency including reconfiguration.
    Latency,
    /// Negated images per second over a batch.
    Throughput { batch: u64 },
}

impl Objective {
    pub fn value(&self, point: &DesignPoint, platform: &Platform) -> f64 {
        match *self {
            Objective::Latency => objective_latency(point, platform),
            Objective::Throughput { batch } => objective_throughput(point, platform, batch),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::Latency => f.write_str("latency"),
            Objective::Throughput { batch } => write!(f, "throughput (batch {batch})"),
        }
    }
}

/// Slowest member node, in seconds.
pub fn partition_latency(partition: &Partition, graph: &HdGraph, platform: &Platform) -> f64 {
    partition
        .indices()
        .map(|i| node_latency(&graph.nodes[i], platform.clock_hz))
        .fold(0.0, f64::max)
}

pub fn partition_resources(partition: &Partition, graph: &HdGraph) -> ResourceVector {
    partition.indices().map(|i| node_resources(&graph.nodes[i])).sum()
}

/// Per-partition latencies in partition order.
pub fn partition_latencies(point: &DesignPoint, platform: &Platform) -> Vec<f64> {
    point
        .partitions()
        .iter()
        .map(|p| partition_latency(p, &point.graph, platform))
        .collect()
}

/// `B * sum(T) + |C| * t_conf`, the time to push a batch through every configuration.
pub fn batch_makespan(partition_latencies: &[f64], cuts: usize, reconfig_time_s: f64, batch: u64) -> f64 {
    let execution: f64 = partition_latencies.iter().sum();
    batch as f64 * execution + cuts as f64 * reconfig_time_s
}

pub fn objective_latency(point: &DesignPoint, platform: &Platform) -> f64 {
    batch_makespan(
        &partition_latencies(point, platform),
        point.cutset.len(),
        platform.reconfig_time_s,
        1,
    )
}

/// Negated images per second over a batch: `-B / (B * sum(T) + |C| * t_conf)`.
///
/// Without cuts the batch size cancels and the value is computed as
/// `-1 / sum(T)`, so it is bit-identical for every batch size.
pub fn objective_throughput(point: &DesignPoint, platform: &Platform, batch: u64) -> f64 {
    let latencies = partition_latencies(point, platform);
    let cuts = point.cutset.len();
    if cuts == 0 {
        return -1.0 / latencies.iter().sum::<f64>();
    }
    -(batch as f64) / batch_makespan(&latencies, cuts, platform.reconfig_time_s, batch)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "constraint", rename_all = "snake_case")]
pub enum ConstraintViolation {
    Resource {
        partition: usize,
        resource: ResourceKind,
        used: u64,
        available: u64,
    },
    Bandwidth {
        partition: usize,
        required_bytes_per_s: f64,
        available_bytes_per_s: f64,
    },
    ChannelFactor {
        node: usize,
        variable: FoldVar,
        value: u32,
        dimension: u32,
    },
    IntraMatching {
        node: usize,
        s_in: u32,
        s_out: u32,
    },
    InterMatching {
        node: usize,
        s_out: u32,
        next_s_in: u32,
    },
}

impl fmt::Display for ConstraintViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintViolation::Resource {
                partition,
                resource,
                used,
                available,
            } => write!(
                f,
                "partition {partition}: {resource} usage {used} exceeds {available}"
            ),
            ConstraintViolation::Bandwidth {
                partition,
                required_bytes_per_s,
                available_bytes_per_s,
            } => write!(
                f,
                "partition {partition}: bandwidth {required_bytes_per_s} B/s is not below {available_bytes_per_s} B/s"
            ),
            ConstraintViolation::ChannelFactor {
                node,
                variable,
                value,
                dimension,
            } => write!(f, "node {node}: {variable} = {value} does not divide {dimension}"),
            ConstraintViolation::IntraMatching { node, s_in, s_out } => {
                write!(f, "node {node}: s_in {s_in} != s_out {s_out}")
            }
            ConstraintViolation::InterMatching {
                node,
                s_out,
                next_s_in,
            } => write!(
                f,
                "edge after node {node}: s_out {s_out} != next s_in {next_s_in}"
            ),
        }
    }
}

/// Per-partition resources must fit the device.
pub fn check_resources(point: &DesignPoint, platform: &Platform) -> Vec<ConstraintViolation> {
    let mut out = Vec::new();
    for (i, p) in point.partitions().iter().enumerate() {
        let used = partition_resources(p, &point.graph);
        for resource in used.exceeded(&platform.resources) {
            out.push(ConstraintViolation::Resource {
                partition: i,
                resource,
                used: used.get(resource),
                available: platform.resources.get(resource),
            });
        }
    }
    out
}

/// Bytes of feature map entering and leaving a partition per inference.
pub fn partition_boundary_bytes(partition: &Partition, graph: &HdGraph) -> (f64, f64) {
    let first = &graph.nodes[partition.start].layer;
    let last = &graph.nodes[partition.end - 1].layer;
    let bytes_in = (first.input_elements() * u64::from(first.activation_bits)) as f64 / 8.0;
    let bytes_out = (last.output_elements() * u64::from(last.activation_bits)) as f64 / 8.0;
    (bytes_in, bytes_out)
}

/// Average off-chip traffic of a partition, `(D_in + D_out) / T`.
pub fn partition_bandwidth(partition: &Partition, graph: &HdGraph, platform: &Platform) -> f64 {
    let (d_in, d_out) = partition_boundary_bytes(partition, graph);
    (d_in + d_out) / partition_latency(partition, graph, platform)
}

/// Every partition's bandwidth must be strictly below the platform's.
pub fn check_bandwidth(point: &DesignPoint, platform: &Platform) -> Vec<ConstraintViolation> {
    point
        .partitions()
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let required = partition_bandwidth(p, &point.graph, platform);
            (required >= platform.mem_bandwidth_bytes_per_s).then_some(
                ConstraintViolation::Bandwidth {
                    partition: i,
                    required_bytes_per_s: required,
                    available_bytes_per_s: platform.mem_bandwidth_bytes_per_s,
                },
            )
        })
        .collect()
}

/// Foldings must divide their dimension (and sit in the backend's domain).
pub fn check_channel_factors(point: &DesignPoint) -> Vec<ConstraintViolation> {
    let backend = point.backend();
    let mut out = Vec::new();
    for node in &point.graph.nodes {
        let domains = folding_domains(node, backend);
        for var in FoldVar::ALL {
            let value = node.folding.get(var);
            if domains.get(var).binary_search(&value).is_err() {
                let layer = &node.layer;
                out.push(ConstraintViolation::ChannelFactor {
                    node: node.index,
                    variable: var,
                    value,
                    dimension: match var {
                        FoldVar::SIn => layer.channels_in,
                        FoldVar::SOut => layer.channels_out,
                        FoldVar::K => layer.kernel_size(),
                    },
                });
            }
        }
    }
    out
}

pub fn check_intra_matching(point: &DesignPoint) -> Vec<ConstraintViolation> {
    if !point.backend().enforce_intra_matching {
        return Vec::new();
    }
    point
        .graph
        .nodes
        .iter()
        .filter(|n| n.requires_intra_match && n.folding.s_in != n.folding.s_out)
        .map(|n| ConstraintViolation::IntraMatching {
            node: n.index,
            s_in: n.folding.s_in,
            s_out: n.folding.s_out,
        })
        .collect()
}

/// Consecutive nodes in one partition must agree on the stream width.
/// Edges carrying a cut go through memory and are exempt.
pub fn check_inter_matching(point: &DesignPoint) -> Vec<ConstraintViolation> {
    if !point.backend().enforce_inter_matching {
        return Vec::new();
    }
    point
        .graph
        .nodes
        .windows(2)
        .filter(|w| point.cutset.joins(w[0].index) && w[0].folding.s_out != w[1].folding.s_in)
        .map(|w| ConstraintViolation::InterMatching {
            node: w[0].index,
            s_out: w[0].folding.s_out,
            next_s_in: w[1].folding.s_in,
        })
        .collect()
}

/// All constraints enabled by the backend profile plus the bandwidth bound.
pub fn check_all(point: &DesignPoint, platform: &Platform) -> Vec<ConstraintViolation> {
    let backend = point.backend();
    let mut out = Vec::new();
    if backend.enforce_channel_factor {
        out.extend(check_channel_factors(point));
    }
    out.extend(check_intra_matching(point));
    out.extend(check_inter_matching(point));
    if backend.enforce_resource {
        out.extend(check_resources(point, platform));
    }
    out.extend(check_bandwidth(point, platform));
    out
}

pub fn is_feasible(point: &DesignPoint, platform: &Platform) -> bool {
    check_all(point, platform).is_empty()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionEvaluation {
    pub latency_s: f64,
    pub resources: ResourceVector,
    pub bandwidth_bytes_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub per_partition: Vec<PartitionEvaluation>,
    pub objective_value: f64,
    pub feasible: bool,
    pub violations: Vec<ConstraintViolation>,
}

pub fn evaluate(point: &DesignPoint, platform: &Platform, objective: Objective) -> Evaluation {
    let per_partition = point
        .partitions()
        .iter()
        .map(|p| PartitionEvaluation {
            latency_s: partition_latency(p, &point.graph, platform),
            resources: partition_resources(p, &point.graph),
            bandwidth_bytes_per_s: partition_bandwidth(p, &point.graph, platform),
        })
        .collect();
    let violations = check_all(point, platform);
    Evaluation {
        per_partition,
        objective_value: objective.value(point, platform),
        feasible: violations.is_empty(),
        violations,
    }
}

/// Number of values the folding variables of node `i` can take jointly,
/// counting intra-matched channel foldings once.
pub fn node_design_count(graph: &HdGraph, i: usize) -> u64 {
    let node = &graph.nodes[i];
    let d = folding_domains(node, &graph.backend);
    let channels = if node.requires_intra_match {
        d.s_in.iter().filter(|v| d.s_out.contains(v)).count() as u64
    } else {
        (d.s_in.len() * d.s_out.len()) as u64
    };
    channels * d.k.len() as u64
}

/// Product of per-node folding choices times the `2^(N-1)` cut subsets.
pub fn design_space_size(graph: &HdGraph) -> BigUint {
    let foldings = (0..graph.len())
        .map(|i| BigUint::from(node_design_count(graph, i)))
        .fold(BigUint::from(1u32), |acc, c| acc * c);
    foldings << graph.edge_count()
}
