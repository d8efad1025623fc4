use std::time::Instant;

use super::{OptimiseError, OptimiserResult, TrajectorySample};
use super::enumerate_node_foldings;
use crate::backends::{latency_cycles, node_resources, resources_for, ResourceKind, ResourceVector};
use crate::evaluation::{
    check_all, is_feasible, partition_bandwidth, partition_boundary_bytes, partition_latency, partition_resources,
    Objective, Platform,
};
use crate::hdgraph::{folding_domains, resource_minimal_init, DesignPoint, FoldVar, Folding, HdGraph, Partition};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleConfig {
    /// A partition counts as memory-bound once its bandwidth reaches this
    /// fraction of the platform's.
    pub memory_bound_fraction: f64,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig {
            memory_bound_fraction: 0.95,
        }
    }
}

/// Resource vector as a single number: the sum of per-type fractions of the
/// platform. Types the platform lacks entirely cost infinity when used.
fn resource_cost(r: &ResourceVector, platform: &Platform) -> f64 {
    ResourceKind::ALL
        .iter()
        .map(|&k| {
            let used = r.get(k) as f64;
            let avail = platform.resources.get(k) as f64;
            if used == 0.0 {
                0.0
            } else if avail == 0.0 {
                f64::INFINITY
            } else {
                used / avail
            }
        })
        .sum()
}

fn next_larger(domain: &[u32], current: u32) -> Option<u32> {
    domain.iter().copied().find(|&v| v > current)
}

/// Single-variable increments of node `j` to the next larger domain value
/// that shorten its latency, smallest predicted resource increase first
/// (ties: s_in, s_out, k). Intra-matched nodes move both channel foldings.
fn increments(point: &DesignPoint, j: usize, platform: &Platform) -> Vec<(FoldVar, u32)> {
    let node = &point.graph.nodes[j];
    let domains = folding_domains(node, &point.graph.backend);
    let current = node.folding;
    let cost_prev = resource_cost(&resources_for(&node.layer, current), platform);
    let t_prev = latency_cycles(&node.layer, current);
    let mut out: Vec<(f64, FoldVar, u32)> = Vec::new();
    for var in FoldVar::ALL {
        if node.requires_intra_match && var == FoldVar::SOut {
            continue;
        }
        let next = if node.requires_intra_match && var == FoldVar::SIn {
            domains
                .s_in
                .iter()
                .copied()
                .find(|&v| v > current.s_in && domains.s_out.contains(&v))
        } else {
            next_larger(domains.get(var), current.get(var))
        };
        let Some(value) = next else { continue };
        let mut folding = current;
        folding.set(var, value);
        if node.requires_intra_match && var == FoldVar::SIn {
            folding.s_out = value;
        }
        if latency_cycles(&node.layer, folding) >= t_prev {
            continue;
        }
        let delta = resource_cost(&resources_for(&node.layer, folding), platform) - cost_prev;
        out.push((delta, var, value));
    }
    // stable sort keeps the s_in, s_out, k order for equal costs
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out.into_iter().map(|(_, v, x)| (v, x)).collect()
}

/// Foldings of node `j` that are strictly faster than its current one,
/// cheapest predicted resource use first (ties: faster first, then
/// enumeration order).
fn faster_foldings(point: &DesignPoint, j: usize, platform: &Platform) -> Vec<Folding> {
    let node = &point.graph.nodes[j];
    let current = latency_cycles(&node.layer, node.folding);
    let mut out: Vec<(f64, u64, Folding)> = enumerate_node_foldings(node, &point.graph)
        .into_iter()
        .filter_map(|f| {
            let t = latency_cycles(&node.layer, f);
            (t < current).then(|| (resource_cost(&resources_for(&node.layer, f), platform), t, f))
        })
        .collect();
    // stable sort keeps enumeration order for full ties
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    out.into_iter().map(|(_, _, f)| f).collect()
}

/// Set every variable of node `j` to `folding`, propagating matching after
/// each one.
fn apply_folding(point: &DesignPoint, j: usize, folding: Folding) -> Option<DesignPoint> {
    let mut next = point.clone();
    for var in FoldVar::ALL {
        let value = folding.get(var);
        if next.graph.nodes[j].folding.get(var) != value {
            next = next.with_folding(j, var, value).ok()?;
        }
    }
    (next.graph.nodes[j].folding == folding).then_some(next)
}

/// Slowest and total node latency of a partition, in cycles.
fn progress(point: &DesignPoint, partition: &Partition) -> (u64, u64) {
    partition.indices().fold((0, 0), |(max, sum), i| {
        let node = &point.graph.nodes[i];
        let t = latency_cycles(&node.layer, node.folding);
        (max.max(t), sum + t)
    })
}

fn slowest_node(point: &DesignPoint, partition: &Partition) -> usize {
    let mut best = partition.start;
    let mut best_t = 0;
    for i in partition.indices() {
        let node = &point.graph.nodes[i];
        let t = latency_cycles(&node.layer, node.folding);
        if t > best_t {
            best = i;
            best_t = t;
        }
    }
    best
}

/// Speed up the slowest node of `partition` until it is fully parallel or
/// nothing faster fits the constraints.
///
/// Each step applies the feasible single-variable increment with the smallest
/// resource increase. When none fits, the node may instead jump to the
/// cheapest feasible folding that is faster than its current one, which can
/// trade one variable against another. A step is kept only if it lowers the
/// partition's (slowest, total) node latency, so the loop always ends.
pub fn optimise_partition(
    point: &DesignPoint,
    partition: &Partition,
    platform: &Platform,
) -> DesignPoint {
    let mut point = point.clone();
    loop {
        let j = slowest_node(&point, partition);
        let before = progress(&point, partition);
        let accept = |next: &DesignPoint| progress(next, partition) < before && is_feasible(next, platform);
        let step = increments(&point, j, platform)
            .into_iter()
            .filter_map(|(var, value)| point.with_folding(j, var, value).ok())
            .find(|next| accept(next))
            .or_else(|| {
                faster_foldings(&point, j, platform)
                    .into_iter()
                    .filter_map(|f| apply_folding(&point, j, f))
                    .find(|next| accept(next))
            });
        match step {
            Some(next) => point = next,
            None => return point,
        }
    }
}

fn meets_heuristics(
    point: &DesignPoint,
    partition: &Partition,
    platform: &Platform,
    config: &RuleConfig,
) -> bool {
    let graph = &point.graph;
    let memory_bound = partition_bandwidth(partition, graph, platform)
        >= config.memory_bound_fraction * platform.mem_bandwidth_bytes_per_s;
    let slowest = slowest_node(point, partition);
    let faster = faster_foldings(point, slowest, platform);
    // no folding in the domain is faster, whatever the constraints
    let slowest_unrolled = faster.is_empty();
    // faster foldings exist, but each would break the resource or bandwidth
    // limit next to the rest of the partition
    let constraint_bound = !faster.is_empty() && {
        let others: Vec<usize> = partition.indices().filter(|&i| i != slowest).collect();
        let resources: ResourceVector = others.iter().map(|&i| node_resources(&graph.nodes[i])).sum();
        let others_cycles = others
            .iter()
            .map(|&i| latency_cycles(&graph.nodes[i].layer, graph.nodes[i].folding))
            .max()
            .unwrap_or(0);
        let (d_in, d_out) = partition_boundary_bytes(partition, graph);
        let layer = &graph.nodes[slowest].layer;
        faster.iter().all(|f| {
            let cycles = others_cycles.max(latency_cycles(layer, *f));
            let bandwidth = (d_in + d_out) / (cycles as f64 / platform.clock_hz);
            !(resources + resources_for(layer, *f)).fits_within(&platform.resources)
                || bandwidth >= platform.mem_bandwidth_bytes_per_s
        })
    };
    let shorter_than_reconfig = partition_latency(partition, graph, platform) < platform.reconfig_time_s;
    memory_bound || slowest_unrolled || constraint_bound || shorter_than_reconfig
}

/// Join partition `i` with neighbour `other`, reset the joined range to
/// minimal folding and re-optimise it.
fn merge(point: &DesignPoint, parts: &[Partition], i: usize, other: usize, platform: &Platform) -> DesignPoint {
    let (left, right) = if other < i { (other, i) } else { (i, other) };
    let joined = Partition {
        start: parts[left].start,
        end: parts[right].end,
    };
    let mut next = point.clone();
    next.cutset.toggle(parts[left].end);
    for idx in joined.indices() {
        next.graph.nodes[idx].folding = Folding::MINIMAL;
    }
    optimise_partition(&next, &joined, platform)
}

/// Deterministic optimiser: optimise each node in its own partition, then
/// greedily merge neighbouring partitions while the objective improves.
pub fn rule_based(
    graph: &HdGraph,
    platform: &Platform,
    objective: Objective,
    config: &RuleConfig,
) -> Result<OptimiserResult, OptimiseError> {
    let start = Instant::now();
    let mut point = resource_minimal_init(graph);
    let violations = check_all(&point, platform);
    if !violations.is_empty() {
        return Err(OptimiseError::InitialInfeasible(violations));
    }
    for p in point.partitions() {
        point = optimise_partition(&point, &p, platform);
    }
    let mut obj = objective.value(&point, platform);
    let mut evaluations = 1u64;
    let mut trajectory = vec![TrajectorySample {
        iteration: 0,
        objective: obj,
        best: obj,
    }];

    loop {
        let parts = point.partitions();
        let mut merged = None;
        'scan: for i in 0..parts.len() {
            if !meets_heuristics(&point, &parts[i], platform, config) {
                continue;
            }
            let mut neighbours: Vec<usize> = Vec::with_capacity(2);
            if i > 0 {
                neighbours.push(i - 1);
            }
            if i + 1 < parts.len() {
                neighbours.push(i + 1);
            }
            // smaller neighbour first; the predecessor wins ties
            neighbours.sort_by(|&a, &b| {
                let ra = resource_cost(&partition_resources(&parts[a], &point.graph), platform);
                let rb = resource_cost(&partition_resources(&parts[b], &point.graph), platform);
                ra.total_cmp(&rb)
            });
            for other in neighbours {
                let candidate = merge(&point, &parts, i, other, platform);
                if !is_feasible(&candidate, platform) {
                    continue;
                }
                evaluations += 1;
                let value = objective.value(&candidate, platform);
                if value < obj {
                    merged = Some((candidate, value));
                    break 'scan;
                }
            }
        }
        match merged {
            Some((candidate, value)) => {
                point = candidate;
                obj = value;
                trajectory.push(TrajectorySample {
                    iteration: trajectory.len() as u64,
                    objective: obj,
                    best: obj,
                });
            }
            None => break,
        }
    }

    Ok(OptimiserResult {
        best_point: point,
        best_objective: obj,
        trajectory,
        wall_time_s: start.elapsed().as_secs_f64(),
        evaluations,
    })
}
