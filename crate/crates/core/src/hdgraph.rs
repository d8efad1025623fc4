//! Hardware description graph: one computation node per layer, each carrying
//! its folding variables, plus the cut set that splits the chain into
//! separately configured partitions.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::BackendDescriptor;
use crate::network::{LayerKind, LayerSpec, NetworkModel};

/// Folding of one node. Larger values mean more parallel hardware.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Folding {
    pub s_in: u32,
    pub s_out: u32,
    pub k: u32,
}

impl Folding {
    pub const MINIMAL: Folding = Folding {
        s_in: 1,
        s_out: 1,
        k: 1,
    };

    pub fn get(&self, var: FoldVar) -> u32 {
        match var {
            FoldVar::SIn => self.s_in,
            FoldVar::SOut => self.s_out,
            FoldVar::K => self.k,
        }
    }

    pub fn set(&mut self, var: FoldVar, value: u32) {
        match var {
            FoldVar::SIn => self.s_in = value,
            FoldVar::SOut => self.s_out = value,
            FoldVar::K => self.k = value,
        }
    }
}

impl Default for Folding {
    fn default() -> Self {
        Folding::MINIMAL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FoldVar {
    SIn,
    SOut,
    K,
}

impl FoldVar {
    pub const ALL: [FoldVar; 3] = [FoldVar::SIn, FoldVar::SOut, FoldVar::K];
}

impl fmt::Display for FoldVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FoldVar::SIn => "s_in",
            FoldVar::SOut => "s_out",
            FoldVar::K => "k",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HdNode {
    pub index: usize,
    pub layer: Arc<LayerSpec>,
    pub folding: Folding,
    /// Input and output channel folding must be equal on this node.
    pub requires_intra_match: bool,
}

impl HdNode {
    /// True when every tunable variable sits at the top of its domain.
    pub fn is_fully_unrolled(&self, backend: &BackendDescriptor) -> bool {
        let domains = folding_domains(self, backend);
        FoldVar::ALL
            .iter()
            .all(|&v| Some(&self.folding.get(v)) == domains.get(v).last())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HdGraph {
    pub nodes: Vec<HdNode>,
    pub backend: BackendDescriptor,
}

impl HdGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of edges that can carry a cut.
    pub fn edge_count(&self) -> usize {
        self.nodes.len().saturating_sub(1)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("network has no layers")]
    EmptyModel,
    #[error("layer '{layer}': {kind} is not supported by backend {backend}")]
    UnsupportedLayer {
        layer: String,
        kind: LayerKind,
        backend: String,
    },
    #[error("cut after node {edge} is out of range for a graph of {nodes} nodes")]
    CutOutOfRange { edge: usize, nodes: usize },
    #[error("cuts must be strictly increasing, got {0:?}")]
    CutsNotIncreasing(Vec<usize>),
    #[error("node index {index} out of range for a graph of {nodes} nodes")]
    NodeOutOfRange { index: usize, nodes: usize },
    #[error("node {node}: {var} = {value} is not in its folding domain")]
    OutsideDomain { node: usize, var: FoldVar, value: u32 },
    #[error("node {node}: matching forces {var} = {value}, which is outside its folding domain")]
    Infeasible { node: usize, var: FoldVar, value: u32 },
}

/// Cut positions, each naming the edge after node `e` (1-based, `1..N-1`).
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CutSet {
    cuts: Vec<usize>,
}

impl CutSet {
    pub fn empty() -> Self {
        CutSet::default()
    }

    /// Validate `cuts` against a graph of `nodes` nodes.
    pub fn new(cuts: Vec<usize>, nodes: usize) -> Result<Self, GraphError> {
        if cuts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GraphError::CutsNotIncreasing(cuts));
        }
        if let Some(&edge) = cuts.iter().find(|&&e| e == 0 || e >= nodes) {
            return Err(GraphError::CutOutOfRange { edge, nodes });
        }
        Ok(CutSet { cuts })
    }

    /// Every edge cut: each node in its own partition.
    pub fn all_edges(nodes: usize) -> Self {
        CutSet {
            cuts: (1..nodes).collect(),
        }
    }

    /// Cuts selected by the low `nodes - 1` bits of `mask` (bit `e-1` is edge `e`).
    pub fn from_mask(mask: u64, nodes: usize) -> Self {
        CutSet {
            cuts: (1..nodes).filter(|e| mask >> (e - 1) & 1 == 1).collect(),
        }
    }

    pub fn edges(&self) -> &[usize] {
        &self.cuts
    }

    pub fn len(&self) -> usize {
        self.cuts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cuts.is_empty()
    }

    pub fn contains(&self, edge: usize) -> bool {
        self.cuts.binary_search(&edge).is_ok()
    }

    /// Add the cut if absent, remove it if present.
    pub fn toggle(&mut self, edge: usize) {
        match self.cuts.binary_search(&edge) {
            Ok(i) => {
                self.cuts.remove(i);
            }
            Err(i) => self.cuts.insert(i, edge),
        }
    }

    /// True when nodes `i` and `i + 1` (0-based) share a partition.
    pub fn joins(&self, i: usize) -> bool {
        !self.contains(i + 1)
    }
}

/// Contiguous run of node indices `start..end` (0-based, end exclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Partition {
    pub start: usize,
    pub end: usize,
}

impl Partition {
    pub fn indices(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn contains(&self, node: usize) -> bool {
        self.indices().contains(&node)
    }
}

/// Split `nodes` nodes into partitions at the given cuts.
pub fn partitions_for(nodes: usize, cuts: &CutSet) -> Vec<Partition> {
    let mut out = Vec::with_capacity(cuts.len() + 1);
    let mut start = 0;
    for &e in cuts.edges() {
        out.push(Partition { start, end: e });
        start = e;
    }
    out.push(Partition { start, end: nodes });
    out
}

pub fn apply_cuts(graph: &HdGraph, cutset: &CutSet) -> Result<Vec<Partition>, GraphError> {
    let n = graph.len();
    // re-validate: the cut set may have been built for another graph
    CutSet::new(cutset.cuts.clone(), n)?;
    Ok(partitions_for(n, cutset))
}

/// One node per layer, all foldings at 1.
pub fn build_hdgraph(
    model: &NetworkModel,
    backend: BackendDescriptor,
) -> Result<HdGraph, GraphError> {
    if model.layers.is_empty() {
        return Err(GraphError::EmptyModel);
    }
    let nodes = model
        .layers
        .iter()
        .enumerate()
        .map(|(index, layer)| {
            if !backend.supports(layer.kind) {
                return Err(GraphError::UnsupportedLayer {
                    layer: layer.name.clone(),
                    kind: layer.kind,
                    backend: backend.name.to_string(),
                });
            }
            Ok(HdNode {
                index,
                layer: Arc::new(layer.clone()),
                folding: Folding::MINIMAL,
                requires_intra_match: layer.kind.is_channel_preserving()
                    && backend.enforce_intra_matching,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(HdGraph { nodes, backend })
}

/// All divisors of `n` in increasing order.
pub fn divisors(n: u32) -> Vec<u32> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut d = 1u32;
    while u64::from(d) * u64::from(d) <= u64::from(n) {
        if n % d == 0 {
            small.push(d);
            if d != n / d {
                large.push(n / d);
            }
        }
        d += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

/// Allowed values for each folding variable of a node, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldingDomains {
    pub s_in: Vec<u32>,
    pub s_out: Vec<u32>,
    pub k: Vec<u32>,
}

impl FoldingDomains {
    pub fn get(&self, var: FoldVar) -> &[u32] {
        match var {
            FoldVar::SIn => &self.s_in,
            FoldVar::SOut => &self.s_out,
            FoldVar::K => &self.k,
        }
    }
}

pub fn folding_domains(node: &HdNode, backend: &BackendDescriptor) -> FoldingDomains {
    let layer = &node.layer;
    let restrict = |var: FoldVar, values: Vec<u32>| {
        if backend.variable_applies(layer.kind, var) {
            values
        } else {
            vec![1]
        }
    };
    FoldingDomains {
        s_in: restrict(FoldVar::SIn, divisors(layer.channels_in)),
        s_out: restrict(FoldVar::SOut, divisors(layer.channels_out)),
        k: restrict(FoldVar::K, divisors(layer.kernel_size())),
    }
}

fn in_domain(node: &HdNode, backend: &BackendDescriptor, var: FoldVar, value: u32) -> bool {
    folding_domains(node, backend).get(var).binary_search(&value).is_ok()
}

/// A complete assignment of cuts and foldings.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignPoint {
    pub graph: HdGraph,
    pub cutset: CutSet,
}

impl DesignPoint {
    pub fn partitions(&self) -> Vec<Partition> {
        partitions_for(self.graph.len(), &self.cutset)
    }

    pub fn backend(&self) -> &BackendDescriptor {
        &self.graph.backend
    }

    pub fn foldings(&self) -> Vec<Folding> {
        self.graph.nodes.iter().map(|n| n.folding).collect()
    }

    /// Set `var` on `node`, moving the partner channel folding too when the
    /// node is intra-matched, then restore matching across the graph.
    pub fn with_folding(
        &self,
        node: usize,
        var: FoldVar,
        value: u32,
    ) -> Result<DesignPoint, GraphError> {
        let mut next = self.clone();
        let n = next
            .graph
            .nodes
            .get_mut(node)
            .ok_or(GraphError::NodeOutOfRange {
                index: node,
                nodes: self.graph.len(),
            })?;
        n.folding.set(var, value);
        if n.requires_intra_match {
            match var {
                FoldVar::SIn => n.folding.s_out = value,
                FoldVar::SOut => n.folding.s_in = value,
                FoldVar::K => {}
            }
        }
        propagate_matching(&next, node)
    }
}

/// Every node at minimal folding and every edge cut.
pub fn resource_minimal_init(graph: &HdGraph) -> DesignPoint {
    let mut graph = graph.clone();
    for node in &mut graph.nodes {
        node.folding = Folding::MINIMAL;
    }
    let cutset = CutSet::all_edges(graph.len());
    DesignPoint { graph, cutset }
}

/// Restore intra- and inter-node folding equalities by copying values outward
/// from `changed_node`, breadth first, until nothing changes.
///
/// Fails when a forced value is not in the receiving node's domain.
pub fn propagate_matching(
    point: &DesignPoint,
    changed_node: usize,
) -> Result<DesignPoint, GraphError> {
    let backend = point.graph.backend;
    let n = point.graph.len();
    if changed_node >= n {
        return Err(GraphError::NodeOutOfRange {
            index: changed_node,
            nodes: n,
        });
    }
    let mut next = point.clone();
    let nodes = &mut next.graph.nodes;
    {
        let origin = &nodes[changed_node];
        for var in FoldVar::ALL {
            let value = origin.folding.get(var);
            if !in_domain(origin, &backend, var, value) {
                return Err(GraphError::OutsideDomain {
                    node: changed_node,
                    var,
                    value,
                });
            }
        }
        if origin.requires_intra_match && origin.folding.s_in != origin.folding.s_out {
            return Err(GraphError::Infeasible {
                node: changed_node,
                var: FoldVar::SOut,
                value: origin.folding.s_in,
            });
        }
    }

    let mut queue = VecDeque::from([changed_node]);
    let mut visited = vec![false; n];
    visited[changed_node] = true;
    while let Some(i) = queue.pop_front() {
        let folding = nodes[i].folding;
        let mut forced: Vec<(usize, FoldVar, u32)> = Vec::new();
        if backend.enforce_inter_matching {
            if i > 0 && next.cutset.joins(i - 1) {
                forced.push((i - 1, FoldVar::SOut, folding.s_in));
            }
            if i + 1 < n && next.cutset.joins(i) {
                forced.push((i + 1, FoldVar::SIn, folding.s_out));
            }
        }
        for (j, var, value) in forced {
            if visited[j] {
                continue;
            }
            let node = &mut nodes[j];
            if !in_domain(node, &backend, var, value) {
                return Err(GraphError::Infeasible { node: j, var, value });
            }
            node.folding.set(var, value);
            if node.requires_intra_match {
                let partner = if var == FoldVar::SIn { FoldVar::SOut } else { FoldVar::SIn };
                if !in_domain(node, &backend, partner, value) {
                    return Err(GraphError::Infeasible {
                        node: j,
                        var: partner,
                        value,
                    });
                }
                node.folding.set(partner, value);
                // the partner side now pushes further along the chain
                visited[j] = true;
                queue.push_back(j);
            } else {
                visited[j] = true;
            }
        }
    }
    Ok(next)
}
