//! Lowering an optimised design point back into a backend configuration
//! document, and loading such documents again.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{map_variables, node_latency, node_resources, BackendKind, ResourceVector};
use crate::evaluation::{check_all, ConstraintViolation, Platform};
use crate::hdgraph::{build_hdgraph, CutSet, DesignPoint, Folding, GraphError};
use crate::network::NetworkModel;

pub const EXPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportedNode {
    pub layer: String,
    pub parameters: BTreeMap<String, u64>,
    /// Generic folding the parameters were derived from; several backends
    /// cannot recover it from their own parameters alone.
    pub folding: Folding,
    pub latency_s: f64,
    pub resources: ResourceVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportedPartition {
    pub nodes: Vec<ExportedNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportDocument {
    pub schema_version: u32,
    pub backend: BackendKind,
    pub partitions: Vec<ExportedPartition>,
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("design violates {} constraint(s); first: {}", .0.len(), .0[0])]
    ConstraintViolated(Vec<ConstraintViolation>),
    #[error("design document: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("design document has schema version {0}, expected {EXPORT_SCHEMA_VERSION}")]
    SchemaVersion(u32),
    #[error("design document targets {document}, requested {requested}")]
    BackendMismatch {
        document: BackendKind,
        requested: BackendKind,
    },
    #[error("design document does not match the network: {0}")]
    ModelMismatch(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Emit the per-partition, per-node configuration of a valid design point.
pub fn export_design(point: &DesignPoint, platform: &Platform) -> Result<ExportDocument, ExportError> {
    let violations = check_all(point, platform);
    if !violations.is_empty() {
        return Err(ExportError::ConstraintViolated(violations));
    }
    let backend = point.graph.backend;
    let partitions = point
        .partitions()
        .iter()
        .map(|p| ExportedPartition {
            nodes: p
                .indices()
                .map(|i| {
                    let node = &point.graph.nodes[i];
                    ExportedNode {
                        layer: node.layer.name.clone(),
                        parameters: map_variables(node, &backend),
                        folding: node.folding,
                        latency_s: node_latency(node, platform.clock_hz),
                        resources: node_resources(node),
                    }
                })
                .collect(),
        })
        .collect();
    Ok(ExportDocument {
        schema_version: EXPORT_SCHEMA_VERSION,
        backend: backend.name,
        partitions,
    })
}

pub fn parse_export_document(text: &str) -> Result<ExportDocument, ExportError> {
    let doc: ExportDocument = serde_json::from_str(text)?;
    if doc.schema_version != EXPORT_SCHEMA_VERSION {
        return Err(ExportError::SchemaVersion(doc.schema_version));
    }
    Ok(doc)
}

/// Rebuild the design point a document describes for `model`.
pub fn load_design(doc: &ExportDocument, model: &NetworkModel) -> Result<DesignPoint, ExportError> {
    let mut graph = build_hdgraph(model, doc.backend.descriptor())?;
    let nodes: Vec<&ExportedNode> = doc.partitions.iter().flat_map(|p| &p.nodes).collect();
    if nodes.len() != graph.len() {
        return Err(ExportError::ModelMismatch(format!(
            "document has {} nodes, network has {} layers",
            nodes.len(),
            graph.len()
        )));
    }
    for (node, exported) in graph.nodes.iter_mut().zip(&nodes) {
        if node.layer.name != exported.layer {
            return Err(ExportError::ModelMismatch(format!(
                "node {} is '{}' in the document but '{}' in the network",
                node.index, exported.layer, node.layer.name
            )));
        }
        let expected = map_variables(
            &crate::hdgraph::HdNode {
                folding: exported.folding,
                ..node.clone()
            },
            &graph.backend,
        );
        if expected != exported.parameters {
            return Err(ExportError::ModelMismatch(format!(
                "layer '{}': parameters {:?} do not correspond to folding {:?}",
                exported.layer, exported.parameters, exported.folding
            )));
        }
        node.folding = exported.folding;
    }
    let mut cuts = Vec::new();
    let mut end = 0;
    for p in &doc.partitions {
        if p.nodes.is_empty() {
            return Err(ExportError::ModelMismatch("empty partition".to_string()));
        }
        end += p.nodes.len();
        cuts.push(end);
    }
    cuts.pop();
    let cutset = CutSet::new(cuts, graph.len())?;
    Ok(DesignPoint { graph, cutset })
}
