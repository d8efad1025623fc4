//! Backend profiles: which constraints a toolflow enforces, how the generic
//! folding variables map onto its own design parameters, and the reference
//! latency/resource models used to evaluate nodes.

mod cost;
mod export;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hdgraph::{FoldVar, HdNode};
use crate::network::LayerKind;

pub use cost::{
    latency_cycles, node_latency, node_resources, resources_for, ResourceKind, ResourceVector,
    BRAM_BITS,
};
pub use export::{
    export_design, load_design, parse_export_document, ExportDocument, ExportError, ExportedNode,
    ExportedPartition, EXPORT_SCHEMA_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BackendKind {
    FpgaConvNetLike,
    FinnLike,
    Hls4mlLike,
}

impl BackendKind {
    pub const ALL: [BackendKind; 3] = [
        BackendKind::FpgaConvNetLike,
        BackendKind::FinnLike,
        BackendKind::Hls4mlLike,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::FpgaConvNetLike => "FpgaConvNetLike",
            BackendKind::FinnLike => "FinnLike",
            BackendKind::Hls4mlLike => "Hls4mlLike",
        }
    }

    pub fn descriptor(self) -> BackendDescriptor {
        BackendDescriptor::profile(self)
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
#[error("unknown backend '{0}' (expected FpgaConvNetLike, FinnLike or Hls4mlLike)")]
pub struct UnknownBackend(pub String);

impl std::str::FromStr for BackendKind {
    type Err = UnknownBackend;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "fpgaconvnetlike" | "fpgaconvnet" => Ok(BackendKind::FpgaConvNetLike),
            "finnlike" | "finn" => Ok(BackendKind::FinnLike),
            "hls4mllike" | "hls4ml" => Ok(BackendKind::Hls4mlLike),
            _ => Err(UnknownBackend(s.to_string())),
        }
    }
}

/// Constraint profile and capabilities of one backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackendDescriptor {
    pub name: BackendKind,
    pub enforce_intra_matching: bool,
    pub enforce_inter_matching: bool,
    pub enforce_channel_factor: bool,
    pub enforce_resource: bool,
    supported: [bool; LayerKind::ALL.len()],
}

impl BackendDescriptor {
    /// The shipped profile for `kind`.
    ///
    /// | profile          | resource | channel factor | intra | inter |
    /// |------------------|----------|----------------|-------|-------|
    /// | FpgaConvNetLike  | yes      | yes            | yes   | no    |
    /// | FinnLike         | yes      | yes            | yes   | yes   |
    /// | Hls4mlLike       | yes      | yes            | no    | yes   |
    pub fn profile(kind: BackendKind) -> Self {
        let (intra, inter) = match kind {
            BackendKind::FpgaConvNetLike => (true, false),
            BackendKind::FinnLike => (true, true),
            BackendKind::Hls4mlLike => (false, true),
        };
        BackendDescriptor {
            name: kind,
            enforce_intra_matching: intra,
            enforce_inter_matching: inter,
            enforce_channel_factor: true,
            enforce_resource: true,
            supported: [true; LayerKind::ALL.len()],
        }
    }

    /// Same profile without support for `kind`.
    pub fn without_layer_kind(mut self, kind: LayerKind) -> Self {
        self.supported[kind_slot(kind)] = false;
        self
    }

    pub fn supports(&self, kind: LayerKind) -> bool {
        self.supported[kind_slot(kind)]
    }

    /// Whether folding variable `var` is tunable for a layer of `kind`.
    ///
    /// Kernel folding only exists on convolution blocks; every other block
    /// has its kernel folding pinned to 1.
    pub fn variable_applies(&self, kind: LayerKind, var: FoldVar) -> bool {
        match var {
            FoldVar::SIn | FoldVar::SOut => true,
            FoldVar::K => kind == LayerKind::Convolution,
        }
    }

    /// Backend design parameters for `node`.
    pub fn map_variables(&self, node: &HdNode) -> BTreeMap<String, u64> {
        map_variables(node, self)
    }
}

fn kind_slot(kind: LayerKind) -> usize {
    LayerKind::ALL.iter().position(|k| *k == kind).unwrap()
}

/// Translate a node's `(s_in, s_out, k)` into the backend's own parameters.
///
/// * FpgaConvNetLike: `coarse_in = s_in`, `coarse_out = s_out`, `fine = k`
/// * FinnLike: `SIMD = s_in * k`, `PE = s_out`
/// * Hls4mlLike: `reuse_factor = (c_in/s_in) * (c_out/s_out) * (K/k)`
pub fn map_variables(node: &HdNode, backend: &BackendDescriptor) -> BTreeMap<String, u64> {
    let f = node.folding;
    let (s_in, s_out, k) = (u64::from(f.s_in), u64::from(f.s_out), u64::from(f.k));
    let layer = &node.layer;
    let mut out = BTreeMap::new();
    match backend.name {
        BackendKind::FpgaConvNetLike => {
            out.insert("coarse_in".to_string(), s_in);
            out.insert("coarse_out".to_string(), s_out);
            out.insert("fine".to_string(), k);
        }
        BackendKind::FinnLike => {
            out.insert("SIMD".to_string(), s_in * k);
            out.insert("PE".to_string(), s_out);
        }
        BackendKind::Hls4mlLike => {
            let rf = (u64::from(layer.channels_in) / s_in)
                * (u64::from(layer.channels_out) / s_out)
                * (u64::from(layer.kernel_size()) / k);
            out.insert("reuse_factor".to_string(), rf);
        }
    }
    out
}
