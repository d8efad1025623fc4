//! Design-space exploration for mapping sequential CNNs onto streaming FPGA
//! accelerators with optional reconfiguration.
//!
//! A [`network::NetworkModel`] is turned into an [`hdgraph::HdGraph`] for a
//! backend, evaluated against a [`evaluation::Platform`], and searched by one
//! of the [`optimizers`].

pub mod backends;
pub mod cli;
pub mod evaluation;
pub mod hdgraph;
pub mod network;
pub mod optimizers;

pub use backends::{BackendDescriptor, BackendKind, ResourceVector};
pub use evaluation::{evaluate, Objective, Platform};
pub use hdgraph::{build_hdgraph, CutSet, DesignPoint, Folding, HdGraph};
pub use network::{parse_network, NetworkModel};
pub use optimizers::{OptimiseError, OptimiserResult};
