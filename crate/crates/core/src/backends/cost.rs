//! Reference latency and resource models for a folded streaming block.
//!
//! Latency is the initiation interval of the block in clock cycles (pipeline
//! depth is ignored):
//!
//! * Convolution: `rows_out * cols_out * (c_in/s_in) * (c_out/s_out) * (K/k)`
//! * Dense: `(c_in/s_in) * (c_out/s_out)`
//! * Pooling, ReLU, GlobalPooling: `rows_out * cols_out * (c_in/s_in)`
//!
//! where `K = kernel_rows * kernel_cols`.
//!
//! Resources:
//!
//! * `dsp = s_in * s_out * k` for Convolution/Dense, 0 otherwise
//! * `bram`: weight storage of `max(banks, ceil(weight_bits * c_in * c_out * K / 18432))`
//!   blocks where `banks = s_in * s_out * k` (Convolution/Dense), plus
//!   `(kernel_rows - 1) * ceil(cols_in * c_in * activation_bits / 18432)`
//!   line-buffer blocks for Convolution
//! * `lut = 300 + 50 * (s_in + s_out) + 10 * dsp`
//! * `ff = lut / 2`
//!
//! Every quantity is monotone: raising a folding variable never increases
//! latency and never decreases any resource.

use std::fmt;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::hdgraph::{Folding, HdNode};
use crate::network::{LayerKind, LayerSpec};

/// Capacity of one block RAM in bits (18 Kb).
pub const BRAM_BITS: u64 = 18_432;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceKind {
    Dsp,
    Bram,
    Lut,
    Ff,
}

impl ResourceKind {
    pub const ALL: [ResourceKind; 4] = [
        ResourceKind::Dsp,
        ResourceKind::Bram,
        ResourceKind::Lut,
        ResourceKind::Ff,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResourceKind::Dsp => "dsp",
            ResourceKind::Bram => "bram",
            ResourceKind::Lut => "lut",
            ResourceKind::Ff => "ff",
        }
    }
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceVector {
    pub dsp: u64,
    pub bram: u64,
    pub lut: u64,
    pub ff: u64,
}

impl ResourceVector {
    pub fn new(dsp: u64, bram: u64, lut: u64, ff: u64) -> Self {
        ResourceVector { dsp, bram, lut, ff }
    }

    pub fn get(&self, kind: ResourceKind) -> u64 {
        match kind {
            ResourceKind::Dsp => self.dsp,
            ResourceKind::Bram => self.bram,
            ResourceKind::Lut => self.lut,
            ResourceKind::Ff => self.ff,
        }
    }

    /// Component-wise `self <= limit`.
    pub fn fits_within(&self, limit: &ResourceVector) -> bool {
        ResourceKind::ALL.iter().all(|&k| self.get(k) <= limit.get(k))
    }

    /// Resource types where `self` exceeds `limit`.
    pub fn exceeded(&self, limit: &ResourceVector) -> Vec<ResourceKind> {
        ResourceKind::ALL
            .into_iter()
            .filter(|&k| self.get(k) > limit.get(k))
            .collect()
    }
}

impl Add for ResourceVector {
    type Output = ResourceVector;

    fn add(self, rhs: Self) -> Self {
        ResourceVector {
            dsp: self.dsp + rhs.dsp,
            bram: self.bram + rhs.bram,
            lut: self.lut + rhs.lut,
            ff: self.ff + rhs.ff,
        }
    }
}

impl AddAssign for ResourceVector {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for ResourceVector {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ResourceVector::default(), Add::add)
    }
}

/// Initiation interval of a block in clock cycles.
///
/// Foldings must divide their dimensions; the divisions are exact.
pub fn latency_cycles(layer: &LayerSpec, folding: Folding) -> u64 {
    let c_in = u64::from(layer.channels_in / folding.s_in);
    let c_out = u64::from(layer.channels_out / folding.s_out);
    let kernel = u64::from(layer.kernel_size() / folding.k);
    let pixels = layer.output_pixels();
    match layer.kind {
        LayerKind::Convolution => pixels * c_in * c_out * kernel,
        LayerKind::Dense => c_in * c_out,
        LayerKind::Pooling | LayerKind::ReLU | LayerKind::GlobalPooling => pixels * c_in,
    }
}

/// Node latency in seconds at `clock_hz`.
pub fn node_latency(node: &HdNode, clock_hz: f64) -> f64 {
    latency_cycles(&node.layer, node.folding) as f64 / clock_hz
}

pub fn node_resources(node: &HdNode) -> ResourceVector {
    resources_for(&node.layer, node.folding)
}

pub fn resources_for(layer: &LayerSpec, folding: Folding) -> ResourceVector {
    let (s_in, s_out, k) = (
        u64::from(folding.s_in),
        u64::from(folding.s_out),
        u64::from(folding.k),
    );
    let banks = s_in * s_out * k;
    let dsp = if layer.kind.has_weights() { banks } else { 0 };
    let mut bram = 0;
    if layer.kind.has_weights() {
        let weight_bits = u64::from(layer.weight_bits)
            * u64::from(layer.channels_in)
            * u64::from(layer.channels_out)
            * u64::from(layer.kernel_size());
        bram += banks.max(weight_bits.div_ceil(BRAM_BITS));
    }
    if layer.kind == LayerKind::Convolution {
        let line_bits =
            u64::from(layer.cols_in) * u64::from(layer.channels_in) * u64::from(layer.activation_bits);
        bram += u64::from(layer.kernel_rows - 1) * line_bits.div_ceil(BRAM_BITS);
    }
    let lut = 300 + 50 * (s_in + s_out) + 10 * dsp;
    ResourceVector {
        dsp,
        bram,
        lut,
        ff: lut / 2,
    }
}
