//! Sequential CNN model descriptions: parsing, shape inference and validation.
//!
//! Models are read from a JSON document of the form
//!
//! ```json
//! {
//!   "name": "tiny",
//!   "defaults": {"weight_bits": 16, "activation_bits": 16},
//!   "layers": [
//!     {"name": "conv1", "kind": "Convolution", "channels_in": 3, "channels_out": 4,
//!      "rows_in": 8, "cols_in": 8, "kernel": [3, 3], "stride": 1, "padding": 0},
//!     {"name": "relu1", "kind": "ReLU", "channels_in": 4, "channels_out": 4,
//!      "rows_in": 6, "cols_in": 6}
//!   ]
//! }
//! ```
//!
//! Output spatial dimensions are inferred. A `Dense` layer directly after a
//! spatial layer implicitly flattens its input, so its `channels_in` must equal
//! the predecessor's `channels_out * rows_out * cols_out`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LayerKind {
    Convolution,
    Dense,
    Pooling,
    ReLU,
    GlobalPooling,
}

impl LayerKind {
    pub const ALL: [LayerKind; 5] = [
        LayerKind::Convolution,
        LayerKind::Dense,
        LayerKind::Pooling,
        LayerKind::ReLU,
        LayerKind::GlobalPooling,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Convolution => "Convolution",
            LayerKind::Dense => "Dense",
            LayerKind::Pooling => "Pooling",
            LayerKind::ReLU => "ReLU",
            LayerKind::GlobalPooling => "GlobalPooling",
        }
    }

    /// Layers whose output channels are the input channels passed through.
    pub fn is_channel_preserving(self) -> bool {
        matches!(
            self,
            LayerKind::Pooling | LayerKind::ReLU | LayerKind::GlobalPooling
        )
    }

    /// Layers that carry weights and multipliers.
    pub fn has_weights(self) -> bool {
        matches!(self, LayerKind::Convolution | LayerKind::Dense)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LayerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LayerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| s.to_string())
    }
}

/// One layer of a sequential network with fully resolved shapes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub channels_in: u32,
    pub channels_out: u32,
    pub rows_in: u32,
    pub cols_in: u32,
    pub rows_out: u32,
    pub cols_out: u32,
    pub kernel_rows: u32,
    pub kernel_cols: u32,
    pub stride: u32,
    pub padding: u32,
    pub weight_bits: u32,
    pub activation_bits: u32,
}

impl LayerSpec {
    pub fn kernel_size(&self) -> u32 {
        self.kernel_rows * self.kernel_cols
    }

    pub fn input_elements(&self) -> u64 {
        u64::from(self.channels_in) * u64::from(self.rows_in) * u64::from(self.cols_in)
    }

    pub fn output_elements(&self) -> u64 {
        u64::from(self.channels_out) * u64::from(self.rows_out) * u64::from(self.cols_out)
    }

    pub fn output_pixels(&self) -> u64 {
        u64::from(self.rows_out) * u64::from(self.cols_out)
    }

    /// Output `(rows, cols)` implied by the layer kind, kernel, stride and padding.
    ///
    /// Returns `None` when the window does not fit the padded input or the
    /// stride is zero.
    pub fn inferred_output(&self) -> Option<(u32, u32)> {
        match self.kind {
            LayerKind::Convolution | LayerKind::Pooling => {
                let rows = window_output(self.rows_in, self.kernel_rows, self.stride, self.padding)?;
                let cols = window_output(self.cols_in, self.kernel_cols, self.stride, self.padding)?;
                Some((rows, cols))
            }
            LayerKind::ReLU => Some((self.rows_in, self.cols_in)),
            LayerKind::Dense | LayerKind::GlobalPooling => Some((1, 1)),
        }
    }
}

fn window_output(input: u32, kernel: u32, stride: u32, padding: u32) -> Option<u32> {
    if stride == 0 {
        return None;
    }
    let padded = u64::from(input) + 2 * u64::from(padding);
    let span = padded.checked_sub(u64::from(kernel))?;
    u32::try_from(span / u64::from(stride) + 1).ok()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

impl NetworkModel {
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

/// Which structural rule a layer breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ViolationKind {
    EmptyNetwork,
    NonPositiveDimension,
    ChannelPassThrough,
    DenseSpatial,
    SpatialShape,
    ChainMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModelViolation {
    /// Index of the offending layer, `None` for network-level violations.
    pub layer_index: Option<usize>,
    pub layer: Option<String>,
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for ModelViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.layer {
            Some(name) => write!(f, "layer '{}': {}", name, self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("layer '{layer}': unknown layer kind '{kind}'")]
    UnknownKind { layer: String, kind: String },
    #[error("layer '{layer}': {field} must be positive, got {value}")]
    NonPositive {
        layer: String,
        field: &'static str,
        value: i64,
    },
    #[error("layer '{layer}': {field} must be non-negative, got {value}")]
    Negative {
        layer: String,
        field: &'static str,
        value: i64,
    },
    #[error("layer '{layer}': {message}")]
    ShapeMismatch { layer: String, message: String },
    #[error("network has no layers")]
    Empty,
    #[error("invalid network: {0}")]
    Invalid(String),
}

impl From<serde_json::Error> for NetworkError {
    fn from(e: serde_json::Error) -> Self {
        NetworkError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    name: String,
    defaults: Precision,
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Precision {
    weight_bits: i64,
    activation_bits: i64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    name: String,
    kind: String,
    channels_in: i64,
    channels_out: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rows_in: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cols_in: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rows_out: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cols_out: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel: Option<[i64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    padding: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight_bits: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    activation_bits: Option<i64>,
}

fn positive(layer: &str, field: &'static str, value: i64) -> Result<u32, NetworkError> {
    if value <= 0 {
        return Err(NetworkError::NonPositive {
            layer: layer.to_string(),
            field,
            value,
        });
    }
    u32::try_from(value).map_err(|_| NetworkError::Invalid(format!(
        "layer '{layer}': {field} = {value} is out of range"
    )))
}

fn non_negative(layer: &str, field: &'static str, value: i64) -> Result<u32, NetworkError> {
    if value < 0 {
        return Err(NetworkError::Negative {
            layer: layer.to_string(),
            field,
            value,
        });
    }
    u32::try_from(value).map_err(|_| NetworkError::Invalid(format!(
        "layer '{layer}': {field} = {value} is out of range"
    )))
}

impl LayerEntry {
    fn resolve(self, defaults: Precision) -> Result<LayerSpec, NetworkError> {
        let name = self.name;
        let kind: LayerKind = self.kind.parse().map_err(|kind| NetworkError::UnknownKind {
            layer: name.clone(),
            kind,
        })?;
        let channels_in = positive(&name, "channels_in", self.channels_in)?;
        let channels_out = positive(&name, "channels_out", self.channels_out)?;
        let rows_in = positive(&name, "rows_in", self.rows_in.unwrap_or(1))?;
        let cols_in = positive(&name, "cols_in", self.cols_in.unwrap_or(1))?;
        let [kr, kc] = self.kernel.unwrap_or([1, 1]);
        let kernel_rows = positive(&name, "kernel rows", kr)?;
        let kernel_cols = positive(&name, "kernel cols", kc)?;
        let stride = positive(&name, "stride", self.stride.unwrap_or(1))?;
        let padding = non_negative(&name, "padding", self.padding.unwrap_or(0))?;
        let weight_bits = positive(
            &name,
            "weight_bits",
            self.weight_bits.unwrap_or(defaults.weight_bits),
        )?;
        let activation_bits = positive(
            &name,
            "activation_bits",
            self.activation_bits.unwrap_or(defaults.activation_bits),
        )?;

        let mut layer = LayerSpec {
            name,
            kind,
            channels_in,
            channels_out,
            rows_in,
            cols_in,
            rows_out: 0,
            cols_out: 0,
            kernel_rows,
            kernel_cols,
            stride,
            padding,
            weight_bits,
            activation_bits,
        };
        let (rows_out, cols_out) = layer.inferred_output().ok_or_else(|| {
            NetworkError::ShapeMismatch {
                layer: layer.name.clone(),
                message: format!(
                    "kernel {}x{} does not fit input {}x{} with padding {}",
                    kernel_rows, kernel_cols, rows_in, cols_in, padding
                ),
            }
        })?;
        for (field, given, inferred) in [
            ("rows_out", self.rows_out, rows_out),
            ("cols_out", self.cols_out, cols_out),
        ] {
            if let Some(given) = given {
                let given = positive(&layer.name, field, given)?;
                if given != inferred {
                    return Err(NetworkError::ShapeMismatch {
                        layer: layer.name.clone(),
                        message: format!("{field} is {given} but the layer produces {inferred}"),
                    });
                }
            }
        }
        layer.rows_out = rows_out;
        layer.cols_out = cols_out;
        Ok(layer)
    }
}

/// Parse a JSON network document, infer output shapes and validate the chain.
pub fn parse_network(source: &str) -> Result<NetworkModel, NetworkError> {
    let file: NetworkFile = serde_json::from_str(source)?;
    positive("<defaults>", "weight_bits", file.defaults.weight_bits)?;
    positive("<defaults>", "activation_bits", file.defaults.activation_bits)?;
    let layers = file
        .layers
        .into_iter()
        .map(|entry| entry.resolve(file.defaults))
        .collect::<Result<Vec<_>, _>>()?;
    let model = NetworkModel {
        name: file.name,
        layers,
    };
    if let Some(v) = validate_network(&model).into_iter().next() {
        return Err(match (v.kind, v.layer) {
            (ViolationKind::EmptyNetwork, _) => NetworkError::Empty,
            (_, Some(layer)) => NetworkError::ShapeMismatch {
                layer,
                message: v.message,
            },
            (_, None) => NetworkError::Invalid(v.message),
        });
    }
    Ok(model)
}

/// Serialise a model back into the JSON document format.
///
/// The most common precision becomes the document default; layers that differ
/// carry explicit overrides.
pub fn serialize_network(model: &NetworkModel) -> String {
    let defaults = most_common_precision(model);
    let layers = model
        .layers
        .iter()
        .map(|l| {
            let (weight_bits, activation_bits) = (i64::from(l.weight_bits), i64::from(l.activation_bits));
            LayerEntry {
                name: l.name.clone(),
                kind: l.kind.as_str().to_string(),
                channels_in: l.channels_in.into(),
                channels_out: l.channels_out.into(),
                rows_in: Some(l.rows_in.into()),
                cols_in: Some(l.cols_in.into()),
                rows_out: None,
                cols_out: None,
                kernel: Some([l.kernel_rows.into(), l.kernel_cols.into()]),
                stride: Some(l.stride.into()),
                padding: Some(l.padding.into()),
                weight_bits: (weight_bits != defaults.weight_bits).then_some(weight_bits),
                activation_bits: (activation_bits != defaults.activation_bits)
                    .then_some(activation_bits),
            }
        })
        .collect();
    let file = NetworkFile {
        name: model.name.clone(),
        defaults,
        layers,
    };
    serde_json::to_string_pretty(&file).expect("network document is always serialisable")
}

fn most_common_precision(model: &NetworkModel) -> Precision {
    let mut counts: Vec<(Precision, usize)> = Vec::new();
    for l in &model.layers {
        let p = Precision {
            weight_bits: l.weight_bits.into(),
            activation_bits: l.activation_bits.into(),
        };
        match counts.iter_mut().find(|(q, _)| *q == p) {
            Some((_, n)) => *n += 1,
            None => counts.push((p, 1)),
        }
    }
    // max_by_key keeps the last maximum; iterate reversed so the first wins
    counts
        .into_iter()
        .rev()
        .max_by_key(|(_, n)| *n)
        .map(|(p, _)| p)
        .unwrap_or(Precision {
            weight_bits: 16,
            activation_bits: 16,
        })
}

/// Check every layer and chaining invariant, returning all violations found.
pub fn validate_network(model: &NetworkModel) -> Vec<ModelViolation> {
    let mut out = Vec::new();
    if model.layers.is_empty() {
        out.push(ModelViolation {
            layer_index: None,
            layer: None,
            kind: ViolationKind::EmptyNetwork,
            message: "network has no layers".to_string(),
        });
        return out;
    }
    for (i, layer) in model.layers.iter().enumerate() {
        let mut push = |kind, message: String| {
            out.push(ModelViolation {
                layer_index: Some(i),
                layer: Some(layer.name.clone()),
                kind,
                message,
            })
        };
        let dims = [
            ("channels_in", layer.channels_in),
            ("channels_out", layer.channels_out),
            ("rows_in", layer.rows_in),
            ("cols_in", layer.cols_in),
            ("rows_out", layer.rows_out),
            ("cols_out", layer.cols_out),
            ("kernel_rows", layer.kernel_rows),
            ("kernel_cols", layer.kernel_cols),
            ("stride", layer.stride),
            ("weight_bits", layer.weight_bits),
            ("activation_bits", layer.activation_bits),
        ];
        let zero: Vec<_> = dims.iter().filter(|(_, v)| *v == 0).map(|(f, _)| *f).collect();
        if !zero.is_empty() {
            push(
                ViolationKind::NonPositiveDimension,
                format!("non-positive dimension(s): {}", zero.join(", ")),
            );
            continue;
        }
        if layer.kind.is_channel_preserving() && layer.channels_out != layer.channels_in {
            push(
                ViolationKind::ChannelPassThrough,
                format!(
                    "{} layer must keep channels: channels_in {} != channels_out {}",
                    layer.kind, layer.channels_in, layer.channels_out
                ),
            );
        }
        if layer.kind == LayerKind::Dense
            && (layer.rows_out != 1 || layer.cols_out != 1 || layer.rows_in != 1 || layer.cols_in != 1)
        {
            push(
                ViolationKind::DenseSpatial,
                format!(
                    "Dense layer must be 1x1 spatially, got {}x{} -> {}x{}",
                    layer.rows_in, layer.cols_in, layer.rows_out, layer.cols_out
                ),
            );
        }
        if layer.kind != LayerKind::Dense {
            match layer.inferred_output() {
                Some((r, c)) if (r, c) == (layer.rows_out, layer.cols_out) => {}
                Some((r, c)) => push(
                    ViolationKind::SpatialShape,
                    format!(
                        "output is {}x{} but kernel/stride/padding give {}x{}",
                        layer.rows_out, layer.cols_out, r, c
                    ),
                ),
                None => push(
                    ViolationKind::SpatialShape,
                    "kernel does not fit the padded input".to_string(),
                ),
            }
        }
        if i > 0 {
            let prev = &model.layers[i - 1];
            let flattening = layer.kind == LayerKind::Dense && prev.output_pixels() > 1;
            if flattening {
                if u64::from(layer.channels_in) != prev.output_elements() {
                    push(
                        ViolationKind::ChainMismatch,
                        format!(
                            "Dense channels_in {} does not match flattened output of '{}' ({}x{}x{} = {})",
                            layer.channels_in,
                            prev.name,
                            prev.channels_out,
                            prev.rows_out,
                            prev.cols_out,
                            prev.output_elements()
                        ),
                    );
                }
            } else if (layer.channels_in, layer.rows_in, layer.cols_in)
                != (prev.channels_out, prev.rows_out, prev.cols_out)
            {
                push(
                    ViolationKind::ChainMismatch,
                    format!(
                        "input {}x{}x{} does not match output of '{}' ({}x{}x{})",
                        layer.channels_in,
                        layer.rows_in,
                        layer.cols_in,
                        prev.name,
                        prev.channels_out,
                        prev.rows_out,
                        prev.cols_out
                    ),
                );
            }
        }
    }
    out
}
