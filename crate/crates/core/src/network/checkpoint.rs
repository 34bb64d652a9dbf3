//! Model checkpoints.
//!
//! Binary layout: magic `ERGLCKPT`, header length (u64 LE), UTF-8 JSON header,
//! then every parameter as little-endian f64. Parameters are written layer by
//! layer, each layer as its weight matrix (row-major, `out × in`) followed by
//! its bias. The JSON-only variant stores the same header with the weights
//! inline and is meant for small models.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Layer, Mlp};
use super::model::{MapForm, MlpModel, Normalization};
use crate::error::{Error, Result};
use crate::training::LossSpec;

pub const MAGIC: &[u8; 8] = b"ERGLCKPT";
const FORMAT_VERSION: u32 = 1;

/// Provenance recorded next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub loss: Option<LossSpec>,
    /// Completed training epochs.
    pub step: usize,
    /// Learning-rate schedule description.
    #[serde(default)]
    pub schedule: Option<String>,
    /// System the model was trained on.
    #[serde(default)]
    pub system: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerShape {
    rows: usize,
    cols: usize,
    activated: bool,
    skip: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    activation: Activation,
    layers: Vec<LayerShape>,
    form: MapForm,
    normalization: Normalization,
    meta: CheckpointMeta,
    /// Inline parameters (JSON-only checkpoints).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    params: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MlpModel,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    fn header(&self, inline: bool) -> Header {
        Header {
            format_version: FORMAT_VERSION,
            activation: self.model.net.activation,
            layers: self
                .model
                .net
                .layers
                .iter()
                .map(|l| LayerShape {
                    rows: l.out_dim(),
                    cols: l.in_dim(),
                    activated: l.activated,
                    skip: l.skip,
                })
                .collect(),
            form: self.model.form,
            normalization: self.model.norm.clone(),
            meta: self.meta.clone(),
            params: inline.then(|| self.flat_params()),
        }
    }

    fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.model.net.param_count());
        for l in &self.model.net.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    fn from_parts(header: Header, params: &[f64]) -> Result<Self> {
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!("checkpoint version {}", header.format_version)));
        }
        let expected: usize = header.layers.iter().map(|l| l.rows * l.cols + l.rows).sum();
        if params.len() != expected {
            return Err(Error::Format(format!("{} parameters, header implies {expected}", params.len())));
        }
        let mut offset = 0;
        let mut layers = Vec::with_capacity(header.layers.len());
        for s in &header.layers {
            let w = &params[offset..offset + s.rows * s.cols];
            offset += s.rows * s.cols;
            let b = &params[offset..offset + s.rows];
            offset += s.rows;
            layers.push(Layer {
                weight: Array2::from_shape_vec((s.rows, s.cols), w.to_vec()).expect("sized"),
                bias: Array1::from(b.to_vec()),
                activated: s.activated,
                skip: s.skip,
            });
        }
        let mut model = MlpModel::new(Mlp::from_layers(layers, header.activation)?, header.form)?;
        let d = model.dim();
        let n = &header.normalization;
        if [&n.in_shift, &n.in_scale, &n.out_shift, &n.out_scale].iter().any(|v| v.len() != d) {
            return Err(Error::Format("normalization length differs from model dimension".into()));
        }
        model.norm = header.normalization;
        Ok(Self { model, meta: header.meta })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header(false)).expect("header serializes");
        let params = self.flat_params();
        let mut out = Vec::with_capacity(16 + header.len() + 8 * params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            // JSON-only fallback
            return Self::from_json(std::str::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))?);
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let end = 16usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| Error::Format("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[16..end]).map_err(|e| Error::Format(e.to_string()))?;
        let blob = &bytes[end..];
        if blob.len() % 8 != 0 {
            return Err(Error::Format("weight blob is not a whole number of f64".into()));
        }
        let params: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Self::from_parts(header, &params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.header(true)).expect("header serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut header: Header = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        let params = header
            .params
            .take()
            .ok_or_else(|| Error::Format("JSON checkpoint has no inline parameters".into()))?;
        Self::from_parts(header, &params)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let bytes = if path.extension().is_some_and(|e| e == "json") {
            self.to_json().into_bytes()
        } else {
            self.to_bytes()
        };
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
