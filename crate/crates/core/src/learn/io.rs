//! Versioned JSON model files with base64 little-endian f32 weights.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::loss::LossSpec;
use super::train::TrainConfig;
use super::{Model, ModelKind};
use crate::error::{Error, Result};
use crate::features::EncoderConfig;

pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: u32,
    pub kind: ModelKind,
    pub dims: Dims,
    pub loss_spec: LossSpec,
    /// Named parameter blocks, base64 of little-endian f32.
    pub weights: BTreeMap<String, String>,
    /// Absent for models over non-text inputs (the stacking meta-model).
    pub encoder: Option<EncoderConfig>,
    pub train_config: Option<TrainConfig>,
    pub seed: u64,
}

fn block_names(kind: ModelKind) -> &'static [&'static str] {
    match kind {
        ModelKind::Linear => &["weight", "bias"],
        ModelKind::Mlp1 => &["w1", "b1", "w2", "b2"],
    }
}

fn block_lens(kind: ModelKind, d: &Dims) -> Option<Vec<usize>> {
    Some(match kind {
        ModelKind::Linear => vec![d.output.checked_mul(d.input)?, d.output],
        ModelKind::Mlp1 => vec![
            d.hidden.checked_mul(d.input)?,
            d.hidden,
            d.output.checked_mul(d.hidden)?,
            d.output,
        ],
    })
}

fn encode_f32(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode_f32(name: &str, text: &str, expected: usize) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| Error::Format(format!("weights {name:?}: {e}")))?;
    if bytes.len() != expected * 4 {
        return Err(Error::Format(format!(
            "weights {name:?}: expected {expected} floats, found {} bytes",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

impl ModelFile {
    pub fn new(
        model: &Model,
        loss_spec: LossSpec,
        encoder: Option<EncoderConfig>,
        train_config: Option<TrainConfig>,
        seed: u64,
    ) -> Self {
        let dims = Dims {
            input: model.input_dim(),
            hidden: model.hidden_dim(),
            output: model.out_dim(),
        };
        let mut weights = BTreeMap::new();
        let mut offset = 0;
        let lens = block_lens(model.kind(), &dims).expect("in-memory model dims fit in usize");
        for (name, len) in block_names(model.kind()).iter().zip(lens) {
            weights.insert(name.to_string(), encode_f32(&model.params()[offset..offset + len]));
            offset += len;
        }
        ModelFile {
            version: MODEL_FILE_VERSION,
            kind: model.kind(),
            dims,
            loss_spec,
            weights,
            encoder,
            train_config,
            seed,
        }
    }

    pub fn to_model(&self) -> Result<Model> {
        if self.version != MODEL_FILE_VERSION {
            return Err(Error::Format(format!("unsupported model file version {}", self.version)));
        }
        let names = block_names(self.kind);
        if self.weights.len() != names.len() {
            return Err(Error::Format(format!("expected weight blocks {names:?}")));
        }
        let lens = block_lens(self.kind, &self.dims)
            .ok_or_else(|| Error::Format("model dims overflow".into()))?;
        let mut params = Vec::new();
        for (name, len) in names.iter().zip(lens) {
            let text = self
                .weights
                .get(*name)
                .ok_or_else(|| Error::Format(format!("missing weight block {name:?}")))?;
            if text.len() / 4 * 3 > len.saturating_mul(4) + 3 {
                return Err(Error::Format(format!("weights {name:?}: too long")));
            }
            params.extend(decode_f32(name, text, len)?);
        }
        if let Some(enc) = &self.encoder {
            enc.validate()?;
            if enc.dim != self.dims.input {
                return Err(Error::Format(format!(
                    "encoder dim {} does not match model input {}",
                    enc.dim, self.dims.input
                )));
            }
        }
        let hidden = if self.kind == ModelKind::Linear { 0 } else { self.dims.hidden };
        Model::from_params(self.kind, self.dims.input, hidden, self.dims.output, params)
            .map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model file serializes");
        s.push('\n');
        s
    }

    pub fn from_json(source: &str) -> Result<Self> {
        Ok(serde_json::from_str(source)?)
    }
}
