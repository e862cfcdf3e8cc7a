//! Model checkpoints.
//!
//! A checkpoint is a JSON document:
//!
//! ```text
//! {
//!   "format": "lupi-lab/mlp",
//!   "version": 1,
//!   "spec": { layer_widths, hidden_activation, output_activation, residual, init_seed },
//!   "layers": [ { "rows": out, "cols": in, "weights": <b64>, "bias": <b64> }, ... ]
//! }
//! ```
//!
//! `weights` and `bias` are base64 encodings of little-endian IEEE-754 f64
//! arrays; weights are row-major `(out, in)`. Layers appear input to output.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{MlpModel, MlpSpec};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "lupi-lab/mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointLayer {
    pub rows: usize,
    pub cols: usize,
    pub weights: String,
    pub bias: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub spec: MlpSpec,
    pub layers: Vec<CheckpointLayer>,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(text: &str, expected: usize) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| Error::InvalidConfig(format!("bad checkpoint payload: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(Error::Shape(format!(
            "checkpoint array holds {} bytes, expected {}",
            bytes.len(),
            expected * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

impl Checkpoint {
    pub fn from_model(model: &MlpModel) -> Self {
        let layers = (0..model.spec().num_layers())
            .map(|l| {
                let (w, b) = model.layer(l);
                CheckpointLayer {
                    rows: w.nrows(),
                    cols: w.ncols(),
                    weights: encode(w.as_slice().expect("contiguous weights")),
                    bias: encode(b.as_slice().expect("contiguous bias")),
                }
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            spec: model.spec().clone(),
            layers,
        }
    }

    pub fn into_model(self) -> Result<MlpModel> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        self.spec.validate()?;
        if self.layers.len() != self.spec.num_layers() {
            return Err(Error::Shape("checkpoint layer count does not match spec".into()));
        }
        let mut params = Vec::with_capacity(self.spec.param_count());
        for (l, layer) in self.layers.iter().enumerate() {
            let (cols, rows) = (self.spec.layer_widths[l], self.spec.layer_widths[l + 1]);
            if layer.rows != rows || layer.cols != cols {
                return Err(Error::Shape(format!("checkpoint layer {l} has wrong shape")));
            }
            params.extend(decode(&layer.weights, rows * cols)?);
            params.extend(decode(&layer.bias, rows)?);
        }
        MlpModel::from_params(self.spec, params)
    }
}

pub fn save_checkpoint(model: &MlpModel, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&Checkpoint::from_model(model))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<MlpModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str::<Checkpoint>(&text)?.into_model()
}

/// Short content hash identifying a trained model.
pub fn checkpoint_id(model: &MlpModel) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&model.spec()).expect("spec serializes"));
    for p in model.params() {
        h.update(p.to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, OutputActivation};
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip(seed in any::<u64>(), hidden in 1usize..6, residual in any::<bool>()) {
            let spec = MlpSpec::new(vec![3, hidden, hidden, 2], Activation::Gelu, OutputActivation::Softmax)
                .with_seed(seed)
                .with_residual(residual);
            let model = MlpModel::init(spec).unwrap();
            let text = serde_json::to_string(&Checkpoint::from_model(&model)).unwrap();
            let back = serde_json::from_str::<Checkpoint>(&text).unwrap().into_model().unwrap();
            prop_assert_eq!(back, model);
        }
    }

    #[test]
    fn rejects_wrong_payload_length() {
        let spec = MlpSpec::new(vec![2, 1], Activation::Tanh, OutputActivation::Identity);
        let model = MlpModel::init(spec).unwrap();
        let mut ck = Checkpoint::from_model(&model);
        ck.layers[0].bias = encode(&[1.0, 2.0]);
        assert!(ck.into_model().is_err());
    }
}
