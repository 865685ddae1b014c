//! Versioned checkpoints: magic, JSON header, little-endian f64 payload.
//!
//! Layout: `XCAFLOW\0`, u32 version, u64 header length, header JSON, then
//! every parameter tensor in store order followed, when present, by the
//! Adam first and second moments in the same order.

use std::fs;
use std::path::Path;

use anyhow::{ensure, Context, Result};
use serde::{Deserialize, Serialize};
use xcaflow_core::training::{Adam, TrainState};
use xcaflow_core::{FlowModel, ModelConfig, ParamStore, Tensor};

use crate::error::DataError;

const MAGIC: &[u8; 8] = b"XCAFLOW\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigHeader {
    pub num_scales: usize,
    pub feature_dim: usize,
    pub context_dim: usize,
    pub hidden_dim: usize,
    pub motion_dim: usize,
    pub encoder_widths: [usize; 4],
    pub blocks_per_stage: usize,
    pub feature_unit_width: usize,
    pub feature_unit_blocks: usize,
    pub context_unit_width: usize,
    pub context_unit_blocks: usize,
    pub heads: usize,
    pub ffn_expansion: usize,
    pub layer_scale_init: f64,
    pub corr_radius: usize,
    pub head_width: usize,
}

impl From<&ModelConfig> for ConfigHeader {
    fn from(c: &ModelConfig) -> Self {
        Self {
            num_scales: c.num_scales,
            feature_dim: c.feature_dim,
            context_dim: c.context_dim,
            hidden_dim: c.hidden_dim,
            motion_dim: c.motion_dim,
            encoder_widths: c.encoder_widths,
            blocks_per_stage: c.blocks_per_stage,
            feature_unit_width: c.feature_unit_width,
            feature_unit_blocks: c.feature_unit_blocks,
            context_unit_width: c.context_unit_width,
            context_unit_blocks: c.context_unit_blocks,
            heads: c.heads,
            ffn_expansion: c.ffn_expansion,
            layer_scale_init: c.layer_scale_init,
            corr_radius: c.corr_radius,
            head_width: c.head_width,
        }
    }
}

impl From<&ConfigHeader> for ModelConfig {
    fn from(c: &ConfigHeader) -> Self {
        Self {
            num_scales: c.num_scales,
            feature_dim: c.feature_dim,
            context_dim: c.context_dim,
            hidden_dim: c.hidden_dim,
            motion_dim: c.motion_dim,
            encoder_widths: c.encoder_widths,
            blocks_per_stage: c.blocks_per_stage,
            feature_unit_width: c.feature_unit_width,
            feature_unit_blocks: c.feature_unit_blocks,
            context_unit_width: c.context_unit_width,
            context_unit_blocks: c.context_unit_blocks,
            heads: c.heads,
            ffn_expansion: c.ffn_expansion,
            layer_scale_init: c.layer_scale_init,
            corr_radius: c.corr_radius,
            head_width: c.head_width,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct OptimizerHeader {
    step: usize,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ConfigHeader,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimizerHeader>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub train_state: Option<TrainState>,
}

impl Checkpoint {
    /// Rebuilds the model graph and checks the stored tensors against it.
    pub fn model(&self) -> Result<FlowModel> {
        let (model, fresh) = FlowModel::new(self.config.clone(), 0)?;
        ensure!(
            fresh.len() == self.store.len(),
            DataError::new(format!(
                "checkpoint holds {} tensors, model needs {}",
                self.store.len(),
                fresh.len()
            ))
        );
        for (a, b) in fresh.entries().iter().zip(self.store.entries()) {
            ensure!(
                a.name == b.name && a.value.shape() == b.value.shape(),
                DataError::new(format!("checkpoint tensor {} does not match model tensor {}", b.name, a.name))
            );
        }
        Ok(model)
    }
}

pub fn encode(config: &ModelConfig, store: &ParamStore, state: Option<&TrainState>) -> Result<Vec<u8>> {
    let header = Header {
        model: config.into(),
        tensors: store
            .entries()
            .iter()
            .map(|e| TensorEntry {
                name: e.name.clone(),
                shape: e.value.shape().to_vec(),
            })
            .collect(),
        optimizer: state.map(|s| OptimizerHeader {
            step: s.step,
            t: s.optimizer.t,
            beta1: s.optimizer.beta1,
            beta2: s.optimizer.beta2,
            eps: s.optimizer.eps,
            weight_decay: s.optimizer.weight_decay,
        }),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let mut put = |t: &Tensor| {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    store.entries().iter().for_each(|e| put(&e.value));
    if let Some(s) = state {
        ensure!(s.optimizer.m.len() == store.len(), "optimizer state does not match the store");
        s.optimizer.m.iter().for_each(&mut put);
        s.optimizer.v.iter().for_each(&mut put);
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |m: &str| DataError::new(format!("invalid checkpoint: {m}"));
    ensure!(bytes.len() >= 20 && &bytes[..8] == MAGIC, bad("missing magic"));
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    ensure!(version == VERSION, bad(&format!("unsupported version {version}")));
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes.get(20..).unwrap_or_default();
    ensure!(body.len() >= hlen, bad("truncated header"));
    let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| bad(&e.to_string()))?;
    let mut payload = body[hlen..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut take = |shape: &[usize]| -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = payload.by_ref().take(n).collect();
        ensure!(data.len() == n, bad("truncated payload"));
        Ok(Tensor::from_vec(shape, data))
    };
    let mut store = ParamStore::new();
    for t in &header.tensors {
        store.add(t.name.clone(), take(&t.shape)?);
    }
    let train_state = match &header.optimizer {
        None => None,
        Some(o) => {
            let m = header.tensors.iter().map(|t| take(&t.shape)).collect::<Result<Vec<_>>>()?;
            let v = header.tensors.iter().map(|t| take(&t.shape)).collect::<Result<Vec<_>>>()?;
            Some(TrainState {
                step: o.step,
                optimizer: Adam {
                    beta1: o.beta1,
                    beta2: o.beta2,
                    eps: o.eps,
                    weight_decay: o.weight_decay,
                    t: o.t,
                    m,
                    v,
                },
            })
        }
    };
    ensure!(payload.next().is_none(), bad("trailing bytes"));
    let config = ModelConfig::from(&header.model);
    config.validate().map_err(|e| bad(&e.to_string()))?;
    Ok(Checkpoint {
        config,
        store,
        train_state,
    })
}

pub fn save(path: &Path, config: &ModelConfig, store: &ParamStore, state: Option<&TrainState>) -> Result<()> {
    fs::write(path, encode(config, store, state)?).with_context(|| format!("writing {}", path.display()))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| DataError::new(format!("reading {}: {e}", path.display())))?;
    decode(&bytes).with_context(|| format!("loading {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_and_without_optimizer() {
        let (_, store) = FlowModel::new(ModelConfig::tiny(3), 1).unwrap();
        let mut state = TrainState::new(&store);
        state.step = 7;
        state.optimizer.t = 7;
        state.optimizer.m[0].data_mut()[0] = 0.25;
        for s in [None, Some(&state)] {
            let bytes = encode(&ModelConfig::tiny(3), &store, s).unwrap();
            let ck = decode(&bytes).unwrap();
            assert_eq!(ck.config, ModelConfig::tiny(3));
            assert_eq!(ck.store, store);
            assert_eq!(ck.train_state.as_ref(), s);
            ck.model().unwrap();
        }
    }

    #[test]
    fn corruption_is_rejected() {
        let (_, store) = FlowModel::new(ModelConfig::tiny(3), 1).unwrap();
        let bytes = encode(&ModelConfig::tiny(3), &store, None).unwrap();
        assert!(decode(&bytes[..bytes.len() - 8]).is_err());
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 8]);
        assert!(decode(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'Y';
        assert!(decode(&bad).is_err());
    }
}
