//! Trained model files: `model.json` with named tensors and
//! `train_config.json` with the settings that built them.

use std::path::Path;

use idenet_core::estimator::{EstimatorModel, Group, NamedTensor, Network, TrainConfig, Variant};
use idenet_core::numeric::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::files::{read_json, write_json};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub group: Group,
    /// `[rows, cols]`.
    pub shape: [usize; 2],
    /// Row-major values.
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub variant: Variant,
    pub node_dim: usize,
    pub edge_dim: usize,
    /// Smoothing weight of the kept candidate.
    pub lambda: f64,
    pub val_loss: f64,
    pub best_epoch: usize,
    pub tensors: Vec<TensorRecord>,
    pub bn_mean: Vec<f64>,
    pub bn_var: Vec<f64>,
}

impl Checkpoint {
    pub fn from_model(model: &EstimatorModel, node_dim: usize, edge_dim: usize) -> Self {
        let net = &model.network;
        Self {
            variant: net.variant,
            node_dim,
            edge_dim,
            lambda: model.lambda,
            val_loss: model.val_loss,
            best_epoch: model.history.best_epoch,
            tensors: net
                .params
                .iter()
                .map(|p| TensorRecord {
                    name: p.name.clone(),
                    group: p.group,
                    shape: [p.value.rows(), p.value.cols()],
                    data: p.value.as_slice().to_vec(),
                })
                .collect(),
            bn_mean: net.bn_mean.clone(),
            bn_var: net.bn_var.clone(),
        }
    }

    /// Rebuilds the network, checking every tensor against the architecture
    /// implied by `config`.
    pub fn to_network(&self, config: &TrainConfig) -> Result<Network> {
        let mut params = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let [r, c] = t.shape;
            if t.data.len() != r * c {
                return Err(Error::Invalid(format!("tensor {} has {} values for shape {r}x{c}", t.name, t.data.len())));
            }
            params.push(NamedTensor {
                name: t.name.clone(),
                group: t.group,
                value: Matrix::from_vec(r, c, t.data.clone()),
            });
        }
        Ok(Network::from_tensors(
            self.variant,
            self.node_dim,
            self.edge_dim,
            config,
            params,
            self.bn_mean.clone(),
            self.bn_var.clone(),
        )?)
    }
}

pub fn save(dir: &Path, checkpoint: &Checkpoint, config: &TrainConfig) -> Result<()> {
    write_json(&dir.join("model.json"), checkpoint)?;
    write_json(&dir.join("train_config.json"), config)
}

pub fn load(dir: &Path) -> Result<(Checkpoint, Network)> {
    let checkpoint: Checkpoint = read_json(&dir.join("model.json"))?;
    let config: TrainConfig = read_json(&dir.join("train_config.json"))?;
    let network = checkpoint.to_network(&config)?;
    Ok((checkpoint, network))
}
