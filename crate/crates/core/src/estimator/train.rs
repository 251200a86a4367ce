use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{TrainConfig, Variant};
use super::model::{GraphInputs, Group, Mode, Network};
use crate::datagen::GeneratedDataset;
use crate::error::EstimatorError;
use crate::numeric::{Adam, Matrix, Tape, Var};
use crate::rng::{stream, Stream};

/// Estimated potential outcomes and direct effects for every node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdeEstimate {
    pub tau_hat: Vec<f64>,
    pub y0_hat: Vec<f64>,
    pub y1_hat: Vec<f64>,
}

/// Node indices used for fitting and for model selection.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
}

/// Holds out a `val` fraction of treated and of control nodes separately.
pub fn stratified_split(x: &[u8], val: f64, seed: u64) -> Result<Split, EstimatorError> {
    if x.len() < 10 {
        return Err(EstimatorError::Degenerate { reason: format!("{} nodes, need at least 10", x.len()) });
    }
    let mut rng = stream(seed, Stream::Split);
    let mut train = Vec::new();
    let mut held = Vec::new();
    for arm in [0u8, 1] {
        let mut idx: Vec<u32> = (0..x.len() as u32).filter(|&i| x[i as usize] == arm).collect();
        if idx.is_empty() {
            let which = if arm == 1 { "treated" } else { "control" };
            return Err(EstimatorError::Degenerate { reason: format!("no {which} nodes") });
        }
        idx.shuffle(&mut rng);
        let k = (libm::round(val * idx.len() as f64) as usize).min(idx.len() - 1);
        held.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    if held.is_empty() {
        return Err(EstimatorError::Degenerate { reason: String::from("empty validation split") });
    }
    train.sort_unstable();
    held.sort_unstable();
    Ok(Split { train, val: held })
}

/// Mean squared factual error plus `lambda * exp(-gamma * s) * s`, where `s`
/// is the sample variance of the estimated effects.
pub fn smoothed_loss(y: &[f64], y_hat: &[f64], tau_hat: &[f64], lambda: f64, gamma: f64) -> f64 {
    let n = y.len() as f64;
    let mse = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    let m = tau_hat.len() as f64;
    let mean = tau_hat.iter().sum::<f64>() / m;
    let s = tau_hat.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (m - 1.0);
    mse + lambda * libm::exp(-gamma * s) * s
}

/// The training objective recorded on `t`; returns the loss and the forward pass.
#[allow(clippy::too_many_arguments)]
fn record_objective(
    t: &mut Tape,
    vars: &[Var],
    net: &Network,
    inputs: &GraphInputs,
    x: &Arc<[f64]>,
    y: &[f64],
    train: &Arc<[u32]>,
    smoothing: Option<(f64, f64)>,
    mode: Mode<'_>,
) -> (Var, super::model::Forward) {
    let fwd = net.forward(t, vars, inputs, x, mode);
    let pred = t.gather_rows(fwd.y_hat, train.clone());
    let target = t.constant(Matrix::column(&train.iter().map(|&i| y[i as usize]).collect::<Vec<_>>()));
    let diff = t.sub(pred, target);
    let sq = t.square(diff);
    let mut loss = t.mean(sq);
    if let Some((lambda, gamma)) = smoothing {
        if lambda > 0.0 && train.len() > 1 {
            let tau = t.gather_rows(fwd.tau, train.clone());
            let centered = t.center_cols(tau);
            let sq = t.square(centered);
            let total = t.sum(sq);
            let var = t.scale(total, 1.0 / (train.len() - 1) as f64);
            let decay = t.scale(var, -gamma);
            let decay = t.exp(decay);
            let pen = t.mul(decay, var);
            let pen = t.scale(pen, lambda);
            loss = t.add(loss, pen);
        }
    }
    (loss, fwd)
}

/// Training-mode loss and its gradient for every parameter tensor, with the
/// tape's kink signature for finite-difference checks.
pub fn loss_and_gradients(
    net: &Network,
    inputs: &GraphInputs,
    x: &[u8],
    y: &[f64],
    train: &[u32],
    smoothing: Option<(f64, f64)>,
) -> Result<(f64, Vec<Matrix>, u64), EstimatorError> {
    net.check_inputs(inputs)?;
    let xf: Arc<[f64]> = x.iter().map(|&v| f64::from(v)).collect();
    let train: Arc<[u32]> = train.into();
    let mut t = Tape::new();
    let vars = net.register(&mut t);
    let (loss, _) = record_objective(
        &mut t,
        &vars,
        net,
        inputs,
        &xf,
        y,
        &train,
        smoothing,
        Mode::Train { dropout: 0.0, rng: None },
    );
    let grads = t.backward(loss)?;
    let value = t.value(loss).get(0, 0);
    Ok((value, vars.iter().map(|&v| grads.get(v)).collect(), t.kink_signature()))
}

/// Smoothing weight and validation error of one trained candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub lambda: f64,
    pub val_loss: f64,
}

/// A trained, frozen estimator.
#[derive(Clone, Debug)]
pub struct EstimatorModel {
    pub network: Network,
    pub config: TrainConfig,
    /// Smoothing weight of the selected candidate.
    pub lambda: f64,
    pub val_loss: f64,
    /// Training record of the selected candidate.
    pub history: History,
    pub candidates: Vec<CandidateReport>,
    pub split: Split,
}

impl EstimatorModel {
    pub fn variant(&self) -> Variant {
        self.network.variant
    }

    /// Potential-outcome predictions with frozen batch-norm statistics.
    pub fn predict(&self, inputs: &GraphInputs, x: &[u8]) -> Result<IdeEstimate, EstimatorError> {
        predict(&self.network, inputs, x)
    }
}

pub fn predict(net: &Network, inputs: &GraphInputs, x: &[u8]) -> Result<IdeEstimate, EstimatorError> {
    net.check_inputs(inputs)?;
    if x.len() != inputs.num_nodes() {
        return Err(EstimatorError::ShapeMismatch {
            reason: format!("{} treatments for {} nodes", x.len(), inputs.num_nodes()),
        });
    }
    let xf: Arc<[f64]> = x.iter().map(|&v| f64::from(v)).collect();
    let mut t = Tape::new();
    let vars: Vec<Var> = net.params.iter().map(|p| t.constant(p.value.clone())).collect();
    let fwd = net.forward(&mut t, &vars, inputs, &xf, Mode::Eval);
    let y0_hat = t.value(fwd.y0).as_slice().to_vec();
    let y1_hat = t.value(fwd.y1).as_slice().to_vec();
    let tau_hat = t.value(fwd.tau).as_slice().to_vec();
    Ok(IdeEstimate { tau_hat, y0_hat, y1_hat })
}

/// Per-epoch record of one training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// Training objective at the start of every epoch.
    pub train: Vec<f64>,
    /// Unregularised validation error at the start of every epoch.
    pub val: Vec<f64>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// Trains a network with a fixed smoothing weight, starting from the config
/// seed's initialisation, and keeps the parameters of the epoch with the
/// lowest validation error.
pub fn fit(
    variant: Variant,
    inputs: &GraphInputs,
    x: &[u8],
    y: &[f64],
    split: &Split,
    lambda: f64,
    config: &TrainConfig,
) -> Result<(Network, History), EstimatorError> {
    let mut net = Network::new(variant, inputs.node_dim(), inputs.edge_dim(), config);
    let xf: Arc<[f64]> = x.iter().map(|&v| f64::from(v)).collect();
    let train: Arc<[u32]> = split.train.as_slice().into();
    let shapes: Vec<(usize, usize)> = net.params.iter().map(|p| p.value.shape()).collect();
    let mut adam = Adam::new(&shapes);
    let mut drop_rng = stream(config.seed, Stream::Dropout);
    let reg_start = config.reg_start();
    let mut history = History::default();
    let mut best: Option<(f64, Network)> = None;
    let mse_on = |pred: &Matrix, idx: &[u32]| {
        idx.iter()
            .map(|&i| {
                let d = pred.get(i as usize, 0) - y[i as usize];
                d * d
            })
            .sum::<f64>()
            / idx.len() as f64
    };
    for epoch in 0..config.maxiter {
        let smoothing = (config.reg && epoch >= reg_start).then_some((lambda, config.gamma));
        let mut t = Tape::new();
        let vars = net.register(&mut t);
        let mode = Mode::Train { dropout: config.dropout, rng: Some(&mut drop_rng) };
        let (loss, fwd) = record_objective(&mut t, &vars, &net, inputs, &xf, y, &train, smoothing, mode);
        let value = t.value(loss).get(0, 0);
        if !value.is_finite() {
            return Err(EstimatorError::NonFiniteLoss { epoch });
        }
        history.train.push(value);
        // Full-batch training covers every node, so this pass also scores
        // the validation nodes; dropout needs a clean pass.
        let (val, stats) = if config.dropout > 0.0 {
            let mut clean = Tape::new();
            let cv = net.register(&mut clean);
            let f = net.forward(&mut clean, &cv, inputs, &xf, Mode::Train { dropout: 0.0, rng: None });
            (mse_on(clean.value(f.y_hat), &split.val), f.stats)
        } else {
            (mse_on(t.value(fwd.y_hat), &split.val), fwd.stats.clone())
        };
        history.val.push(val);
        if best.as_ref().is_none_or(|(b, _)| val < *b) {
            let mut kept = net.clone();
            kept.freeze_stats(stats.as_ref().expect("training mode records statistics"));
            best = Some((val, kept));
            history.best_epoch = epoch;
        } else if epoch - history.best_epoch >= config.max_patience {
            break;
        }
        let grads = t.backward(loss)?;
        let grads: Vec<Matrix> = vars.iter().map(|&v| grads.get(v)).collect();
        drop(t);
        let decay = config.decay(epoch);
        let lrs: Vec<f64> = net
            .params
            .iter()
            .map(|p| match p.group {
                Group::Encoder => config.lr * decay,
                Group::Head => config.lrest * decay,
            })
            .collect();
        let mut values: Vec<Matrix> = net.params.iter().map(|p| p.value.clone()).collect();
        adam.step(&mut values, &grads, &lrs, config.weight_decay, config.clip);
        for (p, v) in net.params.iter_mut().zip(values) {
            p.value = v;
        }
    }
    let (_, net) = best.expect("at least one epoch");
    Ok((net, history))
}

/// Trains one model per smoothing candidate and keeps the one with the lowest
/// unregularised validation error.
pub fn train_variant(
    variant: Variant,
    inputs: &GraphInputs,
    x: &[u8],
    y: &[f64],
    config: &TrainConfig,
) -> Result<EstimatorModel, EstimatorError> {
    config.validate()?;
    let n = inputs.num_nodes();
    if x.len() != n || y.len() != n {
        return Err(EstimatorError::ShapeMismatch {
            reason: format!("{} treatments, {} outcomes, {n} nodes", x.len(), y.len()),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(EstimatorError::Degenerate { reason: String::from("non-finite outcome") });
    }
    let split = stratified_split(x, config.val, config.seed)?;
    let mut best: Option<EstimatorModel> = None;
    let mut reports = Vec::new();
    for lambda in config.lambda_candidates() {
        let (net, history) = fit(variant, inputs, x, y, &split, lambda, config)?;
        let val_loss = history.val[history.best_epoch];
        reports.push(CandidateReport { lambda, val_loss });
        if best.as_ref().is_none_or(|b| val_loss < b.val_loss) {
            best = Some(EstimatorModel {
                network: net,
                config: config.clone(),
                lambda,
                val_loss,
                history,
                candidates: Vec::new(),
                split: split.clone(),
            });
        }
    }
    let mut model = best.expect("at least one candidate");
    model.candidates = reports;
    Ok(model)
}

/// The full estimator on a simulated dataset.
pub fn train(data: &GeneratedDataset, config: &TrainConfig) -> Result<EstimatorModel, EstimatorError> {
    let inputs = GraphInputs::from_network(&data.network)?;
    train_variant(Variant::Full, &inputs, &data.x, &data.y, config)
}

/// Ablation that replaces the learned exposure with the fraction of treated neighbours.
pub fn train_homogeneous(data: &GeneratedDataset, config: &TrainConfig) -> Result<EstimatorModel, EstimatorError> {
    let inputs = GraphInputs::from_network(&data.network)?;
    train_variant(Variant::Homogeneous, &inputs, &data.x, &data.y, config)
}

/// Ablation that ignores the network and sees only each node's own attributes.
pub fn train_no_interference(data: &GeneratedDataset, config: &TrainConfig) -> Result<EstimatorModel, EstimatorError> {
    let inputs = GraphInputs::from_network(&data.network)?;
    train_variant(Variant::NoInterference, &inputs, &data.x, &data.y, config)
}
