use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{TrainConfig, Variant};
use crate::error::EstimatorError;
use crate::netgen::AttributedNetwork;
use crate::numeric::{BatchStats, Matrix, SparseAdjacency, Tape, Var};
use crate::rng::{stream, Stream};

/// Network inputs shared by every forward pass, precomputed once.
#[derive(Clone, Debug)]
pub struct GraphInputs {
    pub adjacency: Arc<SparseAdjacency>,
    /// Standardised node attributes, `n x d`.
    pub node_features: Matrix,
    /// Standardised edge attributes plus a constant existence column, `m x d'`.
    pub edge_features: Matrix,
    /// Per adjacency entry `(i, j)`: node features of `j` next to the edge's features.
    peer_inputs: Matrix,
    offsets: Arc<[usize]>,
    inv_sqrt_degree: Arc<[f64]>,
    /// Mutual-friend count per edge, `m x 1`.
    triangles: Matrix,
    degree: Vec<usize>,
}

/// Z-scores every column; constant columns become zero.
pub fn standardize(m: &Matrix) -> Matrix {
    let (n, c) = m.shape();
    let mut out = m.clone();
    for k in 0..c {
        let mean = (0..n).map(|r| m.get(r, k)).sum::<f64>() / n.max(1) as f64;
        let var = (0..n)
            .map(|r| {
                let d = m.get(r, k) - mean;
                d * d
            })
            .sum::<f64>()
            / n.max(1) as f64;
        let sd = libm::sqrt(var);
        for r in 0..n {
            out.set(r, k, if sd > 1e-12 { (m.get(r, k) - mean) / sd } else { 0.0 });
        }
    }
    out
}

impl GraphInputs {
    pub fn new(
        adjacency: SparseAdjacency,
        node_features: &Matrix,
        edge_features: &Matrix,
    ) -> Result<Self, EstimatorError> {
        let n = adjacency.num_nodes();
        let m = adjacency.num_edges();
        if node_features.rows() != n {
            return Err(EstimatorError::ShapeMismatch {
                reason: format!("{} node rows for {n} nodes", node_features.rows()),
            });
        }
        if edge_features.rows() != m {
            return Err(EstimatorError::ShapeMismatch {
                reason: format!("{} edge rows for {m} edges", edge_features.rows()),
            });
        }
        let node_features = standardize(node_features);
        let edge_features = Matrix::hcat(&[&standardize(edge_features), &Matrix::filled(m, 1, 1.0)]);
        let targets: Vec<u32> = adjacency.targets().to_vec();
        let peer_inputs =
            Matrix::hcat(&[&node_features.select_rows(&targets), &edge_features.select_rows(adjacency.entry_edges())]);
        Ok(Self {
            offsets: adjacency.offsets().into(),
            inv_sqrt_degree: adjacency.inv_sqrt_degree().into(),
            triangles: Matrix::column(&adjacency.edge_triangles()),
            degree: adjacency.degrees(),
            adjacency: Arc::new(adjacency),
            node_features,
            edge_features,
            peer_inputs,
        })
    }

    /// Node attributes one-hot encoded, edge attributes as stored.
    pub fn from_network(network: &AttributedNetwork) -> Result<Self, EstimatorError> {
        Self::new(network.adjacency.clone(), &network.node_attrs.encoded(), &network.edge_attrs.encoded())
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.num_nodes()
    }

    pub fn node_dim(&self) -> usize {
        self.node_features.cols()
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_features.cols()
    }

    /// Fraction of treated neighbours, zero for isolated nodes.
    pub fn treated_fraction(&self, x: &[f64]) -> Vec<f64> {
        (0..self.num_nodes())
            .map(|i| {
                let nb = self.adjacency.neighbors(i);
                if nb.is_empty() {
                    0.0
                } else {
                    nb.iter().map(|&j| x[j as usize]).sum::<f64>() / self.degree[i] as f64
                }
            })
            .collect()
    }
}

/// Which optimiser group a tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Encoder,
    Head,
}

/// A named parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub group: Group,
    pub value: Matrix,
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Clone, Debug, Default)]
struct Mlp {
    layers: Vec<Linear>,
}

/// Index of every tensor the architecture uses.
#[derive(Clone, Debug)]
struct Layout {
    ego: Mlp,
    peer: Option<Mlp>,
    edge: Option<Mlp>,
    deep: Vec<Mlp>,
    weight: Option<Mlp>,
    shared: Linear,
    bn_gamma: usize,
    bn_beta: usize,
    head0: Mlp,
    head1: Mlp,
}

struct Builder<'a> {
    params: Vec<NamedTensor>,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn tensor(&mut self, name: String, group: Group, value: Matrix) -> usize {
        self.params.push(NamedTensor { name, group, value });
        self.params.len() - 1
    }

    fn linear(&mut self, name: &str, group: Group, fan_in: usize, fan_out: usize) -> Linear {
        let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
        let data = (0..fan_in * fan_out).map(|_| self.rng.random_range(-bound..=bound)).collect();
        let w = self.tensor(format!("{name}.weight"), group, Matrix::from_vec(fan_in, fan_out, data));
        let b = self.tensor(format!("{name}.bias"), group, Matrix::zeros(1, fan_out));
        Linear { w, b }
    }

    fn mlp(&mut self, name: &str, group: Group, widths: &[usize]) -> Mlp {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| self.linear(&format!("{name}.{k}"), group, w[0], w[1]))
            .collect();
        Mlp { layers }
    }
}

/// Learned parameters plus the frozen batch-norm statistics.
#[derive(Clone, Debug)]
pub struct Network {
    pub variant: Variant,
    pub params: Vec<NamedTensor>,
    /// Column means used by batch norm at evaluation.
    pub bn_mean: Vec<f64>,
    /// Column variances used by batch norm at evaluation.
    pub bn_var: Vec<f64>,
    layout: Layout,
    bn_eps: f64,
    node_dim: usize,
    edge_dim: usize,
}

/// Outputs of one forward pass.
pub struct Forward {
    pub y0: Var,
    pub y1: Var,
    pub tau: Var,
    pub y_hat: Var,
    pub stats: Option<BatchStats>,
}

/// Training or frozen batch normalisation, with an optional dropout stream.
pub enum Mode<'a> {
    Train { dropout: f64, rng: Option<&'a mut ChaCha8Rng> },
    Eval,
}

fn widths(input: usize, hidden: usize, layers: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend(core::iter::repeat_n(hidden, layers));
    w
}

impl Network {
    /// Freshly initialised parameters for inputs of the given widths.
    pub fn new(variant: Variant, node_dim: usize, edge_dim: usize, config: &TrainConfig) -> Self {
        let mut rng = stream(config.seed, Stream::Init);
        let mut b = Builder { params: Vec::new(), rng: &mut rng };
        let (f, e, l) = (config.fdim, config.edim, config.inlayers);
        let ego = b.mlp("ego", Group::Encoder, &widths(node_dim, f, l));
        let interference = variant != Variant::NoInterference;
        let peer = interference.then(|| b.mlp("peer", Group::Encoder, &widths(node_dim + edge_dim, f, l)));
        let edge = interference.then(|| b.mlp("edge", Group::Encoder, &widths(edge_dim, e, l)));
        let feature_width = if interference { 2 * f + 2 * e } else { f };
        let deep = (1..config.hops)
            .map(|h| b.mlp(&format!("hop{h}"), Group::Encoder, &[feature_width, feature_width]))
            .collect();
        let weight = (variant == Variant::Full).then(|| b.mlp("exposure", Group::Encoder, &widths(edge_dim, e, l)));
        let exposure_width = match variant {
            Variant::Full => e + 1 + 2 * feature_width,
            Variant::Homogeneous => 1,
            Variant::NoInterference => 0,
        };
        let shared = b.linear("shared", Group::Head, feature_width + exposure_width, f);
        let bn_gamma = b.tensor(String::from("shared.bn.gamma"), Group::Head, Matrix::filled(1, f, 1.0));
        let bn_beta = b.tensor(String::from("shared.bn.beta"), Group::Head, Matrix::zeros(1, f));
        let head0 = b.mlp("head0", Group::Head, &[f, f, 1]);
        let head1 = b.mlp("head1", Group::Head, &[f, f, 1]);
        let params = b.params;
        Self {
            variant,
            params,
            bn_mean: vec![0.0; f],
            bn_var: vec![1.0; f],
            layout: Layout { ego, peer, edge, deep, weight, shared, bn_gamma, bn_beta, head0, head1 },
            bn_eps: config.bn_eps,
            node_dim,
            edge_dim,
        }
    }

    /// Rebuilds a network from stored tensors, checking names and shapes.
    pub fn from_tensors(
        variant: Variant,
        node_dim: usize,
        edge_dim: usize,
        config: &TrainConfig,
        params: Vec<NamedTensor>,
        bn_mean: Vec<f64>,
        bn_var: Vec<f64>,
    ) -> Result<Self, EstimatorError> {
        let mut net = Self::new(variant, node_dim, edge_dim, config);
        if params.len() != net.params.len() {
            return Err(EstimatorError::ShapeMismatch {
                reason: format!("expected {} tensors, found {}", net.params.len(), params.len()),
            });
        }
        for (want, got) in net.params.iter().zip(&params) {
            if want.name != got.name || want.value.shape() != got.value.shape() {
                return Err(EstimatorError::ShapeMismatch {
                    reason: format!(
                        "tensor {} {:?} does not match {} {:?}",
                        got.name,
                        got.value.shape(),
                        want.name,
                        want.value.shape()
                    ),
                });
            }
        }
        if bn_mean.len() != net.bn_mean.len() || bn_var.len() != net.bn_var.len() {
            return Err(EstimatorError::ShapeMismatch { reason: String::from("batch-norm statistics width") });
        }
        net.params = params;
        net.bn_mean = bn_mean;
        net.bn_var = bn_var;
        Ok(net)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.as_slice().len()).sum()
    }

    pub fn check_inputs(&self, inputs: &GraphInputs) -> Result<(), EstimatorError> {
        if inputs.node_dim() != self.node_dim || inputs.edge_dim() != self.edge_dim {
            return Err(EstimatorError::ShapeMismatch {
                reason: format!(
                    "model expects {}/{} node/edge columns, data has {}/{}",
                    self.node_dim,
                    self.edge_dim,
                    inputs.node_dim(),
                    inputs.edge_dim()
                ),
            });
        }
        Ok(())
    }

    fn apply_mlp(t: &mut Tape, vars: &[Var], mlp: &Mlp, h: Var, mode: &mut Mode<'_>) -> Var {
        Self::apply_mlp_with(t, vars, mlp, h, mode, false)
    }

    /// ReLU layers; with `positive_out` the last layer uses a sigmoid so
    /// that every output stays strictly positive.
    fn apply_mlp_with(
        t: &mut Tape,
        vars: &[Var],
        mlp: &Mlp,
        mut h: Var,
        mode: &mut Mode<'_>,
        positive_out: bool,
    ) -> Var {
        let last = mlp.layers.len().saturating_sub(1);
        for (k, layer) in mlp.layers.iter().enumerate() {
            h = t.linear(h, vars[layer.w], vars[layer.b]);
            if k < last {
                h = t.relu(h);
                h = dropout(t, h, mode);
            } else if positive_out {
                h = t.sigmoid(h);
            } else {
                h = t.relu(h);
            }
        }
        h
    }

    fn apply_head(t: &mut Tape, vars: &[Var], mlp: &Mlp, mut h: Var) -> Var {
        let last = mlp.layers.len() - 1;
        for (k, layer) in mlp.layers.iter().enumerate() {
            h = t.linear(h, vars[layer.w], vars[layer.b]);
            if k < last {
                h = t.relu(h);
            }
        }
        h
    }

    /// Feature embedding: own, peer and edge blocks, deepened by extra hops.
    pub fn feature_embedding(&self, t: &mut Tape, vars: &[Var], inputs: &GraphInputs, mode: &mut Mode<'_>) -> Var {
        let zn = t.constant(inputs.node_features.clone());
        let h_own = Self::apply_mlp(t, vars, &self.layout.ego, zn, mode);
        let (Some(peer), Some(edge)) = (&self.layout.peer, &self.layout.edge) else {
            return h_own;
        };
        let pin = t.constant(inputs.peer_inputs.clone());
        let per_entry = Self::apply_mlp(t, vars, peer, pin, mode);
        let summed = t.segment_sum(per_entry, inputs.offsets.clone());
        let h_peer = t.scale_rows(summed, inputs.inv_sqrt_degree.clone());
        let ze = t.constant(inputs.edge_features.clone());
        let per_edge = Self::apply_mlp(t, vars, edge, ze, mode);
        let h_edge = t.edge_sum(per_edge, inputs.adjacency.clone(), None);
        let spread = t.neighbor_sum(h_edge, inputs.adjacency.clone());
        let h_edge2 = t.scale_rows(spread, inputs.inv_sqrt_degree.clone());
        let mut h = t.concat_cols(&[h_own, h_peer, h_edge, h_edge2]);
        for mlp in &self.layout.deep {
            let z = Self::apply_mlp(t, vars, mlp, h, mode);
            let s = t.neighbor_sum(z, inputs.adjacency.clone());
            h = t.scale_rows(s, inputs.inv_sqrt_degree.clone());
        }
        h
    }

    /// Weighted fractions of treated neighbours, one per candidate weight
    /// channel: learned edge weights, mutual-friend counts, peer features and
    /// per-dimension similarity to peers.
    pub fn exposure_embedding(
        &self,
        t: &mut Tape,
        vars: &[Var],
        inputs: &GraphInputs,
        h_f: Var,
        x: &Arc<[f64]>,
        mode: &mut Mode<'_>,
    ) -> Option<Var> {
        match self.variant {
            Variant::NoInterference => None,
            Variant::Homogeneous => Some(t.constant(Matrix::column(&inputs.treated_fraction(x)))),
            Variant::Full => {
                let adj = &inputs.adjacency;
                let ze = t.constant(inputs.edge_features.clone());
                let w =
                    Self::apply_mlp_with(t, vars, self.layout.weight.as_ref().expect("full variant"), ze, mode, true);
                let tri = t.constant(inputs.triangles.clone());
                let mut channels = Vec::new();
                for w in [w, tri] {
                    let num = t.edge_sum(w, adj.clone(), Some(x.clone()));
                    let den = t.edge_sum(w, adj.clone(), None);
                    channels.push(t.safe_div(num, den));
                }
                let treated = t.scale_rows(h_f, x.clone());
                let num = t.neighbor_sum(treated, adj.clone());
                let den = t.neighbor_sum(h_f, adj.clone());
                channels.push(t.safe_div(num, den));
                channels.push(t.similarity_ratio(h_f, adj.clone(), x.clone()));
                Some(t.concat_cols(&channels))
            }
        }
    }

    /// Registers every parameter on the tape.
    pub fn register(&self, t: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| t.param(p.value.clone())).collect()
    }

    /// Potential outcomes, their difference and the factual prediction.
    pub fn forward(
        &self,
        t: &mut Tape,
        vars: &[Var],
        inputs: &GraphInputs,
        x: &Arc<[f64]>,
        mut mode: Mode<'_>,
    ) -> Forward {
        let h_f = self.feature_embedding(t, vars, inputs, &mut mode);
        let h = match self.exposure_embedding(t, vars, inputs, h_f, x, &mut mode) {
            Some(h_e) => t.concat_cols(&[h_f, h_e]),
            None => h_f,
        };
        let l = &self.layout;
        let z = t.linear(h, vars[l.shared.w], vars[l.shared.b]);
        let (z, stats) = match mode {
            Mode::Train { .. } => {
                let (z, s) = t.batch_norm(z, vars[l.bn_gamma], vars[l.bn_beta], self.bn_eps);
                (z, Some(s))
            }
            Mode::Eval => (
                t.batch_norm_eval(z, vars[l.bn_gamma], vars[l.bn_beta], &self.bn_mean, &self.bn_var, self.bn_eps),
                None,
            ),
        };
        let z = t.tanh(z);
        let y0 = Self::apply_head(t, vars, &l.head0, z);
        let y1 = Self::apply_head(t, vars, &l.head1, z);
        let tau = t.sub(y1, y0);
        let control: Arc<[f64]> = x.iter().map(|&v| 1.0 - v).collect();
        let treated = t.scale_rows(y1, x.clone());
        let untreated = t.scale_rows(y0, control);
        let y_hat = t.add(treated, untreated);
        Forward { y0, y1, tau, y_hat, stats }
    }

    /// Fixes the evaluation statistics to a full-graph training batch, so
    /// evaluation reproduces that forward pass.
    pub fn freeze_stats(&mut self, stats: &BatchStats) {
        self.bn_mean.clone_from(&stats.mean);
        self.bn_var.clone_from(&stats.biased_var);
    }
}

fn dropout(t: &mut Tape, h: Var, mode: &mut Mode<'_>) -> Var {
    let Mode::Train { dropout: p, rng: Some(rng) } = mode else {
        return h;
    };
    if *p <= 0.0 {
        return h;
    }
    let (r, c) = t.value(h).shape();
    let keep = 1.0 / (1.0 - *p);
    let mask = (0..r * c).map(|_| if rng.random::<f64>() < *p { 0.0 } else { keep }).collect();
    let m = t.constant(Matrix::from_vec(r, c, mask));
    t.mul(h, m)
}
