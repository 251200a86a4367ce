//! Treatments, peer exposures, potential outcomes and ground-truth direct
//! effects for synthetic and semi-synthetic networks.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::netgen::{sample_attributes, AttributedNetwork, Column, ColumnKind, NetworkSpec};
use crate::numeric::{Matrix, SparseAdjacency};
use crate::rng::{stream, Stream};

/// Which neighbour context sets the weight of a peer's treatment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    TieStrength,
    Similarity,
    MutualFriends,
    PeerDegree,
    Combined,
}

impl Mechanism {
    pub const ALL: [Mechanism; 5] = [
        Mechanism::TieStrength,
        Mechanism::Similarity,
        Mechanism::MutualFriends,
        Mechanism::PeerDegree,
        Mechanism::Combined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::TieStrength => "tie_strength",
            Mechanism::Similarity => "similarity",
            Mechanism::MutualFriends => "mutual_friends",
            Mechanism::PeerDegree => "peer_degree",
            Mechanism::Combined => "combined",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Sigmoid => 1.0 / (1.0 + libm::exp(-v)),
        }
    }
}

/// Coefficients of the treatment and outcome models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub tau_0: f64,
    pub tau_c1: f64,
    pub tau_d: f64,
    pub tau_a: f64,
    pub tau_n: f64,
    pub tau_p: f64,
    #[serde(rename = "tau_Zr")]
    pub tau_zr: f64,
    #[serde(rename = "tau_Zmi")]
    pub tau_zmi: f64,
    #[serde(rename = "tau_Emr")]
    pub tau_emr: f64,
    pub tau_c: f64,
    pub mechanism: Mechanism,
    pub exposure_modifies_effect: bool,
    pub percentile_p: f64,
    pub rbf_gamma: f64,
    pub noise_sd: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            tau_0: 0.0,
            tau_c1: 1.0,
            tau_d: -1.0,
            tau_a: 0.0,
            tau_n: 0.0,
            tau_p: 0.0,
            tau_zr: 1.0,
            tau_zmi: 1.0,
            tau_emr: 1.0,
            tau_c: 0.5,
            mechanism: Mechanism::TieStrength,
            exposure_modifies_effect: false,
            percentile_p: 50.0,
            rbf_gamma: 2.0,
            noise_sd: 1.0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |reason: String| Err(DataError::InvalidParameter { reason });
        let coeffs = [
            self.tau_0,
            self.tau_c1,
            self.tau_d,
            self.tau_a,
            self.tau_n,
            self.tau_p,
            self.tau_zr,
            self.tau_zmi,
            self.tau_emr,
            self.rbf_gamma,
        ];
        if coeffs.iter().any(|c| !c.is_finite()) {
            return bad(String::from("coefficients must be finite"));
        }
        if !(0.0..=1.0).contains(&self.tau_c) {
            return bad(format!("tau_c = {} outside [0, 1]", self.tau_c));
        }
        if !(0.0..=100.0).contains(&self.percentile_p) {
            return bad(format!("percentile_p = {} outside [0, 100]", self.percentile_p));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise_sd = {} must be a finite non-negative number", self.noise_sd));
        }
        Ok(())
    }
}

/// Per-node and per-edge quantities the outcome equation reads.
#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeInputs {
    /// Enters the outcome additively through `tau_c1`.
    pub confounder: Vec<f64>,
    /// Scalar attribute modifier multiplied by the own treatment through `tau_a`.
    pub modifier: Vec<f64>,
    /// Rows compared by the similarity kernel.
    pub profile: Matrix,
    /// Tie strength per canonical edge, if the network carries one.
    pub tie_strength: Option<Vec<f64>>,
}

impl OutcomeInputs {
    /// Reads `C`, `Z` and `Z_r` from a synthetic network. `Z` enters the
    /// modifier as its category index and the kernel one-hot encoded.
    pub fn synthetic(network: &AttributedNetwork) -> Result<Self, DataError> {
        let missing = |name: &str| DataError::InvalidParameter { reason: format!("network has no node column {name}") };
        let confounder = network.node_attrs.column("C").ok_or_else(|| missing("C"))?;
        let zi = network.node_attrs.column_index("Z").ok_or_else(|| missing("Z"))?;
        let modifier = network.node_attrs.column("Z").ok_or_else(|| missing("Z"))?;
        let k = match network.node_attrs.columns[zi].kind {
            ColumnKind::Categorical(k) => k as usize,
            ColumnKind::Real => 1,
        };
        let mut profile = Matrix::zeros(network.num_nodes(), k);
        for (r, &z) in modifier.iter().enumerate() {
            if k == 1 {
                profile.set(r, 0, z);
            } else if (z as usize) < k {
                profile.set(r, z as usize, 1.0);
            }
        }
        Ok(Self { confounder, modifier, profile, tie_strength: network.edge_attrs.column("Z_r") })
    }

    fn check(&self, n: usize, m: usize) -> Result<(), DataError> {
        for len in [self.confounder.len(), self.modifier.len(), self.profile.rows()] {
            if len != n {
                return Err(DataError::DimensionMismatch { expected: n, found: len });
            }
        }
        if let Some(t) = &self.tie_strength {
            if t.len() != m {
                return Err(DataError::DimensionMismatch { expected: m, found: t.len() });
            }
        }
        Ok(())
    }
}

/// Unnormalised weight of every adjacency entry `(i, j)` under the configured
/// mechanism, in CSR order.
pub fn mechanism_weights(
    adj: &SparseAdjacency,
    inputs: &OutcomeInputs,
    config: &GenConfig,
) -> Result<Vec<f64>, DataError> {
    inputs.check(adj.num_nodes(), adj.num_edges())?;
    let use_tie = matches!(config.mechanism, Mechanism::TieStrength | Mechanism::Combined);
    let use_sim = matches!(config.mechanism, Mechanism::Similarity | Mechanism::Combined);
    let use_mutual = matches!(config.mechanism, Mechanism::MutualFriends | Mechanism::Combined);
    let tie = if use_tie { Some(inputs.tie_strength.as_ref().ok_or(DataError::MissingEdgeAttribute)?) } else { None };
    let triangles = if use_mutual { adj.edge_triangles() } else { Vec::new() };
    let sources = adj.entry_sources();
    let mut weights = vec![0.0; adj.num_entries()];
    for (p, w) in weights.iter_mut().enumerate() {
        let i = sources[p] as usize;
        let j = adj.targets()[p] as usize;
        let e = adj.entry_edges()[p] as usize;
        if config.mechanism == Mechanism::PeerDegree {
            *w = adj.degree(j) as f64;
            continue;
        }
        if let Some(tie) = tie {
            *w += config.tau_zr * tie[e] * tie[e];
        }
        if use_sim {
            let d2: f64 = inputs.profile.row(i).iter().zip(inputs.profile.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            *w += config.tau_zmi * libm::exp(-config.rbf_gamma * d2);
        }
        if use_mutual {
            *w += config.tau_emr * libm::sqrt(triangles[e]);
        }
    }
    Ok(weights)
}

/// Weighted fraction of treated neighbours; zero for isolated nodes and for
/// nodes whose neighbour weights sum to zero.
pub fn weighted_exposure(adj: &SparseAdjacency, x: &[u8], weights: &[f64]) -> Vec<f64> {
    let offsets = adj.offsets();
    let targets = adj.targets();
    (0..adj.num_nodes())
        .map(|i| {
            let (mut num, mut den) = (0.0, 0.0);
            for p in offsets[i]..offsets[i + 1] {
                den += weights[p];
                num += weights[p] * f64::from(x[targets[p] as usize]);
            }
            if den == 0.0 {
                0.0
            } else {
                num / den
            }
        })
        .collect()
}

/// Ground-truth peer exposure of every node on a synthetic network.
pub fn true_exposure(network: &AttributedNetwork, x: &[u8], config: &GenConfig) -> Result<Vec<f64>, DataError> {
    check_len(network.num_nodes(), x.len())?;
    let inputs = OutcomeInputs::synthetic(network)?;
    let w = mechanism_weights(&network.adjacency, &inputs, config)?;
    Ok(weighted_exposure(&network.adjacency, x, &w))
}

fn check_len(expected: usize, found: usize) -> Result<(), DataError> {
    if expected == found {
        Ok(())
    } else {
        Err(DataError::DimensionMismatch { expected, found })
    }
}

/// Treatment probability `a(tau_c * w . mean_j c_j + (1 - tau_c) * w . c_i)`
/// clamped to `[0, 1]`. The peer term is zero for isolated nodes.
pub fn treatment_propensity(
    adj: &SparseAdjacency,
    covariates: &Matrix,
    weights: &[f64],
    tau_c: f64,
    activation: Activation,
) -> Result<Vec<f64>, DataError> {
    check_len(adj.num_nodes(), covariates.rows())?;
    check_len(covariates.cols(), weights.len())?;
    let score: Vec<f64> =
        (0..covariates.rows()).map(|i| covariates.row(i).iter().zip(weights).map(|(a, b)| a * b).sum()).collect();
    Ok((0..adj.num_nodes())
        .map(|i| {
            let nb = adj.neighbors(i);
            let peer =
                if nb.is_empty() { 0.0 } else { nb.iter().map(|&j| score[j as usize]).sum::<f64>() / nb.len() as f64 };
            activation.apply(tau_c * peer + (1.0 - tau_c) * score[i]).clamp(0.0, 1.0)
        })
        .collect())
}

/// Bernoulli treatments drawn from [`treatment_propensity`].
pub fn assign_treatments(
    adj: &SparseAdjacency,
    covariates: &Matrix,
    weights: &[f64],
    tau_c: f64,
    activation: Activation,
    seed: u64,
) -> Result<Vec<u8>, DataError> {
    let probs = treatment_propensity(adj, covariates, weights, tau_c, activation)?;
    let mut rng = stream(seed, Stream::Treatment);
    Ok(probs.iter().map(|&p| u8::from(rng.random::<f64>() < p)).collect())
}

/// Whether each node's degree exceeds the `p`-th percentile of its
/// neighbours' degrees (linear interpolation). False for isolated nodes.
pub fn degree_indicator(adj: &SparseAdjacency, p: f64) -> Vec<bool> {
    (0..adj.num_nodes())
        .map(|i| {
            let mut d: Vec<f64> = adj.neighbors(i).iter().map(|&j| adj.degree(j as usize) as f64).collect();
            if d.is_empty() {
                return false;
            }
            d.sort_by(f64::total_cmp);
            (adj.degree(i) as f64) > percentile(&d, p)
        })
        .collect()
}

/// Percentile of sorted data with linear interpolation between ranks.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// A simulated dataset with both potential outcomes of every node.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedDataset {
    pub network: AttributedNetwork,
    pub x: Vec<u8>,
    pub y: Vec<f64>,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub tau_true: Vec<f64>,
    pub exposure_true: Vec<f64>,
    pub config: GenConfig,
}

impl GeneratedDataset {
    pub fn num_nodes(&self) -> usize {
        self.x.len()
    }

    /// Mean of the ground-truth direct effects.
    pub fn true_ate(&self) -> f64 {
        self.tau_true.iter().sum::<f64>() / self.tau_true.len().max(1) as f64
    }
}

/// Outcomes with the given inputs: each node's outcome is evaluated at
/// `X_i = 0` and `X_i = 1` with every other treatment held at its assigned
/// value, sharing one noise draw.
pub fn generate_outcomes_with(
    network: AttributedNetwork,
    inputs: &OutcomeInputs,
    x: Vec<u8>,
    config: &GenConfig,
    seed: u64,
) -> Result<GeneratedDataset, DataError> {
    config.validate()?;
    let n = network.num_nodes();
    check_len(n, x.len())?;
    let weights = mechanism_weights(&network.adjacency, inputs, config)?;
    let exposure = weighted_exposure(&network.adjacency, &x, &weights);
    let hub = degree_indicator(&network.adjacency, config.percentile_p);
    let mut rng = stream(seed, Stream::Noise);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let (mut y, mut y0, mut y1, mut tau) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        let eps = config.noise_sd * noise.sample(&mut rng);
        let base = config.tau_0 + config.tau_c1 * inputs.confounder[i] + eps + config.tau_p * exposure[i];
        let mut effect = config.tau_d + config.tau_a * inputs.modifier[i] + if hub[i] { config.tau_n } else { 0.0 };
        if config.exposure_modifies_effect {
            effect += config.tau_p * exposure[i];
        }
        y0[i] = base;
        y1[i] = base + effect;
        tau[i] = y1[i] - y0[i];
        y[i] = if x[i] == 1 { y1[i] } else { y0[i] };
    }
    Ok(GeneratedDataset { network, x, y, y0, y1, tau_true: tau, exposure_true: exposure, config: config.clone() })
}

/// Outcomes on a synthetic network carrying `C`, `Z` and `Z_r`.
pub fn generate_outcomes(
    network: AttributedNetwork,
    x: Vec<u8>,
    config: &GenConfig,
    seed: u64,
) -> Result<GeneratedDataset, DataError> {
    let inputs = OutcomeInputs::synthetic(&network)?;
    generate_outcomes_with(network, &inputs, x, config, seed)
}

/// Full synthetic pipeline: topology, attributes, treatments and outcomes,
/// each drawn from its own stream of `seed`.
pub fn synthetic_dataset(spec: &NetworkSpec, config: &GenConfig, seed: u64) -> Result<GeneratedDataset, DataError> {
    config.validate()?;
    let network = sample_attributes(spec.generate(seed)?, seed);
    let c = Matrix::column(&network.node_attrs.column("C").expect("sampled"));
    let x = assign_treatments(&network.adjacency, &c, &[1.0], config.tau_c, Activation::Identity, seed)?;
    generate_outcomes(network, x, config, seed)
}

/// Convenience for the common preferential-attachment setting.
pub fn synthetic_ba(n: usize, m: usize, config: &GenConfig, seed: u64) -> Result<GeneratedDataset, DataError> {
    synthetic_dataset(&NetworkSpec::BarabasiAlbert { n, m }, config, seed)
}

/// Masks and weights drawn for a semi-synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemiSyntheticDesign {
    pub mask_x: Vec<bool>,
    pub mask_y: Vec<bool>,
    pub weights_x: Vec<f64>,
    pub weights_y: Vec<f64>,
}

impl SemiSyntheticDesign {
    pub fn sample(dim: usize, seed: u64) -> Self {
        let mut rng = stream(seed, Stream::SemiSynthetic);
        let unif = Uniform::new(-3.0, 3.0).expect("valid range");
        let draw_mask = |rng: &mut rand_chacha::ChaCha8Rng| (0..dim).map(|_| rng.random_bool(0.6)).collect::<Vec<_>>();
        let mask_x = draw_mask(&mut rng);
        let mask_y = draw_mask(&mut rng);
        let draw_w = |mask: &[bool], rng: &mut rand_chacha::ChaCha8Rng| {
            mask.iter()
                .map(|&m| {
                    let u = unif.sample(rng);
                    if m {
                        u
                    } else {
                        0.0
                    }
                })
                .collect::<Vec<_>>()
        };
        let weights_x = draw_w(&mask_x, &mut rng);
        let weights_y = draw_w(&mask_y, &mut rng);
        Self { mask_x, mask_y, weights_x, weights_y }
    }

    /// Indices of features that drive the outcome but not the treatment.
    pub fn modifier_features(&self) -> Vec<usize> {
        (0..self.mask_x.len()).filter(|&k| !self.mask_x[k] && self.mask_y[k]).collect()
    }

    /// Outcome inputs: confounding through `W_y . F_i`, modifier as the
    /// `W_y`-weighted sum of the modifier features, which also form the
    /// similarity profile.
    pub fn outcome_inputs(&self, features: &Matrix) -> OutcomeInputs {
        let mods = self.modifier_features();
        let n = features.rows();
        let mut profile = Matrix::zeros(n, mods.len());
        let mut confounder = vec![0.0; n];
        let mut modifier = vec![0.0; n];
        for i in 0..n {
            let row = features.row(i);
            confounder[i] = row.iter().zip(&self.weights_y).map(|(a, b)| a * b).sum();
            for (c, &k) in mods.iter().enumerate() {
                profile.set(i, c, row[k]);
                modifier[i] += self.weights_y[k] * row[k];
            }
        }
        OutcomeInputs { confounder, modifier, profile, tie_strength: None }
    }
}

/// Semi-synthetic dataset over real features and a real topology. Treatments
/// use sigmoid activation with sampled weights; `config.mechanism` should not
/// need tie strength, since the features carry none.
pub fn semi_synthetic(
    features: &Matrix,
    adjacency: SparseAdjacency,
    config: &GenConfig,
    seed: u64,
) -> Result<(GeneratedDataset, SemiSyntheticDesign), DataError> {
    config.validate()?;
    check_len(adjacency.num_nodes(), features.rows())?;
    if features.cols() == 0 {
        return Err(DataError::DimensionMismatch { expected: 1, found: 0 });
    }
    let design = SemiSyntheticDesign::sample(features.cols(), seed);
    let x = assign_treatments(&adjacency, features, &design.weights_x, config.tau_c, Activation::Sigmoid, seed)?;
    let inputs = design.outcome_inputs(features);
    let mut network = AttributedNetwork::from_topology(adjacency, seed);
    for k in 0..features.cols() {
        let col: Vec<f64> = (0..features.rows()).map(|r| features.get(r, k)).collect();
        network.node_attrs.push_column(Column { name: format!("f{k}"), kind: ColumnKind::Real }, &col);
    }
    let data = generate_outcomes_with(network, &inputs, x, config, seed)?;
    Ok((data, design))
}
