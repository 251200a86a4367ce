//! Multi-seed experiment grids and their result tables.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::datagen::{synthetic_dataset, GenConfig, Mechanism};
use crate::error::{DataError, EstimatorError};
use crate::estimator::{train_variant, GraphInputs, TrainConfig, Variant};
use crate::metrics::{ate_error, mean_std, pehe};
use crate::netgen::NetworkSpec;
use crate::rng::derive_seed;

/// Every combination of network, mechanism and peer coefficient, each
/// replicated over `seeds` derived seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentGrid {
    pub networks: Vec<NetworkSpec>,
    pub mechanisms: Vec<Mechanism>,
    pub tau_p: Vec<f64>,
    pub seeds: usize,
    pub variants: Vec<Variant>,
    /// Outcome coefficients shared by all cells; `tau_p` and `mechanism` are overridden per cell.
    #[serde(default)]
    pub generation: GenConfig,
    /// Training settings; the seed is overridden per replicate.
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub seed: u64,
}

/// One grid cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub network: NetworkSpec,
    pub mechanism: Mechanism,
    pub tau_p: f64,
}

impl Cell {
    pub fn key(&self) -> String {
        alloc::format!("{}/{}/tau_p={}", self.network.label(), self.mechanism.name(), self.tau_p)
    }
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        let bad = |reason: &str| Err(EstimatorError::InvalidConfig { reason: reason.to_string() });
        if self.seeds == 0 {
            return bad("seeds must be at least 1");
        }
        if self.networks.is_empty() || self.mechanisms.is_empty() || self.tau_p.is_empty() || self.variants.is_empty() {
            return bad("networks, mechanisms, tau_p and variants must be non-empty");
        }
        self.generation.validate()?;
        self.training.validate()
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for network in &self.networks {
            for &mechanism in &self.mechanisms {
                for &tau_p in &self.tau_p {
                    out.push(Cell { index: out.len(), network: network.clone(), mechanism, tau_p });
                }
            }
        }
        out
    }

    /// Seed of one replicate of one cell.
    pub fn replicate_seed(&self, cell: usize, replicate: usize) -> u64 {
        derive_seed(self.seed, cell as u64, replicate as u64)
    }

    /// Every `(cell, replicate)` pair in a fixed order.
    pub fn jobs(&self) -> Vec<(usize, usize)> {
        let cells = self.cells().len();
        (0..cells).flat_map(|c| (0..self.seeds).map(move |r| (c, r))).collect()
    }
}

/// Errors of one estimator on one replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantScore {
    pub variant: Variant,
    pub pehe: f64,
    pub ate_error: f64,
}

/// Outcome of one replicate of one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub cell: usize,
    pub replicate: usize,
    pub seed: u64,
    /// Scores per variant, or the reason the replicate produced none.
    pub outcome: Result<Vec<VariantScore>, String>,
}

/// Generates the replicate's dataset and trains every variant on it.
pub fn run_replicate(grid: &ExperimentGrid, cell: &Cell, replicate: usize) -> ReplicateResult {
    let seed = grid.replicate_seed(cell.index, replicate);
    let outcome = score_replicate(grid, cell, seed).map_err(|e| e.to_string());
    ReplicateResult { cell: cell.index, replicate, seed, outcome }
}

fn score_replicate(grid: &ExperimentGrid, cell: &Cell, seed: u64) -> Result<Vec<VariantScore>, EstimatorError> {
    let gen = GenConfig { tau_p: cell.tau_p, mechanism: cell.mechanism, ..grid.generation.clone() };
    let data = synthetic_dataset(&cell.network, &gen, seed)?;
    let inputs = GraphInputs::from_network(&data.network)?;
    let train = TrainConfig { seed, ..grid.training.clone() };
    let mut scores = Vec::new();
    for &variant in &grid.variants {
        let model = train_variant(variant, &inputs, &data.x, &data.y, &train)?;
        let est = model.predict(&inputs, &data.x)?;
        let metric = |r: Result<f64, crate::error::MetricError>| {
            r.map_err(|e| EstimatorError::Data(DataError::InvalidParameter { reason: e.to_string() }))
        };
        scores.push(VariantScore {
            variant,
            pehe: metric(pehe(&data.tau_true, &est.tau_hat))?,
            ate_error: metric(ate_error(&data.tau_true, &est.tau_hat))?,
        });
    }
    Ok(scores)
}

/// Summary of one estimator in one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub cell: usize,
    pub key: String,
    pub network: NetworkSpec,
    pub mechanism: Mechanism,
    pub tau_p: f64,
    pub variant: Variant,
    pub pehe_mean: f64,
    pub pehe_std: f64,
    pub ate_mean: f64,
    pub ate_std: f64,
    pub n_seeds: usize,
    pub missing: usize,
    pub pehe_values: Vec<f64>,
    pub ate_values: Vec<f64>,
}

/// Per-cell, per-estimator means and deviations over replicates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
    /// Replicates that failed, with their reasons.
    pub missing: Vec<ReplicateResult>,
}

impl ResultsTable {
    /// Aggregates replicate results; their order does not matter.
    pub fn build(grid: &ExperimentGrid, results: &[ReplicateResult]) -> Self {
        let mut sorted: Vec<&ReplicateResult> = results.iter().collect();
        sorted.sort_by_key(|r| (r.cell, r.replicate));
        let mut rows = Vec::new();
        for cell in grid.cells() {
            let mine: Vec<&&ReplicateResult> = sorted.iter().filter(|r| r.cell == cell.index).collect();
            let failed = mine.iter().filter(|r| r.outcome.is_err()).count();
            for &variant in &grid.variants {
                let (mut p, mut a) = (vec![], vec![]);
                for r in &mine {
                    if let Ok(scores) = &r.outcome {
                        if let Some(s) = scores.iter().find(|s| s.variant == variant) {
                            p.push(s.pehe);
                            a.push(s.ate_error);
                        }
                    }
                }
                let (pehe_mean, pehe_std) = mean_std(&p);
                let (ate_mean, ate_std) = mean_std(&a);
                rows.push(ResultRow {
                    cell: cell.index,
                    key: cell.key(),
                    network: cell.network.clone(),
                    mechanism: cell.mechanism,
                    tau_p: cell.tau_p,
                    variant,
                    pehe_mean,
                    pehe_std,
                    ate_mean,
                    ate_std,
                    n_seeds: p.len(),
                    missing: failed + grid.seeds.saturating_sub(mine.len()),
                    pehe_values: p,
                    ate_values: a,
                });
            }
        }
        let missing = sorted.iter().filter(|r| r.outcome.is_err()).map(|r| (*r).clone()).collect();
        Self { rows, missing }
    }
}
