//! Subcommands, each driven by one JSON config file.
//!
//! Relative paths inside a config resolve against the config's directory.
//! `--out` and `--seed` on the command line override the config's `out` and
//! seed.

use std::path::{Path, PathBuf};

use idenet_core::datagen::{semi_synthetic, synthetic_dataset, GenConfig};
use idenet_core::estimator::{predict, train_variant, GraphInputs, IdeEstimate, TrainConfig, Variant};
use idenet_core::grid::ExperimentGrid;
use idenet_core::metrics::{ate_error, pehe};
use idenet_core::netgen::NetworkSpec;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint};
use crate::dataset::{read_dataset, read_edge_list, read_features, write_dataset, Meta};
use crate::error::{Error, Result};
use crate::files::{num, read_json, write_json, Table};
use crate::reason::{answer, load_model, QueryFile, Verdict};
use crate::suite::{run_grid, thread_count};

/// Overrides given on the command line.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// What a subcommand prints and how the process exits.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub stdout: String,
    pub exit: u8,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Self { stdout, exit: 0 }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn config_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn output_dir(config: &Path, from_file: Option<&PathBuf>, overrides: &Overrides) -> Result<PathBuf> {
    match (&overrides.out, from_file) {
        (Some(o), _) => Ok(o.clone()),
        (None, Some(o)) => Ok(resolve(&config_dir(config), o)),
        (None, None) => Err(Error::Invalid(String::from("no output directory: pass --out or set `out`"))),
    }
}

fn json_line<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serialisable") + "\n"
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReasonConfig {
    pub model: PathBuf,
    pub query: PathBuf,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Prints the verdict; exits 0 when separated or identifiable, 1 otherwise.
pub fn cmd_reason(config: &Path, overrides: &Overrides) -> Result<Outcome> {
    let cfg: ReasonConfig = read_json(config)?;
    let base = config_dir(config);
    reason_files(
        &resolve(&base, &cfg.model),
        &resolve(&base, &cfg.query),
        cfg.out.as_ref().map(|o| resolve(&base, o)),
        overrides,
    )
}

pub fn reason_files(model: &Path, query: &Path, out: Option<PathBuf>, overrides: &Overrides) -> Result<Outcome> {
    let model = load_model(model)?;
    let query: QueryFile = read_json(query)?;
    let verdict: Verdict = answer(&model, &query)?;
    if let Some(dir) = overrides.out.clone().or(out) {
        write_json(&dir.join("verdict.json"), &verdict)?;
    }
    Ok(Outcome { stdout: json_line(&verdict), exit: if verdict.affirmative() { 0 } else { 1 } })
}

/// Real features and topology for a semi-synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemiSyntheticInput {
    /// CSV with a header row, one row per node.
    pub features: PathBuf,
    /// CSV whose first two columns are `u,v`.
    pub edges: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    /// Generated topology; exactly one of `network` and `semi_synthetic`.
    #[serde(default)]
    pub network: Option<NetworkSpec>,
    #[serde(default)]
    pub semi_synthetic: Option<SemiSyntheticInput>,
    #[serde(default)]
    pub generation: GenConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

pub fn cmd_gen_data(config: &Path, overrides: &Overrides) -> Result<Outcome> {
    let cfg: GenDataConfig = read_json(config)?;
    let out = output_dir(config, cfg.out.as_ref(), overrides)?;
    let seed = overrides.seed.unwrap_or(cfg.seed);
    let base = config_dir(config);
    let data = match (&cfg.network, &cfg.semi_synthetic) {
        (Some(spec), None) => {
            let data = synthetic_dataset(spec, &cfg.generation, seed)?;
            write_dataset(&out, &data, &Meta::describe(&data.network, Some(spec)))?;
            data
        }
        (None, Some(input)) => {
            let features = read_features(&resolve(&base, &input.features))?;
            let adjacency = read_edge_list(&resolve(&base, &input.edges), features.rows())?;
            let (data, design) = semi_synthetic(&features, adjacency, &cfg.generation, seed)?;
            write_dataset(&out, &data, &Meta::describe(&data.network, None))?;
            write_json(&out.join("design.json"), &design)?;
            data
        }
        _ => return Err(Error::Invalid(String::from("set exactly one of `network` and `semi_synthetic`"))),
    };
    let summary = serde_json::json!({
        "out": out.display().to_string(),
        "nodes": data.num_nodes(),
        "edges": data.network.num_edges(),
        "treated": data.x.iter().filter(|&&x| x == 1).count(),
        "true_ate": data.true_ate(),
    });
    Ok(Outcome::ok(json_line(&summary)))
}

fn default_variant() -> Variant {
    Variant::Full
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    /// Dataset directory.
    pub data: PathBuf,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn write_estimates(path: &Path, est: &IdeEstimate) -> Result<()> {
    let mut t = Table::new(&["id", "tau_hat", "y0_hat", "y1_hat"]);
    for i in 0..est.tau_hat.len() {
        t.push(vec![i.to_string(), num(est.tau_hat[i]), num(est.y0_hat[i]), num(est.y1_hat[i])]);
    }
    t.write(path)
}

/// Per-candidate validation errors and the kept run's learning curves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub variant: Variant,
    pub lambda: f64,
    pub val_loss: f64,
    pub best_epoch: usize,
    pub candidates: Vec<idenet_core::estimator::CandidateReport>,
    pub train_loss: Vec<f64>,
    pub val_mse: Vec<f64>,
}

/// Trains on a dataset directory; writes the checkpoint, the report and
/// in-sample estimates.
pub fn cmd_train(config: &Path, overrides: &Overrides) -> Result<Outcome> {
    let cfg: TrainRunConfig = read_json(config)?;
    let out = output_dir(config, cfg.out.as_ref(), overrides)?;
    let data = read_dataset(&resolve(&config_dir(config), &cfg.data))?;
    let mut training = cfg.training.clone();
    if let Some(s) = overrides.seed {
        training.seed = s;
    }
    let inputs = GraphInputs::from_network(&data.network)?;
    let model = train_variant(cfg.variant, &inputs, &data.x, &data.y, &training)?;
    let checkpoint = Checkpoint::from_model(&model, inputs.node_dim(), inputs.edge_dim());
    checkpoint::save(&out, &checkpoint, &training)?;
    let report = TrainingReport {
        variant: cfg.variant,
        lambda: model.lambda,
        val_loss: model.val_loss,
        best_epoch: model.history.best_epoch,
        candidates: model.candidates.clone(),
        train_loss: model.history.train.clone(),
        val_mse: model.history.val.clone(),
    };
    write_json(&out.join("training.json"), &report)?;
    let est = model.predict(&inputs, &data.x)?;
    write_estimates(&out.join("estimates.csv"), &est)?;
    let summary = serde_json::json!({
        "out": out.display().to_string(),
        "variant": cfg.variant,
        "lambda": model.lambda,
        "val_loss": model.val_loss,
        "best_epoch": model.history.best_epoch,
    });
    Ok(Outcome::ok(json_line(&summary)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub data: PathBuf,
    /// Directory written by `train`.
    pub model: PathBuf,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub nodes: usize,
    pub pehe: f64,
    pub ate_error: f64,
    pub true_ate: f64,
    pub estimated_ate: f64,
}

/// Applies a saved model to a dataset and scores it against the true effects.
pub fn cmd_evaluate(config: &Path, overrides: &Overrides) -> Result<Outcome> {
    let cfg: EvaluateConfig = read_json(config)?;
    let out = output_dir(config, cfg.out.as_ref(), overrides)?;
    let base = config_dir(config);
    let data = read_dataset(&resolve(&base, &cfg.data))?;
    let (_, network) = checkpoint::load(&resolve(&base, &cfg.model))?;
    let inputs = GraphInputs::from_network(&data.network)?;
    let est = predict(&network, &inputs, &data.x)?;
    let metric =
        |r: std::result::Result<f64, idenet_core::error::MetricError>| r.map_err(|e| Error::Invalid(e.to_string()));
    let n = est.tau_hat.len();
    let eval = Evaluation {
        nodes: n,
        pehe: metric(pehe(&data.tau_true, &est.tau_hat))?,
        ate_error: metric(ate_error(&data.tau_true, &est.tau_hat))?,
        true_ate: data.true_ate(),
        estimated_ate: est.tau_hat.iter().sum::<f64>() / n as f64,
    };
    write_estimates(&out.join("estimates.csv"), &est)?;
    write_json(&out.join("metrics.json"), &eval)?;
    Ok(Outcome::ok(json_line(&eval)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub grid: ExperimentGrid,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Runs an experiment grid; rerunning into the same directory resumes it.
pub fn cmd_run_suite(config: &Path, overrides: &Overrides) -> Result<Outcome> {
    let cfg: SuiteConfig = read_json(config)?;
    let out = output_dir(config, cfg.out.as_ref(), overrides)?;
    let mut grid = cfg.grid;
    if let Some(s) = overrides.seed {
        grid.seed = s;
    }
    let table = run_grid(&grid, &out, thread_count()?)?;
    let mut text = String::new();
    for row in &table.rows {
        text.push_str(&format!(
            "{:<40} {:<16} pehe {:.3} +- {:.3}  ate {:.3} +- {:.3}  seeds {}\n",
            row.key,
            row.variant.name(),
            row.pehe_mean,
            row.pehe_std,
            row.ate_mean,
            row.ate_std,
            row.n_seeds
        ));
    }
    for m in &table.missing {
        text.push_str(&format!(
            "missing cell {} replicate {}: {}\n",
            m.cell,
            m.replicate,
            m.outcome.as_ref().err().map_or("", |s| s)
        ));
    }
    Ok(Outcome::ok(text))
}
