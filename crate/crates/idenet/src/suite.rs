//! Experiment grids on a thread pool, with incremental results and resume.
//!
//! The output directory holds `grid.json` (the grid being run),
//! `partial.jsonl` (one finished replicate per line, appended as they
//! complete), and at the end `results.csv` and `results.json`.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use idenet_core::grid::{run_replicate, ExperimentGrid, ReplicateResult, ResultsTable};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::files::{num, read_json, write_json, write_text, Table};

/// Environment variable capping the number of worker threads.
pub const THREADS_VAR: &str = "IDE_NET_THREADS";

/// Worker count from `IDE_NET_THREADS`, or rayon's default when unset.
pub fn thread_count() -> Result<Option<usize>> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Invalid(format!("{THREADS_VAR}={s} is not a positive integer"))),
        },
    }
}

fn load_partial(path: &Path) -> Result<Vec<ReplicateResult>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            // A run killed mid-write leaves a torn last line; that replicate is redone.
            Err(_) if k + 1 == text.lines().count() => {}
            Err(e) => return Err(Error::parse(path, format!("line {}: {e}", k + 1))),
        }
    }
    Ok(out)
}

fn sorted_lines(results: &[ReplicateResult]) -> String {
    let mut sorted: Vec<&ReplicateResult> = results.iter().collect();
    sorted.sort_by_key(|r| (r.cell, r.replicate));
    sorted.iter().map(|r| serde_json::to_string(r).expect("results serialise") + "\n").collect()
}

/// Runs every replicate of `grid` not already recorded in `out`, then
/// writes the result tables. `threads` of `None` uses rayon's default.
pub fn run_grid(grid: &ExperimentGrid, out: &Path, threads: Option<usize>) -> Result<ResultsTable> {
    grid.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let grid_path = out.join("grid.json");
    if grid_path.exists() {
        let previous: ExperimentGrid = read_json(&grid_path)?;
        if &previous != grid {
            return Err(Error::Invalid(format!("{} holds results of a different grid", out.display())));
        }
    } else {
        write_json(&grid_path, grid)?;
    }

    let partial_path = out.join("partial.jsonl");
    let cells = grid.cells();
    let mut done: Vec<ReplicateResult> = load_partial(&partial_path)?
        .into_iter()
        .filter(|r| {
            r.cell < cells.len() && r.replicate < grid.seeds && r.seed == grid.replicate_seed(r.cell, r.replicate)
        })
        .collect();
    done.sort_by_key(|r| (r.cell, r.replicate));
    done.dedup_by_key(|r| (r.cell, r.replicate));
    // Rewrite without any torn or foreign lines before appending.
    write_text(&partial_path, &sorted_lines(&done))?;

    let todo: Vec<(usize, usize)> =
        grid.jobs().into_iter().filter(|&(c, r)| !done.iter().any(|d| d.cell == c && d.replicate == r)).collect();
    let file = OpenOptions::new().append(true).open(&partial_path).map_err(|e| Error::io(&partial_path, e))?;
    let sink = Mutex::new((file, Vec::new()));
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    let write_failure = pool.install(|| {
        todo.par_iter().try_for_each(|&(c, r)| {
            let result = run_replicate(grid, &cells[c], r);
            let line = serde_json::to_string(&result).expect("results serialise") + "\n";
            let mut guard = sink.lock().expect("writer lock");
            guard.0.write_all(line.as_bytes()).and_then(|_| guard.0.flush())?;
            guard.1.push(result);
            Ok::<(), std::io::Error>(())
        })
    });
    write_failure.map_err(|e| Error::io(&partial_path, e))?;
    done.extend(sink.into_inner().expect("writer lock").1);

    write_text(&partial_path, &sorted_lines(&done))?;
    let table = ResultsTable::build(grid, &done);
    write_json(&out.join("results.json"), &table)?;
    results_csv(&table).write(&out.join("results.csv"))?;
    Ok(table)
}

/// One row per cell, estimator and metric.
pub fn results_csv(table: &ResultsTable) -> Table {
    let mut t = Table::new(&[
        "cell",
        "network",
        "mechanism",
        "tau_p",
        "estimator",
        "metric",
        "mean",
        "std",
        "n_seeds",
        "missing",
    ]);
    for row in &table.rows {
        for (metric, mean, std) in [("pehe", row.pehe_mean, row.pehe_std), ("ate", row.ate_mean, row.ate_std)] {
            t.push(vec![
                row.cell.to_string(),
                row.network.label(),
                row.mechanism.name().to_string(),
                num(row.tau_p),
                row.variant.name().to_string(),
                metric.to_string(),
                num(mean),
                num(std),
                row.n_seeds.to_string(),
                row.missing.to_string(),
            ]);
        }
    }
    t
}
