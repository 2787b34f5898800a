//! Parallel execution of (cell, seed) jobs.

use std::sync::mpsc;

use super::agent::{expand_cells, run_cell, Cell, RunRecord};
use super::config::ExperimentConfig;
use super::HarnessError;

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "CHUNKTD_WORKERS";

/// Workers from `CHUNKTD_WORKERS`, else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// One record per seed for every learner; each learner must name a single
/// α (and λ).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>, HarnessError> {
    let cells = expand_cells(cfg);
    if cells.len() != cfg.learners.len() {
        return Err(HarnessError::Config("run takes one α/λ per learner; use sweep for grids".into()));
    }
    run_cells(cfg, &cells, worker_count())
}

/// Every grid cell times every seed.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>, HarnessError> {
    run_cells(cfg, &expand_cells(cfg), worker_count())
}

/// Runs `cells x seeds` on `workers` threads. Workers send finished records
/// over a channel; the result is ordered by (cell, seed position) once every
/// job has completed, so output never depends on scheduling.
pub fn run_cells(cfg: &ExperimentConfig, cells: &[Cell], workers: usize) -> Result<Vec<RunRecord>, HarnessError> {
    cfg.validate()?;
    let hash = cfg.hash();
    let jobs: Vec<(usize, usize)> =
        (0..cells.len()).flat_map(|c| (0..cfg.seeds.len()).map(move |s| (c, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Run(e.to_string()))?;
    let (tx, rx) = mpsc::channel();
    pool.scope(|scope| {
        for &(c, s) in &jobs {
            let tx = tx.clone();
            let hash = &hash;
            scope.spawn(move |_| {
                let r = run_cell(cfg, &cells[c], cfg.seeds[s], hash);
                let _ = tx.send(((c, s), r));
            });
        }
    });
    drop(tx);
    let mut done: Vec<((usize, usize), RunRecord)> = Vec::with_capacity(jobs.len());
    for (key, r) in rx {
        done.push((key, r?));
    }
    done.sort_by_key(|(k, _)| *k);
    Ok(done.into_iter().map(|(_, r)| r).collect())
}
