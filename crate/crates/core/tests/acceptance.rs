//! Acceptance criteria, one line each. Runs as a plain binary so the lines
//! always print; pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 1 2 9`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use chunktd::harness::agent::{expand_cells, RunRecord};
use chunktd::harness::metrics::{regretful_floor, treasure_missed_floor};
use chunktd::harness::output::{write_results, RUNS_CSV, TOTALS_CSV};
use chunktd::harness::runner::run_cells;
use chunktd::harness::stats::mean;
use chunktd::harness::verify;
use chunktd::harness::{run_experiment, sweep, ExperimentConfig, Metric};

type Outcome = Result<String, String>;

fn experiments() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../experiments")
}

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&experiments().join(name)).expect("experiment config")
}

fn from_check(c: verify::Check) -> Outcome {
    if c.passed {
        Ok(c.detail)
    } else {
        Err(c.detail)
    }
}

/// Seed-mean stream of `m` per learner label.
fn mean_streams(records: &[RunRecord], m: Metric) -> BTreeMap<String, Vec<f64>> {
    let mut by_label: BTreeMap<String, Vec<&Vec<f64>>> = BTreeMap::new();
    for r in records {
        by_label.entry(r.cell.label.clone()).or_default().push(&r.streams[&m]);
    }
    by_label
        .into_iter()
        .map(|(k, runs)| {
            let n = runs[0].len();
            let curve = (0..n).map(|e| runs.iter().map(|s| s[e]).sum::<f64>() / runs.len() as f64).collect();
            (k, curve)
        })
        .collect()
}

/// Seed-mean total of `m` per grid cell, keyed by cell index.
fn cell_means(records: &[RunRecord], m: Metric) -> BTreeMap<usize, (String, Option<f64>, Option<f64>, f64)> {
    let mut totals: BTreeMap<usize, (String, Option<f64>, Option<f64>, Vec<f64>)> = BTreeMap::new();
    for r in records {
        totals
            .entry(r.cell.index)
            .or_insert_with(|| (r.cell.label.clone(), r.cell.alpha, r.cell.lambda, Vec::new()))
            .3
            .push(r.total(m));
    }
    totals.into_iter().map(|(i, (l, a, lam, v))| (i, (l, a, lam, mean(&v)))).collect()
}

fn criterion_5() -> Outcome {
    let cfg = load("chain_split.toml");
    let records = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let curves = mean_streams(&records, Metric::DeltaQ);
    let first_positive = |c: &[f64]| c.iter().position(|&v| v > 0.0);
    let (chunked, s0, s1) = (&curves["Chunked SARSA"], &curves["SARSA(0)"], &curves["SARSA(1)"]);
    let end = |c: &[f64]| *c.last().expect("episodes");
    let (fc, f0) = (first_positive(chunked), first_positive(s0));
    let detail = format!(
        "final mean ΔQ: chunked {:.5}, SARSA(0) {:.5}, SARSA(1) {:.5}; first positive episode: chunked {:?}, SARSA(0) {:?}",
        end(chunked),
        end(s0),
        end(s1),
        fc,
        f0
    );
    let mut failed = Vec::new();
    if !(end(chunked) > 0.0 && (0.005..=0.015).contains(&end(chunked))) {
        failed.push("chunked final ΔQ outside [0.005, 0.015]");
    }
    if !(end(s1) < 0.0) {
        failed.push("SARSA(1) final mean ΔQ is not negative");
    }
    let later = match (fc, f0) {
        (Some(c), Some(z)) => z > c,
        (Some(_), None) => true,
        _ => false,
    };
    if !later {
        failed.push("SARSA(0) does not turn positive strictly later than chunked SARSA");
    }
    if failed.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{}; {detail}", failed.join("; ")))
    }
}

fn criterion_6() -> Outcome {
    let cfg = load("accumulated_charge.toml");
    let records = sweep(&cfg).map_err(|e| e.to_string())?;
    let floor = regretful_floor(&cfg.exploration, cfg.episodes, 2);
    let cells = cell_means(&records, Metric::Regretful);
    let best = |label: &str, lambda: Option<f64>| {
        cells
            .values()
            .filter(|(l, _, lam, _)| l == label && *lam == lambda)
            .map(|(_, a, _, m)| (*m, a.unwrap_or(f64::NAN)))
            .fold((f64::INFINITY, f64::NAN), |acc, x| if x.0 < acc.0 { x } else { acc })
    };
    let (chunked, chunked_alpha) = best("Chunked SARSA", None);
    let mut detail = format!("floor {floor:.1}; chunked {chunked:.1} (α {chunked_alpha})");
    let mut ok = chunked <= 2.0 * floor;
    for lam in [0.0, 0.5, 0.9, 1.0] {
        let (m, a) = best("SARSA(λ)", Some(lam));
        detail.push_str(&format!("; SARSA({lam}) {m:.1} (α {a})"));
        ok &= chunked < m;
    }
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_7() -> Outcome {
    let cfg = load("key_to_door.toml");
    let records = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let floor = treasure_missed_floor(&cfg.exploration, cfg.episodes);
    let cells = cell_means(&records, Metric::TreasureMissed);
    let mean_of = |label: &str| cells.values().find(|c| c.0 == label).map(|c| c.3).expect("label");
    let factored = mean_of("C-factored");
    let mut detail = format!("floor {floor:.1}; C-factored {factored:.1}");
    let mut ok = (500.0..=900.0).contains(&factored);
    for label in ["ES(0)", "ES(0.1)", "ES(0.5)", "ES(0.9)", "ES(1)", "C-default"] {
        let m = mean_of(label);
        detail.push_str(&format!("; {label} {m:.1}"));
        ok &= factored < m;
    }
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Two runs of the same config (one serial, one on several workers) must
/// write byte-identical CSV files.
fn criterion_9() -> Outcome {
    let mut checked = Vec::new();
    for (name, episodes) in [("chain_split.toml", 2000), ("accumulated_charge.toml", 300), ("key_to_door.toml", 40)] {
        let mut cfg = load(name);
        cfg.episodes = episodes;
        cfg.seeds.truncate(3);
        let cells = expand_cells(&cfg);
        let cells = &cells[..cells.len().min(8)];
        let mut outputs = Vec::new();
        for workers in [1, 3] {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let records = run_cells(&cfg, cells, workers).map_err(|e| e.to_string())?;
            write_results(dir.path(), &cfg, &records).map_err(|e| e.to_string())?;
            let read = |f: &str| std::fs::read(dir.path().join(f)).map_err(|e| e.to_string());
            outputs.push((read(RUNS_CSV)?, read(TOTALS_CSV)?));
        }
        if outputs[0] != outputs[1] {
            return Err(format!("{name}: CSV outputs differ between repeats"));
        }
        checked.push(format!("{name} ({} bytes)", outputs[0].0.len() + outputs[0].1.len()));
    }
    Ok(format!("byte-identical repeats: {}", checked.join(", ")))
}

fn main() -> ExitCode {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: Vec<(usize, &str, Box<dyn Fn() -> Outcome>)> = vec![
        (1, "λ-return equivalence", Box::new(|| from_check(verify::lambda_return_equivalence(100)))),
        (2, "degenerate models", Box::new(|| from_check(verify::degenerate_models(100)))),
        (3, "TD(1/n) and TDC ledgers", Box::new(|| from_check(verify::sutton_singh_equivalence(100)))),
        (4, "sampled chunking expectation", Box::new(|| from_check(verify::sampled_chunking(100_000, 20)))),
        (5, "Chain-and-Split reproduction", Box::new(criterion_5)),
        (6, "Accumulated-Charge reproduction", Box::new(criterion_6)),
        (7, "Key-to-Door reproduction", Box::new(criterion_7)),
        (8, "network gradient check", Box::new(|| from_check(verify::gradient_check(50)))),
        (9, "determinism", Box::new(criterion_9)),
    ];
    let mut failures = 0;
    for (n, name, run) in &criteria {
        if !wanted.is_empty() && !wanted.contains(n) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {n} PASS {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failures += 1;
                println!("criterion {n} FAIL {name}: {d} [{secs:.1}s]");
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criterion(s) failed");
        ExitCode::FAILURE
    }
}
