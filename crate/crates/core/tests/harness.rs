use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chunktd::harness::metrics::{regretful_floor, treasure_missed_floor};
use chunktd::harness::output::{read_tables, summarize, write_results};
use chunktd::harness::runner::run_cells;
use chunktd::harness::{expand_cells, run_experiment, ExperimentConfig};

fn experiments() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../experiments")
}

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&experiments().join(name)).unwrap()
}

fn alphas(cfg: &ExperimentConfig) -> BTreeMap<String, Vec<f64>> {
    cfg.learners.iter().map(|l| (l.label.clone(), l.alpha.values())).collect()
}

#[test]
fn every_experiment_config_parses() {
    let mut n = 0;
    for entry in std::fs::read_dir(experiments()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.validate().unwrap();
            assert!(!expand_cells(&cfg).is_empty());
            n += 1;
        }
    }
    assert!(n >= 5);
}

#[test]
fn chain_split_uses_selected_learning_rates() {
    let a = alphas(&load("chain_split.toml"));
    assert_eq!(a["SARSA(0)"], vec![0.1 / 32.0]);
    assert_eq!(a["SARSA(1)"], vec![0.1 / 2048.0]);
    assert_eq!(a["Chunked SARSA"], vec![0.1 / 256.0]);
}

#[test]
fn key_to_door_uses_selected_learning_rates() {
    let a = alphas(&load("key_to_door.toml"));
    let expected = [
        ("ES(0)", 0.2),
        ("ES(0.1)", 0.4),
        ("ES(0.5)", 0.1),
        ("ES(0.9)", 0.1),
        ("ES(1)", 0.0125),
        ("C-default", 0.1),
        ("C-factored", 0.05),
    ];
    for (label, alpha) in expected {
        assert_eq!(a[label], vec![alpha], "{label}");
    }
}

#[test]
fn accumulated_charge_grid() {
    let cfg = load("accumulated_charge.toml");
    let a = alphas(&cfg);
    let grid: Vec<f64> = [3, 2, 1, 0, -1, -2, -3, -4, -6, -8, -10, -12].iter().map(|&e| 0.1 * 2f64.powi(e)).collect();
    for v in a.values() {
        assert_eq!(v, &grid);
    }
    // 12 α for each of 4 λ, plus 12 for the chunked learner
    assert_eq!(expand_cells(&cfg).len(), 60);
}

#[test]
fn reference_floors() {
    // 1000 uniform episodes over two actions, then ε = 0.1
    let ac = load("accumulated_charge.toml");
    assert!((regretful_floor(&ac.exploration, ac.episodes, 2) - (1000.0 * 0.5 + 9000.0 * 0.05)).abs() < 1e-9);
    // sum over episodes of 1 - (1 - ε/2)^2 with ε linear from 1 to 0.1 over 500
    let kd = load("key_to_door.toml");
    assert!((treasure_missed_floor(&kd.exploration, kd.episodes) - 667.8261825).abs() < 1e-6);
}

#[test]
fn results_round_trip_through_report() {
    let mut cfg = load("chain_split.toml");
    cfg.episodes = 300;
    cfg.seeds.truncate(2);
    let records = run_experiment(&cfg).unwrap();
    assert_eq!(records.len(), 6);
    let dir = tempfile::tempdir().unwrap();
    let written = write_results(dir.path(), &cfg, &records).unwrap();
    let (read_cfg, table) = read_tables(dir.path()).unwrap();
    assert_eq!(read_cfg, cfg);
    assert_eq!(summarize(&read_cfg, &table).unwrap(), written);
}

#[test]
fn worker_count_does_not_change_records() {
    let mut cfg = load("accumulated_charge.toml");
    cfg.episodes = 200;
    cfg.seeds.truncate(2);
    let cells = expand_cells(&cfg);
    let cells = &cells[..4];
    let serial = run_cells(&cfg, cells, 1).unwrap();
    let parallel = run_cells(&cfg, cells, 4).unwrap();
    assert_eq!(serial.len(), parallel.len());
    for (a, b) in serial.iter().zip(&parallel) {
        assert_eq!(a.cell.index, b.cell.index);
        assert_eq!(a.seed, b.seed);
        assert_eq!(a.streams, b.streams);
    }
}

#[test]
fn run_rejects_grids() {
    assert!(run_experiment(&load("accumulated_charge.toml")).is_err());
}
