//! Results on disk: long-format CSV, per-run totals, JSON summary with
//! confidence intervals, and gnuplot data files.
//!
//! Everything downstream of the runs goes through [`ResultsTable`], which is
//! built either from in-memory records or from the CSV files, so `report`
//! reproduces exactly what `run` wrote.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::agent::{Cell, RunRecord};
use super::config::{Algorithm, ExperimentConfig, Metric, Selection};
use super::metrics::{regretful_floor, treasure_missed_floor};
use super::stats::{bootstrap_ci, mean, std_dev, ConfidenceInterval};
use super::HarnessError;
use crate::env::EnvSpec;
use crate::rng;

pub const RUNS_CSV: &str = "runs.csv";
pub const TOTALS_CSV: &str = "totals.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const CONFIG_TOML: &str = "config.toml";

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub totals: BTreeMap<Metric, f64>,
    pub finals: BTreeMap<Metric, f64>,
    /// `(episode, metric values in table order)` for logged episodes.
    pub logged: Vec<(usize, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub seeds: Vec<SeedResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    pub metrics: Vec<Metric>,
    pub cells: Vec<CellResult>,
}

fn logged_episodes(episodes: usize, every: usize) -> impl Iterator<Item = usize> {
    (0..episodes).filter(move |&e| e % every == 0 || e + 1 == episodes)
}

impl ResultsTable {
    pub fn from_records(cfg: &ExperimentConfig, records: &[RunRecord]) -> Self {
        let metrics = cfg.metrics();
        let mut cells: Vec<CellResult> = Vec::new();
        for r in records {
            if cells.last().is_none_or(|c| c.cell.index != r.cell.index) {
                cells.push(CellResult { cell: r.cell.clone(), seeds: Vec::new() });
            }
            let logged = logged_episodes(cfg.episodes, cfg.log_every)
                .map(|e| (e, metrics.iter().map(|m| r.streams[m][e]).collect()))
                .collect();
            cells.last_mut().expect("pushed").seeds.push(SeedResult {
                seed: r.seed,
                totals: metrics.iter().map(|&m| (m, r.total(m))).collect(),
                finals: metrics.iter().map(|&m| (m, r.last(m).unwrap_or(f64::NAN))).collect(),
                logged,
            });
        }
        ResultsTable { metrics, cells }
    }

    pub fn cell_by_label<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a CellResult> {
        self.cells.iter().filter(move |c| c.cell.label == label)
    }
}

impl CellResult {
    pub fn totals(&self, m: Metric) -> Vec<f64> {
        self.seeds.iter().map(|s| s.totals[&m]).collect()
    }

    pub fn finals(&self, m: Metric) -> Vec<f64> {
        self.seeds.iter().map(|s| s.finals[&m]).collect()
    }

    /// Seed-mean curve of `m` over logged episodes.
    pub fn mean_curve(&self, metrics: &[Metric], m: Metric) -> Vec<(usize, f64)> {
        let k = metrics.iter().position(|&x| x == m).expect("metric in table");
        let n = self.seeds.len() as f64;
        let first = &self.seeds[0].logged;
        (0..first.len())
            .map(|i| (first[i].0, self.seeds.iter().map(|s| s.logged[i].1[k]).sum::<f64>() / n))
            .collect()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(s: &str) -> Result<Option<f64>, HarnessError> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|e| HarnessError::Io(format!("bad number {s:?}: {e}")))
    }
}

fn io<E: std::fmt::Display>(e: E) -> HarnessError {
    HarnessError::Io(e.to_string())
}

const KEY_COLUMNS: [&str; 6] = ["cell", "label", "algorithm", "alpha", "lambda", "seed"];

fn key_fields(c: &Cell, seed: u64) -> [String; 6] {
    [c.index.to_string(), c.label.clone(), c.algorithm.name().into(), opt(c.alpha), opt(c.lambda), seed.to_string()]
}

/// Writes `runs.csv`, `totals.csv` and the config copy.
pub fn write_tables(dir: &Path, cfg: &ExperimentConfig, table: &ResultsTable) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(io)?;
    let config = toml::to_string(cfg).map_err(io)?;
    std::fs::write(dir.join(CONFIG_TOML), config).map_err(io)?;

    let mut w = csv::Writer::from_path(dir.join(RUNS_CSV)).map_err(io)?;
    let mut header: Vec<String> = KEY_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.push("episode".into());
    header.extend(table.metrics.iter().map(|m| m.name().to_string()));
    w.write_record(&header).map_err(io)?;
    for c in &table.cells {
        for s in &c.seeds {
            let keys = key_fields(&c.cell, s.seed);
            for (e, vals) in &s.logged {
                let mut row: Vec<String> = keys.to_vec();
                row.push(e.to_string());
                row.extend(vals.iter().map(|v| v.to_string()));
                w.write_record(&row).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)?;

    let mut w = csv::Writer::from_path(dir.join(TOTALS_CSV)).map_err(io)?;
    let mut header: Vec<String> = KEY_COLUMNS.iter().map(|s| s.to_string()).collect();
    for m in &table.metrics {
        header.push(format!("{}_total", m.name()));
        header.push(format!("{}_final", m.name()));
    }
    w.write_record(&header).map_err(io)?;
    for c in &table.cells {
        for s in &c.seeds {
            let mut row: Vec<String> = key_fields(&c.cell, s.seed).to_vec();
            for m in &table.metrics {
                row.push(s.totals[m].to_string());
                row.push(s.finals[m].to_string());
            }
            w.write_record(&row).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads back what [`write_tables`] wrote.
pub fn read_tables(dir: &Path) -> Result<(ExperimentConfig, ResultsTable), HarnessError> {
    let cfg = ExperimentConfig::load(&dir.join(CONFIG_TOML))?;
    let mut r = csv::Reader::from_path(dir.join(TOTALS_CSV)).map_err(io)?;
    let header = r.headers().map_err(io)?.clone();
    let metrics: Vec<Metric> = header
        .iter()
        .skip(KEY_COLUMNS.len())
        .step_by(2)
        .map(|h| Metric::parse(h.trim_end_matches("_total")).ok_or_else(|| io(format!("unknown column {h}"))))
        .collect::<Result<_, _>>()?;
    let mut cells: Vec<CellResult> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(io)?;
        let index: usize = rec[0].parse().map_err(io)?;
        let algorithm: Algorithm =
            serde_json::from_value(serde_json::Value::String(rec[2].to_string())).map_err(io)?;
        let cell = Cell {
            index,
            learner: cfg.learners.iter().position(|l| l.label == rec[1]).unwrap_or(usize::MAX),
            label: rec[1].to_string(),
            algorithm,
            alpha: parse_opt(&rec[3])?,
            lambda: parse_opt(&rec[4])?,
        };
        if cells.last().is_none_or(|c| c.cell.index != index) {
            cells.push(CellResult { cell, seeds: Vec::new() });
        }
        let mut totals = BTreeMap::new();
        let mut finals = BTreeMap::new();
        for (k, m) in metrics.iter().enumerate() {
            let base = KEY_COLUMNS.len() + 2 * k;
            totals.insert(*m, rec[base].parse::<f64>().map_err(io)?);
            finals.insert(*m, rec[base + 1].parse::<f64>().map_err(io)?);
        }
        let seed: u64 = rec[5].parse().map_err(io)?;
        cells.last_mut().expect("pushed").seeds.push(SeedResult { seed, totals, finals, logged: Vec::new() });
    }
    let mut r = csv::Reader::from_path(dir.join(RUNS_CSV)).map_err(io)?;
    for rec in r.records() {
        let rec = rec.map_err(io)?;
        let index: usize = rec[0].parse().map_err(io)?;
        let seed: u64 = rec[5].parse().map_err(io)?;
        let episode: usize = rec[6].parse().map_err(io)?;
        let vals: Vec<f64> =
            (0..metrics.len()).map(|k| rec[7 + k].parse::<f64>().map_err(io)).collect::<Result<_, _>>()?;
        let c = cells.iter_mut().find(|c| c.cell.index == index).ok_or_else(|| io(format!("cell {index}")))?;
        let s = c.seeds.iter_mut().find(|s| s.seed == seed).ok_or_else(|| io(format!("seed {seed}")))?;
        s.logged.push((episode, vals));
    }
    Ok((cfg, ResultsTable { metrics, cells }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub total: ConfidenceInterval,
    pub total_std: f64,
    pub last: ConfidenceInterval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: Cell,
    pub seeds: usize,
    pub metrics: BTreeMap<String, MetricSummary>,
    /// Selection score when a rule is configured (lower is better).
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub config_hash: String,
    pub cells: Vec<CellSummary>,
    /// Best cell index per learner label under the selection rule.
    pub selected: BTreeMap<String, usize>,
    /// Analytic references such as exploration floors.
    pub references: BTreeMap<String, f64>,
}

pub fn selection_score(sel: &Selection, metrics: &[Metric], c: &CellResult) -> f64 {
    match sel {
        Selection::MinTotal { metric } => mean(&c.totals(*metric)),
        Selection::MinSquaredError { metric, target } => {
            c.mean_curve(metrics, *metric).iter().map(|(_, v)| (v - target) * (v - target)).sum()
        }
    }
}

/// Best cell per label (first wins ties).
pub fn select(sel: &Selection, table: &ResultsTable) -> BTreeMap<String, usize> {
    let mut best: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    for c in &table.cells {
        let s = selection_score(sel, &table.metrics, c);
        let e = best.entry(c.cell.label.clone()).or_insert((c.cell.index, s));
        if s < e.1 {
            *e = (c.cell.index, s);
        }
    }
    best.into_iter().map(|(k, (i, _))| (k, i)).collect()
}

pub fn references(cfg: &ExperimentConfig) -> BTreeMap<String, f64> {
    let mut r = BTreeMap::new();
    match &cfg.env {
        EnvSpec::AccumulatedCharge(_) => {
            r.insert("regretful_floor".into(), regretful_floor(&cfg.exploration, cfg.episodes, 2));
        }
        EnvSpec::KeyToDoor(_) => {
            r.insert("treasure_missed_floor".into(), treasure_missed_floor(&cfg.exploration, cfg.episodes));
        }
        EnvSpec::ChainAndSplit(p) => {
            r.insert("true_delta_q".into(), p.chain_reward);
        }
        EnvSpec::RandomAcyclic(_) => {}
    }
    r
}

pub fn summarize(cfg: &ExperimentConfig, table: &ResultsTable) -> Result<Summary, HarnessError> {
    let mut cells = Vec::new();
    for c in &table.cells {
        let mut rng = rng::stream(c.cell.index as u64, &[rng::tag::BOOTSTRAP]);
        let mut metrics = BTreeMap::new();
        for &m in &table.metrics {
            let totals = c.totals(m);
            let finals = c.finals(m);
            metrics.insert(
                m.name().to_string(),
                MetricSummary {
                    total: bootstrap_ci(&totals, cfg.ci_level, cfg.bootstrap_resamples, &mut rng)?,
                    total_std: std_dev(&totals),
                    last: bootstrap_ci(&finals, cfg.ci_level, cfg.bootstrap_resamples, &mut rng)?,
                },
            );
        }
        let score = cfg.selection.as_ref().map(|s| selection_score(s, &table.metrics, c));
        cells.push(CellSummary { cell: c.cell.clone(), seeds: c.seeds.len(), metrics, score });
    }
    let selected = cfg.selection.as_ref().map(|s| select(s, table)).unwrap_or_default();
    Ok(Summary { name: cfg.name.clone(), config_hash: cfg.hash(), cells, selected, references: references(cfg) })
}

/// One whitespace-separated file per cell: episode, then seed-mean and
/// standard error of each metric.
pub fn write_gnuplot(dir: &Path, table: &ResultsTable) -> Result<(), HarnessError> {
    for c in &table.cells {
        let mut out = String::new();
        let _ = write!(out, "# {} alpha={} lambda={}\n# episode", c.cell.label, opt(c.cell.alpha), opt(c.cell.lambda));
        for m in &table.metrics {
            let _ = write!(out, " {0}_mean {0}_se", m.name());
        }
        out.push('\n');
        let n = c.seeds[0].logged.len();
        for i in 0..n {
            let _ = write!(out, "{}", c.seeds[0].logged[i].0);
            for k in 0..table.metrics.len() {
                let xs: Vec<f64> = c.seeds.iter().map(|s| s.logged[i].1[k]).collect();
                let se = std_dev(&xs) / (xs.len() as f64).sqrt();
                let _ = write!(out, " {} {}", mean(&xs), se);
            }
            out.push('\n');
        }
        std::fs::write(dir.join(format!("cell_{:03}.dat", c.cell.index)), out).map_err(io)?;
    }
    Ok(())
}

/// Everything `run`/`sweep` persist.
pub fn write_results(dir: &Path, cfg: &ExperimentConfig, records: &[RunRecord]) -> Result<Summary, HarnessError> {
    let table = ResultsTable::from_records(cfg, records);
    write_tables(dir, cfg, &table)?;
    let summary = summarize(cfg, &table)?;
    let json = serde_json::to_string_pretty(&summary).map_err(io)?;
    std::fs::write(dir.join(SUMMARY_JSON), json).map_err(io)?;
    write_gnuplot(dir, &table)?;
    Ok(summary)
}

/// Plain-text table of a summary: one line per cell.
pub fn render_summary(summary: &Summary, metrics: &[Metric]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} ({})", summary.name, summary.config_hash);
    for (k, v) in &summary.references {
        let _ = writeln!(out, "  reference {k} = {v:.4}");
    }
    let _ = write!(out, "{:>4} {:<24} {:>12} {:>7}", "cell", "label", "alpha", "lambda");
    for m in metrics {
        let _ = write!(out, " {:>34}", format!("{} total [95% CI]", m.name()));
    }
    out.push('\n');
    for c in &summary.cells {
        let mark = if summary.selected.get(&c.cell.label) == Some(&c.cell.index) { "*" } else { " " };
        let _ = write!(
            out,
            "{:>3}{} {:<24} {:>12} {:>7}",
            c.cell.index,
            mark,
            c.cell.label,
            opt(c.cell.alpha),
            opt(c.cell.lambda)
        );
        for m in metrics {
            let s = &c.metrics[m.name()];
            let _ = write!(out, " {:>34}", format!("{:.4} [{:.4}, {:.4}]", s.total.point, s.total.lower, s.total.upper));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::runner::run_cells;
    use crate::harness::agent::expand_cells;

    const CFG: &str = r#"
name = "tiny"
episodes = 30
seeds = [3, 4]
log_every = 7
metrics = ["delta_q", "return"]

[env]
name = "chain_and_split"
chain_length = 3
root_actions = 3
branch_width = 5

[selection]
rule = "min_squared_error"
metric = "delta_q"
target = 0.01

[[learners]]
label = "SARSA"
algorithm = "sarsa_lambda"
alpha = [0.5, 0.1]
lambda = [0.0]

[[learners]]
label = "chunked"
algorithm = "chunked_sarsa"
alpha = [0.1]
model = { name = "tabular_count" }
"#;

    #[test]
    fn tables_round_trip_through_disk() {
        let cfg = ExperimentConfig::from_toml(CFG).unwrap();
        let records = run_cells(&cfg, &expand_cells(&cfg), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let summary = write_results(dir.path(), &cfg, &records).unwrap();
        let (cfg2, table) = read_tables(dir.path()).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(table, ResultsTable::from_records(&cfg, &records));
        assert_eq!(summarize(&cfg2, &table).unwrap(), summary);
        // episodes 0, 7, 14, 21, 28 and the last
        assert_eq!(table.cells[0].seeds[0].logged.len(), 6);
        assert_eq!(summary.selected.len(), 2);
        assert!(dir.path().join("cell_002.dat").exists());
    }

    #[test]
    fn selection_prefers_smaller_score() {
        let cfg = ExperimentConfig::from_toml(CFG).unwrap();
        let records = run_cells(&cfg, &expand_cells(&cfg), 1).unwrap();
        let table = ResultsTable::from_records(&cfg, &records);
        let sel = cfg.selection.clone().unwrap();
        let chosen = select(&sel, &table)["SARSA"];
        let score = |i: usize| selection_score(&sel, &table.metrics, &table.cells[i]);
        assert!(score(chosen) <= score(1 - chosen));
    }

    #[test]
    fn render_marks_selected_cells() {
        let cfg = ExperimentConfig::from_toml(CFG).unwrap();
        let records = run_cells(&cfg, &expand_cells(&cfg), 1).unwrap();
        let summary = summarize(&cfg, &ResultsTable::from_records(&cfg, &records)).unwrap();
        let text = render_summary(&summary, &cfg.metrics());
        assert_eq!(text.lines().filter(|l| l.contains('*')).count(), 2);
        assert!(text.contains("true_delta_q"));
    }
}
