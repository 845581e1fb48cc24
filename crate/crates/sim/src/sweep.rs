//! Monte-Carlo over seeds. Each seed runs on its own worker with isolated state.

use std::collections::BTreeMap;
use std::path::Path;

use attest_core::money::Money;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::report::ReportError;
use crate::runner::{self, RunError};

pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub seed: u64,
    pub player: String,
    pub strategy: &'static str,
    pub payout: Money,
    pub effort_observations: u64,
    pub utility: Money,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyStats {
    pub strategy: &'static str,
    /// Mean per-player utility in each seed, in units.
    pub mean_utility_by_seed: Vec<f64>,
    pub seeds_positive: usize,
    pub seeds_negative: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
    pub strategies: Vec<StrategyStats>,
}

/// Runs `config` under seeds `config.seed .. config.seed + n`.
pub fn sweep(config: &ScenarioConfig, n: u64) -> Result<SweepReport, RunError> {
    let seeds: Vec<u64> = (0..n).map(|i| config.seed.wrapping_add(i)).collect();
    let runs: Vec<_> = seeds
        .par_iter()
        .map(|s| {
            let mut c = config.clone();
            c.seed = *s;
            runner::run(&c).map(|r| (*s, r))
        })
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    let mut by_strategy: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
    for (seed, report) in &runs {
        let mut per_seed: BTreeMap<&'static str, (f64, usize)> = BTreeMap::new();
        for p in &report.players {
            rows.push(SweepRow {
                seed: *seed,
                player: p.id.to_string(),
                strategy: p.strategy,
                payout: p.payout,
                effort_observations: p.effort_observations,
                utility: p.utility,
            });
            let e = per_seed.entry(p.strategy).or_default();
            e.0 += p.utility.as_units_f64();
            e.1 += 1;
        }
        for (s, (sum, count)) in per_seed {
            by_strategy.entry(s).or_default().push(sum / count as f64);
        }
    }
    let strategies = by_strategy
        .into_iter()
        .map(|(strategy, means)| StrategyStats {
            strategy,
            seeds_positive: means.iter().filter(|m| **m > 0.0).count(),
            seeds_negative: means.iter().filter(|m| **m < 0.0).count(),
            mean_utility_by_seed: means,
        })
        .collect();
    Ok(SweepReport { seeds, rows, strategies })
}

#[derive(Serialize)]
struct SweepCsv<'a> {
    seed: u64,
    player: &'a str,
    strategy: &'a str,
    payout: String,
    effort_observations: u64,
    utility: String,
}

pub fn write_sweep(report: &SweepReport, dir: &Path) -> Result<(), ReportError> {
    std::fs::create_dir_all(dir).map_err(|source| ReportError::Io { path: dir.to_owned(), source })?;
    let path = dir.join(SWEEP_FILE);
    let csv_err = |source| ReportError::Csv { path: path.clone(), source };
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    for r in &report.rows {
        w.serialize(SweepCsv {
            seed: r.seed,
            player: &r.player,
            strategy: r.strategy,
            payout: r.payout.to_string(),
            effort_observations: r.effort_observations,
            utility: r.utility.to_string(),
        })
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| ReportError::Io { path: path.clone(), source })?;
    let path = dir.join(SWEEP_SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&serde_json::json!({
        "seeds": report.seeds,
        "strategies": report.strategies,
    }))
    .expect("sweep summary serializes");
    std::fs::write(&path, text + "\n").map_err(|source| ReportError::Io { path, source })
}
