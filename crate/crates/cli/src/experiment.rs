//! Sweep execution and CSV assembly.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use redshard_core::analysis::{gap_bound, GapBoundQuery, GapSetting};
use redshard_core::engine::{run_replications, SimConfig};
use redshard_core::policies::PolicySpec;
use redshard_core::workload::solve_lambda_for_rho;

use crate::config::{ConfigError, ExperimentConfig};
use crate::CliError;

pub const CSV_HEADER: &str = "rho,policy,mean_flow_time,ci_low,ci_high,reps,seed";

#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub rho: f64,
    pub policy: String,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub reps: usize,
    pub seed: u64,
}

impl CsvRow {
    pub fn to_line(&self) -> String {
        format!(
            "{:.6},{},{:.6},{:.6},{:.6},{},{}",
            self.rho, self.policy, self.mean, self.ci_low, self.ci_high, self.reps, self.seed
        )
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one rho cell; shared by every policy at that rho so the
/// workloads are common random numbers across the policy columns.
pub fn cell_seed(master: u64, rho_index: usize) -> u64 {
    splitmix(master ^ (rho_index as u64).wrapping_mul(0xa076_1d64_78bd_642f))
}

/// Runs the full sweep: one row per (rho, policy) in deterministic order,
/// then one row per closed-form gap bound computable for the setup.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<CsvRow>, CliError> {
    cfg.validate()?;
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| ConfigError("sweep section is required".into()))?;
    let dist = cfg.dist.to_dist().map_err(|e| ConfigError(e.to_string()))?;
    let cells: Vec<(usize, &PolicySpec)> = sweep
        .rho_grid
        .iter()
        .enumerate()
        .flat_map(|(ri, _)| sweep.policies.iter().map(move |p| (ri, p)))
        .collect();
    let mut rows: Vec<CsvRow> = cells
        .par_iter()
        .map(|&(ri, policy)| -> Result<CsvRow, CliError> {
            let rho = sweep.rho_grid[ri];
            let lambda =
                solve_lambda_for_rho(&cfg.workload, cfg.sim.l_threads, &dist, sweep.intensity, rho)?;
            let spec = cfg.workload.with_lambda(lambda);
            let mut sim = SimConfig::new(cfg.sim.l_threads, dist.clone(), policy.clone(), cfg.seed);
            sim.max_events = cfg.sim.max_events;
            let seed = cell_seed(cfg.seed, ri);
            let summary = run_replications(&spec, &sim, cfg.reps, cfg.resample_arrivals, seed)?;
            Ok(CsvRow {
                rho,
                policy: policy.to_string(),
                mean: summary.mean,
                ci_low: summary.ci95.0,
                ci_high: summary.ci95.1,
                reps: summary.reps,
                seed,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    rows.extend(bound_rows(cfg, &dist));
    Ok(rows)
}

/// Closed-form gap bounds for this setup, encoded as extra rows with
/// rho = 0 and reps = 0.
pub fn bound_rows(cfg: &ExperimentConfig, dist: &redshard_core::DownloadDist) -> Vec<CsvRow> {
    let Some(d_min) = cfg.workload.support_min_distance() else {
        return Vec::new();
    };
    GapSetting::ALL
        .iter()
        .filter_map(|&setting| {
            let q = GapBoundQuery {
                setting,
                l_threads: cfg.sim.l_threads,
                d_min,
                dist: dist.clone(),
            };
            gap_bound(&q).ok().map(|bound| CsvRow {
                rho: 0.0,
                policy: format!("gap_bound_{}", setting.as_str()),
                mean: bound,
                ci_low: bound,
                ci_high: bound,
                reps: 0,
                seed: cfg.seed,
            })
        })
        .collect()
}

/// Writes header plus rows to `path` atomically: the data lands in a
/// temporary sibling first and is renamed into place only when complete.
pub fn write_csv(path: &Path, rows: &[CsvRow]) -> std::io::Result<()> {
    let tmp = path.with_extension("csv.tmp");
    let result = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        writeln!(f, "{CSV_HEADER}")?;
        for row in rows {
            writeln!(f, "{}", row.to_line())?;
        }
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub fn render_csv(rows: &[CsvRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_line());
        out.push('\n');
    }
    out
}
