//! Experiment runner: sweeps, figure reproduction, bound tables, and the
//! lemma verification suites.

mod config;
mod experiment;
mod reproduce;

use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use redshard_core::analysis::{gap_bound, harmonic_log_estimate, GapBoundQuery, GapSetting};
use redshard_core::distributions::DistSpec;
use redshard_core::engine::{run_replications, simulate, SimConfig};
use redshard_core::policies::{PolicyId, PolicySpec};
use redshard_core::verify::{
    check_departure_invariance, dominance_suite, empirical_stochastic_order, DominanceMode,
};
use redshard_core::workload::{
    generate_requests, solve_lambda_for_rho, IntensityVariant, RequestParams, WorkloadSpec,
};
use redshard_core::{DownloadDist, RngFactory};

use config::{ConfigError, ExperimentConfig};
use experiment::{render_csv, run_experiment, write_csv, CsvRow};
use reproduce::{reproduce, Figure, Scale};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Internal(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Internal(m) => write!(f, "{m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl From<redshard_core::workload::WorkloadError> for CliError {
    fn from(e: redshard_core::workload::WorkloadError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<redshard_core::distributions::DistError> for CliError {
    fn from(e: redshard_core::distributions::DistError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<redshard_core::engine::EngineError> for CliError {
    fn from(e: redshard_core::engine::EngineError) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<redshard_core::verify::VerifyError> for CliError {
    fn from(e: redshard_core::verify::VerifyError) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<redshard_core::analysis::AnalysisError> for CliError {
    fn from(e: redshard_core::analysis::AnalysisError) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

const EXIT_OK: u8 = 0;
const EXIT_CONFIG: u8 = 1;
const EXIT_VIOLATED: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser)]
#[command(name = "redshard", about = "Redundant-retrieval scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one (policy, rho) cell of an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Policy id; overrides sim.policy from the config.
        #[arg(long)]
        policy: Option<String>,
        /// Target traffic intensity; omitted means the config lambda is used.
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write a JSON-lines state trace of one replication.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run the full (rho, policy) sweep from an experiment config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Restore N = 3000, reps = 100.
        #[arg(long)]
        paper_scale: bool,
    },
    /// Reproduce a built-in figure setup and test its gap verdicts.
    Reproduce {
        #[arg(long, value_enum)]
        figure: Figure,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        paper_scale: bool,
    },
    /// Print the closed-form gap bounds for a setup.
    Bounds {
        #[arg(long)]
        l_threads: usize,
        #[arg(long)]
        d_min: u32,
        /// Downloading-time spec as JSON; default exponential with --mu.
        #[arg(long)]
        dist: Option<String>,
        #[arg(long, default_value_t = 50.0)]
        mu: f64,
    },
    /// Run one lemma verification suite; exit 0 only if it passes.
    Verify {
        #[arg(long, value_enum)]
        lemma: Lemma,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Lemma {
    /// Departure-process invariance across work-conserving policies.
    Invariance,
    /// Non-preemption dominance: differential vs remaining tails.
    DominanceNp,
    /// Low-redundancy dominance: remaining tails with offset L - d_min.
    DominanceRedundancy,
    /// Virtual-bound dominance: total and mixed tail inequalities.
    DominanceNlu,
    /// Departure ordering under a used-is-shorter law.
    OrderNlu,
    /// Departure ordering under a used-is-longer mixture.
    OrderNsu,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not errors
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(EXIT_CONFIG);
            }
            print!("{e}");
            return ExitCode::from(EXIT_OK);
        }
    };
    init_worker_pool();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(CliError::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(CliError::Internal(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_INTERNAL)
        }
    }
}

/// REDSHARD_THREADS caps the replication worker pool.
fn init_worker_pool() {
    if let Ok(v) = std::env::var("REDSHARD_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(ExperimentConfig::from_json(&text)?)
}

fn emit_rows(rows: &[CsvRow], out: Option<&PathBuf>) -> Result<(), CliError> {
    match out {
        Some(path) => write_csv(path, rows)?,
        None => print!("{}", render_csv(rows)),
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Run {
            config,
            policy,
            rho,
            reps,
            seed,
            out,
            trace,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(r) = reps {
                cfg.reps = r;
            }
            let policy_spec = match policy {
                Some(id) => PolicySpec::new(
                    PolicyId::parse(&id).map_err(|e| CliError::Config(e.to_string()))?,
                ),
                None => cfg
                    .sim
                    .policy
                    .clone()
                    .ok_or_else(|| CliError::Config("sim.policy or --policy required".into()))?,
            };
            cfg.validate()?;
            let dist = cfg.dist.to_dist()?;
            let intensity = cfg
                .sweep
                .as_ref()
                .map(|s| s.intensity)
                .unwrap_or(IntensityVariant::ChunkRate);
            let (spec, rho_val) = match rho {
                Some(r) => {
                    let lambda =
                        solve_lambda_for_rho(&cfg.workload, cfg.sim.l_threads, &dist, intensity, r)?;
                    (cfg.workload.with_lambda(lambda), r)
                }
                None => (cfg.workload.clone(), f64::NAN),
            };
            let mut sim = SimConfig::new(cfg.sim.l_threads, dist, policy_spec.clone(), cfg.seed);
            sim.max_events = cfg.sim.max_events;
            let summary =
                run_replications(&spec, &sim, cfg.reps, cfg.resample_arrivals, cfg.seed)?;
            let rows = vec![CsvRow {
                rho: if rho_val.is_nan() { 0.0 } else { rho_val },
                policy: policy_spec.to_string(),
                mean: summary.mean,
                ci_low: summary.ci95.0,
                ci_high: summary.ci95.1,
                reps: summary.reps,
                seed: cfg.seed,
            }];
            emit_rows(&rows, out.as_ref().or(cfg.output.as_ref()))?;
            if let Some(path) = trace {
                sim.record_snapshots = true;
                let workload = generate_requests(&spec, &RngFactory::new(cfg.seed))?;
                let t = simulate(&workload, &sim)?;
                let mut body = String::new();
                for digest in t.snapshots.unwrap_or_default() {
                    body.push_str(
                        &serde_json::to_string(&digest)
                            .map_err(|e| CliError::Internal(e.to_string()))?,
                    );
                    body.push('\n');
                }
                fs::write(&path, body)?;
            }
            Ok(EXIT_OK)
        }
        Command::Sweep {
            config,
            seed,
            out,
            paper_scale,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if paper_scale {
                cfg.workload = cfg.workload.with_n(3000);
                cfg.reps = 100;
            }
            let rows = run_experiment(&cfg)?;
            emit_rows(&rows, out.as_ref().or(cfg.output.as_ref()))?;
            Ok(EXIT_OK)
        }
        Command::Reproduce {
            figure,
            seed,
            out,
            paper_scale,
        } => {
            let scale = if paper_scale {
                Scale::paper()
            } else {
                Scale::desk()
            };
            let outcome = reproduce(figure, scale, seed)?;
            match &out {
                Some(path) => write_csv(path, &outcome.rows)?,
                None => print!("{}", render_csv(&outcome.rows)),
            }
            for check in &outcome.checks {
                eprintln!(
                    "[{:?}] {}: {}",
                    check.verdict, check.label, check.detail
                );
            }
            Ok(if outcome.violated() {
                EXIT_VIOLATED
            } else {
                EXIT_OK
            })
        }
        Command::Bounds {
            l_threads,
            d_min,
            dist,
            mu,
        } => {
            let dist = match dist {
                Some(json) => serde_json::from_str::<DistSpec>(&json)
                    .map_err(|e| CliError::Config(format!("dist: {e}")))?
                    .to_dist()?,
                None => DownloadDist::exponential(mu),
            };
            println!("setting,gap_bound_seconds");
            for setting in GapSetting::ALL {
                let q = GapBoundQuery {
                    setting,
                    l_threads,
                    d_min,
                    dist: dist.clone(),
                };
                match gap_bound(&q) {
                    Ok(b) => println!("{},{:.6}", setting.as_str(), b),
                    Err(e) => println!("{},unsupported ({e})", setting.as_str()),
                }
            }
            if let DownloadDist::Exponential { rate } = dist {
                eprintln!(
                    "harmonic-log estimate (display only): {:.6}",
                    harmonic_log_estimate(d_min, l_threads, rate)
                );
            }
            Ok(EXIT_OK)
        }
        Command::Verify { lemma, runs, seed } => run_verify(lemma, runs, seed),
    }
}

fn run_verify(lemma: Lemma, runs: Option<usize>, seed: u64) -> Result<u8, CliError> {
    let pass = match lemma {
        Lemma::Invariance => {
            let spec = WorkloadSpec::Stochastic {
                n_requests: 25,
                lambda: 2.1,
                arrival_mixture: vec![(1.0, 1.0)],
                code_mix: vec![(1.0, (3, 1))],
            };
            let policies = [
                PolicySpec::new(PolicyId::SerptRPreemptive),
                PolicySpec::new(PolicyId::SedptRNonpreemptive),
                PolicySpec::new(PolicyId::FcfsR),
            ];
            let reps = runs.unwrap_or(20_000);
            let report = check_departure_invariance(
                &policies,
                &spec,
                3,
                &DownloadDist::exponential(1.0),
                reps,
                20,
                seed,
            )?;
            match &report.worst {
                Some(w) => eprintln!(
                    "invariance over {reps} runs, j <= {}: worst pair {} vs {} at j={} \
                     (diff {:.5}, se {:.5})",
                    report.j_count, w.policy_a, w.policy_b, w.j, w.mean_diff, w.std_err
                ),
                None => eprintln!("invariance: single policy, trivially consistent"),
            }
            report.pass
        }
        Lemma::DominanceNp => dominance_lemma(DominanceMode::DifferentialVsRemaining, runs, seed)?,
        Lemma::DominanceRedundancy => dominance_lemma(DominanceMode::RemainingOffset(0), runs, seed)?,
        Lemma::DominanceNlu => {
            dominance_lemma(DominanceMode::TotalLMinus1, runs, seed)?
                && dominance_lemma(DominanceMode::Mixed2LMinus1, runs, seed)?
        }
        Lemma::OrderNlu => {
            // High load: every thread stays busy well past t_10.
            let spec = WorkloadSpec::Explicit {
                requests: (0..12)
                    .map(|_| RequestParams {
                        arrival: 0.0,
                        k: 2,
                        n: 4,
                    })
                    .collect(),
            };
            let dist = DownloadDist::shifted_from_mu(1.0, 0.4);
            let reps = runs.unwrap_or(10_000).max(10_000);
            let mut all = true;
            for adversary in [PolicyId::SerptRPreemptive, PolicyId::AdversaryForcedSwitch] {
                let report = empirical_stochastic_order(
                    &PolicySpec::new(PolicyId::SedptNrNonpreemptive),
                    &PolicySpec::new(adversary),
                    &spec,
                    &dist,
                    3,
                    reps,
                    &[1, 5, 10],
                    seed,
                )?;
                for j in &report.per_j {
                    eprintln!(
                        "order-nlu vs {}: j={} worst margin {:+.5} at x={:.3} -> {}",
                        adversary.as_str(),
                        j.j,
                        j.worst_margin,
                        j.worst_x,
                        if j.pass { "pass" } else { "FAIL" }
                    );
                }
                all &= report.pass();
            }
            all
        }
        Lemma::OrderNsu => {
            let dist = DownloadDist::mixture(vec![(0.5, 0.4), (0.5, 1.6)]);
            let spec = WorkloadSpec::Stochastic {
                n_requests: 25,
                lambda: 1.792,
                arrival_mixture: vec![(1.0, 1.0)],
                code_mix: vec![(1.0, (3, 1))],
            };
            let reps = runs.unwrap_or(10_000).max(10_000);
            let mut all = true;
            for adversary in [PolicyId::SedptWcrPreemptive, PolicyId::AdversaryRandomAssign] {
                let report = empirical_stochastic_order(
                    &PolicySpec::new(PolicyId::SedptRNonpreemptive),
                    &PolicySpec::new(adversary),
                    &spec,
                    &dist,
                    3,
                    reps,
                    &[1, 5, 10],
                    seed,
                )?;
                for j in &report.per_j {
                    eprintln!(
                        "order-nsu vs {}: j={} worst margin {:+.5} at x={:.3} -> {}",
                        adversary.as_str(),
                        j.j,
                        j.worst_margin,
                        j.worst_x,
                        if j.pass { "pass" } else { "FAIL" }
                    );
                }
                all &= report.pass();
            }
            all
        }
    };
    if pass {
        eprintln!("verify: pass");
        Ok(EXIT_OK)
    } else {
        eprintln!("verify: FAIL");
        Ok(EXIT_VIOLATED)
    }
}

fn dominance_lemma(
    mode: DominanceMode,
    runs: Option<usize>,
    seed: u64,
) -> Result<bool, CliError> {
    let runs = runs.unwrap_or(1000);
    let report = dominance_suite(mode, runs, seed)?;
    if report.pass() {
        eprintln!("{mode:?}: {runs} coupled runs, zero violations");
    } else {
        for (case_seed, v) in report.failures.iter().take(5) {
            eprintln!(
                "{mode:?}: violation at seed {case_seed}, t = {:.6}, j = {}, {} > {}",
                v.t, v.j, v.lhs, v.rhs
            );
        }
    }
    Ok(report.pass())
}
