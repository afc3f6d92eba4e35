//! Optimality-gap metrics, the evaluation harness, and size-ladder
//! benchmarking across solvers.
//!
//! Gaps are `C_min / C* - 1` against the exact oracle where branch-and-bound
//! proves optimality, and against the best-known makespan otherwise; every
//! report row records which denominator it used. Best-known denominators for
//! instance files are cached in a `.cstar.json` sidecar so gap numbers stay
//! stable across sessions.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{bnb_solve, sa_solve, BnbConfig, SaConfig, SaError};
use crate::instance::{generate, FjspInstance, GeneratorSpec, InstanceError};
use crate::neural::QNetwork;
use crate::qlearn::{self, TrainError};
use crate::sched::{decode, SchedError};
use crate::Tick;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error(transparent)]
    Sa(#[from] SaError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("failed to parse sidecar: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Relative error of a candidate makespan against C*.
pub fn optimality_gap(c_min: Tick, c_star: Tick) -> Result<f64, ReportError> {
    if c_star < 1 {
        return Err(ReportError::Parameter(format!(
            "c_star must be >= 1, got {c_star}"
        )));
    }
    Ok(c_min as f64 / c_star as f64 - 1.0)
}

/// Where a row's C* denominators came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CstarSource {
    #[serde(rename = "exact")]
    Exact,
    #[serde(rename = "best-known")]
    BestKnown,
}

impl fmt::Display for CstarSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CstarSource::Exact => write!(f, "exact"),
            CstarSource::BestKnown => write!(f, "best-known"),
        }
    }
}

/// One aggregated report row: one solver at one instance-set size.
#[derive(Debug, Clone, PartialEq)]
pub struct GapRow {
    pub size: String,
    pub method: String,
    /// Mean gap over successful samples; missing when none succeeded.
    pub mean_gap: Option<f64>,
    pub success_rate: f64,
    pub mean_runtime_s: f64,
    pub cstar_source: CstarSource,
    pub n_samples: usize,
}

/// A solver under evaluation.
pub enum Solver<'a> {
    Fifo,
    Sa(SaConfig),
    Bnb(BnbConfig),
    Dql(&'a QNetwork),
}

impl Solver<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Solver::Fifo => "fifo",
            Solver::Sa(_) => "sa",
            Solver::Bnb(_) => "bnb",
            Solver::Dql(_) => "dql",
        }
    }
}

/// Outcome of one solver run on one instance. `makespan` is `None` when the
/// learned solver gridlocked; classical solvers always succeed.
#[derive(Debug, Clone, Copy)]
pub struct SolveRun {
    pub makespan: Option<Tick>,
    pub runtime_s: f64,
}

/// Runs one solver on one instance, timing the solve call only.
pub fn run_solver_once(
    solver: &Solver,
    instance: &FjspInstance,
    run_seed: u64,
) -> Result<SolveRun, ReportError> {
    match solver {
        Solver::Fifo => {
            let t0 = Instant::now();
            let sol = crate::baselines::fifo_solve(instance);
            let runtime_s = t0.elapsed().as_secs_f64();
            let makespan = decode(&sol, instance)?.makespan;
            Ok(SolveRun {
                makespan: Some(makespan),
                runtime_s,
            })
        }
        Solver::Sa(cfg) => {
            let cfg = SaConfig {
                seed: cfg.seed.wrapping_add(run_seed),
                ..cfg.clone()
            };
            let t0 = Instant::now();
            let (sol, _) = sa_solve(instance, &cfg)?;
            let runtime_s = t0.elapsed().as_secs_f64();
            let makespan = decode(&sol, instance)?.makespan;
            Ok(SolveRun {
                makespan: Some(makespan),
                runtime_s,
            })
        }
        Solver::Bnb(cfg) => {
            let t0 = Instant::now();
            let res = bnb_solve(instance, cfg);
            let runtime_s = t0.elapsed().as_secs_f64();
            Ok(SolveRun {
                makespan: Some(res.makespan),
                runtime_s,
            })
        }
        Solver::Dql(net) => {
            let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
            let t0 = Instant::now();
            let (_, stats) = qlearn::rollout(net, instance, 0.0, 1.0, &mut rng)?;
            let runtime_s = t0.elapsed().as_secs_f64();
            Ok(SolveRun {
                makespan: stats.makespan,
                runtime_s,
            })
        }
    }
}

/// Thread pool for instance-level parallelism. `FJSP_THREADS` overrides the
/// worker count; the default is the available parallelism.
fn thread_pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = std::env::var("FJSP_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n > 0)
        {
            builder = builder.num_threads(n);
        }
        builder.build().expect("thread pool")
    })
}

/// Runs a solver over an instance set in parallel, preserving input order.
pub fn run_solver_batch(
    solver: &Solver,
    instances: &[FjspInstance],
    base_seed: u64,
) -> Result<Vec<SolveRun>, ReportError> {
    thread_pool().install(|| {
        instances
            .par_iter()
            .enumerate()
            .map(|(i, instance)| run_solver_once(solver, instance, base_seed.wrapping_add(i as u64)))
            .collect()
    })
}

/// Per-instance denominators via branch-and-bound: (makespan, proved).
pub fn compute_denominators(
    instances: &[FjspInstance],
    cfg: &BnbConfig,
) -> Vec<(Tick, bool)> {
    thread_pool().install(|| {
        instances
            .par_iter()
            .map(|instance| {
                let res = bnb_solve(instance, cfg);
                (res.makespan, res.proved)
            })
            .collect()
    })
}

/// Aggregates solver runs against per-instance denominators into one row.
pub fn gap_row(
    size: &str,
    method: &str,
    runs: &[SolveRun],
    denominators: &[(Tick, bool)],
) -> Result<GapRow, ReportError> {
    assert_eq!(runs.len(), denominators.len());
    let mut gap_sum = 0.0;
    let mut successes = 0usize;
    let mut runtime_sum = 0.0;
    let mut all_exact = true;
    for (run, &(denom, exact)) in runs.iter().zip(denominators) {
        runtime_sum += run.runtime_s;
        all_exact &= exact;
        if let Some(ms) = run.makespan {
            gap_sum += optimality_gap(ms, denom)?;
            successes += 1;
        }
    }
    Ok(GapRow {
        size: size.to_string(),
        method: method.to_string(),
        mean_gap: (successes > 0).then(|| gap_sum / successes as f64),
        success_rate: successes as f64 / runs.len() as f64,
        mean_runtime_s: runtime_sum / runs.len() as f64,
        cstar_source: if all_exact {
            CstarSource::Exact
        } else {
            CstarSource::BestKnown
        },
        n_samples: runs.len(),
    })
}

/// Generates the instance set for one ladder size, deterministically.
pub fn generate_instance_set(
    template: &GeneratorSpec,
    n_jobs: usize,
    n_machines: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<FjspInstance>, ReportError> {
    let spec = GeneratorSpec {
        n_jobs,
        n_machines,
        ..template.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((n_jobs as u64) << 32 | n_machines as u64));
    (0..samples)
        .map(|_| Ok(generate(&spec, rng.random::<u64>())?))
        .collect()
}

/// Evaluates each solver on each size of the ladder. Denominators per
/// instance are the proven optimum where branch-and-bound finishes, else the
/// best makespan any evaluated solver (including the incumbent) produced.
pub fn bench(
    sizes: &[(usize, usize)],
    samples: usize,
    template: &GeneratorSpec,
    seed: u64,
    solvers: &[Solver],
    oracle_cfg: &BnbConfig,
) -> Result<Vec<GapRow>, ReportError> {
    if samples == 0 {
        return Err(ReportError::Parameter("samples must be positive".into()));
    }
    let mut rows = Vec::new();
    for &(n_jobs, n_machines) in sizes {
        let label = format!("{n_jobs}x{n_machines}");
        let instances = generate_instance_set(template, n_jobs, n_machines, samples, seed)?;
        let oracle = compute_denominators(&instances, oracle_cfg);

        let mut all_runs = Vec::new();
        for solver in solvers {
            all_runs.push(run_solver_batch(solver, &instances, seed)?);
        }
        // Fold every observed makespan into unproven denominators so
        // best-known is the best across the whole repo's solvers.
        let denominators: Vec<(Tick, bool)> = oracle
            .iter()
            .enumerate()
            .map(|(i, &(ms, proved))| {
                if proved {
                    (ms, true)
                } else {
                    let best = all_runs
                        .iter()
                        .filter_map(|runs| runs[i].makespan)
                        .fold(ms, Tick::min);
                    (best, false)
                }
            })
            .collect();
        for (solver, runs) in solvers.iter().zip(&all_runs) {
            rows.push(gap_row(&label, solver.name(), &runs, &denominators)?);
        }
    }
    Ok(rows)
}

/// Report CSV with columns
/// `size,method,mean_gap,success_rate,mean_runtime_s,cstar_source,n_samples`.
/// With fixed seeds everything except `mean_runtime_s` is reproducible
/// byte-for-byte.
pub fn report_to_csv(rows: &[GapRow]) -> String {
    let mut out = String::from("size,method,mean_gap,success_rate,mean_runtime_s,cstar_source,n_samples\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.size,
            r.method,
            r.mean_gap.map(|g| format!("{g:.6}")).unwrap_or_default(),
            r.success_rate,
            format_runtime(r.mean_runtime_s),
            r.cstar_source,
            r.n_samples
        ));
    }
    out
}

fn format_runtime(s: f64) -> String {
    format!("{s:.6}")
}

/// Aligned text table of the same rows.
pub fn format_table(rows: &[GapRow]) -> String {
    let headers = [
        "size",
        "method",
        "mean_gap",
        "success_rate",
        "mean_runtime_s",
        "cstar_source",
        "n_samples",
    ];
    let mut cells: Vec<[String; 7]> = vec![headers.map(str::to_string)];
    for r in rows {
        cells.push([
            r.size.clone(),
            r.method.clone(),
            r.mean_gap.map(|g| format!("{g:.3}")).unwrap_or_else(|| "-".into()),
            format!("{:.3}", r.success_rate),
            format!("{:.4}", r.mean_runtime_s),
            r.cstar_source.to_string(),
            r.n_samples.to_string(),
        ]);
    }
    let mut widths = [0usize; 7];
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    for (i, row) in cells.iter().enumerate() {
        for (c, w) in row.iter().zip(widths) {
            out.push_str(&format!("{c:<w$}  "));
        }
        out.pop();
        out.pop();
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    out
}

// --- best-known sidecar cache ----------------------------------------------

/// Cached denominator for an instance file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CstarRecord {
    pub makespan: Tick,
    pub source: CstarSource,
}

/// `foo.json` -> `foo.cstar.json`.
pub fn sidecar_path(instance_path: &Path) -> PathBuf {
    let stem = instance_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("instance");
    instance_path.with_file_name(format!("{stem}.cstar.json"))
}

/// Loads the cached denominator, or computes one with branch-and-bound and
/// writes the sidecar. Exact records are final; best-known records are
/// re-attempted in case the budget now suffices to prove.
pub fn load_or_compute_denominator(
    instance_path: &Path,
    instance: &FjspInstance,
    cfg: &BnbConfig,
) -> Result<CstarRecord, ReportError> {
    let side = sidecar_path(instance_path);
    let cached: Option<CstarRecord> = match std::fs::read_to_string(&side) {
        Ok(s) => Some(serde_json::from_str(&s)?),
        Err(_) => None,
    };
    if let Some(rec) = cached {
        if rec.source == CstarSource::Exact {
            return Ok(rec);
        }
    }
    let res = bnb_solve(instance, cfg);
    let mut rec = CstarRecord {
        makespan: res.makespan,
        source: if res.proved {
            CstarSource::Exact
        } else {
            CstarSource::BestKnown
        },
    };
    if let Some(old) = cached {
        if rec.source == CstarSource::BestKnown {
            rec.makespan = rec.makespan.min(old.makespan);
        }
    }
    write_sidecar(&side, &rec)?;
    Ok(rec)
}

/// Lowers a best-known record after a solver beat it. Exact records never
/// change.
pub fn update_best_known(
    instance_path: &Path,
    observed_makespan: Tick,
) -> Result<Option<CstarRecord>, ReportError> {
    let side = sidecar_path(instance_path);
    let Ok(s) = std::fs::read_to_string(&side) else {
        return Ok(None);
    };
    let mut rec: CstarRecord = serde_json::from_str(&s)?;
    if rec.source == CstarSource::BestKnown && observed_makespan < rec.makespan {
        rec.makespan = observed_makespan;
        write_sidecar(&side, &rec)?;
        return Ok(Some(rec));
    }
    Ok(None)
}

fn write_sidecar(path: &Path, rec: &CstarRecord) -> Result<(), ReportError> {
    let mut s = serde_json::to_string_pretty(rec).expect("sidecar serialization");
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::GeneratorSpec;

    #[test]
    fn gap_examples() {
        assert_eq!(optimality_gap(5, 5).unwrap(), 0.0);
        assert!((optimality_gap(6, 5).unwrap() - 0.2).abs() < 1e-12);
        assert!(optimality_gap(5, 0).is_err());
    }

    #[test]
    fn gap_prints_like_reference_rows() {
        // A gap of 0.062 must print as "0.062" in the table.
        let row = GapRow {
            size: "100x20".into(),
            method: "dql".into(),
            mean_gap: Some(0.062),
            success_rate: 1.0,
            mean_runtime_s: 0.5,
            cstar_source: CstarSource::BestKnown,
            n_samples: 128,
        };
        assert!(format_table(&[row]).contains("0.062"));
    }

    #[test]
    fn fifo_eval_has_full_success_rate() {
        let template = GeneratorSpec::new(5, 3);
        let instances = generate_instance_set(&template, 5, 3, 16, 7).unwrap();
        let denoms = compute_denominators(&instances, &BnbConfig::default());
        let runs = run_solver_batch(&Solver::Fifo, &instances, 7).unwrap();
        let row = gap_row("5x3", "fifo", &runs, &denoms).unwrap();
        assert_eq!(row.success_rate, 1.0);
        assert_eq!(row.n_samples, 16);
        assert!(row.mean_gap.unwrap() >= -1e-12);
    }

    #[test]
    fn bnb_self_comparison_gap_is_zero_when_proved() {
        let template = GeneratorSpec::new(3, 2);
        let instances = generate_instance_set(&template, 3, 2, 8, 1).unwrap();
        let denoms = compute_denominators(&instances, &BnbConfig::default());
        assert!(denoms.iter().all(|&(_, proved)| proved));
        let runs = run_solver_batch(&Solver::Bnb(BnbConfig::default()), &instances, 1).unwrap();
        let row = gap_row("3x2", "bnb", &runs, &denoms).unwrap();
        assert_eq!(row.mean_gap, Some(0.0));
        assert_eq!(row.cstar_source, CstarSource::Exact);
    }

    #[test]
    fn report_csv_schema_and_determinism() {
        let template = GeneratorSpec::new(3, 2);
        let run = || {
            let rows = bench(
                &[(3, 2)],
                4,
                &template,
                11,
                &[Solver::Fifo, Solver::Bnb(BnbConfig::default())],
                &BnbConfig::default(),
            )
            .unwrap();
            report_to_csv(&rows)
        };
        let a = run();
        let b = run();
        assert!(a.starts_with(
            "size,method,mean_gap,success_rate,mean_runtime_s,cstar_source,n_samples\n"
        ));
        // Deterministic modulo the runtime column.
        let strip = |s: &str| {
            s.lines()
                .map(|l| {
                    let mut f: Vec<&str> = l.split(',').collect();
                    if f.len() == 7 {
                        f[4] = "";
                    }
                    f.join(",")
                })
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(strip(&a), strip(&b));
    }

    #[test]
    fn sidecar_cache_round_trip_and_update() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.json");
        let inst = crate::instance::generate(&GeneratorSpec::new(3, 2), 5).unwrap();
        crate::instance::save(&inst, &path).unwrap();

        let rec = load_or_compute_denominator(&path, &inst, &BnbConfig::default()).unwrap();
        assert_eq!(rec.source, CstarSource::Exact);
        // Cached now; a second call must agree without recomputing.
        let again = load_or_compute_denominator(&path, &inst, &BnbConfig::default()).unwrap();
        assert_eq!(rec, again);
        // Exact records never drop.
        assert!(update_best_known(&path, 1).unwrap().is_none());

        // A best-known record updates downward.
        let forced = CstarRecord {
            makespan: rec.makespan + 10,
            source: CstarSource::BestKnown,
        };
        write_sidecar(&sidecar_path(&path), &forced).unwrap();
        let updated = update_best_known(&path, rec.makespan + 4).unwrap().unwrap();
        assert_eq!(updated.makespan, rec.makespan + 4);
    }
}
