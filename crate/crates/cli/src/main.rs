//! `fjsp`: generate instances, train the Q-network, solve single instances,
//! and benchmark solvers on size ladders.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fjsp_core::baselines::{bnb_solve, sa_solve, BnbConfig, SaConfig};
use fjsp_core::env;
use fjsp_core::instance::{self, FjspInstance, GeneratorSpec};
use fjsp_core::neural::{self, QNetwork};
use fjsp_core::qlearn::{self, metrics_to_csv, TrainConfig, Trainer};
use fjsp_core::report::{self, Solver};
use fjsp_core::sched;

#[derive(Parser)]
#[command(name = "fjsp", version, about = "Flexible job-shop scheduling solver suite")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate random instance files.
    Gen(GenArgs),
    /// Train the Q-network; writes metrics CSV and checkpoints.
    Train(TrainArgs),
    /// Solve one instance with one solver.
    Solve(SolveArgs),
    /// Evaluate one solver on generated sizes or instance files.
    Eval(EvalArgs),
    /// Size-ladder benchmark across solvers.
    Bench(BenchArgs),
}

/// Generator flags shared by every subcommand that creates instances.
#[derive(Args, Clone, Default)]
struct GenFlags {
    /// Number of jobs.
    #[arg(long)]
    jobs: Option<usize>,
    /// Number of machines.
    #[arg(long)]
    machines: Option<usize>,
    /// Average operations per job.
    #[arg(long)]
    avg_ops: Option<f64>,
    /// Probability of dropping each compatibility edge.
    #[arg(long)]
    drop: Option<f64>,
    /// Minimum base duration in ticks.
    #[arg(long)]
    dur_lo: Option<u64>,
    /// Maximum base duration in ticks.
    #[arg(long)]
    dur_hi: Option<u64>,
    /// Minimum compatibility weight.
    #[arg(long)]
    w_lo: Option<f64>,
    /// Maximum compatibility weight.
    #[arg(long)]
    w_hi: Option<f64>,
}

impl GenFlags {
    fn resolve(&self, cfg: &ConfigFile) -> Result<GeneratorSpec> {
        let jobs = pick(self.jobs, cfg, "jobs")?.ok_or_else(|| anyhow!("--jobs is required"))?;
        let machines = pick(self.machines, cfg, "machines")?
            .ok_or_else(|| anyhow!("--machines is required"))?;
        let mut spec = GeneratorSpec::new(jobs, machines);
        if let Some(v) = pick(self.avg_ops, cfg, "avg_ops")? {
            spec.avg_ops_per_job = v;
        }
        if let Some(v) = pick(self.drop, cfg, "drop")? {
            spec.drop_fraction = v;
        }
        spec.duration_range = (
            pick(self.dur_lo, cfg, "dur_lo")?.unwrap_or(spec.duration_range.0),
            pick(self.dur_hi, cfg, "dur_hi")?.unwrap_or(spec.duration_range.1),
        );
        spec.weight_range = (
            pick(self.w_lo, cfg, "w_lo")?.unwrap_or(spec.weight_range.0),
            pick(self.w_hi, cfg, "w_hi")?.unwrap_or(spec.weight_range.1),
        );
        Ok(spec)
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    gen: GenFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file (or directory with --count > 1).
    #[arg(short, long)]
    out: PathBuf,
    /// Number of instances to generate.
    #[arg(long, default_value_t = 1)]
    count: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    gen: GenFlags,
    /// Flat key = value config file; flags override file entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Resume from a training checkpoint (optionally with a new instance
    /// distribution from the generator flags).
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trajectories: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    target_sync: Option<usize>,
    #[arg(long)]
    buffer: Option<usize>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    loops: Option<usize>,
    #[arg(long)]
    oracle_nodes: Option<u64>,
    /// Write a resumable checkpoint every N epochs (plus the final one).
    #[arg(long, default_value_t = 25)]
    checkpoint_every: usize,
    /// Output directory for metrics.csv, net.json, checkpoint.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    /// fifo | sa | bnb | dql
    #[arg(long)]
    solver: String,
    /// Instance file.
    instance: PathBuf,
    /// Network file for --solver dql.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// SA steps.
    #[arg(long)]
    sa_steps: Option<usize>,
    /// Branch-and-bound node budget.
    #[arg(long)]
    node_limit: Option<u64>,
    /// Write the solution JSON here.
    #[arg(long)]
    solution_out: Option<PathBuf>,
    /// Write the schedule CSV here.
    #[arg(long)]
    schedule_out: Option<PathBuf>,
    /// Write the per-tick trajectory CSV here (dql only).
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// fifo | sa | bnb | dql
    #[arg(long)]
    solver: String,
    /// Comma-separated size ladder, e.g. 5x3,8x4.
    #[arg(long)]
    sizes: Option<String>,
    /// Directory of instance files (alternative to --sizes).
    #[arg(long)]
    instances: Option<PathBuf>,
    /// Samples per size when generating.
    #[arg(long, default_value_t = 16)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    sa_steps: Option<usize>,
    #[arg(long)]
    node_limit: Option<u64>,
    #[command(flatten)]
    gen: GenFlags,
    /// Report CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated size ladder, e.g. 3x2,5x3,8x4.
    #[arg(long, default_value = "3x2,5x3,8x4")]
    sizes: String,
    #[arg(long, default_value_t = 16)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Network file; adds the dql row when present.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    sa_steps: Option<usize>,
    #[arg(long)]
    node_limit: Option<u64>,
    #[command(flatten)]
    gen: GenFlags,
    /// Report CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Gen(args) => cmd_gen(args),
        Cmd::Train(args) => cmd_train(args),
        Cmd::Solve(args) => cmd_solve(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Bench(args) => cmd_bench(args),
    }
}

// --- config file + logging ---------------------------------------------------

type ConfigFile = BTreeMap<String, String>;

/// Flat `key = value` lines; `#` starts a comment.
fn read_config(path: Option<&Path>) -> Result<ConfigFile> {
    let mut map = ConfigFile::new();
    let Some(path) = path else {
        return Ok(map);
    };
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected key = value", lineno + 1))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Flag value, else config-file value, else None.
fn pick<T: std::str::FromStr>(flag: Option<T>, cfg: &ConfigFile, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if flag.is_some() {
        return Ok(flag);
    }
    match cfg.get(key) {
        Some(raw) => raw
            .parse::<T>()
            .map(Some)
            .map_err(|e| anyhow!("config key {key}: {e}")),
        None => Ok(None),
    }
}

fn fnv1a64(s: &str) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Every run logs its seed and a hash of the fully resolved configuration.
fn log_run(cmd: &str, seed: u64, config_repr: &str) {
    eprintln!(
        "run: cmd={cmd} seed={seed} config_hash={:016x}",
        fnv1a64(config_repr)
    );
}

fn log_network(net: &QNetwork) {
    eprintln!(
        "network: d={} k={} params={}",
        net.d,
        net.k,
        net.n_params()
    );
}

fn parse_sizes(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(|part| {
            let (a, b) = part
                .trim()
                .split_once(['x', 'X'])
                .ok_or_else(|| anyhow!("size {part:?} is not of the form JOBSxMACHINES"))?;
            Ok((a.parse()?, b.parse()?))
        })
        .collect()
}

// --- subcommands ---------------------------------------------------------------

fn cmd_gen(args: GenArgs) -> Result<()> {
    let spec = args.gen.resolve(&ConfigFile::new())?;
    log_run("gen", args.seed, &format!("{spec:?} count={}", args.count));
    if args.count == 1 {
        let inst = instance::generate(&spec, args.seed)?;
        instance::save(&inst, &args.out)?;
        println!("wrote {} ({} ops)", args.out.display(), inst.n_ops());
    } else {
        fs::create_dir_all(&args.out)?;
        for i in 0..args.count {
            let inst = instance::generate(&spec, args.seed.wrapping_add(i as u64))?;
            let path = args.out.join(format!("instance_{i:04}.json"));
            instance::save(&inst, &path)?;
        }
        println!("wrote {} instances to {}", args.count, args.out.display());
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg_file = read_config(args.config.as_deref())?;
    fs::create_dir_all(&args.out_dir)?;

    let mut trainer = match &args.resume {
        Some(path) => {
            let mut t = Trainer::load_checkpoint(path)
                .with_context(|| format!("loading checkpoint {}", path.display()))?;
            // Fine-tuning: a new instance distribution may be supplied.
            if args.gen.jobs.is_some() || args.gen.machines.is_some() {
                t.gen = args.gen.resolve(&cfg_file)?;
            }
            if let Some(epochs) = pick(args.epochs, &cfg_file, "epochs")? {
                t.config.epochs = epochs;
            }
            t
        }
        None => {
            let gen = args.gen.resolve(&cfg_file)?;
            let mut config = TrainConfig::default();
            config.epochs = pick(args.epochs, &cfg_file, "epochs")?
                .ok_or_else(|| anyhow!("--epochs is required"))?;
            config.seed = pick(args.seed, &cfg_file, "seed")?.unwrap_or(0);
            if let Some(v) = pick(args.trajectories, &cfg_file, "trajectories")? {
                config.trajectories_per_epoch = v;
            }
            if let Some(v) = pick(args.iters, &cfg_file, "iters")? {
                config.train_iters_per_epoch = v;
            }
            if let Some(v) = pick(args.batch_size, &cfg_file, "batch_size")? {
                config.batch_size = v;
            }
            if let Some(v) = pick(args.gamma, &cfg_file, "gamma")? {
                config.gamma = v;
            }
            if let Some(v) = pick(args.epsilon, &cfg_file, "epsilon")? {
                config.epsilon = v;
            }
            if let Some(v) = pick(args.lr, &cfg_file, "lr")? {
                config.lr = v;
            }
            if let Some(v) = pick(args.target_sync, &cfg_file, "target_sync")? {
                config.target_sync_period = v;
            }
            if let Some(v) = pick(args.buffer, &cfg_file, "buffer")? {
                config.buffer_capacity = v;
            }
            if let Some(v) = pick(args.eval_episodes, &cfg_file, "eval_episodes")? {
                config.eval_episodes = v;
            }
            if let Some(v) = pick(args.embed_dim, &cfg_file, "embed_dim")? {
                config.embed_dim = v;
            }
            if let Some(v) = pick(args.loops, &cfg_file, "loops")? {
                config.loops = v;
            }
            if let Some(v) = pick(args.oracle_nodes, &cfg_file, "oracle_nodes")? {
                config.oracle_node_limit = v;
            }
            Trainer::new(config, gen)?
        }
    };

    log_run(
        "train",
        trainer.config.seed,
        &format!("{:?} {:?}", trainer.config, trainer.gen),
    );
    log_network(&trainer.net);

    let metrics_path = args.out_dir.join("metrics.csv");
    let checkpoint_path = args.out_dir.join("checkpoint.json");
    let net_path = args.out_dir.join("net.json");
    let mut metrics = Vec::new();

    while trainer.epoch < trainer.config.epochs {
        let row = match trainer.run_epoch() {
            Ok(row) => row,
            Err(e @ qlearn::TrainError::NonFiniteLoss { .. }) => {
                let diag = args.out_dir.join("diagnostic.json");
                trainer.save_checkpoint(&diag)?;
                return Err(anyhow!(e).context(format!(
                    "training aborted; diagnostic checkpoint at {}",
                    diag.display()
                )));
            }
            Err(e) => return Err(e.into()),
        };
        eprintln!(
            "epoch {}: loss={:.6} r_train={:.3} r_eval={:.3} success={:.3} rel_err={} source={}",
            row.epoch,
            row.loss,
            row.r_train,
            row.r_eval,
            row.success_rate,
            row.relative_err
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".into()),
            if row.denominator_exact { "exact" } else { "best-known" },
        );
        metrics.push(row);
        fs::write(&metrics_path, metrics_to_csv(&metrics))?;
        if trainer.epoch % args.checkpoint_every.max(1) == 0 {
            trainer.save_checkpoint(&checkpoint_path)?;
        }
    }
    trainer.save_checkpoint(&checkpoint_path)?;
    neural::save_network(&trainer.net, &net_path)?;
    println!(
        "trained {} epochs; metrics at {}, network at {}",
        trainer.epoch,
        metrics_path.display(),
        net_path.display()
    );
    Ok(())
}

fn load_dql(checkpoint: Option<&Path>) -> Result<QNetwork> {
    let path = checkpoint.ok_or_else(|| anyhow!("--checkpoint is required for --solver dql"))?;
    let net = neural::load_network(path)
        .with_context(|| format!("loading network {}", path.display()))?;
    log_network(&net);
    Ok(net)
}

fn cmd_solve(args: SolveArgs) -> Result<()> {
    let inst = instance::load(&args.instance)
        .with_context(|| format!("loading instance {}", args.instance.display()))?;
    log_run(
        "solve",
        args.seed,
        &format!("solver={} instance={}", args.solver, args.instance.display()),
    );

    let (solution, extra) = match args.solver.as_str() {
        "fifo" => (fjsp_core::baselines::fifo_solve(&inst), String::new()),
        "sa" => {
            let cfg = SaConfig {
                steps: args.sa_steps.unwrap_or(SaConfig::default().steps),
                seed: args.seed,
                ..SaConfig::default()
            };
            let (sol, _) = sa_solve(&inst, &cfg)?;
            (sol, String::new())
        }
        "bnb" => {
            let cfg = BnbConfig {
                node_limit: args.node_limit.unwrap_or(BnbConfig::default().node_limit),
                time_limit_s: None,
            };
            let res = bnb_solve(&inst, &cfg);
            let extra = format!(" proof={} nodes={}", res.proved, res.nodes);
            (res.solution, extra)
        }
        "dql" => {
            let net = load_dql(args.checkpoint.as_deref())?;
            let mut rng = rand_seeded(args.seed);
            let (_, stats) = qlearn::rollout(&net, &inst, 0.0, 1.0, &mut rng)?;
            if let Some(path) = &args.trace_out {
                env::write_trajectory_csv(&stats.steps, path)?;
            }
            match stats.solution {
                Some(sol) => (sol, String::new()),
                None => bail!("dql rollout gridlocked on this instance"),
            }
        }
        other => bail!("unknown solver {other:?} (expected fifo|sa|bnb|dql)"),
    };

    let schedule = sched::decode(&solution, &inst)?;
    println!(
        "solver={} makespan={}{}",
        args.solver, schedule.makespan, extra
    );
    if let Some(path) = &args.solution_out {
        sched::save_solution(&solution, path)?;
    }
    if let Some(path) = &args.schedule_out {
        fs::write(path, sched::schedule_to_csv(&schedule, &solution))?;
    }
    Ok(())
}

fn rand_seeded(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

fn build_solver<'a>(
    name: &str,
    net: Option<&'a QNetwork>,
    sa_steps: Option<usize>,
    node_limit: Option<u64>,
) -> Result<Solver<'a>> {
    Ok(match name {
        "fifo" => Solver::Fifo,
        "sa" => Solver::Sa(SaConfig {
            steps: sa_steps.unwrap_or(SaConfig::default().steps),
            ..SaConfig::default()
        }),
        "bnb" => Solver::Bnb(BnbConfig {
            node_limit: node_limit.unwrap_or(BnbConfig::default().node_limit),
            time_limit_s: None,
        }),
        "dql" => Solver::Dql(net.ok_or_else(|| anyhow!("--checkpoint required for dql"))?),
        other => bail!("unknown solver {other:?} (expected fifo|sa|bnb|dql)"),
    })
}

fn write_report(rows: &[report::GapRow], out: Option<&Path>) -> Result<()> {
    print!("{}", report::format_table(rows));
    if let Some(path) = out {
        fs::write(path, report::report_to_csv(rows))?;
        eprintln!("report: wrote {}", path.display());
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    log_run(
        "eval",
        args.seed,
        &format!(
            "solver={} sizes={:?} instances={:?} samples={}",
            args.solver, args.sizes, args.instances, args.samples
        ),
    );
    let net = if args.solver == "dql" {
        Some(load_dql(args.checkpoint.as_deref())?)
    } else {
        None
    };
    let solver = build_solver(&args.solver, net.as_ref(), args.sa_steps, args.node_limit)?;
    let oracle_cfg = BnbConfig {
        node_limit: args.node_limit.unwrap_or(BnbConfig::default().node_limit),
        time_limit_s: None,
    };

    let rows = match (&args.sizes, &args.instances) {
        (Some(sizes), None) => {
            let mut template = GenFlags {
                jobs: Some(1),
                machines: Some(1),
                ..args.gen.clone()
            }
            .resolve(&ConfigFile::new())?;
            template.n_jobs = 1;
            template.n_machines = 1;
            report::bench(
                &parse_sizes(sizes)?,
                args.samples,
                &template,
                args.seed,
                std::slice::from_ref(&solver),
                &oracle_cfg,
            )?
        }
        (None, Some(dir)) => eval_instance_files(dir, &solver, args.seed, &oracle_cfg)?,
        _ => bail!("exactly one of --sizes or --instances is required"),
    };
    write_report(&rows, args.out.as_deref())
}

/// Evaluates a solver over a directory of instance files, using (and
/// updating) the per-file best-known sidecars.
fn eval_instance_files(
    dir: &Path,
    solver: &Solver,
    seed: u64,
    oracle_cfg: &BnbConfig,
) -> Result<Vec<report::GapRow>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "json")
                && !p
                    .file_name()
                    .is_some_and(|n| n.to_string_lossy().ends_with(".cstar.json"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no instance files in {}", dir.display());
    }
    let instances: Vec<FjspInstance> = paths
        .iter()
        .map(|p| instance::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<_>>()?;

    // Group by size label, preserving first-seen order.
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, inst) in instances.iter().enumerate() {
        let label = format!("{}x{}", inst.jobs.len(), inst.n_machines);
        match groups.iter_mut().find(|(l, _)| *l == label) {
            Some((_, v)) => v.push(i),
            None => groups.push((label, vec![i])),
        }
    }

    let runs = report::run_solver_batch(solver, &instances, seed)?;
    let mut rows = Vec::new();
    for (label, indices) in &groups {
        let mut denoms = Vec::new();
        let mut group_runs = Vec::new();
        for &i in indices {
            let rec = report::load_or_compute_denominator(&paths[i], &instances[i], oracle_cfg)?;
            denoms.push((rec.makespan, rec.source == report::CstarSource::Exact));
            group_runs.push(runs[i]);
        }
        rows.push(report::gap_row(label, solver.name(), &group_runs, &denoms)?);
        // A solver that beat an unproven denominator becomes the new
        // best-known for that file.
        for (&i, run) in indices.iter().zip(&group_runs) {
            if let Some(ms) = run.makespan {
                report::update_best_known(&paths[i], ms)?;
            }
        }
    }
    Ok(rows)
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    log_run(
        "bench",
        args.seed,
        &format!(
            "sizes={} samples={} checkpoint={:?}",
            args.sizes, args.samples, args.checkpoint
        ),
    );
    let net = match &args.checkpoint {
        Some(path) => {
            let net = neural::load_network(path)
                .with_context(|| format!("loading network {}", path.display()))?;
            log_network(&net);
            Some(net)
        }
        None => None,
    };
    let mut solvers = vec![
        build_solver("fifo", None, args.sa_steps, args.node_limit)?,
        build_solver("sa", None, args.sa_steps, args.node_limit)?,
        build_solver("bnb", None, args.sa_steps, args.node_limit)?,
    ];
    if let Some(net) = &net {
        solvers.push(Solver::Dql(net));
    }
    let mut template = GenFlags {
        jobs: Some(1),
        machines: Some(1),
        ..args.gen.clone()
    }
    .resolve(&ConfigFile::new())?;
    template.n_jobs = 1;
    template.n_machines = 1;
    let oracle_cfg = BnbConfig {
        node_limit: args.node_limit.unwrap_or(BnbConfig::default().node_limit),
        time_limit_s: None,
    };
    let rows = report::bench(
        &parse_sizes(&args.sizes)?,
        args.samples,
        &template,
        args.seed,
        &solvers,
        &oracle_cfg,
    )?;
    write_report(&rows, args.out.as_deref())
}
