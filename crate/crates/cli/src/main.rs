//! Pipeline driver: generate problems, search optimal preconditioner
//! parameters, train a symbolic policy, evaluate it, and benchmark it
//! against baselines. Every subcommand writes its artifact plus a
//! `run_manifest.json` next to it.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use symprec::datagen::{
    build_dataset, build_dataset_amg_sor, read_meta, write_meta, Objective, ObjectiveKind,
    ParamDataset, SearchConfig, SearchTarget,
};
use symprec::deploy::{bench_compare, BenchCell, BenchConfig, BenchPolicySpec};
use symprec::expr::{read_expression_json, reward_detailed, write_expression_json};
use symprec::krylov::{solve_csv_row, Method, SolverConfig, SOLVE_CSV_HEADER};
use symprec::policy::{save_checkpoint, train, Checkpoint, ConstOptMode, TrainConfig};
use symprec::problem::{generate_batch, read_problems, write_problems, Family};

#[derive(Parser)]
#[command(name = "symprec", version, about = "Symbolic preconditioner-parameter pipeline")]
struct Cli {
    /// Worker threads for data-parallel stages (default: SYMPREC_JOBS or
    /// all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a JSONL problem set for one PDE family.
    GenProblems(GenProblemsArgs),
    /// Grid-search optimal parameters per instance and write the dataset CSV.
    Datagen(DatagenArgs),
    /// Train the symbolic policy on a dataset CSV.
    Train(TrainArgs),
    /// Evaluate an expression file against a dataset (prints NRMSE and R).
    Eval(EvalArgs),
    /// Benchmark parameter policies over a problem set.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenProblemsArgs {
    /// elliptic | darcy | poisson | thermal
    #[arg(long)]
    family: Family,
    /// Interior grid points per side.
    #[arg(long, default_value_t = 64)]
    grid: usize,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// cg | gmres | stationary
    #[arg(long, default_value = "gmres")]
    solver: Method,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iters: usize,
    #[arg(long, default_value_t = 30)]
    restart: usize,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            method: self.solver,
            tolerance: self.tol,
            max_iters: self.max_iters,
            restart: self.restart,
        }
    }
}

#[derive(Args)]
struct DatagenArgs {
    #[arg(long)]
    problems: PathBuf,
    /// sor | ssor | amg | amg+sor (two-parameter mode)
    #[arg(long)]
    precond: String,
    /// time | iters | cond | hybrid
    #[arg(long)]
    objective: String,
    /// Hybrid weights as w_cond,w_time,w_iters.
    #[arg(long, default_value = "0.03,1,0")]
    weights: String,
    /// Search range lo:hi (defaults to the parameter's legal range).
    #[arg(long)]
    range: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    coarse: f64,
    #[arg(long, default_value_t = 0.001)]
    fine: f64,
    /// SOR sweeps per preconditioner application.
    #[arg(long, default_value_t = 1)]
    sweeps: usize,
    /// Timed-objective repeats (median taken).
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Smoother omega range lo:hi for amg+sor.
    #[arg(long, default_value = "0.1:1.9")]
    omega_range: String,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// desk | paper
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    entropy: Option<f64>,
    #[arg(long)]
    risk: Option<f64>,
    /// all | elite
    #[arg(long, default_value = "all")]
    const_opt: String,
    /// Learn the second target column of a two-parameter dataset.
    #[arg(long)]
    second_target: bool,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    expr_file: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// all | train | test
    #[arg(long, default_value = "all")]
    split: String,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    problems: PathBuf,
    /// sor | ssor | amg
    #[arg(long)]
    precond: String,
    /// time | iters | cond | hybrid
    #[arg(long)]
    objective: String,
    #[arg(long, default_value = "0.03,1,0")]
    weights: String,
    /// Repeatable: none | default | fixed:<v> | expr:<path> |
    /// optimal-constant | per-instance
    #[arg(long = "policy", required = true)]
    policies: Vec<String>,
    /// Estimate the preconditioned condition number per cell.
    #[arg(long)]
    cond: bool,
    /// Optional per-cell CSV.
    #[arg(long)]
    cells: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    coarse: f64,
    #[arg(long, default_value_t = 0.005)]
    fine: f64,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
}

/// Config mistakes found after clap parsing still exit with the usage
/// code.
#[derive(Debug)]
enum AppError {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

fn config_err(e: anyhow::Error) -> AppError {
    AppError::Config(e)
}

fn runtime_err(e: anyhow::Error) -> AppError {
    AppError::Runtime(e)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    init_jobs(cli.jobs);
    let result = match cli.command {
        Command::GenProblems(a) => cmd_gen_problems(a),
        Command::Datagen(a) => cmd_datagen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(AppError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(feature = "parallel")]
fn init_jobs(jobs: Option<usize>) {
    let jobs = jobs.or_else(|| {
        std::env::var("SYMPREC_JOBS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(k) = jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn init_jobs(jobs: Option<usize>) {
    if jobs.is_some_and(|k| k > 1) {
        log::warn!("built without the parallel feature; --jobs is ignored");
    }
}

// ---------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config: serde_json::Value,
    seeds: Vec<u64>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    tool_version: String,
    timestamp_unix_s: u64,
}

fn write_manifest(
    out: &Path,
    command: &str,
    config: serde_json::Value,
    seeds: Vec<u64>,
    inputs: Vec<String>,
    outputs: Vec<String>,
) -> Result<()> {
    let manifest = RunManifest {
        command: command.to_string(),
        config,
        seeds,
        inputs,
        outputs,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp_unix_s: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty());
    let path = match dir {
        Some(d) => d.join("run_manifest.json"),
        None => PathBuf::from("run_manifest.json"),
    };
    let f = std::io::BufWriter::new(
        std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    );
    serde_json::to_writer_pretty(f, &manifest)?;
    Ok(())
}

// ---------------------------------------------------------------------
// Shared parsing
// ---------------------------------------------------------------------

fn parse_target(s: &str, sweeps: usize) -> Result<SearchTarget> {
    match s.to_ascii_lowercase().as_str() {
        "sor" => Ok(SearchTarget::Sor { sweeps }),
        "ssor" => Ok(SearchTarget::Ssor),
        "amg" => Ok(SearchTarget::Amg),
        other => bail!("unknown preconditioner '{other}' (expected sor | ssor | amg)"),
    }
}

fn parse_objective(kind: &str, weights: &str) -> Result<Objective> {
    let kind = match kind.to_ascii_lowercase().as_str() {
        "time" => ObjectiveKind::Time,
        "iters" | "iterations" => ObjectiveKind::Iterations,
        "cond" | "condition" => ObjectiveKind::ConditionNumber,
        "hybrid" => ObjectiveKind::Hybrid,
        other => bail!("unknown objective '{other}' (expected time | iters | cond | hybrid)"),
    };
    let parts: Vec<f64> = weights
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("bad weights '{weights}'"))?;
    if parts.len() != 3 {
        bail!("weights must be w_cond,w_time,w_iters");
    }
    Ok(Objective {
        kind,
        weights: (parts[0], parts[1], parts[2]),
    })
}

fn parse_range(s: &str) -> Result<(f64, f64)> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| anyhow!("range must be lo:hi, got '{s}'"))?;
    let lo: f64 = lo.trim().parse().with_context(|| format!("bad range '{s}'"))?;
    let hi: f64 = hi.trim().parse().with_context(|| format!("bad range '{s}'"))?;
    if !(lo < hi) {
        bail!("range lo must be below hi, got '{s}'");
    }
    Ok((lo, hi))
}

// ---------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------

fn cmd_gen_problems(a: GenProblemsArgs) -> Result<(), AppError> {
    let problems = generate_batch(a.family, a.grid, a.count, a.seed)
        .map_err(|e| runtime_err(anyhow!(e)))?;
    write_problems(&a.out, &problems).map_err(|e| runtime_err(anyhow!(e)))?;
    write_manifest(
        &a.out,
        "gen-problems",
        serde_json::json!({
            "family": a.family.to_string(),
            "grid": a.grid,
            "count": a.count,
        }),
        vec![a.seed],
        vec![],
        vec![a.out.display().to_string()],
    )
    .map_err(runtime_err)?;
    println!("wrote {} instances to {}", problems.len(), a.out.display());
    Ok(())
}

fn cmd_datagen(a: DatagenArgs) -> Result<(), AppError> {
    let objective = parse_objective(&a.objective, &a.weights).map_err(config_err)?;
    let multi = a.precond.eq_ignore_ascii_case("amg+sor");
    let target = if multi {
        SearchTarget::Amg
    } else {
        parse_target(&a.precond, a.sweeps).map_err(config_err)?
    };
    let range = match &a.range {
        Some(r) => parse_range(r).map_err(config_err)?,
        None => target.legal_range(),
    };
    if !(a.fine > 0.0 && a.fine < a.coarse) {
        return Err(config_err(anyhow!(
            "fine step must be positive and below the coarse step"
        )));
    }
    let problems = read_problems(&a.problems).map_err(|e| runtime_err(anyhow!(e)))?;
    if problems.is_empty() {
        return Err(runtime_err(anyhow!("no problems in input file")));
    }
    let cfg = SearchConfig {
        range,
        coarse_step: a.coarse,
        fine_step: a.fine,
        objective,
        solver: a.solver.config(),
        repeats: a.repeats,
    };
    let (ds, meta) = if multi {
        let omega_range = parse_range(&a.omega_range).map_err(config_err)?;
        build_dataset_amg_sor(&problems, range, omega_range, &cfg, a.split_seed)
    } else {
        build_dataset(&problems, target, &cfg, a.split_seed)
    };
    if ds.is_empty() {
        return Err(runtime_err(anyhow!(
            "every instance was dropped; no dataset rows produced"
        )));
    }
    ds.write_csv(&a.out).map_err(|e| runtime_err(anyhow!(e)))?;
    let meta_path = a.out.with_extension("meta.json");
    write_meta(&meta_path, &meta).map_err(|e| runtime_err(anyhow!(e)))?;
    write_manifest(
        &a.out,
        "datagen",
        serde_json::to_value(cfg).unwrap(),
        vec![a.split_seed],
        vec![a.problems.display().to_string()],
        vec![
            a.out.display().to_string(),
            meta_path.display().to_string(),
        ],
    )
    .map_err(runtime_err)?;
    println!(
        "wrote {} rows ({} train / {} test, {} dropped) to {}",
        ds.len(),
        ds.train_indices.len(),
        ds.test_indices.len(),
        meta.dropped.len(),
        a.out.display()
    );
    Ok(())
}

fn load_dataset(path: &Path, split_seed: u64) -> Result<ParamDataset> {
    let mut ds = ParamDataset::read_csv(path, split_seed)
        .with_context(|| format!("reading {}", path.display()))?;
    // prefer the recorded split when the sidecar is present
    let meta_path = path.with_extension("meta.json");
    if meta_path.exists() {
        let meta = read_meta(&meta_path)?;
        ds.train_indices = meta.train_indices;
        ds.test_indices = meta.test_indices;
    }
    Ok(ds)
}

fn cmd_train(a: TrainArgs) -> Result<(), AppError> {
    let mut cfg = match a.preset.as_str() {
        "desk" => TrainConfig::desk(a.seed),
        "paper" => TrainConfig::paper(a.seed),
        other => return Err(config_err(anyhow!("unknown preset '{other}'"))),
    };
    if let Some(b) = a.batch {
        cfg.batch_size = b;
    }
    if let Some(s) = a.samples {
        cfg.total_samples = s;
    }
    if let Some(lr) = a.lr {
        cfg.learning_rate = lr;
    }
    if let Some(w) = a.entropy {
        cfg.entropy_weight = w;
    }
    if let Some(r) = a.risk {
        cfg.risk_factor = r;
    }
    cfg.const_opt_mode = match a.const_opt.as_str() {
        "all" => ConstOptMode::All,
        "elite" => ConstOptMode::EliteOnly,
        other => return Err(config_err(anyhow!("unknown const-opt mode '{other}'"))),
    };
    let mut ds = load_dataset(&a.dataset, a.split_seed).map_err(runtime_err)?;
    if a.second_target {
        let t2 = ds
            .targets2
            .clone()
            .ok_or_else(|| config_err(anyhow!("dataset has no second target column")))?;
        ds.targets = t2;
    }
    let (report, model) = train(&ds, &cfg);
    write_expression_json(&a.out, &report.best).map_err(|e| runtime_err(anyhow!(e)))?;
    let trace_path = a.out.with_extension("trace.csv");
    report
        .trace
        .write_csv(&trace_path)
        .map_err(|e| runtime_err(anyhow!(e)))?;
    let ckpt_path = a.out.with_extension("checkpoint.json");
    save_checkpoint(
        &ckpt_path,
        &Checkpoint {
            model,
            config: cfg,
            next_iteration: report.iterations,
        },
    )
    .map_err(|e| runtime_err(anyhow!(e)))?;
    write_manifest(
        &a.out,
        "train",
        serde_json::to_value(cfg).unwrap(),
        vec![a.seed, a.split_seed],
        vec![a.dataset.display().to_string()],
        vec![
            a.out.display().to_string(),
            trace_path.display().to_string(),
            ckpt_path.display().to_string(),
        ],
    )
    .map_err(runtime_err)?;
    println!(
        "best expression: {}  (train R {}, test NRMSE {})",
        report.best.infix(),
        report.best_reward,
        report
            .test_nrmse
            .map(|v| v.to_string())
            .unwrap_or_else(|| "n/a".into())
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), AppError> {
    let expr = read_expression_json(&a.expr_file).map_err(|e| runtime_err(anyhow!(e)))?;
    let ds = load_dataset(&a.dataset, a.split_seed).map_err(runtime_err)?;
    let indices: Vec<usize> = match a.split.as_str() {
        "all" => (0..ds.len()).collect(),
        "train" => ds.train_indices.clone(),
        "test" => ds.test_indices.clone(),
        other => return Err(config_err(anyhow!("unknown split '{other}'"))),
    };
    let (fx, fy) = ds.rows_at(&indices);
    let ev = reward_detailed(&expr, &fx, &fy);
    println!("rows: {}", indices.len());
    println!(
        "NRMSE: {}",
        ev.nrmse.map(|v| v.to_string()).unwrap_or_else(|| {
            if ev.invalid {
                "invalid (expression undefined on some row)".into()
            } else {
                "degenerate (zero target variance)".into()
            }
        })
    );
    println!("R: {}", ev.reward);
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<(), AppError> {
    let objective = parse_objective(&a.objective, &a.weights).map_err(config_err)?;
    let target = parse_target(&a.precond, 1).map_err(config_err)?;
    let mut policies = Vec::new();
    for spec in &a.policies {
        let (name, policy) = parse_policy(spec, target).map_err(config_err)?;
        policies.push((name, policy));
    }
    let problems = read_problems(&a.problems).map_err(|e| runtime_err(anyhow!(e)))?;
    if problems.is_empty() {
        return Err(runtime_err(anyhow!("no problems in input file")));
    }
    let solver = a.solver.config();
    let search = SearchConfig {
        range: target.legal_range(),
        coarse_step: a.coarse,
        fine_step: a.fine,
        objective,
        solver,
        repeats: a.repeats,
    };
    let cfg = BenchConfig {
        target,
        solver,
        objective,
        measure_cond: a.cond || objective.kind == ObjectiveKind::ConditionNumber,
        search,
    };
    let (report, cells) = bench_compare(&problems, &policies, &cfg);
    report
        .write_csv(&a.out)
        .map_err(|e| runtime_err(anyhow!(e)))?;
    if let Some(cells_path) = &a.cells {
        write_cells_csv(cells_path, &cells, solver.method, target)
            .map_err(|e| runtime_err(anyhow!(e)))?;
    }
    write_manifest(
        &a.out,
        "bench",
        serde_json::json!({
            "precond": a.precond,
            "objective": a.objective,
            "policies": a.policies,
            "solver": solver,
        }),
        vec![],
        vec![a.problems.display().to_string()],
        vec![a.out.display().to_string()],
    )
    .map_err(runtime_err)?;
    for row in &report.rows {
        println!(
            "{}: n {} mean_iters {} mean_time_s {} n_failed {}",
            row.policy, row.n, row.mean_iters, row.mean_time_s, row.n_failed
        );
    }
    Ok(())
}

fn parse_policy(spec: &str, target: SearchTarget) -> Result<(String, BenchPolicySpec)> {
    if let Some(v) = spec.strip_prefix("fixed:") {
        let value: f64 = v.parse().with_context(|| format!("bad policy '{spec}'"))?;
        return Ok((spec.to_string(), BenchPolicySpec::Fixed(value)));
    }
    if let Some(path) = spec.strip_prefix("expr:") {
        let e = read_expression_json(Path::new(path))
            .with_context(|| format!("reading expression '{path}'"))?;
        return Ok((spec.to_string(), BenchPolicySpec::Symbolic(e)));
    }
    match spec {
        "none" => Ok(("none".into(), BenchPolicySpec::NoPrecond)),
        "default" => Ok((
            "default".into(),
            BenchPolicySpec::Fixed(target.default_param()),
        )),
        "optimal-constant" => Ok(("optimal-constant".into(), BenchPolicySpec::OptimalConstant)),
        "per-instance" => Ok(("per-instance".into(), BenchPolicySpec::PerInstanceOptimal)),
        other => bail!(
            "unknown policy '{other}' (expected none | default | fixed:<v> | expr:<path> | optimal-constant | per-instance)"
        ),
    }
}

fn write_cells_csv(
    path: &Path,
    cells: &[BenchCell],
    method: Method,
    target: SearchTarget,
) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{SOLVE_CSV_HEADER}")?;
    for c in cells {
        let precond = if c.param.is_some() {
            format!("{}[{}]", target.name(), c.policy)
        } else {
            format!("none[{}]", c.policy)
        };
        writeln!(
            f,
            "{}",
            solve_csv_row(
                &c.problem_idx.to_string(),
                method,
                &precond,
                c.param,
                &c.report
            )
        )?;
    }
    Ok(())
}
