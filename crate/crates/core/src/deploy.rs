//! Runtime parameter policies and the benchmark harness comparing them
//! over a shared instance set.

use serde::{Deserialize, Serialize};

use crate::datagen::{
    adaptive_grid_search, objective_eval, EvalOutcome, Objective, ObjectiveKind, SearchConfig,
    SearchTarget,
};
use crate::expr::Expression;
use crate::krylov::{estimate_condition, solve, SolveReport, SolverConfig};
use crate::par;
use crate::precond::PrecondConfig;
use crate::problem::ProblemInstance;

/// How a preconditioner parameter is chosen per instance.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamPolicy {
    Fixed(f64),
    Symbolic(Expression),
    /// Pre-computed per-instance values, aligned with the instance slice
    /// the benchmark runs over.
    PerInstanceOptimal(Vec<f64>),
}

/// Evaluate a policy on one feature vector. The result is always inside
/// the deployment clamp range; invalid symbolic evaluations fall back to
/// the preconditioner default.
pub fn predict_param(policy: &ParamPolicy, features: &[f64], target: SearchTarget) -> f64 {
    predict_param_indexed(policy, features, target, 0)
}

pub fn predict_param_indexed(
    policy: &ParamPolicy,
    features: &[f64],
    target: SearchTarget,
    instance_idx: usize,
) -> f64 {
    let (lo, hi) = target.clamp_range();
    let raw = match policy {
        ParamPolicy::Fixed(v) => *v,
        ParamPolicy::Symbolic(expr) => match expr.eval(features) {
            Some(v) => v,
            None => target.default_param(),
        },
        ParamPolicy::PerInstanceOptimal(lookup) => lookup
            .get(instance_idx)
            .copied()
            .unwrap_or_else(|| target.default_param()),
    };
    raw.clamp(lo, hi)
}

// ---------------------------------------------------------------------
// Benchmark harness
// ---------------------------------------------------------------------

/// Policy rows a benchmark can include.
#[derive(Debug, Clone, PartialEq)]
pub enum BenchPolicySpec {
    /// Krylov solve without preconditioning.
    NoPrecond,
    Fixed(f64),
    Symbolic(Expression),
    /// Per-instance grid-search optimum (the lower envelope for
    /// deterministic objectives).
    PerInstanceOptimal,
    /// One shared constant picked by grid search on this instance set.
    OptimalConstant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub target: SearchTarget,
    pub solver: SolverConfig,
    pub objective: Objective,
    /// Estimate the preconditioned condition number per cell.
    pub measure_cond: bool,
    /// Search settings for the optimal baselines.
    pub search: SearchConfig,
}

/// One (instance, policy) measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub problem_idx: usize,
    pub policy: String,
    pub param: Option<f64>,
    pub report: SolveReport,
    pub cond: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub policy: String,
    pub n: usize,
    pub mean_time_s: f64,
    pub median_time_s: f64,
    pub q1: f64,
    pub q3: f64,
    pub var: f64,
    pub mean_iters: f64,
    pub mean_cond: Option<f64>,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

pub const BENCH_CSV_HEADER: &str =
    "policy,n,mean_time_s,median_time_s,q1,q3,var,mean_iters,mean_cond,n_failed";

impl BenchReport {
    pub fn write_csv(&self, path: &std::path::Path) -> std::io::Result<()> {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{BENCH_CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{},{}",
                r.policy,
                r.n,
                r.mean_time_s,
                r.median_time_s,
                r.q1,
                r.q3,
                r.var,
                r.mean_iters,
                r.mean_cond.map(|v| v.to_string()).unwrap_or_default(),
                r.n_failed
            )?;
        }
        Ok(())
    }
}

/// Linear-interpolation quantile of an ascending slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn aggregate(policy: &str, cells: &[BenchCell]) -> BenchRow {
    let mut times: Vec<f64> = cells
        .iter()
        .filter(|c| c.report.converged)
        .map(|c| c.report.wall_time)
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let iters: Vec<f64> = cells
        .iter()
        .filter(|c| c.report.converged)
        .map(|c| c.report.iterations as f64)
        .collect();
    let conds: Vec<f64> = cells.iter().filter_map(|c| c.cond).collect();
    let n_failed = cells.iter().filter(|c| !c.report.converged).count();
    let mean = |v: &[f64]| {
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let mean_time = mean(&times);
    let var = if times.is_empty() {
        f64::NAN
    } else {
        times.iter().map(|t| (t - mean_time) * (t - mean_time)).sum::<f64>() / times.len() as f64
    };
    BenchRow {
        policy: policy.to_string(),
        n: cells.len(),
        mean_time_s: mean_time,
        median_time_s: quantile_sorted(&times, 0.5),
        q1: quantile_sorted(&times, 0.25),
        q3: quantile_sorted(&times, 0.75),
        var,
        mean_iters: mean(&iters),
        mean_cond: if conds.is_empty() {
            None
        } else {
            Some(mean(&conds))
        },
        n_failed,
    }
}

fn measure_cell(
    problems: &[ProblemInstance],
    idx: usize,
    policy_name: &str,
    pc: &PrecondConfig,
    param: Option<f64>,
    cfg: &BenchConfig,
) -> BenchCell {
    let p = &problems[idx];
    let report = match solve(&p.matrix, &p.b, pc, &cfg.solver) {
        Ok((_, rep)) => rep,
        Err(e) => {
            log::warn!("bench cell ({idx}, {policy_name}) failed to run: {e}");
            SolveReport {
                iterations: 0,
                wall_time: 0.0,
                final_relative_residual: f64::NAN,
                converged: false,
                breakdown_flag: true,
            }
        }
    };
    let cond = if cfg.measure_cond {
        estimate_condition(&p.matrix, pc).ok().map(|e| e.value)
    } else {
        None
    };
    BenchCell {
        problem_idx: idx,
        policy: policy_name.to_string(),
        param,
        report,
        cond,
    }
}

/// Pick the shared constant minimizing the mean objective over the
/// instance set; candidates come from the coarse grid. Candidates with
/// fewer failures always win over candidates with more.
fn optimal_constant(problems: &[ProblemInstance], cfg: &BenchConfig) -> f64 {
    let (lo, hi) = cfg.search.range;
    let step = cfg.search.coarse_step;
    let mut candidates = Vec::new();
    let mut c = lo;
    while c <= hi + 1e-12 {
        candidates.push(c.min(hi));
        c += step;
    }
    let scored: Vec<(usize, f64)> = candidates
        .iter()
        .map(|&cand| {
            let outcomes: Vec<EvalOutcome> = par::map_slice(problems, |p| {
                objective_eval(
                    p,
                    cfg.target,
                    cand,
                    &cfg.objective,
                    &cfg.solver,
                    cfg.search.repeats,
                )
            });
            let finite: Vec<f64> = outcomes.iter().filter_map(|o| o.value()).collect();
            let failures = outcomes.len() - finite.len();
            let mean = if finite.is_empty() {
                f64::INFINITY
            } else {
                finite.iter().sum::<f64>() / finite.len() as f64
            };
            (failures, mean)
        })
        .collect();
    let mut best = 0usize;
    for i in 1..candidates.len() {
        let a = &scored[i];
        let b = &scored[best];
        if (a.0, a.1) < (b.0, b.1) {
            best = i;
        }
    }
    candidates[best]
}

/// Run every requested policy over every instance and aggregate per
/// policy. Cells run in parallel across instances unless the objective is
/// wall time, which runs sequentially for stable measurements.
pub fn bench_compare(
    problems: &[ProblemInstance],
    policies: &[(String, BenchPolicySpec)],
    cfg: &BenchConfig,
) -> (BenchReport, Vec<BenchCell>) {
    let mut report = BenchReport::default();
    let mut all_cells = Vec::new();
    for (name, spec) in policies {
        // resolve the per-instance parameter (or the no-precond marker)
        let params: Vec<Option<f64>> = match spec {
            BenchPolicySpec::NoPrecond => vec![None; problems.len()],
            BenchPolicySpec::Fixed(v) => {
                let pol = ParamPolicy::Fixed(*v);
                problems
                    .iter()
                    .map(|p| Some(predict_param(&pol, &p.features, cfg.target)))
                    .collect()
            }
            BenchPolicySpec::Symbolic(e) => {
                let pol = ParamPolicy::Symbolic(e.clone());
                problems
                    .iter()
                    .map(|p| Some(predict_param(&pol, &p.features, cfg.target)))
                    .collect()
            }
            BenchPolicySpec::PerInstanceOptimal => {
                let found: Vec<Option<f64>> = par::map_slice(problems, |p| {
                    adaptive_grid_search(p, cfg.target, &cfg.search)
                        .ok()
                        .map(|o| o.param)
                });
                let lookup: Vec<f64> = found
                    .iter()
                    .map(|o| o.unwrap_or_else(|| cfg.target.default_param()))
                    .collect();
                let pol = ParamPolicy::PerInstanceOptimal(lookup);
                (0..problems.len())
                    .map(|i| {
                        Some(predict_param_indexed(
                            &pol,
                            &problems[i].features,
                            cfg.target,
                            i,
                        ))
                    })
                    .collect()
            }
            BenchPolicySpec::OptimalConstant => {
                let c = optimal_constant(problems, cfg);
                log::info!("optimal shared constant for '{name}': {c}");
                vec![Some(c); problems.len()]
            }
        };
        let cells: Vec<BenchCell> = if cfg.objective.kind == ObjectiveKind::Time {
            (0..problems.len())
                .map(|i| {
                    let pc = match params[i] {
                        Some(v) => cfg.target.config_with(v),
                        None => PrecondConfig::None,
                    };
                    measure_cell(problems, i, name, &pc, params[i], cfg)
                })
                .collect()
        } else {
            par::map_indices(problems.len(), |i| {
                let pc = match params[i] {
                    Some(v) => cfg.target.config_with(v),
                    None => PrecondConfig::None,
                };
                measure_cell(problems, i, name, &pc, params[i], cfg)
            })
        };
        report.rows.push(aggregate(name, &cells));
        all_cells.extend(cells);
    }
    (report, all_cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, TOK_ADD, TOK_ONE, VAR_BASE};
    use crate::krylov::Method;
    use crate::problem::{generate_batch, Family};

    #[test]
    fn fixed_policy_is_constant() {
        let pol = ParamPolicy::Fixed(1.0);
        for f in [vec![0.0], vec![5.0, -3.0]] {
            assert_eq!(
                predict_param(&pol, &f, SearchTarget::Sor { sweeps: 1 }),
                1.0
            );
        }
    }

    #[test]
    fn symbolic_policy_clamps_and_defaults() {
        // x1 + 1.0 at x1 = 1.3 exceeds the clamp ceiling
        let e = Expression::new(vec![TOK_ADD, VAR_BASE, TOK_ONE], vec![]).unwrap();
        let pol = ParamPolicy::Symbolic(e);
        let t = SearchTarget::Sor { sweeps: 1 };
        assert_eq!(predict_param(&pol, &[1.3], t), 1.95);
        assert!((predict_param(&pol, &[0.5], t) - 1.5).abs() < 1e-15);
        // invalid evaluation falls back to the default parameter
        let inv = ParamPolicy::Symbolic(parse("(1.0 / (x1 - 1.0))").unwrap());
        assert_eq!(predict_param(&inv, &[1.0], t), 1.0);
    }

    #[test]
    fn table_style_expression_stays_in_range() {
        let e = parse("(1.0 + (1.0 / (x2 + 1.2)))").unwrap();
        let pol = ParamPolicy::Symbolic(e);
        let v = predict_param(&pol, &[0.0, 0.0], SearchTarget::Sor { sweeps: 1 });
        assert!((v - (1.0 + 1.0 / 1.2)).abs() < 1e-12);
    }

    #[test]
    fn predict_never_leaves_legal_range() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let exprs = [
            parse("(exp(x1) / (x2 + 0.001))").unwrap(),
            parse("log((x1 * x2))").unwrap(),
            parse("((x1 ^ x2) - (1.0 / x1))").unwrap(),
        ];
        let targets = [SearchTarget::Sor { sweeps: 1 }, SearchTarget::Ssor, SearchTarget::Amg];
        for k in 0..100_000 {
            let e = &exprs[k % exprs.len()];
            let target = targets[(k / 3) % targets.len()];
            let (lo, hi) = target.clamp_range();
            let f = vec![rng.gen_range(-1e4..1e4), rng.gen_range(-1e4..1e4)];
            let v = predict_param(&ParamPolicy::Symbolic(e.clone()), &f, target);
            assert!(v >= lo && v <= hi, "{v} outside [{lo}, {hi}]");
            assert!(v.is_finite());
        }
    }

    #[test]
    fn bench_shapes_and_per_instance_bound() {
        let problems = generate_batch(Family::Poisson, 6, 5, 3).unwrap();
        let solver = SolverConfig {
            method: Method::Cg,
            tolerance: 1e-7,
            max_iters: 3000,
            restart: 30,
        };
        let mut search = SearchConfig::new(SearchTarget::Ssor, Objective::iterations(), solver);
        search.coarse_step = 0.1;
        search.fine_step = 0.02;
        let cfg = BenchConfig {
            target: SearchTarget::Ssor,
            solver,
            objective: Objective::iterations(),
            measure_cond: false,
            search,
        };
        let policies = vec![
            ("none".to_string(), BenchPolicySpec::NoPrecond),
            ("default".to_string(), BenchPolicySpec::Fixed(1.0)),
            ("optimal".to_string(), BenchPolicySpec::PerInstanceOptimal),
        ];
        let (report, cells) = bench_compare(&problems, &policies, &cfg);
        assert_eq!(report.rows.len(), 3);
        assert_eq!(cells.len(), 15);
        let by_name = |n: &str| report.rows.iter().find(|r| r.policy == n).unwrap().clone();
        assert_eq!(by_name("none").n, 5);
        // per-instance optimum bounds every policy's mean iterations
        let opt = by_name("optimal").mean_iters;
        assert!(opt <= by_name("default").mean_iters + 1e-12);
        assert!(opt <= by_name("none").mean_iters + 1e-12);
    }

    #[test]
    fn default_equals_fixed_one() {
        let problems = generate_batch(Family::Poisson, 5, 3, 8).unwrap();
        let solver = SolverConfig {
            method: Method::Cg,
            tolerance: 1e-7,
            max_iters: 2000,
            restart: 30,
        };
        let search = SearchConfig::new(SearchTarget::Ssor, Objective::iterations(), solver);
        let cfg = BenchConfig {
            target: SearchTarget::Ssor,
            solver,
            objective: Objective::iterations(),
            measure_cond: false,
            search,
        };
        let policies = vec![
            ("default".to_string(), BenchPolicySpec::Fixed(1.0)),
            ("fixed_one".to_string(), BenchPolicySpec::Fixed(1.0)),
        ];
        let (report, _) = bench_compare(&problems, &policies, &cfg);
        assert_eq!(report.rows[0].mean_iters, report.rows[1].mean_iters);
        assert_eq!(report.rows[0].n_failed, report.rows[1].n_failed);
    }
}
