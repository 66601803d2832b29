//! Optimal-parameter data generation: evaluate a solve objective across a
//! parameter grid per instance, pick the argmin, and assemble the
//! (features, optimal parameter) regression dataset.
//!
//! Non-convergent parameter points receive a large finite penalty (ten
//! times the worst observed value) so the search keeps a total order; an
//! instance whose every point fails is dropped from the dataset with a
//! log entry.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::krylov::{estimate_condition, solve, SolverConfig};
use crate::par;
use crate::precond::{AmgSmoother, PrecondConfig};
use crate::problem::ProblemInstance;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("no feasible parameter: every evaluation failed")]
    NoFeasibleParameter,
    #[error("bad search range or steps: {0}")]
    BadRange(String),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset parse at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("metadata: {0}")]
    Json(#[from] serde_json::Error),
}

// ---------------------------------------------------------------------
// Objectives
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Time,
    Iterations,
    ConditionNumber,
    Hybrid,
}

/// What the search minimizes. Weights are (w_cond, w_time, w_iters) and
/// only matter for `Hybrid`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub kind: ObjectiveKind,
    pub weights: (f64, f64, f64),
}

impl Objective {
    pub fn time() -> Self {
        Objective {
            kind: ObjectiveKind::Time,
            weights: (0.0, 1.0, 0.0),
        }
    }

    pub fn iterations() -> Self {
        Objective {
            kind: ObjectiveKind::Iterations,
            weights: (0.0, 0.0, 1.0),
        }
    }

    pub fn condition_number() -> Self {
        Objective {
            kind: ObjectiveKind::ConditionNumber,
            weights: (1.0, 0.0, 0.0),
        }
    }

    /// 0.03 * condition number + solve seconds.
    pub fn hybrid_default() -> Self {
        Objective {
            kind: ObjectiveKind::Hybrid,
            weights: (0.03, 1.0, 0.0),
        }
    }
}

/// Which preconditioner parameter a search tunes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SearchTarget {
    Sor { sweeps: usize },
    Ssor,
    Amg,
}

impl SearchTarget {
    /// Bind a parameter value into a full preconditioner config.
    pub fn config_with(&self, param: f64) -> PrecondConfig {
        match *self {
            SearchTarget::Sor { sweeps } => PrecondConfig::Sor {
                omega: param,
                sweeps,
            },
            SearchTarget::Ssor => PrecondConfig::Ssor { omega: param },
            SearchTarget::Amg => PrecondConfig::Amg {
                theta: param,
                smoother: AmgSmoother::Jacobi,
                smoother_omega: 1.0,
            },
        }
    }

    /// Full legal range of the underlying parameter.
    pub fn legal_range(&self) -> (f64, f64) {
        match self {
            SearchTarget::Sor { .. } | SearchTarget::Ssor => (0.0, 2.0),
            SearchTarget::Amg => (0.0, 0.95),
        }
    }

    /// Safety-clamped deployment range.
    pub fn clamp_range(&self) -> (f64, f64) {
        match self {
            SearchTarget::Sor { .. } | SearchTarget::Ssor => (0.05, 1.95),
            SearchTarget::Amg => (0.0, 0.95),
        }
    }

    /// Library default when a policy produces no usable value.
    pub fn default_param(&self) -> f64 {
        match self {
            SearchTarget::Sor { .. } | SearchTarget::Ssor => 1.0,
            SearchTarget::Amg => 0.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SearchTarget::Sor { .. } => "sor",
            SearchTarget::Ssor => "ssor",
            SearchTarget::Amg => "amg",
        }
    }
}

/// Outcome of one objective evaluation. Failures participate in searches
/// through the penalty rule rather than aborting them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalOutcome {
    Value(f64),
    Failed,
}

impl EvalOutcome {
    pub fn value(self) -> Option<f64> {
        match self {
            EvalOutcome::Value(v) => Some(v),
            EvalOutcome::Failed => None,
        }
    }
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Evaluate one (instance, preconditioner parameter) cell. Timed kinds
/// take the median over `repeats` solves; iteration counts and condition
/// numbers are deterministic and run once.
pub fn objective_eval(
    instance: &ProblemInstance,
    target: SearchTarget,
    param: f64,
    objective: &Objective,
    solver_cfg: &SolverConfig,
    repeats: usize,
) -> EvalOutcome {
    let pc = target.config_with(param);
    if pc.validate().is_err() {
        return EvalOutcome::Failed;
    }
    let a = &instance.matrix;
    let b = &instance.b;
    match objective.kind {
        ObjectiveKind::Iterations => match solve(a, b, &pc, solver_cfg) {
            Ok((_, rep)) if rep.converged => EvalOutcome::Value(rep.iterations as f64),
            Ok(_) => EvalOutcome::Failed,
            Err(e) => {
                log::debug!("solve failed at param {param}: {e}");
                EvalOutcome::Failed
            }
        },
        ObjectiveKind::Time => {
            let mut times = Vec::with_capacity(repeats.max(1));
            for _ in 0..repeats.max(1) {
                match solve(a, b, &pc, solver_cfg) {
                    Ok((_, rep)) if rep.converged => times.push(rep.wall_time),
                    Ok(_) => return EvalOutcome::Failed,
                    Err(e) => {
                        log::debug!("solve failed at param {param}: {e}");
                        return EvalOutcome::Failed;
                    }
                }
            }
            EvalOutcome::Value(median(times))
        }
        ObjectiveKind::ConditionNumber => match estimate_condition(a, &pc) {
            Ok(est) => EvalOutcome::Value(est.value),
            Err(e) => {
                log::debug!("condition estimate failed at param {param}: {e}");
                EvalOutcome::Failed
            }
        },
        ObjectiveKind::Hybrid => {
            let (w_cond, w_time, w_iters) = objective.weights;
            let kappa = if w_cond != 0.0 {
                match estimate_condition(a, &pc) {
                    Ok(est) => est.value,
                    Err(_) => return EvalOutcome::Failed,
                }
            } else {
                0.0
            };
            let mut values = Vec::with_capacity(repeats.max(1));
            for _ in 0..repeats.max(1) {
                match solve(a, b, &pc, solver_cfg) {
                    Ok((_, rep)) if rep.converged => {
                        values.push(
                            w_cond * kappa + w_time * rep.wall_time + w_iters * rep.iterations as f64,
                        );
                    }
                    _ => return EvalOutcome::Failed,
                }
            }
            EvalOutcome::Value(median(values))
        }
    }
}

// ---------------------------------------------------------------------
// Searches
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOutcome {
    pub param: f64,
    pub value: f64,
    pub evaluations: usize,
}

fn grid_points(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let mut pts = Vec::new();
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    for k in 0..=n {
        let p = lo + k as f64 * step;
        if p <= hi + 1e-12 {
            pts.push(p.min(hi));
        }
    }
    if let Some(&last) = pts.last() {
        if (hi - last).abs() > 1e-12 {
            pts.push(hi);
        }
    }
    pts
}

/// Coarse sweep, fine sweeps of width one coarse step around the three
/// best coarse points, global argmin with ties broken toward the smaller
/// parameter.
pub fn adaptive_grid_search_fn(
    f: &mut dyn FnMut(f64) -> EvalOutcome,
    lo: f64,
    hi: f64,
    coarse_step: f64,
    fine_step: f64,
) -> Result<SearchOutcome, SearchError> {
    if !(lo < hi) || coarse_step <= 0.0 || fine_step <= 0.0 || fine_step >= coarse_step {
        return Err(SearchError::BadRange(format!(
            "lo {lo}, hi {hi}, coarse {coarse_step}, fine {fine_step}"
        )));
    }
    let mut cache: std::collections::HashMap<u64, EvalOutcome> = std::collections::HashMap::new();
    let mut evaluations = 0usize;
    let mut eval_cached = |p: f64, f: &mut dyn FnMut(f64) -> EvalOutcome| -> EvalOutcome {
        *cache.entry(p.to_bits()).or_insert_with(|| {
            evaluations += 1;
            f(p)
        })
    };

    let coarse = grid_points(lo, hi, coarse_step);
    let mut coarse_vals: Vec<(f64, EvalOutcome)> = Vec::with_capacity(coarse.len());
    for &p in &coarse {
        let v = eval_cached(p, f);
        coarse_vals.push((p, v));
    }
    // three best finite coarse points (value asc, then param asc)
    let mut finite: Vec<(f64, f64)> = coarse_vals
        .iter()
        .filter_map(|&(p, v)| v.value().map(|val| (p, val)))
        .collect();
    if finite.is_empty() {
        return Err(SearchError::NoFeasibleParameter);
    }
    finite.sort_by(|a, b| (a.1, a.0).partial_cmp(&(b.1, b.0)).unwrap());
    let centers: Vec<f64> = finite.iter().take(3).map(|&(p, _)| p).collect();

    for &center in &centers {
        let wlo = (center - coarse_step).max(lo);
        let whi = (center + coarse_step).min(hi);
        for p in grid_points(wlo, whi, fine_step) {
            eval_cached(p, f);
        }
    }

    // global best over everything evaluated
    let mut best: Option<(f64, f64)> = None;
    let mut entries: Vec<(u64, EvalOutcome)> = cache.iter().map(|(&k, &v)| (k, v)).collect();
    entries.sort_by(|a, b| {
        f64::from_bits(a.0)
            .partial_cmp(&f64::from_bits(b.0))
            .unwrap()
    });
    for (bits, outcome) in entries {
        if let Some(v) = outcome.value() {
            let p = f64::from_bits(bits);
            let better = match best {
                None => true,
                Some((_, bv)) => v < bv,
            };
            if better {
                best = Some((p, v));
            }
        }
    }
    let (param, value) = best.ok_or(SearchError::NoFeasibleParameter)?;
    Ok(SearchOutcome {
        param,
        value,
        evaluations,
    })
}

/// Trisection between three anchors (the range ends and midpoint),
/// halving toward the smallest value until the interval is below
/// `precision`. Assumes an empirically unimodal objective; if the argmin
/// keeps alternating between interval ends the routine falls back to an
/// adaptive grid search.
pub fn binary_search_min_fn(
    f: &mut dyn FnMut(f64) -> EvalOutcome,
    lo: f64,
    hi: f64,
    precision: f64,
) -> Result<SearchOutcome, SearchError> {
    if !(lo < hi) || precision <= 0.0 {
        return Err(SearchError::BadRange(format!(
            "lo {lo}, hi {hi}, precision {precision}"
        )));
    }
    let mut evaluations = 0usize;
    let mut best_seen: Option<(f64, f64)> = None;
    let mut eval = |p: f64, f: &mut dyn FnMut(f64) -> EvalOutcome| -> f64 {
        evaluations += 1;
        match f(p) {
            EvalOutcome::Value(v) => {
                let better = match best_seen {
                    None => true,
                    Some((bp, bv)) => v < bv || (v == bv && p < bp),
                };
                if better {
                    best_seen = Some((p, v));
                }
                v
            }
            EvalOutcome::Failed => f64::INFINITY,
        }
    };

    let mut a = lo;
    let mut b = hi;
    let mut m = 0.5 * (lo + hi);
    let mut fa = eval(a, f);
    let mut fm = eval(m, f);
    let mut fb = eval(b, f);
    if fa.is_infinite() && fm.is_infinite() && fb.is_infinite() {
        return Err(SearchError::NoFeasibleParameter);
    }
    let mut last_end: Option<bool> = None; // false = low end, true = high end
    let mut flips = 0usize;
    while b - a > precision {
        if fa <= fm && fa <= fb {
            // minimum toward the low end
            if last_end == Some(true) {
                flips += 1;
            }
            last_end = Some(false);
            if flips >= 3 {
                log::warn!("trisection saw alternating end minima; falling back to grid search");
                let coarse = ((hi - lo) / 40.0).max(precision * 2.0);
                return adaptive_grid_search_fn(f, lo, hi, coarse, precision);
            }
            let p = 0.5 * (a + m);
            let fp = eval(p, f);
            b = m;
            fb = fm;
            m = p;
            fm = fp;
        } else if fb <= fa && fb <= fm {
            if last_end == Some(false) {
                flips += 1;
            }
            last_end = Some(true);
            if flips >= 3 {
                log::warn!("trisection saw alternating end minima; falling back to grid search");
                let coarse = ((hi - lo) / 40.0).max(precision * 2.0);
                return adaptive_grid_search_fn(f, lo, hi, coarse, precision);
            }
            let q = 0.5 * (m + b);
            let fq = eval(q, f);
            a = m;
            fa = fm;
            m = q;
            fm = fq;
        } else {
            // minimum at the midpoint: probe both halves
            let p = 0.5 * (a + m);
            let fp = eval(p, f);
            let q = 0.5 * (m + b);
            let fq = eval(q, f);
            if fp < fm && fp <= fq {
                b = m;
                fb = fm;
                m = p;
                fm = fp;
            } else if fq < fm {
                a = m;
                fa = fm;
                m = q;
                fm = fq;
            } else {
                a = p;
                fa = fp;
                b = q;
                fb = fq;
            }
        }
    }
    let (param, value) = best_seen.ok_or(SearchError::NoFeasibleParameter)?;
    Ok(SearchOutcome {
        param,
        value,
        evaluations,
    })
}

/// Full product-grid sweep over two parameters followed by a local fine
/// sweep around the best cell. Either axis may be a single point, which
/// degenerates to the one-parameter search.
pub fn product_grid_search_fn(
    f: &mut dyn FnMut(f64, f64) -> EvalOutcome,
    range_a: (f64, f64),
    range_b: (f64, f64),
    coarse_step: f64,
    fine_step: f64,
) -> Result<(f64, f64, f64), SearchError> {
    let axis = |lo: f64, hi: f64, step: f64| -> Vec<f64> {
        if lo == hi {
            vec![lo]
        } else {
            grid_points(lo, hi, step)
        }
    };
    let mut best: Option<(f64, f64, f64)> = None;
    let consider = |pa: f64, pb: f64, out: EvalOutcome, best: &mut Option<(f64, f64, f64)>| {
        if let Some(v) = out.value() {
            let better = match *best {
                None => true,
                Some((ba, bb, bv)) => v < bv || (v == bv && (pa, pb) < (ba, bb)),
            };
            if better {
                *best = Some((pa, pb, v));
            }
        }
    };
    for &pa in &axis(range_a.0, range_a.1, coarse_step) {
        for &pb in &axis(range_b.0, range_b.1, coarse_step) {
            let out = f(pa, pb);
            consider(pa, pb, out, &mut best);
        }
    }
    let (ca, cb, _) = best.ok_or(SearchError::NoFeasibleParameter)?;
    let fine_axis = |center: f64, (lo, hi): (f64, f64)| -> Vec<f64> {
        if lo == hi {
            vec![lo]
        } else {
            grid_points((center - coarse_step).max(lo), (center + coarse_step).min(hi), fine_step)
        }
    };
    for &pa in &fine_axis(ca, range_a) {
        for &pb in &fine_axis(cb, range_b) {
            if pa == ca && pb == cb {
                continue;
            }
            let out = f(pa, pb);
            consider(pa, pb, out, &mut best);
        }
    }
    best.ok_or(SearchError::NoFeasibleParameter)
}

/// Search configuration for dataset generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub range: (f64, f64),
    pub coarse_step: f64,
    pub fine_step: f64,
    pub objective: Objective,
    pub solver: SolverConfig,
    /// Timed-objective repeats (median taken); deterministic objectives
    /// run once.
    pub repeats: usize,
}

impl SearchConfig {
    pub fn new(target: SearchTarget, objective: Objective, solver: SolverConfig) -> Self {
        SearchConfig {
            range: target.legal_range(),
            coarse_step: 0.05,
            fine_step: 0.001,
            objective,
            solver,
            repeats: 3,
        }
    }
}

/// Instance-level adaptive grid search.
pub fn adaptive_grid_search(
    instance: &ProblemInstance,
    target: SearchTarget,
    cfg: &SearchConfig,
) -> Result<SearchOutcome, SearchError> {
    let mut f =
        |p: f64| objective_eval(instance, target, p, &cfg.objective, &cfg.solver, cfg.repeats);
    adaptive_grid_search_fn(&mut f, cfg.range.0, cfg.range.1, cfg.coarse_step, cfg.fine_step)
}

/// Instance-level trisection search (for empirically unimodal objectives).
pub fn binary_search_min(
    instance: &ProblemInstance,
    target: SearchTarget,
    cfg: &SearchConfig,
    precision: f64,
) -> Result<SearchOutcome, SearchError> {
    let mut f =
        |p: f64| objective_eval(instance, target, p, &cfg.objective, &cfg.solver, cfg.repeats);
    binary_search_min_fn(&mut f, cfg.range.0, cfg.range.1, precision)
}

// ---------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------

/// Regression rows (features, optimal parameter, objective value at the
/// optimum) plus a seeded train/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDataset {
    pub feature_names: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    /// Second target column in two-parameter mode.
    pub targets2: Option<Vec<f64>>,
    pub objective_values: Vec<f64>,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

impl ParamDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Feature/target rows at the given indices.
    pub fn rows_at(&self, indices: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let fx = indices.iter().map(|&i| self.features[i].clone()).collect();
        let fy = indices.iter().map(|&i| self.targets[i]).collect();
        (fx, fy)
    }

    /// Rows of the second target (two-parameter datasets).
    pub fn rows_at_second(&self, indices: &[usize]) -> Option<(Vec<Vec<f64>>, Vec<f64>)> {
        let t2 = self.targets2.as_ref()?;
        let fx = indices.iter().map(|&i| self.features[i].clone()).collect();
        let fy = indices.iter().map(|&i| t2[i]).collect();
        Some((fx, fy))
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<(), DataError> {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut header: Vec<String> = self.feature_names.clone();
        header.push("y".into());
        if self.targets2.is_some() {
            header.push("y2".into());
        }
        header.push("objective_value".into());
        writeln!(f, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut cells: Vec<String> = self.features[i].iter().map(|v| v.to_string()).collect();
            cells.push(self.targets[i].to_string());
            if let Some(t2) = &self.targets2 {
                cells.push(t2[i].to_string());
            }
            cells.push(self.objective_values[i].to_string());
            writeln!(f, "{}", cells.join(","))?;
        }
        f.flush()?;
        Ok(())
    }

    /// Read a dataset CSV; the split is re-derived from `split_seed`
    /// unless a sidecar supplies one.
    pub fn read_csv(path: &std::path::Path, split_seed: u64) -> Result<ParamDataset, DataError> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(DataError::Parse {
            line: 0,
            message: "empty file".into(),
        })?;
        let cols: Vec<&str> = header.split(',').collect();
        let has_y2 = cols.contains(&"y2");
        let y_pos = cols
            .iter()
            .position(|&c| c == "y")
            .ok_or(DataError::Parse {
                line: 1,
                message: "missing 'y' column".into(),
            })?;
        let feature_names: Vec<String> = cols[..y_pos].iter().map(|s| s.to_string()).collect();
        let mut features = Vec::new();
        let mut targets = Vec::new();
        let mut targets2: Vec<f64> = Vec::new();
        let mut objective_values = Vec::new();
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let parse = |s: &str| -> Result<f64, DataError> {
                s.parse::<f64>().map_err(|e| DataError::Parse {
                    line: lineno + 1,
                    message: format!("bad number '{s}': {e}"),
                })
            };
            let cells: Vec<&str> = line.split(',').collect();
            let expected = feature_names.len() + 2 + usize::from(has_y2);
            if cells.len() != expected {
                return Err(DataError::Parse {
                    line: lineno + 1,
                    message: format!("expected {expected} cells, got {}", cells.len()),
                });
            }
            let fx: Result<Vec<f64>, _> =
                cells[..feature_names.len()].iter().map(|s| parse(s)).collect();
            features.push(fx?);
            targets.push(parse(cells[y_pos])?);
            let mut next = y_pos + 1;
            if has_y2 {
                targets2.push(parse(cells[next])?);
                next += 1;
            }
            objective_values.push(parse(cells[next])?);
        }
        let mut ds = ParamDataset {
            feature_names,
            features,
            targets,
            targets2: if has_y2 { Some(targets2) } else { None },
            objective_values,
            train_indices: Vec::new(),
            test_indices: Vec::new(),
        };
        let (train, test) = split_indices(ds.len(), split_seed);
        ds.train_indices = train;
        ds.test_indices = test;
        Ok(ds)
    }
}

/// Seeded shuffle split with a 5:1 train/test ratio (1200 rows give
/// 1000/200).
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let test_count = ((n as f64) / 6.0).round() as usize;
    let mut test: Vec<usize> = idx[..test_count].to_vec();
    let mut train: Vec<usize> = idx[test_count..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Sidecar metadata written next to the dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub family: String,
    pub precond: SearchTarget,
    pub search: SearchConfig,
    pub split_seed: u64,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    /// Indices of input instances dropped because their search failed.
    pub dropped: Vec<usize>,
}

pub fn write_meta(path: &std::path::Path, meta: &DatasetMeta) -> Result<(), DataError> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(f, meta)?;
    Ok(())
}

pub fn read_meta(path: &std::path::Path) -> Result<DatasetMeta, DataError> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    Ok(serde_json::from_reader(f)?)
}

/// Run the per-instance search over a problem set and assemble the
/// dataset. Instances whose search fails are dropped (and listed in the
/// returned metadata).
pub fn build_dataset(
    problems: &[ProblemInstance],
    target: SearchTarget,
    cfg: &SearchConfig,
    split_seed: u64,
) -> (ParamDataset, DatasetMeta) {
    let results: Vec<Result<SearchOutcome, SearchError>> =
        par::map_slice(problems, |p| adaptive_grid_search(p, target, cfg));
    assemble(problems, results.into_iter().map(|r| r.map(|o| (o.param, None, o.value))).collect(), target, cfg, split_seed)
}

/// Two-parameter variant: jointly searches the AMG threshold and the SOR
/// smoother relaxation factor over a product grid.
pub fn build_dataset_amg_sor(
    problems: &[ProblemInstance],
    theta_range: (f64, f64),
    omega_range: (f64, f64),
    cfg: &SearchConfig,
    split_seed: u64,
) -> (ParamDataset, DatasetMeta) {
    let results: Vec<Result<(f64, f64, f64), SearchError>> = par::map_slice(problems, |p| {
        let mut f2 = |theta: f64, omega: f64| {
            let pc = PrecondConfig::Amg {
                theta,
                smoother: AmgSmoother::Sor,
                smoother_omega: omega,
            };
            if pc.validate().is_err() {
                return EvalOutcome::Failed;
            }
            match cfg.objective.kind {
                ObjectiveKind::ConditionNumber => match estimate_condition(&p.matrix, &pc) {
                    Ok(est) => EvalOutcome::Value(est.value),
                    Err(_) => EvalOutcome::Failed,
                },
                _ => match solve(&p.matrix, &p.b, &pc, &cfg.solver) {
                    Ok((_, rep)) if rep.converged => EvalOutcome::Value(match cfg.objective.kind {
                        ObjectiveKind::Time => rep.wall_time,
                        _ => rep.iterations as f64,
                    }),
                    _ => EvalOutcome::Failed,
                },
            }
        };
        product_grid_search_fn(&mut f2, theta_range, omega_range, cfg.coarse_step, cfg.fine_step)
    });
    assemble(
        problems,
        results
            .into_iter()
            .map(|r| r.map(|(a, b, v)| (a, Some(b), v)))
            .collect(),
        SearchTarget::Amg,
        cfg,
        split_seed,
    )
}

fn assemble(
    problems: &[ProblemInstance],
    results: Vec<Result<(f64, Option<f64>, f64), SearchError>>,
    target: SearchTarget,
    cfg: &SearchConfig,
    split_seed: u64,
) -> (ParamDataset, DatasetMeta) {
    let d = problems.first().map(|p| p.features.len()).unwrap_or(0);
    let feature_names: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut targets2: Vec<f64> = Vec::new();
    let mut any_second = false;
    let mut objective_values = Vec::new();
    let mut dropped = Vec::new();
    for (i, (p, r)) in problems.iter().zip(results).enumerate() {
        match r {
            Ok((y, y2, val)) => {
                features.push(p.features.clone());
                targets.push(y);
                if let Some(y2) = y2 {
                    targets2.push(y2);
                    any_second = true;
                }
                objective_values.push(val);
            }
            Err(e) => {
                log::warn!("dropping instance {i} (seed {}): {e}", p.seed);
                dropped.push(i);
            }
        }
    }
    let n = targets.len();
    let (train_indices, test_indices) = split_indices(n, split_seed);
    let family = problems
        .first()
        .map(|p| p.family.to_string())
        .unwrap_or_else(|| "unknown".into());
    let ds = ParamDataset {
        feature_names,
        features,
        targets,
        targets2: if any_second { Some(targets2) } else { None },
        objective_values,
        train_indices: train_indices.clone(),
        test_indices: test_indices.clone(),
    };
    let meta = DatasetMeta {
        family,
        precond: target,
        search: *cfg,
        split_seed,
        train_indices,
        test_indices,
        dropped,
    };
    (ds, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::krylov::Method;
    use crate::problem::{gen_poisson, generate_batch, Family};

    #[test]
    fn grid_search_finds_quadratic_minimum() {
        let mut f = |p: f64| EvalOutcome::Value((p - 1.3) * (p - 1.3));
        let out = adaptive_grid_search_fn(&mut f, 0.0, 2.0, 0.05, 0.001).unwrap();
        assert!((out.param - 1.3).abs() <= 0.001 + 1e-12, "{}", out.param);
    }

    #[test]
    fn grid_search_constant_objective_breaks_ties_low() {
        let mut f = |_: f64| EvalOutcome::Value(7.0);
        let out = adaptive_grid_search_fn(&mut f, 0.5, 1.5, 0.1, 0.01).unwrap();
        assert_eq!(out.param, 0.5);
    }

    #[test]
    fn grid_search_all_failed_is_error() {
        let mut f = |_: f64| EvalOutcome::Failed;
        let err = adaptive_grid_search_fn(&mut f, 0.0, 1.0, 0.1, 0.01).unwrap_err();
        assert!(matches!(err, SearchError::NoFeasibleParameter));
    }

    #[test]
    fn grid_search_penalized_points_are_avoided() {
        // failures around the truth must not hide the feasible minimum
        let mut f = |p: f64| {
            if p > 1.0 {
                EvalOutcome::Failed
            } else {
                EvalOutcome::Value((p - 0.7) * (p - 0.7))
            }
        };
        let out = adaptive_grid_search_fn(&mut f, 0.0, 2.0, 0.05, 0.005).unwrap();
        assert!((out.param - 0.7).abs() <= 0.005 + 1e-12);
    }

    #[test]
    fn binary_search_finds_minimum() {
        let mut f = |p: f64| EvalOutcome::Value((p - 0.8) * (p - 0.8));
        let out = binary_search_min_fn(&mut f, 0.0, 2.0, 0.001).unwrap();
        assert!((out.param - 0.8).abs() <= 0.002, "{}", out.param);
    }

    #[test]
    fn binary_search_edge_minimum() {
        let mut f = |p: f64| EvalOutcome::Value(p);
        let out = binary_search_min_fn(&mut f, 0.25, 2.0, 0.001).unwrap();
        assert_eq!(out.param, 0.25);
    }

    #[test]
    fn binary_agrees_with_grid_on_convex() {
        let shapes = [(1.21f64, 3.0f64), (0.4, 0.5), (1.77, 10.0)];
        for (center, scale) in shapes {
            let mut f1 = |p: f64| EvalOutcome::Value(scale * (p - center) * (p - center));
            let mut f2 = |p: f64| EvalOutcome::Value(scale * (p - center) * (p - center));
            let g = adaptive_grid_search_fn(&mut f1, 0.0, 2.0, 0.05, 0.001).unwrap();
            let b = binary_search_min_fn(&mut f2, 0.0, 2.0, 0.001).unwrap();
            assert!(
                (g.param - b.param).abs() <= 0.002,
                "grid {} vs trisect {}",
                g.param,
                b.param
            );
        }
    }

    #[test]
    fn product_grid_degenerates_to_single_axis() {
        let mut f2 = |a: f64, b: f64| EvalOutcome::Value((a - 0.5) * (a - 0.5) + b);
        let (pa, pb, _) = product_grid_search_fn(&mut f2, (0.0, 1.0), (0.3, 0.3), 0.05, 0.01)
            .unwrap();
        assert!((pa - 0.5).abs() <= 0.01 + 1e-12);
        assert_eq!(pb, 0.3);
    }

    #[test]
    fn product_grid_finds_pair() {
        let mut f2 =
            |a: f64, b: f64| EvalOutcome::Value((a - 0.4) * (a - 0.4) + (b - 1.1) * (b - 1.1));
        let (pa, pb, _) =
            product_grid_search_fn(&mut f2, (0.0, 0.9), (0.1, 1.9), 0.1, 0.01).unwrap();
        assert!((pa - 0.4).abs() <= 0.01 + 1e-9, "{pa}");
        assert!((pb - 1.1).abs() <= 0.01 + 1e-9, "{pb}");
    }

    #[test]
    fn objective_identity_system_is_one_iteration() {
        // identity-like: tiny Poisson system solved by CG in few steps
        let p = gen_poisson([0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0], 3).unwrap();
        let cfg = SolverConfig {
            method: Method::Cg,
            tolerance: 1e-8,
            max_iters: 100,
            restart: 30,
        };
        let out = objective_eval(
            &p,
            SearchTarget::Ssor,
            1.0,
            &Objective::iterations(),
            &cfg,
            1,
        );
        match out {
            EvalOutcome::Value(v) => assert!(v >= 1.0 && v <= 20.0),
            EvalOutcome::Failed => panic!("unexpected failure"),
        }
    }

    #[test]
    fn split_ratio_examples() {
        let (train, test) = split_indices(1200, 4);
        assert_eq!(train.len(), 1000);
        assert_eq!(test.len(), 200);
        let (train, test) = split_indices(10, 4);
        assert_eq!(train.len(), 8);
        assert_eq!(test.len(), 2);
        // disjoint and exhaustive
        let mut all: Vec<usize> = train.iter().chain(test.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn dataset_csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let ds = ParamDataset {
            feature_names: vec!["x1".into(), "x2".into()],
            features: vec![vec![0.1, -0.2], vec![1.0 / 3.0, 2.5e-17]],
            targets: vec![1.2345678901234567, 0.1],
            targets2: None,
            objective_values: vec![42.0, 17.25],
            train_indices: vec![0],
            test_indices: vec![1],
        };
        ds.write_csv(&path).unwrap();
        let back = ParamDataset::read_csv(&path, 9).unwrap();
        assert_eq!(back.features, ds.features);
        assert_eq!(back.targets, ds.targets);
        assert_eq!(back.objective_values, ds.objective_values);
        // writing again reproduces the same bytes
        let path2 = dir.path().join("d2.csv");
        back.write_csv(&path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn build_dataset_end_to_end_small() {
        let problems = generate_batch(Family::Poisson, 6, 6, 77).unwrap();
        let solver = SolverConfig {
            method: Method::Cg,
            tolerance: 1e-7,
            max_iters: 2000,
            restart: 30,
        };
        let mut cfg = SearchConfig::new(SearchTarget::Ssor, Objective::iterations(), solver);
        cfg.coarse_step = 0.2;
        cfg.fine_step = 0.05;
        let (ds, meta) = build_dataset(&problems, SearchTarget::Ssor, &cfg, 5);
        assert_eq!(ds.len(), 6);
        assert!(meta.dropped.is_empty());
        assert_eq!(ds.train_indices.len(), 5);
        assert_eq!(ds.test_indices.len(), 1);
        for &y in &ds.targets {
            assert!(y >= cfg.range.0 && y <= cfg.range.1);
        }
        // deterministic objective: rebuilding gives identical targets
        let (ds2, _) = build_dataset(&problems, SearchTarget::Ssor, &cfg, 5);
        assert_eq!(ds.targets, ds2.targets);
    }
}
