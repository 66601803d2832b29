//! Krylov solvers (preconditioned CG and restarted GMRES), a stationary
//! Richardson iteration for relaxation-style solves, and an Arnoldi-based
//! condition-number estimate of the preconditioned operator.
//!
//! All solvers apply the preconditioner on the left and stop on the true
//! relative residual ||Ax - b|| / ||b||, rechecked from scratch rather
//! than trusted from a recurrence.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense::{singular_values, DenseMatrix};
use crate::precond::amg::{amg_setup, amg_vcycle_apply, AmgHierarchy, DEFAULT_COARSE_CAP};
use crate::precond::{
    check_structural_symmetry, checked_diagonal, sor_sweep_with_diag, ssor_apply_with_diag,
    PrecondConfig, PrecondError,
};
use crate::sparse::CsrMatrix;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Precond(#[from] PrecondError),
    #[error("matrix must be square, got {nrows}x{ncols}")]
    NotSquare { nrows: usize, ncols: usize },
    #[error("dimension mismatch: matrix is {n}, rhs has {rhs} entries")]
    RhsLength { n: usize, rhs: usize },
    #[error("invalid solver config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cg,
    Gmres,
    /// Preconditioned Richardson iteration; with a one-sweep SOR
    /// preconditioner this is exactly the classical SOR iteration.
    Stationary,
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cg" => Ok(Method::Cg),
            "gmres" => Ok(Method::Gmres),
            "stationary" | "richardson" => Ok(Method::Stationary),
            other => Err(format!("unknown method '{other}'")),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Cg => "cg",
            Method::Gmres => "gmres",
            Method::Stationary => "stationary",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    pub tolerance: f64,
    pub max_iters: usize,
    pub restart: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: Method::Gmres,
            tolerance: 1e-7,
            max_iters: 10_000,
            restart: 30,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<(), SolveError> {
        if !(self.tolerance > 0.0) {
            return Err(SolveError::BadConfig(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.restart == 0 {
            return Err(SolveError::BadConfig("restart must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub wall_time: f64,
    pub final_relative_residual: f64,
    pub converged: bool,
    pub breakdown_flag: bool,
}

pub const SOLVE_CSV_HEADER: &str =
    "problem_id,method,precond,param,iterations,time_s,relres,converged";

/// One CSV row in the `SOLVE_CSV_HEADER` layout.
pub fn solve_csv_row(
    problem_id: &str,
    method: Method,
    precond: &str,
    param: Option<f64>,
    report: &SolveReport,
) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        problem_id,
        method,
        precond,
        param.map(|p| p.to_string()).unwrap_or_default(),
        report.iterations,
        report.wall_time,
        report.final_relative_residual,
        report.converged
    )
}

// ---------------------------------------------------------------------
// Preconditioner operator: set up once, apply many times
// ---------------------------------------------------------------------

/// A preconditioner bound to a matrix, validated at setup.
pub enum PrecondOp<'a> {
    Identity,
    Jacobi {
        inv_diag: Vec<f64>,
    },
    Sor {
        a: &'a CsrMatrix,
        omega: f64,
        sweeps: usize,
        diag: Vec<f64>,
    },
    Ssor {
        a: &'a CsrMatrix,
        omega: f64,
        diag: Vec<f64>,
    },
    Amg(Box<AmgHierarchy>),
}

impl<'a> PrecondOp<'a> {
    pub fn setup(a: &'a CsrMatrix, cfg: &PrecondConfig) -> Result<Self, PrecondError> {
        cfg.validate()?;
        Ok(match *cfg {
            PrecondConfig::None => PrecondOp::Identity,
            PrecondConfig::Jacobi => {
                let diag = checked_diagonal(a)?;
                PrecondOp::Jacobi {
                    inv_diag: diag.iter().map(|d| 1.0 / d).collect(),
                }
            }
            PrecondConfig::Sor { omega, sweeps } => PrecondOp::Sor {
                a,
                omega,
                sweeps: sweeps.max(1),
                diag: checked_diagonal(a)?,
            },
            PrecondConfig::Ssor { omega } => {
                let diag = checked_diagonal(a)?;
                check_structural_symmetry(a)?;
                PrecondOp::Ssor { a, omega, diag }
            }
            PrecondConfig::Amg {
                theta,
                smoother,
                smoother_omega,
            } => PrecondOp::Amg(Box::new(amg_setup(
                a,
                theta,
                DEFAULT_COARSE_CAP,
                smoother,
                smoother_omega,
            )?)),
        })
    }

    /// z = M^{-1} r.
    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        match self {
            PrecondOp::Identity => r.to_vec(),
            PrecondOp::Jacobi { inv_diag } => {
                r.iter().zip(inv_diag).map(|(ri, di)| ri * di).collect()
            }
            PrecondOp::Sor {
                a,
                omega,
                sweeps,
                diag,
            } => {
                let mut z = vec![0.0; r.len()];
                for _ in 0..*sweeps {
                    sor_sweep_with_diag(a, r, &mut z, *omega, diag);
                }
                z
            }
            PrecondOp::Ssor { a, omega, diag } => ssor_apply_with_diag(a, r, *omega, diag),
            PrecondOp::Amg(h) => amg_vcycle_apply(h, r),
        }
    }
}

// ---------------------------------------------------------------------
// Vector helpers
// ---------------------------------------------------------------------

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn true_relative_residual(a: &CsrMatrix, x: &[f64], b: &[f64], bnorm: f64) -> f64 {
    let mut ax = vec![0.0; b.len()];
    a.spmv_into(x, &mut ax);
    let mut s = 0.0;
    for i in 0..b.len() {
        let d = ax[i] - b[i];
        s += d * d;
    }
    s.sqrt() / bnorm
}

fn check_square(a: &CsrMatrix, b: &[f64]) -> Result<(), SolveError> {
    if a.nrows() != a.ncols() {
        return Err(SolveError::NotSquare {
            nrows: a.nrows(),
            ncols: a.ncols(),
        });
    }
    if b.len() != a.nrows() {
        return Err(SolveError::RhsLength {
            n: a.nrows(),
            rhs: b.len(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Conjugate gradients
// ---------------------------------------------------------------------

/// Preconditioned CG from a zero start. Requires symmetric A and an SPD
/// preconditioner; a non-positive curvature p^T A p flags a breakdown.
pub fn cg_solve(
    a: &CsrMatrix,
    b: &[f64],
    precond: &PrecondConfig,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, SolveReport), SolveError> {
    cfg.validate()?;
    check_square(a, b)?;
    let start = Instant::now();
    let op = PrecondOp::setup(a, precond)?;
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((
            x,
            SolveReport {
                iterations: 0,
                wall_time: start.elapsed().as_secs_f64(),
                final_relative_residual: 0.0,
                converged: true,
                breakdown_flag: false,
            },
        ));
    }
    let mut r = b.to_vec();
    let mut z = op.apply(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    let mut breakdown = false;
    for k in 1..=cfg.max_iters {
        a.spmv_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            breakdown = true;
            iterations = k - 1;
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations = k;
        if norm2(&r) / bnorm <= cfg.tolerance {
            // recurrence says done; confirm against the real residual
            if true_relative_residual(a, &x, b, bnorm) <= cfg.tolerance {
                converged = true;
                break;
            }
        }
        z = op.apply(&r);
        let rz_new = dot(&r, &z);
        if !rz_new.is_finite() {
            breakdown = true;
            break;
        }
        let beta = rz_new / rz;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_new;
    }
    let final_rr = true_relative_residual(a, &x, b, bnorm);
    Ok((
        x,
        SolveReport {
            iterations,
            wall_time: start.elapsed().as_secs_f64(),
            final_relative_residual: final_rr,
            converged,
            breakdown_flag: breakdown,
        },
    ))
}

// ---------------------------------------------------------------------
// GMRES
// ---------------------------------------------------------------------

/// Restarted GMRES with left preconditioning. The Givens-rotation
/// residual estimate (in the preconditioned norm) drives candidate
/// checks; convergence is declared only on the true relative residual.
pub fn gmres_solve(
    a: &CsrMatrix,
    b: &[f64],
    precond: &PrecondConfig,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, SolveReport), SolveError> {
    let (x, report, _) = gmres_solve_traced(a, b, precond, cfg)?;
    Ok((x, report))
}

/// GMRES with the per-cycle residual estimates exposed for testing.
pub(crate) fn gmres_solve_traced(
    a: &CsrMatrix,
    b: &[f64],
    precond: &PrecondConfig,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, SolveReport, Vec<Vec<f64>>), SolveError> {
    cfg.validate()?;
    check_square(a, b)?;
    let start = Instant::now();
    let op = PrecondOp::setup(a, precond)?;
    let n = b.len();
    let m = cfg.restart;
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    let mut cycles: Vec<Vec<f64>> = Vec::new();
    if bnorm == 0.0 {
        return Ok((
            x,
            SolveReport {
                iterations: 0,
                wall_time: start.elapsed().as_secs_f64(),
                final_relative_residual: 0.0,
                converged: true,
                breakdown_flag: false,
            },
            cycles,
        ));
    }

    let mut iterations = 0usize;
    let mut converged = false;
    let mut lucky_breakdown = false;

    'outer: while iterations < cfg.max_iters {
        // residual of the current iterate, preconditioned
        let mut r = b.to_vec();
        let mut ax = vec![0.0; n];
        a.spmv_into(&x, &mut ax);
        for i in 0..n {
            r[i] -= ax[i];
        }
        let z = op.apply(&r);
        let beta = norm2(&z);
        if beta == 0.0 || !beta.is_finite() {
            // preconditioned residual vanished (or blew up); trust only
            // the true residual
            converged = true_relative_residual(a, &x, b, bnorm) <= cfg.tolerance;
            break;
        }
        let mut v: Vec<Vec<f64>> = vec![z.iter().map(|t| t / beta).collect()];
        let mut h = DenseMatrix::zeros(m + 1, m);
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![0.0f64; m];
        let mut g = vec![0.0f64; m + 1];
        g[0] = beta;
        let mut estimates = Vec::with_capacity(m);

        for j in 0..m {
            let av = a.spmv(&v[j]).expect("dimensions agree");
            let mut w = op.apply(&av);
            // modified Gram-Schmidt with one reorthogonalization pass
            for pass in 0..2 {
                for (i, vi) in v.iter().enumerate() {
                    let hij = dot(&w, vi);
                    if pass == 0 {
                        h.set(i, j, hij);
                    } else {
                        h.set(i, j, h.get(i, j) + hij);
                    }
                    for (wk, vk) in w.iter_mut().zip(vi) {
                        *wk -= hij * vk;
                    }
                }
            }
            let wnorm = norm2(&w);
            h.set(j + 1, j, wnorm);
            let lucky = wnorm <= 1e-14 * beta.max(1.0);
            if !lucky {
                v.push(w.iter().map(|t| t / wnorm).collect());
            }
            // apply accumulated Givens rotations to the new column
            for i in 0..j {
                let hi = h.get(i, j);
                let hi1 = h.get(i + 1, j);
                h.set(i, j, cs[i] * hi + sn[i] * hi1);
                h.set(i + 1, j, -sn[i] * hi + cs[i] * hi1);
            }
            let hjj = h.get(j, j);
            let hj1 = h.get(j + 1, j);
            let denom = (hjj * hjj + hj1 * hj1).sqrt();
            if denom == 0.0 {
                cs[j] = 1.0;
                sn[j] = 0.0;
            } else {
                cs[j] = hjj / denom;
                sn[j] = hj1 / denom;
            }
            h.set(j, j, cs[j] * hjj + sn[j] * hj1);
            h.set(j + 1, j, 0.0);
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            estimates.push(g[j + 1].abs());
            iterations += 1;

            // form the minimizer and check the true residual; iteration
            // counts are a search objective, so each step gets the exact
            // stopping test rather than a restart-boundary check
            let k = j + 1;
            let mut y = vec![0.0f64; k];
            for i in (0..k).rev() {
                let mut s = g[i];
                for l in (i + 1)..k {
                    s -= h.get(i, l) * y[l];
                }
                y[i] = s / h.get(i, i);
            }
            let mut x_cand = x.clone();
            for (l, yl) in y.iter().enumerate() {
                for i in 0..n {
                    x_cand[i] += yl * v[l][i];
                }
            }
            let rr = true_relative_residual(a, &x_cand, b, bnorm);
            if rr <= cfg.tolerance {
                x = x_cand;
                converged = true;
                cycles.push(estimates);
                break 'outer;
            }
            if lucky {
                // exact solve within the subspace; restart from it
                lucky_breakdown = true;
                x = x_cand;
                cycles.push(estimates);
                continue 'outer;
            }
            if j + 1 == m || iterations >= cfg.max_iters {
                x = x_cand;
                break;
            }
        }
        cycles.push(estimates);
    }

    let final_rr = true_relative_residual(a, &x, b, bnorm);
    Ok((
        x,
        SolveReport {
            iterations,
            wall_time: start.elapsed().as_secs_f64(),
            final_relative_residual: final_rr,
            converged,
            breakdown_flag: lucky_breakdown && !converged,
        },
        cycles,
    ))
}

// ---------------------------------------------------------------------
// Stationary iteration
// ---------------------------------------------------------------------

/// Preconditioned Richardson iteration x <- x + M^{-1}(b - Ax). With the
/// one-sweep SOR preconditioner the iterates coincide with classical SOR.
pub fn stationary_solve(
    a: &CsrMatrix,
    b: &[f64],
    precond: &PrecondConfig,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, SolveReport), SolveError> {
    cfg.validate()?;
    check_square(a, b)?;
    let start = Instant::now();
    let op = PrecondOp::setup(a, precond)?;
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((
            x,
            SolveReport {
                iterations: 0,
                wall_time: start.elapsed().as_secs_f64(),
                final_relative_residual: 0.0,
                converged: true,
                breakdown_flag: false,
            },
        ));
    }
    let mut r = b.to_vec();
    let mut relres = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    let mut breakdown = false;
    for k in 1..=cfg.max_iters {
        let z = op.apply(&r);
        for i in 0..n {
            x[i] += z[i];
        }
        let mut ax = vec![0.0; n];
        a.spmv_into(&x, &mut ax);
        for i in 0..n {
            r[i] = b[i] - ax[i];
        }
        relres = norm2(&r) / bnorm;
        iterations = k;
        if !relres.is_finite() {
            breakdown = true;
            break;
        }
        if relres <= cfg.tolerance {
            converged = true;
            break;
        }
        if relres > 1e12 {
            // diverging; no point burning the remaining budget
            break;
        }
    }
    Ok((
        x,
        SolveReport {
            iterations,
            wall_time: start.elapsed().as_secs_f64(),
            final_relative_residual: relres,
            converged,
            breakdown_flag: breakdown,
        },
    ))
}

/// Dispatch on `cfg.method`.
pub fn solve(
    a: &CsrMatrix,
    b: &[f64],
    precond: &PrecondConfig,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, SolveReport), SolveError> {
    match cfg.method {
        Method::Cg => cg_solve(a, b, precond, cfg),
        Method::Gmres => gmres_solve(a, b, precond, cfg),
        Method::Stationary => stationary_solve(a, b, precond, cfg),
    }
}

// ---------------------------------------------------------------------
// Condition-number estimate
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionEstimate {
    pub value: f64,
    /// Set when sigma_min fell below 1e-14 * sigma_max and the ratio was
    /// capped.
    pub capped: bool,
    pub arnoldi_steps: usize,
}

/// Extreme-singular-value ratio of M^{-1} A estimated from the Hessenberg
/// matrix of `min(n, 60)` Arnoldi steps. With no preconditioner this
/// estimates the 2-norm condition number of A itself.
pub fn estimate_condition(
    a: &CsrMatrix,
    precond: &PrecondConfig,
) -> Result<ConditionEstimate, SolveError> {
    if a.nrows() != a.ncols() {
        return Err(SolveError::NotSquare {
            nrows: a.nrows(),
            ncols: a.ncols(),
        });
    }
    let n = a.nrows();
    let op = PrecondOp::setup(a, precond)?;
    let m = n.min(60);

    // fixed seeded start vector keeps estimates reproducible
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5EED_AC0B);
    let mut v0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let v0n = norm2(&v0);
    for t in v0.iter_mut() {
        *t /= v0n;
    }

    let mut v: Vec<Vec<f64>> = vec![v0];
    let mut h = DenseMatrix::zeros(m + 1, m);
    let mut steps = 0usize;
    let mut broke_down = false;
    for j in 0..m {
        let av = a.spmv(&v[j]).expect("dimensions agree");
        let mut w = op.apply(&av);
        let wscale = norm2(&w);
        for pass in 0..2 {
            for (i, vi) in v.iter().enumerate() {
                let hij = dot(&w, vi);
                if pass == 0 {
                    h.set(i, j, hij);
                } else {
                    h.set(i, j, h.get(i, j) + hij);
                }
                for (wk, vk) in w.iter_mut().zip(vi) {
                    *wk -= hij * vk;
                }
            }
        }
        let wnorm = norm2(&w);
        h.set(j + 1, j, wnorm);
        steps = j + 1;
        if wnorm <= 1e-12 * wscale.max(1e-300) {
            broke_down = true;
            break;
        }
        v.push(w.iter().map(|t| t / wnorm).collect());
    }

    // keep the filled block: steps columns, steps (+1 if no breakdown) rows
    let rows = if broke_down { steps } else { steps + 1 };
    let mut hk = DenseMatrix::zeros(rows, steps);
    for i in 0..rows {
        for j in 0..steps {
            hk.set(i, j, h.get(i, j));
        }
    }
    let sv =
        singular_values(&hk).map_err(|e| SolveError::BadConfig(format!("svd failed: {e}")))?;
    let smax = *sv.last().expect("at least one singular value");
    let smin = sv[0];
    if smin < 1e-14 * smax {
        return Ok(ConditionEstimate {
            value: 1e14,
            capped: true,
            arnoldi_steps: steps,
        });
    }
    Ok(ConditionEstimate {
        value: smax / smin,
        capped: false,
        arnoldi_steps: steps,
    })
}
