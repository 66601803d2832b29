//! Parameterized preconditioners: Jacobi, SOR and SSOR sweeps built on
//! triangular substitution (the splitting A = D + L + U), and a classical
//! algebraic multigrid with a tunable strength threshold in [`amg`].

pub mod amg;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sparse::CsrMatrix;

#[derive(Debug, Error)]
pub enum PrecondError {
    #[error("zero diagonal entry in row {0}")]
    ZeroDiagonal(usize),
    #[error("matrix must be square, got {nrows}x{ncols}")]
    NotSquare { nrows: usize, ncols: usize },
    #[error("matrix is not structurally symmetric (row {0})")]
    NotSymmetric(usize),
    #[error("relaxation factor must satisfy 0 < omega < 2, got {0}")]
    OmegaOutOfRange(f64),
    #[error("strength threshold must satisfy 0 <= theta < 1, got {0}")]
    ThetaOutOfRange(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("coarse factorization failed: {0}")]
    CoarseSolve(#[from] crate::dense::DenseError),
}

/// Smoother used inside AMG V-cycles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AmgSmoother {
    /// Weighted Jacobi with weight 2/3.
    Jacobi,
    /// Forward SOR sweep before coarse correction, backward after.
    Sor,
}

/// Preconditioner selection plus its continuous parameters.
///
/// Serialized flat as `{kind, omega?, theta?, sweeps?, smoother?}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PrecondRepr", into = "PrecondRepr")]
pub enum PrecondConfig {
    None,
    Jacobi,
    Sor { omega: f64, sweeps: usize },
    Ssor { omega: f64 },
    Amg { theta: f64, smoother: AmgSmoother, smoother_omega: f64 },
}

#[derive(Serialize, Deserialize)]
struct PrecondRepr {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    omega: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sweeps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    smoother: Option<AmgSmoother>,
}

impl From<PrecondConfig> for PrecondRepr {
    fn from(c: PrecondConfig) -> PrecondRepr {
        let mut r = PrecondRepr {
            kind: c.kind_name().to_string(),
            omega: None,
            theta: None,
            sweeps: None,
            smoother: None,
        };
        match c {
            PrecondConfig::None | PrecondConfig::Jacobi => {}
            PrecondConfig::Sor { omega, sweeps } => {
                r.omega = Some(omega);
                r.sweeps = Some(sweeps);
            }
            PrecondConfig::Ssor { omega } => r.omega = Some(omega),
            PrecondConfig::Amg {
                theta,
                smoother,
                smoother_omega,
            } => {
                r.theta = Some(theta);
                r.smoother = Some(smoother);
                if smoother == AmgSmoother::Sor {
                    r.omega = Some(smoother_omega);
                }
            }
        }
        r
    }
}

impl TryFrom<PrecondRepr> for PrecondConfig {
    type Error = PrecondError;
    fn try_from(r: PrecondRepr) -> Result<PrecondConfig, PrecondError> {
        let cfg = match r.kind.as_str() {
            "none" => PrecondConfig::None,
            "jacobi" => PrecondConfig::Jacobi,
            "sor" => PrecondConfig::Sor {
                omega: r.omega.unwrap_or(1.0),
                sweeps: r.sweeps.unwrap_or(1),
            },
            "ssor" => PrecondConfig::Ssor {
                omega: r.omega.unwrap_or(1.0),
            },
            "amg" => PrecondConfig::Amg {
                theta: r.theta.unwrap_or(0.0),
                smoother: r.smoother.unwrap_or(AmgSmoother::Jacobi),
                smoother_omega: r.omega.unwrap_or(1.0),
            },
            other => {
                return Err(PrecondError::DimensionMismatch(format!(
                    "unknown preconditioner kind '{other}'"
                )))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl PrecondConfig {
    pub fn kind_name(&self) -> &'static str {
        match self {
            PrecondConfig::None => "none",
            PrecondConfig::Jacobi => "jacobi",
            PrecondConfig::Sor { .. } => "sor",
            PrecondConfig::Ssor { .. } => "ssor",
            PrecondConfig::Amg { .. } => "amg",
        }
    }

    pub fn validate(&self) -> Result<(), PrecondError> {
        match *self {
            PrecondConfig::Sor { omega, .. } | PrecondConfig::Ssor { omega } => {
                if !(omega > 0.0 && omega < 2.0) {
                    return Err(PrecondError::OmegaOutOfRange(omega));
                }
            }
            PrecondConfig::Amg {
                theta,
                smoother,
                smoother_omega,
            } => {
                if !(0.0..1.0).contains(&theta) {
                    return Err(PrecondError::ThetaOutOfRange(theta));
                }
                if smoother == AmgSmoother::Sor && !(smoother_omega > 0.0 && smoother_omega < 2.0)
                {
                    return Err(PrecondError::OmegaOutOfRange(smoother_omega));
                }
            }
            PrecondConfig::None | PrecondConfig::Jacobi => {}
        }
        Ok(())
    }
}

pub(crate) fn checked_diagonal(a: &CsrMatrix) -> Result<Vec<f64>, PrecondError> {
    if a.nrows() != a.ncols() {
        return Err(PrecondError::NotSquare {
            nrows: a.nrows(),
            ncols: a.ncols(),
        });
    }
    let diag = a.diagonal();
    for (i, &d) in diag.iter().enumerate() {
        if d == 0.0 {
            return Err(PrecondError::ZeroDiagonal(i));
        }
    }
    Ok(diag)
}

/// z = D^{-1} r.
pub fn jacobi_apply(a: &CsrMatrix, r: &[f64]) -> Result<Vec<f64>, PrecondError> {
    let diag = checked_diagonal(a)?;
    if r.len() != a.nrows() {
        return Err(PrecondError::DimensionMismatch(format!(
            "jacobi: system is {}, residual has {} entries",
            a.nrows(),
            r.len()
        )));
    }
    Ok(r.iter().zip(&diag).map(|(ri, di)| ri / di).collect())
}

/// One in-place SOR sweep,
/// x' = (D + wL)^{-1} [(1-w) D x + w b - w U x],
/// realized as forward substitution over rows.
pub fn sor_iterate(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    omega: f64,
) -> Result<(), PrecondError> {
    if !(omega > 0.0 && omega < 2.0) {
        return Err(PrecondError::OmegaOutOfRange(omega));
    }
    let diag = checked_diagonal(a)?;
    let n = a.nrows();
    if b.len() != n || x.len() != n {
        return Err(PrecondError::DimensionMismatch(format!(
            "sor: system is {}, b has {}, x has {}",
            n,
            b.len(),
            x.len()
        )));
    }
    sor_sweep_with_diag(a, b, x, omega, &diag);
    Ok(())
}

/// Forward SOR sweep with a pre-validated diagonal; used by solver hot
/// loops that set up once and sweep many times.
pub(crate) fn sor_sweep_with_diag(a: &CsrMatrix, b: &[f64], x: &mut [f64], omega: f64, diag: &[f64]) {
    for i in 0..a.nrows() {
        let (cols, vals) = a.row(i);
        let mut sum = 0.0;
        for (&j, &v) in cols.iter().zip(vals) {
            if j != i {
                sum += v * x[j];
            }
        }
        x[i] = (1.0 - omega) * x[i] + omega * (b[i] - sum) / diag[i];
    }
}

/// z such that `sweeps` SOR iterations on A z = r from z = 0 land on z;
/// for sweeps = 1 this is z = w (D + wL)^{-1} r.
pub fn sor_precond_apply(
    a: &CsrMatrix,
    r: &[f64],
    omega: f64,
    sweeps: usize,
) -> Result<Vec<f64>, PrecondError> {
    let mut z = vec![0.0; r.len()];
    for _ in 0..sweeps.max(1) {
        sor_iterate(a, r, &mut z, omega)?;
    }
    Ok(z)
}

/// z = M^{-1} r with M = 1/(w(2-w)) (D + wL) D^{-1} (D + wU):
/// forward solve, diagonal scale, backward solve, then the scalar factor.
pub fn ssor_precond_apply(
    a: &CsrMatrix,
    r: &[f64],
    omega: f64,
) -> Result<Vec<f64>, PrecondError> {
    if !(omega > 0.0 && omega < 2.0) {
        return Err(PrecondError::OmegaOutOfRange(omega));
    }
    let diag = checked_diagonal(a)?;
    let n = a.nrows();
    if r.len() != n {
        return Err(PrecondError::DimensionMismatch(format!(
            "ssor: system is {}, residual has {} entries",
            n,
            r.len()
        )));
    }
    check_structural_symmetry(a)?;
    Ok(ssor_apply_with_diag(a, r, omega, &diag))
}

/// Structural symmetry guard: SSOR only makes sense for symmetric A.
pub(crate) fn check_structural_symmetry(a: &CsrMatrix) -> Result<(), PrecondError> {
    let t = a.transpose();
    for i in 0..a.nrows() {
        if a.row(i).0 != t.row(i).0 {
            return Err(PrecondError::NotSymmetric(i));
        }
    }
    Ok(())
}

/// SSOR application with pre-validated diagonal and symmetry.
pub(crate) fn ssor_apply_with_diag(a: &CsrMatrix, r: &[f64], omega: f64, diag: &[f64]) -> Vec<f64> {
    let n = a.nrows();
    // t = (D + wL)^{-1} r
    let mut z = vec![0.0; n];
    for i in 0..n {
        let (cols, vals) = a.row(i);
        let mut sum = r[i];
        for (&j, &v) in cols.iter().zip(vals) {
            if j < i {
                sum -= omega * v * z[j];
            }
        }
        z[i] = sum / diag[i];
    }
    // s = D t
    for i in 0..n {
        z[i] *= diag[i];
    }
    // z = (D + wU)^{-1} s
    for i in (0..n).rev() {
        let (cols, vals) = a.row(i);
        let mut sum = z[i];
        for (&j, &v) in cols.iter().zip(vals) {
            if j > i {
                sum -= omega * v * z[j];
            }
        }
        z[i] = sum / diag[i];
    }
    let scale = omega * (2.0 - omega);
    for zi in z.iter_mut() {
        *zi *= scale;
    }
    z
}
