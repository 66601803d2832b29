//! Classical algebraic multigrid: strength-of-connection graph with
//! threshold `theta`, Ruge-Stuben first-pass C/F splitting, direct
//! interpolation restricted to strong C-neighbors, Galerkin coarse
//! operators, and a V-cycle with one pre- and one post-smoothing step.
//!
//! The threshold is the only tunable: `theta = 0` keeps every negative
//! off-diagonal as a strong connection, larger values prune the graph and
//! coarsen more aggressively.

use crate::dense::LuFactors;
use crate::sparse::CsrMatrix;

use super::{AmgSmoother, PrecondError};

pub const DEFAULT_COARSE_CAP: usize = 64;
const MAX_LEVELS: usize = 30;

/// Strong-dependency graph: `strong[i]` lists the columns j != i with
/// -a_ij >= theta * max_k(-a_ik), the max running over negative
/// off-diagonals of row i. Rows without negative off-diagonals are empty.
#[derive(Debug, Clone)]
pub struct StrengthGraph {
    pub strong: Vec<Vec<usize>>,
}

pub fn amg_strength(a: &CsrMatrix, theta: f64) -> Result<StrengthGraph, PrecondError> {
    if !(0.0..1.0).contains(&theta) {
        return Err(PrecondError::ThetaOutOfRange(theta));
    }
    let n = a.nrows();
    let mut strong = vec![Vec::new(); n];
    for i in 0..n {
        let (cols, vals) = a.row(i);
        let mut max_neg = 0.0f64;
        for (&j, &v) in cols.iter().zip(vals) {
            if j != i && v < 0.0 {
                max_neg = max_neg.max(-v);
            }
        }
        if max_neg == 0.0 {
            continue;
        }
        let cutoff = theta * max_neg;
        for (&j, &v) in cols.iter().zip(vals) {
            if j != i && v < 0.0 && -v >= cutoff {
                strong[i].push(j);
            }
        }
    }
    Ok(StrengthGraph { strong })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PointClass {
    Unassigned,
    Coarse,
    Fine,
}

/// Ruge-Stuben first pass. Returns the class of every point; `None` when
/// no coarse point could be selected (coarsening stagnated).
fn split_cf(strength: &StrengthGraph) -> Option<Vec<PointClass>> {
    let n = strength.strong.len();
    let mut strong_t = vec![Vec::new(); n];
    for (i, deps) in strength.strong.iter().enumerate() {
        for &j in deps {
            strong_t[j].push(i);
        }
    }
    let mut lambda: Vec<i64> = strong_t.iter().map(|v| v.len() as i64).collect();
    let mut class = vec![PointClass::Unassigned; n];
    let mut remaining = n;
    let mut any_coarse = false;
    while remaining > 0 {
        let mut best = usize::MAX;
        let mut best_lambda = -1i64;
        for (j, &l) in lambda.iter().enumerate() {
            if class[j] == PointClass::Unassigned && l > best_lambda {
                best = j;
                best_lambda = l;
            }
        }
        if best_lambda <= 0 {
            // remaining points have no unassigned strong dependents; they
            // are fine points handled by smoothing alone
            for c in class.iter_mut() {
                if *c == PointClass::Unassigned {
                    *c = PointClass::Fine;
                }
            }
            break;
        }
        class[best] = PointClass::Coarse;
        any_coarse = true;
        remaining -= 1;
        for &i in &strong_t[best] {
            if class[i] == PointClass::Unassigned {
                class[i] = PointClass::Fine;
                remaining -= 1;
                for &k in &strength.strong[i] {
                    if class[k] == PointClass::Unassigned {
                        lambda[k] += 1;
                    }
                }
            }
        }
        for &k in &strength.strong[best] {
            if class[k] == PointClass::Unassigned {
                lambda[k] -= 1;
            }
        }
    }
    if any_coarse {
        Some(class)
    } else {
        None
    }
}

/// Direct interpolation: coarse points map to themselves, fine points take
/// weighted combinations of their strong coarse neighbors. Fine points
/// without strong coarse neighbors get an empty row.
fn direct_interpolation(
    a: &CsrMatrix,
    strength: &StrengthGraph,
    class: &[PointClass],
) -> CsrMatrix {
    let n = a.nrows();
    let mut cmap = vec![usize::MAX; n];
    let mut nc = 0;
    for i in 0..n {
        if class[i] == PointClass::Coarse {
            cmap[i] = nc;
            nc += 1;
        }
    }
    let mut triplets = Vec::new();
    for i in 0..n {
        if class[i] == PointClass::Coarse {
            triplets.push((i, cmap[i], 1.0));
            continue;
        }
        let coarse_nbrs: Vec<usize> = strength.strong[i]
            .iter()
            .copied()
            .filter(|&j| class[j] == PointClass::Coarse)
            .collect();
        if coarse_nbrs.is_empty() {
            continue;
        }
        let (cols, vals) = a.row(i);
        let strong = &strength.strong[i];
        let mut diag = 0.0;
        let (mut neg_strong, mut pos_strong) = (0.0, 0.0);
        let (mut neg_c, mut pos_c) = (0.0, 0.0);
        let mut weak_sum = 0.0;
        for (&j, &v) in cols.iter().zip(vals) {
            if j == i {
                diag = v;
            } else if strong.contains(&j) {
                if v < 0.0 {
                    neg_strong += v;
                    if coarse_nbrs.contains(&j) {
                        neg_c += v;
                    }
                } else if v > 0.0 {
                    pos_strong += v;
                    if coarse_nbrs.contains(&j) {
                        pos_c += v;
                    }
                }
            } else {
                // weak connections collapse onto the diagonal; a high
                // threshold therefore degrades the interpolation rather
                // than silently vanishing
                weak_sum += v;
            }
        }
        let mut diag_eff = diag + weak_sum;
        // strong entries with no coarse counterpart of their sign also
        // lump onto the diagonal
        if pos_c == 0.0 {
            diag_eff += pos_strong;
        }
        if neg_c == 0.0 {
            diag_eff += neg_strong;
        }
        if diag_eff.abs() < 1e-300 {
            continue;
        }
        let alpha = if neg_c != 0.0 { neg_strong / neg_c } else { 0.0 };
        let beta = if pos_c != 0.0 { pos_strong / pos_c } else { 0.0 };
        for (&j, &v) in cols.iter().zip(vals) {
            if j == i || !coarse_nbrs.contains(&j) {
                continue;
            }
            let w = if v < 0.0 {
                -alpha * v / diag_eff
            } else {
                -beta * v / diag_eff
            };
            if w != 0.0 {
                triplets.push((i, cmap[j], w));
            }
        }
    }
    CsrMatrix::from_triplets(n, nc, &triplets).expect("interpolation indices are in range")
}

#[derive(Debug, Clone)]
pub struct AmgLevel {
    pub a: CsrMatrix,
    pub p: CsrMatrix,
    pub inv_diag: Vec<f64>,
}

/// Multigrid hierarchy; immutable after setup and shareable across
/// threads. `degraded` is set when coarsening stagnated or the coarsest
/// factorization failed, in which case the apply is plain Jacobi.
#[derive(Debug, Clone)]
pub struct AmgHierarchy {
    pub levels: Vec<AmgLevel>,
    pub coarsest: Option<CsrMatrix>,
    coarse_lu: Option<LuFactors>,
    fallback_inv_diag: Option<Vec<f64>>,
    pub smoother: AmgSmoother,
    pub smoother_omega: f64,
    pub degraded: bool,
}

impl AmgHierarchy {
    pub fn num_levels(&self) -> usize {
        self.levels.len() + 1
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.levels.iter().map(|l| l.a.nrows()).collect();
        if let Some(c) = &self.coarsest {
            v.push(c.nrows());
        }
        v
    }
}

fn inv_diag_of(a: &CsrMatrix) -> Result<Vec<f64>, PrecondError> {
    let diag = a.diagonal();
    for (i, &d) in diag.iter().enumerate() {
        if d == 0.0 {
            return Err(PrecondError::ZeroDiagonal(i));
        }
    }
    Ok(diag.iter().map(|d| 1.0 / d).collect())
}

fn jacobi_fallback(
    a: &CsrMatrix,
    smoother: AmgSmoother,
    smoother_omega: f64,
) -> Result<AmgHierarchy, PrecondError> {
    log::warn!(
        "amg coarsening stagnated on a {} x {} matrix; falling back to single-level Jacobi",
        a.nrows(),
        a.ncols()
    );
    Ok(AmgHierarchy {
        levels: Vec::new(),
        coarsest: None,
        coarse_lu: None,
        fallback_inv_diag: Some(inv_diag_of(a)?),
        smoother,
        smoother_omega,
        degraded: true,
    })
}

pub fn amg_setup(
    a: &CsrMatrix,
    theta: f64,
    coarse_cap: usize,
    smoother: AmgSmoother,
    smoother_omega: f64,
) -> Result<AmgHierarchy, PrecondError> {
    if a.nrows() != a.ncols() {
        return Err(PrecondError::NotSquare {
            nrows: a.nrows(),
            ncols: a.ncols(),
        });
    }
    if !(0.0..1.0).contains(&theta) {
        return Err(PrecondError::ThetaOutOfRange(theta));
    }
    let coarse_cap = coarse_cap.max(1);
    let mut levels = Vec::new();
    let mut current = a.clone();
    while current.nrows() > coarse_cap && levels.len() < MAX_LEVELS {
        let strength = amg_strength(&current, theta)?;
        let class = match split_cf(&strength) {
            Some(c) => c,
            None => return jacobi_fallback(a, smoother, smoother_omega),
        };
        let p = direct_interpolation(&current, &strength, &class);
        if p.ncols() == 0 || p.ncols() >= current.nrows() {
            return jacobi_fallback(a, smoother, smoother_omega);
        }
        let ap = current.matmul(&p).expect("dimensions agree");
        let coarse = p.transpose().matmul(&ap).expect("dimensions agree");
        let inv_diag = inv_diag_of(&current)?;
        levels.push(AmgLevel {
            a: current,
            p,
            inv_diag,
        });
        current = coarse;
    }
    if current.nrows() > coarse_cap {
        // level cap hit without reaching the coarse size target
        return jacobi_fallback(a, smoother, smoother_omega);
    }
    let lu = match current
        .to_dense()
        .map_err(|e| PrecondError::DimensionMismatch(e.to_string()))
        .and_then(|d| LuFactors::factor(&d).map_err(PrecondError::CoarseSolve))
    {
        Ok(lu) => lu,
        Err(_) => return jacobi_fallback(a, smoother, smoother_omega),
    };
    Ok(AmgHierarchy {
        levels,
        coarsest: Some(current),
        coarse_lu: Some(lu),
        fallback_inv_diag: None,
        smoother,
        smoother_omega,
        degraded: false,
    })
}

/// Weighted-Jacobi relaxation weight.
const JACOBI_WEIGHT: f64 = 2.0 / 3.0;

fn smooth_from_zero(level: &AmgLevel, r: &[f64], smoother: AmgSmoother, omega: f64) -> Vec<f64> {
    match smoother {
        AmgSmoother::Jacobi => r
            .iter()
            .zip(&level.inv_diag)
            .map(|(ri, di)| JACOBI_WEIGHT * ri * di)
            .collect(),
        AmgSmoother::Sor => {
            // forward sweep on A x = r from x = 0
            let n = r.len();
            let mut x = vec![0.0; n];
            for i in 0..n {
                let (cols, vals) = level.a.row(i);
                let mut sum = r[i];
                for (&j, &v) in cols.iter().zip(vals) {
                    if j < i {
                        sum -= v * x[j];
                    }
                }
                x[i] = omega * sum * level.inv_diag[i];
            }
            x
        }
    }
}

fn smooth_in_place(level: &AmgLevel, r: &[f64], x: &mut [f64], smoother: AmgSmoother, omega: f64) {
    match smoother {
        AmgSmoother::Jacobi => {
            let mut ax = vec![0.0; x.len()];
            level.a.spmv_into(x, &mut ax);
            for i in 0..x.len() {
                x[i] += JACOBI_WEIGHT * (r[i] - ax[i]) * level.inv_diag[i];
            }
        }
        AmgSmoother::Sor => {
            // backward sweep, the adjoint of the forward pre-smoother
            let n = x.len();
            for i in (0..n).rev() {
                let (cols, vals) = level.a.row(i);
                let mut sum = 0.0;
                for (&j, &v) in cols.iter().zip(vals) {
                    if j != i {
                        sum += v * x[j];
                    }
                }
                x[i] = (1.0 - omega) * x[i] + omega * (r[i] - sum) * level.inv_diag[i];
            }
        }
    }
}

fn vcycle(h: &AmgHierarchy, depth: usize, r: &[f64]) -> Vec<f64> {
    if depth == h.levels.len() {
        return h
            .coarse_lu
            .as_ref()
            .expect("coarse factorization present")
            .solve(r)
            .expect("coarse solve dimensions agree");
    }
    let level = &h.levels[depth];
    let mut x = smooth_from_zero(level, r, h.smoother, h.smoother_omega);
    let mut ax = vec![0.0; x.len()];
    level.a.spmv_into(&x, &mut ax);
    let fine_res: Vec<f64> = r.iter().zip(&ax).map(|(ri, ai)| ri - ai).collect();
    let coarse_res = level
        .p
        .spmv_transpose(&fine_res)
        .expect("restriction dimensions agree");
    let coarse_x = vcycle(h, depth + 1, &coarse_res);
    let correction = level.p.spmv(&coarse_x).expect("prolongation dimensions agree");
    for (xi, ci) in x.iter_mut().zip(&correction) {
        *xi += ci;
    }
    smooth_in_place(level, r, &mut x, h.smoother, h.smoother_omega);
    x
}

/// One V-cycle applied to the residual from a zero initial guess. Linear
/// in `r`.
pub fn amg_vcycle_apply(h: &AmgHierarchy, r: &[f64]) -> Vec<f64> {
    if let Some(inv_diag) = &h.fallback_inv_diag {
        return r.iter().zip(inv_diag).map(|(ri, di)| ri * di).collect();
    }
    vcycle(h, 0, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::gen_poisson;

    fn poisson_matrix(grid_n: usize) -> CsrMatrix {
        gen_poisson([0.0; 8], grid_n).unwrap().matrix
    }

    #[test]
    fn strength_picks_dominant_entries() {
        // row 0: diag 4, off-diag -1, -1, -0.1; theta 0.25 keeps the two -1
        let a = CsrMatrix::from_triplets(
            4,
            4,
            &[
                (0, 0, 4.0),
                (0, 1, -1.0),
                (0, 2, -1.0),
                (0, 3, -0.1),
                (1, 1, 1.0),
                (2, 2, 1.0),
                (3, 3, 1.0),
            ],
        )
        .unwrap();
        let g = amg_strength(&a, 0.25).unwrap();
        assert_eq!(g.strong[0], vec![1, 2]);
        assert!(g.strong[1].is_empty());
    }

    #[test]
    fn strength_theta_zero_keeps_all_negative() {
        let a = CsrMatrix::from_triplets(
            2,
            2,
            &[(0, 0, 2.0), (0, 1, -1e-9), (1, 0, -1.0), (1, 1, 2.0)],
        )
        .unwrap();
        let g = amg_strength(&a, 0.0).unwrap();
        assert_eq!(g.strong[0], vec![1]);
        assert_eq!(g.strong[1], vec![0]);
    }

    #[test]
    fn strength_of_diagonal_matrix_is_empty() {
        let a = CsrMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (1, 1, 2.0), (2, 2, 3.0)]).unwrap();
        let g = amg_strength(&a, 0.5).unwrap();
        assert!(g.strong.iter().all(|s| s.is_empty()));
    }

    #[test]
    fn setup_coarsens_poisson() {
        let a = poisson_matrix(8); // 64 unknowns
        let h = amg_setup(&a, 0.25, 16, AmgSmoother::Jacobi, 1.0).unwrap();
        assert!(h.num_levels() >= 2);
        let sizes = h.level_sizes();
        for w in sizes.windows(2) {
            assert!(w[1] < w[0], "sizes must decrease: {sizes:?}");
        }
        assert!(!h.degraded);
    }

    #[test]
    fn setup_small_matrix_is_direct_solve() {
        let a = poisson_matrix(4); // 16 unknowns <= cap
        let h = amg_setup(&a, 0.25, DEFAULT_COARSE_CAP, AmgSmoother::Jacobi, 1.0).unwrap();
        assert_eq!(h.num_levels(), 1);
        let b: Vec<f64> = (0..16).map(|i| (i as f64).sin()).collect();
        let z = amg_vcycle_apply(&h, &b);
        let az = a.spmv(&z).unwrap();
        let rnorm: f64 = az
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let bnorm: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(rnorm <= 1e-10 * bnorm);
    }

    #[test]
    fn galerkin_matches_dense_triple_product() {
        let a = poisson_matrix(6); // 36 unknowns
        let h = amg_setup(&a, 0.25, 8, AmgSmoother::Jacobi, 1.0).unwrap();
        let lvl = &h.levels[0];
        let coarse = if h.levels.len() > 1 {
            &h.levels[1].a
        } else {
            h.coarsest.as_ref().unwrap()
        };
        let pd = lvl.p.to_dense().unwrap();
        let ad = lvl.a.to_dense().unwrap();
        let dense = pd.transpose().matmul(&ad).unwrap().matmul(&pd).unwrap();
        for i in 0..coarse.nrows() {
            for j in 0..coarse.ncols() {
                assert!(
                    (coarse.get(i, j) - dense.get(i, j)).abs() <= 1e-12,
                    "mismatch at ({i}, {j})"
                );
            }
        }
    }

    #[test]
    fn vcycle_zero_maps_to_zero() {
        let a = poisson_matrix(8);
        let h = amg_setup(&a, 0.25, 16, AmgSmoother::Jacobi, 1.0).unwrap();
        let z = amg_vcycle_apply(&h, &vec![0.0; 64]);
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vcycle_is_linear() {
        let a = poisson_matrix(6);
        let n = 36;
        let h = amg_setup(&a, 0.25, 8, AmgSmoother::Jacobi, 1.0).unwrap();
        let r1: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let r2: Vec<f64> = (0..n).map(|i| (i as f64 * 1.3).cos()).collect();
        let sum: Vec<f64> = r1.iter().zip(&r2).map(|(a, b)| a + b).collect();
        let z1 = amg_vcycle_apply(&h, &r1);
        let z2 = amg_vcycle_apply(&h, &r2);
        let zs = amg_vcycle_apply(&h, &sum);
        for i in 0..n {
            assert!((zs[i] - z1[i] - z2[i]).abs() <= 1e-12 * zs[i].abs().max(1.0));
        }
    }

    #[test]
    fn vcycle_operator_is_symmetric_for_symmetric_a() {
        for smoother in [AmgSmoother::Jacobi, AmgSmoother::Sor] {
            let a = poisson_matrix(8);
            let n = 64;
            let h = amg_setup(&a, 0.25, 16, smoother, 1.2).unwrap();
            let mut c = vec![vec![0.0; n]; n];
            for j in 0..n {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                let col = amg_vcycle_apply(&h, &e);
                for i in 0..n {
                    c[i][j] = col[i];
                }
            }
            let scale = c
                .iter()
                .flatten()
                .fold(0.0f64, |m, v| m.max(v.abs()))
                .max(1e-300);
            for i in 0..n {
                for j in 0..i {
                    assert!(
                        (c[i][j] - c[j][i]).abs() <= 1e-10 * scale,
                        "{smoother:?} asymmetric at ({i}, {j})"
                    );
                }
            }
        }
    }

    #[test]
    fn stagnation_falls_back_to_jacobi() {
        // diagonal matrix: no strong connections anywhere
        let a = CsrMatrix::from_triplets(
            100,
            100,
            &(0..100).map(|i| (i, i, 2.0)).collect::<Vec<_>>(),
        )
        .unwrap();
        let h = amg_setup(&a, 0.25, 8, AmgSmoother::Jacobi, 1.0).unwrap();
        assert!(h.degraded);
        let r = vec![1.0; 100];
        let z = amg_vcycle_apply(&h, &r);
        assert!(z.iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }
}
