//! Linear-system generators for four PDE families on the unit square,
//! discretized with central finite differences on a `grid_n` x `grid_n`
//! interior grid (h = 1/(grid_n+1), homogeneous Dirichlet data unless a
//! family supplies boundary values).
//!
//! Each instance carries the feature vector a downstream regression sees:
//! PDE coefficients for the elliptic family, permeability Chebyshev
//! coefficients for Darcy, boundary/source Chebyshev coefficients for
//! Poisson, boundary data for the thermal problem.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sparse::{CsrMatrix, SparseError};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("coefficients are not elliptic: 4*a11*a22 = {lhs:.6} must exceed a12^2 = {rhs:.6}")]
    NotElliptic { lhs: f64, rhs: f64 },
    #[error("grid_n must be at least 2, got {0}")]
    GridTooSmall(usize),
    #[error("boundary value out of range: {name} = {value} not in [{lo}, {hi}]")]
    BoundaryRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("expected {expected} features for {family:?}, got {got}")]
    FeatureCount {
        family: Family,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error("problem file I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("problem file parse: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Elliptic,
    Darcy,
    Poisson,
    Thermal,
}

impl Family {
    pub fn feature_count(&self) -> usize {
        match self {
            Family::Elliptic => 6,
            Family::Darcy => 16,
            Family::Poisson => 8,
            Family::Thermal => 6,
        }
    }
}

impl std::str::FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "elliptic" => Ok(Family::Elliptic),
            "darcy" => Ok(Family::Darcy),
            "poisson" => Ok(Family::Poisson),
            "thermal" => Ok(Family::Thermal),
            other => Err(format!("unknown family '{other}'")),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Family::Elliptic => "elliptic",
            Family::Darcy => "darcy",
            Family::Poisson => "poisson",
            Family::Thermal => "thermal",
        };
        f.write_str(s)
    }
}

/// One generated linear system plus the features that describe it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub family: Family,
    pub features: Vec<f64>,
    pub grid_n: usize,
    pub seed: u64,
    pub matrix: CsrMatrix,
    pub b: Vec<f64>,
}

// ---------------------------------------------------------------------
// Chebyshev fields
// ---------------------------------------------------------------------

/// Evaluate sum_k c[k] T_k(t) with T_0 = 1, T_1 = t, T_{m+1} = 2 t T_m - T_{m-1}.
pub fn cheb_eval_1d(coeffs: &[f64], t: f64) -> f64 {
    let mut acc = 0.0;
    let mut t_prev = 1.0;
    let mut t_cur = t;
    for (k, &c) in coeffs.iter().enumerate() {
        let tk = match k {
            0 => 1.0,
            1 => t_cur,
            _ => {
                let t_next = 2.0 * t * t_cur - t_prev;
                t_prev = t_cur;
                t_cur = t_next;
                t_next
            }
        };
        acc += c * tk;
    }
    acc
}

/// Truncated 2D Chebyshev series on [-1,1]^2. Coefficients are stored in
/// the order 1, x, x^2, ..., then y, xy, x^2 y, ... (x-degree fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cheb2D {
    pub deg_x: usize,
    pub deg_y: usize,
    pub coeffs: Vec<f64>,
}

impl Cheb2D {
    pub fn new(deg_x: usize, deg_y: usize, coeffs: Vec<f64>) -> Self {
        assert_eq!(
            coeffs.len(),
            (deg_x + 1) * (deg_y + 1),
            "Cheb2D coefficient count"
        );
        Cheb2D {
            deg_x,
            deg_y,
            coeffs,
        }
    }

    /// Evaluate at (x, y) in [-1,1]^2.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let nx = self.deg_x + 1;
        let tx: Vec<f64> = cheb_basis(self.deg_x, x);
        let ty: Vec<f64> = cheb_basis(self.deg_y, y);
        let mut acc = 0.0;
        for iy in 0..=self.deg_y {
            for ix in 0..=self.deg_x {
                acc += self.coeffs[iy * nx + ix] * tx[ix] * ty[iy];
            }
        }
        acc
    }
}

fn cheb_basis(deg: usize, t: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(deg + 1);
    out.push(1.0);
    if deg >= 1 {
        out.push(t);
    }
    for _ in 2..=deg {
        let n = out.len();
        out.push(2.0 * t * out[n - 1] - out[n - 2]);
    }
    out
}

/// Map a physical coordinate in [0,1] to the Chebyshev domain [-1,1].
#[inline]
fn to_cheb(t: f64) -> f64 {
    2.0 * t - 1.0
}

/// Low-order random source field used for elliptic/Darcy right-hand sides.
fn random_source_field(rhs_seed: u64) -> Cheb2D {
    let mut rng = ChaCha8Rng::seed_from_u64(rhs_seed);
    let coeffs: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Cheb2D::new(1, 1, coeffs)
}

// ---------------------------------------------------------------------
// Grid helpers
// ---------------------------------------------------------------------

struct Grid {
    n: usize,
    h: f64,
}

impl Grid {
    fn new(n: usize) -> Result<Grid, GenError> {
        if n < 2 {
            return Err(GenError::GridTooSmall(n));
        }
        Ok(Grid {
            n,
            h: 1.0 / (n as f64 + 1.0),
        })
    }

    #[inline]
    fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.n + ix
    }

    /// Physical coordinate of interior node (ix, iy).
    #[inline]
    fn xy(&self, ix: usize, iy: usize) -> (f64, f64) {
        ((ix as f64 + 1.0) * self.h, (iy as f64 + 1.0) * self.h)
    }
}

// ---------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------

/// Second-order elliptic operator
/// a11 u_xx + a12 u_xy + a22 u_yy + a1 u_x + a2 u_y + a0 u = f
/// with zero Dirichlet boundary. Rejects coefficient sets that fail the
/// ellipticity condition 4 a11 a22 > a12^2.
pub fn gen_elliptic(
    coeffs: [f64; 6],
    grid_n: usize,
    rhs_seed: u64,
) -> Result<ProblemInstance, GenError> {
    let [a11, a12, a22, a1, a2, a0] = coeffs;
    let lhs = 4.0 * a11 * a22;
    let rhs = a12 * a12;
    if lhs <= rhs {
        return Err(GenError::NotElliptic { lhs, rhs });
    }
    let grid = Grid::new(grid_n)?;
    let (n, h) = (grid.n, grid.h);
    let h2 = h * h;

    let center = -2.0 * (a11 + a22) / h2 + a0;
    let east = a11 / h2 + a1 / (2.0 * h);
    let west = a11 / h2 - a1 / (2.0 * h);
    let north = a22 / h2 + a2 / (2.0 * h);
    let south = a22 / h2 - a2 / (2.0 * h);
    let corner = a12 / (4.0 * h2);

    let source = random_source_field(rhs_seed);
    let mut triplets = Vec::with_capacity(9 * n * n);
    let mut b = vec![0.0; n * n];
    for iy in 0..n {
        for ix in 0..n {
            let row = grid.index(ix, iy);
            triplets.push((row, row, center));
            let mut push = |dx: isize, dy: isize, v: f64| {
                let jx = ix as isize + dx;
                let jy = iy as isize + dy;
                if jx >= 0 && jx < n as isize && jy >= 0 && jy < n as isize {
                    triplets.push((row, grid.index(jx as usize, jy as usize), v));
                }
            };
            push(1, 0, east);
            push(-1, 0, west);
            push(0, 1, north);
            push(0, -1, south);
            if a12 != 0.0 {
                // 4-corner stencil for the mixed derivative
                push(1, 1, corner);
                push(-1, -1, corner);
                push(1, -1, -corner);
                push(-1, 1, -corner);
            }
            let (x, y) = grid.xy(ix, iy);
            b[row] = source.eval(to_cheb(x), to_cheb(y));
        }
    }
    let matrix = CsrMatrix::from_triplets(n * n, n * n, &triplets)?;
    Ok(ProblemInstance {
        family: Family::Elliptic,
        features: vec![a11, a12, a22, a1, a2, a0],
        grid_n: n,
        seed: rhs_seed,
        matrix,
        b,
    })
}

/// Darcy operator -div(K grad h) = f with permeability K given as a cubic
/// 2D Chebyshev field (16 coefficients). K is evaluated at cell faces
/// (arithmetic midpoint rule) and clamped to 0.1 * max|K| to keep the
/// operator positive definite. A degenerate all-zero field falls back to
/// unit permeability.
pub fn gen_darcy(
    k_field: &Cheb2D,
    grid_n: usize,
    rhs_seed: u64,
) -> Result<ProblemInstance, GenError> {
    let grid = Grid::new(grid_n)?;
    let (n, h) = (grid.n, grid.h);
    let h2 = h * h;

    // face permeability before clamping: east/north faces of every node
    let face_k = |x: f64, y: f64| k_field.eval(to_cheb(x), to_cheb(y));
    let mut raw_max: f64 = 0.0;
    let mut sample_face = |x: f64, y: f64| {
        let v = face_k(x, y);
        raw_max = raw_max.max(v.abs());
        v
    };
    // faces indexed by the node on their west/south side, including
    // boundary-adjacent faces
    let mut kx = vec![0.0; (n + 1) * n]; // vertical faces: (ix-1/2, iy)
    let mut ky = vec![0.0; n * (n + 1)]; // horizontal faces: (ix, iy-1/2)
    for iy in 0..n {
        for ix in 0..=n {
            let x = (ix as f64 + 0.5) * h;
            let y = (iy as f64 + 1.0) * h;
            kx[iy * (n + 1) + ix] = sample_face(x, y);
        }
    }
    for iy in 0..=n {
        for ix in 0..n {
            let x = (ix as f64 + 1.0) * h;
            let y = (iy as f64 + 0.5) * h;
            ky[iy * n + ix] = sample_face(x, y);
        }
    }
    let floor = if raw_max > 0.0 { 0.1 * raw_max } else { 1.0 };
    let clamp = |v: f64| v.max(floor);

    let source = random_source_field(rhs_seed);
    let mut triplets = Vec::with_capacity(5 * n * n);
    let mut b = vec![0.0; n * n];
    for iy in 0..n {
        for ix in 0..n {
            let row = grid.index(ix, iy);
            let kw = clamp(kx[iy * (n + 1) + ix]);
            let ke = clamp(kx[iy * (n + 1) + ix + 1]);
            let ks = clamp(ky[iy * n + ix]);
            let kn = clamp(ky[(iy + 1) * n + ix]);
            triplets.push((row, row, (ke + kw + kn + ks) / h2));
            if ix + 1 < n {
                triplets.push((row, grid.index(ix + 1, iy), -ke / h2));
            }
            if ix > 0 {
                triplets.push((row, grid.index(ix - 1, iy), -kw / h2));
            }
            if iy + 1 < n {
                triplets.push((row, grid.index(ix, iy + 1), -kn / h2));
            }
            if iy > 0 {
                triplets.push((row, grid.index(ix, iy - 1), -ks / h2));
            }
            let (x, y) = grid.xy(ix, iy);
            b[row] = source.eval(to_cheb(x), to_cheb(y));
        }
    }
    let matrix = CsrMatrix::from_triplets(n * n, n * n, &triplets)?;
    Ok(ProblemInstance {
        family: Family::Darcy,
        features: k_field.coeffs.clone(),
        grid_n: n,
        seed: rhs_seed,
        matrix,
        b,
    })
}

/// Poisson problem on the unit square assembled in the positive definite
/// form (diagonal 4/h^2). The first four features are a shared cubic
/// Chebyshev boundary function (applied along every side, parameterized
/// by the side coordinate); the last four are a bilinear Chebyshev
/// source field.
pub fn gen_poisson(features: [f64; 8], grid_n: usize) -> Result<ProblemInstance, GenError> {
    let grid = Grid::new(grid_n)?;
    let (n, h) = (grid.n, grid.h);
    let h2 = h * h;
    let boundary = &features[0..4];
    let source = Cheb2D::new(1, 1, features[4..8].to_vec());
    let g = |t: f64| cheb_eval_1d(boundary, to_cheb(t));

    let mut triplets = Vec::with_capacity(5 * n * n);
    let mut b = vec![0.0; n * n];
    for iy in 0..n {
        for ix in 0..n {
            let row = grid.index(ix, iy);
            let (x, y) = grid.xy(ix, iy);
            triplets.push((row, row, 4.0 / h2));
            b[row] = source.eval(to_cheb(x), to_cheb(y));
            if ix + 1 < n {
                triplets.push((row, grid.index(ix + 1, iy), -1.0 / h2));
            } else {
                b[row] += g(y) / h2;
            }
            if ix > 0 {
                triplets.push((row, grid.index(ix - 1, iy), -1.0 / h2));
            } else {
                b[row] += g(y) / h2;
            }
            if iy + 1 < n {
                triplets.push((row, grid.index(ix, iy + 1), -1.0 / h2));
            } else {
                b[row] += g(x) / h2;
            }
            if iy > 0 {
                triplets.push((row, grid.index(ix, iy - 1), -1.0 / h2));
            } else {
                b[row] += g(x) / h2;
            }
        }
    }
    let matrix = CsrMatrix::from_triplets(n * n, n * n, &triplets)?;
    Ok(ProblemInstance {
        family: Family::Poisson,
        features: features.to_vec(),
        grid_n: n,
        seed: 0,
        matrix,
        b,
    })
}

/// Steady-state heat equation (Laplace) with prescribed boundary
/// temperatures: a shared cubic Chebyshev profile on the top and bottom
/// edges, constant values on the left ([-100, 0]) and right ([0, 100])
/// edges.
pub fn gen_thermal(features: [f64; 6], grid_n: usize) -> Result<ProblemInstance, GenError> {
    let left = features[4];
    let right = features[5];
    if !(-100.0..=0.0).contains(&left) {
        return Err(GenError::BoundaryRange {
            name: "left",
            value: left,
            lo: -100.0,
            hi: 0.0,
        });
    }
    if !(0.0..=100.0).contains(&right) {
        return Err(GenError::BoundaryRange {
            name: "right",
            value: right,
            lo: 0.0,
            hi: 100.0,
        });
    }
    let grid = Grid::new(grid_n)?;
    let (n, h) = (grid.n, grid.h);
    let h2 = h * h;
    let tb = &features[0..4];
    let g_tb = |t: f64| cheb_eval_1d(tb, to_cheb(t));

    let mut triplets = Vec::with_capacity(5 * n * n);
    let mut b = vec![0.0; n * n];
    for iy in 0..n {
        for ix in 0..n {
            let row = grid.index(ix, iy);
            let (x, _y) = grid.xy(ix, iy);
            triplets.push((row, row, 4.0 / h2));
            if ix + 1 < n {
                triplets.push((row, grid.index(ix + 1, iy), -1.0 / h2));
            } else {
                b[row] += right / h2;
            }
            if ix > 0 {
                triplets.push((row, grid.index(ix - 1, iy), -1.0 / h2));
            } else {
                b[row] += left / h2;
            }
            if iy + 1 < n {
                triplets.push((row, grid.index(ix, iy + 1), -1.0 / h2));
            } else {
                b[row] += g_tb(x) / h2;
            }
            if iy > 0 {
                triplets.push((row, grid.index(ix, iy - 1), -1.0 / h2));
            } else {
                b[row] += g_tb(x) / h2;
            }
        }
    }
    let matrix = CsrMatrix::from_triplets(n * n, n * n, &triplets)?;
    Ok(ProblemInstance {
        family: Family::Thermal,
        features: features.to_vec(),
        grid_n: n,
        seed: 0,
        matrix,
        b,
    })
}

// ---------------------------------------------------------------------
// Randomized sampling
// ---------------------------------------------------------------------

pub use crate::derive_seed;

/// Draw elliptic coefficients: main terms U(-1,1), coupling U(-0.01,0.01),
/// rejected until elliptic, then sign-normalized so a11 > 0.
fn sample_elliptic_coeffs(rng: &mut ChaCha8Rng) -> [f64; 6] {
    loop {
        let a11 = rng.gen_range(-1.0..1.0);
        let a12 = rng.gen_range(-0.01..0.01);
        let a22 = rng.gen_range(-1.0..1.0);
        let a1 = rng.gen_range(-1.0..1.0);
        let a2 = rng.gen_range(-1.0..1.0);
        let a0 = rng.gen_range(-1.0..1.0);
        if 4.0 * a11 * a22 > a12 * a12 {
            let s = if a11 > 0.0 { 1.0 } else { -1.0 };
            return [s * a11, s * a12, s * a22, s * a1, s * a2, s * a0];
        }
    }
}

/// Generate one instance for `family` from a derived instance seed.
pub fn sample_instance(
    family: Family,
    grid_n: usize,
    instance_seed: u64,
) -> Result<ProblemInstance, GenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(instance_seed);
    let mut inst = match family {
        Family::Elliptic => {
            let coeffs = sample_elliptic_coeffs(&mut rng);
            let rhs_seed = rng.gen::<u64>();
            gen_elliptic(coeffs, grid_n, rhs_seed)?
        }
        Family::Darcy => {
            let coeffs: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let rhs_seed = rng.gen::<u64>();
            gen_darcy(&Cheb2D::new(3, 3, coeffs), grid_n, rhs_seed)?
        }
        Family::Poisson => {
            let mut f = [0.0; 8];
            for v in f.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            gen_poisson(f, grid_n)?
        }
        Family::Thermal => {
            let mut f = [0.0; 6];
            for v in f.iter_mut().take(4) {
                *v = rng.gen_range(-25.0..25.0);
            }
            f[4] = rng.gen_range(-100.0..0.0);
            f[5] = rng.gen_range(0.0..100.0);
            gen_thermal(f, grid_n)?
        }
    };
    inst.seed = instance_seed;
    Ok(inst)
}

/// Generate a batch with per-instance seeds derived from `master_seed`.
/// Instances are independent, so generation parallelizes; output order is
/// by index either way.
pub fn generate_batch(
    family: Family,
    grid_n: usize,
    count: usize,
    master_seed: u64,
) -> Result<Vec<ProblemInstance>, GenError> {
    let results = crate::par::map_indices(count, |i| {
        sample_instance(family, grid_n, derive_seed(master_seed, i as u64))
    });
    results.into_iter().collect()
}

// ---------------------------------------------------------------------
// JSONL I/O
// ---------------------------------------------------------------------

pub fn write_problems(path: &std::path::Path, problems: &[ProblemInstance]) -> Result<(), GenError> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for p in problems {
        serde_json::to_writer(&mut f, p)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_problems(path: &std::path::Path) -> Result<Vec<ProblemInstance>, GenError> {
    use std::io::BufRead;
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::sym_eigenvalues;

    #[test]
    fn cheb_eval_basics() {
        assert_eq!(cheb_eval_1d(&[1.0], 0.3), 1.0);
        assert!((cheb_eval_1d(&[0.0, 1.0], 0.5) - 0.5).abs() < 1e-15);
        // T_2(t) = 2t^2 - 1
        assert!((cheb_eval_1d(&[0.0, 0.0, 1.0], 0.5) + 0.5).abs() < 1e-15);
        let c = Cheb2D::new(1, 1, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(c.eval(-0.3, 0.9), 1.0);
        let cx = Cheb2D::new(2, 0, vec![0.0, 0.0, 1.0]);
        assert!((cx.eval(0.5, 0.0) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn elliptic_diagonal_matches_stencil() {
        let p = gen_elliptic([1.0, 0.0, 1.0, 0.0, 0.0, 0.0], 2, 1).unwrap();
        assert_eq!(p.matrix.nrows(), 4);
        // h = 1/3 so -2*(a11+a22)/h^2 = -36
        assert!((p.matrix.get(0, 0) + 36.0).abs() < 1e-12);
    }

    #[test]
    fn elliptic_laplacian_is_symmetric() {
        let p = gen_elliptic([1.0, 0.0, 0.7, 0.0, 0.0, 0.3], 5, 7).unwrap();
        assert!(p.matrix.is_symmetric(0.0));
    }

    #[test]
    fn elliptic_rejects_non_elliptic() {
        let err = gen_elliptic([1.0, 1.0, 0.1, 0.0, 0.0, 0.0], 4, 0).unwrap_err();
        assert!(matches!(err, GenError::NotElliptic { .. }));
    }

    #[test]
    fn darcy_constant_permeability_reduces_to_laplacian() {
        let mut coeffs = vec![0.0; 16];
        coeffs[0] = 1.0;
        let darcy = gen_darcy(&Cheb2D::new(3, 3, coeffs), 4, 9).unwrap();
        // -div(grad u) is the negated elliptic Laplacian
        let ell = gen_elliptic([-1.0, 0.0, -1.0, 0.0, 0.0, 0.0], 4, 9).unwrap();
        assert_eq!(darcy.matrix, ell.matrix);
    }

    #[test]
    fn darcy_matrix_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let coeffs: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = gen_darcy(&Cheb2D::new(3, 3, coeffs), 6, 11).unwrap();
        assert!(p.matrix.is_symmetric(0.0));
        let d = p.matrix.diagonal();
        assert!(d.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn darcy_grid70_matches_reported_size() {
        let mut coeffs = vec![0.0; 16];
        coeffs[0] = 2.0;
        let p = gen_darcy(&Cheb2D::new(3, 3, coeffs), 70, 0).unwrap();
        assert_eq!(p.matrix.nrows(), 4900);
    }

    #[test]
    fn poisson_stencil_and_rhs() {
        // zero boundary, f = 1 everywhere
        let p = gen_poisson([0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0], 3).unwrap();
        let h2 = (1.0f64 / 4.0).powi(2);
        assert!((p.matrix.get(0, 0) - 4.0 / h2).abs() < 1e-9);
        assert!((p.matrix.get(0, 1) + 1.0 / h2).abs() < 1e-9);
        for &v in &p.b {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn poisson_matrix_is_spd() {
        let p = gen_poisson([0.2, -0.1, 0.3, 0.0, 0.5, 0.0, 0.1, 0.0], 8).unwrap();
        assert!(p.matrix.is_symmetric(0.0));
        let eig = sym_eigenvalues(&p.matrix.to_dense().unwrap()).unwrap();
        assert!(eig[0] > 0.0);
    }

    #[test]
    fn thermal_zero_boundary_gives_zero_rhs() {
        let p = gen_thermal([0.0; 6], 4).unwrap();
        assert!(p.b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn thermal_matches_poisson_operator() {
        let t = gen_thermal([0.0, 1.0, 0.0, 0.0, -3.0, 4.0], 5).unwrap();
        let p = gen_poisson([0.0; 8], 5).unwrap();
        assert_eq!(t.matrix, p.matrix);
    }

    #[test]
    fn thermal_linear_field_is_discretely_harmonic() {
        // boundary data of u(x, y) = -100 + 200 x, i.e. 100 * T_1 on
        // top/bottom, -100 on the left edge, +100 on the right edge
        let n = 6;
        let p = gen_thermal([0.0, 100.0, 0.0, 0.0, -100.0, 100.0], n).unwrap();
        let h = 1.0 / (n as f64 + 1.0);
        let mut u = vec![0.0; n * n];
        for iy in 0..n {
            for ix in 0..n {
                let x = (ix as f64 + 1.0) * h;
                u[iy * n + ix] = -100.0 + 200.0 * x;
            }
        }
        let r = p.matrix.spmv(&u).unwrap();
        let bnorm: f64 = p.b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rnorm: f64 = r
            .iter()
            .zip(&p.b)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(rnorm <= 1e-10 * bnorm, "residual {rnorm} vs {bnorm}");
    }

    #[test]
    fn thermal_rejects_out_of_range_boundary() {
        let err = gen_thermal([0.0, 0.0, 0.0, 0.0, 5.0, 50.0], 4).unwrap_err();
        assert!(matches!(err, GenError::BoundaryRange { name: "left", .. }));
    }

    #[test]
    fn all_generated_matrices_have_nonzero_diagonal() {
        for family in [
            Family::Elliptic,
            Family::Darcy,
            Family::Poisson,
            Family::Thermal,
        ] {
            for s in 0..5 {
                let p = sample_instance(family, 6, derive_seed(42, s)).unwrap();
                assert_eq!(p.features.len(), family.feature_count());
                assert!(p.matrix.diagonal().iter().all(|&v| v != 0.0));
            }
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let a = generate_batch(Family::Elliptic, 4, 6, 123).unwrap();
        let b = generate_batch(Family::Elliptic, 4, 6, 123).unwrap();
        let sa = serde_json::to_string(&a).unwrap();
        let sb = serde_json::to_string(&b).unwrap();
        assert_eq!(sa, sb);
        let c = generate_batch(Family::Elliptic, 4, 6, 124).unwrap();
        assert_ne!(sa, serde_json::to_string(&c).unwrap());
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        let probs = generate_batch(Family::Thermal, 3, 4, 9).unwrap();
        write_problems(&path, &probs).unwrap();
        let back = read_problems(&path).unwrap();
        assert_eq!(probs, back);
    }
}
