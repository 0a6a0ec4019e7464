//! Small dense helpers for covariance work: pivoted Cholesky, PSD checks,
//! and Schur complements with a pseudo-inverse fallback.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative pivot threshold below which a covariance block is treated as singular.
pub const PIVOT_TOL: f64 = 1e-12;

/// Result of a pivoted Cholesky factorization.
#[derive(Debug, Clone)]
pub struct PivotedCholesky {
    /// Lower-triangular factor of the permuted matrix, `P A Pᵀ = L Lᵀ`.
    pub factor: DMatrix<f64>,
    /// `perm[k]` is the original index placed at position `k`.
    pub perm: Vec<usize>,
    /// Number of pivots accepted before the remaining diagonal fell below tolerance.
    pub rank: usize,
}

impl PivotedCholesky {
    pub fn is_full_rank(&self) -> bool {
        self.rank == self.perm.len()
    }

    /// Natural log of the determinant; `-inf` when rank deficient.
    pub fn log_det(&self) -> f64 {
        if !self.is_full_rank() {
            return f64::NEG_INFINITY;
        }
        (0..self.rank).map(|k| 2.0 * self.factor[(k, k)].ln()).sum()
    }

    /// Solves `A x = b` for a full-rank factorization.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.perm.len();
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let mut s = b[self.perm[i]];
            for j in 0..i {
                s -= self.factor[(i, j)] * y[j];
            }
            y[i] = s / self.factor[(i, i)];
        }
        let mut z = DVector::zeros(n);
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..n {
                s -= self.factor[(j, i)] * z[j];
            }
            z[i] = s / self.factor[(i, i)];
        }
        let mut x = DVector::zeros(n);
        for i in 0..n {
            x[self.perm[i]] = z[i];
        }
        x
    }
}

/// Diagonal-pivoted Cholesky of a symmetric PSD matrix.
///
/// Stops when the largest remaining diagonal entry drops below
/// `PIVOT_TOL * max(1, max diag)`.
pub fn pivoted_cholesky(a: &DMatrix<f64>) -> PivotedCholesky {
    let n = a.nrows();
    let mut work = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(1.0_f64, f64::max);
    let tol = PIVOT_TOL * scale;
    let mut factor = DMatrix::zeros(n, n);
    let mut rank = 0;
    for k in 0..n {
        let (mut best, mut best_val) = (k, f64::NEG_INFINITY);
        for i in k..n {
            if work[(i, i)] > best_val {
                best = i;
                best_val = work[(i, i)];
            }
        }
        if !(best_val > tol) {
            break;
        }
        if best != k {
            work.swap_rows(k, best);
            work.swap_columns(k, best);
            factor.swap_rows(k, best);
            perm.swap(k, best);
        }
        let pivot = work[(k, k)].sqrt();
        factor[(k, k)] = pivot;
        for i in k + 1..n {
            factor[(i, k)] = work[(i, k)] / pivot;
        }
        for i in k + 1..n {
            for j in k + 1..=i {
                let v = work[(i, j)] - factor[(i, k)] * factor[(j, k)];
                work[(i, j)] = v;
                work[(j, i)] = v;
            }
        }
        rank += 1;
    }
    PivotedCholesky { factor, perm, rank }
}

/// Scales `a` to unit diagonal, `D a D` with `D = diag(1/√a_ii)`; zero
/// diagonal entries keep scale 1. Rank decisions made on the result are
/// relative to each variable's own variance.
pub fn equilibrate(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let d: Vec<f64> = (0..a.nrows()).map(|i| if a[(i, i)] > 0.0 { 1.0 / a[(i, i)].sqrt() } else { 1.0 }).collect();
    (DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * d[i] * d[j]), d)
}

/// Log-determinant with the singularity threshold taken relative to
/// `max(1, max diag)` rather than per variable. Meant for conditional
/// covariances of unit-variance variables.
pub fn log_det_absolute(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    pivoted_cholesky(a).log_det()
}

/// Log-determinant through pivoted Cholesky of the equilibrated matrix;
/// `-inf` for singular input. The empty matrix has log-determinant 0.
pub fn log_det(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    let (e, d) = equilibrate(a);
    let l = pivoted_cholesky(&e).log_det();
    if l.is_finite() {
        l - 2.0 * d.iter().map(|x| x.ln()).sum::<f64>()
    } else {
        l
    }
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    let sym = (a + a.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..a.nrows() {
        for j in 0..i {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Solves `A X = B` for symmetric PSD `A`; falls back to the SVD
/// pseudo-inverse when `A` is singular. The flag reports the fallback.
pub fn solve_psd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let n = a.nrows();
    if n == 0 {
        return (DMatrix::zeros(0, b.ncols()), false);
    }
    // solve (D A D) y = D b, then x = D y
    let (e, d) = equilibrate(a);
    let scale_rows = |m: DMatrix<f64>| DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * d[i]);
    let db = scale_rows(b.clone());
    let chol = pivoted_cholesky(&e);
    if chol.is_full_rank() {
        let mut y = DMatrix::zeros(n, b.ncols());
        for c in 0..b.ncols() {
            let col = chol.solve(&db.column(c).into_owned());
            y.set_column(c, &col);
        }
        return (scale_rows(y), false);
    }
    let svd = e.svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0_f64, f64::max);
    let eps = PIVOT_TOL * smax.max(1.0);
    let pinv = svd
        .pseudo_inverse(eps)
        .unwrap_or_else(|_| DMatrix::zeros(n, n));
    (scale_rows(pinv * db), true)
}

/// Extracts the sub-matrix on `rows × cols`.
pub fn select(a: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

/// Conditional covariance `Σ_aa − Σ_ac Σ_cc⁺ Σ_ca`, symmetrized.
pub fn schur_complement(a: &DMatrix<f64>, keep: &[usize], given: &[usize]) -> (DMatrix<f64>, bool) {
    let saa = select(a, keep, keep);
    if given.is_empty() {
        return (saa, false);
    }
    let scc = select(a, given, given);
    let sca = select(a, given, keep);
    let (x, pseudo) = solve_psd(&scc, &sca);
    let s = saa - sca.transpose() * x;
    let sym = (&s + s.transpose()) * 0.5;
    (sym, pseudo)
}
