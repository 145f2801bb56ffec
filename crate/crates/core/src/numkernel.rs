//! Dense numerical kernels: numerical rank, pivoted QR permutations,
//! least-squares Newton refinement and square linear solves.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub type RealMatrix = DMatrix<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumError {
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("leading {expected}x{expected} block has rank {rank} after pivoting")]
    VerificationFailed { rank: usize, expected: usize },
    #[error("Newton iteration did not converge after {iterations} steps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("non-finite value during Newton iteration")]
    NonFinite,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("evaluation failed: {0}")]
    Eval(String),
}

/// Singular values in decreasing order.
pub fn singular_values(m: &RealMatrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `abstol * max(σ₁, 1)`.
pub fn svd_rank(m: &RealMatrix, abstol: f64) -> usize {
    let s = singular_values(m);
    let Some(&s1) = s.first() else { return 0 };
    let cut = abstol * s1.max(1.0);
    s.iter().filter(|&&v| v > cut).count()
}

/// Column order chosen by Householder QR with column pivoting, stopped after
/// `steps` eliminations. Norms within a relative 1e-12 of each other count
/// as ties and go to the lowest index.
pub fn pivoted_qr_columns(m: &RealMatrix, steps: usize) -> Vec<usize> {
    let (rows, cols) = m.shape();
    let mut a = m.clone();
    let mut perm: Vec<usize> = (0..cols).collect();
    let steps = steps.min(rows).min(cols);
    for k in 0..steps {
        let norms: Vec<f64> = (k..cols).map(|j| a.view((k, j), (rows - k, 1)).norm()).collect();
        let max = norms.iter().cloned().fold(0.0, f64::max);
        let best = k + norms.iter().position(|&v| v >= max * (1.0 - 1e-12)).unwrap_or(0);
        if best != k {
            a.swap_columns(k, best);
            perm.swap(k, best);
        }
        // Householder reflector zeroing a[k+1.., k].
        let x: DVector<f64> = a.view((k, k), (rows - k, 1)).column(0).into_owned();
        let alpha = x.norm();
        if alpha == 0.0 {
            continue;
        }
        let mut v = x.clone();
        v[0] += if x[0] >= 0.0 { alpha } else { -alpha };
        let vnorm2 = v.norm_squared();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in k..cols {
            let dot: f64 = (0..rows - k).map(|i| v[i] * a[(k + i, j)]).sum();
            let scale = 2.0 * dot / vnorm2;
            for i in 0..rows - k {
                a[(k + i, j)] -= scale * v[i];
            }
        }
    }
    perm
}

/// Row and column permutations that move a nonsingular `r×r` block, with
/// `r = svd_rank(m)`, to the top-left corner. Returns `(piv_row, piv_col, r)`.
pub fn hqr_permutations(m: &RealMatrix, abstol: f64) -> Result<(Vec<usize>, Vec<usize>, usize), NumError> {
    let r = svd_rank(m, abstol);
    let piv_col = pivoted_qr_columns(m, r);
    // Rows are pivoted within the chosen columns so the block keeps rank r.
    let all_rows: Vec<usize> = (0..m.nrows()).collect();
    let piv_row = pivoted_qr_columns(&submatrix(m, &all_rows, &piv_col[..r]).transpose(), r);
    let block = submatrix(m, &piv_row[..r], &piv_col[..r]);
    let rank = svd_rank(&block, abstol);
    if rank < r {
        return Err(NumError::VerificationFailed { rank, expected: r });
    }
    Ok((piv_row, piv_col, r))
}

pub fn submatrix(m: &RealMatrix, rows: &[usize], cols: &[usize]) -> RealMatrix {
    RealMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Minimum-norm least-squares solution of `a x = b`.
pub fn lstsq_min_norm(a: &RealMatrix, b: &[f64]) -> Vec<f64> {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return vec![0.0; cols];
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = (smax * 1e-13).max(f64::MIN_POSITIVE);
    let rhs = DVector::from_column_slice(b);
    match svd.solve(&rhs, eps) {
        Ok(x) => x.iter().copied().collect(),
        Err(_) => vec![0.0; cols],
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Newton iteration with minimum-norm steps. `f` returns the residual and
/// its Jacobian at a point; the Jacobian may be rectangular. Stops once the
/// Euclidean residual norm is at most `abstol`.
pub fn newton_refine(
    f: &dyn Fn(&[f64]) -> Result<(Vec<f64>, RealMatrix), NumError>,
    x0: &[f64],
    abstol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, NumError> {
    let mut x = x0.to_vec();
    let mut residual = f64::INFINITY;
    for _ in 0..=max_iter.max(1) {
        let (r, j) = f(&x)?;
        if j.nrows() != r.len() || j.ncols() != x.len() {
            return Err(NumError::Dimension(format!(
                "residual {} / jacobian {}x{} / unknowns {}",
                r.len(),
                j.nrows(),
                j.ncols(),
                x.len()
            )));
        }
        residual = norm(&r);
        if !residual.is_finite() {
            return Err(NumError::NonFinite);
        }
        if residual <= abstol {
            return Ok(x);
        }
        let step = lstsq_min_norm(&j, &r);
        for (xi, si) in x.iter_mut().zip(&step) {
            *xi -= si;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(NumError::NonFinite);
        }
    }
    Err(NumError::NoConvergence { iterations: max_iter, residual })
}

/// Minimum-norm Gauss-Newton that always returns its best iterate and the
/// Euclidean residual there, for callers that accept a least-squares answer.
pub fn gauss_newton(
    f: &dyn Fn(&[f64]) -> Result<(Vec<f64>, RealMatrix), NumError>,
    x0: &[f64],
    abstol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, f64), NumError> {
    let mut x = x0.to_vec();
    let (r, _) = f(&x)?;
    let mut best = (x.clone(), norm(&r));
    for _ in 0..max_iter {
        let (r, j) = f(&x)?;
        let res = norm(&r);
        if res.is_finite() && res < best.1 {
            best = (x.clone(), res);
        }
        if res <= abstol {
            break;
        }
        let step = lstsq_min_norm(&j, &r);
        for (xi, si) in x.iter_mut().zip(&step) {
            *xi -= si;
        }
        if x.iter().any(|v| !v.is_finite()) {
            break;
        }
    }
    if let Ok((r, _)) = f(&x) {
        let res = norm(&r);
        if res.is_finite() && res < best.1 {
            best = (x, res);
        }
    }
    Ok(best)
}

/// Solves a square system by LU with partial pivoting.
pub fn solve_linear(a: &RealMatrix, b: &[f64]) -> Result<Vec<f64>, NumError> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(NumError::Dimension(format!("{}x{} system with rhs {}", n, a.ncols(), b.len())));
    }
    let scale = a.norm();
    if n > 0 && scale == 0.0 {
        return Err(NumError::Singular);
    }
    let mut lu = a.clone();
    let mut x = b.to_vec();
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| lu[(i, k)].abs().total_cmp(&lu[(j, k)].abs()).then(j.cmp(&i)))
            .expect("nonempty");
        if lu[(p, k)].abs() < 1e-12 * scale {
            return Err(NumError::Singular);
        }
        if p != k {
            lu.swap_rows(p, k);
            x.swap(p, k);
        }
        for i in k + 1..n {
            let factor = lu[(i, k)] / lu[(k, k)];
            if factor == 0.0 {
                continue;
            }
            for j in k..n {
                lu[(i, j)] -= factor * lu[(k, j)];
            }
            x[i] -= factor * x[k];
        }
    }
    for k in (0..n).rev() {
        let mut s = x[k];
        for j in k + 1..n {
            s -= lu[(k, j)] * x[j];
        }
        x[k] = s / lu[(k, k)];
    }
    Ok(x)
}
