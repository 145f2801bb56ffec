//! Signature matrix, Pryce's structural analysis and prolongation.

use thiserror::Error;

use crate::expr::{Expr, JetVar};

/// `sigma[i][j]` is the highest order of `x_j` in equation `i`; `None` is −∞.
pub type SignatureMatrix = Vec<Vec<Option<u32>>>;

/// Square matrix of symbolic entries, indexed `[row][col]`.
pub type JacobianMatrix = Vec<Vec<Expr>>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StructuralError {
    #[error("the DAE does not admit a perfect matching")]
    NoPerfectMatching,
    #[error("signature matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuralSolution {
    pub c: Vec<u32>,
    pub d: Vec<u32>,
    pub delta: i64,
    /// `transversal[i]` is the variable matched to equation `i`.
    pub transversal: Vec<usize>,
}

pub fn signature_matrix(equations: &[Expr], n: usize) -> SignatureMatrix {
    equations.iter().map(|e| (0..n).map(|j| e.highest_order(j)).collect()).collect()
}

fn check_square(sigma: &SignatureMatrix) -> Result<usize, StructuralError> {
    let n = sigma.len();
    for row in sigma {
        if row.len() != n {
            return Err(StructuralError::NotSquare { rows: n, cols: row.len() });
        }
    }
    Ok(n)
}

/// Maximum total weight of a perfect matching over finite entries, restricted
/// to the given rows and columns; `None` when no such matching exists.
fn max_matching(sigma: &SignatureMatrix, rows: &[usize], cols: &[usize]) -> Option<(i64, Vec<usize>)> {
    let n = rows.len();
    if n == 0 {
        return Some((0, Vec::new()));
    }
    let max_w = rows
        .iter()
        .flat_map(|&i| cols.iter().filter_map(move |&j| sigma[i][j]))
        .max()? as i64;
    // Finite entries cost max_w − σ ≥ 0; forbidden ones cost more than any
    // all-finite assignment, so using one signals that none exists.
    let forbidden = (n as i64 + 1) * (max_w + 1);
    let cost = |a: usize, b: usize| match sigma[rows[a]][cols[b]] {
        Some(s) => max_w - s as i64,
        None => forbidden,
    };
    let assign = hungarian(n, &cost);
    let mut total = 0;
    for (a, &b) in assign.iter().enumerate() {
        total += sigma[rows[a]][cols[b]]? as i64;
    }
    Some((total, assign))
}

/// Minimum-cost assignment (shortest augmenting paths with potentials).
/// Returns `assign[row] = col`.
fn hungarian(n: usize, cost: &dyn Fn(usize, usize) -> i64) -> Vec<usize> {
    const INF: i64 = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Lexicographically smallest maximum-weight transversal.
pub fn max_transversal(sigma: &SignatureMatrix) -> Result<(i64, Vec<usize>), StructuralError> {
    let n = check_square(sigma)?;
    let all: Vec<usize> = (0..n).collect();
    let (best, _) = max_matching(sigma, &all, &all).ok_or(StructuralError::NoPerfectMatching)?;
    let mut transversal = Vec::with_capacity(n);
    let mut free_cols = all.clone();
    let mut fixed_weight = 0i64;
    for i in 0..n {
        let rest_rows: Vec<usize> = (i + 1..n).collect();
        let mut chosen = None;
        for (pos, &j) in free_cols.iter().enumerate() {
            let Some(s) = sigma[i][j] else { continue };
            let rest_cols: Vec<usize> = free_cols.iter().copied().filter(|&c| c != j).collect();
            if let Some((w, _)) = max_matching(sigma, &rest_rows, &rest_cols) {
                if fixed_weight + s as i64 + w == best {
                    chosen = Some((pos, j, s));
                    break;
                }
            }
        }
        let (pos, j, s) = chosen.expect("an optimal completion exists");
        free_cols.remove(pos);
        fixed_weight += s as i64;
        transversal.push(j);
    }
    Ok((best, transversal))
}

/// Smallest nonnegative duals for a given maximum-weight transversal.
pub fn duals(sigma: &SignatureMatrix, transversal: &[usize]) -> (Vec<u32>, Vec<u32>) {
    let n = sigma.len();
    let mut c = vec![0i64; n];
    let mut d = vec![0i64; n];
    loop {
        for j in 0..n {
            d[j] = (0..n).filter_map(|i| sigma[i][j].map(|s| s as i64 + c[i])).max().unwrap_or(0).max(0);
        }
        let mut changed = false;
        for i in 0..n {
            let t = transversal[i];
            let ci = d[t] - sigma[i][t].expect("transversal entry is finite") as i64;
            if ci != c[i] {
                c[i] = ci;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (c.into_iter().map(|v| v as u32).collect(), d.into_iter().map(|v| v as u32).collect())
}

/// Pryce's method: maximum-weight transversal, then the canonical duals.
pub fn solve_assignment(sigma: &SignatureMatrix) -> Result<StructuralSolution, StructuralError> {
    let (_, transversal) = max_transversal(sigma)?;
    let (c, d) = duals(sigma, &transversal);
    let delta = d.iter().map(|&v| v as i64).sum::<i64>() - c.iter().map(|&v| v as i64).sum::<i64>();
    Ok(StructuralSolution { c, d, delta, transversal })
}

/// `F^(c)` split into blocks `B_0..B_kc`; `B_p` holds `D^(p + c_j − kc) F_j`
/// for every equation with a nonnegative exponent, in equation order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProlongedSystem {
    pub n: usize,
    pub c: Vec<u32>,
    pub d: Vec<u32>,
    pub kc: u32,
    pub kd: u32,
    pub blocks: Vec<Vec<Expr>>,
    /// `(equation, derivative order)` for each entry of `blocks`.
    pub origins: Vec<Vec<(usize, u32)>>,
}

impl ProlongedSystem {
    pub fn top_block(&self) -> &[Expr] {
        self.blocks.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// `B_0 ∪ … ∪ B_(kc−1)`.
    pub fn constraints(&self) -> Vec<Expr> {
        self.blocks[..self.blocks.len() - 1].iter().flatten().cloned().collect()
    }

    /// `x_j^(d_j)` for every variable.
    pub fn leading_vars(&self) -> Vec<JetVar> {
        self.d.iter().enumerate().map(|(j, &dj)| JetVar::new(j, dj)).collect()
    }

    pub fn equation_count(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }
}

pub fn prolong(equations: &[Expr], sol: &StructuralSolution) -> ProlongedSystem {
    let n = sol.d.len();
    let kc = sol.c.iter().copied().max().unwrap_or(0);
    let kd = sol.d.iter().copied().max().unwrap_or(0);
    // derivatives[i][k] = D^k F_i
    let derivatives: Vec<Vec<Expr>> = equations
        .iter()
        .zip(&sol.c)
        .map(|(f, &ci)| {
            let mut out = vec![f.clone()];
            for _ in 0..ci {
                let next = out.last().unwrap().total_derivative();
                out.push(next);
            }
            out
        })
        .collect();
    let mut blocks = Vec::new();
    let mut origins = Vec::new();
    for p in 0..=kc {
        let mut block = Vec::new();
        let mut origin = Vec::new();
        for (i, &ci) in sol.c.iter().enumerate() {
            if p + ci >= kc {
                let k = p + ci - kc;
                block.push(derivatives[i][k as usize].clone());
                origin.push((i, k));
            }
        }
        blocks.push(block);
        origins.push(origin);
    }
    ProlongedSystem { n, c: sol.c.clone(), d: sol.d.clone(), kc, kd, blocks, origins }
}

/// Symbolic Jacobian of `rows` with respect to `cols`.
pub fn jacobian(rows: &[Expr], cols: &[JetVar]) -> JacobianMatrix {
    rows.iter().map(|f| cols.iter().map(|&v| f.partial_derivative(v)).collect()).collect()
}

/// Jacobian of the top block in the leading variables.
pub fn top_jacobian(ps: &ProlongedSystem) -> JacobianMatrix {
    jacobian(ps.top_block(), &ps.leading_vars())
}

/// `δ(top block) − #constraints`, with `inherited` extra constraints that the
/// prolongation did not produce itself.
pub fn delta_of_prolonged(ps: &ProlongedSystem, inherited: usize) -> Result<i64, StructuralError> {
    let top = signature_matrix(ps.top_block(), ps.n);
    let sol = solve_assignment(&top)?;
    Ok(sol.delta - (ps.equation_count() - ps.top_block().len()) as i64 - inherited as i64)
}
