//! Degeneration detection and Index Reduction by Embedding.
//!
//! A [`Stage`] is a square system `A` (the equations the assignment problem
//! runs on) plus constraints inherited from earlier passes. Each pass
//! prolongs `A`, measures the rank of the top-block Jacobian at a point of
//! the constraint variety and, when it is deficient, replaces the system by
//! the embedding `{f(s,y,z), f(u,ξ,z), g(u,ξ,z)}` over the old variables plus
//! `r` fresh unknowns `u`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::expr::{Expr, JetVar, Point};
use crate::model_io::IterationRecord;
use crate::numkernel::{gauss_newton, hqr_permutations, newton_refine, svd_rank, NumError, RealMatrix};
use crate::structural::{
    jacobian, max_transversal, prolong, signature_matrix, solve_assignment, JacobianMatrix, ProlongedSystem,
    StructuralError, StructuralSolution,
};

pub const DEFAULT_MAX_PASSES: usize = 10;

/// One IRE pass as logged.
pub type IrePassLog = IterationRecord;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IreError {
    #[error(transparent)]
    Structural(#[from] StructuralError),
    #[error(transparent)]
    Numeric(#[from] NumError),
    #[error("this DAE does not have a solution on the component (delta {delta}, n - r = {deficiency})")]
    NoSolution { delta: i64, deficiency: usize },
    #[error("top-block Jacobian still singular after {0} passes")]
    MaxPasses(usize),
    #[error("no consistent point near the witness point (constraint residual {0:e})")]
    Inconsistent(f64),
}

/// Square system plus the constraints it inherited from earlier passes.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub names: Vec<String>,
    pub equations: Vec<Expr>,
    pub inherited: Vec<Expr>,
    /// Number of variables of the user's system; the rest are embedding unknowns.
    pub original: usize,
}

impl Stage {
    pub fn new(names: Vec<String>, equations: Vec<Expr>) -> Self {
        let original = names.len();
        Self { names, equations, inherited: Vec::new(), original }
    }

    pub fn nvars(&self) -> usize {
        self.names.len()
    }
}

/// Structural data of a stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub solution: StructuralSolution,
    pub prolonged: ProlongedSystem,
    /// Inherited constraints followed by the lower blocks of the prolongation.
    pub constraints: Vec<Expr>,
    /// `Σd − Σc − #inherited`.
    pub delta: i64,
    /// Variables of the user's system, copied from the stage.
    pub original: usize,
}

impl Analysis {
    pub fn top_block(&self) -> &[Expr] {
        self.prolonged.top_block()
    }

    pub fn leading_vars(&self) -> Vec<JetVar> {
        self.prolonged.leading_vars()
    }

    /// `x_j^(k)` for `k < d_j`: the coordinates a consistent point must fix.
    pub fn state_vars(&self) -> Vec<JetVar> {
        state_vars(&self.solution.d)
    }
}

pub fn state_vars(d: &[u32]) -> Vec<JetVar> {
    d.iter().enumerate().flat_map(|(j, &dj)| (0..dj).map(move |k| JetVar::new(j, k))).collect()
}

/// Runs the assignment problem on the stage unless `duals` are supplied.
pub fn analyze(stage: &Stage, duals: Option<StructuralSolution>) -> Result<Analysis, IreError> {
    let solution = match duals {
        Some(sol) => sol,
        None => solve_assignment(&signature_matrix(&stage.equations, stage.nvars()))?,
    };
    let prolonged = prolong(&stage.equations, &solution);
    let mut constraints = stage.inherited.clone();
    constraints.extend(prolonged.constraints());
    let delta = solution.delta - stage.inherited.len() as i64;
    Ok(Analysis { solution, prolonged, constraints, delta, original: stage.original })
}

/// Rows and columns of a symbolic system, with its Jacobian cached for
/// repeated numeric evaluation.
#[derive(Debug, Clone)]
pub struct NumericSystem {
    pub rows: Vec<Expr>,
    pub cols: Vec<JetVar>,
    pub jac: JacobianMatrix,
}

impl NumericSystem {
    pub fn new(rows: &[Expr], cols: &[JetVar]) -> Self {
        Self { rows: rows.to_vec(), cols: cols.to_vec(), jac: jacobian(rows, cols) }
    }

    pub fn residual(&self, p: &Point) -> Result<Vec<f64>, NumError> {
        self.rows.iter().map(|f| eval(f, p)).collect()
    }

    pub fn jacobian_at(&self, p: &Point) -> Result<RealMatrix, NumError> {
        evaluate_matrix(&self.jac, p)
    }

    /// Residual and Jacobian with the columns set to `x` and everything else
    /// taken from `base`.
    pub fn eval_at(&self, base: &Point, x: &[f64]) -> Result<(Vec<f64>, RealMatrix), NumError> {
        let p = self.assign(base, x);
        Ok((self.residual(&p)?, self.jacobian_at(&p)?))
    }

    pub fn assign(&self, base: &Point, x: &[f64]) -> Point {
        let mut p = base.clone();
        for (&v, &value) in self.cols.iter().zip(x) {
            p.set(v, value);
        }
        p
    }

    pub fn current(&self, p: &Point) -> Vec<f64> {
        self.cols.iter().map(|&v| p.get(v).unwrap_or(0.0)).collect()
    }
}

fn eval(f: &Expr, p: &Point) -> Result<f64, NumError> {
    let v = f.evaluate(p).map_err(|e| NumError::Eval(e.to_string()))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(NumError::NonFinite)
    }
}

pub fn evaluate_matrix(j: &JacobianMatrix, p: &Point) -> Result<RealMatrix, NumError> {
    let rows = j.len();
    let cols = j.first().map_or(0, Vec::len);
    let mut m = RealMatrix::zeros(rows, cols);
    for (i, row) in j.iter().enumerate() {
        for (k, e) in row.iter().enumerate() {
            if !e.is_zero() {
                m[(i, k)] = eval(e, p)?;
            }
        }
    }
    Ok(m)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Perturbed restarts tried by [`project`] when the first solution is a
/// singular point of the constraints.
const PROJECTION_RESTARTS: usize = 8;

/// Newton-projects the `unknowns` of `p` onto `constraints = 0`. The result
/// satisfies them to `abstol` in the max norm or the call fails.
///
/// Solutions where the constraint Jacobian loses rank are kept only when no
/// regular one turns up: such points typically lie where two components
/// cross, and hidden constraints of the form `y·h = 0` attract Newton there.
pub fn project(p: &Point, constraints: &[Expr], unknowns: &[JetVar], abstol: f64) -> Result<Point, IreError> {
    if constraints.is_empty() || unknowns.is_empty() {
        return Ok(p.clone());
    }
    let sys = NumericSystem::new(constraints, unknowns);
    let accept = |x: &[f64]| -> Option<(Point, bool)> {
        let q = sys.assign(p, x);
        let res = max_abs(&sys.residual(&q).ok()?);
        if res > abstol {
            return None;
        }
        // Unequilibrated and with a loose cut: near a non-reduced constraint
        // such as (y − x²)² the gradient is small but not zero.
        let regular = is_regular(&q, constraints, unknowns, abstol).ok()?;
        Some((q, regular))
    };
    let x0 = sys.current(p);
    let mut fallback = None;
    let mut best_residual = f64::INFINITY;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for attempt in 0..PROJECTION_RESTARTS + 2 {
        let start: Vec<f64> = match attempt {
            0 | 1 => x0.clone(),
            _ => x0.iter().map(|v| v + 0.1 * v.abs().max(1.0) * rng.random_range(-1.0..=1.0)).collect(),
        };
        let x = if attempt == 1 {
            newton_refine(&|x: &[f64]| sys.eval_at(p, x), &start, abstol * 1e-4, 50).ok()
        } else {
            scaled_newton(&sys, &sys.assign(p, &start), abstol * 1e-4, 50).ok()
        };
        let Some(x) = x else { continue };
        match accept(&x) {
            Some((q, true)) => return Ok(q),
            Some((q, false)) => {
                fallback.get_or_insert(q);
            }
            None => {
                if let Ok(r) = sys.residual(&sys.assign(p, &x)) {
                    best_residual = best_residual.min(max_abs(&r));
                }
            }
        }
    }
    fallback.ok_or(IreError::Inconsistent(best_residual))
}

/// Whether the constraint Jacobian over `unknowns` has full rank at `p`,
/// judged without equilibration and with the loose cut `√abstol`.
pub fn is_regular(p: &Point, constraints: &[Expr], unknowns: &[JetVar], abstol: f64) -> Result<bool, IreError> {
    let sys = NumericSystem::new(constraints, unknowns);
    Ok(svd_rank(&sys.jacobian_at(p)?, abstol.sqrt()) == constraints.len().min(unknowns.len()))
}

/// Full rank of the equilibrated constraint Jacobian at `abstol`. Blind to
/// units, unlike [`is_regular`].
pub fn is_regular_scaled(p: &Point, constraints: &[Expr], unknowns: &[JetVar], abstol: f64) -> Result<bool, IreError> {
    let sys = NumericSystem::new(constraints, unknowns);
    Ok(svd_rank(&equilibrate(&sys.jacobian_at(p)?), abstol) == constraints.len().min(unknowns.len()))
}

/// Newton from `p` only, with no restarts: the nearest root, which is the
/// one a trajectory wants when `p` is a good prediction.
pub fn project_local(p: &Point, constraints: &[Expr], unknowns: &[JetVar], abstol: f64) -> Result<Point, IreError> {
    if constraints.is_empty() || unknowns.is_empty() {
        return Ok(p.clone());
    }
    let sys = NumericSystem::new(constraints, unknowns);
    let x = scaled_newton(&sys, p, abstol * 1e-4, 50)?;
    let q = sys.assign(p, &x);
    let res = max_abs(&sys.residual(&q)?);
    if res > abstol {
        return Err(IreError::Inconsistent(res));
    }
    Ok(q)
}

/// Newton on `sys` with every row divided by its Jacobian max-norm at the
/// start point, which keeps the least-squares cut-off meaningful when rows
/// differ by many orders of magnitude.
fn scaled_newton(sys: &NumericSystem, p: &Point, tol: f64, max_iter: usize) -> Result<Vec<f64>, NumError> {
    let x0 = sys.current(p);
    let scale: Vec<f64> = {
        let j = sys.jacobian_at(p)?;
        (0..j.nrows()).map(|i| j.row(i).amax()).map(|s| if s > 0.0 { 1.0 / s } else { 1.0 }).collect()
    };
    let f = |x: &[f64]| {
        let (mut r, mut j) = sys.eval_at(p, x)?;
        for (i, s) in scale.iter().enumerate() {
            r[i] *= s;
            j.row_mut(i).scale_mut(*s);
        }
        Ok((r, j))
    };
    match newton_refine(&f, &x0, tol, max_iter) {
        Ok(x) => Ok(x),
        Err(_) => Ok(gauss_newton(&f, &x0, tol, 2 * max_iter)?.0),
    }
}

/// Least-squares values for the leading variables from the top block. The
/// block need not be consistent at a degenerate point, so this never fails
/// for lack of convergence.
pub fn complete_leading(p: &Point, top: &[Expr], leading: &[JetVar], abstol: f64) -> Result<Point, IreError> {
    let sys = NumericSystem::new(top, leading);
    let f = |x: &[f64]| sys.eval_at(p, x);
    let (x, _) = gauss_newton(&f, &sys.current(p), abstol * 1e-4, 30)?;
    Ok(sys.assign(p, &x))
}

/// Ruiz scaling: rows and columns are rescaled until every nonzero row and
/// column has max-norm close to one. Equations and variables carry
/// arbitrary units (the ring modulator mixes 1e-8 capacitances with unit
/// coefficients in one row) and rank does not depend on diagonal scaling.
/// Entries below `NOISE · ‖m‖max` are rounding noise and are dropped first.
pub fn equilibrate(m: &RealMatrix) -> RealMatrix {
    const NOISE: f64 = 1e-14;
    const SWEEPS: usize = 20;
    let floor = NOISE * m.amax();
    let mut out = m.map(|v| if v.abs() > floor { v } else { 0.0 });
    for _ in 0..SWEEPS {
        for i in 0..out.nrows() {
            let s = out.row(i).amax();
            if s > 0.0 {
                out.row_mut(i).scale_mut(1.0 / s.sqrt());
            }
        }
        for j in 0..out.ncols() {
            let s = out.column(j).amax();
            if s > 0.0 {
                out.column_mut(j).scale_mut(1.0 / s.sqrt());
            }
        }
    }
    out
}

/// Numerical rank of the equilibrated Jacobian `j` at `p`.
pub fn detect_rank(j: &JacobianMatrix, p: &Point, abstol: f64) -> Result<usize, IreError> {
    Ok(svd_rank(&equilibrate(&evaluate_matrix(j, p)?), abstol))
}

/// Top block with rows and leading variables reordered so that the leading
/// `r×r` block of the Jacobian is nonsingular at the point.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedTop {
    pub row_perm: Vec<usize>,
    pub col_perm: Vec<usize>,
    pub rows: Vec<Expr>,
    pub leading: Vec<JetVar>,
    pub r: usize,
}

impl SortedTop {
    /// `s`: leading variables kept as unknowns.
    pub fn s(&self) -> &[JetVar] {
        &self.leading[..self.r]
    }

    /// `y`: leading variables frozen to constants.
    pub fn y(&self) -> &[JetVar] {
        &self.leading[self.r..]
    }
}

pub fn sort_top_block(ps: &ProlongedSystem, p: &Point, r: usize, abstol: f64) -> Result<SortedTop, IreError> {
    let top = ps.top_block();
    let leading = ps.leading_vars();
    let m = equilibrate(&evaluate_matrix(&jacobian(top, &leading), p)?);
    let (row_perm, col_perm, rank) = hqr_permutations(&m, abstol)?;
    if rank != r {
        return Err(NumError::VerificationFailed { rank, expected: r }.into());
    }
    Ok(SortedTop {
        rows: row_perm.iter().map(|&i| top[i].clone()).collect(),
        leading: col_perm.iter().map(|&j| leading[j]).collect(),
        row_perm,
        col_perm,
        r,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    /// `(u variable index, replaced leading variable s_i)`.
    pub replaced: Vec<(usize, JetVar)>,
    /// `(frozen leading variable y_i, ξ_i)`.
    pub frozen: Vec<(JetVar, f64)>,
    pub generation: usize,
    pub row_perm: Vec<usize>,
    pub col_perm: Vec<usize>,
}

impl EmbeddingRecord {
    pub fn xi(&self) -> Vec<f64> {
        self.frozen.iter().map(|&(_, v)| v).collect()
    }
}

/// `n − r` values uniform on `[−1, 1]`, reproducible from `(seed, generation)`.
pub fn draw_xi(count: usize, seed: u64, generation: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (generation as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    (0..count).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

fn fresh_name(names: &[String], k: usize) -> String {
    let mut name = format!("u{k}");
    while names.contains(&name) {
        name.push('_');
    }
    name
}

/// Builds `G = {F^aug, F^(c−1)}`: the sorted rows `f(s,y,z)`, then every
/// top-block row with `s` replaced by new order-0 unknowns `u` and `y` by
/// the constants `xi`. The current constraints become inherited ones.
pub fn embed(stage: &Stage, analysis: &Analysis, sorted: &SortedTop, xi: &[f64], generation: usize) -> (Stage, EmbeddingRecord) {
    let r = sorted.r;
    assert_eq!(xi.len(), sorted.leading.len() - r, "one ξ per frozen variable");
    let base = stage.nvars();
    let first_u = base - stage.original + 1;
    let mut names = stage.names.clone();
    for k in 0..r {
        let name = fresh_name(&names, first_u + k);
        names.push(name);
    }
    let s = sorted.s().to_vec();
    let y = sorted.y().to_vec();
    let map = |v: JetVar| {
        if let Some(k) = s.iter().position(|&w| w == v) {
            Some(Expr::jet(base + k, 0))
        } else {
            y.iter().position(|&w| w == v).map(|k| Expr::constant(xi[k]))
        }
    };
    let mut equations: Vec<Expr> = sorted.rows[..r].to_vec();
    equations.extend(sorted.rows.iter().map(|f| f.substitute(&map)));
    let record = EmbeddingRecord {
        replaced: s.iter().enumerate().map(|(k, &v)| (base + k, v)).collect(),
        frozen: y.iter().zip(xi).map(|(&v, &x)| (v, x)).collect(),
        generation,
        row_perm: sorted.row_perm.clone(),
        col_perm: sorted.col_perm.clone(),
    };
    let next = Stage { names, equations, inherited: analysis.constraints.clone(), original: stage.original };
    (next, record)
}

/// Offsets `c̄ = (0_r, 1_n)`, `d̄ = (d, 1_r)` for the embedded stage, returned
/// only when every row of the previous top block contains a variable one
/// order below its leading derivative and the offsets are optimal for the
/// embedded signature matrix (checked through a maximum transversal).
pub fn shortcut_duals(previous: &Analysis, next: &Stage) -> Option<StructuralSolution> {
    let d = &previous.solution.d;
    let below: Vec<JetVar> = d.iter().enumerate().filter(|(_, &dj)| dj > 0).map(|(j, &dj)| JetVar::new(j, dj - 1)).collect();
    if !previous.top_block().iter().all(|f| below.iter().any(|&v| f.contains(v))) {
        return None;
    }
    let n = previous.top_block().len();
    let r = next.nvars() - d.len();
    if next.equations.len() != n + r {
        return None;
    }
    let sigma = signature_matrix(&next.equations, next.nvars());
    let (value, transversal) = max_transversal(&sigma).ok()?;
    let c: Vec<u32> = std::iter::repeat_n(0, r).chain(std::iter::repeat_n(1, n)).collect();
    let d: Vec<u32> = d.iter().copied().chain(std::iter::repeat_n(1, r)).collect();
    let feasible = sigma.iter().zip(&c).all(|(row, &ci)| {
        row.iter().zip(&d).all(|(s, &dj)| s.is_none_or(|s| dj >= ci + s))
    });
    let delta = d.iter().map(|&v| v as i64).sum::<i64>() - c.iter().map(|&v| v as i64).sum::<i64>();
    (feasible && value == delta).then_some(StructuralSolution { c, d, delta, transversal })
}

/// Solves `f(u, ξ, z) = 0` for the new unknowns, starting from the values of
/// the replaced variables at `p`. Those values already solve it when the top
/// block is consistent at `p`.
pub fn lift_point(p: &Point, rec: &EmbeddingRecord, next: &Stage, abstol: f64) -> Result<Point, IreError> {
    let mut out = p.clone();
    for &(u, s) in &rec.replaced {
        out.set(JetVar::new(u, 0), p.get(s).unwrap_or(0.0));
    }
    let r = rec.replaced.len();
    if r == 0 {
        return Ok(out);
    }
    // next.equations = [f(s,y,z); f(u,ξ,z); g(u,ξ,z)]
    let f_hat = &next.equations[r..2 * r];
    let unknowns: Vec<JetVar> = rec.replaced.iter().map(|&(u, _)| JetVar::new(u, 0)).collect();
    let sys = NumericSystem::new(f_hat, &unknowns);
    let x = scaled_newton(&sys, &out, abstol * 1e-4, 50)?;
    Ok(sys.assign(&out, &x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XiMode {
    /// Seeded uniform draws on `[−1, 1]`.
    Random,
    /// The values of the frozen variables at the current point.
    FromPoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IreOptions {
    pub abstol: f64,
    pub seed: u64,
    pub max_passes: usize,
    pub xi_mode: XiMode,
}

impl Default for IreOptions {
    fn default() -> Self {
        Self { abstol: 1e-6, seed: 0, max_passes: DEFAULT_MAX_PASSES, xi_mode: XiMode::Random }
    }
}

#[derive(Debug, Clone)]
pub struct IreOutcome {
    pub stage: Stage,
    pub analysis: Analysis,
    /// Consistent point of the final stage, leading values included.
    pub point: Point,
    pub log: Vec<IrePassLog>,
    pub embeddings: Vec<EmbeddingRecord>,
}

impl IreOutcome {
    /// Final system as constraint rows followed by the top block.
    pub fn regularized_rows(&self) -> Vec<Expr> {
        let mut rows = self.analysis.constraints.clone();
        rows.extend(self.analysis.top_block().iter().cloned());
        rows
    }

    pub fn xi(&self) -> Vec<f64> {
        self.embeddings.iter().flat_map(EmbeddingRecord::xi).collect()
    }
}

/// Result of [`measure`] at one pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub point: Point,
    pub n: usize,
    pub r: usize,
    /// The constraint Jacobian has rank below the number of constraints, so
    /// δ overcounts the independent constraints.
    pub redundant_constraints: bool,
}

/// Projects onto the constraints, completes the leading values and measures
/// the rank of the top block.
pub fn measure(analysis: &Analysis, p: &Point, abstol: f64) -> Result<Measurement, IreError> {
    let state = analysis.state_vars();
    let mut p = p.clone();
    for &v in &state {
        if p.get(v).is_none() {
            p.set(v, 0.0);
        }
    }
    // Positions of the original variables are kept when the constraints
    // allow it, so the point (and the trajectory through it) does not
    // depend on ξ or on the projection path.
    let free: Vec<JetVar> = state.iter().copied().filter(|v| v.order > 0 || v.var >= analysis.original).collect();
    let p = match project(&p, &analysis.constraints, &free, abstol) {
        Ok(q) if free.len() < state.len() && is_regular(&q, &analysis.constraints, &free, abstol)? => q,
        _ => project(&p, &analysis.constraints, &state, abstol)?,
    };
    let leading = analysis.leading_vars();
    let p = complete_leading(&p, analysis.top_block(), &leading, abstol)?;
    let r = detect_rank(&jacobian(analysis.top_block(), &leading), &p, abstol)?;
    let redundant_constraints = !analysis.constraints.is_empty()
        && detect_rank(&jacobian(&analysis.constraints, &state), &p, abstol)? < analysis.constraints.len();
    Ok(Measurement { point: p, n: leading.len(), r, redundant_constraints })
}

/// The IRE loop from a point near the constraint variety of the first
/// prolongation.
pub fn ire_loop(stage: Stage, p: &Point, opts: &IreOptions) -> Result<IreOutcome, IreError> {
    let mut stage = stage;
    let mut analysis = analyze(&stage, None)?;
    let mut p = p.clone();
    let mut log = Vec::new();
    let mut embeddings = Vec::new();
    for pass in 0..=opts.max_passes {
        let Measurement { point, n, r, redundant_constraints } = measure(&analysis, &p, opts.abstol)?;
        p = point;
        if r == n {
            return Ok(IreOutcome { stage, analysis, point: p, log, embeddings });
        }
        if pass == opts.max_passes {
            break;
        }
        let deficiency = n - r;
        // δ only bounds the solution dimension when the constraints are
        // independent; otherwise the rank test alone decides termination.
        if analysis.delta - (deficiency as i64) < 0 && !redundant_constraints {
            return Err(IreError::NoSolution { delta: analysis.delta, deficiency });
        }
        let sorted = sort_top_block(&analysis.prolonged, &p, r, opts.abstol)?;
        let xi = match opts.xi_mode {
            XiMode::Random => draw_xi(n - r, opts.seed, pass),
            XiMode::FromPoint => sorted.y().iter().map(|&v| p.get(v).unwrap_or(0.0)).collect(),
        };
        let (next, record) = embed(&stage, &analysis, &sorted, &xi, pass + 1);
        p = lift_point(&p, &record, &next, opts.abstol)?;
        let shortcut = shortcut_duals(&analysis, &next);
        let used_shortcut_duals = shortcut.is_some();
        let next_analysis = analyze(&next, shortcut)?;
        log.push(IterationRecord {
            n,
            r,
            delta_before: analysis.delta,
            delta_after: next_analysis.delta,
            used_shortcut_duals,
            redundancy_suspected: redundant_constraints || next_analysis.delta > analysis.delta - deficiency as i64,
        });
        embeddings.push(record);
        stage = next;
        analysis = next_analysis;
    }
    Err(IreError::MaxPasses(opts.max_passes))
}
