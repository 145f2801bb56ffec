//! Real witness points on constraint varieties.
//!
//! The constraints are frozen at `t = t0` and converted to polynomials. The
//! critical points of the distance to a random point `a` (Lagrange form) or
//! the minimizers of a penalized distance (penalty form) are found by
//! total-degree homotopy continuation; the real ones are refined back onto
//! the variety.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::expr::{Expr, JetVar, Node, Point};
use crate::numkernel::{newton_refine, singular_values, svd_rank, NumError, RealMatrix};

pub const DEFAULT_BETA: f64 = 1e5;
const IMAG_TOL: f64 = 1e-6;
const DEDUP_TOL: f64 = 1e-8;
const ENDPOINT_TOL: f64 = 1e-10;
const MIN_STEP: f64 = 1e-6;
const MAX_STEP: f64 = 0.1;
const MAX_PATH_STEPS: usize = 10_000;
const DIVERGENCE: f64 = 1e8;
const STALL_WINDOW: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WitnessError {
    #[error("constraint is not polynomial in its unknowns: {0}")]
    NonPolynomial(String),
    #[error("jet variable {0:?} is not among the unknowns")]
    UnknownVariable(JetVar),
    #[error("no real witness points found")]
    Empty,
    #[error("system is not square ({equations} equations, {unknowns} unknowns)")]
    NotSquare { equations: usize, unknowns: usize },
}

/// Sparse polynomial with real coefficients: exponent vector → coefficient.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Poly {
    pub nvars: usize,
    pub terms: BTreeMap<Vec<u32>, f64>,
}

impl Poly {
    pub fn zero(nvars: usize) -> Self {
        Self { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        if c != 0.0 {
            p.terms.insert(vec![0; nvars], c);
        }
        p
    }

    pub fn var(nvars: usize, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        let mut p = Self::zero(nvars);
        p.terms.insert(e, 1.0);
        p
    }

    fn add_term(&mut self, exps: Vec<u32>, c: f64) {
        let entry = self.terms.entry(exps).or_insert(0.0);
        *entry += c;
        if *entry == 0.0 {
            self.terms.retain(|_, v| *v != 0.0);
        }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(e.clone(), *c);
        }
        out
    }

    pub fn scale(&self, s: f64) -> Poly {
        if s == 0.0 {
            return Poly::zero(self.nvars);
        }
        Poly { nvars: self.nvars, terms: self.terms.iter().map(|(e, c)| (e.clone(), c * s)).collect() }
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero(self.nvars);
        for (e1, c1) in &self.terms {
            for (e2, c2) in &other.terms {
                let e: Vec<u32> = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
                out.add_term(e, c1 * c2);
            }
        }
        out
    }

    pub fn pow(&self, k: u32) -> Poly {
        let mut out = Poly::constant(self.nvars, 1.0);
        for _ in 0..k {
            out = out.mul(self);
        }
        out
    }

    pub fn derivative(&self, i: usize) -> Poly {
        let mut out = Poly::zero(self.nvars);
        for (e, c) in &self.terms {
            if e[i] > 0 {
                let mut e2 = e.clone();
                e2[i] -= 1;
                out.add_term(e2, c * e[i] as f64);
            }
        }
        out
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    /// Copy with `extra` additional trailing variables.
    pub fn extend(&self, extra: usize) -> Poly {
        Poly {
            nvars: self.nvars + extra,
            terms: self
                .terms
                .iter()
                .map(|(e, c)| {
                    let mut e2 = e.clone();
                    e2.resize(self.nvars + extra, 0);
                    (e2, *c)
                })
                .collect(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(e, c)| c * e.iter().zip(x).map(|(&k, v)| v.powi(k as i32)).product::<f64>()).sum()
    }

    pub fn eval_complex(&self, x: &[Complex64]) -> Complex64 {
        self.terms
            .iter()
            .map(|(e, c)| {
                let mut m = Complex64::new(*c, 0.0);
                for (&k, v) in e.iter().zip(x) {
                    if k > 0 {
                        m *= v.powu(k);
                    }
                }
                m
            })
            .sum()
    }

    /// Sum of term magnitudes; the scale against which residuals are judged.
    pub fn magnitude(&self, x: &[Complex64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| c.abs() * e.iter().zip(x).map(|(&k, v)| v.norm().powi(k as i32)).product::<f64>())
            .sum()
    }
}

fn expr_to_poly(e: &Expr, index: &BTreeMap<JetVar, usize>, nvars: usize, t0: f64) -> Result<Poly, WitnessError> {
    let const_of = |e: &Expr| -> Result<f64, WitnessError> {
        if e.has_jets() {
            return Err(WitnessError::NonPolynomial(format!("{e:?}")));
        }
        e.eval_with(t0, &|_| None).map_err(|err| WitnessError::NonPolynomial(err.to_string()))
    };
    Ok(match e.node() {
        Node::Const(c) => Poly::constant(nvars, *c),
        Node::Time => Poly::constant(nvars, t0),
        Node::Jet(v) => Poly::var(nvars, *index.get(v).ok_or(WitnessError::UnknownVariable(*v))?),
        Node::Sum(ts) => {
            let mut acc = Poly::zero(nvars);
            for t in ts {
                acc = acc.add(&expr_to_poly(t, index, nvars, t0)?);
            }
            acc
        }
        Node::Product(fs) => {
            let mut acc = Poly::constant(nvars, 1.0);
            for f in fs {
                acc = acc.mul(&expr_to_poly(f, index, nvars, t0)?);
            }
            acc
        }
        Node::Pow(b, k) => expr_to_poly(b, index, nvars, t0)?.pow(*k),
        Node::Neg(a) => expr_to_poly(a, index, nvars, t0)?.scale(-1.0),
        Node::Quotient(a, b) => {
            let den = const_of(b)?;
            if den == 0.0 {
                return Err(WitnessError::NonPolynomial("zero denominator at t0".into()));
            }
            expr_to_poly(a, index, nvars, t0)?.scale(1.0 / den)
        }
        Node::Apply(..) => Poly::constant(nvars, const_of(e)?),
    })
}

/// Polynomial equations in `nvars` unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct PolySystem {
    pub nvars: usize,
    pub equations: Vec<Poly>,
}

impl PolySystem {
    /// Freezes `exprs` at `t0` and reads them as polynomials in `unknowns`.
    pub fn from_exprs(exprs: &[Expr], unknowns: &[JetVar], t0: f64) -> Result<Self, WitnessError> {
        let index: BTreeMap<JetVar, usize> = unknowns.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        let equations = exprs
            .iter()
            .map(|e| expr_to_poly(e, &index, unknowns.len(), t0))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { nvars: unknowns.len(), equations })
    }

    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        self.equations.iter().map(|p| p.eval(x)).collect()
    }

    pub fn jacobian(&self, x: &[f64]) -> RealMatrix {
        RealMatrix::from_fn(self.equations.len(), self.nvars, |i, j| self.equations[i].derivative(j).eval(x))
    }
}

/// `{f, Σ_j λ_j ∂f_j/∂x_i + x_i − a_i}` in unknowns `(x, λ)`.
pub fn lagrange_system(f: &PolySystem, a: &[f64]) -> PolySystem {
    let n = f.nvars;
    let k = f.equations.len();
    let m = n + k;
    let mut eqs: Vec<Poly> = f.equations.iter().map(|p| p.extend(k)).collect();
    for i in 0..n {
        let mut g = Poly::var(m, i).add(&Poly::constant(m, -a[i]));
        for (j, fj) in f.equations.iter().enumerate() {
            g = g.add(&Poly::var(m, n + j).mul(&fj.derivative(i).extend(k)));
        }
        eqs.push(g);
    }
    PolySystem { nvars: m, equations: eqs }
}

/// `x_i + β Σ_j f_j ∂f_j/∂x_i − a_i`, the gradient of `½‖x−a‖² + ½β‖f‖²`.
pub fn penalty_system(f: &PolySystem, a: &[f64], beta: f64) -> PolySystem {
    let n = f.nvars;
    let eqs = (0..n)
        .map(|i| {
            let mut g = Poly::var(n, i).add(&Poly::constant(n, -a[i]));
            for fj in &f.equations {
                g = g.add(&fj.mul(&fj.derivative(i)).scale(beta));
            }
            g
        })
        .collect();
    PolySystem { nvars: n, equations: eqs }
}

/// Outcome of tracking every path of a total-degree homotopy.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackResult {
    /// Accepted endpoints, sorted lexicographically by (re, im) coordinates.
    pub endpoints: Vec<Vec<Complex64>>,
    pub paths: usize,
    pub failed: usize,
}

struct Tracker<'a> {
    sys: &'a PolySystem,
    jac: Vec<Vec<Poly>>,
    degrees: Vec<u32>,
    gamma: Complex64,
}

enum PathEnd {
    Finite(Vec<Complex64>),
    Failed,
}

impl Tracker<'_> {
    fn start_value(&self, x: &[Complex64], i: usize) -> Complex64 {
        x[i].powu(self.degrees[i]) - 1.0
    }

    /// `(H, H_x, H_s)` at `(x, s)`.
    fn eval(&self, x: &[Complex64], s: f64) -> (DVector<Complex64>, DMatrix<Complex64>, DVector<Complex64>) {
        let n = x.len();
        let g = self.gamma;
        let mut h = DVector::zeros(n);
        let mut hs = DVector::zeros(n);
        let mut hx = DMatrix::zeros(n, n);
        for i in 0..n {
            let fi = self.sys.equations[i].eval_complex(x);
            let gi = self.start_value(x, i);
            h[i] = g * (1.0 - s) * gi + s * fi;
            hs[i] = fi - g * gi;
            for j in 0..n {
                let mut v = s * self.jac[i][j].eval_complex(x);
                if i == j {
                    let d = self.degrees[i];
                    v += g * (1.0 - s) * (d as f64) * x[i].powu(d - 1);
                }
                hx[(i, j)] = v;
            }
        }
        (h, hx, hs)
    }

    fn solve(a: DMatrix<Complex64>, b: &DVector<Complex64>) -> Option<DVector<Complex64>> {
        a.lu().solve(b).filter(|x| x.iter().all(|v| v.re.is_finite() && v.im.is_finite()))
    }

    fn norm(x: &[Complex64]) -> f64 {
        x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    fn correct(&self, mut x: Vec<Complex64>, s: f64, iters: usize, tol: f64) -> Option<Vec<Complex64>> {
        for _ in 0..iters {
            let (h, hx, _) = self.eval(&x, s);
            let dx = Self::solve(hx, &h)?;
            for (xi, d) in x.iter_mut().zip(dx.iter()) {
                *xi -= d;
            }
            let step = Self::norm(dx.as_slice());
            if step <= tol * (1.0 + Self::norm(&x)) {
                return Some(x);
            }
        }
        None
    }

    fn scaled_residual(&self, x: &[Complex64]) -> f64 {
        self.sys
            .equations
            .iter()
            .map(|p| p.eval_complex(x).norm() / (1.0 + p.magnitude(x)))
            .fold(0.0, f64::max)
    }

    fn track(&self, start: Vec<Complex64>) -> PathEnd {
        let mut x = start;
        let mut s: f64 = 0.0;
        let mut h: f64 = 0.01;
        let mut successes = 0;
        for _ in 0..MAX_PATH_STEPS {
            if s >= 1.0 {
                break;
            }
            let h_eff = h.min(1.0 - s);
            let (_, hx, hs) = self.eval(&x, s);
            let accepted = Self::solve(hx, &(-hs)).and_then(|dx| {
                let pred: Vec<Complex64> = x.iter().zip(dx.iter()).map(|(a, d)| a + d * h_eff).collect();
                self.correct(pred, s + h_eff, 4, 1e-8)
            });
            match accepted {
                Some(next) => {
                    x = next;
                    s = if h_eff >= 1.0 - s { 1.0 } else { s + h_eff };
                    successes += 1;
                    if successes >= 3 {
                        h = (h * 2.0).min(MAX_STEP);
                        successes = 0;
                    }
                }
                None => {
                    h /= 2.0;
                    successes = 0;
                    if h < MIN_STEP {
                        // A path stalling just short of the target is handed
                        // to the target-system polish below.
                        if 1.0 - s > STALL_WINDOW {
                            return PathEnd::Failed;
                        }
                        s = 1.0;
                        break;
                    }
                }
            }
            if Self::norm(&x) > DIVERGENCE {
                return PathEnd::Failed;
            }
        }
        if s < 1.0 {
            return PathEnd::Failed;
        }
        // Polish on the target system; endpoints are accepted on residual.
        if let Some(polished) = self.correct(x.clone(), 1.0, 50, 1e-12) {
            x = polished;
        }
        if Self::norm(&x) > DIVERGENCE || self.scaled_residual(&x) > ENDPOINT_TOL {
            return PathEnd::Failed;
        }
        PathEnd::Finite(x)
    }
}

fn start_points(degrees: &[u32]) -> Vec<Vec<Complex64>> {
    let mut out = vec![Vec::new()];
    for &d in degrees {
        let roots: Vec<Complex64> =
            (0..d).map(|k| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / d as f64)).collect();
        out = out.into_iter().flat_map(|p| roots.iter().map(move |r| [p.clone(), vec![*r]].concat())).collect();
    }
    out
}

fn lex_cmp(a: &[Complex64], b: &[Complex64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im));
        if o.is_ne() {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

/// Tracks all `Π deg f_i` paths from `x_i^{d_i} = 1` with a random γ.
pub fn track_all_roots(sys: &PolySystem, seed: u64) -> Result<TrackResult, WitnessError> {
    let n = sys.nvars;
    if sys.equations.len() != n {
        return Err(WitnessError::NotSquare { equations: sys.equations.len(), unknowns: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let theta: f64 = rng.random_range(0.0..2.0 * std::f64::consts::PI);
    let degrees: Vec<u32> = sys.equations.iter().map(|p| p.degree().max(1)).collect();
    // Balance each target equation against the unit-size start system.
    let scaled = PolySystem {
        nvars: n,
        equations: sys
            .equations
            .iter()
            .map(|p| {
                let m = p.terms.values().fold(0.0f64, |m, c| m.max(c.abs()));
                if m > 0.0 { p.scale(1.0 / m) } else { p.clone() }
            })
            .collect(),
    };
    let sys = &scaled;
    let tracker = Tracker {
        sys,
        jac: sys.equations.iter().map(|p| (0..n).map(|j| p.derivative(j)).collect()).collect(),
        degrees: degrees.clone(),
        gamma: Complex64::from_polar(1.0, theta),
    };
    let starts = start_points(&degrees);
    let paths = starts.len();
    let ends: Vec<PathEnd> = starts.into_par_iter().map(|s| tracker.track(s)).collect();
    let mut endpoints = Vec::new();
    let mut failed = 0;
    for e in ends {
        match e {
            PathEnd::Finite(x) => endpoints.push(x),
            PathEnd::Failed => failed += 1,
        }
    }
    endpoints.sort_by(|a, b| lex_cmp(a, b));
    Ok(TrackResult { endpoints, paths, failed })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formulation {
    Lagrange,
    Penalty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WitnessOptions {
    pub abstol: f64,
    pub seed: u64,
    pub beta: f64,
}

impl Default for WitnessOptions {
    fn default() -> Self {
        Self { abstol: 1e-6, seed: 0, beta: DEFAULT_BETA }
    }
}

/// Real points on a constraint variety, with per-point diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct WitnessSet {
    pub unknowns: Vec<JetVar>,
    pub t0: f64,
    pub points: Vec<Vec<f64>>,
    /// `‖f(p)‖∞` per point.
    pub residuals: Vec<f64>,
    /// Smallest singular value of the constraint Jacobian per point.
    pub min_singular: Vec<f64>,
    pub seed: u64,
    pub formulation: Formulation,
    pub failed_paths: usize,
}

impl WitnessSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Point {
        let mut p = Point::new(self.t0);
        for (v, x) in self.unknowns.iter().zip(&self.points[i]) {
            p.set(*v, *x);
        }
        p
    }

    pub fn to_points(&self) -> Vec<Point> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Real endpoints refined onto `f` and deduplicated, in sorted order.
fn real_points(f: &PolySystem, endpoints: &[Vec<Complex64>], abstol: f64) -> Vec<Vec<f64>> {
    let n = f.nvars;
    let residual = |x: &[f64]| -> Result<(Vec<f64>, RealMatrix), NumError> { Ok((f.residual(x), f.jacobian(x))) };
    let mut out: Vec<Vec<f64>> = Vec::new();
    for e in endpoints {
        if e.iter().any(|v| v.im.abs() >= IMAG_TOL) {
            continue;
        }
        let x0: Vec<f64> = e[..n].iter().map(|v| v.re).collect();
        let refined = newton_refine(&residual, &x0, abstol * 1e-6, 50)
            .or_else(|_| newton_refine(&residual, &x0, abstol, 50))
            .ok();
        let Some(x) = refined else { continue };
        if max_abs(&f.residual(&x)) > abstol {
            continue;
        }
        out.push(x);
    }
    out.sort_by(|a, b| {
        a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut dedup: Vec<Vec<f64>> = Vec::new();
    for x in out {
        let dup = dedup.iter().any(|y| x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() < DEDUP_TOL);
        if !dup {
            dedup.push(x);
        }
    }
    dedup
}

fn random_point(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn assemble(
    f: &PolySystem,
    unknowns: &[JetVar],
    t0: f64,
    points: Vec<Vec<f64>>,
    opts: &WitnessOptions,
    formulation: Formulation,
    failed_paths: usize,
) -> (WitnessSet, usize) {
    let k = f.equations.len();
    let mut regular = Vec::new();
    let mut singular = Vec::new();
    for p in points {
        let j = f.jacobian(&p);
        if k == 0 || svd_rank(&j, opts.abstol) == k {
            regular.push(p);
        } else {
            singular.push(p);
        }
    }
    let n_regular = regular.len();
    // Rank-deficient points are only kept when nothing regular was found.
    let kept = if regular.is_empty() { singular } else { regular };
    let residuals = kept.iter().map(|p| max_abs(&f.residual(p))).collect();
    let min_singular =
        kept.iter().map(|p| singular_values(&f.jacobian(p)).last().copied().unwrap_or(0.0)).collect();
    let set = WitnessSet {
        unknowns: unknowns.to_vec(),
        t0,
        points: kept,
        residuals,
        min_singular,
        seed: opts.seed,
        formulation,
        failed_paths,
    };
    (set, n_regular)
}

/// Witness points of `f` using the Lagrange formulation, falling back once to
/// the penalty formulation when no regular real point comes out.
pub fn witness_points(
    exprs: &[Expr],
    unknowns: &[JetVar],
    t0: f64,
    opts: &WitnessOptions,
) -> Result<WitnessSet, WitnessError> {
    let f = PolySystem::from_exprs(exprs, unknowns, t0)?;
    let a = random_point(f.nvars, opts.seed);
    let track = track_all_roots(&lagrange_system(&f, &a), opts.seed)?;
    let points = real_points(&f, &track.endpoints, opts.abstol);
    let (lagrange, n_regular) = assemble(&f, unknowns, t0, points, opts, Formulation::Lagrange, track.failed);
    if n_regular > 0 {
        return Ok(lagrange);
    }
    let track = track_all_roots(&penalty_system(&f, &a, opts.beta), opts.seed)?;
    let points = real_points(&f, &track.endpoints, opts.abstol);
    let (penalty, n_regular) = assemble(&f, unknowns, t0, points, opts, Formulation::Penalty, track.failed);
    if n_regular > 0 || lagrange.is_empty() {
        if penalty.is_empty() {
            return Err(WitnessError::Empty);
        }
        return Ok(penalty);
    }
    Ok(lagrange)
}

/// Penalty formulation only, with an explicit random point `a`.
pub fn penalty_witness(
    exprs: &[Expr],
    unknowns: &[JetVar],
    t0: f64,
    a: &[f64],
    opts: &WitnessOptions,
) -> Result<WitnessSet, WitnessError> {
    let f = PolySystem::from_exprs(exprs, unknowns, t0)?;
    let track = track_all_roots(&penalty_system(&f, a, opts.beta), opts.seed)?;
    let points = real_points(&f, &track.endpoints, opts.abstol);
    let (set, _) = assemble(&f, unknowns, t0, points, opts, Formulation::Penalty, track.failed);
    Ok(set)
}

/// True when every expression vanishes (within `abstol`) on every witness
/// point: probabilistic membership of `f` in the ideal cut out by `W`.
pub fn membership_test(f: &[Expr], w: &WitnessSet, abstol: f64) -> Result<bool, WitnessError> {
    if w.is_empty() {
        return Err(WitnessError::Empty);
    }
    for p in w.to_points() {
        for e in f {
            match e.evaluate(&p) {
                Ok(v) if v.abs() <= abstol => {}
                _ => return Ok(false),
            }
        }
    }
    Ok(true)
}
