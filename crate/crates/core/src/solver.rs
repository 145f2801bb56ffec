//! Integration of the regularized system and the per-component pipeline.
//!
//! A trajectory alternates two steps: project the state onto the constraints,
//! then advance it with one classical Runge–Kutta step whose right-hand side
//! comes from solving the top block for its leading derivatives. The state is
//! every `x_j^(k)` with `k < d_j`; variables with `d_j = 0` are algebraic and
//! are recomputed at each evaluation.

use rayon::prelude::*;
use thiserror::Error;

use crate::expr::{JetVar, Point};
use crate::ire::{analyze, ire_loop, is_regular_scaled, project, project_local, state_vars, Analysis, IreError, IreOptions, IreOutcome, Stage, XiMode};
use crate::model_io::{validate_square, DaeSystem, ModelError, Trajectory};
use crate::numkernel::{solve_linear, NumError, RealMatrix};
use crate::structural::{jacobian, JacobianMatrix, ProlongedSystem};
use crate::witness::{witness_points, WitnessError, WitnessOptions, WitnessSet};

/// Most step halvings tried on one step before the step is accepted anyway.
const MAX_HALVINGS: u32 = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Witness(#[from] WitnessError),
    #[error(transparent)]
    Ire(#[from] IreError),
    #[error("top block is singular at t = {t}: {source}")]
    Singular { t: f64, source: NumError },
    #[error("projection onto the constraints failed at t = {t}: {source}")]
    Projection { t: f64, source: IreError },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    pub abstol: f64,
    pub reltol: f64,
    pub h: f64,
    /// Newton iterations for the leading derivatives.
    pub max_iter: usize,
    pub t0: f64,
    pub t_end: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self { abstol: 1e-6, reltol: 1e-3, h: 1e-2, max_iter: 25, t0: 0.0, t_end: 1.0 }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(positive(self.abstol) && positive(self.reltol) && positive(self.h)) {
            return Err(SolveError::Config("abstol, reltol and step must be positive".into()));
        }
        if !(self.t0.is_finite() && self.t_end.is_finite() && self.t0 < self.t_end) {
            return Err(SolveError::Config(format!("need t0 < t_end, got {} and {}", self.t0, self.t_end)));
        }
        Ok(())
    }
}

/// Leading derivatives solving the top block at `p`, by Newton from the
/// values already in `p` (zero when missing). A top block that is linear in
/// its leading derivatives converges in one step.
pub fn explicit_rhs(ps: &ProlongedSystem, p: &Point) -> Result<Vec<f64>, NumError> {
    let leading = ps.leading_vars();
    let j = jacobian(ps.top_block(), &leading);
    leading_values(ps, &j, &leading, p, SolveConfig::default().max_iter)
}

fn leading_values(ps: &ProlongedSystem, j: &JacobianMatrix, leading: &[JetVar], p: &Point, max_iter: usize) -> Result<Vec<f64>, NumError> {
    let eval = |e: &crate::expr::Expr, q: &Point| {
        let v = e.evaluate(q).map_err(|err| NumError::Eval(err.to_string()))?;
        if v.is_finite() { Ok(v) } else { Err(NumError::NonFinite) }
    };
    let mut q = p.clone();
    let mut x: Vec<f64> = leading.iter().map(|&v| p.get(v).unwrap_or(0.0)).collect();
    for _ in 0..max_iter.max(1) {
        for (&v, &xi) in leading.iter().zip(&x) {
            q.set(v, xi);
        }
        let r: Vec<f64> = ps.top_block().iter().map(|e| eval(e, &q)).collect::<Result<_, _>>()?;
        let mut m = RealMatrix::zeros(r.len(), x.len());
        for (i, row) in j.iter().enumerate() {
            for (k, e) in row.iter().enumerate() {
                if !e.is_zero() {
                    m[(i, k)] = eval(e, &q)?;
                }
            }
        }
        // Rows are scaled to unit max so that tiny physical coefficients do
        // not read as singularity.
        let mut rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        for i in 0..m.nrows() {
            let s = m.row(i).amax();
            if s > 0.0 {
                m.row_mut(i).scale_mut(1.0 / s);
                rhs[i] /= s;
            }
        }
        let dx = solve_linear(&m, &rhs)?;
        let mut step = 0.0f64;
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi += d;
            step = step.max(d.abs() / (1.0 + xi.abs()));
        }
        if step <= 1e-13 {
            break;
        }
    }
    Ok(x)
}

/// The integrator's view of a final stage.
struct Flow<'a> {
    analysis: &'a Analysis,
    state: Vec<JetVar>,
    leading: Vec<JetVar>,
    j: JacobianMatrix,
    /// For each state variable, where its derivative lives: another state
    /// variable or a leading derivative.
    derivative: Vec<Slot>,
    max_iter: usize,
}

#[derive(Clone, Copy)]
enum Slot {
    State(usize),
    Leading(usize),
}

impl<'a> Flow<'a> {
    fn new(analysis: &'a Analysis, max_iter: usize) -> Self {
        let state = state_vars(&analysis.solution.d);
        let leading = analysis.leading_vars();
        let derivative = state
            .iter()
            .map(|v| {
                let next = JetVar::new(v.var, v.order + 1);
                match state.iter().position(|&w| w == next) {
                    Some(k) => Slot::State(k),
                    None => Slot::Leading(leading.iter().position(|&w| w == next).expect("leading derivative of a state")),
                }
            })
            .collect();
        let j = jacobian(analysis.top_block(), &leading);
        Self { analysis, state, leading, j, derivative, max_iter }
    }

    fn point(&self, base: &Point, t: f64, x: &[f64]) -> Point {
        let mut p = base.clone();
        p.t = t;
        for (&v, &xi) in self.state.iter().zip(x) {
            p.set(v, xi);
        }
        p
    }

    /// State derivative at `(t, x)`; `base` carries the last leading values
    /// as a Newton start and is updated with the new ones.
    fn rhs(&self, base: &mut Point, t: f64, x: &[f64]) -> Result<Vec<f64>, SolveError> {
        let p = self.point(base, t, x);
        let lead = leading_values(&self.analysis.prolonged, &self.j, &self.leading, &p, self.max_iter)
            .map_err(|source| SolveError::Singular { t, source })?;
        for (&v, &l) in self.leading.iter().zip(&lead) {
            base.set(v, l);
        }
        Ok(self
            .derivative
            .iter()
            .map(|s| match *s {
                Slot::State(k) => x[k],
                Slot::Leading(k) => lead[k],
            })
            .collect())
    }

    fn rk4(&self, base: &mut Point, t: f64, x: &[f64], h: f64) -> Result<Vec<f64>, SolveError> {
        let axpy = |a: f64, k: &[f64]| -> Vec<f64> { x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect() };
        let k1 = self.rhs(base, t, x)?;
        let k2 = self.rhs(base, t + h / 2.0, &axpy(h / 2.0, &k1))?;
        let k3 = self.rhs(base, t + h / 2.0, &axpy(h / 2.0, &k2))?;
        let k4 = self.rhs(base, t + h, &axpy(h, &k3))?;
        Ok((0..x.len()).map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect())
    }

    /// One step by step doubling: the two half steps are kept, and the step
    /// is split further while they disagree with the full step beyond
    /// `abstol + reltol·|x|`.
    fn step(&self, base: &mut Point, t: f64, x: &[f64], h: f64, cfg: &SolveConfig) -> Result<Vec<f64>, SolveError> {
        let mut pieces = 1u32;
        loop {
            let hs = h / pieces as f64;
            let mut ok = true;
            let mut y = x.to_vec();
            for i in 0..pieces {
                let ts = t + i as f64 * hs;
                let full = self.rk4(base, ts, &y, hs)?;
                let mid = self.rk4(base, ts, &y, hs / 2.0)?;
                let half = self.rk4(base, ts + hs / 2.0, &mid, hs / 2.0)?;
                ok &= full.iter().zip(&half).all(|(a, b)| (a - b).abs() <= cfg.abstol + cfg.reltol * b.abs());
                if !ok && pieces < 1 << MAX_HALVINGS {
                    break;
                }
                y = half;
            }
            if ok || pieces >= 1 << MAX_HALVINGS {
                return Ok(y);
            }
            pieces *= 2;
        }
    }

    fn values(&self, p: &Point) -> Vec<f64> {
        self.state.iter().map(|&v| p.get(v).unwrap_or(0.0)).collect()
    }
}

/// Projected points at `t0, t0 + h, …, t_end`, each carrying the state and
/// the leading derivatives of the final stage.
pub fn integrate_points(analysis: &Analysis, p0: &Point, cfg: &SolveConfig) -> Result<Vec<Point>, SolveError> {
    cfg.validate()?;
    let flow = Flow::new(analysis, cfg.max_iter);
    let constraints = &analysis.constraints;
    let steps = ((cfg.t_end - cfg.t0) / cfg.h - 1e-9).ceil().max(1.0) as usize;
    let time = |k: usize| if k == steps { cfg.t_end } else { cfg.t0 + k as f64 * cfg.h };
    let mut out: Vec<Point> = Vec::with_capacity(steps + 1);
    let mut base = p0.clone();
    for k in 0..=steps {
        let t = time(k);
        base.t = t;
        let fail = |source| SolveError::Projection { t, source };
        base = if k == 0 {
            project(&base, constraints, &flow.state, cfg.abstol).map_err(fail)?
        } else {
            project_local(&base, constraints, &flow.state, cfg.abstol).map_err(fail)?
        };
        if k >= 4 && k < steps && !is_regular_scaled(&base, constraints, &flow.state, cfg.abstol)? {
            // The step came close to a point where the top block is singular,
            // and the prediction through it is unreliable. A cubic through the
            // last four points usually lands on the right root.
            let guess = extrapolate(&flow, &out);
            if let Ok(q) = project_local(&flow.point(&base, t, &guess), constraints, &flow.state, cfg.abstol) {
                base = q;
            }
        }
        let x = flow.values(&base);
        // Refreshes the leading values, which include algebraic variables.
        flow.rhs(&mut base, t, &x)?;
        out.push(base.clone());
        if k < steps {
            let x_next = match flow.step(&mut base, t, &x, time(k + 1) - t, cfg) {
                Ok(x_next) => x_next,
                // A singular top block inside the step, not at a recorded
                // point: predict across it instead.
                Err(SolveError::Singular { .. }) if out.len() >= 4 => extrapolate(&flow, &out),
                Err(e) => return Err(e),
            };
            base = flow.point(&base, time(k + 1), &x_next);
        }
    }
    Ok(out)
}

/// Cubic through the states of the last four equally spaced points.
fn extrapolate(flow: &Flow, out: &[Point]) -> Vec<f64> {
    let past: Vec<Vec<f64>> = out[out.len() - 4..].iter().map(|p| flow.values(p)).collect();
    (0..past[0].len()).map(|i| 4.0 * past[3][i] - 6.0 * past[2][i] + 4.0 * past[1][i] - past[0][i]).collect()
}

/// [`integrate_points`] reduced to the order-0 values of the first
/// `names.len()` variables, which drops the embedding variables.
pub fn integrate(analysis: &Analysis, names: &[String], p0: &Point, cfg: &SolveConfig) -> Result<Trajectory, SolveError> {
    let mut traj = Trajectory::new(names.to_vec(), 0);
    for p in integrate_points(analysis, p0, cfg)? {
        traj.push(p.t, (0..names.len()).map(|j| p.get(JetVar::new(j, 0)).unwrap_or(f64::NAN)).collect());
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalOptions {
    pub seed: u64,
    pub beta: f64,
    pub max_passes: usize,
    pub xi_mode: XiMode,
    /// User starting point; skips witness generation.
    pub initial: Option<Point>,
}

impl Default for GlobalOptions {
    fn default() -> Self {
        let ire = IreOptions::default();
        Self {
            seed: 0,
            beta: WitnessOptions::default().beta,
            max_passes: ire.max_passes,
            xi_mode: ire.xi_mode,
            initial: None,
        }
    }
}

/// Outcome for one starting point.
#[derive(Debug, Clone)]
pub struct ComponentRun {
    pub component: usize,
    pub start: Point,
    pub ire: Option<IreOutcome>,
    pub trajectory: Option<Trajectory>,
    pub error: Option<SolveError>,
}

impl ComponentRun {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct GlobalRun {
    pub analysis: Analysis,
    pub witness: Option<WitnessSet>,
    pub components: Vec<ComponentRun>,
}

/// Starting points: the user's point, else witness points of the
/// constraints, else (no constraints at all) the origin.
pub fn starting_points(analysis: &Analysis, cfg: &SolveConfig, opts: &GlobalOptions) -> Result<(Vec<Point>, Option<WitnessSet>), SolveError> {
    if let Some(p) = &opts.initial {
        let mut p = p.clone();
        p.t = cfg.t0;
        return Ok((vec![p], None));
    }
    let state = analysis.state_vars();
    if analysis.constraints.is_empty() {
        let mut p = Point::new(cfg.t0);
        for v in state {
            p.set(v, 0.0);
        }
        return Ok((vec![p], None));
    }
    let wopts = WitnessOptions { abstol: cfg.abstol, seed: opts.seed, beta: opts.beta };
    let set = witness_points(&analysis.constraints, &state, cfg.t0, &wopts)?;
    Ok((set.to_points(), Some(set)))
}

/// Witness points (or the user's point), then IRE and integration for each
/// of them. Errors before the per-point stage are fatal; later ones are
/// recorded on the component and the other components still run.
pub fn global_solve(sys: &DaeSystem, cfg: &SolveConfig, opts: &GlobalOptions) -> Result<GlobalRun, SolveError> {
    validate_square(sys)?;
    cfg.validate()?;
    let stage = Stage::new(sys.names.clone(), sys.equations.clone());
    let analysis = analyze(&stage, None)?;
    let (points, witness) = starting_points(&analysis, cfg, opts)?;
    let ire_opts = IreOptions { abstol: cfg.abstol, seed: opts.seed, max_passes: opts.max_passes, xi_mode: opts.xi_mode };
    let components = points
        .into_par_iter()
        .enumerate()
        .map(|(component, start)| {
            let mut run = ComponentRun { component, start: start.clone(), ire: None, trajectory: None, error: None };
            match ire_loop(stage.clone(), &start, &ire_opts) {
                Err(e) => run.error = Some(e.into()),
                Ok(outcome) => {
                    match integrate(&outcome.analysis, &sys.names, &outcome.point, cfg) {
                        Ok(mut traj) => {
                            traj.component = component;
                            run.trajectory = Some(traj);
                        }
                        Err(e) => run.error = Some(e),
                    }
                    run.ire = Some(outcome);
                }
            }
            run
        })
        .collect();
    Ok(GlobalRun { analysis, witness, components })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_io::parse_model;

    fn sys(src: &str) -> DaeSystem {
        parse_model(src).unwrap()
    }

    fn cfg(t_end: f64) -> SolveConfig {
        SolveConfig { t_end, ..SolveConfig::default() }
    }

    fn example4() -> DaeSystem {
        sys(include_str!("../fixtures/example4.dae"))
    }

    fn run(s: &DaeSystem, c: &SolveConfig) -> GlobalRun {
        global_solve(s, c, &GlobalOptions::default()).unwrap()
    }

    /// Max over the trajectory of |x(t) − (C − cos t)| with C from x(t0).
    fn example4_error(traj: &Trajectory) -> f64 {
        let c = traj.states[0][0] + traj.times[0].cos();
        traj.times.iter().zip(&traj.states).map(|(t, s)| (s[0] - (c - t.cos())).abs().max((s[1] - s[0] * s[0]).abs())).fold(0.0, f64::max)
    }

    #[test]
    fn constant_rate() {
        let s = sys("var x; x' - 1 = 0;");
        let r = run(&s, &cfg(1.0));
        let traj = r.components[0].trajectory.as_ref().unwrap();
        assert_eq!(traj.len(), 101);
        assert!((traj.states.last().unwrap()[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rhs_of_constant_rate() {
        let s = sys("var x; x' - 1 = 0;");
        let a = analyze(&Stage::new(s.names, s.equations), None).unwrap();
        let p = Point::new(0.3).with(JetVar::new(0, 0), 5.0);
        assert_eq!(explicit_rhs(&a.prolonged, &p).unwrap(), vec![1.0]);
    }

    #[test]
    fn singular_top_block_is_an_error() {
        let s = sys("var x; x*x' - 1 = 0;");
        let a = analyze(&Stage::new(s.names, s.equations), None).unwrap();
        let p = Point::new(0.0).with(JetVar::new(0, 0), 0.0);
        assert_eq!(explicit_rhs(&a.prolonged, &p), Err(NumError::Singular));
        let err = integrate(&a, &["x".into()], &p, &cfg(1.0)).unwrap_err();
        assert!(matches!(err, SolveError::Singular { t, .. } if t == 0.0), "{err}");
    }

    #[test]
    fn example4_rhs_matches_exact_second_derivative() {
        let s = example4();
        let r = run(&s, &cfg(0.5));
        for c in &r.components {
            let o = c.ire.as_ref().unwrap();
            let t = 0.37;
            let p = integrate_points(&o.analysis, &o.point, &SolveConfig { t0: 0.0, t_end: t, ..cfg(t) }).unwrap().pop().unwrap();
            let lead = explicit_rhs(&o.analysis.prolonged, &p).unwrap();
            let at = |v: JetVar| o.analysis.leading_vars().iter().position(|&w| w == v).map(|k| lead[k]);
            // x = C − cos t gives x'' = cos t and y'' = 2(x'² + x x'').
            let (x, dx) = (p.get(JetVar::new(0, 0)).unwrap(), p.get(JetVar::new(0, 1)).unwrap());
            assert!((dx - t.sin()).abs() < 1e-8);
            if let Some(ddx) = at(JetVar::new(0, 2)) {
                assert!((ddx - t.cos()).abs() < 1e-8, "{ddx}");
            }
            if let Some(ddy) = at(JetVar::new(1, 2)) {
                assert!((ddy - 2.0 * (dx * dx + x * t.cos())).abs() < 1e-8, "{ddy}");
            }
        }
    }

    #[test]
    fn example4_matches_exact_solution() {
        let s = example4();
        let r = run(&s, &cfg(5.0));
        assert!(!r.components.is_empty());
        for c in &r.components {
            let traj = c.trajectory.as_ref().unwrap();
            assert!(example4_error(traj) < 1e-3, "{}", example4_error(traj));
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        let s = example4();
        let err = |h: f64| {
            let c = SolveConfig { h, reltol: 1e3, abstol: 1e-12, ..cfg(2.0) };
            let r = run(&s, &c);
            example4_error(r.components[0].trajectory.as_ref().unwrap())
        };
        let (coarse, fine) = (err(0.2), err(0.1));
        assert!(coarse / fine >= 8.0, "{coarse} {fine}");
    }

    #[test]
    fn drift_stays_within_tolerance() {
        for src in [include_str!("../fixtures/example4.dae"), include_str!("../fixtures/beam.dae")] {
            let s = sys(src);
            let c = cfg(2.0);
            for comp in run(&s, &c).components {
                let o = comp.ire.unwrap();
                for p in integrate_points(&o.analysis, &o.point, &c).unwrap() {
                    for e in &o.analysis.constraints {
                        assert!(e.evaluate(&p).unwrap().abs() <= 10.0 * c.abstol);
                    }
                }
            }
        }
    }

    #[test]
    fn beam_components_follow_their_solutions() {
        let s = sys(include_str!("../fixtures/beam.dae"));
        let r = run(&s, &cfg(5.0));
        assert_eq!(r.components.len(), 2);
        let mut signs = Vec::new();
        for c in &r.components {
            let traj = c.trajectory.as_ref().expect("both components solve");
            let sign = (traj.states[0][0] * traj.states[0][1]).signum();
            assert!(traj.states.iter().all(|s| (s[0] * s[1]).signum() == sign));
            if sign < 0.0 {
                for (t, s) in traj.times.iter().zip(&traj.states) {
                    assert!((s[0] + (1.0 - t.sin()) / 5.0).abs() < 1e-3, "t={t} {s:?}");
                    assert!((s[0] + s[1]).abs() < 1e-6);
                }
            }
            signs.push(sign);
        }
        signs.sort_by(f64::total_cmp);
        assert_eq!(signs, vec![-1.0, 1.0]);
    }

    #[test]
    fn xi_seed_does_not_change_the_trajectory() {
        for src in [include_str!("../fixtures/example4.dae"), include_str!("../fixtures/beam.dae")] {
            let s = sys(src);
            let c = cfg(2.0);
            for comp in run(&s, &c).components {
                let traj = |seed| {
                    let opts = GlobalOptions { seed, initial: Some(comp.start.clone()), ..GlobalOptions::default() };
                    let r = global_solve(&s, &c, &opts).unwrap().components.remove(0);
                    r.trajectory.unwrap_or_else(|| panic!("{:?}", r.error))
                };
                let (a, b) = (traj(0), traj(17));
                let gap = a.states.iter().zip(&b.states).flat_map(|(u, v)| u.iter().zip(v).map(|(x, y)| (x - y).abs())).fold(0.0, f64::max);
                assert!(gap <= 10.0 * c.abstol, "{gap}");
            }
        }
    }

    #[test]
    fn non_square_is_fatal() {
        let s = sys(include_str!("../fixtures/nonsquare.dae"));
        let err = global_solve(&s, &cfg(1.0), &GlobalOptions::default()).unwrap_err();
        assert!(matches!(err, SolveError::Model(ModelError::NonSquare { .. })));
    }

    #[test]
    fn failing_component_is_recorded() {
        let s = sys(include_str!("../fixtures/inconsistent.dae"));
        let opts = GlobalOptions { initial: Some(Point::new(0.0)), ..GlobalOptions::default() };
        let r = global_solve(&s, &cfg(1.0), &opts).unwrap();
        assert!(matches!(r.components[0].error, Some(SolveError::Ire(IreError::NoSolution { .. }))));
    }

    #[test]
    fn config_is_validated() {
        assert!(SolveConfig { h: 0.0, ..cfg(1.0) }.validate().is_err());
        assert!(SolveConfig { t0: 2.0, ..cfg(1.0) }.validate().is_err());
    }
}
