//! Multi-start exact-penalty quasi-Newton solver for the design problem.
//!
//! Each start minimizes `phi = mu J + sum max(0, c_i)` over the parameter
//! box with BFGS and a weak Wolfe line search. Constraints are normalized
//! (`alpha` by `|xi_alpha|`, `W_a` by `xi_a`, linear rows by the size of
//! their terms at the base design). The penalty weight `mu` is halved while
//! the search direction makes too little linearized progress towards
//! feasibility. Gradients are one-sided finite differences in `theta`.

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ddae::{build_ddae, reduce_to_retarded};
use crate::design::{DesignProblem, Evaluation, ParamId};
use crate::error::{Error, Result};
use crate::spectrum::{newton_refine, spectrum_of_reduced};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Initial weight of the objective in the penalty function.
    pub mu0: f64,
    /// Projected penalty-gradient norm (scaled variables) for convergence.
    pub opt_tol: f64,
    /// Smallest accepted step in scaled variables.
    pub step_tol: f64,
    pub max_iter: usize,
    pub max_line_search: usize,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    /// Fraction of the feasibility-only linearized reduction a step must keep.
    pub steering_fraction: f64,
    pub max_steering: usize,
    /// Relative finite-difference spacing, `h = fd_step (1 + |theta_j|)`.
    pub fd_step: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            mu0: 5.5,
            opt_tol: 1e-8,
            step_tol: 1e-12,
            max_iter: 200,
            max_line_search: 30,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.5,
            steering_fraction: 0.1,
            max_steering: 20,
            fd_step: 1e-8,
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        let positive = [
            ("mu0", self.mu0),
            ("fd_step", self.fd_step),
            ("wolfe_c1", self.wolfe_c1),
            ("wolfe_c2", self.wolfe_c2),
            ("steering_fraction", self.steering_fraction),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Design(format!("solver option {name} must be positive, got {v}")));
            }
        }
        if !(self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return Err(Error::Design("solver options need 0 < wolfe_c1 < wolfe_c2 < 1".into()));
        }
        for (name, v) in [("opt_tol", self.opt_tol), ("step_tol", self.step_tol)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Design(format!("solver option {name} must be non-negative, got {v}")));
            }
        }
        if self.max_line_search == 0 {
            return Err(Error::Design("max_line_search must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartStatus {
    Converged,
    StepTolerance,
    LineSearchFailed,
    MaxIterations,
    /// The start point itself could not be evaluated.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub start: usize,
    pub iter: usize,
    #[serde(rename = "J")]
    pub j: f64,
    pub violation: f64,
    pub mu: f64,
    pub phi: f64,
    #[serde(rename = "alpha_per_s")]
    pub alpha: f64,
    #[serde(rename = "W_a_max_J")]
    pub w_a_max: f64,
    pub step: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StartReport {
    pub index: usize,
    pub theta0: Vec<f64>,
    pub status: StartStatus,
    pub iterations: usize,
    /// Objective/constraint samples, excluding full verifications.
    pub samples: usize,
    /// Best feasible iterate of this start.
    pub best: Option<Evaluation>,
    pub last: Option<Evaluation>,
    pub error: Option<String>,
    pub history: Vec<IterationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignResult {
    pub params: Vec<ParamId>,
    pub best: Evaluation,
    pub start_index: usize,
    pub options: SolverOptions,
    pub starts: Vec<StartReport>,
}

/// Uniform random starts inside the bounds.
pub fn random_starts(problem: &DesignProblem, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lower, upper) = (problem.lower(), problem.upper());
    (0..count)
        .map(|_| {
            lower
                .iter()
                .zip(&upper)
                .map(|(&lo, &hi)| (lo + rng.random::<f64>() * (hi - lo)).clamp(lo, hi))
                .collect()
        })
        .collect()
}

pub fn solve(problem: &DesignProblem, starts: usize, seed: u64, opts: &SolverOptions) -> Result<DesignResult> {
    if starts == 0 {
        return Err(Error::Design("at least one start is required".into()));
    }
    solve_from(problem, &random_starts(problem, starts, seed), opts)
}

/// Runs the local solver from each given start and keeps the best feasible
/// result; ties go to the lower start index.
pub fn solve_from(problem: &DesignProblem, starts: &[Vec<f64>], opts: &SolverOptions) -> Result<DesignResult> {
    let reports = run_starts(problem, starts, opts)?;
    select_best(problem, reports, opts)
}

/// Per-start reports, in start order, whatever their feasibility.
pub fn run_starts(problem: &DesignProblem, starts: &[Vec<f64>], opts: &SolverOptions) -> Result<Vec<StartReport>> {
    opts.validate()?;
    if starts.is_empty() {
        return Err(Error::Design("at least one start is required".into()));
    }
    let (lower, upper) = (problem.lower(), problem.upper());
    for (k, s) in starts.iter().enumerate() {
        let inside = s.len() == problem.dim()
            && s.iter().zip(lower.iter().zip(&upper)).all(|(v, (lo, hi))| lo <= v && v <= hi);
        if !inside {
            return Err(Error::Design(format!("start {k} is not a point inside the bounds")));
        }
    }
    let local = Local::new(problem, opts);
    Ok(starts
        .par_iter()
        .enumerate()
        .map(|(k, theta0)| local.run(k, theta0))
        .collect())
}

/// Merges start reports into a result, or reports the least-violating
/// start when none is feasible.
pub fn select_best(problem: &DesignProblem, reports: Vec<StartReport>, opts: &SolverOptions) -> Result<DesignResult> {
    let best = reports
        .iter()
        .filter_map(|r| r.best.as_ref().map(|e| (r.index, e.objective.j)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    match best {
        Some((k, j)) => {
            info!("best feasible J = {j:.6} from start {k}");
            let pos = reports.iter().position(|r| r.index == k).expect("index present");
            Ok(DesignResult {
                params: problem.ids(),
                best: reports[pos].best.clone().expect("selected start is feasible"),
                start_index: k,
                options: *opts,
                starts: reports,
            })
        }
        None => Err(Error::Infeasible(infeasibility_summary(&reports))),
    }
}

fn infeasibility_summary(reports: &[StartReport]) -> String {
    let closest = reports
        .iter()
        .filter_map(|r| r.last.as_ref().map(|e| (r.index, e)))
        .min_by(|a, b| a.1.slacks.max().total_cmp(&b.1.slacks.max()).then(a.0.cmp(&b.0)));
    match closest {
        Some((k, e)) => {
            let linear = e.slacks.linear.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            format!(
                "no feasible point from {} starts; closest is start {k} with alpha slack {:.3e} 1/s, \
                 W_a slack {:.3e} J, largest linear residual {:.3e}",
                reports.len(),
                e.slacks.alpha,
                e.slacks.w_a,
                linear
            )
        }
        None => format!("none of the {} starts could be evaluated", reports.len()),
    }
}

/// Objective pieces and normalized constraint values (`<= 0` satisfied).
/// `J` is the largest piece: one per link, `gamma W_i / W_nom + P term`.
#[derive(Debug, Clone)]
struct Sample {
    j: f64,
    pieces: Vec<f64>,
    c: Vec<f64>,
    /// Roots behind the per-root constraints, in constraint order.
    roots: Vec<Complex64>,
    alpha: f64,
    w_a: f64,
}

impl Sample {
    fn violation(&self) -> f64 {
        self.c.iter().map(|c| c.max(0.0)).sum()
    }

    fn phi(&self, mu: f64) -> f64 {
        mu * self.j + self.violation()
    }

    fn top_piece(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.pieces.iter().enumerate() {
            if *v > self.pieces[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
struct Gradients {
    pieces: Vec<DVector<f64>>,
    c: Vec<DVector<f64>>,
}

impl Gradients {
    /// A penalty gradient: the top piece and the violated constraints.
    fn phi(&self, sample: &Sample, mu: f64) -> DVector<f64> {
        let mut g = &self.pieces[sample.top_piece()] * mu;
        for (gc, c) in self.c.iter().zip(&sample.c) {
            if *c > 0.0 {
                g += gc;
            }
        }
        g
    }

    /// `mu sum w_i grad J_i + sum lambda_k grad c_k`.
    fn weighted(&self, mu: f64, weights: &[f64], lambda: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(self.pieces[0].len());
        for (gp, w) in self.pieces.iter().zip(weights) {
            g.axpy(mu * w, gp, 1.0);
        }
        for (gc, l) in self.c.iter().zip(lambda) {
            g.axpy(*l, gc, 1.0);
        }
        g
    }

    /// Linearized objective after step `d`.
    fn linear_objective(&self, sample: &Sample, d: &DVector<f64>) -> f64 {
        self.pieces
            .iter()
            .zip(&sample.pieces)
            .map(|(gp, p)| p + gp.dot(d))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Linearized violation after step `d`.
    fn linear_violation(&self, sample: &Sample, d: &DVector<f64>) -> f64 {
        self.c.iter().zip(&sample.c).map(|(gc, c)| (c + gc.dot(d)).max(0.0)).sum()
    }
}

struct ModelStep {
    d: DVector<f64>,
    weights: Vec<f64>,
    lambda: Vec<f64>,
    /// Linearized violation after the step.
    linear: f64,
    /// Predicted change of the penalty function, negative for descent.
    decrease: f64,
}

struct Point {
    x: DVector<f64>,
    sample: Sample,
    grad: Gradients,
    eval: Evaluation,
}

struct Local<'a> {
    problem: &'a DesignProblem,
    opts: &'a SolverOptions,
    lower: Vec<f64>,
    upper: Vec<f64>,
    row_scale: Vec<f64>,
}

impl<'a> Local<'a> {
    fn new(problem: &'a DesignProblem, opts: &'a SolverOptions) -> Self {
        let row_scale = problem
            .linear
            .iter()
            .map(|row| {
                let size: f64 = row
                    .terms
                    .iter()
                    .map(|t| (t.coeff * problem.base.get(t.param).unwrap_or(0.0)).abs())
                    .sum::<f64>()
                    .max(row.rhs.abs());
                if size > 0.0 {
                    size
                } else {
                    1.0
                }
            })
            .collect();
        Self {
            problem,
            opts,
            lower: problem.lower(),
            upper: problem.upper(),
            row_scale,
        }
    }

    fn n(&self) -> usize {
        self.lower.len()
    }

    fn width(&self, j: usize) -> f64 {
        self.upper[j] - self.lower[j]
    }

    fn theta_of(&self, x: &DVector<f64>) -> Vec<f64> {
        (0..self.n())
            .map(|j| {
                if x[j] >= 1.0 {
                    self.upper[j]
                } else if x[j] <= 0.0 {
                    self.lower[j]
                } else {
                    (self.lower[j] + x[j] * self.width(j)).clamp(self.lower[j], self.upper[j])
                }
            })
            .collect()
    }

    fn x_of(&self, theta: &[f64]) -> DVector<f64> {
        DVector::from_fn(self.n(), |j, _| {
            let w = self.width(j);
            if w > 0.0 {
                (theta[j] - self.lower[j]) / w
            } else {
                0.0
            }
        })
    }

    /// Constraint values: linear rows, one row per root (`alpha <= xi`
    /// holds iff every root satisfies it, and the sum of root violations
    /// stays smooth where the rightmost pair changes), then `W_a`.
    fn sample_of(&self, e: &Evaluation, roots: &[Complex64]) -> Sample {
        let p = self.problem;
        let rows = &e.slacks.linear[2 * self.n()..];
        let mut c: Vec<f64> = rows.iter().zip(&self.row_scale).map(|(r, s)| r / s).collect();
        if roots.is_empty() {
            c.push(e.slacks.alpha / p.xi_alpha.abs());
        } else {
            c.extend(roots.iter().map(|r| (r.re - p.xi_alpha) / p.xi_alpha.abs()));
        }
        c.push(e.slacks.w_a / p.xi_a);
        let o = &e.objective;
        let pieces = o.w_links.iter().map(|w| p.gamma * w / p.w_nom + o.p_term).collect();
        Sample {
            j: o.j,
            pieces,
            c,
            roots: roots.to_vec(),
            alpha: e.alpha,
            w_a: e.objective.w_a_max,
        }
    }

    /// Objective and constraints with the roots continued from `base`.
    fn sample(&self, theta: &[f64], base: &[Complex64]) -> Result<Sample> {
        let p = self.problem;
        let design = p.design_at(theta)?;
        let objective = p.objective_of(&design)?;
        let ddae = build_ddae(&design.model, &design.absorber, &objective.feedback);
        let sys = reduce_to_retarded(&ddae);
        let (alpha, moved) = if base.is_empty() {
            (spectrum_of_reduced(&ddae, &sys, &p.spectrum)?.abscissa, Vec::new())
        } else {
            let opts = &p.spectrum;
            let moved = base
                .iter()
                .map(|r| newton_refine(&sys, *r, opts.newton_tol, opts.newton_max_iter))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::Spectrum("root continuation failed".into()))?;
            (moved.iter().map(|r| r.re).fold(f64::NEG_INFINITY, f64::max), moved)
        };
        let e = p.assemble(theta, &design, objective, alpha, Vec::new())?;
        Ok(self.sample_of(&e, &moved))
    }

    fn gradients(&self, theta: &[f64], at: &Sample, count: &mut usize) -> Result<Gradients> {
        let n = self.n();
        let mut gp = vec![DVector::zeros(n); at.pieces.len()];
        let mut gc = vec![DVector::zeros(n); at.c.len()];
        for k in 0..n {
            let w = self.width(k);
            if w == 0.0 {
                continue;
            }
            let h = self.opts.fd_step * (1.0 + theta[k].abs());
            let mut t = theta.to_vec();
            // backward difference where the forward point would leave the box
            t[k] = if theta[k] + h <= self.upper[k] { theta[k] + h } else { theta[k] - h };
            let dt = t[k] - theta[k];
            let s = self.sample(&t, &at.roots)?;
            *count += 1;
            for (g, (v, v0)) in gp.iter_mut().zip(s.pieces.iter().zip(&at.pieces)) {
                g[k] = (v - v0) / dt * w;
            }
            for (g, (v, v0)) in gc.iter_mut().zip(s.c.iter().zip(&at.c)) {
                g[k] = (v - v0) / dt * w;
            }
        }
        Ok(Gradients { pieces: gp, c: gc })
    }

    /// Full evaluation plus gradients, reusing the line-search gradients
    /// when the fresh spectrum reproduces the continued constraints.
    fn point(
        &self,
        x: DVector<f64>,
        tracked: Option<(Sample, Gradients)>,
        count: &mut usize,
    ) -> Result<Point> {
        let theta = self.theta_of(&x);
        let eval = self.problem.evaluate(&theta)?;
        let roots: Vec<Complex64> = eval.roots.iter().copied().filter(|r| r.im >= 0.0).collect();
        let sample = self.sample_of(&eval, &roots);
        let same = |s: &Sample| {
            s.c.len() == sample.c.len()
                && s.pieces.iter().zip(&sample.pieces).all(|(a, b)| (a - b).abs() <= 1e-12)
                && s.c.iter().zip(&sample.c).all(|(a, b)| (a - b).abs() <= 1e-9)
        };
        let grad = match tracked {
            Some((s, g)) if same(&s) => g,
            _ => self.gradients(&theta, &sample, count)?,
        };
        Ok(Point {
            x,
            sample,
            grad,
            eval,
        })
    }

    /// Largest step keeping `x + t d` in the unit box, and the index that
    /// hits the bound.
    fn max_step(x: &DVector<f64>, d: &DVector<f64>) -> (f64, Option<usize>) {
        let mut best = (f64::INFINITY, None);
        for j in 0..x.len() {
            let t = if d[j] > 0.0 {
                (1.0 - x[j]) / d[j]
            } else if d[j] < 0.0 {
                -x[j] / d[j]
            } else {
                continue;
            };
            if t < best.0 {
                best = (t.max(0.0), Some(j));
            }
        }
        best
    }

    fn trial_x(x: &DVector<f64>, d: &DVector<f64>, t: f64, t_max: f64, hit: Option<usize>) -> DVector<f64> {
        let mut y = (x + d * t).map(|v| v.clamp(0.0, 1.0));
        if t >= t_max {
            if let Some(j) = hit {
                y[j] = if d[j] > 0.0 { 1.0 } else { 0.0 };
            }
        }
        y
    }

    fn run(&self, index: usize, theta0: &[f64]) -> StartReport {
        let mut report = StartReport {
            index,
            theta0: theta0.to_vec(),
            status: StartStatus::Failed,
            iterations: 0,
            samples: 0,
            best: None,
            last: None,
            error: None,
            history: Vec::new(),
        };
        let mut count = 0;
        match self.iterate(theta0, &mut report, &mut count) {
            Ok(status) => report.status = status,
            Err(e) => {
                report.status = StartStatus::Failed;
                report.error = Some(e.to_string());
            }
        }
        report.samples = count;
        debug!(
            "start {index}: {:?} after {} iterations and {count} samples, best J = {:?}",
            report.status,
            report.iterations,
            report.best.as_ref().map(|e| e.objective.j)
        );
        report
    }

    fn record(&self, report: &mut StartReport, p: &Point, mu: f64, step: f64) {
        let feasible = p.eval.is_feasible();
        report.history.push(IterationRecord {
            start: report.index,
            iter: report.iterations,
            j: p.sample.j,
            violation: p.sample.violation(),
            mu,
            phi: p.sample.phi(mu),
            alpha: p.sample.alpha,
            w_a_max: p.sample.w_a,
            step,
            feasible,
        });
        let better = report.best.as_ref().is_none_or(|b| p.eval.objective.j < b.objective.j);
        if feasible && better {
            report.best = Some(p.eval.clone());
        }
        report.last = Some(p.eval.clone());
    }

    fn iterate(&self, theta0: &[f64], report: &mut StartReport, count: &mut usize) -> Result<StartStatus> {
        let n = self.n();
        let opts = self.opts;
        let mut mu = opts.mu0;
        let mut cur = self.point(self.x_of(theta0), None, count)?;
        self.record(report, &cur, mu, 0.0);
        let identity = DMatrix::<f64>::identity(n, n);
        let mut h = identity.clone();
        let mut fresh_h = true;

        loop {
            if report.iterations >= opts.max_iter {
                return Ok(StartStatus::MaxIterations);
            }
            let step = self.steer(&cur, &h, &mut mu);
            if -step.decrease <= opts.opt_tol {
                if fresh_h {
                    return Ok(StartStatus::Converged);
                }
                h = identity.clone();
                fresh_h = true;
                continue;
            }
            let Some((t, x_new, (sample, grad))) = self.line_search(&cur, &step, &h, mu, count) else {
                if fresh_h {
                    return Ok(StartStatus::LineSearchFailed);
                }
                h = identity.clone();
                fresh_h = true;
                continue;
            };
            let s = &x_new - &cur.x;
            let y = grad.weighted(mu, &step.weights, &step.lambda) - cur.grad.weighted(mu, &step.weights, &step.lambda);
            let next = self.point(x_new, Some((sample, grad)), count)?;
            report.iterations += 1;
            let sy = s.dot(&y);
            if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
                if fresh_h {
                    h = &identity * (sy / y.dot(&y));
                    fresh_h = false;
                }
                let rho = 1.0 / sy;
                let v = &identity - (&s * y.transpose()) * rho;
                h = &v * &h * v.transpose() + (&s * s.transpose()) * rho;
            }
            cur = next;
            self.record(report, &cur, mu, t);
            if s.amax() <= opts.step_tol {
                return Ok(StartStatus::StepTolerance);
            }
        }
    }

    /// Direction from the model `mu max_i (J_i + g_i'd) + sum max(0, c_k +
    /// a_k'd) + d'H^-1 d / 2`, solved through its dual over piece weights on
    /// the simplex and `lambda in [0, 1]^m` by coordinate ascent (pairwise
    /// moves for the weights). Variables pinned at a bound the step would
    /// cross are frozen and the model is re-solved.
    fn model_step(&self, cur: &Point, h: &DMatrix<f64>, mu: f64) -> ModelStep {
        self.model_step_at(&cur.x, &cur.sample, &cur.grad, h, mu)
    }

    fn model_step_at(&self, x: &DVector<f64>, sample: &Sample, grad: &Gradients, h: &DMatrix<f64>, mu: f64) -> ModelStep {
        let n = self.n();
        let c = &sample.c;
        let (np, m) = (sample.pieces.len(), c.len());
        let mut frozen: Vec<bool> = (0..n).map(|j| self.width(j) == 0.0).collect();
        loop {
            let hf = DMatrix::from_fn(n, n, |i, j| if frozen[i] || frozen[j] { 0.0 } else { h[(i, j)] });
            let hg: Vec<DVector<f64>> = grad.pieces.iter().map(|g| &hf * g).collect();
            let ha: Vec<DVector<f64>> = grad.c.iter().map(|a| &hf * a).collect();
            let diag: Vec<f64> = (0..m).map(|k| grad.c[k].dot(&ha[k])).collect();
            let mut weights = vec![0.0; np];
            weights[sample.top_piece()] = 1.0;
            let mut lambda: Vec<f64> = c.iter().map(|&ck| if ck > 0.0 { 1.0 } else { 0.0 }).collect();
            // q = H (mu G w + A lambda), the negated step
            let mut q = DVector::zeros(n);
            for i in 0..np {
                q.axpy(mu * weights[i], &hg[i], 1.0);
            }
            for k in 0..m {
                q.axpy(lambda[k], &ha[k], 1.0);
            }
            for _ in 0..1000 {
                let mut change: f64 = 0.0;
                for k in 0..m {
                    let slope = c[k] - grad.c[k].dot(&q);
                    let next = if diag[k] > 0.0 {
                        (lambda[k] + slope / diag[k]).clamp(0.0, 1.0)
                    } else if slope > 0.0 {
                        1.0
                    } else {
                        0.0
                    };
                    let delta = next - lambda[k];
                    if delta != 0.0 {
                        q.axpy(delta, &ha[k], 1.0);
                        lambda[k] = next;
                        change = change.max(delta.abs());
                    }
                }
                if mu > 0.0 {
                    for i in 0..np {
                        for j in i + 1..np {
                            let slope = mu * (sample.pieces[i] - sample.pieces[j]) - mu * (&grad.pieces[i] - &grad.pieces[j]).dot(&q);
                            let curv = mu * mu * (&grad.pieces[i] - &grad.pieces[j]).dot(&(&hg[i] - &hg[j]));
                            let delta = if curv > 0.0 {
                                slope / curv
                            } else if slope > 0.0 {
                                f64::INFINITY
                            } else {
                                f64::NEG_INFINITY
                            };
                            let delta = delta.clamp(-weights[i], weights[j]);
                            if delta != 0.0 {
                                weights[i] += delta;
                                weights[j] -= delta;
                                q.axpy(mu * delta, &hg[i], 1.0);
                                q.axpy(-mu * delta, &hg[j], 1.0);
                                change = change.max(delta.abs());
                            }
                        }
                    }
                }
                if change < 1e-14 {
                    break;
                }
            }
            let d = -q;
            let crossing: Vec<usize> = (0..n)
                .filter(|&j| !frozen[j] && ((x[j] <= 0.0 && d[j] < 0.0) || (x[j] >= 1.0 && d[j] > 0.0)))
                .collect();
            if crossing.is_empty() {
                let linear = grad.linear_violation(sample, &d);
                let objective = grad.linear_objective(sample, &d);
                let decrease = mu * (objective - sample.j) + linear - sample.violation();
                return ModelStep {
                    d,
                    weights,
                    lambda,
                    linear,
                    decrease,
                };
            }
            for j in crossing {
                frozen[j] = true;
            }
        }
    }

    /// Lowers `mu` until the model step keeps a fixed fraction of the
    /// linearized violation reduction of the feasibility-only step.
    fn steer(&self, cur: &Point, h: &DMatrix<f64>, mu: &mut f64) -> ModelStep {
        let v = cur.sample.violation();
        let mut step = self.model_step(cur, h, *mu);
        if v <= 0.0 {
            return step;
        }
        let feasibility = self.model_step(cur, h, 0.0);
        let target = self.opts.steering_fraction * (v - feasibility.linear);
        for _ in 0..self.opts.max_steering {
            if v - step.linear >= target {
                break;
            }
            *mu *= 0.5;
            step = self.model_step(cur, h, *mu);
        }
        step
    }

    /// Re-solves the model at the current point with constants shifted to
    /// the rejected full step, which bends the step along curved constraint
    /// boundaries; accepted on sufficient decrease alone.
    #[allow(clippy::too_many_arguments)]
    fn second_order_correction(
        &self,
        cur: &Point,
        d: &DVector<f64>,
        trial: &Sample,
        h: &DMatrix<f64>,
        mu: f64,
        bound: f64,
        count: &mut usize,
    ) -> Option<(f64, DVector<f64>, (Sample, Gradients))> {
        let mut shifted = trial.clone();
        for (v, g) in shifted.pieces.iter_mut().zip(&cur.grad.pieces) {
            *v -= g.dot(d);
        }
        for (v, g) in shifted.c.iter_mut().zip(&cur.grad.c) {
            *v -= g.dot(d);
        }
        shifted.j = shifted.pieces.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let corrected = self.model_step_at(&cur.x, &shifted, &cur.grad, h, mu).d;
        let (t_max, _) = Self::max_step(&cur.x, &corrected);
        if t_max < 1.0 {
            return None;
        }
        let x = (&cur.x + &corrected).map(|v| v.clamp(0.0, 1.0));
        let theta = self.theta_of(&x);
        let s = self.sample(&theta, &cur.sample.roots).ok()?;
        *count += 1;
        if s.phi(mu) > bound {
            return None;
        }
        let grad = self.gradients(&theta, &s, count).ok()?;
        Some((1.0, x, (s, grad)))
    }

    /// Weak Wolfe bracketing search capped at the box; returns the step, the
    /// new point and its continued sample and gradients.
    fn line_search(
        &self,
        cur: &Point,
        step: &ModelStep,
        h: &DMatrix<f64>,
        mu: f64,
        count: &mut usize,
    ) -> Option<(f64, DVector<f64>, (Sample, Gradients))> {
        let opts = self.opts;
        let d = &step.d;
        let slope = step.decrease;
        let phi0 = cur.sample.phi(mu);
        let (t_max, hit) = Self::max_step(&cur.x, d);
        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        let mut t = t_max.min(1.0);
        if !(t > 0.0) {
            return None;
        }
        for _ in 0..opts.max_line_search {
            let x = Self::trial_x(&cur.x, d, t, t_max, hit);
            let theta = self.theta_of(&x);
            let sample = self.sample(&theta, &cur.sample.roots);
            *count += 1;
            match sample {
                Ok(s) if s.phi(mu) <= phi0 + opts.wolfe_c1 * t * slope => match self.gradients(&theta, &s, count) {
                    Ok(grad) => {
                        let curvature = grad.phi(&s, mu).dot(d);
                        if curvature >= opts.wolfe_c2 * slope || t >= t_max {
                            return Some((t, x, (s, grad)));
                        }
                        lo = t;
                    }
                    Err(_) => hi = t,
                },
                Ok(s) if t == 1.0 => {
                    if let Some(found) = self.second_order_correction(cur, d, &s, h, mu, phi0 + opts.wolfe_c1 * slope, count) {
                        return Some(found);
                    }
                    hi = t;
                }
                _ => hi = t,
            }
            t = if hi.is_finite() { 0.5 * (lo + hi) } else { (2.0 * t).min(t_max) };
            if hi.is_finite() && hi - lo <= f64::EPSILON * hi.max(1.0) {
                return None;
            }
        }
        None
    }
}
