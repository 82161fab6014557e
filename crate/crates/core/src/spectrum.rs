//! Characteristic roots of the closed loop.
//!
//! Candidates come from a Chebyshev collocation of the infinitesimal
//! generator of the reduced retarded system on `[-tau, 0]`. Those right of
//! `rhp_bound` are polished by Newton's method on `det(Delta(lambda))` and
//! gated by the residual of the original descriptor model.

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ddae::{char_residual, reduce_to_retarded, DdaeSystem, RetardedSystem};
use crate::error::{Error, Result};

/// Roots whose descriptor residual exceeds this are not reported.
pub const RESIDUAL_GATE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumOptions {
    #[serde(rename = "rhp_bound_per_s")]
    pub rhp_bound: f64,
    /// Number of Chebyshev intervals; `grid_size + 1` nodes.
    pub grid_size: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Double the grid until the abscissa settles to `abscissa_tol`.
    pub adaptive: bool,
    #[serde(rename = "abscissa_tol_per_s")]
    pub abscissa_tol: f64,
    /// Cap on the discretized eigenproblem dimension.
    pub max_size: usize,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self {
            rhp_bound: -1.2,
            grid_size: 30,
            newton_tol: 1e-10,
            newton_max_iter: 20,
            adaptive: true,
            abscissa_tol: 1e-6,
            max_size: 1200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Spectrum {
    /// Sorted by descending real part, then ascending imaginary part.
    pub roots: Vec<Complex64>,
    pub abscissa: f64,
    pub residuals: Vec<f64>,
    /// Candidates whose Newton iteration diverged or failed the residual gate.
    pub rejected: Vec<Complex64>,
    pub grid_size: usize,
    /// No root was found right of `rhp_bound`; `abscissa` is the bound itself.
    pub truncated: bool,
}

/// Chebyshev differentiation matrix on `cos(pi j / n)`, `j = 0..=n`.
pub fn chebyshev_differentiation(n: usize) -> (DMatrix<f64>, Vec<f64>) {
    let x: Vec<f64> = (0..=n)
        .map(|j| (std::f64::consts::PI * j as f64 / n as f64).cos())
        .collect();
    let c = |j: usize| {
        let w = if j == 0 || j == n { 2.0 } else { 1.0 };
        if j % 2 == 0 {
            w
        } else {
            -w
        }
    };
    let mut d = DMatrix::from_fn(n + 1, n + 1, |i, j| {
        if i == j {
            0.0
        } else {
            c(i) / c(j) / (x[i] - x[j])
        }
    });
    // negative-sum trick for the diagonal
    for i in 0..=n {
        let s: f64 = d.row(i).sum();
        d[(i, i)] = -s;
    }
    (d, x)
}

/// Discretized generator: block row 0 carries the dynamics
/// `z'(0) = A0 z(0) + A1 z(-tau)`, the rest differentiate the history.
pub fn generator_matrix(sys: &RetardedSystem, grid_size: usize) -> DMatrix<f64> {
    let n = sys.dim();
    let (d, _) = chebyshev_differentiation(grid_size);
    let scale = 2.0 / sys.tau;
    let size = n * (grid_size + 1);
    let mut big = DMatrix::zeros(size, size);
    big.view_mut((0, 0), (n, n)).copy_from(&sys.a0);
    big.view_mut((0, grid_size * n), (n, n)).copy_from(&sys.a1);
    for i in 1..=grid_size {
        for j in 0..=grid_size {
            let v = scale * d[(i, j)];
            if v != 0.0 {
                for k in 0..n {
                    big[(i * n + k, j * n + k)] = v;
                }
            }
        }
    }
    big
}

fn eigenvalues(m: DMatrix<f64>) -> Result<Vec<Complex64>> {
    let dim = m.nrows();
    let schur = Schur::try_new(m, f64::EPSILON, 100 * dim.max(10))
        .ok_or_else(|| Error::Spectrum(format!("Schur iteration did not converge (dimension {dim})")))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Newton's method on `det Delta`: `dlambda = -1 / tr(Delta^-1 Delta')`.
pub fn newton_refine(sys: &RetardedSystem, start: Complex64, tol: f64, max_iter: usize) -> Option<Complex64> {
    let mut lambda = start;
    for _ in 0..max_iter {
        let lu = sys.characteristic_matrix(lambda).lu();
        let Some(x) = lu.solve(&sys.characteristic_derivative(lambda)) else {
            // exactly singular: already on a root
            return Some(lambda);
        };
        let trace = x.trace();
        if trace.norm() == 0.0 || !trace.is_finite() {
            return None;
        }
        let step = -1.0 / trace;
        lambda += step;
        if !lambda.is_finite() {
            return None;
        }
        if step.norm() < tol * (1.0 + lambda.norm()) {
            return Some(lambda);
        }
    }
    None
}

fn dedup(mut roots: Vec<Complex64>) -> Vec<Complex64> {
    sort_roots(&mut roots);
    let mut out: Vec<Complex64> = Vec::with_capacity(roots.len());
    for r in roots {
        if !out.iter().any(|q| (q - r).norm() < 1e-6 * (1.0 + r.norm())) {
            out.push(r);
        }
    }
    out
}

fn sort_roots(roots: &mut [Complex64]) {
    roots.sort_by(|a, b| b.re.total_cmp(&a.re).then(a.im.total_cmp(&b.im)));
}

fn assemble(ddae: &DdaeSystem, mut roots: Vec<Complex64>, mut rejected: Vec<Complex64>, opts: &SpectrumOptions, grid_size: usize, direct: bool) -> Result<Spectrum> {
    let mut kept = Vec::with_capacity(roots.len());
    let mut residuals = Vec::with_capacity(roots.len());
    for r in roots.drain(..) {
        let res = char_residual(ddae, r);
        if res < RESIDUAL_GATE {
            kept.push(r);
            residuals.push(res);
        } else {
            log::warn!("root {r} rejected: descriptor residual {res:.2e}");
            rejected.push(r);
        }
    }
    if kept.is_empty() && !rejected.is_empty() {
        return Err(Error::Spectrum(format!(
            "all {} candidate roots right of {} failed to refine",
            rejected.len(),
            opts.rhp_bound
        )));
    }
    let truncated = kept.is_empty();
    let abscissa = if truncated {
        opts.rhp_bound
    } else {
        kept.iter().map(|r| r.re).fold(f64::NEG_INFINITY, f64::max)
    };
    Ok(Spectrum {
        roots: kept,
        abscissa,
        residuals,
        rejected,
        grid_size: if direct { 0 } else { grid_size },
        truncated,
    })
}

fn spectrum_at(ddae: &DdaeSystem, sys: &RetardedSystem, opts: &SpectrumOptions, grid_size: usize) -> Result<Spectrum> {
    let candidates = eigenvalues(generator_matrix(sys, grid_size))?;
    let mut refined = Vec::new();
    let mut rejected = Vec::new();
    for c in candidates.into_iter().filter(|c| c.re >= opts.rhp_bound) {
        match newton_refine(sys, c, opts.newton_tol, opts.newton_max_iter) {
            Some(r) if r.re >= opts.rhp_bound => refined.push(r),
            Some(_) => {}
            None => {
                log::warn!("Newton did not converge from candidate {c}");
                rejected.push(c);
            }
        }
    }
    assemble(ddae, dedup(refined), rejected, opts, grid_size, false)
}

/// Rightmost characteristic roots of the closed loop.
pub fn spectrum(ddae: &DdaeSystem, opts: &SpectrumOptions) -> Result<Spectrum> {
    let sys = reduce_to_retarded(ddae);
    spectrum_of_reduced(ddae, &sys, opts)
}

pub fn spectrum_of_reduced(ddae: &DdaeSystem, sys: &RetardedSystem, opts: &SpectrumOptions) -> Result<Spectrum> {
    if sys.is_delay_free() {
        let roots = eigenvalues(&sys.a0 + &sys.a1)?;
        let mut sorted = roots;
        sort_roots(&mut sorted);
        return assemble(ddae, sorted, Vec::new(), opts, 0, true);
    }
    if opts.grid_size < 2 {
        return Err(Error::Spectrum("grid_size must be at least 2".into()));
    }
    let n = sys.dim();
    let mut grid = opts.grid_size;
    let mut current = spectrum_at(ddae, sys, opts, grid)?;
    if !opts.adaptive {
        return Ok(current);
    }
    loop {
        let next_grid = 2 * grid;
        if n * (next_grid + 1) > opts.max_size {
            log::debug!("grid refinement stopped at N = {grid} by max_size {}", opts.max_size);
            return Ok(current);
        }
        let next = spectrum_at(ddae, sys, opts, next_grid)?;
        let change = (next.abscissa - current.abscissa).abs();
        log::debug!("N = {next_grid}: abscissa {} (change {change:.2e})", next.abscissa);
        current = next;
        grid = next_grid;
        if change < opts.abscissa_tol {
            return Ok(current);
        }
    }
}

pub fn spectral_abscissa(ddae: &DdaeSystem, opts: &SpectrumOptions) -> Result<f64> {
    spectrum(ddae, opts).map(|s| s.abscissa)
}

/// Follows known roots to a nearby system by Newton continuation and
/// returns the new abscissa, or `None` if any root is lost.
pub fn track_abscissa(sys: &RetardedSystem, roots: &[Complex64], opts: &SpectrumOptions) -> Option<f64> {
    if roots.is_empty() {
        return None;
    }
    let mut alpha = f64::NEG_INFINITY;
    for r in roots {
        let moved = newton_refine(sys, *r, opts.newton_tol, opts.newton_max_iter)?;
        alpha = alpha.max(moved.re);
    }
    Some(alpha)
}
