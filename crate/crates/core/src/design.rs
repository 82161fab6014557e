//! Integrated structural/control design problem.
//!
//! The DR gain and delay are not decision variables: they are retuned at
//! every structural parameter vector `theta`, so objective and constraints
//! depend on `theta` alone.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ddae::build_ddae;
use crate::error::{Error, Result};
use crate::model::{AbsorberModel, ChainModel, HarmonicExcitation};
use crate::phasor::analyze_active;
use crate::spectrum::{spectrum, SpectrumOptions};
use crate::tuning::{tune, BranchPolicy, DrFeedback};

/// Tolerance on raw constraint slacks when classifying a point as feasible.
pub const FEASIBILITY_TOL: f64 = 1e-8;

/// A structural parameter, written `m3`, `k6`, `c2`, `m_a`, `c_a`, `k_a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ParamId {
    Mass(usize),
    Damping(usize),
    Stiffness(usize),
    AbsorberMass,
    AbsorberDamping,
    AbsorberStiffness,
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamId::Mass(i) => write!(f, "m{i}"),
            ParamId::Damping(i) => write!(f, "c{i}"),
            ParamId::Stiffness(i) => write!(f, "k{i}"),
            ParamId::AbsorberMass => f.write_str("m_a"),
            ParamId::AbsorberDamping => f.write_str("c_a"),
            ParamId::AbsorberStiffness => f.write_str("k_a"),
        }
    }
}

impl FromStr for ParamId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m_a" => return Ok(ParamId::AbsorberMass),
            "c_a" => return Ok(ParamId::AbsorberDamping),
            "k_a" => return Ok(ParamId::AbsorberStiffness),
            _ => {}
        }
        let bad = || Error::Design(format!("unknown parameter id '{s}'"));
        let (kind, index) = s.split_at_checked(1).ok_or_else(bad)?;
        let i: usize = index.parse().map_err(|_| bad())?;
        if i == 0 || index.starts_with('0') {
            return Err(bad());
        }
        match kind {
            "m" => Ok(ParamId::Mass(i)),
            "c" => Ok(ParamId::Damping(i)),
            "k" => Ok(ParamId::Stiffness(i)),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for ParamId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ParamId> for String {
    fn from(id: ParamId) -> Self {
        id.to_string()
    }
}

impl ParamId {
    /// True for absorber parameters, which leave link energies unchanged.
    pub fn is_absorber(self) -> bool {
        matches!(
            self,
            ParamId::AbsorberMass | ParamId::AbsorberDamping | ParamId::AbsorberStiffness
        )
    }
}

/// A complete physical configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub model: ChainModel,
    pub absorber: AbsorberModel,
    pub excitation: HarmonicExcitation,
}

impl Design {
    pub fn new(model: ChainModel, absorber: AbsorberModel, excitation: HarmonicExcitation) -> Self {
        Self {
            model,
            absorber,
            excitation,
        }
    }

    fn check_index(&self, id: ParamId) -> Result<()> {
        let d = self.model.d();
        let ok = match id {
            ParamId::Mass(i) => i <= d,
            ParamId::Damping(i) | ParamId::Stiffness(i) => i <= d + 1,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Design(format!("parameter {id} does not exist for d = {d}")))
        }
    }

    pub fn get(&self, id: ParamId) -> Result<f64> {
        self.check_index(id)?;
        Ok(match id {
            ParamId::Mass(i) => self.model.masses()[i - 1],
            ParamId::Damping(i) => self.model.dampings()[i - 1],
            ParamId::Stiffness(i) => self.model.stiffnesses()[i - 1],
            ParamId::AbsorberMass => self.absorber.mass,
            ParamId::AbsorberDamping => self.absorber.damping,
            ParamId::AbsorberStiffness => self.absorber.stiffness,
        })
    }

    /// Copy with the given parameters replaced; the result is revalidated.
    pub fn with(&self, ids: &[ParamId], values: &[f64]) -> Result<Design> {
        let mut masses = self.model.masses().to_vec();
        let mut dampings = self.model.dampings().to_vec();
        let mut stiffnesses = self.model.stiffnesses().to_vec();
        let mut a = self.absorber;
        for (&id, &v) in ids.iter().zip(values) {
            self.check_index(id)?;
            match id {
                ParamId::Mass(i) => masses[i - 1] = v,
                ParamId::Damping(i) => dampings[i - 1] = v,
                ParamId::Stiffness(i) => stiffnesses[i - 1] = v,
                ParamId::AbsorberMass => a.mass = v,
                ParamId::AbsorberDamping => a.damping = v,
                ParamId::AbsorberStiffness => a.stiffness = v,
            }
        }
        let model = ChainModel::new(masses, stiffnesses, dampings, self.model.p(), self.model.s())?;
        let absorber = AbsorberModel::new(a.mass, a.damping, a.stiffness)?;
        Ok(Design::new(model, absorber, self.excitation))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBound {
    pub param: ParamId,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearTerm {
    pub param: ParamId,
    pub coeff: f64,
}

/// `sum coeff * value <= rhs`; terms may name fixed parameters too.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearConstraint {
    pub terms: Vec<LinearTerm>,
    pub rhs: f64,
}

impl LinearConstraint {
    pub fn residual(&self, design: &Design) -> Result<f64> {
        let mut lhs = 0.0;
        for t in &self.terms {
            lhs += t.coeff * design.get(t.param)?;
        }
        Ok(lhs - self.rhs)
    }
}

/// How the two objective terms are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", deny_unknown_fields)]
pub enum Normalization {
    /// Use `max W_i,max` and `P_max` of the base design, so `J(theta0) = 1`.
    Nominal,
    Fixed {
        #[serde(rename = "W_nom_J")]
        w_nom: f64,
        #[serde(rename = "P_nom_W")]
        p_nom: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignProblem {
    pub base: Design,
    pub params: Vec<ParamBound>,
    pub gamma: f64,
    #[serde(rename = "W_nom_J")]
    pub w_nom: f64,
    #[serde(rename = "P_nom_W")]
    pub p_nom: f64,
    #[serde(rename = "xi_alpha_per_s")]
    pub xi_alpha: f64,
    #[serde(rename = "xi_a_J")]
    pub xi_a: f64,
    pub linear: Vec<LinearConstraint>,
    pub spectrum: SpectrumOptions,
    pub policy: BranchPolicy,
}

/// Spectrum settings used inside design evaluations: a fixed 16-interval
/// grid, with accuracy carried by the Newton refinement.
pub fn design_spectrum_options() -> SpectrumOptions {
    SpectrumOptions {
        grid_size: 16,
        adaptive: false,
        ..SpectrumOptions::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectiveValue {
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "W_max_J")]
    pub w_max: f64,
    /// 1-based link holding the largest energy.
    pub w_max_link: usize,
    /// Peak energy of every link, link `i` at entry `i - 1`.
    #[serde(rename = "W_link_max_J")]
    pub w_links: Vec<f64>,
    #[serde(rename = "P_max_W")]
    pub p_max: f64,
    pub w_term: f64,
    pub p_term: f64,
    #[serde(rename = "W_a_max_J")]
    pub w_a_max: f64,
    pub feedback: DrFeedback,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Slacks {
    /// Upper bounds, then lower bounds, then the extra linear rows.
    pub linear: Vec<f64>,
    pub alpha: f64,
    pub w_a: f64,
}

impl Slacks {
    pub fn max(&self) -> f64 {
        self.linear
            .iter()
            .copied()
            .chain([self.alpha, self.w_a])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub theta: Vec<f64>,
    pub objective: ObjectiveValue,
    #[serde(rename = "alpha_per_s")]
    pub alpha: f64,
    pub slacks: Slacks,
    #[serde(skip)]
    pub roots: Vec<Complex64>,
}

impl Evaluation {
    pub fn is_feasible(&self) -> bool {
        self.slacks.max() <= FEASIBILITY_TOL
    }
}

impl DesignProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        base: Design,
        params: Vec<ParamBound>,
        gamma: f64,
        xi_alpha: f64,
        xi_a: f64,
        linear: Vec<LinearConstraint>,
        normalization: Normalization,
    ) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::Design("no free parameters".into()));
        }
        for (i, b) in params.iter().enumerate() {
            base.get(b.param)?;
            if !(b.lower.is_finite() && b.upper.is_finite() && b.lower <= b.upper) {
                return Err(Error::Design(format!(
                    "bounds of {} must be finite and ordered, got [{}, {}]",
                    b.param, b.lower, b.upper
                )));
            }
            if params[..i].iter().any(|o| o.param == b.param) {
                return Err(Error::Design(format!("parameter {} listed twice", b.param)));
            }
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Design(format!("gamma must lie in [0, 1], got {gamma}")));
        }
        if !(xi_alpha < 0.0) {
            return Err(Error::Design(format!("xi_alpha must be negative, got {xi_alpha}")));
        }
        if !(xi_a > 0.0) {
            return Err(Error::Design(format!("xi_a must be positive, got {xi_a}")));
        }
        for c in &linear {
            for t in &c.terms {
                base.get(t.param)?;
            }
        }
        let mut problem = Self {
            base,
            params,
            gamma,
            w_nom: 1.0,
            p_nom: 1.0,
            xi_alpha,
            xi_a,
            linear,
            spectrum: design_spectrum_options(),
            policy: BranchPolicy::Auto,
        };
        let (w_nom, p_nom) = match normalization {
            Normalization::Nominal => {
                let v = problem.objective(&problem.nominal_theta())?;
                (v.w_max, v.p_max)
            }
            Normalization::Fixed { w_nom, p_nom } => (w_nom, p_nom),
        };
        if !(w_nom > 0.0 && p_nom > 0.0) {
            return Err(Error::Design(format!(
                "normalization constants must be positive, got W_nom = {w_nom}, P_nom = {p_nom}"
            )));
        }
        problem.w_nom = w_nom;
        problem.p_nom = p_nom;
        Ok(problem)
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.params.iter().map(|b| b.param).collect()
    }

    pub fn lower(&self) -> Vec<f64> {
        self.params.iter().map(|b| b.lower).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.params.iter().map(|b| b.upper).collect()
    }

    /// Parameter values of the base design.
    pub fn nominal_theta(&self) -> Vec<f64> {
        self.params
            .iter()
            .map(|b| self.base.get(b.param).expect("validated in new"))
            .collect()
    }

    pub fn design_at(&self, theta: &[f64]) -> Result<Design> {
        if theta.len() != self.dim() {
            return Err(Error::Design(format!(
                "theta has {} entries, expected {}",
                theta.len(),
                self.dim()
            )));
        }
        self.base.with(&self.ids(), theta)
    }

    /// Retunes the DR at `theta` and evaluates the balanced objective.
    pub fn objective(&self, theta: &[f64]) -> Result<ObjectiveValue> {
        let design = self.design_at(theta)?;
        self.objective_of(&design)
    }

    pub(crate) fn objective_of(&self, design: &Design) -> Result<ObjectiveValue> {
        let (m, a, e) = (&design.model, &design.absorber, &design.excitation);
        let feedback = tune(m, a, e, self.policy)?.selected;
        let active = analyze_active(m, a, e)?;
        let (link, w) = active.energy.max_link();
        let w_max = w.max;
        let p_max = active.power.p_max;
        let w_term = self.gamma * w_max / self.w_nom;
        let p_term = (1.0 - self.gamma) * p_max / self.p_nom;
        Ok(ObjectiveValue {
            j: w_term + p_term,
            w_max,
            w_max_link: link,
            w_links: active.energy.links.iter().map(|l| l.max).collect(),
            p_max,
            w_term,
            p_term,
            w_a_max: active.energy.absorber.max,
            feedback,
        })
    }

    pub fn linear_slacks(&self, theta: &[f64], design: &Design) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(2 * self.dim() + self.linear.len());
        out.extend(theta.iter().zip(&self.params).map(|(t, b)| t - b.upper));
        out.extend(theta.iter().zip(&self.params).map(|(t, b)| b.lower - t));
        for c in &self.linear {
            out.push(c.residual(design)?);
        }
        Ok(out)
    }

    /// Objective, all constraint slacks (`<= 0` is satisfied) and the
    /// rightmost roots, from a fresh tuning and spectrum.
    pub fn evaluate(&self, theta: &[f64]) -> Result<Evaluation> {
        let design = self.design_at(theta)?;
        let objective = self.objective_of(&design)?;
        let ddae = build_ddae(&design.model, &design.absorber, &objective.feedback);
        let spec = spectrum(&ddae, &self.spectrum)?;
        self.assemble(theta, &design, objective, spec.abscissa, spec.roots)
    }

    pub(crate) fn assemble(
        &self,
        theta: &[f64],
        design: &Design,
        objective: ObjectiveValue,
        alpha: f64,
        roots: Vec<Complex64>,
    ) -> Result<Evaluation> {
        let slacks = Slacks {
            linear: self.linear_slacks(theta, design)?,
            alpha: alpha - self.xi_alpha,
            w_a: objective.w_a_max - self.xi_a,
        };
        Ok(Evaluation {
            theta: theta.to_vec(),
            objective,
            alpha,
            slacks,
            roots,
        })
    }
}

/// Step per free parameter; points run from the lower bound up to the
/// upper bound inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub steps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub theta: Vec<f64>,
    pub evaluation: Option<Evaluation>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub best: Evaluation,
    pub best_index: usize,
    pub axes: Vec<Vec<f64>>,
    /// Row-major over the axes, last parameter fastest.
    pub points: Vec<GridPoint>,
}

fn axis(lower: f64, upper: f64, step: f64) -> Result<Vec<f64>> {
    if lower == upper {
        return Ok(vec![lower]);
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Design(format!("grid step must be positive, got {step}")));
    }
    let count = ((upper - lower) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| lower + i as f64 * step).collect())
}

fn grid_infeasibility(points: &[GridPoint]) -> String {
    let closest = points
        .iter()
        .filter_map(|p| p.evaluation.as_ref())
        .min_by(|a, b| a.slacks.max().total_cmp(&b.slacks.max()));
    match closest {
        Some(e) => format!(
            "none of the {} grid points is feasible; closest is theta = {:?} with alpha slack {:.3e} 1/s, \
             W_a slack {:.3e} J, largest linear residual {:.3e}",
            points.len(),
            e.theta,
            e.slacks.alpha,
            e.slacks.w_a,
            e.slacks.linear.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        ),
        None => format!("none of the {} grid points could be evaluated", points.len()),
    }
}

/// Exhaustive evaluation over a Cartesian grid of at most three parameters.
pub fn grid_search(problem: &DesignProblem, grid: &GridSpec) -> Result<GridResult> {
    let n = problem.dim();
    if n > 3 {
        return Err(Error::Design(format!("grid search supports at most 3 parameters, got {n}")));
    }
    if grid.steps.len() != n {
        return Err(Error::Design(format!(
            "grid has {} steps for {n} parameters",
            grid.steps.len()
        )));
    }
    let axes = problem
        .params
        .iter()
        .zip(&grid.steps)
        .map(|(b, &s)| axis(b.lower, b.upper, s))
        .collect::<Result<Vec<_>>>()?;
    let total: usize = axes.iter().map(Vec::len).product();
    let thetas: Vec<Vec<f64>> = (0..total)
        .map(|mut flat| {
            let mut theta = vec![0.0; n];
            for k in (0..n).rev() {
                theta[k] = axes[k][flat % axes[k].len()];
                flat /= axes[k].len();
            }
            theta
        })
        .collect();
    let points: Vec<GridPoint> = thetas
        .into_par_iter()
        .map(|theta| match problem.evaluate(&theta) {
            Ok(e) => GridPoint {
                theta,
                evaluation: Some(e),
                error: None,
            },
            Err(err) => GridPoint {
                theta,
                evaluation: None,
                error: Some(err.to_string()),
            },
        })
        .collect();
    let best_index = points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.evaluation.as_ref().filter(|e| e.is_feasible()).map(|e| (i, e.objective.j)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Infeasible(grid_infeasibility(&points)))?;
    Ok(GridResult {
        best: points[best_index].evaluation.clone().expect("feasible point"),
        best_index,
        axes,
        points,
    })
}
