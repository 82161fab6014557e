//! Strict JSON experiment configuration.
//!
//! Every physical field carries its unit in the key. Indices (`p`, `s`,
//! parameter ids such as `k3`) are 1-based, as in the model constructors.

use std::fs;
use std::path::Path;

use ncdr_core::design::{
    Design, DesignProblem, LinearConstraint, Normalization, ParamBound, ParamId,
};
use ncdr_core::model::{AbsorberModel, ChainModel, HarmonicExcitation};
use ncdr_core::optimizer::SolverOptions;
use ncdr_core::simulation::SimulationConfig;
use ncdr_core::spectrum::SpectrumOptions;
use ncdr_core::tuning::BranchPolicy;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub model: ModelSection,
    pub absorber: AbsorberSection,
    pub excitation: ExcitationSection,
    #[serde(default)]
    pub feedback: FeedbackSection,
    #[serde(default)]
    pub spectrum: SpectrumOptions,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub masses_kg: Vec<f64>,
    /// `d + 1` links, base-to-base.
    #[serde(rename = "stiffnesses_N_per_m")]
    pub stiffnesses: Vec<f64>,
    #[serde(rename = "dampings_N_s_per_m")]
    pub dampings: Vec<f64>,
    /// Absorber attachment mass.
    pub p: usize,
    /// Target mass.
    pub s: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbsorberSection {
    pub mass_kg: f64,
    #[serde(rename = "damping_N_s_per_m")]
    pub damping: f64,
    #[serde(rename = "stiffness_N_per_m")]
    pub stiffness: f64,
}

/// Exactly one of `frequency_hz` and `omega_rad_per_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationSection {
    #[serde(rename = "amplitude_N")]
    pub amplitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_rad_per_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeedbackSection {
    /// Delayed resonator tuned to the excitation.
    Tuned {
        #[serde(default)]
        branch_policy: BranchPolicy,
    },
    /// Feedback switched off for the whole analysis.
    Passive,
}

impl Default for FeedbackSection {
    fn default() -> Self {
        FeedbackSection::Tuned {
            branch_policy: BranchPolicy::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub t_end_s: f64,
    /// Step upper bound; automatic when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_s: Option<f64>,
    /// Feedback on from this time.
    pub switch_time_s: f64,
    /// `[x; x'; x_a; x_a']` in m and m/s; zero when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            t_end_s: 30.0,
            dt_s: None,
            switch_time_s: 15.0,
            initial_state: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    pub params: Vec<ParamBound>,
    pub gamma: f64,
    #[serde(rename = "xi_alpha_per_s")]
    pub xi_alpha: f64,
    #[serde(rename = "xi_a_J")]
    pub xi_a: f64,
    #[serde(default)]
    pub linear: Vec<LinearConstraint>,
    #[serde(default = "nominal_normalization")]
    pub normalization: Normalization,
    pub mode: DesignMode,
}

fn nominal_normalization() -> Normalization {
    Normalization::Nominal
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DesignMode {
    /// Exhaustive grid; one step per parameter.
    Grid { steps: Vec<f64> },
    /// Seeded multi-start local solves.
    Continuous {
        starts: usize,
        seed: u64,
        #[serde(default)]
        solver: SolverOptions,
    },
}

impl ExperimentConfig {
    /// Reads, applies `key=value` overrides and validates.
    pub fn load(path: &Path, overrides: &[String]) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("{}: cannot read config: {e}", path.display())))?;
        let mut value: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        for spec in overrides {
            apply_override(&mut value, spec)?;
        }
        Self::from_value(value).map_err(|e| e.context(&path.display().to_string()))
    }

    pub fn from_value(value: Value) -> CliResult<Self> {
        let config: Self =
            serde_json::from_value(value).map_err(|e| CliError::Validation(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Checks every section against the model invariants before any
    /// computation runs.
    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Validation(format!(
                "schema_version must be {SCHEMA_VERSION}, got {}",
                self.schema_version
            )));
        }
        self.design()?;
        self.simulation_config()?;
        if let Some(section) = &self.design {
            if matches!(self.feedback, FeedbackSection::Passive) {
                return Err(CliError::Validation(
                    "design: optimization needs feedback mode 'tuned'".into(),
                ));
            }
            match &section.mode {
                DesignMode::Continuous { starts: 0, .. } => {
                    return Err(CliError::Validation(
                        "design.mode.starts: at least one start is required".into(),
                    ))
                }
                DesignMode::Grid { steps } if steps.len() != section.params.len() => {
                    return Err(CliError::Validation(format!(
                        "design.mode.steps: {} steps for {} parameters",
                        steps.len(),
                        section.params.len()
                    )))
                }
                _ => {}
            }
            self.problem()?;
        }
        Ok(())
    }

    pub fn design(&self) -> CliResult<Design> {
        let m = &self.model;
        let model = ChainModel::new(m.masses_kg.clone(), m.stiffnesses.clone(), m.dampings.clone(), m.p, m.s)
            .map_err(|e| CliError::from_core("model", e))?;
        let a = &self.absorber;
        let absorber =
            AbsorberModel::new(a.mass_kg, a.damping, a.stiffness).map_err(|e| CliError::from_core("absorber", e))?;
        let x = &self.excitation;
        let excitation = match (x.frequency_hz, x.omega_rad_per_s) {
            (Some(hz), None) => HarmonicExcitation::from_hz(x.amplitude, hz),
            (None, Some(w)) => HarmonicExcitation::new(x.amplitude, w),
            _ => {
                return Err(CliError::Validation(
                    "excitation: give exactly one of frequency_hz and omega_rad_per_s".into(),
                ))
            }
        }
        .map_err(|e| CliError::from_core("excitation", e))?;
        Ok(Design::new(model, absorber, excitation))
    }

    pub fn branch_policy(&self) -> Option<BranchPolicy> {
        match self.feedback {
            FeedbackSection::Tuned { branch_policy } => Some(branch_policy),
            FeedbackSection::Passive => None,
        }
    }

    pub fn simulation_config(&self) -> CliResult<SimulationConfig> {
        let s = &self.simulation;
        if !(s.t_end_s.is_finite() && s.t_end_s > 0.0) {
            return Err(CliError::Validation(format!(
                "simulation.t_end_s must be positive, got {}",
                s.t_end_s
            )));
        }
        if !(0.0..=s.t_end_s).contains(&s.switch_time_s) {
            return Err(CliError::Validation(format!(
                "simulation.switch_time_s must lie in [0, t_end_s], got {}",
                s.switch_time_s
            )));
        }
        if let Some(dt) = s.dt_s {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(CliError::Validation(format!("simulation.dt_s must be positive, got {dt}")));
            }
        }
        if let Some(x0) = &s.initial_state {
            let n = 2 * self.model.masses_kg.len() + 2;
            if x0.len() != n {
                return Err(CliError::Validation(format!(
                    "simulation.initial_state needs {n} entries, got {}",
                    x0.len()
                )));
            }
        }
        let excitation = self.design()?.excitation;
        Ok(SimulationConfig {
            t_end: s.t_end_s,
            dt: s.dt_s,
            switch_time: s.switch_time_s,
            initial_state: s.initial_state.clone(),
            excitation,
        })
    }

    /// The design problem, if the config has a design section.
    pub fn problem(&self) -> CliResult<Option<DesignProblem>> {
        let Some(d) = &self.design else {
            return Ok(None);
        };
        let mut problem = DesignProblem::new(
            self.design()?,
            d.params.clone(),
            d.gamma,
            d.xi_alpha,
            d.xi_a,
            d.linear.clone(),
            d.normalization,
        )
        .map_err(|e| CliError::from_core("design", e))?;
        if let Some(policy) = self.branch_policy() {
            problem.policy = policy;
        }
        Ok(Some(problem))
    }

    /// Copy with the structural parameters of `design` written back.
    pub fn with_design(&self, design: &Design) -> Self {
        let mut out = self.clone();
        out.model.masses_kg = design.model.masses().to_vec();
        out.model.stiffnesses = design.model.stiffnesses().to_vec();
        out.model.dampings = design.model.dampings().to_vec();
        out.absorber = AbsorberSection {
            mass_kg: design.absorber.mass,
            damping: design.absorber.damping,
            stiffness: design.absorber.stiffness,
        };
        out
    }

    /// Copy with `params` set to `theta`.
    pub fn with_theta(&self, params: &[ParamId], theta: &[f64]) -> CliResult<Self> {
        let design = self
            .design()?
            .with(params, theta)
            .map_err(|e| CliError::from_core("theta", e))?;
        Ok(self.with_design(&design))
    }
}

/// Sets a dotted path such as `design.mode.starts=10` or
/// `model.masses_kg.2=0.8`. The value is parsed as JSON, falling back to a
/// plain string. Missing object keys are created; unknown ones then fail
/// schema validation.
pub fn apply_override(root: &mut Value, spec: &str) -> CliResult<()> {
    let bad = |msg: String| CliError::Validation(format!("override '{spec}': {msg}"));
    let (path, raw) = spec.split_once('=').ok_or_else(|| bad("expected key=value".into()))?;
    if path.is_empty() {
        return Err(bad("empty key".into()));
    }
    let new: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut node = root;
    for key in parents {
        node = match node {
            Value::Object(map) => Some(map.entry(*key).or_insert_with(|| Value::Object(Default::default()))),
            Value::Array(items) => key.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| bad(format!("no '{key}' in the config")))?;
    }
    match node {
        Value::Object(map) => {
            map.insert((*last).to_string(), new);
        }
        Value::Array(items) => {
            let slot = last
                .parse::<usize>()
                .ok()
                .and_then(|i| items.get_mut(i))
                .ok_or_else(|| bad(format!("index '{last}' out of range")))?;
            *slot = new;
        }
        _ => return Err(bad(format!("'{last}' has no parent object"))),
    }
    Ok(())
}
