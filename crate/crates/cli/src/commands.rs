//! Command implementations: each builds a serializable report from a
//! validated config, and `execute` persists it.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use ncdr_core::ddae::build_ddae;
use ncdr_core::design::{Evaluation, GridResult, Normalization, ParamId};
use ncdr_core::optimizer::{self, DesignResult, SolverOptions, StartReport, StartStatus};
use ncdr_core::phasor::{analyze_active, passive_steady_state, Regime};
use ncdr_core::simulation::{simulate, steady_metrics, SignalMetrics, Trajectory};
use ncdr_core::spectrum::{spectrum, Spectrum};
use ncdr_core::tuning::{tune, BranchPolicy, DrFeedback};
use num_complex::Complex64;
use serde::Serialize;

use crate::config::{DesignMode, ExperimentConfig, SCHEMA_VERSION};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Analyze,
    Tune,
    Spectrum,
    Simulate,
    Optimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComplexValue {
    pub re: f64,
    pub im: f64,
    pub abs: f64,
    pub arg_rad: f64,
}

impl From<Complex64> for ComplexValue {
    fn from(z: Complex64) -> Self {
        Self {
            re: z.re,
            im: z.im,
            abs: z.norm(),
            arg_rad: z.arg(),
        }
    }
}

/// Design objective and constraint slacks at the configured parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignRow {
    pub params: Vec<ParamId>,
    #[serde(rename = "W_nom_J")]
    pub w_nom: f64,
    #[serde(rename = "P_nom_W")]
    pub p_nom: f64,
    pub evaluation: Evaluation,
    pub feasible: bool,
}

/// One table row: required force, energies, power, tuning and stability.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyzeReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub regime: Regime,
    pub omega_rad_per_s: f64,
    #[serde(rename = "f_a_N")]
    pub f_a: ComplexValue,
    #[serde(rename = "Q_N_per_m", skip_serializing_if = "Option::is_none")]
    pub q: Option<ComplexValue>,
    pub feedback: DrFeedback,
    /// Steady amplitude of the target mass.
    #[serde(rename = "x_s_amplitude_m")]
    pub x_s: f64,
    #[serde(rename = "W_link_max_J")]
    pub w_link_max: Vec<f64>,
    #[serde(rename = "W_link_mean_J")]
    pub w_link_mean: Vec<f64>,
    #[serde(rename = "W_max_J")]
    pub w_max: f64,
    /// 1-based.
    #[serde(rename = "W_max_link")]
    pub w_max_link: usize,
    #[serde(rename = "W_a_max_J")]
    pub w_a_max: f64,
    #[serde(rename = "P_max_W")]
    pub p_max: f64,
    #[serde(rename = "P_mean_W")]
    pub p_mean: f64,
    #[serde(rename = "alpha_per_s")]
    pub alpha: f64,
    pub spectrum_grid_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignRow>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub omega_rad_per_s: f64,
    #[serde(rename = "Q_N_per_m")]
    pub q: ComplexValue,
    pub policy: BranchPolicy,
    pub candidates: Vec<DrFeedback>,
    pub selected: DrFeedback,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumSummary {
    pub schema_version: u32,
    pub command: &'static str,
    pub feedback: DrFeedback,
    #[serde(rename = "alpha_per_s")]
    pub alpha: f64,
    /// Zero for a delay-free loop, whose eigenvalues are computed directly.
    pub grid_size: usize,
    /// No root right of the search bound; `alpha` is the bound.
    pub truncated: bool,
    pub root_count: usize,
    pub rejected_count: usize,
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub schema_version: u32,
    pub command: &'static str,
    pub feedback: DrFeedback,
    pub dt_s: f64,
    pub samples: usize,
    pub t_end_s: f64,
    pub switch_time_s: f64,
    /// Last ten forcing periods, when the run is long enough.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steady_window_s: Option<[f64; 2]>,
    pub steady: Vec<SignalMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StartSummary {
    pub index: usize,
    pub status: StartStatus,
    pub iterations: usize,
    pub samples: usize,
    #[serde(rename = "best_J")]
    pub best_j: Option<f64>,
    pub error: Option<String>,
}

impl From<&StartReport> for StartSummary {
    fn from(r: &StartReport) -> Self {
        Self {
            index: r.index,
            status: r.status,
            iterations: r.iterations,
            samples: r.samples,
            best_j: r.best.as_ref().map(|e| e.objective.j),
            error: r.error.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum OptimizeSummary {
    Continuous {
        params: Vec<ParamId>,
        best: Evaluation,
        start_index: usize,
        seed: u64,
        options: SolverOptions,
        starts: Vec<StartSummary>,
    },
    Grid {
        params: Vec<ParamId>,
        best: Evaluation,
        best_index: usize,
        axes: Vec<Vec<f64>>,
        point_count: usize,
    },
}

pub enum OptimizeRun {
    Continuous { result: DesignResult, seed: u64 },
    Grid(GridResult),
}

pub struct OptimizeOutcome {
    pub run: OptimizeRun,
    pub optimized: ExperimentConfig,
}

impl OptimizeOutcome {
    pub fn best(&self) -> &Evaluation {
        match &self.run {
            OptimizeRun::Continuous { result, .. } => &result.best,
            OptimizeRun::Grid(g) => &g.best,
        }
    }

    pub fn summary(&self, params: Vec<ParamId>) -> OptimizeSummary {
        match &self.run {
            OptimizeRun::Continuous { result, seed } => OptimizeSummary::Continuous {
                params,
                best: result.best.clone(),
                start_index: result.start_index,
                seed: *seed,
                options: result.options,
                starts: result.starts.iter().map(StartSummary::from).collect(),
            },
            OptimizeRun::Grid(g) => OptimizeSummary::Grid {
                params,
                best: g.best.clone(),
                best_index: g.best_index,
                axes: g.axes.clone(),
                point_count: g.points.len(),
            },
        }
    }
}

fn feedback_of(cfg: &ExperimentConfig) -> CliResult<DrFeedback> {
    match cfg.branch_policy() {
        Some(policy) => {
            let d = cfg.design()?;
            tune(&d.model, &d.absorber, &d.excitation, policy)
                .map(|t| t.selected)
                .map_err(|e| CliError::from_core("tuning", e))
        }
        None => Ok(DrFeedback::passive()),
    }
}

pub fn analyze(cfg: &ExperimentConfig) -> CliResult<AnalyzeReport> {
    let d = cfg.design()?;
    let (m, a, e) = (&d.model, &d.absorber, &d.excitation);
    let feedback = feedback_of(cfg)?;
    let s = m.s_index();
    let (regime, f_a, q, x_s, energy, p_max, p_mean) = match cfg.branch_policy() {
        Some(_) => {
            let act = analyze_active(m, a, e).map_err(|e| CliError::from_core("phasor analysis", e))?;
            let x_s = act.state.chain_displacements()[s].norm();
            (
                Regime::Active,
                act.state.f_a.value(),
                Some(act.q.into()),
                x_s,
                act.energy,
                act.power.p_max,
                act.power.p_mean,
            )
        }
        None => {
            let pas = passive_steady_state(m, a, e).map_err(|e| CliError::from_core("phasor analysis", e))?;
            (Regime::Passive, pas.f_a.value(), None, pas.x[s].amplitude(), pas.energy, 0.0, 0.0)
        }
    };
    let (link, w) = energy.max_link();
    let spec = spectrum(&build_ddae(m, a, &feedback), &cfg.spectrum)
        .map_err(|e| CliError::from_core("spectrum", e))?;
    let design = match cfg.problem()? {
        Some(problem) => {
            let theta = problem.nominal_theta();
            let evaluation = problem.evaluate(&theta).map_err(|e| CliError::from_core("design", e))?;
            Some(DesignRow {
                params: problem.ids(),
                w_nom: problem.w_nom,
                p_nom: problem.p_nom,
                feasible: evaluation.is_feasible(),
                evaluation,
            })
        }
        None => None,
    };
    Ok(AnalyzeReport {
        schema_version: SCHEMA_VERSION,
        command: "analyze",
        regime,
        omega_rad_per_s: e.omega,
        f_a: f_a.into(),
        q,
        feedback,
        x_s,
        w_link_max: energy.links.iter().map(|l| l.max).collect(),
        w_link_mean: energy.links.iter().map(|l| l.mean).collect(),
        w_max: w.max,
        w_max_link: link,
        w_a_max: energy.absorber.max,
        p_max,
        p_mean,
        alpha: spec.abscissa,
        spectrum_grid_size: spec.grid_size,
        design,
        config: cfg.clone(),
    })
}

pub fn tune_report(cfg: &ExperimentConfig) -> CliResult<TuneReport> {
    let policy = cfg
        .branch_policy()
        .ok_or_else(|| CliError::Validation("tune needs feedback mode 'tuned'".into()))?;
    let d = cfg.design()?;
    let set = tune(&d.model, &d.absorber, &d.excitation, policy).map_err(|e| CliError::from_core("tuning", e))?;
    Ok(TuneReport {
        schema_version: SCHEMA_VERSION,
        command: "tune",
        omega_rad_per_s: d.excitation.omega,
        q: set.q.into(),
        policy,
        candidates: set.candidates,
        selected: set.selected,
    })
}

pub fn spectrum_of(cfg: &ExperimentConfig) -> CliResult<(DrFeedback, Spectrum)> {
    let d = cfg.design()?;
    let feedback = feedback_of(cfg)?;
    let spec = spectrum(&build_ddae(&d.model, &d.absorber, &feedback), &cfg.spectrum)
        .map_err(|e| CliError::from_core("spectrum", e))?;
    Ok((feedback, spec))
}

pub fn spectrum_summary(feedback: DrFeedback, spec: &Spectrum) -> SpectrumSummary {
    SpectrumSummary {
        schema_version: SCHEMA_VERSION,
        command: "spectrum",
        feedback,
        alpha: spec.abscissa,
        grid_size: spec.grid_size,
        truncated: spec.truncated,
        root_count: spec.roots.len(),
        rejected_count: spec.rejected.len(),
        max_residual: spec.residuals.iter().copied().fold(0.0, f64::max),
    }
}

pub fn simulate_run(cfg: &ExperimentConfig) -> CliResult<(DrFeedback, Trajectory)> {
    let d = cfg.design()?;
    let feedback = feedback_of(cfg)?;
    let sim = cfg.simulation_config()?;
    let traj =
        simulate(&d.model, &d.absorber, &feedback, &sim).map_err(|e| CliError::from_core("simulation", e))?;
    Ok((feedback, traj))
}

pub fn simulation_summary(cfg: &ExperimentConfig, feedback: DrFeedback, traj: &Trajectory) -> CliResult<SimulationSummary> {
    let sim = cfg.simulation_config()?;
    let period = sim.excitation.period();
    let time = traj.time();
    let t1 = time[time.len() - 1];
    // stay on one side of the switch
    let t0 = if sim.switch_time < t1 {
        (t1 - 10.0 * period).max(sim.switch_time)
    } else {
        (t1 - 10.0 * period).max(time[0])
    };
    let (steady_window_s, steady) = if t1 - t0 >= 3.0 * period {
        let metrics = steady_metrics(traj, (t0, t1), period).map_err(|e| CliError::from_core("simulation", e))?;
        (Some([t0, t1]), metrics)
    } else {
        (None, Vec::new())
    };
    Ok(SimulationSummary {
        schema_version: SCHEMA_VERSION,
        command: "simulate",
        feedback,
        dt_s: if time.len() > 1 { time[1] - time[0] } else { 0.0 },
        samples: traj.len(),
        t_end_s: sim.t_end,
        switch_time_s: sim.switch_time,
        steady_window_s,
        steady,
    })
}

pub fn optimize(cfg: &ExperimentConfig) -> CliResult<OptimizeOutcome> {
    let (Some(section), Some(problem)) = (&cfg.design, cfg.problem()?) else {
        return Err(CliError::Validation("optimize needs a design section".into()));
    };
    let run = match &section.mode {
        DesignMode::Grid { steps } => {
            let grid = ncdr_core::design::GridSpec { steps: steps.clone() };
            OptimizeRun::Grid(
                ncdr_core::design::grid_search(&problem, &grid).map_err(|e| CliError::from_core("grid search", e))?,
            )
        }
        DesignMode::Continuous { starts, seed, solver } => {
            info!("{starts} starts, seed {seed}");
            OptimizeRun::Continuous {
                result: optimizer::solve(&problem, *starts, *seed, solver)
                    .map_err(|e| CliError::from_core("optimization", e))?,
                seed: *seed,
            }
        }
    };
    let theta = match &run {
        OptimizeRun::Continuous { result, .. } => result.best.theta.clone(),
        OptimizeRun::Grid(g) => g.best.theta.clone(),
    };
    let mut optimized = cfg.with_theta(&problem.ids(), &theta)?;
    // keep J comparable with the run that produced theta
    if let Some(d) = optimized.design.as_mut() {
        d.normalization = Normalization::Fixed {
            w_nom: problem.w_nom,
            p_nom: problem.p_nom,
        };
    }
    Ok(OptimizeOutcome { run, optimized })
}

/// Column header for a parameter value, with its unit.
pub fn param_column(id: ParamId) -> String {
    let unit = match id {
        ParamId::Mass(_) | ParamId::AbsorberMass => "kg",
        ParamId::Stiffness(_) | ParamId::AbsorberStiffness => "N_per_m",
        ParamId::Damping(_) | ParamId::AbsorberDamping => "N_s_per_m",
    };
    format!("{id}_{unit}")
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(&path.display().to_string(), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::io(&path.display().to_string(), e))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::io(&path.display().to_string(), e))
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let err = |e: csv::Error| CliError::io(&path.display().to_string(), e);
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(row).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(&path.display().to_string(), e))
}

fn num(v: f64) -> String {
    format!("{v:.10e}")
}

fn write_starts(path: &Path, starts: &[StartReport]) -> CliResult<()> {
    let mut w = create(path)?;
    for s in starts {
        serde_json::to_writer(&mut w, s).map_err(|e| CliError::io(&path.display().to_string(), e))?;
        writeln!(w).map_err(|e| CliError::io(&path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| CliError::io(&path.display().to_string(), e))
}

fn write_grid(path: &Path, params: &[ParamId], grid: &GridResult) -> CliResult<()> {
    let mut header: Vec<String> = params.iter().map(|&p| param_column(p)).collect();
    header.extend(
        ["J", "W_max_J", "P_max_W", "alpha_per_s", "W_a_max_J", "feasible", "error"].map(String::from),
    );
    let rows: Vec<Vec<String>> = grid
        .points
        .iter()
        .map(|p| {
            let mut row: Vec<String> = p.theta.iter().map(|&v| num(v)).collect();
            match &p.evaluation {
                Some(e) => {
                    let o = &e.objective;
                    row.extend([o.j, o.w_max, o.p_max, e.alpha, o.w_a_max].map(num));
                    row.push(e.is_feasible().to_string());
                    row.push(String::new());
                }
                None => {
                    row.extend(std::iter::repeat_n(String::new(), 5));
                    row.push("false".into());
                    row.push(p.error.clone().unwrap_or_default());
                }
            }
            row
        })
        .collect();
    write_csv(path, &header, &rows)
}

/// Runs `command` and writes its artifacts into `out`; returns the paths.
pub fn execute(command: Command, cfg: &ExperimentConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(|e| CliError::io(&out.display().to_string(), e))?;
    let path = |name: &str| out.join(name);
    let written = match command {
        Command::Analyze => {
            let report = analyze(cfg)?;
            println!(
                "W_max = {:.5} J (link {}), P_max = {:.5} W, W_a_max = {:.5} J, g = {:.5} N/m, tau = {:.5} s, alpha = {:.5} 1/s",
                report.w_max,
                report.w_max_link,
                report.p_max,
                report.w_a_max,
                report.feedback.g,
                report.feedback.tau,
                report.alpha
            );
            write_json(&path("report.json"), &report)?;
            vec![path("report.json")]
        }
        Command::Tune => {
            let report = tune_report(cfg)?;
            println!(
                "g = {:.5} N/m, tau = {:.5} s ({:?} branch, k = {})",
                report.selected.g, report.selected.tau, report.selected.branch, report.selected.k
            );
            write_json(&path("tuning.json"), &report)?;
            vec![path("tuning.json")]
        }
        Command::Spectrum => {
            let (feedback, spec) = spectrum_of(cfg)?;
            let rows: Vec<Vec<String>> = spec
                .roots
                .iter()
                .zip(&spec.residuals)
                .map(|(r, res)| vec![num(r.re), num(r.im), num(*res)])
                .collect();
            let header = ["re_per_s", "im_rad_per_s", "residual"].map(String::from);
            write_csv(&path("spectrum.csv"), &header, &rows)?;
            let summary = spectrum_summary(feedback, &spec);
            println!("alpha = {:.5} 1/s from {} roots", summary.alpha, summary.root_count);
            write_json(&path("spectrum.json"), &summary)?;
            vec![path("spectrum.csv"), path("spectrum.json")]
        }
        Command::Simulate => {
            let (feedback, traj) = simulate_run(cfg)?;
            let csv_path = path("trajectory.csv");
            traj.write_csv(create(&csv_path)?)
                .map_err(|e| CliError::io(&csv_path.display().to_string(), e))?;
            let summary = simulation_summary(cfg, feedback, &traj)?;
            println!("{} samples, dt = {:.3e} s", summary.samples, summary.dt_s);
            write_json(&path("simulation.json"), &summary)?;
            vec![csv_path, path("simulation.json")]
        }
        Command::Optimize => {
            let outcome = optimize(cfg)?;
            let params = cfg.problem()?.expect("optimize checked the design section").ids();
            let best = outcome.best();
            println!(
                "J = {:.5}, alpha = {:.5} 1/s, W_a_max = {:.5} J at {}",
                best.objective.j,
                best.alpha,
                best.objective.w_a_max,
                params
                    .iter()
                    .zip(&best.theta)
                    .map(|(p, v)| format!("{p} = {v:.5}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            let mut written = vec![path("result.json"), path("optimized_config.json")];
            write_json(&path("result.json"), &outcome.summary(params.clone()))?;
            write_json(&path("optimized_config.json"), &outcome.optimized)?;
            match &outcome.run {
                OptimizeRun::Continuous { result, .. } => {
                    write_starts(&path("starts.jsonl"), &result.starts)?;
                    written.push(path("starts.jsonl"));
                }
                OptimizeRun::Grid(g) => {
                    write_grid(&path("grid.csv"), &params, g)?;
                    written.push(path("grid.csv"));
                }
            }
            written
        }
    };
    for p in &written {
        info!("wrote {}", p.display());
    }
    Ok(written)
}
