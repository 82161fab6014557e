//! Fixed-step time integration of the closed loop.
//!
//! Classic RK4 on the reduced retarded system. Delayed states are read from
//! the stored grid by cubic Hermite interpolation; before `switch_time` the
//! feedback gain is held at zero.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::ddae::{build_ddae, reduce_to_retarded, RetardedSystem};
use crate::error::{Error, Result};
use crate::model::{AbsorberModel, ChainModel, HarmonicExcitation};
use crate::tuning::DrFeedback;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub t_end: f64,
    /// Upper bound on the step; the grid is refined to land on `t_end`.
    /// `None` picks `min(tau / 40, T / 200)`.
    pub dt: Option<f64>,
    pub switch_time: f64,
    /// Differential state `[x; x'; x_a; x_a']`; zero when absent.
    pub initial_state: Option<Vec<f64>>,
    pub excitation: HarmonicExcitation,
}

impl SimulationConfig {
    /// 30 s horizon with the feedback switched on at 15 s.
    pub fn new(excitation: HarmonicExcitation) -> Self {
        Self {
            t_end: 30.0,
            dt: None,
            switch_time: 15.0,
            initial_state: None,
            excitation,
        }
    }

    pub fn step_for(&self, feedback: &DrFeedback) -> f64 {
        if let Some(dt) = self.dt {
            return dt;
        }
        let by_period = self.excitation.period() / 200.0;
        if feedback.tau > 0.0 {
            by_period.min(feedback.tau / 40.0)
        } else {
            by_period
        }
    }
}

/// Column names with units, in trajectory order.
fn column_names(d: usize) -> Vec<String> {
    let mut names = vec!["t_s".to_string()];
    names.extend((1..=d).map(|i| format!("x{i}_m")));
    names.extend((1..=d).map(|i| format!("v{i}_m_per_s")));
    names.extend(["x_a_m", "v_a_m_per_s", "f_a_N", "u_N"].map(String::from));
    names.extend((1..=d + 1).map(|i| format!("W{i}_J")));
    names.extend(["W_a_J", "p_W"].map(String::from));
    names
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    d: usize,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.columns[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn time(&self) -> &[f64] {
        &self.columns[0]
    }

    /// Displacement of chain mass `i` (1-based).
    pub fn x(&self, i: usize) -> &[f64] {
        &self.columns[i]
    }

    pub fn v(&self, i: usize) -> &[f64] {
        &self.columns[self.d + i]
    }

    pub fn x_a(&self) -> &[f64] {
        &self.columns[2 * self.d + 1]
    }

    pub fn v_a(&self) -> &[f64] {
        &self.columns[2 * self.d + 2]
    }

    pub fn f_a(&self) -> &[f64] {
        &self.columns[2 * self.d + 3]
    }

    pub fn u(&self) -> &[f64] {
        &self.columns[2 * self.d + 4]
    }

    /// Potential energy of link `i` (1-based, `1..=d+1`).
    pub fn link_energy(&self, i: usize) -> &[f64] {
        &self.columns[2 * self.d + 4 + i]
    }

    pub fn absorber_energy(&self) -> &[f64] {
        &self.columns[3 * self.d + 6]
    }

    pub fn power(&self) -> &[f64] {
        &self.columns[3 * self.d + 7]
    }

    /// One header row, one row per step.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.names)?;
        let mut row = Vec::with_capacity(self.columns.len());
        for k in 0..self.len() {
            row.clear();
            row.extend(self.columns.iter().map(|c| format!("{:.10e}", c[k])));
            w.write_record(&row)?;
        }
        w.flush()
    }
}

/// Hermite cubic through `(z0, dz0)` at `s = 0` and `(z1, dz1)` at `s = 1`.
fn hermite(z0: &DVector<f64>, dz0: &DVector<f64>, z1: &DVector<f64>, dz1: &DVector<f64>, h: f64, s: f64) -> DVector<f64> {
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    z0 * h00 + dz0 * (h10 * h) + z1 * h01 + dz1 * (h11 * h)
}

struct History {
    dt: f64,
    states: Vec<DVector<f64>>,
    slopes: Vec<DVector<f64>>,
}

impl History {
    fn at(&self, t: f64) -> DVector<f64> {
        if t <= 0.0 {
            return self.states[0].clone();
        }
        let pos = t / self.dt;
        let j = (pos.floor() as usize).min(self.slopes.len().saturating_sub(2));
        let s = pos - j as f64;
        hermite(&self.states[j], &self.slopes[j], &self.states[j + 1], &self.slopes[j + 1], self.dt, s)
    }
}

struct Loop<'a> {
    sys: &'a RetardedSystem,
    excitation: &'a HarmonicExcitation,
    switch_time: f64,
}

impl Loop<'_> {
    fn gain(&self, t: f64) -> f64 {
        if t >= self.switch_time {
            1.0
        } else {
            0.0
        }
    }

    fn rhs(&self, t: f64, z: &DVector<f64>, delayed: &DVector<f64>) -> DVector<f64> {
        let mut dz = &self.sys.a0 * z + &self.sys.b * self.excitation.at(t);
        let g = self.gain(t);
        if g != 0.0 {
            dz += &self.sys.a1 * delayed * g;
        }
        dz
    }
}

fn validate(feedback: &DrFeedback, cfg: &SimulationConfig, dt: f64, n_state: usize) -> Result<()> {
    if !(cfg.t_end > 0.0 && cfg.t_end.is_finite()) {
        return Err(Error::Window(format!("t_end must be positive, got {}", cfg.t_end)));
    }
    if !(0.0..=cfg.t_end).contains(&cfg.switch_time) {
        return Err(Error::Window(format!(
            "switch_time {} outside [0, {}]",
            cfg.switch_time, cfg.t_end
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::StepSize {
            dt,
            reason: "dt > 0".into(),
        });
    }
    let active = feedback.g != 0.0 && cfg.switch_time < cfg.t_end;
    if active && feedback.tau > 0.0 && dt > feedback.tau / 20.0 * (1.0 + 1e-12) {
        return Err(Error::StepSize {
            dt,
            reason: format!("dt <= tau / 20 = {}", feedback.tau / 20.0),
        });
    }
    if let Some(z0) = &cfg.initial_state {
        if z0.len() != n_state {
            return Err(Error::InvalidModel(format!(
                "initial_state has {} entries, expected {n_state}",
                z0.len()
            )));
        }
    }
    Ok(())
}

pub fn simulate(
    model: &ChainModel,
    absorber: &AbsorberModel,
    feedback: &DrFeedback,
    cfg: &SimulationConfig,
) -> Result<Trajectory> {
    let ddae = build_ddae(model, absorber, feedback);
    let sys = reduce_to_retarded(&ddae);
    let n = sys.dim();
    let dt = cfg.step_for(feedback);
    validate(feedback, cfg, dt, n)?;
    // shrink the step so the grid ends exactly on t_end
    let steps = ((cfg.t_end / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let dt = cfg.t_end / steps as f64;
    let tau = feedback.tau;
    let lp = Loop {
        sys: &sys,
        excitation: &cfg.excitation,
        switch_time: cfg.switch_time,
    };
    let z0 = cfg
        .initial_state
        .as_ref()
        .map(|v| DVector::from_column_slice(v))
        .unwrap_or_else(|| DVector::zeros(n));

    let mut hist = History {
        dt,
        states: Vec::with_capacity(steps + 1),
        slopes: Vec::with_capacity(steps + 1),
    };
    hist.states.push(z0);
    // delayed state at a stage: zero delay reads the stage itself
    let delayed = |hist: &History, t: f64, stage: &DVector<f64>| {
        if tau == 0.0 {
            stage.clone()
        } else {
            hist.at(t - tau)
        }
    };

    for k in 0..steps {
        let t = k as f64 * dt;
        let z = hist.states[k].clone();
        let k1 = lp.rhs(t, &z, &delayed(&hist, t, &z));
        hist.slopes.push(k1.clone());
        let th = t + 0.5 * dt;
        let z2 = &z + &k1 * (0.5 * dt);
        let k2 = lp.rhs(th, &z2, &delayed(&hist, th, &z2));
        let z3 = &z + &k2 * (0.5 * dt);
        let k3 = lp.rhs(th, &z3, &delayed(&hist, th, &z3));
        let z4 = &z + &k3 * dt;
        let k4 = lp.rhs(t + dt, &z4, &delayed(&hist, t + dt, &z4));
        let next = z + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { time: t + dt });
        }
        hist.states.push(next);
    }
    let t_last = steps as f64 * dt;
    let z_last = hist.states[steps].clone();
    let last_slope = lp.rhs(t_last, &z_last, &delayed(&hist, t_last, &z_last));
    hist.slopes.push(last_slope);

    Ok(derive_signals(model, absorber, &sys, &lp, &hist, tau))
}

fn derive_signals(
    model: &ChainModel,
    absorber: &AbsorberModel,
    sys: &RetardedSystem,
    lp: &Loop<'_>,
    hist: &History,
    tau: f64,
) -> Trajectory {
    let d = model.d();
    let names = column_names(d);
    let len = hist.states.len();
    let mut columns = vec![Vec::with_capacity(len); names.len()];
    let k = model.stiffnesses();
    let p = model.p_index();
    let (xa, va) = (2 * d, 2 * d + 1);
    for (step, z) in hist.states.iter().enumerate() {
        let t = step as f64 * hist.dt;
        let zd = if tau == 0.0 { z.clone() } else { hist.at(t - tau) };
        let alg = &sys.w0 * z + &sys.w1 * zd * lp.gain(t);
        let mut row = Vec::with_capacity(names.len());
        row.push(t);
        row.extend(z.iter().take(2 * d + 2));
        row.push(alg[0]);
        row.push(alg[1]);
        let pos = |i: usize| if i == 0 || i > d { 0.0 } else { z[i - 1] };
        for (link, &ki) in k.iter().enumerate() {
            let stretch = pos(link + 1) - pos(link);
            row.push(0.5 * ki * stretch * stretch);
        }
        let stretch = z[xa] - z[p];
        row.push(0.5 * absorber.stiffness * stretch * stretch);
        row.push(alg[1] * (z[d + p] - z[va]));
        for (c, v) in columns.iter_mut().zip(row) {
            c.push(v);
        }
    }
    Trajectory { d, names, columns }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignalMetrics {
    pub name: String,
    /// Half the peak-to-peak excursion.
    pub amplitude: f64,
    pub mean: f64,
    pub max: f64,
    pub max_abs: f64,
}

/// Steady-state statistics of every column except time over `[t0, t1]`.
/// `period` is the forcing period; the window must span three of them.
pub fn steady_metrics(traj: &Trajectory, window: (f64, f64), period: f64) -> Result<Vec<SignalMetrics>> {
    let (t0, t1) = window;
    let time = traj.time();
    let (first, last) = (time[0], time[time.len() - 1]);
    if t0 < first - 1e-9 || t1 > last + 1e-9 || t1 <= t0 {
        return Err(Error::Window(format!(
            "window [{t0}, {t1}] not inside trajectory [{first}, {last}]"
        )));
    }
    if t1 - t0 < 3.0 * period * (1.0 - 1e-9) {
        return Err(Error::Window(format!(
            "window length {} shorter than three periods ({})",
            t1 - t0,
            3.0 * period
        )));
    }
    let idx: Vec<usize> = (0..time.len())
        .filter(|&i| time[i] >= t0 - 1e-12 && time[i] <= t1 + 1e-12)
        .collect();
    Ok(traj
        .names
        .iter()
        .zip(&traj.columns)
        .skip(1)
        .map(|(name, col)| {
            let (mut lo, mut hi, mut sum, mut abs) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0.0f64);
            for &i in &idx {
                let v = col[i];
                lo = lo.min(v);
                hi = hi.max(v);
                sum += v;
                abs = abs.max(v.abs());
            }
            SignalMetrics {
                name: name.clone(),
                amplitude: 0.5 * (hi - lo),
                mean: sum / idx.len() as f64,
                max: hi,
                max_abs: abs,
            }
        })
        .collect())
}

pub fn metric<'a>(metrics: &'a [SignalMetrics], name: &str) -> Option<&'a SignalMetrics> {
    metrics.iter().find(|m| m.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::tuning::{tune, BranchPolicy};

    #[test]
    fn zero_input_stays_at_rest() {
        let (m, a, e) = fixtures::five_mass_nominal();
        let fb = tune(&m, &a, &e, BranchPolicy::Auto).unwrap().selected;
        let quiet = HarmonicExcitation::new(0.0, e.omega).unwrap();
        let cfg = SimulationConfig {
            t_end: 2.0,
            switch_time: 0.5,
            ..SimulationConfig::new(quiet)
        };
        let traj = simulate(&m, &a, &fb, &cfg).unwrap();
        for name in traj.names().iter().skip(1) {
            assert!(traj.column(name).unwrap().iter().all(|v| *v == 0.0), "{name}");
        }
    }

    #[test]
    fn hermite_is_exact_on_cubics() {
        let f = |t: f64| t * t * t - 2.0 * t;
        let df = |t: f64| 3.0 * t * t - 2.0;
        let v = |x: f64| DVector::from_element(1, x);
        let (a, h) = (0.3, 0.2);
        for s in [0.0, 0.25, 0.5, 0.9, 1.0] {
            let got = hermite(&v(f(a)), &v(df(a)), &v(f(a + h)), &v(df(a + h)), h, s)[0];
            assert!((got - f(a + s * h)).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_coarse_step_and_bad_window() {
        let (m, a, e) = fixtures::five_mass_nominal();
        let fb = tune(&m, &a, &e, BranchPolicy::Auto).unwrap().selected;
        let cfg = SimulationConfig {
            dt: Some(fb.tau / 10.0),
            ..SimulationConfig::new(e)
        };
        assert!(matches!(simulate(&m, &a, &fb, &cfg), Err(Error::StepSize { .. })));
        let cfg = SimulationConfig {
            switch_time: 40.0,
            ..SimulationConfig::new(e)
        };
        assert!(matches!(simulate(&m, &a, &fb, &cfg), Err(Error::Window(_))));
        // a coarse step is fine while the loop stays open
        let cfg = SimulationConfig {
            t_end: 1.0,
            switch_time: 1.0,
            dt: Some(fb.tau / 10.0),
            ..SimulationConfig::new(e)
        };
        assert!(simulate(&m, &a, &fb, &cfg).is_ok());
    }

    #[test]
    fn default_step() {
        let (m, a, e) = fixtures::five_mass_nominal();
        let fb = tune(&m, &a, &e, BranchPolicy::Auto).unwrap().selected;
        let cfg = SimulationConfig::new(e);
        let dt = cfg.step_for(&fb);
        assert_eq!(dt, (fb.tau / 40.0).min(e.period() / 200.0));
    }

    #[test]
    fn metrics_of_constant_signal() {
        let traj = Trajectory {
            d: 0,
            names: vec!["t_s".into(), "c".into()],
            columns: vec![(0..100).map(|i| i as f64 * 0.1).collect(), vec![2.5; 100]],
        };
        let m = steady_metrics(&traj, (1.0, 9.0), 2.0).unwrap();
        assert_eq!(m[0].amplitude, 0.0);
        assert_eq!(m[0].mean, 2.5);
        assert!(matches!(steady_metrics(&traj, (1.0, 3.0), 2.0), Err(Error::Window(_))));
        assert!(matches!(steady_metrics(&traj, (1.0, 30.0), 2.0), Err(Error::Window(_))));
    }

    #[test]
    fn csv_header_carries_units() {
        let (m, a, e) = fixtures::experimental_nominal();
        let cfg = SimulationConfig {
            t_end: 0.05,
            switch_time: 0.05,
            ..SimulationConfig::new(e)
        };
        let traj = simulate(&m, &a, &DrFeedback::passive(), &cfg).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("t_s,x1_m,x2_m,x3_m,v1_m_per_s"));
        assert!(header.ends_with("W4_J,W_a_J,p_W"));
        assert_eq!(text.lines().count(), traj.len() + 1);
    }
}
