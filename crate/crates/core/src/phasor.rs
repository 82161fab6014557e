//! Steady-state phasor analysis of the chain at the target stage (target
//! mass stopped by the resonator) and in the passive regime.
//!
//! Sign convention: `f_a` is the force the absorber link exerts on the
//! absorber mass, `f_a = u + k_a (x_p - x_a) + c_a (x_p' - x_a')`, so that
//! `m_a x_a'' = f_a` and mass `p` receives `-f_a`. With the target stopped the
//! resonating subsystem therefore obeys `A_R x_R = -D_a f_a`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::checked_inverse;
use crate::model::{
    assemble_matrices, dynamic_stiffness, partition, selector, AbsorberModel, ChainModel,
    HarmonicExcitation, PartitionedStiffness,
};

const J: Complex64 = Complex64::new(0.0, 1.0);

/// Complex amplitude of a harmonic signal, `x(t) = Re{value e^{j omega t}}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phasor(pub Complex64);

impl Phasor {
    pub const ZERO: Phasor = Phasor(Complex64::new(0.0, 0.0));

    pub fn value(self) -> Complex64 {
        self.0
    }
    pub fn amplitude(self) -> f64 {
        self.0.norm()
    }
    pub fn phase(self) -> f64 {
        self.0.arg()
    }
    /// Time signal at `t`.
    pub fn at(self, omega: f64, t: f64) -> f64 {
        (self.0 * Complex64::from_polar(1.0, omega * t)).re
    }
}

impl From<Complex64> for Phasor {
    fn from(z: Complex64) -> Self {
        Phasor(z)
    }
}

/// Subsystem solves shared by every target-stage quantity at one frequency.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub partition: PartitionedStiffness,
    resonating_inv: DMatrix<Complex64>,
    vibrating_inv: DMatrix<Complex64>,
    p_index: usize,
}

impl Decomposition {
    pub fn new(model: &ChainModel, omega: f64) -> Result<Self> {
        let part = partition(model, &assemble_matrices(model), omega);
        let resonating_inv = checked_inverse(&part.resonating, "resonating A_R", omega)?;
        let vibrating_inv = checked_inverse(&part.vibrating, "vibrating A_V", omega)?;
        Ok(Self {
            partition: part,
            resonating_inv,
            vibrating_inv,
            p_index: model.p_index(),
        })
    }

    pub fn omega(&self) -> f64 {
        self.partition.omega
    }

    /// `A_R^-1 D_a`.
    pub fn resonating_response(&self) -> DVector<Complex64> {
        &self.resonating_inv * &self.partition.d_a
    }

    /// `e_rp^T A_R^-1 D_a`: displacement of mass `p` per unit force pushing on it.
    pub fn receptance_p(&self) -> Complex64 {
        self.resonating_inv[(self.p_index, self.p_index)]
    }

    /// `A_V^-1 D_d f_d`.
    pub fn vibrating_response(&self, f_d: Complex64) -> DVector<Complex64> {
        &self.vibrating_inv * &self.partition.d_d * f_d
    }

    /// Link force on the absorber that keeps the target at rest.
    pub fn required_force(&self, f_d: Complex64) -> Result<Complex64> {
        let part = &self.partition;
        let den = part.coupling_r.dot(&self.resonating_response());
        let scale = part.coupling_r.norm() * self.resonating_response().norm();
        if !(den.norm() > 1e-14 * scale) {
            return Err(Error::ZeroDivisor);
        }
        if part.vibrating.is_empty() {
            Ok(-f_d / den)
        } else {
            let num = part.coupling_v.dot(&self.vibrating_response(Complex64::new(1.0, 0.0)));
            Ok(num / den * f_d)
        }
    }

    /// Resonating subsystem displacements `x_R = -A_R^-1 D_a f_a`.
    pub fn resonating_displacements(&self, f_a: Complex64) -> DVector<Complex64> {
        -self.resonating_response() * f_a
    }
}

pub fn required_force(model: &ChainModel, excitation: &HarmonicExcitation) -> Result<Phasor> {
    Decomposition::new(model, excitation.omega)?
        .required_force(excitation.phasor())
        .map(Phasor)
}

pub fn subsystem_displacements(
    model: &ChainModel,
    f_a: Phasor,
    excitation: &HarmonicExcitation,
) -> Result<(Vec<Phasor>, Vec<Phasor>)> {
    let dec = Decomposition::new(model, excitation.omega)?;
    let x_r = dec.resonating_displacements(f_a.0);
    let x_v = dec.vibrating_response(excitation.phasor());
    Ok((
        x_r.iter().copied().map(Phasor).collect(),
        x_v.iter().copied().map(Phasor).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Active,
    Passive,
}

/// Elastic energy in one link, `W(t) = mean + Re{phasor e^{j 2 omega t}}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkEnergy {
    #[serde(rename = "W_mean_J")]
    pub mean: f64,
    #[serde(rename = "W_phasor_J")]
    pub phasor: Complex64,
    #[serde(rename = "W_max_J")]
    pub max: f64,
}

impl LinkEnergy {
    /// Energy of a link with stiffness `k` and relative displacement phasor `dx`.
    pub fn from_stretch(k: f64, dx: Complex64) -> Self {
        let mean = 0.25 * k * dx.norm_sqr();
        let phasor = 0.25 * k * dx * dx;
        Self {
            mean,
            phasor,
            max: mean + phasor.norm(),
        }
    }

    pub fn phasor_magnitude(&self) -> f64 {
        self.phasor.norm()
    }

    pub fn at(&self, omega: f64, t: f64) -> f64 {
        self.mean + (self.phasor * Complex64::from_polar(1.0, 2.0 * omega * t)).re
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub regime: Regime,
    /// Links `1..=d+1`; entry `i - 1` is link `i`.
    pub links: Vec<LinkEnergy>,
    pub absorber: LinkEnergy,
}

impl EnergyReport {
    /// Link with the largest peak energy, as (1-based link index, energy).
    pub fn max_link(&self) -> (usize, &LinkEnergy) {
        let (i, e) = self
            .links
            .iter()
            .enumerate()
            .fold((0, &self.links[0]), |best, (i, e)| {
                if e.max > best.1.max {
                    (i, e)
                } else {
                    best
                }
            });
        (i + 1, e)
    }
}

/// Energies of links `1..=d+1` for chain displacements `x` (mass 1 first),
/// with the base on both ends at rest.
pub fn chain_link_energies(stiffnesses: &[f64], x: &[Complex64]) -> Vec<LinkEnergy> {
    let at = |i: usize| -> Complex64 {
        if i == 0 || i > x.len() {
            Complex64::new(0.0, 0.0)
        } else {
            x[i - 1]
        }
    };
    stiffnesses
        .iter()
        .enumerate()
        .map(|(link, &k)| LinkEnergy::from_stretch(k, at(link + 1) - at(link)))
        .collect()
}

/// Full displacement vector at the target stage, with the target at rest.
pub fn target_stage_displacements(x_r: &[Phasor], x_v: &[Phasor]) -> Vec<Complex64> {
    x_r.iter()
        .map(|p| p.0)
        .chain(std::iter::once(Complex64::new(0.0, 0.0)))
        .chain(x_v.iter().map(|p| p.0))
        .collect()
}

/// Peak link energies at the target stage. The stopped target acts as a
/// barrier: links `s` and `s+1` see only the motion of their free end.
pub fn link_energy_maxima(model: &ChainModel, x_r: &[Phasor], x_v: &[Phasor]) -> Vec<LinkEnergy> {
    assert_eq!(x_r.len(), model.s() - 1, "x_R length must be s - 1");
    assert_eq!(x_v.len(), model.vibrating_len(), "x_V length must be d - s");
    chain_link_energies(model.stiffnesses(), &target_stage_displacements(x_r, x_v))
}

/// Peak elastic energy of the absorber link for a given link force.
pub fn absorber_energy_max(
    model: &ChainModel,
    absorber: &AbsorberModel,
    excitation: &HarmonicExcitation,
    f_a: Phasor,
) -> Result<LinkEnergy> {
    let dec = Decomposition::new(model, excitation.omega)?;
    Ok(absorber_energy(&dec, absorber, f_a.0))
}

fn absorber_energy(dec: &Decomposition, absorber: &AbsorberModel, f_a: Complex64) -> LinkEnergy {
    let w2 = dec.omega().powi(2);
    // x_a - x_p
    let stretch = (-1.0 / (absorber.mass * w2) + dec.receptance_p()) * f_a;
    LinkEnergy::from_stretch(absorber.stiffness, stretch)
}

fn control_bracket(dec: &Decomposition, absorber: &AbsorberModel) -> Complex64 {
    let w = dec.omega();
    let inv_inertia = 1.0 / (absorber.mass * w * w);
    1.0 - absorber.link_impedance(w) * (-dec.receptance_p() + inv_inertia)
}

/// Control force phasor that realizes `f_a` at the target stage.
pub fn control_phasor(
    model: &ChainModel,
    absorber: &AbsorberModel,
    excitation: &HarmonicExcitation,
    f_a: Phasor,
) -> Result<Phasor> {
    let dec = Decomposition::new(model, excitation.omega)?;
    Ok(Phasor(control_bracket(&dec, absorber) * f_a.0))
}

/// `Q(omega)` such that `g e^{-j omega tau} = Q` realizes the required force.
pub(crate) fn q_from(dec: &Decomposition, absorber: &AbsorberModel) -> Complex64 {
    let w2 = dec.omega().powi(2);
    -absorber.mass * w2 * control_bracket(dec, absorber)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    #[serde(rename = "p_mean_W")]
    pub p_mean: f64,
    #[serde(rename = "p_osc_amplitude_W")]
    pub p_osc_amplitude: f64,
    #[serde(rename = "P_max_W")]
    pub p_max: f64,
}

/// Steady actuation power `p(t) = u(t) (x_p'(t) - x_a'(t))`.
pub fn actuation_power(u: Phasor, x_p: Phasor, x_a: Phasor, omega: f64) -> PowerReport {
    let rel = x_p.0 - x_a.0;
    let p_mean = 0.5 * (J * omega * u.0.conj() * rel).re;
    let p_osc_amplitude = 0.5 * omega * (u.0 * rel).norm();
    PowerReport {
        p_mean,
        p_osc_amplitude,
        p_max: (p_osc_amplitude + p_mean)
            .abs()
            .max((p_osc_amplitude - p_mean).abs()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetStageState {
    pub f_a: Phasor,
    pub x_r: Vec<Phasor>,
    pub x_v: Vec<Phasor>,
    pub x_a: Phasor,
    pub u: Phasor,
}

impl TargetStageState {
    /// All chain displacements, target included (at rest).
    pub fn chain_displacements(&self) -> Vec<Complex64> {
        target_stage_displacements(&self.x_r, &self.x_v)
    }
}

/// Everything known about the steady state with the target at rest.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveAnalysis {
    pub state: TargetStageState,
    pub x_p: Phasor,
    pub energy: EnergyReport,
    pub power: PowerReport,
    pub q: Complex64,
}

pub fn analyze_active(
    model: &ChainModel,
    absorber: &AbsorberModel,
    excitation: &HarmonicExcitation,
) -> Result<ActiveAnalysis> {
    let dec = Decomposition::new(model, excitation.omega)?;
    analyze_active_with(&dec, model, absorber, excitation)
}

pub fn analyze_active_with(
    dec: &Decomposition,
    model: &ChainModel,
    absorber: &AbsorberModel,
    excitation: &HarmonicExcitation,
) -> Result<ActiveAnalysis> {
    let w = excitation.omega;
    let f_a = dec.required_force(excitation.phasor())?;
    let x_r: Vec<Phasor> = dec.resonating_displacements(f_a).iter().copied().map(Phasor).collect();
    let x_v: Vec<Phasor> = dec
        .vibrating_response(excitation.phasor())
        .iter()
        .copied()
        .map(Phasor)
        .collect();
    let x_p = x_r[model.p_index()];
    let x_a = Phasor(-f_a / (absorber.mass * w * w));
    let u = Phasor(control_bracket(dec, absorber) * f_a);
    let energy = EnergyReport {
        regime: Regime::Active,
        links: link_energy_maxima(model, &x_r, &x_v),
        absorber: absorber_energy(dec, absorber, f_a),
    };
    let power = actuation_power(u, x_p, x_a, w);
    Ok(ActiveAnalysis {
        state: TargetStageState {
            f_a: Phasor(f_a),
            x_r,
            x_v,
            x_a,
            u,
        },
        x_p,
        energy,
        power,
        q: q_from(dec, absorber),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassiveState {
    pub x: Vec<Phasor>,
    pub x_a: Phasor,
    pub f_a: Phasor,
    pub energy: EnergyReport,
}

/// Steady state with the feedback switched off (`u = 0`).
pub fn passive_steady_state(
    model: &ChainModel,
    absorber: &AbsorberModel,
    excitation: &HarmonicExcitation,
) -> Result<PassiveState> {
    let w = excitation.omega;
    let mats = assemble_matrices(model);
    let z = absorber.link_impedance(w);
    let inertia = absorber.mass * w * w;
    // x_a = transmissibility * x_p
    let transmissibility = z / (z - inertia);
    let mut p_mat = dynamic_stiffness(&mats, w);
    let pi = model.p_index();
    p_mat[(pi, pi)] -= inertia * transmissibility;
    let p_inv = checked_inverse(&p_mat, "passive P(omega)", w)?;
    let forcing = selector(model.d(), model.d()).map(|v| Complex64::new(v, 0.0)) * excitation.phasor();
    let x = p_inv * forcing;
    let x_p = x[pi];
    let x_a = transmissibility * x_p;
    let x_vec: Vec<Complex64> = x.iter().copied().collect();
    let energy = EnergyReport {
        regime: Regime::Passive,
        links: chain_link_energies(model.stiffnesses(), &x_vec),
        absorber: LinkEnergy::from_stretch(absorber.stiffness, x_a - x_p),
    };
    Ok(PassiveState {
        x: x_vec.into_iter().map(Phasor).collect(),
        x_a: Phasor(x_a),
        f_a: Phasor(-inertia * x_a),
        energy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn experimental_required_force_matches_closed_form() {
        let (model, _, exc) = fixtures::experimental_nominal();
        let (w, m, k, c) = (exc.omega, model.masses(), model.stiffnesses(), model.dampings());
        let jw = J * w;
        let a_r = -m[0] * w * w + k[0] + k[1] + (c[0] + c[1]) * jw;
        let a_v = -m[2] * w * w + k[2] + k[3] + (c[2] + c[3]) * jw;
        let link2 = -k[1] - c[1] * jw;
        let link3 = -k[2] - c[2] * jw;
        // link force on the absorber; the chain receives the opposite
        let expected = (link3 * a_r) / (link2 * a_v) * exc.amplitude;
        let f_a = required_force(&model, &exc).unwrap().0;
        assert!((f_a - expected).norm() < 1e-12 * expected.norm());

        let (x_r, x_v) = subsystem_displacements(&model, Phasor(f_a), &exc).unwrap();
        // target at rest: link2 x1 + link3 x3 = 0
        let x1 = -link3 / (link2 * a_v) * exc.amplitude;
        let x3 = exc.amplitude / a_v;
        assert!((x_r[0].0 - x1).norm() < 1e-12 * x1.norm());
        assert!((x_v[0].0 - x3).norm() < 1e-12 * x3.norm());
    }

    #[test]
    fn experimental_link_energy_closed_form() {
        let (model, _, exc) = fixtures::experimental_nominal();
        let (w, m, k, c) = (exc.omega, model.masses(), model.stiffnesses(), model.dampings());
        let f_a = required_force(&model, &exc).unwrap();
        let (x_r, x_v) = subsystem_displacements(&model, f_a, &exc).unwrap();
        let e = link_energy_maxima(&model, &x_r, &x_v);
        let den3 = (-m[2] * w * w + k[2] + k[3]).powi(2) + ((c[2] + c[3]) * w).powi(2);
        let shared = (k[2].powi(2) + (c[2] * w).powi(2)) / ((k[1].powi(2) + (c[1] * w).powi(2)) * den3);
        let fd2 = exc.amplitude.powi(2);
        let expected = [
            0.5 * k[0] * shared * fd2,
            0.5 * k[1] * shared * fd2,
            0.5 * k[2] / den3 * fd2,
            0.5 * k[3] / den3 * fd2,
        ];
        for (got, want) in e.iter().zip(expected) {
            assert!(rel(got.max, want) < 1e-10, "{} vs {want}", got.max);
        }
    }

    #[test]
    fn target_at_chain_end_uses_scalar_formula() {
        let model = ChainModel::new(vec![1.0, 2.0], vec![100.0, 150.0, 80.0], vec![0.5, 0.7, 0.3], 1, 2).unwrap();
        let exc = HarmonicExcitation::new(1.5, 9.0).unwrap();
        let w = exc.omega;
        let alpha_r = Complex64::new(-w * w + 250.0, w * 1.2);
        let f_a = required_force(&model, &exc).unwrap().0;
        let expected = exc.amplitude * alpha_r / Complex64::new(150.0, 0.7 * w);
        assert!((f_a - expected).norm() < 1e-12 * expected.norm());
    }

    #[test]
    fn zero_force_leaves_resonating_subsystem_at_rest() {
        let (model, _, exc) = fixtures::five_mass_nominal();
        let (x_r, _) = subsystem_displacements(&model, Phasor::ZERO, &exc).unwrap();
        assert!(x_r.iter().all(|x| x.0 == Complex64::new(0.0, 0.0)));
        let e = link_energy_maxima(&model, &x_r, &[Phasor::ZERO; 2]);
        assert!(e.iter().all(|l| l.max == 0.0));
    }

    #[test]
    fn five_mass_nominal_table_values() {
        let (model, absorber, exc) = fixtures::five_mass_nominal();
        let a = analyze_active(&model, &absorber, &exc).unwrap();
        let (link, e) = a.energy.max_link();
        assert_eq!(link, 1);
        assert!(rel(e.max, 0.01115) < 1e-3, "{}", e.max);
        assert!(rel(a.energy.absorber.max, 0.00238) < 2e-3);
        assert!(rel(a.power.p_max, 0.06067) < 1e-3, "{}", a.power.p_max);
    }

    #[test]
    fn harmonic_identity_holds_per_link() {
        let (model, absorber, exc) = fixtures::five_mass_optimized();
        let a = analyze_active(&model, &absorber, &exc).unwrap();
        for l in a.energy.links.iter().chain([&a.energy.absorber]) {
            assert!((l.mean - l.phasor_magnitude()).abs() <= 1e-15 * l.mean.max(1e-300));
            assert_eq!(l.max, l.mean + l.phasor_magnitude());
        }
    }

    #[test]
    fn zero_stiffness_absorber_formula_path() {
        let (model, _, exc) = fixtures::five_mass_nominal();
        let dec = Decomposition::new(&model, exc.omega).unwrap();
        let ghost = AbsorberModel { mass: 0.5, damping: 2.0, stiffness: 0.0 };
        assert_eq!(absorber_energy(&dec, &ghost, Complex64::new(3.0, 1.0)).max, 0.0);
    }

    #[test]
    fn zero_control_gives_zero_power() {
        let p = actuation_power(Phasor::ZERO, Phasor(Complex64::new(1.0, 2.0)), Phasor::ZERO, 10.0);
        assert_eq!(p.p_max, 0.0);
        let (model, absorber, exc) = fixtures::five_mass_nominal();
        assert_eq!(control_phasor(&model, &absorber, &exc, Phasor::ZERO).unwrap(), Phasor::ZERO);
    }

    #[test]
    fn rigid_absorber_link_follows_attachment() {
        let (model, _, exc) = fixtures::five_mass_nominal();
        let stiff = AbsorberModel::new(0.5, 2.0, 1e9).unwrap();
        let passive = passive_steady_state(&model, &stiff, &exc).unwrap();
        let x_p = passive.x[0].0;
        assert!((passive.x_a.0 - x_p).norm() < 1e-6 * x_p.norm());
    }

    #[test]
    fn passive_balance_satisfies_full_equations() {
        let (model, absorber, exc) = fixtures::experimental_nominal();
        let st = passive_steady_state(&model, &absorber, &exc).unwrap();
        let mats = assemble_matrices(&model);
        let a = dynamic_stiffness(&mats, exc.omega);
        let x = DVector::from_iterator(3, st.x.iter().map(|p| p.0));
        let mut rhs = DVector::<Complex64>::zeros(3);
        rhs[2] += exc.phasor();
        rhs[0] -= st.f_a.0;
        assert!((a * x - rhs).norm() < 1e-12);
        // absorber: -m_a w^2 x_a = (k_a + j w c_a)(x_p - x_a)
        let w = exc.omega;
        let lhs = -absorber.mass * w * w * st.x_a.0;
        let rhs = absorber.link_impedance(w) * (st.x[0].0 - st.x_a.0);
        assert!((lhs - rhs).norm() < 1e-12 * lhs.norm());
    }
}
