//! Reference parameter sets: the three-cart laboratory setup and the
//! five-mass numerical case, each in nominal and optimized form.

use rand::Rng;

use crate::design::{Design, DesignProblem, LinearConstraint, LinearTerm, Normalization, ParamBound, ParamId};
use crate::model::{AbsorberModel, ChainModel, HarmonicExcitation};

pub type Fixture = (ChainModel, AbsorberModel, HarmonicExcitation);

/// Laboratory setup at 4.2 Hz, 2 N, absorber on cart 1, target cart 2.
pub fn experimental(m_a: f64, m3: f64) -> Fixture {
    let model = ChainModel::new(
        vec![1.49, 0.509, m3],
        vec![1001.0, 749.0, 711.0, 950.0],
        vec![4.35, 0.85, 1.85, 4.95],
        1,
        2,
    )
    .expect("valid experimental chain");
    let absorber = AbsorberModel::new(m_a, 1.8, 407.0).expect("valid absorber");
    let excitation = HarmonicExcitation::from_hz(2.0, 4.2).expect("valid excitation");
    (model, absorber, excitation)
}

pub fn experimental_nominal() -> Fixture {
    experimental(0.42, 1.110)
}

pub fn experimental_optimized() -> Fixture {
    experimental(0.52, 0.705)
}

/// Five-mass chain at 3.7 Hz, 1 N, absorber on mass 1, target mass 3.
/// `theta = [m_a, c_a, k_a, k_1..k_6]`.
pub fn five_mass(theta: &[f64; 9]) -> Fixture {
    let model = ChainModel::new(
        vec![1.0, 1.0, 1.0, 1.0, 2.0],
        theta[3..].to_vec(),
        vec![2.0; 6],
        1,
        3,
    )
    .expect("valid five-mass chain");
    let absorber = AbsorberModel::new(theta[0], theta[1], theta[2]).expect("valid absorber");
    let excitation = HarmonicExcitation::from_hz(1.0, 3.7).expect("valid excitation");
    (model, absorber, excitation)
}

pub const FIVE_MASS_NOMINAL_THETA: [f64; 9] =
    [0.5, 2.0, 700.0, 750.0, 750.0, 750.0, 750.0, 750.0, 750.0];

pub const FIVE_MASS_OPTIMIZED_THETA: [f64; 9] = [
    0.675, 4.134, 699.863, 736.119, 761.605, 770.249, 599.090, 727.512, 530.197,
];

pub const FIVE_MASS_LOWER: [f64; 9] = [0.2, 1.0, 400.0, 400.0, 400.0, 400.0, 400.0, 400.0, 400.0];
pub const FIVE_MASS_UPPER: [f64; 9] = [
    2.0, 10.0, 2000.0, 2000.0, 2000.0, 2000.0, 2000.0, 2000.0, 2000.0,
];

pub fn five_mass_nominal() -> Fixture {
    five_mass(&FIVE_MASS_NOMINAL_THETA)
}

pub fn five_mass_optimized() -> Fixture {
    five_mass(&FIVE_MASS_OPTIMIZED_THETA)
}

/// Free parameters of the five-mass design problem, in `theta` order.
pub fn five_mass_param_ids() -> Vec<ParamId> {
    let mut ids = vec![ParamId::AbsorberMass, ParamId::AbsorberDamping, ParamId::AbsorberStiffness];
    ids.extend((1..=6).map(ParamId::Stiffness));
    ids
}

/// Nine-parameter problem with `gamma = 0.5`, `xi_alpha = -0.2 1/s`,
/// `xi_a = 0.01 J`, normalized at the nominal design.
pub fn five_mass_problem() -> DesignProblem {
    let (m, a, e) = five_mass_nominal();
    let params = five_mass_param_ids()
        .into_iter()
        .enumerate()
        .map(|(i, param)| ParamBound {
            param,
            lower: FIVE_MASS_LOWER[i],
            upper: FIVE_MASS_UPPER[i],
        })
        .collect();
    DesignProblem::new(Design::new(m, a, e), params, 0.5, -0.2, 0.01, vec![], Normalization::Nominal)
        .expect("valid five-mass problem")
}

/// `theta = [m_a, m_3]` bounds of the laboratory study.
pub const EXPERIMENTAL_LOWER: [f64; 2] = [0.220, 0.705];
pub const EXPERIMENTAL_UPPER: [f64; 2] = [0.620, 1.205];
/// Adjustment plate mass.
pub const EXPERIMENTAL_GRID_STEP: f64 = 0.025;

/// `m_a <= 0.2 (m_1 + m_2 + m_3)`.
pub fn absorber_mass_fraction_row() -> LinearConstraint {
    let mut terms = vec![LinearTerm {
        param: ParamId::AbsorberMass,
        coeff: 1.0,
    }];
    terms.extend((1..=3).map(|i| LinearTerm {
        param: ParamId::Mass(i),
        coeff: -0.2,
    }));
    LinearConstraint { terms, rhs: 0.0 }
}

/// Two-parameter laboratory problem: `gamma = 0.5`, `xi_alpha = -0.1 1/s`,
/// `xi_a = 0.01 J` and the absorber-mass fraction row.
pub fn experimental_problem() -> DesignProblem {
    let (m, a, e) = experimental_nominal();
    let params = [ParamId::AbsorberMass, ParamId::Mass(3)]
        .into_iter()
        .enumerate()
        .map(|(i, param)| ParamBound {
            param,
            lower: EXPERIMENTAL_LOWER[i],
            upper: EXPERIMENTAL_UPPER[i],
        })
        .collect();
    DesignProblem::new(
        Design::new(m, a, e),
        params,
        0.5,
        -0.1,
        0.01,
        vec![absorber_mass_fraction_row()],
        Normalization::Nominal,
    )
    .expect("valid experimental problem")
}

/// Random damped chain with `2 <= d <= 6`, `p < s` and an absorber, for
/// property checks.
pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Fixture {
    let d = rng.random_range(2..=6usize);
    let masses = (0..d).map(|_| rng.random_range(0.5..3.0)).collect();
    let stiffnesses = (0..=d).map(|_| rng.random_range(200.0..2000.0)).collect();
    let dampings = (0..=d).map(|_| rng.random_range(0.5..5.0)).collect();
    let s = rng.random_range(2..=d);
    let p = rng.random_range(1..s);
    let model = ChainModel::new(masses, stiffnesses, dampings, p, s).expect("valid random chain");
    let absorber = AbsorberModel::new(
        rng.random_range(0.1..2.0),
        rng.random_range(0.5..5.0),
        rng.random_range(100.0..1500.0),
    )
    .expect("valid random absorber");
    let excitation =
        HarmonicExcitation::from_hz(rng.random_range(0.5..3.0), rng.random_range(1.0..6.0)).expect("valid excitation");
    (model, absorber, excitation)
}
