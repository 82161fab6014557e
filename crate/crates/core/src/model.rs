//! Physical model of the chain, the absorber and the harmonic disturbance,
//! plus assembly of the second-order structural matrices.
//!
//! # Indexing
//!
//! Mass, link and subsystem indices are **1-based** everywhere they are
//! visible to a user (configs, reports, docs, the `p`/`s` accessors) and
//! **0-based** in every vector and matrix. Link `i` (1..=d+1) joins mass
//! `i-1` to mass `i`, with masses `0` and `d+1` standing for the base; its
//! stiffness lives at `stiffnesses()[i - 1]`. Mass `i` lives at row `i - 1`.
//! [`ChainModel::p_index`] and [`ChainModel::s_index`] are the only
//! conversions used by the rest of the crate.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serial chain of `d` masses linked to each other and to the base at both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainModel {
    masses: Vec<f64>,
    stiffnesses: Vec<f64>,
    dampings: Vec<f64>,
    p: usize,
    s: usize,
}

impl ChainModel {
    /// `p` (absorber attachment) and `s` (target) are 1-based.
    pub fn new(
        masses: Vec<f64>,
        stiffnesses: Vec<f64>,
        dampings: Vec<f64>,
        p: usize,
        s: usize,
    ) -> Result<Self> {
        let d = masses.len();
        if d < 2 {
            return Err(Error::InvalidModel(format!(
                "chain needs at least 2 masses, got {d}"
            )));
        }
        if stiffnesses.len() != d + 1 || dampings.len() != d + 1 {
            return Err(Error::InvalidModel(format!(
                "expected {} link stiffnesses and dampings for {d} masses, got {} and {}",
                d + 1,
                stiffnesses.len(),
                dampings.len()
            )));
        }
        for (name, values) in [
            ("mass", &masses),
            ("stiffness", &stiffnesses),
            ("damping", &dampings),
        ] {
            if let Some((i, v)) = values
                .iter()
                .enumerate()
                .find(|(_, v)| !(v.is_finite() && **v > 0.0))
            {
                return Err(Error::InvalidModel(format!(
                    "{name} #{} must be finite and strictly positive, got {v}",
                    i + 1
                )));
            }
        }
        if !(1 <= p && p < s && s <= d) {
            return Err(Error::InvalidModel(format!(
                "non-collocation rule 1 <= p < s <= d violated (p = {p}, s = {s}, d = {d})"
            )));
        }
        Ok(Self {
            masses,
            stiffnesses,
            dampings,
            p,
            s,
        })
    }

    pub fn d(&self) -> usize {
        self.masses.len()
    }
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }
    pub fn stiffnesses(&self) -> &[f64] {
        &self.stiffnesses
    }
    pub fn dampings(&self) -> &[f64] {
        &self.dampings
    }
    /// Absorber attachment mass, 1-based.
    pub fn p(&self) -> usize {
        self.p
    }
    /// Target mass, 1-based.
    pub fn s(&self) -> usize {
        self.s
    }
    pub fn p_index(&self) -> usize {
        self.p - 1
    }
    pub fn s_index(&self) -> usize {
        self.s - 1
    }
    /// Number of masses in the vibrating subsystem (`d - s`); zero when the
    /// disturbance acts directly on the target.
    pub fn vibrating_len(&self) -> usize {
        self.d() - self.s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsorberModel {
    pub mass: f64,
    pub damping: f64,
    pub stiffness: f64,
}

impl AbsorberModel {
    pub fn new(mass: f64, damping: f64, stiffness: f64) -> Result<Self> {
        for (name, v) in [("mass", mass), ("damping", damping), ("stiffness", stiffness)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidModel(format!(
                    "absorber {name} must be finite and strictly positive, got {v}"
                )));
            }
        }
        Ok(Self {
            mass,
            damping,
            stiffness,
        })
    }

    /// Complex link impedance `k_a + j omega c_a`.
    pub fn link_impedance(&self, omega: f64) -> Complex64 {
        Complex64::new(self.stiffness, omega * self.damping)
    }
}

/// `f_d(t) = amplitude * cos(omega t)` acting on mass `d`. The disturbance
/// phasor is the real amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarmonicExcitation {
    pub amplitude: f64,
    pub omega: f64,
}

impl HarmonicExcitation {
    pub fn new(amplitude: f64, omega: f64) -> Result<Self> {
        if !(amplitude.is_finite() && amplitude >= 0.0) {
            return Err(Error::InvalidModel(format!(
                "excitation amplitude must be >= 0, got {amplitude}"
            )));
        }
        if !(omega.is_finite() && omega > 0.0) {
            return Err(Error::InvalidModel(format!(
                "excitation frequency must be > 0, got {omega}"
            )));
        }
        Ok(Self { amplitude, omega })
    }

    pub fn from_hz(amplitude: f64, hz: f64) -> Result<Self> {
        Self::new(amplitude, 2.0 * std::f64::consts::PI * hz)
    }

    pub fn phasor(&self) -> Complex64 {
        Complex64::new(self.amplitude, 0.0)
    }

    pub fn period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.omega
    }

    pub fn at(&self, t: f64) -> f64 {
        self.amplitude * (self.omega * t).cos()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuralMatrices {
    pub m: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub k: DMatrix<f64>,
    /// Disturbance input, unit entry at mass `d`.
    pub b_d: DVector<f64>,
    /// Absorber-link input, unit entry at mass `p`.
    pub b_a: DVector<f64>,
}

/// Tridiagonal link matrix: `T[i][i] = l_i + l_{i+1}`, `T[i][i+1] = -l_{i+1}`.
fn link_matrix(links: &[f64]) -> DMatrix<f64> {
    let d = links.len() - 1;
    let mut t = DMatrix::zeros(d, d);
    for i in 0..d {
        t[(i, i)] = links[i] + links[i + 1];
        if i + 1 < d {
            t[(i, i + 1)] = -links[i + 1];
            t[(i + 1, i)] = -links[i + 1];
        }
    }
    t
}

/// Unit selector `e_pos` of length `len` with a 1-based position. Positions
/// `0` and `len + 1` denote the base (or a stopped barrier) and give the
/// zero vector.
pub fn selector(len: usize, pos: usize) -> DVector<f64> {
    let mut e = DVector::zeros(len);
    if (1..=len).contains(&pos) {
        e[pos - 1] = 1.0;
    }
    e
}

pub fn assemble_matrices(model: &ChainModel) -> StructuralMatrices {
    let d = model.d();
    StructuralMatrices {
        m: DMatrix::from_diagonal(&DVector::from_column_slice(model.masses())),
        c: link_matrix(model.dampings()),
        k: link_matrix(model.stiffnesses()),
        b_d: selector(d, d),
        b_a: selector(d, model.p()),
    }
}

/// `A(omega) = -M omega^2 + j omega C + K`.
pub fn dynamic_stiffness(matrices: &StructuralMatrices, omega: f64) -> DMatrix<Complex64> {
    let w2 = omega * omega;
    DMatrix::from_fn(matrices.m.nrows(), matrices.m.ncols(), |i, j| {
        Complex64::new(
            matrices.k[(i, j)] - w2 * matrices.m[(i, j)],
            omega * matrices.c[(i, j)],
        )
    })
}

/// Block partition of the dynamic stiffness matrix around the target mass.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedStiffness {
    pub omega: f64,
    pub full: DMatrix<Complex64>,
    /// `A_R`, masses `1..s-1`.
    pub resonating: DMatrix<Complex64>,
    /// `A_V`, masses `s+1..d`; empty when `s = d`.
    pub vibrating: DMatrix<Complex64>,
    /// `a_R`, column `s` restricted to the resonating rows.
    pub coupling_r: DVector<Complex64>,
    /// `a_V`, column `s` restricted to the vibrating rows.
    pub coupling_v: DVector<Complex64>,
    pub a_ss: Complex64,
    /// `D_a`: absorber input in resonating coordinates.
    pub d_a: DVector<Complex64>,
    /// `D_d`: disturbance input in vibrating coordinates.
    pub d_d: DVector<Complex64>,
}

impl PartitionedStiffness {
    /// Rebuilds the full matrix from its blocks.
    pub fn reassemble(&self) -> DMatrix<Complex64> {
        let r = self.resonating.nrows();
        let v = self.vibrating.nrows();
        let d = r + 1 + v;
        let mut a = DMatrix::zeros(d, d);
        a.view_mut((0, 0), (r, r)).copy_from(&self.resonating);
        a.view_mut((r + 1, r + 1), (v, v)).copy_from(&self.vibrating);
        for i in 0..r {
            a[(i, r)] = self.coupling_r[i];
            a[(r, i)] = self.coupling_r[i];
        }
        for i in 0..v {
            a[(r + 1 + i, r)] = self.coupling_v[i];
            a[(r, r + 1 + i)] = self.coupling_v[i];
        }
        a[(r, r)] = self.a_ss;
        a
    }
}

pub fn partition(
    model: &ChainModel,
    matrices: &StructuralMatrices,
    omega: f64,
) -> PartitionedStiffness {
    let full = dynamic_stiffness(matrices, omega);
    let s = model.s_index();
    let d = model.d();
    let r = s;
    let v = d - s - 1;
    let to_c = |e: DVector<f64>| e.map(|x| Complex64::new(x, 0.0));
    PartitionedStiffness {
        omega,
        resonating: full.view((0, 0), (r, r)).into_owned(),
        vibrating: full.view((s + 1, s + 1), (v, v)).into_owned(),
        coupling_r: full.view((0, s), (r, 1)).column(0).into_owned(),
        coupling_v: full.view((s + 1, s), (v, 1)).column(0).into_owned(),
        a_ss: full[(s, s)],
        d_a: to_c(selector(r, model.p())),
        d_d: to_c(selector(v, v)),
        full,
    }
}
