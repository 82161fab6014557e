//! Closed-loop delay-differential-algebraic model and its reduction to an
//! explicit retarded system.
//!
//! State ordering is `[x; x'; x_a; x_a'; f_a; u]`, dimension `2d + 4`. The
//! last two rows are algebraic: the absorber link force balance and the
//! delayed control law.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::Result;
use crate::linalg::checked_inverse;
use crate::model::{assemble_matrices, AbsorberModel, ChainModel, HarmonicExcitation};
use crate::tuning::DrFeedback;

#[derive(Debug, Clone, PartialEq)]
pub struct DdaeSystem {
    pub e: DMatrix<f64>,
    pub a0: DMatrix<f64>,
    pub a1: DMatrix<f64>,
    pub b: DVector<f64>,
    pub tau: f64,
    d: usize,
}

impl DdaeSystem {
    pub fn dim(&self) -> usize {
        self.e.nrows()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of differential states, `2d + 2`.
    pub fn differential_dim(&self) -> usize {
        2 * self.d + 2
    }

    pub fn f_a_index(&self) -> usize {
        2 * self.d + 2
    }

    pub fn u_index(&self) -> usize {
        2 * self.d + 3
    }

    /// `E lambda - A0 - A1 e^{-lambda tau}`.
    pub fn characteristic_matrix(&self, lambda: Complex64) -> DMatrix<Complex64> {
        let delay = (-lambda * self.tau).exp();
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            lambda * self.e[(i, j)] - self.a0[(i, j)] - delay * self.a1[(i, j)]
        })
    }
}

pub fn build_ddae(model: &ChainModel, absorber: &AbsorberModel, feedback: &DrFeedback) -> DdaeSystem {
    let d = model.d();
    let n = 2 * d + 4;
    let mats = assemble_matrices(model);
    let p = model.p_index();
    let (xa, va, fa, u) = (2 * d, 2 * d + 1, 2 * d + 2, 2 * d + 3);

    let mut e = DMatrix::zeros(n, n);
    let mut a0 = DMatrix::zeros(n, n);
    let mut a1 = DMatrix::zeros(n, n);
    for i in 0..d {
        e[(i, i)] = 1.0;
        a0[(i, d + i)] = 1.0;
        for j in 0..d {
            e[(d + i, d + j)] = mats.m[(i, j)];
            a0[(d + i, j)] = -mats.k[(i, j)];
            a0[(d + i, d + j)] = -mats.c[(i, j)];
        }
        // reaction of the absorber link on the chain
        a0[(d + i, fa)] = -mats.b_a[i];
    }
    e[(xa, xa)] = 1.0;
    e[(va, va)] = absorber.mass;
    a0[(xa, va)] = 1.0;
    a0[(va, fa)] = 1.0;

    // 0 = k_a x_p + c_a x_p' - k_a x_a - c_a x_a' - f_a + u
    a0[(fa, p)] = absorber.stiffness;
    a0[(fa, d + p)] = absorber.damping;
    a0[(fa, xa)] = -absorber.stiffness;
    a0[(fa, va)] = -absorber.damping;
    a0[(fa, fa)] = -1.0;
    a0[(fa, u)] = 1.0;

    // 0 = -u + g x_a(t - tau)
    a0[(u, u)] = -1.0;
    a1[(u, xa)] = feedback.g;

    let mut b = DVector::zeros(n);
    for i in 0..d {
        b[d + i] = mats.b_d[i];
    }
    DdaeSystem {
        e,
        a0,
        a1,
        b,
        tau: feedback.tau,
        d,
    }
}

/// Steady harmonic state from `Delta(j omega) z = b f_d` on the full
/// descriptor model, without the target-stage decomposition.
pub fn harmonic_response(ddae: &DdaeSystem, excitation: &HarmonicExcitation) -> Result<DVector<Complex64>> {
    let w = excitation.omega;
    let delta = ddae.characteristic_matrix(Complex64::new(0.0, w));
    let inv = checked_inverse(&delta, "closed-loop Delta(j omega)", w)?;
    Ok(inv * ddae.b.map(|v| Complex64::new(v * excitation.amplitude, 0.0)))
}

/// Explicit retarded system `z' = A0 z + A1 z(t - tau) + b f_d(t)` over the
/// differential states, together with the map back to the algebraic ones:
/// `[f_a; u] = W0 z + W1 z(t - tau)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetardedSystem {
    pub a0: DMatrix<f64>,
    pub a1: DMatrix<f64>,
    pub b: DVector<f64>,
    pub tau: f64,
    pub w0: DMatrix<f64>,
    pub w1: DMatrix<f64>,
}

impl RetardedSystem {
    pub fn dim(&self) -> usize {
        self.a0.nrows()
    }

    /// True when the delayed term vanishes identically.
    pub fn is_delay_free(&self) -> bool {
        self.tau == 0.0 || self.a1.iter().all(|v| *v == 0.0)
    }

    pub fn characteristic_matrix(&self, lambda: Complex64) -> DMatrix<Complex64> {
        let delay = (-lambda * self.tau).exp();
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            let diag = if i == j { lambda } else { Complex64::new(0.0, 0.0) };
            diag - self.a0[(i, j)] - delay * self.a1[(i, j)]
        })
    }

    /// Derivative of the characteristic matrix in `lambda`.
    pub fn characteristic_derivative(&self, lambda: Complex64) -> DMatrix<Complex64> {
        let delay = (-lambda * self.tau).exp() * self.tau;
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            let diag = if i == j { 1.0 } else { 0.0 };
            diag + delay * self.a1[(i, j)]
        })
    }
}

/// Eliminates `f_a` and `u`. The algebraic block is
/// `[[-1, 1], [0, -1]]`, always invertible, and `A1` touches only
/// differential columns, so the result is retarded.
pub fn reduce_to_retarded(ddae: &DdaeSystem) -> RetardedSystem {
    let nd = ddae.differential_dim();
    let na = ddae.dim() - nd;
    let e11 = ddae.e.view((0, 0), (nd, nd));
    let a0_11 = ddae.a0.view((0, 0), (nd, nd));
    let a0_12 = ddae.a0.view((0, nd), (nd, na));
    let a0_21 = ddae.a0.view((nd, 0), (na, nd));
    let a0_22 = ddae.a0.view((nd, nd), (na, na));
    let a1_11 = ddae.a1.view((0, 0), (nd, nd));
    let a1_21 = ddae.a1.view((nd, 0), (na, nd));

    let a22_inv = a0_22
        .clone_owned()
        .try_inverse()
        .expect("algebraic block is unit triangular");
    let e11_inv = e11
        .clone_owned()
        .try_inverse()
        .expect("mass block is positive definite");

    let w0 = -&a22_inv * a0_21;
    let w1 = -&a22_inv * a1_21;
    let a0 = &e11_inv * (a0_11 + a0_12 * &w0);
    let a1 = &e11_inv * (a1_11 + a0_12 * &w1);
    let b = &e11_inv * ddae.b.rows(0, nd);
    RetardedSystem {
        a0,
        a1,
        b,
        tau: ddae.tau,
        w0,
        w1,
    }
}

/// `sigma_min / sigma_max` of the DDAE characteristic matrix.
pub fn char_residual(ddae: &DdaeSystem, lambda: Complex64) -> f64 {
    let sv = ddae.characteristic_matrix(lambda).singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0.0;
    }
    sv.min() / max
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::tuning::{tune, BranchPolicy};

    fn nominal_ddae() -> (ChainModel, AbsorberModel, DdaeSystem) {
        let (m, a, e) = fixtures::five_mass_nominal();
        let fb = tune(&m, &a, &e, BranchPolicy::Auto).unwrap().selected;
        let sys = build_ddae(&m, &a, &fb);
        (m, a, sys)
    }

    #[test]
    fn dimensions_and_structure() {
        let (_, _, sys) = nominal_ddae();
        assert_eq!(sys.dim(), 14);
        let diag_nonzero = (0..14).filter(|&i| sys.e[(i, i)] != 0.0).count();
        assert_eq!(diag_nonzero, 12);
        assert_eq!(sys.a1.iter().filter(|v| **v != 0.0).count(), 1);
        assert!((sys.a1[(13, 10)] + 129.9627).abs() < 1e-3);
        assert_eq!(sys.e.rank(1e-12), 12);

        let (m, a, e) = fixtures::experimental_nominal();
        let fb = tune(&m, &a, &e, BranchPolicy::Auto).unwrap().selected;
        assert_eq!(build_ddae(&m, &a, &fb).dim(), 10);
    }

    #[test]
    fn force_balance_row() {
        let (_, a, sys) = nominal_ddae();
        let row: Vec<f64> = sys.a0.row(12).iter().copied().collect();
        let mut expected = vec![0.0; 14];
        expected[0] = a.stiffness;
        expected[5] = a.damping;
        expected[10] = -a.stiffness;
        expected[11] = -a.damping;
        expected[12] = -1.0;
        expected[13] = 1.0;
        assert_eq!(row, expected);
        assert_eq!(sys.b[9], 1.0);
        assert_eq!(sys.b.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn reduced_dimension() {
        let (_, _, sys) = nominal_ddae();
        let r = reduce_to_retarded(&sys);
        assert_eq!(r.dim(), 12);
        assert_eq!(r.w0.shape(), (2, 12));
    }

    #[test]
    fn passive_reduction_matches_direct_assembly() {
        let (m, a, _) = fixtures::five_mass_nominal();
        let sys = build_ddae(&m, &a, &DrFeedback::passive());
        let r = reduce_to_retarded(&sys);
        assert!(r.is_delay_free());
        // independent passive state matrix for chain + absorber
        let mats = assemble_matrices(&m);
        let d = m.d();
        let mut k = DMatrix::zeros(d + 1, d + 1);
        let mut c = DMatrix::zeros(d + 1, d + 1);
        let mut mm = DMatrix::zeros(d + 1, d + 1);
        k.view_mut((0, 0), (d, d)).copy_from(&mats.k);
        c.view_mut((0, 0), (d, d)).copy_from(&mats.c);
        mm.view_mut((0, 0), (d, d)).copy_from(&mats.m);
        mm[(d, d)] = a.mass;
        for (mat, v) in [(&mut k, a.stiffness), (&mut c, a.damping)] {
            mat[(0, 0)] += v;
            mat[(d, d)] += v;
            mat[(0, d)] -= v;
            mat[(d, 0)] -= v;
        }
        let minv = mm.try_inverse().unwrap();
        let n = d + 1;
        let mut a_full = DMatrix::zeros(2 * n, 2 * n);
        a_full.view_mut((0, n), (n, n)).fill_with_identity();
        a_full.view_mut((n, 0), (n, n)).copy_from(&(-&minv * k));
        a_full.view_mut((n, n), (n, n)).copy_from(&(-&minv * c));
        // reorder [x, x_a, x', x_a'] -> [x, x', x_a, x_a']
        let order: Vec<usize> = (0..d).chain(n..n + d).chain([d, n + d]).collect();
        let permuted = DMatrix::from_fn(2 * n, 2 * n, |i, j| a_full[(order[i], order[j])]);
        assert!((permuted - &r.a0).amax() < 1e-9);

        for lambda in r.a0.complex_eigenvalues().iter() {
            assert!(char_residual(&sys, *lambda) < 1e-10);
        }
    }

    #[test]
    fn residual_far_from_roots() {
        // the unscaled matrix mixes O(1e3) stiffness with O(1) algebraic
        // entries, so the ratio stays small even away from roots
        let (_, _, sys) = nominal_ddae();
        for lambda in [Complex64::new(1e6, 0.0), Complex64::new(0.0, 1e6), Complex64::new(1.0, 10.0)] {
            assert!(char_residual(&sys, lambda) > 1e-7);
        }
    }
}
