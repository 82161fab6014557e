//! Gain/delay synthesis of the delayed resonator `u(t) = g x_a(t - tau)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AbsorberModel, ChainModel, HarmonicExcitation};
use crate::phasor::{q_from, Decomposition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `g = |Q|`, `tau = (-arg Q + 2 k pi) / omega`.
    Plus,
    /// `g = -|Q|`, `tau = (pi - arg Q + 2 k pi) / omega`.
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrFeedback {
    #[serde(rename = "g_N_per_m")]
    pub g: f64,
    #[serde(rename = "tau_s")]
    pub tau: f64,
    pub branch: Branch,
    pub k: i64,
}

impl DrFeedback {
    /// Feedback that is switched off; used for passive runs.
    pub fn passive() -> Self {
        Self {
            g: 0.0,
            tau: 0.0,
            branch: Branch::Plus,
            k: 0,
        }
    }

    /// `g e^{-j omega tau}`.
    pub fn frequency_response(&self, omega: f64) -> Complex64 {
        Complex64::from_polar(self.g, -omega * self.tau)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum BranchPolicy {
    /// Smallest non-negative delay over both branches.
    #[default]
    Auto,
    /// Smallest non-negative delay on the given branch.
    Branch { branch: Branch },
    /// Exact branch and index; fails if the delay is negative.
    Fixed { branch: Branch, k: i64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningSet {
    pub q: Complex64,
    /// Ascending in delay; the two smallest realizable delays per branch.
    pub candidates: Vec<DrFeedback>,
    pub selected: DrFeedback,
}

pub fn compute_q(
    model: &ChainModel,
    absorber: &AbsorberModel,
    excitation: &HarmonicExcitation,
) -> Result<Complex64> {
    let dec = Decomposition::new(model, excitation.omega)?;
    Ok(q_from(&dec, absorber))
}

fn base_phase(branch: Branch, q: Complex64) -> f64 {
    // arg in (-pi, pi]
    let arg = if q.im == 0.0 && q.re < 0.0 { PI } else { q.arg() };
    match branch {
        Branch::Plus => -arg,
        Branch::Minus => PI - arg,
    }
}

fn candidate(branch: Branch, q: Complex64, omega: f64, k: i64) -> DrFeedback {
    let g = match branch {
        Branch::Plus => q.norm(),
        Branch::Minus => -q.norm(),
    };
    DrFeedback {
        g,
        tau: (base_phase(branch, q) + 2.0 * PI * k as f64) / omega,
        branch,
        k,
    }
}

/// Smallest `k` giving a non-negative delay on `branch`.
fn first_k(branch: Branch, q: Complex64) -> i64 {
    let k = (-base_phase(branch, q) / (2.0 * PI)).ceil() as i64;
    // guard against rounding right at a multiple of 2 pi
    if base_phase(branch, q) + 2.0 * PI * k as f64 >= 0.0 {
        k
    } else {
        k + 1
    }
}

/// Enumerates both branches from `Q` and applies the selection policy.
pub fn tune_from_q(q: Complex64, omega: f64, policy: BranchPolicy) -> Result<TuningSet> {
    if q.norm() == 0.0 || !q.norm().is_finite() {
        return Err(Error::ZeroQ);
    }
    let mut candidates = Vec::with_capacity(4);
    for branch in [Branch::Plus, Branch::Minus] {
        let k0 = first_k(branch, q);
        candidates.push(candidate(branch, q, omega, k0));
        candidates.push(candidate(branch, q, omega, k0 + 1));
    }
    // stable sort keeps Plus ahead of Minus on equal delays
    candidates.sort_by(|a, b| a.tau.total_cmp(&b.tau));
    let selected = match policy {
        BranchPolicy::Auto => candidates[0],
        BranchPolicy::Branch { branch } => *candidates
            .iter()
            .find(|c| c.branch == branch)
            .expect("both branches enumerated"),
        BranchPolicy::Fixed { branch, k } => {
            let c = candidate(branch, q, omega, k);
            if c.tau < 0.0 {
                return Err(Error::NotRealizable { branch, k, tau: c.tau });
            }
            c
        }
    };
    Ok(TuningSet {
        q,
        candidates,
        selected,
    })
}

pub fn tune(
    model: &ChainModel,
    absorber: &AbsorberModel,
    excitation: &HarmonicExcitation,
    policy: BranchPolicy,
) -> Result<TuningSet> {
    let q = compute_q(model, absorber, excitation)?;
    tune_from_q(q, excitation.omega, policy)
}
