//! Problem data and closed-form evaluations.
//!
//! Users are addressed by their *position* in [`Scenario::users`]. The
//! persistent label of a user (which survives removals during admission
//! control) is [`UserRecord::index`].
//!
//! All powers are in watts and all thresholds are linear ratios.

use crate::error::{JacobError, Result};
use crate::jacob::huber;
use crate::linalg::{CVector, HermitianMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct UserRecord {
    /// Persistent user label.
    pub index: usize,
    /// Serving BS `i(q)`.
    pub cell: usize,
    /// `h_{j,q}` for every BS `j`, each of length N.
    pub channels: Vec<CVector>,
    /// `σ_q²` in watts.
    pub noise_power: f64,
    /// `γ_q` as a linear ratio.
    pub threshold: f64,
}

/// A multicell downlink instance.
///
/// The normalized channel Gram matrices `H_{j,q} = h_{j,q} h_{j,q}ᴴ / σ_q²`
/// are computed once at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    num_bs: usize,
    antennas: usize,
    bs_positions: Vec<(f64, f64)>,
    budgets: Vec<f64>,
    users: Vec<UserRecord>,
    // gains[q][j] = H_{j,q}
    gains: Vec<Vec<HermitianMatrix>>,
}

impl Scenario {
    pub fn new(
        antennas: usize,
        bs_positions: Vec<(f64, f64)>,
        budgets: Vec<f64>,
        users: Vec<UserRecord>,
    ) -> Result<Self> {
        let num_bs = budgets.len();
        if num_bs == 0 {
            return Err(JacobError::Domain("scenario needs at least one BS".into()));
        }
        if antennas == 0 {
            return Err(JacobError::Domain("scenario needs at least one antenna".into()));
        }
        if bs_positions.len() != num_bs {
            return Err(JacobError::Domain(format!(
                "{} BS positions for {} budgets",
                bs_positions.len(),
                num_bs
            )));
        }
        // Zero budgets are allowed: such a cell can only transmit W = 0.
        if let Some(i) = budgets.iter().position(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(JacobError::Domain(format!("BS {i} has invalid budget {}", budgets[i])));
        }
        for u in &users {
            if u.cell >= num_bs {
                return Err(JacobError::Domain(format!(
                    "user {} assigned to unknown BS {}",
                    u.index, u.cell
                )));
            }
            if u.channels.len() != num_bs {
                return Err(JacobError::Domain(format!(
                    "user {} has {} channel vectors, expected {}",
                    u.index,
                    u.channels.len(),
                    num_bs
                )));
            }
            if let Some(j) = u.channels.iter().position(|h| h.len() != antennas) {
                return Err(JacobError::Domain(format!(
                    "user {} channel from BS {} has length {}, expected {}",
                    u.index,
                    j,
                    u.channels[j].len(),
                    antennas
                )));
            }
            if !(u.noise_power > 0.0) || !u.noise_power.is_finite() {
                return Err(JacobError::Domain(format!(
                    "user {} has non-positive noise power",
                    u.index
                )));
            }
            if !(u.threshold > 0.0) || !u.threshold.is_finite() {
                return Err(JacobError::Domain(format!(
                    "user {} has non-positive SINR threshold",
                    u.index
                )));
            }
        }
        let gains = users
            .iter()
            .map(|u| {
                u.channels
                    .iter()
                    .map(|h| HermitianMatrix::outer(h, 1.0 / u.noise_power))
                    .collect()
            })
            .collect();
        Ok(Self {
            num_bs,
            antennas,
            bs_positions,
            budgets,
            users,
            gains,
        })
    }

    pub fn num_bs(&self) -> usize {
        self.num_bs
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn users(&self) -> &[UserRecord] {
        &self.users
    }

    pub fn user(&self, q: usize) -> &UserRecord {
        &self.users[q]
    }

    pub fn budgets(&self) -> &[f64] {
        &self.budgets
    }

    pub fn bs_positions(&self) -> &[(f64, f64)] {
        &self.bs_positions
    }

    pub fn cell_of(&self, q: usize) -> usize {
        self.users[q].cell
    }

    /// Positions of the users served by BS `i`, ascending.
    pub fn cell_users(&self, i: usize) -> Vec<usize> {
        (0..self.users.len()).filter(|&q| self.users[q].cell == i).collect()
    }

    /// `H_{j,q}`
    pub fn gain(&self, j: usize, q: usize) -> &HermitianMatrix {
        &self.gains[q][j]
    }

    pub fn total_budget(&self) -> f64 {
        self.budgets.iter().sum()
    }

    /// Position of the user with persistent label `index`.
    pub fn position_of(&self, index: usize) -> Option<usize> {
        self.users.iter().position(|u| u.index == index)
    }

    /// A copy of this scenario without the users at the given positions.
    pub fn without_users(&self, positions: &[usize]) -> Scenario {
        let keep = |q: &usize| !positions.contains(q);
        Scenario {
            num_bs: self.num_bs,
            antennas: self.antennas,
            bs_positions: self.bs_positions.clone(),
            budgets: self.budgets.clone(),
            users: (0..self.users.len())
                .filter(keep)
                .map(|q| self.users[q].clone())
                .collect(),
            gains: (0..self.users.len())
                .filter(keep)
                .map(|q| self.gains[q].clone())
                .collect(),
        }
    }

    /// Same scenario restricted to the given user positions (in that order).
    pub fn subset(&self, positions: &[usize]) -> Scenario {
        Scenario {
            num_bs: self.num_bs,
            antennas: self.antennas,
            bs_positions: self.bs_positions.clone(),
            budgets: self.budgets.clone(),
            users: positions.iter().map(|&q| self.users[q].clone()).collect(),
            gains: positions.iter().map(|&q| self.gains[q].clone()).collect(),
        }
    }

    /// Copy with every SINR threshold replaced.
    pub fn with_thresholds(&self, threshold: f64) -> Result<Scenario> {
        let mut users = self.users.clone();
        for u in &mut users {
            u.threshold = threshold;
        }
        Scenario::new(self.antennas, self.bs_positions.clone(), self.budgets.clone(), users)
    }

    /// Copy with every budget replaced.
    pub fn with_budgets(&self, budgets: Vec<f64>) -> Result<Scenario> {
        Scenario::new(self.antennas, self.bs_positions.clone(), budgets, self.users.clone())
    }

    fn check_user(&self, q: usize) -> Result<()> {
        if q >= self.users.len() {
            return Err(JacobError::Domain(format!(
                "user position {q} out of range ({} users)",
                self.users.len()
            )));
        }
        Ok(())
    }

    fn check_covariances(&self, w: &[HermitianMatrix]) -> Result<()> {
        if w.len() != self.users.len() {
            return Err(JacobError::Domain(format!(
                "{} covariance matrices for {} users",
                w.len(),
                self.users.len()
            )));
        }
        if let Some(m) = w.iter().position(|x| x.dim() != self.antennas) {
            return Err(JacobError::Domain(format!(
                "covariance {m} has dimension {}, expected {}",
                w[m].dim(),
                self.antennas
            )));
        }
        Ok(())
    }
}

/// Per-user beamforming vectors; `None` for users that are not served.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamformerSet {
    pub beams: Vec<Option<CVector>>,
}

impl BeamformerSet {
    pub fn new(beams: Vec<Option<CVector>>) -> Self {
        Self { beams }
    }

    pub fn covariances(&self, antennas: usize) -> Vec<HermitianMatrix> {
        self.beams
            .iter()
            .map(|b| match b {
                Some(w) => HermitianMatrix::outer(w, 1.0),
                None => HermitianMatrix::zeros(antennas),
            })
            .collect()
    }

    pub fn power(&self, q: usize) -> f64 {
        self.beams[q].as_ref().map_or(0.0, |w| w.norm_squared())
    }
}

/// `|h_{i(q),q}ᴴ w_q|² / (σ_q² + Σ_{m≠q} |h_{i(m),q}ᴴ w_m|²)`
pub fn sinr(q: usize, beams: &BeamformerSet, s: &Scenario) -> Result<f64> {
    s.check_user(q)?;
    if beams.beams.len() != s.num_users() {
        return Err(JacobError::Domain(format!(
            "{} beamformers for {} users",
            beams.beams.len(),
            s.num_users()
        )));
    }
    let user = s.user(q);
    let received = |m: usize| -> f64 {
        match &beams.beams[m] {
            Some(w) => user.channels[s.cell_of(m)].dotc(w).norm_sqr(),
            None => 0.0,
        }
    };
    let signal = received(q);
    let interference: f64 = (0..s.num_users()).filter(|&m| m != q).map(received).sum();
    Ok(signal / (user.noise_power + interference))
}

/// The affine SINR-constraint function
/// `f_q = 1 + Σ_{m≠q} Tr(H_{i(m),q} W_m) − Tr(H_{i(q),q} W_q)/γ_q`.
///
/// With `W_m = w_m w_mᴴ`, `f_q ≤ 0` exactly when `SINR_q ≥ γ_q`.
pub fn f_q(q: usize, w: &[HermitianMatrix], s: &Scenario) -> Result<f64> {
    s.check_user(q)?;
    s.check_covariances(w)?;
    Ok(f_q_unchecked(q, w, s))
}

pub(crate) fn f_q_unchecked(q: usize, w: &[HermitianMatrix], s: &Scenario) -> f64 {
    let mut value = 1.0;
    for (m, wm) in w.iter().enumerate() {
        let t = s.gain(s.cell_of(m), q).inner_product(wm);
        if m == q {
            value -= t / s.user(q).threshold;
        } else {
            value += t;
        }
    }
    value
}

/// `f_q` for every user.
pub fn f_values(w: &[HermitianMatrix], s: &Scenario) -> Result<Vec<f64>> {
    s.check_covariances(w)?;
    Ok((0..s.num_users()).map(|q| f_q_unchecked(q, w, s)).collect())
}

/// `Φ_q = εI + Σ_{m≠q} H_{i(q),m} − H_{i(q),q}/γ_q`, summed over every other
/// user in the system and always using the serving BS of `q`.
pub fn phi_q(q: usize, s: &Scenario, eps: f64) -> Result<HermitianMatrix> {
    s.check_user(q)?;
    if !(eps > 0.0) {
        return Err(JacobError::Domain(format!("eps must be positive, got {eps}")));
    }
    let bs = s.cell_of(q);
    let mut phi = HermitianMatrix::scaled_identity(s.antennas(), eps);
    for m in 0..s.num_users() {
        if m == q {
            phi.add_scaled(s.gain(bs, m), -1.0 / s.user(q).threshold);
        } else {
            phi.add_scaled(s.gain(bs, m), 1.0);
        }
    }
    Ok(phi)
}

pub fn min_eigenvalue(h: &HermitianMatrix) -> f64 {
    crate::linalg::min_eigenvalue(h)
}

/// `Σ_{q∈𝒦_i} Tr(W_q)` for every BS.
pub fn cell_powers(w: &[HermitianMatrix], s: &Scenario) -> Vec<f64> {
    let mut p = vec![0.0; s.num_bs()];
    for (q, wq) in w.iter().enumerate() {
        p[s.cell_of(q)] += wq.trace();
    }
    p
}

/// `Σ_q max{0, f_q} + ε Σ_q Tr(W_q)`
pub fn l1_objective(w: &[HermitianMatrix], s: &Scenario, eps: f64) -> Result<f64> {
    let f = f_values(w, s)?;
    let power: f64 = w.iter().map(|x| x.trace()).sum();
    Ok(f.iter().map(|&x| x.max(0.0)).sum::<f64>() + eps * power)
}

/// `Σ_q h(f_q) + ε Σ_q Tr(W_q)` with the one-sided Huber function `h`.
pub fn huber_objective(w: &[HermitianMatrix], s: &Scenario, eps: f64) -> Result<f64> {
    let f = f_values(w, s)?;
    let power: f64 = w.iter().map(|x| x.trace()).sum();
    Ok(f.iter().map(|&x| huber(x)).sum::<f64>() + eps * power)
}
