//! Centralized ℓ1 and Huber relaxations of joint admission control and
//! coordinated beamforming, plus beamformer recovery and the CoBF feasibility
//! test built on them.
//!
//! Formulations are handed to the conic solver in normalized power units
//! (`Σ_i P_max,i = 1`); every quantity returned from this module is in watts.

use crate::conic::{self, ConicProblem, Constraint, MatrixTerm, SolveStatus, TermMatrix, ToleranceSettings};
use crate::error::{JacobError, Result};
use crate::linalg::{CVector, HermitianMatrix};
use crate::model::{self, BeamformerSet, Scenario};

/// Default power penalty in 1/W.
pub const DEFAULT_EPS: f64 = 1e-5;
/// `t_q` at or below this counts as "SINR request met".
pub const SERVE_TOL: f64 = 1e-5;
/// Largest acceptable `λ₂/λ₁` for a recovered beamformer.
pub const RANK_TOL: f64 = 1e-4;
/// Covariances whose top eigenvalue is below this fraction of the total
/// budget are numerically zero (solver tolerance level).
pub const ZERO_POWER_REL: f64 = 1e-7;

/// One-sided Huber function: 0 for x ≤ 0, x²/2 on (0, 1], x − 1/2 beyond.
pub fn huber(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x <= 1.0 {
        0.5 * x * x
    } else {
        x - 0.5
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JacobSettings {
    pub eps: f64,
    pub serve_tol: f64,
    pub solver: ToleranceSettings,
}

impl Default for JacobSettings {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            serve_tol: SERVE_TOL,
            solver: ToleranceSettings::default(),
        }
    }
}

impl JacobSettings {
    pub fn with_eps(eps: f64) -> Self {
        Self { eps, ..Self::default() }
    }
}

#[derive(Clone, Debug)]
pub struct JacobSolution {
    /// `t_q ≥ 0` per user.
    pub t: Vec<f64>,
    /// `W_q` per user, watts.
    pub w: Vec<HermitianMatrix>,
    pub beams: Option<BeamformerSet>,
    /// Objective of the formulation that produced this solution.
    pub objective: f64,
    pub served: Vec<bool>,
    pub status: SolveStatus,
    pub solver_iterations: usize,
    pub kkt_residual: f64,
}

impl JacobSolution {
    pub fn all_served(&self) -> bool {
        self.served.iter().all(|&s| s)
    }

    pub fn is_optimal(&self) -> bool {
        self.status.is_optimal()
    }

    pub fn total_power(&self) -> f64 {
        self.w.iter().map(|w| w.trace()).sum()
    }

    pub(crate) fn from_parts(
        t: Vec<f64>,
        w: Vec<HermitianMatrix>,
        objective: f64,
        serve_tol: f64,
        status: SolveStatus,
        solver_iterations: usize,
        kkt_residual: f64,
    ) -> Self {
        let served = t.iter().map(|&v| v <= serve_tol).collect();
        Self {
            t,
            w,
            beams: None,
            objective,
            served,
            status,
            solver_iterations,
            kkt_residual,
        }
    }
}

/// Power normalization: `W = scale · W'`.
pub(crate) fn power_scale(s: &Scenario) -> f64 {
    let total = s.total_budget();
    if total > 0.0 {
        total
    } else {
        1.0
    }
}

fn check_eps(s: &Scenario, eps: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(JacobError::Domain(format!("eps must be positive, got {eps}")));
    }
    let total = s.total_budget();
    if total > 0.0 && eps >= 1.0 / total {
        return Err(JacobError::Domain(format!(
            "eps = {eps} outside (0, 1/ΣP_max) = (0, {})",
            1.0 / total
        )));
    }
    Ok(())
}

/// Matrix-variable layout shared by the centralized formulations: one
/// variable per user whose cell has a positive budget.
pub(crate) struct Layout {
    pub var_of: Vec<Option<usize>>,
    pub scale: f64,
}

/// Adds `Σ_m coeff_{q,m} Tr(H_{i(m),q} W_m)` for the `f_q` row of user `q`
/// over the users in `owners`, with `coeff = −1/γ_q` on the diagonal and 1
/// elsewhere. Coefficients are in normalized power units.
pub(crate) fn f_row_terms(
    s: &Scenario,
    q: usize,
    owners: impl Iterator<Item = (usize, usize)>,
    scale: f64,
) -> Vec<MatrixTerm> {
    let user = s.user(q);
    owners
        .map(|(m, var)| {
            let coeff = if m == q { -1.0 / user.threshold } else { 1.0 };
            MatrixTerm {
                var,
                coef: TermMatrix::Outer {
                    vector: user.channels[s.cell_of(m)].clone(),
                    scale: coeff * scale / user.noise_power,
                },
            }
        })
        .collect()
}

fn add_matrix_vars(s: &Scenario, eps: f64, p: &mut ConicProblem) -> Layout {
    let scale = power_scale(s);
    let cost = HermitianMatrix::scaled_identity(s.antennas(), eps * scale);
    let var_of = (0..s.num_users())
        .map(|q| (s.budgets()[s.cell_of(q)] > 0.0).then(|| p.add_matrix_var(cost.clone())))
        .collect();
    Layout { var_of, scale }
}

fn add_budget_rows(s: &Scenario, layout: &Layout, p: &mut ConicProblem) {
    for i in 0..s.num_bs() {
        let terms: Vec<MatrixTerm> = s
            .cell_users(i)
            .into_iter()
            .filter_map(|q| layout.var_of[q])
            .map(|var| MatrixTerm { var, coef: TermMatrix::Identity(1.0) })
            .collect();
        if !terms.is_empty() {
            p.add_constraint(Constraint {
                matrix_terms: terms,
                scalar_terms: vec![],
                rhs: s.budgets()[i] / layout.scale,
            });
        }
    }
}

fn owners(layout: &Layout) -> impl Iterator<Item = (usize, usize)> + '_ {
    layout.var_of.iter().enumerate().filter_map(|(m, v)| v.map(|v| (m, v)))
}

fn unscale(layout: &Layout, mats: &[HermitianMatrix], antennas: usize) -> Vec<HermitianMatrix> {
    layout
        .var_of
        .iter()
        .map(|v| match v {
            Some(k) => mats[*k].scaled(layout.scale),
            None => HermitianMatrix::zeros(antennas),
        })
        .collect()
}

/// Conic program for the ℓ1 relaxation:
/// `min Σ t_q + ε Σ Tr(W_q)` s.t. budgets, `t_q ≥ 0`, `t_q ≥ f_q(W)`, `W ⪰ 0`.
///
/// Scalar `q` of the program is `t_q`.
pub(crate) fn build_l1_problem(s: &Scenario, eps: f64) -> (ConicProblem, Layout) {
    let mut p = ConicProblem::new();
    let layout = add_matrix_vars(s, eps, &mut p);
    for _ in 0..s.num_users() {
        p.add_scalar_var(true, 0.0, 1.0);
    }
    for q in 0..s.num_users() {
        p.add_constraint(Constraint {
            matrix_terms: f_row_terms(s, q, owners(&layout), layout.scale),
            scalar_terms: vec![(q, -1.0)],
            rhs: -1.0,
        });
    }
    add_budget_rows(s, &layout, &mut p);
    (p, layout)
}

/// Conic program for the Huber relaxation in epigraph form:
/// `min Σ (½u_q² + v_q) + ε Σ Tr(W_q)` s.t. `u_q + v_q ≥ f_q(W)`, `u, v ≥ 0`,
/// budgets, `W ⪰ 0`.
///
/// Scalars `2q` and `2q + 1` are `u_q` and `v_q`.
pub(crate) fn build_huber_problem(s: &Scenario, eps: f64) -> (ConicProblem, Layout) {
    let mut p = ConicProblem::new();
    let layout = add_matrix_vars(s, eps, &mut p);
    for _ in 0..s.num_users() {
        p.add_scalar_var(true, 1.0, 0.0);
        p.add_scalar_var(true, 0.0, 1.0);
    }
    for q in 0..s.num_users() {
        p.add_constraint(Constraint {
            matrix_terms: f_row_terms(s, q, owners(&layout), layout.scale),
            scalar_terms: vec![(2 * q, -1.0), (2 * q + 1, -1.0)],
            rhs: -1.0,
        });
    }
    add_budget_rows(s, &layout, &mut p);
    (p, layout)
}

/// Solves the ℓ1 approximate JACoB problem. Requires `0 < ε < 1/Σ P_max,i`.
pub fn solve_l1(s: &Scenario, settings: &JacobSettings) -> Result<JacobSolution> {
    check_eps(s, settings.eps)?;
    if s.num_users() == 0 {
        return Ok(JacobSolution::from_parts(vec![], vec![], 0.0, settings.serve_tol, SolveStatus::Optimal, 0, 0.0));
    }
    let (p, layout) = build_l1_problem(s, settings.eps);
    let sol = conic::solve(&p, &settings.solver)?;
    let w = unscale(&layout, &sol.matrices, s.antennas());
    let t = sol.scalars.iter().map(|&v| v.max(0.0)).collect();
    Ok(JacobSolution::from_parts(
        t,
        w,
        sol.objective,
        settings.serve_tol,
        sol.status,
        sol.iterations,
        sol.kkt_residual(),
    ))
}

/// Solves the Huber approximate JACoB problem centrally. `t_q` of the result
/// is `max{0, f_q(W)}` and the objective is the Huber objective.
pub fn solve_huber_centralized(s: &Scenario, settings: &JacobSettings) -> Result<JacobSolution> {
    check_eps(s, settings.eps)?;
    if s.num_users() == 0 {
        return Ok(JacobSolution::from_parts(vec![], vec![], 0.0, settings.serve_tol, SolveStatus::Optimal, 0, 0.0));
    }
    let (p, layout) = build_huber_problem(s, settings.eps);
    let sol = conic::solve(&p, &settings.solver)?;
    let w = unscale(&layout, &sol.matrices, s.antennas());
    let t = model::f_values(&w, s)?.into_iter().map(|f| f.max(0.0)).collect();
    let objective = model::huber_objective(&w, s, settings.eps)?;
    Ok(JacobSolution::from_parts(
        t,
        w,
        objective,
        settings.serve_tol,
        sol.status,
        sol.iterations,
        sol.kkt_residual(),
    ))
}

/// Principal-eigenvector beamformer of one covariance together with its rank
/// ratio `λ₂/λ₁`. `zero_level` is the eigenvalue at or below which the
/// covariance is treated as zero (ratio 0, beam 0).
pub fn rank_one_factor(w: &HermitianMatrix, zero_level: f64) -> (CVector, f64) {
    let eig = w.eig();
    let n = eig.values.len();
    let top = eig.values[n - 1];
    if top <= zero_level.max(0.0) {
        return (CVector::zeros(n), 0.0);
    }
    let second = if n > 1 { eig.values[n - 2].max(0.0) } else { 0.0 };
    (eig.vector(n - 1).scale(top.sqrt()), second / top)
}

/// Numerically-zero level for covariances of scenario `s`.
pub fn zero_power_level(s: &Scenario) -> f64 {
    ZERO_POWER_REL * power_scale(s)
}

/// Recovered beamformers and the per-user rank ratios `λ₂/λ₁`.
#[derive(Clone, Debug)]
pub struct Recovery {
    pub beams: BeamformerSet,
    pub rank_ratios: Vec<f64>,
}

impl Recovery {
    pub fn max_ratio(&self, users: impl Iterator<Item = usize>) -> f64 {
        users.map(|q| self.rank_ratios[q]).fold(0.0, f64::max)
    }
}

/// `w_q = √λ₁ v₁` from the principal eigenpair of each `W_q`.
pub fn recover_beamformers(sol: &JacobSolution, zero_level: f64) -> Recovery {
    let (beams, rank_ratios): (Vec<_>, Vec<_>) = sol
        .w
        .iter()
        .map(|w| {
            let (v, r) = rank_one_factor(w, zero_level);
            (Some(v), r)
        })
        .unzip();
    Recovery {
        beams: BeamformerSet::new(beams),
        rank_ratios,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feasibility {
    Feasible,
    Infeasible,
    /// The solver did not certify an optimum; excluded from statistics.
    Indeterminate,
}

/// Whether every user of `s` can meet its SINR request within the per-BS
/// budgets, decided through the ℓ1 relaxation (all `t_q ≤ serve_tol`).
pub fn cobf_feasible(s: &Scenario, settings: &JacobSettings) -> Result<Feasibility> {
    let sol = solve_l1(s, settings)?;
    Ok(if !sol.is_optimal() {
        Feasibility::Indeterminate
    } else if sol.all_served() {
        Feasibility::Feasible
    } else {
        Feasibility::Infeasible
    })
}
