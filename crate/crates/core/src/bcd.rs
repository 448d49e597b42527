//! Decentralized block coordinate descent over the Huber relaxation.
//!
//! BS `i` owns the covariances of its own users and knows only the channels
//! from itself to every user ([`LocalView`]). The BSs coordinate through the
//! per-user scalars
//!
//! ```text
//! Ω̂_{i,q} = Tr(H_{i,q}(Σ_{m∈𝒦_i∖{q}} W_m − W_q/γ_q))   for q ∈ 𝒦_i
//! Ω̂_{i,q} = Tr(H_{i,q} Σ_{m∈𝒦_i} W_m)                   for q ∉ 𝒦_i
//! ```
//!
//! so that `f_q = 1 + Σ_j Ω̂_{j,q}`. After each block update the updating BS
//! broadcasts its KM scalars over a [`Transport`].

use crate::conic::{self, ConicProblem, Constraint, MatrixTerm, SolveStatus, TermMatrix, ToleranceSettings};
use crate::error::{JacobError, Result};
use crate::jacob::{huber, JacobSolution, DEFAULT_EPS, SERVE_TOL};
use crate::linalg::{CVector, HermitianMatrix};
use crate::model::{self, Scenario};

/// Everything BS `i` is allowed to know.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalView {
    pub bs: usize,
    pub antennas: usize,
    pub budget: f64,
    /// Positions of the users served by this BS.
    pub own_users: Vec<usize>,
    /// `γ_q` for the users in `own_users`.
    pub own_thresholds: Vec<f64>,
    /// `h_{i,q}/σ_q` for every user q, so that `H_{i,q} = g gᴴ`.
    pub normalized_channels: Vec<CVector>,
}

impl LocalView {
    pub fn new(s: &Scenario, bs: usize) -> Self {
        let own_users = s.cell_users(bs);
        Self {
            bs,
            antennas: s.antennas(),
            budget: s.budgets()[bs],
            own_thresholds: own_users.iter().map(|&q| s.user(q).threshold).collect(),
            own_users,
            normalized_channels: s
                .users()
                .iter()
                .map(|u| u.channels[bs].unscale(u.noise_power.sqrt()))
                .collect(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.normalized_channels.len()
    }

    fn own_slot(&self, q: usize) -> Option<usize> {
        self.own_users.iter().position(|&m| m == q)
    }

    /// `Ω̂_{i,q}` for every user q from this BS's covariances.
    pub fn omega(&self, local_w: &[HermitianMatrix]) -> Result<Vec<f64>> {
        if local_w.len() != self.own_users.len() {
            return Err(JacobError::Domain(format!(
                "BS {} holds {} users but got {} covariances",
                self.bs,
                self.own_users.len(),
                local_w.len()
            )));
        }
        if let Some(k) = local_w.iter().position(|w| w.dim() != self.antennas) {
            return Err(JacobError::Domain(format!("covariance {k} has the wrong dimension")));
        }
        Ok((0..self.num_users())
            .map(|q| {
                let g = &self.normalized_channels[q];
                let own = self.own_slot(q);
                local_w
                    .iter()
                    .enumerate()
                    .map(|(k, w)| {
                        let v = w.quadratic_form(g);
                        if Some(k) == own {
                            -v / self.own_thresholds[k]
                        } else {
                            v
                        }
                    })
                    .sum()
            })
            .collect())
    }

    fn scale(&self) -> f64 {
        if self.budget > 0.0 {
            self.budget
        } else {
            1.0
        }
    }
}

/// `Ω̂_{i,q}` for all q, from the covariances of the users of BS `i`.
pub fn compute_omega(i: usize, local_w: &[HermitianMatrix], s: &Scenario) -> Result<Vec<f64>> {
    LocalView::new(s, i).omega(local_w)
}

/// One BS's latest broadcast.
#[derive(Clone, Debug, PartialEq)]
pub struct OmegaBroadcast {
    pub sender: usize,
    pub round: usize,
    pub values: Vec<f64>,
}

/// The Ω̂ scalars a BS holds from its peers when it updates.
#[derive(Clone, Debug, PartialEq)]
pub struct OmegaTable {
    pub receiver: usize,
    pub round: usize,
    pub entries: Vec<OmegaBroadcast>,
}

impl OmegaTable {
    /// `Σ_{j≠i} Ω̂_{j,q}` per user.
    pub fn others_sum(&self, num_users: usize) -> Vec<f64> {
        let mut acc = vec![0.0; num_users];
        for e in self.entries.iter().filter(|e| e.sender != self.receiver) {
            for (a, v) in acc.iter_mut().zip(&e.values) {
                *a += v;
            }
        }
        acc
    }

    pub fn value(&self, j: usize, q: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.sender == j).map(|e| e.values[q])
    }
}

/// Backhaul between BSs.
pub trait Transport {
    fn broadcast(&mut self, sender: usize, round: usize, values: Vec<f64>) -> Result<()>;
    /// Latest scalars from every other BS. Fails unless every peer has
    /// broadcast for round `round − 1` or later.
    fn receive(&mut self, receiver: usize, round: usize) -> Result<OmegaTable>;
    /// Real scalars delivered to the bus so far.
    fn scalars_sent(&self) -> usize;
    fn scalars_sent_by(&self, sender: usize) -> usize;
}

/// Lossless, in-order, in-memory backhaul.
#[derive(Clone, Debug)]
pub struct InMemoryBus {
    latest: Vec<Option<OmegaBroadcast>>,
    sent: Vec<usize>,
}

impl InMemoryBus {
    pub fn new(num_bs: usize) -> Self {
        Self {
            latest: vec![None; num_bs],
            sent: vec![0; num_bs],
        }
    }
}

impl Transport for InMemoryBus {
    fn broadcast(&mut self, sender: usize, round: usize, values: Vec<f64>) -> Result<()> {
        let slot = self
            .latest
            .get_mut(sender)
            .ok_or_else(|| JacobError::Transport(format!("unknown sender {sender}")))?;
        if let Some(prev) = slot {
            if round < prev.round {
                return Err(JacobError::Transport(format!(
                    "BS {sender} broadcast round {round} after round {}",
                    prev.round
                )));
            }
        }
        self.sent[sender] += values.len();
        *slot = Some(OmegaBroadcast { sender, round, values });
        Ok(())
    }

    fn receive(&mut self, receiver: usize, round: usize) -> Result<OmegaTable> {
        let mut entries = Vec::with_capacity(self.latest.len());
        for (j, slot) in self.latest.iter().enumerate() {
            if j == receiver {
                continue;
            }
            match slot {
                Some(b) if b.round + 1 >= round => entries.push(b.clone()),
                Some(b) => {
                    return Err(JacobError::Transport(format!(
                        "BS {receiver} round {round}: BS {j} last broadcast round {}",
                        b.round
                    )))
                }
                None => {
                    return Err(JacobError::Transport(format!(
                        "BS {receiver} round {round}: nothing received from BS {j}"
                    )))
                }
            }
        }
        Ok(OmegaTable { receiver, round, entries })
    }

    fn scalars_sent(&self) -> usize {
        self.sent.iter().sum()
    }

    fn scalars_sent_by(&self, sender: usize) -> usize {
        self.sent[sender]
    }
}

#[derive(Clone, Debug)]
pub struct UpdateStats {
    pub status: SolveStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Right-hand side `x_q = 1 + Σ_{j≠i} Ω̂_{j,q} + local terms` at the optimum.
    pub rhs: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// `Σ_q h(x_q) + ε Σ_{m∈𝒦_i} Tr(W_m)` at the returned block.
    pub local_objective: f64,
}

/// Local objective of BS `i`: the Huber objective restricted to the terms
/// its block affects.
fn local_objective(others: &[f64], omega: &[f64], local_w: &[HermitianMatrix], eps: f64) -> f64 {
    let power: f64 = local_w.iter().map(|w| w.trace()).sum();
    others
        .iter()
        .zip(omega)
        .map(|(o, w)| huber(1.0 + o + w))
        .sum::<f64>()
        + eps * power
}

/// Per-BS subproblem: minimize `Σ_q (½u_q² + v_q) + ε Σ_{m∈𝒦_i} Tr(W_m)`
/// subject to `u_q + v_q ≥ 1 + Σ_{j≠i} Ω̂_{j,q} + (local trace terms)`,
/// `u, v ≥ 0`, the budget of BS `i` and `W_m ⪰ 0`.
pub fn bcd_update(
    view: &LocalView,
    table: &OmegaTable,
    eps: f64,
    tol: &ToleranceSettings,
) -> Result<(Vec<HermitianMatrix>, UpdateStats)> {
    let k = view.num_users();
    let others = table.others_sum(k);
    let n_own = view.own_users.len();
    if n_own == 0 || view.budget <= 0.0 {
        let w = vec![HermitianMatrix::zeros(view.antennas); n_own];
        let rhs: Vec<f64> = others.iter().map(|o| 1.0 + o).collect();
        let stats = UpdateStats {
            status: SolveStatus::Optimal,
            iterations: 0,
            kkt_residual: 0.0,
            u: rhs.iter().map(|x| x.clamp(0.0, 1.0)).collect(),
            v: rhs.iter().map(|x| (x - 1.0).max(0.0)).collect(),
            local_objective: local_objective(&others, &vec![0.0; k], &w, eps),
            rhs,
        };
        return Ok((w, stats));
    }

    let scale = view.scale();
    let mut p = ConicProblem::new();
    let cost = HermitianMatrix::scaled_identity(view.antennas, eps * scale);
    for _ in 0..n_own {
        p.add_matrix_var(cost.clone());
    }
    for _ in 0..k {
        p.add_scalar_var(true, 1.0, 0.0);
        p.add_scalar_var(true, 0.0, 1.0);
    }
    for q in 0..k {
        let own = view.own_slot(q);
        let terms = (0..n_own)
            .map(|slot| {
                let coeff = if Some(slot) == own { -1.0 / view.own_thresholds[slot] } else { 1.0 };
                MatrixTerm {
                    var: slot,
                    coef: TermMatrix::Outer {
                        vector: view.normalized_channels[q].clone(),
                        scale: coeff * scale,
                    },
                }
            })
            .collect();
        p.add_constraint(Constraint {
            matrix_terms: terms,
            scalar_terms: vec![(2 * q, -1.0), (2 * q + 1, -1.0)],
            rhs: -1.0 - others[q],
        });
    }
    p.add_constraint(Constraint {
        matrix_terms: (0..n_own)
            .map(|slot| MatrixTerm { var: slot, coef: TermMatrix::Identity(1.0) })
            .collect(),
        scalar_terms: vec![],
        rhs: 1.0,
    });

    let sol = conic::solve(&p, tol)?;
    let w: Vec<HermitianMatrix> = sol.matrices.iter().map(|m| m.scaled(scale)).collect();
    let omega = view.omega(&w)?;
    let rhs: Vec<f64> = (0..k).map(|q| 1.0 + others[q] + omega[q]).collect();
    let stats = UpdateStats {
        status: sol.status,
        iterations: sol.iterations,
        kkt_residual: sol.kkt_residual(),
        u: (0..k).map(|q| sol.scalars[2 * q]).collect(),
        v: (0..k).map(|q| sol.scalars[2 * q + 1]).collect(),
        local_objective: local_objective(&others, &omega, &w, eps),
        rhs,
    };
    Ok((w, stats))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BcdSettings {
    pub eps: f64,
    /// Relative objective change per full round below which BCD stops.
    pub stop_tol: f64,
    pub max_rounds: usize,
    pub serve_tol: f64,
    pub solver: ToleranceSettings,
}

impl Default for BcdSettings {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            stop_tol: 1e-2,
            max_rounds: 200,
            serve_tol: SERVE_TOL,
            solver: ToleranceSettings::default(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct BcdTrace {
    /// Huber objective after initialization (index 0) and after every round.
    pub objectives: Vec<f64>,
    /// Solver iterations per round, per BS.
    pub subproblem_iterations: Vec<Vec<usize>>,
    /// Full rounds executed.
    pub rounds: usize,
    pub converged: bool,
    /// Real scalars broadcast over the backhaul during this run.
    pub scalars_broadcast: usize,
    /// Largest `|f_q − (1 + Σ_j Ω̂_{j,q})|` seen after any broadcast.
    pub omega_identity_error: f64,
    /// Block updates that did not improve the objective and were discarded.
    pub rejected_updates: usize,
}

impl BcdTrace {
    /// Largest increase between consecutive round objectives (0 if monotone).
    pub fn max_increase(&self) -> f64 {
        self.objectives
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }
}

fn gather(blocks: &[Vec<HermitianMatrix>], cells: &[Vec<usize>], s: &Scenario) -> Vec<HermitianMatrix> {
    let mut w = vec![HermitianMatrix::zeros(s.antennas()); s.num_users()];
    for (cell, users) in cells.iter().enumerate() {
        for (slot, &q) in users.iter().enumerate() {
            w[q] = blocks[cell][slot].clone();
        }
    }
    w
}

fn round_objective(omega: &[Vec<f64>], blocks: &[Vec<HermitianMatrix>], eps: f64) -> f64 {
    let k = omega.first().map_or(0, |o| o.len());
    let power: f64 = blocks.iter().flatten().map(|w| w.trace()).sum();
    (0..k)
        .map(|q| huber(1.0 + omega.iter().map(|o| o[q]).sum::<f64>()))
        .sum::<f64>()
        + eps * power
}

/// Runs block coordinate descent with the given backhaul.
///
/// `init` holds one covariance per user (all zero when `None`). The returned
/// solution carries `t_q = max{0, f_q}` at the final iterate.
pub fn run_bcd(
    s: &Scenario,
    settings: &BcdSettings,
    init: Option<&[HermitianMatrix]>,
    transport: &mut dyn Transport,
) -> Result<(JacobSolution, BcdTrace)> {
    let m = s.num_bs();
    let k = s.num_users();
    let views: Vec<LocalView> = (0..m).map(|i| LocalView::new(s, i)).collect();
    let cells: Vec<Vec<usize>> = views.iter().map(|v| v.own_users.clone()).collect();
    let mut blocks: Vec<Vec<HermitianMatrix>> = match init {
        Some(w) => {
            if w.len() != k {
                return Err(JacobError::Domain(format!("{} initial covariances for {k} users", w.len())));
            }
            cells.iter().map(|c| c.iter().map(|&q| w[q].clone()).collect()).collect()
        }
        None => cells
            .iter()
            .map(|c| vec![HermitianMatrix::zeros(s.antennas()); c.len()])
            .collect(),
    };
    let mut trace = BcdTrace::default();
    let sent_before = transport.scalars_sent();

    let mut omega: Vec<Vec<f64>> = Vec::with_capacity(m);
    for i in 0..m {
        let o = views[i].omega(&blocks[i])?;
        transport.broadcast(i, 0, o.clone())?;
        omega.push(o);
    }
    let check_identity = |omega: &[Vec<f64>], blocks: &[Vec<HermitianMatrix>]| -> Result<f64> {
        let f = model::f_values(&gather(blocks, &cells, s), s)?;
        Ok((0..k)
            .map(|q| (f[q] - 1.0 - omega.iter().map(|o| o[q]).sum::<f64>()).abs())
            .fold(0.0, f64::max))
    };
    trace.omega_identity_error = check_identity(&omega, &blocks)?;
    let mut objective = round_objective(&omega, &blocks, settings.eps);
    trace.objectives.push(objective);

    if k == 0 {
        trace.converged = true;
    }
    while !trace.converged && trace.rounds < settings.max_rounds {
        let round = trace.rounds + 1;
        let mut iters = Vec::with_capacity(m);
        for i in 0..m {
            let table = transport.receive(i, round)?;
            let (w, stats) = bcd_update(&views[i], &table, settings.eps, &settings.solver)?;
            if !stats.status.is_optimal() {
                return Err(JacobError::Solver {
                    bs: Some(i),
                    message: format!(
                        "block update ended with {:?} (kkt {:.2e}) in round {round}",
                        stats.status, stats.kkt_residual
                    ),
                });
            }
            iters.push(stats.iterations);
            let others = table.others_sum(k);
            let current = local_objective(&others, &omega[i], &blocks[i], settings.eps);
            if stats.local_objective <= current {
                omega[i] = views[i].omega(&w)?;
                blocks[i] = w;
            } else {
                trace.rejected_updates += 1;
            }
            transport.broadcast(i, round, omega[i].clone())?;
            trace.omega_identity_error = trace.omega_identity_error.max(check_identity(&omega, &blocks)?);
        }
        trace.subproblem_iterations.push(iters);
        trace.rounds = round;
        let next = round_objective(&omega, &blocks, settings.eps);
        trace.objectives.push(next);
        let change = (objective - next).abs() / objective.abs().max(f64::MIN_POSITIVE);
        objective = next;
        if change < settings.stop_tol {
            trace.converged = true;
        }
    }
    trace.scalars_broadcast = transport.scalars_sent() - sent_before;

    let w = gather(&blocks, &cells, s);
    let t: Vec<f64> = (0..k)
        .map(|q| (1.0 + omega.iter().map(|o| o[q]).sum::<f64>()).max(0.0))
        .collect();
    let sol = JacobSolution::from_parts(
        t,
        w,
        objective,
        settings.serve_tol,
        SolveStatus::Optimal,
        trace.subproblem_iterations.iter().flatten().sum(),
        0.0,
    );
    Ok((sol, trace))
}
