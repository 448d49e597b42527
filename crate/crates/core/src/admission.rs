//! Prescreening and deflation: pick a large subset of users that can all be
//! served.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::bcd::{run_bcd, BcdSettings, BcdTrace, InMemoryBus};
use crate::error::{JacobError, Result};
use crate::jacob::{self, JacobSettings, JacobSolution, DEFAULT_EPS, SERVE_TOL};
use crate::linalg::CVector;
use crate::model::{self, BeamformerSet, Scenario};

/// Relative SINR shortfall tolerated at certification.
pub const SINR_TOL: f64 = 1e-4;
/// Relative budget excess tolerated at certification.
pub const BUDGET_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Centralized,
    Distributed,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Centralized => "centralized",
            Mode::Distributed => "distributed",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = JacobError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centralized" => Ok(Mode::Centralized),
            "distributed" => Ok(Mode::Distributed),
            other => Err(JacobError::Config(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Prescreen,
    Deflate,
    /// Drop forced because the final beamformers failed certification.
    Certify,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Prescreen => "prescreen",
            Stage::Deflate => "deflate",
            Stage::Certify => "certify",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DropRecord {
    /// Persistent user label.
    pub user: usize,
    pub stage: Stage,
    /// `λ_min(Φ_q)` for prescreen drops, `t_q` otherwise.
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdmissionOptions {
    pub eps: f64,
    pub serve_tol: f64,
    pub prescreen: bool,
    /// Start each BCD run from the previous step's covariances.
    pub warm_start: bool,
    pub sinr_tol: f64,
    pub bcd: BcdSettings,
    pub jacob: JacobSettings,
}

impl Default for AdmissionOptions {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            serve_tol: SERVE_TOL,
            prescreen: true,
            warm_start: true,
            sinr_tol: SINR_TOL,
            bcd: BcdSettings::default(),
            jacob: JacobSettings::default(),
        }
    }
}

impl AdmissionOptions {
    pub fn with_eps(eps: f64) -> Self {
        Self { eps, ..Self::default() }
    }

    fn jacob_settings(&self) -> JacobSettings {
        JacobSettings { eps: self.eps, serve_tol: self.serve_tol, ..self.jacob }
    }

    fn bcd_settings(&self) -> BcdSettings {
        BcdSettings { eps: self.eps, serve_tol: self.serve_tol, ..self.bcd }
    }
}

#[derive(Clone, Debug)]
pub struct AdmissionResult {
    /// Labels of the admitted users, in scenario order.
    pub admitted: Vec<usize>,
    pub drops: Vec<DropRecord>,
    /// Scenario restricted to the admitted users.
    pub scenario: Scenario,
    /// One beamformer per admitted user, in the order of `scenario`.
    pub beams: BeamformerSet,
    /// Achieved SINR per admitted user.
    pub sinr: Vec<f64>,
    /// `λ₂/λ₁` of each admitted user's covariance at the last solve.
    pub rank_ratios: Vec<f64>,
    /// Relaxation solves performed (one per deflation step).
    pub solves: usize,
    /// BCD rounds summed over every deflation step.
    pub bcd_rounds: usize,
    /// Scalars broadcast over the backhaul in total.
    pub scalars_broadcast: usize,
    /// Interior-point iterations summed over every solve.
    pub solver_iterations: usize,
    pub last_trace: Option<BcdTrace>,
    /// Final beams come from the minimum-power directions rather than the
    /// last relaxation solve.
    pub refined: bool,
}

impl AdmissionResult {
    pub fn num_admitted(&self) -> usize {
        self.admitted.len()
    }

    pub fn dropped(&self, stage: Stage) -> impl Iterator<Item = &DropRecord> {
        self.drops.iter().filter(move |d| d.stage == stage)
    }
}

/// Position of the largest value, lowest position on ties.
fn argmax(values: &[f64]) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (q, &v)| match best {
            Some((_, b)) if v <= b => best,
            _ => Some((q, v)),
        })
        .map(|(q, _)| q)
}

/// Drops users while `Φ_q ⪰ 0` holds for every remaining user, removing the
/// one with the largest `λ_min(Φ_q)` each time.
pub fn prescreen(s: &Scenario, eps: f64) -> Result<(Scenario, Vec<DropRecord>)> {
    if !(eps > 0.0) {
        return Err(JacobError::Domain(format!("eps must be positive, got {eps}")));
    }
    let mut current = s.clone();
    let mut log = Vec::new();
    while current.num_users() > 0 {
        let lams = (0..current.num_users())
            .map(|q| Ok(model::min_eigenvalue(&model::phi_q(q, &current, eps)?)))
            .collect::<Result<Vec<f64>>>()?;
        if lams.iter().any(|&l| l < 0.0) {
            break;
        }
        let m = argmax(&lams).expect("non-empty");
        log.push(DropRecord { user: current.user(m).index, stage: Stage::Prescreen, value: lams[m] });
        current = current.without_users(&[m]);
    }
    Ok((current, log))
}

/// Minimum powers that give every user exactly its SINR request with the
/// beam directions held fixed, or `None` when no positive solution exists.
pub fn fixed_direction_powers(s: &Scenario, directions: &[CVector]) -> Option<Vec<f64>> {
    let k = s.num_users();
    if directions.len() != k {
        return None;
    }
    if k == 0 {
        return Some(Vec::new());
    }
    let mut a = DMatrix::<f64>::zeros(k, k);
    for q in 0..k {
        let u = s.user(q);
        for (m, d) in directions.iter().enumerate() {
            let h = &u.channels[s.cell_of(m)];
            let g = h.dotc(d).norm_sqr() / u.noise_power;
            a[(q, m)] = if m == q { g / u.threshold } else { -g };
        }
    }
    let p = a.lu().solve(&DVector::from_element(k, 1.0))?;
    if p.iter().all(|&v| v.is_finite() && v > 0.0) {
        Some(p.iter().copied().collect())
    } else {
        None
    }
}

/// Beam directions minimizing total transmit power subject to every SINR
/// request, from the uplink dual fixed point
/// `λ_q ← γ_q / (gᴴ (I + Σ_{m≠q} λ_m H_{i(q),m})⁻¹ g)` with `g = h_{i(q),q}/σ_q`.
/// Returns `None` when the iteration diverges (no feasible beamformers).
pub fn min_power_directions(s: &Scenario) -> Option<Vec<CVector>> {
    let k = s.num_users();
    let n = s.antennas();
    let g = |j: usize, q: usize| -> CVector {
        let u = s.user(q);
        u.channels[j].unscale(u.noise_power.sqrt())
    };
    let covariance = |q: usize, lambda: &[f64]| -> DMatrix<crate::linalg::C64> {
        let i = s.cell_of(q);
        let mut a = DMatrix::identity(n, n);
        for (m, &l) in lambda.iter().enumerate() {
            if m != q && l > 0.0 {
                let v = g(i, m);
                a += (&v * v.adjoint()).scale(l);
            }
        }
        a
    };
    let mut lambda = vec![0.0; k];
    for _ in 0..2000 {
        let mut next = Vec::with_capacity(k);
        for q in 0..k {
            let own = g(s.cell_of(q), q);
            let x = covariance(q, &lambda).cholesky()?.solve(&own);
            next.push(s.user(q).threshold / own.dotc(&x).re);
        }
        if next.iter().any(|v| !v.is_finite() || *v > 1e30) {
            return None;
        }
        let change = next
            .iter()
            .zip(&lambda)
            .map(|(a, b)| (a - b).abs() / a.abs().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        lambda = next;
        if change < 1e-12 {
            return (0..k)
                .map(|q| {
                    let x = covariance(q, &lambda).cholesky()?.solve(&g(s.cell_of(q), q));
                    Some(x.normalize())
                })
                .collect();
        }
    }
    None
}

/// Beamformers along the given directions with minimum powers, if they meet
/// every SINR request within budget.
fn certify(s: &Scenario, directions: &[Option<CVector>], sinr_tol: f64) -> Option<(BeamformerSet, Vec<f64>)> {
    let units: Vec<CVector> = directions
        .iter()
        .map(|d| d.as_ref().filter(|v| v.norm() > 0.0).map(|v| v.normalize()))
        .collect::<Option<_>>()?;
    let p = fixed_direction_powers(s, &units)?;
    let beams = BeamformerSet::new(units.iter().zip(&p).map(|(u, &pq)| Some(u.scale(pq.sqrt()))).collect());
    let mut per_cell = vec![0.0; s.num_bs()];
    for (q, &pq) in p.iter().enumerate() {
        per_cell[s.cell_of(q)] += pq;
    }
    if per_cell
        .iter()
        .zip(s.budgets())
        .any(|(&used, &budget)| used > budget * (1.0 + BUDGET_TOL))
    {
        return None;
    }
    let sinr = (0..s.num_users())
        .map(|q| model::sinr(q, &beams, s))
        .collect::<Result<Vec<f64>>>()
        .ok()?;
    if sinr.iter().enumerate().any(|(q, &v)| v < s.user(q).threshold * (1.0 - sinr_tol)) {
        return None;
    }
    Some((beams, sinr))
}

fn abort(err: JacobError, drops: &[DropRecord]) -> JacobError {
    let labels: Vec<String> = drops.iter().map(|d| format!("{}({})", d.user, d.stage)).collect();
    match err {
        JacobError::Solver { bs, message } => JacobError::Solver {
            bs,
            message: format!("{message}; dropped so far: [{}]", labels.join(", ")),
        },
        other => other,
    }
}

/// Prescreening (optional) followed by deflation.
///
/// Each step solves the relaxation for the remaining users. The loop stops
/// once every remaining user can be served within budget, either along the
/// solve's own beam directions or along [`min_power_directions`]; otherwise
/// the user with the largest `t_q` is dropped. Centralized mode only tries
/// this once every `t_q ≤ serve_tol`. In distributed mode
/// `t_q = max{0, f_q}` at the BCD fixed point.
pub fn deflate(s: &Scenario, mode: Mode, options: &AdmissionOptions) -> Result<AdmissionResult> {
    let (mut current, mut drops) = if options.prescreen {
        prescreen(s, options.eps)?
    } else {
        (s.clone(), Vec::new())
    };
    let zero_level = jacob::zero_power_level(s);
    let mut result = AdmissionResult {
        admitted: Vec::new(),
        drops: Vec::new(),
        scenario: current.clone(),
        beams: BeamformerSet::new(Vec::new()),
        sinr: Vec::new(),
        rank_ratios: Vec::new(),
        solves: 0,
        bcd_rounds: 0,
        scalars_broadcast: 0,
        solver_iterations: 0,
        last_trace: None,
        refined: false,
    };
    let mut warm: Option<Vec<crate::linalg::HermitianMatrix>> = None;

    while current.num_users() > 0 {
        let sol: JacobSolution = match mode {
            Mode::Centralized => {
                let sol = jacob::solve_l1(&current, &options.jacob_settings()).map_err(|e| abort(e, &drops))?;
                if !sol.is_optimal() {
                    return Err(abort(
                        JacobError::Solver {
                            bs: None,
                            message: format!("relaxation ended with {:?} ({} users)", sol.status, current.num_users()),
                        },
                        &drops,
                    ));
                }
                sol
            }
            Mode::Distributed => {
                let mut bus = InMemoryBus::new(current.num_bs());
                let init = if options.warm_start { warm.as_deref() } else { None };
                let (sol, trace) =
                    run_bcd(&current, &options.bcd_settings(), init, &mut bus).map_err(|e| abort(e, &drops))?;
                result.bcd_rounds += trace.rounds;
                result.scalars_broadcast += trace.scalars_broadcast;
                result.last_trace = Some(trace);
                sol
            }
        };
        result.solves += 1;
        result.solver_iterations += sol.solver_iterations;

        let recovery = jacob::recover_beamformers(&sol, zero_level);
        let attempt = match mode {
            Mode::Centralized if !sol.all_served() => None,
            _ => certify(&current, &recovery.beams.beams, options.sinr_tol)
                .map(|c| (c, false))
                .or_else(|| {
                    let dirs: Vec<Option<CVector>> = min_power_directions(&current)?.into_iter().map(Some).collect();
                    certify(&current, &dirs, options.sinr_tol).map(|c| (c, true))
                }),
        };
        if let Some(((beams, sinr), refined)) = attempt {
            result.refined = refined;
            result.admitted = current.users().iter().map(|u| u.index).collect();
            result.beams = beams;
            result.sinr = sinr;
            result.rank_ratios = recovery.rank_ratios;
            result.scenario = current;
            result.drops = drops;
            return Ok(result);
        }

        let stage = if sol.all_served() { Stage::Certify } else { Stage::Deflate };
        let m = argmax(&sol.t).expect("non-empty");
        drops.push(DropRecord { user: current.user(m).index, stage, value: sol.t[m] });
        current = current.without_users(&[m]);
        warm = Some(sol.w.into_iter().enumerate().filter(|&(q, _)| q != m).map(|(_, w)| w).collect());
    }

    result.scenario = current;
    result.drops = drops;
    Ok(result)
}
