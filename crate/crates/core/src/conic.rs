//! Solver for the one convex family every formulation in this crate maps to:
//!
//! ```text
//! minimize    Σ_b (½ c2_b s_b² + c1_b s_b) + Σ_m Tr(C_m W_m)
//! subject to  Σ_m Tr(A_{r,m} W_m) + Σ_b g_{r,b} s_b ≤ b_r     for every row r
//!             W_m ⪰ 0,  s_b ≥ 0 for nonnegative scalars
//! ```
//!
//! with complex Hermitian `W_m`. The method is an infeasible-start primal-dual
//! interior-point iteration (HKM search direction, Mehrotra predictor-corrector).
//! Every constraint matrix is held in factored form `Σ_k c_k g_k g_kᴴ`, which
//! makes the Schur complement cheap for the rank-one channel Gram matrices
//! that dominate the beamforming problems.
//!
//! Rows are equilibrated to unit norm before solving; all reported residuals
//! are measured on the caller's original data.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{JacobError, Result};
use crate::linalg::{CVector, HermitianMatrix, C64};

pub use crate::linalg::{hermitian_eig, psd_project, HermitianEigen};

/// Coefficient matrix of one variable in one constraint row.
#[derive(Clone, Debug, PartialEq)]
pub enum TermMatrix {
    Dense(HermitianMatrix),
    /// `scale · v vᴴ`
    Outer { vector: CVector, scale: f64 },
    /// `scale · I`
    Identity(f64),
}

impl TermMatrix {
    pub fn to_dense(&self, dim: usize) -> HermitianMatrix {
        match self {
            TermMatrix::Dense(h) => h.clone(),
            TermMatrix::Outer { vector, scale } => HermitianMatrix::outer(vector, *scale),
            TermMatrix::Identity(scale) => HermitianMatrix::scaled_identity(dim, *scale),
        }
    }

    /// `Tr(self · w)`
    pub fn trace_with(&self, w: &HermitianMatrix) -> f64 {
        match self {
            TermMatrix::Dense(h) => h.inner_product(w),
            TermMatrix::Outer { vector, scale } => scale * w.quadratic_form(vector),
            TermMatrix::Identity(scale) => scale * w.trace(),
        }
    }

    fn frobenius_sqr(&self, dim: usize) -> f64 {
        match self {
            TermMatrix::Dense(h) => h.frobenius_norm().powi(2),
            TermMatrix::Outer { vector, scale } => (scale * vector.norm_squared()).powi(2),
            TermMatrix::Identity(scale) => scale * scale * dim as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixTerm {
    pub var: usize,
    pub coef: TermMatrix,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Constraint {
    pub matrix_terms: Vec<MatrixTerm>,
    pub scalar_terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarVar {
    pub nonneg: bool,
    /// `c2_b ≥ 0`
    pub quad: f64,
    /// `c1_b`
    pub lin: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConicProblem {
    pub matrix_dims: Vec<usize>,
    pub matrix_costs: Vec<HermitianMatrix>,
    pub scalars: Vec<ScalarVar>,
    pub constraints: Vec<Constraint>,
}

impl ConicProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_matrix_var(&mut self, cost: HermitianMatrix) -> usize {
        self.matrix_dims.push(cost.dim());
        self.matrix_costs.push(cost);
        self.matrix_dims.len() - 1
    }

    pub fn add_scalar_var(&mut self, nonneg: bool, quad: f64, lin: f64) -> usize {
        self.scalars.push(ScalarVar { nonneg, quad, lin });
        self.scalars.len() - 1
    }

    pub fn add_constraint(&mut self, c: Constraint) -> usize {
        self.constraints.push(c);
        self.constraints.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.matrix_dims.is_empty() && self.scalars.is_empty() {
            return Err(JacobError::Domain("conic problem has no variables".into()));
        }
        if self.matrix_costs.len() != self.matrix_dims.len() {
            return Err(JacobError::Domain("one cost matrix per matrix variable required".into()));
        }
        for (m, (c, &d)) in self.matrix_costs.iter().zip(&self.matrix_dims).enumerate() {
            if c.dim() != d {
                return Err(JacobError::Domain(format!("cost {m} has wrong dimension")));
            }
        }
        for (b, s) in self.scalars.iter().enumerate() {
            if !(s.quad >= 0.0) || !s.lin.is_finite() || !s.quad.is_finite() {
                return Err(JacobError::Domain(format!("scalar {b} has invalid objective")));
            }
        }
        for (r, row) in self.constraints.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(JacobError::Domain(format!("row {r} has non-finite rhs")));
            }
            for t in &row.matrix_terms {
                let d = *self.matrix_dims.get(t.var).ok_or_else(|| {
                    JacobError::Domain(format!("row {r} references matrix var {}", t.var))
                })?;
                let ok = match &t.coef {
                    TermMatrix::Dense(h) => h.dim() == d,
                    TermMatrix::Outer { vector, scale } => vector.len() == d && scale.is_finite(),
                    TermMatrix::Identity(s) => s.is_finite(),
                };
                if !ok {
                    return Err(JacobError::Domain(format!("row {r} has a malformed term")));
                }
            }
            for &(b, g) in &row.scalar_terms {
                if b >= self.scalars.len() || !g.is_finite() {
                    return Err(JacobError::Domain(format!("row {r} references scalar {b}")));
                }
            }
        }
        Ok(())
    }

    /// Left-hand side of row `r` at the given point.
    pub fn row_value(&self, r: usize, matrices: &[HermitianMatrix], scalars: &[f64]) -> f64 {
        let row = &self.constraints[r];
        row.matrix_terms
            .iter()
            .map(|t| t.coef.trace_with(&matrices[t.var]))
            .sum::<f64>()
            + row.scalar_terms.iter().map(|&(b, g)| g * scalars[b]).sum::<f64>()
    }

    pub fn objective_value(&self, matrices: &[HermitianMatrix], scalars: &[f64]) -> f64 {
        self.matrix_costs
            .iter()
            .zip(matrices)
            .map(|(c, w)| c.inner_product(w))
            .sum::<f64>()
            + self
                .scalars
                .iter()
                .zip(scalars)
                .map(|(v, &x)| 0.5 * v.quad * x * x + v.lin * x)
                .sum::<f64>()
    }

    /// Largest constraint violation `max(0, row − b_r)/(1 + |b_r|)`.
    pub fn max_violation(&self, matrices: &[HermitianMatrix], scalars: &[f64]) -> f64 {
        (0..self.constraints.len())
            .map(|r| {
                let b = self.constraints[r].rhs;
                (self.row_value(r, matrices, scalars) - b).max(0.0) / (1.0 + b.abs())
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToleranceSettings {
    /// Bound on the normalized primal and dual residuals.
    pub feasibility: f64,
    /// Bound on the normalized complementarity (duality gap).
    pub gap: f64,
    pub max_iterations: usize,
    /// Residual bound under which an iterate that missed the targets above
    /// is still reported as [`SolveStatus::OptimalInaccurate`].
    pub inaccurate: f64,
}

impl Default for ToleranceSettings {
    fn default() -> Self {
        Self {
            feasibility: 1e-9,
            gap: 1e-9,
            max_iterations: 150,
            inaccurate: 1e-7,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    /// Stopped early with all residuals within `inaccurate`.
    OptimalInaccurate,
    MaxIterations,
    NumericalFailure,
}

impl SolveStatus {
    pub fn is_optimal(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::OptimalInaccurate)
    }
}

#[derive(Clone, Debug)]
pub struct ConicSolution {
    pub matrices: Vec<HermitianMatrix>,
    pub scalars: Vec<f64>,
    /// Multipliers of the inequality rows (nonnegative).
    pub duals: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    /// `max_r |b_r − row_r − slack_r| / (1 + |b_r|)`
    pub primal_residual: f64,
    /// Normalized stationarity residual.
    pub dual_residual: f64,
    /// Normalized complementarity `(ΣTr(W S) + Σ s μ + Σ z y) / (1 + |objective|)`.
    pub complementarity: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status.is_optimal()
    }

    pub fn kkt_residual(&self) -> f64 {
        self.primal_residual.max(self.dual_residual).max(self.complementarity)
    }
}

// ---------------------------------------------------------------------------
// internal representation

/// `A_{r,m} = Σ_k coefs[k] · g_k g_kᴴ` for all rows touching one block.
struct Block {
    dim: usize,
    cost: DMatrix<C64>,
    rows: Vec<usize>,
    coefs: Vec<f64>,
    /// dim × L, column k is g_k
    vecs: DMatrix<C64>,
}

struct ScalarCol {
    nonneg: bool,
    quad: f64,
    lin: f64,
    entries: Vec<(usize, f64)>,
}

struct Scaled {
    blocks: Vec<Block>,
    scalars: Vec<ScalarCol>,
    rhs: Vec<f64>,
    row_scale: Vec<f64>,
    obj_scale: f64,
    /// free scalars without curvature; solved through an augmented system
    free_linear: Vec<usize>,
}

#[derive(Clone)]
struct Iterate {
    w: Vec<DMatrix<C64>>,
    s: Vec<DMatrix<C64>>,
    x: Vec<f64>,
    mu: Vec<f64>,
    z: Vec<f64>,
    y: Vec<f64>,
}

struct Direction {
    dw: Vec<DMatrix<C64>>,
    ds: Vec<DMatrix<C64>>,
    dx: Vec<f64>,
    dmu: Vec<f64>,
    dz: Vec<f64>,
    dy: Vec<f64>,
}

struct Residuals {
    rp: Vec<f64>,
    rd_blocks: Vec<DMatrix<C64>>,
    rd_scalars: Vec<f64>,
    primal: f64,
    dual: f64,
    compl: f64,
    mu: f64,
    pobj: f64,
    dobj: f64,
}

fn herm_part(m: &DMatrix<C64>) -> DMatrix<C64> {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

fn re_trace_product(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    // Re Tr(A B) for Hermitian A, B
    a.iter().zip(b.iter()).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

fn factor_term(coef: &TermMatrix, dim: usize) -> Vec<(f64, CVector)> {
    match coef {
        TermMatrix::Outer { vector, scale } => vec![(*scale, vector.clone())],
        TermMatrix::Identity(scale) => (0..dim)
            .map(|i| {
                let mut e = CVector::zeros(dim);
                e[i] = C64::new(1.0, 0.0);
                (*scale, e)
            })
            .collect(),
        TermMatrix::Dense(h) => {
            let eig = h.eig();
            let big = eig.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            eig.values
                .iter()
                .enumerate()
                .filter(|(_, v)| v.abs() > 1e-15 * big)
                .map(|(k, &v)| (v, eig.vector(k)))
                .collect()
        }
    }
}

impl Scaled {
    fn build(p: &ConicProblem) -> Self {
        let nrows = p.constraints.len();
        let row_scale: Vec<f64> = p
            .constraints
            .iter()
            .map(|row| {
                let sq: f64 = row
                    .matrix_terms
                    .iter()
                    .map(|t| t.coef.frobenius_sqr(p.matrix_dims[t.var]))
                    .sum::<f64>()
                    + row.scalar_terms.iter().map(|(_, g)| g * g).sum::<f64>();
                if sq > 0.0 {
                    1.0 / sq.sqrt()
                } else {
                    1.0
                }
            })
            .collect();

        let cost_scale = p
            .matrix_costs
            .iter()
            .map(|c| c.frobenius_norm())
            .chain(p.scalars.iter().flat_map(|s| [s.quad, s.lin.abs()]))
            .fold(0.0_f64, f64::max);
        let obj_scale = if cost_scale > 1.0 { 1.0 / cost_scale } else { 1.0 };

        let mut per_block: Vec<Vec<(usize, f64, CVector)>> = vec![Vec::new(); p.matrix_dims.len()];
        let mut scalars: Vec<ScalarCol> = p
            .scalars
            .iter()
            .map(|s| ScalarCol {
                nonneg: s.nonneg,
                quad: s.quad * obj_scale,
                lin: s.lin * obj_scale,
                entries: Vec::new(),
            })
            .collect();
        for (r, row) in p.constraints.iter().enumerate() {
            for t in &row.matrix_terms {
                for (c, g) in factor_term(&t.coef, p.matrix_dims[t.var]) {
                    per_block[t.var].push((r, c * row_scale[r], g));
                }
            }
            for &(b, g) in &row.scalar_terms {
                scalars[b].entries.push((r, g * row_scale[r]));
            }
        }
        let blocks = per_block
            .into_iter()
            .enumerate()
            .map(|(m, factors)| {
                let dim = p.matrix_dims[m];
                let mut vecs = DMatrix::zeros(dim, factors.len());
                for (k, (_, _, g)) in factors.iter().enumerate() {
                    vecs.set_column(k, g);
                }
                Block {
                    dim,
                    cost: p.matrix_costs[m].as_matrix() * C64::new(obj_scale, 0.0),
                    rows: factors.iter().map(|f| f.0).collect(),
                    coefs: factors.iter().map(|f| f.1).collect(),
                    vecs,
                }
            })
            .collect();
        let free_linear = scalars
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.nonneg && s.quad == 0.0)
            .map(|(b, _)| b)
            .collect();
        let rhs = (0..nrows).map(|r| p.constraints[r].rhs * row_scale[r]).collect();
        Scaled {
            blocks,
            scalars,
            rhs,
            row_scale,
            obj_scale,
            free_linear,
        }
    }

    fn nrows(&self) -> usize {
        self.rhs.len()
    }

    /// rows[r] += Re Tr(A_{r,m} X) for block m
    fn apply_block(&self, m: usize, x: &DMatrix<C64>, out: &mut [f64]) {
        let blk = &self.blocks[m];
        if blk.rows.is_empty() {
            return;
        }
        let xg = x * &blk.vecs;
        for k in 0..blk.rows.len() {
            let mut acc = C64::new(0.0, 0.0);
            for i in 0..blk.dim {
                acc += blk.vecs[(i, k)].conj() * xg[(i, k)];
            }
            out[blk.rows[k]] += blk.coefs[k] * acc.re;
        }
    }

    /// Σ_r y_r A_{r,m}
    fn adjoint_block(&self, m: usize, y: &[f64]) -> DMatrix<C64> {
        let blk = &self.blocks[m];
        let mut scaled = blk.vecs.clone();
        for k in 0..blk.rows.len() {
            let f = C64::new(blk.coefs[k] * y[blk.rows[k]], 0.0);
            for i in 0..blk.dim {
                scaled[(i, k)] *= f;
            }
        }
        herm_part(&(scaled * blk.vecs.adjoint()))
    }

    fn residuals(&self, it: &Iterate, p: &ConicProblem) -> Residuals {
        let nrows = self.nrows();
        let mut ax = vec![0.0; nrows];
        for m in 0..self.blocks.len() {
            self.apply_block(m, &it.w[m], &mut ax);
        }
        let mut gty = vec![0.0; self.scalars.len()];
        for (b, col) in self.scalars.iter().enumerate() {
            for &(r, g) in &col.entries {
                ax[r] += g * it.x[b];
                gty[b] += g * it.y[r];
            }
        }
        let rp: Vec<f64> = (0..nrows).map(|r| self.rhs[r] - ax[r] - it.z[r]).collect();
        let rd_blocks: Vec<DMatrix<C64>> = (0..self.blocks.len())
            .map(|m| &self.blocks[m].cost + self.adjoint_block(m, &it.y) - &it.s[m])
            .collect();
        let rd_scalars: Vec<f64> = self
            .scalars
            .iter()
            .enumerate()
            .map(|(b, c)| c.quad * it.x[b] + c.lin + gty[b] - it.mu[b])
            .collect();

        // complementarity
        let mut comp = 0.0;
        let mut degree = 0usize;
        for m in 0..self.blocks.len() {
            comp += re_trace_product(&it.w[m], &it.s[m]);
            degree += self.blocks[m].dim;
        }
        for (b, c) in self.scalars.iter().enumerate() {
            if c.nonneg {
                comp += it.x[b] * it.mu[b];
                degree += 1;
            }
        }
        for r in 0..nrows {
            comp += it.z[r] * it.y[r];
        }
        degree += nrows;
        let mu = if degree > 0 { comp / degree as f64 } else { 0.0 };

        // measures in original units
        let primal = (0..nrows)
            .map(|r| (rp[r] / self.row_scale[r]).abs() / (1.0 + p.constraints[r].rhs.abs()))
            .fold(0.0, f64::max);
        let cost_norm = p
            .matrix_costs
            .iter()
            .map(|c| c.frobenius_norm())
            .chain(p.scalars.iter().map(|s| s.lin.abs()))
            .fold(0.0_f64, f64::max);
        let dual_abs = rd_blocks
            .iter()
            .map(|r| r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
            .chain(rd_scalars.iter().map(|v| v.abs()))
            .fold(0.0, f64::max)
            / self.obj_scale;
        let dual = dual_abs / (1.0 + cost_norm);

        let wmats: Vec<HermitianMatrix> = it.w.iter().map(|w| HermitianMatrix::symmetrized(w.clone())).collect();
        let pobj = p.objective_value(&wmats, &it.x);
        let dobj = -(0..nrows)
            .map(|r| p.constraints[r].rhs * it.y[r] * self.row_scale[r] / self.obj_scale)
            .sum::<f64>()
            - p.scalars
                .iter()
                .zip(&it.x)
                .map(|(s, &x)| 0.5 * s.quad * x * x)
                .sum::<f64>();
        let compl = comp / self.obj_scale / (1.0 + pobj.abs());

        Residuals {
            rp,
            rd_blocks,
            rd_scalars,
            primal,
            dual,
            compl,
            mu,
            pobj,
            dobj,
        }
    }
}

struct NewtonSystem {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    s_inv: Vec<DMatrix<C64>>,
    /// D_b for scalars that are eliminated
    diag: Vec<f64>,
}

impl Scaled {
    fn newton_system(&self, it: &Iterate) -> Option<NewtonSystem> {
        let nrows = self.nrows();
        let nfree = self.free_linear.len();
        let size = nrows + nfree;
        let mut k = DMatrix::<f64>::zeros(size, size);
        let mut s_inv = Vec::with_capacity(self.blocks.len());

        for (m, blk) in self.blocks.iter().enumerate() {
            let chol = Cholesky::new(it.s[m].clone())?;
            let inv = herm_part(&chol.inverse());
            if !blk.rows.is_empty() {
                let p = blk.vecs.adjoint() * (&it.w[m] * &blk.vecs);
                let q = blk.vecs.adjoint() * (&inv * &blk.vecs);
                let l = blk.rows.len();
                for a in 0..l {
                    for b in 0..l {
                        let e = (p[(a, b)] * q[(b, a)]).re * blk.coefs[a] * blk.coefs[b];
                        k[(blk.rows[a], blk.rows[b])] += e;
                    }
                }
            }
            s_inv.push(inv);
        }

        let mut diag = vec![0.0; self.scalars.len()];
        for (b, col) in self.scalars.iter().enumerate() {
            let d = if col.nonneg {
                col.quad + it.mu[b] / it.x[b]
            } else if col.quad > 0.0 {
                col.quad
            } else {
                continue;
            };
            diag[b] = d;
            for &(r1, g1) in &col.entries {
                for &(r2, g2) in &col.entries {
                    k[(r1, r2)] += g1 * g2 / d;
                }
            }
        }
        for r in 0..nrows {
            k[(r, r)] += it.z[r] / it.y[r];
        }
        for (f, &b) in self.free_linear.iter().enumerate() {
            for &(r, g) in &self.scalars[b].entries {
                k[(r, nrows + f)] -= g;
                k[(nrows + f, r)] += g;
            }
        }
        if k.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(NewtonSystem {
            lu: k.lu(),
            s_inv,
            diag,
        })
    }

    fn direction(
        &self,
        it: &Iterate,
        res: &Residuals,
        sys: &NewtonSystem,
        tau: f64,
        corr: Option<&Direction>,
    ) -> Option<Direction> {
        let nrows = self.nrows();
        let nb = self.blocks.len();

        let mut rc = Vec::with_capacity(nb);
        let mut rhs = DVector::<f64>::zeros(nrows + self.free_linear.len());
        let mut ax0 = vec![0.0; nrows];
        for m in 0..nb {
            let n = self.blocks[m].dim;
            let mut target = DMatrix::<C64>::identity(n, n) * C64::new(tau, 0.0);
            if let Some(c) = corr {
                target -= &c.dw[m] * &c.ds[m];
            }
            let rcm = target * &sys.s_inv[m] - &it.w[m];
            let x0 = &rcm - &it.w[m] * &res.rd_blocks[m] * &sys.s_inv[m];
            self.apply_block(m, &herm_part(&x0), &mut ax0);
            rc.push(rcm);
        }
        for r in 0..nrows {
            let mut kappa = tau - it.z[r] * it.y[r];
            if let Some(c) = corr {
                kappa -= c.dz[r] * c.dy[r];
            }
            rhs[r] = ax0[r] + kappa / it.y[r] - res.rp[r];
        }
        let mut rho = vec![0.0; self.scalars.len()];
        let mut kappa_s = vec![0.0; self.scalars.len()];
        for (b, col) in self.scalars.iter().enumerate() {
            if col.nonneg {
                let mut kappa = tau - it.x[b] * it.mu[b];
                if let Some(c) = corr {
                    kappa -= c.dx[b] * c.dmu[b];
                }
                kappa_s[b] = kappa;
                rho[b] = -res.rd_scalars[b] + kappa / it.x[b];
            } else if col.quad > 0.0 {
                rho[b] = -res.rd_scalars[b];
            } else {
                continue;
            }
            for &(r, g) in &col.entries {
                rhs[r] += g * rho[b] / sys.diag[b];
            }
        }
        for (f, &b) in self.free_linear.iter().enumerate() {
            rhs[nrows + f] = -res.rd_scalars[b];
        }

        let sol = if rhs.is_empty() { rhs } else { sys.lu.solve(&rhs)? };
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let dy: Vec<f64> = (0..nrows).map(|r| sol[r]).collect();

        let mut dx = vec![0.0; self.scalars.len()];
        let mut dmu = vec![0.0; self.scalars.len()];
        for (b, col) in self.scalars.iter().enumerate() {
            if let Some(f) = self.free_linear.iter().position(|&v| v == b) {
                dx[b] = sol[nrows + f];
                continue;
            }
            let gty: f64 = col.entries.iter().map(|&(r, g)| g * dy[r]).sum();
            dx[b] = (rho[b] - gty) / sys.diag[b];
            if col.nonneg {
                dmu[b] = (kappa_s[b] - it.mu[b] * dx[b]) / it.x[b];
            }
        }
        let dz: Vec<f64> = (0..nrows)
            .map(|r| {
                let mut kappa = tau - it.z[r] * it.y[r];
                if let Some(c) = corr {
                    kappa -= c.dz[r] * c.dy[r];
                }
                (kappa - it.z[r] * dy[r]) / it.y[r]
            })
            .collect();
        let mut dw = Vec::with_capacity(nb);
        let mut ds = Vec::with_capacity(nb);
        for m in 0..nb {
            let dsm = herm_part(&(&res.rd_blocks[m] + self.adjoint_block(m, &dy)));
            let dwm = herm_part(&(&rc[m] - &it.w[m] * &dsm * &sys.s_inv[m]));
            dw.push(dwm);
            ds.push(dsm);
        }
        Some(Direction { dw, ds, dx, dmu, dz, dy })
    }
}

/// Largest α with `X + α·dX ⪰ 0`; infinite when dX does not decrease X.
fn psd_step(x: &DMatrix<C64>, dx: &DMatrix<C64>) -> f64 {
    let Some(chol) = Cholesky::new(x.clone()) else {
        return 0.0;
    };
    let l = chol.l();
    let Some(a) = l.solve_lower_triangular(dx) else {
        return 0.0;
    };
    let Some(z) = l.solve_lower_triangular(&a.adjoint()) else {
        return 0.0;
    };
    let lam = crate::linalg::min_eigenvalue(&HermitianMatrix::symmetrized(z));
    if lam < 0.0 {
        -1.0 / lam
    } else {
        f64::INFINITY
    }
}

fn vec_step(x: &[f64], dx: &[f64], mask: impl Fn(usize) -> bool) -> f64 {
    let mut alpha = f64::INFINITY;
    for i in 0..x.len() {
        if mask(i) && dx[i] < 0.0 {
            alpha = alpha.min(-x[i] / dx[i]);
        }
    }
    alpha
}

impl Scaled {
    fn max_step(&self, it: &Iterate, d: &Direction) -> f64 {
        let mut a = f64::INFINITY;
        for m in 0..self.blocks.len() {
            a = a.min(psd_step(&it.w[m], &d.dw[m]));
            a = a.min(psd_step(&it.s[m], &d.ds[m]));
        }
        let nonneg = |b: usize| self.scalars[b].nonneg;
        a = a.min(vec_step(&it.x, &d.dx, nonneg));
        a = a.min(vec_step(&it.mu, &d.dmu, nonneg));
        a = a.min(vec_step(&it.z, &d.dz, |_| true));
        a = a.min(vec_step(&it.y, &d.dy, |_| true));
        a
    }

    fn complementarity_after(&self, it: &Iterate, d: &Direction, alpha: f64) -> f64 {
        let mut comp = 0.0;
        let mut degree = 0usize;
        for m in 0..self.blocks.len() {
            let w = &it.w[m] + &d.dw[m] * C64::new(alpha, 0.0);
            let s = &it.s[m] + &d.ds[m] * C64::new(alpha, 0.0);
            comp += re_trace_product(&w, &s);
            degree += self.blocks[m].dim;
        }
        for (b, c) in self.scalars.iter().enumerate() {
            if c.nonneg {
                comp += (it.x[b] + alpha * d.dx[b]) * (it.mu[b] + alpha * d.dmu[b]);
                degree += 1;
            }
        }
        for r in 0..self.nrows() {
            comp += (it.z[r] + alpha * d.dz[r]) * (it.y[r] + alpha * d.dy[r]);
        }
        degree += self.nrows();
        comp / degree.max(1) as f64
    }
}

fn take_step(it: &mut Iterate, d: &Direction, alpha: f64) {
    let a = C64::new(alpha, 0.0);
    for m in 0..it.w.len() {
        it.w[m] = herm_part(&(&it.w[m] + &d.dw[m] * a));
        it.s[m] = herm_part(&(&it.s[m] + &d.ds[m] * a));
    }
    for b in 0..it.x.len() {
        it.x[b] += alpha * d.dx[b];
        it.mu[b] += alpha * d.dmu[b];
    }
    for r in 0..it.z.len() {
        it.z[r] += alpha * d.dz[r];
        it.y[r] += alpha * d.dy[r];
    }
}

/// Solves a [`ConicProblem`].
///
/// Returns `Err` only for malformed problems; numerical trouble and iteration
/// caps are reported through [`ConicSolution::status`].
pub fn solve(p: &ConicProblem, tol: &ToleranceSettings) -> Result<ConicSolution> {
    p.validate()?;
    let sc = Scaled::build(p);
    let nrows = sc.nrows();

    let mut it = Iterate {
        w: sc.blocks.iter().map(|b| DMatrix::identity(b.dim, b.dim)).collect(),
        s: sc.blocks.iter().map(|b| DMatrix::identity(b.dim, b.dim)).collect(),
        x: sc.scalars.iter().map(|c| if c.nonneg { 1.0 } else { 0.0 }).collect(),
        mu: sc.scalars.iter().map(|c| if c.nonneg { 1.0 } else { 0.0 }).collect(),
        z: vec![1.0; nrows],
        y: vec![1.0; nrows],
    };

    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    let mut res = sc.residuals(&it, p);
    let mut best: Option<(f64, Iterate)> = None;
    let mut stalls = 0;

    for k in 0..=tol.max_iterations {
        iterations = k;
        let merit = res.primal.max(res.dual) / tol.feasibility.max(f64::MIN_POSITIVE);
        let merit = merit.max(res.compl / tol.gap.max(f64::MIN_POSITIVE));
        if !merit.is_finite() {
            status = SolveStatus::NumericalFailure;
            break;
        }
        if best.as_ref().is_none_or(|(m, _)| merit < *m) {
            best = Some((merit, it.clone()));
        }
        if res.primal <= tol.feasibility && res.dual <= tol.feasibility && res.compl <= tol.gap {
            status = SolveStatus::Optimal;
            best = None;
            break;
        }
        if k == tol.max_iterations {
            break;
        }

        let Some(sys) = sc.newton_system(&it) else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        let Some(aff) = sc.direction(&it, &res, &sys, 0.0, None) else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        let alpha_aff = sc.max_step(&it, &aff).min(1.0);
        let mu_aff = sc.complementarity_after(&it, &aff, alpha_aff);
        let sigma = if res.mu > 0.0 { (mu_aff / res.mu).clamp(0.0, 1.0).powi(3) } else { 0.0 };
        let Some(dir) = sc.direction(&it, &res, &sys, sigma * res.mu, Some(&aff)) else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        let alpha = (0.99 * sc.max_step(&it, &dir)).min(1.0);
        if !alpha.is_finite() || alpha <= 0.0 {
            status = SolveStatus::NumericalFailure;
            break;
        }
        take_step(&mut it, &dir, alpha);
        res = sc.residuals(&it, p);

        if alpha < 1e-8 {
            stalls += 1;
            if stalls >= 5 {
                break;
            }
        } else {
            stalls = 0;
        }
    }

    if status != SolveStatus::Optimal {
        if let Some((_, b)) = best {
            it = b;
            res = sc.residuals(&it, p);
        }
        if res.primal.max(res.dual).max(res.compl) <= tol.inaccurate {
            status = SolveStatus::OptimalInaccurate;
        }
    }

    let matrices: Vec<HermitianMatrix> = it
        .w
        .iter()
        .map(|w| HermitianMatrix::symmetrized(w.clone()))
        .collect();
    let duals = (0..nrows)
        .map(|r| it.y[r] * sc.row_scale[r] / sc.obj_scale)
        .collect();
    Ok(ConicSolution {
        matrices,
        scalars: it.x,
        duals,
        objective: res.pobj,
        dual_objective: res.dobj,
        primal_residual: res.primal,
        dual_residual: res.dual,
        complementarity: res.compl,
        iterations,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cv(v: &[(f64, f64)]) -> CVector {
        CVector::from_iterator(v.len(), v.iter().map(|&(a, b)| C64::new(a, b)))
    }

    #[test]
    fn trace_minimization_goes_to_zero() {
        let mut p = ConicProblem::new();
        p.add_matrix_var(HermitianMatrix::identity(3));
        let sol = solve(&p, &ToleranceSettings::default()).unwrap();
        assert!(sol.is_optimal(), "{:?}", sol.status);
        assert!(sol.objective.abs() < 1e-8);
        assert!(sol.matrices[0].trace() < 1e-8);
    }

    #[test]
    fn matched_filter_power() {
        let h = cv(&[(1.0, 0.5), (-0.3, 0.2)]);
        let sigma2 = 0.5;
        let gamma = 2.0;
        let mut p = ConicProblem::new();
        let w = p.add_matrix_var(HermitianMatrix::identity(2));
        // Tr(H W) >= gamma  <=>  -Tr(H W) <= -gamma
        p.add_constraint(Constraint {
            matrix_terms: vec![MatrixTerm {
                var: w,
                coef: TermMatrix::Outer { vector: h.clone(), scale: -1.0 / sigma2 },
            }],
            scalar_terms: vec![],
            rhs: -gamma,
        });
        let sol = solve(&p, &ToleranceSettings::default()).unwrap();
        assert!(sol.is_optimal());
        let expected = gamma * sigma2 / h.norm_squared();
        assert!((sol.objective - expected).abs() < 1e-8 * expected);
        let eig = sol.matrices[0].eig();
        assert!(eig.values[0] / eig.values[1] < 1e-6);
    }

    #[test]
    fn huber_epigraph() {
        for &x in &[-2.0, 0.0, 0.3, 1.0, 4.0] {
            let mut p = ConicProblem::new();
            let u = p.add_scalar_var(true, 1.0, 0.0);
            let v = p.add_scalar_var(true, 0.0, 1.0);
            p.add_constraint(Constraint {
                matrix_terms: vec![],
                scalar_terms: vec![(u, -1.0), (v, -1.0)],
                rhs: -x,
            });
            let sol = solve(&p, &ToleranceSettings::default()).unwrap();
            assert!(sol.is_optimal());
            assert!((sol.objective - crate::jacob::huber(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn free_scalars() {
        // min 0.5 s^2 - 2 s + t  s.t. t >= 3,  t <= 5,  s free, t free
        let mut p = ConicProblem::new();
        let s = p.add_scalar_var(false, 1.0, -2.0);
        let t = p.add_scalar_var(false, 0.0, 1.0);
        p.add_constraint(Constraint { matrix_terms: vec![], scalar_terms: vec![(t, -1.0)], rhs: -3.0 });
        p.add_constraint(Constraint { matrix_terms: vec![], scalar_terms: vec![(t, 1.0)], rhs: 5.0 });
        let sol = solve(&p, &ToleranceSettings::default()).unwrap();
        assert!(sol.is_optimal(), "{:?}", sol);
        assert!((sol.scalars[s] - 2.0).abs() < 1e-7);
        assert!((sol.scalars[t] - 3.0).abs() < 1e-7);
        assert!((sol.objective - 1.0).abs() < 1e-7);
    }

    #[test]
    fn early_stop_within_relaxed_bound() {
        let h = cv(&[(1.0, 0.5), (-0.3, 0.2)]);
        let mut p = ConicProblem::new();
        let w = p.add_matrix_var(HermitianMatrix::identity(2));
        p.add_constraint(Constraint {
            matrix_terms: vec![MatrixTerm { var: w, coef: TermMatrix::Outer { vector: h, scale: -1.0 } }],
            scalar_terms: vec![],
            rhs: -1.0,
        });
        let full = solve(&p, &ToleranceSettings::default()).unwrap();
        let k = (1..full.iterations)
            .find(|&k| {
                let tol = ToleranceSettings { max_iterations: k, ..ToleranceSettings::default() };
                solve(&p, &tol).unwrap().kkt_residual() <= 1e-7
            })
            .unwrap();
        let tol = ToleranceSettings { max_iterations: k, ..ToleranceSettings::default() };
        let early = solve(&p, &tol).unwrap();
        assert_eq!(early.status, SolveStatus::OptimalInaccurate);
        assert!(early.kkt_residual() > 1e-9);
        let strict = ToleranceSettings { inaccurate: 0.0, ..tol };
        assert_eq!(solve(&p, &strict).unwrap().status, SolveStatus::MaxIterations);
    }

    #[test]
    fn rejects_malformed() {
        assert!(solve(&ConicProblem::new(), &ToleranceSettings::default()).is_err());
        let mut p = ConicProblem::new();
        p.add_matrix_var(HermitianMatrix::identity(2));
        p.add_constraint(Constraint {
            matrix_terms: vec![MatrixTerm { var: 3, coef: TermMatrix::Identity(1.0) }],
            scalar_terms: vec![],
            rhs: 1.0,
        });
        assert!(solve(&p, &ToleranceSettings::default()).is_err());
    }
}
