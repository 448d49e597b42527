#![allow(dead_code)]

use jacob::conic::{ConicProblem, Constraint, MatrixTerm, TermMatrix};
use jacob::jacob::{cobf_feasible, Feasibility, JacobSettings};
use jacob::model::UserRecord;
use jacob::{CVector, HermitianMatrix, Scenario, C64};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha20Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_vector(rng: &mut ChaCha20Rng, n: usize, scale: f64) -> CVector {
    CVector::from_iterator(n, (0..n).map(|_| C64::new(gaussian(rng), gaussian(rng)) * scale))
}

pub fn random_hermitian(rng: &mut ChaCha20Rng, n: usize, scale: f64) -> HermitianMatrix {
    let a = DMatrix::from_fn(n, n, |_, _| C64::new(gaussian(rng), gaussian(rng)));
    HermitianMatrix::from_matrix((&a + a.adjoint()).scale(0.5 * scale)).unwrap()
}

/// Eigenvalues of a 2×2 Hermitian matrix from the characteristic polynomial.
pub fn eig2(h: &HermitianMatrix) -> (f64, f64) {
    let m = h.as_matrix();
    let (a, d, b) = (m[(0, 0)].re, m[(1, 1)].re, m[(0, 1)]);
    let mid = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
    (mid - rad, mid + rad)
}

/// Ascending eigenvalues from nalgebra's own Hermitian eigensolver.
pub fn reference_eigenvalues(h: &HermitianMatrix) -> Vec<f64> {
    let e = SymmetricEigen::new(h.as_matrix().clone());
    let mut v: Vec<f64> = e.eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

/// Projection of `x` onto `{λ ≥ 0, Σλ ≤ r}`.
fn project_capped_simplex(x: &[f64], r: f64) -> Vec<f64> {
    let clipped: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= r {
        return clipped;
    }
    // bisection on the shift θ with Σ max(0, x − θ) = r
    let (mut lo, mut hi) = (0.0, x.iter().cloned().fold(0.0, f64::max));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let s: f64 = x.iter().map(|v| (v - mid).max(0.0)).sum();
        if s > r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    x.iter().map(|v| (v - hi).max(0.0)).collect()
}

/// Frobenius projection onto `{W ⪰ 0, Tr(W) ≤ r}`.
pub fn project_psd_trace(m: &DMatrix<C64>, r: f64) -> DMatrix<C64> {
    let sym = (m + m.adjoint()).scale(0.5);
    let e = SymmetricEigen::new(sym);
    let vals: Vec<f64> = e.eigenvalues.iter().copied().collect();
    let p = project_capped_simplex(&vals, r);
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (k, &l) in p.iter().enumerate() {
        let v = e.eigenvectors.column(k);
        out += (v * v.adjoint()).scale(l);
    }
    out
}

fn huber(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x <= 1.0 {
        0.5 * x * x
    } else {
        x - 0.5
    }
}

fn re_tr(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    a.iter().zip(b.transpose().iter()).map(|(x, y)| (x * y).re).sum()
}

/// `min Σ_k Tr(C_k W_k) + Σ_j h(Σ_k Tr(A_jk W_k) − b_j)` over
/// `W_k ⪰ 0, Tr(W_k) ≤ R_k`.
#[derive(Clone, Debug)]
pub struct SmoothInstance {
    pub costs: Vec<DMatrix<C64>>,
    pub rows: Vec<(Vec<DMatrix<C64>>, f64)>,
    pub radii: Vec<f64>,
}

impl SmoothInstance {
    pub fn random(rng: &mut ChaCha20Rng) -> Self {
        let k = rng.random_range(1..=3);
        let j = rng.random_range(1..=3);
        let costs = (0..k).map(|_| random_hermitian(rng, 2, 1.0).into_matrix()).collect();
        let rows = (0..j)
            .map(|_| {
                (
                    (0..k).map(|_| random_hermitian(rng, 2, 1.0).into_matrix()).collect(),
                    2.0 * gaussian(rng),
                )
            })
            .collect();
        let radii = (0..k).map(|_| rng.random_range(0.5..3.0)).collect();
        Self { costs, rows, radii }
    }

    pub fn objective(&self, w: &[DMatrix<C64>]) -> f64 {
        let lin: f64 = self.costs.iter().zip(w).map(|(c, x)| re_tr(c, x)).sum();
        lin + self
            .rows
            .iter()
            .map(|(a, b)| huber(a.iter().zip(w).map(|(ak, x)| re_tr(ak, x)).sum::<f64>() - b))
            .sum::<f64>()
    }

    fn gradient(&self, w: &[DMatrix<C64>]) -> Vec<DMatrix<C64>> {
        let mut g = self.costs.clone();
        for (a, b) in &self.rows {
            let x: f64 = a.iter().zip(w).map(|(ak, xk)| re_tr(ak, xk)).sum::<f64>() - b;
            let d = x.clamp(0.0, 1.0);
            for (gk, ak) in g.iter_mut().zip(a) {
                *gk += ak.scale(d);
            }
        }
        g
    }

    /// Accelerated projected gradient with adaptive restart.
    pub fn reference_solve(&self, iterations: usize) -> f64 {
        let lip: f64 = self
            .rows
            .iter()
            .map(|(a, _)| a.iter().map(|m| m.norm_squared()).sum::<f64>())
            .sum::<f64>()
            .max(1e-12);
        let step = 1.0 / lip;
        let zero: Vec<DMatrix<C64>> = self.costs.iter().map(|c| DMatrix::zeros(c.nrows(), c.ncols())).collect();
        let mut x = zero.clone();
        let mut y = zero;
        let mut t = 1.0f64;
        let mut best = self.objective(&x);
        let mut prev = best;
        for _ in 0..iterations {
            let g = self.gradient(&y);
            let next: Vec<DMatrix<C64>> = y
                .iter()
                .zip(&g)
                .zip(&self.radii)
                .map(|((yk, gk), &r)| project_psd_trace(&(yk - gk.scale(step)), r))
                .collect();
            let f = self.objective(&next);
            best = best.min(f);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            if f > prev {
                t = 1.0;
                y = x.clone();
                prev = self.objective(&x);
                continue;
            }
            let beta = (t - 1.0) / t_next;
            y = next.iter().zip(&x).map(|(n, o)| n + (n - o).scale(beta)).collect();
            x = next;
            t = t_next;
            prev = f;
        }
        best
    }

    /// The same instance in the conic solver's format.
    pub fn to_conic(&self) -> ConicProblem {
        let mut p = ConicProblem::new();
        for c in &self.costs {
            p.add_matrix_var(HermitianMatrix::from_matrix(c.clone()).unwrap());
        }
        for (j, (a, b)) in self.rows.iter().enumerate() {
            p.add_scalar_var(true, 1.0, 0.0);
            p.add_scalar_var(true, 0.0, 1.0);
            p.add_constraint(Constraint {
                matrix_terms: a
                    .iter()
                    .enumerate()
                    .map(|(k, m)| MatrixTerm {
                        var: k,
                        coef: TermMatrix::Dense(HermitianMatrix::from_matrix(m.clone()).unwrap()),
                    })
                    .collect(),
                scalar_terms: vec![(2 * j, -1.0), (2 * j + 1, -1.0)],
                rhs: *b,
            });
        }
        for (k, &r) in self.radii.iter().enumerate() {
            p.add_constraint(Constraint {
                matrix_terms: vec![MatrixTerm { var: k, coef: TermMatrix::Identity(1.0) }],
                scalar_terms: vec![],
                rhs: r,
            });
        }
        p
    }
}

/// Scenario with i.i.d. CN(0, s²) channels on a line of BSs.
pub fn random_scenario(
    rng: &mut ChaCha20Rng,
    num_bs: usize,
    antennas: usize,
    users_per_cell: usize,
    gamma: f64,
    budget: f64,
) -> Scenario {
    let mut users = Vec::new();
    for cell in 0..num_bs {
        for _ in 0..users_per_cell {
            let channels = (0..num_bs)
                .map(|j| random_vector(rng, antennas, if j == cell { 1.0 } else { 0.3 }))
                .collect();
            users.push(UserRecord {
                index: users.len(),
                cell,
                channels,
                noise_power: 0.1,
                threshold: gamma,
            });
        }
    }
    Scenario::new(antennas, (0..num_bs).map(|i| (i as f64, 0.0)).collect(), vec![budget; num_bs], users).unwrap()
}

/// Size of the largest subset of users for which the CoBF problem is
/// feasible, by exhaustive enumeration.
pub fn max_admissible(s: &Scenario, settings: &JacobSettings) -> usize {
    let k = s.num_users();
    let mut best = 0;
    for mask in 1u32..(1 << k) {
        let size = mask.count_ones() as usize;
        if size <= best {
            continue;
        }
        let subset: Vec<usize> = (0..k).filter(|q| mask & (1 << q) != 0).collect();
        if cobf_feasible(&s.subset(&subset), settings).unwrap() == Feasibility::Feasible {
            best = size;
        }
    }
    best
}

/// Zero-forcing beamformers meeting every SINR request exactly, or `None`
/// when some own channel lies in the span of the channels to be nulled.
pub fn zero_forcing(s: &Scenario) -> Option<Vec<CVector>> {
    let k = s.num_users();
    let n = s.antennas();
    (0..k)
        .map(|q| {
            let i = s.cell_of(q);
            let own = s.user(q).channels[i].clone();
            let mut basis: Vec<CVector> = Vec::new();
            for m in (0..k).filter(|&m| m != q) {
                let mut v = s.user(m).channels[i].clone();
                for b in &basis {
                    let c = b.dotc(&v);
                    v -= b * c;
                }
                if v.norm() > 1e-10 {
                    basis.push(v.normalize());
                }
            }
            let mut d = own.clone();
            for b in &basis {
                let c = b.dotc(&d);
                d -= b * c;
            }
            if d.norm() < 1e-8 || basis.len() >= n {
                return None;
            }
            let u = d.normalize();
            let gain = own.dotc(&u).norm_sqr();
            let p = s.user(q).threshold * s.user(q).noise_power / gain;
            Some(u.scale(p.sqrt()))
        })
        .collect()
}
