//! Dense Hermitian matrices and the cyclic Jacobi eigensolver.
//!
//! Every matrix in this crate is tiny (N ≤ 8 antennas), so the representation
//! is a plain dense `nalgebra` matrix and the eigensolver is the textbook
//! complex Jacobi iteration.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{JacobError, Result};

pub type C64 = Complex64;
pub type CVector = DVector<C64>;

/// Tolerance used when validating Hermitian symmetry of caller input.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Off-diagonal mass (relative to the Frobenius norm) at which Jacobi stops.
const JACOBI_TOL: f64 = 1e-14;
const JACOBI_MAX_SWEEPS: usize = 100;

/// An N×N complex Hermitian matrix.
///
/// Construction symmetrizes the input as `(A + Aᴴ)/2`, so the stored entries
/// satisfy `a[i][j] == conj(a[j][i])` exactly and the diagonal is real.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix {
    inner: DMatrix<C64>,
}

impl HermitianMatrix {
    /// Builds a Hermitian matrix from a square complex matrix, averaging it
    /// with its conjugate transpose.
    pub fn from_matrix(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() == 0 || m.nrows() != m.ncols() {
            return Err(JacobError::Domain(format!(
                "hermitian matrix must be square with dim >= 1, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(JacobError::Domain("hermitian matrix has non-finite entries".into()));
        }
        Ok(Self::symmetrized(m))
    }

    /// Like [`from_matrix`](Self::from_matrix), but rejects input that is not
    /// already Hermitian within [`HERMITIAN_TOL`] (relative to its largest entry).
    pub fn try_new(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() == m.ncols() && m.nrows() > 0 {
            let scale = m.iter().map(|z| z.norm()).fold(1.0_f64, f64::max);
            let n = m.nrows();
            for i in 0..n {
                for j in 0..=i {
                    if (m[(i, j)] - m[(j, i)].conj()).norm() > HERMITIAN_TOL * scale {
                        return Err(JacobError::Domain(format!(
                            "matrix is not hermitian at ({i}, {j})"
                        )));
                    }
                }
            }
        }
        Self::from_matrix(m)
    }

    pub(crate) fn symmetrized(m: DMatrix<C64>) -> Self {
        let n = m.nrows();
        let mut out = m;
        for i in 0..n {
            out[(i, i)] = C64::new(out[(i, i)].re, 0.0);
            for j in 0..i {
                let avg = (out[(i, j)] + out[(j, i)].conj()) * 0.5;
                out[(i, j)] = avg;
                out[(j, i)] = avg.conj();
            }
        }
        Self { inner: out }
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be positive");
        Self { inner: DMatrix::zeros(dim, dim) }
    }

    pub fn identity(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be positive");
        Self { inner: DMatrix::identity(dim, dim) }
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        let mut m = Self::identity(dim);
        m.scale_mut(scale);
        m
    }

    /// `scale · v vᴴ`
    pub fn outer(v: &CVector, scale: f64) -> Self {
        let mut m = v * v.adjoint();
        m *= C64::new(scale, 0.0);
        Self::symmetrized(m)
    }

    /// Real diagonal matrix.
    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = C64::new(v, 0.0);
        }
        Self { inner: m }
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<C64> {
        &self.inner
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.inner
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.inner[(row, col)]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.inner[(i, i)].re).sum()
    }

    /// `Tr(self · other)`, real for Hermitian arguments.
    pub fn inner_product(&self, other: &HermitianMatrix) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.inner
            .iter()
            .zip(other.inner.iter())
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    /// `vᴴ · self · v`
    pub fn quadratic_form(&self, v: &CVector) -> f64 {
        let av = &self.inner * v;
        v.dotc(&av).re
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.inner.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn scale_mut(&mut self, alpha: f64) {
        self.inner *= C64::new(alpha, 0.0);
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut m = self.clone();
        m.scale_mut(alpha);
        m
    }

    /// `self += alpha · other`
    pub fn add_scaled(&mut self, other: &HermitianMatrix, alpha: f64) {
        debug_assert_eq!(self.dim(), other.dim());
        let a = C64::new(alpha, 0.0);
        for (x, y) in self.inner.iter_mut().zip(other.inner.iter()) {
            *x += a * y;
        }
    }

    /// `self += alpha · v vᴴ`
    pub fn add_outer(&mut self, v: &CVector, alpha: f64) {
        let n = self.dim();
        for j in 0..n {
            let vj = v[j].conj() * alpha;
            for i in 0..n {
                self.inner[(i, j)] += v[i] * vj;
            }
        }
    }

    pub fn add_identity(&mut self, alpha: f64) {
        for i in 0..self.dim() {
            self.inner[(i, i)].re += alpha;
        }
    }

    pub fn max_abs_diff(&self, other: &HermitianMatrix) -> f64 {
        self.inner
            .iter()
            .zip(other.inner.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn eig(&self) -> HermitianEigen {
        hermitian_eig(self)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(self)
    }

    /// Frobenius-nearest positive semidefinite matrix.
    pub fn psd_project(&self) -> HermitianMatrix {
        psd_project(self)
    }
}

/// Eigendecomposition `H = V diag(λ) Vᴴ` with eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Column `k` is the unit eigenvector for `values[k]`.
    pub vectors: DMatrix<C64>,
}

impl HermitianEigen {
    pub fn vector(&self, k: usize) -> CVector {
        self.vectors.column(k).into_owned()
    }

    /// Reassembles `V diag(f(λ)) Vᴴ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> HermitianMatrix {
        let n = self.values.len();
        let mut out = HermitianMatrix::zeros(n);
        for (k, &lambda) in self.values.iter().enumerate() {
            let scale = f(lambda);
            if scale != 0.0 {
                out.add_outer(&self.vector(k), scale);
            }
        }
        HermitianMatrix::symmetrized(out.inner)
    }
}

/// Cyclic complex Jacobi eigendecomposition.
///
/// Each rotation first removes the phase of the pivot `a_pq` and then applies
/// a real Givens rotation to the resulting real symmetric 2×2 block. Sweeps
/// stop once the off-diagonal Frobenius mass drops below `1e-14·‖H‖_F`.
pub fn hermitian_eig(h: &HermitianMatrix) -> HermitianEigen {
    let n = h.dim();
    let mut a = h.inner.clone();
    let mut v = DMatrix::<C64>::identity(n, n);
    let norm = h.frobenius_norm();
    let threshold = JACOBI_TOL * norm;

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= threshold || norm == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let z = a[(p, q)];
                let r = z.norm();
                if r == 0.0 || r < 1e-300 {
                    continue;
                }
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let phase = z / r;
                let theta = (aqq - app) / (2.0 * r);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // G = diag(1, e^{-iφ}) · [[c, s], [-s, c]]
                let g_pp = C64::new(c, 0.0);
                let g_pq = C64::new(s, 0.0);
                let g_qp = -phase.conj() * s;
                let g_qq = phase.conj() * c;

                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * g_pp + akq * g_qp;
                    a[(k, q)] = akp * g_pq + akq * g_qq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = g_pp.conj() * apk + g_qp.conj() * aqk;
                    a[(q, k)] = g_pq.conj() * apk + g_qq.conj() * aqk;
                }
                a[(p, q)] = C64::new(0.0, 0.0);
                a[(q, p)] = C64::new(0.0, 0.0);
                a[(p, p)].im = 0.0;
                a[(q, q)].im = 0.0;

                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * g_pp + vkq * g_qp;
                    v[(k, q)] = vkp * g_pq + vkq * g_qq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    HermitianEigen { values, vectors }
}

pub fn min_eigenvalue(h: &HermitianMatrix) -> f64 {
    hermitian_eig(h).values[0]
}

/// Clips negative eigenvalues to zero.
pub fn psd_project(h: &HermitianMatrix) -> HermitianMatrix {
    let eig = hermitian_eig(h);
    if eig.values[0] >= 0.0 {
        return h.clone();
    }
    eig.reconstruct_with(|l| l.max(0.0))
}
