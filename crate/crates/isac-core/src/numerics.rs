//! Shared numeric kernels: Bessel J0, Kronecker products, Hermitian Toeplitz
//! constructors, Cholesky-based whitening and a central-difference Jacobian
//! used as an independent oracle for the analytic derivatives.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::{CoreError, Result};

/// Double-precision complex scalar.
pub type C64 = Complex<f64>;
/// Dynamically sized complex matrix.
pub type CMat = DMatrix<C64>;
/// Dynamically sized complex column vector.
pub type CVec = DVector<C64>;
/// Dynamically sized real matrix.
pub type RMat = DMatrix<f64>;
/// Dynamically sized real column vector.
pub type RVec = DVector<f64>;

/// A square complex matrix guaranteed Hermitian at construction.
///
/// The constructor checks `A == A^H` within `1e-12` relative tolerance and
/// then symmetrizes exactly, so downstream factorizations never see stray
/// asymmetry from accumulated rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    entries: CMat,
}

impl HermitianMatrix {
    /// Wraps a matrix after validating squareness and Hermitian symmetry.
    pub fn new(m: CMat) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(CoreError::Dimension(format!(
                "hermitian matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = m.iter().map(|z| z.norm()).fold(0.0f64, f64::max).max(1.0);
        for i in 0..m.nrows() {
            for j in 0..=i {
                let d = (m[(i, j)] - m[(j, i)].conj()).norm();
                if d > 1e-12 * scale {
                    return Err(CoreError::Domain(format!(
                        "matrix is not Hermitian: |A[{i},{j}] - conj(A[{j},{i}])| = {d:.3e}"
                    )));
                }
            }
        }
        let mut sym = m.clone();
        for i in 0..m.nrows() {
            sym[(i, i)] = Complex::new(m[(i, i)].re, 0.0);
            for j in 0..i {
                let avg = 0.5 * (m[(i, j)] + m[(j, i)].conj());
                sym[(i, j)] = avg;
                sym[(j, i)] = avg.conj();
            }
        }
        Ok(Self { entries: sym })
    }

    /// Dimension of the (square) matrix.
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Borrow the underlying matrix.
    pub fn as_matrix(&self) -> &CMat {
        &self.entries
    }

    /// Consume into the underlying matrix.
    pub fn into_matrix(self) -> CMat {
        self.entries
    }

    /// Real eigenvalues, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self
            .entries
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev
    }

    /// True when all eigenvalues are `>= -1e-10 * max eigenvalue`.
    pub fn is_psd(&self) -> bool {
        let ev = self.eigenvalues();
        let top = ev.last().copied().unwrap_or(0.0).max(0.0);
        ev.iter().all(|&l| l >= -1e-10 * top.max(1e-300))
    }

    /// Identity of the given dimension.
    pub fn identity(n: usize) -> Self {
        Self {
            entries: CMat::identity(n, n),
        }
    }

    /// `self + alpha * I`.
    pub fn add_scaled_identity(&self, alpha: f64) -> Self {
        let mut m = self.entries.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += C64::new(alpha, 0.0);
        }
        Self { entries: m }
    }

    /// `alpha * self`.
    pub fn scale(&self, alpha: f64) -> Self {
        Self {
            entries: self.entries.map(|z| z * alpha),
        }
    }

    /// Real trace.
    pub fn trace_re(&self) -> f64 {
        (0..self.dim()).map(|i| self.entries[(i, i)].re).sum()
    }
}

/// Bessel function of the first kind, order zero.
///
/// Power series below `|x| = 12`, Hankel asymptotic expansion (optimally
/// truncated) beyond; both agree below 1e-10 at the boundary and the absolute
/// error stays below 1e-10 for `|x| <= 100`.
pub fn bessel_j0(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(CoreError::Domain(format!(
            "bessel_j0: non-finite input {x}"
        )));
    }
    let ax = x.abs();
    if ax < 12.0 {
        // sum_m (-1)^m (x/2)^(2m) / (m!)^2
        let q = 0.25 * ax * ax;
        let mut term = 1.0f64;
        let mut sum = 1.0f64;
        for m in 1..200 {
            term *= -q / ((m * m) as f64);
            sum += term;
            if term.abs() < 1e-18 {
                break;
            }
        }
        Ok(sum)
    } else {
        // J0(x) = sqrt(2/(pi x)) Re[ e^{i(x - pi/4)} * sum_m a_m (i/x)^m ],
        // a_0 = 1, a_m = a_{m-1} * (-(2m-1)^2) / (8m); stop at the smallest term.
        let mut a = 1.0f64;
        let mut pw = Complex::new(1.0, 0.0);
        let step = Complex::new(0.0, 1.0 / ax);
        let mut sum = Complex::new(1.0, 0.0);
        let mut last = 1.0f64;
        for m in 1..60 {
            let mm = m as f64;
            a *= -((2.0 * mm - 1.0) * (2.0 * mm - 1.0)) / (8.0 * mm);
            pw *= step;
            let term = pw * a;
            if term.norm() > last {
                break; // divergent tail reached
            }
            last = term.norm();
            sum += term;
            if last < 1e-18 {
                break;
            }
        }
        let phase = Complex::new(0.0, ax - std::f64::consts::FRAC_PI_4).exp();
        Ok((2.0 / (std::f64::consts::PI * ax)).sqrt() * (phase * sum).re)
    }
}

/// Kronecker product `a ⊗ b`; block `(i, j)` equals `a[i,j] * b`.
pub fn kronecker(a: &CMat, b: &CMat) -> CMat {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = CMat::zeros(ra * rb, ca * cb);
    for i in 0..ra {
        for j in 0..ca {
            let s = a[(i, j)];
            if s == C64::new(0.0, 0.0) {
                continue;
            }
            for p in 0..rb {
                for q in 0..cb {
                    out[(i * rb + p, j * cb + q)] = s * b[(p, q)];
                }
            }
        }
    }
    out
}

/// Hermitian Toeplitz matrix from its first row; `T[i,j] = r[|i-j|]`,
/// conjugated below the diagonal. The leading entry must be real.
pub fn toeplitz_hermitian(first_row: &[C64]) -> Result<HermitianMatrix> {
    if first_row.is_empty() {
        return Err(CoreError::Domain(
            "toeplitz_hermitian: empty first row".into(),
        ));
    }
    let scale = first_row.iter().map(|z| z.norm()).fold(1.0f64, f64::max);
    if first_row[0].im.abs() > 1e-12 * scale {
        return Err(CoreError::Domain(
            "toeplitz_hermitian: first entry must be real".into(),
        ));
    }
    let n = first_row.len();
    let mut m = CMat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = if j >= i {
                first_row[j - i]
            } else {
                first_row[i - j].conj()
            };
        }
    }
    HermitianMatrix::new(m)
}

/// Real-valued Hermitian Toeplitz convenience wrapper.
pub fn toeplitz_real(first_row: &[f64]) -> Result<HermitianMatrix> {
    let row: Vec<C64> = first_row.iter().map(|&x| C64::new(x, 0.0)).collect();
    toeplitz_hermitian(&row)
}

/// Lower Cholesky factor `L` with `L L^H = r`.
///
/// Fails with a singularity error when any pivot drops below
/// `1e-14 * trace(r)`.
pub fn cholesky_lower(r: &HermitianMatrix) -> Result<CMat> {
    let n = r.dim();
    let a = r.as_matrix();
    let tol = 1e-14 * r.trace_re().abs().max(f64::MIN_POSITIVE);
    let mut l = CMat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if d < tol {
            return Err(CoreError::Singular(format!(
                "cholesky pivot {d:.3e} below tolerance at column {j}"
            )));
        }
        let dj = d.sqrt();
        l[(j, j)] = C64::new(dj, 0.0);
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / dj;
        }
    }
    Ok(l)
}

/// Whitening transform `W` for a positive-definite covariance: the inverse of
/// the lower Cholesky factor, so that `W r W^H = I`.
pub fn whitener(r: &HermitianMatrix) -> Result<CMat> {
    let l = cholesky_lower(r)?;
    Ok(invert_lower_triangular(&l))
}

/// Inverse of a lower-triangular matrix by forward substitution.
fn invert_lower_triangular(l: &CMat) -> CMat {
    let n = l.nrows();
    let mut inv = CMat::zeros(n, n);
    for col in 0..n {
        // solve L x = e_col
        for i in col..n {
            let mut s = if i == col {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            };
            for k in col..i {
                s -= l[(i, k)] * inv[(k, col)];
            }
            inv[(i, col)] = s / l[(i, i)];
        }
    }
    inv
}

/// Factor `F` with `F F^H = r` for a positive *semi*-definite matrix, via the
/// Hermitian eigendecomposition with negative eigenvalues clamped at zero.
/// Rejects matrices with eigenvalues below `-1e-8 * max eigenvalue`.
pub fn psd_factor(r: &HermitianMatrix) -> Result<CMat> {
    let eig = r.as_matrix().clone().symmetric_eigen();
    let top = eig
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, &l| acc.max(l))
        .max(f64::MIN_POSITIVE);
    let mut f = eig.eigenvectors;
    for (idx, &l) in eig.eigenvalues.iter().enumerate() {
        if l < -1e-8 * top {
            return Err(CoreError::Domain(format!(
                "psd_factor: eigenvalue {l:.3e} is significantly negative"
            )));
        }
        let s = l.max(0.0).sqrt();
        for i in 0..f.nrows() {
            f[(i, idx)] *= s;
        }
    }
    Ok(f)
}

/// Central-difference Jacobian of `f: R^n -> C^m`, column `l` equal to
/// `(f(x0 + h e_l) - f(x0 - h e_l)) / (2 h)`.
///
/// This is the independent oracle used to validate analytic Jacobians; it
/// must stay free of any code shared with them.
pub fn finite_difference_jacobian<F>(f: F, x0: &RVec, step: f64) -> CMat
where
    F: Fn(&RVec) -> CVec,
{
    let n = x0.len();
    let m = f(x0).len();
    let mut jac = CMat::zeros(m, n);
    for l in 0..n {
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[l] += step;
        xm[l] -= step;
        let fp = f(&xp);
        let fm = f(&xm);
        for i in 0..m {
            jac[(i, l)] = (fp[i] - fm[i]) / (2.0 * step);
        }
    }
    jac
}

/// `max |a[i,j] - b[i,j]|` over all entries.
pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}
