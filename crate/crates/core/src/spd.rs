//! Geometry of 3×3 symmetric positive definite matrices.
//!
//! Everything here is built on a single primitive, [`sym_eig`], a cyclic Jacobi
//! eigensolver. Matrix functions (log, exp, square root, clamping) act on the
//! eigenvalues and keep the eigenvectors, so they are basis-independent inside
//! degenerate eigenspaces.

use std::ops::{Add, Mul, Sub};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 64;
/// Smallest eigenvalue allowed relative to the largest when certifying SPD.
pub const SPD_REL_TOL: f64 = 1e-12;

/// Real symmetric 3×3 matrix stored as its upper triangle, row-major:
/// `[xx, xy, xz, yy, yz, zz]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 6]", into = "[f64; 6]")]
pub struct SymMatrix3 {
    e: [f64; 6],
}

impl From<[f64; 6]> for SymMatrix3 {
    fn from(e: [f64; 6]) -> Self {
        Self { e }
    }
}

impl From<SymMatrix3> for [f64; 6] {
    fn from(m: SymMatrix3) -> Self {
        m.e
    }
}

impl SymMatrix3 {
    pub const fn new(xx: f64, xy: f64, xz: f64, yy: f64, yz: f64, zz: f64) -> Self {
        Self {
            e: [xx, xy, xz, yy, yz, zz],
        }
    }

    pub const fn zeros() -> Self {
        Self { e: [0.0; 6] }
    }

    pub const fn identity() -> Self {
        Self::scaled_identity(1.0)
    }

    pub const fn scaled_identity(s: f64) -> Self {
        Self::new(s, 0.0, 0.0, s, 0.0, s)
    }

    pub const fn diag(a: f64, b: f64, c: f64) -> Self {
        Self::new(a, 0.0, 0.0, b, 0.0, c)
    }

    /// Symmetric part `(M + Mᵀ)/2` of an arbitrary matrix.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Self::new(
            m[(0, 0)],
            0.5 * (m[(0, 1)] + m[(1, 0)]),
            0.5 * (m[(0, 2)] + m[(2, 0)]),
            m[(1, 1)],
            0.5 * (m[(1, 2)] + m[(2, 1)]),
            m[(2, 2)],
        )
    }

    /// `v·vᵀ`
    pub fn outer(v: &Vector3<f64>) -> Self {
        Self::new(
            v.x * v.x,
            v.x * v.y,
            v.x * v.z,
            v.y * v.y,
            v.y * v.z,
            v.z * v.z,
        )
    }

    /// `Q·diag(d)·Qᵀ`
    pub fn from_eigen(q: &Matrix3<f64>, d: &[f64; 3]) -> Self {
        let mut e = [0.0; 6];
        let idx = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
        for (slot, &(i, j)) in e.iter_mut().zip(idx.iter()) {
            *slot = (0..3).map(|k| q[(i, k)] * d[k] * q[(j, k)]).sum();
        }
        Self { e }
    }

    pub fn entries(&self) -> [f64; 6] {
        self.e
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        match (i, j) {
            (0, 0) => self.e[0],
            (0, 1) => self.e[1],
            (0, 2) => self.e[2],
            (1, 1) => self.e[3],
            (1, 2) => self.e[4],
            (2, 2) => self.e[5],
            _ => panic!("index ({i}, {j}) out of range for a 3×3 matrix"),
        }
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        let [xx, xy, xz, yy, yz, zz] = self.e;
        Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz)
    }

    pub fn is_finite(&self) -> bool {
        self.e.iter().all(|v| v.is_finite())
    }

    pub fn trace(&self) -> f64 {
        self.e[0] + self.e[3] + self.e[5]
    }

    pub fn frobenius_norm(&self) -> f64 {
        let [xx, xy, xz, yy, yz, zz] = self.e;
        (xx * xx + yy * yy + zz * zz + 2.0 * (xy * xy + xz * xz + yz * yz)).sqrt()
    }

    pub fn mul_vec(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.to_matrix() * v
    }

    /// `R·M·Rᵀ`
    pub fn conjugate(&self, r: &Matrix3<f64>) -> Self {
        Self::from_matrix(&(r * self.to_matrix() * r.transpose()))
    }

    pub fn add_identity(&self, s: f64) -> Self {
        let mut out = *self;
        out.e[0] += s;
        out.e[3] += s;
        out.e[5] += s;
        out
    }

    /// Rayleigh quotient `vᵀMv / vᵀv`.
    pub fn rayleigh(&self, v: &Vector3<f64>) -> f64 {
        v.dot(&self.mul_vec(v)) / v.norm_squared()
    }
}

impl Add for SymMatrix3 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let mut e = self.e;
        e.iter_mut().zip(rhs.e.iter()).for_each(|(a, b)| *a += b);
        Self { e }
    }
}

impl Sub for SymMatrix3 {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let mut e = self.e;
        e.iter_mut().zip(rhs.e.iter()).for_each(|(a, b)| *a -= b);
        Self { e }
    }
}

impl Mul<f64> for SymMatrix3 {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        let mut e = self.e;
        e.iter_mut().for_each(|a| *a *= s);
        Self { e }
    }
}

/// Eigendecomposition `M = Q·diag(λ)·Qᵀ` with `λ` sorted descending and `Q` a
/// proper rotation.
#[derive(Clone, Copy, Debug)]
pub struct EigenPair3 {
    pub q: Matrix3<f64>,
    pub lambda: [f64; 3],
}

impl EigenPair3 {
    pub fn vector(&self, i: usize) -> Vector3<f64> {
        self.q.column(i).into_owned()
    }

    pub fn reconstruct(&self) -> SymMatrix3 {
        SymMatrix3::from_eigen(&self.q, &self.lambda)
    }

    /// Applies `f` to every eigenvalue and rebuilds the matrix.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymMatrix3 {
        SymMatrix3::from_eigen(&self.q, &self.lambda.map(f))
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Sweeps stop once the off-diagonal Frobenius norm falls below `1e-12` of
/// the matrix norm (at most 64 sweeps). Eigenvalues come out descending; each
/// eigenvector has its largest-magnitude component positive, after which the
/// last column is flipped if needed so that `det(Q) = +1`.
pub fn sym_eig(m: &SymMatrix3) -> Result<EigenPair3> {
    if !m.is_finite() {
        return Err(Error::NonFinite);
    }
    let mut a = [[0.0f64; 3]; 3];
    for (i, row) in a.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m.get(i, j);
        }
    }
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let scale = m.frobenius_norm();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off = (a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2]).sqrt();
        if off <= JACOBI_TOL * scale {
            break;
        }
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            rotate(&mut a, &mut v, p, q);
        }
    }

    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));

    let mut q = Matrix3::zeros();
    let mut lambda = [0.0; 3];
    for (col, &src) in order.iter().enumerate() {
        lambda[col] = a[src][src];
        let mut vec = Vector3::new(v[0][src], v[1][src], v[2][src]);
        let lead = (0..3)
            .max_by(|&i, &j| vec[i].abs().total_cmp(&vec[j].abs()).then(j.cmp(&i)))
            .unwrap_or(0);
        if vec[lead] < 0.0 {
            vec = -vec;
        }
        q.set_column(col, &vec);
    }
    if q.determinant() < 0.0 {
        let flipped = -q.column(2).into_owned();
        q.set_column(2, &flipped);
    }
    Ok(EigenPair3 { q, lambda })
}

fn rotate(a: &mut [[f64; 3]; 3], v: &mut [[f64; 3]; 3], p: usize, q: usize) {
    let apq = a[p][q];
    if apq == 0.0 {
        return;
    }
    let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    a[p][p] -= t * apq;
    a[q][q] += t * apq;
    a[p][q] = 0.0;
    a[q][p] = 0.0;
    for r in 0..3 {
        if r != p && r != q {
            let g = a[r][p];
            let h = a[r][q];
            a[r][p] = c * g - s * h;
            a[p][r] = a[r][p];
            a[r][q] = s * g + c * h;
            a[q][r] = a[r][q];
        }
    }
    for row in v.iter_mut() {
        let g = row[p];
        let h = row[q];
        row[p] = c * g - s * h;
        row[q] = s * g + c * h;
    }
}

/// Symmetric matrix certified to have strictly positive eigenvalues.
///
/// The eigendecomposition computed during certification is kept so that
/// matrix functions do not repeat it.
#[derive(Clone, Copy, Debug)]
pub struct SpdMatrix3 {
    sym: SymMatrix3,
    eig: EigenPair3,
}

impl PartialEq for SpdMatrix3 {
    fn eq(&self, other: &Self) -> bool {
        self.sym == other.sym
    }
}

impl SpdMatrix3 {
    pub fn new(sym: SymMatrix3) -> Result<Self> {
        let eig = sym_eig(&sym)?;
        certify(&eig.lambda)?;
        Ok(Self { sym, eig })
    }

    pub fn from_eigen(q: &Matrix3<f64>, lambda: [f64; 3]) -> Result<Self> {
        Self::new(SymMatrix3::from_eigen(q, &lambda))
    }

    pub fn identity() -> Self {
        Self::scaled_identity(1.0).expect("identity is SPD")
    }

    pub fn scaled_identity(s: f64) -> Result<Self> {
        Self::new(SymMatrix3::scaled_identity(s))
    }

    pub fn diag(a: f64, b: f64, c: f64) -> Result<Self> {
        Self::new(SymMatrix3::diag(a, b, c))
    }

    pub fn sym(&self) -> &SymMatrix3 {
        &self.sym
    }

    pub fn eig(&self) -> &EigenPair3 {
        &self.eig
    }

    pub fn eigenvalues(&self) -> [f64; 3] {
        self.eig.lambda
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        self.sym.to_matrix()
    }

    pub fn entries(&self) -> [f64; 6] {
        self.sym.entries()
    }

    pub fn determinant(&self) -> f64 {
        self.eig.lambda.iter().product()
    }

    pub fn conjugate(&self, r: &Matrix3<f64>) -> Result<Self> {
        Self::new(self.sym.conjugate(r))
    }

    /// Applies a positive function to the eigenvalues, keeping eigenvectors.
    pub fn map_eigenvalues(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.eig.map(f))
    }
}

fn certify(lambda: &[f64; 3]) -> Result<()> {
    let max = lambda[0];
    let min = lambda[2];
    if !(max > 0.0) || !(min > SPD_REL_TOL * max) {
        return Err(Error::NotPositiveDefinite(*lambda));
    }
    Ok(())
}

/// Matrix logarithm of an SPD matrix.
pub fn spd_log(k: &SpdMatrix3) -> SymMatrix3 {
    k.eig.map(f64::ln)
}

/// Matrix exponential of a symmetric matrix.
pub fn spd_exp(s: &SymMatrix3) -> Result<SpdMatrix3> {
    let eig = sym_eig(s)?;
    SpdMatrix3::new(eig.map(f64::exp))
}

/// Exponential of the arithmetic mean of matrix logarithms.
///
/// Its determinant is the geometric mean of the input determinants, so the
/// mean never swells.
pub fn log_euclidean_mean(mats: &[SpdMatrix3]) -> Result<SpdMatrix3> {
    if mats.is_empty() {
        return Err(Error::Empty("log-Euclidean mean of zero matrices"));
    }
    let sum = mats
        .iter()
        .fold(SymMatrix3::zeros(), |acc, m| acc + spd_log(m));
    spd_exp(&(sum * (1.0 / mats.len() as f64)))
}

/// One step of the log-domain exponential moving average
/// `exp((1-α)·log(prev + εI) + α·log(raw + εI)) − εI`.
///
/// The shift `ε` only keeps the logarithms finite; it is removed again so
/// that `raw` is the fixed point and the output eigenvalues stay between the
/// extreme eigenvalues of the inputs.
pub fn spd_ema(prev: &SpdMatrix3, raw: &SpdMatrix3, alpha: f64, eps: f64) -> Result<SpdMatrix3> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::param(format!("EMA alpha {alpha} not in (0, 1]")));
    }
    if !(eps >= 0.0) {
        return Err(Error::param(format!("EMA epsilon {eps} is negative")));
    }
    let lift = |m: &SpdMatrix3| -> Result<SymMatrix3> {
        if eps == 0.0 {
            Ok(spd_log(m))
        } else {
            Ok(spd_log(&SpdMatrix3::new(m.sym.add_identity(eps))?))
        }
    };
    let blended = lift(prev)? * (1.0 - alpha) + lift(raw)? * alpha;
    let out = spd_exp(&blended)?;
    if eps == 0.0 {
        Ok(out)
    } else {
        SpdMatrix3::new(out.sym.add_identity(-eps))
    }
}

/// Clamps eigenvalues into `[lo, hi]`, keeping eigenvectors.
///
/// The returned eigenvalues are exactly the clamped values; the matrix is
/// rebuilt from them.
pub fn clamp_eigenvalues(k: &SymMatrix3, lo: f64, hi: f64) -> Result<SpdMatrix3> {
    if !(lo > 0.0 && lo <= hi) {
        return Err(Error::param(format!(
            "invalid eigenvalue range [{lo}, {hi}]"
        )));
    }
    let mut eig = sym_eig(k)?;
    eig.lambda = eig.lambda.map(|l| l.clamp(lo, hi));
    certify(&eig.lambda)?;
    Ok(SpdMatrix3 {
        sym: eig.reconstruct(),
        eig,
    })
}

/// Checks that `r` is a proper rotation to within `tol`.
pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    r.iter().all(|v| v.is_finite())
        && (r.transpose() * r - Matrix3::identity()).abs().max() <= tol
        && (r.determinant() - 1.0).abs() <= tol
}
