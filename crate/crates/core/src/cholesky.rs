//! Unconstrained six-parameter encoding of SPD matrices.
//!
//! `K = L·Lᵀ` with
//!
//! ```text
//!     ⎡ exp(a1)    0        0     ⎤
//! L = ⎢  l21     exp(a2)    0     ⎥
//!     ⎣  l31      l32     exp(a3) ⎦
//! ```
//!
//! Every finite parameter vector decodes to an SPD matrix, which makes the
//! parameters a safe regression target.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spd::{SpdMatrix3, SymMatrix3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 6]", into = "[f64; 6]")]
pub struct CholeskyParams {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub l21: f64,
    pub l31: f64,
    pub l32: f64,
}

impl From<[f64; 6]> for CholeskyParams {
    fn from(p: [f64; 6]) -> Self {
        let [a1, a2, a3, l21, l31, l32] = p;
        Self {
            a1,
            a2,
            a3,
            l21,
            l31,
            l32,
        }
    }
}

impl From<CholeskyParams> for [f64; 6] {
    fn from(p: CholeskyParams) -> Self {
        p.to_array()
    }
}

impl CholeskyParams {
    /// `[a1, a2, a3, l21, l31, l32]`
    pub fn to_array(&self) -> [f64; 6] {
        [self.a1, self.a2, self.a3, self.l21, self.l31, self.l32]
    }

    pub fn factor(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.a1.exp(),
            0.0,
            0.0,
            self.l21,
            self.a2.exp(),
            0.0,
            self.l31,
            self.l32,
            self.a3.exp(),
        )
    }

    /// `L·Lᵀ`, without SPD certification.
    pub fn decode_sym(&self) -> SymMatrix3 {
        let l = self.factor();
        SymMatrix3::from_matrix(&(l * l.transpose()))
    }
}

/// Cholesky factorization of `k` with the diagonal stored as logarithms.
pub fn cholesky_encode(k: &SpdMatrix3) -> Result<CholeskyParams> {
    let m = k.sym();
    let l11 = m.get(0, 0).sqrt();
    let l21 = m.get(1, 0) / l11;
    let l31 = m.get(2, 0) / l11;
    let d2 = m.get(1, 1) - l21 * l21;
    if !(d2 > 0.0) {
        return Err(Error::NotPositiveDefinite(k.eigenvalues()));
    }
    let l22 = d2.sqrt();
    let l32 = (m.get(2, 1) - l31 * l21) / l22;
    let d3 = m.get(2, 2) - l31 * l31 - l32 * l32;
    if !(d3 > 0.0) || !(l11 > 0.0) {
        return Err(Error::NotPositiveDefinite(k.eigenvalues()));
    }
    Ok(CholeskyParams {
        a1: l11.ln(),
        a2: l22.ln(),
        a3: (0.5 * d3.ln()),
        l21,
        l31,
        l32,
    })
}

/// `L·Lᵀ` for the factor described by `p`.
pub fn cholesky_decode(p: &CholeskyParams) -> Result<SpdMatrix3> {
    if !p.to_array().iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite);
    }
    SpdMatrix3::new(p.decode_sym())
}
