//! Streaming Q-less QR with a forgetting factor.
//!
//! Only the upper-triangular factor `R` is kept. Each new data row is
//! rotated into `[√λ_f · R; row]` with complex Givens rotations, so after
//! any sequence of updates `RᴴR` equals the forgetting-weighted Gram matrix
//! of the absorbed rows. Normal-equation solves then need one forward and
//! one backward substitution.
//!
//! The diagonal of `R` is kept real and non-negative, which makes the
//! factor unique.

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::linalg::{CMatrix, CVector, ZERO};

pub const DEFAULT_FORGETTING: f64 = 0.99;

/// Relative pivot tolerance used by [`solve_normal`].
pub const PIVOT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct QlessQrState {
    r: CMatrix,
    forgetting: f64,
    rows_absorbed: usize,
    /// `λ_f · rhs + rowᴴ · target`, accumulated alongside `R`.
    rhs: CVector,
}

impl QlessQrState {
    pub fn new(dim: usize, forgetting: f64) -> Result<Self> {
        if !(forgetting > 0.0 && forgetting <= 1.0) {
            return invalid(format!("forgetting factor {forgetting} is outside (0, 1]"));
        }
        Ok(Self {
            r: CMatrix::from_element(dim, dim, ZERO),
            forgetting,
            rows_absorbed: 0,
            rhs: CVector::from_element(dim, ZERO),
        })
    }

    pub fn dim(&self) -> usize {
        self.r.nrows()
    }

    pub fn r(&self) -> &CMatrix {
        &self.r
    }

    pub fn forgetting(&self) -> f64 {
        self.forgetting
    }

    pub fn rows_absorbed(&self) -> usize {
        self.rows_absorbed
    }

    pub fn rhs(&self) -> &CVector {
        &self.rhs
    }

    /// `RᴴR`
    pub fn gram(&self) -> CMatrix {
        self.r.adjoint() * &self.r
    }

    /// Absorbs `row` in place. Panics if the length is wrong; use
    /// [`qless_update`] for a checked, functional update.
    pub fn absorb(&mut self, row: &[Complex64]) {
        self.absorb_with_target(row, ZERO);
    }

    /// Absorbs `row` and accumulates `rowᴴ · target` into the right-hand side.
    pub fn absorb_with_target(&mut self, row: &[Complex64], target: Complex64) {
        let n = self.dim();
        assert_eq!(row.len(), n, "row length must match the factor dimension");
        let scale = self.forgetting.sqrt();
        if self.forgetting != 1.0 {
            for i in 0..n {
                for j in i..n {
                    self.r[(i, j)] *= scale;
                }
            }
            self.rhs.scale_mut(self.forgetting);
        }
        for (acc, x) in self.rhs.iter_mut().zip(row) {
            *acc += x.conj() * target;
        }

        let mut x: Vec<Complex64> = row.to_vec();
        for k in 0..n {
            if x[k] == ZERO {
                continue;
            }
            let rkk = self.r[(k, k)].re;
            let rad = rkk.hypot(x[k].norm());
            let c = rkk / rad;
            let s = x[k] / rad;
            self.r[(k, k)] = Complex64::new(rad, 0.0);
            x[k] = ZERO;
            for (j, xj) in x.iter_mut().enumerate().skip(k + 1) {
                let rkj = self.r[(k, j)];
                self.r[(k, j)] = rkj * c + s.conj() * *xj;
                *xj = *xj * c - s * rkj;
            }
        }
        self.rows_absorbed += 1;
    }
}

/// Functional form of [`QlessQrState::absorb`]: returns the updated state
/// with `R'ᴴR' = λ_f RᴴR + rowᴴ row`.
pub fn qless_update(state: &QlessQrState, row: &[Complex64]) -> Result<QlessQrState> {
    if row.len() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            actual: row.len(),
        });
    }
    let mut next = state.clone();
    next.absorb(row);
    Ok(next)
}

/// Solves `(RᴴR) z = rhs` by forward substitution on `Rᴴ` and backward
/// substitution on `R`.
pub fn solve_normal(state: &QlessQrState, rhs: &CVector) -> Result<CVector> {
    let n = state.dim();
    if rhs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: rhs.len(),
        });
    }
    let r = &state.r;
    let max_diag = (0..n).map(|i| r[(i, i)].re).fold(0.0, f64::max);
    let tol = PIVOT_TOLERANCE * max_diag;
    for i in 0..n {
        if !(r[(i, i)].re > tol) {
            return Err(Error::Singular {
                pivot: i,
                detail: format!(
                    "R[{i},{i}] = {:.3e} is below {:.1e} x max diagonal",
                    r[(i, i)].re,
                    PIVOT_TOLERANCE
                ),
            });
        }
    }

    // Rᴴ y = rhs
    let mut y = rhs.clone();
    for i in 0..n {
        let mut acc = y[i];
        for k in 0..i {
            acc -= r[(k, i)].conj() * y[k];
        }
        y[i] = acc / r[(i, i)].re;
    }
    // R z = y
    let mut z = y;
    for i in (0..n).rev() {
        let mut acc = z[i];
        for k in (i + 1)..n {
            acc -= r[(i, k)] * z[k];
        }
        z[i] = acc / r[(i, i)].re;
    }
    Ok(z)
}

/// Solves for several right-hand sides at once (columns of `rhs`).
pub fn solve_normal_many(state: &QlessQrState, rhs: &CMatrix) -> Result<CMatrix> {
    let mut out = CMatrix::from_element(rhs.nrows(), rhs.ncols(), ZERO);
    for j in 0..rhs.ncols() {
        let z = solve_normal(state, &rhs.column(j).into_owned())?;
        out.set_column(j, &z);
    }
    Ok(out)
}

/// Weighted empirical risk `Σ w_i L_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskEstimate {
    pub value: f64,
    pub weights: Vec<f64>,
    pub losses: Vec<f64>,
}

/// Quadrature approximation of the expected loss. `weights = None` means
/// uniform weights `1/N`.
pub fn empirical_risk(losses: &[f64], weights: Option<&[f64]>) -> Result<RiskEstimate> {
    let weights: Vec<f64> = match weights {
        Some(w) => {
            if w.len() != losses.len() {
                return Err(Error::DimensionMismatch {
                    expected: losses.len(),
                    actual: w.len(),
                });
            }
            if w.iter().any(|v| !v.is_finite()) {
                return invalid("quadrature weights must be finite");
            }
            w.to_vec()
        }
        None => vec![1.0 / losses.len().max(1) as f64; losses.len()],
    };
    let value = weights.iter().zip(losses).map(|(w, l)| w * l).sum();
    Ok(RiskEstimate {
        value,
        weights,
        losses: losses.to_vec(),
    })
}
