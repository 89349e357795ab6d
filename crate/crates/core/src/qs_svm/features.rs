//! Feature maps from array data to SVM inputs.

use nalgebra::Cholesky;

use crate::error::{invalid, Error, Result};
use crate::linalg::{hermitize, outer_gram, trace_re, CMatrix, CVector};
use crate::signal_sim::{CovarianceMatrix, SnapshotMatrix};

pub const COVARIANCE_FEATURE_VERSION: &str = "cov-ut-v1";
pub const SPECTRUM_FEATURE_VERSION: &str = "capon-spectrum-v1";

/// Trace-normalized sample covariance, flattened: the `N` real diagonal
/// entries, then the real and imaginary part of each entry above the
/// diagonal in row-major order. Length `N²`.
pub fn featurize_snapshots(x: &SnapshotMatrix) -> Result<Vec<f64>> {
    let n = x.elements();
    let l = x.snapshots();
    if l == 0 {
        return invalid("featurization needs at least one snapshot");
    }
    let r = outer_gram(&x.data) / nalgebra::Complex::from(l as f64);
    covariance_features(&r, n)
}

pub(crate) fn covariance_features(r: &CMatrix, n: usize) -> Result<Vec<f64>> {
    let tr = trace_re(r);
    if !(tr > 0.0 && tr.is_finite()) {
        return Err(Error::Numerical(
            "covariance trace is zero; features are undefined".into(),
        ));
    }
    let scale = n as f64 / tr;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        out.push(r[(i, i)].re * scale);
    }
    for i in 0..n {
        for j in i + 1..n {
            out.push(r[(i, j)].re * scale);
            out.push(r[(i, j)].im * scale);
        }
    }
    Ok(out)
}

/// Capon spectrum `1/(aᴴR⁻¹a)` over the columns of `steering`, after
/// projecting out the span of `deflate`, scaled so its maximum is 1.
///
/// Projected directions use `R' = PRP + δI` with `P = I − QQᴴ` and the
/// renormalized steering `Pa/‖Pa‖`; a grid direction lying inside the
/// deflated span scores zero.
pub fn capon_spectrum(
    cov: &CovarianceMatrix,
    steering: &CMatrix,
    deflate: &[&CVector],
) -> Result<Vec<f64>> {
    let n = cov.dim();
    if steering.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: steering.nrows(),
        });
    }
    let q = orthonormal_basis(deflate, n)?;
    let (r, a) = match &q {
        None => (cov.data.clone(), steering.clone()),
        Some(q) => {
            let qh = q.adjoint();
            let project = |m: &CMatrix| m - q * (&qh * m);
            let pr = project(&cov.data);
            let mut prp = project(&pr.adjoint());
            hermitize(&mut prp);
            let floor = cov
                .loading
                .max(1e-12 * trace_re(&cov.data) / n as f64)
                .max(f64::MIN_POSITIVE);
            for i in 0..n {
                prp[(i, i)] += floor;
            }
            (prp, project(steering))
        }
    };
    let chol = Cholesky::new(r).ok_or_else(|| Error::Singular {
        pivot: 0,
        detail: "covariance is not positive definite; increase diagonal loading".into(),
    })?;
    let y = chol
        .l()
        .solve_lower_triangular(&a)
        .ok_or_else(|| Error::Singular {
            pivot: 0,
            detail: "triangular solve failed".into(),
        })?;
    let mut spectrum = Vec::with_capacity(a.ncols());
    for g in 0..a.ncols() {
        let a_norm = a.column(g).norm_squared();
        if a_norm <= 1e-9 * steering.column(g).norm_squared() {
            spectrum.push(0.0);
            continue;
        }
        let quad = y.column(g).norm_squared() / a_norm;
        spectrum.push(1.0 / quad);
    }
    let peak = spectrum.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::Numerical("spectrum has no positive peak".into()));
    }
    Ok(spectrum.into_iter().map(|v| v / peak).collect())
}

fn orthonormal_basis(vectors: &[&CVector], n: usize) -> Result<Option<CMatrix>> {
    let mut cols: Vec<CVector> = Vec::new();
    for v in vectors {
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: v.len(),
            });
        }
        let mut w = (*v).clone();
        // two passes of classical Gram-Schmidt
        for _ in 0..2 {
            for c in &cols {
                let proj = c.dotc(&w);
                w -= c * proj;
            }
        }
        let norm = w.norm();
        if norm > 1e-10 * v.norm() {
            cols.push(w / num_complex::Complex64::from(norm));
        }
    }
    if cols.is_empty() {
        return Ok(None);
    }
    Ok(Some(CMatrix::from_columns(&cols)))
}
