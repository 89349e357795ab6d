//! MVDR and LCMV weights, beam patterns and output SINR.
//!
//! Weights solve `R z = c` through the Q-less QR factor of the covariance
//! (see [`crate::qr_solver`]); a dense Cholesky path is kept for
//! cross-checking. No explicit inverse is ever formed.
//!
//! Response convention: a weight vector `w` passes a plane wave with unit
//! steering vector `a` with complex gain `wᴴa`. MVDR enforces `wᴴa₀ = 1`,
//! LCMV enforces `Cᴴw = f`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array_geometry::{steering_vector, ArrayLayout, Direction, SteeringVector};
use crate::error::{invalid, Error, Result};
use crate::linalg::{cholesky_solve, dotc, hermitian_eigenvalues, CMatrix, CVector, ZERO};
use crate::qr_solver::{solve_normal, QlessQrState};
use crate::signal_sim::{CovarianceMatrix, SnapshotMatrix};

/// Floor applied to pattern values so exact nulls stay finite.
pub const PATTERN_FLOOR_DB: f64 = -400.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mvdr,
    Lcmv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolvePath {
    #[default]
    QlessQr,
    Cholesky,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamWeights {
    pub values: CVector,
    pub method: Method,
    pub steer: Direction,
}

impl BeamWeights {
    /// `wᴴa`
    pub fn response(&self, a: &CVector) -> Complex64 {
        dotc(&self.values, a)
    }
}

/// Linear response constraints: `c_kᴴ w = f_k` for each steering vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LcmvConstraints {
    pub steering: Vec<SteeringVector>,
    pub responses: Vec<Complex64>,
}

impl LcmvConstraints {
    pub fn new(
        layout: &ArrayLayout,
        directions: &[Direction],
        responses: &[Complex64],
    ) -> Result<Self> {
        if directions.len() != responses.len() {
            return Err(Error::DimensionMismatch {
                expected: directions.len(),
                actual: responses.len(),
            });
        }
        if directions.is_empty() {
            return invalid("LCMV needs at least one constraint");
        }
        if directions.len() >= layout.len() {
            return invalid(format!(
                "{} constraints leave no degrees of freedom on a {}-element array",
                directions.len(),
                layout.len()
            ));
        }
        let steering = directions
            .iter()
            .map(|d| steering_vector(layout, d.phi, d.theta))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            steering,
            responses: responses.to_vec(),
        })
    }

    pub fn matrix(&self) -> CMatrix {
        let n = self.steering[0].len();
        CMatrix::from_fn(n, self.steering.len(), |i, j| self.steering[j].values[i])
    }

    pub fn response_vector(&self) -> CVector {
        CVector::from_vec(self.responses.clone())
    }
}

/// Linear solver for `R z = b` bound to one covariance.
pub struct CovarianceSolver<'a> {
    cov: &'a CovarianceMatrix,
    path: SolvePath,
    qr: Option<(QlessQrState, bool)>,
}

impl<'a> CovarianceSolver<'a> {
    pub fn new(cov: &'a CovarianceMatrix, path: SolvePath) -> Self {
        let qr = match path {
            SolvePath::Cholesky => None,
            SolvePath::QlessQr => Some(qr_factor(cov)),
        };
        Self { cov, path, qr }
    }

    pub fn solve(&self, b: &CVector) -> Result<CVector> {
        match (&self.qr, self.path) {
            (Some((state, data_backed)), _) => {
                if *data_backed {
                    solve_normal(state, b)
                } else {
                    // rows of R were absorbed, so RᴴR = R²; R z = b ⇔ R² z = R b
                    solve_normal(state, &(&self.cov.data * b))
                }
            }
            _ => {
                let rhs = CMatrix::from_column_slice(b.len(), 1, b.as_slice());
                Ok(cholesky_solve(&self.cov.data, &rhs)?.column(0).into_owned())
            }
        }
    }
}

/// Q-less QR of the covariance. With snapshots available the rows are
/// `x_lᴴ/√L` plus `√δ e_kᵀ`, whose Gram matrix is exactly `R̂`; otherwise the
/// Hermitian matrix's own rows are used (Gram `R²`).
fn qr_factor(cov: &CovarianceMatrix) -> (QlessQrState, bool) {
    let n = cov.dim();
    let mut state = QlessQrState::new(n, 1.0).expect("unit forgetting is valid");
    match &cov.snapshots {
        Some(x) => {
            let scale = 1.0 / (x.ncols() as f64).sqrt();
            let mut row = vec![ZERO; n];
            for l in 0..x.ncols() {
                for (i, r) in row.iter_mut().enumerate() {
                    *r = x[(i, l)].conj() * scale;
                }
                state.absorb(&row);
            }
            if cov.loading > 0.0 {
                let s = cov.loading.sqrt();
                for k in 0..n {
                    row.iter_mut().for_each(|r| *r = ZERO);
                    row[k] = Complex64::new(s, 0.0);
                    state.absorb(&row);
                }
            }
            (state, true)
        }
        None => {
            let mut row = vec![ZERO; n];
            for i in 0..n {
                for (j, r) in row.iter_mut().enumerate() {
                    *r = cov.data[(i, j)];
                }
                state.absorb(&row);
            }
            (state, false)
        }
    }
}

/// Exponentially weighted covariance `Σ λ^{L−1−l} x_l x_lᴴ / Σ λ^k`,
/// accumulated one snapshot at a time in a Q-less QR state with forgetting
/// factor `λ`, plus `loading_factor · tr/N` on the diagonal.
pub fn forgetting_covariance(
    x: &SnapshotMatrix,
    forgetting: f64,
    loading_factor: f64,
) -> Result<CovarianceMatrix> {
    if x.snapshots() == 0 {
        return invalid("covariance needs at least one snapshot");
    }
    if !(loading_factor >= 0.0) || !loading_factor.is_finite() {
        return invalid("loading factor must be finite and >= 0");
    }
    let n = x.elements();
    let mut state = QlessQrState::new(n, forgetting)?;
    let mut row = vec![ZERO; n];
    let mut weight = 0.0;
    for l in 0..x.snapshots() {
        for (i, r) in row.iter_mut().enumerate() {
            *r = x.data[(i, l)].conj();
        }
        state.absorb(&row);
        weight = forgetting * weight + 1.0;
    }
    let mut data = state.gram().unscale(weight);
    let loading = loading_factor * crate::linalg::trace_re(&data) / n as f64;
    for i in 0..n {
        data[(i, i)].re += loading;
    }
    let mut cov = CovarianceMatrix::from_matrix(data)?;
    cov.loading = loading;
    Ok(cov)
}

/// `w = R⁻¹a₀ / (a₀ᴴR⁻¹a₀)` via the Q-less QR path.
pub fn mvdr_weights(r: &CovarianceMatrix, a0: &SteeringVector) -> Result<BeamWeights> {
    mvdr_weights_with(r, a0, SolvePath::QlessQr)
}

pub fn mvdr_weights_with(
    r: &CovarianceMatrix,
    a0: &SteeringVector,
    path: SolvePath,
) -> Result<BeamWeights> {
    if r.dim() != a0.len() {
        return Err(Error::DimensionMismatch {
            expected: r.dim(),
            actual: a0.len(),
        });
    }
    let solver = CovarianceSolver::new(r, path);
    let z = solver.solve(&a0.values)?;
    let denom = dotc(&a0.values, &z);
    if !(denom.norm() > 0.0) || !denom.re.is_finite() {
        return Err(Error::Numerical("a₀ᴴR⁻¹a₀ vanished".into()));
    }
    // a₀ᴴz is real for Hermitian PD R; dividing by its conjugate makes
    // wᴴa₀ = zᴴa₀ / conj(a₀ᴴz) = 1 to round-off.
    let values = z / denom.conj();
    Ok(BeamWeights {
        values,
        method: Method::Mvdr,
        steer: a0.direction,
    })
}

/// `w = R⁻¹C (CᴴR⁻¹C)⁻¹ f`, so that `Cᴴw = f`.
pub fn lcmv_weights(r: &CovarianceMatrix, constraints: &LcmvConstraints) -> Result<BeamWeights> {
    lcmv_weights_with(r, constraints, SolvePath::QlessQr)
}

pub fn lcmv_weights_with(
    r: &CovarianceMatrix,
    constraints: &LcmvConstraints,
    path: SolvePath,
) -> Result<BeamWeights> {
    let c = constraints.matrix();
    if c.nrows() != r.dim() {
        return Err(Error::DimensionMismatch {
            expected: r.dim(),
            actual: c.nrows(),
        });
    }
    check_rank(&c)?;
    let f = constraints.response_vector();
    let solver = CovarianceSolver::new(r, path);
    let mut z = CMatrix::from_element(c.nrows(), c.ncols(), ZERO);
    for j in 0..c.ncols() {
        let col = solver.solve(&c.column(j).into_owned())?;
        z.set_column(j, &col);
    }
    let mut gm = c.adjoint() * &z;
    crate::linalg::hermitize(&mut gm);
    let solve_small = |rhs: &CVector| -> Result<CVector> {
        let m = CMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
        Ok(cholesky_solve(&gm, &m)?.column(0).into_owned())
    };
    let mut g = solve_small(&f)?;
    let mut w = &z * &g;
    // one step of iterative refinement on the constraint residual
    let resid = &f - c.adjoint() * &w;
    g += solve_small(&resid)?;
    w = &z * &g;
    Ok(BeamWeights {
        values: w,
        method: Method::Lcmv,
        steer: constraints.steering[0].direction,
    })
}

fn check_rank(c: &CMatrix) -> Result<()> {
    let gram = c.adjoint() * c;
    let eig = hermitian_eigenvalues(&gram);
    let max = eig.last().copied().unwrap_or(0.0);
    if eig[0] > 1e-10 * max.max(1e-300) {
        return Ok(());
    }
    let k = c.ncols();
    let mut pairs = Vec::new();
    let mut worst = (0, 1, 0.0);
    for i in 0..k {
        for j in (i + 1)..k {
            let corr = gram[(i, j)].norm() / (gram[(i, i)].re * gram[(j, j)].re).sqrt();
            if corr > 0.999 {
                pairs.push((i, j));
            }
            if corr > worst.2 {
                worst = (i, j, corr);
            }
        }
    }
    if pairs.is_empty() && k > 1 {
        pairs.push((worst.0, worst.1));
    }
    Err(Error::CollinearConstraints { pairs })
}

/// `w = a₀`: the conventional (delay-and-sum) beamformer.
pub fn conventional_weights(a0: &SteeringVector) -> BeamWeights {
    BeamWeights {
        values: a0.values.clone(),
        method: Method::Mvdr,
        steer: a0.direction,
    }
}

/// Beam power over an angle grid, in dB relative to the grid maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamPattern {
    pub angles: Vec<Direction>,
    pub power_db: Vec<f64>,
    /// Largest `|wᴴa|` over the grid (the 0 dB reference).
    pub peak_response: f64,
}

impl BeamPattern {
    /// Largest pattern value within `half_width_deg` of azimuth `theta_deg`,
    /// i.e. the null depth measured robustly to grid placement.
    pub fn max_in_window(&self, theta_deg: f64, half_width_deg: f64) -> Option<f64> {
        self.angles
            .iter()
            .zip(&self.power_db)
            .filter(|(d, _)| (d.theta_deg() - theta_deg).abs() <= half_width_deg + 1e-9)
            .map(|(_, p)| *p)
            .reduce(f64::max)
    }

    /// Pattern value at the grid point closest to azimuth `theta_deg`.
    pub fn value_near(&self, theta_deg: f64) -> Option<f64> {
        self.angles
            .iter()
            .zip(&self.power_db)
            .min_by(|a, b| {
                (a.0.theta_deg() - theta_deg)
                    .abs()
                    .total_cmp(&(b.0.theta_deg() - theta_deg).abs())
            })
            .map(|(_, p)| *p)
    }

    /// `el_deg, az_deg, power_db` rows with a schema comment header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# schema_version=1\nel_deg,az_deg,power_db\n");
        for (d, p) in self.angles.iter().zip(&self.power_db) {
            out.push_str(&format!(
                "{:.6},{:.6},{:.6}\n",
                d.phi_deg(),
                d.theta_deg(),
                p
            ));
        }
        out
    }
}

/// Azimuth sweep at fixed polar angle, endpoints included.
pub fn theta_sweep(
    phi_deg: f64,
    start_deg: f64,
    stop_deg: f64,
    step_deg: f64,
) -> Result<Vec<Direction>> {
    if !(step_deg > 0.0) || !(stop_deg >= start_deg) {
        return invalid(format!("bad angle grid {start_deg}:{stop_deg}:{step_deg}"));
    }
    let count = ((stop_deg - start_deg) / step_deg + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|i| Direction::from_deg(phi_deg, start_deg + i as f64 * step_deg))
        .collect())
}

pub fn beam_pattern(
    w: &BeamWeights,
    layout: &ArrayLayout,
    grid: &[Direction],
) -> Result<BeamPattern> {
    if grid.is_empty() {
        return invalid("beam pattern needs a non-empty angle grid");
    }
    if w.values.len() != layout.len() {
        return Err(Error::DimensionMismatch {
            expected: layout.len(),
            actual: w.values.len(),
        });
    }
    let mags = grid
        .iter()
        .map(|d| {
            Ok(w.response(&steering_vector(layout, d.phi, d.theta)?.values)
                .norm())
        })
        .collect::<Result<Vec<f64>>>()?;
    let peak = mags.iter().copied().fold(0.0, f64::max);
    let power_db = mags
        .iter()
        .map(|m| {
            if peak == 0.0 {
                0.0
            } else {
                (20.0 * (m / peak).log10()).max(PATTERN_FLOOR_DB)
            }
        })
        .collect();
    Ok(BeamPattern {
        angles: grid.to_vec(),
        power_db,
        peak_response: peak,
    })
}

/// `10 log10(wᴴR_s w / wᴴR_{i+n} w)`
pub fn output_sinr(
    w: &BeamWeights,
    signal_cov: &CMatrix,
    interference_noise_cov: &CMatrix,
) -> Result<f64> {
    let quad = |m: &CMatrix| dotc(&w.values, &(m * &w.values)).re;
    let num = quad(signal_cov);
    let den = quad(interference_noise_cov);
    if !(den > 0.0) {
        return Err(Error::Numerical(
            "interference-plus-noise output power is zero".into(),
        ));
    }
    Ok(10.0 * (num / den).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array_geometry::{build_hybrid_layout, ArrayParams};
    use approx::assert_relative_eq;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn ring(n: usize) -> ArrayLayout {
        build_hybrid_layout(&ArrayParams {
            n_per_loop: n,
            loops_per_cylinder: 1,
            n_cylinders: 1,
            circular_elements: 0,
            elements_per_cylinder: None,
            ..ArrayParams::table1()
        })
        .unwrap()
    }

    fn identity_cov(n: usize, scale: f64) -> CovarianceMatrix {
        CovarianceMatrix::from_matrix(CMatrix::identity(n, n) * c(scale)).unwrap()
    }

    #[test]
    fn white_noise_mvdr_is_the_steering_vector() {
        let layout = ring(8);
        let a0 = steering_vector(&layout, 0.8, 0.3).unwrap();
        for scale in [1.0, 2.0] {
            for path in [SolvePath::QlessQr, SolvePath::Cholesky] {
                let w = mvdr_weights_with(&identity_cov(8, scale), &a0, path).unwrap();
                assert!((&w.values - &a0.values).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn lcmv_with_one_unit_constraint_is_mvdr() {
        let layout = ring(8);
        let dir = Direction::from_deg(45.0, 45.0);
        let cov = CovarianceMatrix::from_matrix(
            CMatrix::identity(8, 8) * c(0.5) + {
                let a = steering_vector(&layout, 0.7, 1.2).unwrap().values;
                &a * a.adjoint() * c(10.0)
            },
        )
        .unwrap();
        let a0 = steering_vector(&layout, dir.phi, dir.theta).unwrap();
        let mvdr = mvdr_weights(&cov, &a0).unwrap();
        let cons = LcmvConstraints::new(&layout, &[dir], &[c(1.0)]).unwrap();
        let lcmv = lcmv_weights(&cov, &cons).unwrap();
        assert!((&mvdr.values - &lcmv.values).norm() < 1e-10);
    }

    #[test]
    fn zero_responses_give_null_weights() {
        let layout = ring(8);
        let dirs = [
            Direction::from_deg(45.0, 30.0),
            Direction::from_deg(45.0, 50.0),
        ];
        let cons = LcmvConstraints::new(&layout, &dirs, &[ZERO, ZERO]).unwrap();
        let w = lcmv_weights(&identity_cov(8, 1.0), &cons).unwrap();
        let resp = cons.matrix().adjoint() * &w.values;
        assert!(resp.iter().all(|z| *z == ZERO));
    }

    #[test]
    fn collinear_constraints_are_reported() {
        let layout = ring(8);
        let d = Direction::from_deg(45.0, 30.0);
        let cons = LcmvConstraints::new(
            &layout,
            &[d, Direction::from_deg(45.0, 60.0), d],
            &[c(1.0), ZERO, ZERO],
        )
        .unwrap();
        match lcmv_weights(&identity_cov(8, 1.0), &cons) {
            Err(Error::CollinearConstraints { pairs }) => assert!(pairs.contains(&(0, 2))),
            other => panic!("expected collinearity error, got {other:?}"),
        }
    }

    #[test]
    fn conventional_pattern_peaks_at_steer() {
        let layout = ring(16);
        let a0 = steering_vector(&layout, 45f64.to_radians(), 40f64.to_radians()).unwrap();
        let grid = theta_sweep(45.0, 0.0, 90.0, 1.0).unwrap();
        let p = beam_pattern(&conventional_weights(&a0), &layout, &grid).unwrap();
        assert_relative_eq!(p.value_near(40.0).unwrap(), 0.0, epsilon = 1e-12);
        assert!(p.power_db.iter().all(|v| *v <= 1e-12));
    }

    #[test]
    fn single_element_pattern_is_flat() {
        let layout = ring(1);
        let a0 = steering_vector(&layout, 0.5, 0.5).unwrap();
        let grid = theta_sweep(45.0, 0.0, 90.0, 5.0).unwrap();
        let p = beam_pattern(&conventional_weights(&a0), &layout, &grid).unwrap();
        assert!(p.power_db.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn sinr_of_equal_covariances_is_zero_db() {
        let layout = ring(6);
        let a0 = steering_vector(&layout, 0.5, 0.5).unwrap();
        let w = conventional_weights(&a0);
        let r = CMatrix::identity(6, 6) * c(3.0);
        assert_relative_eq!(output_sinr(&w, &r, &r).unwrap(), 0.0, epsilon = 1e-12);
        assert!(output_sinr(&w, &r, &CMatrix::zeros(6, 6)).is_err());
    }

    #[test]
    fn theta_sweep_includes_endpoints() {
        let g = theta_sweep(45.0, 0.0, 90.0, 0.25).unwrap();
        assert_eq!(g.len(), 361);
        assert_relative_eq!(g[360].theta_deg(), 90.0, epsilon = 1e-12);
        assert!(theta_sweep(45.0, 10.0, 0.0, 1.0).is_err());
    }
}
