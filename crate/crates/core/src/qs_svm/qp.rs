//! Primal-dual interior-point solver for the soft-margin quadratic-surface
//! QP
//!
//! ```text
//!   min  ½ uᵀ H u + η Σ ξ_i
//!   s.t. a_iᵀ u + y_i c + ξ_i ≥ 1,   ξ_i ≥ 0
//! ```
//!
//! where `u = (vech W, b)`, `a_i = y_i φ(x_i)` and `c` is the free offset.
//! Mehrotra predictor-corrector steps are used. The Newton system is
//! reduced to an `(n+1)`-dimensional bordered system by eliminating the
//! slacks `ξ` and applying `H⁻¹` through a single Cholesky factor that is
//! computed once; the per-iteration cost is then independent of the
//! number of quadratic-surface parameters.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Interior-point stopping tolerance on scaled residuals and gap.
pub const KKT_TOLERANCE: f64 = 1e-10;

/// A stalled solve is still accepted when every measure is below this.
pub const ACCEPT_TOLERANCE: f64 = 1e-8;

pub struct SurfaceQp {
    /// `H` restricted to `u`.
    pub hessian: DMatrix<f64>,
    /// Rows `a_i = y_i φ(x_i)`.
    pub a: DMatrix<f64>,
    pub y: DVector<f64>,
    pub eta: f64,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub u: DVector<f64>,
    pub c: f64,
    pub xi: DVector<f64>,
    pub alpha: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
}

struct Iterate {
    u: DVector<f64>,
    c: f64,
    xi: DVector<f64>,
    s1: DVector<f64>,
    s2: DVector<f64>,
    alpha: DVector<f64>,
    beta: DVector<f64>,
}

struct Residuals {
    ru: DVector<f64>,
    rc: f64,
    rxi: DVector<f64>,
    rp1: DVector<f64>,
    rp2: DVector<f64>,
}

struct Step {
    du: DVector<f64>,
    dc: f64,
    dxi: DVector<f64>,
    ds1: DVector<f64>,
    ds2: DVector<f64>,
    dalpha: DVector<f64>,
    dbeta: DVector<f64>,
}

impl SurfaceQp {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn objective(&self, u: &DVector<f64>, xi: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.hessian * u)) + self.eta * xi.sum()
    }

    fn residuals(&self, it: &Iterate) -> Residuals {
        let au = &self.a * &it.u;
        Residuals {
            ru: &self.hessian * &it.u - self.a.tr_mul(&it.alpha),
            rc: -self.y.dot(&it.alpha),
            rxi: DVector::from_fn(self.n(), |i, _| self.eta - it.alpha[i] - it.beta[i]),
            rp1: DVector::from_fn(self.n(), |i, _| {
                au[i] + self.y[i] * it.c + it.xi[i] - 1.0 - it.s1[i]
            }),
            rp2: &it.xi - &it.s2,
        }
    }

    pub fn solve(&self, max_iterations: usize) -> Result<QpSolution> {
        let n = self.n();
        let p = self.hessian.nrows();
        let chol = factor_hessian(&self.hessian)?;
        // B = H⁻¹Aᵀ, K = A H⁻¹ Aᵀ
        let b = chol.solve(&self.a.transpose());
        let k = &self.a * &b;

        let mut it = Iterate {
            u: DVector::zeros(p),
            c: 0.0,
            xi: DVector::from_element(n, 1.0),
            s1: DVector::from_element(n, 1.0),
            s2: DVector::from_element(n, 1.0),
            alpha: DVector::from_element(n, 1.0),
            beta: DVector::from_element(n, 1.0),
        };

        let mut best: Option<(f64, QpSolution)> = None;
        let mut last = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
        for iteration in 0..max_iterations {
            let r = self.residuals(&it);
            let mu = (it.s1.dot(&it.alpha) + it.s2.dot(&it.beta)) / (2 * n) as f64;
            let (primal, dual, gap) = self.measures(&it, &r, mu);
            last = (primal, dual, gap);
            let worst = primal.max(dual).max(gap);
            if best.as_ref().is_none_or(|(w, _)| worst < *w) {
                best = Some((worst, self.finish(&it, iteration, last)));
            }
            if worst <= KKT_TOLERANCE {
                break;
            }

            let newton = Newton::new(self, &it, &b, &k, &chol);
            let rc1 = it.s1.component_mul(&it.alpha);
            let rc2 = it.s2.component_mul(&it.beta);
            let aff = newton
                .refined(&r, &rc1, &rc2)
                .ok_or_else(|| singular(iteration))?;
            let step_aff = max_step(&it, &aff);
            let mu_aff = ((&it.s1 + &aff.ds1 * step_aff)
                .dot(&(&it.alpha + &aff.dalpha * step_aff))
                + (&it.s2 + &aff.ds2 * step_aff).dot(&(&it.beta + &aff.dbeta * step_aff)))
                / (2 * n) as f64;
            let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);
            let target = sigma * mu;
            let rc1 = DVector::from_fn(n, |i, _| rc1[i] + aff.ds1[i] * aff.dalpha[i] - target);
            let rc2 = DVector::from_fn(n, |i, _| rc2[i] + aff.ds2[i] * aff.dbeta[i] - target);
            let dir = newton
                .refined(&r, &rc1, &rc2)
                .ok_or_else(|| singular(iteration))?;
            let step = (0.99 * max_step(&it, &dir)).min(1.0);
            if step < 1e-14 {
                break;
            }

            it.u += &dir.du * step;
            it.c += dir.dc * step;
            it.xi += &dir.dxi * step;
            it.s1 += &dir.ds1 * step;
            it.s2 += &dir.ds2 * step;
            it.alpha += &dir.dalpha * step;
            it.beta += &dir.dbeta * step;
        }

        let (worst, best) = best.expect("at least one iteration runs");
        if worst <= ACCEPT_TOLERANCE {
            return Ok(best);
        }
        Err(Error::NonConvergence {
            iterations: max_iterations,
            primal_residual: last.0,
            dual_residual: last.1,
            gap: last.2,
            best: Some(Box::new(crate::qs_svm::QuadraticSurface::from_u(
                &best.u, best.c,
            ))),
        })
    }

    /// Scaled primal infeasibility, dual infeasibility and duality gap.
    fn measures(&self, it: &Iterate, r: &Residuals, mu: f64) -> (f64, f64, f64) {
        let primal = r.rp1.amax().max(r.rp2.amax());
        let dual_scale = 1.0 + self.eta + (&self.hessian * &it.u).amax();
        let dual = r.ru.amax().max(r.rc.abs()).max(r.rxi.amax()) / dual_scale;
        let obj = self.objective(&it.u, &it.xi).abs();
        (primal, dual, mu / (1.0 + obj))
    }

    fn finish(&self, it: &Iterate, iterations: usize, res: (f64, f64, f64)) -> QpSolution {
        // ξ at the optimum is the hinge 1 - a_iᵀu - y_i c; recomputing it
        // makes the margin constraints hold exactly for the returned u, c.
        let margin = &self.a * &it.u + &self.y * it.c;
        let xi = margin.map(|m| (1.0 - m).max(0.0));
        let objective = self.objective(&it.u, &xi);
        QpSolution {
            u: it.u.clone(),
            c: it.c,
            xi,
            alpha: it.alpha.clone(),
            objective,
            iterations,
            primal_residual: res.0,
            dual_residual: res.1,
            gap: res.2,
        }
    }
}

/// Newton system at one iterate, reduced to the bordered
/// `[[K + E, −y], [−yᵀ, 0]]` system with `E = s₁/α + s₂/β`.
struct Newton<'a> {
    qp: &'a SurfaceQp,
    it: &'a Iterate,
    b: &'a DMatrix<f64>,
    chol: &'a Cholesky<f64, Dyn>,
    d1: DVector<f64>,
    d2: DVector<f64>,
    lu: nalgebra::LU<f64, Dyn, Dyn>,
}

impl<'a> Newton<'a> {
    fn new(
        qp: &'a SurfaceQp,
        it: &'a Iterate,
        b: &'a DMatrix<f64>,
        k: &DMatrix<f64>,
        chol: &'a Cholesky<f64, Dyn>,
    ) -> Self {
        let n = qp.n();
        let d1 = it.alpha.component_div(&it.s1);
        let d2 = it.beta.component_div(&it.s2);
        let mut m = DMatrix::zeros(n + 1, n + 1);
        m.view_mut((0, 0), (n, n)).copy_from(k);
        for i in 0..n {
            m[(i, i)] += 1.0 / d1[i] + 1.0 / d2[i];
            m[(i, n)] = -qp.y[i];
            m[(n, i)] = -qp.y[i];
        }
        Self {
            qp,
            it,
            b,
            chol,
            d1,
            d2,
            lu: m.lu(),
        }
    }

    /// Step with `J·step = −(r, rc1, rc2)`.
    fn solve(&self, r: &Residuals, rc1: &DVector<f64>, rc2: &DVector<f64>) -> Option<Step> {
        let (qp, it, d1, d2) = (self.qp, self.it, &self.d1, &self.d2);
        let n = qp.n();
        // t = S⁻¹ r_c + D r_p
        let t1 = DVector::from_fn(n, |i, _| rc1[i] / it.s1[i] + d1[i] * r.rp1[i]);
        let t2 = DVector::from_fn(n, |i, _| rc2[i] / it.s2[i] + d2[i] * r.rp2[i]);
        let rhs_u = -&r.ru - qp.a.tr_mul(&t1);
        let rhs_c = -r.rc - qp.y.dot(&t1);
        let rhs_xi = -&r.rxi - &t1 - &t2;
        let hinv_rhs = self.chol.solve(&rhs_u);
        let mut full = DVector::zeros(n + 1);
        let top = self.b.tr_mul(&rhs_u);
        for i in 0..n {
            full[i] = top[i] + rhs_xi[i] / d2[i];
        }
        full[n] = -rhs_c;
        let sol = self.lu.solve(&full)?;
        let v = sol.rows(0, n).into_owned();
        let dc = sol[n];
        let du = hinv_rhs - self.b * &v;
        let e = &qp.a * &du + &qp.y * dc;
        let dxi = DVector::from_fn(n, |i, _| (rhs_xi[i] - d1[i] * e[i]) / (d1[i] + d2[i]));
        let g1 = &e + &dxi;
        let ds1 = &g1 + &r.rp1;
        let ds2 = &dxi + &r.rp2;
        let dalpha = DVector::from_fn(n, |i, _| -t1[i] - d1[i] * g1[i]);
        let dbeta = DVector::from_fn(n, |i, _| -t2[i] - d2[i] * dxi[i]);
        let ok = du
            .iter()
            .chain(dalpha.iter())
            .chain(dxi.iter())
            .all(|v| v.is_finite())
            && dc.is_finite();
        ok.then_some(Step {
            du,
            dc,
            dxi,
            ds1,
            ds2,
            dalpha,
            dbeta,
        })
    }

    /// One round of iterative refinement against the unreduced equations.
    fn refined(&self, r: &Residuals, rc1: &DVector<f64>, rc2: &DVector<f64>) -> Option<Step> {
        let (qp, it) = (self.qp, self.it);
        let mut s = self.solve(r, rc1, rc2)?;
        let defect = Residuals {
            ru: &qp.hessian * &s.du - qp.a.tr_mul(&s.dalpha) + &r.ru,
            rc: -qp.y.dot(&s.dalpha) + r.rc,
            rxi: -&s.dalpha - &s.dbeta + &r.rxi,
            rp1: &qp.a * &s.du + &qp.y * s.dc + &s.dxi - &s.ds1 + &r.rp1,
            rp2: &s.dxi - &s.ds2 + &r.rp2,
        };
        let dc1 = it.s1.component_mul(&s.dalpha) + it.alpha.component_mul(&s.ds1) + rc1;
        let dc2 = it.s2.component_mul(&s.dbeta) + it.beta.component_mul(&s.ds2) + rc2;
        let c = self.solve(&defect, &dc1, &dc2)?;
        s.du += c.du;
        s.dc += c.dc;
        s.dxi += c.dxi;
        s.ds1 += c.ds1;
        s.ds2 += c.ds2;
        s.dalpha += c.dalpha;
        s.dbeta += c.dbeta;
        Some(s)
    }
}

fn singular(iteration: usize) -> Error {
    Error::Numerical(format!(
        "interior-point Newton system became singular at iteration {iteration}"
    ))
}

fn factor_hessian(h: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(h.clone()) {
        return Ok(c);
    }
    // λ = 0 with too few points leaves directions without curvature; a ridge
    // far below the solver tolerance picks the minimum-norm surface.
    let ridge = 1e-12 * h.diagonal().amax().max(1.0);
    let mut reg = h.clone();
    for i in 0..reg.nrows() {
        reg[(i, i)] += ridge;
    }
    Cholesky::new(reg).ok_or_else(|| Error::Singular {
        pivot: 0,
        detail: "quadratic-surface Hessian is not positive definite".into(),
    })
}

fn max_step(it: &Iterate, d: &Step) -> f64 {
    let mut step = f64::INFINITY;
    let mut limit = |x: &DVector<f64>, dx: &DVector<f64>| {
        for (xi, dxi) in x.iter().zip(dx.iter()) {
            if *dxi < 0.0 {
                step = step.min(-xi / dxi);
            }
        }
    };
    limit(&it.s1, &d.ds1);
    limit(&it.s2, &d.ds2);
    limit(&it.alpha, &d.dalpha);
    limit(&it.beta, &d.dbeta);
    step.min(1.0)
}
