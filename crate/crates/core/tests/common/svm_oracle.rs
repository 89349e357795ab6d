use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus};
use nalgebra::{DMatrix, DVector};

/// Symmetric `W` and `b` from a `(vech W, b)` vector, upper triangle row-major.
fn unpack(u: &[f64], m: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut w = DMatrix::zeros(m, m);
    let mut k = 0;
    for r in 0..m {
        for c in r..m {
            w[(r, c)] = u[k];
            w[(c, r)] = u[k];
            k += 1;
        }
    }
    (w, DVector::from_column_slice(&u[k..k + m]))
}

fn params(m: usize) -> usize {
    m * (m + 1) / 2 + m
}

/// `Σ‖Wxᵢ+b‖² + λ‖W‖²_F`
pub fn flatness(points: &[Vec<f64>], lambda: f64, u: &[f64]) -> f64 {
    let m = points[0].len();
    let (w, b) = unpack(u, m);
    let fit: f64 = points
        .iter()
        .map(|x| (&w * DVector::from_column_slice(x) + &b).norm_squared())
        .sum();
    fit + lambda * w.norm_squared()
}

/// `½xᵀWx + bᵀx + c`
pub fn decision(u: &[f64], c: f64, x: &[f64]) -> f64 {
    let (w, b) = unpack(u, x.len());
    let x = DVector::from_column_slice(x);
    0.5 * x.dot(&(&w * &x)) + b.dot(&x) + c
}

fn unit(p: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; p];
    e[i] = 1.0;
    e
}

/// Hessian of `flatness` by polarization of the quadratic form.
pub fn hessian(points: &[Vec<f64>], lambda: f64) -> DMatrix<f64> {
    let p = params(points[0].len());
    let f = |u: &[f64]| flatness(points, lambda, u);
    DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            2.0 * f(&unit(p, i))
        } else {
            let mut e = unit(p, i);
            e[j] = 1.0;
            f(&e) - f(&unit(p, i)) - f(&unit(p, j))
        }
    })
}

pub struct Reference {
    pub objective: f64,
    pub u: Vec<f64>,
    pub c: f64,
    pub slacks: Vec<f64>,
}

/// Soft-margin surface training solved by an external interior-point solver:
/// `min flatness + η Σξ` s.t. `yᵢ D(xᵢ) ≥ 1 − ξᵢ`, `ξ ≥ 0`.
pub fn reference_train(points: &[Vec<f64>], labels: &[i64], eta: f64, lambda: f64) -> Reference {
    let n = points.len();
    let m = points[0].len();
    let p = params(m);
    let nv = p + 1 + n;
    let h = hessian(points, lambda);
    let (mut pi, mut pj, mut pv) = (vec![], vec![], vec![]);
    for j in 0..p {
        for i in 0..=j {
            if h[(i, j)] != 0.0 {
                pi.push(i);
                pj.push(j);
                pv.push(h[(i, j)]);
            }
        }
    }
    let pmat = CscMatrix::new_from_triplets(nv, nv, pi, pj, pv);
    let mut q = vec![0.0; nv];
    for v in &mut q[p + 1..] {
        *v = eta;
    }
    let (mut ai, mut aj, mut av) = (vec![], vec![], vec![]);
    let mut b = vec![0.0; 2 * n];
    for (i, (x, &y)) in points.iter().zip(labels).enumerate() {
        let y = y as f64;
        for k in 0..p {
            // D(x) is linear in u; its coefficient on u_k is D at the unit vector
            let phi = decision(&unit(p, k), 0.0, x);
            if phi != 0.0 {
                ai.push(i);
                aj.push(k);
                av.push(-y * phi);
            }
        }
        ai.push(i);
        aj.push(p);
        av.push(-y);
        ai.push(i);
        aj.push(p + 1 + i);
        av.push(-1.0);
        b[i] = -1.0;
        ai.push(n + i);
        aj.push(p + 1 + i);
        av.push(-1.0);
    }
    let amat = CscMatrix::new_from_triplets(2 * n, nv, ai, aj, av);
    let settings = DefaultSettings {
        verbose: false,
        tol_gap_abs: 1e-11,
        tol_gap_rel: 1e-11,
        tol_feas: 1e-11,
        max_iter: 500,
        ..DefaultSettings::default()
    };
    let cones = [NonnegativeConeT(2 * n)];
    let mut solver = DefaultSolver::new(&pmat, &q, &amat, &b, &cones, settings).unwrap();
    solver.solve();
    assert!(
        matches!(
            solver.solution.status,
            SolverStatus::Solved | SolverStatus::AlmostSolved
        ),
        "reference solver: {:?}",
        solver.solution.status
    );
    let x = &solver.solution.x;
    Reference {
        objective: solver.solution.obj_val,
        u: x[..p].to_vec(),
        c: x[p],
        slacks: x[p + 1..].to_vec(),
    }
}
