//! Kernel-free quadratic-surface SVM.
//!
//! A binary surface is `D(x) = ½xᵀWx + bᵀx + c` with symmetric `W`. Training
//! minimizes `Σᵢ‖Wxᵢ + b‖² + λ‖W‖²_F + η Σ ξᵢ` subject to the soft-margin
//! constraints; multiclass decisions use one-vs-one voting.

pub mod features;
pub mod qp;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use qp::SurfaceQp;

pub use features::{
    capon_spectrum, featurize_snapshots, COVARIANCE_FEATURE_VERSION, SPECTRUM_FEATURE_VERSION,
};

/// Separability check tolerance on the margin conditions.
pub const MARGIN_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    points: Vec<Vec<f64>>,
    labels: Vec<i64>,
    dim: usize,
}

impl LabeledDataset {
    pub fn new(points: Vec<Vec<f64>>, labels: Vec<i64>) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                actual: labels.len(),
            });
        }
        if points.len() < 2 {
            return invalid("a dataset needs at least two points");
        }
        let dim = points[0].len();
        if dim == 0 {
            return invalid("feature dimension must be at least 1");
        }
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return invalid("dataset contains a non-finite feature");
            }
        }
        Ok(Self {
            points,
            labels,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> Vec<i64> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Points labelled `pos` become +1, points labelled `neg` become −1;
    /// everything else is dropped.
    pub fn binary_subset(&self, pos: i64, neg: i64) -> Result<Self> {
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (p, &l) in self.points.iter().zip(&self.labels) {
            if l == pos || l == neg {
                points.push(p.clone());
                labels.push(if l == pos { 1 } else { -1 });
            }
        }
        Self::new(points, labels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSurface {
    pub dim: usize,
    /// Upper triangle of `W`, row-major.
    pub w_upper: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
}

/// Index of `W[r][c]` (r ≤ c) in row-major upper-triangular storage.
pub fn vech_index(dim: usize, r: usize, c: usize) -> usize {
    let (r, c) = if r <= c { (r, c) } else { (c, r) };
    r * dim - r * (r + 1) / 2 + c
}

pub fn vech_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Number of `(vech W, b)` parameters for feature dimension `dim`.
pub fn surface_params(dim: usize) -> usize {
    vech_len(dim) + dim
}

/// Lifted features: `½x_k²` on the diagonal, `x_k x_l` above it, then `x`,
/// so that `D(x) = lift(x)ᵀ(vech W, b) + c`.
pub fn lift(x: &[f64]) -> Vec<f64> {
    let m = x.len();
    let mut out = Vec::with_capacity(surface_params(m));
    for r in 0..m {
        out.push(0.5 * x[r] * x[r]);
        for c in r + 1..m {
            out.push(x[r] * x[c]);
        }
    }
    out.extend_from_slice(x);
    out
}

impl QuadraticSurface {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            w_upper: vec![0.0; vech_len(dim)],
            b: vec![0.0; dim],
            c: 0.0,
        }
    }

    pub fn from_matrix(w: &DMatrix<f64>, b: &[f64], c: f64) -> Result<Self> {
        let m = b.len();
        if w.nrows() != m || w.ncols() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: w.nrows(),
            });
        }
        if (w - w.transpose()).amax() > 0.0 {
            return invalid("W must be symmetric");
        }
        let mut w_upper = Vec::with_capacity(vech_len(m));
        for r in 0..m {
            for col in r..m {
                w_upper.push(w[(r, col)]);
            }
        }
        Ok(Self {
            dim: m,
            w_upper,
            b: b.to_vec(),
            c,
        })
    }

    /// Builds a surface from the stacked `(vech W, b)` vector.
    pub fn from_u(u: &DVector<f64>, c: f64) -> Self {
        let p = u.len();
        // p = m(m+3)/2
        let m = ((((9 + 8 * p) as f64).sqrt() - 3.0) / 2.0).round() as usize;
        let v = vech_len(m);
        Self {
            dim: m,
            w_upper: u.rows(0, v).iter().copied().collect(),
            b: u.rows(v, m).iter().copied().collect(),
            c,
        }
    }

    pub fn u(&self) -> DVector<f64> {
        DVector::from_iterator(
            surface_params(self.dim),
            self.w_upper.iter().chain(&self.b).copied(),
        )
    }

    pub fn w_matrix(&self) -> DMatrix<f64> {
        let m = self.dim;
        let mut w = DMatrix::zeros(m, m);
        let mut k = 0;
        for r in 0..m {
            for c in r..m {
                w[(r, c)] = self.w_upper[k];
                w[(c, r)] = self.w_upper[k];
                k += 1;
            }
        }
        w
    }

    pub fn w_frobenius(&self) -> f64 {
        self.w_matrix().norm()
    }

    pub fn b_norm(&self) -> f64 {
        self.b.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn negated(&self) -> Self {
        Self {
            dim: self.dim,
            w_upper: self.w_upper.iter().map(|v| -v).collect(),
            b: self.b.iter().map(|v| -v).collect(),
            c: -self.c,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let m = self.dim;
        let mut quad = 0.0;
        let mut k = 0;
        for r in 0..m {
            quad += 0.5 * self.w_upper[k] * x[r] * x[r];
            k += 1;
            for c in r + 1..m {
                quad += self.w_upper[k] * x[r] * x[c];
                k += 1;
            }
        }
        quad + self.b.iter().zip(x).map(|(b, x)| b * x).sum::<f64>() + self.c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QsSvmHyperparams {
    pub slack_penalty: f64,
    pub quad_regularizer: f64,
}

impl Default for QsSvmHyperparams {
    fn default() -> Self {
        Self {
            slack_penalty: 10.0,
            quad_regularizer: 1e-3,
        }
    }
}

impl QsSvmHyperparams {
    pub fn new(slack_penalty: f64, quad_regularizer: f64) -> Result<Self> {
        let hp = Self {
            slack_penalty,
            quad_regularizer,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.slack_penalty > 0.0 && self.slack_penalty.is_finite()) {
            return invalid(format!(
                "slack penalty must be positive, got {}",
                self.slack_penalty
            ));
        }
        if !(self.quad_regularizer >= 0.0 && self.quad_regularizer.is_finite()) {
            return invalid(format!(
                "quadratic regularizer must be non-negative, got {}",
                self.quad_regularizer
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BinaryTraining {
    pub surface: QuadraticSurface,
    pub slacks: Vec<f64>,
    /// `Σ‖Wx+b‖² + λ‖W‖²_F + η Σ ξ` at the returned point.
    pub objective: f64,
    pub iterations: usize,
}

fn check_binary(data: &LabeledDataset) -> Result<()> {
    let mut pos = 0;
    let mut neg = 0;
    for &l in data.labels() {
        match l {
            1 => pos += 1,
            -1 => neg += 1,
            other => return invalid(format!("binary labels must be ±1, found {other}")),
        }
    }
    if pos == 0 || neg == 0 {
        return invalid("binary training needs both classes present");
    }
    Ok(())
}

/// Hessian of `Σ‖Wxᵢ+b‖² + λ‖W‖²_F` over `u = (vech W, b)`, in the `½uᵀHu`
/// convention.
pub fn surface_hessian(points: &[Vec<f64>], lambda: f64) -> DMatrix<f64> {
    let m = points[0].len();
    let v = vech_len(m);
    let p = v + m;
    // S = Σ zzᵀ, z = [x; 1]
    let z = DMatrix::from_fn(
        m + 1,
        points.len(),
        |r, i| if r < m { points[i][r] } else { 1.0 },
    );
    let s = &z * z.transpose();
    let idx = |r: usize, c: usize| if c < m { vech_index(m, r, c) } else { v + r };
    let mut h = DMatrix::zeros(p, p);
    for r in 0..m {
        for c in 0..=m {
            let i = idx(r, c);
            for c2 in 0..=m {
                h[(i, idx(r, c2))] += 2.0 * s[(c, c2)];
            }
        }
    }
    for r in 0..m {
        for c in r..m {
            let k = vech_index(m, r, c);
            h[(k, k)] += 2.0 * lambda * if r == c { 1.0 } else { 2.0 };
        }
    }
    h
}

/// Assembles the training QP for a ±1-labelled dataset.
pub fn assemble_qp(data: &LabeledDataset, hp: &QsSvmHyperparams) -> Result<SurfaceQp> {
    hp.validate()?;
    check_binary(data)?;
    let p = surface_params(data.dim());
    let hessian = surface_hessian(data.points(), hp.quad_regularizer);
    let mut a = DMatrix::zeros(data.len(), p);
    for (i, (x, &y)) in data.points().iter().zip(data.labels()).enumerate() {
        for (k, v) in lift(x).into_iter().enumerate() {
            a[(i, k)] = y as f64 * v;
        }
    }
    let y = DVector::from_iterator(data.len(), data.labels().iter().map(|&l| l as f64));
    Ok(SurfaceQp {
        hessian,
        a,
        y,
        eta: hp.slack_penalty,
    })
}

/// Iteration cap: ten times the number of variables plus constraints.
pub fn iteration_cap(dim: usize, n: usize) -> usize {
    10 * (surface_params(dim) + 1 + n + 2 * n)
}

pub fn train_binary(data: &LabeledDataset, hp: &QsSvmHyperparams) -> Result<BinaryTraining> {
    let qp = assemble_qp(data, hp)?;
    let sol = qp.solve(iteration_cap(data.dim(), data.len()))?;
    Ok(BinaryTraining {
        surface: QuadraticSurface::from_u(&sol.u, sol.c),
        slacks: sol.xi.iter().copied().collect(),
        objective: sol.objective,
        iterations: sol.iterations,
    })
}

pub fn decide_pair(surface: &QuadraticSurface, x: &[f64]) -> Result<f64> {
    if x.len() != surface.dim {
        return Err(Error::DimensionMismatch {
            expected: surface.dim,
            actual: x.len(),
        });
    }
    Ok(surface.value(x))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub index: usize,
    pub label: i64,
    pub value: f64,
}

/// Points on the wrong side of their margin: `y = −1` with `D(x) > −1`, or
/// `y = +1` with `D(x) < 1`.
pub fn separability_report(data: &LabeledDataset, surface: &QuadraticSurface) -> Vec<Violation> {
    data.points()
        .iter()
        .zip(data.labels())
        .enumerate()
        .filter_map(|(index, (x, &label))| {
            let value = surface.value(x);
            let bad = if label > 0 {
                value < 1.0 - MARGIN_TOLERANCE
            } else {
                value > -1.0 + MARGIN_TOLERANCE
            };
            bad.then_some(Violation {
                index,
                label,
                value,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSurface {
    /// Index into `classes` of the +1 side.
    pub positive: usize,
    pub negative: usize,
    pub surface: QuadraticSurface,
    pub slacks: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QsSvmModel {
    pub classes: Vec<i64>,
    pub pairs: Vec<PairSurface>,
    pub hyperparams: QsSvmHyperparams,
    pub feature_version: String,
    pub dim: usize,
}

/// Per-class tallies of one multiclass decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteTally {
    /// `Σ_{j≠i} sign(D_ij(x))`.
    pub votes: Vec<i64>,
    /// Pairwise contests won by each class.
    pub wins: Vec<usize>,
    pub winner: usize,
}

impl VoteTally {
    fn from_decisions(
        g: usize,
        pairs: &[PairSurface],
        decisions: impl Iterator<Item = f64>,
    ) -> Self {
        let mut wins = vec![0usize; g];
        for (pair, d) in pairs.iter().zip(decisions) {
            if d >= 0.0 {
                wins[pair.positive] += 1;
            } else {
                wins[pair.negative] += 1;
            }
        }
        let votes: Vec<i64> = wins
            .iter()
            .map(|&w| 2 * w as i64 - (g as i64 - 1))
            .collect();
        let mut winner = 0;
        for (i, &v) in votes.iter().enumerate() {
            if v > votes[winner] {
                winner = i;
            }
        }
        Self {
            votes,
            wins,
            winner,
        }
    }

    /// Classes ordered by votes, ties by index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.votes.len()).collect();
        order.sort_by(|&a, &b| self.votes[b].cmp(&self.votes[a]).then(a.cmp(&b)));
        order
    }
}

pub fn train_multiclass(
    data: &LabeledDataset,
    hp: &QsSvmHyperparams,
    feature_version: &str,
) -> Result<QsSvmModel> {
    hp.validate()?;
    let classes = data.classes();
    if classes.len() < 2 {
        return invalid("multiclass training needs at least two classes");
    }
    let mut pairs = Vec::with_capacity(classes.len() * (classes.len() - 1) / 2);
    for i in 0..classes.len() {
        for j in i + 1..classes.len() {
            let subset = data.binary_subset(classes[i], classes[j])?;
            let t = train_binary(&subset, hp)?;
            pairs.push(PairSurface {
                positive: i,
                negative: j,
                surface: t.surface,
                slacks: t.slacks,
            });
        }
    }
    Ok(QsSvmModel {
        classes,
        pairs,
        hyperparams: *hp,
        feature_version: feature_version.to_string(),
        dim: data.dim(),
    })
}

impl QsSvmModel {
    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if self.classes.len() < 2
            || self.pairs.len() != self.classes.len() * (self.classes.len() - 1) / 2
        {
            return Err(Error::Untrained(
                "model does not cover every class pair".into(),
            ));
        }
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// `D_ij(x)` for class indices `i ≠ j`; `D_ji = −D_ij` exactly.
    pub fn pair_decision(&self, i: usize, j: usize, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        let (lo, hi, sign) = if i < j { (i, j, 1.0) } else { (j, i, -1.0) };
        let pair = self
            .pairs
            .iter()
            .find(|p| p.positive == lo && p.negative == hi)
            .ok_or_else(|| Error::Untrained(format!("no surface for classes {i} and {j}")))?;
        Ok(sign * pair.surface.value(x))
    }

    pub fn tally(&self, x: &[f64]) -> Result<VoteTally> {
        self.check(x)?;
        Ok(VoteTally::from_decisions(
            self.classes.len(),
            &self.pairs,
            self.pairs.iter().map(|p| p.surface.value(x)),
        ))
    }

    pub fn classify(&self, x: &[f64]) -> Result<i64> {
        Ok(self.classes[self.tally(x)?.winner])
    }

    /// Stacked `(vech W, b)` rows and offsets, one per pair.
    pub fn compile(&self) -> CompiledModel {
        let p = surface_params(self.dim);
        let mut z = DMatrix::zeros(self.pairs.len(), p);
        for (k, pair) in self.pairs.iter().enumerate() {
            z.row_mut(k).copy_from(&pair.surface.u().transpose());
        }
        CompiledModel {
            z,
            offsets: DVector::from_iterator(
                self.pairs.len(),
                self.pairs.iter().map(|p| p.surface.c),
            ),
            model: self.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// A model flattened for batched evaluation: all pairwise decisions of a
/// batch come from one matrix product.
#[derive(Debug, Clone)]
pub struct CompiledModel {
    z: DMatrix<f64>,
    offsets: DVector<f64>,
    model: QsSvmModel,
}

impl CompiledModel {
    pub fn model(&self) -> &QsSvmModel {
        &self.model
    }

    pub fn tally_batch(&self, batch: &[Vec<f64>]) -> Result<Vec<VoteTally>> {
        let m = self.model.dim;
        let p = surface_params(m);
        // one lifted sample per column, so each column is contiguous
        let mut lifted = DMatrix::zeros(p, batch.len());
        for (i, x) in batch.iter().enumerate() {
            self.model.check(x)?;
            let mut col = lifted.column_mut(i);
            let mut k = 0;
            for r in 0..m {
                col[k] = 0.5 * x[r] * x[r];
                k += 1;
                for c in r + 1..m {
                    col[k] = x[r] * x[c];
                    k += 1;
                }
            }
            for r in 0..m {
                col[k + r] = x[r];
            }
        }
        let d = &self.z * lifted;
        let g = self.model.classes.len();
        Ok(d.column_iter()
            .map(|col| {
                VoteTally::from_decisions(
                    g,
                    &self.model.pairs,
                    col.iter().zip(self.offsets.iter()).map(|(v, c)| v + c),
                )
            })
            .collect())
    }

    pub fn classify_batch(&self, batch: &[Vec<f64>]) -> Result<Vec<i64>> {
        Ok(self
            .tally_batch(batch)?
            .into_iter()
            .map(|t| self.model.classes[t.winner])
            .collect())
    }
}
