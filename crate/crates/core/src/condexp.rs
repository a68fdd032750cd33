//! One-step conditional expectation estimators.
//!
//! Two backends compute `E[V_i | F_{i−1}]` and `(1/Δt) E[V_i ΔW_i | F_{i−1}]`:
//! Gauss–Hermite quadrature over the Euler transition applied to tabulated
//! value functions, and least-squares regression on simulated samples.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::forward::euler_step;
use crate::model::Coefficients;
use crate::{Error, Result};

/// Nodes and weights for `E[h(ξ)]`, `ξ ~ N(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// `q`-point Gauss–Hermite rule for the standard normal law, exact for
    /// polynomials of degree `≤ 2q − 1`. Golub–Welsch on the probabilists'
    /// Jacobi matrix, then symmetrised.
    pub fn gauss_hermite(q: usize) -> Result<Self> {
        if q < 2 {
            return Err(Error::InvalidConfig(format!(
                "quadrature order must be >= 2, got {q}"
            )));
        }
        let mut jacobi = DMatrix::<f64>::zeros(q, q);
        for k in 1..q {
            let b = (k as f64).sqrt();
            jacobi[(k - 1, k)] = b;
            jacobi[(k, k - 1)] = b;
        }
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..q)
            .map(|j| (eig.eigenvalues[j], eig.eigenvectors[(0, j)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut nodes = vec![0.0; q];
        let mut weights = vec![0.0; q];
        for j in 0..q {
            let m = q - 1 - j;
            nodes[j] = 0.5 * (pairs[j].0 - pairs[m].0);
            weights[j] = 0.5 * (pairs[j].1 + pairs[m].1);
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self { nodes, weights })
    }

    /// `ξ = ±1` with probability ½ each: matches the first two moments.
    pub fn two_point() -> Self {
        Self {
            nodes: vec![-1.0, 1.0],
            weights: vec![0.5, 0.5],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn expect(&self, h: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * h(x))
            .sum()
    }
}

/// Tabulated function with cubic Hermite interpolation and flat
/// extrapolation.
///
/// Slopes come from 5-point Lagrange stencils. Where the data is monotone
/// over two intervals on each side of a node, the slope is limited to keep
/// the interpolant monotone there. Outside the nodes the edge values are
/// returned. An optional envelope clamps interpolated values, e.g. to an a
/// priori bound on the tabulated function.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunctionTable {
    nodes: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
    range: (f64, f64),
    envelope: Option<(f64, f64)>,
    uniform: Option<(f64, f64)>,
}

impl ValueFunctionTable {
    pub fn new(nodes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != values.len() {
            return Err(Error::InvalidConfig(format!(
                "table needs matching nonempty nodes/values, got {} and {}",
                nodes.len(),
                values.len()
            )));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidConfig(
                "table nodes must be strictly increasing".into(),
            ));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("table value {v}")));
        }
        let slopes = hermite_slopes(&nodes, &values);
        let range = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let uniform = uniform_spacing(&nodes);
        Ok(Self {
            nodes,
            values,
            slopes,
            range,
            envelope: None,
            uniform,
        })
    }

    /// Clamp interpolated values to `[lo, hi]`. Stored values are untouched.
    pub fn with_envelope(mut self, lo: f64, hi: f64) -> Self {
        if lo <= hi {
            self.envelope = Some((lo, hi));
        }
        self
    }

    pub fn from_fn(nodes: Vec<f64>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = nodes.iter().map(|&x| f(x)).collect();
        Self::new(nodes, values)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_range(&self) -> (f64, f64) {
        self.range
    }

    /// Index `j` with `x_j ≤ x < x_{j+1}`; caller guarantees `x` is inside.
    fn interval(&self, x: f64) -> usize {
        let last = self.nodes.len() - 2;
        match self.uniform {
            Some((lo, h)) => {
                let mut j = (((x - lo) / h) as usize).min(last);
                while j > 0 && self.nodes[j] > x {
                    j -= 1;
                }
                while j < last && self.nodes[j + 1] <= x {
                    j += 1;
                }
                j
            }
            None => (self.nodes.partition_point(|&s| s <= x) - 1).min(last),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let m = self.nodes.len();
        if x <= self.nodes[0] || m == 1 {
            return self.values[0];
        }
        if x >= self.nodes[m - 1] {
            return self.values[m - 1];
        }
        let j = self.interval(x);
        let (x0, x1) = (self.nodes[j], self.nodes[j + 1]);
        if x == x0 {
            return self.values[j];
        }
        let h = x1 - x0;
        let s = (x - x0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let v = h00 * self.values[j]
            + h * h10 * self.slopes[j]
            + h01 * self.values[j + 1]
            + h * h11 * self.slopes[j + 1];
        match self.envelope {
            Some((lo, hi)) => v.clamp(lo, hi),
            None => v,
        }
    }
}

fn uniform_spacing(nodes: &[f64]) -> Option<(f64, f64)> {
    if nodes.len() < 2 {
        return None;
    }
    let m = nodes.len() - 1;
    let h = (nodes[m] - nodes[0]) / m as f64;
    let ok = nodes
        .iter()
        .enumerate()
        .all(|(j, &x)| (x - (nodes[0] + j as f64 * h)).abs() <= 1e-9 * h);
    ok.then_some((nodes[0], h))
}

fn hermite_slopes(x: &[f64], v: &[f64]) -> Vec<f64> {
    let m = x.len();
    if m < 2 {
        return vec![0.0; m];
    }
    let secant: Vec<f64> = (0..m - 1)
        .map(|i| (v[i + 1] - v[i]) / (x[i + 1] - x[i]))
        .collect();
    (0..m)
        .map(|j| {
            let width = 5.min(m);
            let start = j.saturating_sub(2).min(m - width);
            let mut s = lagrange_derivative(
                &x[start..start + width],
                &v[start..start + width],
                j - start,
            );
            // intervals j-2..=j+1 around node j, where they exist
            let around: Vec<f64> = (j.saturating_sub(2)..(j + 2).min(m - 1))
                .map(|i| secant[i])
                .collect();
            let pos = around.iter().all(|&d| d >= 0.0);
            let neg = around.iter().all(|&d| d <= 0.0);
            if pos || neg {
                let left = if j > 0 {
                    secant[j - 1].abs()
                } else {
                    f64::INFINITY
                };
                let right = if j + 1 < m {
                    secant[j].abs()
                } else {
                    f64::INFINITY
                };
                let cap = 3.0 * left.min(right);
                let sign = if pos { 1.0 } else { -1.0 };
                s = sign * (sign * s).clamp(0.0, cap);
            }
            if s.is_finite() {
                s
            } else {
                0.0
            }
        })
        .collect()
}

/// Derivative at `x[j]` of the interpolating polynomial through all points.
fn lagrange_derivative(x: &[f64], v: &[f64], j: usize) -> f64 {
    let xj = x[j];
    let mut d = 0.0;
    for i in 0..x.len() {
        if i == j {
            let own: f64 = (0..x.len())
                .filter(|&l| l != j)
                .map(|l| 1.0 / (xj - x[l]))
                .sum();
            d += v[j] * own;
        } else {
            let mut w = 1.0 / (x[i] - xj);
            for l in 0..x.len() {
                if l != i && l != j {
                    w *= (xj - x[l]) / (x[i] - x[l]);
                }
            }
            d += v[i] * w;
        }
    }
    d
}

/// `(E[v(X')], E[v(X') ΔW]/Δt)` at each node `x`, where `X' = x + b(t,x)Δt +
/// σ(t)ΔW` and `ΔW = √Δt·ξ`.
pub fn quadrature_pair<C, F>(
    v_next: F,
    coeffs: &C,
    t_prev: f64,
    dt: f64,
    rule: &QuadratureRule,
    nodes: &[f64],
) -> (Vec<f64>, Vec<f64>)
where
    C: Coefficients + ?Sized,
    F: Fn(f64) -> f64 + Sync,
{
    let sq = dt.sqrt();
    nodes
        .par_iter()
        .map(|&x| {
            // nodes and weights are symmetric: pairing ±ξ makes Z of an even
            // function vanish exactly
            let q = rule.len();
            let mut e = 0.0;
            let mut z = 0.0;
            for j in 0..q / 2 {
                let m = q - 1 - j;
                let (dw_j, dw_m) = (sq * rule.nodes[j], sq * rule.nodes[m]);
                let v_j = v_next(euler_step(coeffs, t_prev, x, dt, dw_j));
                let v_m = v_next(euler_step(coeffs, t_prev, x, dt, dw_m));
                e += rule.weights[j] * v_j;
                e += rule.weights[m] * v_m;
                z += rule.weights[j] * (v_j * dw_j + v_m * dw_m);
            }
            if q % 2 == 1 {
                let mid = q / 2;
                e += rule.weights[mid]
                    * v_next(euler_step(coeffs, t_prev, x, dt, sq * rule.nodes[mid]));
            }
            (e, z / dt)
        })
        .unzip()
}

pub fn quadrature_condexp<C: Coefficients + ?Sized>(
    v_next: &ValueFunctionTable,
    coeffs: &C,
    t_prev: f64,
    dt: f64,
    rule: &QuadratureRule,
) -> Result<ValueFunctionTable> {
    let nodes = v_next.nodes().to_vec();
    let (e, _) = quadrature_pair(|x| v_next.eval(x), coeffs, t_prev, dt, rule, &nodes);
    ValueFunctionTable::new(nodes, e)
}

pub fn quadrature_weighted_condexp<C: Coefficients + ?Sized>(
    v_next: &ValueFunctionTable,
    coeffs: &C,
    t_prev: f64,
    dt: f64,
    rule: &QuadratureRule,
) -> Result<ValueFunctionTable> {
    let nodes = v_next.nodes().to_vec();
    let (_, z) = quadrature_pair(|x| v_next.eval(x), coeffs, t_prev, dt, rule, &nodes);
    ValueFunctionTable::new(nodes, z)
}

/// Regression families for the least-squares estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BasisFamily {
    /// Global monomials up to `degree`, fitted on a standardised variable.
    Polynomial { degree: usize },
    /// Hat functions on knots at empirical quantiles (`bins` intervals).
    PiecewiseLinear { bins: usize },
    /// One indicator per distinct sample value (group means).
    Saturated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionBasis {
    pub family: BasisFamily,
    /// Ridge `ε`: `ε · trace(AᵀA)/dim` is added to the diagonal.
    pub ridge: f64,
}

impl RegressionBasis {
    pub fn polynomial(degree: usize) -> Self {
        Self {
            family: BasisFamily::Polynomial { degree },
            ridge: 1e-10,
        }
    }

    pub fn piecewise_linear(bins: usize) -> Self {
        Self {
            family: BasisFamily::PiecewiseLinear { bins },
            ridge: 1e-10,
        }
    }

    pub fn saturated() -> Self {
        Self {
            family: BasisFamily::Saturated,
            ridge: 0.0,
        }
    }

    pub fn with_ridge(mut self, ridge: f64) -> Self {
        self.ridge = ridge;
        self
    }
}

impl Default for RegressionBasis {
    fn default() -> Self {
        Self::piecewise_linear(32)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum FitKind {
    Constant(f64),
    Polynomial {
        centre: f64,
        scale: f64,
        coef: Vec<f64>,
    },
    Hat {
        knots: Vec<f64>,
        coef: Vec<f64>,
    },
    Groups {
        keys: Vec<f64>,
        means: Vec<f64>,
    },
}

/// Fitted regression function.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    kind: FitKind,
}

impl Fit {
    pub fn eval(&self, x: f64) -> f64 {
        match &self.kind {
            FitKind::Constant(c) => *c,
            FitKind::Polynomial {
                centre,
                scale,
                coef,
            } => {
                let u = (x - centre) / scale;
                coef.iter().rev().fold(0.0, |acc, &c| acc * u + c)
            }
            FitKind::Hat { knots, coef } => {
                let m = knots.len();
                if x <= knots[0] {
                    return coef[0];
                }
                if x >= knots[m - 1] {
                    return coef[m - 1];
                }
                let j = knots.partition_point(|&k| k <= x) - 1;
                let s = (x - knots[j]) / (knots[j + 1] - knots[j]);
                (1.0 - s) * coef[j] + s * coef[j + 1]
            }
            FitKind::Groups { keys, means } => {
                let j = keys.partition_point(|&k| k < x);
                let j = if j == keys.len() || (j > 0 && x - keys[j - 1] < keys[j] - x) {
                    j - 1
                } else {
                    j
                };
                means[j]
            }
        }
    }

    /// Raw monomial coefficients `c_0 + c_1 x + …` for polynomial fits.
    pub fn monomial_coefficients(&self) -> Option<Vec<f64>> {
        match &self.kind {
            FitKind::Constant(c) => Some(vec![*c]),
            FitKind::Polynomial {
                centre,
                scale,
                coef,
            } => {
                let d = coef.len();
                let mut raw = vec![0.0; d];
                // Σ a_k ((x − c)/s)^k expanded binomially
                for (k, &a) in coef.iter().enumerate() {
                    let ak = a / scale.powi(k as i32);
                    let mut binom = 1.0;
                    for j in 0..=k {
                        raw[j] += ak * binom * (-centre).powi((k - j) as i32);
                        binom = binom * (k - j) as f64 / (j + 1) as f64;
                    }
                }
                Some(raw)
            }
            _ => None,
        }
    }
}

fn solve_normal(
    design_rows: impl Fn(usize, &mut Vec<(usize, f64)>),
    n: usize,
    dim: usize,
    y: &[f64],
    ridge: f64,
) -> Result<Vec<f64>> {
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    let mut row = Vec::with_capacity(dim);
    for p in 0..n {
        row.clear();
        design_rows(p, &mut row);
        for &(i, vi) in row.iter() {
            rhs[i] += vi * y[p];
            for &(j, vj) in row.iter() {
                a[(i, j)] += vi * vj;
            }
        }
    }
    let trace: f64 = (0..dim).map(|i| a[(i, i)]).sum();
    if ridge > 0.0 {
        let shift = ridge * trace / dim as f64;
        for i in 0..dim {
            a[(i, i)] += shift;
        }
    }
    let chol = a.clone().cholesky().ok_or_else(|| {
        Error::EstimatorDegenerate(format!("normal equations of dimension {dim} are singular"))
    })?;
    // relative pivot check: Cholesky succeeds on numerically singular designs
    let diag = chol.l_dirty().diagonal();
    let max_pivot = diag.iter().fold(0.0f64, |m, &d| m.max(d * d));
    let min_pivot = diag.iter().fold(f64::INFINITY, |m, &d| m.min(d * d));
    if min_pivot <= 1e-13 * max_pivot {
        return Err(Error::EstimatorDegenerate(format!(
            "design of dimension {dim} is rank deficient (pivot ratio {:e})",
            min_pivot / max_pivot
        )));
    }
    let sol = chol.solve(&rhs);
    if sol.iter().any(|c| !c.is_finite()) {
        return Err(Error::EstimatorDegenerate(
            "non-finite regression coefficients".into(),
        ));
    }
    Ok(sol.iter().copied().collect())
}

/// Least-squares projection of `v_next` on the basis evaluated at `x_prev`.
pub fn lsmc_condexp(x_prev: &[f64], v_next: &[f64], basis: &RegressionBasis) -> Result<Fit> {
    let n = x_prev.len();
    if n == 0 || n != v_next.len() {
        return Err(Error::InvalidConfig(format!(
            "regression needs matching nonempty samples, got {} and {}",
            n,
            v_next.len()
        )));
    }
    if let Some(v) = x_prev.iter().chain(v_next).find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("regression sample {v}")));
    }
    let (lo, hi) = x_prev
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| {
            (l.min(x), h.max(x))
        });
    let mean_y = v_next.iter().sum::<f64>() / n as f64;
    match basis.family {
        BasisFamily::Saturated => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| x_prev[a].total_cmp(&x_prev[b]));
            let mut keys: Vec<f64> = Vec::new();
            let mut sums: Vec<(f64, usize)> = Vec::new();
            for &p in &order {
                if keys.last() != Some(&x_prev[p]) {
                    keys.push(x_prev[p]);
                    sums.push((0.0, 0));
                }
                let s = sums.last_mut().expect("pushed above");
                s.0 += v_next[p];
                s.1 += 1;
            }
            let means = sums.iter().map(|(s, c)| s / *c as f64).collect();
            Ok(Fit {
                kind: FitKind::Groups { keys, means },
            })
        }
        _ if hi - lo <= 1e-12 * (1.0 + lo.abs().max(hi.abs())) => Ok(Fit {
            kind: FitKind::Constant(mean_y),
        }),
        BasisFamily::Polynomial { degree } => {
            let dim = degree + 1;
            if n < dim {
                return Err(Error::EstimatorDegenerate(format!(
                    "{n} samples for {dim} basis functions"
                )));
            }
            let centre = 0.5 * (lo + hi);
            let scale = 0.5 * (hi - lo);
            let coef = solve_normal(
                |p, row| {
                    let u = (x_prev[p] - centre) / scale;
                    let mut m = 1.0;
                    for k in 0..dim {
                        row.push((k, m));
                        m *= u;
                    }
                },
                n,
                dim,
                v_next,
                basis.ridge,
            )?;
            Ok(Fit {
                kind: FitKind::Polynomial {
                    centre,
                    scale,
                    coef,
                },
            })
        }
        BasisFamily::PiecewiseLinear { bins } => {
            let mut sorted = x_prev.to_vec();
            sorted.sort_by(f64::total_cmp);
            let bins = bins.max(1);
            let mut knots: Vec<f64> = (0..=bins)
                .map(|b| sorted[((b * (n - 1)) as f64 / bins as f64).round() as usize])
                .collect();
            knots.dedup();
            if knots.len() < 2 {
                return Ok(Fit {
                    kind: FitKind::Constant(mean_y),
                });
            }
            let dim = knots.len();
            let coef = solve_normal(
                |p, row| {
                    let x = x_prev[p];
                    let j = (knots.partition_point(|&k| k <= x).max(1) - 1).min(dim - 2);
                    let s = ((x - knots[j]) / (knots[j + 1] - knots[j])).clamp(0.0, 1.0);
                    row.push((j, 1.0 - s));
                    row.push((j + 1, s));
                },
                n,
                dim,
                v_next,
                basis.ridge,
            )?;
            Ok(Fit {
                kind: FitKind::Hat { knots, coef },
            })
        }
    }
}

/// Regression of `v·ΔW/Δt` on the basis evaluated at `x_prev`.
pub fn lsmc_weighted_condexp(
    x_prev: &[f64],
    v_next: &[f64],
    dw: &[f64],
    dt: f64,
    basis: &RegressionBasis,
) -> Result<Fit> {
    if dw.len() != v_next.len() {
        return Err(Error::InvalidConfig(
            "increments and samples differ in length".into(),
        ));
    }
    let target: Vec<f64> = v_next.iter().zip(dw).map(|(v, w)| v * w / dt).collect();
    lsmc_condexp(x_prev, &target, basis)
}
