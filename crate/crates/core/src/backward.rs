//! Implicit backward schemes for the post-jump family and the pre-jump
//! equation, and the recombined triple `(Yπ, Zπ, Uπ)`.
//!
//! For `i ≥ k` the post-jump state `X¹π(t_k)` moves with the jump-free Euler
//! kernel and the post-jump driver is called with `u = 0`. The family value
//! `Y¹π_{t_i}(t_k)` is therefore one function of the current state for all
//! `k ≤ i`, and a single table (or regression) per step serves every `k`.

use rayon::prelude::*;

use crate::condexp::{
    lsmc_condexp, lsmc_weighted_condexp, quadrature_pair, Fit, QuadratureRule, RegressionBasis,
    ValueFunctionTable,
};
use crate::forward::{euler_step, JumpPath, PathBundle, TimeGrid};
use crate::model::{AssumptionConstants, Coefficients, Generator};
use crate::{Error, Result};

const STEP_TOL: f64 = 1e-12;
const STEP_MAX_ITER: usize = 50;
/// Bytes the LSMC solver may allocate for its path arrays.
pub const LSMC_MEMORY_BUDGET: usize = 2 << 30;

/// How the driver's `u` argument depends on the unknown `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UInput {
    Fixed(f64),
    /// `u = diag − y`
    Diagonal(f64),
}

impl UInput {
    #[inline]
    fn at(self, y: f64) -> f64 {
        match self {
            UInput::Fixed(u) => u,
            UInput::Diagonal(d) => d - y,
        }
    }
}

/// Solves `y = e_y + f(t, x, y, z, u(y))Δt` by Picard iteration.
///
/// `lipschitz` is the Lipschitz constant of `y ↦ f(…, y, …, u(y))`; the map
/// is a contraction iff `lipschitz·Δt < 1`.
#[allow(clippy::too_many_arguments)]
pub fn implicit_step<G: Generator + ?Sized>(
    e_y: f64,
    z: f64,
    x: f64,
    t: f64,
    dt: f64,
    f: &G,
    u: UInput,
    lipschitz: f64,
) -> Result<f64> {
    if lipschitz * dt >= 1.0 {
        return Err(Error::MeshTooCoarse { lipschitz, dt });
    }
    let mut y = e_y;
    let mut residual = f64::INFINITY;
    for _ in 0..STEP_MAX_ITER {
        let next = e_y + f.generator(t, x, y, z, u.at(y)) * dt;
        if !next.is_finite() {
            return Err(Error::NonFinite(format!(
                "implicit step at t = {t}, x = {x}"
            )));
        }
        residual = (next - y).abs();
        y = next;
        if residual <= STEP_TOL {
            return Ok(y);
        }
    }
    Err(Error::ConvergenceFailure {
        iterations: STEP_MAX_ITER,
        residual,
    })
}

/// Lipschitz constants for the two implicit steps and the a priori bound on
/// `|Y|` used as interpolation envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControls {
    /// `K_q`: post-jump step, `u = 0`.
    pub family_lipschitz: f64,
    /// `K_q + K_f`: pre-jump step, where `u = diag − y` also moves with `y`.
    pub pre_lipschitz: f64,
    pub bound: Option<f64>,
}

impl StepControls {
    pub fn from_constants(c: &AssumptionConstants) -> Self {
        let m = c.effective_m_y();
        Self {
            family_lipschitz: c.k_q,
            pre_lipschitz: c.k_q + c.k_f,
            bound: m.is_finite().then_some(m),
        }
    }
}

/// Spatial nodes of the quadrature tables.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeLayout {
    Uniform {
        lower: f64,
        upper: f64,
        count: usize,
    },
    /// Per-step node sets for the pre-jump and post-jump tables.
    Explicit {
        pre: Vec<Vec<f64>>,
        post: Vec<Vec<f64>>,
    },
}

impl NodeLayout {
    /// `[x0 − cσ̄√T, x0 + cσ̄√T]` widened by the jump and drift ranges, with
    /// half-width at least 1.
    pub fn auto<C: Coefficients + ?Sized>(
        coeffs: &C,
        x0: f64,
        horizon: f64,
        width: f64,
        count: usize,
    ) -> Self {
        let sigma = coeffs
            .diffusion(0.0)
            .abs()
            .max(coeffs.diffusion(horizon).abs());
        let half = (width * sigma * horizon.sqrt()).max(1.0);
        let (lo, hi) = (x0 - half, x0 + half);
        let probes = [lo, x0, hi];
        let times = [0.0, horizon];
        let mut beta_lo: f64 = 0.0;
        let mut beta_hi: f64 = 0.0;
        let mut drift: f64 = 0.0;
        for &t in &times {
            for &x in &probes {
                let b = coeffs.jump_size(t, x);
                beta_lo = beta_lo.min(b);
                beta_hi = beta_hi.max(b);
                drift = drift.max(coeffs.drift(t, x).abs());
            }
        }
        NodeLayout::Uniform {
            lower: lo + beta_lo - drift * horizon,
            upper: hi + beta_hi + drift * horizon,
            count,
        }
    }

    fn pre(&self, i: usize) -> Vec<f64> {
        match self {
            NodeLayout::Uniform { .. } => self.uniform_nodes(),
            NodeLayout::Explicit { pre, .. } => pre[i].clone(),
        }
    }

    fn post(&self, i: usize) -> Vec<f64> {
        match self {
            NodeLayout::Uniform { .. } => self.uniform_nodes(),
            NodeLayout::Explicit { post, .. } => post[i].clone(),
        }
    }

    fn uniform_nodes(&self) -> Vec<f64> {
        match *self {
            NodeLayout::Uniform {
                lower,
                upper,
                count,
            } => {
                let m = count.max(2) - 1;
                (0..=m)
                    .map(|j| lower + (upper - lower) * (j as f64 / m as f64))
                    .collect()
            }
            NodeLayout::Explicit { .. } => unreachable!("explicit layouts carry their nodes"),
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        match self {
            NodeLayout::Uniform {
                lower,
                upper,
                count,
            } => {
                if !(lower < upper) || *count < 2 {
                    return Err(Error::InvalidConfig(format!(
                        "uniform layout needs lower < upper and >= 2 nodes, got [{lower}, {upper}] x {count}"
                    )));
                }
            }
            NodeLayout::Explicit { pre, post } => {
                if pre.len() != n + 1 || post.len() != n + 1 {
                    return Err(Error::InvalidConfig(format!(
                        "explicit layout needs {} node sets per branch",
                        n + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Every state reachable under `rule` from `x0`: pre-jump states and
    /// post-jump states for every jump index, with the jumped state keyed on
    /// the current node as `x + β(t_{i−1}, x)`.
    pub fn lattice<C: Coefficients + ?Sized>(
        coeffs: &C,
        grid: &TimeGrid,
        x0: f64,
        rule: &QuadratureRule,
    ) -> Self {
        let n = grid.n();
        let mut pre = vec![vec![x0]];
        let mut post = vec![vec![x0 + coeffs.jump_size(grid.t(0), x0)]];
        for i in 1..=n {
            let (t, dt) = (grid.t(i - 1), grid.dt(i));
            let step = |set: &[f64]| -> Vec<f64> {
                let mut out = Vec::with_capacity(set.len() * rule.len());
                for &x in set {
                    for &xi in &rule.nodes {
                        out.push(euler_step(coeffs, t, x, dt, dt.sqrt() * xi));
                    }
                }
                out
            };
            let next_pre = sorted_unique(step(&pre[i - 1]));
            let mut next_post = step(&post[i - 1]);
            next_post.extend(next_pre.iter().map(|&x| x + coeffs.jump_size(t, x)));
            post.push(sorted_unique(next_post));
            pre.push(next_pre);
        }
        NodeLayout::Explicit { pre, post }
    }
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Conditional expectation backend.
#[derive(Debug, Clone)]
pub enum Backend<'b> {
    Quadrature {
        rule: QuadratureRule,
        layout: NodeLayout,
    },
    Lsmc {
        bundle: &'b PathBundle,
        basis: RegressionBasis,
    },
}

#[derive(Debug, Clone)]
enum FamilyRepr {
    /// `y[i]`, `z[i]` for `i < n`.
    Tables {
        y: Vec<ValueFunctionTable>,
        z: Vec<ValueFunctionTable>,
    },
    /// Fitted `E[Y¹_{i+1} | X_i]` and `Z¹_i` for `i < n`.
    Fits { e: Vec<Fit>, z: Vec<Fit> },
}

#[derive(Debug, Clone)]
enum PreRepr {
    Tables {
        y: Vec<ValueFunctionTable>,
        z: Vec<ValueFunctionTable>,
    },
    Fits {
        e: Vec<Fit>,
        z: Vec<Fit>,
    },
}

/// Solution of the post-jump family on a grid.
#[derive(Clone)]
pub struct BackwardFamilySolution<'a> {
    coeffs: &'a dyn Coefficients,
    grid: TimeGrid,
    x0: f64,
    controls: StepControls,
    repr: FamilyRepr,
}

impl<'a> BackwardFamilySolution<'a> {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// `Y¹π_{t_i}(t_k)` at post-jump state `x`; defined for `i ≥ k`.
    pub fn y1(&self, i: usize, k: usize, x: f64) -> Result<f64> {
        if i < k {
            return Err(Error::InvalidConfig(format!(
                "family value needs i >= k, got i={i}, k={k}"
            )));
        }
        self.value(i, x)
    }

    pub fn z1(&self, i: usize, k: usize, x: f64) -> Result<f64> {
        if i < k {
            return Err(Error::InvalidConfig(format!(
                "family value needs i >= k, got i={i}, k={k}"
            )));
        }
        Ok(self.z(i, x))
    }

    fn value(&self, i: usize, x: f64) -> Result<f64> {
        let n = self.grid.n();
        if i == n {
            return Ok(self.coeffs.terminal(x));
        }
        match &self.repr {
            FamilyRepr::Tables { y, .. } => Ok(y[i].eval(x)),
            FamilyRepr::Fits { e, z } => implicit_step(
                e[i].eval(x),
                z[i].eval(x),
                x,
                self.grid.t(i),
                self.grid.dt(i + 1),
                self.coeffs,
                UInput::Fixed(0.0),
                self.controls.family_lipschitz,
            ),
        }
    }

    fn z(&self, i: usize, x: f64) -> f64 {
        if i == self.grid.n() {
            return 0.0;
        }
        match &self.repr {
            FamilyRepr::Tables { z, .. } => z[i].eval(x),
            FamilyRepr::Fits { z, .. } => z[i].eval(x),
        }
    }

    /// Jumped state `x_i + β(t_{i−1}, x_{i−1})` (`x_0 + β(t_0, x_0)` at 0).
    pub fn jumped_state(&self, i: usize, x: f64, x_prev: f64) -> f64 {
        x + self
            .coeffs
            .jump_size(self.grid.t(i.saturating_sub(1)), x_prev)
    }

    /// `Y¹π_{t_i}(t_i)` for pre-jump state `x` at `t_i` and `x_prev` at
    /// `t_{i−1}`.
    pub fn diag(&self, i: usize, x: f64, x_prev: f64) -> Result<f64> {
        self.value(i, self.jumped_state(i, x, x_prev))
    }
}

pub fn solve_y1_family<'a>(
    coeffs: &'a dyn Coefficients,
    grid: &TimeGrid,
    x0: f64,
    backend: &Backend<'_>,
    controls: &StepControls,
) -> Result<BackwardFamilySolution<'a>> {
    let n = grid.n();
    let envelope = |t: ValueFunctionTable| match controls.bound {
        Some(m) => t.with_envelope(-m, m),
        None => t,
    };
    let repr = match backend {
        Backend::Quadrature { rule, layout } => {
            layout.check(n)?;
            let mut y: Vec<Option<ValueFunctionTable>> = vec![None; n];
            let mut z: Vec<Option<ValueFunctionTable>> = vec![None; n];
            for i in (1..=n).rev() {
                let (t, dt) = (grid.t(i - 1), grid.dt(i));
                let nodes = layout.post(i - 1);
                let (e, zz) = {
                    let next = |x: f64| match &y[i.min(n - 1)] {
                        _ if i == n => coeffs.terminal(x),
                        Some(tab) => tab.eval(x),
                        None => unreachable!("filled on the previous step"),
                    };
                    quadrature_pair(next, coeffs, t, dt, rule, &nodes)
                };
                let vals: Result<Vec<f64>> = nodes
                    .par_iter()
                    .enumerate()
                    .map(|(j, &x)| {
                        implicit_step(
                            e[j],
                            zz[j],
                            x,
                            t,
                            dt,
                            coeffs,
                            UInput::Fixed(0.0),
                            controls.family_lipschitz,
                        )
                    })
                    .collect();
                y[i - 1] = Some(envelope(ValueFunctionTable::new(nodes.clone(), vals?)?));
                z[i - 1] = Some(ValueFunctionTable::new(nodes, zz)?);
            }
            FamilyRepr::Tables {
                y: y.into_iter()
                    .map(|t| t.expect("every step solved"))
                    .collect(),
                z: z.into_iter()
                    .map(|t| t.expect("every step solved"))
                    .collect(),
            }
        }
        Backend::Lsmc { bundle, basis } => {
            check_bundle(bundle, grid, x0)?;
            let n_paths = bundle.n_paths();
            // pooled cloud: pre-jump paths and paths jumping at t_0
            let jumped: Result<Vec<Vec<f64>>> = (0..n_paths)
                .into_par_iter()
                .map(|p| bundle.x1_path(coeffs, p, 0))
                .collect();
            let jumped = jumped?;
            let state = |p: usize, i: usize| -> f64 {
                if p < n_paths {
                    bundle.x0_at(p, i)
                } else {
                    jumped[p - n_paths][i]
                }
            };
            let cloud = 2 * n_paths;
            let mut e_fits: Vec<Option<Fit>> = vec![None; n];
            let mut z_fits: Vec<Option<Fit>> = vec![None; n];
            for i in (1..=n).rev() {
                let dt = grid.dt(i);
                let v: Result<Vec<f64>> = (0..cloud)
                    .into_par_iter()
                    .map(|p| {
                        let x = state(p, i);
                        if i == n {
                            Ok(coeffs.terminal(x))
                        } else {
                            let (e, z) = (e_fits[i].as_ref().unwrap(), z_fits[i].as_ref().unwrap());
                            implicit_step(
                                e.eval(x),
                                z.eval(x),
                                x,
                                grid.t(i),
                                grid.dt(i + 1),
                                coeffs,
                                UInput::Fixed(0.0),
                                controls.family_lipschitz,
                            )
                        }
                    })
                    .collect();
                let v = v?;
                let xs: Vec<f64> = (0..cloud).map(|p| state(p, i - 1)).collect();
                let dw: Vec<f64> = (0..cloud)
                    .map(|p| bundle.increment(p % n_paths, i))
                    .collect();
                e_fits[i - 1] = Some(lsmc_condexp(&xs, &v, basis)?);
                z_fits[i - 1] = Some(lsmc_weighted_condexp(&xs, &v, &dw, dt, basis)?);
            }
            FamilyRepr::Fits {
                e: e_fits
                    .into_iter()
                    .map(|f| f.expect("every step solved"))
                    .collect(),
                z: z_fits
                    .into_iter()
                    .map(|f| f.expect("every step solved"))
                    .collect(),
            }
        }
    };
    Ok(BackwardFamilySolution {
        coeffs,
        grid: grid.clone(),
        x0,
        controls: *controls,
        repr,
    })
}

fn check_bundle(bundle: &PathBundle, grid: &TimeGrid, x0: f64) -> Result<()> {
    if bundle.grid != *grid || bundle.x_init != x0 {
        return Err(Error::InvalidConfig(
            "path bundle was simulated on another grid or start".into(),
        ));
    }
    let bytes = bundle.n_paths() * (grid.n() + 1) * 8 * 6;
    if bytes > LSMC_MEMORY_BUDGET {
        return Err(Error::TooLarge(format!(
            "lsmc needs about {} MiB for {} paths x {} steps",
            bytes >> 20,
            bundle.n_paths(),
            grid.n()
        )));
    }
    Ok(())
}

/// Full discrete solution: both branches on one grid.
#[derive(Clone)]
pub struct SchemeSolution<'a> {
    family: BackwardFamilySolution<'a>,
    repr: PreRepr,
}

pub fn solve_y0<'a>(
    family: BackwardFamilySolution<'a>,
    backend: &Backend<'_>,
) -> Result<SchemeSolution<'a>> {
    let coeffs = family.coeffs;
    let grid = family.grid.clone();
    let controls = family.controls;
    let n = grid.n();
    let repr = match backend {
        Backend::Quadrature { rule, layout } => {
            layout.check(n)?;
            let mut y: Vec<Option<ValueFunctionTable>> = vec![None; n];
            let mut z: Vec<Option<ValueFunctionTable>> = vec![None; n];
            for i in (1..=n).rev() {
                let (t, dt) = (grid.t(i - 1), grid.dt(i));
                let nodes = layout.pre(i - 1);
                let (e, zz) = {
                    let next = |x: f64| {
                        if i == n {
                            coeffs.terminal(x)
                        } else {
                            y[i].as_ref().expect("filled on the previous step").eval(x)
                        }
                    };
                    quadrature_pair(next, coeffs, t, dt, rule, &nodes)
                };
                let vals: Result<Vec<f64>> = nodes
                    .par_iter()
                    .enumerate()
                    .map(|(j, &x)| {
                        // jumped state keyed on the current node
                        let d = family.diag(i - 1, x, x)?;
                        implicit_step(
                            e[j],
                            zz[j],
                            x,
                            t,
                            dt,
                            coeffs,
                            UInput::Diagonal(d),
                            controls.pre_lipschitz,
                        )
                    })
                    .collect();
                let table = ValueFunctionTable::new(nodes.clone(), vals?)?;
                y[i - 1] = Some(match controls.bound {
                    Some(m) => table.with_envelope(-m, m),
                    None => table,
                });
                z[i - 1] = Some(ValueFunctionTable::new(nodes, zz)?);
            }
            PreRepr::Tables {
                y: y.into_iter()
                    .map(|t| t.expect("every step solved"))
                    .collect(),
                z: z.into_iter()
                    .map(|t| t.expect("every step solved"))
                    .collect(),
            }
        }
        Backend::Lsmc { bundle, basis } => {
            check_bundle(bundle, &grid, family.x0)?;
            let n_paths = bundle.n_paths();
            let mut values: Vec<f64> = (0..n_paths)
                .map(|p| coeffs.terminal(bundle.x0_at(p, n)))
                .collect();
            let mut e_fits: Vec<Option<Fit>> = vec![None; n];
            let mut z_fits: Vec<Option<Fit>> = vec![None; n];
            for i in (1..=n).rev() {
                let (t, dt) = (grid.t(i - 1), grid.dt(i));
                let xs: Vec<f64> = (0..n_paths).map(|p| bundle.x0_at(p, i - 1)).collect();
                let dw: Vec<f64> = (0..n_paths).map(|p| bundle.increment(p, i)).collect();
                let e = lsmc_condexp(&xs, &values, basis)?;
                let z = lsmc_weighted_condexp(&xs, &values, &dw, dt, basis)?;
                let next: Result<Vec<f64>> = (0..n_paths)
                    .into_par_iter()
                    .map(|p| {
                        let x = xs[p];
                        let x_prev = if i >= 2 { bundle.x0_at(p, i - 2) } else { x };
                        let d = family.diag(i - 1, x, x_prev)?;
                        implicit_step(
                            e.eval(x),
                            z.eval(x),
                            x,
                            t,
                            dt,
                            coeffs,
                            UInput::Diagonal(d),
                            controls.pre_lipschitz,
                        )
                    })
                    .collect();
                values = next?;
                e_fits[i - 1] = Some(e);
                z_fits[i - 1] = Some(z);
            }
            PreRepr::Fits {
                e: e_fits
                    .into_iter()
                    .map(|f| f.expect("every step solved"))
                    .collect(),
                z: z_fits
                    .into_iter()
                    .map(|f| f.expect("every step solved"))
                    .collect(),
            }
        }
    };
    Ok(SchemeSolution { family, repr })
}

/// Family then pre-jump solve.
pub fn solve<'a>(
    coeffs: &'a dyn Coefficients,
    grid: &TimeGrid,
    x0: f64,
    backend: &Backend<'_>,
    controls: &StepControls,
) -> Result<SchemeSolution<'a>> {
    let family = solve_y1_family(coeffs, grid, x0, backend, controls)?;
    solve_y0(family, backend)
}

/// Branch values along one path at the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PathValues {
    pub tau: f64,
    pub y0: Vec<f64>,
    pub z0: Vec<f64>,
    /// `Y¹π_{t_i}(t_i) − Y⁰π_{t_i}`
    pub u: Vec<f64>,
    /// `Y¹π_{t_i}(π(τ))`, `Z¹π_{t_i}(π(τ))` for `i ≥ π(τ)`; `None` if `τ > T`
    /// and `NaN` before the jump index.
    pub y1: Option<Vec<f64>>,
    pub z1: Option<Vec<f64>>,
}

impl PathValues {
    /// `(Yπ_t, Zπ_t, Uπ_t)` for `t` in `[t_i, t_{i+1})`:
    /// `Y` switches branch on `t ≥ τ`, `Z` and `U` on `t > τ`.
    #[inline]
    pub fn at(&self, i: usize, t: f64) -> (f64, f64, f64) {
        let y = match &self.y1 {
            Some(y1) if t >= self.tau => y1[i],
            _ => self.y0[i],
        };
        let (z, u) = match &self.z1 {
            Some(z1) if t > self.tau => (z1[i], 0.0),
            _ => (self.z0[i], self.u[i]),
        };
        (y, z, u)
    }
}

impl<'a> SchemeSolution<'a> {
    pub fn grid(&self) -> &TimeGrid {
        &self.family.grid
    }

    pub fn family(&self) -> &BackwardFamilySolution<'a> {
        &self.family
    }

    pub fn x0(&self) -> f64 {
        self.family.x0
    }

    /// `Y⁰π_{t_i}` at pre-jump state `x`; `x_prev` is the state at `t_{i−1}`
    /// (used by the regression backend for the exact diagonal).
    pub fn y0(&self, i: usize, x: f64, x_prev: f64) -> Result<f64> {
        let grid = &self.family.grid;
        let n = grid.n();
        if i == n {
            return Ok(self.family.coeffs.terminal(x));
        }
        match &self.repr {
            PreRepr::Tables { y, .. } => Ok(y[i].eval(x)),
            PreRepr::Fits { e, z } => {
                let d = self.family.diag(i, x, x_prev)?;
                implicit_step(
                    e[i].eval(x),
                    z[i].eval(x),
                    x,
                    grid.t(i),
                    grid.dt(i + 1),
                    self.family.coeffs,
                    UInput::Diagonal(d),
                    self.family.controls.pre_lipschitz,
                )
            }
        }
    }

    pub fn z0(&self, i: usize, x: f64) -> f64 {
        if i == self.family.grid.n() {
            return 0.0;
        }
        match &self.repr {
            PreRepr::Tables { z, .. } => z[i].eval(x),
            PreRepr::Fits { z, .. } => z[i].eval(x),
        }
    }

    pub fn y1(&self, i: usize, x: f64) -> Result<f64> {
        self.family.value(i, x)
    }

    pub fn z1(&self, i: usize, x: f64) -> f64 {
        self.family.z(i, x)
    }

    pub fn diag(&self, i: usize, x: f64, x_prev: f64) -> Result<f64> {
        self.family.diag(i, x, x_prev)
    }

    pub fn y0_at_origin(&self) -> Result<f64> {
        self.y0(0, self.x0(), self.x0())
    }

    /// Z tables of both branches, if the backend tabulates.
    pub fn z_tables(&self) -> Option<(Vec<&ValueFunctionTable>, Vec<&ValueFunctionTable>)> {
        match (&self.family.repr, &self.repr) {
            (FamilyRepr::Tables { z: z1, .. }, PreRepr::Tables { z: z0, .. }) => {
                Some((z1.iter().collect(), z0.iter().collect()))
            }
            _ => None,
        }
    }

    /// Evaluates both branches along a simulated path.
    pub fn path_values(&self, path: &JumpPath) -> Result<PathValues> {
        let n = self.grid().n();
        let mut y0 = Vec::with_capacity(n + 1);
        let mut z0 = Vec::with_capacity(n + 1);
        let mut u = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let x = path.x0[i];
            let x_prev = path.x0[i.saturating_sub(1)];
            let y = self.y0(i, x, x_prev)?;
            u.push(self.diag(i, x, x_prev)? - y);
            y0.push(y);
            z0.push(self.z0(i, x));
        }
        let (y1, z1) = match &path.x1 {
            Some(x1) => {
                let k = self.grid().floor_index(path.tau);
                let mut y1 = vec![f64::NAN; n + 1];
                let mut z1 = vec![f64::NAN; n + 1];
                for i in k..=n {
                    y1[i] = self.y1(i, x1[i])?;
                    z1[i] = self.z1(i, x1[i]);
                }
                (Some(y1), Some(z1))
            }
            None => (None, None),
        };
        Ok(PathValues {
            tau: path.tau,
            y0,
            z0,
            u,
            y1,
            z1,
        })
    }

    /// `(Yπ_t, Zπ_t, Uπ_t)` on one path.
    pub fn recombine_yzu(&self, path: &JumpPath, t: f64) -> Result<(f64, f64, f64)> {
        let i = self.grid().floor_index(t);
        Ok(self.path_values(path)?.at(i, t))
    }

    /// Columns `path_id,t_i,y,z,u,jumped`, one row per path and node.
    pub fn write_dump(&self, bundle: &PathBundle, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["path_id", "t_i", "y", "z", "u", "jumped"])?;
        let grid = self.grid();
        for p in 0..bundle.n_paths() {
            let jp = bundle.jump_path(self.family.coeffs, p)?;
            let vals = self.path_values(&jp)?;
            for i in 0..=grid.n() {
                let t = grid.t(i);
                let (y, z, u) = vals.at(i, t);
                w.write_record(&[
                    p.to_string(),
                    t.to_string(),
                    y.to_string(),
                    z.to_string(),
                    u.to_string(),
                    u8::from(t >= jp.tau).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
