//! Time grids, seeded Brownian increments and jump times, the Euler schemes
//! for the pre-jump state `X⁰` and the post-jump family `X¹(t_k)`, and the
//! recombined forward process.
//!
//! A jump at `τ` is placed at `π(τ)`, the last grid node not after `τ`. For
//! `τ ∈ (t_0, t_1)` this gives `k = 0`, i.e. the jump is applied at the
//! initial node as the scheme prescribes.

use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::model::{Coefficients, JumpModel};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Spacing {
    Uniform,
    /// Full node list `0 = t_0 < … < t_n = T`.
    Custom(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    uniform: bool,
}

impl TimeGrid {
    /// `t_i = T·(i/n)`; the rounding makes refined uniform grids contain the
    /// coarse nodes bit-for-bit.
    pub fn uniform(horizon: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGrid("n must be at least 1".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let nodes: Vec<f64> = (0..=n).map(|i| horizon * (i as f64 / n as f64)).collect();
        let grid = Self {
            nodes,
            uniform: true,
        };
        grid.check_mesh()?;
        Ok(grid)
    }

    pub fn custom(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidGrid("need at least two nodes".into()));
        }
        if nodes[0] != 0.0 {
            return Err(Error::InvalidGrid(format!(
                "first node must be 0, got {}",
                nodes[0]
            )));
        }
        if let Some(w) = nodes
            .windows(2)
            .find(|w| !(w[1] > w[0]) || !w[1].is_finite())
        {
            return Err(Error::InvalidGrid(format!(
                "nodes must be strictly increasing, found {} then {}",
                w[0], w[1]
            )));
        }
        let grid = Self {
            nodes,
            uniform: false,
        };
        grid.check_mesh()?;
        Ok(grid)
    }

    pub fn build(horizon: f64, n: usize, spacing: Spacing) -> Result<Self> {
        match spacing {
            Spacing::Uniform => Self::uniform(horizon, n),
            Spacing::Custom(nodes) => {
                if nodes.len() != n + 1 {
                    return Err(Error::InvalidGrid(format!(
                        "expected {} nodes, got {}",
                        n + 1,
                        nodes.len()
                    )));
                }
                if nodes.last() != Some(&horizon) {
                    return Err(Error::InvalidGrid(
                        "last node must equal the horizon".into(),
                    ));
                }
                Self::custom(nodes)
            }
        }
    }

    fn check_mesh(&self) -> Result<()> {
        if self.mesh() > 1.0 {
            return Err(Error::InvalidGrid(format!(
                "mesh {} exceeds 1",
                self.mesh()
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.nodes[self.n()]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn t(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    /// `Δt_i = t_i − t_{i−1}` for `i ≥ 1`.
    pub fn dt(&self, i: usize) -> f64 {
        self.nodes[i] - self.nodes[i - 1]
    }

    pub fn mesh(&self) -> f64 {
        self.nodes
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Index of `π(t)`, the largest node `≤ t`. Times before 0 map to 0 and
    /// times after `T` to `n`.
    pub fn floor_index(&self, t: f64) -> usize {
        let n = self.n();
        if t >= self.nodes[n] {
            return n;
        }
        if self.uniform {
            let mut k = ((t / self.horizon()) * n as f64)
                .floor()
                .clamp(0.0, n as f64) as usize;
            while k > 0 && self.nodes[k] > t {
                k -= 1;
            }
            while k < n && self.nodes[k + 1] <= t {
                k += 1;
            }
            k
        } else {
            self.nodes.partition_point(|&s| s <= t).saturating_sub(1)
        }
    }

    /// `π(t)`
    pub fn project(&self, t: f64) -> f64 {
        self.nodes[self.floor_index(t)]
    }

    /// `r` such that `self` is `coarse` with every step split into `r`
    /// equal sub-steps.
    pub fn refinement_ratio(&self, coarse: &TimeGrid) -> Option<usize> {
        let (nf, nc) = (self.n(), coarse.n());
        if nf % nc != 0 {
            return None;
        }
        let r = nf / nc;
        let aligned = (0..=nc).all(|j| self.nodes[j * r] == coarse.nodes[j]);
        aligned.then_some(r)
    }
}

/// Per-path stream: `(seed, path)` selects a ChaCha stream, so draws are
/// independent of thread scheduling and of how many paths are requested.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// Uniform on the open interval `(0, 1)`.
fn open_uniform(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Noise of one path: the jump-time uniform (drawn first) and the Brownian
/// increments on `grid`.
pub fn draw_path(grid: &TimeGrid, seed: u64, path: u64) -> (f64, Vec<f64>) {
    let mut rng = path_rng(seed, path);
    let u = open_uniform(&mut rng);
    let incs = (1..=grid.n())
        .map(|i| {
            let xi: f64 = StandardNormal.sample(&mut rng);
            grid.dt(i).sqrt() * xi
        })
        .collect();
    (u, incs)
}

/// Row-major `n_paths × n` array of `ΔW_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Increments {
    n_steps: usize,
    data: Vec<f64>,
}

impl Increments {
    pub fn from_rows(n_steps: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len() % n_steps.max(1), 0);
        Self { n_steps, data }
    }

    pub fn n_paths(&self) -> usize {
        self.data.len() / self.n_steps
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Increments of one path; entry `i − 1` is `ΔW_i`.
    pub fn path(&self, p: usize) -> &[f64] {
        &self.data[p * self.n_steps..(p + 1) * self.n_steps]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

pub fn simulate_increments(grid: &TimeGrid, n_paths: usize, seed: u64) -> Increments {
    let rows: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|p| draw_path(grid, seed, p as u64).1)
        .collect();
    Increments {
        n_steps: grid.n(),
        data: rows.concat(),
    }
}

/// Sums consecutive blocks of `ratio` fine increments.
pub fn coarsen(fine: &[f64], ratio: usize) -> Vec<f64> {
    fine.chunks(ratio).map(|c| c.iter().sum()).collect()
}

fn finite(v: f64, what: &str, t: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} at t = {t}")))
    }
}

/// `x + b(t, x)Δt + σ(t)ΔW`
#[inline]
pub fn euler_step<C: Coefficients + ?Sized>(c: &C, t: f64, x: f64, dt: f64, dw: f64) -> f64 {
    x + c.drift(t, x) * dt + c.diffusion(t) * dw
}

/// Jumped state on the diagonal: `x_i + β(t_{i−1}, x_{i−1})`, and
/// `x_0 + β(t_0, x_0)` at `i = 0`.
#[inline]
pub fn diag_state<C: Coefficients + ?Sized>(
    c: &C,
    grid: &TimeGrid,
    i: usize,
    x_i: f64,
    x_prev: f64,
) -> f64 {
    let t = grid.t(i.saturating_sub(1));
    x_i + c.jump_size(t, x_prev)
}

pub fn euler_x0<C: Coefficients + ?Sized>(
    c: &C,
    grid: &TimeGrid,
    x0: f64,
    increments: &[f64],
) -> Result<Vec<f64>> {
    euler_x1(c, grid, x0, increments, None)
}

/// `X¹π(t_k)` along one path. `k = None` gives `X⁰π`.
pub fn euler_x1<C: Coefficients + ?Sized>(
    c: &C,
    grid: &TimeGrid,
    x0: f64,
    increments: &[f64],
    k: Option<usize>,
) -> Result<Vec<f64>> {
    if increments.len() != grid.n() {
        return Err(Error::InvalidGrid(format!(
            "{} increments for a grid with {} steps",
            increments.len(),
            grid.n()
        )));
    }
    let mut path = Vec::with_capacity(grid.n() + 1);
    let mut x = if k == Some(0) {
        x0 + c.jump_size(grid.t(0), x0)
    } else {
        x0
    };
    path.push(finite(x, "X", 0.0)?);
    for i in 1..=grid.n() {
        let t = grid.t(i - 1);
        let mut next = euler_step(c, t, x, grid.dt(i), increments[i - 1]);
        if k == Some(i) {
            next += c.jump_size(t, x);
        }
        x = finite(next, "X", grid.t(i))?;
        path.push(x);
    }
    Ok(path)
}

pub fn sample_jump_time(jump: &JumpModel, uniforms: &[f64]) -> Result<Vec<f64>> {
    uniforms.iter().map(|&u| jump.sample(u)).collect()
}

/// Grid index of the jump, `None` when `τ > T`.
pub fn jump_index(grid: &TimeGrid, tau: f64) -> Option<usize> {
    (tau <= grid.horizon()).then(|| grid.floor_index(tau))
}

/// One simulated path of `Xπ`: the pre-jump branch and, if the jump falls
/// on the horizon, the branch `X¹π(π(τ))`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpPath {
    pub x0: Vec<f64>,
    pub x1: Option<Vec<f64>>,
    pub tau: f64,
}

impl JumpPath {
    pub fn build<C: Coefficients + ?Sized>(
        c: &C,
        grid: &TimeGrid,
        x0: f64,
        increments: &[f64],
        tau: f64,
    ) -> Result<Self> {
        let pre = euler_x0(c, grid, x0, increments)?;
        let x1 = match jump_index(grid, tau) {
            Some(k) => Some(jumped_from(c, grid, &pre, increments, k)?),
            None => None,
        };
        Ok(Self { x0: pre, x1, tau })
    }

    /// Value at grid index `i` of the process evaluated at time `t ∈
    /// [t_i, t_{i+1})`.
    pub fn value_at_index(&self, i: usize, t: f64) -> f64 {
        match &self.x1 {
            Some(x1) if t >= self.tau => x1[i],
            _ => self.x0[i],
        }
    }
}

/// `X¹π(t_k)` reusing the pre-jump path for `i < k`.
pub fn jumped_from<C: Coefficients + ?Sized>(
    c: &C,
    grid: &TimeGrid,
    pre: &[f64],
    increments: &[f64],
    k: usize,
) -> Result<Vec<f64>> {
    let mut path = pre[..k].to_vec();
    let mut x = if k == 0 {
        pre[0] + c.jump_size(grid.t(0), pre[0])
    } else {
        diag_state(c, grid, k, pre[k], pre[k - 1])
    };
    path.push(finite(x, "X", grid.t(k))?);
    for i in k + 1..=grid.n() {
        x = finite(
            euler_step(c, grid.t(i - 1), x, grid.dt(i), increments[i - 1]),
            "X",
            grid.t(i),
        )?;
        path.push(x);
    }
    Ok(path)
}

/// `Xπ_t = X⁰π_{π(t)} 1_{t<τ} + X¹π_{π(t)}(π(τ)) 1_{t≥τ}`
pub fn recombine_x(
    grid: &TimeGrid,
    x0_path: &[f64],
    x1_path: Option<&[f64]>,
    tau: f64,
    t: f64,
) -> f64 {
    let i = grid.floor_index(t);
    match x1_path {
        Some(x1) if t >= tau => x1[i],
        _ => x0_path[i],
    }
}

/// Simulated forward paths on one grid.
#[derive(Debug, Clone)]
pub struct PathBundle {
    pub grid: TimeGrid,
    pub x_init: f64,
    pub seed: u64,
    pub increments: Increments,
    /// Row-major `n_paths × (n+1)`.
    x0_paths: Vec<f64>,
    pub jump_times: Vec<f64>,
}

impl PathBundle {
    pub fn simulate<C: Coefficients + ?Sized>(
        c: &C,
        jump: &JumpModel,
        grid: &TimeGrid,
        x_init: f64,
        n_paths: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_paths == 0 {
            return Err(Error::InvalidConfig("n_paths must be at least 1".into()));
        }
        let draws: Vec<(f64, Vec<f64>)> = (0..n_paths)
            .into_par_iter()
            .map(|p| draw_path(grid, seed, p as u64))
            .collect();
        let uniforms: Vec<f64> = draws.iter().map(|d| d.0).collect();
        let jump_times = sample_jump_time(jump, &uniforms)?;
        let data: Vec<f64> = draws.into_iter().flat_map(|d| d.1).collect();
        Self::from_parts(
            c,
            grid.clone(),
            x_init,
            seed,
            Increments::from_rows(grid.n(), data),
            jump_times,
        )
    }

    pub fn from_parts<C: Coefficients + ?Sized>(
        c: &C,
        grid: TimeGrid,
        x_init: f64,
        seed: u64,
        increments: Increments,
        jump_times: Vec<f64>,
    ) -> Result<Self> {
        if increments.n_steps() != grid.n() || increments.n_paths() != jump_times.len() {
            return Err(Error::InvalidConfig(
                "increments, jump times and grid disagree".into(),
            ));
        }
        let rows: Result<Vec<Vec<f64>>> = (0..jump_times.len())
            .into_par_iter()
            .map(|p| euler_x0(c, &grid, x_init, increments.path(p)))
            .collect();
        let x0_paths = rows?.concat();
        Ok(Self {
            grid,
            x_init,
            seed,
            increments,
            x0_paths,
            jump_times,
        })
    }

    /// Same noise on a coarser grid obtained by summing increments.
    pub fn coarsen<C: Coefficients + ?Sized>(&self, c: &C, coarse: &TimeGrid) -> Result<Self> {
        let r = self.grid.refinement_ratio(coarse).ok_or_else(|| {
            Error::InvalidGrid(format!(
                "{} steps do not refine {}",
                self.grid.n(),
                coarse.n()
            ))
        })?;
        let data: Vec<f64> = (0..self.n_paths())
            .flat_map(|p| coarsen(self.increments.path(p), r))
            .collect();
        Self::from_parts(
            c,
            coarse.clone(),
            self.x_init,
            self.seed,
            Increments::from_rows(coarse.n(), data),
            self.jump_times.clone(),
        )
    }

    pub fn n_paths(&self) -> usize {
        self.jump_times.len()
    }

    pub fn x0_path(&self, p: usize) -> &[f64] {
        let w = self.grid.n() + 1;
        &self.x0_paths[p * w..(p + 1) * w]
    }

    pub fn x0_at(&self, p: usize, i: usize) -> f64 {
        self.x0_paths[p * (self.grid.n() + 1) + i]
    }

    /// `ΔW_i` of path `p`, `i ≥ 1`.
    pub fn increment(&self, p: usize, i: usize) -> f64 {
        self.increments.path(p)[i - 1]
    }

    pub fn x1_path<C: Coefficients + ?Sized>(&self, c: &C, p: usize, k: usize) -> Result<Vec<f64>> {
        jumped_from(c, &self.grid, self.x0_path(p), self.increments.path(p), k)
    }

    pub fn jump_index(&self, p: usize) -> Option<usize> {
        jump_index(&self.grid, self.jump_times[p])
    }

    pub fn jump_path<C: Coefficients + ?Sized>(&self, c: &C, p: usize) -> Result<JumpPath> {
        let x1 = match self.jump_index(p) {
            Some(k) => Some(self.x1_path(c, p, k)?),
            None => None,
        };
        Ok(JumpPath {
            x0: self.x0_path(p).to_vec(),
            x1,
            tau: self.jump_times[p],
        })
    }

    /// Columns `path_id,t_i,x0,tau`, one row per path and node.
    pub fn write_dump(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["path_id", "t_i", "x0", "tau"])?;
        for p in 0..self.n_paths() {
            for (i, x) in self.x0_path(p).iter().enumerate() {
                w.write_record(&[
                    p.to_string(),
                    self.grid.t(i).to_string(),
                    x.to_string(),
                    self.jump_times[p].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
