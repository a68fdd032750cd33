//! End-to-end convergence experiments: truncate, simulate, solve on a coarse
//! grid and on a coupled fine reference grid, and accumulate the four
//! squared-error terms along common paths.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::backward::{solve, Backend, NodeLayout, SchemeSolution, StepControls};
use crate::condexp::{QuadratureRule, RegressionBasis};
use crate::forward::{coarsen, draw_path, JumpPath, PathBundle, TimeGrid};
use crate::model::{CoefficientSet, Problem, ProblemConfig};
use crate::truncation::{truncation_radius, Lipschitzized};
use crate::{Error, Result};

/// Paths per deterministic accumulation block.
const CHUNK: usize = 256;
/// Offset between the evaluation seed and the regression training seed.
const TRAINING_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

/// A problem with its truncated generator and step controls.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub problem: Problem,
    pub radius: f64,
    coeffs: Lipschitzized<CoefficientSet>,
    controls: StepControls,
}

impl Pipeline {
    /// Truncation at the radius implied by the assumption constants.
    pub fn new(problem: Problem) -> Self {
        let radius = truncation_radius(&problem.constants);
        Self::with_radius(problem, radius)
    }

    pub fn with_radius(problem: Problem, radius: f64) -> Self {
        let coeffs = Lipschitzized::new(problem.coeffs, radius);
        let controls = StepControls::from_constants(&problem.constants);
        Self {
            problem,
            radius,
            coeffs,
            controls,
        }
    }

    pub fn from_config(config: &ProblemConfig) -> Result<Self> {
        Ok(Self::new(Problem::from_config(config)?))
    }

    pub fn coeffs(&self) -> &Lipschitzized<CoefficientSet> {
        &self.coeffs
    }

    pub fn controls(&self) -> &StepControls {
        &self.controls
    }

    pub fn grid(&self, n: usize) -> Result<TimeGrid> {
        TimeGrid::uniform(self.problem.horizon(), n)
    }

    pub fn quadrature(&self, settings: &QuadratureSettings) -> Result<Backend<'static>> {
        Ok(Backend::Quadrature {
            rule: QuadratureRule::gauss_hermite(settings.order)?,
            layout: NodeLayout::auto(
                &self.coeffs,
                self.problem.x0,
                self.problem.horizon(),
                settings.width,
                settings.nodes,
            ),
        })
    }

    /// Regression training paths on `grid`, independent of the evaluation
    /// noise drawn from `seed`.
    pub fn training_bundle(
        &self,
        grid: &TimeGrid,
        n_paths: usize,
        seed: u64,
    ) -> Result<PathBundle> {
        PathBundle::simulate(
            &self.coeffs,
            &self.problem.jump,
            grid,
            self.problem.x0,
            n_paths,
            seed.wrapping_add(TRAINING_SEED_OFFSET),
        )
    }

    pub fn solve<'a>(
        &'a self,
        grid: &TimeGrid,
        backend: &Backend<'_>,
    ) -> Result<SchemeSolution<'a>> {
        solve(&self.coeffs, grid, self.problem.x0, backend, &self.controls)
    }

    /// Solves on `grid` with the chosen backend; LSMC simulates its own
    /// training bundle.
    pub fn solve_with<'a>(
        &'a self,
        grid: &TimeGrid,
        choice: &BackendChoice,
        n_paths: usize,
        seed: u64,
    ) -> Result<SchemeSolution<'a>> {
        match choice {
            BackendChoice::Quadrature(s) => self.solve(grid, &self.quadrature(s)?),
            BackendChoice::Lsmc(basis) => {
                let bundle = self.training_bundle(grid, n_paths, seed)?;
                self.solve(
                    grid,
                    &Backend::Lsmc {
                        bundle: &bundle,
                        basis: *basis,
                    },
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadratureSettings {
    pub order: usize,
    pub nodes: usize,
    /// Half-width of the table domain in units of `σ̄√T`.
    pub width: f64,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        Self {
            order: 16,
            nodes: 200,
            width: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendChoice {
    Quadrature(QuadratureSettings),
    Lsmc(RegressionBasis),
}

impl BackendChoice {
    pub fn name(&self) -> &'static str {
        match self {
            BackendChoice::Quadrature(_) => "quadrature",
            BackendChoice::Lsmc(_) => "lsmc",
        }
    }
}

/// Settings of a convergence study. The reference always uses the
/// quadrature backend on the `n_ref` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub ns: Vec<usize>,
    pub n_ref: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub backend: BackendChoice,
    pub reference: QuadratureSettings,
    /// Record wall-clock runtimes; off gives byte-stable reports.
    pub timing: bool,
}

impl StudyConfig {
    pub fn new(ns: Vec<usize>, n_ref: usize, n_paths: usize, seed: u64) -> Self {
        Self {
            ns,
            n_ref,
            n_paths,
            seed,
            backend: BackendChoice::Quadrature(QuadratureSettings::default()),
            reference: QuadratureSettings::default(),
            timing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub n: usize,
    pub mesh: f64,
    /// `Ê sup_j |X − Xπ|²` over fine nodes
    pub err_x: f64,
    /// `max_j Ê |Y − Yπ|²` over fine nodes
    pub err_y: f64,
    /// `Ê Σ_j |Z − Zπ|² Δt_j`
    pub err_z: f64,
    /// `Ê Σ_j λ_{t_j} 1_{t_j ≤ τ} |U − Uπ|² Δt_j`
    pub err_u: f64,
    pub total: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Coarse solve plus an equal share of the common error pass; 0 when
    /// timing is off.
    pub runtime_s: f64,
    /// `Yπ_0` of the coarse solution.
    pub y0: f64,
}

/// Neumaier-compensated sum.
#[derive(Debug, Clone, Copy, Default)]
struct Sum {
    s: f64,
    c: f64,
}

impl Sum {
    #[inline]
    fn add(&mut self, v: f64) {
        let t = self.s + v;
        if self.s.abs() >= v.abs() {
            self.c += (self.s - t) + v;
        } else {
            self.c += (v - t) + self.s;
        }
        self.s = t;
    }

    fn merge(&mut self, other: &Sum) {
        self.add(other.s);
        self.add(other.c);
    }

    fn value(&self) -> f64 {
        self.s + self.c
    }
}

#[derive(Debug, Clone)]
struct Acc {
    x: Sum,
    y: Vec<Sum>,
    z: Sum,
    u: Sum,
}

impl Acc {
    fn new(nodes: usize) -> Self {
        Self {
            x: Sum::default(),
            y: vec![Sum::default(); nodes],
            z: Sum::default(),
            u: Sum::default(),
        }
    }

    fn merge(&mut self, other: &Acc) {
        self.x.merge(&other.x);
        self.z.merge(&other.z);
        self.u.merge(&other.u);
        for (a, b) in self.y.iter_mut().zip(&other.y) {
            a.merge(b);
        }
    }
}

/// Squared-error terms of each coarse solution against `fine`, along the
/// evaluation paths `paths` (noise drawn on the fine grid from `seed`).
///
/// Paths are processed in fixed blocks merged in order, so the result does
/// not depend on the thread count.
pub fn error_terms(
    pipeline: &Pipeline,
    fine: &SchemeSolution<'_>,
    coarse: &[&SchemeSolution<'_>],
    paths: &[u64],
    seed: u64,
) -> Result<Vec<[f64; 4]>> {
    let fgrid = fine.grid().clone();
    let big_n = fgrid.n();
    for c in coarse {
        if fgrid.refinement_ratio(c.grid()).is_none() {
            return Err(Error::InvalidGrid(format!(
                "reference grid with {big_n} steps does not refine a grid with {} steps",
                c.grid().n()
            )));
        }
    }
    let ratios: Vec<usize> = coarse
        .iter()
        .map(|c| fgrid.refinement_ratio(c.grid()).unwrap())
        .collect();
    let jump = &pipeline.problem.jump;
    let lambda: Vec<Option<f64>> = (0..=big_n)
        .map(|j| jump.intensity(fgrid.t(j), true).ok())
        .collect();
    let x0 = pipeline.problem.x0;
    let c = pipeline.coeffs();

    let blocks: Result<Vec<Vec<Acc>>> = paths
        .par_chunks(CHUNK)
        .map(|block| {
            let mut accs: Vec<Acc> = coarse.iter().map(|_| Acc::new(big_n + 1)).collect();
            for &p in block {
                let (u, incs) = draw_path(&fgrid, seed, p);
                let tau = jump.sample(u)?;
                let fpath = JumpPath::build(c, &fgrid, x0, &incs, tau)?;
                let fvals = fine.path_values(&fpath)?;
                for ((sol, &r), acc) in coarse.iter().zip(&ratios).zip(accs.iter_mut()) {
                    let cgrid = sol.grid();
                    let cpath = JumpPath::build(c, cgrid, x0, &coarsen(&incs, r), tau)?;
                    let cvals = sol.path_values(&cpath)?;
                    let mut sup_x: f64 = 0.0;
                    let mut int_z = Sum::default();
                    let mut int_u = Sum::default();
                    for j in 0..=big_n {
                        let t = fgrid.t(j);
                        let i = j / r;
                        let dx = fpath.value_at_index(j, t) - cpath.value_at_index(i, t);
                        sup_x = sup_x.max(dx * dx);
                        let (fy, fz, fu) = fvals.at(j, t);
                        let (cy, cz, cu) = cvals.at(i, t);
                        acc.y[j].add((fy - cy).powi(2));
                        if j < big_n {
                            let dt = fgrid.dt(j + 1);
                            int_z.add((fz - cz).powi(2) * dt);
                            if t <= tau {
                                let l = lambda[j].ok_or_else(|| {
                                    Error::DegenerateModel(format!("no intensity at t = {t}"))
                                })?;
                                int_u.add(l * (fu - cu).powi(2) * dt);
                            }
                        }
                    }
                    acc.x.add(sup_x);
                    acc.z.add(int_z.value());
                    acc.u.add(int_u.value());
                }
            }
            Ok(accs)
        })
        .collect();

    let mut totals: Vec<Acc> = coarse.iter().map(|_| Acc::new(big_n + 1)).collect();
    for block in blocks? {
        for (t, b) in totals.iter_mut().zip(&block) {
            t.merge(b);
        }
    }
    let m = paths.len().max(1) as f64;
    Ok(totals
        .iter()
        .map(|a| {
            let err_y = a.y.iter().map(|s| s.value() / m).fold(0.0, f64::max);
            [a.x.value() / m, err_y, a.z.value() / m, a.u.value() / m]
        })
        .collect())
}

/// Runs every coarse grid of the study against one shared fine reference.
pub fn run_study(pipeline: &Pipeline, cfg: &StudyConfig) -> Result<Vec<ErrorReport>> {
    if cfg.n_paths == 0 {
        return Err(Error::InvalidConfig("n_paths must be at least 1".into()));
    }
    let fine_grid = pipeline.grid(cfg.n_ref)?;
    let fine = pipeline.solve(&fine_grid, &pipeline.quadrature(&cfg.reference)?)?;
    let mut solutions = Vec::with_capacity(cfg.ns.len());
    let mut solve_times = Vec::with_capacity(cfg.ns.len());
    for &n in &cfg.ns {
        let grid = pipeline.grid(n)?;
        if fine_grid.refinement_ratio(&grid).is_none() {
            return Err(Error::InvalidGrid(format!(
                "n_ref = {} is not a multiple of n = {n}",
                cfg.n_ref
            )));
        }
        let start = Instant::now();
        let sol =
            if n == cfg.n_ref && cfg.backend == BackendChoice::Quadrature(cfg.reference.clone()) {
                fine.clone()
            } else {
                pipeline.solve_with(&grid, &cfg.backend, cfg.n_paths, cfg.seed)?
            };
        solve_times.push(start.elapsed().as_secs_f64());
        solutions.push(sol);
    }
    let paths: Vec<u64> = (0..cfg.n_paths as u64).collect();
    let start = Instant::now();
    let refs: Vec<&SchemeSolution<'_>> = solutions.iter().collect();
    let terms = error_terms(pipeline, &fine, &refs, &paths, cfg.seed)?;
    let pass_share = start.elapsed().as_secs_f64() / cfg.ns.len().max(1) as f64;

    cfg.ns
        .iter()
        .zip(&solutions)
        .zip(&terms)
        .zip(&solve_times)
        .map(|(((&n, sol), e), &solve_s)| {
            let [err_x, err_y, err_z, err_u] = *e;
            Ok(ErrorReport {
                n,
                mesh: sol.grid().mesh(),
                err_x,
                err_y,
                err_z,
                err_u,
                total: err_x + err_y + err_z + err_u,
                n_paths: cfg.n_paths,
                seed: cfg.seed,
                runtime_s: if cfg.timing {
                    solve_s + pass_share
                } else {
                    0.0
                },
                y0: sol.y0_at_origin()?,
            })
        })
        .collect()
}

/// One coarse grid against the fine reference of `cfg`.
pub fn run_experiment(pipeline: &Pipeline, n: usize, cfg: &StudyConfig) -> Result<ErrorReport> {
    let single = StudyConfig {
        ns: vec![n],
        ..cfg.clone()
    };
    Ok(run_study(pipeline, &single)?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    /// Least-squares slope of `log total` against `log mesh`.
    pub slope: f64,
    pub intercept: f64,
    pub residuals: Vec<f64>,
    /// Totals strictly decrease as the mesh shrinks.
    pub monotone: bool,
}

pub fn estimate_rate(reports: &[ErrorReport]) -> Result<RateFit> {
    if reports.len() < 4 {
        return Err(Error::InsufficientPoints(reports.len()));
    }
    if let Some(r) = reports.iter().find(|r| !(r.total > 0.0 && r.mesh > 0.0)) {
        return Err(Error::InvalidConfig(format!(
            "rate fit needs positive totals and meshes, got total {} at n = {}",
            r.total, r.n
        )));
    }
    let xs: Vec<f64> = reports.iter().map(|r| r.mesh.ln()).collect();
    let ys: Vec<f64> = reports.iter().map(|r| r.total.ln()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidConfig(
            "rate fit needs at least two distinct meshes".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| y - (intercept + slope * x))
        .collect();
    let mut order: Vec<&ErrorReport> = reports.iter().collect();
    order.sort_by(|a, b| b.mesh.total_cmp(&a.mesh));
    let monotone = order.windows(2).all(|w| w[1].total < w[0].total);
    Ok(RateFit {
        slope,
        intercept,
        residuals,
        monotone,
    })
}

/// Context echoed into the JSON sidecar.
#[derive(Debug, Clone, Serialize)]
pub struct ReportMeta {
    pub config: ProblemConfig,
    pub backend: String,
    pub n_ref: usize,
    pub radius: f64,
    /// `Yπ_0` on the reference grid.
    pub reference_y0: Option<f64>,
    /// Closed-form `Y_0` where one exists.
    pub closed_form_y0: Option<f64>,
}

pub const CSV_HEADER: [&str; 10] = [
    "n",
    "mesh",
    "err_x",
    "err_y",
    "err_z",
    "err_u",
    "total",
    "n_paths",
    "seed",
    "runtime_s",
];

/// Sidecar path: `report.csv` → `report.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes the CSV report and, when `meta` is given, a JSON sidecar with the
/// config echo, the rate fit and the per-grid `Yπ_0`.
pub fn emit_report(
    reports: &[ErrorReport],
    rate: Option<&RateFit>,
    meta: Option<&ReportMeta>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in reports {
        w.write_record(&[
            r.n.to_string(),
            r.mesh.to_string(),
            r.err_x.to_string(),
            r.err_y.to_string(),
            r.err_z.to_string(),
            r.err_u.to_string(),
            r.total.to_string(),
            r.n_paths.to_string(),
            r.seed.to_string(),
            r.runtime_s.to_string(),
        ])?;
    }
    w.flush()?;
    if let Some(meta) = meta {
        let doc = serde_json::json!({
            "meta": meta,
            "rate": rate,
            "reports": reports,
        });
        std::fs::write(
            sidecar_path(path),
            serde_json::to_string_pretty(&doc)? + "\n",
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Preset;

    fn report(n: usize, total: f64) -> ErrorReport {
        ErrorReport {
            n,
            mesh: 1.0 / n as f64,
            err_x: total,
            err_y: 0.0,
            err_z: 0.0,
            err_u: 0.0,
            total,
            n_paths: 1,
            seed: 0,
            runtime_s: 0.0,
            y0: 0.0,
        }
    }

    #[test]
    fn exact_power_laws() {
        let lin: Vec<_> = [8, 16, 32, 64, 128]
            .iter()
            .map(|&n| report(n, 3.0 / n as f64))
            .collect();
        let fit = estimate_rate(&lin).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
        assert!(fit.monotone);
        let sq: Vec<_> = [8, 16, 32, 64]
            .iter()
            .map(|&n| report(n, (n as f64).powi(-2)))
            .collect();
        assert!((estimate_rate(&sq).unwrap().slope - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rate_needs_four_points_and_flags_non_monotone() {
        let three: Vec<_> = [8, 16, 32]
            .iter()
            .map(|&n| report(n, 1.0 / n as f64))
            .collect();
        assert!(matches!(
            estimate_rate(&three),
            Err(Error::InsufficientPoints(3))
        ));
        let bumpy = vec![
            report(8, 0.1),
            report(16, 0.2),
            report(32, 0.01),
            report(64, 0.005),
        ];
        assert!(!estimate_rate(&bumpy).unwrap().monotone);
    }

    #[test]
    fn neumaier_recovers_cancelled_terms() {
        let mut s = Sum::default();
        for v in [1.0, 1e100, 1.0, -1e100] {
            s.add(v);
        }
        assert_eq!(s.value(), 2.0);
    }

    #[test]
    fn constant_problem_has_zero_error() {
        let cfg = ProblemConfig::preset(Preset::Constant, 1.0).with_param("sigma", 0.0);
        let p = Pipeline::from_config(&cfg).unwrap();
        let study = StudyConfig::new(vec![4, 8], 16, 64, 3);
        for r in run_study(&p, &study).unwrap() {
            assert_eq!([r.err_x, r.err_y, r.err_z, r.err_u, r.total], [0.0; 5]);
        }
    }

    #[test]
    fn self_reference_is_exact() {
        let p = Pipeline::new(Problem::preset(Preset::QuadraticJump, 1.0).unwrap());
        let study = StudyConfig::new(vec![32], 32, 100, 5);
        let r = &run_study(&p, &study).unwrap()[0];
        assert_eq!(r.total, 0.0);
    }

    #[test]
    fn report_invariants_on_jump_preset() {
        let p = Pipeline::new(Problem::preset(Preset::QuadraticJump, 1.0).unwrap());
        let study = StudyConfig::new(vec![4, 8, 16], 64, 400, 11);
        let reports = run_study(&p, &study).unwrap();
        for r in &reports {
            for e in [r.err_x, r.err_y, r.err_z, r.err_u] {
                assert!(e.is_finite() && e >= 0.0);
            }
            assert_eq!(r.total, r.err_x + r.err_y + r.err_z + r.err_u);
            assert!(r.err_u > 0.0);
        }
        assert!(reports[2].total < reports[0].total);
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.csv");
        emit_report(&[], None, None, &empty).unwrap();
        assert_eq!(
            std::fs::read_to_string(&empty).unwrap(),
            CSV_HEADER.join(",") + "\n"
        );

        let one = dir.path().join("one.csv");
        let r = ErrorReport {
            err_y: 1.0 / 3.0,
            total: 0.1 + 1.0 / 3.0,
            runtime_s: 0.25,
            ..report(16, 0.1)
        };
        emit_report(std::slice::from_ref(&r), None, None, &one).unwrap();
        let mut rd = csv::Reader::from_path(&one).unwrap();
        let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 1);
        let f = |k: usize| rows[0][k].parse::<f64>().unwrap();
        assert_eq!(rows[0][0].parse::<usize>().unwrap(), r.n);
        assert_eq!(
            [f(1), f(2), f(3), f(4), f(5), f(6), f(9)],
            [
                r.mesh,
                r.err_x,
                r.err_y,
                r.err_z,
                r.err_u,
                r.total,
                r.runtime_s
            ]
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rate_fit_recovers_power_laws(k in 1e-4..1e2f64, p in 0.2..3.0f64, extra in 0usize..3) {
                let ns: Vec<usize> = (0..4 + extra).map(|j| 8 << j).collect();
                let reports: Vec<ErrorReport> =
                    ns.iter().map(|&n| report(n, k * (1.0 / n as f64).powf(p))).collect();
                let fit = estimate_rate(&reports).unwrap();
                prop_assert!((fit.slope - p).abs() < 1e-10);
                prop_assert!(fit.residuals.iter().all(|r| r.abs() < 1e-10));
                prop_assert!(fit.monotone);
            }

            #[test]
            fn compensated_sum_is_exact_for_dyadic_terms(v in proptest::collection::vec(-1e6..1e6f64, 1..200)) {
                // terms rounded to 2^-20 sum exactly in f64
                let q: Vec<f64> = v.iter().map(|x| (x * 1048576.0).round() / 1048576.0).collect();
                let mut s = Sum::default();
                q.iter().for_each(|&x| s.add(x));
                let exact: i128 = q.iter().map(|x| (x * 1048576.0) as i128).sum();
                prop_assert_eq!(s.value(), exact as f64 / 1048576.0);
            }
        }
    }
}
