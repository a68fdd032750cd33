//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_FAILURES` are unattainable as stated and are
//! expected to print FAIL; the binary exits nonzero on any other failure, or
//! if a known failure starts passing.

use std::time::Instant;

use jumpbsde::backward::{solve, Backend, NodeLayout};
use jumpbsde::condexp::{QuadratureRule, RegressionBasis};
use jumpbsde::forward::{JumpPath, PathBundle, TimeGrid};
use jumpbsde::harness::{estimate_rate, run_study, Pipeline, QuadratureSettings, StudyConfig};
use jumpbsde::model::{validate_assumptions, AssumptionConstants, Preset, ProbePlan, Problem};
use jumpbsde::oracles::{cole_hopf_reference, linear_jump_reference, tree_oracle};
use jumpbsde::truncation::{gradient_bound_catalog, truncation_radius};
use jumpbsde::Error;

/// With `g` constant and `f = a_y y + a_u u` both branches solve the same
/// equation, so `U ≡ 0`; the "U nonzero" clause cannot hold.
const KNOWN_FAILURES: &[&str] = &["A3"];

struct Outcome {
    id: &'static str,
    passed: bool,
    detail: String,
}

fn outcome(id: &'static str, result: Result<(bool, String), String>) -> Outcome {
    match result {
        Ok((passed, detail)) => Outcome { id, passed, detail },
        Err(e) => Outcome {
            id,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

type Check = Result<(bool, String), String>;

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn quad(p: &Pipeline) -> Backend<'static> {
    p.quadrature(&QuadratureSettings::default()).unwrap()
}

fn cole_hopf_value(p: &Problem) -> f64 {
    let (a, w) = (p.params["amplitude"], p.params["frequency"]);
    cole_hopf_reference(
        |x| a * (w * x).sin(),
        p.x0,
        &p.coeffs.diffusion,
        p.horizon(),
        p.params["gamma"],
        64,
    )
    .unwrap()
    .y0_at_origin
}

fn a1() -> Check {
    let p = Pipeline::new(Problem::preset(Preset::ColeHopf, 1.0).map_err(s)?);
    let start = Instant::now();
    let cfg = StudyConfig::new(vec![8, 16, 32, 64, 128], 1024, 100_000, 42);
    let reports = run_study(&p, &cfg).map_err(s)?;
    let fit = estimate_rate(&reports).map_err(s)?;
    let secs = start.elapsed().as_secs_f64();
    let totals: Vec<String> = reports.iter().map(|r| format!("{:.3e}", r.total)).collect();
    Ok((
        fit.slope >= 0.8 && secs <= 300.0,
        format!(
            "slope {:.3} (>= 0.8), totals [{}], {secs:.1}s (<= 300s)",
            fit.slope,
            totals.join(", ")
        ),
    ))
}

fn a2() -> Check {
    let p = Pipeline::new(Problem::preset(Preset::ColeHopf, 1.0).map_err(s)?);
    let y = p
        .solve(&p.grid(128).map_err(s)?, &quad(&p))
        .map_err(s)?
        .y0_at_origin()
        .map_err(s)?;
    let r = cole_hopf_value(&p.problem);
    let gap = (y - r).abs();
    Ok((
        gap <= 1e-2,
        format!("Y0 {y:.6} vs reference {r:.6}, gap {gap:.2e} (<= 1e-2)"),
    ))
}

fn a3() -> Check {
    let p = Pipeline::new(Problem::preset(Preset::LinearJump, 1.0).map_err(s)?);
    let grid = p.grid(128).map_err(s)?;
    let sol = p.solve(&grid, &quad(&p)).map_err(s)?;
    let y = sol.y0_at_origin().map_err(s)?;
    let pr = &p.problem.params;
    let r = linear_jump_reference(pr["a_y"], pr["a_u"], pr["terminal"], 0.5, 1.0).y0_at_origin;
    let gap = (y - r).abs();
    // largest |U| before the jump along simulated paths
    let bundle = PathBundle::simulate(p.coeffs(), &p.problem.jump, &grid, p.problem.x0, 1000, 7)
        .map_err(s)?;
    let mut u_max: f64 = 0.0;
    for q in 0..bundle.n_paths() {
        let path = bundle.jump_path(p.coeffs(), q).map_err(s)?;
        let vals = sol.path_values(&path).map_err(s)?;
        for i in 0..=grid.n() {
            if grid.t(i) <= path.tau {
                u_max = u_max.max(vals.u[i].abs());
            }
        }
    }
    let value_ok = gap <= 1e-2;
    let u_ok = u_max > 1e-6;
    Ok((
        value_ok && u_ok,
        format!(
            "Y0 {y:.6} vs closed form {r:.6}, gap {gap:.2e} (<= 1e-2: {}); max pre-jump |U| {u_max:.2e} (> 1e-6: {})",
            if value_ok { "ok" } else { "no" },
            if u_ok { "ok" } else { "no" }
        ),
    ))
}

fn a4() -> Check {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    let mut skipped = Vec::new();
    for preset in Preset::SHIPPED {
        let p = Pipeline::new(Problem::preset(preset, 1.0).map_err(s)?);
        let c = p.coeffs();
        let x0 = p.problem.x0;
        for n in 1..=4 {
            let grid = TimeGrid::uniform(1.0, n).map_err(s)?;
            let rule = QuadratureRule::two_point();
            let layout = NodeLayout::lattice(c, &grid, x0, &rule);
            let backend = Backend::Quadrature { rule, layout };
            let sol = match solve(c, &grid, x0, &backend, p.controls()) {
                Ok(sol) => sol,
                // the contraction precondition excludes this mesh for both
                Err(Error::MeshTooCoarse { .. }) => {
                    let tree = tree_oracle(c, &grid, x0, p.controls());
                    if !matches!(tree, Err(Error::MeshTooCoarse { .. })) {
                        return Err("tree oracle accepted a mesh the solver rejected".into());
                    }
                    skipped.push(format!("{}/n={n}", preset.id()));
                    continue;
                }
                Err(e) => return Err(e.to_string()),
            };
            let tree = tree_oracle(c, &grid, x0, p.controls()).map_err(s)?;
            let t = tree.tables.expect("tree tables");
            let mut gap = |a: f64, b: f64| worst = worst.max((a - b).abs());
            for i in 0..=n {
                for (h, &x) in t.x0[i].iter().enumerate() {
                    let y0 = sol.y0(i, x, x).map_err(s)?;
                    let d = sol.diag(i, x, x).map_err(s)?;
                    gap(y0, t.y0[i][h]);
                    gap(sol.z0(i, x), t.z0[i][h]);
                    gap(d, t.diag[i][h]);
                    gap(d - y0, t.u[i][h]);
                }
                for k in 0..=i {
                    for (h, &x) in t.x1[k][i].iter().enumerate() {
                        gap(sol.family().y1(i, k, x).map_err(s)?, t.y1[k][i][h]);
                        gap(sol.family().z1(i, k, x).map_err(s)?, t.z1[k][i][h]);
                    }
                }
            }
            cases += 1;
        }
    }
    Ok((
        worst <= 1e-12 && cases > 0,
        format!(
            "{cases} preset/grid cases, max |solver − tree| {worst:.2e} (<= 1e-12); \
             skipped, L·Δt >= 1: [{}]",
            skipped.join(", ")
        ),
    ))
}

fn a5() -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    for preset in [Preset::ColeHopf, Preset::LinearJump] {
        let problem = Problem::preset(preset, 1.0).map_err(s)?;
        let m = truncation_radius(&problem.constants);
        let p1 = Pipeline::with_radius(problem.clone(), m);
        let p2 = Pipeline::with_radius(problem, 2.0 * m);
        let grid = p1.grid(128).map_err(s)?;
        let s1 = p1.solve(&grid, &quad(&p1)).map_err(s)?;
        let s2 = p2.solve(&grid, &quad(&p2)).map_err(s)?;
        let dy = (s1.y0_at_origin().map_err(s)? - s2.y0_at_origin().map_err(s)?).abs();
        let (z1, z0) = s1.z_tables().ok_or("quadrature solution has tables")?;
        let z_max = z1
            .iter()
            .chain(&z0)
            .flat_map(|t| t.values())
            .fold(0.0f64, |a, v| a.max(v.abs()));
        ok &= dy <= 1e-3 && z_max <= m;
        lines.push(format!(
            "{}: M {m:.4}, |ΔY0| {dy:.2e} (<= 1e-3), max|z| {z_max:.4} (<= M)",
            preset.id()
        ));
    }
    Ok((ok, lines.join("; ")))
}

fn a6() -> Check {
    let p = Pipeline::new(Problem::preset(Preset::QuadraticJump, 1.0).map_err(s)?);
    let grid = p.grid(32).map_err(s)?;
    let sol = p.solve(&grid, &quad(&p)).map_err(s)?;
    let bundle = PathBundle::simulate(p.coeffs(), &p.problem.jump, &grid, p.problem.x0, 1000, 3)
        .map_err(s)?;
    let mut checked = 0usize;
    let mut mismatches = 0usize;
    let mut jumped = 0usize;
    for q in 0..bundle.n_paths() {
        let path: JumpPath = bundle.jump_path(p.coeffs(), q).map_err(s)?;
        let k = bundle.jump_index(q);
        jumped += usize::from(k.is_some());
        let mut times: Vec<f64> = (0..=grid.n())
            .flat_map(|i| [grid.t(i), grid.t(i) + 0.5 * grid.mesh()])
            .collect();
        times.retain(|&t| t <= grid.horizon());
        times.push(path.tau.min(grid.horizon()));
        for t in times {
            let i = grid.floor_index(t);
            let x = path.x0[i];
            let x_prev = path.x0[i.saturating_sub(1)];
            let (y0, z0) = (sol.y0(i, x, x_prev).map_err(s)?, sol.z0(i, x));
            let u0 = sol.diag(i, x, x_prev).map_err(s)? - y0;
            let (y1, z1) = match (&path.x1, k) {
                (Some(x1), Some(k)) if i >= k => (sol.y1(i, x1[i]).map_err(s)?, sol.z1(i, x1[i])),
                _ => (f64::NAN, f64::NAN),
            };
            let y = if t < path.tau { y0 } else { y1 };
            let z = if t <= path.tau { z0 } else { z1 };
            let u = if t <= path.tau { u0 } else { 0.0 };
            let got = sol.recombine_yzu(&path, t).map_err(s)?;
            checked += 1;
            if got.0.to_bits() != y.to_bits()
                || got.1.to_bits() != z.to_bits()
                || got.2.to_bits() != u.to_bits()
            {
                mismatches += 1;
            }
        }
    }
    Ok((
        mismatches == 0,
        format!("{checked} (path, t) evaluations on 1000 paths ({jumped} jumped), {mismatches} bitwise mismatches"),
    ))
}

fn a7() -> Check {
    let cubic = Problem::preset(Preset::CubicZ, 1.0).map_err(s)?;
    let report = validate_assumptions(
        &cubic.coeffs,
        &cubic.jump,
        &cubic.constants,
        &ProbePlan::around(cubic.x0),
    )
    .map_err(s)?;
    let witnessed: Vec<String> = report
        .failures()
        .filter(|c| !c.witness.is_empty())
        .map(|c| c.name.clone())
        .collect();
    let rejected = !report.passed() && !witnessed.is_empty();
    let mut shipped_ok = true;
    let mut bad = Vec::new();
    for preset in Preset::SHIPPED {
        let p = Problem::preset(preset, 1.0).map_err(s)?;
        let r = validate_assumptions(&p.coeffs, &p.jump, &p.constants, &ProbePlan::around(p.x0))
            .map_err(s)?;
        if !r.passed() {
            shipped_ok = false;
            bad.push(preset.id());
        }
    }
    Ok((
        rejected && shipped_ok,
        format!(
            "cubic_z rejected with witnesses on [{}]; shipped presets failing: [{}]",
            witnessed.join(", "),
            bad.join(", ")
        ),
    ))
}

fn a8() -> Check {
    let p = Pipeline::new(Problem::preset(Preset::LinearJump, 1.0).map_err(s)?);
    let grid = p.grid(64).map_err(s)?;
    let yq = p
        .solve(&grid, &quad(&p))
        .map_err(s)?
        .y0_at_origin()
        .map_err(s)?;
    let bundle = p.training_bundle(&grid, 100_000, 42).map_err(s)?;
    let yl = p
        .solve(
            &grid,
            &Backend::Lsmc {
                bundle: &bundle,
                basis: RegressionBasis::default(),
            },
        )
        .map_err(s)?
        .y0_at_origin()
        .map_err(s)?;
    let gap = (yq - yl).abs();
    Ok((
        gap <= 2e-2,
        format!("quadrature {yq:.6} vs lsmc {yl:.6}, gap {gap:.2e} (<= 2e-2)"),
    ))
}

fn a9() -> Check {
    let consts = |k_a: f64, l_a: f64, k_g: f64, k_f: f64, t: f64| AssumptionConstants {
        k_a,
        l_a,
        k_g,
        k_f,
        ..AssumptionConstants::zero(t)
    };
    let ln2 = std::f64::consts::LN_2;
    let mut worst: f64 = 0.0;
    let mut gap = |a: f64, b: f64| worst = worst.max((a - b).abs());
    gap(
        gradient_bound_catalog(&consts(0.0, 0.0, 0.0, 0.0, 1.0)).grad_x0,
        1.0,
    );
    let b = gradient_bound_catalog(&consts(0.0, ln2, 0.0, 0.0, 1.0));
    gap(b.grad_x0, 2.0);
    gap(b.grad_x1_x, (1.0 + 2.0 * ln2) * 2.0);
    let b = gradient_bound_catalog(&consts(0.0, 0.0, 1.0, 0.0, 1.0));
    gap(b.grad_y1_theta, 1.0);
    gap(b.grad_y0, 1.0);
    gap(truncation_radius(&consts(3.0, 0.0, 2.0, 0.0, 1.0)), 6.0);
    gap(truncation_radius(&AssumptionConstants::zero(1.0)), 0.0);
    gap(truncation_radius(&consts(1.0, ln2, 1.0, 0.0, 1.0)), 4.0);
    Ok((
        worst <= 1e-12,
        format!("max deviation from hand values {worst:.2e} (<= 1e-12)"),
    ))
}

fn main() {
    let criteria: [(&'static str, fn() -> Check); 9] = [
        ("A1", a1),
        ("A2", a2),
        ("A3", a3),
        ("A4", a4),
        ("A5", a5),
        ("A6", a6),
        ("A7", a7),
        ("A8", a8),
        ("A9", a9),
    ];
    let mut unexpected = Vec::new();
    for (id, check) in criteria {
        let o = outcome(id, check());
        let known = KNOWN_FAILURES.contains(&o.id);
        let tag = if o.passed { "PASS" } else { "FAIL" };
        let note = if known {
            " [known failure, see notes]"
        } else {
            ""
        };
        println!("{tag} {}: {}{note}", o.id, o.detail);
        if o.passed == known {
            unexpected.push(o.id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected outcome for: {}", unexpected.join(", "));
        std::process::exit(1);
    }
}
