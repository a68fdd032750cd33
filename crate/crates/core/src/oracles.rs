//! Independent reference values: exhaustive enumeration of the schemes on a
//! two-point increment law, closed forms for two generator families, and a
//! fine-grid self-reference.

use serde::Serialize;

use crate::backward::{implicit_step, solve, Backend, SchemeSolution, StepControls, UInput};
use crate::condexp::QuadratureRule;
use crate::forward::{euler_step, TimeGrid};
use crate::model::{Coefficients, Diffusion};
use crate::{Error, Result};

/// Largest grid the tree oracle enumerates (`2ⁿ` leaves per jump index).
pub const TREE_MAX_STEPS: usize = 6;
/// Smallest Gauss–Hermite order accepted for the exponential-transform value.
pub const COLE_HOPF_MIN_ORDER: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Tree,
    ClosedForm,
    FineGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub y0_at_origin: f64,
    pub provenance: Provenance,
    pub tolerance: f64,
    #[serde(skip)]
    pub tables: Option<TreeTables>,
}

/// Scenario values of a tree enumeration. Level `i` holds `2^i` histories;
/// history `h` branches into `2h` (`ΔW = −√Δt`) and `2h + 1` (`+√Δt`).
#[derive(Debug, Clone, PartialEq)]
pub struct TreeTables {
    pub x0: Vec<Vec<f64>>,
    pub y0: Vec<Vec<f64>>,
    pub z0: Vec<Vec<f64>>,
    /// `Y¹π_{t_i}(t_i)`
    pub diag: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    /// Indexed `[k][i]`, empty for `i < k`.
    pub x1: Vec<Vec<Vec<f64>>>,
    pub y1: Vec<Vec<Vec<f64>>>,
    pub z1: Vec<Vec<Vec<f64>>>,
}

/// `(E, Z)` over the two children of a node, in the same operation order as
/// the quadrature backend.
fn two_point_pair(v_minus: f64, v_plus: f64, dt: f64) -> (f64, f64) {
    let sq = dt.sqrt();
    let (dw_m, dw_p) = (-sq, sq * 1.0);
    let mut e = 0.0;
    let mut z = 0.0;
    e += 0.5 * v_minus;
    e += 0.5 * v_plus;
    z += 0.5 * (v_minus * dw_m + v_plus * dw_p);
    (e, z / dt)
}

/// Enumerates every `±√Δt` scenario and runs the post-jump scheme separately
/// for each jump index `k`, then the pre-jump scheme on the diagonal.
pub fn tree_oracle(
    coeffs: &dyn Coefficients,
    grid: &TimeGrid,
    x0: f64,
    controls: &StepControls,
) -> Result<OracleResult> {
    let n = grid.n();
    if n > TREE_MAX_STEPS {
        return Err(Error::TooLarge(format!(
            "tree oracle enumerates at most {TREE_MAX_STEPS} steps, got {n}"
        )));
    }
    let children = |states: &[f64], i: usize| -> Vec<f64> {
        let (t, dt) = (grid.t(i - 1), grid.dt(i));
        let sq = dt.sqrt();
        states
            .iter()
            .flat_map(|&x| {
                [
                    euler_step(coeffs, t, x, dt, -sq),
                    euler_step(coeffs, t, x, dt, sq * 1.0),
                ]
            })
            .collect()
    };
    let mut xs = vec![vec![x0]];
    for i in 1..=n {
        let next = children(&xs[i - 1], i);
        xs.push(next);
    }

    let mut x1 = Vec::with_capacity(n + 1);
    let mut y1 = Vec::with_capacity(n + 1);
    let mut z1 = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let mut states: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
        states[k] = if k == 0 {
            vec![x0 + coeffs.jump_size(grid.t(0), x0)]
        } else {
            let t = grid.t(k - 1);
            let pre = &xs[k - 1];
            let stepped = children(pre, k);
            stepped
                .iter()
                .enumerate()
                .map(|(h, &x)| x + coeffs.jump_size(t, pre[h / 2]))
                .collect()
        };
        for i in k + 1..=n {
            states[i] = children(&states[i - 1], i);
        }
        let mut ys: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
        let mut zs: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
        ys[n] = states[n].iter().map(|&x| coeffs.terminal(x)).collect();
        zs[n] = vec![0.0; states[n].len()];
        for i in (k..n).rev() {
            let (t, dt) = (grid.t(i), grid.dt(i + 1));
            let mut yi = Vec::with_capacity(states[i].len());
            let mut zi = Vec::with_capacity(states[i].len());
            for (h, &x) in states[i].iter().enumerate() {
                let (e, z) = two_point_pair(ys[i + 1][2 * h], ys[i + 1][2 * h + 1], dt);
                yi.push(implicit_step(
                    e,
                    z,
                    x,
                    t,
                    dt,
                    coeffs,
                    UInput::Fixed(0.0),
                    controls.family_lipschitz,
                )?);
                zi.push(z);
            }
            ys[i] = yi;
            zs[i] = zi;
        }
        x1.push(states);
        y1.push(ys);
        z1.push(zs);
    }

    let diag: Vec<Vec<f64>> = (0..=n).map(|i| y1[i][i].clone()).collect();
    let mut y0: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut z0: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    y0[n] = xs[n].iter().map(|&x| coeffs.terminal(x)).collect();
    z0[n] = vec![0.0; xs[n].len()];
    for i in (0..n).rev() {
        let (t, dt) = (grid.t(i), grid.dt(i + 1));
        let mut yi = Vec::with_capacity(xs[i].len());
        let mut zi = Vec::with_capacity(xs[i].len());
        for (h, &x) in xs[i].iter().enumerate() {
            let (e, z) = two_point_pair(y0[i + 1][2 * h], y0[i + 1][2 * h + 1], dt);
            let u = UInput::Diagonal(diag[i][h]);
            yi.push(implicit_step(
                e,
                z,
                x,
                t,
                dt,
                coeffs,
                u,
                controls.pre_lipschitz,
            )?);
            zi.push(z);
        }
        y0[i] = yi;
        z0[i] = zi;
    }
    let u: Vec<Vec<f64>> = (0..=n)
        .map(|i| diag[i].iter().zip(&y0[i]).map(|(d, y)| d - y).collect())
        .collect();

    Ok(OracleResult {
        y0_at_origin: y0[0][0],
        provenance: Provenance::Tree,
        tolerance: 0.0,
        tables: Some(TreeTables {
            x0: xs,
            y0,
            z0,
            diag,
            u,
            x1,
            y1,
            z1,
        }),
    })
}

/// `∫_0^T σ(t)² dt` for `σ(t) = level + trend·t`.
pub fn integrated_variance(sigma: &Diffusion, horizon: f64) -> f64 {
    let (a, b, t) = (sigma.level, sigma.trend, horizon);
    a * a * t + a * b * t * t + b * b * t * t * t / 3.0
}

/// `Y_0 = (1/γ) log E[exp(γ g(x₀ + ∫σ dW))]`, the value of the BSDE with
/// driver `(γ/2) z²`, by Gauss–Hermite quadrature of order `order ≥ 64`.
pub fn cole_hopf_reference(
    g: impl Fn(f64) -> f64,
    x0: f64,
    sigma: &Diffusion,
    horizon: f64,
    gamma: f64,
    order: usize,
) -> Result<OracleResult> {
    if order < COLE_HOPF_MIN_ORDER {
        return Err(Error::InvalidConfig(format!(
            "exponential-transform reference needs order >= {COLE_HOPF_MIN_ORDER}, got {order}"
        )));
    }
    let sd = integrated_variance(sigma, horizon).sqrt();
    let y0 = if gamma == 0.0 {
        QuadratureRule::gauss_hermite(order)?.expect(|xi| g(x0 + sd * xi))
    } else {
        let rule = QuadratureRule::gauss_hermite(order)?;
        let vals: Vec<f64> = rule
            .nodes
            .iter()
            .map(|&xi| gamma * g(x0 + sd * xi))
            .collect();
        let shift = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean: f64 = rule
            .weights
            .iter()
            .zip(&vals)
            .map(|(w, v)| w * (v - shift).exp())
            .sum();
        (shift + mean.ln()) / gamma
    };
    Ok(OracleResult {
        y0_at_origin: y0,
        provenance: Provenance::ClosedForm,
        tolerance: 1e-10,
        tables: None,
    })
}

/// Closed form for `f = a_y y + a_u u`, `g ≡ c`.
///
/// The post-jump value is `Y¹_t = c e^{a_y(T−t)}`. The pre-jump value solves
/// `y' = −a_y y − a_u (Y¹_t − y)`, `y(T) = c`, whose solution at 0 is
/// `c e^{(a_y−a_u)T} (1 + a_u ∫_0^T e^{a_u r} dr)`. The jump law does not
/// enter: before the jump nothing compensates `U`.
pub fn linear_jump_reference(a_y: f64, a_u: f64, c: f64, _rate: f64, horizon: f64) -> OracleResult {
    let t = horizon;
    // a_u ∫_0^T e^{a_u r} dr = e^{a_u T} − 1, also for a_u = 0
    let coupling = (a_u * t).exp_m1();
    let y0 = c * ((a_y - a_u) * t).exp() * (1.0 + coupling);
    OracleResult {
        y0_at_origin: y0,
        provenance: Provenance::ClosedForm,
        tolerance: 1e-14,
        tables: None,
    }
}

/// The scheme on a fine grid, used as a proxy for the exact solution.
pub fn fine_grid_reference<'a>(
    coeffs: &'a dyn Coefficients,
    x0: f64,
    horizon: f64,
    n_ref: usize,
    backend: &Backend<'_>,
    controls: &StepControls,
) -> Result<SchemeSolution<'a>> {
    let grid = TimeGrid::uniform(horizon, n_ref)?;
    solve(coeffs, &grid, x0, backend, controls)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backward::NodeLayout;
    use crate::model::{Affine, CoefficientSet, GeneratorForm, TerminalForm};
    use crate::truncation::Lipschitzized;

    fn ctl() -> StepControls {
        StepControls {
            family_lipschitz: 1.0,
            pre_lipschitz: 2.0,
            bound: None,
        }
    }

    fn inert() -> StepControls {
        StepControls {
            family_lipschitz: 0.0,
            pre_lipschitz: 0.0,
            bound: None,
        }
    }

    #[test]
    fn tree_trivial_examples() {
        for n in 1..=4 {
            let grid = TimeGrid::uniform(1.0, n).unwrap();
            let c = CoefficientSet {
                terminal: TerminalForm::Constant { value: 1.0 },
                ..CoefficientSet::default()
            };
            assert_eq!(
                tree_oracle(&c, &grid, 0.3, &inert()).unwrap().y0_at_origin,
                1.0
            );
            let lin = CoefficientSet {
                terminal: TerminalForm::Linear {
                    slope: 1.0,
                    intercept: 0.0,
                },
                ..CoefficientSet::default()
            };
            let y = tree_oracle(&lin, &grid, 0.3, &inert())
                .unwrap()
                .y0_at_origin;
            assert!((y - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn tree_square_terminal_by_hand() {
        let grid = TimeGrid::uniform(1.0, 2).unwrap();
        let c = CoefficientSet {
            terminal: TerminalForm::Quadratic { coefficient: 1.0 },
            ..CoefficientSet::default()
        };
        // scenarios ±√½ ± √½ from x₀: mean of x₀² + 2x₀s + s², s ∈ {−√2, 0, 0, √2}
        let x0: f64 = 0.7;
        let r = tree_oracle(&c, &grid, x0, &inert()).unwrap();
        assert!((r.y0_at_origin - (x0 * x0 + 1.0)).abs() < 1e-14);
        let t = r.tables.unwrap();
        assert_eq!(t.x0[2].len(), 4);
    }

    #[test]
    fn tree_rejects_large_grids() {
        let grid = TimeGrid::uniform(1.0, 7).unwrap();
        assert!(matches!(
            tree_oracle(&CoefficientSet::default(), &grid, 0.0, &ctl()),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn tree_matches_solver_on_lattice() {
        let base = CoefficientSet {
            drift: Affine {
                slope: -0.5,
                intercept: 0.1,
            },
            diffusion: Diffusion::constant(0.4),
            jump_size: Affine::constant(-0.5),
            generator: GeneratorForm {
                y_coef: 0.1,
                u_coef: 0.2,
                gamma: 1.0,
                ..GeneratorForm::default()
            },
            terminal: TerminalForm::Tanh {
                amplitude: 1.0,
                scale: 1.0,
            },
        };
        let c = Lipschitzized::new(base, 3.0);
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let rule = QuadratureRule::two_point();
        let layout = NodeLayout::lattice(&c, &grid, 0.2, &rule);
        let sol = solve(
            &c,
            &grid,
            0.2,
            &Backend::Quadrature { rule, layout },
            &ctl(),
        )
        .unwrap();
        let tree = tree_oracle(&c, &grid, 0.2, &ctl()).unwrap();
        let t = tree.tables.unwrap();
        for i in 0..=4 {
            for (h, &x) in t.x0[i].iter().enumerate() {
                assert!((sol.y0(i, x, x).unwrap() - t.y0[i][h]).abs() < 1e-12);
                assert!((sol.z0(i, x) - t.z0[i][h]).abs() < 1e-12);
                assert!((sol.diag(i, x, x).unwrap() - t.diag[i][h]).abs() < 1e-12);
            }
            for k in 0..=i {
                for (h, &x) in t.x1[k][i].iter().enumerate() {
                    assert!((sol.family().y1(i, k, x).unwrap() - t.y1[k][i][h]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn cole_hopf_examples() {
        let s = Diffusion::constant(1.0);
        let r = cole_hopf_reference(|_| 0.4, 0.0, &s, 1.0, 1.0, 64).unwrap();
        assert!((r.y0_at_origin - 0.4).abs() < 1e-14);
        let r = cole_hopf_reference(f64::sin, 0.0, &s, 1.0, 1.0, 64).unwrap();
        assert!((r.y0_at_origin - 0.2064650881636838).abs() < 1e-12);
        let flat = Diffusion::constant(0.0);
        let r = cole_hopf_reference(f64::sin, 0.8, &flat, 1.0, 1.0, 64).unwrap();
        assert!((r.y0_at_origin - 0.8f64.sin()).abs() < 1e-14);
        assert!(cole_hopf_reference(f64::sin, 0.0, &s, 1.0, 1.0, 32).is_err());
    }

    #[test]
    fn cole_hopf_stable_under_order() {
        let s = Diffusion::constant(1.0);
        let a = cole_hopf_reference(f64::sin, 0.3, &s, 1.0, 1.0, 64)
            .unwrap()
            .y0_at_origin;
        for q in [80, 96, 128] {
            let b = cole_hopf_reference(f64::sin, 0.3, &s, 1.0, 1.0, q)
                .unwrap()
                .y0_at_origin;
            assert!((a - b).abs() < 1e-10, "order {q}: {a} vs {b}");
        }
    }

    #[test]
    fn integrated_variance_matches_simpson() {
        let s = Diffusion {
            level: 0.7,
            trend: -0.3,
        };
        let m = 2000;
        let h = 2.0 / m as f64;
        let f = |t: f64| s.eval(t).powi(2);
        let simpson: f64 = (0..m / 2)
            .map(|j| {
                let a = 2.0 * j as f64 * h;
                h / 3.0 * (f(a) + 4.0 * f(a + h) + f(a + 2.0 * h))
            })
            .sum();
        assert!((integrated_variance(&s, 2.0) - simpson).abs() < 1e-12);
    }

    #[test]
    fn linear_jump_examples() {
        let r = linear_jump_reference(0.5, 0.0, 2.0, 0.5, 1.0);
        assert!((r.y0_at_origin - 2.0 * 0.5f64.exp()).abs() < 1e-14);
        assert_eq!(
            linear_jump_reference(0.0, 0.0, 3.0, 0.5, 1.0).y0_at_origin,
            3.0
        );
        assert!((linear_jump_reference(0.0, 1.0, 1.0, 0.5, 1.0).y0_at_origin - 1.0).abs() < 1e-15);
        let r = linear_jump_reference(0.5, 0.3, 1.0, 0.5, 1.0);
        assert!((r.y0_at_origin - 0.5f64.exp()).abs() < 1e-14);
    }

    mod props {
        use super::*;
        use crate::backward::NodeLayout;
        use crate::model::{Affine, CoefficientSet, GeneratorForm, TerminalForm};
        use crate::truncation::Lipschitzized;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            /// The solver on the two-point lattice is the tree enumeration.
            #[test]
            fn solver_equals_tree_on_random_models(
                n in 1usize..=4, kappa in -1.0..1.0f64, sigma in 0.05..1.5f64, beta in -1.0..1.0f64,
                a_y in -0.5..0.5f64, a_u in -0.5..0.5f64, gamma in -1.0..1.0f64, radius in 0.1..5.0f64,
                x0 in -1.0..1.0f64, amp in 0.1..2.0f64,
            ) {
                let base = CoefficientSet {
                    drift: Affine { slope: kappa, intercept: 0.0 },
                    diffusion: Diffusion::constant(sigma),
                    jump_size: Affine::constant(beta),
                    generator: GeneratorForm { y_coef: a_y, u_coef: a_u, gamma, ..GeneratorForm::default() },
                    terminal: TerminalForm::Tanh { amplitude: amp, scale: 1.0 },
                };
                let c = Lipschitzized::new(base, radius);
                let ctl = StepControls { family_lipschitz: 1.0, pre_lipschitz: 1.5, bound: None };
                let grid = TimeGrid::uniform(0.6, n).unwrap();
                let rule = QuadratureRule::two_point();
                let layout = NodeLayout::lattice(&c, &grid, x0, &rule);
                let sol = solve(&c, &grid, x0, &Backend::Quadrature { rule, layout }, &ctl).unwrap();
                let t = tree_oracle(&c, &grid, x0, &ctl).unwrap().tables.unwrap();
                for i in 0..=n {
                    for (h, &x) in t.x0[i].iter().enumerate() {
                        prop_assert!((sol.y0(i, x, x).unwrap() - t.y0[i][h]).abs() <= 1e-12);
                        prop_assert!((sol.z0(i, x) - t.z0[i][h]).abs() <= 1e-12);
                        let u = sol.diag(i, x, x).unwrap() - sol.y0(i, x, x).unwrap();
                        prop_assert!((u - t.u[i][h]).abs() <= 1e-12);
                    }
                    for k in 0..=i {
                        for (h, &x) in t.x1[k][i].iter().enumerate() {
                            prop_assert!((sol.family().y1(i, k, x).unwrap() - t.y1[k][i][h]).abs() <= 1e-12);
                            prop_assert!((sol.family().z1(i, k, x).unwrap() - t.z1[k][i][h]).abs() <= 1e-12);
                        }
                    }
                }
            }

            #[test]
            fn linear_reference_solves_the_ode(
                a_y in -1.0..1.0f64, a_u in -1.0..1.0f64, c in -2.0..2.0f64, t in 0.1..2.0f64,
            ) {
                // RK4 on y' = -a_y y - a_u (c e^{a_y(T-s)} - y), backwards from y(T) = c
                let rhs = |s: f64, y: f64| -a_y * y - a_u * (c * (a_y * (t - s)).exp() - y);
                let m = 2000;
                let h = t / m as f64;
                let mut y = c;
                for j in 0..m {
                    let s = t - j as f64 * h;
                    let k1 = rhs(s, y);
                    let k2 = rhs(s - h / 2.0, y - h / 2.0 * k1);
                    let k3 = rhs(s - h / 2.0, y - h / 2.0 * k2);
                    let k4 = rhs(s - h, y - h * k3);
                    y -= h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                }
                let r = linear_jump_reference(a_y, a_u, c, 0.5, t).y0_at_origin;
                prop_assert!((r - y).abs() < 1e-10 * (1.0 + y.abs()));
            }
        }
    }
}
