//! Sampling-based probes of the standing assumptions.
//!
//! Every check has the shape `lhs(p) ≤ Σ_j c_j·w_j(p)` with constants `c_j`
//! and nonnegative weights `w_j`. Sample points never depend on the
//! constants, so enlarging constants cannot turn a passing probe into a
//! failing one.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AssumptionConstants, Coefficients, JumpModel};
use crate::{Error, Result};

const REL_TOL: f64 = 1e-9;
const ABS_TOL: f64 = 1e-12;
const PRIMES: [u32; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Sampling boxes and budget. Time is always sampled on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbePlan {
    pub x_box: [f64; 2],
    pub y_box: [f64; 2],
    pub z_box: [f64; 2],
    pub u_box: [f64; 2],
    /// Quasi-random points per check; the refinement stage adds about half
    /// as many again.
    pub samples: usize,
    pub seed: u64,
    pub convexity: bool,
}

impl ProbePlan {
    pub fn around(x0: f64) -> Self {
        Self {
            x_box: [x0 - 10.0, x0 + 10.0],
            y_box: [-5.0, 5.0],
            z_box: [-10.0, 10.0],
            u_box: [-5.0, 5.0],
            samples: 4096,
            seed: 0x5eed,
            convexity: true,
        }
    }

    fn check(&self) -> Result<()> {
        for (name, b) in [
            ("x", self.x_box),
            ("y", self.y_box),
            ("z", self.z_box),
            ("u", self.u_box),
        ] {
            if !(b[0].is_finite() && b[1].is_finite() && b[0] <= b[1]) {
                return Err(Error::InvalidConfig(format!(
                    "probe box for {name} is invalid: {b:?}"
                )));
            }
        }
        if self.samples == 0 {
            return Err(Error::InvalidConfig(
                "probe needs at least one sample".into(),
            ));
        }
        Ok(())
    }
}

impl Default for ProbePlan {
    fn default() -> Self {
        Self::around(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Largest observed `lhs / rhs`.
    pub worst_ratio: f64,
    /// Coordinates of the worst point (a violating one when failed), plus
    /// `lhs` and `rhs` there.
    pub witness: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, Copy)]
enum Var {
    T,
    X,
    Y,
    Z,
    U,
}

struct Boxes {
    t: [f64; 2],
    x: [f64; 2],
    y: [f64; 2],
    z: [f64; 2],
    u: [f64; 2],
}

impl Boxes {
    fn map(&self, v: Var, s: f64) -> f64 {
        let b = match v {
            Var::T => self.t,
            Var::X => self.x,
            Var::Y => self.y,
            Var::Z => self.z,
            Var::U => self.u,
        };
        b[0] + s * (b[1] - b[0])
    }
}

/// `(lhs, [(constant, weight)])`
type Eval<'a> = Box<dyn Fn(&[f64]) -> (f64, Vec<(f64, f64)>) + Sync + 'a>;

struct Probe<'a> {
    name: &'static str,
    vars: Vec<(&'static str, Var)>,
    eval: Eval<'a>,
}

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % b) as f64 * f;
        i /= b;
        f *= inv;
    }
    r
}

fn halton_points(dim: usize, count: usize, shift: &[f64]) -> Vec<Vec<f64>> {
    (0..count)
        .map(|i| {
            (0..dim)
                .map(|d| {
                    let s = radical_inverse(i as u64 + 1, PRIMES[d]) + shift[d];
                    s - s.floor()
                })
                .collect()
        })
        .collect()
}

struct Outcome {
    lhs: f64,
    rhs: f64,
    shape: f64,
    coords: Vec<f64>,
}

fn rhs_of(terms: &[(f64, f64)]) -> f64 {
    terms.iter().map(|(c, w)| c * w).sum()
}

fn violates(lhs: f64, rhs: f64) -> bool {
    lhs > rhs * (1.0 + REL_TOL) + ABS_TOL
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if rhs > 0.0 {
        lhs / rhs
    } else if lhs <= ABS_TOL {
        0.0
    } else {
        f64::INFINITY
    }
}

fn run_probe(probe: &Probe<'_>, boxes: &Boxes, plan: &ProbePlan, salt: u64) -> Result<CheckResult> {
    let dim = probe.vars.len();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    rng.set_stream(salt);
    let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    let mut units = halton_points(dim, plan.samples, &shift);

    let evaluate = |units: &[Vec<f64>]| -> Result<Vec<Outcome>> {
        units
            .par_iter()
            .map(|s| {
                let coords: Vec<f64> = probe
                    .vars
                    .iter()
                    .zip(s)
                    .map(|(&(_, v), &s)| boxes.map(v, s))
                    .collect();
                let (lhs, terms) = (probe.eval)(&coords);
                if !lhs.is_finite() {
                    let at: Vec<String> = probe
                        .vars
                        .iter()
                        .zip(&coords)
                        .map(|((n, _), c)| format!("{n}={c}"))
                        .collect();
                    return Err(Error::InvalidPreset(format!(
                        "non-finite evaluation in {} at {}",
                        probe.name,
                        at.join(", ")
                    )));
                }
                let weight: f64 = terms.iter().map(|(_, w)| w).sum();
                Ok(Outcome {
                    lhs,
                    rhs: rhs_of(&terms),
                    shape: ratio(lhs, weight),
                    coords,
                })
            })
            .collect()
    };

    let mut outcomes = evaluate(&units)?;
    // constant-free refinement: zoom on the point with the largest lhs per unit weight
    let refine_each = (plan.samples / 6).max(1);
    for radius in [0.1, 0.03, 0.01] {
        let centre = (0..outcomes.len())
            .max_by(|&a, &b| {
                outcomes[a]
                    .shape
                    .total_cmp(&outcomes[b].shape)
                    .then(b.cmp(&a))
            })
            .map(|i| units[i].clone())
            .unwrap_or_else(|| vec![0.5; dim]);
        let extra: Vec<Vec<f64>> = (0..refine_each)
            .map(|_| {
                centre
                    .iter()
                    .map(|&c| (c + radius * (2.0 * rng.random::<f64>() - 1.0)).clamp(0.0, 1.0))
                    .collect()
            })
            .collect();
        outcomes.extend(evaluate(&extra)?);
        units.extend(extra);
    }

    let failed = outcomes.iter().any(|o| violates(o.lhs, o.rhs));
    let pick = (0..outcomes.len())
        .filter(|&i| !failed || violates(outcomes[i].lhs, outcomes[i].rhs))
        .max_by(|&a, &b| {
            let ra = ratio(outcomes[a].lhs, outcomes[a].rhs);
            let rb = ratio(outcomes[b].lhs, outcomes[b].rhs);
            ra.total_cmp(&rb).then(b.cmp(&a))
        })
        .expect("at least one sample");
    let worst_ratio = outcomes
        .iter()
        .map(|o| ratio(o.lhs, o.rhs))
        .fold(0.0, f64::max);
    let o = &outcomes[pick];
    let mut witness: BTreeMap<String, f64> = probe
        .vars
        .iter()
        .zip(&o.coords)
        .map(|((n, _), &c)| (n.to_string(), c))
        .collect();
    witness.insert("lhs".into(), o.lhs);
    witness.insert("rhs".into(), o.rhs);
    Ok(CheckResult {
        name: probe.name.to_string(),
        passed: !failed,
        worst_ratio,
        witness,
    })
}

fn convexity_probe<C: Coefficients + ?Sized>(
    coeffs: &C,
    boxes: &Boxes,
    plan: &ProbePlan,
    salt: u64,
) -> Result<CheckResult> {
    const NAMES: [&str; 6] = ["t", "x", "y", "u", "z", "z'"];
    let vars = [Var::T, Var::X, Var::Y, Var::U, Var::Z, Var::Z];
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    rng.set_stream(salt);
    let shift: Vec<f64> = (0..vars.len()).map(|_| rng.random::<f64>()).collect();
    let units = halton_points(vars.len(), plan.samples, &shift);
    // defect > 0 breaks convexity, defect < 0 breaks concavity
    let defects: Vec<(f64, f64, Vec<f64>)> = units
        .par_iter()
        .map(|s| {
            let c: Vec<f64> = vars.iter().zip(s).map(|(&v, &s)| boxes.map(v, s)).collect();
            let f = |z: f64| coeffs.generator(c[0], c[1], c[2], z, c[3]);
            let (fa, fb, fm) = (f(c[4]), f(c[5]), f(0.5 * (c[4] + c[5])));
            let scale = 1.0 + fa.abs().max(fb.abs()).max(fm.abs());
            (fm - 0.5 * (fa + fb), scale, c)
        })
        .collect();
    if let Some((_, _, c)) = defects
        .iter()
        .find(|(d, s, _)| !(d.is_finite() && s.is_finite()))
    {
        return Err(Error::InvalidPreset(format!(
            "non-finite generator value at {c:?}"
        )));
    }
    let tol = |s: f64| REL_TOL * s + ABS_TOL;
    let convex_bad = defects.iter().filter(|(d, s, _)| *d > tol(*s));
    let concave_bad = defects.iter().filter(|(d, s, _)| *d < -tol(*s));
    let worst_convex = convex_bad.max_by(|a, b| (a.0 / a.1).total_cmp(&(b.0 / b.1)));
    let worst_concave = concave_bad.min_by(|a, b| (a.0 / a.1).total_cmp(&(b.0 / b.1)));
    let (passed, witness_point) = match (worst_convex, worst_concave) {
        (Some(a), Some(b)) => (false, Some(if a.0 / a.1 >= -b.0 / b.1 { b } else { a })),
        (None, _) | (_, None) => (true, None),
    };
    let worst_ratio = match (worst_convex, worst_concave) {
        (Some(a), Some(b)) => (a.0 / a.1).min(-b.0 / b.1),
        _ => 0.0,
    };
    let mut witness = BTreeMap::new();
    if let Some((d, _, c)) = witness_point {
        for (n, v) in NAMES.iter().zip(c) {
            witness.insert(n.to_string(), *v);
        }
        witness.insert("midpoint_defect".into(), *d);
    }
    Ok(CheckResult {
        name: "HBQ.convexity".into(),
        passed,
        worst_ratio,
        witness,
    })
}

/// Probes growth, Lipschitz, local-Lipschitz-in-z and time-regularity
/// bounds on sampled points, plus the intensity bound and internal
/// consistency of the constants.
///
/// A non-finite coefficient evaluation is an [`Error::InvalidPreset`].
pub fn validate_assumptions<C: Coefficients + ?Sized>(
    coeffs: &C,
    jump: &JumpModel,
    consts: &AssumptionConstants,
    plan: &ProbePlan,
) -> Result<ValidationReport> {
    plan.check()?;
    let c = *consts;
    let boxes = Boxes {
        t: [0.0, c.horizon.max(0.0)],
        x: plan.x_box,
        y: plan.y_box,
        z: plan.z_box,
        u: plan.u_box,
    };
    use Var::*;
    let probes: Vec<Probe<'_>> = vec![
        Probe {
            name: "HF.growth",
            vars: vec![("t", T)],
            eval: Box::new(|p| {
                let lhs = coeffs.drift(p[0], 0.0).abs()
                    + coeffs.diffusion(p[0]).abs()
                    + coeffs.jump_size(p[0], 0.0).abs();
                (lhs, vec![(c.k_a, 1.0)])
            }),
        },
        Probe {
            name: "HF.lipschitz",
            vars: vec![("t", T), ("x", X), ("x'", X)],
            eval: Box::new(|p| {
                let lhs = (coeffs.drift(p[0], p[1]) - coeffs.drift(p[0], p[2])).abs()
                    + (coeffs.jump_size(p[0], p[1]) - coeffs.jump_size(p[0], p[2])).abs();
                (lhs, vec![(c.l_a, (p[1] - p[2]).abs())])
            }),
        },
        Probe {
            name: "HBQ.terminal_bound",
            vars: vec![("x", X)],
            eval: Box::new(|p| (coeffs.terminal(p[0]).abs(), vec![(c.m_g, 1.0)])),
        },
        Probe {
            name: "HBQ.terminal_lipschitz",
            vars: vec![("x", X), ("x'", X)],
            eval: Box::new(|p| {
                let lhs = (coeffs.terminal(p[0]) - coeffs.terminal(p[1])).abs();
                (lhs, vec![(c.k_g, (p[0] - p[1]).abs())])
            }),
        },
        Probe {
            name: "HBQ.lipschitz_y",
            vars: vec![("t", T), ("x", X), ("y", Y), ("y'", Y), ("z", Z), ("u", U)],
            eval: Box::new(|p| {
                let lhs = (coeffs.generator(p[0], p[1], p[2], p[4], p[5])
                    - coeffs.generator(p[0], p[1], p[3], p[4], p[5]))
                .abs();
                (lhs, vec![(c.k_q, (p[2] - p[3]).abs())])
            }),
        },
        Probe {
            name: "HBQ.growth",
            vars: vec![("t", T), ("x", X), ("y", Y), ("z", Z), ("u", U)],
            eval: Box::new(|p| {
                let lhs = coeffs.generator(p[0], p[1], p[2], p[3], p[4]).abs();
                (
                    lhs,
                    vec![(c.k_q, 1.0 + p[2].abs() + p[3] * p[3] + p[4].abs())],
                )
            }),
        },
        Probe {
            name: "HBQD.z",
            vars: vec![("t", T), ("x", X), ("y", Y), ("u", U), ("z", Z), ("z'", Z)],
            eval: Box::new(|p| {
                let lhs = (coeffs.generator(p[0], p[1], p[2], p[4], p[3])
                    - coeffs.generator(p[0], p[1], p[2], p[5], p[3]))
                .abs();
                let w = (1.0 + p[4].abs() + p[5].abs()) * (p[4] - p[5]).abs();
                (lhs, vec![(c.l_fz, w)])
            }),
        },
        Probe {
            name: "HBQD",
            vars: vec![
                ("t", T),
                ("t'", T),
                ("x", X),
                ("x'", X),
                ("y", Y),
                ("y'", Y),
                ("z", Z),
                ("z'", Z),
                ("u", U),
                ("u'", U),
            ],
            eval: Box::new(|p| {
                let lhs = (coeffs.generator(p[0], p[2], p[4], p[6], p[8])
                    - coeffs.generator(p[1], p[3], p[5], p[7], p[9]))
                .abs();
                let wf = (p[2] - p[3]).abs()
                    + (p[4] - p[5]).abs()
                    + (p[8] - p[9]).abs()
                    + (p[0] - p[1]).abs().sqrt();
                let wz = (1.0 + p[6].abs() + p[7].abs()) * (p[6] - p[7]).abs();
                (lhs, vec![(c.k_f, wf), (c.l_fz, wz)])
            }),
        },
        Probe {
            name: "HFD.half",
            vars: vec![("t", T), ("t'", T), ("x", X)],
            eval: Box::new(|p| {
                let lhs = (coeffs.drift(p[0], p[2]) - coeffs.drift(p[1], p[2])).abs()
                    + (coeffs.diffusion(p[0]) - coeffs.diffusion(p[1])).abs();
                (lhs, vec![(c.k_t, (p[0] - p[1]).abs().sqrt())])
            }),
        },
        Probe {
            name: "HFD.full",
            vars: vec![("t", T), ("t'", T), ("x", X)],
            eval: Box::new(|p| {
                let lhs = (coeffs.jump_size(p[0], p[2]) - coeffs.jump_size(p[1], p[2])).abs()
                    + (coeffs.diffusion(p[0]) - coeffs.diffusion(p[1])).abs();
                (lhs, vec![(c.k_t, (p[0] - p[1]).abs())])
            }),
        },
        Probe {
            name: "HBI.intensity",
            vars: vec![("t", T)],
            eval: Box::new(|p| {
                // an exhausted density has no finite bound
                let lhs = jump.intensity(p[0], true).unwrap_or(f64::MAX);
                (lhs, vec![(c.lambda_max, 1.0)])
            }),
        },
    ];

    let mut checks = Vec::with_capacity(probes.len() + 2);
    for (salt, probe) in probes.iter().enumerate() {
        checks.push(run_probe(probe, &boxes, plan, salt as u64)?);
    }
    if plan.convexity {
        checks.push(convexity_probe(coeffs, &boxes, plan, probes.len() as u64)?);
    }
    checks.push(constants_check(consts));
    Ok(ValidationReport { checks })
}

fn constants_check(c: &AssumptionConstants) -> CheckResult {
    let m_y = c.effective_m_y();
    let mut witness = BTreeMap::new();
    witness.insert("m_y".to_string(), m_y);
    witness.insert("m_g".to_string(), c.m_g);
    let valid = c.check().is_ok() && m_y.is_finite() && m_y >= c.m_g;
    CheckResult {
        name: "constants".into(),
        passed: valid,
        worst_ratio: ratio(c.m_g, m_y),
        witness,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoefficientSet, Diffusion, GeneratorForm, Preset, Problem, TerminalForm};

    fn plan() -> ProbePlan {
        ProbePlan {
            samples: 1024,
            ..ProbePlan::default()
        }
    }

    #[test]
    fn trivial_coefficients_pass_with_zero_ratios() {
        let coeffs = CoefficientSet {
            diffusion: Diffusion::constant(1.0),
            terminal: TerminalForm::Constant { value: 0.0 },
            ..CoefficientSet::default()
        };
        let jump = JumpModel::cox(0.5);
        let mut consts = coeffs.natural_constants(&jump, 1.0);
        consts.k_a = 1.0;
        let report = validate_assumptions(&coeffs, &jump, &consts, &plan()).unwrap();
        assert!(report.passed(), "{report:?}");
        for name in [
            "HF.lipschitz",
            "HBQ.terminal_bound",
            "HBQ.growth",
            "HBQD",
            "HFD.half",
        ] {
            assert_eq!(report.get(name).unwrap().worst_ratio, 0.0, "{name}");
        }
    }

    #[test]
    fn pure_quadratic_growth_passes_with_unit_constant() {
        let coeffs = CoefficientSet {
            generator: GeneratorForm {
                gamma: 2.0,
                ..GeneratorForm::default()
            },
            ..CoefficientSet::default()
        };
        let jump = JumpModel::cox(0.5);
        let mut consts = coeffs.natural_constants(&jump, 1.0);
        consts.k_q = 1.0;
        let report = validate_assumptions(&coeffs, &jump, &consts, &plan()).unwrap();
        let growth = report.get("HBQ.growth").unwrap();
        assert!(growth.passed);
        assert!(growth.worst_ratio <= 1.0);
    }

    #[test]
    fn cubic_generator_fails_near_box_edge() {
        let problem = Problem::preset(Preset::CubicZ, 1.0).unwrap();
        let mut consts = problem.constants;
        consts.k_q = 5.0;
        consts.l_fz = 5.0;
        let report =
            validate_assumptions(&problem.coeffs, &problem.jump, &consts, &plan()).unwrap();
        assert!(!report.passed());
        let growth = report.get("HBQ.growth").unwrap();
        assert!(!growth.passed);
        assert!(growth.witness["z"].abs() > 9.0, "{:?}", growth.witness);
        assert!(growth.witness["lhs"] > growth.witness["rhs"]);
    }

    #[test]
    fn shipped_presets_pass() {
        for preset in Preset::SHIPPED {
            let p = Problem::preset(preset, 1.0).unwrap();
            let report = validate_assumptions(
                &p.coeffs,
                &p.jump,
                &p.constants,
                &ProbePlan {
                    samples: 1024,
                    ..ProbePlan::around(p.x0)
                },
            )
            .unwrap();
            let failures: Vec<_> = report.failures().collect();
            assert!(failures.is_empty(), "{}: {failures:?}", preset.id());
        }
    }

    #[test]
    fn non_finite_coefficients_are_invalid_presets() {
        let coeffs = CoefficientSet {
            terminal: TerminalForm::Constant { value: f64::NAN },
            ..CoefficientSet::default()
        };
        let jump = JumpModel::cox(1.0);
        let consts = AssumptionConstants {
            k_a: 1.0,
            ..AssumptionConstants::zero(1.0)
        };
        let err = validate_assumptions(&coeffs, &jump, &consts, &plan()).unwrap_err();
        assert!(matches!(err, Error::InvalidPreset(_)));
    }

    #[test]
    fn undersized_constant_is_caught_with_witness() {
        let p = Problem::preset(Preset::QuadraticJump, 1.0).unwrap();
        let mut consts = p.constants;
        consts.l_a *= 0.5;
        let report = validate_assumptions(&p.coeffs, &p.jump, &consts, &plan()).unwrap();
        let lip = report.get("HF.lipschitz").unwrap();
        assert!(!lip.passed);
        assert!((lip.worst_ratio - 2.0).abs() < 1e-9);
        assert!(lip.witness.contains_key("x'"));
    }
}
