use serde::{Deserialize, Serialize};

use super::{AssumptionConstants, JumpModel};

/// The driver `f(t, x, y, z, u)` of the backward equation.
pub trait Generator: Sync {
    fn generator(&self, t: f64, x: f64, y: f64, z: f64, u: f64) -> f64;
}

/// Forward coefficients `b`, `σ`, `β` and the terminal map `g`, together
/// with the driver.
///
/// `σ` depends on time only.
pub trait Coefficients: Generator {
    fn drift(&self, t: f64, x: f64) -> f64;
    fn diffusion(&self, t: f64) -> f64;
    fn jump_size(&self, t: f64, x: f64) -> f64;
    fn terminal(&self, x: f64) -> f64;
}

impl<T: Generator + ?Sized> Generator for &T {
    fn generator(&self, t: f64, x: f64, y: f64, z: f64, u: f64) -> f64 {
        (**self).generator(t, x, y, z, u)
    }
}

impl<T: Coefficients + ?Sized> Coefficients for &T {
    fn drift(&self, t: f64, x: f64) -> f64 {
        (**self).drift(t, x)
    }
    fn diffusion(&self, t: f64) -> f64 {
        (**self).diffusion(t)
    }
    fn jump_size(&self, t: f64, x: f64) -> f64 {
        (**self).jump_size(t, x)
    }
    fn terminal(&self, x: f64) -> f64 {
        (**self).terminal(x)
    }
}

/// `x ↦ slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Affine {
    pub slope: f64,
    pub intercept: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Self {
            slope: 0.0,
            intercept: c,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// `σ(t) = level + trend·t`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Diffusion {
    pub level: f64,
    pub trend: f64,
}

impl Diffusion {
    pub fn constant(level: f64) -> Self {
        Self { level, trend: 0.0 }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.level + self.trend * t
    }

    /// `sup_{t ∈ [0, T]} |σ(t)|`
    pub fn sup_abs(&self, horizon: f64) -> f64 {
        self.level.abs().max(self.eval(horizon).abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TerminalForm {
    Constant {
        value: f64,
    },
    /// `amplitude · sin(frequency · x)`
    Sine {
        amplitude: f64,
        frequency: f64,
    },
    /// `amplitude · tanh(scale · x)`
    Tanh {
        amplitude: f64,
        scale: f64,
    },
    /// Unbounded; only meaningful for oracle checks.
    Linear {
        slope: f64,
        intercept: f64,
    },
    /// `coefficient · x²`. Unbounded; only meaningful for oracle checks.
    Quadratic {
        coefficient: f64,
    },
}

impl TerminalForm {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            TerminalForm::Constant { value } => value,
            TerminalForm::Sine {
                amplitude,
                frequency,
            } => amplitude * (frequency * x).sin(),
            TerminalForm::Tanh { amplitude, scale } => amplitude * (scale * x).tanh(),
            TerminalForm::Linear { slope, intercept } => slope * x + intercept,
            TerminalForm::Quadratic { coefficient } => coefficient * x * x,
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            TerminalForm::Constant { .. } => 0.0,
            TerminalForm::Sine {
                amplitude,
                frequency,
            } => amplitude * frequency * (frequency * x).cos(),
            TerminalForm::Tanh { amplitude, scale } => {
                let th = (scale * x).tanh();
                amplitude * scale * (1.0 - th * th)
            }
            TerminalForm::Linear { slope, .. } => slope,
            TerminalForm::Quadratic { coefficient } => 2.0 * coefficient * x,
        }
    }

    /// `sup |g|`, infinite for unbounded forms.
    pub fn bound(&self) -> f64 {
        match *self {
            TerminalForm::Constant { value } => value.abs(),
            TerminalForm::Sine { amplitude, .. } | TerminalForm::Tanh { amplitude, .. } => {
                amplitude.abs()
            }
            TerminalForm::Linear { slope, intercept } => {
                if slope == 0.0 {
                    intercept.abs()
                } else {
                    f64::INFINITY
                }
            }
            TerminalForm::Quadratic { coefficient } => {
                if coefficient == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            TerminalForm::Constant { .. } => 0.0,
            TerminalForm::Sine {
                amplitude,
                frequency,
            } => (amplitude * frequency).abs(),
            TerminalForm::Tanh { amplitude, scale } => (amplitude * scale).abs(),
            TerminalForm::Linear { slope, .. } => slope.abs(),
            TerminalForm::Quadratic { coefficient } => {
                if coefficient == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

/// `f = constant + y_coef·y + u_coef·u + z_coef·z + (gamma/2)·z² + cubic·z³`
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorForm {
    pub constant: f64,
    pub y_coef: f64,
    pub u_coef: f64,
    pub z_coef: f64,
    pub gamma: f64,
    pub cubic: f64,
}

impl GeneratorForm {
    pub fn eval(&self, y: f64, z: f64, u: f64) -> f64 {
        self.constant
            + self.y_coef * y
            + self.u_coef * u
            + z * (self.z_coef + z * (0.5 * self.gamma + self.cubic * z))
    }
}

/// A concrete coefficient set assembled from named functional forms, so that
/// problem instances serialize.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub drift: Affine,
    pub diffusion: Diffusion,
    pub jump_size: Affine,
    pub generator: GeneratorForm,
    pub terminal: TerminalForm,
}

impl Default for CoefficientSet {
    fn default() -> Self {
        Self {
            drift: Affine::default(),
            diffusion: Diffusion::constant(1.0),
            jump_size: Affine::default(),
            generator: GeneratorForm::default(),
            terminal: TerminalForm::Constant { value: 0.0 },
        }
    }
}

impl CoefficientSet {
    /// Constants implied by the functional forms. A cubic `z` term has no
    /// finite growth constant and is left out; the validator rejects it.
    pub fn natural_constants(&self, jump: &JumpModel, horizon: f64) -> AssumptionConstants {
        let gen = &self.generator;
        let k_a = self.drift.intercept.abs()
            + self.diffusion.sup_abs(horizon)
            + self.jump_size.intercept.abs();
        let l_a = self.drift.slope.abs() + self.jump_size.slope.abs();
        let half_z = 0.5 * gen.z_coef.abs();
        let k_q = (gen.constant.abs() + half_z)
            .max(0.5 * gen.gamma.abs() + half_z)
            .max(gen.y_coef.abs())
            .max(gen.u_coef.abs());
        let k_f = gen.y_coef.abs().max(gen.u_coef.abs());
        let l_fz = gen.z_coef.abs().max(0.5 * gen.gamma.abs());
        let k_t = self.diffusion.trend.abs() * horizon.sqrt().max(1.0);
        AssumptionConstants {
            k_a,
            l_a,
            m_g: self.terminal.bound(),
            k_g: self.terminal.lipschitz(),
            k_q,
            k_f,
            l_fz,
            k_t,
            horizon,
            lambda_max: jump.intensity_bound(horizon),
            m_y: None,
        }
    }
}

impl Generator for CoefficientSet {
    fn generator(&self, _t: f64, _x: f64, y: f64, z: f64, u: f64) -> f64 {
        self.generator.eval(y, z, u)
    }
}

impl Coefficients for CoefficientSet {
    fn drift(&self, _t: f64, x: f64) -> f64 {
        self.drift.eval(x)
    }
    fn diffusion(&self, t: f64) -> f64 {
        self.diffusion.eval(t)
    }
    fn jump_size(&self, _t: f64, x: f64) -> f64 {
        self.jump_size.eval(x)
    }
    fn terminal(&self, x: f64) -> f64 {
        self.terminal.eval(x)
    }
}
