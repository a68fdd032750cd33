use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    Affine, AssumptionConstants, CoefficientSet, Diffusion, GeneratorForm, JumpModel, TerminalForm,
};
use crate::{Error, Result};

/// Named coefficient families. Parameters are plain numbers keyed by name;
/// every family takes `x0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    /// `b = 0`, `σ = sigma`, `β = 0`, `f = 0`, `g = value`.
    Constant,
    /// `b = 0`, `σ = sigma`, `β = 0`, `f = (gamma/2) z²`, `g = amplitude·sin(frequency·x)`.
    ColeHopf,
    /// `b = 0`, `σ = sigma`, `β = beta`, `f = a_y y + a_u u`, `g = terminal`.
    LinearJump,
    /// `b = −kappa x`, `σ = sigma`, `β = beta`, `f = a_y y + a_u u + (gamma/2) z²`,
    /// `g = amplitude·tanh(scale·x)`.
    QuadraticJump,
    /// `b = 0`, `σ = sigma`, `β = 0`, `f = cubic·z³`, `g = amplitude·sin(x)`.
    /// Violates quadratic growth on purpose.
    CubicZ,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Constant,
        Preset::ColeHopf,
        Preset::LinearJump,
        Preset::QuadraticJump,
        Preset::CubicZ,
    ];

    /// Presets expected to satisfy the standing assumptions.
    pub const SHIPPED: [Preset; 4] = [
        Preset::Constant,
        Preset::ColeHopf,
        Preset::LinearJump,
        Preset::QuadraticJump,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Preset::Constant => "constant",
            Preset::ColeHopf => "cole_hopf",
            Preset::LinearJump => "linear_jump",
            Preset::QuadraticJump => "quadratic_jump",
            Preset::CubicZ => "cubic_z",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        Preset::ALL
            .iter()
            .copied()
            .find(|p| p.id() == id)
            .ok_or_else(|| Error::UnknownPreset(id.to_string()))
    }

    pub fn default_params(&self) -> BTreeMap<String, f64> {
        let pairs: &[(&str, f64)] = match self {
            Preset::Constant => &[("x0", 0.0), ("sigma", 1.0), ("value", 1.0)],
            Preset::ColeHopf => &[
                ("x0", 0.0),
                ("sigma", 1.0),
                ("gamma", 1.0),
                ("amplitude", 1.0),
                ("frequency", 1.0),
            ],
            Preset::LinearJump => &[
                ("x0", 0.0),
                ("sigma", 0.2),
                ("beta", 1.0),
                ("a_y", 0.5),
                ("a_u", 0.3),
                ("terminal", 1.0),
            ],
            Preset::QuadraticJump => &[
                ("x0", 0.0),
                ("kappa", 0.5),
                ("sigma", 0.3),
                ("beta", -0.5),
                ("a_y", 0.1),
                ("a_u", 0.2),
                ("gamma", 1.0),
                ("amplitude", 1.0),
                ("scale", 1.0),
            ],
            Preset::CubicZ => &[
                ("x0", 0.0),
                ("sigma", 1.0),
                ("cubic", 1.0),
                ("amplitude", 1.0),
            ],
        };
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    pub fn default_jump(&self) -> JumpModel {
        match self {
            Preset::QuadraticJump => JumpModel::uniform(0.0, 2.0),
            _ => JumpModel::cox(0.5),
        }
    }

    /// Defaults overlaid with `overrides`; unknown names are an error.
    pub fn resolve_params(
        &self,
        overrides: &BTreeMap<String, f64>,
    ) -> Result<BTreeMap<String, f64>> {
        let mut params = self.default_params();
        for (k, v) in overrides {
            match params.get_mut(k) {
                Some(slot) => *slot = *v,
                None => {
                    return Err(Error::InvalidConfig(format!(
                        "preset {} has no parameter {k:?}",
                        self.id()
                    )))
                }
            }
        }
        if let Some((k, v)) = params.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidPreset(format!(
                "parameter {k} is not finite: {v}"
            )));
        }
        Ok(params)
    }

    /// Coefficients and starting point for resolved parameters.
    pub fn build(&self, params: &BTreeMap<String, f64>) -> Result<(CoefficientSet, f64)> {
        let params = self.resolve_params(params)?;
        let p = |k: &str| params[k];
        let coeffs = match self {
            Preset::Constant => CoefficientSet {
                diffusion: Diffusion::constant(p("sigma")),
                terminal: TerminalForm::Constant { value: p("value") },
                ..CoefficientSet::default()
            },
            Preset::ColeHopf => CoefficientSet {
                diffusion: Diffusion::constant(p("sigma")),
                generator: GeneratorForm {
                    gamma: p("gamma"),
                    ..GeneratorForm::default()
                },
                terminal: TerminalForm::Sine {
                    amplitude: p("amplitude"),
                    frequency: p("frequency"),
                },
                ..CoefficientSet::default()
            },
            Preset::LinearJump => CoefficientSet {
                diffusion: Diffusion::constant(p("sigma")),
                jump_size: Affine::constant(p("beta")),
                generator: GeneratorForm {
                    y_coef: p("a_y"),
                    u_coef: p("a_u"),
                    ..GeneratorForm::default()
                },
                terminal: TerminalForm::Constant {
                    value: p("terminal"),
                },
                ..CoefficientSet::default()
            },
            Preset::QuadraticJump => CoefficientSet {
                drift: Affine {
                    slope: -p("kappa"),
                    intercept: 0.0,
                },
                diffusion: Diffusion::constant(p("sigma")),
                jump_size: Affine::constant(p("beta")),
                generator: GeneratorForm {
                    y_coef: p("a_y"),
                    u_coef: p("a_u"),
                    gamma: p("gamma"),
                    ..GeneratorForm::default()
                },
                terminal: TerminalForm::Tanh {
                    amplitude: p("amplitude"),
                    scale: p("scale"),
                },
            },
            Preset::CubicZ => CoefficientSet {
                diffusion: Diffusion::constant(p("sigma")),
                generator: GeneratorForm {
                    cubic: p("cubic"),
                    ..GeneratorForm::default()
                },
                terminal: TerminalForm::Sine {
                    amplitude: p("amplitude"),
                    frequency: 1.0,
                },
                ..CoefficientSet::default()
            },
        };
        Ok((coeffs, p("x0")))
    }
}

/// Partial override of the natural constants. Missing fields keep the
/// values implied by the coefficient forms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsOverride {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_g: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_g: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_fz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_y: Option<f64>,
}

impl ConstantsOverride {
    pub fn apply(&self, base: AssumptionConstants) -> AssumptionConstants {
        AssumptionConstants {
            k_a: self.k_a.unwrap_or(base.k_a),
            l_a: self.l_a.unwrap_or(base.l_a),
            m_g: self.m_g.unwrap_or(base.m_g),
            k_g: self.k_g.unwrap_or(base.k_g),
            k_q: self.k_q.unwrap_or(base.k_q),
            k_f: self.k_f.unwrap_or(base.k_f),
            l_fz: self.l_fz.unwrap_or(base.l_fz),
            k_t: self.k_t.unwrap_or(base.k_t),
            horizon: base.horizon,
            lambda_max: self.lambda_max.unwrap_or(base.lambda_max),
            m_y: self.m_y.or(base.m_y),
        }
    }
}

/// On-disk problem description:
///
/// ```json
/// {"preset_id": "cole_hopf", "params": {"x0": 0.0}, "horizon": 1.0,
///  "constants": {"k_q": 0.5}, "jump_model": {"kind": "cox_constant_intensity", "rate": 0.5}}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub preset_id: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<ConstantsOverride>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jump_model: Option<JumpModel>,
    pub horizon: f64,
}

impl ProblemConfig {
    pub fn preset(preset: Preset, horizon: f64) -> Self {
        Self {
            preset_id: preset.id().to_string(),
            params: BTreeMap::new(),
            constants: None,
            jump_model: None,
            horizon,
        }
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// A fully resolved problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub preset: Preset,
    pub params: BTreeMap<String, f64>,
    pub coeffs: CoefficientSet,
    pub x0: f64,
    pub jump: JumpModel,
    pub constants: AssumptionConstants,
}

impl Problem {
    pub fn from_config(config: &ProblemConfig) -> Result<Self> {
        if !(config.horizon.is_finite() && config.horizon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "horizon must be positive, got {}",
                config.horizon
            )));
        }
        let preset = Preset::from_id(&config.preset_id)?;
        let params = preset.resolve_params(&config.params)?;
        let (coeffs, x0) = preset.build(&params)?;
        let jump = config.jump_model.unwrap_or_else(|| preset.default_jump());
        jump.check()?;
        let natural = coeffs.natural_constants(&jump, config.horizon);
        let constants = match &config.constants {
            Some(o) => o.apply(natural),
            None => natural,
        };
        Ok(Self {
            preset,
            params,
            coeffs,
            x0,
            jump,
            constants,
        })
    }

    pub fn preset(preset: Preset, horizon: f64) -> Result<Self> {
        Self::from_config(&ProblemConfig::preset(preset, horizon))
    }

    pub fn horizon(&self) -> f64 {
        self.constants.horizon
    }

    /// Config that rebuilds this instance.
    pub fn to_config(&self) -> ProblemConfig {
        ProblemConfig {
            preset_id: self.preset.id().to_string(),
            params: self.params.clone(),
            constants: None,
            jump_model: Some(self.jump),
            horizon: self.horizon(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Coefficients, Generator};

    #[test]
    fn registry_ids_round_trip() {
        for p in Preset::ALL {
            assert_eq!(Preset::from_id(p.id()).unwrap(), p);
        }
        assert!(matches!(
            Preset::from_id("nope"),
            Err(Error::UnknownPreset(_))
        ));
    }

    #[test]
    fn unknown_parameter_is_rejected() {
        let cfg = ProblemConfig::preset(Preset::ColeHopf, 1.0).with_param("beta", 1.0);
        assert!(matches!(
            Problem::from_config(&cfg),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn config_json_round_trip() {
        let mut cfg = ProblemConfig::preset(Preset::QuadraticJump, 1.0).with_param("x0", 0.25);
        cfg.constants = Some(ConstantsOverride {
            k_q: Some(0.7),
            ..Default::default()
        });
        cfg.jump_model = Some(JumpModel::cox(0.4));
        let back = ProblemConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let problem = Problem::from_config(&back).unwrap();
        assert_eq!(problem.x0, 0.25);
        assert_eq!(problem.constants.k_q, 0.7);
        assert_eq!(problem.jump, JumpModel::cox(0.4));
    }

    #[test]
    fn cole_hopf_coefficients() {
        let p = Problem::preset(Preset::ColeHopf, 1.0).unwrap();
        let c = &p.coeffs;
        assert_eq!(c.drift(0.3, 2.0), 0.0);
        assert_eq!(c.diffusion(0.7), 1.0);
        assert_eq!(c.jump_size(0.1, 1.0), 0.0);
        assert_eq!(c.generator(0.0, 0.0, 3.0, 2.0, 5.0), 2.0);
        assert_eq!(c.terminal(0.5), 0.5f64.sin());
        assert_eq!(p.constants.k_q, 0.5);
        assert_eq!(p.constants.k_g, 1.0);
        assert_eq!(p.constants.k_a, 1.0);
    }

    #[test]
    fn linear_jump_constants() {
        let p = Problem::preset(Preset::LinearJump, 1.0).unwrap();
        assert_eq!(p.constants.k_f, 0.5);
        assert_eq!(p.constants.k_g, 0.0);
        assert_eq!(p.constants.m_g, 1.0);
        assert!((p.constants.k_a - 1.2).abs() < 1e-15);
        assert_eq!(p.constants.lambda_max, 0.5);
    }
}
