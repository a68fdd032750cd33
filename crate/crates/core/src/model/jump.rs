use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Law of `τ` when it is independent of the Brownian motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Density {
    Uniform { lower: f64, upper: f64 },
    Exponential { rate: f64 },
}

impl Density {
    fn check(&self) -> Result<()> {
        match *self {
            Density::Uniform { lower, upper } => {
                if !(lower >= 0.0 && upper > lower && upper.is_finite()) {
                    return Err(Error::DegenerateModel(format!(
                        "uniform density needs 0 <= lower < upper < inf, got [{lower}, {upper}]"
                    )));
                }
            }
            Density::Exponential { rate } => {
                if !(rate > 0.0 && rate.is_finite()) {
                    return Err(Error::DegenerateModel(format!(
                        "exponential rate must be positive, got {rate}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn pdf(&self, t: f64) -> f64 {
        match *self {
            Density::Uniform { lower, upper } => {
                if t >= lower && t < upper {
                    1.0 / (upper - lower)
                } else {
                    0.0
                }
            }
            Density::Exponential { rate } => {
                if t >= 0.0 {
                    rate * (-rate * t).exp()
                } else {
                    0.0
                }
            }
        }
    }

    /// `P[τ > t]`
    pub fn survival(&self, t: f64) -> f64 {
        match *self {
            Density::Uniform { lower, upper } => ((upper - t) / (upper - lower)).clamp(0.0, 1.0),
            Density::Exponential { rate } => (-rate * t.max(0.0)).exp(),
        }
    }

    fn quantile(&self, u: f64) -> f64 {
        match *self {
            Density::Uniform { lower, upper } => lower + u * (upper - lower),
            Density::Exponential { rate } => -(1.0 - u).ln() / rate,
        }
    }
}

/// Jump-time models for which density, intensity and immersion hold by
/// construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JumpModel {
    IndependentDensity {
        density: Density,
    },
    /// `τ = E/λ₀` with `E` a unit exponential independent of `W`.
    CoxConstantIntensity {
        rate: f64,
    },
}

impl JumpModel {
    pub fn cox(rate: f64) -> Self {
        JumpModel::CoxConstantIntensity { rate }
    }

    pub fn uniform(lower: f64, upper: f64) -> Self {
        JumpModel::IndependentDensity {
            density: Density::Uniform { lower, upper },
        }
    }

    pub fn check(&self) -> Result<()> {
        match self {
            JumpModel::IndependentDensity { density } => density.check(),
            JumpModel::CoxConstantIntensity { rate } => {
                if rate.is_finite() && *rate > 0.0 {
                    Ok(())
                } else {
                    Err(Error::DegenerateModel(format!(
                        "cox rate must be positive, got {rate}"
                    )))
                }
            }
        }
    }

    /// `P[τ > t]`
    pub fn survival(&self, t: f64) -> f64 {
        match self {
            JumpModel::IndependentDensity { density } => density.survival(t),
            JumpModel::CoxConstantIntensity { rate } => (-rate * t.max(0.0)).exp(),
        }
    }

    /// `λ_t` on the event `{t ≤ τ}` (`survived`) and 0 off it.
    pub fn intensity(&self, t: f64, survived: bool) -> Result<f64> {
        if !survived {
            return Ok(0.0);
        }
        match self {
            JumpModel::CoxConstantIntensity { rate } => Ok(*rate),
            JumpModel::IndependentDensity { density } => match *density {
                Density::Exponential { rate } => Ok(rate),
                Density::Uniform { lower, upper } => {
                    if t < lower {
                        Ok(0.0)
                    } else if t < upper {
                        Ok(1.0 / (upper - t))
                    } else {
                        Err(Error::DegenerateModel(format!(
                            "survival probability is 0 at t = {t}"
                        )))
                    }
                }
            },
        }
    }

    /// `sup_{t ∈ [0, T]} λ_t`, infinite if the density is exhausted on the
    /// horizon.
    pub fn intensity_bound(&self, horizon: f64) -> f64 {
        match self {
            JumpModel::CoxConstantIntensity { rate } => *rate,
            JumpModel::IndependentDensity { density } => match *density {
                Density::Exponential { rate } => rate,
                Density::Uniform { lower, upper } => {
                    if horizon >= upper {
                        f64::INFINITY
                    } else if horizon < lower {
                        0.0
                    } else {
                        1.0 / (upper - horizon)
                    }
                }
            },
        }
    }

    /// `∫₀^{s∧τ} λ_t dt`
    pub fn compensator(&self, s: f64, tau: f64) -> f64 {
        let end = s.min(tau).max(0.0);
        match self {
            JumpModel::CoxConstantIntensity { rate } => rate * end,
            JumpModel::IndependentDensity { density } => match *density {
                Density::Exponential { rate } => rate * end,
                Density::Uniform { .. } => -density.survival(end).ln(),
            },
        }
    }

    /// Inverse-CDF draw from `u ∈ (0, 1)`. Cox uses `τ = −ln(u)/λ₀`.
    pub fn sample(&self, u: f64) -> Result<f64> {
        self.check()?;
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "uniform draw must lie in (0,1), got {u}"
            )));
        }
        Ok(match self {
            JumpModel::CoxConstantIntensity { rate } => -u.ln() / rate,
            JumpModel::IndependentDensity { density } => density.quantile(u),
        })
    }
}
