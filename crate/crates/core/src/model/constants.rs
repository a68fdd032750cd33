use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Constants of the standing assumptions. Field names follow the usual
/// symbols: `k_a` bounds `|b(t,0)|, |σ(t)|, |β(t,0)|`, `l_a` is the
/// x-Lipschitz constant of `b` and `β`, and so on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionConstants {
    pub k_a: f64,
    pub l_a: f64,
    pub m_g: f64,
    pub k_g: f64,
    pub k_q: f64,
    pub k_f: f64,
    pub l_fz: f64,
    pub k_t: f64,
    pub horizon: f64,
    pub lambda_max: f64,
    /// Uniform bound on `|Y⁰|`, `|Y¹(θ)|`. `None` means derived.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_y: Option<f64>,
}

impl AssumptionConstants {
    pub fn zero(horizon: f64) -> Self {
        Self {
            k_a: 0.0,
            l_a: 0.0,
            m_g: 0.0,
            k_g: 0.0,
            k_q: 0.0,
            k_f: 0.0,
            l_fz: 0.0,
            k_t: 0.0,
            horizon,
            lambda_max: 0.0,
            m_y: None,
        }
    }

    fn named(&self) -> [(&'static str, f64); 10] {
        [
            ("k_a", self.k_a),
            ("l_a", self.l_a),
            ("m_g", self.m_g),
            ("k_g", self.k_g),
            ("k_q", self.k_q),
            ("k_f", self.k_f),
            ("l_fz", self.l_fz),
            ("k_t", self.k_t),
            ("horizon", self.horizon),
            ("lambda_max", self.lambda_max),
        ]
    }

    /// Nonnegative, finite, `T > 0`. `lambda_max` may be infinite only in
    /// the sense of a failed intensity bound, which is rejected here too.
    pub fn check(&self) -> Result<()> {
        for (name, v) in self.named() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "constant {name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if self.horizon <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if let Some(m) = self.m_y {
            if !(m.is_finite() && m >= 0.0) {
                return Err(Error::InvalidConfig(format!("m_y must be finite, got {m}")));
            }
        }
        Ok(())
    }

    /// Fixed point of `m = e^{K_q T}(M_g + K_q T (2 + m))`, infinite when
    /// the map is not a contraction (`K_q T e^{K_q T} ≥ 1`).
    pub fn derived_m_y(&self) -> f64 {
        let kt = self.k_q * self.horizon;
        let e = kt.exp();
        let slope = e * kt;
        if slope >= 1.0 {
            return f64::INFINITY;
        }
        e * (self.m_g + 2.0 * kt) / (1.0 - slope)
    }

    /// User-supplied `m_y` if present, else the derived one.
    pub fn effective_m_y(&self) -> f64 {
        self.m_y.unwrap_or_else(|| self.derived_m_y())
    }

    /// Componentwise `self ≥ other` (same horizon).
    pub fn dominates(&self, other: &Self) -> bool {
        self.horizon == other.horizon
            && self
                .named()
                .iter()
                .zip(other.named().iter())
                .all(|(a, b)| a.1 >= b.1)
            && self.effective_m_y() >= other.effective_m_y()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_m_y_is_a_fixed_point() {
        let mut c = AssumptionConstants::zero(1.0);
        c.k_q = 0.3;
        c.m_g = 1.0;
        let m = c.derived_m_y();
        let kt = c.k_q * c.horizon;
        let rhs = kt.exp() * (c.m_g + kt * (2.0 + m));
        assert!((m - rhs).abs() < 1e-12 * m);
        assert!(m >= c.m_g);
    }

    #[test]
    fn m_y_reduces_to_m_g_without_growth() {
        let mut c = AssumptionConstants::zero(2.0);
        c.m_g = 1.5;
        assert_eq!(c.derived_m_y(), 1.5);
    }

    #[test]
    fn m_y_diverges_without_contraction() {
        let mut c = AssumptionConstants::zero(1.0);
        c.k_q = 1.0;
        assert!(c.derived_m_y().is_infinite());
    }

    #[test]
    fn check_rejects_negative_and_zero_horizon() {
        let mut c = AssumptionConstants::zero(1.0);
        assert!(c.check().is_ok());
        c.k_f = -1.0;
        assert!(c.check().is_err());
        let c = AssumptionConstants::zero(0.0);
        assert!(c.check().is_err());
    }
}
