//! Closed-form a-priori bounds on the gradients of the forward and backward
//! components, the induced `Z` bound `M`, and the clipped generator.

use serde::{Deserialize, Serialize};

use crate::model::{AssumptionConstants, Coefficients, Generator};

/// Uniform bounds implied by the assumption constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCatalog {
    pub grad_x0: f64,
    pub grad_x1_theta: f64,
    pub grad_x1_x: f64,
    pub grad_y1_theta: f64,
    pub grad_y1_diag: f64,
    pub grad_y0: f64,
    pub z1_bound: f64,
    pub z0_bound: f64,
}

pub fn gradient_bound_catalog(c: &AssumptionConstants) -> BoundCatalog {
    let t = c.horizon;
    let ela = (c.l_a * t).exp();
    let jump_factor = 1.0 + c.l_a * ela;
    let grad_y1_theta = ((c.l_a + c.k_f) * t).exp() * (c.k_g + t * c.k_f);
    let grad_y0 = ((2.0 * c.k_f + c.l_a) * t).exp()
        * (c.k_g + c.k_f * t)
        * (1.0 + t * c.k_f * (c.k_f * t).exp() * jump_factor);
    BoundCatalog {
        grad_x0: ela,
        grad_x1_theta: ela,
        grad_x1_x: jump_factor * ela,
        grad_y1_theta,
        grad_y1_diag: jump_factor * grad_y1_theta,
        grad_y0,
        z1_bound: grad_y1_theta * ela * c.k_a,
        z0_bound: grad_y0 * ela * c.k_a,
    }
}

/// `M = max(z1_bound, z0_bound)`.
pub fn truncation_radius(c: &AssumptionConstants) -> f64 {
    let b = gradient_bound_catalog(c);
    b.z1_bound.max(b.z0_bound)
}

/// Radial projection onto `[−M, M]`.
#[inline]
pub fn clip(z: f64, radius: f64) -> f64 {
    debug_assert!(radius >= 0.0);
    if z.abs() <= radius {
        z
    } else {
        radius.copysign(z)
    }
}

/// `f̃(t,x,y,z,u) = f(t,x,y,clip(z,M),u)`; forward coefficients pass through.
#[derive(Debug, Clone, Copy)]
pub struct Lipschitzized<C> {
    pub inner: C,
    pub radius: f64,
}

impl<C> Lipschitzized<C> {
    pub fn new(inner: C, radius: f64) -> Self {
        assert!(radius >= 0.0, "truncation radius must be nonnegative");
        Self { inner, radius }
    }
}

pub fn lipschitzized_generator<C: Generator>(f: C, radius: f64) -> Lipschitzized<C> {
    Lipschitzized::new(f, radius)
}

impl<C: Generator> Generator for Lipschitzized<C> {
    fn generator(&self, t: f64, x: f64, y: f64, z: f64, u: f64) -> f64 {
        self.inner.generator(t, x, y, clip(z, self.radius), u)
    }
}

impl<C: Coefficients> Coefficients for Lipschitzized<C> {
    fn drift(&self, t: f64, x: f64) -> f64 {
        self.inner.drift(t, x)
    }
    fn diffusion(&self, t: f64) -> f64 {
        self.inner.diffusion(t)
    }
    fn jump_size(&self, t: f64, x: f64) -> f64 {
        self.inner.jump_size(t, x)
    }
    fn terminal(&self, x: f64) -> f64 {
        self.inner.terminal(x)
    }
}
