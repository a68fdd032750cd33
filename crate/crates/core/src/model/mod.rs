//! Problem definition: coefficients, assumption constants, the jump law and
//! a sampling-based validator for the standing assumptions.

mod coefficients;
mod config;
mod constants;
mod jump;
mod validate;

pub use coefficients::{
    Affine, CoefficientSet, Coefficients, Diffusion, Generator, GeneratorForm, TerminalForm,
};
pub use config::{ConstantsOverride, Preset, Problem, ProblemConfig};
pub use constants::AssumptionConstants;
pub use jump::{Density, JumpModel};
pub use validate::{validate_assumptions, CheckResult, ProbePlan, ValidationReport};
