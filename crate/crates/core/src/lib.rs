//! Mean-field Langevin particle systems: energies, functional-inequality
//! constants, simulation, Monte Carlo estimators and concentration bounds.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod concentration;
pub mod constants;
pub mod dynamics;
pub mod energy;
pub mod error;
pub mod estimators;
pub mod gaussian_oracle;
pub mod positivity;
pub mod rng;
pub mod stats;

pub use constants::{ConstantsInput, ConstantsReport, Formula};
pub use dynamics::{GibbsMethod, InitialCondition, MalaConfig, NoiseMode, Scheme, SimConfig};
pub use energy::{
    drift, hessian_un, potential_un, BuiltinModel, EmpiricalMeasure, EnergyBounds, EnergyModel,
    GaussianMeanField, HessianUN, ParticleConfiguration, RbfInteraction,
};
pub use error::{Error, Result};
pub use estimators::{InequalityVerdict, TestFunction};
pub use gaussian_oracle::GaussianMeasure;
pub use positivity::Kernel;
